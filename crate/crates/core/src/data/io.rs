use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{IdMap, Interaction, InteractionSet, PartitionedData, SplitSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeaderMode {
    /// The first line is a header iff its rating column holds a column name
    /// such as `rating`, `score` or `relevance`.
    #[default]
    Auto,
    Present,
    Absent,
}

/// Column layout of a delimited interaction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    /// `None` sniffs tab vs. comma from the first line.
    pub delimiter: Option<u8>,
    pub header: HeaderMode,
    pub user_column: usize,
    pub item_column: usize,
    /// `None` treats the data as unary (every row rated 1).
    pub rating_column: Option<usize>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            delimiter: None,
            header: HeaderMode::Auto,
            user_column: 0,
            item_column: 1,
            rating_column: Some(2),
        }
    }
}

const RATING_HEADER_NAMES: &[&str] = &["rating", "ratings", "score", "relevance", "value", "label"];

struct ParsedRow {
    line: u64,
    user: String,
    item: String,
    rating: f64,
}

fn parse_rows(text: &str, schema: &Schema) -> Result<Vec<ParsedRow>> {
    let delimiter = schema.delimiter.unwrap_or_else(|| {
        let first = text.lines().next().unwrap_or("");
        if first.contains('\t') {
            b'\t'
        } else {
            b','
        }
    });
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut rows = Vec::new();
    for (k, result) in reader.records().enumerate() {
        let record = result.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(k as u64 + 1);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let field = |col: usize, what: &str| {
            record.get(col).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing {what} column {col}"),
            })
        };
        let user = field(schema.user_column, "user")?;
        let item = field(schema.item_column, "item")?;
        let raw_rating = schema
            .rating_column
            .map(|c| field(c, "rating"))
            .transpose()?;

        if k == 0 {
            let is_header = match schema.header {
                HeaderMode::Present => true,
                HeaderMode::Absent => false,
                HeaderMode::Auto => match raw_rating {
                    Some(r) => RATING_HEADER_NAMES.contains(&r.to_ascii_lowercase().as_str()),
                    None => ["user", "user_id", "userid"].contains(&user.to_ascii_lowercase().as_str()),
                },
            };
            if is_header {
                continue;
            }
        }

        let rating = match raw_rating {
            None => 1.0,
            Some(r) => r.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Error::Parse {
                    line,
                    message: format!("rating {r:?} is not a finite number"),
                }
            })?,
        };
        if user.is_empty() || item.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty user or item identifier".into(),
            });
        }
        rows.push(ParsedRow {
            line,
            user: user.to_string(),
            item: item.to_string(),
            rating,
        });
    }
    Ok(rows)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn intern(map: &mut HashMap<String, usize>, names: &mut Vec<String>, key: &str) -> usize {
    if let Some(&id) = map.get(key) {
        return id;
    }
    let id = names.len();
    map.insert(key.to_string(), id);
    names.push(key.to_string());
    id
}

/// Reads a delimited interaction file, compacting user and item identifiers
/// in first-seen order. Relevance starts at 1 for every row; see
/// [`binarize`](super::binarize) for graded data.
pub fn load_interactions(path: impl AsRef<Path>, schema: &Schema) -> Result<InteractionSet> {
    let path = path.as_ref();
    let rows = parse_rows(&read_text(path)?, schema)?;
    let mut user_ids = HashMap::new();
    let mut item_ids = HashMap::new();
    let mut ids = IdMap::default();
    let mut seen = std::collections::HashSet::with_capacity(rows.len());
    let mut records = Vec::with_capacity(rows.len());
    for row in rows {
        let user = intern(&mut user_ids, &mut ids.users, &row.user);
        let item = intern(&mut item_ids, &mut ids.items, &row.item);
        if !seen.insert((user, item)) {
            return Err(Error::Duplicate {
                user: row.user,
                item: row.item,
                line: row.line,
            });
        }
        records.push(Interaction {
            user,
            item,
            rating: row.rating,
            relevance: 1,
        });
    }
    let (nu, ni) = (ids.users.len(), ids.items.len());
    InteractionSet::new(nu, ni, records, Arc::new(ids))
}

/// Reads a delimited file whose identifiers must resolve through an existing
/// mapping. Relevance is 1 iff the rating is at least 1.
pub fn load_interactions_with_ids(
    path: impl AsRef<Path>,
    schema: &Schema,
    ids: Arc<IdMap>,
) -> Result<InteractionSet> {
    let path = path.as_ref();
    let rows = parse_rows(&read_text(path)?, schema)?;
    let users: HashMap<&str, usize> = ids.users.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    let items: HashMap<&str, usize> = ids.items.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    let mut records = Vec::with_capacity(rows.len());
    for row in &rows {
        let lookup = |map: &HashMap<&str, usize>, key: &str, what: &str| {
            map.get(key).copied().ok_or_else(|| Error::Parse {
                line: row.line,
                message: format!("unknown {what} {key:?}"),
            })
        };
        records.push(Interaction {
            user: lookup(&users, &row.user, "user")?,
            item: lookup(&items, &row.item, "item")?,
            rating: row.rating,
            relevance: u8::from(row.rating >= 1.0),
        });
    }
    let (nu, ni) = (ids.users.len(), ids.items.len());
    InteractionSet::new(nu, ni, records, ids)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub users: usize,
    pub positives: usize,
    pub negatives: usize,
}

impl PartitionCounts {
    pub fn of(set: &InteractionSet) -> Self {
        PartitionCounts {
            users: set.active_users().len(),
            positives: set.records().iter().filter(|r| r.is_relevant()).count(),
            negatives: set.records().iter().filter(|r| !r.is_relevant()).count(),
        }
    }
}

/// Sidecar describing a directory of partition files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionManifest {
    pub format_version: u32,
    pub spec: SplitSpec,
    pub negatives_sampled: bool,
    pub num_users: usize,
    pub num_items: usize,
    pub train: PartitionCounts,
    pub validation: PartitionCounts,
    pub test: PartitionCounts,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    /// Compacted items each user interacted with in the source data.
    pub interacted: Vec<Vec<usize>>,
}

const MANIFEST: &str = "manifest.json";
const PARTITION_FILES: [&str; 3] = ["train.csv", "validation.csv", "test.csv"];

fn write_partition(path: &Path, set: &InteractionSet) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "user,item,rating").expect("write to vec");
    for r in set.records() {
        // binary relevance rides in the rating column
        writeln!(out, "{},{},{}", set.ids().user(r.user), set.ids().item(r.item), r.relevance)
            .expect("write to vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes `train.csv`, `validation.csv`, `test.csv` and `manifest.json` into `dir`.
pub fn write_partitions(dir: impl AsRef<Path>, parts: &PartitionedData) -> Result<PartitionManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for ((_, set), name) in parts.partitions().iter().zip(PARTITION_FILES) {
        write_partition(&dir.join(name), set)?;
    }
    let manifest = PartitionManifest {
        format_version: 1,
        spec: parts.spec.clone(),
        negatives_sampled: parts.negatives_sampled,
        num_users: parts.num_users(),
        num_items: parts.num_items(),
        train: PartitionCounts::of(&parts.train),
        validation: PartitionCounts::of(&parts.validation),
        test: PartitionCounts::of(&parts.test),
        user_ids: parts.train.ids().users.clone(),
        item_ids: parts.train.ids().items.clone(),
        interacted: parts.interacted.clone(),
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads a directory produced by [`write_partitions`].
pub fn read_partitions(dir: impl AsRef<Path>) -> Result<PartitionedData> {
    let dir = dir.as_ref();
    let manifest: PartitionManifest = serde_json::from_str(&read_text(&dir.join(MANIFEST))?)?;
    if manifest.format_version != 1 {
        return Err(Error::InvalidInput(format!(
            "unsupported partition format version {}",
            manifest.format_version
        )));
    }
    let ids = Arc::new(IdMap {
        users: manifest.user_ids,
        items: manifest.item_ids,
    });
    let schema = Schema {
        header: HeaderMode::Present,
        delimiter: Some(b','),
        ..Schema::default()
    };
    let load = |name: &str| load_interactions_with_ids(dir.join(name), &schema, ids.clone());
    Ok(PartitionedData {
        train: load(PARTITION_FILES[0])?,
        validation: load(PARTITION_FILES[1])?,
        test: load(PARTITION_FILES[2])?,
        spec: manifest.spec,
        negatives_sampled: manifest.negatives_sampled,
        interacted: manifest.interacted,
    })
}
