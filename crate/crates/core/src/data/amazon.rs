//! Amazon-reviews ingestion and leave-last-out sample construction.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, Vocabulary};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::math::Rng;

pub const UNKNOWN_CATEGORY: &str = "unknown";

const MAX_NEGATIVE_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user: String,
    pub item: String,
    pub category: String,
    pub ts: i64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    pub min_events: usize,
    /// Abort when the malformed fraction of either file exceeds this.
    pub max_malformed_fraction: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            min_events: 3,
            max_malformed_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub review_lines: usize,
    pub malformed_reviews: usize,
    pub meta_lines: usize,
    pub malformed_meta: usize,
    pub dropped_users: usize,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ReviewLine {
    #[serde(rename = "reviewerID")]
    pub reviewer_id: String,
    pub asin: String,
    #[serde(rename = "unixReviewTime")]
    pub unix_review_time: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaLine {
    pub asin: String,
    pub category: Option<String>,
}

#[derive(Deserialize)]
struct RawMeta {
    asin: String,
    #[serde(default)]
    categories: Option<serde_json::Value>,
}

pub fn parse_review_line(line: &str) -> Result<ReviewLine> {
    let r: ReviewLine = serde_json::from_str(line).map_err(|e| Error::format(0, format!("review: {e}")))?;
    if r.reviewer_id.is_empty() || r.asin.is_empty() {
        return Err(Error::format(0, "review: empty reviewerID or asin"));
    }
    if r.unix_review_time < 0 {
        return Err(Error::format(0, "review: negative unixReviewTime"));
    }
    Ok(r)
}

/// Parses one metadata line. The category is the most specific element of
/// the first category path (`[["Books", "Fiction"]]` gives `Fiction`); a flat
/// list of strings contributes its first element.
pub fn parse_meta_line(line: &str) -> Result<MetaLine> {
    let raw: RawMeta = serde_json::from_str(line).map_err(|e| Error::format(0, format!("metadata: {e}")))?;
    if raw.asin.is_empty() {
        return Err(Error::format(0, "metadata: empty asin"));
    }
    let category = match raw.categories {
        None | Some(serde_json::Value::Null) => None,
        Some(serde_json::Value::Array(paths)) => match paths.first() {
            None => None,
            Some(serde_json::Value::String(s)) => Some(s.clone()),
            Some(serde_json::Value::Array(path)) => match path.last() {
                None => None,
                Some(serde_json::Value::String(s)) => Some(s.clone()),
                Some(_) => return Err(Error::format(0, "metadata: non-string category")),
            },
            Some(_) => return Err(Error::format(0, "metadata: malformed categories")),
        },
        Some(_) => return Err(Error::format(0, "metadata: categories must be a list")),
    };
    Ok(MetaLine {
        asin: raw.asin,
        category: category.filter(|c| !c.is_empty()),
    })
}

fn check_malformed(what: &str, malformed: usize, total: usize, opts: &IngestOptions) -> Result<()> {
    if total > 0 && malformed as f64 > opts.max_malformed_fraction * total as f64 {
        return Err(Error::Config(format!(
            "{what}: {malformed} of {total} lines malformed, above the {:.1}% limit",
            100.0 * opts.max_malformed_fraction
        )));
    }
    Ok(())
}

/// Ingests from open readers; see [`ingest_amazon`].
pub fn ingest_readers(
    reviews: impl BufRead,
    meta: impl BufRead,
    opts: &IngestOptions,
) -> Result<(Vec<InteractionRecord>, IngestStats)> {
    let mut stats = IngestStats::default();

    let mut categories: HashMap<String, String> = HashMap::new();
    for (i, line) in meta.lines().enumerate() {
        let line = line.map_err(|e| Error::format(i + 1, format!("metadata: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        stats.meta_lines += 1;
        match parse_meta_line(&line) {
            Ok(m) => {
                if let Some(c) = m.category {
                    categories.entry(m.asin).or_insert(c);
                }
            }
            Err(e) => {
                stats.malformed_meta += 1;
                log::warn!("metadata line {}: {e}", i + 1);
            }
        }
    }
    check_malformed("metadata", stats.malformed_meta, stats.meta_lines, opts)?;

    let mut per_user: BTreeMap<String, Vec<(i64, String)>> = BTreeMap::new();
    for (i, line) in reviews.lines().enumerate() {
        let line = line.map_err(|e| Error::format(i + 1, format!("reviews: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        stats.review_lines += 1;
        match parse_review_line(&line) {
            Ok(r) => per_user
                .entry(r.reviewer_id)
                .or_default()
                .push((r.unix_review_time, r.asin)),
            Err(e) => {
                stats.malformed_reviews += 1;
                log::warn!("review line {}: {e}", i + 1);
            }
        }
    }
    check_malformed("reviews", stats.malformed_reviews, stats.review_lines, opts)?;

    let mut records = Vec::new();
    for (user, mut events) in per_user {
        if events.len() < opts.min_events {
            stats.dropped_users += 1;
            continue;
        }
        // Stable: equal timestamps keep file order.
        events.sort_by_key(|(ts, _)| *ts);
        for (ts, item) in events {
            let category = categories
                .get(&item)
                .cloned()
                .unwrap_or_else(|| UNKNOWN_CATEGORY.to_string());
            records.push(InteractionRecord {
                user: user.clone(),
                item,
                category,
                ts,
            });
        }
    }
    stats.records = records.len();
    if stats.malformed_reviews + stats.malformed_meta > 0 {
        log::warn!(
            "skipped {} malformed review lines and {} malformed metadata lines",
            stats.malformed_reviews,
            stats.malformed_meta
        );
    }
    Ok((records, stats))
}

/// Reads line-delimited review and metadata JSON. Records come back grouped
/// by user (sorted by id) and ordered by timestamp within each user.
pub fn ingest_amazon(
    reviews: &Path,
    meta: &Path,
    opts: &IngestOptions,
) -> Result<(Vec<InteractionRecord>, IngestStats)> {
    let open = |p: &Path| {
        std::fs::File::open(p)
            .map(std::io::BufReader::new)
            .map_err(|e| Error::io(p, e))
    };
    ingest_readers(open(reviews)?, open(meta)?, opts)
}

impl Vocabulary {
    /// Users, items and categories in sorted order.
    pub fn from_records(records: &[InteractionRecord]) -> Self {
        let users: BTreeSet<&str> = records.iter().map(|r| r.user.as_str()).collect();
        let items: BTreeMap<&str, &str> = records
            .iter()
            .map(|r| (r.item.as_str(), r.category.as_str()))
            .collect();
        let categories: BTreeSet<&str> = items.values().copied().collect();
        let categories: Vec<String> = categories.into_iter().map(String::from).collect();
        let item_category = items
            .values()
            .map(|c| {
                categories
                    .binary_search_by(|x| x.as_str().cmp(c))
                    .expect("collected")
            })
            .collect();
        Self {
            users: users.into_iter().map(String::from).collect(),
            items: items.keys().map(|s| s.to_string()).collect(),
            categories,
            item_category,
        }
    }
}

/// Leave-last-out samples. For each user the final event is the test
/// positive, the one before it the validation positive, and every earlier
/// event except the first a training positive. A positive's behaviours are
/// the user's strictly earlier events, minus the candidate item, truncated to
/// the most recent `max_len`. Each positive is followed by `neg_ratio`
/// negatives drawn uniformly from items the user never touched, sharing the
/// positive's behaviours.
pub fn build_samples(
    records: &[InteractionRecord],
    max_len: usize,
    neg_ratio: usize,
    rng: &mut Rng,
    tag: &str,
) -> Result<Dataset> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be positive".into()));
    }
    let vocab = Vocabulary::from_records(records);
    let item_index: HashMap<&str, usize> = vocab
        .items
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut by_user: Vec<Vec<(i64, usize)>> = vec![Vec::new(); vocab.num_users()];
    for r in records {
        let u = vocab.users.binary_search(&r.user).expect("collected");
        by_user[u].push((r.ts, item_index[r.item.as_str()]));
    }

    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    let n_items = vocab.num_items();
    for (user, mut events) in by_user.into_iter().enumerate() {
        events.sort_by_key(|(ts, _)| *ts);
        let history: BTreeSet<usize> = events.iter().map(|(_, i)| *i).collect();
        let t_len = events.len();
        for t in 1..t_len {
            let (ts, candidate) = events[t];
            let mut behaviours: Vec<usize> = events[..t]
                .iter()
                .filter(|(bts, item)| *bts < ts && *item != candidate)
                .map(|(_, item)| *item)
                .collect();
            if behaviours.is_empty() {
                continue;
            }
            if behaviours.len() > max_len {
                behaviours.drain(..behaviours.len() - max_len);
            }
            let target = if t + 1 == t_len {
                &mut test
            } else if t + 2 == t_len {
                &mut valid
            } else {
                &mut train
            };
            target.push(Sample {
                user,
                profile: user,
                behaviours: behaviours.clone(),
                candidate,
                label: 1,
            });
            if history.len() >= n_items {
                log::warn!(
                    "user {} touched every item; no negatives drawn",
                    vocab.users[user]
                );
                continue;
            }
            for _ in 0..neg_ratio {
                let neg = (0..MAX_NEGATIVE_ATTEMPTS)
                    .map(|_| rng.below(n_items))
                    .find(|i| !history.contains(i))
                    .ok_or_else(|| Error::Config("could not draw a negative item".into()))?;
                target.push(Sample {
                    user,
                    profile: user,
                    behaviours: behaviours.clone(),
                    candidate: neg,
                    label: 0,
                });
            }
        }
    }
    let dataset = Dataset {
        tag: tag.to_string(),
        vocab,
        train,
        valid,
        test,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Everything `ingest` needs besides the two input paths.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    pub options: IngestOptions,
    pub max_len: usize,
    pub neg_ratio: usize,
    pub seed: u64,
    pub tag: String,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            options: IngestOptions::default(),
            max_len: 20,
            neg_ratio: 1,
            seed: 0,
            tag: "amazon".into(),
        }
    }
}

impl IngestConfig {
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut kv = KvFile::parse(text)?;
        let d = Self::default();
        let cfg = Self {
            options: IngestOptions {
                min_events: kv.take_or("min_events", d.options.min_events)?,
                max_malformed_fraction: kv
                    .take_or("max_malformed_fraction", d.options.max_malformed_fraction)?,
            },
            max_len: kv.take_or("max_len", d.max_len)?,
            neg_ratio: kv.take_or("neg_ratio", d.neg_ratio)?,
            seed: kv.take_or("seed", d.seed)?,
            tag: kv.take_or("tag", d.tag)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "min_events = {}\nmax_malformed_fraction = {}\nmax_len = {}\nneg_ratio = {}\nseed = {}\ntag = {}\n",
            self.options.min_events, self.options.max_malformed_fraction, self.max_len, self.neg_ratio, self.seed, self.tag
        )
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.options.min_events < 3 {
            return fail(format!(
                "min_events must be at least 3 so every user has train, validation and test events, got {}",
                self.options.min_events
            ));
        }
        if !(0.0..=1.0).contains(&self.options.max_malformed_fraction) {
            return fail(format!(
                "max_malformed_fraction {} outside [0, 1]",
                self.options.max_malformed_fraction
            ));
        }
        if self.max_len == 0 || self.neg_ratio == 0 {
            return fail("max_len and neg_ratio must be positive".into());
        }
        if self.tag.is_empty() || self.tag.chars().any(char::is_whitespace) {
            return fail(format!("tag `{}` must be a single non-empty word", self.tag));
        }
        Ok(())
    }
}

/// Reads both files and builds the sample splits.
pub fn ingest_dataset(reviews: &Path, meta: &Path, cfg: &IngestConfig) -> Result<(Dataset, IngestStats)> {
    let (records, stats) = ingest_amazon(reviews, meta, &cfg.options)?;
    if records.is_empty() {
        return Err(Error::Config(format!(
            "no user in {} has at least {} events",
            reviews.display(),
            cfg.options.min_events
        )));
    }
    let mut rng = Rng::new(cfg.seed);
    let dataset = build_samples(&records, cfg.max_len, cfg.neg_ratio, &mut rng, &cfg.tag)?;
    Ok((dataset, stats))
}
