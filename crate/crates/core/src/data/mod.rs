//! Samples, vocabularies and the three dataset sources: the planted-interest
//! synthetic generator, Amazon-reviews ingestion, and the on-disk cache.

mod amazon;
mod cache;
mod synthetic;

pub use amazon::{
    build_samples, ingest_amazon, ingest_dataset, ingest_readers, parse_meta_line, parse_review_line,
    IngestConfig, IngestOptions, IngestStats, InteractionRecord, MetaLine, ReviewLine, UNKNOWN_CATEGORY,
};
pub use cache::CACHE_HEADER;
pub use synthetic::{generate_synthetic, SyntheticDataset, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One CTR record. Item indices equal to the vocabulary's item count denote
/// the OOV row.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sample {
    pub user: usize,
    pub profile: usize,
    /// Chronological, most recent last.
    pub behaviours: Vec<usize>,
    pub candidate: usize,
    pub label: u8,
}

impl Sample {
    /// The most recent `max_len` behaviours.
    pub fn recent(&self, max_len: usize) -> &[usize] {
        let n = self.behaviours.len();
        &self.behaviours[n.saturating_sub(max_len)..]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub categories: Vec<String>,
    /// Category index per item.
    pub item_category: Vec<usize>,
}

impl Vocabulary {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn item_oov(&self) -> usize {
        self.items.len()
    }

    pub fn category_oov(&self) -> usize {
        self.categories.len()
    }

    /// Category row for an item index; OOV items map to the OOV category.
    pub fn category_of(&self, item: usize) -> usize {
        self.item_category
            .get(item)
            .copied()
            .unwrap_or(self.category_oov())
    }

    pub fn validate(&self) -> Result<()> {
        if self.item_category.len() != self.items.len() {
            return Err(Error::Config(format!(
                "{} items but {} category assignments",
                self.items.len(),
                self.item_category.len()
            )));
        }
        if let Some(&c) = self.item_category.iter().find(|&&c| c >= self.categories.len()) {
            return Err(Error::Config(format!("category index {c} out of range")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub tag: String,
    pub vocab: Vocabulary,
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split `{other}` (train, valid or test)"
            ))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Checks that every index resolves and every sample is well formed.
    pub fn validate(&self) -> Result<()> {
        self.vocab.validate()?;
        let v = &self.vocab;
        for (name, samples) in [
            ("train", &self.train),
            ("valid", &self.valid),
            ("test", &self.test),
        ] {
            for (i, s) in samples.iter().enumerate() {
                let bad = |msg: &str| Error::Config(format!("{name} sample {i}: {msg}"));
                if s.behaviours.is_empty() {
                    return Err(bad("empty behaviour sequence"));
                }
                if s.label > 1 {
                    return Err(bad("label must be 0 or 1"));
                }
                if s.user >= v.num_users() || s.profile > v.num_users() {
                    return Err(bad("user or profile index out of range"));
                }
                if s.candidate > v.item_oov() || s.behaviours.iter().any(|&b| b > v.item_oov()) {
                    return Err(bad("item index out of range"));
                }
                if s.behaviours.contains(&s.candidate) {
                    return Err(bad("candidate appears in its own behaviour sequence"));
                }
            }
        }
        Ok(())
    }

    /// Per-split counts of positives and negatives.
    pub fn label_counts(&self) -> [(usize, usize); 3] {
        let count = |s: &[Sample]| {
            let pos = s.iter().filter(|x| x.label == 1).count();
            (pos, s.len() - pos)
        };
        [count(&self.train), count(&self.valid), count(&self.test)]
    }

    pub fn to_cache_string(&self) -> String {
        cache::encode(self)
    }

    pub fn from_cache_str(text: &str) -> Result<Self> {
        cache::decode(text)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_cache_string().as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_cache_str(&crate::io::read_to_string(path)?)
    }
}
