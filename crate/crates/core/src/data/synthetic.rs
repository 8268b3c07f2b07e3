//! Planted multi-interest data.
//!
//! Items are split uniformly into `G` interest groups and each user owns `m`
//! of them. A user has one behaviour sequence of length `l`; every round adds
//! one positive candidate from a group that appears among the user's
//! on-interest behaviours and `neg_ratio` negatives from groups the user does
//! not own. Rounds `0..rounds` form the training split, the next round the
//! validation split, and the last round the test split. Candidates are
//! distinct per user and never occur in the behaviour sequence.
//!
//! Categories are coarser than interests: category `c` covers the
//! contiguous block of groups `g` with `g·C/G = c`. With the default `C = G/2`
//! a category narrows an item down to two interests without naming either.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, Vocabulary};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::math::Rng;

const MAX_DRAW_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub num_interests: usize,
    pub interests_per_user: usize,
    /// Item categories, each spanning `G / C` interest groups.
    pub num_categories: usize,
    pub seq_len: usize,
    pub neg_ratio: usize,
    pub noise: f64,
    /// Training rounds per user.
    pub rounds: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_users: 2000,
            num_items: 500,
            num_interests: 10,
            interests_per_user: 3,
            num_categories: 5,
            seq_len: 20,
            neg_ratio: 1,
            noise: 0.1,
            rounds: 4,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut kv = KvFile::parse(text)?;
        let d = Self::default();
        let spec = Self {
            num_users: kv.take_or("num_users", d.num_users)?,
            num_items: kv.take_or("num_items", d.num_items)?,
            num_interests: kv.take_or("num_interests", d.num_interests)?,
            interests_per_user: kv.take_or("interests_per_user", d.interests_per_user)?,
            num_categories: kv.take_or("num_categories", d.num_categories)?,
            seq_len: kv.take_or("seq_len", d.seq_len)?,
            neg_ratio: kv.take_or("neg_ratio", d.neg_ratio)?,
            noise: kv.take_or("noise", d.noise)?,
            rounds: kv.take_or("rounds", d.rounds)?,
            seed: kv.take_or("seed", d.seed)?,
        };
        kv.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "num_users = {}\nnum_items = {}\nnum_interests = {}\ninterests_per_user = {}\n\
             num_categories = {}\nseq_len = {}\nneg_ratio = {}\nnoise = {}\nrounds = {}\nseed = {}\n",
            self.num_users,
            self.num_items,
            self.num_interests,
            self.interests_per_user,
            self.num_categories,
            self.seq_len,
            self.neg_ratio,
            self.noise,
            self.rounds,
            self.seed
        )
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_users == 0 {
            return fail("num_users must be positive".into());
        }
        if self.num_interests == 0 || self.num_items < self.num_interests {
            return fail(format!(
                "{} items cannot fill {} interest groups",
                self.num_items, self.num_interests
            ));
        }
        if self.interests_per_user == 0 || self.interests_per_user >= self.num_interests {
            return fail(format!(
                "interests_per_user must be in [1, num_interests) so negatives exist, got {}",
                self.interests_per_user
            ));
        }
        if self.num_categories == 0 || self.num_categories > self.num_interests {
            return fail(format!(
                "num_categories must be in [1, num_interests], got {}",
                self.num_categories
            ));
        }
        if self.seq_len < 2 {
            return fail(format!("seq_len must be at least 2, got {}", self.seq_len));
        }
        if self.neg_ratio == 0 {
            return fail("neg_ratio must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return fail(format!("noise {} outside [0, 1]", self.noise));
        }
        if self.rounds == 0 {
            return fail("rounds must be at least 1".into());
        }
        Ok(())
    }

    pub fn tag(&self) -> String {
        format!("synthetic-l{}-s{}", self.seq_len, self.seed)
    }
}

/// A generated dataset plus the planted ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub item_group: Vec<usize>,
    pub user_groups: Vec<Vec<usize>>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let g = spec.num_interests;

    let mut perm: Vec<usize> = (0..spec.num_items).collect();
    rng.shuffle(&mut perm);
    let mut item_group = vec![0; spec.num_items];
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); g];
    for (k, &item) in perm.iter().enumerate() {
        item_group[item] = k % g;
    }
    for item in 0..spec.num_items {
        groups[item_group[item]].push(item);
    }

    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    let mut user_groups = Vec::with_capacity(spec.num_users);

    for user in 0..spec.num_users {
        let mut all: Vec<usize> = (0..g).collect();
        for i in 0..spec.interests_per_user {
            let j = i + rng.below(g - i);
            all.swap(i, j);
        }
        let mut owned = all[..spec.interests_per_user].to_vec();
        owned.sort_unstable();
        let foreign: Vec<usize> = all[spec.interests_per_user..].to_vec();
        let foreign_items: Vec<usize> = foreign
            .iter()
            .flat_map(|&gr| groups[gr].iter().copied())
            .collect();

        let mut behaviours = Vec::with_capacity(spec.seq_len);
        let mut seen_groups = BTreeSet::new();
        for _ in 0..spec.seq_len {
            if rng.bernoulli(spec.noise) {
                behaviours.push(foreign_items[rng.below(foreign_items.len())]);
            } else {
                let gr = owned[rng.below(owned.len())];
                seen_groups.insert(gr);
                behaviours.push(groups[gr][rng.below(groups[gr].len())]);
            }
        }
        let positive_groups: Vec<usize> = if seen_groups.is_empty() {
            owned.clone()
        } else {
            seen_groups.into_iter().collect()
        };

        let mut used: BTreeSet<usize> = behaviours.iter().copied().collect();
        let mut draw = |pool: &dyn Fn(&mut Rng) -> usize, rng: &mut Rng| -> Result<usize> {
            for _ in 0..MAX_DRAW_ATTEMPTS {
                let item = pool(rng);
                if used.insert(item) {
                    return Ok(item);
                }
            }
            Err(Error::Config(format!(
                "synthetic spec infeasible: user {user} ran out of distinct candidates"
            )))
        };
        let pos_pool = |rng: &mut Rng| {
            let gr = positive_groups[rng.below(positive_groups.len())];
            groups[gr][rng.below(groups[gr].len())]
        };
        let neg_pool = |rng: &mut Rng| foreign_items[rng.below(foreign_items.len())];

        for round in 0..spec.rounds + 2 {
            let target = if round < spec.rounds {
                &mut train
            } else if round == spec.rounds {
                &mut valid
            } else {
                &mut test
            };
            let pos = draw(&pos_pool, &mut rng)?;
            target.push(Sample {
                user,
                profile: user,
                behaviours: behaviours.clone(),
                candidate: pos,
                label: 1,
            });
            for _ in 0..spec.neg_ratio {
                let neg = draw(&neg_pool, &mut rng)?;
                target.push(Sample {
                    user,
                    profile: user,
                    behaviours: behaviours.clone(),
                    candidate: neg,
                    label: 0,
                });
            }
        }
        user_groups.push(owned);
    }

    let vocab = Vocabulary {
        users: (0..spec.num_users).map(|u| format!("u{u}")).collect(),
        items: (0..spec.num_items).map(|i| format!("i{i}")).collect(),
        categories: (0..spec.num_categories).map(|c| format!("c{c}")).collect(),
        item_category: item_group
            .iter()
            .map(|&gr| gr * spec.num_categories / g)
            .collect(),
    };
    Ok(SyntheticDataset {
        dataset: Dataset {
            tag: spec.tag(),
            vocab,
            train,
            valid,
            test,
        },
        item_group,
        user_groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            num_users: 50,
            num_items: 100,
            num_interests: 5,
            interests_per_user: 2,
            num_categories: 5,
            seq_len: 8,
            neg_ratio: 1,
            noise: 0.1,
            rounds: 3,
            seed: 4,
        }
    }

    #[test]
    fn deterministic_and_byte_identical() {
        let a = generate_synthetic(&small()).unwrap().dataset;
        let b = generate_synthetic(&small()).unwrap().dataset;
        assert_eq!(a.to_cache_string(), b.to_cache_string());
        let mut other = small();
        other.seed = 5;
        assert_ne!(a, generate_synthetic(&other).unwrap().dataset);
    }

    #[test]
    fn counts_and_balance() {
        let spec = SyntheticSpec {
            num_users: 2000,
            seq_len: 20,
            rounds: 1,
            ..SyntheticSpec::default()
        };
        let d = generate_synthetic(&spec).unwrap().dataset;
        // one round: 1 positive + 1 negative per user
        assert_eq!(d.train.len(), 2000 * 2);
        for (pos, neg) in d.label_counts() {
            assert_eq!(pos, neg);
        }
        d.validate().unwrap();
    }

    #[test]
    fn neg_ratio_scales_negatives() {
        let spec = SyntheticSpec {
            neg_ratio: 3,
            ..small()
        };
        let d = generate_synthetic(&spec).unwrap().dataset;
        for (pos, neg) in d.label_counts() {
            assert_eq!(neg, 3 * pos);
        }
    }

    #[test]
    fn planted_structure_holds() {
        let spec = SyntheticSpec {
            noise: 0.0,
            ..small()
        };
        let s = generate_synthetic(&spec).unwrap();
        let d = &s.dataset;
        let all = d.train.iter().chain(&d.valid).chain(&d.test);
        for sample in all {
            let owned = &s.user_groups[sample.user];
            let cand_group = s.item_group[sample.candidate];
            assert!(sample
                .behaviours
                .iter()
                .all(|&b| owned.contains(&s.item_group[b])));
            if sample.label == 1 {
                assert!(sample.behaviours.iter().any(|&b| s.item_group[b] == cand_group));
            } else {
                assert!(!owned.contains(&cand_group));
            }
        }
    }

    #[test]
    fn candidates_distinct_per_user() {
        let s = generate_synthetic(&small()).unwrap();
        let d = &s.dataset;
        for user in 0..small().num_users {
            let mut cands: Vec<usize> = d
                .train
                .iter()
                .chain(&d.valid)
                .chain(&d.test)
                .filter(|x| x.user == user)
                .map(|x| x.candidate)
                .collect();
            let n = cands.len();
            cands.sort_unstable();
            cands.dedup();
            assert_eq!(cands.len(), n);
        }
    }

    #[test]
    fn groups_are_uniform() {
        let s = generate_synthetic(&small()).unwrap();
        let mut sizes = [0; 5];
        s.item_group.iter().for_each(|&g| sizes[g] += 1);
        assert!(sizes.iter().all(|&c| c == 20));
    }

    #[test]
    fn categories_are_coarser_than_groups() {
        let spec = SyntheticSpec::default();
        let s = generate_synthetic(&spec).unwrap();
        let vocab = &s.dataset.vocab;
        assert_eq!(vocab.num_categories(), 5);
        for (item, &gr) in s.item_group.iter().enumerate() {
            assert_eq!(vocab.item_category[item], gr / 2);
        }
        let one = generate_synthetic(&SyntheticSpec {
            num_categories: 1,
            ..small()
        })
        .unwrap();
        assert!(one.dataset.vocab.item_category.iter().all(|&c| c == 0));
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        let bad = [
            SyntheticSpec {
                interests_per_user: 5,
                ..small()
            },
            SyntheticSpec {
                seq_len: 1,
                ..small()
            },
            SyntheticSpec {
                num_items: 3,
                ..small()
            },
            SyntheticSpec {
                noise: 1.5,
                ..small()
            },
            SyntheticSpec { rounds: 0, ..small() },
            SyntheticSpec {
                num_categories: 0,
                ..small()
            },
            SyntheticSpec {
                num_categories: 6,
                ..small()
            },
        ];
        for spec in bad {
            assert!(
                matches!(generate_synthetic(&spec), Err(Error::Config(_))),
                "{spec:?}"
            );
        }
        // groups of 2 items cannot supply 6 distinct positives
        let tiny = SyntheticSpec {
            num_items: 10,
            seq_len: 2,
            rounds: 4,
            noise: 0.0,
            ..small()
        };
        assert!(matches!(generate_synthetic(&tiny), Err(Error::Config(_))));
    }

    #[test]
    fn kv_round_trip() {
        let spec = small();
        assert_eq!(SyntheticSpec::from_kv_str(&spec.to_kv_string()).unwrap(), spec);
        assert!(SyntheticSpec::from_kv_str("num_users = 10\nbogus = 1").is_err());
        assert_eq!(SyntheticSpec::from_kv_str("").unwrap(), SyntheticSpec::default());
    }
}
