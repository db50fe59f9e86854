//! Few-shot sampling, source-target pairing and multi-class batching.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub source_per_class: usize,
    pub target_per_class: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { source_per_class: 20, target_per_class: 3, seed: 0 }
    }
}

fn indices_by_class(ds: &Dataset) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); ds.classes];
    for (i, s) in ds.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    by_class
}

/// Draws exactly `per_class` samples of every class without replacement.
/// The rest of the dataset is the test split, so each class needs strictly
/// more than `per_class` samples.
pub fn sample_protocol(ds: &Dataset, per_class: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if per_class == 0 {
        return Err(Error::InvalidInput("per-class count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(per_class * ds.classes);
    for (class, members) in indices_by_class(ds).into_iter().enumerate() {
        if members.len() <= per_class {
            return Err(Error::InsufficientSamples {
                class,
                requested: per_class,
                available: members.len(),
            });
        }
        let picked = index::sample(&mut rng, members.len(), per_class);
        train.extend(picked.iter().map(|k| members[k]));
    }
    train.sort_unstable();
    let chosen: BTreeSet<usize> = train.iter().copied().collect();
    let test: Vec<usize> = (0..ds.len()).filter(|i| !chosen.contains(i)).collect();
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Holds out `fraction` of each class (at least one sample) for
/// validation. Returns `None` when some class would be left without
/// training samples.
pub fn split_validation(ds: &Dataset, fraction: f64, seed: u64) -> (Dataset, Option<Dataset>) {
    if fraction <= 0.0 {
        return (ds.clone(), None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for members in indices_by_class(ds) {
        if members.is_empty() {
            continue;
        }
        let held = ((members.len() as f64 * fraction).floor() as usize).max(1);
        if held >= members.len() {
            return (ds.clone(), None);
        }
        let mut shuffled = members;
        shuffled.shuffle(&mut rng);
        val.extend_from_slice(&shuffled[..held]);
        train.extend_from_slice(&shuffled[held..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (ds.subset(&train), Some(ds.subset(&val)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub source: usize,
    pub target: usize,
    pub source_label: usize,
    pub target_label: usize,
}

impl Pair {
    pub fn is_positive(&self) -> bool {
        self.source_label == self.target_label
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairBatch {
    pub pairs: Vec<Pair>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn source_indices(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.source).collect()
    }

    pub fn target_indices(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.target).collect()
    }

    pub fn source_labels(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.source_label).collect()
    }

    pub fn target_labels(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.target_label).collect()
    }

    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.is_positive()).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    fn target_classes(&self) -> BTreeSet<usize> {
        self.pairs.iter().map(|p| p.target_label).collect()
    }
}

/// Cartesian product of source and target samples. Negative pairs are
/// uniformly subsampled to at most `floor(ratio * positives)`; `None`
/// keeps them all. Pair order follows the product order.
pub fn make_pairs(source: &Dataset, target: &Dataset, ratio: Option<f64>, seed: u64) -> Result<PairBatch> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidInput("pairing needs non-empty source and target".into()));
    }
    let all: Vec<Pair> = source
        .samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            target.samples.iter().enumerate().map(move |(j, t)| Pair {
                source: i,
                target: j,
                source_label: s.label,
                target_label: t.label,
            })
        })
        .collect();
    let positives = all.iter().filter(|p| p.is_positive()).count();
    if positives == 0 {
        return Err(Error::NoPositivePairs);
    }
    let negatives: Vec<usize> = (0..all.len()).filter(|&k| !all[k].is_positive()).collect();
    let keep = match ratio {
        Some(r) if r.is_finite() => {
            if r < 0.0 {
                return Err(Error::InvalidInput(format!("negative pair ratio {r}")));
            }
            ((r * positives as f64).floor() as usize).min(negatives.len())
        }
        _ => negatives.len(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = vec![false; all.len()];
    for k in index::sample(&mut rng, negatives.len(), keep) {
        kept[negatives[k]] = true;
    }
    let pairs = all
        .into_iter()
        .enumerate()
        .filter(|(k, p)| p.is_positive() || kept[*k])
        .map(|(_, p)| p)
        .collect();
    Ok(PairBatch { pairs })
}

/// Shuffled mini-batches, each with at least two target classes.
#[derive(Debug, Clone)]
pub struct PairBatcher {
    pairs: Vec<Pair>,
    batch_size: usize,
    rng: ChaCha8Rng,
}

pub fn stratified_batches(pairs: &PairBatch, batch_size: usize, seed: u64) -> Result<PairBatcher> {
    PairBatcher::new(pairs, batch_size, seed)
}

impl PairBatcher {
    pub fn new(pairs: &PairBatch, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::InvalidInput("batch size must be at least 2".into()));
        }
        if pairs.target_classes().len() < 2 {
            return Err(Error::SingleClass("pairs cover fewer than two target classes".into()));
        }
        Ok(Self { pairs: pairs.pairs.clone(), batch_size, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn batches_per_epoch(&self) -> usize {
        let n = self.pairs.len();
        let full = n / self.batch_size;
        // a trailing batch of one pair is merged into its predecessor
        match n % self.batch_size {
            0 => full,
            1 if full > 0 => full,
            _ => full + 1,
        }
    }

    /// One reshuffled pass over every pair.
    pub fn epoch(&mut self) -> Result<Vec<PairBatch>> {
        let mut order = self.pairs.clone();
        order.shuffle(&mut self.rng);
        let nb = self.batches_per_epoch();
        let mut batches: Vec<Vec<Pair>> = Vec::with_capacity(nb);
        let mut rest = order.as_slice();
        for b in 0..nb {
            let take = if b + 1 == nb { rest.len() } else { self.batch_size };
            batches.push(rest[..take].to_vec());
            rest = &rest[take..];
        }
        repair_single_class(&mut batches)?;
        Ok(batches.into_iter().map(|pairs| PairBatch { pairs }).collect())
    }
}

fn classes_of(batch: &[Pair]) -> BTreeSet<usize> {
    batch.iter().map(|p| p.target_label).collect()
}

/// Swaps pairs between batches until every batch holds two target classes.
fn repair_single_class(batches: &mut [Vec<Pair>]) -> Result<()> {
    for i in 0..batches.len() {
        let classes = classes_of(&batches[i]);
        if classes.len() >= 2 {
            continue;
        }
        let c = *classes.iter().next().expect("batches are non-empty");
        let mut fixed = false;
        'search: for j in (0..batches.len()).filter(|&j| j != i) {
            for e in 0..batches[j].len() {
                if batches[j][e].target_label == c {
                    continue;
                }
                let donor_keeps_variety = batches[j]
                    .iter()
                    .enumerate()
                    .any(|(k, p)| k != e && p.target_label != c);
                let donor_was_single = classes_of(&batches[j]).len() < 2;
                if donor_keeps_variety || donor_was_single {
                    let taken = batches[j][e];
                    batches[j][e] = batches[i][0];
                    batches[i][0] = taken;
                    fixed = true;
                    break 'search;
                }
            }
        }
        if !fixed {
            return Err(Error::SingleClass(format!(
                "batch {i} cannot be given a second target class"
            )));
        }
    }
    Ok(())
}
