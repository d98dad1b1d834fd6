use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;

use super::guard::{GuardedDataset, SliceRef};
use crate::error::{Error, Result};
use crate::types::{ClassId, SliceSample};

/// Support slice tries before giving up.
pub const MAX_RESAMPLES: usize = 64;

/// A support/query pair showing the same foreground class set.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support: SliceSample,
    pub query: SliceSample,
    pub class_set: BTreeSet<ClassId>,
    pub support_ref: SliceRef,
    pub query_ref: SliceRef,
}

/// Pre-grouped slice index for repeated sampling.
pub struct EpisodeSampler<'d, 'a> {
    data: &'d GuardedDataset<'a>,
    train_classes: BTreeSet<ClassId>,
    candidates: Vec<usize>,
    by_set: BTreeMap<BTreeSet<ClassId>, Vec<usize>>,
}

impl<'d, 'a> EpisodeSampler<'d, 'a> {
    pub fn new(data: &'d GuardedDataset<'a>, train_classes: &BTreeSet<ClassId>) -> Result<Self> {
        if train_classes.is_empty() {
            return Err(Error::Sampling("no training classes".into()));
        }
        let mut candidates = Vec::new();
        let mut by_set: BTreeMap<BTreeSet<ClassId>, Vec<usize>> = BTreeMap::new();
        for (i, r) in data.index().iter().enumerate() {
            let s: BTreeSet<ClassId> = r.classes.intersection(train_classes).copied().collect();
            if s.is_empty() {
                continue;
            }
            candidates.push(i);
            by_set.entry(s).or_default().push(i);
        }
        if candidates.is_empty() {
            return Err(Error::Sampling(format!(
                "no slice shows any of the training classes {train_classes:?}"
            )));
        }
        Ok(EpisodeSampler {
            data,
            train_classes: train_classes.clone(),
            candidates,
            by_set,
        })
    }

    fn class_set(&self, r: &SliceRef) -> BTreeSet<ClassId> {
        r.classes.intersection(&self.train_classes).copied().collect()
    }

    /// Draws a support slice, takes its training-class set `S`, and pairs
    /// it with another slice whose set is exactly `S`, preferring a
    /// different volume.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Episode> {
        let index = self.data.index();
        for _ in 0..MAX_RESAMPLES {
            let &si = self.candidates.choose(rng).expect("non-empty");
            let support_ref = &index[si];
            let set = self.class_set(support_ref);
            let peers = &self.by_set[&set];
            let other_volume: Vec<usize> = peers
                .iter()
                .copied()
                .filter(|&i| index[i].volume != support_ref.volume)
                .collect();
            let pool: Vec<usize> = if other_volume.is_empty() {
                peers.iter().copied().filter(|&i| i != si).collect()
            } else {
                other_volume
            };
            let Some(&qi) = pool.choose(rng) else {
                continue;
            };
            let query_ref = index[qi].clone();
            let support_ref = support_ref.clone();
            let mut support = self.data.slice(&support_ref);
            let mut query = self.data.slice(&query_ref);
            for s in [&mut support, &mut query] {
                s.multilabel.mapv_inplace(|c| if set.contains(&c) { c } else { 0 });
            }
            return Ok(Episode {
                support,
                query,
                class_set: set,
                support_ref,
                query_ref,
            });
        }
        Err(Error::Sampling(format!(
            "no support/query pair with matching class sets after {MAX_RESAMPLES} attempts"
        )))
    }
}

/// One-off convenience wrapper around [`EpisodeSampler`].
pub fn sample_episode<R: Rng + ?Sized>(
    data: &GuardedDataset<'_>,
    train_classes: &BTreeSet<ClassId>,
    rng: &mut R,
) -> Result<Episode> {
    EpisodeSampler::new(data, train_classes)?.sample(rng)
}
