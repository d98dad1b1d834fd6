//! Leave-one-organ-out cross-validation and its report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::metrics::evaluate_volume;
use super::segmentor::SegmentorFactory;
use crate::config::{Arm, RunConfig};
use crate::data::build_slice_match;
use crate::episodic::GuardedDataset;
use crate::error::{Error, Result};
use crate::types::{organ_name, ClassId, ClassSets, Volume, ORGANS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CvOptions {
    pub n_folds: usize,
    /// Folds to run; `None` runs all of them.
    pub folds: Option<Vec<usize>>,
    /// Held-out organs, one leave-one-out experiment each.
    pub organs: Vec<ClassId>,
    pub n_sections: usize,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            n_folds: 5,
            folds: None,
            organs: ORGANS.to_vec(),
            n_sections: 3,
        }
    }
}

/// Volume indices `(train, test)` of one fold: contiguous test chunks.
pub fn fold_split(n_volumes: usize, n_folds: usize, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_folds == 0 || fold >= n_folds {
        return Err(Error::config(format!("fold {fold} out of range for {n_folds} folds")));
    }
    let lo = fold * n_volumes / n_folds;
    let hi = (fold + 1) * n_volumes / n_folds;
    if hi - lo < 2 {
        return Err(Error::Eval(format!(
            "{n_volumes} volumes give fold {fold} only {} test volumes; need a support and a query",
            hi - lo
        )));
    }
    if n_volumes - (hi - lo) == 0 {
        return Err(Error::Eval("no training volumes left".into()));
    }
    let test = (lo..hi).collect();
    let train = (0..lo).chain(hi..n_volumes).collect();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    /// Volumetric DC of each query volume, in percent.
    pub query_dcs: Vec<f64>,
    /// Mean of `query_dcs`.
    pub dc: f64,
    /// Reads of the held-out organ's labels during training.
    pub heldout_reads: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrganResult {
    pub organ: ClassId,
    pub folds: Vec<FoldResult>,
    /// Mean over folds, in percent.
    pub dc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub arm: String,
    pub seed: u64,
    pub config_hash: String,
    pub organs: Vec<OrganResult>,
    /// Mean over organs, in percent.
    pub mean: f64,
}

impl MetricsReport {
    pub fn from_organs(arm: &str, cfg: &RunConfig, organs: Vec<OrganResult>) -> Self {
        let mean = organs.iter().map(|o| o.dc).sum::<f64>() / organs.len().max(1) as f64;
        MetricsReport {
            arm: arm.to_string(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            organs,
            mean,
        }
    }

    pub fn organ_dc(&self, organ: ClassId) -> Option<f64> {
        self.organs.iter().find(|o| o.organ == organ).map(|o| o.dc)
    }

    /// Held-out label reads per organ, summed over folds.
    pub fn heldout_reads(&self) -> BTreeMap<ClassId, u64> {
        self.organs
            .iter()
            .map(|o| (o.organ, o.folds.iter().map(|f| f.heldout_reads).sum()))
            .collect()
    }

    /// One line per (organ, fold) plus per-organ and overall means.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("arm,seed,config_hash,organ,fold,dc,heldout_reads\n");
        let prefix = format!("{},{},{}", self.arm, self.seed, self.config_hash);
        for o in &self.organs {
            let name = organ_name(o.organ);
            for f in &o.folds {
                let _ = writeln!(s, "{prefix},{name},{},{:.4},{}", f.fold, f.dc, f.heldout_reads);
            }
            let reads: u64 = o.folds.iter().map(|f| f.heldout_reads).sum();
            let _ = writeln!(s, "{prefix},{name},mean,{:.4},{reads}", o.dc);
        }
        let total: u64 = self.heldout_reads().values().sum();
        let _ = writeln!(s, "{prefix},mean,mean,{:.4},{total}", self.mean);
        s
    }

    /// Aligned table with columns Liver, Spleen, Left Kidney, Right Kidney, Mean.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# arm={} seed={} config={}", self.arm, self.seed, self.config_hash);
        let _ = write!(s, "{:<10}", "Arm");
        for c in ORGANS {
            let _ = write!(s, " {:>12}", organ_name(c));
        }
        let _ = writeln!(s, " {:>12}", "Mean");
        let _ = write!(s, "{:<10}", self.arm);
        for c in ORGANS {
            match self.organ_dc(c) {
                Some(v) => {
                    let _ = write!(s, " {v:>12.2}");
                }
                None => {
                    let _ = write!(s, " {:>12}", "-");
                }
            }
        }
        let _ = writeln!(s, " {:>12.2}", self.mean);
        let reads = self.heldout_reads();
        let _ = writeln!(
            s,
            "# held-out label reads during training: {}",
            reads
                .iter()
                .map(|(c, n)| format!("{}={n}", organ_name(*c)))
                .collect::<Vec<_>>()
                .join(" ")
        );
        s
    }
}

fn run_fold(
    volumes: &[Volume],
    cfg: &RunConfig,
    factory: &dyn SegmentorFactory,
    organ: ClassId,
    fold: usize,
    opts: &CvOptions,
) -> Result<FoldResult> {
    let (train_idx, test_idx) = fold_split(volumes.len(), opts.n_folds, fold)?;
    let classes = ClassSets::leave_one_out(organ);
    let train_vols: Vec<Volume> = train_idx.iter().map(|&i| volumes[i].clone()).collect();
    let guard = GuardedDataset::new(&train_vols, classes.train_classes.clone())?;
    let segmentor = factory.build(&guard, cfg, &classes)?;
    let heldout_reads = guard.access_log().reads_of(organ);
    drop(guard);

    let support = &volumes[test_idx[0]];
    let mut query_dcs = Vec::with_capacity(test_idx.len() - 1);
    for &qi in &test_idx[1..] {
        let query = &volumes[qi];
        let plan = build_slice_match(support, query, organ, opts.n_sections)?;
        query_dcs.push(100.0 * evaluate_volume(segmentor.as_ref(), support, query, organ, &plan)?);
    }
    let dc = query_dcs.iter().sum::<f64>() / query_dcs.len() as f64;
    log::info!(
        "organ {} fold {fold}: DC {dc:.2} (queries {query_dcs:.2?})",
        organ_name(organ)
    );
    Ok(FoldResult {
        fold,
        query_dcs,
        dc,
        heldout_reads,
    })
}

/// For each held-out organ and fold: train on the other organs of the
/// fold's training volumes, then segment the held-out organ in the test
/// volumes with the first test volume as support.
pub fn cross_validate(
    volumes: &[Volume],
    cfg: &RunConfig,
    arm: Arm,
    factory: &dyn SegmentorFactory,
    opts: &CvOptions,
) -> Result<MetricsReport> {
    let cfg = cfg.clone().with_arm(arm);
    cfg.validate()?;
    if opts.organs.is_empty() {
        return Err(Error::config("no held-out organs requested"));
    }
    let folds: Vec<usize> = opts.folds.clone().unwrap_or_else(|| (0..opts.n_folds).collect());
    if folds.is_empty() {
        return Err(Error::config("no folds requested"));
    }
    for &f in &folds {
        fold_split(volumes.len(), opts.n_folds, f)?;
    }
    let jobs: Vec<(ClassId, usize)> = opts
        .organs
        .iter()
        .flat_map(|&o| folds.iter().map(move |&f| (o, f)))
        .collect();
    let results: Vec<FoldResult> = jobs
        .par_iter()
        .map(|&(o, f)| run_fold(volumes, &cfg, factory, o, f, opts))
        .collect::<Result<_>>()?;
    let organs = opts
        .organs
        .iter()
        .map(|&organ| {
            let folds: Vec<FoldResult> = jobs
                .iter()
                .zip(&results)
                .filter(|((o, _), _)| *o == organ)
                .map(|(_, r)| r.clone())
                .collect();
            let dc = folds.iter().map(|f| f.dc).sum::<f64>() / folds.len() as f64;
            OrganResult { organ, folds, dc }
        })
        .collect();
    Ok(MetricsReport::from_organs(arm.name(), &cfg, organs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_phantoms, PhantomSpec};
    use crate::episodic::{EpisodeSampler, GuardedDataset};
    use crate::eval::segmentor::{EmptySegmentor, FixedFactory, Segmentor, TruthEcho};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn phantoms(n: usize) -> Vec<Volume> {
        let spec = PhantomSpec { depth: 12, image_size: (32, 32), ..PhantomSpec::mr_like(n, 9) };
        generate_phantoms(&spec).unwrap()
    }

    fn cfg() -> RunConfig {
        RunConfig { image_size: (32, 32), ..RunConfig::default() }
    }

    #[test]
    fn fold_arithmetic() {
        for f in 0..5 {
            let (train, test) = fold_split(20, 5, f).unwrap();
            assert_eq!((train.len(), test.len()), (16, 4));
            assert!(train.iter().all(|i| !test.contains(i)));
        }
        assert!(fold_split(6, 5, 0).is_err());
        assert!(fold_split(20, 5, 5).is_err());
    }

    #[test]
    fn truth_echo_scores_100() {
        let vols = phantoms(10);
        let factory = FixedFactory(Arc::new(TruthEcho::new(&vols)));
        let r = cross_validate(&vols, &cfg(), Arm::GcnDe, &factory, &CvOptions::default()).unwrap();
        assert_eq!(r.organs.len(), 4);
        assert!(r.organs.iter().all(|o| o.dc == 100.0 && o.folds.len() == 5));
        assert_eq!(r.mean, 100.0);
        let table = r.to_table();
        for h in ["Liver", "Spleen", "Left Kidney", "Right Kidney", "Mean"] {
            assert!(table.contains(h));
        }
        assert_eq!(r.to_csv().lines().count(), 1 + 4 * 6 + 1);
    }

    #[test]
    fn mean_is_mean_of_organ_rows() {
        let vols = phantoms(10);
        let factory = FixedFactory(Arc::new(EmptySegmentor));
        let opts = CvOptions { folds: Some(vec![1]), ..CvOptions::default() };
        let r = cross_validate(&vols, &cfg(), Arm::Baseline, &factory, &opts).unwrap();
        let m = r.organs.iter().map(|o| o.dc).sum::<f64>() / 4.0;
        assert!((r.mean - m).abs() < 1e-9);
        assert_eq!(r.mean, 0.0);
    }

    /// Samples training episodes like a trainer would, then predicts nothing.
    struct Sampling;

    impl SegmentorFactory for Sampling {
        fn build(&self, data: &GuardedDataset<'_>, _: &RunConfig, classes: &ClassSets) -> Result<Box<dyn Segmentor>> {
            let s = EpisodeSampler::new(data, &classes.train_classes)?;
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for _ in 0..50 {
                s.sample(&mut rng)?;
            }
            for c in &classes.test_classes {
                assert!(data.class_mask(&data.index()[0], *c).is_err());
            }
            Ok(Box::new(EmptySegmentor))
        }
    }

    #[test]
    fn heldout_labels_are_never_read() {
        let vols = phantoms(10);
        let opts = CvOptions { folds: Some(vec![0, 3]), ..CvOptions::default() };
        let r = cross_validate(&vols, &cfg(), Arm::Gcn, &Sampling, &opts).unwrap();
        assert!(r.heldout_reads().values().all(|&n| n == 0));
    }
}
