//! Episodic SGD training.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::guard::GuardedDataset;
use super::sampler::{Episode, EpisodeSampler};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::losses::{combined_loss_from_logits, de_loss_grad, embed, embed_backward, overall_loss, EmbeddingSet};
use crate::network::{save_checkpoint, Gradients, ModelParams, Network};
use crate::types::{validate_split, BinaryMask, ClassSets};

/// Loss values of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub comb: f64,
    pub de: f64,
    pub overall: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams<f32>,
    /// Momentum buffer; `None` for plain SGD.
    pub velocity: Option<Gradients<f32>>,
    pub epoch: usize,
    pub episode: usize,
    pub iteration: usize,
    pub rng: ChaCha8Rng,
    pub history: Vec<LossRecord>,
}

impl TrainState {
    /// Fresh parameters and sampler stream derived from `cfg.seed`.
    pub fn init(network: &Network, cfg: &RunConfig) -> Self {
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = network.init_params(&mut init_rng);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let velocity = (cfg.momentum > 0.0).then(|| Gradients::zeros_like(&params));
        TrainState {
            params,
            velocity,
            epoch: 0,
            episode: 0,
            iteration: 0,
            rng,
            history: Vec::new(),
        }
    }

    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iteration,L_comb,L_de,L_overall\n");
        for r in &self.history {
            let _ = writeln!(s, "{},{:?},{:?},{:?}", r.iteration, r.comb, r.de, r.overall);
        }
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where checkpoints, the loss CSV and NaN snapshots go.
    pub out_dir: Option<PathBuf>,
    /// Stop after this many steps (for smoke tests); `None` runs the full schedule.
    pub max_iterations: Option<usize>,
}

/// Objective of one episode and its parameter gradient.
pub fn episode_objective(
    network: &Network,
    params: &ModelParams<f32>,
    episode: &Episode,
    cfg: &RunConfig,
) -> Result<(LossRecord, Gradients<f32>)> {
    let classes: Vec<_> = episode.class_set.iter().copied().collect();
    let mut outputs = Vec::with_capacity(classes.len());
    let mut targets = Vec::with_capacity(classes.len());
    for &c in &classes {
        let support_mask = BinaryMask::from_labels(episode.support.multilabel.view(), c)?;
        targets.push(BinaryMask::from_labels(episode.query.multilabel.view(), c)?);
        outputs.push(network.forward_with_tape(
            params,
            &episode.support.image,
            &support_mask,
            &episode.query.image,
        )?);
    }
    let logits: Vec<_> = outputs.iter().map(|(o, _)| o.logits.clone()).collect();
    let (comb, d_logits) = combined_loss_from_logits(&logits, &targets)?;

    let mode = cfg.embedding;
    let mut q_emb: BTreeMap<_, Array1<f32>> = BTreeMap::new();
    let mut s_emb: BTreeMap<_, Array1<f32>> = BTreeMap::new();
    for (&c, (o, _)) in classes.iter().zip(&outputs) {
        q_emb.insert(c, embed(&o.backend_query, mode));
        s_emb.insert(c, embed(&o.backend_support, mode));
    }
    let (de, gq, gs) = de_loss_grad(&EmbeddingSet::new(q_emb, s_emb)?);
    let w = cfg.de_loss_weight as f32;

    let mut grads = Gradients::zeros_like(params);
    for ((&c, (o, tape)), dl) in classes.iter().zip(&outputs).zip(&d_logits) {
        let (dq, ds) = if w > 0.0 {
            (
                Some(embed_backward(&o.backend_query, mode, &(&gq[&c] * w))),
                Some(embed_backward(&o.backend_support, mode, &(&gs[&c] * w))),
            )
        } else {
            (None, None)
        };
        network.backward(params, tape, dl, dq.as_ref(), ds.as_ref(), &mut grads);
    }
    let record = LossRecord {
        iteration: 0,
        comb: comb as f64,
        de: de as f64,
        overall: overall_loss(comb, de, w) as f64,
    };
    Ok((record, grads))
}

fn snapshot(opts: &TrainOptions, cfg: &RunConfig, params: &ModelParams<f32>) -> Option<PathBuf> {
    let dir = opts.out_dir.as_ref()?;
    let path = dir.join("nan_snapshot.ckpt");
    save_checkpoint(&path, cfg, params).ok().map(|_| path)
}

/// Runs `epochs × episodes_per_epoch × iterations_per_episode` SGD steps.
/// Only the classes visible through `data` can be read, and the visible
/// set must exclude every test class.
pub fn train(
    data: &GuardedDataset<'_>,
    cfg: &RunConfig,
    classes: &ClassSets,
    opts: &TrainOptions,
) -> Result<TrainState> {
    cfg.validate()?;
    validate_split(classes)?;
    if let Some(c) = classes.test_classes.iter().find(|c| data.visible().contains(c)) {
        return Err(Error::Split(format!("test class {c} is visible to the trainer")));
    }
    if data.slice_dims() != cfg.image_size {
        return Err(Error::config(format!(
            "dataset slices are {:?} but image_size is {:?}",
            data.slice_dims(),
            cfg.image_size
        )));
    }
    let network = Network::from_config(cfg)?;
    let sampler = EpisodeSampler::new(data, &classes.train_classes)?;
    let mut state = TrainState::init(&network, cfg);
    let lr = cfg.learning_rate as f32;
    let momentum = cfg.momentum as f32;
    let clip = cfg.grad_clip as f32;
    let limit = opts.max_iterations.unwrap_or(usize::MAX);

    'outer: for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        for _ in 0..cfg.episodes_per_epoch {
            let episode = sampler.sample(&mut state.rng)?;
            if let Some(c) = episode.class_set.iter().find(|c| classes.test_classes.contains(c)) {
                return Err(Error::Split(format!("sampler produced test class {c}")));
            }
            for _ in 0..cfg.iterations_per_episode {
                if state.iteration >= limit {
                    break 'outer;
                }
                let (mut rec, mut grads) = episode_objective(&network, &state.params, &episode, cfg)?;
                rec.iteration = state.iteration;
                if !(rec.overall.is_finite() && grads.all_finite()) {
                    return Err(Error::NonFinite {
                        iteration: state.iteration,
                        comb: rec.comb,
                        de: rec.de,
                        snapshot: snapshot(opts, cfg, &state.params),
                    });
                }
                let norm = grads.norm();
                if cfg.grad_clip > 0.0 && norm > clip {
                    grads.scale(clip / norm);
                }
                match state.velocity.as_mut() {
                    Some(v) => {
                        v.momentum_update(&grads, momentum);
                        state.params.apply_update(v, lr);
                    }
                    None => state.params.apply_update(&grads, lr),
                }
                state.history.push(rec);
                state.iteration += 1;
                log::debug!(
                    "iter {} comb {:.4} de {:.4} overall {:.4}",
                    rec.iteration,
                    rec.comb,
                    rec.de,
                    rec.overall
                );
                if let Some(dir) = &opts.out_dir {
                    if cfg.checkpoint_every > 0 && state.iteration.is_multiple_of(cfg.checkpoint_every) {
                        let path = dir.join(format!("checkpoint_{:06}.ckpt", state.iteration));
                        save_checkpoint(&path, cfg, &state.params)?;
                    }
                }
            }
            state.episode += 1;
        }
    }
    if let Some(dir) = &opts.out_dir {
        write_atomic(&dir.join("losses.csv"), state.loss_csv().as_bytes())?;
        save_checkpoint(&dir.join("model.ckpt"), cfg, &state.params)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_phantoms, PhantomSpec};
    use crate::types::Volume;
    use std::collections::BTreeSet;

    fn tiny_cfg() -> RunConfig {
        RunConfig {
            epochs: 1,
            episodes_per_epoch: 4,
            image_size: (32, 32),
            channel_widths: vec![4, 8, 16],
            gc_scales: [1].into(),
            partition_factors: (4, 4),
            ..RunConfig::default()
        }
    }

    fn phantoms() -> Vec<Volume> {
        let spec = PhantomSpec {
            depth: 12,
            image_size: (32, 32),
            ..PhantomSpec::mr_like(4, 8)
        };
        generate_phantoms(&spec).unwrap()
    }

    #[test]
    fn same_seed_same_losses() {
        let vols = phantoms();
        let classes = ClassSets::leave_one_out(2);
        let run = || {
            let g = GuardedDataset::new(&vols, classes.train_classes.clone()).unwrap();
            train(&g, &tiny_cfg(), &classes, &TrainOptions::default()).unwrap().history
        };
        let a = run();
        assert_eq!(a.len(), 4);
        assert_eq!(a, run());
    }

    #[test]
    fn rejects_visible_test_class() {
        let vols = phantoms();
        let classes = ClassSets::leave_one_out(2);
        let g = GuardedDataset::new(&vols, BTreeSet::from([1, 2, 3, 4])).unwrap();
        assert!(matches!(train(&g, &tiny_cfg(), &classes, &TrainOptions::default()), Err(Error::Split(_))));
    }

    #[test]
    fn step_touches_only_parameters_with_gradient() {
        let vols = phantoms();
        let cfg = tiny_cfg();
        let classes = ClassSets::leave_one_out(4);
        let g = GuardedDataset::new(&vols, classes.train_classes.clone()).unwrap();
        let net = Network::from_config(&cfg).unwrap();
        let state = TrainState::init(&net, &cfg);
        let sampler = EpisodeSampler::new(&g, &classes.train_classes).unwrap();
        let ep = sampler.sample(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (_, grads) = episode_objective(&net, &state.params, &ep, &cfg).unwrap();
        let mut p = state.params.clone();
        p.apply_update(&grads, 0.01);
        for id in p.ids() {
            for ((a, b), gv) in p.values(id).iter().zip(state.params.values(id)).zip(grads.values(id)) {
                if *gv == 0.0 {
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn clipped_steps_stay_small() {
        let vols = phantoms();
        let cfg = RunConfig { grad_clip: 1e-3, learning_rate: 0.1, ..tiny_cfg() };
        let classes = ClassSets::leave_one_out(3);
        let g = GuardedDataset::new(&vols, classes.train_classes.clone()).unwrap();
        let init = TrainState::init(&Network::from_config(&cfg).unwrap(), &cfg).params;
        let state = train(&g, &cfg, &classes, &TrainOptions::default()).unwrap();
        let moved = init
            .ids()
            .flat_map(|id| init.values(id).iter().zip(state.params.values(id)).map(|(a, b)| (a - b) * (a - b)))
            .sum::<f32>()
            .sqrt();
        // Four steps, each at most lr · clip in norm.
        assert!(moved > 0.0 && moved <= 4.0 * 0.1 * 1e-3 * 1.001, "moved {moved}");
    }

    #[test]
    fn writes_artifacts() {
        let vols = phantoms();
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { checkpoint_every: 2, ..tiny_cfg() };
        let classes = ClassSets::leave_one_out(1);
        let g = GuardedDataset::new(&vols, classes.train_classes.clone()).unwrap();
        let opts = TrainOptions { out_dir: Some(dir.path().to_path_buf()), max_iterations: None };
        let state = train(&g, &cfg, &classes, &opts).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("losses.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + state.history.len());
        assert!(dir.path().join("checkpoint_000002.ckpt").exists());
        let ck = crate::network::load_checkpoint(&dir.path().join("model.ckpt")).unwrap();
        assert_eq!(ck.params, state.params);
    }
}
