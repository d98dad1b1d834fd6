use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fewseg::correlation::flops::{balanced_factor, efficient_gc_macs, naive_gc_macs};
use fewseg::data::{build_slice_match, generate_phantoms, load_dataset, save_dataset, PhantomSpec};
use fewseg::episodic::{train, GuardedDataset, TrainOptions};
use fewseg::eval::{
    cross_validate, CvOptions, EmptySegmentor, FixedFactory, ModelSegmentor, SegmentRequest, Segmentor,
    SegmentorFactory, TrainerFactory, TruthEcho,
};
use fewseg::io::write_atomic;
use fewseg::network::load_checkpoint;
use fewseg::oracle::suite;
use fewseg::types::{organ_name, ORGANS};
use fewseg::{Arm, BinaryMask, ClassId, ClassSets, Model, Network, RunConfig, Volume};
use image::{Rgb, RgbImage};
use ndarray::{Array2, Axis};

#[derive(Parser)]
#[command(name = "fewseg", version, about = "Few-shot organ segmentation experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// baseline, gcn or gcn-de.
    #[arg(long, global = true)]
    arm: Option<Arm>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Depth sections used for slice matching.
    #[arg(long, global = true, default_value_t = 3)]
    sections: usize,
    /// Run a single cross-validation fold.
    #[arg(long, global = true)]
    fold: Option<usize>,
    /// Dataset directory written by `generate`; defaults to an in-memory MR-like phantom.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a phantom dataset.
    Generate {
        /// Phantom spec file (key = value lines).
        #[arg(long)]
        spec: Option<PathBuf>,
        /// mr or ct, when no spec file is given.
        #[arg(long, default_value = "mr")]
        modality: String,
        #[arg(long, default_value_t = 20)]
        volumes: usize,
    },
    /// Train one network with one organ held out.
    Train {
        /// Held-out organ id (1-4).
        #[arg(long, default_value_t = 1)]
        holdout: ClassId,
        /// Stop early after this many steps.
        #[arg(long)]
        max_iterations: Option<usize>,
    },
    /// Leave-one-organ-out cross-validation.
    Eval {
        /// Replace the trained network by a stub: `truth` or `empty`.
        #[arg(long)]
        stub: Option<String>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Naive vs decomposed GC timing and multiply-add counts.
    Bench {
        #[arg(long, default_value_t = 16)]
        channels: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Square feature sizes to measure.
        #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 64, 128])]
        sizes: Vec<usize>,
    },
    /// Run every reference-implementation check.
    OracleCheck {
        /// Skip the wall-clock speed-up check.
        #[arg(long)]
        no_timing: bool,
    },
    /// PNG overlays of predicted (red) and true (green) contours.
    Overlay {
        /// Trained model; without it the ground truth is drawn as prediction.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        organ: ClassId,
        /// Support volume index.
        #[arg(long, default_value_t = 0)]
        support: usize,
        /// Query volume index.
        #[arg(long, default_value_t = 1)]
        query: usize,
        /// Pixel upscaling factor.
        #[arg(long, default_value_t = 4)]
        scale: u32,
    },
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(a) = self.arm {
            cfg = cfg.with_arm(a);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out.as_deref().context("--out is required for this command")
    }

    fn volumes(&self, seed: u64) -> Result<Vec<Volume>> {
        match &self.data {
            Some(d) => load_dataset(d).with_context(|| format!("loading dataset {}", d.display())),
            None => Ok(generate_phantoms(&PhantomSpec::mr_like(20, seed))?),
        }
    }
}

fn check_organ(c: ClassId) -> Result<()> {
    if !ORGANS.contains(&c) {
        bail!("organ id {c} is not one of {ORGANS:?}");
    }
    Ok(())
}

fn generate(common: &Common, spec: Option<&Path>, modality: &str, volumes: usize) -> Result<()> {
    let out = common.out_dir()?;
    let seed = common.seed.unwrap_or(0);
    let mut spec = match spec {
        Some(p) => PhantomSpec::load(p)?,
        None => match modality {
            "mr" => PhantomSpec::mr_like(volumes, seed),
            "ct" => PhantomSpec::ct_like(volumes, seed),
            other => bail!("unknown modality `{other}` (expected mr or ct)"),
        },
    };
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    let vols = generate_phantoms(&spec)?;
    save_dataset(out, &vols)?;
    spec.save(&out.join("phantom.spec"))?;
    println!("wrote {} volumes to {}", vols.len(), out.display());
    Ok(())
}

fn train_cmd(common: &Common, holdout: ClassId, max_iterations: Option<usize>) -> Result<()> {
    check_organ(holdout)?;
    let cfg = common.run_config()?;
    let out = common.out_dir()?;
    let vols = common.volumes(cfg.seed)?;
    let classes = ClassSets::leave_one_out(holdout);
    let guard = GuardedDataset::new(&vols, classes.train_classes.clone())?;
    cfg.save(&out.join("config.txt"))?;
    let opts = TrainOptions {
        out_dir: Some(out.to_path_buf()),
        max_iterations,
    };
    let state = train(&guard, &cfg, &classes, &opts)?;
    let last = state.history.last().context("no iterations were run")?;
    println!(
        "trained {} iterations with {} held out; final L_comb {:.4} L_de {:.4}",
        state.iteration,
        organ_name(holdout),
        last.comb,
        last.de
    );
    println!("held-out label reads: {}", guard.access_log().reads_of(holdout));
    Ok(())
}

fn eval_cmd(common: &Common, stub: Option<&str>, folds: usize) -> Result<()> {
    let cfg = common.run_config()?;
    let out = common.out_dir()?;
    let vols = common.volumes(cfg.seed)?;
    let arms: Vec<Arm> = match common.arm {
        Some(a) => vec![a],
        None => Arm::ALL.to_vec(),
    };
    let factory: Box<dyn SegmentorFactory> = match stub {
        None => Box::new(TrainerFactory::default()),
        Some("truth") => Box::new(FixedFactory(Arc::new(TruthEcho::new(&vols)))),
        Some("empty") => Box::new(FixedFactory(Arc::new(EmptySegmentor))),
        Some(other) => bail!("unknown stub `{other}` (expected truth or empty)"),
    };
    let opts = CvOptions {
        n_folds: folds,
        folds: common.fold.map(|f| vec![f]),
        n_sections: common.sections,
        ..CvOptions::default()
    };
    for arm in arms {
        let report = cross_validate(&vols, &cfg, arm, factory.as_ref(), &opts)?;
        write_atomic(&out.join(format!("metrics_{}.csv", arm.name())), report.to_csv().as_bytes())?;
        write_atomic(&out.join(format!("metrics_{}.txt", arm.name())), report.to_table().as_bytes())?;
        print!("{}", report.to_table());
    }
    Ok(())
}

fn bench_cmd(common: &Common, channels: usize, reps: usize, sizes: &[usize]) -> Result<()> {
    let seed = common.seed.unwrap_or(0);
    let mut csv = String::from("size,p,naive_macs,efficient_macs,naive_ms,efficient_ms\n");
    println!(
        "{:>8} {:>4} {:>16} {:>16} {:>12} {:>12} {:>8}",
        "size", "P", "naive MACs", "decomposed MACs", "naive ms", "decomp. ms", "speedup"
    );
    for &h in sizes {
        let p = balanced_factor(h);
        let naive = naive_gc_macs(h, h, channels, channels);
        let eff = efficient_gc_macs(h, h, channels, channels, p, p);
        let (tn, te) = suite::time_gc(h, channels, reps, seed);
        println!(
            "{:>8} {p:>4} {naive:>16} {eff:>16} {:>12.3} {:>12.3} {:>7.1}x",
            format!("{h}x{h}"),
            tn * 1e3,
            te * 1e3,
            tn / te
        );
        csv.push_str(&format!("{h},{p},{naive},{eff},{:.4},{:.4}\n", tn * 1e3, te * 1e3));
    }
    if let Some(out) = &common.out {
        write_atomic(&out.join("bench.csv"), csv.as_bytes())?;
    }
    Ok(())
}

fn oracle_cmd(common: &Common, timing: bool) -> Result<bool> {
    let results = suite::run_all(common.seed.unwrap_or(0), timing);
    let mut report = String::new();
    for r in &results {
        println!("{r}");
        report.push_str(&format!("{r}\n"));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    if let Some(out) = &common.out {
        write_atomic(&out.join("oracle_check.txt"), report.as_bytes())?;
    }
    Ok(failed == 0)
}

/// Foreground pixels with a 4-neighbour outside the mask.
fn contour(mask: &Array2<u8>) -> Array2<bool> {
    let (h, w) = mask.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        mask[[y, x]] == 1
            && (y == 0
                || x == 0
                || y + 1 == h
                || x + 1 == w
                || mask[[y - 1, x]] == 0
                || mask[[y + 1, x]] == 0
                || mask[[y, x - 1]] == 0
                || mask[[y, x + 1]] == 0)
    })
}

fn overlay_image(image: &Array2<f32>, pred: &BinaryMask, truth: &BinaryMask, scale: u32) -> RgbImage {
    let (h, w) = image.dim();
    let (pc, tc) = (contour(pred.mask()), contour(truth.mask()));
    RgbImage::from_fn(w as u32 * scale, h as u32 * scale, |x, y| {
        let (r, c) = ((y / scale) as usize, (x / scale) as usize);
        if pc[[r, c]] {
            Rgb([255, 0, 0])
        } else if tc[[r, c]] {
            Rgb([0, 255, 0])
        } else {
            let v = (image[[r, c]].clamp(0.0, 1.0) * 255.0).round() as u8;
            Rgb([v, v, v])
        }
    })
}

fn overlay_cmd(
    common: &Common,
    checkpoint: Option<&Path>,
    organ: ClassId,
    support: usize,
    query: usize,
    scale: u32,
) -> Result<()> {
    check_organ(organ)?;
    let out = common.out_dir()?;
    let ck = checkpoint.map(load_checkpoint).transpose()?;
    let cfg = match &ck {
        Some(ck) => ck.config.clone(),
        None => common.run_config()?,
    };
    let vols = common.volumes(common.seed.unwrap_or(cfg.seed))?;
    let segmentor: Box<dyn Segmentor> = match ck {
        Some(ck) => {
            let model = Model::new(Network::from_config(&ck.config)?, ck.params)?;
            Box::new(ModelSegmentor { model, threshold: cfg.threshold })
        }
        None => Box::new(TruthEcho::new(&vols)),
    };
    let (s, q) = match (vols.get(support), vols.get(query)) {
        (Some(s), Some(q)) => (s, q),
        _ => bail!("volume index out of range (dataset has {} volumes)", vols.len()),
    };
    let plan = build_slice_match(s, q, organ, common.sections)?;
    std::fs::create_dir_all(out)?;
    let mut written = 0;
    for (qz, sz) in plan.pairs() {
        let support_image = s.voxels.index_axis(Axis(0), sz).to_owned();
        let support_mask = BinaryMask::from_labels(s.labels.index_axis(Axis(0), sz), organ)?;
        let query_image = q.voxels.index_axis(Axis(0), qz).to_owned();
        let truth = BinaryMask::from_labels(q.labels.index_axis(Axis(0), qz), organ)?;
        let pred = segmentor.segment(&SegmentRequest {
            support_image: &support_image,
            support_mask: &support_mask,
            query_image: &query_image,
            query_volume: &q.id,
            query_slice: qz,
        })?;
        let img = overlay_image(&query_image, &pred, &truth, scale.max(1));
        let path = out.join(format!("overlay_{}_{}_z{qz:03}.png", q.id, organ_name(organ).replace(' ', "_")));
        let mut bytes = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
        write_atomic(&path, &bytes)?;
        written += 1;
    }
    println!("wrote {written} overlays to {}", out.display());
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("FEWSEG_THREADS") {
        let n: usize = v.parse().with_context(|| format!("FEWSEG_THREADS={v} is not a number"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    init_threads()?;
    let c = &cli.common;
    match cli.command {
        Command::Generate { spec, modality, volumes } => generate(c, spec.as_deref(), &modality, volumes)?,
        Command::Train { holdout, max_iterations } => train_cmd(c, holdout, max_iterations)?,
        Command::Eval { stub, folds } => eval_cmd(c, stub.as_deref(), folds)?,
        Command::Bench { channels, reps, sizes } => bench_cmd(c, channels, reps, &sizes)?,
        Command::OracleCheck { no_timing } => return oracle_cmd(c, !no_timing),
        Command::Overlay { checkpoint, organ, support, query, scale } => {
            overlay_cmd(c, checkpoint.as_deref(), organ, support, query, scale)?
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
