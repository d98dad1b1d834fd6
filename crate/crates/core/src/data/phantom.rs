//! Abdominal phantom generator.
//!
//! Each volume is a body cross-section holding four ellipsoidal organs at
//! jittered canonical positions (liver on the image left, spleen on the
//! image right, both kidneys posterior and lateral) plus a spine
//! that is left unlabeled. A smooth sinusoidal warp is applied to the
//! sampling grid, so image and labels deform together.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::config::{parse_kv, parse_num, parse_pair};
use crate::error::{Error, Result};
use crate::io::{read_text, write_atomic};
use crate::types::{ClassId, Modality, Volume, LEFT_KIDNEY, LIVER, RIGHT_KIDNEY, SPLEEN};

/// Canonical ellipsoid of one organ in normalized coordinates: `x, y` in
/// `[-1, 1]` (image left/top is −1), `z` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrganShape {
    pub class: ClassId,
    pub centre: [f64; 3],
    pub radii: [f64; 3],
}

/// Mean intensities of the tissue types for one pseudo-modality.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityProfile {
    pub name: String,
    pub body: f64,
    pub spine: f64,
    /// Indexed by class id − 1.
    pub organs: [f64; 4],
    /// Per-volume jitter of each organ mean.
    pub mean_jitter: f64,
}

impl IntensityProfile {
    pub fn mr_like() -> Self {
        IntensityProfile {
            name: "mr".into(),
            body: 0.2,
            spine: 0.08,
            organs: [0.35, 0.75, 0.55, 0.63],
            mean_jitter: 0.01,
        }
    }

    pub fn ct_like() -> Self {
        IntensityProfile {
            name: "ct".into(),
            body: 0.45,
            spine: 0.95,
            organs: [0.62, 0.54, 0.78, 0.72],
            mean_jitter: 0.01,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "mr" => Ok(Self::mr_like()),
            "ct" => Ok(Self::ct_like()),
            other => Err(Error::config(format!("unknown intensity profile `{other}` (mr|ct)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub n_volumes: usize,
    pub depth: usize,
    pub image_size: (usize, usize),
    pub organs: Vec<OrganShape>,
    pub profile: IntensityProfile,
    /// Amplitude of the sinusoidal warp, in normalized units.
    pub deformation: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    /// Uniform jitter of organ centres and of the global shift.
    pub position_jitter: f64,
    /// Organ radii are scaled by a factor in `[1 − s, 1 + s]`.
    pub size_jitter: f64,
    /// Maximum fraction of the smaller organ that may overlap another organ.
    pub max_overlap: f64,
    pub min_voxels: usize,
    pub seed: u64,
}

const KEYS: &[&str] = &[
    "n_volumes",
    "depth",
    "image_size",
    "profile",
    "deformation",
    "noise",
    "position_jitter",
    "size_jitter",
    "max_overlap",
    "min_voxels",
    "seed",
];

const MAX_ATTEMPTS: usize = 50;

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec::mr_like(20, 0)
    }
}

impl PhantomSpec {
    pub fn canonical_organs() -> Vec<OrganShape> {
        vec![
            OrganShape { class: LIVER, centre: [-0.38, -0.1, 0.58], radii: [0.38, 0.35, 0.3] },
            OrganShape { class: SPLEEN, centre: [0.52, 0.1, 0.62], radii: [0.16, 0.2, 0.2] },
            OrganShape { class: LEFT_KIDNEY, centre: [0.33, 0.42, 0.4], radii: [0.13, 0.15, 0.22] },
            OrganShape { class: RIGHT_KIDNEY, centre: [-0.33, 0.42, 0.36], radii: [0.13, 0.15, 0.22] },
        ]
    }

    pub fn mr_like(n_volumes: usize, seed: u64) -> Self {
        PhantomSpec {
            n_volumes,
            depth: 24,
            image_size: (64, 64),
            organs: Self::canonical_organs(),
            profile: IntensityProfile::mr_like(),
            deformation: 0.04,
            noise: 0.03,
            position_jitter: 0.05,
            size_jitter: 0.15,
            max_overlap: 0.1,
            min_voxels: 50,
            seed,
        }
    }

    pub fn ct_like(n_volumes: usize, seed: u64) -> Self {
        PhantomSpec {
            profile: IntensityProfile::ct_like(),
            ..Self::mr_like(n_volumes, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_volumes == 0 || self.depth == 0 {
            return Err(Error::config("n_volumes and depth must be positive"));
        }
        if self.image_size.0 < 8 || self.image_size.1 < 8 {
            return Err(Error::config("image_size must be at least 8x8"));
        }
        for (name, v) in [
            ("deformation", self.deformation),
            ("noise", self.noise),
            ("position_jitter", self.position_jitter),
            ("max_overlap", self.max_overlap),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and non-negative")));
            }
        }
        if !(0.0..1.0).contains(&self.size_jitter) {
            return Err(Error::config("size_jitter must lie in [0,1)"));
        }
        let p = &self.profile;
        if p.organs.iter().chain([&p.body, &p.spine]).any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::config("profile means must lie in [0,1]"));
        }
        Ok(())
    }

    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_volumes = {}", self.n_volumes);
        let _ = writeln!(s, "depth = {}", self.depth);
        let _ = writeln!(s, "image_size = {},{}", self.image_size.0, self.image_size.1);
        let _ = writeln!(s, "profile = {}", self.profile.name);
        let _ = writeln!(s, "deformation = {:?}", self.deformation);
        let _ = writeln!(s, "noise = {:?}", self.noise);
        let _ = writeln!(s, "position_jitter = {:?}", self.position_jitter);
        let _ = writeln!(s, "size_jitter = {:?}", self.size_jitter);
        let _ = writeln!(s, "max_overlap = {:?}", self.max_overlap);
        let _ = writeln!(s, "min_voxels = {}", self.min_voxels);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    /// Parses `key = value` lines over the MR-like defaults.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let map = parse_kv(text, KEYS)?;
        let mut spec = PhantomSpec::default();
        if let Some(p) = map.get("profile") {
            spec.profile = IntensityProfile::by_name(p)?;
        }
        for (key, value) in &map {
            let v = value.as_str();
            match key.as_str() {
                "n_volumes" => spec.n_volumes = parse_num(key, v)?,
                "depth" => spec.depth = parse_num(key, v)?,
                "image_size" => spec.image_size = parse_pair(key, v)?,
                "profile" => {}
                "deformation" => spec.deformation = parse_num(key, v)?,
                "noise" => spec.noise = parse_num(key, v)?,
                "position_jitter" => spec.position_jitter = parse_num(key, v)?,
                "size_jitter" => spec.size_jitter = parse_num(key, v)?,
                "max_overlap" => spec.max_overlap = parse_num(key, v)?,
                "min_voxels" => spec.min_voxels = parse_num(key, v)?,
                "seed" => spec.seed = parse_num(key, v)?,
                _ => unreachable!("parse_kv filters unknown keys"),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        PhantomSpec::from_kv_str(&read_text(path)?).map_err(|e| match e {
            Error::Config(msg) => Error::format(path, msg),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_kv_string().as_bytes())
    }
}

struct Warp {
    amp: f64,
    freq: [f64; 4],
    phase: [f64; 2],
    shift: [f64; 2],
}

impl Warp {
    fn apply(&self, x: f64, y: f64, z: f64) -> (f64, f64) {
        use std::f64::consts::TAU;
        let f = &self.freq;
        let xw = x + self.amp * (TAU * (f[0] * y + f[1] * z) + self.phase[0]).sin() - self.shift[0];
        let yw = y + self.amp * (TAU * (f[2] * x + f[3] * z) + self.phase[1]).sin() - self.shift[1];
        (xw, yw)
    }
}

fn inside(e: &OrganShape, x: f64, y: f64, z: f64) -> bool {
    let d = [(x - e.centre[0]) / e.radii[0], (y - e.centre[1]) / e.radii[1], (z - e.centre[2]) / e.radii[2]];
    d.iter().map(|v| v * v).sum::<f64>() <= 1.0
}

/// One attempt at the label volume; `None` if the layout is degenerate.
fn rasterize(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Option<(Array3<ClassId>, Array3<u8>)> {
    let j = spec.position_jitter;
    let s = spec.size_jitter;
    let organs: Vec<OrganShape> = spec
        .organs
        .iter()
        .map(|o| OrganShape {
            class: o.class,
            centre: o.centre.map(|c| c + rng.random_range(-j..=j)),
            radii: o.radii.map(|r| r * rng.random_range(1.0 - s..=1.0 + s)),
        })
        .collect();
    let warp = Warp {
        amp: spec.deformation,
        freq: std::array::from_fn(|_| rng.random_range(0.5..1.5)),
        phase: std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU)),
        shift: std::array::from_fn(|_| rng.random_range(-j..=j)),
    };
    let (d, (h, w)) = (spec.depth, spec.image_size);
    let mut labels = Array3::<ClassId>::zeros((d, h, w));
    // 0 outside the body, 1 body, 2 spine.
    let mut tissue = Array3::<u8>::zeros((d, h, w));
    let mut sizes = vec![0usize; organs.len()];
    let mut overlap = vec![vec![0usize; organs.len()]; organs.len()];
    let spine = OrganShape { class: 0, centre: [0.0, 0.58, 0.5], radii: [0.1, 0.1, 10.0] };
    let mut hits = Vec::with_capacity(organs.len());
    for z in 0..d {
        let nz = (z as f64 + 0.5) / d as f64;
        for y in 0..h {
            let ny = 2.0 * (y as f64 + 0.5) / h as f64 - 1.0;
            for x in 0..w {
                let nx = 2.0 * (x as f64 + 0.5) / w as f64 - 1.0;
                let (xw, yw) = warp.apply(nx, ny, nz);
                if (xw / 0.9).powi(2) + (yw / 0.72).powi(2) > 1.0 {
                    continue;
                }
                tissue[[z, y, x]] = if inside(&spine, xw, yw, nz) { 2 } else { 1 };
                hits.clear();
                hits.extend((0..organs.len()).filter(|&k| inside(&organs[k], xw, yw, nz)));
                for (a, &ka) in hits.iter().enumerate() {
                    sizes[ka] += 1;
                    for &kb in &hits[a + 1..] {
                        overlap[ka][kb] += 1;
                        overlap[kb][ka] += 1;
                    }
                }
                if let Some(&k) = hits.last() {
                    labels[[z, y, x]] = organs[k].class;
                }
            }
        }
    }
    for a in 0..organs.len() {
        for b in a + 1..organs.len() {
            let smaller = sizes[a].min(sizes[b]).max(1) as f64;
            if overlap[a][b] as f64 / smaller > spec.max_overlap {
                return None;
            }
        }
    }
    for o in &organs {
        if labels.iter().filter(|&&l| l == o.class).count() < spec.min_voxels {
            return None;
        }
    }
    Some((labels, tissue))
}

fn generate_one(spec: &PhantomSpec, index: usize) -> Result<Volume> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let (labels, tissue) = (0..MAX_ATTEMPTS)
        .find_map(|_| rasterize(spec, &mut rng))
        .ok_or_else(|| {
            Error::config(format!(
                "phantom {index}: no valid organ layout after {MAX_ATTEMPTS} attempts"
            ))
        })?;
    let p = &spec.profile;
    let jitter = Normal::new(0.0, p.mean_jitter.max(f64::MIN_POSITIVE)).expect("finite std");
    let organ_means: Vec<f64> = p.organs.iter().map(|m| m + jitter.sample(&mut rng)).collect();
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut voxels = Array3::<f32>::zeros(labels.dim());
    for ((v, &l), &t) in voxels.iter_mut().zip(labels.iter()).zip(tissue.iter()) {
        let mean = match (l, t) {
            (0, 0) => 0.0,
            (0, 1) => p.body,
            (0, _) => p.spine,
            (c, _) => organ_means[(c - 1) as usize],
        };
        *v = (mean + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32;
    }
    Volume::new(
        format!("{}_{index:03}", p.name),
        voxels,
        labels,
        Modality::Synthetic,
        [2.5, 1.0, 1.0],
    )
}

/// Generates `spec.n_volumes` volumes in parallel; volume `i` depends only
/// on `(spec, i)`.
pub fn generate_phantoms(spec: &PhantomSpec) -> Result<Vec<Volume>> {
    spec.validate()?;
    (0..spec.n_volumes)
        .into_par_iter()
        .map(|i| generate_one(spec, i))
        .collect()
}
