//! The dual-branch encoder–decoder.
//!
//! Both branches are small U-Nets with identical geometry but separate
//! weights. The support branch sees `[image; mask]`, the query branch the
//! image alone. After every encoder and decoder block the query feature is
//! modulated by the support feature of the same scale: an sSE gate by
//! default, or the efficient GC module at the scales listed in
//! `gc_scales`. The final query decoder feature feeds a 1×1 classifier.

use std::collections::BTreeSet;

use ndarray::{Array2, Array3, Axis};
use rand::Rng;

use super::params::{Gradients, Init, ModelParams, ParamId, ParamInfo};
use crate::config::RunConfig;
use crate::correlation::gc::{gc_backward, gc_forward, GcCache, GcGrads, GcParams, GcStages};
use crate::correlation::partition::PartitionSpec;
use crate::correlation::spatial::{SpatialCorrelationGrads, SpatialCorrelationParams};
use crate::correlation::sse::{sse_backward, sse_forward, SqueezeWeights};
use crate::error::{Error, Result};
use crate::layers::{
    concat_channels, conv3x3_backward, conv3x3_forward, maxpool2_backward, maxpool2_forward,
    pointwise_backward, pointwise_forward, relu_backward, relu_inplace, split_channels,
    upsample2_backward, upsample2_forward, ConvCache,
};
use crate::tensor::{sigmoid, FeatureMap, Real};
use crate::types::BinaryMask;

/// Geometry of one branch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchSpec {
    pub channel_widths: Vec<usize>,
    pub input_channels: usize,
}

impl BranchSpec {
    pub fn n_scales(&self) -> usize {
        self.channel_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_widths.is_empty() {
            return Err(Error::config("a branch needs at least one scale"));
        }
        if let Some(w) = self.channel_widths.iter().find(|&&w| w == 0 || w % 2 != 0) {
            return Err(Error::config(format!("channel width {w} must be positive and even")));
        }
        if self.channel_widths.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::config(
                "channel widths must increase strictly toward the bottleneck",
            ));
        }
        if self.input_channels == 0 {
            return Err(Error::config("input_channels must be positive"));
        }
        Ok(())
    }
}

/// Everything that determines the parameter layout and forward graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub channel_widths: Vec<usize>,
    pub gc_scales: BTreeSet<usize>,
    pub partition_factors: (usize, usize),
}

impl NetworkSpec {
    pub fn from_config(cfg: &RunConfig) -> Self {
        NetworkSpec {
            channel_widths: cfg.channel_widths.clone(),
            gc_scales: cfg.gc_scales.clone(),
            partition_factors: cfg.partition_factors,
        }
    }

    pub fn support_branch(&self) -> BranchSpec {
        BranchSpec {
            channel_widths: self.channel_widths.clone(),
            input_channels: 2,
        }
    }

    pub fn query_branch(&self) -> BranchSpec {
        BranchSpec {
            channel_widths: self.channel_widths.clone(),
            input_channels: 1,
        }
    }
}

#[derive(Debug, Clone)]
struct Conv {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Block {
    c1: Conv,
    c2: Conv,
}

#[derive(Debug, Clone)]
struct Branch {
    enc: Vec<Block>,
    /// `dec[s]` produces the decoder feature at scale `s` (`s < n_scales - 1`).
    dec: Vec<Block>,
}

#[derive(Debug, Clone)]
struct ScIds {
    theta: ParamId,
    phi: ParamId,
    g: ParamId,
    omega: ParamId,
}

#[derive(Debug, Clone)]
enum Interaction {
    Sse { weight: ParamId, bias: ParamId },
    Gc { long: ScIds, alpha: ParamId, short: ScIds },
}

/// Network architecture: parameter layout plus the ids each layer reads.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    layout: Vec<ParamInfo>,
    support: Branch,
    query: Branch,
    enc_inter: Vec<Interaction>,
    dec_inter: Vec<Interaction>,
    head: Conv,
}

struct LayoutBuilder {
    layout: Vec<ParamInfo>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> ParamId {
        self.layout.push(ParamInfo { name, shape, init });
        ParamId(self.layout.len() - 1)
    }

    fn conv3(&mut self, prefix: &str, cin: usize, cout: usize) -> Conv {
        let std = (2.0 / (9 * cin) as f64).sqrt();
        Conv {
            weight: self.push(format!("{prefix}.weight"), vec![3, 3, cin, cout], Init::Normal(std)),
            bias: self.push(format!("{prefix}.bias"), vec![cout], Init::Constant(0.0)),
        }
    }

    fn block(&mut self, prefix: &str, cin: usize, cout: usize) -> Block {
        Block {
            c1: self.conv3(&format!("{prefix}.conv1"), cin, cout),
            c2: self.conv3(&format!("{prefix}.conv2"), cout, cout),
        }
    }

    fn branch(&mut self, prefix: &str, spec: &BranchSpec) -> Branch {
        let w = &spec.channel_widths;
        let mut enc = Vec::new();
        for (s, &cout) in w.iter().enumerate() {
            let cin = if s == 0 { spec.input_channels } else { w[s - 1] };
            enc.push(self.block(&format!("{prefix}.enc{s}"), cin, cout));
        }
        let mut dec = Vec::new();
        for s in 0..w.len().saturating_sub(1) {
            dec.push(self.block(&format!("{prefix}.dec{s}"), w[s + 1] + w[s], w[s]));
        }
        Branch { enc, dec }
    }

    fn sc(&mut self, prefix: &str, c: usize) -> ScIds {
        let cp = c / 2;
        let proj = (1.0 / c as f64).sqrt();
        ScIds {
            theta: self.push(format!("{prefix}.theta"), vec![c, cp], Init::Normal(proj)),
            phi: self.push(format!("{prefix}.phi"), vec![c, cp], Init::Normal(proj)),
            g: self.push(format!("{prefix}.g"), vec![c, cp], Init::Normal(proj)),
            omega: self.push(
                format!("{prefix}.omega"),
                vec![cp, c],
                Init::Normal(0.1 * (1.0 / cp as f64).sqrt()),
            ),
        }
    }

    fn interaction(&mut self, prefix: &str, c: usize, gc: bool) -> Interaction {
        if gc {
            Interaction::Gc {
                long: self.sc(&format!("{prefix}.gc.long"), 2 * c),
                alpha: self.push(
                    format!("{prefix}.gc.alpha"),
                    vec![2 * c, c],
                    Init::Normal(0.1 * (1.0 / (2 * c) as f64).sqrt()),
                ),
                short: self.sc(&format!("{prefix}.gc.short"), c),
            }
        } else {
            Interaction::Sse {
                weight: self.push(
                    format!("{prefix}.sse.weight"),
                    vec![c],
                    Init::Normal((1.0 / c as f64).sqrt()),
                ),
                bias: self.push(format!("{prefix}.sse.bias"), vec![1], Init::Constant(0.0)),
            }
        }
    }
}

struct BlockTape<T> {
    c1: ConvCache<T>,
    a1: Array3<T>,
    c2: ConvCache<T>,
    out: Array3<T>,
}

enum InterTape<T> {
    Sse {
        f_q: Array3<T>,
        f_s: Array3<T>,
        score: Array2<T>,
        weights: SqueezeWeights<T>,
    },
    Gc {
        cache: GcCache<T>,
        params: GcParams<T>,
    },
}

struct BranchTape<T> {
    enc: Vec<BlockTape<T>>,
    /// Pool argmax for the input of encoder level `s + 1`.
    pools: Vec<(Array3<u8>, (usize, usize, usize))>,
    dec: Vec<Option<BlockTape<T>>>,
}

/// Intermediate values recorded by [`Network::forward`] for the backward pass.
pub struct Tape<T> {
    support: BranchTape<T>,
    query: BranchTape<T>,
    enc_inter: Vec<InterTape<T>>,
    dec_inter: Vec<Option<InterTape<T>>>,
    head_in: Array3<T>,
    widths: Vec<usize>,
}

/// Query prediction plus the backend features used by the embedding loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    /// `H×W` pre-sigmoid logits.
    pub logits: Array2<T>,
    pub backend_query: FeatureMap<T>,
    pub backend_support: FeatureMap<T>,
}

impl<T: Real> ForwardOutput<T> {
    pub fn probabilities(&self) -> Array2<T> {
        self.logits.mapv(sigmoid)
    }
}

fn block_forward<T: Real>(p: &ModelParams<T>, b: &Block, x: &Array3<T>) -> BlockTape<T> {
    let (mut a1, c1) = conv3x3_forward(x.view(), p.matrix(b.c1.weight), p.vector(b.c1.bias));
    relu_inplace(&mut a1);
    let (mut out, c2) = conv3x3_forward(a1.view(), p.matrix(b.c2.weight), p.vector(b.c2.bias));
    relu_inplace(&mut out);
    BlockTape { c1, a1, c2, out }
}

fn block_backward<T: Real>(
    p: &ModelParams<T>,
    b: &Block,
    t: &BlockTape<T>,
    dout: &Array3<T>,
    grads: &mut Gradients<T>,
) -> Array3<T> {
    let d2 = relu_backward(&t.out, dout);
    let (da1, g2) = conv3x3_backward(&t.c2, p.matrix(b.c2.weight), &d2);
    grads.add(b.c2.weight, g2.weight);
    grads.add(b.c2.bias, g2.bias);
    let d1 = relu_backward(&t.a1, &da1);
    let (dx, g1) = conv3x3_backward(&t.c1, p.matrix(b.c1.weight), &d1);
    grads.add(b.c1.weight, g1.weight);
    grads.add(b.c1.bias, g1.bias);
    dx
}

fn sc_params<T: Real>(p: &ModelParams<T>, ids: &ScIds) -> SpatialCorrelationParams<T> {
    SpatialCorrelationParams {
        theta: p.matrix(ids.theta).to_owned(),
        phi: p.matrix(ids.phi).to_owned(),
        g: p.matrix(ids.g).to_owned(),
        omega: p.matrix(ids.omega).to_owned(),
    }
}

fn add_sc_grads<T: Real>(grads: &mut Gradients<T>, ids: &ScIds, g: SpatialCorrelationGrads<T>) {
    grads.add(ids.theta, g.theta);
    grads.add(ids.phi, g.phi);
    grads.add(ids.g, g.g);
    grads.add(ids.omega, g.omega);
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.support_branch().validate()?;
        spec.query_branch().validate()?;
        let n = spec.channel_widths.len();
        if let Some(bad) = spec.gc_scales.iter().find(|&&s| s >= n) {
            return Err(Error::config(format!("gc scale {bad} out of range for {n} scales")));
        }
        if spec.partition_factors.0 == 0 || spec.partition_factors.1 == 0 {
            return Err(Error::config("partition factors must be positive"));
        }
        let mut b = LayoutBuilder { layout: Vec::new() };
        let support = b.branch("support", &spec.support_branch());
        let query = b.branch("query", &spec.query_branch());
        let w = &spec.channel_widths;
        let enc_inter = (0..n)
            .map(|s| b.interaction(&format!("inter.enc{s}"), w[s], spec.gc_scales.contains(&s)))
            .collect();
        let dec_inter = (0..n - 1)
            .map(|s| b.interaction(&format!("inter.dec{s}"), w[s], spec.gc_scales.contains(&s)))
            .collect();
        let head = Conv {
            weight: b.push(
                "head.weight".into(),
                vec![w[0], 1],
                Init::Normal((1.0 / w[0] as f64).sqrt()),
            ),
            bias: b.push("head.bias".into(), vec![1], Init::Constant(0.0)),
        };
        Ok(Network {
            spec,
            layout: b.layout,
            support,
            query,
            enc_inter,
            dec_inter,
            head,
        })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Network::new(NetworkSpec::from_config(cfg))
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &[ParamInfo] {
        &self.layout
    }

    pub fn n_scales(&self) -> usize {
        self.spec.channel_widths.len()
    }

    /// Variance-scaled random initialization.
    pub fn init_params<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> ModelParams<T> {
        ModelParams::from_layout(&self.layout, rng)
    }

    /// Checks that `params` carries exactly this network's layout.
    pub fn check_params<T: Real>(&self, params: &ModelParams<T>) -> Result<()> {
        if params.len() != self.layout.len() {
            return Err(Error::shape(format!(
                "network expects {} parameter tensors, got {}",
                self.layout.len(),
                params.len()
            )));
        }
        for (id, info) in params.ids().zip(&self.layout) {
            if params.name(id) != info.name || params.shape(id) != info.shape.as_slice() {
                return Err(Error::shape(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    params.name(id),
                    params.shape(id),
                    info.name,
                    info.shape
                )));
            }
        }
        Ok(())
    }

    /// Names of every parameter that belongs to the support or query branch.
    pub fn branch_parameter_names(&self) -> (Vec<String>, Vec<String>) {
        let by_prefix = |p: &str| {
            self.layout
                .iter()
                .filter(|i| i.name.starts_with(p))
                .map(|i| i.name.clone())
                .collect()
        };
        (by_prefix("support."), by_prefix("query."))
    }

    /// Names of every sSE / GC interaction parameter.
    pub fn interaction_parameter_names(&self) -> Vec<String> {
        self.layout
            .iter()
            .filter(|i| i.name.starts_with("inter."))
            .map(|i| i.name.clone())
            .collect()
    }

    fn check_inputs<T: Real>(
        &self,
        support_image: &Array2<T>,
        support_mask: &BinaryMask,
        query_image: &Array2<T>,
    ) -> Result<(usize, usize)> {
        let (h, w) = query_image.dim();
        if support_image.dim() != (h, w) || support_mask.dim() != (h, w) {
            return Err(Error::shape(format!(
                "support image {:?}, support mask {:?} and query image {:?} must match",
                support_image.dim(),
                support_mask.dim(),
                (h, w)
            )));
        }
        let div = 1usize << (self.n_scales() - 1);
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::shape(format!(
                "input {h}x{w} must be a positive multiple of {div} for {} scales",
                self.n_scales()
            )));
        }
        Ok((h, w))
    }

    fn interact_forward<T: Real>(
        &self,
        p: &ModelParams<T>,
        inter: &Interaction,
        f_q: Array3<T>,
        f_s: &Array3<T>,
    ) -> Result<(Array3<T>, InterTape<T>)> {
        match inter {
            Interaction::Sse { weight, bias } => {
                let weights = SqueezeWeights {
                    weight: p.vector(*weight).to_owned(),
                    bias: p.scalar(*bias),
                };
                let (out, score) = sse_forward(&f_q, f_s, &weights)?;
                Ok((
                    out,
                    InterTape::Sse {
                        f_q,
                        f_s: f_s.clone(),
                        score,
                        weights,
                    },
                ))
            }
            Interaction::Gc { long, alpha, short } => {
                let params = GcParams {
                    long: sc_params(p, long),
                    alpha: p.matrix(*alpha).to_owned(),
                    short: sc_params(p, short),
                };
                let (h, w, _) = f_q.dim();
                let (ph, pw) = self.spec.partition_factors;
                let spec = PartitionSpec::new(h, w, ph, pw)?;
                let (out, cache) = gc_forward(&f_q, f_s, &spec, &params, GcStages::Full)?;
                Ok((out, InterTape::Gc { cache, params }))
            }
        }
    }

    /// Returns `(df_q, df_s)`.
    fn interact_backward<T: Real>(
        &self,
        inter: &Interaction,
        tape: &InterTape<T>,
        dout: &Array3<T>,
        grads: &mut Gradients<T>,
    ) -> (Array3<T>, Array3<T>) {
        match (inter, tape) {
            (
                Interaction::Sse { weight, bias },
                InterTape::Sse {
                    f_q,
                    f_s,
                    score,
                    weights,
                },
            ) => {
                let (dq, ds, g) = sse_backward(f_q, f_s, score, weights, dout);
                grads.add(*weight, g.weight);
                grads.add_scalar(*bias, g.bias);
                (dq, ds)
            }
            (Interaction::Gc { long, alpha, short }, InterTape::Gc { cache, params }) => {
                let (dq, ds, g): (_, _, GcGrads<T>) = gc_backward(cache, params, dout);
                add_sc_grads(grads, long, g.long);
                grads.add(*alpha, g.alpha);
                add_sc_grads(grads, short, g.short);
                (dq, ds)
            }
            _ => unreachable!("tape recorded by the same interaction"),
        }
    }

    /// Inference-only forward.
    pub fn forward<T: Real>(
        &self,
        params: &ModelParams<T>,
        support_image: &Array2<T>,
        support_mask: &BinaryMask,
        query_image: &Array2<T>,
    ) -> Result<ForwardOutput<T>> {
        self.forward_with_tape(params, support_image, support_mask, query_image)
            .map(|(o, _)| o)
    }

    pub fn forward_with_tape<T: Real>(
        &self,
        p: &ModelParams<T>,
        support_image: &Array2<T>,
        support_mask: &BinaryMask,
        query_image: &Array2<T>,
    ) -> Result<(ForwardOutput<T>, Tape<T>)> {
        let (h, w) = self.check_inputs(support_image, support_mask, query_image)?;
        let n = self.n_scales();

        let mut s_x = Array3::zeros((h, w, 2));
        s_x.index_axis_mut(Axis(2), 0).assign(support_image);
        s_x.index_axis_mut(Axis(2), 1).assign(&support_mask.to_real::<T>());
        let mut q_x = query_image
            .clone()
            .insert_axis(Axis(2))
            .as_standard_layout()
            .into_owned();

        let mut s_tape = BranchTape {
            enc: Vec::with_capacity(n),
            pools: Vec::new(),
            dec: Vec::new(),
        };
        let mut q_tape = BranchTape {
            enc: Vec::with_capacity(n),
            pools: Vec::new(),
            dec: Vec::new(),
        };
        let mut enc_inter = Vec::with_capacity(n);
        let mut q_skips: Vec<Array3<T>> = Vec::with_capacity(n);

        for s in 0..n {
            if s > 0 {
                let prev_s = &s_tape.enc[s - 1].out;
                let (px, arg) = maxpool2_forward(prev_s);
                s_tape.pools.push((arg, prev_s.dim()));
                s_x = px;
                let prev_q = &q_skips[s - 1];
                let (px, arg) = maxpool2_forward(prev_q);
                q_tape.pools.push((arg, prev_q.dim()));
                q_x = px;
            }
            let st = block_forward(p, &self.support.enc[s], &s_x);
            let qt = block_forward(p, &self.query.enc[s], &q_x);
            let (q_feat, it) = self.interact_forward(p, &self.enc_inter[s], qt.out.clone(), &st.out)?;
            s_tape.enc.push(st);
            q_tape.enc.push(qt);
            enc_inter.push(it);
            q_skips.push(q_feat);
        }

        let mut s_dec: Vec<Option<BlockTape<T>>> = (0..n.saturating_sub(1)).map(|_| None).collect();
        let mut q_dec: Vec<Option<BlockTape<T>>> = (0..n.saturating_sub(1)).map(|_| None).collect();
        let mut dec_inter: Vec<Option<InterTape<T>>> =
            (0..n.saturating_sub(1)).map(|_| None).collect();
        let mut s_cur = s_tape.enc[n - 1].out.clone();
        let mut q_cur = q_skips[n - 1].clone();
        for s in (0..n - 1).rev() {
            let s_in = concat_channels(&upsample2_forward(&s_cur), &s_tape.enc[s].out);
            let st = block_forward(p, &self.support.dec[s], &s_in);
            let q_in = concat_channels(&upsample2_forward(&q_cur), &q_skips[s]);
            let qt = block_forward(p, &self.query.dec[s], &q_in);
            let (q_feat, it) = self.interact_forward(p, &self.dec_inter[s], qt.out.clone(), &st.out)?;
            s_cur = st.out.clone();
            q_cur = q_feat;
            s_dec[s] = Some(st);
            q_dec[s] = Some(qt);
            dec_inter[s] = Some(it);
        }
        s_tape.dec = s_dec;
        q_tape.dec = q_dec;

        let logits = pointwise_forward(
            &q_cur,
            p.matrix(self.head.weight),
            Some(p.vector(self.head.bias)),
        )
        .index_axis_move(Axis(2), 0);

        let out = ForwardOutput {
            logits,
            backend_query: FeatureMap::new(q_cur.clone(), 0)?,
            backend_support: FeatureMap::new(s_cur, 0)?,
        };
        let tape = Tape {
            support: s_tape,
            query: q_tape,
            enc_inter,
            dec_inter,
            head_in: q_cur,
            widths: self.spec.channel_widths.clone(),
        };
        Ok((out, tape))
    }

    /// Backpropagates gradients w.r.t. the logits and, optionally, the two
    /// backend features, accumulating into `grads`.
    pub fn backward<T: Real>(
        &self,
        p: &ModelParams<T>,
        tape: &Tape<T>,
        d_logits: &Array2<T>,
        d_backend_query: Option<&Array3<T>>,
        d_backend_support: Option<&Array3<T>>,
        grads: &mut Gradients<T>,
    ) {
        let n = self.n_scales();
        let widths = &tape.widths;

        let dl = d_logits.clone().insert_axis(Axis(2)).as_standard_layout().into_owned();
        let (mut dq_cur, hg) = pointwise_backward(&tape.head_in, p.matrix(self.head.weight), &dl);
        grads.add(self.head.weight, hg.weight);
        grads.add(self.head.bias, hg.bias);
        if let Some(d) = d_backend_query {
            dq_cur += d;
        }
        let mut ds_cur = match d_backend_support {
            Some(d) => d.clone(),
            None => Array3::zeros(tape.support.enc[0].out.dim()),
        };

        let mut dq_skip: Vec<Option<Array3<T>>> = (0..n).map(|_| None).collect();
        let mut ds_skip: Vec<Option<Array3<T>>> = (0..n).map(|_| None).collect();
        let add_to = |slot: &mut Option<Array3<T>>, d: Array3<T>| match slot {
            Some(acc) => *acc += &d,
            None => *slot = Some(d),
        };

        for s in 0..n - 1 {
            let it = tape.dec_inter[s].as_ref().expect("decoder tape");
            let (dq_raw, ds_inter) = self.interact_backward(&self.dec_inter[s], it, &dq_cur, grads);
            ds_cur += &ds_inter;

            let qt = tape.query.dec[s].as_ref().expect("decoder tape");
            let dq_in = block_backward(p, &self.query.dec[s], qt, &dq_raw, grads);
            let (dq_up, dq_sk) = split_channels(&dq_in, widths[s + 1]);
            add_to(&mut dq_skip[s], dq_sk);
            dq_cur = upsample2_backward(&dq_up);

            let st = tape.support.dec[s].as_ref().expect("decoder tape");
            let ds_in = block_backward(p, &self.support.dec[s], st, &ds_cur, grads);
            let (ds_up, ds_sk) = split_channels(&ds_in, widths[s + 1]);
            add_to(&mut ds_skip[s], ds_sk);
            ds_cur = upsample2_backward(&ds_up);
        }
        add_to(&mut dq_skip[n - 1], dq_cur);
        add_to(&mut ds_skip[n - 1], ds_cur);

        let mut dq_from_above: Option<Array3<T>> = None;
        let mut ds_from_above: Option<Array3<T>> = None;
        for s in (0..n).rev() {
            let mut dq_feat = dq_skip[s].take().expect("every scale receives a gradient");
            if let Some(d) = dq_from_above.take() {
                dq_feat += &d;
            }
            let mut ds_feat = ds_skip[s].take().expect("every scale receives a gradient");
            if let Some(d) = ds_from_above.take() {
                ds_feat += &d;
            }
            let (dq_raw, ds_inter) =
                self.interact_backward(&self.enc_inter[s], &tape.enc_inter[s], &dq_feat, grads);
            ds_feat += &ds_inter;

            let dq_x = block_backward(p, &self.query.enc[s], &tape.query.enc[s], &dq_raw, grads);
            let ds_x = block_backward(p, &self.support.enc[s], &tape.support.enc[s], &ds_feat, grads);
            if s > 0 {
                let (arg, dim) = &tape.query.pools[s - 1];
                dq_from_above = Some(maxpool2_backward(arg, &dq_x, *dim));
                let (arg, dim) = &tape.support.pools[s - 1];
                ds_from_above = Some(maxpool2_backward(arg, &ds_x, *dim));
            }
        }
    }
}

/// A network together with its parameters.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub network: Network,
    pub params: ModelParams<T>,
}

impl<T: Real> Model<T> {
    pub fn new(network: Network, params: ModelParams<T>) -> Result<Self> {
        network.check_params(&params)?;
        Ok(Model { network, params })
    }

    pub fn random<R: Rng + ?Sized>(network: Network, rng: &mut R) -> Self {
        let params = network.init_params(rng);
        Model { network, params }
    }

    pub fn forward(
        &self,
        support_image: &Array2<T>,
        support_mask: &BinaryMask,
        query_image: &Array2<T>,
    ) -> Result<ForwardOutput<T>> {
        self.network
            .forward(&self.params, support_image, support_mask, query_image)
    }
}

/// Sigmoid then strict `> threshold`.
pub fn predict_mask<T: Real>(logits: &Array2<T>, threshold: f64, class_id: u8) -> Result<BinaryMask> {
    let thr = T::of(threshold);
    BinaryMask::new(logits.mapv(|l| u8::from(sigmoid(l) > thr)), class_id)
}
