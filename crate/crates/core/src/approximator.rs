//! Size-invariant policy/value network over upper-triangle lattice graphs.
//!
//! A matrix becomes a graph whose nodes are its upper-triangle cells (diagonal included)
//! and whose edges join horizontally or vertically adjacent cells. Each message-passing
//! layer computes
//!
//! ```text
//! h_v' = W2 · relu(W1 · ((1 + ε) h_v + Σ_{u ∈ N(v)} h_u) + b1) + b2
//! ```
//!
//! Every layer's node states are sum-pooled; the pooled vectors (plus optional extra
//! inputs) are concatenated and passed through a fully connected layer to a final hidden
//! state, which feeds a `tanh` value head and a policy head. Gradients are written out
//! by hand.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{num_pivots, num_upper, upper_index, SymmetricMatrix};
use crate::mcts::{Evaluator, MdpGame, SearchProblem, SmdpGame};
use crate::orderings::NUM_OPTIONS;
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;
/// Per-node input features: value, |value|, diagonal flag, band `(q - p) / n`.
pub const NODE_FEATURES: usize = 4;
/// Largest magnitude the value head may emit.
const VALUE_LIMIT: f64 = 1.0 - f64::EPSILON;

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeGraph {
    pub n: usize,
    /// Upper-triangle entries in `upper_index` order.
    pub node_values: Vec<f64>,
    pub features: Vec<[f64; NODE_FEATURES]>,
    /// Undirected edges, each listed once with `a < b`.
    pub edges: Vec<(usize, usize)>,
    pub neighbors: Vec<Vec<usize>>,
}

impl LatticeGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_values.len()
    }

    /// Graph over `n(n+1)/2` nodes with explicit features and edges.
    pub fn from_parts(
        n: usize,
        node_values: Vec<f64>,
        features: Vec<[f64; NODE_FEATURES]>,
        edges: Vec<(usize, usize)>,
    ) -> Self {
        let mut neighbors = vec![Vec::new(); node_values.len()];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        Self {
            n,
            node_values,
            features,
            edges,
            neighbors,
        }
    }
}

/// Lattice graph of the upper triangle of `m`. Feature values are divided by `‖M‖_F`,
/// which rotations leave unchanged.
pub fn build_graph<T: Scalar>(m: &SymmetricMatrix<T>) -> LatticeGraph {
    let n = m.n();
    let norm = m.frobenius_norm().as_f64();
    let scale = if norm > 0.0 { norm.recip() } else { 1.0 };
    let mut values = Vec::with_capacity(num_upper(n));
    let mut features = Vec::with_capacity(num_upper(n));
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i..n {
            let v = m.get(i, j).as_f64();
            values.push(v);
            let x = v * scale;
            features.push([
                x,
                x.abs(),
                if i == j { 1.0 } else { 0.0 },
                (j - i) as f64 / n as f64,
            ]);
            let here = upper_index(i, j, n).expect("in range");
            if j + 1 < n {
                edges.push((here, upper_index(i, j + 1, n).expect("in range")));
            }
            if i < j {
                edges.push((here, upper_index(i + 1, j, n).expect("in range")));
            }
        }
    }
    for e in &mut edges {
        if e.0 > e.1 {
            *e = (e.1, e.0);
        }
    }
    edges.sort_unstable();
    LatticeGraph::from_parts(n, values, features, edges)
}

/// Probability vector over the policy slots of the largest supported size.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyVector {
    pub values: Vec<f64>,
    pub n_max: usize,
}

/// Softmax over the `n(n-1)/2` slots owned by an `n × n` matrix (slots `0..n(n-1)/2`);
/// every other slot is exactly zero.
pub fn map_policy(logits: &[f64], n: usize, n_max: usize) -> Result<PolicyVector> {
    if n > n_max {
        return Err(Error::SizeExceedsMax { n, n_max });
    }
    let total = num_pivots(n_max);
    if logits.len() != total {
        return Err(Error::DimensionMismatch {
            expected: total,
            got: logits.len(),
        });
    }
    let mut values = vec![0.0; total];
    softmax_into(&logits[..num_pivots(n)], &mut values[..num_pivots(n)]);
    Ok(PolicyVector { values, n_max })
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyHead {
    /// One slot per pivot of the largest supported matrix.
    Pivot,
    /// One slot per sweep option; the previous option is fed as a one-hot extra input.
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_max: usize,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    pub learn_eps: bool,
    pub l2: f64,
    pub head: PolicyHead,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_max: 5,
            num_layers: 5,
            hidden_dim: 128,
            dropout_rate: 0.3,
            learn_eps: false,
            l2: 1e-4,
            head: PolicyHead::Pivot,
        }
    }
}

impl ModelConfig {
    pub fn policy_slots(&self) -> usize {
        match self.head {
            PolicyHead::Pivot => num_pivots(self.n_max),
            PolicyHead::Sweep => NUM_OPTIONS,
        }
    }

    pub fn extra_inputs(&self) -> usize {
        match self.head {
            PolicyHead::Pivot => 0,
            PolicyHead::Sweep => NUM_OPTIONS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 || self.n_max < 2 {
            return Err(Error::Config(
                "num_layers, hidden_dim must be >= 1 and n_max >= 2".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSlots {
    d_in: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    eps: usize,
}

/// Offsets of every parameter block inside the flat weight vector.
#[derive(Debug, Clone)]
struct Layout {
    hidden: usize,
    concat: usize,
    slots: usize,
    layers: Vec<LayerSlots>,
    fc_w: usize,
    fc_b: usize,
    v_w: usize,
    v_b: usize,
    p_w: usize,
    p_b: usize,
    total: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden_dim;
        let mut off = 0;
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for k in 0..cfg.num_layers {
            let d_in = if k == 0 { NODE_FEATURES } else { h };
            let w1 = off;
            let b1 = w1 + h * d_in;
            let w2 = b1 + h;
            let b2 = w2 + h * h;
            let eps = b2 + h;
            off = eps + 1;
            layers.push(LayerSlots {
                d_in,
                w1,
                b1,
                w2,
                b2,
                eps,
            });
        }
        let concat = cfg.num_layers * h + cfg.extra_inputs();
        let slots = cfg.policy_slots();
        let fc_w = off;
        let fc_b = fc_w + h * concat;
        let v_w = fc_b + h;
        let v_b = v_w + h;
        let p_w = v_b + 1;
        let p_b = p_w + slots * h;
        let total = p_b + slots;
        Self {
            hidden: h,
            concat,
            slots,
            layers,
            fc_w,
            fc_b,
            v_w,
            v_b,
            p_w,
            p_b,
            total,
        }
    }
}

/// Network weights: a configuration plus one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: Vec<f64>,
    pub metadata: TrainingMetadata,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub iteration: u64,
    pub seed: u64,
}

impl ModelParams {
    /// Xavier-uniform weights (damped on aggregating layers, near zero on the heads),
    /// zero biases, `ε = 0`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = vec![0.0; layout.total];
        let h = layout.hidden;
        let mut fill = |w: &mut [f64], start: usize, rows: usize, cols: usize, gain: f64| {
            let bound = gain * (6.0 / (rows + cols) as f64).sqrt();
            for x in &mut w[start..start + rows * cols] {
                *x = rng.random_range(-bound..=bound);
            }
        };
        // a lattice node aggregates itself plus at most four neighbours
        let agg_gain = 5f64.sqrt().recip();
        for l in &layout.layers {
            fill(&mut w, l.w1, h, l.d_in, agg_gain);
            fill(&mut w, l.w2, h, h, 1.0);
        }
        fill(&mut w, layout.fc_w, h, layout.concat, agg_gain);
        fill(&mut w, layout.v_w, 1, h, 0.01);
        fill(&mut w, layout.p_w, layout.slots, h, 0.01);
        Ok(Self {
            config,
            weights: w,
            metadata: TrainingMetadata { iteration: 0, seed },
        })
    }

    pub fn num_weights(&self) -> usize {
        self.weights.len()
    }

    fn layout(&self) -> Result<Layout> {
        let layout = Layout::new(&self.config);
        if layout.total != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.total,
                got: self.weights.len(),
            });
        }
        Ok(layout)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

/// Network input: a graph plus optional extra features (one-hot previous option for the
/// sweep head).
#[derive(Debug, Clone, PartialEq)]
pub struct NetInput {
    pub graph: LatticeGraph,
    pub extra: Vec<f64>,
}

impl NetInput {
    pub fn pivot<T: Scalar>(m: &SymmetricMatrix<T>) -> Self {
        Self {
            graph: build_graph(m),
            extra: Vec::new(),
        }
    }

    pub fn sweep<T: Scalar>(m: &SymmetricMatrix<T>, last: Option<crate::SweepOption>) -> Self {
        let mut extra = vec![0.0; NUM_OPTIONS];
        if let Some(o) = last {
            extra[o.id()] = 1.0;
        }
        Self {
            graph: build_graph(m),
            extra,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub policy: PolicyVector,
    pub value: f64,
    /// Sum-pooled node states of every layer.
    pub pooled: Vec<Vec<f64>>,
}

struct LayerCache {
    h_in: Vec<f64>,
    agg: Vec<f64>,
    z1: Vec<f64>,
    mask1: Vec<f64>,
    a1: Vec<f64>,
}

struct Cache {
    layers: Vec<LayerCache>,
    concat: Vec<f64>,
    f_pre: Vec<f64>,
    mask_f: Vec<f64>,
    f: Vec<f64>,
    v_raw: f64,
    probs: Vec<f64>,
    legal: usize,
    pooled: Vec<Vec<f64>>,
}

/// `out[r] = b[r] + Σ_c w[r, c] x[c]`.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out[c] += Σ_r w[r, c] g[r]`.
fn affine_back_input(w: &[f64], g: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * gr;
        }
    }
}

/// `dw[r, c] += g[r] x[c]`, `db[r] += g[r]`.
fn affine_back_params(g: &[f64], x: &[f64], dw: &mut [f64], db: &mut [f64]) {
    let cols = x.len();
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        db[r] += gr;
        let row = &mut dw[r * cols..(r + 1) * cols];
        for (d, xc) in row.iter_mut().zip(x) {
            *d += gr * xc;
        }
    }
}

fn dropout_mask(len: usize, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Vec<f64> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            (0..len)
                .map(|_| {
                    if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep
                    }
                })
                .collect()
        }
        _ => vec![1.0; len],
    }
}

fn forward_cached(
    params: &ModelParams,
    layout: &Layout,
    input: &NetInput,
    mut dropout: Option<&mut ChaCha8Rng>,
) -> Result<Cache> {
    let cfg = &params.config;
    let g = &input.graph;
    if g.features.len() != num_upper(g.n) {
        return Err(Error::DimensionMismatch {
            expected: num_upper(g.n),
            got: g.features.len(),
        });
    }
    if input.extra.len() != cfg.extra_inputs() {
        return Err(Error::DimensionMismatch {
            expected: cfg.extra_inputs(),
            got: input.extra.len(),
        });
    }
    let legal = match cfg.head {
        PolicyHead::Pivot => {
            if g.n > cfg.n_max {
                return Err(Error::SizeExceedsMax {
                    n: g.n,
                    n_max: cfg.n_max,
                });
            }
            num_pivots(g.n)
        }
        PolicyHead::Sweep => NUM_OPTIONS,
    };
    let w = &params.weights;
    let h = layout.hidden;
    let v_count = g.num_nodes();
    let rate = cfg.dropout_rate;

    let mut layers = Vec::with_capacity(layout.layers.len());
    let mut pooled = Vec::with_capacity(layout.layers.len());
    let mut h_in: Vec<f64> = g.features.iter().flatten().copied().collect();
    for l in &layout.layers {
        let d = l.d_in;
        let eps = w[l.eps];
        let mut agg = vec![0.0; v_count * d];
        for v in 0..v_count {
            let dst = &mut agg[v * d..(v + 1) * d];
            for (a, x) in dst.iter_mut().zip(&h_in[v * d..(v + 1) * d]) {
                *a = (1.0 + eps) * x;
            }
            for &u in &g.neighbors[v] {
                for (a, x) in dst.iter_mut().zip(&h_in[u * d..(u + 1) * d]) {
                    *a += x;
                }
            }
        }
        let mut z1 = vec![0.0; v_count * h];
        let mut out = vec![0.0; v_count * h];
        let mask1 = dropout_mask(v_count * h, rate, dropout.as_deref_mut());
        let mut a1 = vec![0.0; v_count * h];
        for v in 0..v_count {
            affine(
                &w[l.w1..l.b1],
                &w[l.b1..l.w2],
                &agg[v * d..(v + 1) * d],
                &mut z1[v * h..(v + 1) * h],
            );
            for k in v * h..(v + 1) * h {
                a1[k] = z1[k].max(0.0) * mask1[k];
            }
            affine(
                &w[l.w2..l.b2],
                &w[l.b2..l.eps],
                &a1[v * h..(v + 1) * h],
                &mut out[v * h..(v + 1) * h],
            );
        }
        let mut pool = vec![0.0; h];
        for v in 0..v_count {
            for (p, x) in pool.iter_mut().zip(&out[v * h..(v + 1) * h]) {
                *p += x;
            }
        }
        pooled.push(pool);
        layers.push(LayerCache {
            h_in,
            agg,
            z1,
            mask1,
            a1,
        });
        h_in = out;
    }

    let mut concat: Vec<f64> = pooled.iter().flatten().copied().collect();
    concat.extend_from_slice(&input.extra);
    let mut f_pre = vec![0.0; h];
    affine(
        &w[layout.fc_w..layout.fc_b],
        &w[layout.fc_b..layout.v_w],
        &concat,
        &mut f_pre,
    );
    let mask_f = dropout_mask(h, rate, dropout);
    let f: Vec<f64> = f_pre
        .iter()
        .zip(&mask_f)
        .map(|(x, m)| x.max(0.0) * m)
        .collect();
    let v_raw = w[layout.v_b]
        + w[layout.v_w..layout.v_b]
            .iter()
            .zip(&f)
            .map(|(a, b)| a * b)
            .sum::<f64>();
    let mut logits = vec![0.0; layout.slots];
    affine(
        &w[layout.p_w..layout.p_b],
        &w[layout.p_b..layout.total],
        &f,
        &mut logits,
    );
    let mut probs = vec![0.0; layout.slots];
    softmax_into(&logits[..legal], &mut probs[..legal]);

    Ok(Cache {
        layers,
        concat,
        f_pre,
        mask_f,
        f,
        v_raw,
        probs,
        legal,
        pooled,
    })
}

fn squash(v_raw: f64) -> f64 {
    v_raw.tanh().clamp(-VALUE_LIMIT, VALUE_LIMIT)
}

/// Inference pass. Dropout runs only when `dropout_rng` is supplied (train mode).
pub fn forward(
    params: &ModelParams,
    input: &NetInput,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Prediction> {
    let layout = params.layout()?;
    let cache = forward_cached(params, &layout, input, dropout_rng)?;
    let n_max = match params.config.head {
        PolicyHead::Pivot => params.config.n_max,
        PolicyHead::Sweep => 0,
    };
    Ok(Prediction {
        policy: PolicyVector {
            values: cache.probs,
            n_max,
        },
        value: squash(cache.v_raw),
        pooled: cache.pooled,
    })
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: NetInput,
    /// Target distribution over the policy slots.
    pub policy: Vec<f64>,
    /// Value target in `[-1, 1]`.
    pub value: f64,
}

fn check_sample(params: &ModelParams, s: &Sample) -> Result<()> {
    let slots = params.config.policy_slots();
    if s.policy.len() != slots {
        return Err(Error::DimensionMismatch {
            expected: slots,
            got: s.policy.len(),
        });
    }
    Ok(())
}

/// Loss of one sample and its gradient accumulated into `grad` (no L2 term).
fn sample_loss_grad(
    params: &ModelParams,
    layout: &Layout,
    sample: &Sample,
    dropout: Option<&mut ChaCha8Rng>,
    grad: &mut [f64],
) -> Result<f64> {
    let cache = forward_cached(params, layout, &sample.input, dropout)?;
    let w = &params.weights;
    let h = layout.hidden;
    let g = &sample.input.graph;
    let v_count = g.num_nodes();

    let v = squash(cache.v_raw);
    let mut loss = (v - sample.value).powi(2);
    for (i, &t) in sample.policy.iter().enumerate() {
        if t > 0.0 {
            if i >= cache.legal {
                return Err(Error::Config(format!(
                    "policy target puts mass on slot {i}, outside the {} legal slots",
                    cache.legal
                )));
            }
            loss -= t * cache.probs[i].max(f64::MIN_POSITIVE).ln();
        }
    }

    // heads
    let tanh = cache.v_raw.tanh();
    let d_vraw = 2.0 * (v - sample.value) * (1.0 - tanh * tanh);
    let target_mass: f64 = sample.policy[..cache.legal].iter().sum();
    let mut d_logits = vec![0.0; layout.slots];
    for i in 0..cache.legal {
        d_logits[i] = target_mass * cache.probs[i] - sample.policy[i];
    }
    let mut d_f = vec![0.0; h];
    grad[layout.v_b] += d_vraw;
    for k in 0..h {
        grad[layout.v_w + k] += d_vraw * cache.f[k];
        d_f[k] += d_vraw * w[layout.v_w + k];
    }
    {
        let (dw, db) = grad[layout.p_w..layout.total].split_at_mut(layout.slots * h);
        affine_back_params(&d_logits, &cache.f, dw, db);
    }
    affine_back_input(&w[layout.p_w..layout.p_b], &d_logits, &mut d_f);

    // final hidden layer
    let d_fpre: Vec<f64> = (0..h)
        .map(|k| {
            if cache.f_pre[k] > 0.0 {
                d_f[k] * cache.mask_f[k]
            } else {
                0.0
            }
        })
        .collect();
    {
        let (dw, db) = grad[layout.fc_w..layout.v_w].split_at_mut(h * layout.concat);
        affine_back_params(&d_fpre, &cache.concat, dw, db);
    }
    let mut d_concat = vec![0.0; layout.concat];
    affine_back_input(&w[layout.fc_w..layout.fc_b], &d_fpre, &mut d_concat);

    // message-passing layers, last to first
    let mut d_out = vec![0.0; v_count * h];
    for (k, l) in layout.layers.iter().enumerate().rev() {
        let c = &cache.layers[k];
        let d = l.d_in;
        let d_pool = &d_concat[k * h..(k + 1) * h];
        for v in 0..v_count {
            for (x, p) in d_out[v * h..(v + 1) * h].iter_mut().zip(d_pool) {
                *x += p;
            }
        }
        let mut d_agg = vec![0.0; v_count * d];
        for v in 0..v_count {
            let d_o = &d_out[v * h..(v + 1) * h];
            {
                let (dw2, db2) = grad[l.w2..l.eps].split_at_mut(h * h);
                affine_back_params(d_o, &c.a1[v * h..(v + 1) * h], dw2, db2);
            }
            let mut d_a1 = vec![0.0; h];
            affine_back_input(&w[l.w2..l.b2], d_o, &mut d_a1);
            let d_z1: Vec<f64> = (0..h)
                .map(|j| {
                    let idx = v * h + j;
                    if c.z1[idx] > 0.0 {
                        d_a1[j] * c.mask1[idx]
                    } else {
                        0.0
                    }
                })
                .collect();
            {
                let (dw1, db1) = grad[l.w1..l.w2].split_at_mut(h * d);
                affine_back_params(&d_z1, &c.agg[v * d..(v + 1) * d], dw1, db1);
            }
            affine_back_input(&w[l.w1..l.b1], &d_z1, &mut d_agg[v * d..(v + 1) * d]);
        }
        let eps = w[l.eps];
        if params.config.learn_eps {
            grad[l.eps] += d_agg.iter().zip(&c.h_in).map(|(a, b)| a * b).sum::<f64>();
        }
        if k > 0 {
            let mut d_in = vec![0.0; v_count * d];
            for v in 0..v_count {
                for j in 0..d {
                    d_in[v * d + j] += (1.0 + eps) * d_agg[v * d + j];
                }
                for &u in &g.neighbors[v] {
                    for j in 0..d {
                        d_in[u * d + j] += d_agg[v * d + j];
                    }
                }
            }
            d_out = d_in;
        }
    }
    Ok(loss)
}

/// Mean loss over `batch` (plus the L2 term) and its gradient. Dropout masks are drawn
/// from a per-sample stream derived from `dropout_seed` when given.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &[Sample],
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyData);
    }
    let layout = params.layout()?;
    for s in batch {
        check_sample(params, s)?;
    }
    let per_sample: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut g = vec![0.0; layout.total];
            let mut rng =
                dropout_seed.map(|seed| ChaCha8Rng::seed_from_u64(seed ^ (i as u64) << 20));
            let l = sample_loss_grad(params, &layout, s, rng.as_mut(), &mut g)?;
            Ok((l, g))
        })
        .collect();
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; layout.total];
    let mut loss = 0.0;
    for r in per_sample {
        let (l, g) = r?;
        loss += l * scale;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b * scale;
        }
    }
    let l2 = params.config.l2;
    for (i, (gw, &w)) in grad.iter_mut().zip(&params.weights).enumerate() {
        if !params.config.learn_eps && layout.layers.iter().any(|l| l.eps == i) {
            continue;
        }
        loss += l2 * w * w;
        *gw += 2.0 * l2 * w;
    }
    Ok((loss, grad))
}

/// One plain gradient-descent step. Returns the loss measured before the update.
pub fn train_step(
    params: &mut ModelParams,
    batch: &[Sample],
    lr: f64,
    dropout_seed: Option<u64>,
) -> Result<f64> {
    let (loss, grad) = loss_and_grad(params, batch, dropout_seed)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        let bad = grad.iter().filter(|g| !g.is_finite()).count();
        return Err(Error::NonFiniteLoss {
            loss,
            step: params.metadata.iteration as usize,
            detail: format!(
                "{bad} non-finite gradient entries, batch of {}",
                batch.len()
            ),
        });
    }
    for (w, g) in params.weights.iter_mut().zip(&grad) {
        *w -= lr * g;
    }
    params.metadata.iteration += 1;
    Ok(loss)
}

/// Mean loss without dropout or parameter updates.
pub fn evaluate_loss(params: &ModelParams, batch: &[Sample]) -> Result<f64> {
    Ok(loss_and_grad(params, batch, None)?.0)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    n_max: usize,
    num_layers: usize,
    hidden_dim: usize,
    config: ModelConfig,
    weights: Vec<f64>,
    metadata: TrainingMetadata,
}

pub fn params_to_json(params: &ModelParams) -> Result<String> {
    let ck = Checkpoint {
        format_version: FORMAT_VERSION,
        n_max: params.config.n_max,
        num_layers: params.config.num_layers,
        hidden_dim: params.config.hidden_dim,
        config: params.config,
        weights: params.weights.clone(),
        metadata: params.metadata.clone(),
    };
    Ok(serde_json::to_string(&ck)?)
}

pub fn params_from_json(text: &str) -> Result<ModelParams> {
    let raw: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::CorruptFile(e.to_string()))?;
    let version = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::CorruptFile("missing format_version".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: FORMAT_VERSION,
        });
    }
    let ck: Checkpoint =
        serde_json::from_value(raw).map_err(|e| Error::CorruptFile(e.to_string()))?;
    let params = ModelParams {
        config: ck.config,
        weights: ck.weights,
        metadata: ck.metadata,
    };
    if ck.n_max != params.config.n_max
        || ck.num_layers != params.config.num_layers
        || ck.hidden_dim != params.config.hidden_dim
    {
        return Err(Error::CorruptFile("header disagrees with config".into()));
    }
    params
        .layout()
        .map_err(|e| Error::CorruptFile(e.to_string()))?;
    Ok(params)
}

pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, params_to_json(params)?)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    params_from_json(&fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Evaluator adapters
// ---------------------------------------------------------------------------

/// Network-backed leaf evaluator for either game.
#[derive(Debug, Clone)]
pub struct NetworkEvaluator {
    pub params: ModelParams,
}

impl NetworkEvaluator {
    pub fn new(params: ModelParams) -> Self {
        Self { params }
    }
}

impl Evaluator<MdpGame> for NetworkEvaluator {
    fn evaluate(&self, game: &MdpGame) -> (Vec<f64>, f64) {
        match forward(&self.params, &NetInput::pivot(&game.state.matrix), None) {
            Ok(p) => {
                let mut priors = p.policy.values;
                priors.resize(game.policy_len(), 0.0);
                (priors, p.value)
            }
            Err(_) => (vec![1.0; game.policy_len()], 0.0),
        }
    }
}

impl Evaluator<SmdpGame> for NetworkEvaluator {
    fn evaluate(&self, game: &SmdpGame) -> (Vec<f64>, f64) {
        let input = NetInput::sweep(&game.state.matrix, game.state.last_option);
        match forward(&self.params, &input, None) {
            Ok(p) => (p.policy.values, p.value),
            Err(_) => (vec![1.0; NUM_OPTIONS], 0.0),
        }
    }
}
