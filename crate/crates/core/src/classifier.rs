//! Recurrent team-task classifier: convolutional observation encoder, gated
//! recurrent unit over (previous action, observation) pairs, and an MLP head
//! producing a posterior over the K known team-tasks.
//!
//! Forward and backward passes work on packed mini-batches: sequences are
//! sorted by length and step `t` of every still-running sequence occupies a
//! contiguous block of rows, so the encoder and head run as single matrix
//! products and the recurrence only touches live rows.

use std::io::Write as _;
use std::path::Path;

use log::info;
use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::binio::{FormatError, Reader, Writer};
use crate::env::{Action, Observation, CHANNELS, FOV};
use crate::rng::{self, purpose};
use crate::trajectories::{LabelledDataset, Split, TrajectoryRecord};

pub const CONV1: usize = 16;
pub const CONV2: usize = 32;
pub const LATENT: usize = 64;
pub const HIDDEN: usize = 128;
pub const HEAD: usize = 128;
pub const ACTION_DIM: usize = Action::COUNT;
pub const GRU_IN: usize = LATENT + ACTION_DIM;

const CELLS: usize = FOV * FOV;
const PATCH1: usize = 9 * CHANNELS;
const OUT2: usize = (FOV - 2) * (FOV - 2);
const PATCH2: usize = 9 * CONV1;
const FLAT: usize = OUT2 * CONV2;
// gate column offsets inside the 3·HIDDEN recurrent pre-activations
const R: usize = 0;
const Z: usize = HIDDEN;
const N: usize = 2 * HIDDEN;

pub const MAGIC: [u8; 4] = *b"RBCK";
pub const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset problem: {0}")]
    Dataset(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (gradient norm {grad_norm})")]
    NonFinite { epoch: usize, batch: usize, loss: f64, grad_norm: f64 },
    #[error("checkpoint is incompatible: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const BLOCK_NAMES: [&str; 16] = [
    "conv1.w", "conv1.b", "conv2.w", "conv2.b", "proj.w", "proj.b", "gru.wx", "gru.bx", "gru.wh", "gru.bh",
    "head1.w", "head1.b", "head2.w", "head2.b", "head3.w", "head3.b",
];

/// All classifier weights. Matrices are stored input-major (`x · W`). The
/// same type holds gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub k: usize,
    pub conv1_w: Array2<f64>,
    pub conv1_b: Array1<f64>,
    pub conv2_w: Array2<f64>,
    pub conv2_b: Array1<f64>,
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
    /// Columns are the reset, update and candidate gates in that order.
    pub gru_wx: Array2<f64>,
    pub gru_bx: Array1<f64>,
    pub gru_wh: Array2<f64>,
    pub gru_bh: Array1<f64>,
    pub head1_w: Array2<f64>,
    pub head1_b: Array1<f64>,
    pub head2_w: Array2<f64>,
    pub head2_b: Array1<f64>,
    pub head3_w: Array2<f64>,
    pub head3_b: Array1<f64>,
}

impl ClassifierParams {
    pub fn zeros(k: usize) -> Self {
        ClassifierParams {
            k,
            conv1_w: Array2::zeros((PATCH1, CONV1)),
            conv1_b: Array1::zeros(CONV1),
            conv2_w: Array2::zeros((PATCH2, CONV2)),
            conv2_b: Array1::zeros(CONV2),
            proj_w: Array2::zeros((FLAT, LATENT)),
            proj_b: Array1::zeros(LATENT),
            gru_wx: Array2::zeros((GRU_IN, 3 * HIDDEN)),
            gru_bx: Array1::zeros(3 * HIDDEN),
            gru_wh: Array2::zeros((HIDDEN, 3 * HIDDEN)),
            gru_bh: Array1::zeros(3 * HIDDEN),
            head1_w: Array2::zeros((HIDDEN, HEAD)),
            head1_b: Array1::zeros(HEAD),
            head2_w: Array2::zeros((HEAD, HEAD)),
            head2_b: Array1::zeros(HEAD),
            head3_w: Array2::zeros((HEAD, k)),
            head3_b: Array1::zeros(k),
        }
    }

    /// Weights uniform in ±1/√fan_in, zero biases.
    pub fn init(k: usize, seed: u64) -> Self {
        let mut p = Self::zeros(k);
        let mut rng = rng::stream(seed, &[purpose::INIT]);
        for w in [
            &mut p.conv1_w,
            &mut p.conv2_w,
            &mut p.proj_w,
            &mut p.gru_wx,
            &mut p.gru_wh,
            &mut p.head1_w,
            &mut p.head2_w,
            &mut p.head3_w,
        ] {
            let bound = 1.0 / (w.nrows() as f64).sqrt();
            w.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        p
    }

    pub fn blocks(&self) -> [&[f64]; 16] {
        fn s(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        fn v(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        [
            s(&self.conv1_w),
            v(&self.conv1_b),
            s(&self.conv2_w),
            v(&self.conv2_b),
            s(&self.proj_w),
            v(&self.proj_b),
            s(&self.gru_wx),
            v(&self.gru_bx),
            s(&self.gru_wh),
            v(&self.gru_bh),
            s(&self.head1_w),
            v(&self.head1_b),
            s(&self.head2_w),
            v(&self.head2_b),
            s(&self.head3_w),
            v(&self.head3_b),
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 16] {
        fn s(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        fn v(a: &mut Array1<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        [
            s(&mut self.conv1_w),
            v(&mut self.conv1_b),
            s(&mut self.conv2_w),
            v(&mut self.conv2_b),
            s(&mut self.proj_w),
            v(&mut self.proj_b),
            s(&mut self.gru_wx),
            v(&mut self.gru_bx),
            s(&mut self.gru_wh),
            v(&mut self.gru_bh),
            s(&mut self.head1_w),
            v(&mut self.head1_b),
            s(&mut self.head2_w),
            v(&mut self.head2_b),
            s(&mut self.head3_w),
            v(&mut self.head3_b),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.blocks().iter().flat_map(|b| b.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, FormatError> {
        let mut w = Writer::new();
        w.bytes(&MAGIC);
        w.u8(VERSION);
        w.u32(u32::try_from(self.k).map_err(|_| FormatError::Invalid("K exceeds 32 bits".into()))?);
        for d in arch_dims() {
            w.u32(d);
        }
        for b in self.blocks() {
            for &x in b {
                w.f64(x);
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ClassifierError> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u8()?;
        if version != VERSION {
            return Err(FormatError::BadVersion(version).into());
        }
        let k = r.u32()? as usize;
        if k == 0 {
            return Err(FormatError::Invalid("K must be ≥ 1".into()).into());
        }
        for (i, expected) in arch_dims().into_iter().enumerate() {
            let found = r.u32()?;
            if found != expected {
                return Err(ClassifierError::Incompatible(format!(
                    "architecture dimension {i} is {found}, expected {expected}"
                )));
            }
        }
        let mut p = Self::zeros(k);
        for b in p.blocks_mut() {
            for x in b.iter_mut() {
                *x = r.f64()?;
            }
        }
        r.finish()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Loads a checkpoint and checks that it was trained for `k` classes.
    pub fn load_for(path: &Path, k: usize) -> Result<Self, ClassifierError> {
        let p = Self::load(path)?;
        if p.k != k {
            return Err(ClassifierError::Incompatible(format!("checkpoint has K={}, expected K={k}", p.k)));
        }
        Ok(p)
    }

    fn zip_apply(&mut self, other: &ClassifierParams, f: impl Fn(&mut f64, f64)) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, &y) in a.iter_mut().zip(b) {
                f(x, y);
            }
        }
    }
}

fn arch_dims() -> [u32; 8] {
    [FOV, CHANNELS, CONV1, CONV2, LATENT, ACTION_DIM, HIDDEN, HEAD].map(|d| d as u32)
}

/// Distribution over the K team-tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior(pub Vec<f64>);

impl Posterior {
    pub fn uniform(k: usize) -> Self {
        Posterior(vec![1.0 / k as f64; k])
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn add_bias(m: &mut Array2<f64>, b: &Array1<f64>) {
    for mut row in m.rows_mut() {
        row += b;
    }
}

/// `a · b` followed by bias and, optionally, a rectifier.
fn affine(a: &ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>, rectify: bool) -> Array2<f64> {
    let mut out = a.dot(w);
    add_bias(&mut out, b);
    if rectify {
        out.mapv_inplace(relu);
    }
    out
}

/// First-layer patches: row `n·25 + cell`, column `(dr·3 + dc)·5 + channel`,
/// with zero padding around the window.
fn im2col1(obs: &[Observation]) -> Array2<f64> {
    let mut p = Array2::zeros((obs.len() * CELLS, PATCH1));
    for (n, o) in obs.iter().enumerate() {
        for bit in o.ones() {
            let (ch, row, col) = (bit / CELLS, (bit % CELLS) / FOV, bit % FOV);
            for dr in 0..3 {
                for dc in 0..3 {
                    let (r, c) = (row as i32 + 1 - dr as i32, col as i32 + 1 - dc as i32);
                    if (0..FOV as i32).contains(&r) && (0..FOV as i32).contains(&c) {
                        p[[n * CELLS + r as usize * FOV + c as usize, (dr * 3 + dc) * CHANNELS + ch]] = 1.0;
                    }
                }
            }
        }
    }
    p
}

/// Second-layer patches over the unpadded 3×3 output grid.
fn im2col2(a1: &Array2<f64>, n_rows: usize) -> Array2<f64> {
    let mut p = Array2::zeros((n_rows * OUT2, PATCH2));
    let side = FOV - 2;
    for n in 0..n_rows {
        for i in 0..side {
            for j in 0..side {
                let out = n * OUT2 + i * side + j;
                for di in 0..3 {
                    for dj in 0..3 {
                        let src = a1.row(n * CELLS + (i + di) * FOV + (j + dj));
                        let off = (di * 3 + dj) * CONV1;
                        p.slice_mut(s![out, off..off + CONV1]).assign(&src);
                    }
                }
            }
        }
    }
    p
}

fn col2im2(dp: &Array2<f64>, n_rows: usize) -> Array2<f64> {
    let mut d = Array2::zeros((n_rows * CELLS, CONV1));
    let side = FOV - 2;
    for n in 0..n_rows {
        for i in 0..side {
            for j in 0..side {
                let out = n * OUT2 + i * side + j;
                for di in 0..3 {
                    for dj in 0..3 {
                        let off = (di * 3 + dj) * CONV1;
                        let mut dst = d.row_mut(n * CELLS + (i + di) * FOV + (j + dj));
                        dst += &dp.slice(s![out, off..off + CONV1]);
                    }
                }
            }
        }
    }
    d
}

struct Encoded {
    p1: Array2<f64>,
    a1: Array2<f64>,
    p2: Array2<f64>,
    flat: Array2<f64>,
    latent: Array2<f64>,
}

fn encode_rows(p: &ClassifierParams, obs: &[Observation]) -> Encoded {
    let n = obs.len();
    let p1 = im2col1(obs);
    let a1 = affine(&p1.view(), &p.conv1_w, &p.conv1_b, true);
    let p2 = im2col2(&a1, n);
    let a2 = affine(&p2.view(), &p.conv2_w, &p.conv2_b, true);
    let flat = a2.into_shape_with_order((n, FLAT)).expect("contiguous conv output");
    let latent = affine(&flat.view(), &p.proj_w, &p.proj_b, true);
    Encoded { p1, a1, p2, flat, latent }
}

/// Latent encoding of one observation.
pub fn encode(p: &ClassifierParams, obs: &Observation) -> Array1<f64> {
    encode_rows(p, std::slice::from_ref(obs)).latent.row(0).to_owned()
}

fn gru_inputs(latent: &Array2<f64>, actions: &[Option<Action>]) -> Array2<f64> {
    let mut x = Array2::zeros((latent.nrows(), GRU_IN));
    x.slice_mut(s![.., ..LATENT]).assign(latent);
    for (i, a) in actions.iter().enumerate() {
        if let Some(a) = a {
            x[[i, LATENT + a.index()]] = 1.0;
        }
    }
    x
}

struct GateCache {
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    gh_n: Array2<f64>,
}

/// One recurrent update on a block of rows; `gx` already holds the input
/// contribution. Returns the new hidden rows and the gate activations.
fn gru_rows(p: &ClassifierParams, gx: ArrayView2<f64>, h_prev: ArrayView2<f64>) -> (Array2<f64>, GateCache) {
    let rows = gx.nrows();
    let gh = affine(&h_prev, &p.gru_wh, &p.gru_bh, false);
    let mut h = Array2::zeros((rows, HIDDEN));
    let mut c = GateCache {
        r: Array2::zeros((rows, HIDDEN)),
        z: Array2::zeros((rows, HIDDEN)),
        n: Array2::zeros((rows, HIDDEN)),
        gh_n: Array2::zeros((rows, HIDDEN)),
    };
    for i in 0..rows {
        for j in 0..HIDDEN {
            let r = sigmoid(gx[[i, R + j]] + gh[[i, R + j]]);
            let z = sigmoid(gx[[i, Z + j]] + gh[[i, Z + j]]);
            let n = (gx[[i, N + j]] + r * gh[[i, N + j]]).tanh();
            h[[i, j]] = (1.0 - z) * h_prev[[i, j]] + z * n;
            c.r[[i, j]] = r;
            c.z[[i, j]] = z;
            c.n[[i, j]] = n;
            c.gh_n[[i, j]] = gh[[i, N + j]];
        }
    }
    (h, c)
}

/// Single recurrent update from a latent observation and a previous action.
pub fn recurrent_step(p: &ClassifierParams, hidden: &Array1<f64>, latent: &Array1<f64>, action: Option<Action>) -> Array1<f64> {
    let x = gru_inputs(&latent.view().insert_axis(Axis(0)).to_owned(), &[action]);
    let gx = affine(&x.view(), &p.gru_wx, &p.gru_bx, false);
    gru_rows(p, gx.view(), hidden.view().insert_axis(Axis(0))).0.row(0).to_owned()
}

struct HeadCache {
    u1: Array2<f64>,
    u2: Array2<f64>,
    log_probs: Array2<f64>,
}

fn head_rows(p: &ClassifierParams, h: &Array2<f64>) -> HeadCache {
    let u1 = affine(&h.view(), &p.head1_w, &p.head1_b, true);
    let u2 = affine(&u1.view(), &p.head2_w, &p.head2_b, true);
    let mut log_probs = affine(&u2.view(), &p.head3_w, &p.head3_b, false);
    for mut row in log_probs.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|x| x - lse);
    }
    HeadCache { u1, u2, log_probs }
}

fn posterior_of(log_probs: ndarray::ArrayView1<f64>) -> Posterior {
    let mut v: Vec<f64> = log_probs.iter().map(|x| x.exp()).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    Posterior(v)
}

/// Initial hidden state; stands for the prior before any evidence.
pub fn initial_hidden() -> Array1<f64> {
    Array1::zeros(HIDDEN)
}

/// Consumes one (previous action, observation) pair and returns the updated
/// posterior and hidden state.
pub fn posterior_step(
    p: &ClassifierParams,
    hidden: &Array1<f64>,
    a_prev: Option<Action>,
    obs: &Observation,
) -> (Posterior, Array1<f64>) {
    let h = recurrent_step(p, hidden, &encode(p, obs), a_prev);
    let head = head_rows(p, &h.view().insert_axis(Axis(0)).to_owned());
    (posterior_of(head.log_probs.row(0)), h)
}

/// Posterior read from the zero hidden state, before any evidence.
pub fn prior(p: &ClassifierParams) -> Posterior {
    let head = head_rows(p, &Array2::zeros((1, HIDDEN)));
    posterior_of(head.log_probs.row(0))
}

/// Posterior after every step of a trajectory, starting from the zero state.
pub fn posteriors(p: &ClassifierParams, trajectory: &[TrajectoryRecord]) -> Vec<Posterior> {
    if trajectory.is_empty() {
        return Vec::new();
    }
    let fw = forward(p, &[(trajectory, 0)]);
    (0..trajectory.len()).map(|t| posterior_of(fw.head.log_probs.row(fw.pack.row(0, t)))).collect()
}

/// Row layout of a packed batch.
struct Packing {
    /// Batch positions sorted by decreasing length.
    order: Vec<usize>,
    lens: Vec<usize>,
    /// (first row, live sequences) for every step.
    steps: Vec<(usize, usize)>,
    rows: usize,
}

impl Packing {
    fn new(lens_in: &[usize]) -> Self {
        let mut order: Vec<usize> = (0..lens_in.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(lens_in[i]));
        let lens: Vec<usize> = order.iter().map(|&i| lens_in[i]).collect();
        let max = lens.first().copied().unwrap_or(0);
        let mut steps = Vec::with_capacity(max);
        let mut rows = 0;
        for t in 0..max {
            let live = lens.iter().take_while(|&&l| l > t).count();
            steps.push((rows, live));
            rows += live;
        }
        Packing { order, lens, steps, rows }
    }

    /// Row of step `t` of batch item `b` (by original position).
    fn row(&self, b: usize, t: usize) -> usize {
        let j = self.order.iter().position(|&i| i == b).expect("batch item");
        self.steps[t].0 + j
    }
}

struct Forward {
    pack: Packing,
    classes: Vec<usize>,
    x: Array2<f64>,
    enc: Encoded,
    h: Array2<f64>,
    gates: Vec<GateCache>,
    head: HeadCache,
}

fn forward(p: &ClassifierParams, batch: &[(&[TrajectoryRecord], usize)]) -> Forward {
    let lens: Vec<usize> = batch.iter().map(|(t, _)| t.len()).collect();
    let pack = Packing::new(&lens);
    let mut obs = Vec::with_capacity(pack.rows);
    let mut actions = Vec::with_capacity(pack.rows);
    let mut classes = Vec::with_capacity(pack.rows);
    for (t, &(_, live)) in pack.steps.iter().enumerate() {
        for &b in &pack.order[..live] {
            let rec = &batch[b].0[t];
            obs.push(rec.obs);
            actions.push(Some(rec.action));
            classes.push(batch[b].1);
        }
    }
    let enc = encode_rows(p, &obs);
    let x = gru_inputs(&enc.latent, &actions);
    let gx = affine(&x.view(), &p.gru_wx, &p.gru_bx, false);
    let mut h = Array2::zeros((pack.rows, HIDDEN));
    let mut gates = Vec::with_capacity(pack.steps.len());
    let zeros = Array2::zeros((pack.steps.first().map_or(0, |s| s.1), HIDDEN));
    for t in 0..pack.steps.len() {
        let (off, live) = pack.steps[t];
        let prev = match t {
            0 => zeros.view(),
            _ => h.slice(s![pack.steps[t - 1].0..pack.steps[t - 1].0 + live, ..]),
        };
        let (ht, cache) = gru_rows(p, gx.slice(s![off..off + live, ..]), prev);
        h.slice_mut(s![off..off + live, ..]).assign(&ht);
        gates.push(cache);
    }
    let head = head_rows(p, &h);
    Forward { pack, classes, x, enc, h, gates, head }
}

impl Forward {
    /// Loss weight of each row: every sequence contributes the mean of its
    /// per-step losses, and the batch the mean over sequences.
    fn row_weights(&self) -> Vec<f64> {
        let b = self.pack.lens.len() as f64;
        let mut w = Vec::with_capacity(self.pack.rows);
        for &(_, live) in &self.pack.steps {
            w.extend(self.pack.lens[..live].iter().map(|&l| 1.0 / (l as f64 * b)));
        }
        w
    }

    fn loss(&self) -> f64 {
        self.row_weights()
            .iter()
            .enumerate()
            .map(|(i, w)| -w * self.head.log_probs[[i, self.classes[i]]])
            .sum()
    }

    /// Per-sequence (summed per-step loss / length, final-step argmax
    /// correct), in original batch order.
    fn per_sequence(&self) -> Vec<(f64, bool)> {
        let mut out = vec![(0.0, false); self.pack.lens.len()];
        for (t, &(off, live)) in self.pack.steps.iter().enumerate() {
            for j in 0..live {
                let row = off + j;
                let b = self.pack.order[j];
                let len = self.pack.lens[j];
                let class = self.classes[row];
                out[b].0 -= self.head.log_probs[[row, class]] / len as f64;
                if t + 1 == len {
                    out[b].1 = posterior_of(self.head.log_probs.row(row)).argmax() == class;
                }
            }
        }
        out
    }
}

fn relu_mask(d: &mut Array2<f64>, activated: &Array2<f64>) {
    d.zip_mut_with(activated, |g, &a| {
        if a <= 0.0 {
            *g = 0.0
        }
    });
}

fn accumulate(w: &mut Array2<f64>, b: &mut Array1<f64>, input: ArrayView2<f64>, d: &Array2<f64>) {
    general_mat_mul(1.0, &input.t(), d, 1.0, w);
    *b += &d.sum_axis(Axis(0));
}

fn backward(p: &ClassifierParams, fw: &Forward) -> ClassifierParams {
    let mut g = ClassifierParams::zeros(p.k);
    let rows = fw.pack.rows;
    let weights = fw.row_weights();

    let mut dlogits = fw.head.log_probs.mapv(f64::exp);
    for (i, w) in weights.iter().enumerate() {
        dlogits[[i, fw.classes[i]]] -= 1.0;
        dlogits.row_mut(i).mapv_inplace(|x| x * w);
    }
    accumulate(&mut g.head3_w, &mut g.head3_b, fw.head.u2.view(), &dlogits);
    let mut du2 = dlogits.dot(&p.head3_w.t());
    relu_mask(&mut du2, &fw.head.u2);
    accumulate(&mut g.head2_w, &mut g.head2_b, fw.head.u1.view(), &du2);
    let mut du1 = du2.dot(&p.head2_w.t());
    relu_mask(&mut du1, &fw.head.u1);
    accumulate(&mut g.head1_w, &mut g.head1_b, fw.h.view(), &du1);
    let dh_head = du1.dot(&p.head1_w.t());

    let mut dgx = Array2::zeros((rows, 3 * HIDDEN));
    let mut carry: Array2<f64> = Array2::zeros((0, HIDDEN));
    let n_steps = fw.pack.steps.len();
    for t in (0..n_steps).rev() {
        let (off, live) = fw.pack.steps[t];
        let mut dh = dh_head.slice(s![off..off + live, ..]).to_owned();
        {
            let n_next = carry.nrows();
            let mut head_part = dh.slice_mut(s![..n_next, ..]);
            head_part += &carry;
        }
        let h_prev = match t {
            0 => Array2::zeros((live, HIDDEN)),
            _ => {
                let po = fw.pack.steps[t - 1].0;
                fw.h.slice(s![po..po + live, ..]).to_owned()
            }
        };
        let c = &fw.gates[t];
        let mut dgh = Array2::zeros((live, 3 * HIDDEN));
        let mut dprev = Array2::zeros((live, HIDDEN));
        for i in 0..live {
            for j in 0..HIDDEN {
                let (r, z, n) = (c.r[[i, j]], c.z[[i, j]], c.n[[i, j]]);
                let d = dh[[i, j]];
                let dz = d * (n - h_prev[[i, j]]);
                let dn = d * z;
                dprev[[i, j]] = d * (1.0 - z);
                let da_n = dn * (1.0 - n * n);
                let da_r = da_n * c.gh_n[[i, j]] * r * (1.0 - r);
                let da_z = dz * z * (1.0 - z);
                dgx[[off + i, R + j]] = da_r;
                dgx[[off + i, Z + j]] = da_z;
                dgx[[off + i, N + j]] = da_n;
                dgh[[i, R + j]] = da_r;
                dgh[[i, Z + j]] = da_z;
                dgh[[i, N + j]] = da_n * r;
            }
        }
        if t > 0 {
            accumulate(&mut g.gru_wh, &mut g.gru_bh, h_prev.view(), &dgh);
        } else {
            g.gru_bh += &dgh.sum_axis(Axis(0));
        }
        general_mat_mul(1.0, &dgh, &p.gru_wh.t(), 1.0, &mut dprev);
        carry = dprev;
    }
    accumulate(&mut g.gru_wx, &mut g.gru_bx, fw.x.view(), &dgx);

    let dx = dgx.dot(&p.gru_wx.t());
    let mut dlatent = dx.slice(s![.., ..LATENT]).to_owned();
    relu_mask(&mut dlatent, &fw.enc.latent);
    accumulate(&mut g.proj_w, &mut g.proj_b, fw.enc.flat.view(), &dlatent);
    let mut dflat = dlatent.dot(&p.proj_w.t());
    relu_mask(&mut dflat, &fw.enc.flat);
    let da2 = dflat.into_shape_with_order((rows * OUT2, CONV2)).expect("contiguous gradient");
    accumulate(&mut g.conv2_w, &mut g.conv2_b, fw.enc.p2.view(), &da2);
    let dp2 = da2.dot(&p.conv2_w.t());
    let mut da1 = col2im2(&dp2, rows);
    relu_mask(&mut da1, &fw.enc.a1);
    accumulate(&mut g.conv1_w, &mut g.conv1_b, fw.enc.p1.view(), &da1);
    g
}

/// Mean per-step cross-entropy of a batch and its gradient. Each sequence
/// contributes the mean over its steps; sequences are averaged.
pub fn batch_loss_grad(p: &ClassifierParams, batch: &[(&[TrajectoryRecord], usize)]) -> (f64, ClassifierParams) {
    let fw = forward(p, batch);
    (fw.loss(), backward(p, &fw))
}

pub fn batch_loss(p: &ClassifierParams, batch: &[(&[TrajectoryRecord], usize)]) -> f64 {
    forward(p, batch).loss()
}

/// Mean over steps of −log p_t(class), with gradients by backpropagation
/// through time.
pub fn sequence_loss(p: &ClassifierParams, trajectory: &[TrajectoryRecord], class: usize) -> (f64, ClassifierParams) {
    batch_loss_grad(p, &[(trajectory, class)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    GradientDescent,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 50, lr: 1e-3, batch: 32, seed: 0, optimizer: Optimizer::Adam, clip_norm: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_final_acc: f64,
    pub updates: usize,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,val_loss,val_final_acc";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!("{},{:.6},{:.6},{:.6}", self.epoch, self.train_loss, self.val_loss, self.val_final_acc)
    }
}

pub fn write_metrics_csv(history: &[EpochMetrics], path: &Path) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{METRICS_HEADER}")?;
    for m in history {
        writeln!(f, "{}", m.csv_row())?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ClassifierParams,
    pub history: Vec<EpochMetrics>,
    /// Epoch whose parameters were kept (lowest validation loss).
    pub best_epoch: usize,
}

/// Mean sequence loss and final-step accuracy over a set of examples.
pub fn evaluate(p: &ClassifierParams, examples: &[(&[TrajectoryRecord], usize)]) -> (f64, f64) {
    if examples.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in examples.chunks(256) {
        for (l, ok) in forward(p, chunk).per_sequence() {
            loss += l;
            correct += ok as usize;
        }
    }
    (loss / examples.len() as f64, correct as f64 / examples.len() as f64)
}

struct AdamState {
    m: ClassifierParams,
    v: ClassifierParams,
    t: i32,
}

fn apply_update(p: &mut ClassifierParams, g: &ClassifierParams, cfg: &TrainConfig, adam: &mut AdamState) {
    match cfg.optimizer {
        Optimizer::GradientDescent => p.zip_apply(g, |x, d| *x -= cfg.lr * d),
        Optimizer::Adam => {
            let (b1, b2, eps) = (0.9, 0.999, 1e-8);
            adam.t += 1;
            adam.m.zip_apply(g, |m, d| *m = b1 * *m + (1.0 - b1) * d);
            adam.v.zip_apply(g, |v, d| *v = b2 * *v + (1.0 - b2) * d * d);
            let c1 = 1.0 - b1.powi(adam.t);
            let c2 = 1.0 - b2.powi(adam.t);
            let blocks = p.blocks_mut();
            for ((pb, mb), vb) in blocks.into_iter().zip(adam.m.blocks()).zip(adam.v.blocks()) {
                for ((x, &m), &v) in pb.iter_mut().zip(mb).zip(vb) {
                    *x -= cfg.lr * (m / c1) / ((v / c2).sqrt() + eps);
                }
            }
        }
    }
}

pub fn train(dataset: &LabelledDataset, cfg: &TrainConfig) -> Result<TrainOutcome, ClassifierError> {
    train_with(dataset, cfg, |_| {})
}

/// Trains from fresh parameters; `on_epoch` sees each epoch's metrics as
/// they are produced.
pub fn train_with(
    dataset: &LabelledDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, ClassifierError> {
    if cfg.epochs == 0 || cfg.batch == 0 || !(cfg.lr > 0.0) || !(cfg.clip_norm > 0.0) {
        return Err(ClassifierError::InvalidConfig(format!(
            "epochs={}, batch={}, lr={}, clip={} must all be positive",
            cfg.epochs, cfg.batch, cfg.lr, cfg.clip_norm
        )));
    }
    let k = dataset.n_classes();
    let pairs = |s: Split| -> Vec<(&[TrajectoryRecord], usize)> {
        dataset.split(s).map(|x| (x.trajectory.as_slice(), x.class)).collect()
    };
    let train_set = pairs(Split::Train);
    let val_set = pairs(Split::Validation);
    if k == 0 || train_set.is_empty() {
        return Err(ClassifierError::Dataset("no training examples".into()));
    }
    if train_set.iter().any(|(t, _)| t.is_empty()) || val_set.iter().any(|(t, _)| t.is_empty()) {
        return Err(ClassifierError::Dataset("empty trajectory".into()));
    }
    for c in 0..k {
        if !train_set.iter().any(|&(_, x)| x == c) {
            return Err(ClassifierError::Dataset(format!("class {c} has no training example")));
        }
    }

    let mut params = ClassifierParams::init(k, cfg.seed);
    let mut adam = AdamState { m: ClassifierParams::zeros(k), v: ClassifierParams::zeros(k), t: 0 };
    let mut best: Option<(f64, usize, ClassifierParams)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng::stream(cfg.seed, &[purpose::SHUFFLE, u32::MAX as u64, epoch as u64]));
        let (mut sum, mut updates) = (0.0, 0);
        for (bi, idx) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<_> = idx.iter().map(|&i| train_set[i]).collect();
            let (loss, mut g) = batch_loss_grad(&params, &batch);
            let norm = g.norm();
            if !loss.is_finite() || !norm.is_finite() {
                return Err(ClassifierError::NonFinite { epoch, batch: bi, loss, grad_norm: norm });
            }
            if norm > cfg.clip_norm {
                let scale = cfg.clip_norm / norm;
                g.blocks_mut().into_iter().for_each(|b| b.iter_mut().for_each(|x| *x *= scale));
            }
            apply_update(&mut params, &g, cfg, &mut adam);
            sum += loss * batch.len() as f64;
            updates += 1;
        }
        if !params.is_finite() {
            return Err(ClassifierError::NonFinite { epoch, batch: updates, loss: f64::NAN, grad_norm: f64::NAN });
        }
        let (val_loss, val_acc) = evaluate(&params, &val_set);
        let m = EpochMetrics {
            epoch,
            train_loss: sum / train_set.len() as f64,
            val_loss,
            val_final_acc: val_acc,
            updates,
        };
        info!("epoch {epoch}: train {:.4} val {:.4} acc {:.3}", m.train_loss, m.val_loss, m.val_final_acc);
        on_epoch(&m);
        history.push(m);
        // without a validation split the latest epoch is kept
        let score = if val_set.is_empty() { -(epoch as f64) } else { val_loss };
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainOutcome { params, history, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{OBS_BITS, TARGET_CHANNEL, WALL_CHANNEL};
    use crate::teammates::ExperimentSet;
    use crate::trajectories::Sample;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::RngCore;

    fn random_params(k: usize, seed: u64, scale: f64) -> ClassifierParams {
        let mut p = ClassifierParams::zeros(k);
        let mut rng = rng::stream(seed, &[99]);
        for b in p.blocks_mut() {
            b.iter_mut().for_each(|x| *x = rng.random_range(-scale..scale));
        }
        p
    }

    fn random_obs(rng: &mut impl RngCore, density: f64) -> Observation {
        let mut bits = 0u128;
        for i in 0..OBS_BITS {
            if rng.random_bool(density) {
                bits |= 1 << i;
            }
        }
        Observation(bits)
    }

    fn random_traj(len: usize, seed: u64) -> Vec<TrajectoryRecord> {
        let mut rng = rng::stream(seed, &[98]);
        (0..len)
            .map(|_| TrajectoryRecord {
                action: Action::ALL[rng.random_range(0..6)],
                obs: random_obs(&mut rng, 0.25),
                reward: 0.0,
            })
            .collect()
    }

    #[test]
    fn zero_observation_zero_latent() {
        let mut p = random_params(3, 1, 0.3);
        for b in [&mut p.conv1_b, &mut p.conv2_b, &mut p.proj_b] {
            b.fill(0.0);
        }
        assert!(encode(&p, &Observation(0)).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn encoder_is_translation_sensitive() {
        let p = ClassifierParams::init(3, 4);
        let mut a = Observation(0);
        let mut b = Observation(0);
        a.set(0, 1, 1);
        b.set(0, 1, 2);
        for o in [&mut a, &mut b] {
            o.set(WALL_CHANNEL, 0, 0);
        }
        assert_ne!(encode(&p, &a), encode(&p, &b));
    }

    #[test]
    fn encoder_outputs_are_finite() {
        let p = ClassifierParams::init(5, 2);
        let mut rng = rng::stream(3, &[]);
        for _ in 0..1000 {
            let d = rng.random_range(0.0..1.0);
            assert!(encode(&p, &random_obs(&mut rng, d)).iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn closed_update_gate_keeps_hidden() {
        let mut p = random_params(3, 5, 0.5);
        p.gru_bx.slice_mut(s![Z..Z + HIDDEN]).fill(-1e3);
        let h = Array1::from_iter((0..HIDDEN).map(|i| (i as f64 / 64.0) - 1.0));
        let out = recurrent_step(&p, &h, &Array1::from_elem(LATENT, 0.7), Some(Action::East));
        for (a, b) in out.iter().zip(h.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_zero_hidden() {
        let p = ClassifierParams::zeros(3);
        let out = recurrent_step(&p, &initial_hidden(), &Array1::zeros(LATENT), None);
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_head_gives_uniform_posterior() {
        let mut p = random_params(4, 6, 0.5);
        p.head3_w.fill(0.0);
        p.head3_b.fill(0.0);
        let (post, _) = posterior_step(&p, &initial_hidden(), Some(Action::North), &Observation(12345));
        for x in post.0 {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_posterior_loss_is_ln_k() {
        let mut p = random_params(5, 7, 0.5);
        p.head3_w.fill(0.0);
        p.head3_b.fill(0.0);
        let (loss, _) = sequence_loss(&p, &random_traj(7, 1), 2);
        assert!((loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn one_hot_posterior_loss_vanishes() {
        let mut p = ClassifierParams::zeros(3);
        p.head3_b[1] = 800.0;
        let (loss, _) = sequence_loss(&p, &random_traj(5, 2), 1);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn stepwise_matches_batched() {
        let p = random_params(3, 8, 0.2);
        let traj = random_traj(9, 3);
        let batched = posteriors(&p, &traj);
        let mut h = initial_hidden();
        for (rec, want) in traj.iter().zip(&batched) {
            let (post, next) = posterior_step(&p, &h, Some(rec.action), &rec.obs);
            h = next;
            for (a, b) in post.0.iter().zip(&want.0) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((post.0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn batch_loss_is_mean_of_sequence_losses() {
        let p = random_params(3, 9, 0.2);
        let trajs: Vec<_> = [4, 9, 1, 6].iter().enumerate().map(|(i, &l)| random_traj(l, 10 + i as u64)).collect();
        let batch: Vec<_> = trajs.iter().enumerate().map(|(i, t)| (t.as_slice(), i % 3)).collect();
        let (loss, grad) = batch_loss_grad(&p, &batch);
        let mut mean = 0.0;
        let mut gsum = ClassifierParams::zeros(3);
        for &(t, c) in &batch {
            let (l, g) = sequence_loss(&p, t, c);
            mean += l / 4.0;
            gsum.zip_apply(&g, |a, b| *a += b / 4.0);
        }
        assert!((loss - mean).abs() < 1e-12);
        for (a, b) in grad.blocks().iter().zip(gsum.blocks()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    /// Largest block-wise relative error between analytic and central
    /// finite-difference gradients over sampled coordinates.
    fn gradient_check(k: usize, seed: u64, per_block: usize) -> Vec<(usize, f64)> {
        let p = random_params(k, seed, 0.3);
        let traj = random_traj(10, seed);
        let class = (seed as usize) % k;
        let (_, g) = sequence_loss(&p, &traj, class);
        let mut rng = rng::stream(seed, &[97]);
        let h = 1e-6;
        let mut out = Vec::new();
        for (bi, gb) in g.blocks().iter().enumerate() {
            let idx: Vec<usize> = if gb.len() <= per_block {
                (0..gb.len()).collect()
            } else {
                (0..per_block).map(|_| rng.random_range(0..gb.len())).collect()
            };
            let (mut diff, mut scale) = (0.0f64, 0.0f64);
            for i in idx {
                let mut plus = p.clone();
                plus.blocks_mut()[bi][i] += h;
                let mut minus = p.clone();
                minus.blocks_mut()[bi][i] -= h;
                let num = (sequence_loss(&plus, &traj, class).0 - sequence_loss(&minus, &traj, class).0) / (2.0 * h);
                diff += (num - gb[i]).powi(2);
                scale += num * num + gb[i] * gb[i];
            }
            out.push((bi, if scale == 0.0 { 0.0 } else { diff.sqrt() / scale.sqrt() }));
        }
        out
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            for (bi, err) in gradient_check(3, seed, 12) {
                assert!(err < 1e-5, "block {} seed {seed}: relative error {err}", BLOCK_NAMES[bi]);
            }
        }
    }

    #[test]
    fn label_permutation_is_equivariant() {
        let p = random_params(4, 11, 0.3);
        let perm = [2, 0, 3, 1];
        let mut q = p.clone();
        for (from, &to) in perm.iter().enumerate() {
            q.head3_w.column_mut(to).assign(&p.head3_w.column(from));
            q.head3_b[to] = p.head3_b[from];
        }
        let traj = random_traj(8, 4);
        for c in 0..4 {
            let a = sequence_loss(&p, &traj, c).0;
            let b = sequence_loss(&q, &traj, perm[c]).0;
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for p in [ClassifierParams::zeros(3), random_params(5, 12, 1.0)] {
            let path = dir.path().join("c.rbck");
            p.save(&path).unwrap();
            let back = ClassifierParams::load(&path).unwrap();
            assert_eq!(back, p);
            assert_eq!(back.to_bytes().unwrap(), p.to_bytes().unwrap());
            assert!(matches!(ClassifierParams::load_for(&path, p.k + 1), Err(ClassifierError::Incompatible(_))));
        }
        let bytes = random_params(3, 13, 1.0).to_bytes().unwrap();
        for cut in [2, 9, 30, bytes.len() - 3] {
            assert!(ClassifierParams::from_bytes(&bytes[..cut]).is_err());
        }
        assert!(matches!(
            ClassifierParams::from_bytes(&bytes[..bytes.len() - 3]),
            Err(ClassifierError::Format(FormatError::Truncated(_)))
        ));
        let mut wrong = bytes.clone();
        wrong[9] = 17;
        assert!(matches!(ClassifierParams::from_bytes(&wrong), Err(ClassifierError::Incompatible(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn random_checkpoints_round_trip(k in 1usize..8, seed in any::<u64>()) {
            let p = random_params(k, seed, 10.0);
            let bytes = p.to_bytes().unwrap();
            let back = ClassifierParams::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        }

        #[test]
        fn hidden_norm_stays_bounded(seed in any::<u64>()) {
            let p = random_params(2, seed, 2.0);
            let mut rng = rng::stream(seed, &[1]);
            let mut h = initial_hidden();
            for _ in 0..10_000 {
                let latent = Array1::from_iter((0..LATENT).map(|_| rng.random_range(0.0..5.0)));
                h = recurrent_step(&p, &h, &latent, Some(Action::ALL[rng.random_range(0..6)]));
                prop_assert!(h.dot(&h).sqrt() <= (HIDDEN as f64).sqrt() + 1e-12);
            }
        }

        #[test]
        fn posteriors_are_distributions(seed in any::<u64>(), len in 1usize..12) {
            let p = random_params(6, seed, 1.5);
            for post in posteriors(&p, &random_traj(len, seed)) {
                prop_assert!(post.0.iter().all(|&x| (0.0..=1.0).contains(&x)));
                prop_assert!((post.0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    /// Two labels told apart by the first observation only.
    fn toy_dataset(n: usize) -> LabelledDataset {
        let labels = ExperimentSet::TeamId.team_tasks()[..2].to_vec();
        let mut samples = Vec::new();
        let mut rng = rng::stream(5, &[]);
        for i in 0..n {
            let class = i % 2;
            let len = rng.random_range(1..6);
            let mut traj = random_traj(len, 100 + i as u64);
            let mut first = Observation(0);
            first.set(if class == 0 { TARGET_CHANNEL } else { WALL_CHANNEL }, 2, 2);
            traj[0].obs = first;
            let split = if i < n * 3 / 4 { Split::Train } else { Split::Validation };
            samples.push(Sample { trajectory: traj, class, split });
        }
        LabelledDataset { labels, samples }
    }

    #[test]
    fn one_epoch_reduces_loss() {
        let ds = toy_dataset(64);
        let train_pairs: Vec<_> =
            ds.split(Split::Train).map(|s| (s.trajectory.as_slice(), s.class)).collect();
        let cfg = TrainConfig { epochs: 1, batch: 8, lr: 1e-2, ..TrainConfig::default() };
        let before = evaluate(&ClassifierParams::init(2, cfg.seed), &train_pairs).0;
        let out = train(&ds, &cfg).unwrap();
        let after = evaluate(&out.params, &train_pairs).0;
        assert!(after < before, "{after} vs {before}");
    }

    #[test]
    fn full_batch_is_one_update_per_epoch() {
        let ds = toy_dataset(20);
        let n = ds.split(Split::Train).count();
        let cfg = TrainConfig { epochs: 3, batch: n, ..TrainConfig::default() };
        let out = train(&ds, &cfg).unwrap();
        assert!(out.history.iter().all(|m| m.updates == 1));
        assert!(train(&ds, &TrainConfig { epochs: 0, ..cfg.clone() }).is_err());
        assert!(train(&ds, &TrainConfig { batch: 0, ..cfg }).is_err());
    }

    #[test]
    fn training_is_deterministic_and_learns_toy_labels() {
        let ds = toy_dataset(48);
        let cfg = TrainConfig { epochs: 15, batch: 8, lr: 3e-3, seed: 3, ..TrainConfig::default() };
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.last().unwrap().val_final_acc, 1.0);
        let traj = &ds.samples[0].trajectory;
        assert_eq!(posteriors(&a.params, traj), posteriors(&a.params, traj));
    }
}
