//! Beta-wavelet spectral scorer used to pseudo-label unlabeled nodes.
//!
//! Kernels are polynomials in the symmetric normalized Laplacian `L`:
//!
//! ```text
//! W_{i,C-i} = (L/2)^i (I - L/2)^(C-i) / (2 B(i+1, C-i+1))
//! ```
//!
//! and are applied by repeated sparse multiplication, never through an
//! eigendecomposition.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{optimizer_step, AdamConfig, DenseArray, ParameterStore, SparseMatrix, Tape, Var};
use crate::error::{dim_err, GdgmError, Result};
use crate::graph::MultiRelationalGraph;

/// `L = I - D^-1/2 A D^-1/2` over the union of relations. Isolated nodes
/// get an all-zero row and column.
pub fn normalized_laplacian(graph: &MultiRelationalGraph) -> SparseMatrix {
    laplacian_from_edges(graph.n, &graph.union_edges())
}

pub fn laplacian_from_edges(n: usize, edges: &[(usize, usize)]) -> SparseMatrix {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(u, v) in edges {
        if u != v {
            adj[u].push(v);
            adj[v].push(u);
        }
    }
    let deg: Vec<f64> = adj.iter().map(|a| a.len() as f64).collect();
    let rows = (0..n)
        .map(|v| {
            if adj[v].is_empty() {
                return Vec::new();
            }
            let mut row = Vec::with_capacity(adj[v].len() + 1);
            row.push((v, 1.0));
            for &u in &adj[v] {
                row.push((u, -1.0 / (deg[v] * deg[u]).sqrt()));
            }
            row
        })
        .collect();
    SparseMatrix::from_rows(n, rows)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// `1 / (2 B(i+1, C-i+1)) = (C+1) * binom(C, i) / 2`.
pub fn beta_normalizer(i: usize, order: usize) -> f64 {
    (order + 1) as f64 * binomial(order, i) / 2.0
}

fn check_index(i: usize, order: usize) -> Result<()> {
    if i > order {
        Err(GdgmError::InvalidArgument(format!("kernel index {i} exceeds order {order}")))
    } else {
        Ok(())
    }
}

/// Dense kernel matrix `W_{i,C-i}`; intended for inspection and tests.
pub fn beta_kernel(lap: &SparseMatrix, i: usize, order: usize) -> Result<DenseArray> {
    check_index(i, order)?;
    let n = lap.n_rows();
    let mut tape = Tape::new();
    let eye = tape.constant(DenseArray::identity(n));
    let out = apply_beta_kernel(&mut tape, &Arc::new(lap.clone()), eye, i, order)?;
    Ok(tape.value(out).clone())
}

/// Frequency response of `W_{i,C-i}` at Laplacian eigenvalue `lambda`.
pub fn beta_response(lambda: f64, i: usize, order: usize) -> Result<f64> {
    check_index(i, order)?;
    let u = lambda / 2.0;
    Ok(beta_normalizer(i, order) * u.powi(i as i32) * (1.0 - u).powi((order - i) as i32))
}

/// Apply `W_{i,C-i}` to the columns of `x`.
pub fn apply_beta_kernel(tape: &mut Tape, lap: &Arc<SparseMatrix>, x: Var, i: usize, order: usize) -> Result<Var> {
    check_index(i, order)?;
    let mut y = x;
    for _ in 0..order - i {
        let ly = tape.sparse_mul(lap.clone(), y)?;
        let half = tape.scale(ly, 0.5);
        y = tape.sub(y, half)?;
    }
    for _ in 0..i {
        let ly = tape.sparse_mul(lap.clone(), y)?;
        y = tape.scale(ly, 0.5);
    }
    Ok(tape.scale(y, beta_normalizer(i, order)))
}

/// How the filtered signals are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    Concat,
    Sum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveletConfig {
    pub order: usize,
    pub pre_hidden: usize,
    pub post_hidden: usize,
    /// Pseudo-label threshold; strict `p > z` yields label 1.
    pub threshold: f64,
    pub pretrain_epochs: usize,
    pub lr: f64,
    pub aggregation: Aggregation,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        Self {
            order: 2,
            pre_hidden: 64,
            post_hidden: 32,
            threshold: 0.6,
            pretrain_epochs: 100,
            lr: 0.01,
            aggregation: Aggregation::Concat,
        }
    }
}

pub const PREFIX: &str = "bwgnn.";

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabeler {
    pub cfg: WaveletConfig,
    pub d_in: usize,
}

impl PseudoLabeler {
    pub fn new(cfg: WaveletConfig, d_in: usize) -> Result<Self> {
        if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
            return Err(GdgmError::Config(format!("threshold {} outside (0,1)", cfg.threshold)));
        }
        if cfg.pre_hidden == 0 || cfg.post_hidden == 0 || d_in == 0 {
            return Err(GdgmError::Config("wavelet widths must be positive".into()));
        }
        Ok(Self { cfg, d_in })
    }

    fn agg_width(&self) -> usize {
        match self.cfg.aggregation {
            Aggregation::Concat => self.cfg.pre_hidden * (self.cfg.order + 1),
            Aggregation::Sum => self.cfg.pre_hidden,
        }
    }

    pub fn init_params<R: Rng>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        let (h, p) = (self.cfg.pre_hidden, self.cfg.post_hidden);
        store.init_weight("bwgnn.pre.w1", self.d_in, h, rng)?;
        store.init_zeros("bwgnn.pre.b1", 1, h)?;
        store.init_weight("bwgnn.pre.w2", h, h, rng)?;
        store.init_zeros("bwgnn.pre.b2", 1, h)?;
        store.init_weight("bwgnn.post.w1", self.agg_width(), p, rng)?;
        store.init_zeros("bwgnn.post.b1", 1, p)?;
        store.init_weight("bwgnn.post.w2", p, 1, rng)?;
        store.init_zeros("bwgnn.post.b2", 1, 1)?;
        Ok(())
    }

    fn dense(tape: &mut Tape, store: &ParameterStore, x: Var, w: &str, b: &str, relu: bool) -> Result<Var> {
        let w = tape.param(store, w)?;
        let b = tape.param(store, b)?;
        let y = tape.matmul(x, w)?;
        let y = tape.add(y, b)?;
        Ok(if relu { tape.relu(y) } else { y })
    }

    /// Anomaly probabilities `p = sigmoid(MLP(AGG[W_i MLP(X)]))`, `n x 1`.
    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var, lap: &Arc<SparseMatrix>) -> Result<Var> {
        let xv = tape.value(x);
        if xv.cols() != self.d_in {
            return Err(dim_err("pseudo_forward", format!("{} input columns", self.d_in), xv.cols().to_string()));
        }
        if xv.rows() != lap.n_rows() {
            return Err(dim_err("pseudo_forward", format!("{} nodes", lap.n_rows()), xv.rows().to_string()));
        }
        let h = Self::dense(tape, store, x, "bwgnn.pre.w1", "bwgnn.pre.b1", true)?;
        let h = Self::dense(tape, store, h, "bwgnn.pre.w2", "bwgnn.pre.b2", true)?;
        let mut bands = Vec::with_capacity(self.cfg.order + 1);
        for i in 0..=self.cfg.order {
            bands.push(apply_beta_kernel(tape, lap, h, i, self.cfg.order)?);
        }
        let agg = match self.cfg.aggregation {
            Aggregation::Concat => tape.concat(&bands, 1)?,
            Aggregation::Sum => {
                let mut acc = bands[0];
                for &b in &bands[1..] {
                    acc = tape.add(acc, b)?;
                }
                acc
            }
        };
        let o = Self::dense(tape, store, agg, "bwgnn.post.w1", "bwgnn.post.b1", true)?;
        let o = Self::dense(tape, store, o, "bwgnn.post.w2", "bwgnn.post.b2", false)?;
        Ok(tape.sigmoid(o))
    }

    pub fn scores(&self, store: &ParameterStore, x: &DenseArray, lap: &Arc<SparseMatrix>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let p = self.forward(&mut tape, store, xv, lap)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Fit on labeled nodes with class-balanced binary cross-entropy and
    /// freeze the `bwgnn.` parameters afterwards. Returns the loss per epoch.
    pub fn pretrain(
        &self,
        store: &mut ParameterStore,
        x: &DenseArray,
        lap: &Arc<SparseMatrix>,
        labels: &[Option<u8>],
        labeled_mask: &[bool],
        epochs: usize,
    ) -> Result<Vec<f64>> {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labeled_mask[i] && labels[i].is_some()).collect();
        let pos = idx.iter().filter(|&&i| labels[i] == Some(1)).count();
        let neg = idx.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(GdgmError::SingleClass(if pos == 0 { 0 } else { 1 }));
        }
        // separate store so optimizer state and step count stay local
        let mut local = store.extract(PREFIX);
        local.set_trainable(PREFIX, true);
        let w_pos = idx.len() as f64 / (2.0 * pos as f64);
        let w_neg = idx.len() as f64 / (2.0 * neg as f64);
        let y = DenseArray::from_vec(idx.len(), 1, idx.iter().map(|&i| f64::from(labels[i].unwrap())).collect());
        let w = DenseArray::from_vec(
            idx.len(),
            1,
            idx.iter().map(|&i| if labels[i] == Some(1) { w_pos } else { w_neg } / idx.len() as f64).collect(),
        );
        let adam = AdamConfig { lr: self.cfg.lr, ..AdamConfig::default() };
        let idx = Arc::new(idx);
        let mut trace = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let p = self.forward(&mut tape, &local, xv, lap)?;
            let loss = bce(&mut tape, p, idx.clone(), &y, &w)?;
            let l = tape.value(loss).item();
            if !l.is_finite() {
                return Err(GdgmError::NonFiniteLoss { epoch });
            }
            trace.push(l);
            tape.backward_into(loss, &mut local)?;
            optimizer_step(&mut local, adam)?;
        }
        for (name, param) in local.iter() {
            store.set_frozen(name, param.value.clone());
        }
        Ok(trace)
    }
}

/// Weighted binary cross-entropy over the rows in `idx`.
fn bce(tape: &mut Tape, p: Var, idx: Arc<Vec<usize>>, y: &DenseArray, w: &DenseArray) -> Result<Var> {
    let ps = tape.gather_rows(p, idx)?;
    let yv = tape.constant(y.clone());
    let one_minus_y = tape.constant(y.map(|v| 1.0 - v));
    let wv = tape.constant(w.clone());
    let lp = tape.log(ps, 1e-12);
    let q = tape.affine(ps, -1.0, 1.0);
    let lq = tape.log(q, 1e-12);
    let a = tape.mul(yv, lp)?;
    let b = tape.mul(one_minus_y, lq)?;
    let s = tape.add(a, b)?;
    let s = tape.mul(s, wv)?;
    let total = tape.sum(s);
    Ok(tape.scale(total, -1.0))
}

/// Strict threshold `p > z`; nodes with a known training label keep it.
pub fn threshold_labels(p: &[f64], z: f64, known: &[Option<u8>]) -> Vec<u8> {
    p.iter()
        .zip(known)
        .map(|(&pi, k)| match k {
            Some(l) => *l,
            None => u8::from(pi > z),
        })
        .collect()
}

/// Deterministic initialization helper for callers without their own RNG.
pub fn init_with_seed(labeler: &PseudoLabeler, store: &mut ParameterStore, seed: u64) -> Result<()> {
    labeler.init_params(store, &mut ChaCha8Rng::seed_from_u64(seed))
}
