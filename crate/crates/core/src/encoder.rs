//! ODE-RNN sequence encoder.
//!
//! Between observations the hidden state follows `dh/dt = f(h)` where `f` is
//! a two-layer tanh perceptron; at each observation a GRU cell folds in the
//! new feature vector. The embedding of a sequence is its final hidden state.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{DenseArray, ParameterStore, Tape, Var};
use crate::error::{dim_err, GdgmError, Result};

/// Time-stamped observations of one transaction's history.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSequence {
    times: Vec<f64>,
    observations: Vec<Vec<f64>>,
}

impl ObservationSequence {
    pub fn new(times: Vec<f64>, observations: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() {
            return Err(GdgmError::Empty("ObservationSequence"));
        }
        if times.len() != observations.len() {
            return Err(dim_err("ObservationSequence", format!("{} observations", times.len()), observations.len().to_string()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GdgmError::InvalidArgument("observation times must be strictly increasing".into()));
        }
        let d = observations[0].len();
        if observations.iter().any(|o| o.len() != d) {
            return Err(dim_err("ObservationSequence", format!("width {d} for every observation"), "ragged"));
        }
        Ok(Self { times, observations })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn observations(&self) -> &[Vec<f64>] {
        &self.observations
    }

    pub fn width(&self) -> usize {
        self.observations[0].len()
    }

    fn same_prefix(&self, other: &Self, n: usize) -> bool {
        (0..n).all(|j| {
            self.times[j].to_bits() == other.times[j].to_bits()
                && self.observations[j]
                    .iter()
                    .zip(&other.observations[j])
                    .all(|(a, b)| a.to_bits() == b.to_bits())
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    Euler,
    Rk4,
}

impl std::str::FromStr for Solver {
    type Err = GdgmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Solver::Euler),
            "rk4" => Ok(Solver::Rk4),
            other => Err(GdgmError::Config(format!("unknown solver `{other}`"))),
        }
    }
}

impl std::fmt::Display for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Solver::Euler => "euler",
            Solver::Rk4 => "rk4",
        })
    }
}

/// Which recurrence produces the embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    /// Learned dynamics between observations, GRU at observations.
    OdeRnn,
    /// Plain GRU chain; gaps between observations are ignored.
    Rnn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub d_in: usize,
    pub h_dim: usize,
    pub solver: Solver,
    /// Solver steps per observation interval.
    pub steps: usize,
    pub max_len: usize,
    /// Multiplier applied to raw time gaps before integration.
    pub time_scale: f64,
}

impl EncoderConfig {
    pub fn new(d_in: usize, h_dim: usize) -> Self {
        Self {
            d_in,
            h_dim,
            solver: Solver::Rk4,
            steps: 4,
            max_len: 32,
            time_scale: 1.0,
        }
    }
}

/// Integrate `dh/dt = f(h)` with a fixed step count per row.
///
/// `h` is `n x d`; `dt` holds each row's interval length. A zero interval
/// returns the row unchanged.
pub fn integrate<F>(tape: &mut Tape, h: Var, dt: &[f64], solver: Solver, steps: usize, mut f: F) -> Result<Var>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    if steps == 0 {
        return Err(GdgmError::InvalidArgument("solver needs at least one step".into()));
    }
    let n = tape.value(h).rows();
    if dt.len() != n {
        return Err(dim_err("integrate", format!("{n} intervals"), dt.len().to_string()));
    }
    if let Some(&bad) = dt.iter().find(|&&d| d < 0.0) {
        return Err(GdgmError::Interval { t0: 0.0, t1: bad });
    }
    let col = |scale: f64| DenseArray::from_vec(n, 1, dt.iter().map(|d| d * scale / steps as f64).collect());
    let mut h = h;
    match solver {
        Solver::Euler => {
            let step = tape.constant(col(1.0));
            for s in 0..steps {
                let k = f(tape, h)?;
                let inc = tape.mul(step, k)?;
                h = tape.add(h, inc)?;
                check_finite(tape, h, s)?;
            }
        }
        Solver::Rk4 => {
            let half = tape.constant(col(0.5));
            let full = tape.constant(col(1.0));
            let sixth = tape.constant(col(1.0 / 6.0));
            for s in 0..steps {
                let k1 = f(tape, h)?;
                let d1 = tape.mul(half, k1)?;
                let h1 = tape.add(h, d1)?;
                let k2 = f(tape, h1)?;
                let d2 = tape.mul(half, k2)?;
                let h2 = tape.add(h, d2)?;
                let k3 = f(tape, h2)?;
                let d3 = tape.mul(full, k3)?;
                let h3 = tape.add(h, d3)?;
                let k4 = f(tape, h3)?;
                let k23 = tape.add(k2, k3)?;
                let k23 = tape.scale(k23, 2.0);
                let sum = tape.add(k1, k23)?;
                let sum = tape.add(sum, k4)?;
                let inc = tape.mul(sixth, sum)?;
                h = tape.add(h, inc)?;
                check_finite(tape, h, s)?;
            }
        }
    }
    Ok(h)
}

fn check_finite(tape: &Tape, h: Var, step: usize) -> Result<()> {
    if tape.value(h).is_finite() {
        Ok(())
    } else {
        Err(GdgmError::Divergence { step })
    }
}

/// Parameter names under the `enc.` prefix.
pub mod names {
    pub const DYN_W1: &str = "enc.dyn.w1";
    pub const DYN_B1: &str = "enc.dyn.b1";
    pub const DYN_W2: &str = "enc.dyn.w2";
    pub const DYN_B2: &str = "enc.dyn.b2";
    pub const GRU_WZ: &str = "enc.gru.wz";
    pub const GRU_UZ: &str = "enc.gru.uz";
    pub const GRU_BZ: &str = "enc.gru.bz";
    pub const GRU_WR: &str = "enc.gru.wr";
    pub const GRU_UR: &str = "enc.gru.ur";
    pub const GRU_BR: &str = "enc.gru.br";
    pub const GRU_WN: &str = "enc.gru.wn";
    pub const GRU_UN: &str = "enc.gru.un";
    pub const GRU_BN: &str = "enc.gru.bn";
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub cfg: EncoderConfig,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        if cfg.h_dim == 0 || cfg.d_in == 0 {
            return Err(GdgmError::Config("encoder widths must be positive".into()));
        }
        if cfg.steps == 0 || cfg.max_len == 0 {
            return Err(GdgmError::Config("encoder steps and max_len must be positive".into()));
        }
        if !(cfg.time_scale.is_finite() && cfg.time_scale > 0.0) {
            return Err(GdgmError::Config(format!("time scale {} must be positive", cfg.time_scale)));
        }
        Ok(Self { cfg })
    }

    pub fn init_params<R: Rng>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        use names::*;
        let (d, h) = (self.cfg.d_in, self.cfg.h_dim);
        store.init_weight(DYN_W1, h, h, rng)?;
        store.init_zeros(DYN_B1, 1, h)?;
        store.init_weight(DYN_W2, h, h, rng)?;
        store.init_zeros(DYN_B2, 1, h)?;
        for (w, u, b) in [(GRU_WZ, GRU_UZ, GRU_BZ), (GRU_WR, GRU_UR, GRU_BR), (GRU_WN, GRU_UN, GRU_BN)] {
            store.init_weight(w, d, h, rng)?;
            store.init_weight(u, h, h, rng)?;
            store.init_zeros(b, 1, h)?;
        }
        Ok(())
    }

    /// `f(h) = tanh(h W1 + b1) W2 + b2`, row-wise.
    pub fn dynamics(&self, tape: &mut Tape, store: &ParameterStore, h: Var) -> Result<Var> {
        use names::*;
        let w1 = tape.param(store, DYN_W1)?;
        let b1 = tape.param(store, DYN_B1)?;
        let w2 = tape.param(store, DYN_W2)?;
        let b2 = tape.param(store, DYN_B2)?;
        let a = tape.matmul(h, w1)?;
        let a = tape.add(a, b1)?;
        let a = tape.tanh(a);
        let o = tape.matmul(a, w2)?;
        tape.add(o, b2)
    }

    /// Evolve `h` over per-row intervals `dt` (already in integration units).
    pub fn evolve(&self, tape: &mut Tape, store: &ParameterStore, h: Var, dt: &[f64]) -> Result<Var> {
        integrate(tape, h, dt, self.cfg.solver, self.cfg.steps, |t, x| self.dynamics(t, store, x))
    }

    /// Solve the learned dynamics for a single state over `[t0, t1]`.
    pub fn ode_int(&self, store: &ParameterStore, h0: &[f64], t0: f64, t1: f64) -> Result<Vec<f64>> {
        if t1 < t0 {
            return Err(GdgmError::Interval { t0, t1 });
        }
        if h0.len() != self.cfg.h_dim {
            return Err(dim_err("ode_int", format!("state width {}", self.cfg.h_dim), h0.len().to_string()));
        }
        let mut tape = Tape::new();
        let h = tape.leaf(DenseArray::row(h0.to_vec()));
        let out = self.evolve(&mut tape, store, h, &[t1 - t0])?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Gated recurrent update:
    ///
    /// ```text
    /// z = sigmoid(x Wz + h Uz + bz)
    /// r = sigmoid(x Wr + h Ur + br)
    /// n = tanh(x Wn + (r * h) Un + bn)
    /// h' = (1 - z) * n + z * h
    /// ```
    pub fn gru_cell_var(&self, tape: &mut Tape, store: &ParameterStore, x: Var, h: Var) -> Result<Var> {
        use names::*;
        let (xv, hv) = (tape.value(x), tape.value(h));
        if xv.cols() != self.cfg.d_in || hv.cols() != self.cfg.h_dim || xv.rows() != hv.rows() {
            return Err(dim_err(
                "gru_cell",
                format!("n x {} input and n x {} state", self.cfg.d_in, self.cfg.h_dim),
                format!("{:?} and {:?}", xv.shape(), hv.shape()),
            ));
        }
        let gate = |tape: &mut Tape, w: &str, u: &str, b: &str, hin: Var| -> Result<Var> {
            let w = tape.param(store, w)?;
            let u = tape.param(store, u)?;
            let b = tape.param(store, b)?;
            let xw = tape.matmul(x, w)?;
            let hu = tape.matmul(hin, u)?;
            let s = tape.add(xw, hu)?;
            tape.add(s, b)
        };
        let z = gate(tape, GRU_WZ, GRU_UZ, GRU_BZ, h)?;
        let z = tape.sigmoid(z);
        let r = gate(tape, GRU_WR, GRU_UR, GRU_BR, h)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h)?;
        let n = gate(tape, GRU_WN, GRU_UN, GRU_BN, rh)?;
        let n = tape.tanh(n);
        // h' = n + z * (h - n)
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        tape.add(n, zd)
    }

    pub fn gru_cell(&self, store: &ParameterStore, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let xv = tape.leaf(DenseArray::row(x.to_vec()));
        let hv = tape.leaf(DenseArray::row(h.to_vec()));
        let out = self.gru_cell_var(&mut tape, store, xv, hv)?;
        Ok(tape.value(out).data().to_vec())
    }

    pub fn encode_sequence(&self, store: &ParameterStore, seq: &ObservationSequence) -> Result<Vec<f64>> {
        let out = self.encode_batch(store, std::slice::from_ref(seq))?;
        Ok(out.row_slice(0).to_vec())
    }

    pub fn encode_batch(&self, store: &ParameterStore, seqs: &[ObservationSequence]) -> Result<DenseArray> {
        let mut tape = Tape::new();
        let v = self.encode_batch_var(&mut tape, store, seqs, EncoderKind::OdeRnn)?;
        Ok(tape.value(v).clone())
    }

    pub fn encode_rnn_variant(&self, store: &ParameterStore, seqs: &[ObservationSequence]) -> Result<DenseArray> {
        let mut tape = Tape::new();
        let v = self.encode_batch_var(&mut tape, store, seqs, EncoderKind::Rnn)?;
        Ok(tape.value(v).clone())
    }

    /// Encode a batch on `tape`, returning an `n x h_dim` node whose row `i`
    /// is the final hidden state of `seqs[i]`.
    ///
    /// Sequences that are bit-identical prefixes of a longer sequence in the
    /// batch are read off that sequence's intermediate state instead of being
    /// re-run; each row's arithmetic is the same either way.
    pub fn encode_batch_var(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        seqs: &[ObservationSequence],
        kind: EncoderKind,
    ) -> Result<Var> {
        if seqs.is_empty() {
            return Err(GdgmError::Empty("encode_batch"));
        }
        if let Some(bad) = seqs.iter().find(|s| s.width() != self.cfg.d_in) {
            return Err(dim_err("encode_batch", format!("observation width {}", self.cfg.d_in), bad.width().to_string()));
        }
        let plan = PrefixPlan::build(seqs);
        let reps: Vec<&ObservationSequence> = plan.reps.iter().map(|&i| &seqs[i]).collect();
        let max_len = reps[0].len();
        let h_dim = self.cfg.h_dim;

        let mut h = tape.constant(DenseArray::zeros(reps.len(), h_dim));
        let mut states: Vec<Var> = Vec::with_capacity(max_len);
        let mut offsets: Vec<usize> = Vec::with_capacity(max_len);
        let mut total_rows = 0;
        for k in 0..max_len {
            // reps are sorted by decreasing length, so active rows are a prefix
            let active = reps.iter().take_while(|s| s.len() > k).count();
            if active < tape.value(h).rows() {
                h = tape.slice(h, 0, 0, active)?;
            }
            if k > 0 && kind == EncoderKind::OdeRnn {
                let dt: Vec<f64> = reps[..active]
                    .iter()
                    .map(|s| (s.times[k] - s.times[k - 1]) * self.cfg.time_scale)
                    .collect();
                h = self.evolve(tape, store, h, &dt)?;
            }
            let mut x = Vec::with_capacity(active * self.cfg.d_in);
            for s in &reps[..active] {
                x.extend_from_slice(&s.observations[k]);
            }
            let x = tape.constant(DenseArray::from_vec(active, self.cfg.d_in, x));
            h = self.gru_cell_var(tape, store, x, h)?;
            states.push(h);
            offsets.push(total_rows);
            total_rows += active;
        }
        let all = if states.len() == 1 { states[0] } else { tape.concat(&states, 0)? };
        let idx: Vec<usize> = plan
            .assignment
            .iter()
            .zip(seqs)
            .map(|(&(rep_pos, _), s)| offsets[s.len() - 1] + rep_pos)
            .collect();
        tape.gather_rows(all, Arc::new(idx))
    }
}

/// Maps each sequence onto a representative it is a prefix of.
struct PrefixPlan {
    /// Indices into the batch, sorted by decreasing length.
    reps: Vec<usize>,
    /// `(position in reps, length)` per input sequence.
    assignment: Vec<(usize, usize)>,
}

impl PrefixPlan {
    fn build(seqs: &[ObservationSequence]) -> Self {
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.sort_by(|&a, &b| seqs[b].len().cmp(&seqs[a].len()).then(a.cmp(&b)));
        let key = |s: &ObservationSequence| -> (u64, Vec<u64>) {
            (s.times[0].to_bits(), s.observations[0].iter().map(|v| v.to_bits()).collect())
        };
        let mut by_head: HashMap<(u64, Vec<u64>), Vec<usize>> = HashMap::new();
        let mut reps: Vec<usize> = Vec::new();
        let mut rep_of = vec![usize::MAX; seqs.len()];
        for &i in &order {
            let s = &seqs[i];
            let candidates = by_head.entry(key(s)).or_default();
            let found = candidates
                .iter()
                .copied()
                .find(|&r: &usize| seqs[reps[r]].same_prefix(s, s.len()));
            match found {
                Some(r) => rep_of[i] = r,
                None => {
                    let pos = reps.len();
                    reps.push(i);
                    candidates.push(pos);
                    rep_of[i] = pos;
                }
            }
        }
        let assignment = seqs.iter().enumerate().map(|(i, s)| (rep_of[i], s.len())).collect();
        Self { reps, assignment }
    }
}
