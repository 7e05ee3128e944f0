//! Full model: sequence encoder, pseudo-labeler, attention stack and
//! classification head.

use std::sync::Arc;

use rand::Rng;

use crate::attention::{AttentionConfig, HeteroAttention, Neighborhoods};
use crate::autodiff::{DenseArray, ParameterStore, SparseMatrix, Tape, Var};
use crate::encoder::{Encoder, EncoderConfig, EncoderKind, ObservationSequence};
use crate::error::{dim_err, GdgmError, Result};
use crate::graph::{build_graph, canonicalize, sequences_from_transactions, MultiRelationalGraph, TransactionRecord};
use crate::metrics::decide;
use crate::wavelet::{normalized_laplacian, threshold_labels, PseudoLabeler};

use super::config::{RunConfig, Variant};

pub const NORM_MEAN: &str = "norm.mean";
pub const NORM_STD: &str = "norm.std";

/// Per-column standardization fitted on a subset of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(x: &DenseArray, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(GdgmError::Empty("normalizer rows"));
        }
        let d = x.cols();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(x.row_slice(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &r in rows {
            for ((s, v), m) in var.iter_mut().zip(x.row_slice(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Ok(Self { mean, std })
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn apply(&self, x: &DenseArray) -> Result<DenseArray> {
        if x.cols() != self.mean.len() {
            return Err(dim_err("normalize", format!("{} columns", self.mean.len()), x.cols().to_string()));
        }
        let mut out = x.clone();
        for r in 0..x.rows() {
            let v = self.apply_row(x.row_slice(r));
            out.row_slice_mut(r).copy_from_slice(&v);
        }
        Ok(out)
    }

    pub fn store_into(&self, store: &mut ParameterStore) {
        store.set_frozen(NORM_MEAN, DenseArray::row(self.mean.clone()));
        store.set_frozen(NORM_STD, DenseArray::row(self.std.clone()));
    }

    pub fn from_store(store: &ParameterStore) -> Result<Self> {
        let get = |n: &str| {
            store
                .value(n)
                .map(|v| v.data().to_vec())
                .ok_or_else(|| GdgmError::Checkpoint(format!("missing `{n}`")))
        };
        Ok(Self { mean: get(NORM_MEAN)?, std: get(NORM_STD)? })
    }
}

/// Reciprocal of the 99th-percentile positive gap between consecutive
/// transactions of the same account, so nearly every integration interval
/// is at most one unit long; 1 when there are no such gaps.
pub fn time_scale(records: &[TransactionRecord]) -> f64 {
    let mut last = std::collections::HashMap::new();
    let mut sorted: Vec<&TransactionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then(a.txn_id.cmp(&b.txn_id)));
    let mut gaps = Vec::new();
    for r in sorted {
        if let Some(prev) = last.insert(r.account.as_str(), r.timestamp) {
            let g = r.timestamp - prev;
            if g > 0.0 {
                gaps.push(g);
            }
        }
    }
    if gaps.is_empty() {
        return 1.0;
    }
    gaps.sort_by(f64::total_cmp);
    1.0 / gaps[(gaps.len() * 99 / 100).min(gaps.len() - 1)]
}

/// Graph, normalized features and account sequences for one dataset.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub records: Vec<TransactionRecord>,
    pub graph: MultiRelationalGraph,
    pub x_raw: DenseArray,
    pub seqs: Vec<ObservationSequence>,
    pub lap: Arc<SparseMatrix>,
}

impl Prepared {
    /// Canonicalize, build the graph, and normalize features. With
    /// `no_hetero` the relations collapse into their union.
    pub fn new(records: &[TransactionRecord], cfg: &RunConfig, norm: &Normalizer) -> Result<Self> {
        let records = canonicalize(records)?;
        if records.is_empty() {
            return Err(GdgmError::Empty("dataset"));
        }
        let mut graph = build_graph(&records, &cfg.graph)?;
        if cfg.variant == Variant::NoHetero {
            graph = graph.homogeneous();
        }
        let x_raw = norm.apply(&graph.features)?;
        let normalized: Vec<TransactionRecord> = records
            .iter()
            .map(|r| TransactionRecord { features: norm.apply_row(&r.features), ..r.clone() })
            .collect();
        let seqs = sequences_from_transactions(&normalized, cfg.max_len)?;
        let lap = Arc::new(normalized_laplacian(&graph));
        Ok(Self { records, graph, x_raw, seqs, lap })
    }

    pub fn n(&self) -> usize {
        self.graph.n
    }
}

/// Per-node class probabilities and hard decisions.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `n x 2`; column 1 is the fraud probability.
    pub probs: DenseArray,
    pub decisions: Vec<u8>,
}

impl Prediction {
    pub fn from_probs(probs: DenseArray, z: f64) -> Self {
        let decisions = (0..probs.rows()).map(|i| decide(probs.get(i, 1), z)).collect();
        Self { probs, decisions }
    }

    pub fn positive(&self) -> Vec<f64> {
        (0..self.probs.rows()).map(|i| self.probs.get(i, 1)).collect()
    }
}

/// Two-layer perceptron followed by a softmax over the two classes.
pub fn classify(tape: &mut Tape, store: &ParameterStore, h: Var) -> Result<Var> {
    let w1 = tape.param(store, "cls.w1")?;
    let b1 = tape.param(store, "cls.b1")?;
    let w2 = tape.param(store, "cls.w2")?;
    let b2 = tape.param(store, "cls.b2")?;
    let z = tape.matmul(h, w1)?;
    let z = tape.add(z, b1)?;
    let z = tape.relu(z);
    let z = tape.matmul(z, w2)?;
    let z = tape.add(z, b2)?;
    tape.softmax(z, 1)
}

/// One supervised term of the loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Target {
    pub node: usize,
    pub class: u8,
    pub weight: f64,
}

/// `-(1/m) sum_k w_k log p[node_k, class_k]` with the log clamped at 1e-12.
pub fn cross_entropy(tape: &mut Tape, probs: Var, targets: &[Target]) -> Result<Var> {
    if targets.is_empty() {
        return Err(GdgmError::Empty("cross_entropy mask"));
    }
    let idx = Arc::new(targets.iter().map(|t| t.node).collect::<Vec<_>>());
    let p = tape.gather_rows(probs, idx)?;
    let lp = tape.log(p, 1e-12);
    let m = targets.len() as f64;
    let mut y = DenseArray::zeros(targets.len(), 2);
    for (k, t) in targets.iter().enumerate() {
        y.set(k, usize::from(t.class), t.weight / m);
    }
    let y = tape.constant(y);
    let s = tape.mul(lp, y)?;
    let total = tape.sum(s);
    Ok(tape.scale(total, -1.0))
}

/// Unweighted cross-entropy of `probs` (`n x 2`) over the masked nodes.
pub fn cross_entropy_value(probs: &DenseArray, labels: &[u8], mask: &[bool]) -> Result<f64> {
    let targets: Vec<Target> = (0..labels.len())
        .filter(|&i| mask[i])
        .map(|i| Target { node: i, class: labels[i], weight: 1.0 })
        .collect();
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone());
    let l = cross_entropy(&mut tape, p, &targets)?;
    Ok(tape.value(l).item())
}

/// Output of one forward pass.
pub struct Forward {
    pub probs: Var,
    /// Labels used to group neighbors.
    pub grouping: Vec<u8>,
    /// Pseudo-label probability per node, when the labeler ran.
    pub pseudo_scores: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct GdgmModel {
    pub cfg: RunConfig,
    pub encoder: Encoder,
    pub labeler: PseudoLabeler,
    pub attention: HeteroAttention,
    pub d_raw: usize,
}

impl GdgmModel {
    pub fn new(cfg: &RunConfig, d_raw: usize, n_relations: usize, time_scale: f64) -> Result<Self> {
        let enc_cfg = EncoderConfig {
            solver: cfg.solver,
            steps: cfg.solver_steps,
            max_len: cfg.max_len,
            time_scale,
            ..EncoderConfig::new(d_raw, cfg.h_dim)
        };
        let d_node = d_raw + cfg.h_dim;
        let att_cfg = AttentionConfig {
            hidden: cfg.att_hidden,
            q_dim: cfg.q_dim,
            layers: cfg.layers,
            slope: cfg.slope,
            n_groups: if cfg.variant == Variant::NoHetero { 1 } else { 2 },
            context: cfg.group_context,
            ..AttentionConfig::new(d_node, n_relations)
        };
        Ok(Self {
            cfg: cfg.clone(),
            encoder: Encoder::new(enc_cfg)?,
            labeler: PseudoLabeler::new(cfg.wavelet(), d_node)?,
            attention: HeteroAttention::new(att_cfg)?,
            d_raw,
        })
    }

    pub fn uses_pseudo(&self) -> bool {
        self.cfg.variant != Variant::NoPseudo
    }

    pub fn init_params<R: Rng>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.encoder.init_params(store, rng)?;
        self.labeler.init_params(store, rng)?;
        self.attention.init_params(store, rng)?;
        let w = self.attention.cfg.final_width();
        store.init_weight("cls.w1", w, self.cfg.cls_hidden, rng)?;
        store.init_zeros("cls.b1", 1, self.cfg.cls_hidden)?;
        store.init_weight("cls.w2", self.cfg.cls_hidden, 2, rng)?;
        store.init_zeros("cls.b2", 1, 2)?;
        Ok(())
    }

    fn encoder_kind(&self) -> EncoderKind {
        if self.cfg.variant == Variant::NoOde {
            EncoderKind::Rnn
        } else {
            EncoderKind::OdeRnn
        }
    }

    /// Node inputs `x_raw || encoder(seq)`.
    pub fn node_inputs(&self, tape: &mut Tape, store: &ParameterStore, data: &Prepared) -> Result<Var> {
        let h = self.encoder.encode_batch_var(tape, store, &data.seqs, self.encoder_kind())?;
        let x = tape.constant(data.x_raw.clone());
        tape.concat(&[x, h], 1)
    }

    /// Node inputs without recording gradients.
    pub fn node_inputs_value(&self, store: &ParameterStore, data: &Prepared) -> Result<DenseArray> {
        let mut tape = Tape::new();
        let x = self.node_inputs(&mut tape, store, data)?;
        Ok(tape.value(x).clone())
    }

    /// Group labels: known labels where given, otherwise the thresholded
    /// labeler score, or group 0 when pseudo-labels are disabled.
    pub fn grouping(
        &self,
        store: &ParameterStore,
        x: &DenseArray,
        data: &Prepared,
        known: &[Option<u8>],
    ) -> Result<(Vec<u8>, Option<Vec<f64>>)> {
        if self.uses_pseudo() {
            let p = self.labeler.scores(store, x, &data.lap)?;
            Ok((threshold_labels(&p, self.cfg.pseudo_threshold, known), Some(p)))
        } else {
            Ok((known.iter().map(|k| k.unwrap_or(0)).collect(), None))
        }
    }

    /// Full forward pass. `fixed` overrides the grouping labels.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        data: &Prepared,
        known: &[Option<u8>],
        fixed: Option<(&[u8], Option<&[f64]>)>,
    ) -> Result<Forward> {
        let x = self.node_inputs(tape, store, data)?;
        let (grouping, pseudo_scores) = match fixed {
            Some((g, s)) => (g.to_vec(), s.map(<[f64]>::to_vec)),
            None => {
                let xv = tape.value(x).clone();
                self.grouping(store, &xv, data, known)?
            }
        };
        let hoods = Neighborhoods::new(&data.graph, &grouping, self.attention.cfg.n_groups)?;
        let out = self.attention.forward(tape, store, x, &hoods)?;
        let probs = classify(tape, store, out.final_embedding)?;
        Ok(Forward { probs, grouping, pseudo_scores })
    }
}
