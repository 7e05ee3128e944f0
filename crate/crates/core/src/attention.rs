//! Two-level heterogeneous graph attention.
//!
//! Per layer and relation `r`, neighbor scores
//! `leaky(a_r . [W_r h_v || W_r h_u])` weight the previous-layer embeddings of
//! neighbors (intra-attention). For each `(r, g)` slot, where `g` is the
//! neighbor's (pseudo-)label, the aggregated context is combined with the
//! node's own embedding through `ReLU(W_intra,r [h_v || ctx])`. Inter-attention
//! then mixes all `R * G` slot features with weights
//! `softmax(q . tanh(W_inter1 h_v + W_inter2 h_{v,r,g}))`.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{attention_weights, softmax_in_place, DenseArray, ParameterStore, Segments, Tape, Var};
use crate::error::{dim_err, GdgmError, Result};
use crate::graph::MultiRelationalGraph;

pub const PREFIX: &str = "hga.";

/// How a `(relation, group)` context vector is formed from group members.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupContext {
    /// Relation-level attention scores, normalized within the group.
    Attention,
    /// Arithmetic mean of the group members.
    Mean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    pub d_in: usize,
    pub hidden: usize,
    pub q_dim: usize,
    pub layers: usize,
    pub slope: f64,
    pub n_relations: usize,
    pub n_groups: usize,
    pub context: GroupContext,
}

impl AttentionConfig {
    pub fn new(d_in: usize, n_relations: usize) -> Self {
        Self {
            d_in,
            hidden: 64,
            q_dim: 128,
            layers: 2,
            slope: 0.2,
            n_relations,
            n_groups: 2,
            context: GroupContext::Attention,
        }
    }

    pub fn slots(&self) -> usize {
        self.n_relations * self.n_groups
    }

    pub fn final_width(&self) -> usize {
        self.hidden * (1 + self.slots())
    }

    fn width_before(&self, layer: usize) -> usize {
        if layer == 0 {
            self.d_in
        } else {
            self.hidden
        }
    }
}

/// Neighbor index structures for one graph and one label assignment.
#[derive(Clone, Debug)]
pub struct Neighborhoods {
    /// `all[r]`: segment per node over `N_{r,*}(v)`.
    pub all: Vec<Arc<Segments>>,
    /// `grouped[r][g]`: segment per node over `N_{r,g}(v)`.
    pub grouped: Vec<Vec<Arc<Segments>>>,
}

impl Neighborhoods {
    /// Group by `labels`; with `n_groups == 1` every neighbor is group 0.
    pub fn new(graph: &MultiRelationalGraph, labels: &[u8], n_groups: usize) -> Result<Self> {
        if labels.len() != graph.n {
            return Err(GdgmError::InvalidArgument(format!("{} labels for {} nodes", labels.len(), graph.n)));
        }
        if n_groups == 0 || n_groups > 2 {
            return Err(GdgmError::Config(format!("{n_groups} groups; expected 1 or 2")));
        }
        let mut all = Vec::with_capacity(graph.num_relations());
        let mut grouped = Vec::with_capacity(graph.num_relations());
        for rel in &graph.relations {
            let mut a = Segments::new();
            let mut gs = vec![Segments::new(); n_groups];
            for v in 0..graph.n {
                let nb = rel.neighbors(v);
                a.push(v, nb.iter().copied());
                for (g, seg) in gs.iter_mut().enumerate() {
                    seg.push(v, nb.iter().copied().filter(|&u| n_groups == 1 || usize::from(labels[u]) == g));
                }
            }
            all.push(Arc::new(a));
            grouped.push(gs.into_iter().map(Arc::new).collect());
        }
        Ok(Self { all, grouped })
    }
}

/// Output of the full attention stack.
#[derive(Clone, Debug)]
pub struct StackOutput {
    pub final_embedding: Var,
    pub last_hidden: Var,
    /// Slot features of the last layer in `(relation asc, group asc)` order.
    pub last_slots: Vec<Var>,
    /// Inter-attention weights per layer, `n x slots`.
    pub inter_alpha: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeteroAttention {
    pub cfg: AttentionConfig,
}

fn pname(layer: usize, rest: &str) -> String {
    format!("hga.l{layer}.{rest}")
}

impl HeteroAttention {
    pub fn new(cfg: AttentionConfig) -> Result<Self> {
        if cfg.layers == 0 || cfg.hidden == 0 || cfg.q_dim == 0 || cfg.d_in == 0 || cfg.n_relations == 0 {
            return Err(GdgmError::Config("attention sizes must be positive".into()));
        }
        if cfg.n_groups == 0 || cfg.n_groups > 2 {
            return Err(GdgmError::Config(format!("{} groups; expected 1 or 2", cfg.n_groups)));
        }
        Ok(Self { cfg })
    }

    pub fn init_params<R: Rng>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        let c = &self.cfg;
        for r in 0..c.n_relations {
            store.init_weight(&format!("hga.r{r}.a"), 2 * c.hidden, 1, rng)?;
        }
        store.init_weight("hga.q", c.q_dim, 1, rng)?;
        for l in 0..c.layers {
            let din = c.width_before(l);
            for r in 0..c.n_relations {
                store.init_weight(&pname(l, &format!("r{r}.w")), din, c.hidden, rng)?;
                store.init_weight(&pname(l, &format!("r{r}.intra")), 2 * din, c.hidden, rng)?;
            }
            store.init_weight(&pname(l, "inter1"), din, c.q_dim, rng)?;
            store.init_weight(&pname(l, "inter2"), c.hidden, c.q_dim, rng)?;
        }
        Ok(())
    }

    /// Center and member score columns `(W_r h) a_r[..d]`, `(W_r h) a_r[d..]`.
    fn scores(&self, tape: &mut Tape, store: &ParameterStore, h: Var, layer: usize, r: usize) -> Result<(Var, Var)> {
        let w = tape.param(store, &pname(layer, &format!("r{r}.w")))?;
        let a = tape.param(store, &format!("hga.r{r}.a"))?;
        let proj = tape.matmul(h, w)?;
        let d = self.cfg.hidden;
        let a_c = tape.slice(a, 0, 0, d)?;
        let a_m = tape.slice(a, 0, d, 2 * d)?;
        let sc = tape.matmul(proj, a_c)?;
        let sm = tape.matmul(proj, a_m)?;
        Ok((sc, sm))
    }

    /// Attention-weighted sum of previous-layer neighbor embeddings over
    /// each segment; empty segments give zero rows.
    pub fn intra_attention(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        h: Var,
        layer: usize,
        r: usize,
        segments: &Arc<Segments>,
    ) -> Result<Var> {
        let (sc, sm) = self.scores(tape, store, h, layer, r)?;
        tape.segment_attention(sc, sm, h, segments.clone(), self.cfg.slope)
    }

    /// Intra-attention weights of one segment, for inspection.
    pub fn intra_weights(
        &self,
        store: &ParameterStore,
        h: &DenseArray,
        layer: usize,
        r: usize,
        segments: &Segments,
        s: usize,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let (sc, sm) = self.scores(&mut tape, store, hv, layer, r)?;
        Ok(attention_weights(tape.value(sc).data(), tape.value(sm).data(), segments, self.cfg.slope, s))
    }

    /// `ReLU([h_v || ctx] W_intra,r)`.
    pub fn intra_update(&self, tape: &mut Tape, store: &ParameterStore, h: Var, ctx: Var, layer: usize, r: usize) -> Result<Var> {
        let w = tape.param(store, &pname(layer, &format!("r{r}.intra")))?;
        let cat = tape.concat(&[h, ctx], 1)?;
        let y = tape.matmul(cat, w)?;
        Ok(tape.relu(y))
    }

    /// Mean of member rows per segment.
    pub fn group_mean(&self, tape: &mut Tape, h: Var, segments: &Arc<Segments>) -> Result<Var> {
        tape.segment_mean(h, segments.clone())
    }

    /// Mix slot features with `softmax_k(q . tanh(h W1 + f_k W2))`.
    /// Returns the mixed embedding and the `n x K` weight matrix.
    pub fn inter_attention(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        h_prev: Var,
        slots: &[Var],
        layer: usize,
    ) -> Result<(Var, Var)> {
        if slots.is_empty() {
            return Err(GdgmError::Empty("inter_attention"));
        }
        let w1 = tape.param(store, &pname(layer, "inter1"))?;
        let w2 = tape.param(store, &pname(layer, "inter2"))?;
        let q = tape.param(store, "hga.q")?;
        let base = tape.matmul(h_prev, w1)?;
        let mut omegas = Vec::with_capacity(slots.len());
        for &f in slots {
            let fw = tape.matmul(f, w2)?;
            let s = tape.add(base, fw)?;
            let s = tape.tanh(s);
            omegas.push(tape.matmul(s, q)?);
        }
        let omega = tape.concat(&omegas, 1)?;
        let alpha = tape.softmax(omega, 1)?;
        let mut out: Option<Var> = None;
        for (k, &f) in slots.iter().enumerate() {
            let a = tape.slice(alpha, 1, k, k + 1)?;
            let term = tape.mul(a, f)?;
            out = Some(match out {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        Ok((out.expect("non-empty slots"), alpha))
    }

    /// One layer: returns `(h^l, slot features, inter weights)`.
    pub fn layer_forward(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        h: Var,
        hoods: &Neighborhoods,
        layer: usize,
    ) -> Result<(Var, Vec<Var>, Var)> {
        let c = &self.cfg;
        if hoods.grouped.len() != c.n_relations {
            return Err(dim_err("layer_forward", format!("{} relations", c.n_relations), hoods.grouped.len().to_string()));
        }
        let width = tape.value(h).cols();
        if width != c.width_before(layer) {
            return Err(dim_err("layer_forward", format!("input width {}", c.width_before(layer)), width.to_string()));
        }
        let mut slots = Vec::with_capacity(c.slots());
        for r in 0..c.n_relations {
            let (sc, sm) = match c.context {
                GroupContext::Attention => {
                    let (a, b) = self.scores(tape, store, h, layer, r)?;
                    (Some(a), Some(b))
                }
                GroupContext::Mean => (None, None),
            };
            for g in 0..c.n_groups {
                let seg = &hoods.grouped[r][g];
                let ctx = match (sc, sm) {
                    (Some(sc), Some(sm)) => tape.segment_attention(sc, sm, h, seg.clone(), c.slope)?,
                    _ => self.group_mean(tape, h, seg)?,
                };
                slots.push(self.intra_update(tape, store, h, ctx, layer, r)?);
            }
        }
        let (out, alpha) = self.inter_attention(tape, store, h, &slots, layer)?;
        Ok((out, slots, alpha))
    }

    /// `h^L || concat(h_{r,g}^L)` in relation-then-group order.
    pub fn final_embedding(&self, tape: &mut Tape, last: Var, slots: &[Var]) -> Result<Var> {
        let mut parts = Vec::with_capacity(slots.len() + 1);
        parts.push(last);
        parts.extend_from_slice(slots);
        tape.concat(&parts, 1)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var, hoods: &Neighborhoods) -> Result<StackOutput> {
        let mut h = x;
        let mut slots = Vec::new();
        let mut inter_alpha = Vec::with_capacity(self.cfg.layers);
        for l in 0..self.cfg.layers {
            let (out, s, a) = self.layer_forward(tape, store, h, hoods, l)?;
            h = out;
            slots = s;
            inter_alpha.push(a);
        }
        let final_embedding = self.final_embedding(tape, h, &slots)?;
        Ok(StackOutput {
            final_embedding,
            last_hidden: h,
            last_slots: slots,
            inter_alpha,
        })
    }
}

/// Plain-value softmax used by reference checks.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    softmax_in_place(&mut v);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Relation, RelationKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph(n: usize, rels: Vec<Vec<(usize, usize)>>) -> MultiRelationalGraph {
        let kinds = [RelationKind::SameAccount, RelationKind::SameInstrument, RelationKind::PriceAdjacent];
        MultiRelationalGraph {
            n,
            relations: rels.into_iter().enumerate().map(|(i, e)| Relation::from_edges(kinds[i], n, e)).collect(),
            features: DenseArray::zeros(n, 1),
            labels: vec![None; n],
            timestamps: vec![0.0; n],
            txn_ids: (0..n as u64).collect(),
            train_mask: vec![false; n],
            valid_mask: vec![false; n],
            test_mask: vec![false; n],
        }
    }

    fn small_cfg(d_in: usize, rels: usize) -> AttentionConfig {
        AttentionConfig {
            hidden: 4,
            q_dim: 5,
            ..AttentionConfig::new(d_in, rels)
        }
    }

    fn setup(cfg: AttentionConfig, seed: u64) -> (HeteroAttention, ParameterStore) {
        let m = HeteroAttention::new(cfg).unwrap();
        let mut store = ParameterStore::new();
        m.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (m, store)
    }

    #[test]
    fn single_neighbor_gets_full_weight() {
        let (m, store) = setup(small_cfg(3, 1), 1);
        let g = graph(2, vec![vec![(0, 1)]]);
        let hoods = Neighborhoods::new(&g, &[0, 0], 2).unwrap();
        let x = DenseArray::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]);
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let att = m.intra_attention(&mut t, &store, xv, 0, 0, &hoods.all[0]).unwrap();
        assert_eq!(t.value(att).row_slice(0), x.row_slice(1));
        assert_eq!(m.intra_weights(&store, &x, 0, 0, &hoods.all[0], 0).unwrap(), vec![1.0]);
    }

    #[test]
    fn identical_neighbors_split_evenly() {
        let (m, store) = setup(small_cfg(2, 1), 2);
        let g = graph(3, vec![vec![(0, 1), (0, 2)]]);
        let hoods = Neighborhoods::new(&g, &[0, 0, 0], 1).unwrap();
        let x = DenseArray::from_rows(&[vec![0.3, 0.1], vec![1.0, -1.0], vec![1.0, -1.0]]);
        let w = m.intra_weights(&store, &x, 0, 0, &hoods.all[0], 0).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn zero_intra_weight_gives_zero() {
        let (m, mut store) = setup(small_cfg(2, 1), 3);
        store.value_mut("hga.l0.r0.intra").unwrap().fill(0.0);
        let mut t = Tape::new();
        let h = t.constant(DenseArray::from_rows(&[vec![1.0, 2.0]]));
        let c = t.constant(DenseArray::from_rows(&[vec![3.0, 4.0]]));
        let out = m.intra_update(&mut t, &store, h, c, 0, 0).unwrap();
        assert_eq!(t.value(out).data(), &[0.0; 4]);
    }

    #[test]
    fn identity_intra_passes_nonnegative_concat() {
        let cfg = AttentionConfig { hidden: 4, ..small_cfg(2, 1) };
        let (m, mut store) = setup(cfg, 4);
        *store.value_mut("hga.l0.r0.intra").unwrap() = DenseArray::identity(4);
        let mut t = Tape::new();
        let h = t.constant(DenseArray::from_rows(&[vec![1.0, 2.0]]));
        let c = t.constant(DenseArray::from_rows(&[vec![3.0, 0.0]]));
        let out = m.intra_update(&mut t, &store, h, c, 0, 0).unwrap();
        assert_eq!(t.value(out).data(), &[1.0, 2.0, 3.0, 0.0]);
    }

    #[test]
    fn group_mean_cases() {
        let (m, _) = setup(small_cfg(2, 1), 5);
        let mut segs = Segments::new();
        segs.push(0, [1]);
        segs.push(0, [1, 2]);
        segs.push(0, []);
        let segs = Arc::new(segs);
        let mut t = Tape::new();
        let h = t.constant(DenseArray::from_rows(&[vec![9.0, 9.0], vec![1.5, -2.0], vec![-1.5, 2.0]]));
        let out = m.group_mean(&mut t, h, &segs).unwrap();
        assert_eq!(t.value(out).row_slice(0), &[1.5, -2.0]);
        assert_eq!(t.value(out).row_slice(1), &[0.0, 0.0]);
        assert_eq!(t.value(out).row_slice(2), &[0.0, 0.0]);
    }

    #[test]
    fn zero_q_gives_uniform_mix() {
        let (m, mut store) = setup(small_cfg(3, 3), 6);
        store.value_mut("hga.q").unwrap().fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut t = Tape::new();
        let h = t.constant(DenseArray::from_vec(2, 3, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()));
        let slots: Vec<Var> = (0..6)
            .map(|_| t.constant(DenseArray::from_vec(2, 4, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())))
            .collect();
        let (out, alpha) = m.inter_attention(&mut t, &store, h, &slots, 0).unwrap();
        assert!(t.value(alpha).data().iter().all(|&a| (a - 1.0 / 6.0).abs() < 1e-15));
        for i in 0..2 {
            for j in 0..4 {
                let mean: f64 = slots.iter().map(|&s| t.value(s).get(i, j)).sum::<f64>() / 6.0;
                assert!((t.value(out).get(i, j) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn final_width_is_seven_hidden() {
        let cfg = small_cfg(3, 3);
        assert_eq!(cfg.final_width(), 7 * cfg.hidden);
        let (m, store) = setup(cfg, 7);
        let g = graph(4, vec![vec![(0, 1)], vec![(1, 2)], vec![]]);
        let hoods = Neighborhoods::new(&g, &[0, 1, 0, 1], 2).unwrap();
        let mut t = Tape::new();
        let x = t.constant(DenseArray::full(4, 3, 0.5));
        let out = m.forward(&mut t, &store, x, &hoods).unwrap();
        assert_eq!(t.value(out.final_embedding).cols(), 28);
    }

    #[test]
    fn zero_slots_pad_with_zeros() {
        let (m, _) = setup(small_cfg(3, 3), 8);
        let mut t = Tape::new();
        let last = t.constant(DenseArray::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]));
        let slots: Vec<Var> = (0..6).map(|_| t.constant(DenseArray::zeros(1, 4))).collect();
        let f = m.final_embedding(&mut t, last, &slots).unwrap();
        let v = t.value(f);
        assert_eq!(&v.data()[..4], &[1.0, 2.0, 3.0, 4.0]);
        assert!(v.data()[4..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn wrong_label_count_errors() {
        let g = graph(3, vec![vec![]]);
        assert!(Neighborhoods::new(&g, &[0, 1], 2).is_err());
    }
}
