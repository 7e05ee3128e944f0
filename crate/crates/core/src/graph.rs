//! Transaction records to observation sequences and a multi-relational
//! sliding-window graph.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::DenseArray;
use crate::encoder::ObservationSequence;
use crate::error::{GdgmError, Result};

/// Default raw feature width.
pub const D_RAW: usize = 49;

/// One raw trade event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub txn_id: u64,
    pub timestamp: f64,
    pub account: String,
    pub instrument: String,
    pub features: Vec<f64>,
    pub label: Option<u8>,
}

/// Sort by `(timestamp, txn_id)`, rejecting duplicate ids.
pub fn canonical_order(records: &[TransactionRecord]) -> Result<Vec<usize>> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.txn_id) {
            return Err(GdgmError::DuplicateTxn(r.txn_id));
        }
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&records[a], &records[b]);
        ra.timestamp.total_cmp(&rb.timestamp).then(ra.txn_id.cmp(&rb.txn_id))
    });
    Ok(order)
}

/// Sort records into canonical order.
pub fn canonicalize(records: &[TransactionRecord]) -> Result<Vec<TransactionRecord>> {
    Ok(canonical_order(records)?.into_iter().map(|i| records[i].clone()).collect())
}

/// One observation sequence per transaction, in canonical node order.
///
/// A node's sequence holds the `max_len` most recent transactions of the
/// same account up to and including itself. Tied timestamps keep `txn_id`
/// order and are separated by one unit in the last place so that times stay
/// strictly increasing.
pub fn sequences_from_transactions(records: &[TransactionRecord], max_len: usize) -> Result<Vec<ObservationSequence>> {
    if max_len == 0 {
        return Err(GdgmError::InvalidArgument("max_len must be positive".into()));
    }
    let order = canonical_order(records)?;
    let mut history: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut out = Vec::with_capacity(records.len());
    for &i in &order {
        let r = &records[i];
        let hist = history.entry(r.account.as_str()).or_default();
        hist.push(i);
        let start = hist.len().saturating_sub(max_len);
        let window = &hist[start..];
        let mut times = Vec::with_capacity(window.len());
        for &j in window {
            let t = records[j].timestamp;
            let t = match times.last() {
                Some(&prev) if t <= prev => f64::next_up(prev),
                _ => t,
            };
            times.push(t);
        }
        let obs = window.iter().map(|&j| records[j].features.clone()).collect();
        out.push(ObservationSequence::new(times, obs)?);
    }
    Ok(out)
}

/// Relation kinds in id order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelationKind {
    SameAccount,
    SameInstrument,
    PriceAdjacent,
    /// Union of all relations, used by the homogeneous variant.
    Union,
}

impl RelationKind {
    pub fn name(self) -> &'static str {
        match self {
            RelationKind::SameAccount => "same_account",
            RelationKind::SameInstrument => "same_instrument",
            RelationKind::PriceAdjacent => "price_adjacent",
            RelationKind::Union => "union",
        }
    }
}

/// An undirected edge list with adjacency in edge-list order.
#[derive(Clone, Debug, PartialEq)]
pub struct Relation {
    pub kind: RelationKind,
    edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
}

impl Relation {
    pub fn from_edges(kind: RelationKind, n: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in &edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        Self { kind, edges, adj }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphConfig {
    pub window_seconds: f64,
    /// Price tolerance for the price-adjacent relation.
    pub price_band: f64,
    /// When set, `price_band` is a fraction of the pair's mean price.
    pub price_band_relative: bool,
    pub price_column: usize,
    /// Maximum neighbors per node per relation, most recent first.
    pub degree_cap: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            window_seconds: 86_400.0,
            price_band: 0.005,
            price_band_relative: true,
            price_column: 0,
            degree_cap: 64,
        }
    }
}

/// Nodes are transactions in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiRelationalGraph {
    pub n: usize,
    pub relations: Vec<Relation>,
    pub features: DenseArray,
    pub labels: Vec<Option<u8>>,
    pub timestamps: Vec<f64>,
    pub txn_ids: Vec<u64>,
    pub train_mask: Vec<bool>,
    pub valid_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
}

/// Members of `N_{r,g}(v)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborView {
    pub node: usize,
    pub relation: usize,
    pub group: u8,
    pub members: Vec<usize>,
}

fn pairs_within_window<'a, K: std::hash::Hash + Eq>(
    records: &'a [TransactionRecord],
    order: &[usize],
    window: f64,
    key: impl Fn(&'a TransactionRecord) -> K,
    mut accept: impl FnMut(usize, usize) -> bool,
) -> Vec<(usize, usize)> {
    // node ids are positions in `order`
    let mut groups: HashMap<K, Vec<usize>> = HashMap::new();
    for (node, &i) in order.iter().enumerate() {
        groups.entry(key(&records[i])).or_default().push(node);
    }
    let mut edges = Vec::new();
    for members in groups.values() {
        for (a, &u) in members.iter().enumerate() {
            let tu = records[order[u]].timestamp;
            for &v in &members[a + 1..] {
                if records[order[v]].timestamp - tu > window {
                    break;
                }
                if accept(u, v) {
                    edges.push((u.min(v), u.max(v)));
                }
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Keep an edge only if it is among the `cap` most recent neighbors of both
/// endpoints.
fn apply_degree_cap(edges: Vec<(usize, usize)>, n: usize, cap: usize, times: &[f64]) -> Vec<(usize, usize)> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(u, v) in &edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    if adj.iter().all(|a| a.len() <= cap) {
        return edges;
    }
    let mut kept: Vec<HashSet<usize>> = Vec::with_capacity(n);
    for list in adj.iter_mut() {
        // most recent first; node index breaks ties since it encodes txn order
        list.sort_by(|&a, &b| times[b].total_cmp(&times[a]).then(b.cmp(&a)));
        kept.push(list.iter().take(cap).copied().collect());
    }
    edges
        .into_iter()
        .filter(|&(u, v)| kept[u].contains(&v) && kept[v].contains(&u))
        .collect()
}

/// Build the three-relation graph over canonically ordered records.
pub fn build_graph(records: &[TransactionRecord], cfg: &GraphConfig) -> Result<MultiRelationalGraph> {
    if !(cfg.window_seconds >= 0.0) {
        return Err(GdgmError::InvalidArgument(format!("window {} must be non-negative", cfg.window_seconds)));
    }
    let order = canonical_order(records)?;
    let n = order.len();
    let width = records.first().map_or(0, |r| r.features.len());
    if let Some(r) = records.iter().find(|r| r.features.len() != width) {
        return Err(GdgmError::InvalidArgument(format!(
            "transaction {} has {} features, expected {width}",
            r.txn_id,
            r.features.len()
        )));
    }
    if n > 0 && cfg.price_column >= width {
        return Err(GdgmError::InvalidArgument(format!(
            "price column {} outside feature width {width}",
            cfg.price_column
        )));
    }
    let times: Vec<f64> = order.iter().map(|&i| records[i].timestamp).collect();
    let w = cfg.window_seconds;
    let same_account = pairs_within_window(records, &order, w, |r| r.account.as_str(), |_, _| true);
    let same_instrument = pairs_within_window(records, &order, w, |r| r.instrument.as_str(), |_, _| true);
    let price = |node: usize| records[order[node]].features[cfg.price_column];
    let price_adjacent = pairs_within_window(records, &order, w, |r| r.instrument.as_str(), |u, v| {
        let (pu, pv) = (price(u), price(v));
        let tol = if cfg.price_band_relative {
            cfg.price_band * 0.5 * (pu.abs() + pv.abs())
        } else {
            cfg.price_band
        };
        (pu - pv).abs() <= tol
    });
    let relations = [
        (RelationKind::SameAccount, same_account),
        (RelationKind::SameInstrument, same_instrument),
        (RelationKind::PriceAdjacent, price_adjacent),
    ]
    .into_iter()
    .map(|(kind, e)| Relation::from_edges(kind, n, apply_degree_cap(e, n, cfg.degree_cap, &times)))
    .collect();

    let mut features = DenseArray::zeros(n, width);
    for (node, &i) in order.iter().enumerate() {
        features.row_slice_mut(node).copy_from_slice(&records[i].features);
    }
    Ok(MultiRelationalGraph {
        n,
        relations,
        features,
        labels: order.iter().map(|&i| records[i].label).collect(),
        timestamps: times,
        txn_ids: order.iter().map(|&i| records[i].txn_id).collect(),
        train_mask: vec![false; n],
        valid_mask: vec![false; n],
        test_mask: vec![false; n],
    })
}

impl MultiRelationalGraph {
    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn relation(&self, r: usize) -> Result<&Relation> {
        self.relations.get(r).ok_or(GdgmError::InvalidRelation(r))
    }

    /// Deduplicated union of all relations, first occurrence order.
    pub fn union_edges(&self) -> Vec<(usize, usize)> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for rel in &self.relations {
            for &e in rel.edges() {
                if seen.insert(e) {
                    out.push(e);
                }
            }
        }
        out
    }

    /// Same nodes with every relation collapsed into one.
    pub fn homogeneous(&self) -> Self {
        let mut g = self.clone();
        g.relations = vec![Relation::from_edges(RelationKind::Union, self.n, self.union_edges())];
        g
    }

    /// Relabel node `v` as `perm[v]`. Edge lists keep their order, so every
    /// neighbor list of the result is the image of the original list.
    pub fn permute(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n);
        let mut inv = vec![0; self.n];
        for (v, &p) in perm.iter().enumerate() {
            inv[p] = v;
        }
        let move_vec = |xs: &[bool]| inv.iter().map(|&v| xs[v]).collect::<Vec<_>>();
        let relations = self
            .relations
            .iter()
            .map(|rel| {
                let edges = rel
                    .edges()
                    .iter()
                    .map(|&(u, v)| (perm[u].min(perm[v]), perm[u].max(perm[v])))
                    .collect();
                Relation::from_edges(rel.kind, self.n, edges)
            })
            .collect();
        Self {
            n: self.n,
            relations,
            features: self.features.gather_rows(&inv),
            labels: inv.iter().map(|&v| self.labels[v]).collect(),
            timestamps: inv.iter().map(|&v| self.timestamps[v]).collect(),
            txn_ids: inv.iter().map(|&v| self.txn_ids[v]).collect(),
            train_mask: move_vec(&self.train_mask),
            valid_mask: move_vec(&self.valid_mask),
            test_mask: move_vec(&self.test_mask),
        }
    }

    /// Write one `<relation>.edges` file per relation with txn-id pairs.
    pub fn export_edges(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for rel in &self.relations {
            let mut f = fs::File::create(dir.join(format!("{}.edges", rel.kind.name())))?;
            for &(u, v) in rel.edges() {
                writeln!(f, "{} {}", self.txn_ids[u], self.txn_ids[v])?;
            }
        }
        Ok(())
    }

    /// Per-relation edge counts keyed by relation name.
    pub fn edge_counts(&self) -> BTreeMap<&'static str, usize> {
        self.relations.iter().map(|r| (r.kind.name(), r.edges().len())).collect()
    }
}

/// Neighbors of `v` under relation `r` whose label equals `g`.
pub fn neighbor_view(graph: &MultiRelationalGraph, labels: &[u8], v: usize, r: usize, g: u8) -> Result<NeighborView> {
    let rel = graph.relation(r)?;
    if labels.len() != graph.n {
        return Err(GdgmError::InvalidArgument(format!("{} labels for {} nodes", labels.len(), graph.n)));
    }
    let members = rel.neighbors(v).iter().copied().filter(|&u| labels[u] == g).collect();
    Ok(NeighborView {
        node: v,
        relation: r,
        group: g,
        members,
    })
}
