//! End-to-end training, evaluation, ablation and rolling retraining.

pub mod config;
pub mod model;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{checkpoint, optimizer_step, AdamConfig, DenseArray, ParameterStore, Tape};
use crate::error::{GdgmError, Result};
use crate::graph::{canonicalize, TransactionRecord};
use crate::metrics::{auc, compute_metrics, MetricsReport};

pub use config::{PseudoMode, RunConfig, Variant};
pub use model::{
    classify, cross_entropy, cross_entropy_value, time_scale, GdgmModel, Normalizer, Prediction, Prepared, Target,
};

/// Node membership in the train, validation and test splits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<bool>,
    pub valid: Vec<bool>,
    pub test: Vec<bool>,
}

impl Splits {
    pub fn indices(mask: &[bool]) -> Vec<usize> {
        (0..mask.len()).filter(|&i| mask[i]).collect()
    }

    /// Class-stratified random split of the labeled nodes.
    pub fn stratified(labels: &[Option<u8>], fracs: [f64; 3], seed: u64) -> Self {
        let n = labels.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut s = Splits { train: vec![false; n], valid: vec![false; n], test: vec![false; n] };
        for class in [0u8, 1] {
            let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == Some(class)).collect();
            idx.shuffle(&mut rng);
            let m = idx.len();
            let n_train = ((fracs[0] * m as f64).round() as usize).min(m);
            let n_valid = ((fracs[1] * m as f64).round() as usize).min(m - n_train);
            let n_test = if fracs[2] == 0.0 { 0 } else { m - n_train - n_valid };
            for (k, &i) in idx.iter().enumerate() {
                if k < n_train {
                    s.train[i] = true;
                } else if k < n_train + n_valid {
                    s.valid[i] = true;
                } else if k < n_train + n_valid + n_test {
                    s.test[i] = true;
                } else {
                    s.train[i] = true;
                }
            }
        }
        s
    }
}

/// One row of the per-epoch trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStat {
    pub epoch: usize,
    pub loss: f64,
    pub val_auc: f64,
}

pub fn trace_csv(trace: &[EpochStat]) -> String {
    let mut s = String::from("epoch,loss,val_auc\n");
    for t in trace {
        let _ = writeln!(s, "{},{},{}", t.epoch, t.loss, t.val_auc);
    }
    s
}

/// A trained model with everything needed to predict on new data.
#[derive(Clone, Debug)]
pub struct Fitted {
    pub model: GdgmModel,
    /// Best-epoch parameters plus the frozen normalizer.
    pub store: ParameterStore,
    pub norm: Normalizer,
    pub best_epoch: usize,
    pub trace: Vec<EpochStat>,
    pub pretrain_trace: Vec<f64>,
}

impl Fitted {
    pub fn metadata(&self) -> BTreeMap<String, String> {
        let mut meta: BTreeMap<String, String> =
            self.model.cfg.entries().into_iter().map(|(k, v)| (format!("cfg.{k}"), v)).collect();
        meta.insert("time_scale".into(), format!("{:?}", self.model.encoder.cfg.time_scale));
        meta.insert("best_epoch".into(), self.best_epoch.to_string());
        meta.insert("d_raw".into(), self.model.d_raw.to_string());
        meta.insert("n_relations".into(), self.model.attention.cfg.n_relations.to_string());
        meta
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.store, &self.metadata())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (store, meta) = checkpoint::load(path)?;
        let get = |k: &str| meta.get(k).ok_or_else(|| GdgmError::Checkpoint(format!("missing metadata `{k}`")));
        let mut cfg = RunConfig::default();
        for (k, v) in &meta {
            if let Some(key) = k.strip_prefix("cfg.") {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse::<f64>().map_err(|e| GdgmError::Checkpoint(format!("{k}: {e}")))
        };
        let model = GdgmModel::new(&cfg, num("d_raw")? as usize, num("n_relations")? as usize, num("time_scale")?)?;
        let norm = Normalizer::from_store(&store)?;
        Ok(Self {
            model,
            store,
            norm,
            best_epoch: num("best_epoch")? as usize,
            trace: Vec::new(),
            pretrain_trace: Vec::new(),
        })
    }

    /// Predict every node of `records`; `known` labels (canonical order)
    /// take part in neighbor grouping only.
    pub fn predict(&self, data: &Prepared, known: &[Option<u8>]) -> Result<Prediction> {
        let mut tape = Tape::new();
        let f = self.model.forward(&mut tape, &self.store, data, known, None)?;
        Ok(Prediction::from_probs(tape.value(f.probs).clone(), self.model.cfg.decision_threshold))
    }

    pub fn prepare(&self, records: &[TransactionRecord]) -> Result<Prepared> {
        Prepared::new(records, &self.model.cfg, &self.norm)
    }
}

/// Metrics over the nodes selected by `mask`.
pub fn masked_metrics(pred: &Prediction, labels: &[Option<u8>], mask: &[bool], z: f64) -> Result<MetricsReport> {
    let mut s = Vec::new();
    let mut d = Vec::new();
    let mut y = Vec::new();
    let pos = pred.positive();
    for i in 0..labels.len() {
        if let (true, Some(l)) = (mask[i], labels[i]) {
            s.push(pos[i]);
            d.push(pred.decisions[i]);
            y.push(l);
        }
    }
    compute_metrics(&s, &d, &y, z)
}

fn feature_matrix(records: &[TransactionRecord]) -> Result<DenseArray> {
    let d = records.first().map_or(0, |r| r.features.len());
    let mut data = Vec::with_capacity(records.len() * d);
    for r in records {
        if r.features.len() != d {
            return Err(GdgmError::InvalidArgument(format!("transaction {} has inconsistent width", r.txn_id)));
        }
        data.extend_from_slice(&r.features);
    }
    Ok(DenseArray::from_vec(records.len(), d, data))
}

/// Train on canonical `records` with explicit splits. Labels outside
/// `splits.train` are never used for supervision or grouping.
pub fn fit(cfg: &RunConfig, records: &[TransactionRecord], splits: &Splits) -> Result<Fitted> {
    cfg.validate()?;
    let records = canonicalize(records)?;
    let n = records.len();
    if n == 0 {
        return Err(GdgmError::Empty("dataset"));
    }
    let labels: Vec<Option<u8>> = records.iter().map(|r| r.label).collect();
    let train_idx = Splits::indices(&splits.train);
    let n_pos = train_idx.iter().filter(|&&i| labels[i] == Some(1)).count();
    let n_neg = train_idx.iter().filter(|&&i| labels[i] == Some(0)).count();
    if n_pos == 0 || n_neg == 0 {
        return Err(GdgmError::SingleClass(if n_pos == 0 { 0 } else { 1 }));
    }
    let norm = Normalizer::fit(&feature_matrix(&records)?, &train_idx)?;
    let data = Prepared::new(&records, cfg, &norm)?;
    let d_raw = data.x_raw.cols();
    let ts = if cfg.time_scale > 0.0 { cfg.time_scale } else { time_scale(&records) };
    let model = GdgmModel::new(cfg, d_raw, data.graph.num_relations(), ts)?;

    let mut store = ParameterStore::new();
    model.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let known: Vec<Option<u8>> = (0..n).map(|i| if splits.train[i] { labels[i] } else { None }).collect();

    let mut pretrain_trace = Vec::new();
    if model.uses_pseudo() {
        let x0 = model.node_inputs_value(&store, &data)?;
        pretrain_trace = model.labeler.pretrain(&mut store, &x0, &data.lap, &known, &splits.train, cfg.pretrain_epochs)?;
    } else {
        store.set_trainable(crate::wavelet::PREFIX, false);
    }
    let fixed = if cfg.pseudo_mode == PseudoMode::Fixed {
        let x0 = model.node_inputs_value(&store, &data)?;
        Some(model.grouping(&store, &x0, &data, &known)?)
    } else {
        None
    };

    let cw = [train_idx.len() as f64 / (2.0 * n_neg as f64), train_idx.len() as f64 / (2.0 * n_pos as f64)];
    let valid_idx = Splits::indices(&splits.valid);
    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    let mut best: Option<(f64, usize, ParameterStore)> = None;
    for epoch in 0..=cfg.epochs {
        let mut tape = Tape::new();
        let fixed_ref = fixed.as_ref().map(|(g, s)| (g.as_slice(), s.as_deref()));
        let f = model.forward(&mut tape, &store, &data, &known, fixed_ref)?;
        let mut targets: Vec<Target> = train_idx
            .iter()
            .map(|&i| {
                let c = labels[i].expect("train nodes are labeled");
                Target { node: i, class: c, weight: cw[usize::from(c)] }
            })
            .collect();
        if model.uses_pseudo() && cfg.pseudo_weight > 0.0 {
            targets.extend((0..n).filter(|&i| !splits.train[i]).map(|i| {
                let c = f.grouping[i];
                Target { node: i, class: c, weight: cfg.pseudo_weight * cw[usize::from(c)] }
            }));
        }
        let loss = cross_entropy(&mut tape, f.probs, &targets)?;
        let loss_v = tape.value(loss).item();
        if !loss_v.is_finite() {
            return Err(GdgmError::NonFiniteLoss { epoch });
        }
        let probs = tape.value(f.probs);
        let vs: Vec<f64> = valid_idx.iter().map(|&i| probs.get(i, 1)).collect();
        let vy: Vec<u8> = valid_idx.iter().map(|&i| labels[i].expect("valid nodes are labeled")).collect();
        let val_auc = auc(&vs, &vy)?.unwrap_or(f64::NAN);
        trace.push(EpochStat { epoch, loss: loss_v, val_auc });
        // ties and undefined validation AUC favour the later epoch
        let score = if val_auc.is_nan() { f64::NEG_INFINITY } else { val_auc };
        if best.as_ref().is_none_or(|(b, _, _)| score >= *b) {
            best = Some((score, epoch, store.clone()));
        }
        if epoch == cfg.epochs {
            break;
        }
        tape.backward_into(loss, &mut store)?;
        optimizer_step(&mut store, adam).map_err(|e| match e {
            GdgmError::NonFiniteGradient(p) => GdgmError::NonFiniteGradient(format!("{p} at epoch {epoch}")),
            other => other,
        })?;
    }
    let (_, best_epoch, mut best_store) = best.expect("at least one epoch");
    best_store.zero_grad();
    norm.store_into(&mut best_store);
    Ok(Fitted { model, store: best_store, norm, best_epoch, trace, pretrain_trace })
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub fitted: Fitted,
    pub splits: Splits,
    pub valid: MetricsReport,
    pub test: MetricsReport,
}

/// Split by `cfg` fractions, fit, and report validation and test metrics.
pub fn train(cfg: &RunConfig, records: &[TransactionRecord]) -> Result<TrainOutput> {
    let records = canonicalize(records)?;
    let labels: Vec<Option<u8>> = records.iter().map(|r| r.label).collect();
    let splits = Splits::stratified(&labels, [cfg.train_frac, cfg.valid_frac, cfg.test_frac], cfg.seed);
    let fitted = fit(cfg, &records, &splits)?;
    let data = fitted.prepare(&records)?;
    let known: Vec<Option<u8>> = (0..labels.len()).map(|i| if splits.train[i] { labels[i] } else { None }).collect();
    let pred = fitted.predict(&data, &known)?;
    let z = cfg.decision_threshold;
    let valid = masked_metrics(&pred, &labels, &splits.valid, z)?;
    let test = masked_metrics(&pred, &labels, &splits.test, z)?;
    Ok(TrainOutput { fitted, splits, valid, test })
}

/// Score every labeled node of `records`; no labels are used as inputs.
pub fn evaluate(fitted: &Fitted, records: &[TransactionRecord]) -> Result<(MetricsReport, Prediction)> {
    let data = fitted.prepare(records)?;
    let labels: Vec<Option<u8>> = data.records.iter().map(|r| r.label).collect();
    let pred = fitted.predict(&data, &vec![None; labels.len()])?;
    let report = masked_metrics(&pred, &labels, &vec![true; labels.len()], fitted.model.cfg.decision_threshold)?;
    Ok((report, pred))
}

/// Train every listed variant with the same configuration otherwise.
/// Duplicates are dropped, keeping first occurrence.
pub fn ablate(cfg: &RunConfig, records: &[TransactionRecord], variants: &[Variant]) -> Result<Vec<(Variant, TrainOutput)>> {
    if variants.is_empty() {
        return Err(GdgmError::Empty("variant list"));
    }
    let mut seen = Vec::new();
    for &v in variants {
        if !seen.contains(&v) {
            seen.push(v);
        }
    }
    seen.into_iter()
        .map(|v| {
            let c = RunConfig { variant: v, ..cfg.clone() };
            Ok((v, train(&c, records)?))
        })
        .collect()
}

pub fn ablation_table(rows: &[(Variant, TrainOutput)]) -> String {
    let mut s = String::from("variant,AUC,Accuracy,F1,Precision,Recall,N_TP,N_FP,N_TN,N_FN,threshold\n");
    for (v, o) in rows {
        let m = &o.test;
        let _ = writeln!(
            s,
            "{v},{},{},{},{},{},{},{},{},{},{}",
            m.auc, m.accuracy, m.f1, m.precision, m.recall, m.n_tp, m.n_fp, m.n_tn, m.n_fn, m.threshold
        );
    }
    s
}

#[derive(Clone, Debug)]
pub struct BlockReport {
    pub block: usize,
    pub start: f64,
    pub end: f64,
    pub n_nodes: usize,
    /// Size of the labeled pool the evaluating model was trained on.
    pub trained_on: usize,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug)]
pub struct RollingReport {
    pub blocks: Vec<BlockReport>,
    pub retrains: usize,
}

impl RollingReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("block,start,end,n_nodes,trained_on,AUC,Accuracy,F1,Precision,Recall\n");
        for b in &self.blocks {
            let m = &b.metrics;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                b.block, b.start, b.end, b.n_nodes, b.trained_on, m.auc, m.accuracy, m.f1, m.precision, m.recall
            );
        }
        s
    }
}

/// Time-blocked protocol. The first block is split by the configured
/// fractions and reported on its own test part. Every later block is scored
/// by the current model on the graph of all transactions up to the block's
/// end, after which its labels join the pool and the model is retrained.
pub fn rolling_eval(cfg: &RunConfig, records: &[TransactionRecord]) -> Result<RollingReport> {
    let records = canonicalize(records)?;
    if records.is_empty() {
        return Err(GdgmError::Empty("dataset"));
    }
    let t0 = records[0].timestamp;
    let block_of: Vec<usize> = records.iter().map(|r| ((r.timestamp - t0) / cfg.block_seconds) as usize).collect();
    let n_blocks = block_of.last().copied().unwrap_or(0) + 1;
    if n_blocks < 2 {
        return Err(GdgmError::InvalidArgument("timeline spans a single block".into()));
    }
    let labels: Vec<Option<u8>> = records.iter().map(|r| r.label).collect();
    let z = cfg.decision_threshold;
    let bounds = |b: usize| (t0 + b as f64 * cfg.block_seconds, t0 + (b + 1) as f64 * cfg.block_seconds);
    let upto = |b: usize| block_of.iter().take_while(|&&k| k <= b).count();

    let end0 = upto(0);
    let first = &records[..end0];
    let splits = Splits::stratified(&labels[..end0], [cfg.train_frac, cfg.valid_frac, cfg.test_frac], cfg.seed);
    let mut fitted = fit(cfg, first, &splits)?;
    let data = fitted.prepare(first)?;
    let known: Vec<Option<u8>> = (0..end0).map(|i| if splits.train[i] { labels[i] } else { None }).collect();
    let pred = fitted.predict(&data, &known)?;
    let (s, e) = bounds(0);
    let mut blocks = vec![BlockReport {
        block: 0,
        start: s,
        end: e,
        n_nodes: end0,
        trained_on: Splits::indices(&splits.train).len(),
        metrics: masked_metrics(&pred, &labels[..end0], &splits.test, z)?,
    }];

    let pool_fracs = {
        let tv = cfg.train_frac + cfg.valid_frac;
        [cfg.train_frac / tv, cfg.valid_frac / tv, 0.0]
    };
    let mut retrains = 0;
    let mut pool_end = end0;
    let mut pool_train = splits.train.clone();
    for b in 1..n_blocks {
        let end = upto(b);
        if end == pool_end {
            continue;
        }
        let recs = &records[..end];
        let data = fitted.prepare(recs)?;
        let known: Vec<Option<u8>> = (0..end).map(|i| if i < pool_end && pool_train[i] { labels[i] } else { None }).collect();
        let pred = fitted.predict(&data, &known)?;
        let mask: Vec<bool> = (0..end).map(|i| i >= pool_end).collect();
        let (s, e) = bounds(b);
        blocks.push(BlockReport {
            block: b,
            start: s,
            end: e,
            n_nodes: end - pool_end,
            trained_on: pool_train.iter().filter(|&&t| t).count(),
            metrics: masked_metrics(&pred, &labels[..end], &mask, z)?,
        });
        let pool = Splits::stratified(&labels[..end], pool_fracs, cfg.seed.wrapping_add(b as u64));
        fitted = fit(cfg, recs, &pool)?;
        pool_train = pool.train;
        pool_end = end;
        retrains += 1;
    }
    Ok(RollingReport { blocks, retrains })
}
