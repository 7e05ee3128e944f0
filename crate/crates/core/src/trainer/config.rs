//! Flat `key = value` run configuration.

use std::fmt;
use std::str::FromStr;

use crate::attention::GroupContext;
use crate::encoder::Solver;
use crate::error::{GdgmError, Result};
use crate::graph::GraphConfig;
use crate::wavelet::{Aggregation, WaveletConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Full,
    NoPseudo,
    NoOde,
    NoHetero,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoPseudo, Variant::NoOde, Variant::NoHetero];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPseudo => "no_pseudo",
            Variant::NoOde => "no_ode",
            Variant::NoHetero => "no_hetero",
        }
    }
}

impl FromStr for Variant {
    type Err = GdgmError;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| GdgmError::UnknownVariant(s.to_string()))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether pseudo-labels are recomputed every epoch from the current
/// embeddings or computed once after pretraining.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PseudoMode {
    Refresh,
    Fixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub pseudo_threshold: f64,
    pub decision_threshold: f64,
    pub pseudo_weight: f64,
    pub pseudo_mode: PseudoMode,
    pub variant: Variant,
    pub train_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub block_seconds: f64,

    pub h_dim: usize,
    pub solver: Solver,
    pub solver_steps: usize,
    pub max_len: usize,
    /// Multiplier on raw time gaps; 0 derives it from the data.
    pub time_scale: f64,

    pub graph: GraphConfig,

    pub att_hidden: usize,
    pub q_dim: usize,
    pub layers: usize,
    pub slope: f64,
    pub group_context: GroupContext,
    pub cls_hidden: usize,

    pub wavelet_order: usize,
    pub wavelet_hidden: usize,
    pub wavelet_post_hidden: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub aggregation: Aggregation,
}

impl Default for RunConfig {
    fn default() -> Self {
        let w = WaveletConfig::default();
        Self {
            seed: 0,
            epochs: 200,
            lr: 0.005,
            pseudo_threshold: 0.6,
            decision_threshold: 0.6,
            pseudo_weight: 0.5,
            pseudo_mode: PseudoMode::Refresh,
            variant: Variant::Full,
            train_frac: 0.6,
            valid_frac: 0.2,
            test_frac: 0.2,
            block_seconds: 2.5 * 86_400.0,
            h_dim: 64,
            solver: Solver::Rk4,
            solver_steps: 4,
            max_len: 32,
            time_scale: 0.0,
            graph: GraphConfig::default(),
            att_hidden: 64,
            q_dim: 128,
            layers: 2,
            slope: 0.2,
            group_context: GroupContext::Attention,
            cls_hidden: 64,
            wavelet_order: w.order,
            wavelet_hidden: w.pre_hidden,
            wavelet_post_hidden: w.post_hidden,
            pretrain_epochs: w.pretrain_epochs,
            pretrain_lr: w.lr,
            aggregation: w.aggregation,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| GdgmError::Config(format!("{key}: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(GdgmError::Config(format!("{key}: expected true or false, got `{v}`"))),
    }
}

impl RunConfig {
    pub fn wavelet(&self) -> WaveletConfig {
        WaveletConfig {
            order: self.wavelet_order,
            pre_hidden: self.wavelet_hidden,
            post_hidden: self.wavelet_post_hidden,
            threshold: self.pseudo_threshold,
            pretrain_epochs: self.pretrain_epochs,
            lr: self.pretrain_lr,
            aggregation: self.aggregation,
        }
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "pseudo_threshold" => self.pseudo_threshold = parse(key, v)?,
            "decision_threshold" => self.decision_threshold = parse(key, v)?,
            "pseudo_weight" => self.pseudo_weight = parse(key, v)?,
            "pseudo_mode" => {
                self.pseudo_mode = match v {
                    "refresh" => PseudoMode::Refresh,
                    "fixed" => PseudoMode::Fixed,
                    _ => return Err(GdgmError::Config(format!("pseudo_mode: unknown `{v}`"))),
                }
            }
            "variant" => self.variant = v.parse()?,
            "train_frac" => self.train_frac = parse(key, v)?,
            "valid_frac" => self.valid_frac = parse(key, v)?,
            "test_frac" => self.test_frac = parse(key, v)?,
            "block_seconds" => self.block_seconds = parse(key, v)?,
            "h_dim" => self.h_dim = parse(key, v)?,
            "solver" => self.solver = parse(key, v)?,
            "solver_steps" => self.solver_steps = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "time_scale" => self.time_scale = parse(key, v)?,
            "window_seconds" => self.graph.window_seconds = parse(key, v)?,
            "price_band" => self.graph.price_band = parse(key, v)?,
            "price_band_relative" => self.graph.price_band_relative = parse_bool(key, v)?,
            "price_column" => self.graph.price_column = parse(key, v)?,
            "degree_cap" => self.graph.degree_cap = parse(key, v)?,
            "att_hidden" => self.att_hidden = parse(key, v)?,
            "q_dim" => self.q_dim = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "slope" => self.slope = parse(key, v)?,
            "group_context" => {
                self.group_context = match v {
                    "attention" => GroupContext::Attention,
                    "mean" => GroupContext::Mean,
                    _ => return Err(GdgmError::Config(format!("group_context: unknown `{v}`"))),
                }
            }
            "cls_hidden" => self.cls_hidden = parse(key, v)?,
            "wavelet_order" => self.wavelet_order = parse(key, v)?,
            "wavelet_hidden" => self.wavelet_hidden = parse(key, v)?,
            "wavelet_post_hidden" => self.wavelet_post_hidden = parse(key, v)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, v)?,
            "pretrain_lr" => self.pretrain_lr = parse(key, v)?,
            "aggregation" => {
                self.aggregation = match v {
                    "concat" => Aggregation::Concat,
                    "sum" => Aggregation::Sum,
                    _ => return Err(GdgmError::Config(format!("aggregation: unknown `{v}`"))),
                }
            }
            _ => return Err(GdgmError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let f = |x: f64| format!("{x:?}");
        vec![
            ("seed", self.seed.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", f(self.lr)),
            ("pseudo_threshold", f(self.pseudo_threshold)),
            ("decision_threshold", f(self.decision_threshold)),
            ("pseudo_weight", f(self.pseudo_weight)),
            (
                "pseudo_mode",
                match self.pseudo_mode {
                    PseudoMode::Refresh => "refresh",
                    PseudoMode::Fixed => "fixed",
                }
                .into(),
            ),
            ("variant", self.variant.to_string()),
            ("train_frac", f(self.train_frac)),
            ("valid_frac", f(self.valid_frac)),
            ("test_frac", f(self.test_frac)),
            ("block_seconds", f(self.block_seconds)),
            ("h_dim", self.h_dim.to_string()),
            ("solver", self.solver.to_string()),
            ("solver_steps", self.solver_steps.to_string()),
            ("max_len", self.max_len.to_string()),
            ("time_scale", f(self.time_scale)),
            ("window_seconds", f(self.graph.window_seconds)),
            ("price_band", f(self.graph.price_band)),
            ("price_band_relative", self.graph.price_band_relative.to_string()),
            ("price_column", self.graph.price_column.to_string()),
            ("degree_cap", self.graph.degree_cap.to_string()),
            ("att_hidden", self.att_hidden.to_string()),
            ("q_dim", self.q_dim.to_string()),
            ("layers", self.layers.to_string()),
            ("slope", f(self.slope)),
            (
                "group_context",
                match self.group_context {
                    GroupContext::Attention => "attention",
                    GroupContext::Mean => "mean",
                }
                .into(),
            ),
            ("cls_hidden", self.cls_hidden.to_string()),
            ("wavelet_order", self.wavelet_order.to_string()),
            ("wavelet_hidden", self.wavelet_hidden.to_string()),
            ("wavelet_post_hidden", self.wavelet_post_hidden.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("pretrain_lr", f(self.pretrain_lr)),
            (
                "aggregation",
                match self.aggregation {
                    Aggregation::Concat => "concat",
                    Aggregation::Sum => "sum",
                }
                .into(),
            ),
        ]
    }

    /// Parse a flat config. Blank lines, `#` comments and `synth.` keys are
    /// skipped; keys not present keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| GdgmError::Parse {
                line: i + 1,
                msg: "expected `key = value`".into(),
            })?;
            if k.trim().starts_with("synth.") {
                continue;
            }
            cfg.set(k.trim(), v.trim()).map_err(|e| GdgmError::Parse { line: i + 1, msg: e.to_string() })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GdgmError::Config(m));
        for (name, z) in [("pseudo_threshold", self.pseudo_threshold), ("decision_threshold", self.decision_threshold)] {
            if !(z > 0.0 && z < 1.0) {
                return bad(format!("{name} {z} outside (0,1)"));
            }
        }
        let fr = [self.train_frac, self.valid_frac, self.test_frac];
        if fr.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {fr:?} must be in [0,1] and sum to 1"));
        }
        if self.train_frac == 0.0 {
            return bad("train_frac must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.pretrain_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.block_seconds > 0.0) {
            return bad(format!("block_seconds {} must be positive", self.block_seconds));
        }
        if !(0.0..=1.0).contains(&self.pseudo_weight) {
            return bad(format!("pseudo_weight {} outside [0,1]", self.pseudo_weight));
        }
        let sizes = [
            self.h_dim,
            self.solver_steps,
            self.max_len,
            self.att_hidden,
            self.q_dim,
            self.layers,
            self.cls_hidden,
            self.wavelet_hidden,
            self.wavelet_post_hidden,
        ];
        if sizes.contains(&0) {
            return bad("sizes must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.seed = 7;
        c.variant = Variant::NoHetero;
        c.lr = 0.1 + 0.2;
        c.group_context = GroupContext::Mean;
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_defaults() {
        let c = RunConfig::parse("# header\n\nepochs = 3  # short\n").unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.q_dim, 128);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::parse("variant = fancy").is_err());
        assert!(RunConfig::parse("train_frac = 0.9").is_err());
        assert!(RunConfig::parse("decision_threshold = 1.0").is_err());
        assert!(RunConfig::parse("nonsense = 1").is_err());
        match RunConfig::parse("epochs = 2\nlr = x") {
            Err(GdgmError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn variant_names() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
    }
}
