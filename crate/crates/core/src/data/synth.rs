//! Synthetic spoofing market.
//!
//! Normal accounts trade at their own pace around a drifting instrument mid
//! price. Conspiracy rings emit coordinated bursts: several ring accounts
//! hit one instrument with large orders at a shared spoof level within a
//! short window, most of which are cancelled and followed by counter-trades.
//! A few normal "algorithmic" accounts also trade in rapid single-account
//! clusters, so short gaps alone do not identify fraud.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::error::{GdgmError, Result};
use crate::graph::{TransactionRecord, D_RAW};

/// Informative leading feature columns; the rest are noise.
pub mod columns {
    pub const PRICE: usize = 0;
    pub const LOG_SIZE: usize = 1;
    pub const SIDE: usize = 2;
    pub const CANCELLED: usize = 3;
    pub const CANCEL_LATENCY: usize = 4;
    pub const COUNTER_TRADE: usize = 5;
    pub const HOUR_SIN: usize = 6;
    pub const HOUR_COS: usize = 7;
    pub const MID_DEVIATION: usize = 8;
    /// Columns from here on carry account-level style plus noise.
    pub const STYLE_START: usize = 9;
    pub const MIN_WIDTH: usize = 12;
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_transactions: usize,
    pub n_accounts: usize,
    pub n_instruments: usize,
    pub fraud_fraction: f64,
    pub n_rings: usize,
    pub ring_size: usize,
    /// Length of a ring burst in seconds.
    pub burst_seconds: f64,
    pub d_raw: usize,
    pub noise: f64,
    /// Timeline length in seconds.
    pub horizon_seconds: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_transactions: 2000,
            n_accounts: 100,
            n_instruments: 10,
            fraud_fraction: 0.15,
            n_rings: 8,
            ring_size: 4,
            burst_seconds: 300.0,
            d_raw: D_RAW,
            noise: 1.0,
            horizon_seconds: 10.0 * 86_400.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Set one `synth.`-prefixed key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| GdgmError::Config(format!("{key}: {e}")))
        }
        match key {
            "synth.n_transactions" => self.n_transactions = p(key, v)?,
            "synth.n_accounts" => self.n_accounts = p(key, v)?,
            "synth.n_instruments" => self.n_instruments = p(key, v)?,
            "synth.fraud_fraction" => self.fraud_fraction = p(key, v)?,
            "synth.n_rings" => self.n_rings = p(key, v)?,
            "synth.ring_size" => self.ring_size = p(key, v)?,
            "synth.burst_seconds" => self.burst_seconds = p(key, v)?,
            "synth.d_raw" => self.d_raw = p(key, v)?,
            "synth.noise" => self.noise = p(key, v)?,
            "synth.horizon_seconds" => self.horizon_seconds = p(key, v)?,
            "synth.seed" => self.seed = p(key, v)?,
            _ => return Err(GdgmError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Read the `synth.` keys of a flat config; other keys are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| GdgmError::Parse { line: i + 1, msg: "expected `key = value`".into() })?;
            let k = k.trim();
            if k.starts_with("synth.") {
                cfg.set(k, v.trim()).map_err(|e| GdgmError::Parse { line: i + 1, msg: e.to_string() })?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_fraud(&self) -> usize {
        (self.fraud_fraction * self.n_transactions as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GdgmError::Config(m));
        if !(self.fraud_fraction > 0.0 && self.fraud_fraction < 1.0) {
            return bad(format!("fraud_fraction {} outside (0,1)", self.fraud_fraction));
        }
        if self.ring_size < 2 {
            return bad(format!("ring_size {} must be at least 2", self.ring_size));
        }
        if self.n_transactions == 0 || self.n_accounts == 0 || self.n_instruments == 0 || self.n_rings == 0 {
            return bad("counts must be positive".into());
        }
        if self.d_raw < columns::MIN_WIDTH {
            return bad(format!("d_raw {} below minimum {}", self.d_raw, columns::MIN_WIDTH));
        }
        if !(self.burst_seconds > 0.0 && self.horizon_seconds > self.burst_seconds) {
            return bad("need 0 < burst_seconds < horizon_seconds".into());
        }
        if !(self.noise >= 0.0) {
            return bad(format!("noise {} must be non-negative", self.noise));
        }
        let ring_accounts = self.n_rings * self.ring_size;
        if ring_accounts > self.n_accounts {
            return bad(format!("{ring_accounts} ring accounts exceed {} accounts", self.n_accounts));
        }
        let n_fraud = self.n_fraud();
        if ring_accounts > n_fraud {
            return bad(format!("rings need {ring_accounts} fraud transactions, budget is {n_fraud}"));
        }
        if n_fraud >= self.n_transactions {
            return bad("no room for normal transactions".into());
        }
        Ok(())
    }
}

struct Account {
    name: String,
    instruments: [usize; 2],
    size_mu: f64,
    style: Vec<f64>,
    algo: bool,
}

struct Event {
    t: f64,
    account: usize,
    instrument: usize,
    burst: Option<usize>,
    /// Spoof price level for fraud events, relative to mid.
    level: f64,
    side: f64,
}

fn mid_price(base: f64, phase: f64, t: f64, horizon: f64) -> f64 {
    let u = t / horizon;
    base * (1.0 + 0.02 * (std::f64::consts::TAU * (u * 3.0 + phase)).sin())
}

/// Generate a labelled dataset sorted by timestamp with sequential ids.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<TransactionRecord>> {
    Ok(synth_with_bursts(cfg)?.0)
}

/// Like [`synth_dataset`], also returning the burst index of each record.
pub fn synth_with_bursts(cfg: &SynthConfig) -> Result<(Vec<TransactionRecord>, Vec<Option<usize>>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let bases: Vec<(f64, f64)> = (0..cfg.n_instruments)
        .map(|_| (rng.random_range(20.0..200.0), rng.random_range(0.0..1.0)))
        .collect();
    let n_style = cfg.d_raw - columns::STYLE_START;
    let accounts: Vec<Account> = (0..cfg.n_accounts)
        .map(|a| Account {
            name: format!("acct-{a:04}"),
            instruments: [rng.random_range(0..cfg.n_instruments), rng.random_range(0..cfg.n_instruments)],
            size_mu: rng.random_range(2.0..4.0),
            style: (0..n_style).map(|_| std_normal.sample(&mut rng)).collect(),
            algo: rng.random_bool(0.1),
        })
        .collect();
    let mut perm: Vec<usize> = (0..cfg.n_accounts).collect();
    perm.shuffle(&mut rng);
    let rings: Vec<Vec<usize>> = perm[..cfg.n_rings * cfg.ring_size].chunks(cfg.ring_size).map(<[usize]>::to_vec).collect();

    let mut events = Vec::with_capacity(cfg.n_transactions);

    // Ring bursts.
    let n_fraud = cfg.n_fraud();
    let mut sizes = Vec::new();
    let mut left = n_fraud;
    while left > 0 {
        let s = rng.random_range(2 * cfg.ring_size..=4 * cfg.ring_size).min(left);
        if s < cfg.ring_size {
            *sizes.last_mut().expect("first burst is at least ring_size") += s;
        } else {
            sizes.push(s);
        }
        left -= s;
    }
    for (b, &size) in sizes.iter().enumerate() {
        let ring = &rings[b % rings.len()];
        let instrument = rng.random_range(0..cfg.n_instruments);
        let start = rng.random_range(0.0..cfg.horizon_seconds - cfg.burst_seconds);
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let level = side * rng.random_range(0.003..0.008);
        for k in 0..size {
            events.push(Event {
                t: start + rng.random_range(0.0..cfg.burst_seconds),
                account: ring[k % ring.len()],
                instrument,
                burst: Some(b),
                level,
                side,
            });
        }
    }

    // Normal flow; algorithmic accounts cluster their orders.
    let n_normal = cfg.n_transactions - n_fraud;
    let gap = Exp::new(1.0 / 60.0).expect("positive rate");
    let mut produced = 0;
    while produced < n_normal {
        let a = rng.random_range(0..cfg.n_accounts);
        let acct = &accounts[a];
        // clusters average 3.5 orders; thin the picks to keep volumes level
        if acct.algo && !rng.random_bool(0.3) {
            continue;
        }
        let instrument = acct.instruments[rng.random_range(0..2)];
        let t0 = rng.random_range(0.0..cfg.horizon_seconds);
        let count = if acct.algo { rng.random_range(2..=5).min(n_normal - produced) } else { 1 };
        let mut t = t0;
        for _ in 0..count {
            events.push(Event {
                t: t.min(cfg.horizon_seconds),
                account: a,
                instrument,
                burst: None,
                level: 0.0,
                side: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            });
            t += gap.sample(&mut rng);
        }
        produced += count;
    }

    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    let noise = cfg.noise;
    let mut records = Vec::with_capacity(events.len());
    for (id, e) in events.iter().enumerate() {
        let fraud = e.burst.is_some();
        let acct = &accounts[e.account];
        let (base, phase) = bases[e.instrument];
        let mid = mid_price(base, phase, e.t, cfg.horizon_seconds);
        let mut f = vec![0.0; cfg.d_raw];
        let dev = if fraud {
            e.level + 0.0003 * noise * std_normal.sample(&mut rng)
        } else {
            0.004 * noise * std_normal.sample(&mut rng)
        };
        f[columns::PRICE] = mid * (1.0 + dev);
        f[columns::MID_DEVIATION] = dev * 1e4;
        let large_decoy = !fraud && rng.random_bool(0.05);
        let size_shift = if fraud || large_decoy { 1.0 } else { 0.0 };
        f[columns::LOG_SIZE] = acct.size_mu + size_shift + 0.6 * noise * std_normal.sample(&mut rng);
        f[columns::SIDE] = e.side;
        let cancelled = rng.random_bool(if fraud { 0.7 } else { 0.2 });
        f[columns::CANCELLED] = f64::from(u8::from(cancelled));
        if cancelled {
            let mu = if fraud { 2.0 } else { 4.0 };
            f[columns::CANCEL_LATENCY] = mu + noise * std_normal.sample(&mut rng);
        }
        f[columns::COUNTER_TRADE] = f64::from(u8::from(rng.random_bool(if fraud { 0.45 } else { 0.1 })));
        let hour = std::f64::consts::TAU * (e.t % 86_400.0) / 86_400.0;
        f[columns::HOUR_SIN] = hour.sin();
        f[columns::HOUR_COS] = hour.cos();
        for (j, s) in acct.style.iter().enumerate() {
            f[columns::STYLE_START + j] = s + noise * std_normal.sample(&mut rng);
        }
        records.push(TransactionRecord {
            txn_id: id as u64,
            timestamp: (e.t * 1000.0).round() / 1000.0,
            account: acct.name.clone(),
            instrument: format!("inst-{:02}", e.instrument),
            features: f,
            label: Some(u8::from(fraud)),
        });
    }
    Ok((records, events.iter().map(|e| e.burst).collect()))
}
