//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::data::{load_transactions, save_transactions, synth_dataset, SynthConfig};
use crate::error::{GdgmError, Result};
use crate::trainer::{
    ablate, ablation_table, evaluate, rolling_eval, trace_csv, train, Fitted, RunConfig, Variant,
};

#[derive(Parser, Debug)]
#[command(name = "gdgm", about = "Coordinated spoofing detection on transaction graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic transaction file.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write its checkpoint and metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_checkpoint: PathBuf,
        #[arg(long)]
        metrics_out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a dataset with a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        metrics_out: PathBuf,
    },
    /// Train each model variant and write a comparison table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated variants; defaults to all.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Time-blocked evaluation with retraining after each block.
    Rolling {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| GdgmError::Config(format!("{}: {e}", path.display())))
}

fn run_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::parse(&read(path)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load(path: &Path) -> Result<Vec<crate::graph::TransactionRecord>> {
    load_transactions(path).map_err(|e| match e {
        GdgmError::Io(io) => GdgmError::Config(format!("{}: {io}", path.display())),
        other => other,
    })
}

/// `<path>.<suffix>` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn execute(cmd: Command) -> Result<String> {
    match cmd {
        Command::Synth { config, out, seed } => {
            let mut cfg = SynthConfig::parse(&read(&config)?)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let recs = synth_dataset(&cfg)?;
            save_transactions(&recs, &out)?;
            Ok(format!("wrote {} transactions to {}", recs.len(), out.display()))
        }
        Command::Train { config, data, out_checkpoint, metrics_out, seed } => {
            let cfg = run_config(&config, seed)?;
            let recs = load(&data)?;
            let out = train(&cfg, &recs)?;
            out.fitted.save(&out_checkpoint)?;
            let mut text = String::new();
            let _ = writeln!(text, "# split = test");
            let _ = writeln!(text, "# best_epoch = {}", out.fitted.best_epoch);
            text.push_str(&out.test.to_text());
            fs::write(&metrics_out, text)?;
            fs::write(sibling(&metrics_out, "trace.csv"), trace_csv(&out.fitted.trace))?;
            Ok(format!("best epoch {}; test {}", out.fitted.best_epoch, out.test))
        }
        Command::Eval { checkpoint, data, metrics_out } => {
            let fitted = Fitted::load(&checkpoint)?;
            let recs = load(&data)?;
            let (report, pred) = evaluate(&fitted, &recs)?;
            let mut text = String::from("# split = all\n");
            text.push_str(&report.to_text());
            fs::write(&metrics_out, text)?;
            let data = fitted.prepare(&recs)?;
            let mut scores = String::from("txn_id,score,decision\n");
            for (i, id) in data.graph.txn_ids.iter().enumerate() {
                let _ = writeln!(scores, "{id},{},{}", pred.probs.get(i, 1), pred.decisions[i]);
            }
            fs::write(sibling(&metrics_out, "scores.csv"), scores)?;
            Ok(format!("{report}"))
        }
        Command::Ablate { config, data, out, seed, variants } => {
            let cfg = run_config(&config, seed)?;
            let vs: Vec<Variant> = if variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variants.iter().map(|v| v.parse()).collect::<Result<_>>()?
            };
            let recs = load(&data)?;
            let rows = ablate(&cfg, &recs, &vs)?;
            fs::write(&out, ablation_table(&rows))?;
            let mut msg = String::new();
            for (v, o) in &rows {
                let _ = writeln!(msg, "{v}: {}", o.test);
            }
            Ok(msg.trim_end().to_string())
        }
        Command::Rolling { config, data, out, seed } => {
            let cfg = run_config(&config, seed)?;
            let recs = load(&data)?;
            let report = rolling_eval(&cfg, &recs)?;
            fs::write(&out, report.to_csv())?;
            Ok(format!("{} blocks, {} retrains", report.blocks.len(), report.retrains))
        }
    }
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
