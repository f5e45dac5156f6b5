use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jscc_core::config::{ExperimentConfig, KEYS};
use jscc_core::experiments::{
    cmd_chain_demo, cmd_eval, cmd_gradcheck, cmd_train, load_for_eval, ChainDemoSettings, GradCheckSettings,
};
use jscc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "jscc", about = "OFDM deep JSCC simulator and training harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.bin, train_log.csv, config_resolved.txt
    Train(Common),
    /// Evaluate a checkpoint over SNR × clip ratio × taps; writes metrics.csv
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every op and the end-to-end chains; writes gradcheck.csv
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Corrupt the clip backward pass (harness self-test; expected to fail)
        #[arg(long)]
        faulty_clip: bool,
    },
    /// Walk one packet through the OFDM chain; writes chain_demo.csv
    ChainDemo(Common),
    /// List config keys with defaults
    Keys,
}

#[derive(Args, Default)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated SNRs in dB (train: a value or lo..hi)
    #[arg(long)]
    snr_db: Option<String>,
    /// Comma-separated clipping ratios, inf for none
    #[arg(long)]
    clip_ratio: Option<String>,
    /// Comma-separated channel tap counts
    #[arg(long)]
    taps: Option<String>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Train,
    Eval,
    Other,
}

impl Common {
    fn apply(&self, cfg: &mut ExperimentConfig, mode: Mode) -> Result<()> {
        let (seed_key, snr, rho, taps) = match mode {
            Mode::Train => ("seed", "train_snr_db", "clip_ratio", "taps"),
            Mode::Eval => ("eval_seed", "eval_snr_db", "eval_clip_ratio", "eval_taps"),
            Mode::Other => ("seed", "eval_snr_db", "eval_clip_ratio", "eval_taps"),
        };
        let overrides = [
            (seed_key, self.seed.map(|v| v.to_string())),
            ("out_dir", self.out.as_ref().map(|p| p.display().to_string())),
            (snr, self.snr_db.clone()),
            (rho, self.clip_ratio.clone()),
            (taps, self.taps.clone()),
            ("realizations", self.realizations.map(|v| v.to_string())),
            ("workers", self.workers.map(|v| v.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()
    }

    fn base(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

fn single<T: Copy>(name: &str, values: &[T]) -> Result<T> {
    match values {
        [v] => Ok(*v),
        _ => Err(Error::Config(format!("chain-demo takes a single {}", name))),
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(common) => {
            let mut cfg = common.base()?;
            common.apply(&mut cfg, Mode::Train)?;
            let state = cmd_train(&cfg)?;
            if let Some(last) = state.log.last() {
                eprintln!("epoch {} loss {:.6}", last.epoch, last.train_loss);
            }
            eprintln!("wrote {}", cfg.out_dir.display());
            Ok(true)
        }
        Command::Eval { checkpoint, common } => {
            let (params, mut cfg) = load_for_eval(&checkpoint, common.config.as_deref())?;
            common.apply(&mut cfg, Mode::Eval)?;
            for r in cmd_eval(&params, &cfg)? {
                eprintln!(
                    "snr {} rho {} taps {}: psnr {:.3} dB ssim {:.4}",
                    r.snr_db, r.rho, r.taps, r.psnr_db, r.ssim
                );
            }
            Ok(true)
        }
        Command::Gradcheck { common, faulty_clip } => {
            let mut cfg = common.base()?;
            common.apply(&mut cfg, Mode::Other)?;
            let settings = GradCheckSettings {
                seed: cfg.train.seed,
                faulty_clip,
                ..GradCheckSettings::default()
            };
            let rows = cmd_gradcheck(&settings, &cfg.out_dir)?;
            for r in &rows {
                eprintln!(
                    "{:<24} {:>6} {:.3e} {}",
                    r.op,
                    r.checked,
                    r.max_rel_err,
                    if r.pass { "pass" } else { "FAIL" }
                );
            }
            Ok(rows.iter().all(|r| r.pass))
        }
        Command::ChainDemo(common) => {
            let mut cfg = common.base()?;
            common.apply(&mut cfg, Mode::Other)?;
            let settings = ChainDemoSettings {
                ofdm: cfg.arch().ofdm(single("clip ratio", &cfg.eval_clip_ratio)?),
                snr_db: single("SNR", &cfg.eval_snr_db)?,
                taps: single("tap count", &cfg.eval_taps)?,
                decay: cfg.train.decay,
                pilot_seed: cfg.train.pilot_seed,
                seed: cfg.train.seed,
            };
            cmd_chain_demo(&settings, &cfg.out_dir)?;
            eprintln!("wrote {}", cfg.out_dir.join("chain_demo.csv").display());
            Ok(true)
        }
        Command::Keys => {
            for (k, d, desc) in KEYS {
                println!("{:<16} {:<12} {}", k, d, desc);
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("gradient check failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::FAILURE
        }
    }
}
