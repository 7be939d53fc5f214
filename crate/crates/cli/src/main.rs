use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use dialogctl::dialog::corpus::{replay_corpus, Corpus, Sequence};
use dialogctl::dialog::{DomainHooks, Engine};
use dialogctl::nn::{write_checkpoint, ModelKind};
use dialogctl::phone::{load_corpus, PhoneDomain};
use dialogctl::rl::{rl_experiment, RlConfig};
use dialogctl::service::ServiceConfig;
use dialogctl::sl::{
    compare_architectures, fresh_model, loo_eval, roc_data, train_sl, EvalConfig, SlConfig,
    DEFAULT_HIDDEN,
};
use dialogctl::usersim::SimParams;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "dialogctl",
    version,
    about = "Train and evaluate recurrent dialog policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Corpus file; the bundled phone corpus when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = ModelKind::Lstm)]
    kind: ModelKind,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    /// Directory for CSV output (or the checkpoint file for train-sl).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train to reconstruction and optionally write a checkpoint.
    TrainSl {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2000)]
        max_epochs: usize,
    },
    /// Leave-one-out accuracy by training-set size.
    EvalLoo {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20")]
        sizes: Vec<usize>,
    },
    /// Which architectures can reproduce the first n dialogs.
    CompareArch {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,10,21")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        plateau: usize,
    },
    /// Score/correctness curve over random train/test splits.
    Roc {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = 11)]
        n_train: usize,
        #[arg(long, default_value_t = 10)]
        n_test: usize,
        #[arg(long, default_value_t = 20)]
        lowest: usize,
    },
    /// Policy-gradient training after supervised pre-training.
    RunRl {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,5,10")]
        n_sl: Vec<usize>,
        #[arg(long, default_value_t = 2000)]
        n_rl_dialogs: usize,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 10)]
        eval_every: usize,
        #[arg(long, default_value_t = 500)]
        eval_dialogs: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// TOML file of simulator probabilities.
        #[arg(long)]
        sim: Option<PathBuf>,
    },
    /// Start the HTTP service.
    Serve {
        /// TOML config; DIALOGCTL_* environment variables override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
    },
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn sequences(common: &Common) -> AnyResult<Vec<Sequence>> {
    let engine = Engine::new(Arc::new(PhoneDomain::builtin()));
    let corpus = match &common.corpus {
        Some(p) => Corpus::load(p)?,
        None => load_corpus(),
    };
    Ok(replay_corpus(&engine, &corpus)?)
}

fn eval_config(common: &Common, sl: SlConfig) -> EvalConfig {
    EvalConfig {
        kind: common.kind,
        hidden: common.hidden,
        seed: common.seed,
        sl,
    }
}

fn write_csv<T: Serialize>(dir: Option<&Path>, name: &str, rows: &[T]) -> AnyResult<()> {
    let Some(dir) = dir else { return Ok(()) };
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct ArchRow {
    kind: String,
    dialogs: usize,
    reconstructed: bool,
    epochs: usize,
    stop: String,
    final_loss: f64,
}

#[derive(Serialize)]
struct RocPoint {
    fpr: f64,
    tpr: f64,
}

#[derive(Serialize)]
struct RlRow {
    n_sl: usize,
    run: usize,
    dialogs: usize,
    tcr: f64,
}

#[derive(Serialize)]
struct RlSummaryRow {
    n_sl: usize,
    dialogs: usize,
    mean: f64,
    stddev: f64,
}

fn run(cli: Cli) -> AnyResult<()> {
    match cli.command {
        Command::TrainSl { common, max_epochs } => {
            let seqs = sequences(&common)?;
            let layout = PhoneDomain::builtin().layout();
            let (mut p, mut o) = fresh_model(
                common.kind,
                layout.dim(),
                common.hidden,
                layout.actions,
                common.seed,
            )?;
            let cfg = SlConfig {
                max_epochs,
                ..SlConfig::default()
            };
            let r = train_sl(&mut p, &mut o, &seqs, &cfg)?;
            println!(
                "dialogs {}  epochs {}  reconstructed {}  final loss {:.4}  {:.0} ms",
                seqs.len(),
                r.epochs,
                r.reconstructed,
                r.losses.last().copied().unwrap_or(0.0),
                r.wall_clock.as_secs_f64() * 1e3
            );
            if let Some(path) = &common.out {
                write_checkpoint(&p, BufWriter::new(File::create(path)?))?;
                eprintln!("wrote {}", path.display());
            }
        }
        Command::EvalLoo { common, sizes } => {
            let seqs = sequences(&common)?;
            let rows = loo_eval(&seqs, &sizes, &eval_config(&common, SlConfig::default()))?;
            println!(
                "{:>5}  {:>9}  {:>12}  {:>6}  {:>8}",
                "size", "per-turn", "whole-dialog", "epochs", "recon"
            );
            for r in &rows {
                println!(
                    "{:>5}  {:>9.3}  {:>12.3}  {:>6.1}  {:>8.2}",
                    r.size, r.turn_accuracy, r.dialog_accuracy, r.mean_epochs, r.reconstructed
                );
            }
            write_csv(common.out.as_deref(), "loo.csv", &rows)?;
        }
        Command::CompareArch {
            common,
            sizes,
            plateau,
        } => {
            let seqs = sequences(&common)?;
            let kinds = [ModelKind::Dnn, ModelKind::Rnn, ModelKind::Lstm];
            let cells = compare_architectures(
                &seqs,
                &kinds,
                &sizes,
                &eval_config(&common, SlConfig::with_plateau(plateau)),
            )?;
            print!("{:>6}", "");
            for s in &sizes {
                print!("  {:>10}", format!("{s} dialogs"));
            }
            println!();
            for k in kinds {
                print!("{:>6}", k.to_string());
                for s in &sizes {
                    let c = cells
                        .iter()
                        .find(|c| c.kind == k && c.dialogs == *s)
                        .unwrap();
                    print!("  {:>10}", if c.reconstructed { "yes" } else { "no" });
                }
                println!();
            }
            let rows: Vec<ArchRow> = cells
                .iter()
                .map(|c| ArchRow {
                    kind: c.kind.to_string(),
                    dialogs: c.dialogs,
                    reconstructed: c.reconstructed,
                    epochs: c.epochs,
                    stop: format!("{:?}", c.stop).to_lowercase(),
                    final_loss: c.final_loss,
                })
                .collect();
            write_csv(common.out.as_deref(), "arch.csv", &rows)?;
        }
        Command::Roc {
            common,
            repeats,
            n_train,
            n_test,
            lowest,
        } => {
            let seqs = sequences(&common)?;
            let r = roc_data(
                &seqs,
                repeats,
                n_train,
                n_test,
                &eval_config(&common, SlConfig::default()),
            )?;
            let wrong = r.turns.iter().filter(|t| !t.correct).count();
            println!("turns {}  incorrect {}", r.turns.len(), wrong);
            match r.auc {
                Some(a) => println!("AUC {a:.3}"),
                None => println!("AUC undefined (one class only)"),
            }
            println!(
                "incorrect among {lowest} lowest scores: {:.2}",
                r.lowest_incorrect_fraction(lowest)
            );
            let points: Vec<RocPoint> = r
                .points
                .iter()
                .map(|(fpr, tpr)| RocPoint {
                    fpr: *fpr,
                    tpr: *tpr,
                })
                .collect();
            write_csv(common.out.as_deref(), "roc_points.csv", &points)?;
            write_csv(common.out.as_deref(), "roc_turns.csv", &r.turns)?;
        }
        Command::RunRl {
            common,
            n_sl,
            n_rl_dialogs,
            runs,
            eval_every,
            eval_dialogs,
            alpha,
            sim,
        } => {
            let seqs = sequences(&common)?;
            let sim: SimParams = match sim {
                Some(p) => {
                    let s: SimParams = toml_params(&p)?;
                    s.validate()?;
                    s
                }
                None => SimParams::default(),
            };
            let engine = Engine::new(Arc::new(PhoneDomain::builtin()));
            let mut rows = Vec::new();
            let mut summary = Vec::new();
            for n in n_sl {
                let cfg = RlConfig {
                    n_sl: n,
                    n_rl_dialogs,
                    runs,
                    eval_every,
                    eval_dialogs,
                    seed: common.seed,
                    alpha,
                    kind: common.kind,
                    hidden: common.hidden,
                    sim,
                    ..RlConfig::default()
                };
                let c = rl_experiment(&engine, &seqs, &cfg)?;
                println!("n_sl = {n}");
                println!("  {:>8}  {:>6}  {:>6}", "dialogs", "mean", "std");
                for (i, k) in c.checkpoints.iter().enumerate() {
                    summary.push(RlSummaryRow {
                        n_sl: n,
                        dialogs: *k,
                        mean: c.mean[i],
                        stddev: c.stddev[i],
                    });
                    println!("  {:>8}  {:>6.3}  {:>6.3}", k, c.mean[i], c.stddev[i]);
                }
                for r in &c.runs {
                    for (k, t) in c.checkpoints.iter().zip(&r.tcr) {
                        rows.push(RlRow {
                            n_sl: n,
                            run: r.run,
                            dialogs: *k,
                            tcr: *t,
                        });
                    }
                }
            }
            write_csv(common.out.as_deref(), "rl_runs.csv", &rows)?;
            write_csv(common.out.as_deref(), "rl_summary.csv", &summary)?;
        }
        Command::Serve { config, port } => {
            let mut cfg = match config {
                Some(p) => ServiceConfig::load(p)?,
                None => ServiceConfig::default(),
            };
            cfg.apply_env(std::env::vars())?;
            if let Some(p) = port {
                cfg.port = p;
            }
            tokio::runtime::Runtime::new()?.block_on(dialogctl_server::serve(cfg))?;
        }
    }
    Ok(())
}

fn toml_params(path: &Path) -> AnyResult<SimParams> {
    let text = fs::read_to_string(path)?;
    let cfg = ServiceConfig::from_toml(&format!("[sim]\n{text}"))?;
    Ok(cfg.sim)
}
