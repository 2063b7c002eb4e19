use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use himoe_core::checkpoint;
use himoe_core::data::{generate, write_dataset};
use himoe_core::experiment::{
    self, ablate, gradcheck, history_csv, metrics_csv, report_routing, routing_csv, run_once, sweep_experts,
    sweep_missing, DataSource, GradcheckConfig,
};
use himoe_core::train::{eval_batch, evaluate};
use himoe_core::{GeneratorConfig, Model, RunConfig, Split};

#[derive(Parser)]
#[command(name = "himoe", version, about = "Hierarchical MoE emotion regression under missing modalities")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set loss.lambda=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        Ok(RunConfig::load(self.config.as_deref(), &self.set)?)
    }
}

#[derive(Args, Clone)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Worker threads; 0 uses every available core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generator configuration as JSON; defaults to the built-in benchmark.
        #[arg(long)]
        generator: Option<PathBuf>,
        /// Print the default generator JSON and exit.
        #[arg(long)]
        print_default: bool,
    },
    /// Train one model and write its checkpoint, history and metrics.
    Train(ConfigArgs),
    /// Score a trained run on validation and test.
    Eval {
        /// Directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Dataset directory; defaults to the one the run used.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Missing rate for the evaluation masks; defaults to the run's.
        #[arg(long)]
        rate: Option<f64>,
        /// Where to write `eval_metrics.csv`; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full model and baseline over the missing-rate grid.
    SweepMissing(SweepArgs),
    /// Full model over the emotion-expert grid.
    SweepExperts(SweepArgs),
    /// Full model against its three ablations.
    Ablate(SweepArgs),
    /// Mean routing weights per presence pattern for a trained run.
    ReportRouting {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every op and the composite loss.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn write(dir: &Path, name: &str, body: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn jobs(n: usize) -> usize {
    if n > 0 {
        n
    } else {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    }
}

fn progress(line: &str) {
    eprintln!("{line}");
}

/// A trained run reloaded from its directory.
struct LoadedRun {
    cfg: RunConfig,
    source: DataSource,
    model: Model,
    params: himoe_core::ParamSet,
}

fn load_run(run: &Path, data: Option<&Path>) -> Result<LoadedRun> {
    let cfg = RunConfig::load(Some(&run.join("config.txt")), &[])
        .with_context(|| format!("reading the config of run {}", run.display()))?;
    let source = match data {
        Some(d) => DataSource::from_dir(d)?,
        None => DataSource::from_config(&cfg)?,
    };
    let bundle = source.bundle(cfg.seed)?;
    let modes = cfg.modes_for(&bundle.manifest.dimensions)?;
    let (model, mut params) = Model::new(&cfg.model, &bundle.input_dims(), &modes, cfg.seed)?;
    checkpoint::load_into(&mut params, &run.join("model.ckpt"))?;
    Ok(LoadedRun {
        cfg,
        source,
        model,
        params,
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Synth {
            out,
            seed,
            generator,
            print_default,
        } => {
            if print_default {
                println!("{}", serde_json::to_string_pretty(&GeneratorConfig::default())?);
                return Ok(ExitCode::SUCCESS);
            }
            let gen = match generator {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => GeneratorConfig::default(),
            };
            let bundle = generate(&gen, seed)?;
            write_dataset(&bundle, &out)?;
            eprintln!(
                "wrote {} ({} train / {} val / {} test windows)",
                out.display(),
                bundle.train.len(),
                bundle.val.len(),
                bundle.test.len()
            );
        }
        Cmd::Train(args) => {
            let cfg = args.load()?;
            let source = DataSource::from_config(&cfg)?;
            let data = source.bundle(cfg.seed)?;
            prepare_out(&cfg.out)?;
            let res = run_once(&cfg, &data, |h| {
                eprintln!(
                    "epoch {:>3}  lr {:.2e}  train {:.4}  val {:.4}  val ccc {:.4}",
                    h.epoch, h.lr, h.train_loss, h.val_loss, h.val_ccc
                )
            })?;
            checkpoint::save(&res.params, &cfg.out.join("model.ckpt"))?;
            write(&cfg.out, "history.csv", history_csv(&res.history))?;
            write(
                &cfg.out,
                "metrics.csv",
                metrics_csv(&[&res.val, &res.test], cfg.seed, cfg.missing_rate),
            )?;
            write(&cfg.out, "config.txt", cfg.to_text())?;
            let outputs = ["model.ckpt", "model.ckpt.index", "history.csv", "metrics.csv", "config.txt"];
            write(&cfg.out, "run_manifest.json", experiment::run_manifest("train", &cfg, source.describe(), &outputs))?;
            eprintln!(
                "best epoch {}{}: val ccc {:.4}, test ccc {:.4}",
                res.best_epoch,
                if res.stopped_early { " (stopped early)" } else { "" },
                res.val.mean_ccc(),
                res.test.mean_ccc()
            );
        }
        Cmd::Eval { run, data, rate, out } => {
            let r = load_run(&run, data.as_deref())?;
            let bundle = r.source.bundle(r.cfg.seed)?;
            let rate = rate.unwrap_or(r.cfg.missing_rate);
            let dims = &bundle.manifest.dimensions;
            let mut reports = Vec::new();
            for split in [Split::Val, Split::Test] {
                let batch = eval_batch(&bundle, split, rate, r.cfg.seed)?;
                reports.push(evaluate(&r.model, &r.params, &batch, dims, split.name())?);
            }
            let out = out.unwrap_or(run);
            prepare_out(&out)?;
            write(&out, "eval_metrics.csv", metrics_csv(&[&reports[0], &reports[1]], r.cfg.seed, rate))?;
            for rep in &reports {
                println!("{}: ccc {:.4}  pcc {:.4}  mae {:.4}", rep.split, rep.mean_ccc(), rep.mean_pcc(), rep.mean_mae());
            }
        }
        Cmd::SweepMissing(args) => {
            let cfg = args.cfg.load()?;
            let source = DataSource::from_config(&cfg)?;
            prepare_out(&cfg.out)?;
            let curve = sweep_missing(&cfg, &source, jobs(args.jobs), &progress)?;
            write(&cfg.out, "degradation_curve.csv", curve.to_csv())?;
            let outputs = ["degradation_curve.csv"];
            write(&cfg.out, "run_manifest.json", experiment::run_manifest("sweep-missing", &cfg, source.describe(), &outputs))?;
        }
        Cmd::SweepExperts(args) => {
            let cfg = args.cfg.load()?;
            let source = DataSource::from_config(&cfg)?;
            prepare_out(&cfg.out)?;
            let table = sweep_experts(&cfg, &source, jobs(args.jobs), &progress)?;
            write(&cfg.out, "expert_sweep.csv", table.to_csv())?;
            let outputs = ["expert_sweep.csv"];
            write(&cfg.out, "run_manifest.json", experiment::run_manifest("sweep-experts", &cfg, source.describe(), &outputs))?;
        }
        Cmd::Ablate(args) => {
            let cfg = args.cfg.load()?;
            let source = DataSource::from_config(&cfg)?;
            prepare_out(&cfg.out)?;
            let table = ablate(&cfg, &source, jobs(args.jobs), &progress)?;
            write(&cfg.out, "ablation.csv", table.to_csv())?;
            let outputs = ["ablation.csv"];
            write(&cfg.out, "run_manifest.json", experiment::run_manifest("ablate", &cfg, source.describe(), &outputs))?;
        }
        Cmd::ReportRouting {
            run,
            data,
            split,
            rate,
            out,
        } => {
            let split = match split.as_str() {
                "train" => Split::Train,
                "val" => Split::Val,
                "test" => Split::Test,
                other => bail!("unknown split `{other}` (expected train, val or test)"),
            };
            let r = load_run(&run, data.as_deref())?;
            let bundle = r.source.bundle(r.cfg.seed)?;
            let batch = eval_batch(&bundle, split, rate.unwrap_or(r.cfg.missing_rate), r.cfg.seed)?;
            let names: Vec<String> = bundle.manifest.modalities.iter().map(|m| m.name.clone()).collect();
            let rows = report_routing(&r.model, &r.params, &batch, &names)?;
            let out = out.unwrap_or(run);
            prepare_out(&out)?;
            write(&out, "routing_weights.csv", routing_csv(&rows))?;
        }
        Cmd::Gradcheck { tol, seed } => {
            let cfg = GradcheckConfig {
                tol,
                seed,
                ..GradcheckConfig::default()
            };
            let start = std::time::Instant::now();
            let suite = gradcheck(&cfg, None)?;
            print!("{}", suite.to_text());
            println!("{} cases in {:.2?}", suite.entries.len(), start.elapsed());
            if !suite.passed() {
                for f in suite.failures() {
                    eprintln!("gradcheck failed: {} (max relative error {:.3e} at {})", f.name, f.max_rel_error, f.worst);
                }
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
