use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use xidiff::data::{avg_brightness, cylinder_dataset, CylinderConfig, SampleBatch, Split};
use xidiff::denoiser::read_checkpoint;
use xidiff::experiment::config::BandwidthMode;
use xidiff::experiment::grid::{grid, run_grid, write_reports, RunResult};
use xidiff::experiment::report::{metric_svg, summarize, write_brightness_csv, write_summary_csv, Metric};
use xidiff::experiment::train::{append_rows, load_datasets, read_rows, train, TrainOptions};
use xidiff::experiment::{Profile, RunConfig};
use xidiff::metrics::{ks_vs_uniform, mmd, wasserstein1};
use xidiff::sampler::generate;

#[derive(Parser)]
#[command(name = "xidiff", version, about = "Diffusion with auxiliary noise: data, training, sampling and checks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration (.toml or .json). Defaults to the chosen profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base profile when no config file is given.
    #[arg(long, default_value = "desk")]
    profile: Profile,
    /// Dotted-key override, e.g. `model.variant=proposed`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::profile(self.profile),
        };
        let cfg = base.with_overrides(&self.overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write train/test Cylinder datasets.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Number of consecutive seeds, starting at `dataset.seed`.
        #[arg(long, default_value_t = 1)]
        pairs: u64,
    },
    /// Write the schedule tables as CSV.
    Schedule {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model, writing checkpoints and a metrics log into `out`.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Training CSV; generated from the config when omitted.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Test CSV; generated from the config when omitted.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Generate samples from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two sample files.
    Eval {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 1000)]
        wd_subsample: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "sqrt-n")]
        bandwidth: BandwidthArg,
        /// Brightness range for the KS statistic of `a`.
        #[arg(long, default_value_t = 2.0)]
        k: f64,
    },
    /// Aggregate metrics logs into summary CSV and SVG plots.
    Report {
        /// Metrics CSV files written by `train` or `experiment`.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// `label=path` sample files for the brightness histogram. Repeatable.
        #[arg(long = "samples", value_name = "LABEL=PATH")]
        samples: Vec<String>,
        #[arg(long, default_value_t = 2.0)]
        k: f64,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Run every oracle check; exits with 3 if any fails.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the reports as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid of training runs with an on-disk cache.
    Experiment {
        #[arg(long, default_value = "desk")]
        profile: Profile,
        #[arg(long, default_value = "target/experiment-cache")]
        cache: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only run entries with this data width.
        #[arg(long)]
        dim: Option<usize>,
        /// Report on cached runs without training missing ones.
        #[arg(long)]
        report_only: bool,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum BandwidthArg {
    SqrtN,
    SqrtSqrtN,
}

impl From<BandwidthArg> for BandwidthMode {
    fn from(b: BandwidthArg) -> Self {
        match b {
            BandwidthArg::SqrtN => BandwidthMode::SqrtN,
            BandwidthArg::SqrtSqrtN => BandwidthMode::SqrtSqrtN,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<xidiff::Error>())
                .map_or(2, |x| x.exit_code());
            ExitCode::from(code as u8)
        }
    }
}

fn run(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::GenData { cfg, out, pairs } => gen_data(&cfg.load()?.dataset, &out, pairs),
        Cmd::Schedule { cfg, out } => {
            cfg.load()?
                .tables()?
                .write_csv(std::io::BufWriter::new(std::fs::File::create(&out)?))?;
            Ok(())
        }
        Cmd::Train { cfg, out, train, test } => cmd_train(&cfg.load()?, &out, train, test),
        Cmd::Sample {
            checkpoint,
            count,
            seed,
            out,
        } => cmd_sample(&checkpoint, count, seed, &out),
        Cmd::Eval {
            a,
            b,
            wd_subsample,
            seed,
            bandwidth,
            k,
        } => {
            let (a, b) = (SampleBatch::read_csv(&a)?, SampleBatch::read_csv(&b)?);
            if a.dim != b.dim {
                return Err(xidiff::Error::Shape(format!("sample widths differ: {} vs {}", a.dim, b.dim)).into());
            }
            let h = BandwidthMode::from(bandwidth).bandwidth(a.dim);
            let rec = serde_json::json!({
                "w1": wasserstein1(&a, &b, wd_subsample, seed)?,
                "mmd": mmd(&a, &b, h)?,
                "ks_a": ks_vs_uniform(&avg_brightness(&a), k)?,
                "rows_a": a.rows(),
                "rows_b": b.rows(),
                "divergences_a": a.meta.divergences,
            });
            println!("{rec}");
            Ok(())
        }
        Cmd::Report {
            logs,
            out,
            samples,
            k,
            bins,
        } => cmd_report(&logs, &out, &samples, k, bins),
        Cmd::Verify { seed, out } => {
            let reports = xidiff::verify::run_all(seed)?;
            for r in &reports {
                println!("{}", r.line());
            }
            if let Some(p) = out {
                xidiff::verify::write_reports(&p, &reports)?;
            }
            let failed = reports.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(xidiff::Error::Numeric(format!("{failed} of {} checks failed", reports.len())).into());
            }
            Ok(())
        }
        Cmd::Experiment {
            profile,
            cache,
            out,
            dim,
            report_only,
        } => {
            let cfgs: Vec<RunConfig> = grid(profile)
                .into_iter()
                .filter(|c| dim.is_none_or(|d| c.dataset.dim == d))
                .collect();
            if report_only {
                let mut results: Vec<RunResult> = Vec::new();
                for c in &cfgs {
                    match xidiff::experiment::grid::load_cached(c, &cache)? {
                        Some(r) => results.push(r),
                        None => log::warn!("no cached result for config {}", c.hash()),
                    }
                }
                write_reports(&results, &cache, &out)?;
            } else {
                run_grid(&cfgs, &cache, &out)?;
            }
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn gen_data(cfg: &CylinderConfig, out: &Path, pairs: u64) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    for s in cfg.seed..cfg.seed + pairs {
        let c = CylinderConfig { seed: s, ..cfg.clone() };
        let train = cylinder_dataset(&c)?;
        let test = xidiff::data::cylinder_with_latents(&c, Split::Test)?.batch;
        train.write_csv(&out.join(format!("train_seed{s}.csv")))?;
        test.write_csv(&out.join(format!("test_seed{s}.csv")))?;
    }
    println!("wrote {pairs} dataset pair(s) to {}", out.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path, train_p: Option<PathBuf>, test_p: Option<PathBuf>) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    let (gen_train, gen_test) = load_datasets(cfg)?;
    let train_set = match train_p {
        Some(p) => SampleBatch::read_csv(&p).with_context(|| format!("reading {}", p.display()))?,
        None => gen_train,
    };
    let test_set = match test_p {
        Some(p) => SampleBatch::read_csv(&p).with_context(|| format!("reading {}", p.display()))?,
        None => gen_test,
    };
    cfg.save(&out.join("config.toml"))?;
    let log = out.join("metrics.csv");
    if log.exists() {
        std::fs::remove_file(&log)?;
    }
    let outcome = train(
        cfg,
        &train_set,
        &test_set,
        &TrainOptions {
            run_id: format!("{}-{}-n{}-s{}", cfg.model.variant, cfg.model.prediction, cfg.dataset.dim, cfg.master_seed),
            checkpoint_dir: Some(out.to_path_buf()),
            log_path: Some(log),
        },
    )?;
    outcome.final_samples.write_csv(&out.join("samples.csv"))?;
    if let Some(r) = outcome.rows.last() {
        println!(
            "step {}: w1={:.4} mmd={:.4} ks={:.4} divergences={} skipped_steps={}",
            r.step, r.w1, r.mmd, r.ks, r.divergences, outcome.skipped_steps
        );
    }
    Ok(())
}

fn cmd_sample(ckpt: &Path, count: usize, seed: u64, out: &Path) -> anyhow::Result<()> {
    let (header, model) = read_checkpoint(ckpt)?;
    let Some(cfg_json) = header.config.clone() else {
        bail!(xidiff::Error::Corrupt {
            path: ckpt.display().to_string(),
            reason: "checkpoint carries no run configuration".into(),
        });
    };
    let cfg: RunConfig = serde_json::from_value(cfg_json).map_err(xidiff::Error::from)?;
    cfg.validate()?;
    if cfg.schedule_hash() != header.schedule_hash {
        bail!(xidiff::Error::Corrupt {
            path: ckpt.display().to_string(),
            reason: "schedule hash does not match the embedded configuration".into(),
        });
    }
    let tables = cfg.tables()?;
    let mut samples = generate(&model, &tables, &cfg.xi_spec(), &cfg.sampler_config(count, seed))?.scaled(cfg.scaling_rho);
    samples.meta.step = Some(header.step);
    samples.meta.config_hash = cfg.hash();
    samples.write_csv(out)?;
    println!(
        "wrote {} of {} samples to {} (divergences: {}, clipped: {})",
        samples.rows(),
        count,
        out.display(),
        samples.meta.divergences,
        samples.meta.clipped
    );
    Ok(())
}

fn cmd_report(logs: &[PathBuf], out: &Path, samples: &[String], k: f64, bins: usize) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for p in logs {
        rows.extend(read_rows(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let merged = out.join("metrics.csv");
    if merged.exists() {
        std::fs::remove_file(&merged)?;
    }
    append_rows(&merged, &rows)?;
    let summary = summarize(&rows);
    write_summary_csv(&out.join("summary.csv"), &summary)?;
    let mut dims: Vec<usize> = rows.iter().map(|r| r.n).collect();
    dims.sort_unstable();
    dims.dedup();
    for n in dims {
        for (m, tag) in [(Metric::W1, "w1"), (Metric::Mmd, "mmd"), (Metric::Ks, "ks")] {
            std::fs::write(out.join(format!("{tag}_n{n}.svg")), metric_svg(&summary, m, n))?;
        }
    }
    if !samples.is_empty() {
        let mut sets = Vec::new();
        for s in samples {
            let Some((label, path)) = s.split_once('=') else {
                return Err(xidiff::Error::Config(format!("expected LABEL=PATH, got '{s}'")).into());
            };
            sets.push((label.to_string(), SampleBatch::read_csv(Path::new(path))?));
        }
        let refs: Vec<(String, &SampleBatch)> = sets.iter().map(|(l, b)| (l.clone(), b)).collect();
        write_brightness_csv(&out.join("brightness.csv"), &refs, k, bins)?;
    }
    println!("{} summary rows written to {}", summary.len(), out.display());
    Ok(())
}
