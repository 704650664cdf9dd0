use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use jointdiff::degradation::AtmosphericLight;
use jointdiff::diffusion::Condition;
use jointdiff::harness::{
    coarse_restorations, evaluate, load_denoiser, load_refiner, resolve_mask, restore_image, save_denoiser,
    save_refiner, save_restore_output, synth_dataset, train_denoiser, train_refiner, write_log_csv, DatasetManifest,
    DiffusionPipeline, ExperimentConfig, ExperimentManifest, MaskSource, MetricReport, Split, MANIFEST_FILE,
};
use jointdiff::ImageF;

const EXPERIMENT_FILE: &str = "experiment.json";

#[derive(Parser)]
#[command(name = "jointdiff", version, about = "Mixed-degradation restoration with conditional diffusion")]
struct Cli {
    /// Experiment config (TOML, or JSON by extension). Defaults apply without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Config override `key.path=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Worker threads. `1` gives the reference single-threaded run.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize degraded samples, masks and a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the conditional noise predictor on the training split.
    TrainDiffusion {
        /// Dataset directory holding `manifest.json`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the refiner on coarse restorations from a frozen denoiser.
    TrainRefine {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        denoiser: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore one image and write the refined, coarse and uncertainty maps.
    Restore {
        /// Degraded input. With `--mask-source oracle`, use `--data` and `--sample` instead.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = MaskMode::Baseline)]
        mask_source: MaskMode,
        /// Mask PNG for `--mask-source file`.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        sample: Option<String>,
        /// Uniform atmospheric light for the baseline mask predictor.
        #[arg(long, default_value_t = 0.9)]
        light: f32,
        #[arg(long, default_value_t = 0.05)]
        threshold: f32,
        #[arg(long)]
        denoiser: PathBuf,
        #[arg(long)]
        refiner: Option<PathBuf>,
        /// Sampling steps; defaults to the config's.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore every sample of a split and write per-sample and per-case metrics.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        denoiser: PathBuf,
        #[arg(long)]
        refiner: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Holdout)]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the per-case table of a metrics CSV.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        /// Also write the per-case aggregate as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskMode {
    Oracle,
    Baseline,
    File,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Holdout,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Holdout => Some(Split::Holdout),
            SplitArg::All => None,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use jointdiff::Error;
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Numeric(_)) => 3,
        Some(Error::Param(_) | Error::Toml(_) | Error::Json(_) | Error::Shape(_)) => 2,
        Some(_) => 1,
        None => 2,
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_dataset(dir: &Path) -> anyhow::Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let m = DatasetManifest::load(&path).with_context(|| format!("reading {}", path.display()))?;
    m.verify(dir).context("dataset integrity check")?;
    Ok(m)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(jointdiff::Error::Param("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = ExperimentConfig::load_with_overrides(cli.config.as_deref(), &cli.overrides).context("loading config")?;
    match cli.command {
        Command::Synth { out } => {
            let m = synth_dataset(&cfg.synth, cfg.seed, &out)?;
            let mut exp = ExperimentManifest::new("synth", &cfg, &[])?;
            exp.add_output("manifest", &out.join(MANIFEST_FILE))?;
            exp.save(&out.join(EXPERIMENT_FILE))?;
            println!("{} samples written to {}", m.samples.len(), out.display());
        }
        Command::TrainDiffusion { data, out } => {
            let m = load_dataset(&data)?;
            let samples = m.load_samples(&data, Some(Split::Train))?;
            let schedule = cfg.schedule.build()?;
            create_dir(&out)?;
            let (net, log) = train_denoiser(&samples, &schedule, cfg.denoiser, &cfg.diffusion_training, cfg.seed)?;
            let ckpt = out.join("denoiser.ckpt");
            save_denoiser(&ckpt, &net, &cfg.schedule)?;
            let log_path = out.join("diffusion_log.csv");
            write_log_csv(&log_path, &log)?;
            let mut exp = ExperimentManifest::new("train-diffusion", &cfg, &[("dataset", &data.join(MANIFEST_FILE))])?;
            exp.add_output("denoiser", &ckpt)?;
            exp.add_output("log", &log_path)?;
            exp.save(&out.join(EXPERIMENT_FILE))?;
            if let (Some(first), Some(last)) = (log.first(), log.last()) {
                println!("loss {:.4} -> {:.4}; checkpoint {}", first.loss, last.loss, ckpt.display());
            }
        }
        Command::TrainRefine { data, denoiser, out } => {
            let m = load_dataset(&data)?;
            let samples = m.load_samples(&data, Some(Split::Train))?;
            let (net, sched_cfg) = load_denoiser(&denoiser).with_context(|| format!("loading {}", denoiser.display()))?;
            let schedule = sched_cfg.build()?;
            create_dir(&out)?;
            let coarse = coarse_restorations(&net, &schedule, &samples, cfg.sampling_steps, cfg.seed)?;
            let (refiner, log) = train_refiner(&samples, &coarse, cfg.refiner, &cfg.refiner_training, cfg.seed)?;
            let ckpt = out.join("refiner.ckpt");
            save_refiner(&ckpt, &refiner)?;
            let log_path = out.join("refiner_log.csv");
            write_log_csv(&log_path, &log)?;
            let mut exp = ExperimentManifest::new(
                "train-refine",
                &cfg,
                &[("dataset", &data.join(MANIFEST_FILE)), ("denoiser", &denoiser)],
            )?;
            exp.add_output("refiner", &ckpt)?;
            exp.add_output("log", &log_path)?;
            exp.save(&out.join(EXPERIMENT_FILE))?;
            if let (Some(first), Some(last)) = (log.first(), log.last()) {
                println!("total loss {:.4} -> {:.4}; checkpoint {}", first.total, last.total, ckpt.display());
            }
        }
        Command::Restore {
            input,
            mask_source,
            mask,
            data,
            sample,
            light,
            threshold,
            denoiser,
            refiner,
            steps,
            seed,
            out,
        } => {
            let (image, source) = match mask_source {
                MaskMode::Oracle => {
                    let (Some(data), Some(id)) = (data, sample) else {
                        bail!(jointdiff::Error::Param("oracle masks need --data and --sample".into()));
                    };
                    let m = load_dataset(&data)?;
                    let rec = m
                        .samples
                        .iter()
                        .find(|s| s.id == id)
                        .ok_or_else(|| jointdiff::Error::Param(format!("no sample {id} in {}", data.display())))?;
                    let s = m.load_sample(&data, rec)?;
                    (s.condition.degraded, MaskSource::Oracle(s.condition.mask))
                }
                MaskMode::Baseline | MaskMode::File => {
                    let Some(input) = input else {
                        bail!(jointdiff::Error::Param("--input is required".into()));
                    };
                    let image = ImageF::load_png(&input)?;
                    let source = match mask_source {
                        MaskMode::File => MaskSource::File(
                            mask.ok_or_else(|| jointdiff::Error::Param("--mask-source file needs --mask".into()))?,
                        ),
                        _ => MaskSource::Baseline {
                            light: AtmosphericLight::Uniform(light),
                            threshold,
                        },
                    };
                    (image, source)
                }
            };
            let mask = resolve_mask(&source, &image)?;
            let (net, sched_cfg) = load_denoiser(&denoiser).with_context(|| format!("loading {}", denoiser.display()))?;
            let refiner = refiner
                .map(|p| load_refiner(&p).with_context(|| format!("loading {}", p.display())))
                .transpose()?;
            let condition = Condition::new(image, mask)?;
            let output = restore_image(
                &condition,
                &net,
                refiner.as_ref(),
                &sched_cfg.build()?,
                steps.unwrap_or(cfg.sampling_steps),
                seed.unwrap_or(cfg.seed),
            )?;
            save_restore_output(&output, &out)?;
            println!("restored image written to {}", out.join("refined.png").display());
        }
        Command::Eval {
            data,
            denoiser,
            refiner,
            split,
            out,
        } => {
            let m = load_dataset(&data)?;
            let samples = m.load_samples(&data, split.split())?;
            let (net, sched_cfg) = load_denoiser(&denoiser).with_context(|| format!("loading {}", denoiser.display()))?;
            let schedule = sched_cfg.build()?;
            let refiner_net = refiner
                .as_ref()
                .map(|p| load_refiner(p).with_context(|| format!("loading {}", p.display())))
                .transpose()?;
            let pipeline = DiffusionPipeline {
                denoiser: &net,
                refiner: refiner_net.as_ref(),
                schedule: &schedule,
                steps: cfg.sampling_steps,
            };
            let report = evaluate(&pipeline, &samples, cfg.seed)?;
            create_dir(&out)?;
            let csv = out.join("metrics.csv");
            let json = out.join("metrics_summary.json");
            report.write_csv(&csv)?;
            report.write_aggregate_json(&json)?;
            let manifest_path = data.join(MANIFEST_FILE);
            let mut inputs: Vec<(&str, &Path)> = vec![("dataset", &manifest_path), ("denoiser", &denoiser)];
            if let Some(r) = &refiner {
                inputs.push(("refiner", r));
            }
            let mut exp = ExperimentManifest::new("eval", &cfg, &inputs)?;
            exp.add_output("metrics", &csv)?;
            exp.add_output("summary", &json)?;
            exp.save(&out.join(EXPERIMENT_FILE))?;
            print!("{}", report.table());
        }
        Command::Report { metrics, json } => {
            let report = MetricReport::read_csv(&metrics).with_context(|| format!("reading {}", metrics.display()))?;
            if let Some(j) = json {
                report.write_aggregate_json(&j)?;
            }
            print!("{}", report.table());
        }
    }
    Ok(())
}
