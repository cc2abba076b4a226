use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cfd_core::cfd::{self, DissectionResult, NEW_MODEL, OLD_MODEL};
use cfd_core::config::KeyValues;
use cfd_core::continual::{
    baseline_train, critical_freeze_train, run_scenario, ScenarioConfig, ScenarioData, Strategy,
};
use cfd_core::micronet::{load_model, save_model, ModelState};
use cfd_core::report::{self, PlotSpec};
use cfd_core::shapeworld::{gen_dataset, Dataset};
use cfd_core::{pda, Error};

#[derive(Parser)]
#[command(name = "cfd", version, about = "Locate where a network forgets and freeze below it")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value file; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; for `scenario` replaces the configured seed list
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,
    /// Override one config key, e.g. --set window=6
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic shape dataset
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the base model on the first task
    TrainBase {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn the next task with one strategy
    Increment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        out: PathBuf,
    },
    /// Critical freezing, optionally with a given forgetting block
    FreezeTrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Forgetting block (1-based); skips the probe
        #[arg(long, conflicts_with = "dissection")]
        block: Option<usize>,
        /// Take the forgetting block from a saved dissection
        #[arg(long)]
        dissection: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export occlusion maps of the sample set, one directory per image
    Pda {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Model name inside the export, usually `old` or `new`
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two models, live or from exported maps
    Dissect {
        #[arg(long, conflicts_with_all = ["data", "old", "new"])]
        exported: Option<PathBuf>,
        #[arg(long, requires_all = ["old", "new"])]
        data: Option<PathBuf>,
        #[arg(long)]
        old: Option<PathBuf>,
        #[arg(long)]
        new: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot mean IoU curves of saved dissections
    Report {
        #[arg(long, required = true, num_args = 1..)]
        dissection: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full class-incremental run with every strategy
    Scenario {
        #[arg(long)]
        out: PathBuf,
    },
}

fn effective_config(common: &Common) -> cfd_core::Result<ScenarioConfig> {
    let mut kv = match &common.config {
        Some(p) => KeyValues::parse(&fs::read_to_string(p).map_err(|e| io_error(p, e))?)?,
        None => KeyValues::default(),
    };
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Invalid(format!("--set expects KEY=VALUE, got `{o}`")))?;
        kv.set(k.trim(), v.trim());
    }
    if let Some(seed) = common.seed {
        kv.set("seeds", seed.to_string());
    }
    ScenarioConfig::from_config(&kv)
}

fn io_error(p: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::MissingFile(p.to_path_buf())
    } else {
        Error::Io { path: p.to_path_buf(), source: e }
    }
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> cfd_core::Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn prepare_out(dir: &Path, cfg: &ScenarioConfig) -> cfd_core::Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    write(&dir.join("config.txt"), cfg.to_config())
}

fn load_data(dir: &Path, cfg: &ScenarioConfig) -> cfd_core::Result<ScenarioData> {
    ScenarioData::from_dataset(cfg, Dataset::load(dir)?)
}

/// Index of the task a model with this many classes would learn next.
fn next_task(data: &ScenarioData, model: &ModelState) -> cfd_core::Result<usize> {
    let stream = &data.stream;
    (1..stream.len())
        .find(|&t| stream.seen_classes(t - 1) == model.num_classes())
        .ok_or_else(|| {
            Error::Invalid(format!(
                "model has {} classes, which matches no task boundary with a following task",
                model.num_classes()
            ))
        })
}

fn increment(
    cfg: &ScenarioConfig,
    data_dir: &Path,
    model_dir: &Path,
    strategy: Strategy,
    forced: Option<usize>,
    out: &Path,
) -> cfd_core::Result<()> {
    let seed = cfg.seeds[0];
    let data = load_data(data_dir, cfg)?;
    let old = load_model(model_dir)?;
    let t = next_task(&data, &old)?;
    let new_classes = data.stream.task(t).classes.len();
    let ic = cfg.increment(seed, t);
    let train = data.train(t);
    prepare_out(out, cfg)?;
    let (model, plan) = match strategy {
        Strategy::Critical => {
            let o = critical_freeze_train(&old, new_classes, &train, &data.samples, &data.dissect, &ic, forced)?;
            if let Some(d) = &o.dissection {
                d.save(&out.join("probe-dissection.json"))?;
            }
            (o.model, o.plan)
        }
        s => baseline_train(&old, new_classes, &train, s, &ic)?,
    };
    save_model(&model, out)?;
    write(&out.join("plan.json"), serde_json::to_string_pretty(&plan).expect("serializable") + "\n")?;
    println!("task {t}: frozen blocks {:?}, head frozen {}", plan.frozen, plan.head_frozen);
    Ok(())
}

fn run(cli: Cli) -> cfd_core::Result<()> {
    let cfg = effective_config(&cli.common)?;
    let seed = cfg.seeds[0];
    match cli.command {
        Command::GenData { out } => {
            let d = gen_dataset(seed, cfg.per_class)?;
            d.save(&out)?;
            write(&out.join("config.txt"), cfg.to_config())?;
            println!("{} samples written to {}", d.samples.len(), out.display());
        }
        Command::TrainBase { data, out } => {
            let data = load_data(&data, &cfg)?;
            let mut m = ModelState::init(cfg.architecture(), data.stream.task(0).classes.len(), seed)?;
            m.fit(&data.train(0), &cfg.base_train(seed))?;
            let acc = cfd_core::continual::evaluate(&m, &data.test(0))?;
            prepare_out(&out, &cfg)?;
            save_model(&m, &out)?;
            println!("base accuracy {acc:.4}");
        }
        Command::Increment { data, model, strategy, out } => {
            increment(&cfg, &data, &model, strategy, None, &out)?;
        }
        Command::FreezeTrain { data, model, block, dissection, out } => {
            let forced = match (block, dissection) {
                (Some(b), _) => Some(b),
                (None, Some(p)) => Some(DissectionResult::load(&p)?.forgetting_block),
                (None, None) => None,
            };
            increment(&cfg, &data, &model, Strategy::Critical, forced, &out)?;
        }
        Command::Pda { data, model, name, out } => {
            let data = load_data(&data, &cfg)?;
            let m = load_model(&model)?;
            prepare_out(&out, &cfg)?;
            for s in &data.samples {
                let sweep = pda::sweep(&m, &s.image, &data.dissect.occlusion)?;
                cfd::export_image(&out.join(&s.id), &name, s, &sweep)?;
            }
            println!("{} images exported as `{name}`", data.samples.len());
        }
        Command::Dissect { exported, data, old, new, out } => {
            let result = match (exported, data, old, new) {
                (Some(dir), ..) => cfd::dissect_exported(&dir, cfg.binarize)?,
                (None, Some(data), Some(old), Some(new)) => {
                    let data = load_data(&data, &cfg)?;
                    cfd::dissect(&data.samples, &load_model(&old)?, &load_model(&new)?, &data.dissect)?
                }
                _ => {
                    return Err(Error::Invalid(format!(
                        "dissect needs --exported DIR (with `{OLD_MODEL}` and `{NEW_MODEL}` maps) or --data, --old and --new"
                    )))
                }
            };
            prepare_out(&out, &cfg)?;
            result.save(&out.join("dissection.json"))?;
            println!("forgetting block {}", result.forgetting_block);
        }
        Command::Report { dissection, out } => {
            let mut series = Vec::new();
            for p in &dissection {
                let label = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
                series.push((label, report::mean_curve(&DissectionResult::load(p)?)));
            }
            let spec = PlotSpec {
                title: "Mean IoU per block".into(),
                x_label: "conv block".into(),
                y_label: "IoU".into(),
                series,
            };
            let svg = report::plot_iou_curves(&spec)?;
            prepare_out(&out, &cfg)?;
            write(&out.join("iou.svg"), svg)?;
        }
        Command::Scenario { out } => {
            let m = run_scenario(&cfg)?;
            prepare_out(&out, &cfg)?;
            report::write_scenario(&out, &m)?;
            for s in &cfg.strategies {
                let name = s.to_string();
                if let Some((old, new)) = m.mean_summary(&name) {
                    println!("{name:<18} old {old:.3} new {new:.3}");
                }
            }
            if let Some((old, new)) = m.mean_summary(cfd_core::continual::JOINT) {
                println!("{:<18} old {old:.3} new {new:.3}", cfd_core::continual::JOINT);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if cli.common.parallel == 0 {
        eprintln!("error: --parallel must be at least 1");
        return ExitCode::from(1);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.common.parallel).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
