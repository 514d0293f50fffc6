//! Command-line surface over [`pipeline`](crate::pipeline).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::io::{
    config_digest, load_checkpoint, load_encoder, read_dataset, read_tensor, save_encoder, write_tensor, Dataset,
    ModelKind, RunConfig,
};
use crate::metrics::{curves_csv, dvh_svg, DoseReport};
use crate::networks::{BaselineModel, DiffDpModel};
use crate::numerics::Tensor;
use crate::phantom::PhantomCase;
use crate::pipeline;

#[derive(Debug, Parser)]
#[command(name = "diffdp", version, about = "Diffusion dose prediction on synthetic phantoms")]
struct Cli {
    /// Run config (JSON); desk-scale defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the image size.
    #[arg(long, global = true)]
    size: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
struct DataArg {
    /// Dataset root written by gen-data; falls back to `data_dir` in the config.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "test")]
    split: Split,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate phantom cases and a train/val/test split.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Number of cases; the configured split total by default.
        #[arg(long)]
        cases: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrain the structure encoder on the training split.
    Pretrain {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Encoder checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the diffusion model (or the L1 baseline with --baseline).
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory for checkpoints and loss curves.
        #[arg(long)]
        out: PathBuf,
        /// Pretrained encoder checkpoint.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        baseline: bool,
    },
    /// Predict doses for a split and write `<case_id>.ddtf` per case.
    Sample {
        #[command(flatten)]
        data: DataArg,
        /// Diffusion or baseline model checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only the first N cases of the split.
        #[arg(long)]
        cases: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score predictions against ground truth and write the report CSV.
    Eval {
        #[command(flatten)]
        data: DataArg,
        /// Directory of predicted `<case_id>.ddtf` files.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// A second prediction directory to compare against with paired t-tests.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Where to write the comparison CSV.
        #[arg(long, requires = "compare")]
        compare_out: Option<PathBuf>,
    },
    /// Write DVH curves as CSV and one SVG per case.
    PlotDvh {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn data_root(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    let root = flag
        .or_else(|| cfg.data_dir.clone())
        .ok_or_else(|| Error::Config("no dataset given (--data or data_dir)".into()))?;
    require_exists(&root, "dataset")?;
    Ok(root)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn split_of(data: Dataset, split: Split) -> Vec<PhantomCase> {
    match split {
        Split::Train => data.train,
        Split::Val => data.val,
        Split::Test => data.test,
    }
}

fn load_split(cfg: &RunConfig, arg: DataArg) -> Result<Vec<PhantomCase>> {
    let root = data_root(cfg, arg.data)?;
    Ok(split_of(read_dataset(&root)?, arg.split))
}

fn read_predictions(dir: &Path, cases: &[PhantomCase]) -> Result<Vec<Tensor>> {
    require_exists(dir, "prediction directory")?;
    cases
        .iter()
        .map(|c| read_tensor(dir.join(format!("{}.ddtf", c.case_id))))
        .collect()
}

fn report_for(cfg: &RunConfig, dir: &Path, cases: &[PhantomCase]) -> Result<DoseReport> {
    let preds = read_predictions(dir, cases)?;
    pipeline::evaluate_predictions(cfg, &preds, cases)
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => {
            require_exists(path, "config")?;
            RunConfig::load(path)?
        }
        None => RunConfig::desk(),
    };
    if let Some(size) = cli.size {
        cfg.size = size;
    }
    cfg.validate()?;

    match cli.command {
        Command::GenData { out, cases, seed } => {
            let data = pipeline::gen_data(&cfg, &out, cases, seed.unwrap_or(cfg.seed_data))?;
            log::info!(
                "wrote {} train, {} val, {} test cases to {}",
                data.train.len(),
                data.val.len(),
                data.test.len(),
                out.display()
            );
        }
        Command::Pretrain { data, out, epochs, seed } => {
            if let Some(e) = epochs {
                cfg.pretrain_epochs = e;
            }
            if let Some(s) = seed {
                cfg.seed_model = s;
            }
            let data = read_dataset(&data_root(&cfg, data)?)?;
            let outcome = pipeline::pretrain(&cfg, &data.train)?;
            save_encoder(&out, &cfg.net(), &outcome.store)?;
        }
        Command::Train {
            data,
            out,
            ckpt,
            epochs,
            seed,
            baseline,
        } => {
            if let Some(s) = seed {
                cfg.seed_train = s;
            }
            let data = read_dataset(&data_root(&cfg, data)?)?;
            if baseline {
                let epochs = epochs.unwrap_or(cfg.baseline_epochs);
                pipeline::train_baseline(&cfg, &data, epochs, Some(&out))?;
            } else {
                let encoder = match &ckpt {
                    Some(path) => {
                        require_exists(path, "encoder checkpoint")?;
                        Some(load_encoder(path, &cfg.net())?)
                    }
                    None => None,
                };
                let epochs = epochs.unwrap_or(cfg.epochs);
                pipeline::train_diffusion(&cfg, &data, encoder.as_ref(), epochs, Some(&out))?;
            }
        }
        Command::Sample {
            data,
            ckpt,
            out,
            cases,
            seed,
        } => {
            require_exists(&ckpt, "checkpoint")?;
            let mut split = load_split(&cfg, data)?;
            if let Some(n) = cases {
                split.truncate(n);
            }
            let net = cfg.net();
            let checkpoint = load_checkpoint(&ckpt)?;
            let preds = if checkpoint.digest == config_digest(ModelKind::Baseline, &net) {
                let mut model = BaselineModel::new(&net, cfg.seed_model)?;
                checkpoint.apply(checkpoint.digest, &mut model.store)?;
                pipeline::predict_baseline(&cfg, &model, &split)?
            } else {
                let mut model = DiffDpModel::new(&net, cfg.seed_model)?;
                checkpoint.apply(config_digest(ModelKind::Diffusion, &net), &mut model.store)?;
                pipeline::sample_doses(&cfg, &model, &split, seed.unwrap_or(cfg.seed_sample))?
            };
            create_dir(&out)?;
            for (case, pred) in split.iter().zip(&preds) {
                write_tensor(out.join(format!("{}.ddtf", case.case_id)), pred)?;
            }
        }
        Command::Eval {
            data,
            pred,
            out,
            compare,
            compare_out,
        } => {
            let split = load_split(&cfg, data)?;
            let report = report_for(&cfg, &pred, &split)?;
            write_text(&out, &report.to_csv())?;
            if let Some(other) = compare {
                let other = report_for(&cfg, &other, &split)?;
                let table = DoseReport::comparison_csv(&report.compare(&other)?);
                match compare_out {
                    Some(path) => write_text(&path, &table)?,
                    None => print!("{table}"),
                }
            }
        }
        Command::PlotDvh { data, pred, out } => {
            let split = load_split(&cfg, data)?;
            let report = report_for(&cfg, &pred, &split)?;
            create_dir(&out)?;
            write_text(&out.join("dvh.csv"), &curves_csv(&report.curves))?;
            for c in &report.curves {
                let svg = dvh_svg(&c.case_id, &c.pred, &c.truth);
                write_text(&out.join(format!("{}.svg", c.case_id)), &svg)?;
            }
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs one command and returns the
/// process exit code: 0 on success, 2 for usage errors, 1 otherwise.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
