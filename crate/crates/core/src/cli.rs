//! The `qvnn` command line: `train`, `eval`, `prune`, `report` and `gradcheck`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::autograd::{finite_diff_check, random_batch, GradCheckConfig};
use crate::data::{self, Dataset, Split, VALIDATION_SIZE};
use crate::error::{QvnnError, Result};
use crate::io::{load_model, save_model};
use crate::optim::AdamConfig;
use crate::presets;
use crate::regularizers::{RegConfig, RegKind, DEFAULT_THRESHOLD};
use crate::sparsity::{prune_gamma, sparsity_report, SparsityReport};
use crate::train::{evaluate, train_with, MetricsWriter, TrainConfig};

/// Command-line arguments of the `qvnn` binary.
#[derive(Parser)]
#[command(name = "qvnn", version, about = "Train, prune and inspect quaternion-valued networks")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetName {
    Mnist,
    Cifar10,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalSplit {
    Test,
    Validation,
}

#[derive(Subcommand)]
enum Command {
    /// Train a preset network and optionally save it.
    Train {
        #[arg(long, value_enum, default_value = "mnist")]
        dataset: DatasetName,
        #[arg(long)]
        data_dir: PathBuf,
        /// Defaults to mnist-qcnn for MNIST and cifar-qcnn-lite for CIFAR-10.
        #[arg(long)]
        preset: Option<String>,
        /// Train on the first N samples of the training split.
        #[arg(long)]
        subset: Option<usize>,
        /// Evaluate each epoch on the first N samples of the evaluation split.
        #[arg(long)]
        test_subset: Option<usize>,
        /// Evaluate on the held-out validation samples instead of the test set.
        #[arg(long, value_enum, default_value = "test")]
        eval_split: EvalSplit,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value = "none")]
        reg: String,
        /// Defaults to the preset's tuned value for the chosen regularizer.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = presets::DEFAULT_DROPOUT)]
        dropout: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        metrics_csv: Option<PathBuf>,
        /// Write NA in the wall_seconds column so identical runs give identical logs.
        #[arg(long)]
        omit_timing: bool,
    },
    /// Report the accuracy of a saved model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "mnist")]
        dataset: DatasetName,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: EvalSplit,
        #[arg(long)]
        test_subset: Option<usize>,
    },
    /// Remove batch-norm channels whose scale is below the threshold.
    Prune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print sparsity statistics of a saved model.
    Report {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Compare backward gradients with central finite differences.
    Gradcheck {
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        /// Check at most N randomly chosen components per parameter tensor
        /// (0 checks all of them).
        #[arg(long, default_value_t = 400)]
        max_per_param: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn load_split(name: DatasetName, dir: &Path, split: Split) -> Result<Dataset> {
    match name {
        DatasetName::Mnist => data::load_mnist(dir, split),
        DatasetName::Cifar10 => data::load_cifar10(dir, split),
    }
}

/// Training split without its validation tail, and the requested evaluation set.
fn load_sets(name: DatasetName, dir: &Path, eval: EvalSplit) -> Result<(Dataset, Dataset)> {
    let (train, validation) = load_split(name, dir, Split::Train)?.split_tail(VALIDATION_SIZE)?;
    let eval = match eval {
        EvalSplit::Validation => validation,
        EvalSplit::Test => load_split(name, dir, Split::Test)?,
    };
    Ok((train, eval))
}

fn print_report(w: &mut dyn Write, label: &str, r: &SparsityReport) -> Result<()> {
    writeln!(w, "{label},{}", r.csv_row())?;
    Ok(())
}

/// Executes one parsed command, writing its report to `out`.
pub fn run(cli: Cli, w: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train {
            dataset,
            data_dir,
            preset,
            subset,
            test_subset,
            eval_split,
            epochs,
            batch_size,
            lr,
            reg,
            lambda,
            threshold,
            seed,
            dropout,
            out,
            metrics_csv,
            omit_timing,
        } => {
            let preset = preset.unwrap_or_else(|| {
                match dataset {
                    DatasetName::Mnist => "mnist-qcnn",
                    DatasetName::Cifar10 => "cifar-qcnn-lite",
                }
                .to_string()
            });
            let kind: RegKind = reg.parse()?;
            let lambda = match lambda {
                Some(l) => l,
                None => presets::default_lambda(&preset, kind)?,
            };
            let config = TrainConfig {
                epochs,
                batch_size,
                adam: AdamConfig { lr, ..AdamConfig::default() },
                reg: RegConfig::new(kind, lambda, threshold)?,
                seed,
                dropout,
                subset,
            };
            config.validate()?;
            let mut model = presets::build(&preset, seed, dropout)?;
            let (train_set, eval_set) = load_sets(dataset, &data_dir, eval_split)?;
            let eval_set = match test_subset {
                Some(n) => eval_set.take(n),
                None => eval_set,
            };
            let mut writer = match &metrics_csv {
                Some(path) => Some(MetricsWriter::create(
                    path,
                    &format!(
                        "pixel_scale=1/255 preset={preset} reg={kind} lambda={lambda:e} threshold={threshold:e} seed={seed}"
                    ),
                    !omit_timing,
                )?),
                None => None,
            };
            writeln!(w, "{}", MetricsWriter::HEADER)?;
            train_with(&mut model, &train_set, Some(&eval_set), &config, &mut |m| {
                writeln!(
                    w,
                    "{},{:.6},{:.4},{:.4},{:.4},{:.4},{:.2}",
                    m.epoch,
                    m.train_loss,
                    m.test_acc.unwrap_or(f64::NAN),
                    m.component_sparsity,
                    m.quaternion_sparsity,
                    m.neuron_sparsity,
                    m.wall_seconds
                )?;
                match writer.as_mut() {
                    Some(log) => log.write(m),
                    None => Ok(()),
                }
            })?;
            if let Some(path) = out {
                save_model(&model, &path)?;
            }
        }
        Command::Eval {
            model,
            dataset,
            data_dir,
            split,
            test_subset,
        } => {
            let model = load_model(&model)?;
            let (_, eval_set) = load_sets(dataset, &data_dir, split)?;
            let eval_set = match test_subset {
                Some(n) => eval_set.take(n),
                None => eval_set,
            };
            writeln!(w, "accuracy={:.6}", evaluate(&model, &eval_set)?)?;
        }
        Command::Prune { model, threshold, out } => {
            let model = load_model(&model)?;
            let before = sparsity_report(&model, threshold)?;
            let pruned = prune_gamma(&model, threshold)?;
            let after = sparsity_report(&pruned, threshold)?;
            writeln!(w, "model,{}", SparsityReport::CSV_HEADER)?;
            print_report(w, "before", &before)?;
            print_report(w, "after", &after)?;
            writeln!(
                w,
                "macs_before={} macs_after={} ratio={:.4}",
                before.total_macs,
                after.total_macs,
                after.total_macs as f64 / before.total_macs as f64
            )?;
            save_model(&pruned, &out)?;
        }
        Command::Report { model, threshold } => {
            let model = load_model(&model)?;
            writeln!(w, "{}", SparsityReport::CSV_HEADER)?;
            writeln!(w, "{}", sparsity_report(&model, threshold)?.csv_row())?;
        }
        Command::Gradcheck {
            preset,
            seed,
            batch,
            max_per_param,
            tolerance,
        } => {
            let model = presets::build(&preset, seed, 0.0)?;
            let (x, labels) = random_batch(&model, batch, seed);
            let config = GradCheckConfig {
                max_per_param: (max_per_param > 0).then_some(max_per_param),
                seed,
                ..GradCheckConfig::default()
            };
            let report = finite_diff_check(&model, &x, &labels, &config)?;
            writeln!(
                w,
                "max_rel_error={:.3e} checked={} excluded={}",
                report.max_rel_error, report.checked, report.excluded
            )?;
            if !(report.max_rel_error <= tolerance) {
                let (layer, kind, idx) = report.worst.expect("a failing check has a worst component");
                return Err(QvnnError::Contract(format!(
                    "gradient check failed: relative error {:.3e} exceeds {tolerance:e} at layer {layer} {} component {idx}",
                    report.max_rel_error,
                    kind.name()
                )));
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Usage errors become contract errors carrying clap's message.
pub fn run_from<I, T>(args: I, w: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| QvnnError::Contract(e.to_string()))?;
    run(cli, w)
}

/// Entry point of the binary: exit code 2 with usage text for bad arguments,
/// 1 with a single `error[kind]: message` line on stderr for failures.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli, &mut std::io::stdout().lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
