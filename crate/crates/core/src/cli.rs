//! `hypermm` command line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::data::{apply_missingness, generate, Dataset, DatasetSchema, GeneratorConfig, Mechanism};
use crate::error::{Error, Result};
use crate::eval::metrics::{Metric, MetricSet};
use crate::eval::ScenarioFile;
use crate::ndiff::Checkpoint;
use crate::setnet::SetObservation;
use crate::trainer::{run_full, split_dataset, HyperMM, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "hypermm",
    version,
    about = "Multimodal classification with missing modalities, without imputation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with a missingness mask.
    Generate {
        /// TOML file with [schema] and [generator] sections.
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        missing_rate: f64,
        /// `mcar` or `modality_k_only`.
        #[arg(long, default_value = "mcar")]
        mechanism: String,
        /// Modality index for `modality_k_only`.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write a tab-separated text export.
        #[arg(long)]
        text_out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Run the full two-phase training on a dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_checkpoint: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Per-epoch losses, tab-separated.
        #[arg(long)]
        loss_table: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Score a trained checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
        split: SplitChoice,
        /// Write the metrics as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Multi-seed comparison of HyperMM against baselines.
    Compare {
        #[arg(long)]
        scenarios: PathBuf,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Print a checkpoint's header and tensor shapes.
    InspectCheckpoint {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    schema: DatasetSchema,
    #[serde(default)]
    generator: Option<GeneratorConfig>,
}

fn check_writable(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::arg(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

pub fn format_metrics(m: &MetricSet) -> String {
    let mut out = String::new();
    for metric in Metric::ALL {
        let _ = write!(out, "{}={:.4} ", metric.name(), m.get(metric));
    }
    let _ = write!(out, "n={}", m.n_eval);
    let u = m.undefined;
    if u.auc || u.precision || u.recall {
        let _ = write!(
            out,
            " undefined={{auc:{},precision:{},recall:{}}}",
            u.auc, u.precision, u.recall
        );
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    schema_path: &Path,
    n: usize,
    seed: u64,
    rate: f64,
    mechanism: &str,
    k: Option<usize>,
    out: &Path,
    text_out: Option<&Path>,
    force: bool,
) -> Result<String> {
    let text = std::fs::read_to_string(schema_path).map_err(|e| Error::io(schema_path, e))?;
    let spec: SchemaFile =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", schema_path.display(), e.message())))?;
    spec.schema.validate()?;
    let mech = Mechanism::parse(mechanism, k)?;
    if n == 0 {
        return Err(Error::arg("--n must be >= 1"));
    }
    check_writable(out, force)?;
    if let Some(t) = text_out {
        check_writable(t, force)?;
    }
    let gen = spec.generator.unwrap_or_default();
    let samples = generate(&spec.schema, n, seed, &gen)?;
    let masked = apply_missingness(&samples, rate, mech, crate::ndiff::rng::mix_seed(seed, "mask"))?;
    let ds = Dataset::new(spec.schema, masked)?;
    ds.save(out)?;
    if let Some(t) = text_out {
        write_text(t, &ds.to_text())?;
    }

    let mut msg = format!(
        "wrote {} samples to {}\nschema: d={} r={} c={}\n",
        n,
        out.display(),
        ds.schema.num_modalities(),
        ds.schema.input_width,
        ds.schema.num_classes
    );
    for (i, rate) in ds.missing_rates().iter().enumerate() {
        let _ = writeln!(
            msg,
            "modality {i} ({}{}): missing {:.4}",
            ds.schema.modalities[i],
            if ds.schema.bags[i] { ", bag" } else { "" },
            rate
        );
    }
    Ok(msg)
}

fn cmd_train(
    config: Option<&Path>,
    data: &Path,
    ckpt: &Path,
    report: &Path,
    loss_table: Option<&Path>,
    force: bool,
) -> Result<String> {
    let cfg = load_config(config)?;
    let ds = Dataset::load(data)?;
    for p in [Some(ckpt), Some(report), loss_table].into_iter().flatten() {
        check_writable(p, force)?;
    }
    let (model, rep) = run_full(&cfg, &ds)?;
    model.to_checkpoint().save(ckpt)?;
    write_text(report, &rep.to_json())?;
    if let Some(p) = loss_table {
        write_text(p, &rep.loss_table())?;
    }
    let mut msg = String::new();
    if let Some(p1) = &rep.phase1 {
        let _ = writeln!(
            msg,
            "phase1: {} epochs, best {} (val {:.6})",
            p1.stopped_epoch(),
            p1.best_epoch,
            p1.best_val_loss
        );
    }
    let _ = writeln!(
        msg,
        "{}: {} epochs, best {} (val {:.6})",
        rep.phase2.phase,
        rep.phase2.stopped_epoch(),
        rep.phase2.best_epoch,
        rep.phase2.best_val_loss
    );
    if rep.two_steps {
        let _ = writeln!(msg, "encoder checksum unchanged in phase 2: {}", rep.checksums_match());
    }
    let _ = writeln!(msg, "test: {}", format_metrics(&rep.test_metrics));
    Ok(msg)
}

fn cmd_eval(ckpt: &Path, data: &Path, split: SplitChoice, out: Option<&Path>, force: bool) -> Result<String> {
    let model = HyperMM::from_checkpoint(&Checkpoint::load(ckpt)?)?;
    let ds = Dataset::load(data)?;
    if ds.schema != model.schema {
        return Err(Error::arg(format!(
            "{} was built for a different schema than {}",
            ckpt.display(),
            data.display()
        )));
    }
    if let Some(p) = out {
        check_writable(p, force)?;
    }
    let samples = match split {
        SplitChoice::All => ds.samples.clone(),
        other => {
            let [train, val, test] = split_dataset(&ds, &model.config)?;
            match other {
                SplitChoice::Train => train,
                SplitChoice::Val => val,
                _ => test,
            }
        }
    };
    let sets: Vec<SetObservation> = samples.iter().map(crate::data::to_set).collect();
    let metrics = model.evaluate(&sets)?;
    if let Some(p) = out {
        let mut json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
        json.push('\n');
        write_text(p, &json)?;
    }
    Ok(format!("{}\n", format_metrics(&metrics)))
}

fn cmd_compare(
    scenarios: &Path,
    seeds: &[u64],
    out: &Path,
    jobs: usize,
    config: Option<&Path>,
    force: bool,
) -> Result<String> {
    let file = ScenarioFile::load(scenarios)?;
    let cfg = load_config(config)?;
    check_writable(out, force)?;
    let cmp = crate::eval::scenario_compare(&file, seeds, &cfg, jobs)?;
    write_text(out, &cmp.to_tsv())?;
    let mut msg = format!("wrote {} rows to {}\n", cmp.rows.len(), out.display());
    for c in &cmp.checks {
        let _ = writeln!(msg, "{}", c.line());
    }
    Ok(msg)
}

fn cmd_inspect(ckpt: &Path) -> Result<String> {
    let ck = Checkpoint::load(ckpt)?;
    let mut msg = String::new();
    for (k, v) in &ck.header {
        if v.contains('\n') {
            let _ = writeln!(msg, "[{k}]\n{}", v.trim_end());
        } else {
            let _ = writeln!(msg, "{k} = {v}");
        }
    }
    let mut total = 0;
    for (name, t) in &ck.tensors {
        total += t.numel();
        let _ = writeln!(msg, "{name}\t{:?}", t.shape());
    }
    let _ = writeln!(msg, "{} tensors, {total} values", ck.tensors.len());
    Ok(msg)
}

/// Executes a parsed command and returns what it prints on success.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Generate {
            schema,
            n,
            seed,
            missing_rate,
            mechanism,
            k,
            out,
            text_out,
            force,
        } => cmd_generate(
            &schema,
            n,
            seed,
            missing_rate,
            &mechanism,
            k,
            &out,
            text_out.as_deref(),
            force,
        ),
        Command::Train {
            config,
            data,
            out_checkpoint,
            report,
            loss_table,
            force,
        } => cmd_train(
            config.as_deref(),
            &data,
            &out_checkpoint,
            &report,
            loss_table.as_deref(),
            force,
        ),
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
            force,
        } => cmd_eval(&checkpoint, &data, split, out.as_deref(), force),
        Command::Compare {
            scenarios,
            seeds,
            out,
            jobs,
            config,
            force,
        } => cmd_compare(&scenarios, &seeds, &out, jobs, config.as_deref(), force),
        Command::InspectCheckpoint { checkpoint } => cmd_inspect(&checkpoint),
    }
}

/// Parses `std::env::args`, runs, prints, and returns the process exit code.
pub fn main_with_args() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
