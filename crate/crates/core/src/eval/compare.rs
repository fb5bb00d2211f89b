//! Multi-seed scenario runs, the comparison table and ordering checks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{apply_missingness, generate, Dataset, DatasetSchema, GeneratorConfig, Mechanism};
use crate::error::{Error, Result};
use crate::eval::baselines::{run_baseline, BaselineKind};
use crate::eval::metrics::{Metric, MetricSet};
use crate::ndiff::rng::mix_seed;
use crate::trainer::{split_dataset, train_hypermm, TrainConfig};

/// A model taking part in a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSpec {
    HyperMM,
    /// Encoder and set classifier trained together in one phase.
    HyperMMJoint,
    Baseline(BaselineKind),
}

impl ModelSpec {
    pub fn name(&self) -> String {
        match self {
            ModelSpec::HyperMM => "hypermm".into(),
            ModelSpec::HyperMMJoint => "hypermm_joint".into(),
            ModelSpec::Baseline(b) => b.name(),
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "hypermm" => ModelSpec::HyperMM,
            "hypermm_joint" => ModelSpec::HyperMMJoint,
            "zero_fill" => ModelSpec::Baseline(BaselineKind::ZeroFillMultimodal),
            "mean_impute" => ModelSpec::Baseline(BaselineKind::MeanImputeMultimodal),
            "late_fusion" => ModelSpec::Baseline(BaselineKind::LateFusionAverage),
            other => match other.strip_prefix("unimodal:").map(str::parse::<usize>) {
                Some(Ok(k)) => ModelSpec::Baseline(BaselineKind::Unimodal(k)),
                _ => return Err(Error::arg(format!("unknown model `{other}`"))),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub n: usize,
    pub missing_rate: f64,
    /// `mcar` or `modality_k_only`.
    pub mechanism: String,
    #[serde(default)]
    pub k: Option<usize>,
    /// Overrides the shared generator's per-modality noise.
    #[serde(default)]
    pub modality_noise: Option<Vec<f64>>,
    pub models: Vec<String>,
}

/// "`better` is at least as good as the best of `worse`" on one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderingCheck {
    pub name: String,
    pub scenario: String,
    pub metric: Metric,
    pub better: String,
    pub worse: Vec<String>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: DatasetSchema,
    pub generator: GeneratorConfig,
    #[serde(rename = "scenario")]
    pub scenarios: Vec<Scenario>,
    #[serde(default, rename = "check")]
    pub checks: Vec<OrderingCheck>,
}

impl ScenarioFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let f: ScenarioFile = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        f.validate()?;
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ScenarioFile::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let mut names = std::collections::BTreeSet::new();
        for s in &self.scenarios {
            if !names.insert(s.name.as_str()) {
                return Err(Error::Config(format!("duplicate scenario `{}`", s.name)));
            }
            Mechanism::parse(&s.mechanism, s.k)?;
            if s.models.is_empty() {
                return Err(Error::Config(format!("scenario `{}` lists no models", s.name)));
            }
            for m in &s.models {
                m.parse::<ModelSpec>()?;
            }
        }
        for c in &self.checks {
            let Some(s) = self.scenarios.iter().find(|s| s.name == c.scenario) else {
                return Err(Error::Config(format!(
                    "check `{}` names unknown scenario `{}`",
                    c.name, c.scenario
                )));
            };
            for m in std::iter::once(&c.better).chain(&c.worse) {
                if !s.models.contains(m) {
                    return Err(Error::Config(format!(
                        "check `{}` uses model `{m}` not run in scenario `{}`",
                        c.name, c.scenario
                    )));
                }
            }
        }
        Ok(())
    }

    /// The masked dataset of one scenario under one seed.
    pub fn dataset(&self, scenario: &Scenario, seed: u64) -> Result<Dataset> {
        let mut gen = self.generator.clone();
        if scenario.modality_noise.is_some() {
            gen.modality_noise = scenario.modality_noise.clone();
        }
        let data_seed = mix_seed(seed, &format!("data/{}", scenario.name));
        let samples = generate(&self.schema, scenario.n, data_seed, &gen)?;
        let mech = Mechanism::parse(&scenario.mechanism, scenario.k)?;
        let masked = apply_missingness(&samples, scenario.missing_rate, mech, mix_seed(data_seed, "mask"))?;
        Dataset::new(self.schema.clone(), masked)
    }
}

/// Trains `model` on one seed's data for a scenario and scores its test split.
pub fn run_model(
    file: &ScenarioFile,
    scenario: &Scenario,
    model: ModelSpec,
    seed: u64,
    base: &TrainConfig,
) -> Result<MetricSet> {
    let mut cfg = base.clone();
    cfg.run.seed = seed;
    let ds = file.dataset(scenario, seed)?;
    let [train, val, test] = split_dataset(&ds, &cfg)?;
    match model {
        ModelSpec::HyperMM | ModelSpec::HyperMMJoint => {
            cfg.run.two_steps = model == ModelSpec::HyperMM;
            Ok(train_hypermm(&ds.schema, &cfg, &train, &val, &test)?.1.test_metrics)
        }
        ModelSpec::Baseline(kind) => run_baseline(kind, &ds.schema, [&train, &val, &test], &cfg),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub scenario: String,
    pub model: String,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRecord {
    pub metrics: MetricSet,
    /// Data generation, training and evaluation.
    pub wall_secs: f64,
}

/// (scenario, model, seed)
pub type RunKey = (String, String, u64);

/// Per-seed results.
pub type RunResults = BTreeMap<RunKey, RunRecord>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Better by at least the margin.
    Win,
    /// Within the margin either way.
    Tie,
    Fail,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self != Verdict::Fail
    }

    pub fn label(self) -> &'static str {
        match self {
            Verdict::Win => "PASS",
            Verdict::Tie => "PASS (tie)",
            Verdict::Fail => "FAIL",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub better_mean: f64,
    pub worse_model: String,
    pub worse_mean: f64,
    pub verdict: Verdict,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "{}: {} (better {:.4} vs {} {:.4}, diff {:+.4})",
            self.verdict.label(),
            self.name,
            self.better_mean,
            self.worse_model,
            self.worse_mean,
            self.better_mean - self.worse_mean
        )
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<TableRow>,
    pub checks: Vec<CheckOutcome>,
    pub runs: RunResults,
}

/// Population mean and standard deviation; values are sorted first so the
/// result does not depend on seed order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn aggregate_table(file: &ScenarioFile, seeds: &[u64], runs: &RunResults) -> Vec<TableRow> {
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    let mut rows = Vec::new();
    for s in &file.scenarios {
        for m in &s.models {
            for metric in Metric::ALL {
                let vals: Vec<f64> = sorted
                    .iter()
                    .filter_map(|&seed| runs.get(&(s.name.clone(), m.clone(), seed)))
                    .map(|run| run.metrics.get(metric))
                    .collect();
                let (mean, std) = mean_std(&vals);
                rows.push(TableRow {
                    scenario: s.name.clone(),
                    model: m.clone(),
                    metric,
                    mean,
                    std,
                    seeds: sorted.clone(),
                });
            }
        }
    }
    rows
}

pub fn judge(check: &OrderingCheck, rows: &[TableRow]) -> CheckOutcome {
    let mean_of = |model: &str| {
        rows.iter()
            .find(|r| r.scenario == check.scenario && r.model == model && r.metric == check.metric)
            .map_or(f64::NAN, |r| r.mean)
    };
    let better_mean = mean_of(&check.better);
    let (worse_model, worse_mean) = check
        .worse
        .iter()
        .map(|m| (m.clone(), mean_of(m)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or_default();
    let diff = better_mean - worse_mean;
    let verdict = if diff >= check.margin {
        Verdict::Win
    } else if diff > -check.margin {
        Verdict::Tie
    } else {
        Verdict::Fail
    };
    CheckOutcome {
        name: check.name.clone(),
        better_mean,
        worse_model,
        worse_mean,
        verdict,
    }
}

/// Runs every (scenario, model, seed) job on up to `jobs` threads.
/// The first failure aborts the comparison and names its job.
pub fn scenario_compare(file: &ScenarioFile, seeds: &[u64], base: &TrainConfig, jobs: usize) -> Result<Comparison> {
    file.validate()?;
    if seeds.is_empty() {
        return Err(Error::arg("at least one seed is required"));
    }
    let mut uniq = seeds.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    if uniq.len() != seeds.len() {
        return Err(Error::arg("seeds must be distinct"));
    }

    let mut queue = Vec::new();
    for s in &file.scenarios {
        for m in &s.models {
            for &seed in seeds {
                queue.push((s, m.clone(), seed));
            }
        }
    }
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<(RunKey, Result<RunRecord>)>> = Mutex::new(Vec::new());
    let workers = jobs.clamp(1, queue.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some((s, m, seed)) = queue.get(idx) else { break };
                let start = Instant::now();
                let out = m
                    .parse::<ModelSpec>()
                    .and_then(|spec| run_model(file, s, spec, *seed, base))
                    .map(|metrics| RunRecord {
                        metrics,
                        wall_secs: start.elapsed().as_secs_f64(),
                    });
                let failed = out.is_err();
                results.lock().unwrap().push(((s.name.clone(), m.clone(), *seed), out));
                if failed {
                    // stop handing out further work
                    *next.lock().unwrap() = queue.len();
                }
            });
        }
    });

    let mut results = results.into_inner().unwrap();
    results.sort_by(|a, b| a.0.cmp(&b.0));
    let mut runs = RunResults::new();
    for (key, out) in results {
        match out {
            Ok(run) => {
                runs.insert(key, run);
            }
            Err(e) => {
                return Err(match e {
                    Error::Numeric { phase, epoch, detail } => Error::Numeric {
                        phase,
                        epoch,
                        detail: format!("{detail} (scenario `{}`, model `{}`, seed {})", key.0, key.1, key.2),
                    },
                    other => Error::Argument(format!(
                        "scenario `{}`, model `{}`, seed {} failed: {other}",
                        key.0, key.1, key.2
                    )),
                });
            }
        }
    }
    let rows = aggregate_table(file, seeds, &runs);
    let checks = file.checks.iter().map(|c| judge(c, &rows)).collect();
    Ok(Comparison { rows, checks, runs })
}

impl Comparison {
    /// Tab-separated `scenario model metric mean std seeds`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("scenario\tmodel\tmetric\tmean\tstd\tseeds\n");
        for r in &self.rows {
            let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.scenario,
                r.model,
                r.metric.name(),
                r.mean,
                r.std,
                seeds.join(",")
            );
        }
        out
    }

    pub fn mean(&self, scenario: &str, model: &str, metric: Metric) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.model == model && r.metric == metric)
            .map(|r| r.mean)
    }
}
