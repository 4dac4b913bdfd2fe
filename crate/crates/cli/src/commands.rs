use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use expclust::activation::Activation;
use expclust::eval::{network_metrics, Metrics};
use expclust::experiments::{
    convergence_grid, robustness_sweep, summarize_grid, write_grid_csv, write_sweep_csv, GridConfig,
};
use expclust::net::{rmse, NetworkParams};
use expclust::pipeline::{cluster_layer, expand_and_cluster, LayerSummary, PipelineConfig, RunProvenance, Widths};
use expclust::symmetry::{classify_neurons, Tolerances};
use expclust::teacher::{gen_dataset_with_range, sample_teacher, TeacherSpec, SQRT_3};
use expclust::trainer::{probe_expansion, train_ensemble, ProbeConfig, ProbeResult, StudentEnsemble, TrainConfig};
use expclust::{Dataset, Error};

use crate::manifest::{beside, resolve, write_json, Manifest};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit code 2.
    Usage(String),
    /// Filesystem trouble; exit code 1.
    Io(String),
    Lib(Error),
}

impl CliError {
    pub fn usage(e: impl fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Lib(Error::Argument(_) | Error::InfeasibleSpec(_)) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn required<T: Clone>(value: &Option<T>, flag: &str) -> Result<T> {
    value
        .clone()
        .ok_or_else(|| CliError::Usage(format!("missing --{flag} (flag or config key)")))
}

fn load_data(path: &Path) -> Result<Dataset> {
    Dataset::load(path).map_err(|e| match e {
        Error::Io(io) => CliError::io(path, io),
        other => CliError::Lib(other),
    })
}

fn load_net(path: &Path) -> Result<NetworkParams> {
    NetworkParams::load(path).map_err(|e| match e {
        Error::Io(io) => CliError::io(path, io),
        other => CliError::Lib(other),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn save_net(net: &NetworkParams, path: &Path) -> Result<()> {
    net.save(path).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

/// `--steps n` as a Levenberg–Marquardt budget, else the library default.
fn train_cfg(steps: Option<usize>) -> TrainConfig {
    steps.map(TrainConfig::monotone).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// teacher gen

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherGenArgs {
    /// Input dimension.
    #[arg(long)]
    pub din: Option<usize>,
    /// Hidden widths, comma separated for deep teachers.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub act: Option<Activation>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Inputs are uniform on [−range, range].
    #[arg(long)]
    pub range: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn teacher_gen(flags: TeacherGenArgs) -> Result<()> {
    let a = resolve(&flags, flags.config.as_deref())?;
    let mut spec = TeacherSpec::new(
        required(&a.din, "din")?,
        required(&a.hidden, "hidden")?,
        a.act.unwrap_or(Activation::G),
        a.seed.unwrap_or(0),
    );
    spec.input_range = a.range.unwrap_or(SQRT_3);
    let out = required(&a.out, "out")?;
    let teacher = sample_teacher(&spec)?;
    save_net(&teacher, &out)?;
    Manifest::new("teacher gen", &spec)?
        .seed("teacher", spec.seed)
        .write(&beside(&out))
}

// ---------------------------------------------------------------------------
// data gen

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataGenArgs {
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Number of samples.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub range: Option<f64>,
    /// `.json` writes the JSON form, anything else the binary form.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn data_gen(flags: DataGenArgs) -> Result<()> {
    let a = resolve(&flags, flags.config.as_deref())?;
    let teacher_path = required(&a.teacher, "teacher")?;
    let out = required(&a.out, "out")?;
    let teacher = load_net(&teacher_path)?;
    let seed = a.seed.unwrap_or(0);
    let data = gen_dataset_with_range(&teacher, a.n.unwrap_or(30_000), seed, a.range.unwrap_or(SQRT_3))?;
    data.save(&out).map_err(|e| CliError::io(&out, e))?;
    Manifest::new("data gen", &a)?.seed("data", seed).write(&beside(&out))
}

// ---------------------------------------------------------------------------
// train

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Hidden widths; a single value is repeated `--depth` times.
    #[arg(long, value_delimiter = ',')]
    pub width: Option<Vec<usize>>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Number of students.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub act: Option<Activation>,
    /// Levenberg–Marquardt step budget per student.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn widths_for(width: Vec<usize>, depth: Option<usize>) -> Result<Vec<usize>> {
    match (width.len(), depth) {
        (1, Some(d)) => Ok(vec![width[0]; d]),
        (n, Some(d)) if n != d => Err(CliError::Usage(format!("{n} widths given for depth {d}"))),
        _ => Ok(width),
    }
}

pub fn train(flags: TrainArgs) -> Result<()> {
    let a = resolve(&flags, flags.config.as_deref())?;
    let data = load_data(&required(&a.data, "data")?)?;
    let widths = widths_for(required(&a.width, "width")?, a.depth)?;
    let out = required(&a.out, "out")?;
    let seed = a.seed.unwrap_or(0);
    let cfg = train_cfg(a.steps).with_seed(seed);
    let ensemble = train_ensemble(&widths, &data, a.act.unwrap_or(Activation::G), &cfg, a.n.unwrap_or(10))?;
    create_dir(&out)?;
    ensemble.save_dir(&out).map_err(|e| CliError::io(&out, e))?;
    Manifest::new("train", &a)?
        .seed("ensemble", seed)
        .write(&out.join("manifest.json"))
}

// ---------------------------------------------------------------------------
// probe

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Candidate widths.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub act: Option<Activation>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// A width qualifies at loss ≤ tau·var(Y).
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn probe(flags: ProbeArgs) -> Result<()> {
    let a = resolve(&flags, flags.config.as_deref())?;
    let data = load_data(&required(&a.data, "data")?)?;
    let out = required(&a.out, "out")?;
    let seed = a.seed.unwrap_or(0);
    let mut cfg = ProbeConfig::default();
    if let Some(steps) = a.steps {
        cfg.train = TrainConfig::monotone(steps);
    }
    cfg.train.seed = seed;
    if let Some(tau) = a.tau {
        cfg.tau = tau;
    }
    let widths = a.widths.clone().unwrap_or_else(|| vec![2, 4, 8, 16, 32]);
    let result = probe_expansion(
        &data,
        &widths,
        a.depth.unwrap_or(1),
        a.act.unwrap_or(Activation::G),
        &cfg,
    )?;
    if result.warning {
        log::warn!("no width reached the probe threshold; chose the lowest loss");
    }
    write_json(&out, &result)?;
    Manifest::new("probe", &a)?.seed("probe", seed).write(&beside(&out))
}

// ---------------------------------------------------------------------------
// classify

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub student: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Serialize)]
struct LabelEntry {
    neuron: usize,
    label: &'static str,
    group: Option<usize>,
}

#[derive(Serialize)]
struct LayerLabels {
    layer: usize,
    neurons: Vec<LabelEntry>,
}

pub fn classify(flags: ClassifyArgs) -> Result<()> {
    let a = resolve(&flags, flags.config.as_deref())?;
    let net = load_net(&required(&a.student, "student")?)?;
    let data = load_data(&required(&a.data, "data")?)?;
    let out = required(&a.out, "out")?;
    let labels = classify_neurons(&net, &data, &Tolerances::default())?;
    let layers: Vec<LayerLabels> = labels
        .into_iter()
        .enumerate()
        .map(|(l, ls)| LayerLabels {
            layer: l + 1,
            neurons: ls
                .into_iter()
                .enumerate()
                .map(|(k, label)| LabelEntry {
                    neuron: k,
                    label: label.name(),
                    group: label.group(),
                })
                .collect(),
        })
        .collect();
    write_json(&out, &layers)?;
    Manifest::new("classify", &a)?.write(&beside(&out))
}

// ---------------------------------------------------------------------------
// cluster

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub students: Option<PathBuf>,
    /// Hidden layer, counted from 1.
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn load_ensemble(dir: &Path) -> Result<StudentEnsemble> {
    StudentEnsemble::load_dir(dir).map_err(|e| match e {
        Error::Io(io) => CliError::io(dir, io),
        other => CliError::Lib(other),
    })
}

fn layer_index(layer: Option<usize>) -> Result<usize> {
    match layer.unwrap_or(1) {
        0 => Err(CliError::Usage("--layer counts from 1".into())),
        l => Ok(l - 1),
    }
}

pub fn cluster(flags: ClusterArgs) -> Result<()> {
    let a = resolve(&flags, flags.config.as_deref())?;
    let ensemble = load_ensemble(&required(&a.students, "students")?)?;
    let out = required(&a.out, "out")?;
    let l = layer_index(a.layer)?;
    let defaults = PipelineConfig::default();
    let (report, _) = cluster_layer(
        &ensemble,
        l,
        a.gamma.unwrap_or(defaults.gamma),
        a.beta.unwrap_or(defaults.beta),
    )?;
    write_json(&out, &report)?;
    Manifest::new("cluster", &a)?.write(&beside(&out))
}

// ---------------------------------------------------------------------------
// reconstruct

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of hidden layers to reconstruct.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Overparameterisation factor over `--base`.
    #[arg(long)]
    pub rho: Option<usize>,
    /// Per-layer base widths multiplied by `--rho`.
    #[arg(long, value_delimiter = ',')]
    pub base: Option<Vec<usize>>,
    /// Explicit student widths; without these or `--rho` the width is probed.
    #[arg(long, value_delimiter = ',')]
    pub width: Option<Vec<usize>>,
    /// Probe candidates.
    #[arg(long, value_delimiter = ',')]
    pub probe_widths: Option<Vec<usize>>,
    /// Number of students.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub act: Option<Activation>,
    /// Step budget of the ensemble and of every retraining.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Step budget of the final fine-tune.
    #[arg(long)]
    pub finetune_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

/// `summary.json` of a reconstruction directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct Summary {
    pub layers: Vec<LayerSummary>,
    pub final_loss: f64,
    pub excess_neurons: Vec<usize>,
    pub widths: Vec<usize>,
    pub probe: Option<ProbeResult>,
    pub input_mask: Option<Vec<bool>>,
    pub provenance: RunProvenance,
}

/// `metrics.json` of a reconstruction directory; no teacher needed.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunMetrics {
    pub rmse: f64,
    pub final_loss: f64,
    pub recovered_sizes: Vec<usize>,
    pub excess_neurons: Vec<usize>,
}

fn pipeline_config(a: &ReconstructArgs, depth: usize) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    cfg.seed = a.seed.unwrap_or(0);
    cfg.n_students = a.n.unwrap_or(cfg.n_students);
    cfg.gamma = a.gamma.unwrap_or(cfg.gamma);
    cfg.beta = a.beta.unwrap_or(cfg.beta);
    cfg.activation = a.act.unwrap_or(cfg.activation);
    if let Some(steps) = a.steps {
        cfg.ensemble = TrainConfig::monotone(steps);
        cfg.retrain = TrainConfig::monotone(steps);
        cfg.probe.train = TrainConfig::monotone(steps.min(cfg.probe.train.max_steps));
    }
    if let Some(steps) = a.finetune_steps {
        cfg.finetune = TrainConfig::monotone(steps);
    }
    cfg.widths = match (&a.width, a.rho, &a.base) {
        (Some(_), Some(_), _) => return Err(CliError::Usage("give either --width or --rho, not both".into())),
        (Some(w), None, _) => Widths::Explicit {
            widths: widths_for(w.clone(), Some(depth))?,
        },
        (None, Some(rho), Some(base)) => Widths::Rho {
            rho,
            base: widths_for(base.clone(), Some(depth))?,
        },
        (None, Some(_), None) => return Err(CliError::Usage("--rho needs --base widths".into())),
        (None, None, _) => Widths::Probe {
            candidates: a.probe_widths.clone().unwrap_or_else(|| vec![2, 4, 8, 16, 32]),
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn reconstruct(flags: ReconstructArgs) -> Result<()> {
    let a = resolve(&flags, flags.config.as_deref())?;
    let data = load_data(&required(&a.data, "data")?)?;
    let out = required(&a.out, "out")?;
    let depth = a.depth.unwrap_or(1);
    let cfg = pipeline_config(&a, depth)?;
    let result = expand_and_cluster(&data, &cfg, depth)?;
    create_dir(&out)?;
    save_net(&result.network, &out.join("network.json"))?;
    write_json(&out.join("reports.json"), &result.per_layer_reports)?;
    let metrics = RunMetrics {
        rmse: rmse(&result.network, &data)?,
        final_loss: result.final_loss,
        recovered_sizes: result.hidden_sizes(),
        excess_neurons: result.excess_neurons.clone(),
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    let seeds = result.provenance.ensemble_seeds.clone();
    write_json(
        &out.join("summary.json"),
        &Summary {
            layers: result.layers,
            final_loss: result.final_loss,
            excess_neurons: result.excess_neurons,
            widths: result.widths,
            probe: result.probe,
            input_mask: result.input_mask,
            provenance: result.provenance,
        },
    )?;
    let mut manifest = Manifest::new("reconstruct", &a)?.seed("master", cfg.seed);
    for (i, s) in seeds.into_iter().enumerate() {
        manifest = manifest.seed(&format!("ensemble_{i}"), s);
    }
    manifest.write(&out.join("manifest.json"))
}

// ---------------------------------------------------------------------------
// eval

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    /// Directory written by `reconstruct`, or a network JSON file.
    #[arg(long)]
    pub result: Option<PathBuf>,
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn eval(flags: EvalArgs) -> Result<()> {
    let a = resolve(&flags, flags.config.as_deref())?;
    let result = required(&a.result, "result")?;
    let net_path = if result.is_dir() {
        result.join("network.json")
    } else {
        result
    };
    let recovered = load_net(&net_path)?;
    let teacher = load_net(&required(&a.teacher, "teacher")?)?;
    let data = load_data(&required(&a.data, "data")?)?;
    let out = required(&a.out, "out")?;
    let metrics: Metrics = network_metrics(&recovered, &teacher, &data, &Tolerances::default())?;
    write_json(&out, &metrics)?;
    Manifest::new("eval", &a)?.write(&beside(&out))
}

// ---------------------------------------------------------------------------
// experiment grid / sweep

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridArgs {
    #[arg(long, value_delimiter = ',')]
    pub d_in: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub r: Option<Vec<usize>>,
    #[arg(long)]
    pub teachers_per_cell: Option<usize>,
    #[arg(long)]
    pub seeds_per_teacher: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub rho: Option<Vec<usize>>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub act: Option<Activation>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Convergence threshold of the summary written beside the CSV.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn grid(flags: GridArgs) -> Result<()> {
    let a = resolve(&flags, flags.config.as_deref())?;
    let out = required(&a.out, "out")?;
    let d = GridConfig::default();
    let cfg = GridConfig {
        d_in: a.d_in.clone().unwrap_or(d.d_in),
        r: a.r.clone().unwrap_or(d.r),
        teachers_per_cell: a.teachers_per_cell.unwrap_or(d.teachers_per_cell),
        seeds_per_teacher: a.seeds_per_teacher.unwrap_or(d.seeds_per_teacher),
        rho: a.rho.clone().unwrap_or(d.rho),
        samples: a.samples.unwrap_or(d.samples),
        activation: a.act.unwrap_or(d.activation),
        train: a.steps.map(TrainConfig::monotone).unwrap_or(d.train),
        seed: a.seed.unwrap_or(d.seed),
    };
    let rows = convergence_grid(&cfg)?;
    write_grid_csv(&rows, create(&out)?).map_err(|e| CliError::io(&out, e))?;
    let mut summary_path = out.clone().into_os_string();
    summary_path.push(".summary.json");
    write_json(
        Path::new(&summary_path),
        &summarize_grid(&rows, a.threshold.unwrap_or(1e-8)),
    )?;
    Manifest::new("experiment grid", &a)?
        .seed("grid", cfg.seed)
        .write(&beside(&out))
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub ensemble: Option<PathBuf>,
    /// Dataset the ensemble was trained on; defaults to the one named in
    /// the ensemble's manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    #[arg(long)]
    pub finetune_steps: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn data_of_ensemble(dir: &Path) -> Result<PathBuf> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    manifest
        .config
        .get("data")
        .and_then(|v| v.as_str())
        .map(PathBuf::from)
        .ok_or_else(|| CliError::Usage("ensemble manifest names no dataset; pass --data".into()))
}

pub fn sweep(flags: SweepArgs) -> Result<()> {
    let a = resolve(&flags, flags.config.as_deref())?;
    let dir = required(&a.ensemble, "ensemble")?;
    let out = required(&a.out, "out")?;
    let ensemble = load_ensemble(&dir)?;
    let data_path = match &a.data {
        Some(p) => p.clone(),
        None => data_of_ensemble(&dir)?,
    };
    let data = load_data(&data_path)?;
    let first = ensemble
        .students
        .first()
        .ok_or_else(|| CliError::Usage("the ensemble has no students".into()))?;
    let mut cfg = PipelineConfig {
        n_students: ensemble.len(),
        activation: first.activation,
        widths: Widths::Explicit {
            widths: first.hidden_sizes(),
        },
        seed: ensemble.master_seed,
        ..Default::default()
    };
    if let Some(steps) = a.finetune_steps {
        cfg.finetune = TrainConfig::monotone(steps);
    }
    let gammas = a.gammas.clone().unwrap_or_else(|| vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
    let betas = a.betas.clone().unwrap_or_else(|| {
        [48.0, 24.0, 12.0, 6.0]
            .iter()
            .map(|d| std::f64::consts::PI / d)
            .collect()
    });
    let rows = robustness_sweep(&data, &ensemble, &gammas, &betas, &cfg)?;
    write_sweep_csv(&rows, create(&out)?).map_err(|e| CliError::io(&out, e))?;
    Manifest::new("experiment sweep", &a)?.write(&beside(&out))
}
