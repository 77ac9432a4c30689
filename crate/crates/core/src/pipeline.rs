//! Run-directory stages: generate, train, sample, evaluate, plot.

use std::path::{Path, PathBuf};

use crate::bayes::{ensemble_csv, sample_chain, Chain, HybridPosterior, Hyperpriors, SamplerConfig};
use crate::closures::{init_cnn_with, Normalization};
use crate::config::ExperimentConfig;
use crate::data::{generate_data, GeneratedData};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, EvalReport, EvalSetup, MetricSeries, Variant, VariantSeries};
use crate::hybrid::HybridModel;
use crate::io::{
    Checkpoint, Manifest, SampleSet, TrajectoryDataset, CHECKPOINT_VERSION, DATASET_VERSION, ENSEMBLE_VERSION,
};
use crate::training::{train, TrainConfig, TrainOutcome};

pub const CONFIG_FILE: &str = "config.cfg";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const TRAIN_FILE: &str = "train.dqgd";
pub const TEST_FILE: &str = "test.dqgd";
pub const CHECKPOINT_FILE: &str = "checkpoint.dcnn";
pub const HISTORY_FILE: &str = "history.csv";
pub const ENSEMBLE_FILE: &str = "ensemble.dpen";
pub const ENSEMBLE_CSV: &str = "ensemble.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";

/// A directory holding every artefact of one experiment.
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    /// Opens an existing directory, erroring if it is missing.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.is_dir() {
            return Err(Error::Config(format!("run directory {} does not exist", root.display())));
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn require(&self, name: &str, produced_by: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.is_file() {
            return Err(Error::Config(format!(
                "{} not found; run `{produced_by}` first",
                p.display()
            )));
        }
        Ok(p)
    }

    /// Writes the config snapshot and its hash into the manifest.
    pub fn snapshot(&self, cfg: &ExperimentConfig, stage: &str) -> Result<()> {
        std::fs::write(self.path(CONFIG_FILE), cfg.to_text())?;
        Manifest::update(&self.path(MANIFEST_FILE), |m| {
            m.set("config_hash", cfg.hash());
            m.set("seed", cfg.seed);
            m.set("cnn_seed", cfg.cnn_seed);
            m.set("train_seed", cfg.train_seed);
            m.set("hmc_seed", cfg.hmc_seed);
            m.set("dataset_format_version", DATASET_VERSION);
            m.set("checkpoint_format_version", CHECKPOINT_VERSION);
            m.set("ensemble_format_version", ENSEMBLE_VERSION);
            m.set(&format!("stage.{stage}"), "done");
        })
    }

    /// Loads the snapshot written by an earlier stage.
    pub fn config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::load(&self.require(CONFIG_FILE, "generate")?)
    }

    fn note(&self, key: &str, value: impl ToString) -> Result<()> {
        Manifest::update(&self.path(MANIFEST_FILE), |m| m.set(key, value))
    }
}

/// CNN normalization fitted to the training states and sub-grid targets.
pub fn fit_normalization(train: &TrajectoryDataset) -> Result<Normalization> {
    let q: Vec<_> = train.trajectories.iter().flat_map(|t| t.states.iter()).collect();
    let s: Vec<_> = train
        .trajectories
        .iter()
        .flat_map(|t| t.targets.iter().flatten())
        .collect();
    if s.is_empty() {
        return Err(Error::InvalidParam("training dataset carries no sub-grid targets".into()));
    }
    Normalization::fit(&q, &s)
}

/// Freshly initialized hybrid model and its starting parameter vector.
pub fn initial_hybrid(cfg: &ExperimentConfig, train: &TrajectoryDataset) -> Result<(HybridModel, Vec<f64>)> {
    let mut cnn = init_cnn_with(&cfg.cnn_arch(), cfg.cnn_seed)?;
    cnn.norm = fit_normalization(train)?;
    let hm = HybridModel::new(&cfg.truth_params(cfg.nx_lo), cnn.clone())?;
    let theta = hm.pack(cfg.init_delta, cfg.init_u1, &cnn);
    Ok((hm, theta))
}

/// Hybrid model and parameters restored from a checkpoint.
pub fn hybrid_from_checkpoint(cfg: &ExperimentConfig, ck: &Checkpoint) -> Result<(HybridModel, Vec<f64>)> {
    let hm = HybridModel::new(&cfg.truth_params(cfg.nx_lo), ck.cnn.clone())?;
    let theta = hm.pack(ck.delta, ck.u1, &ck.cnn);
    Ok((hm, theta))
}

pub fn checkpoint_of(hm: &HybridModel, theta: &[f64]) -> Result<Checkpoint> {
    let (delta, u1, cnn) = hm.unpack(theta)?;
    Ok(Checkpoint { cnn, delta, u1 })
}

pub fn run_generate(cfg: &ExperimentConfig, dir: &RunDir) -> Result<GeneratedData> {
    let data = generate_data(cfg)?;
    data.train.write(&dir.path(TRAIN_FILE))?;
    data.test.write(&dir.path(TEST_FILE))?;
    dir.snapshot(cfg, "generate")?;
    dir.note("train_trajectories", data.train.trajectories.len())?;
    dir.note("test_trajectories", data.test.trajectories.len())?;
    Ok(data)
}

pub fn run_train(cfg: &ExperimentConfig, dir: &RunDir) -> Result<TrainOutcome> {
    let train_set = TrajectoryDataset::read(&dir.require(TRAIN_FILE, "generate")?)?;
    let (hm, theta0) = initial_hybrid(cfg, &train_set)?;
    let out = train(&hm, &train_set, &theta0, &TrainConfig::from_experiment(cfg))?;
    checkpoint_of(&hm, &out.theta)?.write(&dir.path(CHECKPOINT_FILE))?;
    std::fs::write(dir.path(HISTORY_FILE), out.history.to_csv())?;
    dir.snapshot(cfg, "train")?;
    dir.note("best_epoch", out.best_epoch)?;
    Ok(out)
}

/// Training windows as seen by the likelihood, truncated to `hmc_n_obs` when set.
pub fn likelihood_data(cfg: &ExperimentConfig, train: &TrajectoryDataset) -> Result<TrajectoryDataset> {
    match cfg.hmc_n_obs {
        0 => Ok(train.clone()),
        n if n >= train.n_obs => Ok(train.clone()),
        n => train.truncated(n),
    }
}

pub fn run_sample(cfg: &ExperimentConfig, dir: &RunDir) -> Result<Chain> {
    let train_set = likelihood_data(cfg, &TrajectoryDataset::read(&dir.require(TRAIN_FILE, "generate")?)?)?;
    let ck = Checkpoint::read(&dir.require(CHECKPOINT_FILE, "train")?)?;
    let (hm, theta) = hybrid_from_checkpoint(cfg, &ck)?;
    let post = HybridPosterior {
        model: &hm,
        data: &train_set,
        hyper: Hyperpriors::from_experiment(cfg),
    };
    let z0 = post.initial_position(&theta)?;
    let chain = sample_chain(&post, &z0, &SamplerConfig::from_experiment(cfg))?;
    chain.ensemble.write(&dir.path(ENSEMBLE_FILE))?;
    std::fs::write(dir.path(ENSEMBLE_CSV), ensemble_csv(&chain.ensemble))?;
    dir.snapshot(cfg, "sample")?;
    dir.note("retained_samples", chain.ensemble.samples.len())?;
    dir.note("rejected_iterations", chain.rejections)?;
    Ok(chain)
}

/// Scores every available variant on the first test trajectory.
pub fn run_evaluate(cfg: &ExperimentConfig, dir: &RunDir) -> Result<EvalReport> {
    let test = TrajectoryDataset::read(&dir.require(TEST_FILE, "generate")?)?;
    let ck = Checkpoint::read(&dir.require(CHECKPOINT_FILE, "train")?)?;
    let (hm, theta) = hybrid_from_checkpoint(cfg, &ck)?;
    let ens_path = dir.path(ENSEMBLE_FILE);
    let ensemble = if ens_path.is_file() {
        Some(SampleSet::read(&ens_path)?)
    } else {
        None
    };
    let mut variants = vec![Variant::Truth, Variant::None, Variant::Smagorinsky, Variant::Deterministic];
    if ensemble.is_some() {
        variants.extend([Variant::Map, Variant::Posterior]);
    }
    let traj = test
        .trajectories
        .first()
        .ok_or_else(|| Error::InvalidParam("test dataset is empty".into()))?;
    let report = evaluate_run(&EvalSetup {
        truth: &traj.states,
        k: test.k,
        truth_params: cfg.truth_params(cfg.nx_lo),
        hybrid: &hm,
        theta: Some(&theta),
        ensemble: ensemble.as_ref(),
        variants: &variants,
        smagorinsky_cs: cfg.smagorinsky_cs,
        members: cfg.ensemble_members,
        histogram_bins: cfg.histogram_bins,
        histogram_window: cfg.histogram_window,
    })?;
    std::fs::write(dir.path(METRICS_FILE), report.series.to_csv())?;
    std::fs::write(dir.path(HISTOGRAM_FILE), report.histogram.to_csv())?;
    write_plots(dir, &report.series)?;
    dir.snapshot(cfg, "evaluate")?;
    for v in &report.series.variants {
        if let Some(t) = v.blowup {
            dir.note(&format!("blowup.{}", v.variant), format!("{t}h"))?;
        }
    }
    Ok(report)
}

fn write_plots(dir: &RunDir, series: &MetricSeries) -> Result<()> {
    for (name, svg) in series.to_svg() {
        std::fs::write(dir.path(&format!("{name}.svg")), svg)?;
    }
    Ok(())
}

/// Parses a metrics CSV written by [`MetricSeries::to_csv`]. Bands are restored
/// for total KE only, since that is what the file records.
pub fn parse_metrics_csv(text: &str) -> Result<MetricSeries> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "time,variant,r2,mse,ke,band_lo,band_hi" {
        return Err(Error::Config(format!("unexpected metrics header {header:?}")));
    }
    let mut time_hours: Vec<f64> = Vec::new();
    let mut variants: Vec<VariantSeries> = Vec::new();
    let mut ke_bands: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for (n, line) in lines.enumerate() {
        let bad = || Error::Config(format!("metrics line {}: {line:?}", n + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let t = num(f[0])?;
        let v: Variant = f[1].parse()?;
        let idx = match variants.iter().position(|s| s.variant == v) {
            Some(i) => i,
            None => {
                variants.push(VariantSeries {
                    variant: v,
                    r2: Vec::new(),
                    mse: Vec::new(),
                    ke: Vec::new(),
                    blowup: None,
                    bands: None,
                });
                ke_bands.push((Vec::new(), Vec::new()));
                variants.len() - 1
            }
        };
        let s = &mut variants[idx];
        if s.r2.len() == time_hours.len() {
            time_hours.push(t);
        }
        s.r2.push(num(f[2])?);
        s.mse.push(num(f[3])?);
        s.ke.push(num(f[4])?);
        if !f[5].is_empty() {
            ke_bands[idx].0.push(num(f[5])?);
            ke_bands[idx].1.push(num(f[6])?);
        }
    }
    for (s, (lo, hi)) in variants.iter_mut().zip(ke_bands) {
        if !lo.is_empty() {
            let nan = vec![f64::NAN; lo.len()];
            let none = crate::eval::Band {
                lo: nan.clone(),
                hi: nan,
            };
            s.bands = Some([none.clone(), none, crate::eval::Band { lo, hi }]);
        }
    }
    Ok(MetricSeries { time_hours, variants })
}

/// Re-renders the SVG plots from the metrics CSV.
pub fn run_plot(dir: &RunDir) -> Result<()> {
    let text = std::fs::read_to_string(dir.require(METRICS_FILE, "evaluate")?)?;
    write_plots(dir, &parse_metrics_csv(&text)?)
}
