//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Every key has a typed default, unknown
//! keys are errors, and [`ExperimentConfig::to_text`] writes every key so a snapshot
//! parses back to an identical configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::closures::CnnArch;
use crate::error::{Error, Result};
use crate::qg::{PhysicalParams, PvGradient, Trainable};

/// Reading of the hyperprior placed on `log lambda` and `log gamma`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HyperpriorMode {
    /// Gamma density on the log value itself; zero density for non-positive logs.
    Literal,
    /// Gamma density on `lambda` (resp. `gamma`) with the log-transform Jacobian.
    Reparameterized,
}

impl FromStr for HyperpriorMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "literal" => Ok(Self::Literal),
            "reparameterized" => Ok(Self::Reparameterized),
            _ => Err(format!("expected literal|reparameterized, got {s:?}")),
        }
    }
}

impl std::fmt::Display for HyperpriorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Literal => "literal",
            Self::Reparameterized => "reparameterized",
        })
    }
}

/// Wrapper giving [`PvGradient`] a text form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PvGradientKey(pub PvGradient);

impl FromStr for PvGradientKey {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "effective" => Ok(Self(PvGradient::Effective)),
            "literal" => Ok(Self(PvGradient::Literal)),
            _ => Err(format!("expected effective|literal, got {s:?}")),
        }
    }
}

impl std::fmt::Display for PvGradientKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self.0 {
            PvGradient::Effective => "effective",
            PvGradient::Literal => "literal",
        })
    }
}

/// Comma-separated list of hidden-layer widths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Widths(pub Vec<usize>);

impl FromStr for Widths {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Widths)
    }
}

impl std::fmt::Display for Widths {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|w| w.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

macro_rules! config {
    ($( $(#[$doc:meta])* $name:ident : $ty:ty = $default:expr ),* $(,)?) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct ExperimentConfig {
            $( $(#[$doc])* pub $name: $ty, )*
        }

        impl Default for ExperimentConfig {
            fn default() -> Self {
                Self { $( $name: $default, )* }
            }
        }

        impl ExperimentConfig {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($name) ),*];

            /// Sets one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($name) => {
                        self.$name = value.parse::<$ty>().map_err(|e| {
                            Error::Config(format!("{key} = {value:?}: {e}"))
                        })?;
                    } )*
                    _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            /// Every key, one per line, in declaration order.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $( writeln!(s, "{} = {}", stringify!($name), self.$name).unwrap(); )*
                s
            }
        }
    };
}

config! {
    seed: u64 = 20240917,

    // grids and physics
    nx_hi: usize = 64,
    nx_lo: usize = 16,
    dt: f64 = PhysicalParams::DT,
    domain_length: f64 = PhysicalParams::DOMAIN_LENGTH,
    beta: f64 = PhysicalParams::BETA,
    r_ek: f64 = PhysicalParams::R_EK,
    r_d: f64 = PhysicalParams::R_D,
    delta: f64 = PhysicalParams::DELTA,
    u1: f64 = PhysicalParams::U1,
    u2: f64 = PhysicalParams::U2,
    pv_gradient: PvGradientKey = PvGradientKey(PvGradient::Effective),
    /// Fraction of the Nyquist wavenumber where filters start to roll off.
    filter_cutoff: f64 = 0.65,

    // truth simulations
    spinup_days: f64 = 182.5,
    duration_days: f64 = 547.5,
    ic_amplitude: f64 = 1.5e-6,
    ic_kmax: usize = 6,
    train_sims: usize = 6,
    test_sims: usize = 2,
    /// Steps per observation `k`.
    obs_interval: usize = 24,
    /// Forecast targets per trajectory `N`.
    n_obs: usize = 20,
    /// Idle time between consecutive training windows.
    window_gap_days: f64 = 0.0,
    eval_steps: usize = 2000,
    eval_cadence: usize = 20,

    // closure
    cnn_hidden: Widths = Widths(vec![128, 64, 32, 32, 32]),
    cnn_seed: u64 = 1,
    smagorinsky_cs: f64 = 0.1,

    // deterministic training
    init_delta: f64 = 0.01,
    init_u1: f64 = 0.001,
    train_delta: bool = true,
    train_u1: bool = true,
    epochs: usize = 100,
    phase_switch: usize = 50,
    batch_size: usize = 4,
    val_fraction: f64 = 0.1,
    lr_phy_start: f64 = 0.01,
    lr_phy_floor: f64 = 0.001,
    lr_phy_decay: f64 = 0.9,
    lr_nn_start: f64 = 5e-4,
    lr_nn_floor: f64 = 1e-4,
    lr_nn_decay: f64 = 0.95,
    train_seed: u64 = 7,

    // SG-HMC
    hmc_iterations: usize = 2000,
    hmc_step_size: f64 = 5e-5,
    hmc_leapfrog: usize = 10,
    /// Friction `C`; non-positive means `0.1 / step_size`.
    hmc_friction: f64 = 0.0,
    hmc_minibatch: usize = 1,
    /// Observations per trajectory in the likelihood; 0 uses whole windows.
    hmc_n_obs: usize = 0,
    hmc_burn_in: f64 = 0.25,
    hmc_thin: usize = 5,
    hyper_alpha1: f64 = 1.0,
    hyper_beta1: f64 = 1.0,
    hyper_alpha2: f64 = 1.0,
    hyper_beta2: f64 = 1.0,
    hyperprior_mode: HyperpriorMode = HyperpriorMode::Literal,
    hmc_seed: u64 = 11,

    // evaluation
    ensemble_members: usize = 32,
    histogram_bins: usize = 64,
    /// Final window for the vorticity histogram, as a fraction of the horizon.
    histogram_window: f64 = 100.0 / 360.0,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override must be key=value, got {kv:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        self.truth_params(self.nx_hi).validate()?;
        self.truth_params(self.nx_lo).validate()?;
        if self.nx_lo > self.nx_hi {
            return bad("nx_lo must not exceed nx_hi");
        }
        if !(self.spinup_days >= 0.0) || self.spinup_days >= self.duration_days {
            return bad("spin-up must be shorter than the simulation duration");
        }
        if self.obs_interval == 0 || self.n_obs == 0 || self.eval_cadence == 0 || self.eval_steps == 0 {
            return bad("observation interval, trajectory length and evaluation cadence must be >= 1");
        }
        if self.eval_steps % self.eval_cadence != 0 {
            return bad("eval_steps must be a multiple of eval_cadence");
        }
        if self.phase_switch > self.epochs {
            return bad("phase_switch must not exceed epochs");
        }
        if self.batch_size == 0 || self.hmc_minibatch == 0 || self.hmc_leapfrog == 0 || self.hmc_thin == 0 {
            return bad("batch sizes, leapfrog count and thinning stride must be >= 1");
        }
        if !(0.0..1.0).contains(&self.val_fraction) || !(0.0..1.0).contains(&self.hmc_burn_in) {
            return bad("val_fraction and hmc_burn_in must lie in [0, 1)");
        }
        if !(self.hmc_step_size > 0.0) {
            return bad("hmc_step_size must be > 0");
        }
        if [self.hyper_alpha1, self.hyper_beta1, self.hyper_alpha2, self.hyper_beta2]
            .iter()
            .any(|v| !(*v > 0.0))
        {
            return bad("hyperprior shapes and rates must be > 0");
        }
        if !(self.init_delta > 0.0) {
            return bad("init_delta must be > 0");
        }
        if !(self.filter_cutoff > 0.0 && self.filter_cutoff <= 1.0) {
            return bad("filter_cutoff must lie in (0, 1]");
        }
        self.cnn_arch().validate()?;
        Ok(())
    }

    /// Truth physics on an `n x n` grid.
    pub fn truth_params(&self, n: usize) -> PhysicalParams {
        PhysicalParams {
            beta: self.beta,
            r_ek: self.r_ek,
            r_d: self.r_d,
            u1: self.u1,
            u2: self.u2,
            delta: self.delta,
            domain_length: self.domain_length,
            nx: n,
            ny: n,
            dt: self.dt,
            trainable: Trainable {
                delta: self.train_delta,
                u1: self.train_u1,
            },
            pv_gradient: self.pv_gradient.0,
            advection: true,
        }
    }

    pub fn cnn_arch(&self) -> CnnArch {
        CnnArch::narrow(&self.cnn_hidden.0)
    }

    pub fn steps_for_days(&self, days: f64) -> usize {
        (days * 86_400.0 / self.dt).round() as usize
    }

    pub fn hmc_friction_value(&self) -> f64 {
        if self.hmc_friction > 0.0 {
            self.hmc_friction
        } else {
            0.1 / self.hmc_step_size
        }
    }

    /// Hex SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
