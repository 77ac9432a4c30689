//! Forecast skill against held-out truth for each closure variant.

mod plot;

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;

pub use plot::{line_plot_svg, PlotSeries};

use crate::autodiff::Tensor;
use crate::bayes::{ensemble_forecasts, map_estimate, moments, Moments};
use crate::closures::{ClosureKind, SmagorinskyParams};
use crate::error::{Error, Result};
use crate::hybrid::HybridModel;
use crate::io::SampleSet;
use crate::qg::{Closure, ModelState, PhysicalParams, QgModel};

/// Pooled `1 - SS_res / SS_tot`.
pub fn r2(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_len(truth, pred)?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if !(ss_tot > 0.0) {
        return Err(Error::InvalidParam("R^2 undefined: truth has zero variance".into()));
    }
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_len(truth, pred)?;
    Ok(truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum::<f64>() / truth.len() as f64)
}

/// Fraction of points with `|truth - mean| <= 2 sigma`.
pub fn coverage(truth: &[f64], mean: &[f64], sigma: &[f64]) -> Result<f64> {
    check_len(truth, mean)?;
    check_len(truth, sigma)?;
    let inside = truth
        .iter()
        .zip(mean)
        .zip(sigma)
        .filter(|((t, m), s)| (*t - *m).abs() <= 2.0 * **s)
        .count();
    Ok(inside as f64 / truth.len() as f64)
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("metric", format!("lengths {} and {}", a.len(), b.len())));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Truth,
    None,
    Smagorinsky,
    Deterministic,
    Map,
    Posterior,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Truth,
        Variant::None,
        Variant::Smagorinsky,
        Variant::Deterministic,
        Variant::Map,
        Variant::Posterior,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Truth => "truth",
            Variant::None => "none",
            Variant::Smagorinsky => "smagorinsky",
            Variant::Deterministic => "deterministic",
            Variant::Map => "map",
            Variant::Posterior => "posterior",
        }
    }

    fn needs_ensemble(self) -> bool {
        matches!(self, Variant::Map | Variant::Posterior)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// `mean - 2 sd` and `mean + 2 sd` of a per-member metric.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantSeries {
    pub variant: Variant,
    pub r2: Vec<f64>,
    pub mse: Vec<f64>,
    pub ke: Vec<f64>,
    /// Time in hours at which the run blew up; the series stop there.
    pub blowup: Option<f64>,
    /// Member spread of each metric, for the posterior variant.
    pub bands: Option<[Band; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricSeries {
    pub time_hours: Vec<f64>,
    pub variants: Vec<VariantSeries>,
}

impl MetricSeries {
    pub fn get(&self, v: Variant) -> Option<&VariantSeries> {
        self.variants.iter().find(|s| s.variant == v)
    }

    /// Rows `time, variant, r2, mse, ke, band_lo, band_hi`; the band columns hold the
    /// total-KE member band for the posterior variant and are empty otherwise.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,variant,r2,mse,ke,band_lo,band_hi\n");
        for v in &self.variants {
            for i in 0..v.r2.len() {
                let (lo, hi) = match &v.bands {
                    Some(b) => (format!("{:e}", b[2].lo[i]), format!("{:e}", b[2].hi[i])),
                    None => (String::new(), String::new()),
                };
                writeln!(
                    s,
                    "{},{},{:e},{:e},{:e},{lo},{hi}",
                    self.time_hours[i], v.variant, v.r2[i], v.mse[i], v.ke[i]
                )
                .unwrap();
            }
        }
        s
    }

    /// One SVG line plot per metric.
    pub fn to_svg(&self) -> [(&'static str, String); 3] {
        let names = ["r2", "mse", "ke"];
        let titles = ["R^2", "MSE", "total kinetic energy"];
        let mut out: Vec<(&'static str, String)> = Vec::new();
        for (m, (name, title)) in names.into_iter().zip(titles).enumerate() {
            let series: Vec<PlotSeries> = self
                .variants
                .iter()
                .map(|v| PlotSeries {
                    name: v.variant.name().to_string(),
                    y: [&v.r2, &v.mse, &v.ke][m].clone(),
                    band: v.bands.as_ref().map(|b| (b[m].lo.clone(), b[m].hi.clone())),
                })
                .collect();
            out.push((name, line_plot_svg(title, "time (hours)", &self.time_hours, &series)));
        }
        out.try_into().expect("three metrics")
    }
}

/// Densities of upper-layer PV over the final evaluation window.
#[derive(Clone, Debug, PartialEq)]
pub struct VorticityHistogram {
    pub edges: Vec<f64>,
    pub densities: Vec<(Variant, Vec<f64>)>,
}

impl VorticityHistogram {
    /// Uniform bins spanning the pooled range of all variants.
    pub fn build(samples: &[(Variant, Vec<f64>)], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidParam("histogram needs at least one bin".into()));
        }
        let all = samples.iter().flat_map(|(_, v)| v.iter().copied());
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidParam("histogram has no samples".into()));
        }
        let hi = if hi > lo { hi } else { lo + 1.0 };
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let densities = samples
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(var, v)| {
                let mut counts = vec![0.0; bins];
                for &x in v {
                    let b = (((x - lo) / width) as usize).min(bins - 1);
                    counts[b] += 1.0;
                }
                let norm = 1.0 / (v.len() as f64 * width);
                (*var, counts.into_iter().map(|c| c * norm).collect())
            })
            .collect();
        Ok(Self { edges, densities })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,variant,density\n");
        for (v, d) in &self.densities {
            for (i, x) in d.iter().enumerate() {
                writeln!(s, "{:e},{:e},{v},{x:e}", self.edges[i], self.edges[i + 1]).unwrap();
            }
        }
        s
    }

    pub fn integral(&self, v: Variant) -> Option<f64> {
        let (_, d) = self.densities.iter().find(|(x, _)| *x == v)?;
        Some(d.iter().zip(self.edges.windows(2)).map(|(p, e)| p * (e[1] - e[0])).sum())
    }
}

/// Grid states at every `k` steps until `n_obs` or the first blowup.
pub fn rollout_until_blowup(
    model: &QgModel,
    q0: &Tensor,
    n_obs: usize,
    k: usize,
    closure: &dyn Closure,
) -> Result<(Vec<Tensor>, Option<usize>)> {
    let mut state = ModelState::new(q0.clone());
    let mut out = vec![q0.clone()];
    for i in 1..=n_obs {
        for _ in 0..k {
            state = match model.step(&state, closure) {
                Ok(s) => s,
                Err(e) if e.is_blowup() => return Ok((out, Some(i))),
                Err(e) => return Err(e),
            };
        }
        out.push(state.q.clone());
    }
    Ok((out, None))
}

/// Everything needed to score forecasts from one held-out initial state.
pub struct EvalSetup<'a> {
    /// Coarse truth at the evaluation cadence, starting at the initial state.
    pub truth: &'a [Tensor],
    pub k: usize,
    /// Physics for the no-closure and Smagorinsky baselines, and for KE weights.
    pub truth_params: PhysicalParams,
    pub hybrid: &'a HybridModel,
    pub theta: Option<&'a [f64]>,
    pub ensemble: Option<&'a SampleSet>,
    pub variants: &'a [Variant],
    pub smagorinsky_cs: f64,
    pub members: usize,
    pub histogram_bins: usize,
    pub histogram_window: f64,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub series: MetricSeries,
    pub histogram: VorticityHistogram,
    /// Posterior forecast moments at each evaluation time.
    pub moments: Option<Moments>,
    /// Posterior members that blew up and were excluded.
    pub invalid_members: usize,
}

/// Evenly spaced subset of at most `n` indices out of `len`.
pub fn spread_indices(len: usize, n: usize) -> Vec<usize> {
    if n == 0 || len <= n {
        return (0..len).collect();
    }
    (0..n).map(|i| i * len / n).collect()
}

fn metric_rows(truth: &[Tensor], pred: &[Tensor], params: &PhysicalParams) -> Result<[Vec<f64>; 3]> {
    let mut r = Vec::new();
    let mut m = Vec::new();
    let mut ke = Vec::new();
    for (t, p) in truth.iter().zip(pred) {
        r.push(r2(t.re(), p.re())?);
        m.push(mse(t.re(), p.re())?);
        ke.push(crate::qg::total_kinetic_energy(p, params)?);
    }
    Ok([r, m, ke])
}

fn member_band(rows: &[[Vec<f64>; 3]], metric: usize, len: usize) -> Band {
    let n = rows.len() as f64;
    let mut lo = Vec::with_capacity(len);
    let mut hi = Vec::with_capacity(len);
    for i in 0..len {
        let mean = rows.iter().map(|r| r[metric][i]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[metric][i] - mean).powi(2)).sum::<f64>() / n;
        lo.push(mean - 2.0 * var.sqrt());
        hi.push(mean + 2.0 * var.sqrt());
    }
    Band { lo, hi }
}

/// Rolls every requested variant out from `truth[0]` and scores it against `truth`.
pub fn evaluate_run(setup: &EvalSetup) -> Result<EvalReport> {
    let truth = setup.truth;
    let n_obs = truth
        .len()
        .checked_sub(1)
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidParam("evaluation needs at least two truth states".into()))?;
    let q0 = &truth[0];
    let params = &setup.truth_params;
    let dt_hours = params.dt / 3600.0;
    let time_hours: Vec<f64> = (0..=n_obs).map(|i| (i * setup.k) as f64 * dt_hours).collect();
    if setup.variants.iter().any(|v| v.needs_ensemble()) && setup.ensemble.is_none_or(|e| e.samples.is_empty()) {
        return Err(Error::InvalidParam("posterior variants need a nonempty ensemble".into()));
    }
    if setup.variants.contains(&Variant::Deterministic) && setup.theta.is_none() {
        return Err(Error::InvalidParam("deterministic variant needs trained parameters".into()));
    }
    let base = QgModel::new(params)?;
    let d = setup.hybrid.dim();
    let hybrid_run = |theta: &[f64]| -> Result<(Vec<Tensor>, Option<usize>)> {
        let (delta, u1, cnn) = setup.hybrid.unpack(theta)?;
        let model = QgModel::new(&setup.hybrid.model().params().with_theta(delta, u1))?;
        rollout_until_blowup(&model, q0, n_obs, setup.k, &cnn)
    };

    let single: Vec<Variant> = setup
        .variants
        .iter()
        .copied()
        .filter(|v| *v != Variant::Posterior)
        .collect();
    let runs: Vec<Result<(Vec<Tensor>, Option<usize>)>> = single
        .par_iter()
        .map(|v| match v {
            Variant::Truth => Ok((truth.to_vec(), None)),
            Variant::None => rollout_until_blowup(&base, q0, n_obs, setup.k, &ClosureKind::None),
            Variant::Smagorinsky => {
                let sp = SmagorinskyParams::for_grid(params, setup.smagorinsky_cs);
                rollout_until_blowup(&base, q0, n_obs, setup.k, &ClosureKind::Smagorinsky(sp))
            }
            Variant::Deterministic => hybrid_run(setup.theta.expect("checked")),
            Variant::Map => {
                let ens = setup.ensemble.expect("checked");
                hybrid_run(&ens.samples[map_estimate(ens)?][..d])
            }
            Variant::Posterior => unreachable!(),
        })
        .collect();

    let mut variants = Vec::new();
    let mut hist_samples = Vec::new();
    let window_start = ((n_obs + 1) as f64 * (1.0 - setup.histogram_window)).floor() as usize;
    let upper = |states: &[Tensor]| -> Vec<f64> {
        let plane = states[0].len() / 2;
        states
            .iter()
            .skip(window_start)
            .flat_map(|s| s.re()[..plane].iter().copied())
            .collect()
    };
    for (v, run) in single.iter().zip(runs) {
        let (states, blow) = run?;
        let [r, m, ke] = metric_rows(truth, &states, params)?;
        hist_samples.push((*v, upper(&states)));
        variants.push(VariantSeries {
            variant: *v,
            r2: r,
            mse: m,
            ke,
            blowup: blow.map(|i| time_hours[i]),
            bands: None,
        });
    }

    let mut post_moments = None;
    let mut invalid_members = 0;
    if setup.variants.contains(&Variant::Posterior) {
        let ens = setup.ensemble.expect("checked");
        let chosen: Vec<Vec<f64>> = spread_indices(ens.samples.len(), setup.members)
            .into_iter()
            .map(|i| ens.samples[i].clone())
            .collect();
        let (members, invalid) = ensemble_forecasts(setup.hybrid, &chosen, q0, n_obs, setup.k)?;
        invalid_members = invalid;
        let mo = moments(&members)?;
        let [r, m, ke] = metric_rows(truth, &mo.mean, params)?;
        let rows = members
            .iter()
            .map(|mem| metric_rows(truth, mem, params))
            .collect::<Result<Vec<_>>>()?;
        let bands = [0, 1, 2].map(|i| member_band(&rows, i, n_obs + 1));
        hist_samples.push((Variant::Posterior, upper(&mo.mean)));
        variants.push(VariantSeries {
            variant: Variant::Posterior,
            r2: r,
            mse: m,
            ke,
            blowup: None,
            bands: Some(bands),
        });
        post_moments = Some(mo);
    }
    let histogram = VorticityHistogram::build(&hist_samples, setup.histogram_bins)?;
    Ok(EvalReport {
        series: MetricSeries { time_hours, variants },
        histogram,
        moments: post_moments,
        invalid_members,
    })
}
