//! Pattern-consistent calibration of the workload, cooling and auxiliary
//! parameter sets against a measured trace, with a pointwise MSE mode for
//! comparison.
//!
//! The data trace is windowed, a contrastive encoder is trained on the data
//! windows once and frozen, and the data pattern vector `s_data` is computed
//! once. Candidates are simulated with one fixed seed (common random numbers)
//! and scored by `‖s_data − s_model(Θ)‖²`. The search runs Nelder–Mead in an
//! unconstrained space mapped onto the parameter box.

mod experiments;
mod nelder_mead;

pub use experiments::{
    ablation_trial, heldout_dtw, pattern_spread, random_inits, robustness, synthetic_trace,
    tcl_sweep, AblationOutcome, RobustnessReport, TclSweepRow,
};
pub use nelder_mead::{minimize, SimplexOptions, SimplexOutcome};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lel::{archetype_defaults, to_exchange_string, Archetype, LelParams};
use crate::tcl::{
    segment_series, series_pattern, train_encoder, Encoder, PatternVector, TclConfig,
};
use crate::thermal_aux::{simulate_aux, simulate_cooling};
use crate::trace::Trace;
use crate::workload::{sample_count, simulate_workload_raw};

/// Which parameter set is calibrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subsystem {
    Workload,
    Cooling,
    Aux,
}

impl Subsystem {
    pub fn as_str(self) -> &'static str {
        match self {
            Subsystem::Workload => "workload",
            Subsystem::Cooling => "cooling",
            Subsystem::Aux => "aux",
        }
    }

    /// Parameter names in vector order.
    pub fn parameter_names(self) -> &'static [&'static str] {
        match self {
            Subsystem::Workload => &[
                "tau_eta",
                "mu_eta",
                "sigma_xi",
                "lambda_burst",
                "ln_a_mu",
                "ln_a_sigma",
            ],
            Subsystem::Cooling => &[
                "r_s",
                "x_s",
                "x_m",
                "r_r",
                "x_r",
                "h_m",
                "v_stall",
                "tau_stall",
                "t_cool",
                "load_factor",
            ],
            Subsystem::Aux => &["p_aux0", "alpha_z", "alpha_i", "alpha_p", "beta_aux"],
        }
    }

    pub fn dim(self) -> usize {
        self.parameter_names().len()
    }

    /// Data channel the simulated output is compared with.
    pub fn channel(self) -> &'static str {
        match self {
            Subsystem::Workload => "p_work",
            Subsystem::Cooling => "p_cool",
            Subsystem::Aux => "p_aux",
        }
    }

    /// Whether the subsystem is driven by a terminal-voltage input.
    pub fn needs_voltage(self) -> bool {
        !matches!(self, Subsystem::Workload)
    }

    /// The calibrated entries of `params`.
    pub fn theta(self, params: &LelParams) -> Vec<f64> {
        match self {
            Subsystem::Workload => {
                let w = &params.work;
                vec![
                    w.tau_eta,
                    w.mu_eta,
                    w.sigma_xi,
                    w.lambda_burst,
                    w.ln_a_mu,
                    w.ln_a_sigma,
                ]
            }
            Subsystem::Cooling => {
                let c = &params.cool;
                vec![
                    c.r_s,
                    c.x_s,
                    c.x_m,
                    c.r_r,
                    c.x_r,
                    c.h_m,
                    c.v_stall,
                    c.tau_stall,
                    c.t_cool,
                    c.load_factor,
                ]
            }
            Subsystem::Aux => {
                let a = &params.aux;
                vec![a.p_aux0, a.alpha_z, a.alpha_i, a.alpha_p, a.beta_aux]
            }
        }
    }

    /// `base` with the calibrated entries replaced by `theta`.
    pub fn apply(self, base: &LelParams, theta: &[f64]) -> Result<LelParams> {
        if theta.len() != self.dim() {
            return Err(Error::invalid(format!(
                "{} parameter vector needs {} entries, got {}",
                self.as_str(),
                self.dim(),
                theta.len()
            )));
        }
        let mut p = *base;
        let t = theta;
        match self {
            Subsystem::Workload => {
                let w = &mut p.work;
                (
                    w.tau_eta,
                    w.mu_eta,
                    w.sigma_xi,
                    w.lambda_burst,
                    w.ln_a_mu,
                    w.ln_a_sigma,
                ) = (t[0], t[1], t[2], t[3], t[4], t[5]);
            }
            Subsystem::Cooling => {
                let c = &mut p.cool;
                (c.r_s, c.x_s, c.x_m, c.r_r, c.x_r) = (t[0], t[1], t[2], t[3], t[4]);
                (c.h_m, c.v_stall, c.tau_stall, c.t_cool, c.load_factor) =
                    (t[5], t[6], t[7], t[8], t[9]);
            }
            Subsystem::Aux => {
                let a = &mut p.aux;
                (a.p_aux0, a.alpha_z, a.alpha_i, a.alpha_p, a.beta_aux) =
                    (t[0], t[1], t[2], t[3], t[4]);
            }
        }
        Ok(p)
    }

    /// Entries that must stay inside `[0, 1]`.
    fn unit_interval(self, i: usize) -> bool {
        match self {
            Subsystem::Workload => i == 1,
            Subsystem::Cooling => i == 6 || i == 9,
            Subsystem::Aux => (1..=3).contains(&i),
        }
    }

    /// Indices of the ZIP coefficients, which are mapped jointly so they sum
    /// to one.
    fn simplex_group(self) -> Option<[usize; 3]> {
        (self == Subsystem::Aux).then_some([1, 2, 3])
    }
}

impl std::str::FromStr for Subsystem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "workload" => Ok(Subsystem::Workload),
            "cooling" => Ok(Subsystem::Cooling),
            "aux" | "auxiliary" => Ok(Subsystem::Aux),
            other => Err(Error::invalid(format!(
                "unknown subsystem `{other}` (expected workload, cooling or aux)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Squared distance between pattern vectors.
    Pattern,
    /// Mean squared pointwise error.
    Mse,
}

impl std::str::FromStr for ObjectiveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pattern" => Ok(ObjectiveMode::Pattern),
            "mse" => Ok(ObjectiveMode::Mse),
            other => Err(Error::invalid(format!(
                "unknown objective `{other}` (expected pattern or mse)"
            ))),
        }
    }
}

/// Per-parameter box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    /// `[θ(1 − frac), θ(1 + frac)]` per entry, kept inside `[0, 1]` for
    /// fractions and the ZIP coefficients widened to the whole unit interval.
    pub fn around(subsystem: Subsystem, theta: &[f64], frac: f64) -> Result<Self> {
        if !(frac > 0.0 && frac.is_finite()) {
            return Err(Error::invalid(format!(
                "bound fraction must be positive, got {frac}"
            )));
        }
        if theta.len() != subsystem.dim() {
            return Err(Error::invalid("parameter vector has the wrong length"));
        }
        let group = subsystem.simplex_group().unwrap_or_default();
        let mut lo = Vec::with_capacity(theta.len());
        let mut hi = Vec::with_capacity(theta.len());
        for (i, &x) in theta.iter().enumerate() {
            let (mut a, mut b) = if x == 0.0 {
                (-frac, frac)
            } else {
                let (a, b) = (x * (1.0 - frac), x * (1.0 + frac));
                (a.min(b), a.max(b))
            };
            if subsystem.simplex_group().is_some() && group.contains(&i) {
                (a, b) = (0.0, 1.0);
            } else if subsystem.unit_interval(i) {
                (a, b) = (a.max(1e-6), b.min(1.0 - 1e-6));
            }
            lo.push(a);
            hi.push(b);
        }
        let bounds = Self { lo, hi };
        bounds.validate(subsystem)?;
        Ok(bounds)
    }

    pub fn validate(&self, subsystem: Subsystem) -> Result<()> {
        if self.lo.len() != subsystem.dim() || self.hi.len() != subsystem.dim() {
            return Err(Error::invalid(format!(
                "{} bounds need {} entries",
                subsystem.as_str(),
                subsystem.dim()
            )));
        }
        for (i, (&a, &b)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::invalid(format!(
                    "bounds for `{}` must be finite with lo < hi, got [{a}, {b}]",
                    subsystem.parameter_names()[i]
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.lo.len()
            && theta
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&x, (&a, &b))| x >= a && x <= b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub subsystem: Subsystem,
    pub bounds: Bounds,
    pub max_evals: usize,
    pub horizon: f64,
    pub dt: f64,
    pub sim_seed: u64,
    pub encoder_seed: u64,
    pub optimizer_seed: u64,
    pub mode: ObjectiveMode,
    pub tcl: TclConfig,
    /// Fixed values of every parameter outside the calibrated set.
    pub base: LelParams,
    /// Terminal-voltage magnitude driving the cooling and auxiliary blocks;
    /// flat 1 pu when absent.
    pub voltage: Option<Vec<f64>>,
}

impl CalibrationConfig {
    /// Bounds `±50 %` around `base`'s current values, 300 evaluations and the
    /// default TCL settings.
    pub fn new(subsystem: Subsystem, base: LelParams, horizon: f64, dt: f64) -> Result<Self> {
        Ok(Self {
            subsystem,
            bounds: Bounds::around(subsystem, &subsystem.theta(&base), 0.5)?,
            max_evals: 300,
            horizon,
            dt,
            sim_seed: 0,
            encoder_seed: 0,
            optimizer_seed: 0,
            mode: ObjectiveMode::Pattern,
            tcl: TclConfig::default(),
            base,
            voltage: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate(self.subsystem)?;
        if self.max_evals == 0 {
            return Err(Error::invalid("max_evals must be at least 1"));
        }
        if !(self.dt > 0.0 && self.horizon > self.dt) {
            return Err(Error::invalid(format!(
                "need horizon > dt > 0 (horizon = {}, dt = {})",
                self.horizon, self.dt
            )));
        }
        if let Some(v) = &self.voltage {
            if v.len() != self.samples() {
                return Err(Error::invalid(format!(
                    "voltage input has {} samples, the horizon needs {}",
                    v.len(),
                    self.samples()
                )));
            }
        }
        self.tcl.validate()
    }

    pub fn samples(&self) -> usize {
        sample_count(self.horizon, self.dt)
    }
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self::new(
            Subsystem::Workload,
            archetype_defaults(Archetype::Datacenter),
            7200.0,
            1.0,
        )
        .expect("default bounds are valid")
    }
}

/// Simulated output channel of the selected subsystem under `theta`.
pub fn simulate_subsystem(theta: &[f64], cfg: &CalibrationConfig, seed: u64) -> Result<Vec<f64>> {
    let params = cfg.subsystem.apply(&cfg.base, theta)?;
    let n = cfg.samples();
    let flat;
    let voltage = match &cfg.voltage {
        Some(v) => v.as_slice(),
        None => {
            flat = vec![1.0; n];
            &flat
        }
    };
    match cfg.subsystem {
        Subsystem::Workload => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(simulate_workload_raw(&params.work, params.work.mu_eta, n, cfg.dt, &mut rng)?.power)
        }
        Subsystem::Cooling => Ok(simulate_cooling(voltage, cfg.dt, &params.cool)?.p),
        Subsystem::Aux => Ok(simulate_aux(voltage, &params.aux)?.0),
    }
}

fn check_in_bounds(theta: &[f64], cfg: &CalibrationConfig) -> Result<()> {
    if !cfg.bounds.contains(theta) {
        return Err(Error::invalid(format!(
            "parameter vector {theta:?} lies outside the bounds"
        )));
    }
    Ok(())
}

/// `‖s_data − s_model(θ)‖²` with the model simulated under `cfg.sim_seed`.
pub fn calibration_objective(
    theta: &[f64],
    data_pattern: &PatternVector,
    encoder: &Encoder,
    cfg: &CalibrationConfig,
) -> Result<f64> {
    check_in_bounds(theta, cfg)?;
    let sim = simulate_subsystem(theta, cfg, cfg.sim_seed)?;
    series_pattern(encoder, &sim, cfg.tcl.stride())?.distance_sq(data_pattern)
}

/// Mean squared error between two equally long series.
pub fn mean_squared_error(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid("mean squared error of empty series"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Pointwise MSE between the simulated channel and `data`.
pub fn mse_objective(theta: &[f64], data: &[f64], cfg: &CalibrationConfig) -> Result<f64> {
    check_in_bounds(theta, cfg)?;
    mean_squared_error(&simulate_subsystem(theta, cfg, cfg.sim_seed)?, data)
}

/// Map between the parameter box and the unconstrained search space.
///
/// Each entry is `lo + (hi − lo)·σ(z)`, taken in log space when `lo > 0`. The
/// ZIP coefficients are a softmax of two free coordinates (the third logit is
/// pinned at 0).
#[derive(Debug, Clone)]
struct Transform {
    lo: Vec<f64>,
    hi: Vec<f64>,
    log: Vec<bool>,
    group: Option<[usize; 3]>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(u: f64) -> f64 {
    let u = u.clamp(1e-9, 1.0 - 1e-9);
    (u / (1.0 - u)).ln()
}

impl Transform {
    fn new(subsystem: Subsystem, bounds: &Bounds) -> Self {
        Self {
            lo: bounds.lo.clone(),
            hi: bounds.hi.clone(),
            log: bounds.lo.iter().map(|&a| a > 0.0).collect(),
            group: subsystem.simplex_group(),
        }
    }

    fn free(&self) -> Vec<usize> {
        let skip = self.group.unwrap_or([usize::MAX; 3]);
        (0..self.lo.len()).filter(|i| !skip.contains(i)).collect()
    }

    fn to_theta(&self, z: &[f64]) -> Vec<f64> {
        let mut theta = vec![0.0; self.lo.len()];
        let free = self.free();
        for (&i, &zi) in free.iter().zip(z) {
            let u = sigmoid(zi);
            theta[i] = if self.log[i] {
                (self.lo[i].ln() + (self.hi[i].ln() - self.lo[i].ln()) * u).exp()
            } else {
                self.lo[i] + (self.hi[i] - self.lo[i]) * u
            };
            theta[i] = theta[i].clamp(self.lo[i], self.hi[i]);
        }
        if let Some(g) = self.group {
            let za = [z[free.len()], z[free.len() + 1], 0.0];
            let m = za.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = za.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for (k, &i) in g.iter().enumerate() {
                theta[i] = e[k] / s;
            }
        }
        theta
    }

    fn to_z(&self, theta: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = self
            .free()
            .into_iter()
            .map(|i| {
                let u = if self.log[i] {
                    (theta[i].ln() - self.lo[i].ln()) / (self.hi[i].ln() - self.lo[i].ln())
                } else {
                    (theta[i] - self.lo[i]) / (self.hi[i] - self.lo[i])
                };
                logit(u)
            })
            .collect();
        if let Some(g) = self.group {
            let last = theta[g[2]].max(1e-12);
            z.push((theta[g[0]].max(1e-12) / last).ln());
            z.push((theta[g[1]].max(1e-12) / last).ln());
        }
        z
    }
}

/// Data windows, frozen encoder and data pattern vector shared by every
/// candidate evaluation.
#[derive(Debug, Clone)]
pub struct Problem {
    pub cfg: CalibrationConfig,
    pub data: Vec<f64>,
    pub encoder: Encoder,
    pub data_pattern: PatternVector,
}

impl Problem {
    /// Trains the encoder on the data windows with `cfg.encoder_seed`.
    pub fn new(data_trace: &Trace, cfg: &CalibrationConfig) -> Result<Self> {
        let (data, cfg) = prepare(data_trace, cfg)?;
        let windows = segment_series(&data, cfg.tcl.window_len, cfg.tcl.stride())?;
        let encoder = train_encoder(&windows, &cfg.tcl, cfg.encoder_seed)?.encoder;
        Self::with_encoder(data, encoder, cfg)
    }

    /// Uses an already trained encoder.
    pub fn with_encoder_for(
        data_trace: &Trace,
        encoder: Encoder,
        cfg: &CalibrationConfig,
    ) -> Result<Self> {
        let (data, cfg) = prepare(data_trace, cfg)?;
        if encoder.window_len != cfg.tcl.window_len || encoder.channels != 1 {
            return Err(Error::invalid(format!(
                "encoder expects {}-sample windows of {} channels, calibration uses {}-sample single-channel windows",
                encoder.window_len, encoder.channels, cfg.tcl.window_len
            )));
        }
        Self::with_encoder(data, encoder, cfg)
    }

    fn with_encoder(data: Vec<f64>, encoder: Encoder, cfg: CalibrationConfig) -> Result<Self> {
        let data_pattern = series_pattern(&encoder, &data, cfg.tcl.stride())?;
        Ok(Self {
            cfg,
            data,
            encoder,
            data_pattern,
        })
    }

    pub fn pattern_distance(&self, theta: &[f64]) -> Result<f64> {
        calibration_objective(theta, &self.data_pattern, &self.encoder, &self.cfg)
    }

    pub fn objective(&self, theta: &[f64]) -> Result<f64> {
        match self.cfg.mode {
            ObjectiveMode::Pattern => self.pattern_distance(theta),
            ObjectiveMode::Mse => mse_objective(theta, &self.data, &self.cfg),
        }
    }

    /// Pattern vector of the model simulated under `cfg.sim_seed`.
    pub fn model_pattern(&self, theta: &[f64]) -> Result<PatternVector> {
        check_in_bounds(theta, &self.cfg)?;
        let sim = simulate_subsystem(theta, &self.cfg, self.cfg.sim_seed)?;
        series_pattern(&self.encoder, &sim, self.cfg.tcl.stride())
    }

    /// Runs the simplex search from `theta_init`.
    pub fn calibrate(&self, theta_init: &[f64]) -> Result<CalibrationResult> {
        let cfg = &self.cfg;
        check_in_bounds(theta_init, cfg)?;
        let initial_objective = self.objective(theta_init)?;
        let initial_pattern_distance = match cfg.mode {
            ObjectiveMode::Pattern => initial_objective,
            ObjectiveMode::Mse => self.pattern_distance(theta_init)?,
        };
        let transform = Transform::new(cfg.subsystem, &cfg.bounds);
        let z0 = transform.to_z(theta_init);
        let f = |z: &[f64]| -> f64 {
            let theta = transform.to_theta(z);
            self.objective(&theta).unwrap_or(f64::INFINITY)
        };
        let opts = SimplexOptions {
            max_evals: cfg.max_evals,
            seed: cfg.optimizer_seed,
            ..SimplexOptions::default()
        };
        let out = if z0.is_empty() {
            None
        } else {
            Some(minimize(&f, &z0, &opts))
        };
        let (theta_star, objective_trace, evaluations, exhausted) = match out {
            Some(o) if o.best_value < initial_objective => (
                transform.to_theta(&o.best),
                o.history,
                o.evaluations,
                o.exhausted,
            ),
            Some(o) => (
                theta_init.to_vec(),
                o.history.iter().map(|v| v.min(initial_objective)).collect(),
                o.evaluations,
                o.exhausted,
            ),
            None => (theta_init.to_vec(), vec![initial_objective], 1, false),
        };
        let mut objective_trace = objective_trace;
        if let Some(first) = objective_trace.first_mut() {
            *first = initial_objective;
        }
        let final_objective = self.objective(&theta_star)?;
        let final_pattern_distance = match cfg.mode {
            ObjectiveMode::Pattern => final_objective,
            ObjectiveMode::Mse => self.pattern_distance(&theta_star)?,
        };
        Ok(CalibrationResult {
            subsystem: cfg.subsystem,
            mode: cfg.mode,
            params: cfg.subsystem.apply(&cfg.base, &theta_star)?,
            theta_star,
            objective_trace,
            final_objective,
            final_pattern_distance,
            initial_pattern_distance,
            evaluations,
            budget_exhausted: exhausted,
        })
    }
}

/// Checks the data trace against `cfg` and fills the voltage input from the
/// trace's `v` channel when the subsystem needs one.
fn prepare(data_trace: &Trace, cfg: &CalibrationConfig) -> Result<(Vec<f64>, CalibrationConfig)> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    let data = data_trace.require(cfg.subsystem.channel())?.to_vec();
    if (data_trace.sample_period - cfg.dt).abs() > 1e-9 * cfg.dt {
        return Err(Error::invalid(format!(
            "data sample period {} differs from the calibration dt {}",
            data_trace.sample_period, cfg.dt
        )));
    }
    if data.len() != cfg.samples() {
        return Err(Error::invalid(format!(
            "data trace has {} samples, the horizon needs {}",
            data.len(),
            cfg.samples()
        )));
    }
    if data.len() < 4 * cfg.tcl.window_len {
        return Err(Error::invalid(format!(
            "data trace needs at least {} samples for windows of {}",
            4 * cfg.tcl.window_len,
            cfg.tcl.window_len
        )));
    }
    if cfg.subsystem.needs_voltage() && cfg.voltage.is_none() {
        if let Some(v) = data_trace.channel("v") {
            cfg.voltage = Some(v.to_vec());
        }
    }
    Ok((data, cfg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub subsystem: Subsystem,
    pub mode: ObjectiveMode,
    pub theta_star: Vec<f64>,
    /// `base` with `theta_star` applied.
    pub params: LelParams,
    /// Best objective value at the start and after each simplex iteration.
    pub objective_trace: Vec<f64>,
    pub final_objective: f64,
    pub final_pattern_distance: f64,
    pub initial_pattern_distance: f64,
    pub evaluations: usize,
    /// The evaluation budget ran out before the simplex converged.
    pub budget_exhausted: bool,
}

impl CalibrationResult {
    /// The calibrated parameter set in the parameter-exchange format.
    pub fn to_exchange_string(&self) -> Result<String> {
        to_exchange_string(&self.params)
    }

    /// `iteration,objective` rows.
    pub fn objective_csv(&self) -> String {
        let mut out = String::from("iteration,objective\n");
        for (i, v) in self.objective_trace.iter().enumerate() {
            out.push_str(&format!("{i},{v:e}\n"));
        }
        out
    }
}

/// Trains the encoder on `data_trace` and calibrates from `theta_init`.
pub fn calibrate(
    theta_init: &[f64],
    data_trace: &Trace,
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult> {
    Problem::new(data_trace, cfg)?.calibrate(theta_init)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::simulate_workload;

    fn small_cfg() -> CalibrationConfig {
        let mut cfg = CalibrationConfig::new(
            Subsystem::Workload,
            archetype_defaults(Archetype::Datacenter),
            600.0,
            1.0,
        )
        .unwrap();
        cfg.tcl = TclConfig {
            epochs: 3,
            dim: 8,
            hidden: 16,
            ..TclConfig::default()
        };
        cfg.max_evals = 40;
        cfg
    }

    fn data(cfg: &CalibrationConfig, seed: u64) -> Trace {
        simulate_workload(&cfg.base.work, cfg.horizon, cfg.dt, seed).unwrap()
    }

    #[test]
    fn transform_round_trips_and_respects_bounds() {
        let base = archetype_defaults(Archetype::Datacenter);
        for sub in [Subsystem::Workload, Subsystem::Cooling, Subsystem::Aux] {
            let theta = sub.theta(&base);
            let bounds = Bounds::around(sub, &theta, 0.5).unwrap();
            let t = Transform::new(sub, &bounds);
            let back = t.to_theta(&t.to_z(&theta));
            for (a, b) in theta.iter().zip(&back) {
                assert!(
                    (a - b).abs() < 1e-9 * (1.0 + a.abs()),
                    "{sub:?}: {a} vs {b}"
                );
            }
            for z in [-50.0, -1.0, 0.0, 3.0, 50.0] {
                let n = t.to_z(&theta).len();
                let x = t.to_theta(&vec![z; n]);
                assert!(bounds.contains(&x), "{sub:?} z={z}: {x:?}");
            }
        }
        let aux = Subsystem::Aux.theta(&base);
        let bounds = Bounds::around(Subsystem::Aux, &aux, 0.5).unwrap();
        let x = Transform::new(Subsystem::Aux, &bounds).to_theta(&[0.3, -0.2, 1.0, 0.4]);
        assert!((x[1] + x[2] + x[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn objective_is_zero_at_the_generating_parameters() {
        let cfg = small_cfg();
        let problem = Problem::new(&data(&cfg, cfg.sim_seed), &cfg).unwrap();
        let theta = Subsystem::Workload.theta(&cfg.base);
        assert_eq!(problem.pattern_distance(&theta).unwrap(), 0.0);
        let result = problem.calibrate(&theta).unwrap();
        assert_eq!(result.theta_star, theta);
        assert!(result.final_objective < 1e-10);
    }

    #[test]
    fn objective_is_deterministic_and_nonnegative() {
        let cfg = small_cfg();
        let problem = Problem::new(&data(&cfg, 11), &cfg).unwrap();
        let mut theta = Subsystem::Workload.theta(&cfg.base);
        theta[2] *= 1.3;
        let a = problem.pattern_distance(&theta).unwrap();
        let b = problem.pattern_distance(&theta).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a >= 0.0);
        theta[0] = 1e6;
        assert!(matches!(
            problem.pattern_distance(&theta),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mean_squared_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(
            (mean_squared_error(&[1.0, 2.0, 3.0], &[1.5, 2.5, 3.5]).unwrap() - 0.25).abs() < 1e-15
        );
        assert!(mean_squared_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn calibration_trace_is_monotone_and_in_bounds() {
        let mut cfg = small_cfg();
        cfg.sim_seed = 5;
        let problem = Problem::new(&data(&cfg, 9), &cfg).unwrap();
        let init: Vec<f64> = Subsystem::Workload
            .theta(&cfg.base)
            .iter()
            .zip([1.4, 0.7, 1.3, 0.6, 1.2, 0.8])
            .map(|(v, s)| v * s)
            .collect();
        let result = problem.calibrate(&init).unwrap();
        assert!(result.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(cfg.bounds.contains(&result.theta_star));
        assert!(result.evaluations <= cfg.max_evals);
        assert!(result.final_objective <= result.objective_trace[0]);
        let text = result.to_exchange_string().unwrap();
        let back: LelParams = crate::lel::from_exchange_str(&text).unwrap();
        assert_eq!(back, result.params);
        assert!(result
            .objective_csv()
            .starts_with("iteration,objective\n0,"));
    }

    #[test]
    fn rejects_bad_configs() {
        let cfg = small_cfg();
        let mut bad = cfg.clone();
        bad.max_evals = 0;
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.bounds.hi[0] = bad.bounds.lo[0];
        assert!(bad.validate().is_err());
        let short = Trace::single(1.0, "p_work", vec![1.0; 10]).unwrap();
        assert!(Problem::new(&short, &cfg).is_err());
    }

    #[test]
    fn aux_calibration_recovers_zip_shape() {
        let base = archetype_defaults(Archetype::Datacenter);
        let n = 400;
        let v: Vec<f64> = (0..n)
            .map(|i| 1.0 - 0.25 * ((i as f64) * 0.05).sin().abs())
            .collect();
        let (p, _) = simulate_aux(&v, &base.aux).unwrap();
        let mut trace = Trace::single(0.1, "p_aux", p).unwrap();
        trace.push_channel("v", v).unwrap();
        let mut cfg = CalibrationConfig::new(Subsystem::Aux, base, n as f64 * 0.1, 0.1).unwrap();
        cfg.mode = ObjectiveMode::Mse;
        cfg.tcl = TclConfig {
            epochs: 2,
            dim: 8,
            hidden: 16,
            ..TclConfig::default()
        };
        cfg.max_evals = 400;
        let init = vec![8.0, 0.2, 0.2, 0.6, 0.4];
        let problem = Problem::new(&trace, &cfg).unwrap();
        let start = problem.objective(&init).unwrap();
        let result = problem.calibrate(&init).unwrap();
        assert!(result.final_objective < 1e-3 * start, "{result:?}");
    }
}
