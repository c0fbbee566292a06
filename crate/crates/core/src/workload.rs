//! Duty-idle IT workload.
//!
//! Utilization η follows a mean-reverting process with additive white noise
//! and Poisson-timed log-normal impulses:
//!
//! ```text
//! τ_η η̇ = −(η − μ_η) + ξ(t) + Σ_k A_k δ(t − t_k)
//! p_work = p_base + η (p_full − p_base)
//! ```
//!
//! The discrete update uses exact exponential decay for the mean reversion,
//! an Euler–Maruyama noise increment `(σ_ξ/τ_η)·√dt·g`, and at most one burst
//! per step (Bernoulli thinning with probability `λ·dt`) that shifts η by
//! `A/τ_η`. η is clipped to `[0, 1]` after the full step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::Trace;
use crate::Real;

/// Largest admissible burst probability per step.
const MAX_BURST_PROBABILITY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadParams<T = f64> {
    /// Idle power draw, MW.
    pub p_base: T,
    /// Full-duty power draw, MW.
    pub p_full: T,
    /// Mean-reversion time constant, s.
    pub tau_eta: T,
    /// Nominal utilization.
    pub mu_eta: T,
    /// Noise intensity, 1/√s.
    pub sigma_xi: T,
    /// Burst arrival rate, events/s.
    pub lambda_burst: T,
    /// Log-mean of the burst amplitude.
    pub ln_a_mu: T,
    /// Log-standard-deviation of the burst amplitude.
    pub ln_a_sigma: T,
}

impl<T: Real> WorkloadParams<T> {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.p_base,
            self.p_full,
            self.tau_eta,
            self.mu_eta,
            self.sigma_xi,
            self.lambda_burst,
            self.ln_a_mu,
            self.ln_a_sigma,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("workload parameters must be finite"));
        }
        if self.p_base < T::zero() || self.p_full < self.p_base {
            return Err(Error::validation(format!(
                "workload requires p_full >= p_base >= 0 (p_base = {}, p_full = {})",
                self.p_base, self.p_full
            )));
        }
        if self.tau_eta <= T::zero() {
            return Err(Error::validation("tau_eta must be positive"));
        }
        if self.mu_eta < T::zero() || self.mu_eta > T::one() {
            return Err(Error::validation("mu_eta must lie in [0, 1]"));
        }
        if self.sigma_xi < T::zero() {
            return Err(Error::validation("sigma_xi must be non-negative"));
        }
        if self.lambda_burst < T::zero() {
            return Err(Error::validation("lambda_burst must be non-negative"));
        }
        if self.ln_a_sigma < T::zero() {
            return Err(Error::validation("ln_a_sigma must be non-negative"));
        }
        Ok(())
    }

    /// E[A] of the log-normal burst amplitude.
    pub fn mean_burst_amplitude(&self) -> T {
        (self.ln_a_mu + self.ln_a_sigma * self.ln_a_sigma / T::of(2.0)).exp()
    }

    /// Stationary mean of η when clipping is negligible: `μ_η + λ·E[A]`.
    pub fn stationary_mean(&self) -> T {
        self.mu_eta + self.lambda_burst * self.mean_burst_amplitude()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadState<T = f64> {
    pub eta: T,
}

impl<T: Real> WorkloadState<T> {
    pub fn at_mean(params: &WorkloadParams<T>) -> Self {
        Self { eta: params.mu_eta }
    }
}

/// Random numbers consumed by one step.
///
/// A step always draws the same three variates whether or not a burst occurs,
/// so two parameter sets driven by the same seed stay aligned draw for draw.
#[derive(Debug, Clone, Copy)]
pub struct OuDraw<T> {
    pub noise: T,
    pub uniform: T,
    pub amplitude: T,
}

impl<T: Real> OuDraw<T> {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let noise: f64 = rng.sample(StandardNormal);
        let uniform: f64 = rng.random();
        let amplitude: f64 = rng.sample(StandardNormal);
        Self {
            noise: T::of(noise),
            uniform: T::of(uniform),
            amplitude: T::of(amplitude),
        }
    }
}

fn check_step<T: Real>(params: &WorkloadParams<T>, dt: T) -> Result<()> {
    if !(dt > T::zero()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if dt > params.tau_eta / T::of(2.0) {
        return Err(Error::invalid(format!(
            "dt = {dt} exceeds tau_eta/2 = {}",
            params.tau_eta / T::of(2.0)
        )));
    }
    if params.lambda_burst * dt > T::of(MAX_BURST_PROBABILITY) {
        return Err(Error::invalid(format!(
            "lambda*dt = {} is too coarse for Bernoulli burst thinning",
            params.lambda_burst * dt
        )));
    }
    Ok(())
}

/// Applies one step with pre-drawn variates. Returns the new state and
/// whether a burst fired.
pub fn ou_advance<T: Real>(
    state: WorkloadState<T>,
    params: &WorkloadParams<T>,
    dt: T,
    draw: &OuDraw<T>,
) -> Result<(WorkloadState<T>, bool)> {
    check_step(params, dt)?;
    let tau = params.tau_eta;
    let mu = params.mu_eta;
    let mut eta = mu + (state.eta - mu) * (-dt / tau).exp();
    eta += params.sigma_xi / tau * dt.sqrt() * draw.noise;
    let burst = draw.uniform < params.lambda_burst * dt;
    if burst {
        let amplitude = (params.ln_a_mu + params.ln_a_sigma * draw.amplitude).exp();
        eta += amplitude / tau;
    }
    Ok((
        WorkloadState {
            eta: eta.max(T::zero()).min(T::one()),
        },
        burst,
    ))
}

pub fn ou_step<T: Real, R: Rng + ?Sized>(
    state: WorkloadState<T>,
    params: &WorkloadParams<T>,
    dt: T,
    rng: &mut R,
) -> Result<WorkloadState<T>> {
    let draw = OuDraw::sample(rng);
    ou_advance(state, params, dt, &draw).map(|(s, _)| s)
}

/// Workload power for utilization `eta`, MW. Reactive power is zero.
pub fn workload_power<T: Real>(eta: T, params: &WorkloadParams<T>) -> Result<T> {
    if !(T::zero()..=T::one()).contains(&eta) {
        return Err(Error::invalid(format!("eta = {eta} outside [0, 1]")));
    }
    Ok(params.p_base + eta * (params.p_full - params.p_base))
}

/// Output of [`simulate_workload_raw`].
#[derive(Debug, Clone)]
pub struct WorkloadRun<T> {
    pub eta: Vec<T>,
    pub power: Vec<T>,
    pub bursts: usize,
}

/// Number of samples `⌊horizon/dt⌋`, robust to `horizon/dt` landing a hair
/// below an integer.
pub fn sample_count<T: Real>(horizon: T, dt: T) -> usize {
    let ratio = (horizon / dt).as_f64();
    (ratio * (1.0 + 1e-12)).floor() as usize
}

/// Simulates `n` samples starting from `eta0`; sample 0 is the initial state.
pub fn simulate_workload_raw<T: Real, R: Rng + ?Sized>(
    params: &WorkloadParams<T>,
    eta0: T,
    n: usize,
    dt: T,
    rng: &mut R,
) -> Result<WorkloadRun<T>> {
    params.validate()?;
    check_step(params, dt)?;
    let mut state = WorkloadState { eta: eta0 };
    let mut eta = Vec::with_capacity(n);
    let mut power = Vec::with_capacity(n);
    let mut bursts = 0;
    for k in 0..n {
        if k > 0 {
            let draw = OuDraw::sample(rng);
            let (next, burst) = ou_advance(state, params, dt, &draw)?;
            state = next;
            bursts += usize::from(burst);
        }
        eta.push(state.eta);
        power.push(workload_power(state.eta, params)?);
    }
    Ok(WorkloadRun { eta, power, bursts })
}

/// Workload power trace (channel `p_work`, MW) of `⌊horizon/dt⌋` samples,
/// starting at `η = μ_η`. Bit-reproducible for a fixed seed.
pub fn simulate_workload<T: Real>(
    params: &WorkloadParams<T>,
    horizon: T,
    dt: T,
    seed: u64,
) -> Result<Trace<T>> {
    if !(dt > T::zero()) || !(horizon > dt) {
        return Err(Error::invalid(format!(
            "need horizon > dt > 0 (horizon = {horizon}, dt = {dt})"
        )));
    }
    let n = sample_count(horizon, dt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let run = simulate_workload_raw(params, params.mu_eta, n, dt, &mut rng)?;
    let mut trace = Trace::single(dt, "p_work", run.power)?;
    trace.push_channel("eta", run.eta)?;
    trace.metadata.insert("seed".into(), seed.to_string());
    trace
        .metadata
        .insert("bursts".into(), run.bursts.to_string());
    Ok(trace)
}

/// `ln P(N(T) = n)` for a homogeneous Poisson process of rate `lambda`.
pub fn poisson_log_likelihood<T: Real>(event_count: u64, horizon: T, lambda: T) -> Result<T> {
    if !(lambda > T::zero()) {
        return Err(Error::invalid(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !(horizon > T::zero()) {
        return Err(Error::invalid(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let mean = lambda * horizon;
    let ln_factorial: f64 = (2..=event_count).map(|k| (k as f64).ln()).sum();
    let n = T::from_u64(event_count).unwrap();
    Ok(-mean + n * mean.ln() - T::of(ln_factorial))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(mu: f64) -> WorkloadParams {
        WorkloadParams {
            p_base: 2.0,
            p_full: 10.0,
            tau_eta: 10.0,
            mu_eta: mu,
            sigma_xi: 0.0,
            lambda_burst: 0.0,
            ln_a_mu: 0.0,
            ln_a_sigma: 0.0,
        }
    }

    #[test]
    fn fixed_point_of_mean_reversion() {
        let p = quiet(0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dt in [1e-3, 0.1, 2.5, 5.0] {
            let s = ou_step(WorkloadState { eta: 0.4 }, &p, dt, &mut rng).unwrap();
            assert_eq!(s.eta, 0.4);
        }
    }

    #[test]
    fn deterministic_decay_reaches_closed_form_at_tau() {
        let p = quiet(0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = WorkloadState { eta: 0.6 };
        let dt = 0.01;
        for _ in 0..1000 {
            s = ou_step(s, &p, dt, &mut rng).unwrap();
        }
        let expected = 0.4 + 0.2 * (-1.0f64).exp();
        assert!((s.eta - expected).abs() < 1e-12);
        assert!((s.eta - 0.4736).abs() < 1e-4);
    }

    #[test]
    fn power_endpoints_and_interpolation() {
        let p = quiet(0.4);
        assert_eq!(workload_power(0.0, &p).unwrap(), 2.0);
        assert_eq!(workload_power(1.0, &p).unwrap(), 10.0);
        assert_eq!(workload_power(0.25, &p).unwrap(), 4.0);
        assert!(workload_power(1.2, &p).is_err());
        assert!(workload_power(-0.1, &p).is_err());
    }

    #[test]
    fn step_errors() {
        let mut p = quiet(0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = WorkloadState { eta: 0.5 };
        assert!(ou_step(s, &p, 0.0, &mut rng).is_err());
        assert!(ou_step(s, &p, -1.0, &mut rng).is_err());
        p.lambda_burst = 1.0;
        assert!(ou_step(s, &p, 0.6, &mut rng).is_err());
        assert!(ou_step(s, &p, 0.4, &mut rng).is_ok());
    }

    #[test]
    fn poisson_likelihood_values() {
        assert!((poisson_log_likelihood(0, 1.0f64, 1.0).unwrap() + 1.0).abs() < 1e-15);
        let v = poisson_log_likelihood(2, 1.0f64, 2.0).unwrap();
        assert!((v - (-2.0 + 2.0f64.ln())).abs() < 1e-12);
        assert!((v + 1.3069).abs() < 1e-4);
        assert!(poisson_log_likelihood(1, 1.0, 0.0).is_err());
    }

    #[test]
    fn single_sequence_admits_many_rates() {
        let a = poisson_log_likelihood(3, 10.0f64, 0.3).unwrap();
        let b = poisson_log_likelihood(3, 10.0f64, 0.5).unwrap();
        assert!(a.is_finite() && b.is_finite());
        assert_ne!(a, b);
    }

    #[test]
    fn simulation_is_deterministic_and_sized() {
        let mut p = quiet(0.3);
        p.sigma_xi = 0.5;
        p.lambda_burst = 0.05;
        p.ln_a_mu = 0.5;
        p.ln_a_sigma = 0.4;
        let a = simulate_workload(&p, 100.0, 0.5, 9).unwrap();
        let b = simulate_workload(&p, 100.0, 0.5, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        let c = simulate_workload(&p, 0.3, 0.1, 9).unwrap();
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn quiet_simulation_is_constant() {
        let p = quiet(0.3);
        let t = simulate_workload(&p, 50.0, 1.0, 4).unwrap();
        let expected = workload_power(0.3, &p).unwrap();
        assert!(t.require("p_work").unwrap().iter().all(|&v| v == expected));
    }

    #[test]
    fn single_precision_step() {
        let p = WorkloadParams::<f32> {
            p_base: 2.0,
            p_full: 10.0,
            tau_eta: 10.0,
            mu_eta: 0.4,
            sigma_xi: 0.0,
            lambda_burst: 0.0,
            ln_a_mu: 0.0,
            ln_a_sigma: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = ou_step(WorkloadState { eta: 0.6f32 }, &p, 10.0 / 2.0, &mut rng).unwrap();
        assert!((s.eta - (0.4 + 0.2 * (-0.5f32).exp())).abs() < 1e-6);
    }
}
