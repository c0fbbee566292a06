//! Multi-start robustness, pattern-vs-MSE ablation and the TCL window/dimension
//! sweep.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    simulate_subsystem, Bounds, CalibrationConfig, CalibrationResult, ObjectiveMode, Problem,
    Subsystem,
};
use crate::error::{Error, Result};
use crate::metrics::dtw_distance;
use crate::tcl::{PatternVector, TclConfig};
use crate::trace::Trace;

/// `count` parameter vectors drawn uniformly from the box; the ZIP
/// coefficients are drawn uniformly from the simplex instead.
pub fn random_inits(
    subsystem: Subsystem,
    bounds: &Bounds,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    bounds.validate(subsystem)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let group = subsystem.simplex_group();
    Ok((0..count)
        .map(|_| {
            let mut theta: Vec<f64> = bounds
                .lo
                .iter()
                .zip(&bounds.hi)
                .map(|(&a, &b)| a + (b - a) * rng.random::<f64>())
                .collect();
            if let Some(g) = group {
                let e: Vec<f64> = g
                    .iter()
                    .map(|_| -(1.0 - rng.random::<f64>()).ln())
                    .collect();
                let s: f64 = e.iter().sum();
                for (k, &i) in g.iter().enumerate() {
                    theta[i] = e[k] / s;
                }
            }
            theta
        })
        .collect())
}

/// DTW between `heldout` and the model under `theta` simulated with `seed`.
pub fn heldout_dtw(
    theta: &[f64],
    cfg: &CalibrationConfig,
    heldout: &[f64],
    seed: u64,
) -> Result<f64> {
    dtw_distance(&simulate_subsystem(theta, cfg, seed)?, heldout)
}

/// Mean over coordinates of the population standard deviation across `set`.
pub fn pattern_spread(set: &[PatternVector]) -> Result<f64> {
    let vecs: Vec<Vec<f64>> = set.iter().map(|p| p.to_vec()).collect();
    let first = vecs
        .first()
        .ok_or_else(|| Error::invalid("spread of an empty set"))?;
    if vecs.iter().any(|v| v.len() != first.len()) {
        return Err(Error::invalid("pattern vectors have different dimensions"));
    }
    let n = vecs.len() as f64;
    let total: f64 = (0..first.len())
        .map(|j| {
            let mean = vecs.iter().map(|v| v[j]).sum::<f64>() / n;
            (vecs.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .sum();
    Ok(total / first.len() as f64)
}

#[derive(Debug, Clone)]
pub struct RobustnessReport {
    pub inits: Vec<Vec<f64>>,
    pub results: Vec<CalibrationResult>,
    /// Spread of the pattern vectors simulated at the initial guesses.
    pub uncalibrated_spread: f64,
    /// Spread of the pattern vectors simulated at the calibrated parameters.
    pub calibrated_spread: f64,
}

/// Calibrates from every initial guess against one data set and frozen
/// encoder and compares the spread of the resulting pattern vectors.
pub fn robustness(problem: &Problem, inits: &[Vec<f64>]) -> Result<RobustnessReport> {
    if inits.len() < 2 {
        return Err(Error::invalid(
            "robustness needs at least two initial guesses",
        ));
    }
    let results: Vec<CalibrationResult> = inits
        .par_iter()
        .map(|init| problem.calibrate(init))
        .collect::<Result<_>>()?;
    let before: Vec<PatternVector> = inits
        .iter()
        .map(|t| problem.model_pattern(t))
        .collect::<Result<_>>()?;
    let after: Vec<PatternVector> = results
        .iter()
        .map(|r| problem.model_pattern(&r.theta_star))
        .collect::<Result<_>>()?;
    Ok(RobustnessReport {
        inits: inits.to_vec(),
        results,
        uncalibrated_spread: pattern_spread(&before)?,
        calibrated_spread: pattern_spread(&after)?,
    })
}

/// Synthetic data trace of `theta` simulated with `seed`, carrying the
/// configured voltage input as channel `v` when there is one.
pub fn synthetic_trace(theta: &[f64], cfg: &CalibrationConfig, seed: u64) -> Result<Trace> {
    let mut trace = Trace::single(
        cfg.dt,
        cfg.subsystem.channel(),
        simulate_subsystem(theta, cfg, seed)?,
    )?;
    if let Some(v) = &cfg.voltage {
        trace.push_channel("v", v.clone())?;
    }
    trace.metadata.insert("seed".into(), seed.to_string());
    Ok(trace)
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub pattern: CalibrationResult,
    pub mse: CalibrationResult,
    pub initial_dtw: f64,
    pub pattern_dtw: f64,
    pub mse_dtw: f64,
}

/// One ablation trial: data from `truth` with `data_seed`, both objective
/// modes calibrated from `init` (models simulated with `cfg.sim_seed`), then
/// scored by DTW against a held-out realization of `truth` (seed
/// `heldout_seed`) with the models re-simulated under `heldout_seed + 1`.
pub fn ablation_trial(
    truth: &[f64],
    init: &[f64],
    cfg: &CalibrationConfig,
    data_seed: u64,
    heldout_seed: u64,
) -> Result<AblationOutcome> {
    let data = synthetic_trace(truth, cfg, data_seed)?;
    let pattern_problem = Problem::new(
        &data,
        &CalibrationConfig {
            mode: ObjectiveMode::Pattern,
            ..cfg.clone()
        },
    )?;
    let mut mse_problem = pattern_problem.clone();
    mse_problem.cfg.mode = ObjectiveMode::Mse;
    let pattern = pattern_problem.calibrate(init)?;
    let mse = mse_problem.calibrate(init)?;

    let heldout = simulate_subsystem(truth, cfg, heldout_seed)?;
    let model_seed = heldout_seed.wrapping_add(1);
    Ok(AblationOutcome {
        initial_dtw: heldout_dtw(init, cfg, &heldout, model_seed)?,
        pattern_dtw: heldout_dtw(&pattern.theta_star, cfg, &heldout, model_seed)?,
        mse_dtw: heldout_dtw(&mse.theta_star, cfg, &heldout, model_seed)?,
        pattern,
        mse,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TclSweepRow {
    pub window_len: usize,
    pub dim: usize,
    pub initial_pattern_distance: f64,
    pub final_pattern_distance: f64,
    /// DTW of the calibrated model against the held-out series.
    pub heldout_dtw: f64,
}

/// Calibrates once per `(L, d)` pair, each with its own encoder trained on
/// the data, and scores the result on `heldout` with the model simulated
/// under `heldout_seed`. Rows are ordered by `L`, then `d`.
pub fn tcl_sweep(
    data: &Trace,
    theta_init: &[f64],
    cfg: &CalibrationConfig,
    window_lens: &[usize],
    dims: &[usize],
    heldout: &[f64],
    heldout_seed: u64,
) -> Result<Vec<TclSweepRow>> {
    let grid: Vec<(usize, usize)> = window_lens
        .iter()
        .flat_map(|&l| dims.iter().map(move |&d| (l, d)))
        .collect();
    if grid.is_empty() {
        return Err(Error::invalid("the L/d grid is empty"));
    }
    grid.par_iter()
        .map(|&(window_len, dim)| {
            let cfg = CalibrationConfig {
                tcl: TclConfig {
                    window_len,
                    dim,
                    stride: None,
                    ..cfg.tcl
                },
                ..cfg.clone()
            };
            let result = Problem::new(data, &cfg)?.calibrate(theta_init)?;
            Ok(TclSweepRow {
                window_len,
                dim,
                initial_pattern_distance: result.initial_pattern_distance,
                final_pattern_distance: result.final_pattern_distance,
                heldout_dtw: heldout_dtw(&result.theta_star, &cfg, heldout, heldout_seed)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lel::{archetype_defaults, Archetype};

    fn pv(m: &[f64], v: &[f64]) -> PatternVector {
        PatternVector {
            mean_block: m.to_vec(),
            var_block: v.to_vec(),
        }
    }

    #[test]
    fn spread_of_identical_patterns_is_zero() {
        let a = pv(&[1.0, 2.0], &[0.5, 0.1]);
        assert!(pattern_spread(&[a.clone(), a.clone(), a]).unwrap() < 1e-15);
        let b =
            pattern_spread(&[pv(&[0.0, 0.0], &[0.0, 0.0]), pv(&[2.0, 0.0], &[0.0, 0.0])]).unwrap();
        assert!((b - 0.25).abs() < 1e-15);
    }

    #[test]
    fn random_inits_stay_in_the_box() {
        let base = archetype_defaults(Archetype::Datacenter);
        for sub in [Subsystem::Workload, Subsystem::Cooling, Subsystem::Aux] {
            let bounds = Bounds::around(sub, &sub.theta(&base), 0.5).unwrap();
            let inits = random_inits(sub, &bounds, 50, 3).unwrap();
            assert_eq!(inits.len(), 50);
            assert!(inits.iter().all(|t| bounds.contains(t)));
            assert!(inits
                .iter()
                .all(|t| sub.apply(&base, t).unwrap().validate().is_ok()));
            assert_eq!(inits, random_inits(sub, &bounds, 50, 3).unwrap());
        }
    }
}
