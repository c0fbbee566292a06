//! Shape-similarity metrics between traces and post-fault system metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{EventKind, SimResult};
use crate::Real;

/// Default lag window of [`max_cross_correlation`] as a fraction of length.
pub const DEFAULT_MAX_LAG_FRAC: f64 = 0.25;

/// Zero-mean, unit-variance copy of `x`; a constant series maps to zeros.
pub fn z_normalize<T: Real>(x: &[T]) -> Vec<T> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = T::from_usize(x.len()).unwrap();
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let std = var.sqrt();
    if std > T::zero() {
        x.iter().map(|&v| (v - mean) / std).collect()
    } else {
        vec![T::zero(); x.len()]
    }
}

/// Unbanded DTW with absolute-difference local cost on the series as given.
pub fn dtw_raw<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("DTW needs non-empty series"));
    }
    let m = b.len();
    let inf = T::infinity();
    let mut prev = vec![inf; m + 1];
    let mut cur = vec![inf; m + 1];
    prev[0] = T::zero();
    for &ai in a {
        cur[0] = inf;
        for j in 1..=m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = (ai - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// DTW distance between the z-normalized series.
pub fn dtw_distance<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("DTW needs non-empty series"));
    }
    dtw_raw(&z_normalize(a), &z_normalize(b))
}

fn pearson<T: Real>(a: &[T], b: &[T]) -> Option<T> {
    let n = T::from_usize(a.len()).unwrap();
    let ma = a.iter().copied().sum::<T>() / n;
    let mb = b.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa > T::zero() && sbb > T::zero() {
        Some((sab / (saa * sbb).sqrt()).max(-T::one()).min(T::one()))
    } else {
        None
    }
}

/// Maximum Pearson correlation between the overlapping segments of `a` and
/// `b` over lags `|ℓ| ≤ max_lag_frac·min(len)`; positive `ℓ` pairs `a[i]`
/// with `b[i + ℓ]`.
pub fn max_cross_correlation<T: Real>(a: &[T], b: &[T], max_lag_frac: f64) -> Result<T> {
    if a.len() < 4 || b.len() < 4 {
        return Err(Error::invalid(
            "cross-correlation needs series of length >= 4",
        ));
    }
    if !(max_lag_frac > 0.0 && max_lag_frac <= 0.5) {
        return Err(Error::invalid(format!(
            "max_lag_frac must lie in (0, 0.5], got {max_lag_frac}"
        )));
    }
    let n = a.len().min(b.len());
    let max_lag = (max_lag_frac * n as f64).floor() as isize;
    let mut best: Option<T> = None;
    for lag in -max_lag..=max_lag {
        let (a0, b0) = if lag >= 0 {
            (0, lag as usize)
        } else {
            ((-lag) as usize, 0)
        };
        let len = (a.len() - a0).min(b.len().saturating_sub(b0));
        if len < 2 {
            continue;
        }
        if let Some(r) = pearson(&a[a0..a0 + len], &b[b0..b0 + len]) {
            best = Some(best.map_or(r, |v: T| v.max(r)));
        }
    }
    best.ok_or_else(|| Error::UndefinedMetric("cross-correlation of a constant series".into()))
}

pub fn cosine_similarity<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|&v| v * v).sum::<T>().sqrt();
    let nb = b.iter().map(|&v| v * v).sum::<T>().sqrt();
    if !(na > T::zero() && nb > T::zero()) {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    Ok((dot / (na * nb)).max(-T::one()).min(T::one()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dtw: f64,
    pub max_xcorr: f64,
    pub cosine: f64,
}

/// All three shape metrics. Series of different lengths are compared over
/// their common prefix for the cosine similarity.
pub fn metric_report(a: &[f64], b: &[f64]) -> Result<MetricReport> {
    let n = a.len().min(b.len());
    Ok(MetricReport {
        dtw: dtw_distance(a, b)?,
        max_xcorr: max_cross_correlation(a, b, DEFAULT_MAX_LAG_FRAC)?,
        cosine: cosine_similarity(&a[..n], &b[..n])?,
    })
}

/// Index of the first sample strictly after the first fault clearing, or 0
/// when the run has no fault.
fn post_clear_start(result: &SimResult) -> usize {
    match result
        .events
        .iter()
        .find(|e| e.kind == EventKind::FaultClear)
    {
        Some(e) => result
            .time
            .iter()
            .position(|&t| t > e.time + 1e-9)
            .unwrap_or(result.time.len()),
        None => 0,
    }
}

/// Minimum `|V|` at `bus` after the fault is cleared (whole horizon when the
/// run has no fault).
pub fn voltage_nadir(result: &SimResult, bus: usize) -> Result<f64> {
    let series = result.bus_voltage(bus)?;
    let start = post_clear_start(result);
    series[start..]
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or_else(|| Error::invalid("no samples after fault clearing"))
}

/// Minimum `|V|` over all buses after the fault is cleared.
pub fn system_voltage_nadir(result: &SimResult) -> Result<f64> {
    let start = post_clear_start(result);
    result
        .v_mag
        .iter()
        .flat_map(|s| s[start.min(s.len())..].iter().copied())
        .reduce(f64::min)
        .ok_or_else(|| Error::invalid("no samples after fault clearing"))
}

/// Largest `|ω − 1|` over all generators after the fault is cleared (whole
/// horizon when the run has no fault).
pub fn frequency_overshoot(result: &SimResult) -> f64 {
    let start = post_clear_start(result);
    result
        .omega
        .iter()
        .flat_map(|w| w[start.min(w.len())..].iter())
        .map(|&w| (w - 1.0).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reconnection {
    /// Seconds from fault clearing to the final restoration of κ.
    After(f64),
    Never,
}

impl std::fmt::Display for Reconnection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Reconnection::After(t) => write!(f, "{t}"),
            Reconnection::Never => f.write_str("never"),
        }
    }
}

/// Time between fault clearing and the LEL's successful reconnection: the
/// start of the final stretch during which κ sits at its cap through the end
/// of the horizon. `After(0)` if the LEL never shed; `Never` if κ is below the
/// cap at the end of the run.
pub fn reconnection_delay(result: &SimResult, lel: usize) -> Result<Reconnection> {
    let series = result
        .lels
        .get(lel)
        .ok_or_else(|| Error::invalid(format!("no LEL with index {lel}")))?;
    let tripped = result
        .events
        .iter()
        .any(|e| e.lel_id == Some(lel) && e.kind == EventKind::Shed);
    if !tripped {
        return Ok(Reconnection::After(0.0));
    }
    let cap = series.kappa_cap;
    let at_cap = |k: f64| k >= cap - 1e-9;
    let kappa = &series.kappa;
    if !kappa.last().is_some_and(|&k| at_cap(k)) {
        return Ok(Reconnection::Never);
    }
    let restored = kappa.iter().rposition(|&k| !at_cap(k)).map_or(0, |i| i + 1);
    let t_clear = result
        .events
        .iter()
        .find(|e| e.kind == EventKind::FaultClear)
        .map_or(0.0, |e| e.time);
    Ok(Reconnection::After(
        (result.time[restored] - t_clear).max(0.0),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dtw_hand_examples() {
        assert_eq!(dtw_raw(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(
            dtw_raw(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0, 3.0]).unwrap(),
            0.0
        );
        assert_eq!(dtw_raw(&[0.0, 0.0], &[1.0]).unwrap(), 2.0);
        let x = [3.0, 1.0, 4.0, 1.0, 5.0];
        assert_eq!(dtw_distance(&x, &x).unwrap(), 0.0);
        assert!(dtw_distance::<f64>(&[], &x).is_err());
    }

    #[test]
    fn dtw_is_symmetric() {
        let a = [0.1, 0.5, -0.3, 2.0, 1.1];
        let b = [1.0, 0.2, 0.0, -1.0];
        assert_eq!(dtw_distance(&a, &b).unwrap(), dtw_distance(&b, &a).unwrap());
    }

    #[test]
    fn xcorr_examples() {
        let x: Vec<f64> = (0..40).map(|i| ((i * i) as f64 * 0.13).sin()).collect();
        assert!((max_cross_correlation(&x, &x, 0.25).unwrap() - 1.0).abs() < 1e-12);
        let mut delayed = vec![0.7, -0.2, 0.4];
        delayed.extend_from_slice(&x[..37]);
        assert!((max_cross_correlation(&x, &delayed, 0.25).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            max_cross_correlation(&[1.0; 10], &[1.0; 10], 0.25),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn cosine_examples() {
        let x = [1.0f64, -2.0, 0.5];
        assert!((cosine_similarity(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((cosine_similarity(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[0.0, 0.0], &[0.0, 1.0]).is_err());
    }
}
