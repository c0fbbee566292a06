//! Nelder–Mead simplex search with restarts on an unconstrained space.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub max_evals: usize,
    /// Edge length of a fresh simplex.
    pub initial_step: f64,
    /// A simplex whose vertices all lie within this distance (max-norm) of the
    /// best vertex, or whose values span less than `f_tol`, has collapsed.
    pub x_tol: f64,
    pub f_tol: f64,
    pub max_restarts: usize,
    /// Stop as soon as the best value drops to this level.
    pub f_target: f64,
    pub seed: u64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_evals: 300,
            initial_step: 0.5,
            x_tol: 1e-4,
            f_tol: 1e-12,
            max_restarts: 3,
            f_target: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOutcome {
    pub best: Vec<f64>,
    pub best_value: f64,
    /// Best value after the initial simplex and after each iteration.
    pub history: Vec<f64>,
    pub evaluations: usize,
    pub restarts: usize,
    /// The evaluation budget ran out before convergence.
    pub exhausted: bool,
}

struct Counter<'a, F> {
    f: &'a F,
    evals: usize,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Counter<'_, F> {
    fn one(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        sanitize((self.f)(x))
    }

    fn many(&mut self, xs: &[Vec<f64>]) -> Vec<f64> {
        self.evals += xs.len();
        let f = self.f;
        xs.par_iter().map(|x| sanitize(f(x))).collect()
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn fresh_simplex(center: &[f64], step: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut out = vec![center.to_vec()];
    for i in 0..center.len() {
        let mut v = center.to_vec();
        v[i] += if rng.random::<bool>() { step } else { -step };
        out.push(v);
    }
    out
}

/// Minimizes `f` from `x0`. Non-finite values are treated as `+∞`, so the
/// objective can signal infeasible points. Vertex sets (initial simplex and
/// shrinks) are evaluated in parallel.
pub fn minimize<F: Fn(&[f64]) -> f64 + Sync>(
    f: &F,
    x0: &[f64],
    opts: &SimplexOptions,
) -> SimplexOutcome {
    let n = x0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut counter = Counter { f, evals: 0 };
    let budget = opts.max_evals.max(1);

    let f0 = counter.one(x0);
    let mut best = (x0.to_vec(), f0);
    let mut history = vec![f0];
    let mut restarts = 0;
    if n == 0 || f0 <= opts.f_target {
        return SimplexOutcome {
            best: best.0,
            best_value: best.1,
            history,
            evaluations: 1,
            restarts,
            exhausted: false,
        };
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut exhausted = false;
    'restart: loop {
        if counter.evals + n > budget {
            exhausted = true;
            break;
        }
        let mut pts = fresh_simplex(&best.0, opts.initial_step, &mut rng);
        let mut vals = vec![best.1];
        vals.extend(counter.many(&pts[1..]));

        loop {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
            pts = order.iter().map(|&i| pts[i].clone()).collect();
            vals = order.iter().map(|&i| vals[i]).collect();
            if vals[0] < best.1 {
                best = (pts[0].clone(), vals[0]);
            }
            history.push(best.1);
            if best.1 <= opts.f_target {
                break 'restart;
            }

            let spread = pts[1..]
                .iter()
                .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            let collapsed = spread < opts.x_tol
                || (vals[n] - vals[0]).abs() <= opts.f_tol * (1.0 + vals[0].abs());
            if collapsed {
                if restarts < opts.max_restarts {
                    restarts += 1;
                    continue 'restart;
                }
                break 'restart;
            }
            if counter.evals >= budget {
                exhausted = true;
                break 'restart;
            }

            let centroid: Vec<f64> = (0..n)
                .map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&pts[n])
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };
            let xr = along(alpha);
            let fr = counter.one(&xr);
            if fr < vals[0] {
                let xe = along(gamma);
                let fe = if counter.evals < budget {
                    counter.one(&xe)
                } else {
                    f64::INFINITY
                };
                if fe < fr {
                    pts[n] = xe;
                    vals[n] = fe;
                } else {
                    pts[n] = xr;
                    vals[n] = fr;
                }
                continue;
            }
            if fr < vals[n - 1] {
                pts[n] = xr;
                vals[n] = fr;
                continue;
            }
            if counter.evals >= budget {
                exhausted = true;
                break 'restart;
            }
            let (xc, fc) = if fr < vals[n] {
                let xc = along(alpha * rho);
                let fc = counter.one(&xc);
                (xc, fc)
            } else {
                let xc = along(-rho);
                let fc = counter.one(&xc);
                (xc, fc)
            };
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
                continue;
            }
            if counter.evals + n > budget {
                exhausted = true;
                break 'restart;
            }
            let shrunk: Vec<Vec<f64>> = pts[1..]
                .iter()
                .map(|p| {
                    p.iter()
                        .zip(&pts[0])
                        .map(|(x, b)| b + sigma * (x - b))
                        .collect()
                })
                .collect();
            let fs = counter.many(&shrunk);
            for (i, (p, v)) in shrunk.into_iter().zip(fs).enumerate() {
                pts[i + 1] = p;
                vals[i + 1] = v;
            }
        }
    }
    SimplexOutcome {
        best: best.0,
        best_value: best.1,
        history,
        evaluations: counter.evals,
        restarts,
        exhausted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_rosenbrock_minimum() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let out = minimize(
            &f,
            &[-1.2, 1.0],
            &SimplexOptions {
                max_evals: 2000,
                x_tol: 1e-8,
                ..Default::default()
            },
        );
        assert!(out.best_value < 1e-8, "{out:?}");
        assert!((out.best[0] - 1.0).abs() < 1e-3);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn budget_is_respected_and_flagged() {
        let f = |x: &[f64]| x.iter().map(|v| (v - 3.0).powi(2)).sum::<f64>();
        let out = minimize(
            &f,
            &[0.0; 4],
            &SimplexOptions {
                max_evals: 20,
                ..Default::default()
            },
        );
        assert!(out.exhausted);
        assert!(out.evaluations <= 20);
        assert!(out.best_value < f(&[0.0; 4]));
    }

    #[test]
    fn infeasible_region_is_avoided() {
        let f = |x: &[f64]| {
            if x[0] < 0.5 {
                f64::NAN
            } else {
                (x[0] - 1.0).powi(2)
            }
        };
        let out = minimize(&f, &[2.0], &SimplexOptions::default());
        assert!((out.best[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn starting_at_target_returns_immediately() {
        let f = |x: &[f64]| x[0] * x[0];
        let out = minimize(&f, &[0.0], &SimplexOptions::default());
        assert_eq!(out.evaluations, 1);
        assert_eq!(out.best, vec![0.0]);
    }
}
