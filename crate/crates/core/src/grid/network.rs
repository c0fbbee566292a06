//! Bus admittance matrix and Newton–Raphson power flow.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::case::{BusType, GridCase};
use crate::error::{Error, Result};

pub const PF_TOLERANCE: f64 = 1e-8;
pub const PF_MAX_ITERATIONS: usize = 50;

/// Bus admittance matrix in bus order. Branches use the π model with the
/// off-nominal tap on the `from` side.
pub fn build_ybus(case: &GridCase) -> Result<DMatrix<Complex64>> {
    let n = case.buses.len();
    let index = case.index_map();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for br in &case.branches {
        let z = Complex64::new(br.r, br.x);
        if z.norm() == 0.0 {
            return Err(Error::invalid(format!(
                "branch {}-{} has zero impedance",
                br.from, br.to
            )));
        }
        let ys = z.inv();
        let half_b = Complex64::new(0.0, br.b / 2.0);
        let (f, t) = (index[&br.from], index[&br.to]);
        let tap = br.tap;
        y[(f, f)] += (ys + half_b) / (tap * tap);
        y[(t, t)] += ys + half_b;
        y[(f, t)] -= ys / tap;
        y[(t, f)] -= ys / tap;
    }
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    /// Complex bus voltages in bus order.
    pub v: Vec<Complex64>,
    /// Net complex power injected at each bus, pu.
    pub s_injection: Vec<Complex64>,
    pub iterations: usize,
    pub mismatch: f64,
}

impl PowerFlowSolution {
    /// Complex generation at bus position `i` (injection plus local load).
    pub fn generation(&self, case: &GridCase, i: usize) -> Complex64 {
        let b = &case.buses[i];
        self.s_injection[i] + Complex64::new(b.p_load, b.q_load)
    }
}

fn injections(y: &DMatrix<Complex64>, v: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
    let n = v.len();
    let mut current = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n {
        for j in 0..n {
            current[i] += y[(i, j)] * v[j];
        }
    }
    let s = (0..n).map(|i| v[i] * current[i].conj()).collect();
    (current, s)
}

/// Newton–Raphson power flow in polar coordinates from a flat start.
pub fn power_flow(case: &GridCase) -> Result<PowerFlowSolution> {
    case.validate()?;
    let y = build_ybus(case)?;
    let n = case.buses.len();
    let index = case.index_map();

    let mut p_gen = vec![0.0; n];
    let mut vm = vec![1.0; n];
    for (i, b) in case.buses.iter().enumerate() {
        if b.kind != BusType::Pq {
            vm[i] = b.v_set;
        }
    }
    for g in &case.generators {
        let i = index[&g.bus];
        p_gen[i] += g.p_set;
        vm[i] = g.v_set;
    }
    let spec: Vec<Complex64> = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| Complex64::new(p_gen[i] - b.p_load, -b.q_load))
        .collect();
    let pvpq: Vec<usize> = (0..n)
        .filter(|&i| case.buses[i].kind != BusType::Slack)
        .collect();
    let pq: Vec<usize> = (0..n)
        .filter(|&i| case.buses[i].kind == BusType::Pq)
        .collect();
    let mut va = vec![0.0; n];

    let voltages = |vm: &[f64], va: &[f64]| -> Vec<Complex64> {
        vm.iter()
            .zip(va)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect()
    };
    let mut iterations = 0;
    loop {
        let v = voltages(&vm, &va);
        let (current, s) = injections(&y, &v);
        let mut f = DVector::<f64>::zeros(pvpq.len() + pq.len());
        for (k, &i) in pvpq.iter().enumerate() {
            f[k] = s[i].re - spec[i].re;
        }
        for (k, &i) in pq.iter().enumerate() {
            f[pvpq.len() + k] = s[i].im - spec[i].im;
        }
        let mismatch = f.amax();
        if !mismatch.is_finite() {
            return Err(Error::PowerFlowDiverged {
                iterations,
                mismatch,
            });
        }
        if mismatch < PF_TOLERANCE {
            return Ok(PowerFlowSolution {
                v,
                s_injection: s,
                iterations,
                mismatch,
            });
        }
        if iterations == PF_MAX_ITERATIONS {
            return Err(Error::PowerFlowDiverged {
                iterations,
                mismatch,
            });
        }
        iterations += 1;

        // dS/dθ and dS/d|V| (dense)
        let vn: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();
        let j = Complex64::new(0.0, 1.0);
        let ds_dva = |r: usize, c: usize| -> Complex64 {
            let diag = if r == c {
                current[r]
            } else {
                Complex64::new(0.0, 0.0)
            };
            j * v[r] * (diag - y[(r, c)] * v[c]).conj()
        };
        let ds_dvm = |r: usize, c: usize| -> Complex64 {
            let mut val = v[r] * (y[(r, c)] * vn[c]).conj();
            if r == c {
                val += current[r].conj() * vn[r];
            }
            val
        };
        let m = f.len();
        let np = pvpq.len();
        let mut jac = DMatrix::<f64>::zeros(m, m);
        for (a, &r) in pvpq.iter().enumerate() {
            for (b, &c) in pvpq.iter().enumerate() {
                jac[(a, b)] = ds_dva(r, c).re;
            }
            for (b, &c) in pq.iter().enumerate() {
                jac[(a, np + b)] = ds_dvm(r, c).re;
            }
        }
        for (a, &r) in pq.iter().enumerate() {
            for (b, &c) in pvpq.iter().enumerate() {
                jac[(np + a, b)] = ds_dva(r, c).im;
            }
            for (b, &c) in pq.iter().enumerate() {
                jac[(np + a, np + b)] = ds_dvm(r, c).im;
            }
        }
        let dx = jac.lu().solve(&(-f)).ok_or(Error::PowerFlowDiverged {
            iterations,
            mismatch,
        })?;
        for (k, &i) in pvpq.iter().enumerate() {
            va[i] += dx[k];
        }
        for (k, &i) in pq.iter().enumerate() {
            vm[i] += dx[np + k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::case::{fixture, Branch, Bus, Generator};

    fn two_bus(r: f64, x: f64, load: f64) -> GridCase {
        GridCase {
            s_base: 100.0,
            f_base: 60.0,
            buses: vec![
                Bus {
                    id: 1,
                    kind: BusType::Slack,
                    v_set: 1.0,
                    p_load: 0.0,
                    q_load: 0.0,
                },
                Bus {
                    id: 2,
                    kind: BusType::Pq,
                    v_set: 1.0,
                    p_load: load,
                    q_load: 0.0,
                },
            ],
            branches: vec![Branch {
                from: 1,
                to: 2,
                r,
                x,
                b: 0.0,
                tap: 1.0,
            }],
            generators: vec![Generator {
                bus: 1,
                h: 5.0,
                d: 1.0,
                xd_p: 0.2,
                p_set: 0.0,
                v_set: 1.0,
            }],
            lels: vec![],
        }
    }

    #[test]
    fn single_branch_admittance() {
        let y = build_ybus(&two_bus(0.0, 0.1, 0.0)).unwrap();
        assert!((y[(0, 1)] - Complex64::new(0.0, 10.0)).norm() < 1e-12);
        assert!((y[(0, 0)] - Complex64::new(0.0, -10.0)).norm() < 1e-12);
        let row: Complex64 = (0..2).map(|j| y[(1, j)]).sum();
        assert!(row.norm() < 1e-12);
    }

    #[test]
    fn unloaded_case_stays_flat() {
        let sol = power_flow(&two_bus(0.01, 0.1, 0.0)).unwrap();
        assert!(sol
            .v
            .iter()
            .all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-12));
    }

    #[test]
    fn overload_diverges() {
        let mut case = fixture("ieee39").unwrap();
        for b in &mut case.buses {
            b.p_load *= 10.0;
            b.q_load *= 10.0;
        }
        assert!(matches!(
            power_flow(&case),
            Err(Error::PowerFlowDiverged { .. })
        ));
    }

    #[test]
    fn ieee39_converges_quickly() {
        let case = fixture("ieee39").unwrap();
        let sol = power_flow(&case).unwrap();
        assert!(sol.iterations < 10);
        let slack = case.slack_index();
        let p = sol.generation(&case, slack).re;
        assert!((0.0..=12.0).contains(&p));
        assert!((p - 6.778711257608109).abs() < 1e-6);
    }
}
