//! Cooling load (third-order induction motor with stall trip) and ZIP
//! auxiliary load.
//!
//! Motor quantities are per unit on the motor's own MVA base and share the
//! network voltage base. Stator voltage and current are complex phasors in the
//! synchronously rotating network frame, `v = v_ds + j·v_qs`, with currents
//! flowing into the machine. The transient EMF obeys
//!
//! ```text
//! dE'/dt = −j·ω_s·s·E' − (E' − j·(X − X')·I) / T₀'
//! V      = E' + (R_s + j·X')·I
//! 2H·ds/dt = T_mech − Re(E'·conj(I))
//! ```

use std::f64::consts::PI;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::reached;
use crate::Real;

fn default_f_base<T: Real>() -> T {
    T::of(60.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct CoolingParams<T = f64> {
    pub r_s: T,
    pub x_s: T,
    pub x_m: T,
    pub r_r: T,
    pub x_r: T,
    /// Inertia constant, s.
    pub h_m: T,
    /// Stall voltage threshold, pu.
    pub v_stall: T,
    /// Time below `v_stall` before the cooling block trips, s.
    pub tau_stall: T,
    /// Time the block stays disconnected after a stall trip, s.
    pub t_cool: T,
    /// Motor rating, MVA.
    pub mva_base: T,
    /// Mechanical loading as a fraction of the motor rating.
    pub load_factor: T,
    /// Electrical frequency, Hz.
    #[serde(default = "default_f_base")]
    pub f_base: T,
}

impl<T: Real> CoolingParams<T> {
    pub fn validate(&self) -> Result<()> {
        let imp = [self.r_s, self.x_s, self.x_m, self.r_r, self.x_r];
        if imp.iter().any(|v| !(v.is_finite() && *v > T::zero())) {
            return Err(Error::validation("motor impedances must be positive"));
        }
        if !(self.h_m > T::zero()) {
            return Err(Error::validation("h_m must be positive"));
        }
        if !(self.v_stall > T::zero() && self.v_stall < T::one()) {
            return Err(Error::validation("v_stall must lie in (0, 1)"));
        }
        if !(self.tau_stall >= T::zero()) || !(self.t_cool >= T::zero()) {
            return Err(Error::validation(
                "tau_stall and t_cool must be non-negative",
            ));
        }
        if !(self.mva_base > T::zero()) {
            return Err(Error::validation("mva_base must be positive"));
        }
        if !(self.load_factor > T::zero() && self.load_factor <= T::one()) {
            return Err(Error::validation("load_factor must lie in (0, 1]"));
        }
        if !(self.f_base > T::zero()) {
            return Err(Error::validation("f_base must be positive"));
        }
        Ok(())
    }

    /// Synchronous speed, rad/s.
    pub fn omega_s(&self) -> T {
        T::of(2.0 * PI) * self.f_base
    }

    /// Open-circuit reactance `X_s + X_m`.
    pub fn x0(&self) -> T {
        self.x_s + self.x_m
    }

    /// Transient reactance `X_s + X_m·X_r/(X_m + X_r)`.
    pub fn x_transient(&self) -> T {
        self.x_s + self.x_m * self.x_r / (self.x_m + self.x_r)
    }

    /// Open-circuit transient time constant, s.
    pub fn t0_transient(&self) -> T {
        (self.x_r + self.x_m) / (self.omega_s() * self.r_r)
    }

    fn delta_x(&self) -> T {
        self.x0() - self.x_transient()
    }

    fn z_transient(&self) -> Complex<T> {
        Complex::new(self.r_s, self.x_transient())
    }

    fn y_transient(&self) -> Complex<T> {
        self.z_transient().inv()
    }

    fn check_rotor(&self) -> Result<()> {
        if self.x_m + self.x_r == T::zero() {
            return Err(Error::invalid("degenerate rotor circuit: X_m + X_r = 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotorMode {
    Running,
    StallTripped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorState<T = f64> {
    pub ed_p: T,
    pub eq_p: T,
    pub slip: T,
    pub stall_timer: T,
    pub mode: MotorMode,
    pub recovery_timer: T,
    /// Mechanical load torque held since initialization, pu.
    pub t_mech: T,
}

impl<T: Real> MotorState<T> {
    pub fn is_running(&self) -> bool {
        self.mode == MotorMode::Running
    }

    pub fn emf(&self) -> Complex<T> {
        Complex::new(self.ed_p, self.eq_p)
    }
}

/// Stator current drawn by a running motor at terminal voltage `v`.
pub fn motor_current<T: Real>(
    state: &MotorState<T>,
    v: Complex<T>,
    params: &CoolingParams<T>,
) -> Complex<T> {
    (v - state.emf()) * params.y_transient()
}

/// Time derivatives `(dE'd/dt, dE'q/dt, ds/dt)` of a running motor.
pub fn motor_derivatives<T: Real>(
    state: &MotorState<T>,
    v_ds: T,
    v_qs: T,
    params: &CoolingParams<T>,
) -> Result<[T; 3]> {
    params.check_rotor()?;
    if !state.is_running() {
        return Err(Error::invalid(
            "motor derivatives requested for a tripped motor",
        ));
    }
    let i = motor_current(state, Complex::new(v_ds, v_qs), params);
    Ok(derivatives_with_current(state, i, params))
}

fn derivatives_with_current<T: Real>(
    state: &MotorState<T>,
    i: Complex<T>,
    params: &CoolingParams<T>,
) -> [T; 3] {
    let ws = params.omega_s();
    let t0 = params.t0_transient();
    let dx = params.delta_x();
    let (ed, eq, s) = (state.ed_p, state.eq_p, state.slip);
    let t_elec = ed * i.re + eq * i.im;
    [
        ws * s * eq - (ed + dx * i.im) / t0,
        -ws * s * ed - (eq - dx * i.re) / t0,
        (state.t_mech - t_elec) / (T::of(2.0) * params.h_m),
    ]
}

/// Partial derivatives of the motor right-hand side.
#[derive(Debug, Clone, Copy)]
pub struct MotorJacobian<T> {
    /// `∂f/∂(E'd, E'q, s)`.
    pub dx: [[T; 3]; 3],
    /// `∂f/∂(V_re, V_im)`.
    pub dv: [[T; 2]; 3],
}

pub fn motor_jacobian<T: Real>(
    state: &MotorState<T>,
    v: Complex<T>,
    params: &CoolingParams<T>,
) -> MotorJacobian<T> {
    let ws = params.omega_s();
    let t0 = params.t0_transient();
    let dxr = params.delta_x();
    let y = params.y_transient();
    let (g, b) = (y.re, y.im);
    let two_h = T::of(2.0) * params.h_m;
    let (ed, eq, s) = (state.ed_p, state.eq_p, state.slip);
    let i = motor_current(state, v, params);
    MotorJacobian {
        dx: [
            [-(T::one() - dxr * b) / t0, ws * s + dxr * g / t0, ws * eq],
            [-ws * s - dxr * g / t0, -(T::one() - dxr * b) / t0, -ws * ed],
            [
                -(i.re - g * ed - b * eq) / two_h,
                -(i.im + b * ed - g * eq) / two_h,
                T::zero(),
            ],
        ],
        dv: [
            [-dxr * b / t0, -dxr * g / t0],
            [dxr * g / t0, -dxr * b / t0],
            [-(ed * g + eq * b) / two_h, -(eq * g - ed * b) / two_h],
        ],
    }
}

/// Terminal power `(p, q)` from dq voltage and current; `q > 0` is absorbed.
pub fn motor_power<T: Real>(v_ds: T, v_qs: T, i_ds: T, i_qs: T) -> (T, T) {
    (v_ds * i_ds + v_qs * i_qs, v_qs * i_ds - v_ds * i_qs)
}

/// Cooling power `(MW, MVAr)` at terminal voltage `v`; zero while tripped.
pub fn cooling_power_mw<T: Real>(
    state: &MotorState<T>,
    v: Complex<T>,
    params: &CoolingParams<T>,
) -> (T, T) {
    if !state.is_running() {
        return (T::zero(), T::zero());
    }
    let i = motor_current(state, v, params);
    let (p, q) = motor_power(v.re, v.im, i.re, i.im);
    (p * params.mva_base, q * params.mva_base)
}

/// Steady-state operating point at slip `s` and terminal voltage `v`.
#[derive(Debug, Clone, Copy)]
struct SteadyPoint<T> {
    emf: Complex<T>,
    t_elec: T,
    p_in: T,
}

fn steady_point<T: Real>(s: T, v: Complex<T>, params: &CoolingParams<T>) -> SteadyPoint<T> {
    let z = params.z_transient();
    let jdx = Complex::new(T::zero(), params.delta_x());
    let a = Complex::new(T::one(), params.omega_s() * s * params.t0_transient());
    let emf = jdx * v / (z * a + jdx);
    let i = (v - emf) / z;
    SteadyPoint {
        emf,
        t_elec: emf.re * i.re + emf.im * i.im,
        p_in: v.re * i.re + v.im * i.im,
    }
}

/// Slip and torque at pull-out (maximum electrical torque over `s ∈ [0, 1]`).
pub fn pull_out<T: Real>(v_mag: T, params: &CoolingParams<T>) -> (T, T) {
    let v = Complex::new(v_mag, T::zero());
    let torque = |s: T| steady_point(s, v, params).t_elec;
    let grid: Vec<T> = std::iter::once(T::zero())
        .chain((0..=240).map(|k| T::of(10f64.powf(-6.0 + 6.0 * k as f64 / 240.0))))
        .collect();
    let mut best = 0;
    for k in 1..grid.len() {
        if torque(grid[k]) > torque(grid[best]) {
            best = k;
        }
    }
    let mut lo = grid[best.saturating_sub(1)];
    let mut hi = grid[(best + 1).min(grid.len() - 1)];
    let inv_phi = T::of((5f64.sqrt() - 1.0) / 2.0);
    for _ in 0..200 {
        if hi - lo <= T::epsilon() * hi {
            break;
        }
        let a = hi - inv_phi * (hi - lo);
        let b = lo + inv_phi * (hi - lo);
        if torque(a) < torque(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    let s = (lo + hi) / T::of(2.0);
    (s, torque(s))
}

/// Bisection for `f(s) = target` on `[0, s_hi]`, `f` increasing.
fn bisect<T: Real>(mut f: impl FnMut(T) -> T, target: T, s_hi: T) -> T {
    let (mut lo, mut hi) = (T::zero(), s_hi);
    for _ in 0..200 {
        let mid = (lo + hi) / T::of(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (flo, fhi) = (f(lo) - target, f(hi) - target);
    if flo.abs() <= fhi.abs() {
        lo
    } else {
        hi
    }
}

fn running_state<T: Real>(s: T, v: Complex<T>, params: &CoolingParams<T>) -> MotorState<T> {
    let sp = steady_point(s, v, params);
    MotorState {
        ed_p: sp.emf.re,
        eq_p: sp.emf.im,
        slip: s,
        stall_timer: T::zero(),
        mode: MotorMode::Running,
        recovery_timer: T::zero(),
        t_mech: sp.t_elec,
    }
}

fn check_voltage<T: Real>(v_mag: T) -> Result<()> {
    if !(v_mag > T::zero()) || !v_mag.is_finite() {
        return Err(Error::invalid(format!(
            "terminal voltage must be positive, got {v_mag}"
        )));
    }
    Ok(())
}

/// Equilibrium drawing active power `p_target` (motor pu) at `v_mag∠0`.
///
/// Targets below the no-load loss give the unloaded (`s = 0`) state.
pub fn motor_init<T: Real>(
    p_target: T,
    v_mag: T,
    params: &CoolingParams<T>,
) -> Result<MotorState<T>> {
    motor_init_at(p_target, Complex::new(v_mag, T::zero()), params)
}

/// [`motor_init`] at an arbitrary terminal phasor.
pub fn motor_init_at<T: Real>(
    p_target: T,
    v: Complex<T>,
    params: &CoolingParams<T>,
) -> Result<MotorState<T>> {
    params.check_rotor()?;
    let v_mag = v.norm();
    check_voltage(v_mag)?;
    let (s_po, _) = pull_out(v_mag, params);
    let vr = Complex::new(v_mag, T::zero());
    let p_max = steady_point(s_po, vr, params).p_in;
    if p_target > p_max {
        return Err(Error::NoEquilibrium(format!(
            "cooling demand {p_target} pu exceeds the pull-out limit {p_max} pu at {v_mag} pu"
        )));
    }
    let p_min = steady_point(T::zero(), vr, params).p_in;
    let s = if p_target <= p_min {
        T::zero()
    } else {
        bisect(|s| steady_point(s, vr, params).p_in, p_target, s_po)
    };
    Ok(running_state(s, v, params))
}

/// Equilibrium carrying mechanical torque `t_mech` at terminal phasor `v`.
pub fn motor_init_for_torque<T: Real>(
    t_mech: T,
    v: Complex<T>,
    params: &CoolingParams<T>,
) -> Result<MotorState<T>> {
    params.check_rotor()?;
    let v_mag = v.norm();
    check_voltage(v_mag)?;
    let (s_po, t_max) = pull_out(v_mag, params);
    if t_mech > t_max {
        return Err(Error::NoEquilibrium(format!(
            "load torque {t_mech} pu exceeds the pull-out torque {t_max} pu at {v_mag} pu"
        )));
    }
    let vr = Complex::new(v_mag, T::zero());
    let s = if t_mech <= T::zero() {
        T::zero()
    } else {
        bisect(|s| steady_point(s, vr, params).t_elec, t_mech, s_po)
    };
    let mut state = running_state(s, v, params);
    state.t_mech = t_mech.max(T::zero());
    Ok(state)
}

/// Stall detection and recovery, advanced by one step of length `dt`.
///
/// `v` is the terminal phasor; its magnitude drives the stall timer and, on
/// recovery, the motor is re-initialized to equilibrium at `v` with its
/// original load torque. If no such equilibrium exists the block stays
/// tripped for another recovery interval.
pub fn stall_update<T: Real>(
    state: &MotorState<T>,
    v: Complex<T>,
    dt: T,
    params: &CoolingParams<T>,
) -> Result<MotorState<T>> {
    if !(dt > T::zero()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let v_mag = v.norm();
    let mut next = *state;
    match state.mode {
        MotorMode::Running => {
            if v_mag < params.v_stall {
                next.stall_timer += dt;
                if reached(next.stall_timer, params.tau_stall) {
                    next.mode = MotorMode::StallTripped;
                    next.stall_timer = T::zero();
                    next.recovery_timer = params.t_cool.max(dt);
                }
            } else {
                next.stall_timer = T::zero();
            }
        }
        MotorMode::StallTripped => {
            next.recovery_timer = state.recovery_timer - dt;
            if next.recovery_timer <= T::timer_tolerance(params.t_cool) {
                match motor_init_for_torque(state.t_mech, v, params) {
                    Ok(fresh) => next = fresh,
                    Err(_) => next.recovery_timer = params.t_cool.max(dt),
                }
            }
        }
    }
    Ok(next)
}

fn solve3<T: Real>(a: [[T; 3]; 3], b: [T; 3]) -> Option<[T; 3]> {
    let det = |m: &[[T; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&a);
    if d == T::zero() || !d.is_finite() {
        return None;
    }
    let mut x = [T::zero(); 3];
    for (col, xc) in x.iter_mut().enumerate() {
        let mut m = a;
        for row in 0..3 {
            m[row][col] = b[row];
        }
        *xc = det(&m) / d;
    }
    Some(x)
}

/// One implicit-trapezoidal step of a running motor from terminal voltage
/// `v_old` to `v_new`. The slip is clamped to `[0, 1]` afterwards.
pub fn motor_step<T: Real>(
    state: &MotorState<T>,
    v_old: Complex<T>,
    v_new: Complex<T>,
    dt: T,
    params: &CoolingParams<T>,
) -> Result<MotorState<T>> {
    let f0 = motor_derivatives(state, v_old.re, v_old.im, params)?;
    let half = dt / T::of(2.0);
    let mut x = *state;
    let tol = T::epsilon().sqrt() * T::epsilon().sqrt().sqrt();
    for _ in 0..30 {
        let f1 = derivatives_with_current(&x, motor_current(&x, v_new, params), params);
        let r = [
            x.ed_p - state.ed_p - half * (f0[0] + f1[0]),
            x.eq_p - state.eq_p - half * (f0[1] + f1[1]),
            x.slip - state.slip - half * (f0[2] + f1[2]),
        ];
        let jac = motor_jacobian(&x, v_new, params).dx;
        let mut m = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = if i == j { T::one() } else { T::zero() } - half * jac[i][j];
            }
        }
        let dx =
            solve3(m, r).ok_or_else(|| Error::NoEquilibrium("singular motor Jacobian".into()))?;
        x.ed_p -= dx[0];
        x.eq_p -= dx[1];
        x.slip -= dx[2];
        let size = dx.iter().fold(T::zero(), |a, d| a.max(d.abs()));
        if size <= tol * (T::one() + x.slip.abs()) {
            x.slip = x.slip.max(T::zero()).min(T::one());
            return Ok(x);
        }
    }
    Err(Error::NoEquilibrium("motor step did not converge".into()))
}

/// Combined motor integration and stall supervision for one step.
/// A tripped block is not integrated.
pub fn cooling_step<T: Real>(
    state: &MotorState<T>,
    v_old: Complex<T>,
    v_new: Complex<T>,
    dt: T,
    params: &CoolingParams<T>,
) -> Result<MotorState<T>> {
    let integrated = if state.is_running() {
        motor_step(state, v_old, v_new, dt, params)?
    } else {
        *state
    };
    stall_update(&integrated, v_new, dt, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxParams<T = f64> {
    /// Active power at the reference voltage, MW.
    pub p_aux0: T,
    pub alpha_z: T,
    pub alpha_i: T,
    pub alpha_p: T,
    /// Reactive-to-active power ratio.
    pub beta_aux: T,
    /// Reference voltage, pu.
    pub v0: T,
}

impl<T: Real> AuxParams<T> {
    pub fn new(p_aux0: T, alpha: [T; 3], beta_aux: T, v0: T) -> Result<Self> {
        let params = Self {
            p_aux0,
            alpha_z: alpha[0],
            alpha_i: alpha[1],
            alpha_p: alpha[2],
            beta_aux,
            v0,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let sum = self.alpha_z + self.alpha_i + self.alpha_p;
        let tol = T::of(1e-9).max(T::of(8.0) * T::epsilon());
        if !((sum - T::one()).abs() <= tol) {
            return Err(Error::validation(format!(
                "ZIP coefficients must sum to 1, got {sum}"
            )));
        }
        if !(self.p_aux0 >= T::zero()) {
            return Err(Error::validation("p_aux0 must be non-negative"));
        }
        if !(self.v0 > T::zero()) {
            return Err(Error::validation("v0 must be positive"));
        }
        if !self.beta_aux.is_finite() {
            return Err(Error::validation("beta_aux must be finite"));
        }
        Ok(())
    }

    /// Voltage dependence `α_Z·m² + α_I·m + α_P` with `m = V/V0`.
    pub fn shape(&self, v_mag: T) -> T {
        let m = v_mag / self.v0;
        self.alpha_z * m * m + self.alpha_i * m + self.alpha_p
    }

    /// `d(shape)/dV`.
    pub fn shape_derivative(&self, v_mag: T) -> T {
        let m = v_mag / self.v0;
        (T::of(2.0) * self.alpha_z * m + self.alpha_i) / self.v0
    }
}

/// ZIP auxiliary power `(MW, MVAr)` at voltage magnitude `v_mag`.
pub fn aux_power<T: Real>(v_mag: T, params: &AuxParams<T>) -> Result<(T, T)> {
    if !(params.v0 > T::zero()) {
        return Err(Error::invalid(format!(
            "v0 must be positive, got {}",
            params.v0
        )));
    }
    if !(v_mag >= T::zero()) {
        return Err(Error::invalid(format!(
            "voltage magnitude must be non-negative, got {v_mag}"
        )));
    }
    let p = params.p_aux0 * params.shape(v_mag);
    Ok((p, params.beta_aux * p))
}

/// Output of [`simulate_cooling`].
#[derive(Debug, Clone)]
pub struct CoolingRun<T> {
    pub p: Vec<T>,
    pub q: Vec<T>,
    pub mode: Vec<MotorMode>,
}

/// Cooling block driven by a terminal-voltage magnitude series sampled every
/// `dt`, starting from equilibrium at `v_mag[0]` with `load_factor` loading.
pub fn simulate_cooling<T: Real>(
    v_mag: &[T],
    dt: T,
    params: &CoolingParams<T>,
) -> Result<CoolingRun<T>> {
    params.validate()?;
    let first = *v_mag
        .first()
        .ok_or_else(|| Error::invalid("voltage series is empty"))?;
    let phasor = |m: T| Complex::new(m, T::zero());
    let mut state = motor_init_at(params.load_factor, phasor(first), params)?;
    let mut run = CoolingRun {
        p: Vec::with_capacity(v_mag.len()),
        q: Vec::with_capacity(v_mag.len()),
        mode: Vec::with_capacity(v_mag.len()),
    };
    for (k, &v) in v_mag.iter().enumerate() {
        if k > 0 {
            state = cooling_step(&state, phasor(v_mag[k - 1]), phasor(v), dt, params)?;
        }
        let (p, q) = cooling_power_mw(&state, phasor(v), params);
        run.p.push(p);
        run.q.push(q);
        run.mode.push(state.mode);
    }
    Ok(run)
}

/// [`aux_power`] over a voltage magnitude series.
pub fn simulate_aux<T: Real>(v_mag: &[T], params: &AuxParams<T>) -> Result<(Vec<T>, Vec<T>)> {
    params.validate()?;
    v_mag
        .iter()
        .map(|&v| aux_power(v, params))
        .collect::<Result<Vec<_>>>()
        .map(|pq| pq.into_iter().unzip())
}
