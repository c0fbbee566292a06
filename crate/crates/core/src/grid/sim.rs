//! Time-domain simulation: classical generators, induction-motor cooling
//! loads and LEL protection on an algebraic network, integrated with the
//! implicit trapezoidal rule.
//!
//! Each step solves the trapezoidal-discretized differential equations
//! together with the network current balance by Newton's method. Device
//! blocks (2×2 per generator, 3×3 per motor) are eliminated onto the
//! `2n × 2n` network Jacobian before the dense LU solve.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Matrix3, Matrix3x2, Vector2, Vector3};
use num_complex::Complex64;
use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::case::{BusType, GridCase, LelPlacement};
use super::network::{build_ybus, power_flow, PowerFlowSolution};
use crate::error::{Error, Result};
use crate::lel::{lel_demand, lel_init, Archetype, LelParams, LelState, V_FLOOR};
use crate::protection::{protection_step, ProtectionMode};
use crate::real::reached;
use crate::thermal_aux::{
    motor_current, motor_derivatives, motor_jacobian, stall_update, MotorMode,
};
use crate::workload::{ou_advance, OuDraw};

/// Default low-voltage guard of [`SimConfig::v_guard`], pu.
pub const DEFAULT_V_GUARD: f64 = 0.7;

/// Default fault shunt admittance, pu.
pub const DEFAULT_FAULT_ADMITTANCE: Complex64 = Complex64::new(0.0, -1e4);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub newton_tol: f64,
    pub max_newton: usize,
    /// How long generator angles must stay more than π apart before the run
    /// is declared collapsed, s.
    pub collapse_hold: f64,
    /// Below this `|V|` the constant-power part of each LEL is served as the
    /// constant admittance it presents at this voltage, pu.
    pub v_guard: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 40.0,
            seed: 0,
            newton_tol: 1e-8,
            max_newton: 20,
            collapse_hold: 1.0,
            v_guard: DEFAULT_V_GUARD,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.horizon >= self.dt) {
            return Err(Error::invalid(format!(
                "need horizon >= dt > 0 (dt = {}, horizon = {})",
                self.dt, self.horizon
            )));
        }
        if !(self.newton_tol > 0.0) || self.max_newton == 0 {
            return Err(Error::invalid(
                "Newton tolerance and iteration limit must be positive",
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GridEvent {
    /// Shunt admittance (pu) connected at a bus.
    Fault {
        bus: usize,
        admittance: Complex64,
    },
    ClearFault {
        bus: usize,
    },
    BranchTrip {
        from: usize,
        to: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub time: f64,
    pub event: GridEvent,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventSchedule {
    pub events: Vec<ScheduledEvent>,
}

impl EventSchedule {
    pub fn new(mut events: Vec<ScheduledEvent>) -> Self {
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Self { events }
    }

    /// Bolted fault at `bus` from `t_on` for `duration` seconds.
    pub fn fault(bus: usize, t_on: f64, duration: f64) -> Self {
        Self::new(vec![
            ScheduledEvent {
                time: t_on,
                event: GridEvent::Fault {
                    bus,
                    admittance: DEFAULT_FAULT_ADMITTANCE,
                },
            },
            ScheduledEvent {
                time: t_on + duration,
                event: GridEvent::ClearFault { bus },
            },
        ])
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        for w in self.events.windows(2) {
            if w[1].time < w[0].time {
                return Err(Error::invalid("event schedule is not sorted"));
            }
        }
        if let Some(e) = self
            .events
            .iter()
            .find(|e| !(0.0..=horizon).contains(&e.time))
        {
            return Err(Error::invalid(format!(
                "event at t = {} lies outside [0, {horizon}]",
                e.time
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    FaultOn,
    FaultClear,
    BranchTrip,
    Shed,
    RampStart,
    Reconnect,
    StallTrip,
    CoolingReconnect,
    Collapse,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::FaultOn => "fault_on",
            EventKind::FaultClear => "fault_clear",
            EventKind::BranchTrip => "branch_trip",
            EventKind::Shed => "shed",
            EventKind::RampStart => "ramp_start",
            EventKind::Reconnect => "reconnect",
            EventKind::StallTrip => "stall_trip",
            EventKind::CoolingReconnect => "cooling_reconnect",
            EventKind::Collapse => "collapse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            EventKind::FaultOn,
            EventKind::FaultClear,
            EventKind::BranchTrip,
            EventKind::Shed,
            EventKind::RampStart,
            EventKind::Reconnect,
            EventKind::StallTrip,
            EventKind::CoolingReconnect,
            EventKind::Collapse,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }
}

/// One entry of the event log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub lel_id: Option<usize>,
    pub kind: EventKind,
    /// For sheds: time of the first out-of-band sample of the violation that
    /// caused the trip.
    pub onset: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Collapse {
    /// The step Newton iteration failed to converge.
    NewtonFailure {
        step: usize,
        time: f64,
        residual: f64,
    },
    /// Generator angles stayed more than π apart for the hold time.
    AngleSeparation { step: usize, time: f64 },
}

impl Collapse {
    pub fn time(&self) -> f64 {
        match *self {
            Collapse::NewtonFailure { time, .. } | Collapse::AngleSeparation { time, .. } => time,
        }
    }

    pub fn to_error(&self) -> Error {
        match *self {
            Collapse::NewtonFailure {
                step,
                time,
                residual,
            } => Error::StepDiverged {
                step,
                time,
                residual,
            },
            Collapse::AngleSeparation { step, time } => Error::StepDiverged {
                step,
                time,
                residual: f64::INFINITY,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LelSeries {
    pub bus: usize,
    pub archetype: Archetype,
    pub kappa_cap: f64,
    /// Index into [`SimResult::omega`] of the machine whose speed the
    /// protection observes.
    pub omega_source: usize,
    /// Retained active demand, MW.
    pub p: Vec<f64>,
    /// Retained reactive demand, MVAr.
    pub q: Vec<f64>,
    pub kappa: Vec<f64>,
    pub prot_mode: Vec<ProtectionMode>,
    pub motor_mode: Vec<MotorMode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub time: Vec<f64>,
    pub bus_ids: Vec<usize>,
    /// Per bus, `|V|` in pu.
    pub v_mag: Vec<Vec<f64>>,
    /// Per bus, voltage angle in rad.
    pub v_angle: Vec<Vec<f64>>,
    pub gen_buses: Vec<usize>,
    /// Per generator, rotor speed in pu.
    pub omega: Vec<Vec<f64>>,
    /// Per generator, rotor angle in rad.
    pub delta: Vec<Vec<f64>>,
    pub lels: Vec<LelSeries>,
    pub events: Vec<Event>,
    pub collapse: Option<Collapse>,
}

impl SimResult {
    pub fn bus_voltage(&self, bus: usize) -> Result<&[f64]> {
        self.bus_ids
            .iter()
            .position(|&b| b == bus)
            .map(|i| self.v_mag[i].as_slice())
            .ok_or_else(|| Error::invalid(format!("no bus {bus} in result")))
    }

    /// Largest `|ω − 1|` over all generators and samples.
    pub fn max_frequency_deviation(&self) -> f64 {
        self.omega
            .iter()
            .flatten()
            .map(|w| (w - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Turns a collapsed run into its error.
    pub fn check(self) -> Result<Self> {
        match self.collapse {
            Some(c) => Err(c.to_error()),
            None => Ok(self),
        }
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }
}

struct Machine {
    bus: usize,
    h: f64,
    d: f64,
    x: f64,
    e: f64,
    pm: f64,
    delta: f64,
    omega: f64,
    f: [f64; 2],
}

impl Machine {
    fn norton(&self) -> Complex64 {
        let k = self.e / self.x;
        Complex64::new(k * self.delta.sin(), -k * self.delta.cos())
    }

    fn pe(&self, v: Complex64) -> f64 {
        let k = self.e / self.x;
        k * (v.re * self.delta.sin() - v.im * self.delta.cos())
    }

    fn rhs(&self, v: Complex64, omega_b: f64) -> [f64; 2] {
        [
            omega_b * (self.omega - 1.0),
            (self.pm - self.pe(v) - self.d * (self.omega - 1.0)) / (2.0 * self.h),
        ]
    }
}

struct Unit {
    bus: usize,
    params: LelParams,
    state: LelState,
    rng: ChaCha8Rng,
    omega_source: usize,
    /// Motor MVA base over system base.
    motor_scale: f64,
    f: [f64; 3],
}

impl Unit {
    fn kappa(&self) -> f64 {
        self.state.prot.kappa
    }

    fn p_work(&self) -> f64 {
        self.params.work.p_base
            + self.state.work.eta * (self.params.work.p_full - self.params.work.p_base)
    }

    /// Constant-power part `(p_work + aux)` as `I = c(|V|)·V`; returns the
    /// current and its 2×2 real Jacobian with respect to `(V_re, V_im)`.
    fn static_current(&self, v: Complex64, s_base: f64, v_guard: f64) -> (Complex64, Matrix2<f64>) {
        let aux = &self.params.aux;
        let beta = Complex64::new(1.0, aux.beta_aux);
        let s_of = |m: f64| {
            (Complex64::new(self.p_work(), 0.0) + beta * aux.p_aux0 * aux.shape(m)) / s_base
        };
        let m = v.norm();
        let (c, dc) = if m < v_guard {
            (
                s_of(v_guard).conj() / (v_guard * v_guard),
                Complex64::new(0.0, 0.0),
            )
        } else {
            let s = s_of(m);
            let ds = beta * aux.p_aux0 * aux.shape_derivative(m) / s_base;
            (
                s.conj() / (m * m),
                ds.conj() / (m * m) - 2.0 * s.conj() / (m * m * m),
            )
        };
        let i = c * v;
        let (dr, di) = if m > 0.0 && dc != Complex64::new(0.0, 0.0) {
            (
                c + v * dc * (v.re / m),
                Complex64::new(0.0, 1.0) * c + v * dc * (v.im / m),
            )
        } else {
            (c, Complex64::new(0.0, 1.0) * c)
        };
        (i, Matrix2::new(dr.re, di.re, dr.im, di.im))
    }

    fn motor_running(&self) -> bool {
        self.state.motor.is_running()
    }
}

/// Step halvings tried per Newton iteration before accepting a step that
/// does not reduce the residual.
const MAX_BACKTRACK: usize = 6;

struct Snapshot {
    v: Vec<Complex64>,
    gens: Vec<(f64, f64)>,
    motors: Vec<[f64; 3]>,
}

struct Residual {
    r_v: DVector<f64>,
    r_gen: Vec<Vector2<f64>>,
    r_mot: Vec<Vector3<f64>>,
    worst: f64,
}

fn complex_block(y: Complex64) -> Matrix2<f64> {
    Matrix2::new(y.re, -y.im, y.im, y.re)
}

/// Full DAE state of a case ready for time stepping.
pub struct Dynamics {
    case: GridCase,
    omega_b: f64,
    /// Per-branch in-service flag.
    in_service: Vec<bool>,
    /// Constant shunts per bus (loads, generator admittances, residual
    /// reactive demand at LEL buses).
    shunts: Vec<Complex64>,
    faults: HashMap<usize, Complex64>,
    v_guard: f64,
    y: DMatrix<f64>,
    v: Vec<Complex64>,
    machines: Vec<Machine>,
    units: Vec<Unit>,
}

fn nearest_generators(case: &GridCase) -> Vec<usize> {
    let index = case.index_map();
    let mut graph = UnGraph::<(), f64>::with_capacity(case.buses.len(), case.branches.len());
    let nodes: Vec<NodeIndex> = case.buses.iter().map(|_| graph.add_node(())).collect();
    for br in &case.branches {
        graph.add_edge(
            nodes[index[&br.from]],
            nodes[index[&br.to]],
            br.r.hypot(br.x),
        );
    }
    let gen_nodes: Vec<NodeIndex> = case
        .generators
        .iter()
        .map(|g| nodes[index[&g.bus]])
        .collect();
    case.lels
        .iter()
        .map(|l| {
            let dist = dijkstra(&graph, nodes[index[&l.bus]], None, |e| *e.weight());
            gen_nodes
                .iter()
                .enumerate()
                .filter_map(|(k, n)| dist.get(n).map(|d| (k, *d)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map_or(0, |(k, _)| k)
        })
        .collect()
}

fn size_lel(case: &GridCase, placement: &LelPlacement, v_mag: f64) -> Result<LelParams> {
    let bus = &case.buses[case.bus_index(placement.bus)?];
    if !(bus.p_load > 0.0) {
        return Err(Error::validation(format!(
            "LEL bus {} carries no active load",
            bus.id
        )));
    }
    let p_total = bus.p_load * case.s_base;
    let mut params = placement
        .params
        .sized_for(p_total, v_mag, &placement.shares)?;
    if !placement.autosize_motor {
        let p_cool = p_total * placement.shares.cool;
        params.cool.mva_base = placement.params.cool.mva_base;
        params.cool.load_factor = p_cool / params.cool.mva_base;
        if !(params.cool.load_factor <= 1.0) {
            return Err(Error::NoEquilibrium(format!(
                "LEL at bus {}: cooling allocation {p_cool} MW exceeds the {} MVA motor rating",
                bus.id, params.cool.mva_base
            )));
        }
    }
    Ok(params)
}

impl Dynamics {
    /// Initializes generators, LELs and constant-admittance loads from a
    /// converged power flow so that every time derivative vanishes at t = 0.
    pub fn new(case: &GridCase, pf: &PowerFlowSolution, seed: u64) -> Result<Self> {
        case.validate()?;
        let n = case.buses.len();
        let index = case.index_map();
        let s_base = case.s_base;
        let mut shunts = vec![Complex64::new(0.0, 0.0); n];
        let lel_bus: HashMap<usize, usize> = case
            .lels
            .iter()
            .enumerate()
            .map(|(k, l)| (l.bus, k))
            .collect();

        let mut machines = Vec::with_capacity(case.generators.len());
        for g in &case.generators {
            let i = index[&g.bus];
            let v = pf.v[i];
            let s_gen = pf.generation(case, i);
            let current = (s_gen / v).conj();
            let e = v + Complex64::new(0.0, g.xd_p) * current;
            shunts[i] += Complex64::new(0.0, -1.0 / g.xd_p);
            let mut m = Machine {
                bus: i,
                h: g.h,
                d: g.d,
                x: g.xd_p,
                e: e.norm(),
                pm: 0.0,
                delta: e.arg(),
                omega: 1.0,
                f: [0.0; 2],
            };
            m.pm = m.pe(v);
            machines.push(m);
        }

        for (i, b) in case.buses.iter().enumerate() {
            if b.kind == BusType::Pq && lel_bus.contains_key(&b.id) {
                continue;
            }
            let m2 = pf.v[i].norm_sqr();
            shunts[i] += Complex64::new(b.p_load, -b.q_load) / m2;
        }

        let sources = nearest_generators(case);
        let mut units = Vec::with_capacity(case.lels.len());
        for (k, placement) in case.lels.iter().enumerate() {
            let i = index[&placement.bus];
            let v = pf.v[i];
            let params = size_lel(case, placement, v.norm())?;
            let state = lel_init(&params, v).map_err(|e| match e {
                Error::NoEquilibrium(msg) => {
                    Error::NoEquilibrium(format!("LEL at bus {}: {msg}", placement.bus))
                }
                other => other,
            })?;
            let (_, q_lel) = lel_demand(&state, v, &params)?;
            let q_res = case.buses[i].q_load - q_lel / s_base;
            shunts[i] += Complex64::new(0.0, -q_res) / v.norm_sqr();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            units.push(Unit {
                bus: i,
                motor_scale: params.cool.mva_base / s_base,
                params,
                state,
                rng,
                omega_source: sources[k],
                f: [0.0; 3],
            });
        }

        let mut dynamics = Self {
            case: case.clone(),
            omega_b: 2.0 * std::f64::consts::PI * case.f_base,
            in_service: vec![true; case.branches.len()],
            shunts,
            faults: HashMap::new(),
            v_guard: V_FLOOR,
            y: DMatrix::zeros(2 * n, 2 * n),
            v: pf.v.clone(),
            machines,
            units,
        };
        dynamics.rebuild_network()?;
        dynamics.refresh_derivatives();
        Ok(dynamics)
    }

    /// Sets the low-voltage guard; the pre-disturbance state must lie above
    /// it so the equilibrium is unchanged.
    pub fn set_voltage_guard(&mut self, v_guard: f64) -> Result<()> {
        if !(V_FLOOR..1.0).contains(&v_guard) {
            return Err(Error::invalid(format!(
                "voltage guard must lie in [{V_FLOOR}, 1), got {v_guard}"
            )));
        }
        if let Some(u) = self.units.iter().find(|u| self.v[u.bus].norm() < v_guard) {
            return Err(Error::invalid(format!(
                "LEL bus {} starts at {:.4} pu, below the {v_guard} pu voltage guard",
                self.case.buses[u.bus].id,
                self.v[u.bus].norm()
            )));
        }
        self.v_guard = v_guard;
        Ok(())
    }

    fn rebuild_network(&mut self) -> Result<()> {
        let mut active = self.case.clone();
        active.branches = self
            .case
            .branches
            .iter()
            .zip(&self.in_service)
            .filter(|(_, on)| **on)
            .map(|(b, _)| b.clone())
            .collect();
        let ybus = build_ybus(&active)?;
        let n = self.case.buses.len();
        let mut y = DMatrix::<f64>::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let mut yij = ybus[(i, j)];
                if i == j {
                    yij += self.shunts[i];
                    if let Some(f) = self.faults.get(&i) {
                        yij += *f;
                    }
                }
                if yij != Complex64::new(0.0, 0.0) {
                    y.fixed_view_mut::<2, 2>(2 * i, 2 * j)
                        .copy_from(&complex_block(yij));
                }
            }
        }
        self.y = y;
        Ok(())
    }

    fn refresh_derivatives(&mut self) {
        for m in &mut self.machines {
            m.f = m.rhs(self.v[m.bus], self.omega_b);
        }
        for u in &mut self.units {
            u.f = if u.motor_running() {
                motor_derivatives(
                    &u.state.motor,
                    self.v[u.bus].re,
                    self.v[u.bus].im,
                    &u.params.cool,
                )
                .unwrap_or([0.0; 3])
            } else {
                [0.0; 3]
            };
        }
    }

    /// Network current mismatch (pu) at the present state.
    fn network_residual(&self) -> DVector<f64> {
        let n = self.v.len();
        let vv = DVector::from_iterator(2 * n, self.v.iter().flat_map(|v| [v.re, v.im]));
        let mut r = &self.y * vv;
        let s_base = self.case.s_base;
        for m in &self.machines {
            let i = m.norton();
            r[2 * m.bus] -= i.re;
            r[2 * m.bus + 1] -= i.im;
        }
        for u in &self.units {
            let v = self.v[u.bus];
            let mut i = u.static_current(v, s_base, self.v_guard).0;
            if u.motor_running() {
                i += motor_current(&u.state.motor, v, &u.params.cool) * u.motor_scale;
            }
            i *= u.kappa();
            r[2 * u.bus] += i.re;
            r[2 * u.bus + 1] += i.im;
        }
        r
    }

    /// Largest absolute time derivative and network mismatch; zero at an
    /// exact equilibrium.
    pub fn equilibrium_residual(&self) -> f64 {
        let mut worst = self.network_residual().amax();
        for m in &self.machines {
            let f = m.rhs(self.v[m.bus], self.omega_b);
            worst = worst.max(f[0].abs()).max(f[1].abs());
        }
        for u in &self.units {
            if u.motor_running() {
                let v = self.v[u.bus];
                if let Ok(f) = motor_derivatives(&u.state.motor, v.re, v.im, &u.params.cool) {
                    worst = f.iter().fold(worst, |a, x| a.max(x.abs()));
                }
            }
        }
        worst
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            v: self.v.clone(),
            gens: self.machines.iter().map(|m| (m.delta, m.omega)).collect(),
            motors: self
                .units
                .iter()
                .map(|u| [u.state.motor.ed_p, u.state.motor.eq_p, u.state.motor.slip])
                .collect(),
        }
    }

    /// Trapezoidal step residuals relative to the step start `x0`, and their
    /// largest magnitude.
    fn step_residual(&self, x0: &Snapshot, half: f64, algebraic_only: bool) -> Residual {
        let r_v = self.network_residual();
        let mut worst = r_v.amax();
        let mut r_gen = Vec::with_capacity(self.machines.len());
        let mut r_mot = Vec::with_capacity(self.units.len());
        if !algebraic_only {
            for (k, m) in self.machines.iter().enumerate() {
                let f = m.rhs(self.v[m.bus], self.omega_b);
                let r = Vector2::new(
                    m.delta - x0.gens[k].0 - half * (f[0] + m.f[0]),
                    m.omega - x0.gens[k].1 - half * (f[1] + m.f[1]),
                );
                worst = worst.max(r.amax());
                r_gen.push(r);
            }
            for (k, u) in self.units.iter().enumerate() {
                if !u.motor_running() {
                    r_mot.push(Vector3::zeros());
                    continue;
                }
                let v = self.v[u.bus];
                let f = motor_derivatives(&u.state.motor, v.re, v.im, &u.params.cool)
                    .unwrap_or([f64::NAN; 3]);
                let s = &u.state.motor;
                let r = Vector3::new(
                    s.ed_p - x0.motors[k][0] - half * (f[0] + u.f[0]),
                    s.eq_p - x0.motors[k][1] - half * (f[1] + u.f[1]),
                    s.slip - x0.motors[k][2] - half * (f[2] + u.f[2]),
                );
                worst = worst.max(r.amax());
                r_mot.push(r);
            }
        }
        if worst.is_nan() {
            worst = f64::INFINITY;
        }
        Residual {
            r_v,
            r_gen,
            r_mot,
            worst,
        }
    }

    /// Moves from `base` by `alpha` times the Newton update `step`.
    fn apply_update(&mut self, base: &Snapshot, step: &Snapshot, alpha: f64) {
        for (i, v) in self.v.iter_mut().enumerate() {
            *v = base.v[i] - step.v[i] * alpha;
        }
        for (k, m) in self.machines.iter_mut().enumerate() {
            m.delta = base.gens[k].0 - alpha * step.gens[k].0;
            m.omega = base.gens[k].1 - alpha * step.gens[k].1;
        }
        for (k, u) in self.units.iter_mut().enumerate() {
            u.state.motor.ed_p = base.motors[k][0] - alpha * step.motors[k][0];
            u.state.motor.eq_p = base.motors[k][1] - alpha * step.motors[k][1];
            u.state.motor.slip = base.motors[k][2] - alpha * step.motors[k][2];
        }
    }

    /// Simultaneous Newton solve for one trapezoidal step of length `h`
    /// (device states and voltages), or of the network alone when
    /// `algebraic_only`. Steps that do not reduce the largest residual are
    /// halved up to [`MAX_BACKTRACK`] times. Returns the final residual on
    /// failure.
    fn newton(
        &mut self,
        h: f64,
        tol: f64,
        max_iter: usize,
        algebraic_only: bool,
    ) -> std::result::Result<usize, f64> {
        let n = self.v.len();
        let s_base = self.case.s_base;
        let omega_b = self.omega_b;
        let half = h / 2.0;
        let x0 = self.snapshot();

        let mut res = self.step_residual(&x0, half, algebraic_only);
        let mut iter = 0;
        loop {
            if !res.worst.is_finite() {
                return Err(res.worst);
            }
            if res.worst < tol {
                return Ok(iter);
            }
            if iter == max_iter {
                return Err(res.worst);
            }
            iter += 1;

            let Residual {
                r_v,
                r_gen,
                r_mot,
                worst,
            } = res;
            let mut jac = self.y.clone();
            let mut rhs = r_v;
            let mut gen_back = Vec::with_capacity(self.machines.len());
            let mut mot_back = Vec::with_capacity(self.units.len());

            if !algebraic_only {
                for (k, m) in self.machines.iter().enumerate() {
                    let v = self.v[m.bus];
                    let kk = m.e / m.x;
                    let (sd, cd) = m.delta.sin_cos();
                    let two_h = 2.0 * m.h;
                    let pe_d = kk * (v.re * cd + v.im * sd);
                    let a_xx = Matrix2::new(
                        1.0,
                        -half * omega_b,
                        half * pe_d / two_h,
                        1.0 + half * m.d / two_h,
                    );
                    let a_xv =
                        Matrix2::new(0.0, 0.0, half * kk * sd / two_h, -half * kk * cd / two_h);
                    let a_vx = Matrix2::new(-kk * cd, 0.0, -kk * sd, 0.0);
                    let inv = a_xx.try_inverse().ok_or(f64::NAN)?;
                    let t = a_vx * inv;
                    let b = 2 * m.bus;
                    let mut blk = jac.fixed_view_mut::<2, 2>(b, b);
                    blk -= t * a_xv;
                    let corr = t * r_gen[k];
                    rhs[b] -= corr[0];
                    rhs[b + 1] -= corr[1];
                    gen_back.push((inv, a_xv));
                }
            }

            for (k, u) in self.units.iter().enumerate() {
                let v = self.v[u.bus];
                let kappa = u.kappa();
                let b = 2 * u.bus;
                let (_, d_static) = u.static_current(v, s_base, self.v_guard);
                let mut blk = jac.fixed_view_mut::<2, 2>(b, b);
                blk += d_static * kappa;
                if !u.motor_running() {
                    mot_back.push(None);
                    continue;
                }
                let y = u.params.cool_admittance();
                let scale = kappa * u.motor_scale;
                blk += complex_block(y) * scale;
                if algebraic_only {
                    mot_back.push(None);
                    continue;
                }
                let jm = motor_jacobian(&u.state.motor, v, &u.params.cool);
                let mut a_xx = Matrix3::identity();
                let mut a_xv = Matrix3x2::zeros();
                for r in 0..3 {
                    for c in 0..3 {
                        a_xx[(r, c)] -= half * jm.dx[r][c];
                    }
                    for c in 0..2 {
                        a_xv[(r, c)] = -half * jm.dv[r][c];
                    }
                }
                let a_vx = Matrix2x3::new(-y.re, y.im, 0.0, -y.im, -y.re, 0.0) * scale;
                let inv = a_xx.try_inverse().ok_or(f64::NAN)?;
                let t = a_vx * inv;
                blk -= t * a_xv;
                let corr = t * r_mot[k];
                rhs[b] -= corr[0];
                rhs[b + 1] -= corr[1];
                mot_back.push(Some((inv, a_xv)));
            }

            let dv = jac.lu().solve(&rhs).ok_or(f64::NAN)?;
            let mut step = Snapshot {
                v: (0..n)
                    .map(|i| Complex64::new(dv[2 * i], dv[2 * i + 1]))
                    .collect(),
                gens: vec![(0.0, 0.0); self.machines.len()],
                motors: vec![[0.0; 3]; self.units.len()],
            };
            for (k, (inv, a_xv)) in gen_back.into_iter().enumerate() {
                let b = 2 * self.machines[k].bus;
                let dx = inv * (r_gen[k] - a_xv * Vector2::new(dv[b], dv[b + 1]));
                step.gens[k] = (dx[0], dx[1]);
            }
            for (k, back) in mot_back.into_iter().enumerate() {
                if let Some((inv, a_xv)) = back {
                    let b = 2 * self.units[k].bus;
                    let dx = inv * (r_mot[k] - a_xv * Vector2::new(dv[b], dv[b + 1]));
                    step.motors[k] = [dx[0], dx[1], dx[2]];
                }
            }

            let base = self.snapshot();
            let mut alpha = 1.0;
            let mut halvings = 0;
            loop {
                self.apply_update(&base, &step, alpha);
                res = self.step_residual(&x0, half, algebraic_only);
                if res.worst < worst || halvings == MAX_BACKTRACK {
                    break;
                }
                alpha *= 0.5;
                halvings += 1;
            }
        }
    }

    fn lel_power(&self, u: &Unit) -> Complex64 {
        let v = self.v[u.bus];
        let mut i = u.static_current(v, self.case.s_base, self.v_guard).0;
        if u.motor_running() {
            i += motor_current(&u.state.motor, v, &u.params.cool) * u.motor_scale;
        }
        v * (i * u.kappa()).conj() * self.case.s_base
    }
}

impl LelParams {
    fn cool_admittance(&self) -> Complex64 {
        Complex64::new(self.cool.r_s, self.cool.x_transient()).inv()
    }
}

struct Recorder {
    result: SimResult,
}

impl Recorder {
    fn new(d: &Dynamics, steps: usize) -> Self {
        let n = d.case.buses.len();
        let cap = steps + 1;
        let series = |k: usize| vec![Vec::with_capacity(cap); k];
        Self {
            result: SimResult {
                time: Vec::with_capacity(cap),
                bus_ids: d.case.buses.iter().map(|b| b.id).collect(),
                v_mag: series(n),
                v_angle: series(n),
                gen_buses: d.case.generators.iter().map(|g| g.bus).collect(),
                omega: series(d.machines.len()),
                delta: series(d.machines.len()),
                lels: d
                    .units
                    .iter()
                    .zip(&d.case.lels)
                    .map(|(u, l)| LelSeries {
                        bus: l.bus,
                        archetype: u.params.archetype,
                        kappa_cap: u.params.prot.kappa_cap(),
                        omega_source: u.omega_source,
                        p: Vec::with_capacity(cap),
                        q: Vec::with_capacity(cap),
                        kappa: Vec::with_capacity(cap),
                        prot_mode: Vec::with_capacity(cap),
                        motor_mode: Vec::with_capacity(cap),
                    })
                    .collect(),
                events: Vec::new(),
                collapse: None,
            },
        }
    }

    fn record(&mut self, d: &Dynamics, t: f64) {
        let r = &mut self.result;
        r.time.push(t);
        for (i, v) in d.v.iter().enumerate() {
            r.v_mag[i].push(v.norm());
            r.v_angle[i].push(v.arg());
        }
        for (k, m) in d.machines.iter().enumerate() {
            r.omega[k].push(m.omega);
            r.delta[k].push(m.delta);
        }
        for (k, u) in d.units.iter().enumerate() {
            let s = d.lel_power(u);
            let l = &mut r.lels[k];
            l.p.push(s.re);
            l.q.push(s.im);
            l.kappa.push(u.kappa());
            l.prot_mode.push(u.state.prot.mode);
            l.motor_mode.push(u.state.motor.mode);
        }
    }

    fn event(&mut self, time: f64, lel_id: Option<usize>, kind: EventKind, onset: Option<f64>) {
        self.result.events.push(Event {
            time,
            lel_id,
            kind,
            onset,
        });
    }
}

fn apply_event(d: &mut Dynamics, event: &GridEvent) -> Result<EventKind> {
    match *event {
        GridEvent::Fault { bus, admittance } => {
            let i = d.case.bus_index(bus)?;
            d.faults.insert(i, admittance);
            d.rebuild_network()?;
            Ok(EventKind::FaultOn)
        }
        GridEvent::ClearFault { bus } => {
            let i = d.case.bus_index(bus)?;
            d.faults.remove(&i);
            d.rebuild_network()?;
            Ok(EventKind::FaultClear)
        }
        GridEvent::BranchTrip { from, to } => {
            let k = d
                .case
                .branches
                .iter()
                .zip(&d.in_service)
                .position(|(b, on)| {
                    *on && ((b.from == from && b.to == to) || (b.from == to && b.to == from))
                })
                .ok_or_else(|| Error::invalid(format!("no in-service branch {from}-{to}")))?;
            d.in_service[k] = false;
            d.rebuild_network()?;
            Ok(EventKind::BranchTrip)
        }
    }
}

/// Runs a case from its power-flow equilibrium through `events`; a collapse
/// is reported as [`Error::StepDiverged`].
pub fn run_simulation(
    case: &GridCase,
    events: &EventSchedule,
    cfg: &SimConfig,
) -> Result<SimResult> {
    run_simulation_partial(case, events, cfg)?.check()
}

/// Like [`run_simulation`], but a step whose Newton iteration fails, or
/// sustained generator angle separation beyond π, ends the run early with
/// the result truncated at the last good step and [`SimResult::collapse`]
/// set.
pub fn run_simulation_partial(
    case: &GridCase,
    events: &EventSchedule,
    cfg: &SimConfig,
) -> Result<SimResult> {
    cfg.validate()?;
    events.validate(cfg.horizon)?;
    let pf = power_flow(case)?;
    let mut d = Dynamics::new(case, &pf, cfg.seed)?;
    simulate(&mut d, events, cfg)
}

/// Time-steps an initialized system.
pub fn simulate(d: &mut Dynamics, events: &EventSchedule, cfg: &SimConfig) -> Result<SimResult> {
    let steps = cfg.steps();
    let dt = cfg.dt;
    d.set_voltage_guard(cfg.v_guard)?;
    let mut rec = Recorder::new(d, steps);
    let mut pending: Vec<(usize, &ScheduledEvent)> = events
        .events
        .iter()
        .map(|e| ((e.time / dt).round() as usize, e))
        .collect();
    pending.reverse();

    let apply_due = |d: &mut Dynamics,
                     rec: &mut Recorder,
                     pending: &mut Vec<(usize, &ScheduledEvent)>,
                     step: usize|
     -> Result<bool> {
        let mut any = false;
        while pending.last().is_some_and(|(k, _)| *k == step) {
            let (_, e) = pending.pop().unwrap();
            let kind = apply_event(d, &e.event)?;
            rec.event(step as f64 * dt, None, kind, None);
            any = true;
        }
        Ok(any)
    };

    let collapse_newton = |rec: &mut Recorder, step: usize, residual: f64| {
        let time = step as f64 * dt;
        rec.event(time, None, EventKind::Collapse, None);
        rec.result.collapse = Some(Collapse::NewtonFailure {
            step,
            time,
            residual,
        });
    };

    if apply_due(d, &mut rec, &mut pending, 0)? {
        if let Err(res) = d.newton(dt, cfg.newton_tol, cfg.max_newton, true) {
            collapse_newton(&mut rec, 0, res);
            return Ok(rec.result);
        }
        d.refresh_derivatives();
    }
    rec.record(d, 0.0);

    let mut separation = 0.0;
    for step in 1..=steps {
        let t = step as f64 * dt;
        for u in &mut d.units {
            let draw = OuDraw::sample(&mut u.rng);
            u.state.work = ou_advance(u.state.work, &u.params.work, dt, &draw)?.0;
        }
        if let Err(res) = d.newton(dt, cfg.newton_tol, cfg.max_newton, false) {
            collapse_newton(&mut rec, step, res);
            return Ok(rec.result);
        }

        let mut changed = false;
        for k in 0..d.units.len() {
            let omega = d.machines[d.units[k].omega_source].omega;
            let v = d.v[d.units[k].bus];
            let u = &mut d.units[k];
            u.state.motor.slip = u.state.motor.slip.clamp(0.0, 1.0);
            let motor_before = u.state.motor.mode;
            u.state.motor = stall_update(&u.state.motor, v, dt, &u.params.cool)?;
            match (motor_before, u.state.motor.mode) {
                (MotorMode::Running, MotorMode::StallTripped) => {
                    rec.event(t, Some(k), EventKind::StallTrip, None);
                    changed = true;
                }
                (MotorMode::StallTripped, MotorMode::Running) => {
                    rec.event(t, Some(k), EventKind::CoolingReconnect, None);
                    changed = true;
                }
                _ => {}
            }
            let before = u.state.prot;
            u.state.prot = protection_step(&before, v.norm(), omega, dt, &u.params.prot);
            let after = u.state.prot;
            use ProtectionMode::*;
            match (before.mode, after.mode) {
                (Connected | ViolationTiming | Ramping, Shed) => {
                    let timer = if before.mode == ViolationTiming {
                        before.violation_timer + dt
                    } else {
                        dt
                    };
                    rec.event(t, Some(k), EventKind::Shed, Some(t - timer + dt));
                }
                (Shed | RecoveryWait, Ramping) => rec.event(t, Some(k), EventKind::RampStart, None),
                (Ramping, Connected) => rec.event(t, Some(k), EventKind::Reconnect, None),
                _ => {}
            }
            changed |= after.kappa != before.kappa;
        }

        changed |= apply_due(d, &mut rec, &mut pending, step)?;
        if changed {
            if let Err(res) = d.newton(dt, cfg.newton_tol, cfg.max_newton, true) {
                collapse_newton(&mut rec, step, res);
                return Ok(rec.result);
            }
        }
        d.refresh_derivatives();
        rec.record(d, t);

        let (lo, hi) = d
            .machines
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
                (lo.min(m.delta), hi.max(m.delta))
            });
        if hi - lo > std::f64::consts::PI {
            separation += dt;
            if reached(separation, cfg.collapse_hold) {
                rec.event(t, None, EventKind::Collapse, None);
                rec.result.collapse = Some(Collapse::AngleSeparation { step, time: t });
                return Ok(rec.result);
            }
        } else {
            separation = 0.0;
        }
    }
    Ok(rec.result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::case::fixture;

    fn quiet(case: &mut GridCase) {
        for l in &mut case.lels {
            l.params.work.sigma_xi = 0.0;
            l.params.work.lambda_burst = 0.0;
        }
    }

    #[test]
    fn initial_state_is_equilibrium() {
        for name in ["toy2", "toy9", "ieee39"] {
            let case = fixture(name).unwrap();
            let pf = power_flow(&case).unwrap();
            let d = Dynamics::new(&case, &pf, 1).unwrap();
            assert!(
                d.equilibrium_residual() < 1e-8,
                "{name}: {}",
                d.equilibrium_residual()
            );
        }
    }

    #[test]
    fn quiet_toy2_stays_flat() {
        let mut case = fixture("toy2").unwrap();
        quiet(&mut case);
        let cfg = SimConfig {
            dt: 0.005,
            horizon: 5.0,
            ..Default::default()
        };
        let r = run_simulation(&case, &EventSchedule::default(), &cfg).unwrap();
        assert!(r.collapse.is_none());
        assert!(r.max_frequency_deviation() < 1e-9);
        assert!(r.events.is_empty());
    }

    #[test]
    fn fault_depresses_faulted_bus_most() {
        let case = fixture("toy9").unwrap();
        let cfg = SimConfig {
            dt: 0.005,
            horizon: 2.0,
            ..Default::default()
        };
        let r = run_simulation(&case, &EventSchedule::fault(7, 0.5, 0.1), &cfg).unwrap();
        assert!(r.collapse.is_none());
        let k = (0.55 / cfg.dt).round() as usize;
        let faulted = r.bus_voltage(7).unwrap()[k];
        assert!(r.v_mag.iter().all(|s| s[k] >= faulted));
        assert!(faulted < 0.01);
        assert!(r.max_frequency_deviation() > 1e-4);
    }

    #[test]
    fn tiny_motor_rating_is_infeasible() {
        let mut case = fixture("toy2").unwrap();
        let l = &mut case.lels[0];
        l.shares = crate::lel::DemandShares {
            work: 0.0,
            cool: 1.0,
            aux: 0.0,
        };
        l.autosize_motor = false;
        l.params.cool.mva_base = 0.5;
        let pf = power_flow(&case).unwrap();
        assert!(matches!(
            Dynamics::new(&case, &pf, 0),
            Err(Error::NoEquilibrium(_))
        ));
    }
}
