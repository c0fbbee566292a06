//! Protection and recovery state machine acting on the retained-load
//! fraction κ.
//!
//! A violation is `|V − V_ref| > ΔV` or `|ω − ω_ref| > Δω`. All timers
//! advance by exactly `dt` per step and thresholds are compared with `≥`.
//!
//! ```text
//! CONNECTED ──violation──▶ VIOLATION_TIMING ──t_delay_trip──▶ SHED (κ = κ_min)
//!     ▲                         │ clears                        │ in band
//!     │                         ▼                               ▼
//!     └──── κ = cap ──── RAMPING ◀── t_wait_recon ∧ ──── RECOVERY_WAIT
//!                                    t_delay_recon
//! ```
//!
//! The ramp cap is `min(κ_max, 1)`. With `κ_max < 1` the machine settles in
//! `CONNECTED` at the cap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::reached;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtectionParams<T = f64> {
    pub v_ref: T,
    pub omega_ref: T,
    /// Voltage band half-width, pu.
    pub delta_v: T,
    /// Frequency band half-width, pu.
    pub delta_omega: T,
    pub t_delay_trip: T,
    pub t_wait_recon: T,
    pub t_delay_recon: T,
    pub kappa_min: T,
    pub kappa_max: T,
    /// Reconnection ramp rate, 1/s.
    pub r_kappa: T,
}

impl<T: Real> ProtectionParams<T> {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.v_ref,
            self.omega_ref,
            self.delta_v,
            self.delta_omega,
            self.t_delay_trip,
            self.t_wait_recon,
            self.t_delay_recon,
            self.kappa_min,
            self.kappa_max,
            self.r_kappa,
        ];
        if all.iter().any(|v| v.is_nan()) {
            return Err(Error::validation("protection parameters must not be NaN"));
        }
        if !(self.kappa_min > T::zero()
            && self.kappa_min <= self.kappa_max
            && self.kappa_max <= T::one())
        {
            return Err(Error::validation(format!(
                "need 0 < kappa_min <= kappa_max <= 1 (kappa_min = {}, kappa_max = {})",
                self.kappa_min, self.kappa_max
            )));
        }
        for (name, t) in [
            ("t_delay_trip", self.t_delay_trip),
            ("t_wait_recon", self.t_wait_recon),
            ("t_delay_recon", self.t_delay_recon),
        ] {
            if t < T::zero() {
                return Err(Error::validation(format!(
                    "{name} must be non-negative, got {t}"
                )));
            }
        }
        if !(self.delta_v > T::zero() && self.delta_omega > T::zero()) {
            return Err(Error::validation(
                "delta_v and delta_omega must be positive",
            ));
        }
        if !(self.r_kappa > T::zero()) {
            return Err(Error::validation("r_kappa must be positive"));
        }
        Ok(())
    }

    /// Level at which restoration completes.
    pub fn kappa_cap(&self) -> T {
        self.kappa_max.min(T::one())
    }

    pub fn is_violation(&self, v_mag: T, omega: T) -> bool {
        (v_mag - self.v_ref).abs() > self.delta_v
            || (omega - self.omega_ref).abs() > self.delta_omega
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtectionMode {
    Connected,
    ViolationTiming,
    Shed,
    RecoveryWait,
    Ramping,
}

impl ProtectionMode {
    /// Stable numeric code used in result files.
    pub fn code(self) -> u8 {
        match self {
            ProtectionMode::Connected => 0,
            ProtectionMode::ViolationTiming => 1,
            ProtectionMode::Shed => 2,
            ProtectionMode::RecoveryWait => 3,
            ProtectionMode::Ramping => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtectionState<T = f64> {
    pub mode: ProtectionMode,
    pub kappa: T,
    pub violation_timer: T,
    pub stable_timer: T,
    pub since_trip_timer: T,
}

impl<T: Real> Default for ProtectionState<T> {
    fn default() -> Self {
        Self::connected()
    }
}

impl<T: Real> ProtectionState<T> {
    pub fn connected() -> Self {
        Self {
            mode: ProtectionMode::Connected,
            kappa: T::one(),
            violation_timer: T::zero(),
            stable_timer: T::zero(),
            since_trip_timer: T::zero(),
        }
    }
}

/// Advances the state machine by one step with the bus voltage magnitude and
/// frequency observed at the end of the step.
pub fn protection_step<T: Real>(
    state: &ProtectionState<T>,
    v_mag: T,
    omega: T,
    dt: T,
    params: &ProtectionParams<T>,
) -> ProtectionState<T> {
    let violation = params.is_violation(v_mag, omega);
    let cap = params.kappa_cap();
    let mut s = *state;

    let start_timing = |mut s: ProtectionState<T>| {
        s.mode = ProtectionMode::ViolationTiming;
        s.violation_timer = dt;
        trip_if_due(s, params)
    };

    match state.mode {
        ProtectionMode::Connected => {
            if violation {
                s = start_timing(s);
            }
        }
        ProtectionMode::ViolationTiming => {
            if violation {
                s.violation_timer += dt;
                s = trip_if_due(s, params);
            } else {
                s.violation_timer = T::zero();
                s.mode = if s.kappa < cap {
                    ProtectionMode::Ramping
                } else {
                    ProtectionMode::Connected
                };
            }
        }
        ProtectionMode::Shed | ProtectionMode::RecoveryWait => {
            s.since_trip_timer += dt;
            if violation {
                s.mode = ProtectionMode::Shed;
                s.stable_timer = T::zero();
            } else {
                s.mode = ProtectionMode::RecoveryWait;
                s.stable_timer += dt;
                if reached(s.stable_timer, params.t_wait_recon)
                    && reached(s.since_trip_timer, params.t_delay_recon)
                {
                    s.mode = ProtectionMode::Ramping;
                }
            }
        }
        ProtectionMode::Ramping => {
            if violation {
                s = start_timing(s);
            } else {
                s.kappa = (s.kappa + params.r_kappa * dt).min(cap);
                if s.kappa >= cap - T::timer_tolerance(T::one()) {
                    s.kappa = cap;
                    s.mode = ProtectionMode::Connected;
                    s.stable_timer = T::zero();
                    s.since_trip_timer = T::zero();
                }
            }
        }
    }
    s
}

fn trip_if_due<T: Real>(
    mut s: ProtectionState<T>,
    params: &ProtectionParams<T>,
) -> ProtectionState<T> {
    if reached(s.violation_timer, params.t_delay_trip) {
        s.mode = ProtectionMode::Shed;
        s.kappa = params.kappa_min;
        s.violation_timer = T::zero();
        s.stable_timer = T::zero();
        s.since_trip_timer = T::zero();
    }
    s
}

/// Scales the aggregate demand by κ.
pub fn apply_retention<T: Real>(kappa: T, p_load: T, q_load: T) -> Result<(T, T)> {
    if !(kappa >= T::zero() && kappa <= T::one()) {
        return Err(Error::invalid(format!(
            "kappa must lie in [0, 1], got {kappa}"
        )));
    }
    Ok((kappa * p_load, kappa * q_load))
}

#[derive(Deserialize)]
struct RawDisclosure<T> {
    v_ref: Option<T>,
    omega_ref: Option<T>,
    delta_v: Option<T>,
    delta_omega: Option<T>,
    t_delay_trip: Option<T>,
    t_wait_recon: Option<T>,
    t_delay_recon: Option<T>,
    kappa_min: Option<T>,
    kappa_max: Option<T>,
    r_kappa: Option<T>,
}

fn field<T>(value: Option<T>, name: &str) -> Result<T> {
    value.ok_or_else(|| Error::MissingField(name.to_string()))
}

/// Parses a protection disclosure form: flat `key = value` TOML with the ten
/// protection parameters.
pub fn load_protection_disclosure<T>(document: &str) -> Result<ProtectionParams<T>>
where
    T: Real + for<'de> Deserialize<'de>,
{
    let raw: RawDisclosure<T> =
        toml::from_str(document).map_err(|e| Error::Parse(e.message().to_string()))?;
    let params = ProtectionParams {
        v_ref: field(raw.v_ref, "v_ref")?,
        omega_ref: field(raw.omega_ref, "omega_ref")?,
        delta_v: field(raw.delta_v, "delta_v")?,
        delta_omega: field(raw.delta_omega, "delta_omega")?,
        t_delay_trip: field(raw.t_delay_trip, "t_delay_trip")?,
        t_wait_recon: field(raw.t_wait_recon, "t_wait_recon")?,
        t_delay_recon: field(raw.t_delay_recon, "t_delay_recon")?,
        kappa_min: field(raw.kappa_min, "kappa_min")?,
        kappa_max: field(raw.kappa_max, "kappa_max")?,
        r_kappa: field(raw.r_kappa, "r_kappa")?,
    };
    params.validate()?;
    Ok(params)
}

pub fn protection_disclosure_string<T: Real + Serialize>(
    params: &ProtectionParams<T>,
) -> Result<String> {
    toml::to_string(params).map_err(|e| Error::Parse(e.to_string()))
}
