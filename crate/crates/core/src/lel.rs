//! A complete LEL: workload, cooling, auxiliary load and protection composed
//! into one grid-facing demand.
//!
//! Per step the components are advanced in the order workload → motor →
//! protection, and κ scales the aggregate
//! `p_load = p_work + p_cool + p_aux`, `q_load = q_cool + q_aux`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protection::{apply_retention, protection_step, ProtectionParams, ProtectionState};
use crate::thermal_aux::{
    aux_power, cooling_power_mw, cooling_step, motor_init_at, AuxParams, CoolingParams, MotorState,
};
use crate::workload::{ou_step, workload_power, WorkloadParams, WorkloadState};
use crate::Real;

/// Below this terminal voltage (pu) constant-power demand is replaced by a
/// constant admittance.
pub const V_FLOOR: f64 = 0.05;

/// Version tag written into parameter-exchange files.
pub const EXCHANGE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Datacenter,
    CryptoMining,
    Electrolyzer,
}

impl Archetype {
    pub const ALL: [Archetype; 3] = [
        Archetype::Datacenter,
        Archetype::CryptoMining,
        Archetype::Electrolyzer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Archetype::Datacenter => "datacenter",
            Archetype::CryptoMining => "crypto_mining",
            Archetype::Electrolyzer => "electrolyzer",
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Archetype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "datacenter" | "data_center" => Ok(Archetype::Datacenter),
            "crypto_mining" | "mining" | "crypto" => Ok(Archetype::CryptoMining),
            "electrolyzer" => Ok(Archetype::Electrolyzer),
            other => Err(Error::Parse(format!("unknown archetype `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct LelParams<T = f64> {
    pub archetype: Archetype,
    pub work: WorkloadParams<T>,
    pub cool: CoolingParams<T>,
    pub aux: AuxParams<T>,
    pub prot: ProtectionParams<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LelState<T = f64> {
    pub work: WorkloadState<T>,
    pub motor: MotorState<T>,
    pub prot: ProtectionState<T>,
}

/// Fractions of a bus's demand assigned to workload, cooling and auxiliary
/// load when an LEL is placed on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandShares {
    pub work: f64,
    pub cool: f64,
    pub aux: f64,
}

impl Default for DemandShares {
    fn default() -> Self {
        Self {
            work: 0.6,
            cool: 0.3,
            aux: 0.1,
        }
    }
}

impl DemandShares {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.work, self.cool, self.aux];
        if parts.iter().any(|v| !(*v >= 0.0)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::validation(
                "demand shares must be non-negative and sum to 1",
            ));
        }
        Ok(())
    }
}

impl<T: Real> LelParams<T> {
    pub fn validate(&self) -> Result<()> {
        self.work.validate()?;
        self.cool.validate()?;
        self.aux.validate()?;
        self.prot.validate()?;
        let total = self.work.p_base + self.cool.load_factor * self.cool.mva_base + self.aux.p_aux0;
        if !(total > T::zero()) {
            return Err(Error::validation("LEL nominal demand must be positive"));
        }
        Ok(())
    }

    /// Cooling demand at initialization, MW.
    pub fn cooling_demand_mw(&self) -> T {
        self.cool.load_factor * self.cool.mva_base
    }

    /// Rescales the demand blocks so that, at utilization `μ_η` and voltage
    /// `v_mag`, the LEL draws `p_total` MW split by `shares`.
    ///
    /// The workload keeps its `p_base/p_full` ratio, the motor is re-rated to
    /// carry its share at `load_factor`, and `p_aux0` absorbs the ZIP voltage
    /// dependence.
    pub fn sized_for(&self, p_total: T, v_mag: T, shares: &DemandShares) -> Result<Self> {
        shares.validate()?;
        if !(p_total > T::zero()) {
            return Err(Error::invalid(format!(
                "site demand must be positive, got {p_total}"
            )));
        }
        let mut out = *self;
        let target_work = p_total * T::of(shares.work);
        let unit = self.work.p_base + self.work.mu_eta * (self.work.p_full - self.work.p_base);
        if !(unit > T::zero()) {
            return Err(Error::validation(
                "workload draws no power at its nominal utilization",
            ));
        }
        let k = target_work / unit;
        out.work.p_base = self.work.p_base * k;
        out.work.p_full = self.work.p_full * k;

        let target_cool = p_total * T::of(shares.cool);
        out.cool.mva_base = (target_cool / self.cool.load_factor).max(T::of(1e-9));

        let shape = self.aux.shape(v_mag);
        out.aux.p_aux0 = if shape > T::zero() {
            p_total * T::of(shares.aux) / shape
        } else {
            T::zero()
        };
        Ok(out)
    }
}

/// Steady state at terminal phasor `v` with utilization at `μ_η`, protection
/// connected and the motor carrying `load_factor` of its rating.
pub fn lel_init<T: Real>(params: &LelParams<T>, v: Complex<T>) -> Result<LelState<T>> {
    params.validate()?;
    Ok(LelState {
        work: WorkloadState::at_mean(&params.work),
        motor: motor_init_at(params.cool.load_factor, v, &params.cool)?,
        prot: ProtectionState::connected(),
    })
}

/// Pre-protection demand `(p_load MW, q_load MVAr)` at terminal phasor `v`.
pub fn lel_demand<T: Real>(
    state: &LelState<T>,
    v: Complex<T>,
    params: &LelParams<T>,
) -> Result<(T, T)> {
    let p_work = workload_power(state.work.eta, &params.work)?;
    let (p_cool, q_cool) = cooling_power_mw(&state.motor, v, &params.cool);
    let (p_aux, q_aux) = aux_power(v.norm(), &params.aux)?;
    Ok((p_work + p_cool + p_aux, q_cool + q_aux))
}

/// Advances one LEL by `dt` at the given terminal conditions and returns the
/// new state with its retained demand `(p̃ MW, q̃ MVAr)`.
pub fn lel_step<T: Real, R: Rng + ?Sized>(
    state: &LelState<T>,
    v_mag: T,
    v_angle: T,
    omega: T,
    dt: T,
    rng: &mut R,
    params: &LelParams<T>,
) -> Result<(LelState<T>, T, T)> {
    let v = Complex::from_polar(v_mag, v_angle);
    let work = ou_step(state.work, &params.work, dt, rng)?;
    let motor = cooling_step(&state.motor, v, v, dt, &params.cool)?;
    let prot = protection_step(&state.prot, v_mag, omega, dt, &params.prot);
    let next = LelState { work, motor, prot };
    let (p_load, q_load) = lel_demand(&next, v, params)?;
    let (p, q) = apply_retention(prot.kappa, p_load, q_load)?;
    Ok((next, p, q))
}

/// Current drawn from the bus by demand `p + jq` (MW, MVAr) at voltage `v`,
/// in pu on `s_base`.
pub fn lel_current_injection<T: Real>(p: T, q: T, v: Complex<T>, s_base: T) -> Result<Complex<T>> {
    let v_mag = v.norm();
    if v_mag <= T::of(V_FLOOR) {
        return Err(Error::LowVoltage(v_mag.as_f64()));
    }
    let s = Complex::new(p, q) / s_base;
    Ok((s / v).conj())
}

/// Default parameters for a 100 MW facility of the given archetype.
///
/// These values are placeholders that make uncalibrated runs possible; they
/// are not derived from measurements and should be replaced by calibrated or
/// disclosed parameters.
pub fn archetype_defaults(archetype: Archetype) -> LelParams {
    let motor = |h_m: f64, v_stall: f64, tau_stall: f64, t_cool: f64| CoolingParams {
        r_s: 0.031,
        x_s: 0.10,
        x_m: 3.2,
        r_r: 0.018,
        x_r: 0.18,
        h_m,
        v_stall,
        tau_stall,
        t_cool,
        mva_base: 30.0 / 0.7,
        load_factor: 0.7,
        f_base: 60.0,
    };
    let aux = |beta: f64| AuxParams {
        p_aux0: 10.0,
        alpha_z: 0.4,
        alpha_i: 0.3,
        alpha_p: 0.3,
        beta_aux: beta,
        v0: 1.0,
    };
    match archetype {
        Archetype::Datacenter => LelParams {
            archetype,
            work: WorkloadParams {
                p_base: 30.0,
                p_full: 90.0,
                tau_eta: 20.0,
                mu_eta: 0.5,
                sigma_xi: 0.6,
                lambda_burst: 0.02,
                ln_a_mu: 1.4,
                ln_a_sigma: 0.4,
            },
            cool: motor(0.5, 0.6, 0.1, 5.0),
            aux: aux(0.3),
            prot: ProtectionParams {
                v_ref: 1.0,
                omega_ref: 1.0,
                delta_v: 0.3,
                delta_omega: 0.008,
                t_delay_trip: 0.05,
                t_wait_recon: 1.0,
                t_delay_recon: 2.0,
                kappa_min: 0.1,
                kappa_max: 1.0,
                r_kappa: 0.2,
            },
        },
        Archetype::CryptoMining => LelParams {
            archetype,
            work: WorkloadParams {
                p_base: 6.0,
                p_full: 66.0,
                tau_eta: 120.0,
                mu_eta: 0.9,
                sigma_xi: 0.3,
                lambda_burst: 0.002,
                ln_a_mu: 2.0,
                ln_a_sigma: 0.4,
            },
            cool: motor(0.4, 0.55, 0.15, 3.0),
            aux: aux(0.2),
            prot: ProtectionParams {
                v_ref: 1.0,
                omega_ref: 1.0,
                delta_v: 0.35,
                delta_omega: 0.012,
                t_delay_trip: 0.1,
                t_wait_recon: 0.5,
                t_delay_recon: 1.0,
                kappa_min: 0.05,
                kappa_max: 1.0,
                r_kappa: 0.5,
            },
        },
        Archetype::Electrolyzer => LelParams {
            archetype,
            work: WorkloadParams {
                p_base: 11.0,
                p_full: 81.0,
                tau_eta: 300.0,
                mu_eta: 0.7,
                sigma_xi: 0.5,
                lambda_burst: 0.001,
                ln_a_mu: 2.5,
                ln_a_sigma: 0.3,
            },
            cool: motor(0.6, 0.65, 0.2, 8.0),
            aux: aux(0.4),
            prot: ProtectionParams {
                v_ref: 1.0,
                omega_ref: 1.0,
                delta_v: 0.25,
                delta_omega: 0.005,
                t_delay_trip: 0.04,
                t_wait_recon: 2.0,
                t_delay_recon: 4.0,
                kappa_min: 0.2,
                kappa_max: 1.0,
                r_kappa: 0.1,
            },
        },
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
struct ExchangeFile<T> {
    schema_version: u32,
    archetype: Archetype,
    workload: WorkloadParams<T>,
    cooling: CoolingParams<T>,
    auxiliary: AuxParams<T>,
    protection: ProtectionParams<T>,
}

/// Serializes the four parameter blocks and the archetype tag.
pub fn to_exchange_string<T: Real + Serialize>(params: &LelParams<T>) -> Result<String> {
    let file = ExchangeFile {
        schema_version: EXCHANGE_SCHEMA_VERSION,
        archetype: params.archetype,
        workload: params.work,
        cooling: params.cool,
        auxiliary: params.aux,
        protection: params.prot,
    };
    toml::to_string(&file).map_err(|e| Error::Parse(e.to_string()))
}

pub fn from_exchange_str<T>(text: &str) -> Result<LelParams<T>>
where
    T: Real + for<'de> Deserialize<'de>,
{
    let file: ExchangeFile<T> = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        match msg
            .strip_prefix("missing field `")
            .and_then(|r| r.strip_suffix('`'))
        {
            Some(name) => Error::MissingField(name.to_string()),
            None => Error::Parse(msg),
        }
    })?;
    if file.schema_version != EXCHANGE_SCHEMA_VERSION {
        return Err(Error::Parse(format!(
            "unsupported schema_version {} (expected {EXCHANGE_SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    let params = LelParams {
        archetype: file.archetype,
        work: file.workload,
        cool: file.cooling,
        aux: file.auxiliary,
        prot: file.protection,
    };
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quiet(archetype: Archetype) -> LelParams {
        let mut p = archetype_defaults(archetype);
        p.work.sigma_xi = 0.0;
        p.work.lambda_burst = 0.0;
        p
    }

    #[test]
    fn defaults_validate() {
        for a in Archetype::ALL {
            archetype_defaults(a).validate().unwrap();
            assert_eq!(a.as_str().parse::<Archetype>().unwrap(), a);
        }
    }

    #[test]
    fn exchange_round_trip() {
        for a in Archetype::ALL {
            let p = archetype_defaults(a);
            let text = to_exchange_string(&p).unwrap();
            let back: LelParams = from_exchange_str(&text).unwrap();
            assert_eq!(back, p);
        }
        let text = to_exchange_string(&archetype_defaults(Archetype::Datacenter)).unwrap();
        let wrong = text.replace("schema_version = 1", "schema_version = 7");
        assert!(from_exchange_str::<f64>(&wrong).is_err());
    }

    #[test]
    fn nominal_conditions_hold_operating_point() {
        let p = quiet(Archetype::Datacenter);
        let v = Complex::new(1.0, 0.0);
        let s0 = lel_init(&p, v).unwrap();
        let (p0, q0) = lel_demand(&s0, v, &p).unwrap();
        assert!((p0 - 100.0).abs() < 1e-6, "{p0}");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = s0;
        for _ in 0..4000 {
            let (next, pt, qt) = lel_step(&s, 1.0, 0.0, 1.0, 0.01, &mut rng, &p).unwrap();
            s = next;
            assert!((pt - p0).abs() < 1e-6 && (qt - q0).abs() < 1e-6);
        }
    }

    #[test]
    fn stall_removes_exactly_the_cooling_share() {
        let mut p = quiet(Archetype::Datacenter);
        p.prot.delta_v = 10.0;
        let v_sag = p.cool.v_stall - 0.1;
        let s0 = lel_init(&p, Complex::new(1.0, 0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dt = 0.01;
        let mut s = s0;
        let steps = (p.cool.tau_stall / dt).round() as usize;
        let mut last = (0.0, 0.0);
        for _ in 0..steps {
            let (next, pt, qt) = lel_step(&s, v_sag, 0.0, 1.0, dt, &mut rng, &p).unwrap();
            s = next;
            last = (pt, qt);
        }
        assert!(!s.motor.is_running());
        let p_work = workload_power(s.work.eta, &p.work).unwrap();
        let (p_aux, q_aux) = aux_power(v_sag, &p.aux).unwrap();
        assert!((last.0 - (p_work + p_aux)).abs() < 1e-9);
        assert!((last.1 - q_aux).abs() < 1e-9);
    }

    #[test]
    fn trip_scales_aggregate_by_kappa_min() {
        let p = quiet(Archetype::Datacenter);
        let s0 = lel_init(&p, Complex::new(1.0, 0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dt = 0.01;
        let mut s = s0;
        let mut out = (0.0, 0.0);
        while s.prot.kappa == 1.0 {
            let (next, pt, qt) = lel_step(&s, 1.0, 0.0, 1.02, dt, &mut rng, &p).unwrap();
            s = next;
            out = (pt, qt);
        }
        let (pl, _) = lel_demand(&s, Complex::new(1.0, 0.0), &p).unwrap();
        assert!((out.0 - p.prot.kappa_min * pl).abs() < 1e-9);
    }

    #[test]
    fn sizing_hits_shares() {
        let p = archetype_defaults(Archetype::CryptoMining);
        let sized = p.sized_for(250.0, 0.98, &DemandShares::default()).unwrap();
        let s = lel_init(&sized, Complex::new(0.98, 0.1)).unwrap();
        let v = Complex::new(0.98, 0.1);
        let (pl, _) = lel_demand(&s, v, &sized).unwrap();
        let aux_shape = sized.aux.shape(v.norm());
        let expected = 150.0 + 75.0 + sized.aux.p_aux0 * aux_shape;
        assert!((pl - expected).abs() < 1e-6, "{pl} vs {expected}");
        assert!((sized.work.p_full / sized.work.p_base - 11.0).abs() < 1e-12);
    }

    #[test]
    fn current_injection_examples() {
        let one = Complex::new(1.0, 0.0);
        assert_eq!(
            lel_current_injection(0.0, 0.0, one, 100.0).unwrap(),
            Complex::new(0.0, 0.0)
        );
        let i = lel_current_injection(100.0, 0.0, one, 100.0).unwrap();
        assert!((i - Complex::new(1.0, 0.0)).norm() < 1e-15);
        let i = lel_current_injection(0.0, 100.0, one, 100.0).unwrap();
        assert!((i - Complex::new(0.0, -1.0)).norm() < 1e-15);
        assert!(matches!(
            lel_current_injection(1.0, 0.0, Complex::new(0.01, 0.0), 100.0),
            Err(Error::LowVoltage(_))
        ));
    }
}
