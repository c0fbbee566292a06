//! Randomized LEL placement, response-regime classification and the
//! penetration sweep.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::case::{GridCase, LelPlacement};
use super::sim::{run_simulation_partial, EventKind, EventSchedule, SimConfig, SimResult};
use crate::error::{Error, Result};
use crate::lel::Archetype;
use crate::metrics::{frequency_overshoot, reconnection_delay, system_voltage_nadir, Reconnection};

/// Sheds within this window of each other count as simultaneous, s.
pub const SIMULTANEOUS_WINDOW: f64 = 0.05;
/// Minimum number of simultaneous sheds for a mass disconnection.
pub const MASS_TRIP_COUNT: usize = 3;

/// Fault used by the regime study and the penetration sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultScenario {
    pub t_fault: f64,
    pub duration: f64,
    /// Archetypes assigned round-robin to the placed LELs.
    pub archetypes: Vec<Archetype>,
}

impl Default for FaultScenario {
    fn default() -> Self {
        Self {
            t_fault: 5.0,
            duration: 0.1,
            archetypes: Archetype::ALL.to_vec(),
        }
    }
}

/// Places `k` LELs on distinct candidate buses chosen by `seed`, replacing
/// any placements already in the case. For a fixed seed the placements for
/// a smaller `k` are a prefix of those for a larger one.
pub fn place_lels(
    case: &GridCase,
    k: usize,
    seed: u64,
    archetypes: &[Archetype],
) -> Result<GridCase> {
    let mut candidates = case.lel_candidate_buses();
    if k > candidates.len() {
        return Err(Error::invalid(format!(
            "cannot place {k} LELs on {} candidate buses",
            candidates.len()
        )));
    }
    if k > 0 && archetypes.is_empty() {
        return Err(Error::invalid("no archetypes to assign"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    let mut out = case.clone();
    out.lels = candidates[..k]
        .iter()
        .enumerate()
        .map(|(i, &bus)| LelPlacement::archetype(bus, archetypes[i % archetypes.len()]))
        .collect();
    Ok(out)
}

/// Fault location for trial `seed`: a uniformly chosen non-generator bus.
pub fn random_fault_bus(case: &GridCase, seed: u64) -> Result<usize> {
    let gen_buses: Vec<usize> = case.generators.iter().map(|g| g.bus).collect();
    let buses: Vec<usize> = case
        .buses
        .iter()
        .map(|b| b.id)
        .filter(|id| !gen_buses.contains(id))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_fa17);
    buses
        .choose(&mut rng)
        .copied()
        .ok_or_else(|| Error::invalid("case has no non-generator bus to fault"))
}

/// Which of the four response regimes a run exhibits. More than one flag can
/// be set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Regimes {
    /// No LEL shed.
    pub ride_through: bool,
    /// At least [`MASS_TRIP_COUNT`] simultaneous sheds and post-clear
    /// frequency above nominal.
    pub mass_disconnection: bool,
    /// A shed whose violation began after another LEL started ramping back.
    pub reconnection_retrip: bool,
    /// An LEL that never returns to its cap, or a collapsed run.
    pub non_reconnecting: bool,
}

impl Regimes {
    pub fn labels(&self) -> Vec<&'static str> {
        [
            (self.ride_through, "ride_through"),
            (self.mass_disconnection, "mass_disconnection"),
            (self.reconnection_retrip, "reconnection_retrip"),
            (self.non_reconnecting, "non_reconnecting"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect()
    }
}

/// Classifies a run from its event log and series.
pub fn classify(result: &SimResult) -> Result<Regimes> {
    let sheds: Vec<_> = result.events_of(EventKind::Shed).collect();
    let clear = result
        .events_of(EventKind::FaultClear)
        .next()
        .map_or(0.0, |e| e.time);

    let most_simultaneous = sheds
        .iter()
        .map(|a| {
            sheds
                .iter()
                .filter(|b| (b.time - a.time).abs() <= SIMULTANEOUS_WINDOW)
                .count()
        })
        .max()
        .unwrap_or(0);
    let over_frequency = result
        .time
        .iter()
        .enumerate()
        .filter(|(_, &t)| t > clear)
        .any(|(k, _)| result.omega.iter().any(|w| w[k] > 1.0));

    let ramps: Vec<_> = result.events_of(EventKind::RampStart).collect();
    let retrip = sheds.iter().any(|s| {
        let onset = s.onset.unwrap_or(s.time);
        ramps.iter().any(|r| r.lel_id != s.lel_id && r.time < onset)
    });

    let mut never = result.collapse.is_some();
    for k in 0..result.lels.len() {
        never |= reconnection_delay(result, k)? == Reconnection::Never;
    }

    Ok(Regimes {
        ride_through: sheds.is_empty(),
        mass_disconnection: most_simultaneous >= MASS_TRIP_COUNT && over_frequency,
        reconnection_retrip: retrip,
        non_reconnecting: never,
    })
}

/// One seeded trial: `k` LELs placed by `seed`, a fault at a bus chosen by
/// `seed`, and the workload noise seeded by `seed`.
pub fn run_trial(
    case: &GridCase,
    k: usize,
    seed: u64,
    scenario: &FaultScenario,
    cfg: &SimConfig,
) -> Result<SimResult> {
    let placed = place_lels(case, k, seed, &scenario.archetypes)?;
    let bus = random_fault_bus(case, seed)?;
    let events = EventSchedule::fault(bus, scenario.t_fault, scenario.duration);
    run_simulation_partial(&placed, &events, &SimConfig { seed, ..*cfg })
}

/// System-level metrics of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub voltage_nadir: f64,
    pub frequency_overshoot: f64,
    /// Slowest LEL reconnection after clearing, s; infinite if some LEL
    /// never reconnects or the run collapsed.
    pub reconnection_delay: f64,
}

pub fn trial_metrics(result: &SimResult) -> Result<TrialMetrics> {
    let mut delay: f64 = 0.0;
    if result.collapse.is_some() {
        delay = f64::INFINITY;
    }
    for k in 0..result.lels.len() {
        delay = delay.max(match reconnection_delay(result, k)? {
            Reconnection::After(t) => t,
            Reconnection::Never => f64::INFINITY,
        });
    }
    Ok(TrialMetrics {
        voltage_nadir: system_voltage_nadir(result)?,
        frequency_overshoot: frequency_overshoot(result),
        reconnection_delay: delay,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub voltage_nadir: f64,
    pub frequency_overshoot: f64,
    /// Median of the per-trial slowest reconnection; infinite when most
    /// trials never fully reconnect.
    pub reconnection_delay: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        let (a, b) = (values[n / 2 - 1], values[n / 2]);
        if a == b {
            a
        } else {
            0.5 * (a + b)
        }
    }
}

/// Medians of the system metrics over `trials` seeded placements (seeds
/// `first_seed..first_seed + trials`) for each penetration level. Trial `s`
/// uses the same fault bus and workload seed at every `k`.
pub fn penetration_sweep(
    case: &GridCase,
    k_values: &[usize],
    trials: usize,
    first_seed: u64,
    scenario: &FaultScenario,
    cfg: &SimConfig,
) -> Result<Vec<SweepRow>> {
    if trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    let max_k = case.lel_candidate_buses().len();
    if let Some(&k) = k_values.iter().find(|&&k| k > max_k) {
        return Err(Error::invalid(format!(
            "K = {k} exceeds the {max_k} candidate buses"
        )));
    }
    let jobs: Vec<(usize, u64)> = k_values
        .iter()
        .flat_map(|&k| (first_seed..first_seed + trials as u64).map(move |s| (k, s)))
        .collect();
    let metrics: Vec<TrialMetrics> = jobs
        .par_iter()
        .map(|&(k, s)| trial_metrics(&run_trial(case, k, s, scenario, cfg)?))
        .collect::<Result<_>>()?;
    Ok(k_values
        .iter()
        .zip(metrics.chunks(trials))
        .map(|(&k, m)| SweepRow {
            k,
            voltage_nadir: median(&mut m.iter().map(|x| x.voltage_nadir).collect::<Vec<_>>()),
            frequency_overshoot: median(
                &mut m.iter().map(|x| x.frequency_overshoot).collect::<Vec<_>>(),
            ),
            reconnection_delay: median(
                &mut m.iter().map(|x| x.reconnection_delay).collect::<Vec<_>>(),
            ),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::case::fixture;

    #[test]
    fn placements_are_nested_and_distinct() {
        let case = fixture("ieee39").unwrap();
        let big = place_lels(&case, 10, 7, &Archetype::ALL).unwrap();
        let small = place_lels(&case, 4, 7, &Archetype::ALL).unwrap();
        assert_eq!(&big.lels[..4], &small.lels[..]);
        let mut buses: Vec<_> = big.lels.iter().map(|l| l.bus).collect();
        buses.sort();
        buses.dedup();
        assert_eq!(buses.len(), 10);
        assert!(place_lels(&case, 1000, 0, &Archetype::ALL).is_err());
    }

    #[test]
    fn median_handles_even_and_infinite() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(
            median(&mut [1.0, f64::INFINITY, f64::INFINITY, 2.0]),
            f64::INFINITY
        );
    }
}
