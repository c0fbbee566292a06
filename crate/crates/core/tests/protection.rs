mod common;

use common::{protection_counterexamples, random_case, replay, scan, DT};
use lelsim::protection::{protection_step, ProtectionState};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn state_machine_agrees_with_interval_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut trips = 0;
    for i in 0..2000 {
        let case = random_case(&mut rng, 200);
        let expected = scan(&case);
        let (t, r, broken) = replay(&case);
        assert_eq!(broken, None, "case {i}");
        assert_eq!((t.clone(), r), expected, "case {i}: {:?}", case.params);
        trips += t.len();
    }
    assert!(trips > 1000);
    assert_eq!(protection_counterexamples(500, 300, 12), 0);
}

proptest! {
    #[test]
    fn replay_is_deterministic(seed in any::<u64>()) {
        let case = random_case(&mut ChaCha8Rng::seed_from_u64(seed), 100);
        let run = || {
            let mut s = ProtectionState::connected();
            case.v
                .iter()
                .zip(&case.omega)
                .map(|(&v, &w)| {
                    s = protection_step(&s, v, w, DT, &case.params);
                    s
                })
                .collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn short_episodes_never_trip(seed in any::<u64>(), len in 1usize..20) {
        let mut case = random_case(&mut ChaCha8Rng::seed_from_u64(seed), 1);
        case.params.t_delay_trip = DT * (len + 1) as f64;
        case.v = [vec![1.0; 5], vec![0.0; len], vec![1.0; 30]].concat();
        case.omega = vec![1.0; case.v.len()];
        let (trips, _, broken) = replay(&case);
        prop_assert!(trips.is_empty());
        prop_assert_eq!(broken, None);
    }
}
