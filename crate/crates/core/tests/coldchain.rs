//! Cold-chain evaluation against a brute-force run scanner, plus dump
//! round-trips on a fixture written by an independent script.

#[path = "support/oracles.rs"]
mod oracles;

use biotrak_core::coldchain::{SealError, MAX_SEALED_BYTES};
use biotrak_core::{
    emit_sensor_dump, evaluate_compliance, parse_sensor_dump, seal_series_for_chain, ColdChainPolicy, Sample,
    SensorSeries,
};
use oracles::{brute_force_compliance, temp};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_case(rng: &mut ChaCha8Rng) -> (SensorSeries, ColdChainPolicy) {
    let lo = rng.gen_range(-300..=100);
    let hi = lo + rng.gen_range(1..=200);
    let policy = ColdChainPolicy::new(temp(lo), temp(hi), rng.gen_range(0..=3600)).unwrap();
    let n = rng.gen_range(1..=60);
    let mut ts = rng.gen_range(0..1_000_000u64);
    let samples = (0..n)
        .map(|_| {
            ts += rng.gen_range(1..=900);
            let t = match rng.gen_range(0..10) {
                0..=5 => rng.gen_range(lo..=hi),
                6 => lo,
                7 => hi,
                _ => rng.gen_range(-1000..=1500),
            };
            Sample { timestamp: ts, temperature: temp(t) }
        })
        .collect();
    (SensorSeries::new("S-1", samples).unwrap(), policy)
}

#[test]
fn ten_thousand_random_cases_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..10_000 {
        let (series, policy) = random_case(&mut rng);
        assert_eq!(evaluate_compliance(&series, &policy), brute_force_compliance(&series, &policy), "case {i}");
    }
}

#[test]
fn independent_10000_sample_dump_round_trips() {
    let text = include_bytes!("fixtures/dump_10000.txt");
    let series = parse_sensor_dump(text).unwrap();
    assert_eq!(series.samples().len(), 10_000);
    assert_eq!(emit_sensor_dump(&series), text.to_vec());
}

#[test]
fn seal_cap_boundary() {
    // 4-byte id length + id + 4-byte count + 12 bytes per sample.
    let build = |id: &str, n: usize| {
        let samples = (0..n as u64).map(|i| Sample { timestamp: i, temperature: temp(40) }).collect();
        SensorSeries::new(id, samples).unwrap()
    };
    let n = (MAX_SEALED_BYTES - 8 - 8) / 12;
    let at_cap = build("SENSOR-8", n);
    assert_eq!(at_cap.canonical_bytes().len(), MAX_SEALED_BYTES);
    assert!(seal_series_for_chain(&at_cap).is_ok());
    let over = build("SENSOR-09", n);
    assert_eq!(seal_series_for_chain(&over), Err(SealError::TooLarge { size: MAX_SEALED_BYTES + 1 }));
}

fn series_strategy() -> impl Strategy<Value = SensorSeries> {
    ("[A-Z0-9-]{1,12}", prop::collection::vec((1u64..5000, -1000i32..=1500), 1..200)).prop_map(|(id, steps)| {
        let mut ts = 0;
        let samples = steps
            .into_iter()
            .map(|(d, t)| {
                ts += d;
                Sample { timestamp: ts, temperature: temp(t) }
            })
            .collect();
        SensorSeries::new(id, samples).unwrap()
    })
}

proptest! {
    #[test]
    fn emit_parse_round_trip(series in series_strategy()) {
        let text = emit_sensor_dump(&series);
        prop_assert_eq!(parse_sensor_dump(&text).unwrap(), series.clone());
        prop_assert_eq!(SensorSeries::from_canonical_bytes(&series.canonical_bytes()).unwrap(), series);
    }

    #[test]
    fn parser_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..300)) {
        let _ = parse_sensor_dump(&bytes);
    }

    #[test]
    fn compliance_matches_brute_force(series in series_strategy(), lo in -200i32..100, width in 1i32..300, max in 0u64..5000) {
        let policy = ColdChainPolicy::new(temp(lo), temp(lo + width), max).unwrap();
        prop_assert_eq!(evaluate_compliance(&series, &policy), brute_force_compliance(&series, &policy));
    }
}
