//! Property tests for the dataset format and evaluation driver.

use noisykag::eval::run_eval;
use noisykag::synth::{generate, SynthKind, SynthSpec};
use noisykag::{parse_dataset, resolve_projections, Backends, RunConfig};
use proptest::prelude::*;

fn kind(i: u8) -> SynthKind {
    match i % 3 {
        0 => SynthKind::Standard,
        1 => SynthKind::GoldEcho,
        _ => SynthKind::Saturated,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn jsonl_round_trip(seed in any::<u64>(), n in 1usize..8, k in 0u8..3) {
        let records = generate(&SynthSpec::new(kind(k), seed, n, "p-"));
        let text: String = records.iter().map(|r| r.to_json_line() + "\n").collect();
        prop_assert_eq!(parse_dataset(&text).unwrap(), records);
    }

    #[test]
    fn eval_ignores_record_order(seed in any::<u64>(), rot in 0usize..6) {
        let records = generate(&SynthSpec::new(SynthKind::Standard, seed, 6, "o-"));
        let mut rotated = records.clone();
        rotated.rotate_left(rot);
        let mut cfg = RunConfig::from_toml_str("").unwrap();
        cfg.toy_encoder.dim = 16;
        let b = Backends::build(&cfg, &[&records]).unwrap();
        let proj = resolve_projections(&cfg, b.encoder.dim()).unwrap();
        let a = run_eval(&records, &cfg, &proj, &*b.encoder, &*b.generator).unwrap();
        let c = run_eval(&rotated, &cfg, &proj, &*b.encoder, &*b.generator).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
    }
}
