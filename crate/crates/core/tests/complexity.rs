//! Lookup-structure cost: the ordered minimum lookup must make the same moves
//! as the linear scan while touching fewer entries once G is large.

use vlf_core::channels::bsc_channel;
use vlf_core::lattice_codec::{run_trial, MinLookup};
use vlf_core::montecarlo::trial_rng;
use vlf_core::trial::CodecConfig;

#[test]
fn ordered_lookup_replays_linear_with_fewer_steps() {
    let ch = bsc_channel(0.11).unwrap();
    let bits = 80;
    let m = 1u128 << bits;
    let cfg = CodecConfig::for_bits(1e-3, bits).unwrap();
    let (mut linear_steps, mut ordered_steps) = (0u64, 0u64);
    for trial in 0..8 {
        let w = 1 + (trial as u128 * 0x9E37_79B9_7F4A_7C15) % m;
        let a = run_trial(&ch, &cfg, m, w, MinLookup::Linear, &mut trial_rng(5, bits, trial)).unwrap();
        let b = run_trial(&ch, &cfg, m, w, MinLookup::Ordered, &mut trial_rng(5, bits, trial)).unwrap();
        assert_eq!(a.tau, b.tau);
        assert_eq!(a.decoded, b.decoded);
        for (x, y) in a.trace.iter().zip(&b.trace) {
            assert_eq!((x.n_t, x.w_plus, x.groups, x.fragments), (y.n_t, y.w_plus, y.groups, y.fragments));
            assert_eq!(x.imbalance.to_bits(), y.imbalance.to_bits());
            assert_eq!(x.repair_iters, y.repair_iters);
        }
        // Compare only rounds with many groups, where the scan dominates.
        for (x, y) in a.trace.iter().zip(&b.trace).filter(|(x, _)| x.groups >= 64) {
            linear_steps += x.lookup_steps;
            ordered_steps += y.lookup_steps;
        }
    }
    assert!(linear_steps > 0);
    assert!(ordered_steps * 2 < linear_steps, "ordered {ordered_steps} vs linear {linear_steps}");
}

#[test]
fn linear_steps_scale_with_group_count() {
    let ch = bsc_channel(0.11).unwrap();
    let bits = 60;
    let m = 1u128 << bits;
    let cfg = CodecConfig::for_bits(1e-3, bits).unwrap();
    let rec = run_trial(&ch, &cfg, m, 12345, MinLookup::Linear, &mut trial_rng(9, bits, 0)).unwrap();
    for (prev, tr) in std::iter::once(1usize).chain(rec.trace.iter().map(|t| t.groups)).zip(&rec.trace) {
        // One scan over the pre-round groups per repair iteration.
        assert_eq!(tr.lookup_steps, (tr.repair_iters as u64 + 1) * prev as u64, "round {}", tr.t);
    }
}
