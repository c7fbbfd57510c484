mod common;

use accelsim_core::presets::alexnet;
use accelsim_core::spec::Phase;
use accelsim_core::traffic::{network_summary, super_traffic, StrategySet};
use proptest::prelude::*;

fn streamed(r: &accelsim_core::traffic::TrafficReport) -> u64 {
    r.input_bytes + r.output_bytes
}

fn phases_for(index: usize) -> Vec<Phase> {
    Phase::ALL
        .into_iter()
        .filter(|p| index > 0 || *p != Phase::DeltaProp)
        .collect()
}

#[test]
fn seventeen_valid_subsets() {
    assert_eq!(StrategySet::all_valid().len(), 17);
    assert!(StrategySet::new(false, true, true, true, true).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn more_strategies_never_stream_more(seed in any::<u64>()) {
        let net = common::toy_pair(seed);
        let sets = StrategySet::all_valid();
        for index in 0..2 {
            for phase in phases_for(index) {
                for a in &sets {
                    for b in &sets {
                        if !a.is_subset_of(b) {
                            continue;
                        }
                        let ra = super_traffic(index, &net, phase, a, 4).unwrap();
                        let rb = super_traffic(index, &net, phase, b, 4).unwrap();
                        prop_assert!(streamed(&ra) >= streamed(&rb), "{:?} {:?} ⊆ {:?}", phase, a, b);
                        prop_assert_eq!(ra.conv_ops, rb.conv_ops);
                    }
                }
            }
        }
    }

    #[test]
    fn normalized_bw_is_batch_invariant(seed in any::<u64>(), batch in 1usize..=16, count in 0usize..=5) {
        let mut net = common::toy_pair(seed);
        let s = StrategySet::cumulative(count);
        let mut base = Vec::new();
        for index in 0..2 {
            for phase in phases_for(index) {
                base.push(super_traffic(index, &net, phase, &s, 4).unwrap());
            }
        }
        net.batch = batch;
        let mut i = 0;
        for index in 0..2 {
            for phase in phases_for(index) {
                let r = super_traffic(index, &net, phase, &s, 4).unwrap();
                prop_assert!(r.is_consistent());
                prop_assert!((r.normalized_bw - base[i].normalized_bw).abs() <= 1e-9 * base[i].normalized_bw.max(1.0));
                // The kernel store does not scale with the batch.
                prop_assert_eq!(r.kernel_bytes, base[i].kernel_bytes);
                i += 1;
            }
        }
    }

    #[test]
    fn bytes_scale_with_word_size(seed in any::<u64>(), count in 0usize..=5) {
        let net = common::toy_pair(seed);
        let s = StrategySet::cumulative(count);
        for phase in Phase::ALL {
            let r2 = super_traffic(1, &net, phase, &s, 2).unwrap();
            let r4 = super_traffic(1, &net, phase, &s, 4).unwrap();
            prop_assert_eq!(2 * r2.total_bytes(), r4.total_bytes());
        }
    }
}

#[test]
fn network_totals_are_layer_sums() {
    let net = alexnet();
    for phase in Phase::ALL {
        let summary = network_summary(&net, phase, &StrategySet::all(), 4).unwrap();
        let expected_layers = if phase == Phase::DeltaProp { 4 } else { 5 };
        assert_eq!(summary.layers.len(), expected_layers);
        let bytes: u64 = summary.layers.iter().map(|(_, r)| streamed(r)).sum();
        assert_eq!(streamed(&summary.total), bytes);
        assert!(summary.total.is_consistent());
    }
}
