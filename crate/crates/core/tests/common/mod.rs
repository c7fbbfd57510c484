//! Random toy networks shared by the integration tests.
#![allow(dead_code)]

use accelsim_core::spec::{ConvSpec, NetworkSpec, PoolSpec, SuperLayerSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two stride-1 super layers, so every phase is defined on layer 1.
pub fn toy_pair(seed: u64) -> NetworkSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n0 = rng.gen_range(1..=3);
    let m0 = rng.gen_range(1..=4);
    let k0 = rng.gen_range(1..=3);
    let pad0 = rng.gen_range(0..k0);
    let h0 = rng.gen_range(k0.max(3)..=7);
    let conv0 = h0 + 2 * pad0 + 1 - k0;
    let pool0 = pick_pool(&mut rng, conv0);
    let out0 = pool0.map_or(conv0, |p| (conv0 - p.p) / p.stride + 1);
    let l0 = SuperLayerSpec::new(
        ConvSpec::new(n0, m0, k0, 1, pad0),
        rng.gen_bool(0.8),
        pool0,
        h0,
        h0,
    );

    let m1 = rng.gen_range(1..=4);
    let k1 = rng.gen_range(1..=3usize.min(out0 + 2));
    let pad1 = rng.gen_range(0..k1);
    let pad1 = if out0 + 2 * pad1 < k1 { k1 - 1 } else { pad1 };
    let conv1 = out0 + 2 * pad1 + 1 - k1;
    let pool1 = pick_pool(&mut rng, conv1);
    let l1 = SuperLayerSpec::new(
        ConvSpec::new(m0, m1, k1, 1, pad1),
        rng.gen_bool(0.8),
        pool1,
        out0,
        out0,
    );
    NetworkSpec::new(format!("toy-{seed}"), rng.gen_range(1..=3), vec![l0, l1])
}

fn pick_pool(rng: &mut ChaCha8Rng, len: usize) -> Option<PoolSpec> {
    if !rng.gen_bool(0.6) {
        return None;
    }
    let p = rng.gen_range(2..=3);
    let s = rng.gen_range(1..=p);
    (len >= p && (len - p).is_multiple_of(s)).then(|| PoolSpec::new(p, s))
}

/// One super layer with arbitrary stride (forward and kernel update only).
pub fn strided_layer() -> impl Strategy<Value = SuperLayerSpec> {
    (
        1usize..=3,
        1usize..=3,
        1usize..=4,
        1usize..=4,
        1usize..=4,
        any::<bool>(),
    )
        .prop_flat_map(|(n, m, k, out, seed_pad, act)| {
            (Just((n, m, k, out, seed_pad, act)), 1..=k, 0..k)
        })
        .prop_map(|((n, m, k, out, _, act), stride, pad)| {
            // Input extent that makes the geometry exact.
            let span = (out - 1) * stride + k;
            let h = span.saturating_sub(2 * pad).max(1);
            let pad = (span - h) / 2;
            let pad_end = span - h - pad;
            let conv = ConvSpec::new(n, m, k, stride, pad).with_pad_end(pad_end);
            SuperLayerSpec::new(conv, act, None, h, h)
        })
}
