//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::time::Instant;

use accelsim_core::arch::{logic_efficiency, reconfig_overhead, roofline_attainable};
use accelsim_core::presets::{alexnet, hw_preset};
use accelsim_core::reference::{
    conv_backward_delta, conv_forward, finite_diff_gradient, kernel_gradient, pool_backward,
    pool_forward,
};
use accelsim_core::report::cascade_value;
use accelsim_core::sim::{
    check_against_model, check_against_reference, count_super_layer, random_operands,
    run_super_layer, Region, SimOptions, PAD_ADDR,
};
use accelsim_core::spec::{ConvSpec, Phase, PoolSpec};
use accelsim_core::tensor::{FeatureMaps, KernelBank};
use accelsim_core::traffic::{
    baseline_traffic, layer_storage, network_summary, op_count, reduction_factor, super_traffic,
    StrategySet,
};
use accelsim_validation::toy_pair;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

/// `(label, target, computed)` rows checked against a relative tolerance.
fn within(rows: &[(&str, f64, f64)], tol: f64) -> Outcome {
    let mut worst = (0.0f64, "");
    let mut failed = Vec::new();
    for (label, target, got) in rows {
        let rel = (got - target).abs() / target.abs();
        if rel > worst.0 {
            worst = (rel, label);
        }
        if rel > tol {
            failed.push(format!(
                "{label}: {got:.4} vs {target} ({:.1}%)",
                100.0 * rel
            ));
        }
    }
    if failed.is_empty() {
        Ok(format!(
            "{} values, worst {} at {:.2}% (tolerance {}%)",
            rows.len(),
            worst.1,
            100.0 * worst.0,
            100.0 * tol
        ))
    } else {
        Err(format!(
            "{} of {} outside {}%: {}",
            failed.len(),
            rows.len(),
            100.0 * tol,
            failed.join("; ")
        ))
    }
}

fn storage_and_baseline() -> Outcome {
    let l2 = alexnet().layers[1];
    let st = layer_storage(&l2, 128, 4).unwrap();
    let base = baseline_traffic(&l2, 128, 4).unwrap();
    within(
        &[
            ("input storage MB", 17.9, st.input_bytes as f64 / 1e6),
            (
                "conv output storage MB",
                47.8,
                st.conv_output_bytes as f64 / 1e6,
            ),
            ("pool output storage MB", 11.0, st.output_bytes as f64 / 1e6),
            ("kernel storage KB", 614.4, st.kernel_bytes as f64 / 1e3),
            (
                "conv input traffic GB",
                114.7,
                base.conv.input_bytes as f64 / 1e9,
            ),
            (
                "conv output traffic GB",
                2.3,
                base.conv.output_bytes as f64 / 1e9,
            ),
            ("act traffic MB", 95.6, base.act_bytes as f64 / 1e6),
            ("pool traffic MB", 110.7, base.pool_bytes as f64 / 1e6),
        ],
        0.01,
    )
}

fn cascade() -> Outcome {
    let v = |n| cascade_value(n).unwrap();
    within(
        &[
            ("s1", 2085.0, v(1)),
            ("s1-2", 96.1, v(2)),
            ("s1-3", 17.3, v(3)),
            ("s1-5", 1.01, v(5)),
        ],
        0.03,
    )
}

fn reduction() -> Outcome {
    within(
        &[(
            "reduction factor",
            3976.0,
            reduction_factor(&alexnet().layers[1], 4, 128).unwrap(),
        )],
        0.02,
    )
}

fn table3() -> Outcome {
    let net = alexnet();
    let targets: [(Phase, [Option<f64>; 5], f64); 3] = [
        (
            Phase::Forward,
            [Some(4.18), Some(1.01), Some(1.45), Some(2.31), Some(1.98)],
            1.94,
        ),
        (
            Phase::DeltaProp,
            [None, Some(4.25), Some(3.37), Some(2.31), Some(2.89)],
            3.45,
        ),
        (
            Phase::KernelUpdate,
            [Some(8.36), Some(2.29), Some(1.45), Some(2.31), Some(2.89)],
            3.92,
        ),
    ];
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (phase, cells, total) in targets {
        let s = network_summary(&net, phase, &StrategySet::all(), 4).unwrap();
        for (l, r) in &s.layers {
            if let Some(t) = cells[*l] {
                labels.push(format!("{phase} L{}", l + 1));
                values.push((t, r.normalized_bw));
            }
        }
        labels.push(format!("{phase} total"));
        values.push((total, s.total.normalized_bw));
    }
    let ops = [27.01, 57.34, 38.27, 28.74, 19.14];
    let mut sum = 0.0;
    for (l, layer) in net.layers.iter().enumerate() {
        let g = op_count(layer, net.batch, net.groups_of(l))
            .unwrap()
            .conv_ops as f64
            / 1e9;
        sum += g;
        labels.push(format!("ops L{}", l + 1));
        values.push((ops[l], g));
    }
    labels.push("ops total".into());
    values.push((170.50, sum));
    let rows: Vec<(&str, f64, f64)> = labels
        .iter()
        .zip(&values)
        .map(|(l, (t, g))| (l.as_str(), *t, *g))
        .collect();
    within(&rows, 0.03)
}

fn roofline() -> Outcome {
    let bw = network_summary(&alexnet(), Phase::Forward, &StrategySet::all(), 4)
        .unwrap()
        .total
        .normalized_bw;
    within(
        &[
            (
                "attainable TFlop/s",
                9.90,
                roofline_attainable(bw, 19.2e9, f64::INFINITY) / 1e12,
            ),
            (
                "3.57 MB/GFlop baseline TFlop/s",
                5.37,
                roofline_attainable(3.57, 19.2e9, f64::INFINITY) / 1e12,
            ),
        ],
        0.02,
    )
}

fn reconfiguration() -> Outcome {
    let r = reconfig_overhead(&hw_preset("kintex-layer2").unwrap(), 0.7).unwrap();
    let cfg = within(&[("cfg time s", 0.087, r.cfg_seconds)], 0.05)?;
    let points = 100.0 * (r.overhead_fraction - 0.11).abs();
    if points <= 1.0 {
        Ok(format!(
            "{cfg}; overhead {:.2}% vs 11% ({points:.2} points)",
            100.0 * r.overhead_fraction
        ))
    } else {
        Err(format!(
            "overhead {:.2}% is {points:.2} points from 11%",
            100.0 * r.overhead_fraction
        ))
    }
}

fn efficiencies() -> Outcome {
    let hw = hw_preset("kintex-layer345").unwrap();
    let reports: Vec<_> = alexnet().layers[2..]
        .iter()
        .map(|l| logic_efficiency(l, &hw).unwrap())
        .collect();
    let naive: Vec<f64> = reports.iter().map(|r| r.naive_efficiency).collect();
    if naive != [1.0, 0.375, 0.25] {
        return Err(format!("naive {naive:?}"));
    }
    let mut controlled: Vec<f64> = reports.iter().map(|r| r.controlled_efficiency).collect();
    controlled.sort_by(f64::total_cmp);
    let target = [0.889, 1.0, 1.0];
    if controlled
        .iter()
        .zip(target)
        .all(|(c, t)| (c - t).abs() <= 0.001)
    {
        Ok(format!("naive {naive:?}, controlled {controlled:.4?}"))
    } else {
        Err(format!("controlled {controlled:?}"))
    }
}

fn byte_equality() -> Outcome {
    let mut net = alexnet();
    net.batch = 1;
    let hw = hw_preset("alexnet-full").unwrap();
    let mut runs = 0;
    for index in 0..5 {
        for phase in Phase::ALL {
            if index == 0 && phase == Phase::DeltaProp {
                continue;
            }
            for s in StrategySet::cascade() {
                let res =
                    count_super_layer(&net, index, phase, &hw, &s).map_err(|e| e.to_string())?;
                if let Some(m) = check_against_model(&net, &res, 4).unwrap() {
                    return Err(format!("layer {} {phase} {s:?}: {m:?}", index + 1));
                }
                runs += 1;
            }
        }
    }
    Ok(format!(
        "{runs} layer/phase/subset runs exact (first-layer delta propagation undefined)"
    ))
}

fn functional_equality() -> Outcome {
    let mut net = alexnet();
    net.batch = 1;
    let hw = hw_preset("alexnet-full").unwrap();
    let opts = SimOptions::default();
    let mut worst = 0.0f64;
    for index in 0..5 {
        for phase in Phase::ALL {
            if index == 0 && phase == Phase::DeltaProp {
                continue;
            }
            let ops = random_operands(&net, index, phase, 100 + index as u64).unwrap();
            let res = run_super_layer(
                &net,
                index,
                &ops.as_input(),
                &hw,
                &StrategySet::all(),
                &opts,
            )
            .unwrap();
            let e = check_against_reference(&net, index, &ops, &res, opts.alpha)
                .unwrap()
                .max_rel_error;
            if e > 1e-5 {
                return Err(format!("layer {} {phase}: {e:.3e}", index + 1));
            }
            worst = worst.max(e);
        }
    }
    let sets = StrategySet::all_valid();
    for seed in 0..50u64 {
        let toy = toy_pair(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (index, phase) in [
            (0, Phase::Forward),
            (1, Phase::DeltaProp),
            (1, Phase::KernelUpdate),
        ] {
            let s = sets[rng.gen_range(0..sets.len())];
            let ops = random_operands(&toy, index, phase, seed).unwrap();
            let res = run_super_layer(&toy, index, &ops.as_input(), &hw, &s, &opts).unwrap();
            let e = check_against_reference(&toy, index, &ops, &res, opts.alpha)
                .unwrap()
                .max_rel_error;
            if e > 1e-5 {
                return Err(format!("toy {seed} {phase} {s:?}: {e:.3e}"));
            }
            worst = worst.max(e);
        }
    }
    Ok(format!(
        "AlexNet 14 layer/phase runs and 50 toys, worst {worst:.2e} (tolerance 1e-5)"
    ))
}

fn dot_scale(a: &FeatureMaps<f32>, b: &FeatureMaps<f32>) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (*x as f64 * *y as f64).abs())
        .sum::<f64>()
        .max(1.0)
}

fn properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut adj = 0.0f64;
    for _ in 0..100 {
        let (n, m, k) = (
            rng.gen_range(1..=4),
            rng.gen_range(1..=4),
            rng.gen_range(1..=5),
        );
        let spec = ConvSpec::new(n, m, k, 1, rng.gen_range(0..k));
        let h = rng.gen_range(k..=k + 6);
        let x = FeatureMaps::<f32>::random(n, h, h, &mut rng);
        let ker = KernelBank::<f32>::random(n, m, k, &mut rng).unwrap();
        let y = conv_forward(&x, &ker, &spec).unwrap();
        let d = FeatureMaps::<f32>::random(m, y.height(), y.width(), &mut rng);
        let back = conv_backward_delta(&d, &ker, &spec).unwrap();
        adj = adj.max((y.dot(&d).unwrap() - x.dot(&back).unwrap()).abs() / dot_scale(&y, &d));

        let p = rng.gen_range(2..=3);
        let pool = PoolSpec::new(p, rng.gen_range(1..=p));
        let len = (rng.gen_range(1..=5) - 1) * pool.stride + p;
        let x = FeatureMaps::<f32>::random(n, len, len, &mut rng);
        let y = pool_forward(&x, &pool).unwrap();
        let d = FeatureMaps::<f32>::random(n, y.height(), y.width(), &mut rng);
        let back = pool_backward(&d, &pool, len, len).unwrap();
        adj = adj.max((y.dot(&d).unwrap() - x.dot(&back).unwrap()).abs() / dot_scale(&y, &d));
    }
    if adj > 1e-5 {
        return Err(format!("adjointness error {adj:.2e}"));
    }

    let mut grad_err = 0.0f64;
    for _ in 0..20 {
        let k = rng.gen_range(1..=4);
        let stride = rng.gen_range(1..=k);
        let spec = ConvSpec::new(
            rng.gen_range(1..=3),
            rng.gen_range(1..=3),
            k,
            stride,
            rng.gen_range(0..k),
        );
        let h = k + stride * rng.gen_range(0..=3);
        let x = FeatureMaps::<f64>::random(spec.n, h, h, &mut rng);
        let ker = KernelBank::<f64>::random(spec.n, spec.m, k, &mut rng).unwrap();
        let Ok(y) = conv_forward(&x, &ker, &spec) else {
            continue;
        };
        let d = FeatureMaps::<f64>::random(spec.m, y.height(), y.width(), &mut rng);
        let g = kernel_gradient(&x, &d, &spec).unwrap();
        let fd = finite_diff_gradient(
            |kk| conv_forward(&x, kk, &spec).unwrap().dot(&d).unwrap(),
            &ker,
            1e-3,
        )
        .unwrap();
        let scale = fd.as_slice().iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        let e = g
            .as_slice()
            .iter()
            .zip(fd.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / scale;
        grad_err = grad_err.max(e);
    }
    if grad_err > 1e-3 {
        return Err(format!("kernel gradient error {grad_err:.2e}"));
    }

    let net = alexnet();
    let sets = StrategySet::all_valid();
    for index in 1..5 {
        for phase in Phase::ALL {
            for a in &sets {
                for b in sets.iter().filter(|b| a.is_subset_of(b)) {
                    let ra = super_traffic(index, &net, phase, a, 4).unwrap();
                    let rb = super_traffic(index, &net, phase, b, 4).unwrap();
                    if ra.input_bytes + ra.output_bytes < rb.input_bytes + rb.output_bytes {
                        return Err(format!(
                            "monotonicity: layer {} {phase} {a:?} vs {b:?}",
                            index + 1
                        ));
                    }
                }
            }
        }
    }

    let hw = hw_preset("alexnet-full").unwrap();
    let opts = SimOptions {
        track_addresses: true,
        alpha: 0.01,
    };
    for seed in 0..10 {
        let toy = toy_pair(seed);
        for (index, phase) in [
            (0, Phase::Forward),
            (1, Phase::DeltaProp),
            (1, Phase::KernelUpdate),
        ] {
            let ops = random_operands(&toy, index, phase, seed).unwrap();
            let res = run_super_layer(
                &toy,
                index,
                &ops.as_input(),
                &hw,
                &StrategySet::all(),
                &opts,
            )
            .unwrap();
            let out = if phase == Phase::KernelUpdate {
                Region::KernelStore
            } else {
                Region::Output
            };
            let hists = [
                res.memory.read_histogram(Region::Features).unwrap(),
                res.memory.write_histogram(out).unwrap(),
            ];
            if hists
                .iter()
                .any(|h| h.contains_key(&PAD_ADDR) || h.values().any(|&c| c != 1))
            {
                return Err(format!(
                    "toy {seed} {phase}: an address touched more than once"
                ));
            }
        }
    }

    let l2 = count_super_layer(&net, 1, Phase::Forward, &hw, &StrategySet::all()).unwrap();
    let per_position = l2.cycles_per_image / (27 * 27);
    if per_position != 384 {
        return Err(format!("layer 2 position takes {per_position} cycles"));
    }
    Ok(format!(
        "adjointness {adj:.1e} over 100 seeds, kernel gradient {grad_err:.1e}, monotone, read/write once, 384 cycles"
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        (
            "layer-2 storage and unoptimized traffic",
            storage_and_baseline,
        ),
        ("layer-2 strategy cascade", cascade),
        ("layer-2 total reduction factor", reduction),
        (
            "per-layer normalized bandwidth and operation matrix",
            table3,
        ),
        ("roofline attainable throughput", roofline),
        ("reconfiguration time and overhead", reconfiguration),
        ("logic efficiencies", efficiencies),
        ("simulator/model byte equality", byte_equality),
        (
            "simulator/reference functional equality",
            functional_equality,
        ),
        ("property suite", properties),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} [{secs:.2}s]", i + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {:>2} FAIL {name}: {detail} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria pass",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
