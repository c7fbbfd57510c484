//! Seeded operands and cross-checks of simulator results against the
//! reference operators and the closed-form traffic model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::engine::{SimInput, SimResult};
use crate::error::{Error, Result};
use crate::reference::{kernel_update, super_backward_delta, super_forward};
use crate::spec::{NetworkSpec, Phase, TrainConfig};
use crate::tensor::{FeatureMaps, KernelBank};
use crate::traffic::{super_traffic, TrafficReport};

/// Owned operands of one super layer for one image of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct Operands {
    pub phase: Phase,
    pub x: Option<FeatureMaps<f32>>,
    pub kernels: KernelBank<f32>,
    pub delta: Option<FeatureMaps<f32>>,
    pub pre_act: Option<FeatureMaps<f32>>,
}

fn need(t: &Option<FeatureMaps<f32>>) -> &FeatureMaps<f32> {
    t.as_ref().expect("operand present for phase")
}

impl Operands {
    pub fn as_input(&self) -> SimInput<'_> {
        match self.phase {
            Phase::Forward => SimInput::Forward {
                x: need(&self.x),
                kernels: &self.kernels,
            },
            Phase::DeltaProp => SimInput::DeltaProp {
                delta: need(&self.delta),
                kernels: &self.kernels,
                pre_act: need(&self.pre_act),
            },
            Phase::KernelUpdate => SimInput::KernelUpdate {
                x: need(&self.x),
                delta: need(&self.delta),
                kernels: &self.kernels,
            },
        }
    }
}

/// Uniform operands in `[-1, 1)` drawn from `seed`.
pub fn random_operands(
    net: &NetworkSpec,
    index: usize,
    phase: Phase,
    seed: u64,
) -> Result<Operands> {
    let layer = net.layer(index)?;
    let d = layer.dims()?;
    let c = &layer.conv;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernels = KernelBank::random(c.n, c.m, c.k, &mut rng)?;
    let mut ops = Operands {
        phase,
        x: None,
        kernels,
        delta: None,
        pre_act: None,
    };
    match phase {
        Phase::Forward => ops.x = Some(FeatureMaps::random(c.n, d.in_h, d.in_w, &mut rng)),
        Phase::DeltaProp => {
            if index == 0 {
                return Err(Error::Unsupported(
                    "delta propagation is undefined for the first super layer".into(),
                ));
            }
            let pd = net.layer(index - 1)?.dims()?;
            ops.delta = Some(FeatureMaps::random(c.m, d.conv_h, d.conv_w, &mut rng));
            ops.pre_act = Some(FeatureMaps::random(c.n, pd.conv_h, pd.conv_w, &mut rng));
        }
        Phase::KernelUpdate => {
            ops.x = Some(FeatureMaps::random(c.n, d.in_h, d.in_w, &mut rng));
            ops.delta = Some(FeatureMaps::random(c.m, d.conv_h, d.conv_w, &mut rng));
        }
    }
    Ok(ops)
}

/// Largest element error of a simulated tensor against the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElementCheck {
    /// Scaled by the reference's largest magnitude.
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub elements: usize,
}

fn compare(actual: &[f32], reference: &[f64]) -> Result<ElementCheck> {
    if actual.len() != reference.len() {
        return Err(Error::shape(
            "compared elements",
            reference.len(),
            actual.len(),
        ));
    }
    let scale = reference
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let mut worst = (0.0, 0);
    for (i, (a, r)) in actual.iter().zip(reference).enumerate() {
        let e = (*a as f64 - r).abs() / scale;
        if e > worst.0 || !e.is_finite() {
            worst = (e, i);
        }
    }
    Ok(ElementCheck {
        max_rel_error: worst.0,
        worst_index: worst.1,
        elements: actual.len(),
    })
}

/// Recomputes the super layer with the 64-bit reference operators and
/// compares the simulator's outputs (or, for the kernel update, its
/// gradient and updated kernels).
pub fn check_against_reference(
    net: &NetworkSpec,
    index: usize,
    ops: &Operands,
    result: &SimResult,
    alpha: f64,
) -> Result<ElementCheck> {
    let layer = net.layer(index)?;
    let missing = || Error::Oracle("simulation ran without data".into());
    match ops.phase {
        Phase::Forward => {
            let x = ops.x.as_ref().ok_or_else(missing)?.convert::<f64>();
            let want = super_forward(&x, &ops.kernels.convert(), layer)?;
            compare(
                result.outputs.as_ref().ok_or_else(missing)?.as_slice(),
                want.output.as_slice(),
            )
        }
        Phase::DeltaProp => {
            let prev = net.layer(index - 1)?;
            let want = super_backward_delta(
                &ops.delta.as_ref().ok_or_else(missing)?.convert::<f64>(),
                &ops.kernels.convert(),
                layer,
                prev,
                &ops.pre_act.as_ref().ok_or_else(missing)?.convert(),
            )?;
            compare(
                result.outputs.as_ref().ok_or_else(missing)?.as_slice(),
                want.as_slice(),
            )
        }
        Phase::KernelUpdate => {
            let want = kernel_update(
                &ops.kernels.convert::<f64>(),
                &ops.x.as_ref().ok_or_else(missing)?.convert(),
                &ops.delta.as_ref().ok_or_else(missing)?.convert(),
                &layer.conv,
                &TrainConfig::new(alpha)?,
            )?;
            let grad = compare(
                result.gradient.as_ref().ok_or_else(missing)?.as_slice(),
                want.gradient.as_slice(),
            )?;
            let kernels = compare(
                result.kernels.as_ref().ok_or_else(missing)?.as_slice(),
                want.kernels.as_slice(),
            )?;
            Ok(if kernels.max_rel_error > grad.max_rel_error {
                kernels
            } else {
                grad
            })
        }
    }
}

/// First traffic field where the simulator and the model disagree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterMismatch {
    pub field: &'static str,
    pub simulated: u64,
    pub model: u64,
}

pub fn traffic_mismatch(sim: &TrafficReport, model: &TrafficReport) -> Option<CounterMismatch> {
    let fields = [
        ("input_bytes", sim.input_bytes, model.input_bytes),
        ("output_bytes", sim.output_bytes, model.output_bytes),
        ("kernel_bytes", sim.kernel_bytes, model.kernel_bytes),
        ("conv_ops", sim.conv_ops, model.conv_ops),
        ("act_ops", sim.act_ops, model.act_ops),
        ("pool_ops", sim.pool_ops, model.pool_ops),
    ];
    fields
        .into_iter()
        .find(|(_, s, m)| s != m)
        .map(|(field, simulated, model)| CounterMismatch {
            field,
            simulated,
            model,
        })
}

pub fn check_against_model(
    net: &NetworkSpec,
    result: &SimResult,
    word_bytes: usize,
) -> Result<Option<CounterMismatch>> {
    let model = super_traffic(
        result.layer,
        net,
        result.phase,
        &result.strategies,
        word_bytes,
    )?;
    Ok(traffic_mismatch(&result.traffic, &model))
}
