//! Ground-truth forward and backward layer math.
//!
//! Every operator here is a direct nested-loop evaluation with a fixed
//! summation order (input map outermost, then kernel rows, then kernel
//! columns), so results are deterministic and serve as the oracle for the
//! dataflow simulator.

mod gradcheck;

pub use gradcheck::{finite_diff_gradient, finite_diff_wrt};

use crate::error::{ensure_dim, Error, Result};
use crate::spec::{ConvSpec, PoolSpec, SuperLayerSpec, TrainConfig};
use crate::tensor::{FeatureMaps, KernelBank, Real};

fn check_kernel<T: Real>(ker: &KernelBank<T>, spec: &ConvSpec) -> Result<()> {
    ensure_dim("kernel n_in", spec.n, ker.n_in())?;
    ensure_dim("kernel m_out", spec.m, ker.m_out())?;
    ensure_dim("kernel k", spec.k, ker.k())
}

/// `y[j][r][c] = Σ_i Σ_u Σ_v x[i][r·s+u−pad][c·s+v−pad] · K[i][j][u][v]`.
pub fn conv_forward<T: Real>(
    x: &FeatureMaps<T>,
    ker: &KernelBank<T>,
    spec: &ConvSpec,
) -> Result<FeatureMaps<T>> {
    spec.validate()?;
    check_kernel(ker, spec)?;
    ensure_dim("input maps", spec.n, x.maps())?;
    let out_h = spec.out_dim(x.height())?;
    let out_w = spec.out_dim(x.width())?;
    let (k, s, pad) = (spec.k, spec.stride as isize, spec.pad_begin() as isize);

    let mut y = FeatureMaps::zeros(spec.m, out_h, out_w);
    for j in 0..spec.m {
        for r in 0..out_h {
            for c in 0..out_w {
                let mut acc = T::zero();
                for i in 0..spec.n {
                    let kern = ker.kernel(i, j);
                    for u in 0..k {
                        let row = r as isize * s + u as isize - pad;
                        for v in 0..k {
                            let col = c as isize * s + v as isize - pad;
                            acc = acc + x.get_padded(i, row, col) * kern[u * k + v];
                        }
                    }
                }
                y.set(j, r, c, acc);
            }
        }
    }
    Ok(y)
}

/// Elementwise ReLU.
pub fn act_forward<T: Real>(x: &FeatureMaps<T>) -> FeatureMaps<T> {
    x.map_values(|v| if v > T::zero() { v } else { T::zero() })
}

/// Average pooling over `p × p` windows, per map.
pub fn pool_forward<T: Real>(x: &FeatureMaps<T>, pool: &PoolSpec) -> Result<FeatureMaps<T>> {
    pool.validate()?;
    let out_h = pool.out_dim(x.height())?;
    let out_w = pool.out_dim(x.width())?;
    let scale = T::of_f64(1.0 / (pool.p * pool.p) as f64);
    let mut y = FeatureMaps::zeros(x.maps(), out_h, out_w);
    for i in 0..x.maps() {
        for r in 0..out_h {
            for c in 0..out_w {
                let mut acc = T::zero();
                for u in 0..pool.p {
                    for v in 0..pool.p {
                        acc = acc + x.get(i, r * pool.stride + u, c * pool.stride + v);
                    }
                }
                y.set(i, r, c, acc * scale);
            }
        }
    }
    Ok(y)
}

/// Output of a forward super layer together with the pre-activation
/// convolution result that the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    pub output: FeatureMaps<T>,
    pub pre_act: FeatureMaps<T>,
}

pub fn super_forward<T: Real>(
    x: &FeatureMaps<T>,
    ker: &KernelBank<T>,
    layer: &SuperLayerSpec,
) -> Result<ForwardOutput<T>> {
    let dims = layer.dims()?;
    ensure_dim("input height", dims.in_h, x.height())?;
    ensure_dim("input width", dims.in_w, x.width())?;
    let pre_act = conv_forward(x, ker, &layer.conv)?;
    let activated = if layer.act {
        act_forward(&pre_act)
    } else {
        pre_act.clone()
    };
    let output = match &layer.pool {
        Some(pool) => pool_forward(&activated, pool)?,
        None => activated,
    };
    Ok(ForwardOutput { output, pre_act })
}

/// Transposed convolution for stride-1 layers: full correlation of the
/// output-side δ with 180°-rotated kernels, n/m swapped, effective padding
/// `k − 1 − pad` on each edge.
pub fn conv_backward_delta<T: Real>(
    delta_y: &FeatureMaps<T>,
    ker: &KernelBank<T>,
    spec: &ConvSpec,
) -> Result<FeatureMaps<T>> {
    spec.validate()?;
    check_kernel(ker, spec)?;
    let transposed = transposed_spec(spec)?;
    ensure_dim("delta maps", spec.m, delta_y.maps())?;
    conv_forward(delta_y, &ker.rotated_transpose(), &transposed)
}

/// Geometry of the δ-propagation convolution of `spec`.
pub fn transposed_spec(spec: &ConvSpec) -> Result<ConvSpec> {
    if spec.stride != 1 {
        return Err(Error::Unsupported(format!(
            "delta propagation requires stride 1, layer has stride {}",
            spec.stride
        )));
    }
    let k = spec.k;
    if spec.pad_begin() > k - 1 || spec.pad_end() > k - 1 {
        return Err(Error::Unsupported(format!(
            "delta propagation requires pad <= k-1 (pad {}/{}, k {k})",
            spec.pad_begin(),
            spec.pad_end()
        )));
    }
    Ok(
        ConvSpec::new(spec.m, spec.n, k, 1, k - 1 - spec.pad_begin())
            .with_pad_end(k - 1 - spec.pad_end()),
    )
}

/// `delta ⊙ 1[pre_act > 0]`; the derivative at exactly zero is taken as 0.
pub fn act_backward<T: Real>(
    delta: &FeatureMaps<T>,
    pre_act: &FeatureMaps<T>,
) -> Result<FeatureMaps<T>> {
    delta.ensure_same_dims(pre_act)?;
    let data = delta
        .as_slice()
        .iter()
        .zip(pre_act.as_slice())
        .map(|(&d, &z)| if z > T::zero() { d } else { T::zero() })
        .collect();
    FeatureMaps::from_vec(delta.maps(), delta.height(), delta.width(), data)
}

/// Linear transpose of [`pool_forward`]: every input position accumulates
/// `δ / p²` from each window that covers it.
pub fn pool_backward<T: Real>(
    delta: &FeatureMaps<T>,
    pool: &PoolSpec,
    in_h: usize,
    in_w: usize,
) -> Result<FeatureMaps<T>> {
    pool.validate()?;
    ensure_dim("pooled height", pool.out_dim(in_h)?, delta.height())?;
    ensure_dim("pooled width", pool.out_dim(in_w)?, delta.width())?;
    let scale = T::of_f64(1.0 / (pool.p * pool.p) as f64);
    let mut out = FeatureMaps::zeros(delta.maps(), in_h, in_w);
    for i in 0..delta.maps() {
        for r in 0..delta.height() {
            for c in 0..delta.width() {
                let share = delta.get(i, r, c) * scale;
                for u in 0..pool.p {
                    for v in 0..pool.p {
                        out.add_at(i, r * pool.stride + u, c * pool.stride + v, share);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Backward through the pool and activation stages of `layer`: maps δ at the
/// layer's output grid to δ at its conv-output grid.
pub fn layer_output_backward<T: Real>(
    delta_out: &FeatureMaps<T>,
    layer: &SuperLayerSpec,
    pre_act: &FeatureMaps<T>,
) -> Result<FeatureMaps<T>> {
    let dims = layer.dims()?;
    let upsampled = match &layer.pool {
        Some(pool) => pool_backward(delta_out, pool, dims.conv_h, dims.conv_w)?,
        None => delta_out.clone(),
    };
    if layer.act {
        act_backward(&upsampled, pre_act)
    } else {
        upsampled.ensure_same_dims(pre_act)?;
        Ok(upsampled)
    }
}

/// One backward super layer: δ-propagation through conv `l+1`, then the
/// pool and activation stages of layer `l`. Returns δ at layer `l`'s
/// conv-output grid.
pub fn super_backward_delta<T: Real>(
    delta_next: &FeatureMaps<T>,
    ker_next: &KernelBank<T>,
    next: &SuperLayerSpec,
    layer: &SuperLayerSpec,
    pre_act: &FeatureMaps<T>,
) -> Result<FeatureMaps<T>> {
    let nd = next.dims()?;
    ensure_dim("delta height", nd.conv_h, delta_next.height())?;
    ensure_dim("delta width", nd.conv_w, delta_next.width())?;
    let at_input = conv_backward_delta(delta_next, ker_next, &next.conv)?;
    layer_output_backward(&at_input, layer, pre_act)
}

/// Kernel gradient `Σ_{r,c} δ[j][r][c] · x[i][r·s+u−pad][c·s+v−pad]`.
pub fn kernel_gradient<T: Real>(
    x: &FeatureMaps<T>,
    delta: &FeatureMaps<T>,
    spec: &ConvSpec,
) -> Result<KernelBank<T>> {
    spec.validate()?;
    ensure_dim("input maps", spec.n, x.maps())?;
    ensure_dim("delta maps", spec.m, delta.maps())?;
    ensure_dim("delta height", spec.out_dim(x.height())?, delta.height())?;
    ensure_dim("delta width", spec.out_dim(x.width())?, delta.width())?;
    let (k, s, pad) = (spec.k, spec.stride as isize, spec.pad_begin() as isize);
    let mut grad = KernelBank::zeros(spec.n, spec.m, k)?;
    for i in 0..spec.n {
        for j in 0..spec.m {
            let g = grad.kernel_mut(i, j);
            for u in 0..k {
                for v in 0..k {
                    let mut acc = T::zero();
                    for r in 0..delta.height() {
                        let row = r as isize * s + u as isize - pad;
                        for c in 0..delta.width() {
                            let col = c as isize * s + v as isize - pad;
                            acc = acc + delta.get(j, r, c) * x.get_padded(i, row, col);
                        }
                    }
                    g[u * k + v] = acc;
                }
            }
        }
    }
    Ok(grad)
}

/// Updated kernels and the gradient that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelUpdate<T> {
    pub kernels: KernelBank<T>,
    pub gradient: KernelBank<T>,
}

/// Gradient-descent step `K ← K − α·∂J/∂K`.
pub fn kernel_update<T: Real>(
    ker: &KernelBank<T>,
    x: &FeatureMaps<T>,
    delta: &FeatureMaps<T>,
    spec: &ConvSpec,
    train: &TrainConfig,
) -> Result<KernelUpdate<T>> {
    check_kernel(ker, spec)?;
    let gradient = kernel_gradient(x, delta, spec)?;
    Ok(KernelUpdate {
        kernels: apply_gradient(ker, &gradient, train)?,
        gradient,
    })
}

pub fn apply_gradient<T: Real>(
    ker: &KernelBank<T>,
    gradient: &KernelBank<T>,
    train: &TrainConfig,
) -> Result<KernelBank<T>> {
    ker.ensure_same_dims(gradient)?;
    let alpha = T::of_f64(train.alpha);
    let weights = ker
        .as_slice()
        .iter()
        .zip(gradient.as_slice())
        .map(|(&w, &g)| w - alpha * g)
        .collect();
    KernelBank::from_vec(ker.n_in(), ker.m_out(), ker.k(), weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fm(maps: usize, h: usize, w: usize, data: &[f64]) -> FeatureMaps<f64> {
        FeatureMaps::from_vec(maps, h, w, data.to_vec()).unwrap()
    }

    #[test]
    fn conv_ones_kernel_on_ramp() {
        let x = fm(1, 3, 3, &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let ker = KernelBank::from_vec(1, 1, 2, vec![1.0; 4]).unwrap();
        let y = conv_forward(&x, &ker, &ConvSpec::new(1, 1, 2, 1, 0)).unwrap();
        assert_eq!(y.as_slice(), &[12., 16., 24., 28.]);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = FeatureMaps::<f32>::random(1, 5, 4, &mut rng);
        let ker = KernelBank::from_vec(1, 1, 1, vec![1.0]).unwrap();
        let y = conv_forward(&x, &ker, &ConvSpec::new(1, 1, 1, 1, 0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_layer2_shape() {
        let x = FeatureMaps::<f32>::zeros(48, 27, 27);
        let ker = KernelBank::zeros(48, 128, 5).unwrap();
        let y = conv_forward(&x, &ker, &ConvSpec::new(48, 128, 5, 1, 2)).unwrap();
        assert_eq!(y.dims(), (128, 27, 27));
    }

    #[test]
    fn conv_shape_errors_name_axis() {
        let x = FeatureMaps::<f32>::zeros(2, 4, 4);
        let ker = KernelBank::zeros(3, 1, 3).unwrap();
        let err = conv_forward(&x, &ker, &ConvSpec::new(3, 1, 3, 1, 1)).unwrap_err();
        assert!(matches!(
            err,
            Error::Shape {
                axis: "input maps",
                ..
            }
        ));
    }

    #[test]
    fn relu_cases() {
        let x = fm(1, 1, 3, &[-1., 0., 2.]);
        assert_eq!(act_forward(&x).as_slice(), &[0., 0., 2.]);
        let neg = fm(1, 2, 1, &[-3., -0.5]);
        assert!(act_forward(&neg).as_slice().iter().all(|&v| v == 0.0));
        let pos = fm(1, 2, 1, &[3., 0.5]);
        assert_eq!(act_forward(&pos), pos);
    }

    #[test]
    fn pool_mean_and_shape() {
        let x = fm(1, 2, 2, &[1., 2., 3., 4.]);
        let y = pool_forward(&x, &PoolSpec::new(2, 2)).unwrap();
        assert_eq!(y.as_slice(), &[2.5]);
        let big = FeatureMaps::<f64>::from_fn(2, 27, 27, |_, _, _| 3.25);
        let y = pool_forward(&big, &PoolSpec::new(3, 2)).unwrap();
        assert_eq!(y.dims(), (2, 13, 13));
        assert!(y.as_slice().iter().all(|&v| (v - 3.25).abs() < 1e-12));
        assert!(pool_forward(&fm(1, 3, 3, &[0.0; 9]), &PoolSpec::new(2, 2)).is_err());
    }

    #[test]
    fn super_forward_layer2_group_shape() {
        let layer = SuperLayerSpec::new(
            ConvSpec::new(48, 128, 5, 1, 2),
            true,
            Some(PoolSpec::new(3, 2)),
            27,
            27,
        );
        let x = FeatureMaps::<f32>::zeros(48, 27, 27);
        let ker = KernelBank::zeros(48, 128, 5).unwrap();
        let out = super_forward(&x, &ker, &layer).unwrap();
        assert_eq!(out.output.dims(), (128, 13, 13));
        assert_eq!(out.pre_act.dims(), (128, 27, 27));
    }

    #[test]
    fn super_forward_without_pool_and_positive_conv() {
        let layer = SuperLayerSpec::new(ConvSpec::new(1, 2, 3, 1, 1), true, None, 5, 5);
        let x = FeatureMaps::<f64>::from_fn(1, 5, 5, |_, r, c| (r + c) as f64 + 0.5);
        let ker = KernelBank::from_vec(1, 2, 3, vec![0.25; 18]).unwrap();
        let out = super_forward(&x, &ker, &layer).unwrap();
        assert_eq!(out.output.dims(), (2, 5, 5));
        assert_eq!(out.output, out.pre_act);

        let pooled = SuperLayerSpec {
            pool: Some(PoolSpec::new(2, 1)),
            ..layer
        };
        let out2 = super_forward(&x, &ker, &pooled).unwrap();
        let expect = pool_forward(&out.pre_act, &PoolSpec::new(2, 1)).unwrap();
        assert_eq!(out2.output, expect);
    }

    #[test]
    fn delta_1x1_scales() {
        let d = fm(1, 2, 2, &[1., -2., 3., 0.5]);
        let ker = KernelBank::from_vec(1, 1, 1, vec![1.5]).unwrap();
        let dx = conv_backward_delta(&d, &ker, &ConvSpec::new(1, 1, 1, 1, 0)).unwrap();
        assert_eq!(dx.as_slice(), &[1.5, -3., 4.5, 0.75]);
    }

    #[test]
    fn delta_layer2_shape_and_stride_error() {
        let d = FeatureMaps::<f32>::zeros(128, 27, 27);
        let ker = KernelBank::zeros(48, 128, 5).unwrap();
        let dx = conv_backward_delta(&d, &ker, &ConvSpec::new(48, 128, 5, 1, 2)).unwrap();
        assert_eq!(dx.dims(), (48, 27, 27));

        let ker = KernelBank::<f32>::zeros(1, 1, 3).unwrap();
        let d = FeatureMaps::zeros(1, 2, 2);
        let err = conv_backward_delta(&d, &ker, &ConvSpec::new(1, 1, 3, 2, 0)).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn act_backward_mask() {
        let d = fm(1, 1, 3, &[1., 2., 3.]);
        assert_eq!(act_backward(&d, &fm(1, 1, 3, &[1., 1., 1.])).unwrap(), d);
        assert_eq!(
            act_backward(&d, &fm(1, 1, 3, &[-1., -1., -1.]))
                .unwrap()
                .as_slice(),
            &[0., 0., 0.]
        );
        assert_eq!(
            act_backward(&d, &fm(1, 1, 3, &[1., 0., 1.]))
                .unwrap()
                .as_slice(),
            &[1., 0., 3.]
        );
        assert!(act_backward(&d, &fm(1, 3, 1, &[1., 0., 1.])).is_err());
    }

    #[test]
    fn pool_backward_spreads_quarter() {
        let d = fm(1, 1, 1, &[1.]);
        let out = pool_backward(&d, &PoolSpec::new(2, 2), 2, 2).unwrap();
        assert_eq!(out.as_slice(), &[0.25; 4]);
        let z = FeatureMaps::<f64>::zeros(2, 13, 13);
        let out = pool_backward(&z, &PoolSpec::new(3, 2), 27, 27).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
        assert!(pool_backward(&z, &PoolSpec::new(3, 2), 25, 25).is_err());
    }

    #[test]
    fn backward_super_layer3_dims() {
        let l2 = SuperLayerSpec::new(
            ConvSpec::new(48, 128, 5, 1, 2),
            true,
            Some(PoolSpec::new(3, 2)),
            27,
            27,
        );
        // One group of conv3 seen from layer 2's side: 384 → 128 δ maps.
        let l3 = SuperLayerSpec::new(ConvSpec::new(128, 384, 3, 1, 1), true, None, 13, 13);
        let d = FeatureMaps::<f32>::zeros(384, 13, 13);
        let ker = KernelBank::zeros(128, 384, 3).unwrap();
        let pre = FeatureMaps::zeros(128, 27, 27);
        let out = super_backward_delta(&d, &ker, &l3, &l2, &pre).unwrap();
        assert_eq!(out.dims(), (128, 27, 27));

        let nopool = SuperLayerSpec { pool: None, ..l2 };
        let l3b = SuperLayerSpec::new(ConvSpec::new(128, 4, 3, 1, 1), true, None, 27, 27);
        let d = FeatureMaps::<f32>::zeros(4, 27, 27);
        let ker = KernelBank::zeros(128, 4, 3).unwrap();
        let out = super_backward_delta(&d, &ker, &l3b, &nopool, &pre).unwrap();
        assert_eq!(out.dims(), (128, 27, 27));
    }

    #[test]
    fn kernel_update_single_term() {
        let ker = KernelBank::from_vec(1, 1, 1, vec![1.0_f64]).unwrap();
        let x = fm(1, 1, 1, &[2.]);
        let d = fm(1, 1, 1, &[3.]);
        let up = kernel_update(
            &ker,
            &x,
            &d,
            &ConvSpec::new(1, 1, 1, 1, 0),
            &TrainConfig::new(0.1).unwrap(),
        )
        .unwrap();
        assert!((up.kernels.as_slice()[0] - 0.4).abs() < 1e-12);
        assert_eq!(up.gradient.as_slice(), &[6.0]);
    }

    #[test]
    fn kernel_update_zero_rate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ConvSpec::new(2, 3, 3, 1, 1);
        let ker = KernelBank::<f32>::random(2, 3, 3, &mut rng).unwrap();
        let x = FeatureMaps::random(2, 5, 5, &mut rng);
        let d = FeatureMaps::random(3, 5, 5, &mut rng);
        let up = kernel_update(&ker, &x, &d, &spec, &TrainConfig::new(0.0).unwrap()).unwrap();
        assert_eq!(up.kernels, ker);
    }
}
