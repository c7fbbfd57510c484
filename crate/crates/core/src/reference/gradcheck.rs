use crate::error::{Error, Result};
use crate::tensor::{FeatureMaps, KernelBank};

fn central(values: &mut [f64], eps: f64, mut eval: impl FnMut(&[f64]) -> f64) -> Result<Vec<f64>> {
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::Oracle(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    let mut grad = Vec::with_capacity(values.len());
    for idx in 0..values.len() {
        let orig = values[idx];
        values[idx] = orig + eps;
        let plus = eval(values);
        values[idx] = orig - eps;
        let minus = eval(values);
        values[idx] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Oracle(format!("non-finite loss at weight {idx}")));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// Central-difference gradient `(J(w+ε) − J(w−ε)) / 2ε` of `loss` with
/// respect to every kernel weight.
pub fn finite_diff_gradient(
    loss: impl Fn(&KernelBank<f64>) -> f64,
    ker: &KernelBank<f64>,
    epsilon: f64,
) -> Result<KernelBank<f64>> {
    let mut probe = ker.clone();
    let mut values = ker.as_slice().to_vec();
    let grad = central(&mut values, epsilon, |w| {
        probe.as_mut_slice().copy_from_slice(w);
        loss(&probe)
    })?;
    KernelBank::from_vec(ker.n_in(), ker.m_out(), ker.k(), grad)
}

/// Central-difference gradient of `loss` with respect to every element of `x`.
pub fn finite_diff_wrt(
    loss: impl Fn(&FeatureMaps<f64>) -> f64,
    x: &FeatureMaps<f64>,
    epsilon: f64,
) -> Result<FeatureMaps<f64>> {
    let mut probe = x.clone();
    let mut values = x.as_slice().to_vec();
    let grad = central(&mut values, epsilon, |v| {
        probe.as_mut_slice().copy_from_slice(v);
        loss(&probe)
    })?;
    FeatureMaps::from_vec(x.maps(), x.height(), x.width(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::conv_forward;
    use crate::spec::ConvSpec;

    fn half_sq(y: &FeatureMaps<f64>) -> f64 {
        0.5 * y.as_slice().iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn quadratic_identity_conv() {
        // J(w) = ½ Σ (w·x)²  ⇒  dJ/dw = Σ x·y with y = w·x.
        let x = FeatureMaps::from_vec(1, 2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let ker = KernelBank::from_vec(1, 1, 1, vec![0.7]).unwrap();
        let spec = ConvSpec::new(1, 1, 1, 1, 0);
        let g = finite_diff_gradient(
            |k| half_sq(&conv_forward(&x, k, &spec).unwrap()),
            &ker,
            1e-3,
        )
        .unwrap();
        let closed: f64 = x.as_slice().iter().map(|v| v * (0.7 * v)).sum();
        assert!((g.as_slice()[0] - closed).abs() < 1e-9);
    }

    #[test]
    fn error_shrinks_quadratically() {
        let loss = |k: &KernelBank<f64>| k.as_slice()[0].powi(3).sin();
        let ker = KernelBank::from_vec(1, 1, 1, vec![0.8]).unwrap();
        let exact = 3.0 * 0.8_f64.powi(2) * 0.8_f64.powi(3).cos();
        let errs: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
            .iter()
            .map(|&e| (finite_diff_gradient(loss, &ker, e).unwrap().as_slice()[0] - exact).abs())
            .collect();
        // Halving ε cuts the truncation error by ~4.
        assert!(
            errs[0] / errs[1] > 3.5 && errs[0] / errs[1] < 4.5,
            "{errs:?}"
        );
        assert!(
            errs[1] / errs[2] > 3.5 && errs[1] / errs[2] < 4.5,
            "{errs:?}"
        );
    }

    #[test]
    fn zero_input_zero_gradient() {
        let x = FeatureMaps::<f64>::zeros(2, 3, 3);
        let ker = KernelBank::from_vec(2, 1, 2, vec![0.3; 8]).unwrap();
        let spec = ConvSpec::new(2, 1, 2, 1, 0);
        let g = finite_diff_gradient(
            |k| half_sq(&conv_forward(&x, k, &spec).unwrap()),
            &ker,
            1e-3,
        )
        .unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_epsilon_and_nan() {
        let ker = KernelBank::from_vec(1, 1, 1, vec![1.0]).unwrap();
        assert!(finite_diff_gradient(|_| 0.0, &ker, 0.0).is_err());
        assert!(matches!(
            finite_diff_gradient(|_| f64::NAN, &ker, 1e-3),
            Err(Error::Oracle(_))
        ));
    }
}
