use super::{Graph, Tensor, TensorError, Var};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// `|a - n| / max(1, |a|, |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn evaluate<F, E>(f: &F, x: &Tensor) -> Result<f64, E>
where
    F: Fn(&mut Graph, Var) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), false);
    let out = f(&mut g, xv)?;
    let value = g.value(out);
    if value.numel() != 1 {
        return Err(TensorError::NonScalarLoss {
            shape: value.shape().to_vec(),
        }
        .into());
    }
    let v = value.item();
    if !v.is_finite() {
        return Err(TensorError::NonFinite {
            context: "grad_check objective".into(),
        }
        .into());
    }
    Ok(v)
}

/// Compares the backward-pass gradient of scalar `f` at `x` against central
/// differences and returns the largest [`relative_error`] over all entries.
pub fn grad_check<F, E>(f: F, x: &Tensor, epsilon: f64) -> Result<f64, E>
where
    F: Fn(&mut Graph, Var) -> Result<Var, E>,
    E: From<TensorError>,
{
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(TensorError::Invalid {
            op: "grad_check",
            reason: format!("epsilon must be positive, got {epsilon}"),
        }
        .into());
    }
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let out = f(&mut g, xv)?;
    g.backward(out)?;
    let analytic = g.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
    if !analytic.is_finite() {
        return Err(TensorError::NonFinite {
            context: "analytic gradient".into(),
        }
        .into());
    }

    let mut worst = 0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + epsilon;
        let plus = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig - epsilon;
        let minus = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn sum_has_exact_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[3, 4], &mut rng);
        let err = grad_check::<_, TensorError>(|g, x| Ok(g.sum(x)), &x, DEFAULT_EPSILON).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn square_sum_matches_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[2, 3], &mut rng);
        let err = grad_check::<_, TensorError>(
            |g, x| {
                let y = g.mul(x, x)?;
                Ok(g.sum(y))
            },
            &x,
            DEFAULT_EPSILON,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");

        // Independent check against the closed form 2x.
        let mut g = Graph::new();
        let xv = g.leaf(x.clone(), true);
        let y = g.mul(xv, xv).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        for (a, b) in g.grad(xv).unwrap().data().iter().zip(x.data()) {
            assert!((a - 2.0 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_non_positive_epsilon() {
        let x = Tensor::scalar(1.0);
        let r = grad_check::<_, TensorError>(|g, x| Ok(g.sum(x)), &x, 0.0);
        assert!(r.is_err());
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let x = Tensor::vector(vec![0.0]);
        let r = grad_check::<_, TensorError>(|g, x| Ok(g.log_clamped(x, 0.0)), &x, 1e-5);
        assert!(matches!(r, Err(TensorError::NonFinite { .. })));
    }
}
