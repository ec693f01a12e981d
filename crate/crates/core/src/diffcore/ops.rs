//! Scalar loss primitives with their gradients.

use crate::error::{shape_err, Result, TceError};

/// `-log softmax(logits)[label]` and its gradient `softmax(logits) - onehot(label)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(TceError::Index(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let shifted: Vec<f64> = logits.iter().map(|&l| l - max).collect();
    let sum: f64 = shifted.iter().map(|s| s.exp()).sum();
    let log_sum = sum.ln();
    let loss = log_sum - shifted[label];
    let mut grad: Vec<f64> = shifted.iter().map(|&s| (s - log_sum).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Euclidean distance with gradients wrt both arguments.
///
/// At coincident points the gradient is defined as zero.
pub fn euclidean_distance(u: &[f64], v: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if u.len() != v.len() {
        return Err(shape_err!("distance between {} and {} dims", u.len(), v.len()));
    }
    let d = distance(u, v);
    if d == 0.0 {
        return Ok((0.0, vec![0.0; u.len()], vec![0.0; u.len()]));
    }
    let gu: Vec<f64> = u.iter().zip(v).map(|(a, b)| (a - b) / d).collect();
    let gv = gu.iter().map(|g| -g).collect();
    Ok((d, gu, gv))
}

/// Distance only; callers must have checked the lengths.
#[inline]
pub fn distance(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Population variance (divide by N) and its gradient `2 (v_i - mean) / N`.
pub fn variance(values: &[f64]) -> Result<(f64, Vec<f64>)> {
    if values.len() < 2 {
        return Err(TceError::Precondition(format!(
            "variance needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let grads = values.iter().map(|v| 2.0 * (v - mean) / n).collect();
    Ok((var, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits() {
        let (loss, _) = softmax_cross_entropy(&[0.7; 4], 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_do_not_overflow() {
        let (loss, grad) = softmax_cross_entropy(&[1000.0, -1000.0], 0).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn cross_entropy_direct_formula() {
        // direct: -ln(e^3 / (e^1 + e^2 + e^3))
        let expected = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        let (loss, _) = softmax_cross_entropy(&[1.0, 2.0, 3.0], 2).unwrap();
        assert!((loss - expected).abs() < 1e-12);
        assert!((expected - 0.407_605_964_444_380_9).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_bad_label() {
        assert!(matches!(softmax_cross_entropy(&[1.0, 2.0], 2), Err(TceError::Index(_))));
    }

    #[test]
    fn distance_examples() {
        let (d, gu, gv) = euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert_eq!(d, 5.0);
        assert_eq!(gu, vec![-0.6, -0.8]);
        assert_eq!(gv, vec![0.6, 0.8]);
        let (d, gu, gv) = euclidean_distance(&[1.5, -2.0], &[1.5, -2.0]).unwrap();
        assert_eq!(d, 0.0);
        assert!(gu.iter().chain(&gv).all(|&g| g == 0.0));
        assert!(matches!(
            euclidean_distance(&[1.0], &[1.0, 2.0]),
            Err(TceError::Shape(_))
        ));
    }

    #[test]
    fn variance_examples() {
        assert_eq!(variance(&[2.5, 2.5, 2.5]).unwrap().0, 0.0);
        assert_eq!(variance(&[1.0, 3.0]).unwrap().0, 1.0);
        assert!(matches!(variance(&[1.0]), Err(TceError::Precondition(_))));
    }

    proptest! {
        #[test]
        fn cross_entropy_grad_sums_to_zero(
            logits in prop::collection::vec(-50.0f64..50.0, 2..12),
            pick in 0usize..100,
        ) {
            let label = pick % logits.len();
            let (loss, grad) = softmax_cross_entropy(&logits, label).unwrap();
            prop_assert!(loss >= 0.0);
            prop_assert!(grad.iter().sum::<f64>().abs() < 1e-12);
        }

        #[test]
        fn distance_symmetric_and_triangle(
            pts in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 5), 3),
        ) {
            let (a, b, c) = (&pts[0], &pts[1], &pts[2]);
            prop_assert_eq!(distance(a, b), distance(b, a));
            prop_assert!(distance(a, c) <= distance(a, b) + distance(b, c) + 1e-12);
        }

        #[test]
        fn variance_shift_invariant(
            values in prop::collection::vec(-100.0f64..100.0, 2..50),
            shift in -1000.0f64..1000.0,
        ) {
            let (v, _) = variance(&values).unwrap();
            let shifted: Vec<f64> = values.iter().map(|x| x + shift).collect();
            let (vs, _) = variance(&shifted).unwrap();
            prop_assert!(v >= 0.0);
            prop_assert!((v - vs).abs() < 1e-9);
        }
    }
}
