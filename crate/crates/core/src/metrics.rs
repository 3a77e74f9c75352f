//! Regression metrics for RUL predictions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("length mismatch: {truth} targets vs {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("no values to evaluate")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: f64,
    /// Square root of the mean squared error.
    pub paper_mse: f64,
    pub plain_mse: f64,
    pub n: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }
}

pub fn evaluate(y_true: &[f64], y_pred: &[f64]) -> Result<EvalReport, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch {
            truth: y_true.len(),
            pred: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = y_true.len() as f64;
    let (abs, sq) = y_true
        .iter()
        .zip(y_pred)
        .fold((0.0, 0.0), |(a, s), (y, p)| (a + (y - p).abs(), s + (y - p) * (y - p)));
    let plain_mse = sq / n;
    Ok(EvalReport {
        mae: abs / n,
        paper_mse: plain_mse.sqrt(),
        plain_mse,
        n: y_true.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let r = evaluate(&[0.3, 0.7], &[0.3, 0.7]).unwrap();
        assert_eq!((r.mae, r.paper_mse, r.plain_mse), (0.0, 0.0, 0.0));

        let r = evaluate(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!((r.mae, r.paper_mse), (1.0, 1.0));

        let r = evaluate(&[0.5], &[0.25]).unwrap();
        assert_eq!((r.mae, r.paper_mse, r.plain_mse), (0.25, 0.25, 0.0625));
    }

    #[test]
    fn errors() {
        assert_eq!(evaluate(&[], &[]), Err(MetricsError::EmptyInput));
        assert_eq!(
            evaluate(&[1.0], &[1.0, 2.0]),
            Err(MetricsError::LengthMismatch { truth: 1, pred: 2 })
        );
    }

    fn pairs() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..50)
    }

    proptest! {
        #[test]
        fn mae_never_exceeds_rmse(p in pairs()) {
            let (y, q): (Vec<f64>, Vec<f64>) = p.into_iter().unzip();
            let r = evaluate(&y, &q).unwrap();
            prop_assert!(r.mae <= r.paper_mse * (1.0 + 1e-12) + 1e-15);
            prop_assert!((r.paper_mse - r.plain_mse.sqrt()).abs() <= 1e-12 * r.paper_mse.max(1e-300));
        }

        #[test]
        fn permutation_invariant(p in pairs(), rot in 0usize..50) {
            let (y, q): (Vec<f64>, Vec<f64>) = p.iter().copied().unzip();
            let k = rot % p.len();
            let mut rotated = p.clone();
            rotated.rotate_left(k);
            let (y2, q2): (Vec<f64>, Vec<f64>) = rotated.into_iter().unzip();
            let a = evaluate(&y, &q).unwrap();
            let b = evaluate(&y2, &q2).unwrap();
            prop_assert!((a.mae - b.mae).abs() <= 1e-12 * a.mae.max(1.0));
            prop_assert!((a.plain_mse - b.plain_mse).abs() <= 1e-12 * a.plain_mse.max(1.0));
        }
    }
}
