//! Scores for predictions against targets.

use crate::cart::{Predictions, Targets};
use crate::error::{Error, Result};

/// Fraction of equal entries.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_len(pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

pub fn mean_squared_error(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_len(pred.len(), truth.len())?;
    Ok(pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / truth.len() as f64)
}

/// Accuracy for class targets, mean squared error for real targets.
pub fn score(pred: &Predictions, truth: &Targets) -> Result<f64> {
    match (pred, truth) {
        (Predictions::Classes(p), Targets::Classes(t)) => accuracy(p, t),
        (Predictions::Values(p), Targets::Values(t)) => mean_squared_error(p, t),
        _ => Err(Error::TaskMismatch("predictions and targets differ in task".into())),
    }
}

/// Fraction of rows on which two prediction vectors agree exactly.
pub fn agreement(a: &Predictions, b: &Predictions) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.is_empty() {
        return Ok(1.0);
    }
    let same = match (a, b) {
        (Predictions::Classes(x), Predictions::Classes(y)) => x.iter().zip(y).filter(|(p, q)| p == q).count(),
        (Predictions::Values(x), Predictions::Values(y)) => x.iter().zip(y).filter(|(p, q)| p == q).count(),
        _ => return Err(Error::TaskMismatch("predictions differ in task".into())),
    };
    Ok(same as f64 / a.len() as f64)
}

fn check_len(found: usize, expected: usize) -> Result<()> {
    if expected == 0 {
        return Err(Error::EmptyLabels);
    }
    if found != expected {
        return Err(Error::LengthMismatch {
            what: "predictions",
            expected,
            found,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
        assert_eq!(mean_squared_error(&[1.0, 2.0], &[0.0, 4.0]).unwrap(), 2.5);
        assert!(accuracy(&[0], &[0, 1]).is_err());
        assert!(accuracy(&[], &[]).is_err());
        let a = Predictions::Classes(vec![0, 1]);
        assert_eq!(agreement(&a, &Predictions::Classes(vec![0, 0])).unwrap(), 0.5);
        assert!(score(&a, &Targets::Values(vec![0.0, 1.0])).is_err());
    }
}
