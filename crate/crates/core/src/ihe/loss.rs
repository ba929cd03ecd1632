//! Sequence loss over the iterates.

use super::IterationTrace;

/// `sum_k alpha^(K-k-1) * err_k` for per-iteration errors `err_0..err_{K-1}`.
pub fn sequence_loss(errors: &[f64], alpha: f64) -> f64 {
    let k = errors.len();
    errors
        .iter()
        .enumerate()
        .map(|(i, e)| alpha.powi((k - i - 1) as i32) * e)
        .sum()
}

fn mean_abs(a: &[f64; 8], b: &[f64; 8]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 8.0
}

/// The training loss recomputed from a stored trace: one sequence loss per
/// supervised scale, summed.
pub fn trace_loss(trace: &IterationTrace, alpha: f64) -> f64 {
    trace
        .targets
        .iter()
        .map(|(scale, target)| {
            let errs: Vec<f64> = trace
                .records
                .iter()
                .filter(|r| r.scale == *scale)
                .map(|r| mean_abs(&r.state, target))
                .collect();
            sequence_loss(&errs, alpha)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_examples() {
        assert!((sequence_loss(&[1.0, 0.5], 0.85) - 1.35).abs() < 1e-12);
        assert_eq!(sequence_loss(&[2.5], 0.85), 2.5);
        assert_eq!(sequence_loss(&[0.0; 6], 0.85), 0.0);
    }

    proptest::proptest! {
        #[test]
        fn weights_decay_towards_early_iterations(errs in proptest::collection::vec(0.0f64..10.0, 1..12), alpha in 0.0f64..1.0) {
            let l = sequence_loss(&errs, alpha);
            proptest::prop_assert!(l >= 0.0);
            // the last iterate always carries weight one
            let mut last = vec![0.0; errs.len()];
            *last.last_mut().unwrap() = 1.0;
            proptest::prop_assert_eq!(sequence_loss(&last, alpha), 1.0);
            let scaled: Vec<f64> = errs.iter().map(|e| 2.0 * e).collect();
            proptest::prop_assert!((sequence_loss(&scaled, alpha) - 2.0 * l).abs() <= 1e-12 * (1.0 + l));
            let bound: f64 = errs.iter().sum();
            proptest::prop_assert!(l <= bound + 1e-12);
        }
    }
}
