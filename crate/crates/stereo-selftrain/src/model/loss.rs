//! Supervised training loss over a prediction trace.

use crate::error::{Error, Result};
use crate::types::{DisparityMap, Grid, Mask, PredictionTrace};

fn check(trace: &PredictionTrace, gt: &DisparityMap, valid: &Mask) -> Result<()> {
    if trace.width() != gt.width() || trace.height() != gt.height() {
        return Err(Error::shape(
            gt.grid().shape_str(),
            format!("{}x{}", trace.height(), trace.width()),
        ));
    }
    if valid.width() != gt.width() || valid.height() != gt.height() {
        return Err(Error::shape(
            gt.grid().shape_str(),
            format!("{}x{}", valid.height(), valid.width()),
        ));
    }
    Ok(())
}

/// Exponentially weighted sum of per-iterate L1 errors:
/// `sum_k gamma^(n-k) * mean_valid |P^k - gt|` with 1-based `k`, so the
/// final iterate always has weight 1.
pub fn supervised_sequence_loss(
    trace: &PredictionTrace,
    gt: &DisparityMap,
    valid: &Mask,
    gamma: f64,
) -> Result<f64> {
    supervised_sequence_loss_impl(trace, gt, valid, gamma, None)
}

/// [`supervised_sequence_loss`] plus per-iterate gradients w.r.t. the
/// predictions (one grid per iterate).
pub fn supervised_sequence_loss_with_grad(
    trace: &PredictionTrace,
    gt: &DisparityMap,
    valid: &Mask,
    gamma: f64,
) -> Result<(f64, Vec<Grid>)> {
    let mut grads = vec![Grid::new(trace.width(), trace.height()); trace.len()];
    let loss = supervised_sequence_loss_impl(trace, gt, valid, gamma, Some(&mut grads))?;
    Ok((loss, grads))
}

fn supervised_sequence_loss_impl(
    trace: &PredictionTrace,
    gt: &DisparityMap,
    valid: &Mask,
    gamma: f64,
    mut grads: Option<&mut Vec<Grid>>,
) -> Result<f64> {
    check(trace, gt, valid)?;
    let n = trace.len();
    let n_valid = valid.count_valid();
    if n_valid == 0 {
        return Ok(0.0);
    }
    let gt_v = gt.grid().values();
    let mask = valid.values();
    let mut total = 0.0;
    for (k, pred) in trace.iterates().iter().enumerate() {
        let weight = gamma.powi((n - 1 - k) as i32);
        if weight == 0.0 {
            continue;
        }
        let pv = pred.grid().values();
        let mut sum = 0.0;
        for i in 0..pv.len() {
            if !mask[i] {
                continue;
            }
            let diff = pv[i] - gt_v[i];
            sum += diff.abs();
            if let Some(g) = grads.as_deref_mut() {
                g[k].values_mut()[i] = weight * diff.signum() / n_valid as f64;
            }
        }
        total += weight * sum / n_valid as f64;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn trace_of(maps: Vec<DisparityMap>) -> PredictionTrace {
        PredictionTrace::new(maps).unwrap()
    }

    #[test]
    fn perfect_trace_has_zero_loss() {
        let gt = DisparityMap::filled(3, 2, 4.0);
        let trace = trace_of(vec![gt.clone(), gt.clone()]);
        let valid = Mask::filled(3, 2, true);
        let loss = supervised_sequence_loss(&trace, &gt, &valid, 0.9).unwrap();
        assert_abs_diff_eq!(loss, 0.0);
    }

    #[test]
    fn two_iterate_weighting() {
        // per-iterate mean errors (1.0, 0.5); gamma 0.9 -> 0.9*1.0 + 1.0*0.5
        let gt = DisparityMap::filled(2, 1, 0.0);
        let p1 = DisparityMap::filled(2, 1, 1.0);
        let p2 = DisparityMap::filled(2, 1, 0.5);
        let trace = trace_of(vec![p1, p2]);
        let valid = Mask::filled(2, 1, true);
        let loss = supervised_sequence_loss(&trace, &gt, &valid, 0.9).unwrap();
        assert_abs_diff_eq!(loss, 1.4, epsilon = 1e-12);
    }

    #[test]
    fn gamma_zero_keeps_only_final_iterate() {
        let gt = DisparityMap::filled(2, 1, 0.0);
        let p1 = DisparityMap::filled(2, 1, 100.0);
        let p2 = DisparityMap::filled(2, 1, 0.5);
        let trace = trace_of(vec![p1, p2]);
        let valid = Mask::filled(2, 1, true);
        let loss = supervised_sequence_loss(&trace, &gt, &valid, 0.0).unwrap();
        assert_abs_diff_eq!(loss, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let gt = DisparityMap::filled(3, 1, 0.0);
        let p = DisparityMap::filled(2, 1, 0.0);
        let trace = trace_of(vec![p.clone(), p]);
        let valid = Mask::filled(3, 1, true);
        assert!(supervised_sequence_loss(&trace, &gt, &valid, 0.9).is_err());
    }
}
