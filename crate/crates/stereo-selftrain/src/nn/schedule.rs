//! One-cycle learning-rate schedule.

/// Learning rate for `step` (0-based) of a run of `total` steps.
///
/// Linear warmup from `0.1 * peak` over the first `warmup_frac` of the run,
/// then cosine decay from `peak` down to `final_factor * peak`.
pub fn one_cycle_lr(step: u64, total: u64, peak: f64, warmup_frac: f64, final_factor: f64) -> f64 {
    if total == 0 {
        return peak;
    }
    let warmup = ((total as f64 * warmup_frac).round() as u64).max(1);
    if step < warmup {
        let t = (step + 1) as f64 / warmup as f64;
        return peak * (0.1 + 0.9 * t);
    }
    let span = (total - warmup).max(1) as f64;
    let t = ((step - warmup) as f64 / span).min(1.0);
    let floor = peak * final_factor;
    floor + (peak - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_reaches_peak_then_decays_to_floor() {
        let total = 1000;
        let peak = 1e-3;
        let at_warmup_end = one_cycle_lr(49, total, peak, 0.05, 0.01);
        assert!((at_warmup_end - peak).abs() < 1e-12);
        let final_lr = one_cycle_lr(total - 1, total, peak, 0.05, 0.01);
        assert!((final_lr - peak * 0.01).abs() < peak * 0.01);
        // Monotone decay after warmup.
        let a = one_cycle_lr(100, total, peak, 0.05, 0.01);
        let b = one_cycle_lr(500, total, peak, 0.05, 0.01);
        let c = one_cycle_lr(900, total, peak, 0.05, 0.01);
        assert!(a > b && b > c);
    }
}
