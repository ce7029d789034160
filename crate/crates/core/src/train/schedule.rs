use std::f64::consts::PI;

/// Linear warmup from 0 to `peak` over `warmup` steps, then cosine decay to
/// `final_lr` at `total`. Steps past `total` stay at `final_lr`.
pub fn lr_at(step: usize, peak: f64, final_lr: f64, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    final_lr + 0.5 * (peak - final_lr) * (1.0 + (PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn anchor_points() {
        let f = |s| lr_at(s, 1e-3, 1e-4, 200, 6075);
        assert!((f(0) - 0.0).abs() < 1e-15);
        assert!((f(100) - 0.5e-3).abs() < 1e-15);
        assert!((f(200) - 1e-3).abs() < 1e-15);
        assert!((f(6075) - 1e-4).abs() < 1e-15);
        let mid = 200 + (6075 - 200) / 2;
        assert!((f(mid) - 0.55e-3).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn bounded_and_monotone_after_warmup(total in 201usize..5000, a in 0usize..6000, b in 0usize..6000) {
            let (lo, hi) = (a.min(b), a.max(b));
            let f = |s| lr_at(s, 1e-3, 1e-4, 200, total);
            prop_assert!(f(lo) >= 0.0 && f(lo) <= 1e-3 + 1e-18);
            if lo >= 200 {
                prop_assert!(f(hi) <= f(lo) + 1e-18);
            }
        }
    }
}
