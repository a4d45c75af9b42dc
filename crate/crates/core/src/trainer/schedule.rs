use crate::error::{Error, Result};

/// Cosine annealing from `lr_init` at iteration 0 to `lr_final` at `total`.
pub fn lr_at(iter: usize, total: usize, lr_init: f64, lr_final: f64) -> Result<f64> {
    if total == 0 || iter > total {
        return Err(Error::param(format!("iteration {iter} outside [0, {total}]")));
    }
    let t = iter as f64 / total as f64;
    Ok(lr_final + 0.5 * (lr_init - lr_final) * (1.0 + (std::f64::consts::PI * t).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(lr_at(0, 300_000, 1e-4, 5e-6).unwrap(), 1e-4);
        assert!((lr_at(300_000, 300_000, 1e-4, 5e-6).unwrap() - 5e-6).abs() < 1e-18);
        let mid = lr_at(150_000, 300_000, 1e-4, 5e-6).unwrap();
        assert!((mid - 5.25e-5).abs() < 1e-15, "{mid}");
    }

    #[test]
    fn out_of_range_is_rejected() {
        assert!(lr_at(11, 10, 1e-4, 5e-6).is_err());
        assert!(lr_at(0, 0, 1e-4, 5e-6).is_err());
    }

    proptest! {
        #[test]
        fn monotone_non_increasing(total in 1usize..5000, a in 0usize..5000, b in 0usize..5000) {
            let (a, b) = (a.min(total), b.min(total));
            let (lo, hi) = (a.min(b), a.max(b));
            let l_lo = lr_at(lo, total, 1e-4, 5e-6).unwrap();
            let l_hi = lr_at(hi, total, 1e-4, 5e-6).unwrap();
            prop_assert!(l_hi <= l_lo);
            prop_assert!((5e-6..=1e-4).contains(&l_hi));
        }
    }
}
