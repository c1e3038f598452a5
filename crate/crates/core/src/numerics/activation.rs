/// Logistic function, evaluated in the branch that never exponentiates a
/// positive argument.
///
/// The lower tail is clamped to `f64::MIN_POSITIVE` so the result is always
/// strictly positive and `ln(sigmoid(x))` stays finite.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.max(f64::MIN_POSITIVE)
}

/// Softplus `ln(1 + e^x)` as `max(x, 0) + ln(1 + e^{-|x|})`.
///
/// Clamped below at `f64::MIN_POSITIVE` for the same reason as [`sigmoid`].
#[inline]
pub fn log1p_exp(x: f64) -> f64 {
    (x.max(0.0) + (-x.abs()).exp().ln_1p()).max(f64::MIN_POSITIVE)
}

pub fn sigmoid_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid(v)).collect()
}

pub fn log1p_exp_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| log1p_exp(v)).collect()
}

/// `ln Σ e^{x_i}`; `-inf` for an empty slice.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + x.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn sigmoid_symmetry_at_three() {
        let a = sigmoid(-3.0);
        let b = sigmoid(3.0);
        assert!((a - 0.047_425_873_177_566_78).abs() < 1e-15);
        assert!((b - 0.952_574_126_822_433_2).abs() < 1e-15);
        assert!((a + b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_extreme_negative_is_positive() {
        let s = sigmoid(-800.0);
        assert!(s > 0.0 && s.is_finite());
    }

    #[test]
    fn softplus_reference_values() {
        assert!((log1p_exp(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(log1p_exp(1000.0), 1000.0);
        let tiny = log1p_exp(-1000.0);
        assert!(tiny > 0.0 && tiny < 1e-300);
    }

    #[test]
    fn log_sum_exp_handles_large_values() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn sigmoid_complement(x in -30.0f64..30.0) {
            prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn softplus_identity(x in -30.0f64..30.0) {
            prop_assert!((log1p_exp(x) - log1p_exp(-x) - x).abs() < 1e-9);
        }

        #[test]
        fn finite_on_extreme_inputs(x in -1e3f64..1e3) {
            prop_assert!(sigmoid(x).is_finite());
            prop_assert!(log1p_exp(x).is_finite());
            prop_assert!(sigmoid(x) > 0.0 && sigmoid(x) <= 1.0);
        }
    }
}
