use super::ops::{sigmoid, softplus};
use crate::error::{invalid, Result};

/// Label smoothing toward 0.5: `y' = y (1 - eps) + eps / 2`.
pub fn smoothed_target(label: u8, eps: f64) -> Result<f64> {
    if label > 1 {
        return Err(invalid!("label must be 0 or 1, got {label}"));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(invalid!("smoothing factor {eps} outside [0, 1)"));
    }
    Ok(label as f64 * (1.0 - eps) + eps / 2.0)
}

/// Binary cross-entropy of probability `p` against the smoothed target.
pub fn smoothed_bce_loss(p: f64, label: u8, eps: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid!("probability {p} outside (0, 1)"));
    }
    let y = smoothed_target(label, eps)?;
    Ok(-(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
}

/// d loss / d p for [`smoothed_bce_loss`].
pub fn smoothed_bce_grad(p: f64, label: u8, eps: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid!("probability {p} outside (0, 1)"));
    }
    let y = smoothed_target(label, eps)?;
    Ok(-y / p + (1.0 - y) / (1.0 - p))
}

/// Loss and d loss / d logit for `p = sigmoid(z)`, stable for large `|z|`.
pub(crate) fn bce_with_logit(z: f64, target: f64) -> (f64, f64) {
    (softplus(z) - target * z, sigmoid(z) - target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain_bce(p: f64, y: f64) -> f64 {
        -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
    }

    #[test]
    fn zero_smoothing_is_plain_bce() {
        for &p in &[0.01, 0.3, 0.5, 0.77, 0.999] {
            assert_eq!(smoothed_bce_loss(p, 1, 0.0).unwrap(), plain_bce(p, 1.0));
            assert_eq!(smoothed_bce_loss(p, 0, 0.0).unwrap(), plain_bce(p, 0.0));
        }
    }

    #[test]
    fn smoothing_example() {
        // -(0.975 ln 0.975 + 0.025 ln 0.025)
        let got = smoothed_bce_loss(0.975, 1, 0.05).unwrap();
        assert!((got - 0.116_906_849_137_531).abs() < 1e-8, "{got}");
    }

    #[test]
    fn label_symmetry() {
        for &p in &[0.1, 0.42, 0.9] {
            let a = smoothed_bce_loss(p, 1, 0.05).unwrap();
            let b = smoothed_bce_loss(1.0 - p, 0, 0.05).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(smoothed_bce_loss(0.0, 1, 0.0).is_err());
        assert!(smoothed_bce_loss(1.0, 1, 0.0).is_err());
        assert!(smoothed_bce_loss(0.5, 2, 0.0).is_err());
        assert!(smoothed_bce_loss(0.5, 1, 1.0).is_err());
    }

    #[test]
    fn logit_form_matches_probability_form() {
        for &z in &[-4.0, -0.3, 0.0, 1.7, 6.0] {
            let p = sigmoid(z);
            let (l, dz) = bce_with_logit(z, 0.975);
            assert!((l - smoothed_bce_loss(p, 1, 0.05).unwrap()).abs() < 1e-12);
            let dp = smoothed_bce_grad(p, 1, 0.05).unwrap();
            assert!((dz - dp * p * (1.0 - p)).abs() < 1e-12);
        }
    }
}
