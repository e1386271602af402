use crate::error::{Error, Result};

/// Cycle-consistency weight used for the generator objective.
pub const DEFAULT_LAMBDA_CYC: f64 = 10.0;
/// Identity weight used for the generator objective.
pub const DEFAULT_LAMBDA_IDE: f64 = 5.0;

/// `L_gan + λ1·L_cyc + λ2·L_ide` for precomputed terms.
pub fn composite_loss(gan: f64, cyc: f64, ide: f64, lambda_cyc: f64, lambda_ide: f64) -> Result<f64> {
    if !(lambda_cyc >= 0.0 && lambda_ide >= 0.0) {
        return Err(Error::invalid(format!(
            "loss weights must be non-negative, got ({lambda_cyc}, {lambda_ide})"
        )));
    }
    Ok(gan + lambda_cyc * cyc + lambda_ide * ide)
}

pub fn composite_loss_default(gan: f64, cyc: f64, ide: f64) -> f64 {
    gan + DEFAULT_LAMBDA_CYC * cyc + DEFAULT_LAMBDA_IDE * ide
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        assert_eq!(composite_loss(1.0, 1.0, 1.0, 10.0, 5.0).unwrap(), 16.0);
        assert_eq!(composite_loss(0.0, 0.0, 0.0, 3.0, 7.0).unwrap(), 0.0);
        assert_eq!(composite_loss_default(0.5, 0.2, 0.1), 0.5 + 2.0 + 0.5);
        assert_eq!((DEFAULT_LAMBDA_CYC, DEFAULT_LAMBDA_IDE), (10.0, 5.0));
        assert!(composite_loss(1.0, 1.0, 1.0, -1.0, 5.0).is_err());
        assert!(composite_loss(1.0, 1.0, 1.0, 1.0, f64::NAN).is_err());
    }
}
