//! Likelihood-ratio test between nested fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::chi_squared_upper_quantile;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrtOutcome {
    /// `λ = l_stationary − l_nonstationary`.
    pub lambda: f64,
    /// `c = −½ F⁻¹_{χ²_df}(1 − significance)`.
    pub critical_value: f64,
    pub df: u32,
    pub significance: f64,
    /// True iff `λ < c`.
    pub reject: bool,
}

pub fn likelihood_ratio_test(
    l_stationary: f64,
    l_nonstationary: f64,
    df: u32,
    significance: f64,
) -> Result<LrtOutcome> {
    if df == 0 {
        return Err(Error::invalid("degrees of freedom must be positive"));
    }
    if !(significance > 0.0 && significance < 1.0) {
        return Err(Error::invalid("significance must lie in (0, 1)"));
    }
    let c = -0.5 * chi_squared_upper_quantile(df as f64, significance);
    let lambda = l_stationary - l_nonstationary;
    Ok(LrtOutcome {
        lambda,
        critical_value: c,
        df,
        significance,
        reject: lambda < c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_value_72() {
        let o = likelihood_ratio_test(0.0, 0.0, 72, 1e-4).unwrap();
        assert!((o.critical_value + 62.688).abs() < 1e-3);
        assert!(!o.reject);
    }

    #[test]
    fn large_gap_rejects() {
        let o = likelihood_ratio_test(2.652e6, 2.907e6, 72, 1e-4).unwrap();
        assert!((o.lambda + 2.55e5).abs() < 1.0);
        assert!(o.reject);
    }

    #[test]
    fn zero_df_is_an_error() {
        assert!(likelihood_ratio_test(0.0, 1.0, 0, 0.05).is_err());
    }
}
