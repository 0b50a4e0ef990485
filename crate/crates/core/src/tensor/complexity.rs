//! Dominant-term operation counts for self-attention and convolution.
//!
//! Multi-head self-attention over a length-`n` sequence of depth `d` with `h`
//! heads scales as `n² · d · h`; a convolution with `f` filters of size `k`
//! over the same sequence scales as `n · d · k · f`. Only the leading terms
//! are modelled; no constants or wall-time claims.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sequence length `n`, depth `d`, heads `h`, kernel size `k`, filters `f`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityParams {
    pub n: u64,
    pub d: u64,
    pub h: u64,
    pub k: u64,
    pub f: u64,
}

impl ComplexityParams {
    pub fn new(n: u64, d: u64, h: u64, k: u64, f: u64) -> Result<Self> {
        let p = ComplexityParams { n, d, h, k, f };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("n", self.n), ("d", self.d), ("h", self.h), ("k", self.k), ("f", self.f)] {
            if v == 0 {
                return Err(Error::invalid("complexity", format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// `n² · d · h`.
pub fn mhsa_flops(p: &ComplexityParams) -> u64 {
    p.n * p.n * p.d * p.h
}

/// `n · d · k · f`.
pub fn conv_flops(p: &ComplexityParams) -> u64 {
    p.n * p.d * p.k * p.f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_counts() {
        let p = ComplexityParams::new(16, 8, 2, 9, 4).unwrap();
        assert_eq!(mhsa_flops(&p), 4096);
        assert_eq!(conv_flops(&p), 4608);
    }

    #[test]
    fn zero_rejected() {
        assert!(ComplexityParams::new(0, 1, 1, 1, 1).is_err());
    }
}
