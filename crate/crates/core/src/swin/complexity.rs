//! Multiply-accumulate counts of global and window attention over an
//! `h x w` token grid with `C` channels.

use crate::error::{Error, Result};

fn overflow() -> Error {
    Error::InvalidValue("complexity exceeds 128-bit range".into())
}

fn positive(vals: &[(&str, u64)]) -> Result<()> {
    for (name, v) in vals {
        if *v == 0 {
            return Err(Error::InvalidValue(format!("{name} must be positive")));
        }
    }
    Ok(())
}

/// Global self-attention: `4 h w C^2 + 2 (h w)^2 C`.
pub fn complexity_msa(h: u64, w: u64, c: u64) -> Result<u128> {
    positive(&[("h", h), ("w", w), ("C", c)])?;
    let (hw, c) = (h as u128 * w as u128, c as u128);
    let proj = hw.checked_mul(c).and_then(|v| v.checked_mul(c)).and_then(|v| v.checked_mul(4)).ok_or_else(overflow)?;
    let attn = hw
        .checked_mul(hw)
        .and_then(|v| v.checked_mul(c))
        .and_then(|v| v.checked_mul(2))
        .ok_or_else(overflow)?;
    proj.checked_add(attn).ok_or_else(overflow)
}

/// Window self-attention with `M x M` windows: `4 h w C^2 + 2 M^2 h w C`.
pub fn complexity_wmsa(h: u64, w: u64, c: u64, m: u64) -> Result<u128> {
    positive(&[("h", h), ("w", w), ("C", c), ("M", m)])?;
    let (hw, c, m) = (h as u128 * w as u128, c as u128, m as u128);
    let proj = hw.checked_mul(c).and_then(|v| v.checked_mul(c)).and_then(|v| v.checked_mul(4)).ok_or_else(overflow)?;
    let attn = hw
        .checked_mul(m)
        .and_then(|v| v.checked_mul(m))
        .and_then(|v| v.checked_mul(c))
        .and_then(|v| v.checked_mul(2))
        .ok_or_else(overflow)?;
    proj.checked_add(attn).ok_or_else(overflow)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cases() {
        assert_eq!(complexity_msa(1, 1, 1).unwrap(), 6);
        assert_eq!(complexity_wmsa(1, 1, 1, 1).unwrap(), 6);
        assert!(complexity_msa(0, 1, 1).is_err());
        assert!(complexity_wmsa(1, 1, 1, 0).is_err());
    }

    #[test]
    fn scaling() {
        // The quadratic term quadruples and the window term doubles with hw.
        let quad = |h, w| complexity_msa(h, w, 96).unwrap() - 4 * (h * w) as u128 * 96 * 96;
        assert_eq!(quad(56, 112), 4 * quad(56, 56));
        assert_eq!(
            complexity_wmsa(56, 112, 96, 7).unwrap(),
            2 * complexity_wmsa(56, 56, 96, 7).unwrap()
        );
    }

    #[test]
    fn overflow_is_reported() {
        assert!(complexity_msa(u64::MAX, u64::MAX, u64::MAX).is_err());
    }
}
