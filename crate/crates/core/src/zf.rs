//! Zero-forcing precoding for the 2x2 network MIMO link.
//!
//! With `W = H^-1` every user sees an interference-free channel, so user `i`
//! gets `log2(1 + p_i / noise)` while BS `k` radiates `sum_i |w_ki|^2 p_i`.

use crate::channel::ChannelMatrix;
use crate::error::{domain, Error, Result};
use crate::math;
use num_complex::Complex64;

/// Precoder entries `w[k][i]`: row `k` is the BS, column `i` the user.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrecodingMatrix {
    pub entries: [[Complex64; 2]; 2],
}

/// `|w_ki|^2`, indexed `[bs][user]`.
pub type RowPowers = [[f64; 2]; 2];

/// Exact 2x2 inverse via the adjugate.
pub fn zf_weights(h: &ChannelMatrix) -> Result<PrecodingMatrix> {
    let [[a, b], [c, d]] = h.entries;
    let det = a * d - b * c;
    let scale = h.frobenius_sq();
    if !(det.norm_sqr() > 0.0) || det.norm() <= 1e-12 * scale {
        return Err(Error::Singular { det: det.norm() });
    }
    let inv = Complex64::new(1.0, 0.0) / det;
    Ok(PrecodingMatrix {
        entries: [[d * inv, -b * inv], [-c * inv, a * inv]],
    })
}

pub fn row_powers(w: &PrecodingMatrix) -> RowPowers {
    let e = &w.entries;
    [
        [e[0][0].norm_sqr(), e[0][1].norm_sqr()],
        [e[1][0].norm_sqr(), e[1][1].norm_sqr()],
    ]
}

pub fn zf_rate(power: f64, noise: f64) -> Result<f64> {
    if !(power >= 0.0) {
        return Err(domain("transmit power must be non-negative"));
    }
    if !(noise > 0.0) {
        return Err(domain("noise variance must be positive"));
    }
    Ok(math::log2_1p(power / noise))
}

/// Eigenvalues of `H H^H`, largest first.
pub fn gram_eigenvalues(h: &ChannelMatrix) -> (f64, f64) {
    let trace = h.frobenius_sq();
    let det = h.det().norm_sqr();
    let half = 0.5 * trace;
    let disc = (half * half - det).max(0.0);
    let rho1 = half + math::sqrt(disc);
    // product form for the small root avoids cancellation
    let rho2 = if rho1 > 0.0 { (det / rho1).max(0.0) } else { 0.0 };
    (rho1, rho2)
}

impl PrecodingMatrix {
    /// `H W`, used to check the zero-forcing property.
    pub fn apply_to(&self, h: &ChannelMatrix) -> [[Complex64; 2]; 2] {
        let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = h.entries[i][0] * self.entries[0][j] + h.entries[i][1] * self.entries[1][j];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn identity_inverse() {
        let w = zf_weights(&ChannelMatrix::identity()).unwrap();
        assert_eq!(w.entries, ChannelMatrix::identity().entries);
    }

    #[test]
    fn diagonal_inverse() {
        let h = ChannelMatrix::diag(2.0, 4.0);
        let w = zf_weights(&h).unwrap();
        assert!((w.entries[0][0] - c(0.5, 0.0)).norm() < 1e-15);
        assert!((w.entries[1][1] - c(0.25, 0.0)).norm() < 1e-15);
        assert_eq!(w.entries[0][1], c(0.0, 0.0));
    }

    #[test]
    fn upper_triangular_inverse_multiplies_back() {
        let h = ChannelMatrix::from_real([[1.0, 1.0], [0.0, 1.0]]);
        let w = zf_weights(&h).unwrap();
        let expect = [[1.0, -1.0], [0.0, 1.0]];
        for k in 0..2 {
            for i in 0..2 {
                assert!((w.entries[k][i] - c(expect[k][i], 0.0)).norm() < 1e-15);
            }
        }
        let prod = w.apply_to(&h);
        for i in 0..2 {
            for j in 0..2 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((prod[i][j] - c(target, 0.0)).norm() < 1e-12);
            }
        }
        assert_eq!(row_powers(&w), [[1.0, 1.0], [0.0, 1.0]]);
    }

    #[test]
    fn singular_is_rejected() {
        let h = ChannelMatrix::from_real([[1.0, 2.0], [2.0, 4.0]]);
        assert!(matches!(zf_weights(&h), Err(Error::Singular { .. })));
    }

    #[test]
    fn rates() {
        assert_eq!(zf_rate(0.0, 1.0).unwrap(), 0.0);
        assert!((zf_rate(2.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((zf_rate(3.0, 1.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(zf_rate(-1.0, 1.0).is_err());
        assert!(zf_rate(1.0, 0.0).is_err());
    }

    #[test]
    fn eigenvalues_of_simple_matrices() {
        assert_eq!(gram_eigenvalues(&ChannelMatrix::identity()), (1.0, 1.0));
        let (r1, r2) = gram_eigenvalues(&ChannelMatrix::diag(2.0, 3.0));
        assert!((r1 - 9.0).abs() < 1e-12 && (r2 - 4.0).abs() < 1e-12);
    }
}
