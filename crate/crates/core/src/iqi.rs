//! IQ-imbalance model and its exact algebraic compensation.
//!
//! A gain imbalance `delta_g` and phase imbalance `delta_phi_deg` between the
//! I and Q arms turn a transmitted (or received) vector `v` into
//! `alpha*v + beta*conj(v)`; the conjugate term is the image interference.
//! With no imbalance, (alpha, beta) = (1, 0) and the transform is the
//! identity.

use ndarray::Array1;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Gain/phase imbalance of one RF chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqiParams {
    /// Dimensionless gain imbalance between the I and Q arms.
    pub delta_g: f64,
    /// Phase imbalance in degrees.
    pub delta_phi_deg: f64,
}

impl IqiParams {
    pub fn new(delta_g: f64, delta_phi_deg: f64) -> Self {
        Self {
            delta_g,
            delta_phi_deg,
        }
    }

    /// Direct-path coefficient alpha = cos(phi/2) + j*(dg/2)*sin(phi/2).
    pub fn alpha(&self) -> Complex64 {
        let half_phi = self.delta_phi_deg.to_radians() / 2.0;
        Complex64::new(half_phi.cos(), self.delta_g / 2.0 * half_phi.sin())
    }

    /// Image-path coefficient beta = -(dg/2)*cos(phi/2) - j*sin(phi/2).
    pub fn beta(&self) -> Complex64 {
        let half_phi = self.delta_phi_deg.to_radians() / 2.0;
        Complex64::new(-self.delta_g / 2.0 * half_phi.cos(), -half_phi.sin())
    }

    /// |alpha|^2 - |beta|^2; the compensation transform is singular when this
    /// vanishes.
    pub fn invertibility_margin(&self) -> f64 {
        self.alpha().norm_sqr() - self.beta().norm_sqr()
    }
}

/// Pass a vector through the imbalance model: alpha*v + beta*conj(v).
pub fn apply_iqi(v: &Array1<Complex64>, p: &IqiParams) -> Array1<Complex64> {
    let (alpha, beta) = (p.alpha(), p.beta());
    v.mapv(|x| alpha * x + beta * x.conj())
}

/// Solve for the pre-distorted vector `c` with apply_iqi(c) == target, via the
/// inverse of the 2x2 block [[alpha, beta], [conj(beta), conj(alpha)]].
pub fn exact_compensation(target: &Array1<Complex64>, p: &IqiParams) -> Result<Array1<Complex64>> {
    let (alpha, beta) = (p.alpha(), p.beta());
    let det = alpha.norm_sqr() - beta.norm_sqr();
    if det.abs() < 1e-12 {
        return Err(Error::SingularIqi {
            delta_g: p.delta_g,
            delta_phi_deg: p.delta_phi_deg,
        });
    }
    // First block row of the inverse applied to [target; conj(target)]:
    // c = (conj(alpha)*t - beta*conj(t)) / (|alpha|^2 - |beta|^2).
    Ok(target.mapv(|t| (alpha.conj() * t - beta * t.conj()) / det))
}
