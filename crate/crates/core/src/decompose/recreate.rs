//! Rebuilding a target mechanism's output from common and residual outputs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mechanism::LinearGaussianMechanism;
use crate::psd::{self, SymMatrix, Tolerances};
use crate::rng::{self, StreamRng};

/// Top-up covariance eigenvalues below `-TOPUP_RTOL * scale(Σ_target)` mean
/// the common/residual pair does not actually answer the target.
const TOPUP_RTOL: f64 = 1e-6;

/// Linear maps `A*`, `A′` and the top-up noise that together turn
/// `(o*, o′)` into a sample of the target mechanism.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// `m_target × m_common`.
    pub a_common: DMatrix<f64>,
    /// `m_target × m_residual`.
    pub a_residual: DMatrix<f64>,
    /// `Σ_t − A*Σ_cA*ᵀ − A′Σ_rA′ᵀ`, clamped PSD.
    pub topup_covariance: SymMatrix,
    topup_factor: DMatrix<f64>,
}

impl Reconstruction {
    /// With `S = Σ_t^{1/2}` and `W = B_tᵀ S⁻¹`:
    /// `A* = S W⁺ B_cᵀ Σ_c⁻¹` and `A′ = S W⁺ B_rᵀ Σ_r⁻¹`.
    pub fn new(
        target: &LinearGaussianMechanism,
        common: &LinearGaussianMechanism,
        residual: &LinearGaussianMechanism,
        tol: Tolerances,
    ) -> Result<Self> {
        let d = target.domain_size();
        if common.domain_size() != d || residual.domain_size() != d {
            return Err(Error::invalid(
                "target, common and residual must share a domain",
            ));
        }
        let m = target.num_queries();
        let eig = psd::sym_eig(target.covariance())?;
        let sqrt = eig.map(|l| l.max(0.0).sqrt());
        let inv_sqrt = eig.map(|l| 1.0 / l.sqrt());
        let w = target.query().transpose() * inv_sqrt.as_matrix();
        let lift = sqrt.as_matrix() * psd::pinv(&w, tol)?;

        let a_common = &lift * common.solve_covariance(common.query()).transpose();
        let a_residual = &lift * residual.solve_covariance(residual.query()).transpose();

        let explained = common
            .covariance()
            .congruence(&a_common)
            .add(&residual.covariance().congruence(&a_residual));
        let topup = target.covariance().sub(&explained);
        let scale = eig.spectral_scale();
        let topup_eig = psd::sym_eig(&topup)?;
        if m > 0 && topup_eig.min() < -TOPUP_RTOL * scale {
            return Err(Error::InternalInconsistency(format!(
                "top-up covariance has eigenvalue {:e} (scale {scale:e})",
                topup_eig.min()
            )));
        }
        let topup_covariance = topup_eig.map(|l| l.max(0.0));
        let topup_factor = psd::psd_factor(
            &topup,
            Some(scale),
            Tolerances {
                psd_rtol: TOPUP_RTOL,
                ..tol
            },
        )?;
        Ok(Reconstruction {
            a_common,
            a_residual,
            topup_covariance,
            topup_factor,
        })
    }

    /// `A*B_c + A′B_r`, which must equal `B_t`.
    pub fn mean_map(
        &self,
        common: &LinearGaussianMechanism,
        residual: &LinearGaussianMechanism,
    ) -> DMatrix<f64> {
        &self.a_common * common.query() + &self.a_residual * residual.query()
    }

    /// `A*o* + A′o′`, plus top-up noise when `rng` is given. Without top-up
    /// the result is the lower-noise estimate equivalent to the target.
    pub fn combine(
        &self,
        o_common: &DVector<f64>,
        o_residual: &DVector<f64>,
        rng: Option<&mut StreamRng>,
    ) -> Result<DVector<f64>> {
        if o_common.len() != self.a_common.ncols() {
            return Err(Error::invalid(format!(
                "common output has length {}, expected {}",
                o_common.len(),
                self.a_common.ncols()
            )));
        }
        if o_residual.len() != self.a_residual.ncols() {
            return Err(Error::invalid(format!(
                "residual output has length {}, expected {}",
                o_residual.len(),
                self.a_residual.ncols()
            )));
        }
        let mut out = &self.a_common * o_common + &self.a_residual * o_residual;
        if let Some(rng) = rng {
            let z = DVector::from_vec(rng::standard_normals(rng, self.topup_factor.ncols()));
            out += &self.topup_factor * z;
        }
        Ok(out)
    }
}

/// Recreates one sample of `target` from `(o*, o′)`, with top-up noise drawn
/// from `seed`.
pub fn recreate(
    o_common: &DVector<f64>,
    o_residual: &DVector<f64>,
    target: &LinearGaussianMechanism,
    common: &LinearGaussianMechanism,
    residual: &LinearGaussianMechanism,
    seed: u64,
    tol: Tolerances,
) -> Result<DVector<f64>> {
    let recon = Reconstruction::new(target, common, residual, tol)?;
    recon.combine(o_common, o_residual, Some(&mut rng::stream(seed, 0)))
}
