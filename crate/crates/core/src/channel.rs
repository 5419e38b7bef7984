//! Correlated Rayleigh channels with a Kronecker-structured estimation error.
//!
//! The true phase-`j` channel is `H_j = Ĥ_j + ΔH_j` where
//! `ΔH_j = Σ_j^{1/2} G Ψ_j^{1/2}` and `G` has i.i.d. CN(0, 1) entries. The
//! estimate is drawn with covariance `((1-σ_e²)/σ_e²) Σ_j ⊗ Ψ_jᵀ` so that the
//! true channel has unit-variance entries.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{c, gaussian_matrix, identity, psd_sqrt, zeros, ComplexMatrix};

/// Antenna / user counts: BS antennas `nt`, RS antennas `nr`, users `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nt: usize,
    pub nr: usize,
    pub k: usize,
}

impl Dims {
    pub fn new(nt: usize, nr: usize, k: usize) -> Self {
        Dims { nt, nr, k }
    }

    pub fn square(n: usize) -> Self {
        Dims { nt: n, nr: n, k: n }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nt == 0 || self.nr == 0 || self.k == 0 {
            return invalid(format!("all dimensions must be positive, got {self:?}"));
        }
        if self.k > self.nt.min(self.nr) {
            return invalid(format!("K = {} exceeds min(N_t, N_r) for {self:?}", self.k));
        }
        Ok(())
    }
}

/// Exponential correlation matrix with entries `coeff^|i-j|`.
pub fn exp_corr_matrix(n: usize, coeff: f64) -> Result<ComplexMatrix> {
    if n == 0 {
        return invalid("correlation matrix dimension must be at least 1");
    }
    if !(0.0..1.0).contains(&coeff) {
        return invalid(format!("correlation coefficient {coeff} outside [0, 1)"));
    }
    Ok(ComplexMatrix::from_fn(n, n, |i, j| {
        c(coeff.powi(i.abs_diff(j) as i32), 0.0)
    }))
}

/// Second-order statistics of the channel estimation error.
///
/// `psi1` (N_t×N_t) and `psi2` (N_r×N_r) are the transmit-side correlations,
/// `sigma1` (N_r×N_r) and `sigma2` (K×K) the receive-side error covariances,
/// already scaled by `sigma_e_sq`. The unit-diagonal receive correlations are
/// kept as well so the perfect-CSI case (`sigma_e_sq = 0`) can still shape
/// the channel estimate.
#[derive(Debug, Clone)]
pub struct ErrorStats {
    pub psi1: ComplexMatrix,
    pub psi2: ComplexMatrix,
    pub sigma1: ComplexMatrix,
    pub sigma2: ComplexMatrix,
    pub sigma_e_sq: f64,
    pub theta: f64,
    pub rho: f64,
    rx_corr1: ComplexMatrix,
    rx_corr2: ComplexMatrix,
    roots: Roots,
}

#[derive(Debug, Clone)]
struct Roots {
    psi1: ComplexMatrix,
    psi2: ComplexMatrix,
    rx1: ComplexMatrix,
    rx2: ComplexMatrix,
}

impl ErrorStats {
    /// General constructor from transmit correlations and unit-diagonal
    /// receive correlations.
    pub fn new(
        psi1: ComplexMatrix,
        psi2: ComplexMatrix,
        rx_corr1: ComplexMatrix,
        rx_corr2: ComplexMatrix,
        sigma_e_sq: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&sigma_e_sq) {
            return invalid(format!("sigma_e^2 = {sigma_e_sq} outside [0, 1)"));
        }
        let roots = Roots {
            psi1: psd_sqrt(&psi1)?,
            psi2: psd_sqrt(&psi2)?,
            rx1: psd_sqrt(&rx_corr1)?,
            rx2: psd_sqrt(&rx_corr2)?,
        };
        let scale = c(sigma_e_sq, 0.0);
        Ok(ErrorStats {
            sigma1: &rx_corr1 * scale,
            sigma2: &rx_corr2 * scale,
            psi1,
            psi2,
            sigma_e_sq,
            theta: f64::NAN,
            rho: f64::NAN,
            rx_corr1,
            rx_corr2,
            roots,
        })
    }

    /// Exponential model: `Ψ_1 = Ψ_2` with coefficient `theta`, `Σ_1` with
    /// coefficient `rho`. `Σ_2` is `σ_e² I` unless `rho_on_sigma2` is set.
    pub fn exponential(
        dims: Dims,
        sigma_e_sq: f64,
        theta: f64,
        rho: f64,
        rho_on_sigma2: bool,
    ) -> Result<Self> {
        let rx2 = if rho_on_sigma2 {
            exp_corr_matrix(dims.k, rho)?
        } else {
            identity(dims.k)
        };
        let mut stats = ErrorStats::new(
            exp_corr_matrix(dims.nt, theta)?,
            exp_corr_matrix(dims.nr, theta)?,
            exp_corr_matrix(dims.nr, rho)?,
            rx2,
            sigma_e_sq,
        )?;
        stats.theta = theta;
        stats.rho = rho;
        Ok(stats)
    }

    /// Uncorrelated errors: `Ψ_j = I`, `Σ_j = σ_e² I`.
    pub fn uncorrelated(dims: Dims, sigma_e_sq: f64) -> Result<Self> {
        Self::exponential(dims, sigma_e_sq, 0.0, 0.0, false)
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.psi1.nrows(), self.psi2.nrows(), self.sigma2.nrows())
    }

    pub fn is_perfect(&self) -> bool {
        self.sigma_e_sq == 0.0
    }

    pub fn rx_corr1(&self) -> &ComplexMatrix {
        &self.rx_corr1
    }

    pub fn rx_corr2(&self) -> &ComplexMatrix {
        &self.rx_corr2
    }

    /// Draws `ΔH_1` (N_r×N_t).
    pub fn draw_error1<R: Rng + ?Sized>(&self, rng: &mut R) -> ComplexMatrix {
        self.draw_error(&self.roots.rx1, &self.roots.psi1, rng)
    }

    /// Draws `ΔH_2` (K×N_r).
    pub fn draw_error2<R: Rng + ?Sized>(&self, rng: &mut R) -> ComplexMatrix {
        self.draw_error(&self.roots.rx2, &self.roots.psi2, rng)
    }

    fn draw_error<R: Rng + ?Sized>(
        &self,
        rx_root: &ComplexMatrix,
        tx_root: &ComplexMatrix,
        rng: &mut R,
    ) -> ComplexMatrix {
        let g = gaussian_matrix(rx_root.nrows(), tx_root.nrows(), rng);
        if self.is_perfect() {
            return zeros(g.nrows(), g.ncols());
        }
        rx_root * g * tx_root * c(self.sigma_e_sq.sqrt(), 0.0)
    }

    fn draw_estimate<R: Rng + ?Sized>(
        &self,
        rx_root: &ComplexMatrix,
        tx_root: &ComplexMatrix,
        rng: &mut R,
    ) -> ComplexMatrix {
        let g = gaussian_matrix(rx_root.nrows(), tx_root.nrows(), rng);
        rx_root * g * tx_root * c((1.0 - self.sigma_e_sq).sqrt(), 0.0)
    }
}

/// One realisation of both hops: estimates, errors and true channels.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// First hop estimate, N_r×N_t.
    pub h1_hat: ComplexMatrix,
    /// Second hop estimate, K×N_r.
    pub h2_hat: ComplexMatrix,
    pub dh1: ComplexMatrix,
    pub dh2: ComplexMatrix,
    pub h1: ComplexMatrix,
    pub h2: ComplexMatrix,
    pub stats: Arc<ErrorStats>,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
}

impl ChannelSet {
    /// Builds a channel set from given estimates and errors (mostly for tests).
    pub fn from_parts(
        h1_hat: ComplexMatrix,
        h2_hat: ComplexMatrix,
        dh1: ComplexMatrix,
        dh2: ComplexMatrix,
        stats: Arc<ErrorStats>,
        noise: (f64, f64),
    ) -> Result<Self> {
        let d = stats.dims();
        if h1_hat.shape() != (d.nr, d.nt) || h2_hat.shape() != (d.k, d.nr) {
            return Err(Error::ShapeMismatch(format!(
                "channel shapes {:?}/{:?} do not match {d:?}",
                h1_hat.shape(),
                h2_hat.shape()
            )));
        }
        if dh1.shape() != h1_hat.shape() || dh2.shape() != h2_hat.shape() {
            return Err(Error::ShapeMismatch(
                "error matrices do not match estimates".into(),
            ));
        }
        Ok(ChannelSet {
            h1: &h1_hat + &dh1,
            h2: &h2_hat + &dh2,
            h1_hat,
            h2_hat,
            dh1,
            dh2,
            stats,
            sigma1_sq: noise.0,
            sigma2_sq: noise.1,
        })
    }

    pub fn dims(&self) -> Dims {
        self.stats.dims()
    }
}

/// Draws one channel set. The estimate of each hop is drawn before its error,
/// hop 1 before hop 2, all from `rng`.
pub fn draw_channel_set<R: Rng + ?Sized>(
    dims: Dims,
    stats: &Arc<ErrorStats>,
    noise: (f64, f64),
    rng: &mut R,
) -> Result<ChannelSet> {
    if stats.dims() != dims {
        return invalid(format!(
            "error statistics are for {:?}, requested {dims:?}",
            stats.dims()
        ));
    }
    if noise.0 < 0.0 || noise.1 < 0.0 {
        return invalid("noise variances must be nonnegative");
    }
    let r = &stats.roots;
    let h1_hat = stats.draw_estimate(&r.rx1, &r.psi1, rng);
    let dh1 = stats.draw_error(&r.rx1, &r.psi1, rng);
    let h2_hat = stats.draw_estimate(&r.rx2, &r.psi2, rng);
    let dh2 = stats.draw_error(&r.rx2, &r.psi2, rng);
    ChannelSet::from_parts(h1_hat, h2_hat, dh1, dh2, Arc::clone(stats), noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hermitian_eigenvalues;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exp_corr_zero_is_identity() {
        let m = exp_corr_matrix(6, 0.0).unwrap();
        assert_eq!(m, identity(6));
    }

    #[test]
    fn exp_corr_two_by_two() {
        let m = exp_corr_matrix(2, 0.5).unwrap();
        assert_eq!(m[(0, 1)], c(0.5, 0.0));
        assert_eq!(m[(1, 0)], c(0.5, 0.0));
        assert_eq!(m[(0, 0)], c(1.0, 0.0));
    }

    #[test]
    fn exp_corr_high_coefficient_is_positive_definite() {
        let m = exp_corr_matrix(3, 0.9).unwrap();
        let eig = hermitian_eigenvalues(&m).unwrap();
        assert!(eig[0] > 0.0, "{eig:?}");
    }

    #[test]
    fn exp_corr_rejects_bad_arguments() {
        assert!(exp_corr_matrix(0, 0.1).is_err());
        assert!(exp_corr_matrix(3, 1.0).is_err());
        assert!(exp_corr_matrix(3, -0.1).is_err());
    }

    #[test]
    fn exp_corr_sqrt_round_trip() {
        let m = exp_corr_matrix(3, 0.5).unwrap();
        let s = psd_sqrt(&m).unwrap();
        assert!((&s * &s - &m).norm() < 1e-10);
    }

    #[test]
    fn uncorrelated_stats_shape() {
        let d = Dims::new(4, 3, 2);
        let s = ErrorStats::uncorrelated(d, 0.01).unwrap();
        assert_eq!(s.psi1, identity(4));
        assert_eq!(s.psi2, identity(3));
        assert!((&s.sigma1 - identity(3) * c(0.01, 0.0)).norm() < 1e-15);
        assert_eq!(s.dims(), d);
    }

    #[test]
    fn perfect_csi_has_zero_error() {
        let d = Dims::square(3);
        let s = Arc::new(ErrorStats::uncorrelated(d, 0.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cs = draw_channel_set(d, &s, (0.1, 0.1), &mut rng).unwrap();
        assert_eq!(cs.dh1, zeros(3, 3));
        assert_eq!(cs.dh2, zeros(3, 3));
        assert_eq!(cs.h1, cs.h1_hat);
    }

    #[test]
    fn reconstruction_is_exact() {
        let d = Dims::new(3, 2, 2);
        let s = Arc::new(ErrorStats::exponential(d, 0.006, 0.4, 0.3, false).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let cs = draw_channel_set(d, &s, (0.1, 0.1), &mut rng).unwrap();
            assert!((&cs.h1 - &cs.h1_hat - &cs.dh1).norm() < 1e-14);
            assert!((&cs.h2 - &cs.h2_hat - &cs.dh2).norm() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let s = Arc::new(ErrorStats::uncorrelated(Dims::square(2), 0.01).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(draw_channel_set(Dims::square(3), &s, (0.1, 0.1), &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_channels() {
        let d = Dims::square(2);
        let s = Arc::new(ErrorStats::uncorrelated(d, 0.002).unwrap());
        let a = draw_channel_set(d, &s, (0.1, 0.1), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = draw_channel_set(d, &s, (0.1, 0.1), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.h1, b.h1);
        assert_eq!(a.h2, b.h2);
        assert_eq!(a.dh2, b.dh2);
    }

    #[test]
    fn dims_validation() {
        assert!(Dims::new(2, 2, 3).validate().is_err());
        assert!(Dims::new(0, 2, 1).validate().is_err());
        assert!(Dims::new(6, 6, 6).validate().is_ok());
    }
}
