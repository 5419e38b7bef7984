//! Latent precoding-pair design.
//!
//! For a codebook entry `T` the BS precoder `P` and relay scale `β` minimise
//! the expected MSE `ζ = E‖b − y‖²` subject to `Tr{PPᴴ} = P_t` and the
//! expected relay power `β² E[Tr{H1 P Pᴴ H1ᴴ + σ1² I}] ≤ P_r`. The
//! expectation over the Kronecker-structured errors uses
//! `E[ΔH A ΔHᴴ] = Tr{AΨ} Σ` and `E[ΔHᴴ A ΔH] = Tr{AΣ} Ψ`, which reduces
//! everything to a handful of fixed matrices per `(Ĥ1, Ĥ2, T)`:
//!
//! ```text
//! D  = Tᴴ (Ĥ2ᴴ Ĥ2 + Tr{Σ2} Ψ2) T
//! Q  = Ĥ1ᴴ D Ĥ1 + Tr{D Σ1} Ψ1            (M = β² Q)
//! R  = Ĥ1ᴴ Ĥ1 + Tr{Σ1} Ψ1                (relay power form)
//! g  = Ĥ1ᴴ Tᴴ Ĥ2ᴴ
//! x  = Tr{Ĥ2 Ĥ2ᴴ} + Tr{Σ2} Tr{Ψ2}        (relay noise seen at the users)
//! ```
//!
//! With `w = Tr{PPᴴ}/P_t` weighting the noise terms:
//!
//! ```text
//! Ω1 = Tr{Pᴴ Q P} + w σ1² x
//! Ω2 = Tr{Pᴴ R P} + σ1² N_r
//! ζ  = K − 2β ℜTr{Ĥ2 T Ĥ1 P} + β² Ω1 + w K σ2²
//! ```
//!
//! The iteration alternates the multiplier, the scale and the precoder
//! (`λ → β → P`, then rescale `P` to `P_t`) until both the precoder and the
//! scale settle.

use log::debug;

use crate::channel::{ChannelSet, ErrorStats};
use crate::error::{Error, Result};
use crate::linalg::{
    c, frobenius_sq, identity, leading_identity, solve_hpd, trace_of_product, trace_re,
    ComplexMatrix,
};

/// Power budgets and stopping rule of the iterative design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignParams {
    pub pt: f64,
    pub pr: f64,
    pub eps: f64,
    pub max_iter: usize,
}

impl DesignParams {
    /// `P_t = P_r = K`, `ε = 1e-4`, at most 200 iterations.
    pub fn for_users(k: usize) -> Self {
        DesignParams {
            pt: k as f64,
            pr: k as f64,
            eps: 1e-4,
            max_iter: 200,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.pt > 0.0 && self.pr > 0.0 && self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "power budgets and eps must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Everything the BS knows when designing the pair for one codebook entry.
#[derive(Debug, Clone, Copy)]
pub struct DesignInput<'a> {
    pub h1_hat: &'a ComplexMatrix,
    pub h2_hat: &'a ComplexMatrix,
    pub t: &'a ComplexMatrix,
    pub stats: &'a ErrorStats,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub params: DesignParams,
}

impl<'a> DesignInput<'a> {
    pub fn from_channels(cs: &'a ChannelSet, t: &'a ComplexMatrix, params: DesignParams) -> Self {
        DesignInput {
            h1_hat: &cs.h1_hat,
            h2_hat: &cs.h2_hat,
            t,
            stats: &cs.stats,
            sigma1_sq: cs.sigma1_sq,
            sigma2_sq: cs.sigma2_sq,
            params,
        }
    }
}

/// The `P`- and `β`-independent matrices of one design problem.
#[derive(Debug, Clone)]
pub struct DesignContext {
    pub d: ComplexMatrix,
    pub q: ComplexMatrix,
    pub r: ComplexMatrix,
    pub g: ComplexMatrix,
    /// `Ĥ2 T Ĥ1`, i.e. `gᴴ`.
    pub heq: ComplexMatrix,
    pub relay_noise_gain: f64,
    pub nr: usize,
    pub k: usize,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub params: DesignParams,
}

impl DesignContext {
    pub fn new(input: &DesignInput<'_>) -> Result<Self> {
        input.params.validate()?;
        let (h1, h2, t, s) = (input.h1_hat, input.h2_hat, input.t, input.stats);
        let d = s.dims();
        if h1.shape() != (d.nr, d.nt) || h2.shape() != (d.k, d.nr) || t.shape() != (d.nr, d.nr) {
            return Err(Error::ShapeMismatch(format!(
                "H1 {:?}, H2 {:?}, T {:?} inconsistent with {d:?}",
                h1.shape(),
                h2.shape(),
                t.shape()
            )));
        }
        let tr_sigma1 = trace_re(&s.sigma1);
        let tr_sigma2 = trace_re(&s.sigma2);
        let h2h = h2.adjoint();
        let inner = &h2h * h2 + &s.psi2 * c(tr_sigma2, 0.0);
        let dmat = t.adjoint() * inner * t;
        let h1h = h1.adjoint();
        let q = &h1h * &dmat * h1 + &s.psi1 * trace_of_product(&dmat, &s.sigma1);
        let r = &h1h * h1 + &s.psi1 * c(tr_sigma1, 0.0);
        let heq = h2 * t * h1;
        let g = heq.adjoint();
        let relay_noise_gain = frobenius_sq(h2) + tr_sigma2 * trace_re(&s.psi2);
        Ok(DesignContext {
            d: dmat,
            q,
            r,
            g,
            heq,
            relay_noise_gain,
            nr: d.nr,
            k: d.k,
            sigma1_sq: input.sigma1_sq,
            sigma2_sq: input.sigma2_sq,
            params: input.params,
        })
    }

    fn power_weight(&self, p: &ComplexMatrix) -> f64 {
        frobenius_sq(p) / self.params.pt
    }

    /// `ℜ Tr{Ĥ2 T Ĥ1 P}`, the shared numerator of the scale and multiplier
    /// updates.
    pub fn signal(&self, p: &ComplexMatrix) -> f64 {
        trace_of_product(&self.heq, p).re
    }

    pub fn omega1(&self, p: &ComplexMatrix) -> f64 {
        quad_form(p, &self.q) + self.power_weight(p) * self.sigma1_sq * self.relay_noise_gain
    }

    pub fn omega2(&self, p: &ComplexMatrix) -> f64 {
        quad_form(p, &self.r) + self.sigma1_sq * self.nr as f64
    }
}

/// `ℜ Tr{Pᴴ A P}` for Hermitian `A`.
fn quad_form(p: &ComplexMatrix, a: &ComplexMatrix) -> f64 {
    trace_of_product(&p.adjoint(), &(a * p)).re
}

/// The quantities assembled at each iteration (see the module docs).
#[derive(Debug, Clone)]
pub struct DesignTerms {
    /// `M = β² Q`.
    pub m_gram: ComplexMatrix,
    pub d: ComplexMatrix,
    pub omega1: f64,
    pub omega2: f64,
    pub signal: f64,
}

pub fn design_terms(ctx: &DesignContext, p: &ComplexMatrix, beta: f64) -> DesignTerms {
    DesignTerms {
        m_gram: &ctx.q * c(beta * beta, 0.0),
        d: ctx.d.clone(),
        omega1: ctx.omega1(p),
        omega2: ctx.omega2(p),
        signal: ctx.signal(p),
    }
}

/// Multiplier of the relay power constraint:
/// `λ = [(s √(Ω2/P_r) − Ω1) / Ω2]⁺` with `s = ℜTr{Ĥ2 T Ĥ1 P}`.
pub fn update_lambda(ctx: &DesignContext, terms: &DesignTerms) -> Result<f64> {
    if !(terms.omega2 > 0.0) {
        return Err(Error::NumericalDegeneracy(format!(
            "relay power form Omega2 = {} is not positive",
            terms.omega2
        )));
    }
    let arg = (terms.signal * (terms.omega2 / ctx.params.pr).sqrt() - terms.omega1) / terms.omega2;
    Ok(arg.max(0.0))
}

/// Relay scale `β = s / (Ω1 + λ Ω2)`.
pub fn update_beta(terms: &DesignTerms, lambda: f64) -> Result<f64> {
    if !(terms.signal > 0.0) {
        return Err(Error::DegenerateGeometry(format!(
            "scale numerator {} is not positive",
            terms.signal
        )));
    }
    let denom = terms.omega1 + lambda * terms.omega2;
    if !(denom > 0.0) {
        return Err(Error::NumericalDegeneracy(format!(
            "scale denominator {denom} is not positive"
        )));
    }
    Ok(terms.signal / denom)
}

/// The regularised system matrix of the precoder update:
/// `β²Q + (β²σ1² x + K σ2²)/P_t · I + λ β² R`.
pub fn precoder_system(ctx: &DesignContext, beta: f64, lambda: f64) -> ComplexMatrix {
    let b2 = beta * beta;
    let pt = ctx.params.pt;
    let diag = (b2 * ctx.sigma1_sq * ctx.relay_noise_gain + ctx.k as f64 * ctx.sigma2_sq) / pt;
    &ctx.q * c(b2, 0.0) + identity(ctx.q.nrows()) * c(diag, 0.0) + &ctx.r * c(lambda * b2, 0.0)
}

/// Unnormalised precoder `β A⁻¹ Ĥ1ᴴ Tᴴ Ĥ2ᴴ` with `A` from [`precoder_system`].
pub fn update_precoder(ctx: &DesignContext, beta: f64, lambda: f64) -> Result<ComplexMatrix> {
    let a = precoder_system(ctx, beta, lambda);
    let x = solve_hpd(&a, &ctx.g)?;
    Ok(x * c(beta, 0.0))
}

/// Rescales `P` so that `Tr{PPᴴ} = P_t`.
pub fn normalize_power(p: &ComplexMatrix, pt: f64) -> Result<ComplexMatrix> {
    let e = frobenius_sq(p);
    if !(e > 0.0) || !e.is_finite() {
        return Err(Error::NumericalDegeneracy(format!("precoder energy {e}")));
    }
    Ok(p * c((pt / e).sqrt(), 0.0))
}

/// Closed-form `ζ(P, β)`, with the `Tr{PPᴴ}/P_t` weights kept explicit.
pub fn mse_objective(ctx: &DesignContext, p: &ComplexMatrix, beta: f64) -> f64 {
    let w = ctx.power_weight(p);
    ctx.k as f64 - 2.0 * beta * ctx.signal(p)
        + beta * beta * ctx.omega1(p)
        + w * ctx.k as f64 * ctx.sigma2_sq
}

/// Expected relay transmit power `β² Ω2(P)`.
pub fn relay_power(ctx: &DesignContext, p: &ComplexMatrix, beta: f64) -> f64 {
    beta * beta * ctx.omega2(p)
}

/// `J(P, β, λ) = ζ + λ (relay power − P_r)`.
pub fn lagrangian(ctx: &DesignContext, p: &ComplexMatrix, beta: f64, lambda: f64) -> f64 {
    mse_objective(ctx, p, beta) + lambda * (relay_power(ctx, p, beta) - ctx.params.pr)
}

/// One designed latent pair.
#[derive(Debug, Clone)]
pub struct PrecodingPair {
    /// Zero-based codebook index.
    pub index: usize,
    pub p: ComplexMatrix,
    pub beta: f64,
    pub lambda: f64,
    pub iters: usize,
    pub converged: bool,
    pub mse: f64,
}

/// Default starting point: ones on the leading diagonal of an N_t×K matrix.
pub fn default_initial_precoder(nt: usize, k: usize) -> ComplexMatrix {
    leading_identity(nt, k)
}

/// A self-consistent `(P, λ, β)` triple: `λ` and `β` are the multiplier and
/// scale updates evaluated at `P`.
struct Iterate {
    p: ComplexMatrix,
    lambda: f64,
    beta: f64,
    mse: f64,
}

fn settle(ctx: &DesignContext, p: ComplexMatrix) -> Result<Iterate> {
    let terms = design_terms(ctx, &p, 0.0);
    let lambda = update_lambda(ctx, &terms)?;
    let beta = update_beta(&terms, lambda)?;
    let mse = mse_objective(ctx, &p, beta);
    Ok(Iterate {
        p,
        lambda,
        beta,
        mse,
    })
}

/// Runs the alternating design from `p0`.
///
/// Each pass evaluates `λ` and `β` at the current precoder, solves the
/// regularised system for a new precoder and rescales it to `P_t`. It stops
/// once `‖Pⁱ − Pⁱ⁻¹‖_F² ≤ ε` and `|βⁱ − βⁱ⁻¹|² ≤ ε`. The returned `λ` and `β`
/// are re-evaluated at the returned precoder, so the relay constraint and
/// complementary slackness hold exactly for the returned triple.
///
/// `(P, β)` and `(−P, −β)` give the same MSE; a starting point whose signal
/// term is negative is flipped so that a positive scale exists. When the
/// iteration hits `max_iter` or an inner step fails after the first pass,
/// the iterate with the lowest MSE is returned with `converged = false`.
pub fn design_pair(
    input: &DesignInput<'_>,
    p0: &ComplexMatrix,
    index: usize,
) -> Result<PrecodingPair> {
    let ctx = DesignContext::new(input)?;
    design_pair_with(&ctx, p0, index)
}

pub fn design_pair_with(
    ctx: &DesignContext,
    p0: &ComplexMatrix,
    index: usize,
) -> Result<PrecodingPair> {
    let params = ctx.params;
    if p0.shape() != ctx.g.shape() {
        return Err(Error::ShapeMismatch(format!(
            "initial precoder {:?}, expected {:?}",
            p0.shape(),
            ctx.g.shape()
        )));
    }
    let mut p = normalize_power(p0, params.pt)?;
    if ctx.signal(&p) < 0.0 {
        p = -p;
    }
    let mut current = settle(ctx, p)?;
    // Scale of the starting point with the constraint ignored.
    let mut beta_prev = {
        let terms = design_terms(ctx, &current.p, 0.0);
        update_beta(&terms, 0.0)?
    };
    let mut best: Option<Iterate> = None;
    let mut iters = 0;
    let mut converged = false;

    while iters < params.max_iter {
        iters += 1;
        let step = update_precoder(ctx, current.beta, current.lambda)
            .and_then(|p| normalize_power(&p, params.pt))
            .and_then(|p| settle(ctx, p));
        let next = match step {
            Ok(next) => next,
            Err(e) => {
                debug!("design of pair {index} stopped after {iters} passes: {e}");
                break;
            }
        };
        let dp = frobenius_sq(&(&next.p - &current.p));
        let db = (current.beta - beta_prev).powi(2);
        beta_prev = current.beta;
        let prev = std::mem::replace(&mut current, next);
        if best.as_ref().is_none_or(|b| prev.mse < b.mse) {
            best = Some(prev);
        }
        if dp <= params.eps && db <= params.eps {
            converged = true;
            break;
        }
    }

    let chosen = if converged {
        current
    } else {
        debug!("design of pair {index} did not converge in {iters} passes");
        match best {
            Some(b) if b.mse < current.mse => b,
            _ => current,
        }
    };
    Ok(PrecodingPair {
        index,
        p: chosen.p,
        beta: chosen.beta,
        lambda: chosen.lambda,
        iters,
        converged,
        mse: chosen.mse,
    })
}
