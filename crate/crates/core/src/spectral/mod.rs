//! Perron data of the transient block and the local chain built from it.
//!
//! For a chain with transient block `M = [P]_A` this computes the Perron
//! eigenvalue `lambda`, the quasi-stationary measure `mu*` (left eigenvector),
//! the right eigenvector `gamma` normalized by `(mu*, gamma) = 1`, the exit
//! distribution `omega`, and the Doob-transformed stochastic matrix
//! `P~(x,y) = gamma(y) M(x,y) / (gamma(x) lambda)` with stationary law
//! `nu = gamma * mu*`.

mod separation;

pub use separation::{
    separation_equivalence_check, separation_table, EquivalenceReport, SeparationTable,
    SEPARATION_CLAMP,
};

use serde::Serialize;

use crate::chain::{AbsorbingChain, Domain, EvolvingMeasure, Measure};
use crate::error::{QstError, Result};
use crate::matrix::{max_abs, DenseMatrix};

/// Spectral residual tolerance for [`SpectralData`] invariants.
pub const SPECTRAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
pub struct SpectralOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            tol: 1e-14,
            max_iter: 2_000_000,
        }
    }
}

/// Residuals of every identity the spectral bundle should satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residuals {
    /// `max |mu* M - lambda mu*|`
    pub left_eigen: f64,
    /// `max |M gamma - lambda gamma|`
    pub right_eigen: f64,
    /// `|(mu*, gamma) - 1|`
    pub normalization: f64,
    /// `max |nu P~ - nu|`
    pub nu_stationary: f64,
    /// `max |nu - gamma mu*|`
    pub nu_product: f64,
    /// `max |row sum of P~ - 1|`
    pub local_rows: f64,
    /// `|sum omega - 1|`
    pub omega_mass: f64,
    /// `|total exit flux from mu* - (1 - lambda)|`
    pub omega_flux: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        [
            self.left_eigen,
            self.right_eigen,
            self.normalization,
            self.nu_stationary,
            self.nu_product,
            self.local_rows,
            self.omega_mass,
            self.omega_flux,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn named(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("left_eigen", self.left_eigen),
            ("right_eigen", self.right_eigen),
            ("normalization", self.normalization),
            ("nu_stationary", self.nu_stationary),
            ("nu_product", self.nu_product),
            ("local_rows", self.local_rows),
            ("omega_mass", self.omega_mass),
            ("omega_flux", self.omega_flux),
        ]
    }
}

/// The full Perron / local-chain bundle of one chain. Vectors over `A` follow
/// the order of [`AbsorbingChain::transient`], `omega` that of
/// [`AbsorbingChain::targets`].
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub lambda: f64,
    pub mu_star: Vec<f64>,
    pub gamma: Vec<f64>,
    pub nu: Vec<f64>,
    pub omega: Vec<f64>,
    pub p_tilde: DenseMatrix,
    pub residuals: Residuals,
}

impl SpectralData {
    pub fn compute(chain: &AbsorbingChain, opts: &SpectralOptions) -> Result<Self> {
        let sub = chain.restrict_transient();
        let (lambda, mu_star) = perron_left(&sub, opts.tol, opts.max_iter)?;
        if !(lambda > 0.0 && 1.0 - lambda > 1e-12) {
            return Err(QstError::LambdaOutOfRange(lambda));
        }
        let gamma = perron_right(&sub, lambda, &mu_star, opts.tol, opts.max_iter)?;
        let (omega, total_flux) = exit_flux(chain, &mu_star);
        let p_tilde = build_local_chain(&sub, lambda, &gamma);
        let nu: Vec<f64> = gamma.iter().zip(&mu_star).map(|(g, m)| g * m).collect();

        let left = sub.left_mul(&mu_star);
        let right = sub.right_mul(&gamma);
        let nu_next = p_tilde.left_mul(&nu);
        let residuals = Residuals {
            left_eigen: max_abs(left.iter().zip(&mu_star).map(|(a, m)| a - lambda * m)),
            right_eigen: max_abs(right.iter().zip(&gamma).map(|(a, g)| a - lambda * g)),
            normalization: (dot(&mu_star, &gamma) - 1.0).abs(),
            nu_stationary: max_abs(nu_next.iter().zip(&nu).map(|(a, b)| a - b)),
            nu_product: max_abs(
                nu.iter()
                    .zip(gamma.iter().zip(&mu_star))
                    .map(|(n, (g, m))| n - g * m),
            ),
            local_rows: max_abs(p_tilde.row_sums().into_iter().map(|s| s - 1.0)),
            omega_mass: (omega.iter().sum::<f64>() - 1.0).abs(),
            omega_flux: (total_flux - (1.0 - lambda)).abs(),
        };
        Ok(Self {
            lambda,
            mu_star,
            gamma,
            nu,
            omega,
            p_tilde,
            residuals,
        })
    }

    /// Names of invariants whose residual exceeds `tol`.
    pub fn failed_invariants(&self, tol: f64) -> Vec<&'static str> {
        let mut failed: Vec<&'static str> = self
            .residuals
            .named()
            .into_iter()
            .filter(|(_, r)| !(*r <= tol))
            .map(|(name, _)| name)
            .collect();
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            failed.push("lambda_range");
        }
        failed
    }

    /// `lambda^s` for real `s`, as `exp(s ln lambda)`.
    pub fn lambda_pow(&self, s: f64) -> f64 {
        (s * self.lambda.ln()).exp()
    }

    pub fn mu_star_measure(&self) -> Measure {
        Measure::new(Domain::Transient, self.mu_star.clone()).expect("mu* is nonnegative")
    }

    /// `sum_y mu*(y) / nu(y)`, the constant in the rough upper bound.
    pub fn inverse_gamma_mass(&self) -> f64 {
        self.mu_star.iter().zip(&self.nu).map(|(m, n)| m / n).sum()
    }

    /// The reference family `rho_t = mu^{mu*}_{t + shift}`.
    pub fn squeezing_family(&self, chain: &AbsorbingChain, shift: f64) -> EvolvingMeasure {
        EvolvingMeasure::squeezing(
            chain,
            self.lambda,
            self.mu_star.clone(),
            self.omega.clone(),
            shift,
        )
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// Power iteration on M + I: same eigenvectors as M, but the Perron root
// dominates strictly even when M has eigenvalues near -lambda.
fn power_iterate(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    init: &[f64],
    lambda_hint: Option<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, Vec<f64>)> {
    let mut v: Vec<f64> = normalize_sum(init.to_vec());
    let mut prev = f64::NAN;
    let mut residual = f64::INFINITY;
    let mut converged_at = None;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for k in 0..max_iter {
        let w = apply(&v);
        let est = lambda_hint.unwrap_or_else(|| w.iter().sum());
        let r = max_abs(w.iter().zip(&v).map(|(a, b)| a - est * b));
        if converged_at.is_none() && (est - prev).abs() < tol && r < tol {
            converged_at = Some(k);
        }
        if best.as_ref().is_none_or(|(_, br, _)| r < *br) {
            best = Some((est, r, v.clone()));
        }
        // Polish past the stopping rule until the residual stops improving.
        if let Some(c) = converged_at {
            if r >= residual || k > c + 64 {
                let (est, _, v) = best.expect("set above");
                return Ok((est, v));
            }
        }
        residual = r;
        prev = est;
        let next: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a + b).collect();
        v = normalize_sum(next);
    }
    match (converged_at, best) {
        (Some(_), Some((est, _, v))) => Ok((est, v)),
        _ => Err(QstError::NoConvergence {
            iterations: max_iter,
            residual,
        }),
    }
}

fn normalize_sum(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Perron eigenvalue and probability-normalized left eigenvector of `sub`.
pub fn perron_left(sub: &DenseMatrix, tol: f64, max_iter: usize) -> Result<(f64, Vec<f64>)> {
    if !crate::chain::is_primitive(sub, None) {
        return Err(QstError::NotPrimitive);
    }
    let n = sub.nrows();
    let (est, v) = power_iterate(|v| sub.left_mul(v), &vec![1.0; n], None, tol, max_iter)?;
    let v = inverse_polish(sub, est, v, true);
    let lambda = sub.left_mul(&v).iter().sum::<f64>() / v.iter().sum::<f64>();
    Ok((lambda, v))
}

/// Inverse-iteration steps used to push power-iteration output to
/// machine precision.
const POLISH_STEPS: usize = 3;

// A few steps of inverse iteration with the fixed shift `lambda`. The power
// method stalls at its stopping tolerance, and an error of 1e-14 in lambda
// shows up as t * 1e-14 in lambda^t over long horizons.
fn inverse_polish(sub: &DenseMatrix, lambda: f64, v: Vec<f64>, left: bool) -> Vec<f64> {
    let n = sub.nrows();
    let shifted = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        let m = if left { sub[(j, i)] } else { sub[(i, j)] };
        m - if i == j { lambda } else { 0.0 }
    });
    let lu = shifted.lu();
    let mut v = v;
    for _ in 0..POLISH_STEPS {
        let Some(x) = lu.solve(&nalgebra::DVector::from_column_slice(&v)) else {
            break;
        };
        let x = normalize_sum(x.as_slice().to_vec());
        if x.iter().any(|e| !e.is_finite() || *e < 0.0) {
            break;
        }
        v = x;
    }
    v
}

/// Right Perron vector normalized by `(mu*, gamma) = 1`.
pub fn perron_right(
    sub: &DenseMatrix,
    lambda: f64,
    mu_star: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    perron_right_from(sub, lambda, mu_star, tol, max_iter, &vec![1.0; sub.nrows()])
}

pub fn perron_right_from(
    sub: &DenseMatrix,
    lambda: f64,
    mu_star: &[f64],
    tol: f64,
    max_iter: usize,
    init: &[f64],
) -> Result<Vec<f64>> {
    let (_, v) = power_iterate(|v| sub.right_mul(v), init, Some(lambda), tol, max_iter)?;
    let v = inverse_polish(sub, lambda, v, false);
    let scale = dot(mu_star, &v);
    Ok(v.into_iter().map(|x| x / scale).collect())
}

// omega normalized by the total exit flux, which equals 1 - lambda up to the
// eigen residual but does not suffer cancellation when lambda is near one.
fn exit_flux(chain: &AbsorbingChain, mu_star: &[f64]) -> (Vec<f64>, f64) {
    let flux = chain.exit_flux().left_mul(mu_star);
    let total: f64 = flux.iter().sum();
    (flux.iter().map(|f| f / total).collect(), total)
}

/// First-hitting distribution on `G` when starting from `mu*`.
pub fn exit_distribution(chain: &AbsorbingChain, mu_star: &[f64], lambda: f64) -> Measure {
    let (omega, total) = exit_flux(chain, mu_star);
    debug_assert!((total - (1.0 - lambda)).abs() < 1e-8);
    Measure::new(Domain::Target, omega).expect("flux is nonnegative")
}

/// `mu^{mu*}_t`: `lambda^t mu*` on `A`, `(1 - lambda^t) omega` on `G`.
pub fn squeezing_measure(
    t: f64,
    chain: &AbsorbingChain,
    spectral: &SpectralData,
) -> Result<Measure> {
    if !(t >= 0.0) {
        return Err(QstError::NegativeTime(t));
    }
    let decay = spectral.lambda_pow(t);
    let escaped = -(t * spectral.lambda.ln()).exp_m1();
    let mut w = chain.embed_transient(&spectral.mu_star);
    w.iter_mut().for_each(|x| *x *= decay);
    for (k, &g) in chain.targets().iter().enumerate() {
        w[g] = escaped * spectral.omega[k];
    }
    Measure::new(Domain::Full, w)
}

/// Doob transform of the transient block by its right Perron vector.
pub fn build_local_chain(sub: &DenseMatrix, lambda: f64, gamma: &[f64]) -> DenseMatrix {
    DenseMatrix::from_fn(sub.nrows(), sub.ncols(), |x, y| {
        gamma[y] / gamma[x] * sub[(x, y)] / lambda
    })
}

/// `alpha~(x) = alpha(x) gamma(x) / sum_y alpha(y) gamma(y)` on `A`.
pub fn tilt_measure(alpha_on_a: &[f64], gamma: &[f64]) -> Result<Vec<f64>> {
    let mass = dot(alpha_on_a, gamma);
    if !(mass > 0.0) {
        return Err(QstError::ZeroMassOnTransient);
    }
    Ok(alpha_on_a
        .iter()
        .zip(gamma)
        .map(|(a, g)| a * g / mass)
        .collect())
}

/// `delta_alpha = log_lambda (sum_x alpha(x) gamma(x))`.
pub fn time_shift(alpha_on_a: &[f64], gamma: &[f64], lambda: f64) -> Result<f64> {
    let mass = dot(alpha_on_a, gamma);
    if !(mass > 0.0) {
        return Err(QstError::ZeroMassOnTransient);
    }
    Ok(mass.ln() / lambda.ln())
}
