//! Survival tails of the hitting time of `G` and their decomposition
//!
//! `P(tau_G > t) = lambda^(t+delta) (1 - s~(t)) + P(min(tau_*, tau_G) > t)`
//!
//! where `tau_*` is the minimal CSQST. The residual is computed twice: as the
//! difference of the exact tail and the leading term, and by propagating the
//! auxiliary chain driven by the CSQST hazard.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::chain::{AbsorbingChain, Measure};
use crate::error::{QstError, Result};
use crate::sim::run_exact;
use crate::spectral::{SeparationTable, SpectralData};
use crate::strong_times::{csqst_jump_table, default_horizon};

/// `P(tau_G > t)` for `t = 0..=t_max`, by vector products with `[P]_A`.
pub fn hitting_tail_exact(alpha: &Measure, chain: &AbsorbingChain, t_max: usize) -> Vec<f64> {
    let sub = chain.restrict_transient();
    let mut v = chain.project_transient(&alpha.to_full(chain));
    let mut out = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        if t > 0 {
            v = sub.left_mul(&v);
        }
        out.push(v.iter().sum());
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct TailRow {
    pub t: usize,
    pub exact_tail: f64,
    /// `lambda^(t+delta) (1 - s~(t))`; `None` when `t + delta < 0`.
    pub leading_term: Option<f64>,
    /// `exact_tail - leading_term`
    pub residual_derived: Option<f64>,
    /// `P(min(tau_*, tau_G) > t)` from the auxiliary chain.
    pub residual_augmented: f64,
    pub lower_bound: Option<f64>,
    pub upper_bound: Option<f64>,
    /// `|exact_tail - leading_term - residual_augmented|`
    pub identity_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    pub lambda: f64,
    pub delta_alpha: f64,
    pub rows: Vec<TailRow>,
}

impl TailReport {
    pub fn max_identity_error(&self) -> f64 {
        self.rows
            .iter()
            .filter_map(|r| r.identity_error)
            .fold(0.0, f64::max)
    }

    /// `residual(t) / lambda^(t+delta)`, reported without any claim on its decay.
    pub fn residual_ratio(&self) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| {
                r.leading_term.map(|_| {
                    r.residual_augmented / self.lambda.powf(r.t as f64 + self.delta_alpha)
                })
            })
            .collect()
    }
}

/// Rough sandwich of the survival tail at a single `t` with `t + delta >= 0`:
/// `lambda^(t+delta) (1 - s~(t))` below, with the global envelope, and
/// `lambda^(t+delta) [1 + s~^alpha~(t) (sum mu*/nu - 1)]` above.
pub fn rough_bounds(spectral: &SpectralData, table: &SeparationTable, t: usize) -> Result<(f64, f64)> {
    let delta = table.delta_alpha;
    if (t as f64) + delta < 0.0 {
        return Err(QstError::NegativeShiftedTime { t, delta });
    }
    let global = *table.envelope_global.get(t).ok_or_else(|| {
        QstError::InvalidParameter(format!("no global separation at t = {t}"))
    })?;
    let scale = spectral.lambda_pow(t as f64 + delta);
    let lower = scale * (1.0 - global);
    let upper = scale * (1.0 + table.envelope_alpha[t] * (spectral.inverse_gamma_mass() - 1.0));
    Ok((lower, upper))
}

/// Builds the per-`t` decomposition of the survival tail.
pub fn representation_formula(
    alpha: &Measure,
    chain: &AbsorbingChain,
    spectral: &SpectralData,
    table: &SeparationTable,
    t_max: usize,
) -> Result<TailReport> {
    if t_max > table.t_max {
        return Err(QstError::InvalidParameter(format!(
            "horizon {t_max} exceeds separation table horizon {}",
            table.t_max
        )));
    }
    alpha.on_transient(chain)?;
    let exact = hitting_tail_exact(alpha, chain, t_max);
    let jumps = csqst_jump_table(chain, table);
    let path = run_exact(alpha, chain, &jumps, t_max)?;
    let delta = table.delta_alpha;
    let rows = (0..=t_max)
        .map(|t| {
            let residual_augmented: f64 = chain.transient().iter().map(|&y| path[t].p0[y]).sum();
            let applicable = (t as f64) + delta >= 0.0;
            let leading = applicable
                .then(|| spectral.lambda_pow(t as f64 + delta) * (1.0 - table.envelope_alpha[t]));
            let bounds = applicable
                .then(|| rough_bounds(spectral, table, t))
                .transpose()?;
            Ok(TailRow {
                t,
                exact_tail: exact[t],
                leading_term: leading,
                residual_derived: leading.map(|l| exact[t] - l),
                residual_augmented,
                lower_bound: bounds.map(|b| b.0),
                upper_bound: bounds.map(|b| b.1),
                identity_error: leading.map(|l| (exact[t] - l - residual_augmented).abs()),
            })
        })
        .collect::<Result<_>>()?;
    Ok(TailReport {
        lambda: spectral.lambda,
        delta_alpha: delta,
        rows,
    })
}

/// Absorption distribution `P(X_{tau_G} = y)` by solving
/// `x (I - [P]_A) = alpha_A` and taking `x R` plus any initial mass on `G`.
pub fn absorption_distribution(alpha: &Measure, chain: &AbsorbingChain) -> Result<Vec<f64>> {
    let full = alpha.to_full(chain);
    let sub = chain.restrict_transient();
    let n = sub.nrows();
    let lhs = DMatrix::from_fn(n, n, |i, j| {
        // transpose of (I - M)
        (if i == j { 1.0 } else { 0.0 }) - sub[(j, i)]
    });
    let rhs = nalgebra::DVector::from_vec(chain.project_transient(&full));
    let x = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| QstError::InvalidParameter("I - [P]_A is singular".into()))?;
    let flux = chain.exit_flux().left_mul(x.as_slice());
    Ok(chain
        .targets()
        .iter()
        .zip(flux)
        .map(|(&g, f)| f + full[g])
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct ExitRow {
    pub state: String,
    /// `P(tau_G < tau_*, X_{tau_G} = y)`
    pub direct_mass: f64,
    /// `omega(y) P(tau_* < tau_G)`
    pub renewal_mass: f64,
    /// Renewal mass measured on the auxiliary chain instead of via `omega`.
    pub renewal_augmented: f64,
    /// `P(X_{tau_G} = y)` from the linear solve.
    pub absorption: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExitSplit {
    pub rows: Vec<ExitRow>,
    /// `P(tau_G < tau_*)`
    pub epsilon: f64,
    pub horizon: usize,
    /// Layer-0 mass still on `A` at the horizon.
    pub remaining: f64,
}

impl ExitSplit {
    /// `max_y |direct + renewal - absorption|`
    pub fn decomposition_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.direct_mass + r.renewal_mass - r.absorption).abs())
            .fold(0.0, f64::max)
    }

    /// `|sum_y (direct + renewal) - 1|`
    pub fn total_mass_error(&self) -> f64 {
        (self
            .rows
            .iter()
            .map(|r| r.direct_mass + r.renewal_mass)
            .sum::<f64>()
            - 1.0)
            .abs()
    }

    /// Largest violation of `omega (1-eps) <= P(X_{tau_G} = y) <= eps + omega (1-eps)`.
    pub fn sandwich_violation(&self) -> f64 {
        let e = self.epsilon;
        self.rows
            .iter()
            .map(|r| {
                let lo = r.omega * (1.0 - e) - r.absorption;
                let hi = r.absorption - (e + r.omega * (1.0 - e));
                lo.max(hi).max(0.0)
            })
            .fold(0.0, f64::max)
    }
}

/// Remaining layer-0 mass on `A` tolerated at the horizon.
pub const EXIT_REMAINDER_TOL: f64 = 1e-12;

/// Splits the exit distribution into mass absorbed before the CSQST fires
/// and mass absorbed after it.
pub fn exit_decomposition(
    alpha: &Measure,
    chain: &AbsorbingChain,
    spectral: &SpectralData,
    t_horizon: usize,
) -> Result<ExitSplit> {
    let table = SeparationTable::for_alpha_local(chain, spectral, alpha, t_horizon)?;
    let jumps = csqst_jump_table(chain, &table);
    let path = run_exact(alpha, chain, &jumps, t_horizon)?;
    let last = path.last().expect("nonempty path");
    let remaining: f64 = chain.transient().iter().map(|&y| last.p0[y]).sum();
    if remaining > EXIT_REMAINDER_TOL {
        return Err(QstError::HorizonTooShort { remaining });
    }
    let stopped: f64 = path
        .iter()
        .map(|law| chain.transient().iter().map(|&y| law.jumped[y]).sum::<f64>())
        .sum();
    let stopped_alive: f64 = chain.transient().iter().map(|&y| last.p1[y]).sum();
    let absorption = absorption_distribution(alpha, chain)?;
    let rows = chain
        .targets()
        .iter()
        .enumerate()
        .map(|(k, &g)| ExitRow {
            state: chain.label(g).to_string(),
            direct_mass: last.p0[g],
            renewal_mass: spectral.omega[k] * stopped,
            renewal_augmented: last.p1[g] + spectral.omega[k] * stopped_alive,
            absorption: absorption[k],
            omega: spectral.omega[k],
        })
        .collect();
    Ok(ExitSplit {
        rows,
        epsilon: 1.0 - stopped,
        horizon: t_horizon,
        remaining,
    })
}

/// [`exit_decomposition`] with a horizon doubled from the default until the
/// unresolved mass is negligible.
pub fn exit_decomposition_auto(
    alpha: &Measure,
    chain: &AbsorbingChain,
    spectral: &SpectralData,
) -> Result<ExitSplit> {
    let on_a = alpha.on_transient(chain)?;
    let delta = crate::spectral::time_shift(&on_a, &spectral.gamma, spectral.lambda)?;
    let mut horizon = default_horizon(spectral.lambda, delta).max(16);
    const MAX_HORIZON: usize = 1 << 16;
    loop {
        match exit_decomposition(alpha, chain, spectral, horizon) {
            Err(QstError::HorizonTooShort { .. }) if horizon < MAX_HORIZON => horizon *= 2,
            other => return other,
        }
    }
}
