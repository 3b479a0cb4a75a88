use rayon::prelude::*;

use super::{tilt_measure, time_shift, SpectralData};
use crate::chain::{evolve_path, AbsorbingChain, Measure};
use crate::error::Result;
use crate::matrix::DenseMatrix;

/// Entries are clamped to `[-SEPARATION_CLAMP, 1 + SEPARATION_CLAMP]` before
/// taking envelopes.
pub const SEPARATION_CLAMP: f64 = 1e-12;

/// Separation of the local chain from `nu`, for one tilted start and for the
/// worst point-mass start.
#[derive(Debug, Clone)]
pub struct SeparationTable {
    pub t_max: usize,
    pub delta_alpha: f64,
    pub alpha_tilde: Vec<f64>,
    /// Raw signed `s~(t, y) = 1 - (alpha~ P~^t)(y) / nu(y)`, indexed `[t][y]`.
    pub per_state: Vec<Vec<f64>>,
    /// `s~(t) = max_y s~(t, y)` after clamping.
    pub envelope_alpha: Vec<f64>,
    /// `max_x s~^x(t)` over point-mass starts; empty for tables built by
    /// [`SeparationTable::for_alpha_local`].
    pub envelope_global: Vec<f64>,
}

impl SeparationTable {
    /// Builds the table for an initial measure supported on `A`.
    pub fn for_alpha(
        chain: &AbsorbingChain,
        spectral: &SpectralData,
        alpha: &Measure,
        t_max: usize,
    ) -> Result<Self> {
        let on_a = alpha.on_transient(chain)?;
        let alpha_tilde = tilt_measure(&on_a, &spectral.gamma)?;
        let delta = time_shift(&on_a, &spectral.gamma, spectral.lambda)?;
        Ok(separation_table(
            &spectral.p_tilde,
            &spectral.nu,
            &alpha_tilde,
            t_max,
            delta,
        ))
    }

    /// Like [`SeparationTable::for_alpha`] without the global envelope, which
    /// costs `|A|` times as much as the rest.
    pub fn for_alpha_local(
        chain: &AbsorbingChain,
        spectral: &SpectralData,
        alpha: &Measure,
        t_max: usize,
    ) -> Result<Self> {
        let on_a = alpha.on_transient(chain)?;
        let alpha_tilde = tilt_measure(&on_a, &spectral.gamma)?;
        let delta = time_shift(&on_a, &spectral.gamma, spectral.lambda)?;
        let (per_state, envelope_alpha) =
            tilted_separation(&spectral.p_tilde, &spectral.nu, &alpha_tilde, t_max);
        Ok(SeparationTable {
            t_max,
            delta_alpha: delta,
            alpha_tilde,
            per_state,
            envelope_alpha,
            envelope_global: Vec::new(),
        })
    }

    /// Envelope at `t`, with the boundary value `s~(-1) = 1`.
    pub fn envelope(&self, t: isize) -> f64 {
        if t < 0 {
            1.0
        } else {
            self.envelope_alpha[t as usize]
        }
    }
}

fn envelope(row: &[f64]) -> f64 {
    row.iter()
        .map(|s| s.clamp(-SEPARATION_CLAMP, 1.0 + SEPARATION_CLAMP))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn separation_row(dist: &[f64], nu: &[f64]) -> Vec<f64> {
    dist.iter().zip(nu).map(|(m, n)| 1.0 - m / n).collect()
}

fn tilted_separation(
    p_tilde: &DenseMatrix,
    nu: &[f64],
    alpha_tilde: &[f64],
    t_max: usize,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut per_state = Vec::with_capacity(t_max + 1);
    let mut dist = alpha_tilde.to_vec();
    for t in 0..=t_max {
        if t > 0 {
            dist = p_tilde.left_mul(&dist);
        }
        per_state.push(separation_row(&dist, nu));
    }
    let envelope_alpha = per_state.iter().map(|r| envelope(r)).collect();
    (per_state, envelope_alpha)
}

/// Materializes `s~^alpha~(t, y)` and both envelopes for `t = 0..=t_max`.
pub fn separation_table(
    p_tilde: &DenseMatrix,
    nu: &[f64],
    alpha_tilde: &[f64],
    t_max: usize,
    delta_alpha: f64,
) -> SeparationTable {
    let n = nu.len();
    let (per_state, envelope_alpha) = tilted_separation(p_tilde, nu, alpha_tilde, t_max);

    let per_start: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut d = vec![0.0; n];
            d[x] = 1.0;
            let mut out = Vec::with_capacity(t_max + 1);
            for t in 0..=t_max {
                if t > 0 {
                    d = p_tilde.left_mul(&d);
                }
                out.push(envelope(&separation_row(&d, nu)));
            }
            out
        })
        .collect();
    let envelope_global = (0..=t_max)
        .map(|t| per_start.iter().map(|s| s[t]).fold(f64::NEG_INFINITY, f64::max))
        .collect();

    SeparationTable {
        t_max,
        delta_alpha,
        alpha_tilde: alpha_tilde.to_vec(),
        per_state,
        envelope_alpha,
        envelope_global,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub max_discrepancy: f64,
    /// Times with `t + delta < 0`, where the shifted reference is not a
    /// probability measure; they are left out of the comparison.
    pub skipped: Vec<usize>,
}

/// Compares `s^alpha(t, y) = 1 - mu^alpha_t(y) / (lambda^(t+delta) mu*(y))`,
/// computed on the original chain, with the local-chain separation.
pub fn separation_equivalence_check(
    chain: &AbsorbingChain,
    spectral: &SpectralData,
    alpha: &Measure,
    t_max: usize,
) -> Result<EquivalenceReport> {
    let table = SeparationTable::for_alpha_local(chain, spectral, alpha, t_max)?;
    let delta = table.delta_alpha;
    let path = evolve_path(&alpha.to_full(chain), chain, t_max);
    let mut report = EquivalenceReport {
        max_discrepancy: 0.0,
        skipped: Vec::new(),
    };
    for (t, mu_t) in path.iter().enumerate() {
        if (t as f64) + delta < 0.0 {
            report.skipped.push(t);
            continue;
        }
        let scale = spectral.lambda_pow(t as f64 + delta);
        for (k, &y) in chain.transient().iter().enumerate() {
            let direct = 1.0 - mu_t[y] / (scale * spectral.mu_star[k]);
            let diff = (direct - table.per_state[t][k]).abs();
            report.max_discrepancy = report.max_discrepancy.max(diff);
        }
    }
    Ok(report)
}
