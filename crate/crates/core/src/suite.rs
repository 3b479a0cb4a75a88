//! The invariant battery run by `qst verify`, one named residual per check.

use serde::Serialize;

use crate::chain::{evolve_path, AbsorbingChain, Measure};
use crate::error::Result;
use crate::hitting::{exit_decomposition_auto, hitting_tail_exact, representation_formula, ExitSplit, TailReport};
use crate::matrix::max_abs;
use crate::sim::{exact_strong_time_tail, run_exact};
use crate::spectral::{separation_equivalence_check, SeparationTable, SpectralData, SPECTRAL_TOL};
use crate::strong_times::{
    csqst_defining_property_check, csqst_jump_table, csqst_law, shifted_squeezing_strong_time,
    CsqstLaw, StrongTimeConstruction,
};

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            residual,
            tolerance,
            passed: residual <= tolerance,
        }
    }
}

/// Horizon over which the separation equivalence is compared.
pub const EQUIVALENCE_HORIZON: usize = 20;
/// Horizon of the exponentiality check at quasi-stationarity.
pub const QSD_HORIZON: usize = 50;
/// Grid bound for the submultiplicativity check.
pub const SUBMULT_GRID: usize = 10;

/// Checks plus the artifacts they were computed from.
#[derive(Debug, Clone)]
pub struct SuiteOutput {
    pub checks: Vec<Check>,
    pub table: SeparationTable,
    pub csqst: CsqstLaw,
    pub tail_report: TailReport,
    pub exit_split: ExitSplit,
    pub strong_time: StrongTimeConstruction,
}

impl SuiteOutput {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

/// Largest violation of `s(t+u) <= s(t) s(u)` for `t, u <= grid`.
pub fn submultiplicativity_violation(envelope: &[f64], grid: usize) -> f64 {
    let mut worst = 0.0f64;
    for t in 0..=grid {
        for u in 0..=grid {
            if let Some(&joint) = envelope.get(t + u) {
                worst = worst.max(joint - envelope[t] * envelope[u]);
            }
        }
    }
    worst
}

/// `max_t |P(tau^{mu*}_G > t) - lambda^t|`.
pub fn exponentiality_residual(chain: &AbsorbingChain, spectral: &SpectralData, t_max: usize) -> f64 {
    let tail = hitting_tail_exact(&spectral.mu_star_measure(), chain, t_max);
    max_abs(
        tail.iter()
            .enumerate()
            .map(|(t, p)| p - spectral.lambda.powi(t as i32)),
    )
}

/// Invariants of the survival-tail decomposition and of the exit split.
pub fn hitting_checks(
    spectral: &SpectralData,
    table: &SeparationTable,
    report: &TailReport,
    split: &ExitSplit,
) -> Vec<Check> {
    let applicable = || report.rows.iter().filter(|r| r.leading_term.is_some());
    let sandwich = applicable()
        .map(|r| {
            (r.lower_bound.unwrap_or(0.0) - r.exact_tail)
                .max(r.exact_tail - r.upper_bound.unwrap_or(1.0))
                .max(0.0)
        })
        .fold(0.0, f64::max);
    // (upper - lower) / C <= s~(t) with C = lambda^delta sum mu*/nu and s~ the
    // global envelope
    let gap_constant = spectral.lambda_pow(table.delta_alpha) * spectral.inverse_gamma_mass();
    let gap = applicable()
        .map(|r| {
            let width = r.upper_bound.unwrap_or(0.0) - r.lower_bound.unwrap_or(0.0);
            (width / gap_constant - table.envelope_global[r.t]).max(0.0)
        })
        .fold(0.0, f64::max);
    let residual_sign = report
        .rows
        .iter()
        .map(|r| (-r.residual_augmented).max(r.residual_augmented - r.exact_tail).max(0.0))
        .fold(0.0, f64::max);
    let residual_monotone = report
        .rows
        .windows(2)
        .map(|w| w[1].residual_augmented - w[0].residual_augmented)
        .fold(0.0, f64::max);
    vec![
        Check::new("tail.representation_identity", report.max_identity_error(), 1e-10),
        Check::new("tail.rough_bounds", sandwich, 1e-10),
        Check::new("tail.bound_gap", gap, 1e-10),
        Check::new("tail.residual_range", residual_sign, 1e-12),
        Check::new("tail.residual_monotone", residual_monotone, 1e-12),
        Check::new("exit.decomposition", split.decomposition_error(), 1e-10),
        Check::new("exit.total_mass", split.total_mass_error(), 1e-10),
        Check::new("exit.sandwich", split.sandwich_violation(), 1e-12),
    ]
}

/// Runs every invariant for one initial measure on `A` up to `t_max`.
pub fn run_suite(
    chain: &AbsorbingChain,
    spectral: &SpectralData,
    alpha: &Measure,
    t_max: usize,
) -> Result<SuiteOutput> {
    let mut checks = Vec::new();
    for (name, r) in spectral.residuals.named() {
        checks.push(Check::new(format!("spectral.{name}"), r, SPECTRAL_TOL));
    }
    checks.push(Check::new(
        "qsd_exponentiality",
        exponentiality_residual(chain, spectral, QSD_HORIZON),
        1e-12,
    ));

    let table_horizon = t_max.max(EQUIVALENCE_HORIZON).max(2 * SUBMULT_GRID);
    let table = SeparationTable::for_alpha(chain, spectral, alpha, table_horizon)?;
    checks.push(Check::new(
        "separation_equivalence",
        separation_equivalence_check(chain, spectral, alpha, EQUIVALENCE_HORIZON)?.max_discrepancy,
        1e-9,
    ));
    checks.push(Check::new(
        "submultiplicativity",
        submultiplicativity_violation(&table.envelope_global, SUBMULT_GRID),
        1e-10,
    ));
    let monotone = table
        .envelope_alpha
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0, f64::max);
    checks.push(Check::new("separation_monotone", monotone, 1e-12));

    // Minimal strong time w.r.t. the shifted squeezing family.
    let strong = shifted_squeezing_strong_time(alpha, chain, spectral, t_max)?;
    let family = spectral.squeezing_family(chain, table.delta_alpha);
    checks.push(Check::new(
        "squeezing.evolution_defect",
        family.evolution_defect(chain, t_max),
        1e-12,
    ));
    checks.push(Check::new("strong_time.recursion", strong.recursion_defect, 1e-12));
    let jumps = strong.jump_table(chain);
    let aug_tail = exact_strong_time_tail(alpha, chain, &jumps, t_max)?;
    checks.push(Check::new(
        "strong_time.tail_vs_separation",
        max_abs(aug_tail.iter().zip(&strong.law.tail).map(|(a, b)| a - b)),
        1e-12,
    ));
    let path = run_exact(alpha, chain, &jumps, t_max)?;
    let pushed = evolve_path(&alpha.to_full(chain), chain, t_max);
    let mut smoothed = 0.0f64;
    let mut marginal = 0.0f64;
    for (t, law) in path.iter().enumerate() {
        let stopped = 1.0 - law.unstopped_mass();
        let reference = &strong.profile.reference[t];
        smoothed = smoothed.max(max_abs(
            law.p1.iter().zip(reference).map(|(p, r)| p - r * stopped),
        ));
        marginal = marginal.max(max_abs(
            law.marginal().iter().zip(&pushed[t]).map(|(a, b)| a - b),
        ));
    }
    checks.push(Check::new("strong_time.smoothed_identity", smoothed, 1e-10));
    checks.push(Check::new("augmented.marginal", marginal, 1e-12));

    // CSQST.
    let csqst = csqst_law(spectral, &table, t_max)?;
    checks.push(Check::new(
        "csqst.partial_sum_identity",
        csqst.max_partial_sum_residual(),
        1e-10,
    ));
    checks.push(Check::new(
        "csqst.defining_property",
        csqst_defining_property_check(alpha, chain, spectral, t_max)?,
        1e-10,
    ));
    let cjumps = csqst_jump_table(chain, &table);
    let cpath = run_exact(alpha, chain, &cjumps, t_max)?;
    let mut accumulated = 0.0f64;
    let mut acc = 0.0;
    for (t, law) in cpath.iter().enumerate() {
        acc = acc * spectral.lambda + csqst.joint_atoms[t];
        for (k, &y) in chain.transient().iter().enumerate() {
            accumulated = accumulated.max((law.p1[y] - spectral.mu_star[k] * acc).abs());
        }
    }
    checks.push(Check::new("csqst.accumulated_identity", accumulated, 1e-10));
    let delayed_slack = csqst.bound_slack(&crate::strong_times::delayed_csqst_atoms(&csqst));
    let delayed_worst = delayed_slack.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    checks.push(Check::new("csqst.delayed_slack_nonnegative", (-delayed_worst).max(0.0), 1e-12));

    // Survival tail decomposition.
    let tail_report = representation_formula(alpha, chain, spectral, &table, t_max)?;
    let exit_split = exit_decomposition_auto(alpha, chain, spectral)?;
    checks.extend(hitting_checks(spectral, &table, &tail_report, &exit_split));

    Ok(SuiteOutput {
        checks,
        table,
        csqst,
        tail_report,
        exit_split,
        strong_time: strong,
    })
}
