//! Minimal strong times with respect to evolving measures, and the minimal
//! conditionally strong quasi-stationary time (CSQST), as exact discrete laws.
//!
//! For a family `mu_t` with `mu_{t+1} = mu_t P` the separation
//! `s(t) = max_y 1 - mu^alpha_t(y) / mu_t(y)` is the tail of the fastest
//! randomized stopping time whose stopped position is distributed as `mu_t`.
//! The construction stops, at time `t` and position `y`, with probability
//! `J(t, y) = (s(t-1) - s(t)) / (s(t-1) - s(t, y))`.
//!
//! The CSQST uses the same rule with the local-chain separation `s~(t, y)`
//! on the transient set only, and never stops on targets.

use serde::Serialize;

use crate::chain::{evolve_path, AbsorbingChain, EvolvingMeasure, Measure};
use crate::error::{QstError, Result};
use crate::matrix::max_abs;
use crate::spectral::{SeparationTable, SpectralData};

/// Tolerance for the sigma/theta recursion and for separation monotonicity.
pub const RECURSION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LawKind {
    StrongWrtEvolving,
    Csqst,
}

/// Law of a randomized stopping time on `0..=t_max`, with the unresolved mass
/// lumped at infinity.
#[derive(Debug, Clone, Serialize)]
pub struct StoppingTimeLaw {
    pub kind: LawKind,
    pub atoms: Vec<f64>,
    /// `P(tau > t)`
    pub tail: Vec<f64>,
    /// Mass not stopped within the horizon, `tail[t_max]`.
    pub atom_at_infinity: f64,
    /// `P(tau = +inf)` in closed form, when known.
    pub exact_infinity: Option<f64>,
}

impl StoppingTimeLaw {
    fn from_tail(kind: LawKind, tail: Vec<f64>) -> Self {
        let atoms = tail
            .iter()
            .enumerate()
            .map(|(t, s)| if t == 0 { 1.0 - s } else { tail[t - 1] - s })
            .collect();
        let atom_at_infinity = *tail.last().expect("nonempty horizon");
        Self {
            kind,
            atoms,
            tail,
            atom_at_infinity,
            exact_infinity: None,
        }
    }

    pub fn t_max(&self) -> usize {
        self.tail.len() - 1
    }
}

/// Separation of `mu^alpha_t` from a reference family.
#[derive(Debug, Clone)]
pub struct SeparationProfile {
    /// `s(t) = max_y s(t, y)`
    pub envelope: Vec<f64>,
    /// `s(t, y)` over the full space; `None` where both measures vanish.
    pub per_state: Vec<Vec<Option<f64>>>,
    /// `mu^alpha_t` on the full space.
    pub law: Vec<Vec<f64>>,
    /// `mu_t` on the full space.
    pub reference: Vec<Vec<f64>>,
}

impl SeparationProfile {
    pub fn before(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.envelope[t - 1]
        }
    }
}

/// `s^alpha_mu(t)` for `t = 0..=t_max`. Terms with `0/0` are skipped; a
/// vanishing reference value where the chain has mass is a support violation.
/// Families that are signed (shifted squeezing before `t + delta = 0`) give
/// per-state values above 1 and an envelope capped at 1.
pub fn sep_evolving(
    alpha: &Measure,
    evolving: &EvolvingMeasure,
    chain: &AbsorbingChain,
    t_max: usize,
) -> Result<SeparationProfile> {
    let law = evolve_path(&alpha.to_full(chain), chain, t_max);
    let reference = evolving.materialize(chain, t_max);
    let mut envelope = Vec::with_capacity(t_max + 1);
    let mut per_state = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        let row: Vec<Option<f64>> = law[t]
            .iter()
            .zip(&reference[t])
            .enumerate()
            .map(|(y, (&m, &r))| {
                if m > 0.0 && r == 0.0 {
                    Err(QstError::SupportViolation {
                        t,
                        state: chain.label(y).to_string(),
                    })
                } else if m == 0.0 && r == 0.0 {
                    Ok(None)
                } else {
                    Ok(Some(1.0 - m / r))
                }
            })
            .collect::<Result<_>>()?;
        // A negative reference entry forbids stopping at t; such terms exceed 1
        // and the envelope saturates.
        let s = row
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
            .min(1.0);
        if let Some(&prev) = envelope.last() {
            if s > prev + RECURSION_TOL {
                return Err(QstError::NonMonotoneSeparation { t, prev, next: s });
            }
        }
        envelope.push(s);
        per_state.push(row);
    }
    Ok(SeparationProfile {
        envelope,
        per_state,
        law,
        reference,
    })
}

/// `J = (s_prev - s_now) / (s_prev - s_state)` with `0/0 = 0`, clamped to `[0,1]`.
pub fn jump_probability(s_prev: f64, s_now: f64, s_state: f64) -> f64 {
    let num = s_prev - s_now;
    let den = s_prev - s_state;
    if num <= 0.0 || den <= 0.0 {
        return 0.0;
    }
    (num / den).min(1.0)
}

/// Stopping hazard `J(t, z)` over the full space; zero past the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpTable {
    values: Vec<Vec<f64>>,
    targets_silent: bool,
}

impl JumpTable {
    pub fn new(values: Vec<Vec<f64>>, chain: &AbsorbingChain) -> Self {
        let targets_silent = values
            .iter()
            .all(|row| chain.targets().iter().all(|&g| row[g] == 0.0));
        Self {
            values,
            targets_silent,
        }
    }

    /// Constant hazard, mostly for tests.
    pub fn constant(value: f64, chain: &AbsorbingChain, horizon: usize) -> Self {
        Self::new(vec![vec![value; chain.len()]; horizon + 1], chain)
    }

    pub fn at(&self, t: usize, z: usize) -> f64 {
        self.values.get(t).map_or(0.0, |row| row[z])
    }

    pub fn row(&self, t: usize) -> Option<&[f64]> {
        self.values.get(t).map(Vec::as_slice)
    }

    pub fn horizon(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    /// True when no target state ever carries a positive hazard.
    pub fn targets_silent(&self) -> bool {
        self.targets_silent
    }
}

/// The minimal strong time together with the vectors of its construction.
#[derive(Debug, Clone)]
pub struct StrongTimeConstruction {
    pub law: StoppingTimeLaw,
    pub profile: SeparationProfile,
    /// `sigma_t(y) = mu_t(y) [s(t-1) - s(t)]`
    pub sigma: Vec<Vec<f64>>,
    /// `theta_t(y) = mu_t(y) [s(t-1) - s(t, y)]`
    pub theta: Vec<Vec<f64>>,
    /// Largest deviation of `(theta_t - sigma_t) P = theta_{t+1}` and `theta_0 = alpha`.
    pub recursion_defect: f64,
}

impl StrongTimeConstruction {
    pub fn jump_table(&self, chain: &AbsorbingChain) -> JumpTable {
        let p = &self.profile;
        let values = (0..p.envelope.len())
            .map(|t| {
                p.per_state[t]
                    .iter()
                    .map(|s| match s {
                        Some(s) => jump_probability(p.before(t), p.envelope[t], *s),
                        None => 0.0,
                    })
                    .collect()
            })
            .collect();
        JumpTable::new(values, chain)
    }
}

/// Builds the minimal strong time w.r.t. `evolving` and checks its
/// sigma/theta recursion at every step.
pub fn minimal_strong_time(
    alpha: &Measure,
    evolving: &EvolvingMeasure,
    chain: &AbsorbingChain,
    t_max: usize,
) -> Result<StrongTimeConstruction> {
    let profile = sep_evolving(alpha, evolving, chain, t_max)?;
    let n = chain.len();
    let mut sigma = Vec::with_capacity(t_max + 1);
    let mut theta = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        let prev = profile.before(t);
        let now = profile.envelope[t];
        let mu = &profile.reference[t];
        sigma.push((0..n).map(|y| mu[y] * (prev - now)).collect::<Vec<_>>());
        theta.push(
            (0..n)
                .map(|y| match profile.per_state[t][y] {
                    Some(s) => mu[y] * (prev - s),
                    None => 0.0,
                })
                .collect::<Vec<_>>(),
        );
    }

    let alpha_full = alpha.to_full(chain);
    let mut defect = max_abs(theta[0].iter().zip(&alpha_full).map(|(a, b)| a - b));
    if defect > RECURSION_TOL {
        return Err(QstError::RecursionMismatch { t: 0, deviation: defect });
    }
    for t in 0..t_max {
        let diff: Vec<f64> = theta[t].iter().zip(&sigma[t]).map(|(a, b)| a - b).collect();
        let pushed = chain.step(&diff);
        let dev = max_abs(pushed.iter().zip(&theta[t + 1]).map(|(a, b)| a - b));
        if dev > RECURSION_TOL {
            return Err(QstError::RecursionMismatch {
                t: t + 1,
                deviation: dev,
            });
        }
        defect = defect.max(dev);
    }

    let law = StoppingTimeLaw::from_tail(LawKind::StrongWrtEvolving, profile.envelope.clone());
    Ok(StrongTimeConstruction {
        law,
        profile,
        sigma,
        theta,
        recursion_defect: defect,
    })
}

/// `P(tau = inf)` for the minimal strong time w.r.t. the shifted squeezing
/// family: on `A` the separation vanishes, on `G` it tends to
/// `1 - P(X_{tau_G} = y) / omega(y)`.
pub fn shifted_squeezing_infinity_mass(
    chain: &AbsorbingChain,
    spectral: &SpectralData,
    alpha: &Measure,
) -> Result<f64> {
    let exit = crate::hitting::absorption_distribution(alpha, chain)?;
    let mut s = 0.0f64;
    for (k, (&h, &w)) in exit.iter().zip(&spectral.omega).enumerate() {
        if w > 0.0 {
            s = s.max(1.0 - h / w);
        } else if h > 0.0 {
            return Err(QstError::SupportViolation {
                t: usize::MAX,
                state: chain.label(chain.targets()[k]).to_string(),
            });
        }
    }
    Ok(s)
}

/// Minimal strong time w.r.t. `rho_t = mu^{mu*}_{t + delta_alpha}`.
pub fn shifted_squeezing_strong_time(
    alpha: &Measure,
    chain: &AbsorbingChain,
    spectral: &SpectralData,
    t_max: usize,
) -> Result<StrongTimeConstruction> {
    let on_a = alpha.on_transient(chain)?;
    let delta = crate::spectral::time_shift(&on_a, &spectral.gamma, spectral.lambda)?;
    let family = spectral.squeezing_family(chain, delta);
    let mut c = minimal_strong_time(alpha, &family, chain, t_max)?;
    c.law.exact_infinity = Some(shifted_squeezing_infinity_mass(chain, spectral, alpha)?);
    Ok(c)
}

/// Law of the minimal CSQST on `0..=t_max`.
#[derive(Debug, Clone, Serialize)]
pub struct CsqstLaw {
    pub lambda: f64,
    pub delta_alpha: f64,
    /// `P(tau_* = t < tau_G)`
    pub joint_atoms: Vec<f64>,
    /// `1 - sum_t joint_atoms(t)`, i.e. `P(tau_G < tau_*)` up to the horizon.
    pub infinity_mass: f64,
    /// `s~^alpha~(t)` used to build the atoms.
    pub separation: Vec<f64>,
    /// `|sum_{u<=t} lambda^{-u} atom(u) - lambda^delta (1 - s~(t))|`
    pub partial_sum_residuals: Vec<f64>,
    /// `lambda^(t+delta) s~(t)`, which bounds `sum_{u>t} atom(u)`.
    pub tail_bounds: Vec<f64>,
}

impl CsqstLaw {
    pub fn t_max(&self) -> usize {
        self.joint_atoms.len() - 1
    }

    /// `P(tau_* > t)`, counting `tau_* = inf` as larger than every `t`.
    pub fn tail(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.joint_atoms
            .iter()
            .map(|a| {
                acc += a;
                1.0 - acc
            })
            .collect()
    }

    pub fn max_partial_sum_residual(&self) -> f64 {
        self.partial_sum_residuals.iter().copied().fold(0.0, f64::max)
    }

    /// Slack of the minimality inequality for arbitrary atoms:
    /// `lambda^delta (1 - s~(t)) - sum_{u<=t} lambda^{-u} atom(u)`.
    pub fn bound_slack(&self, atoms: &[f64]) -> Vec<f64> {
        let lambda_delta = self.lambda.powf(self.delta_alpha);
        partial_sum_functional(atoms, self.lambda)
            .into_iter()
            .zip(&self.separation)
            .map(|(sum, s)| lambda_delta * (1.0 - s) - sum)
            .collect()
    }
}

/// `sum_{u<=t} lambda^{-u} atom(u)` for every `t`.
pub fn partial_sum_functional(atoms: &[f64], lambda: f64) -> Vec<f64> {
    let mut acc = 0.0;
    atoms
        .iter()
        .enumerate()
        .map(|(u, a)| {
            acc += a * lambda.powi(-(u as i32));
            acc
        })
        .collect()
}

/// Atoms of a CSQST that waits one extra step after the minimal one fires.
/// A stopped walker distributed as `mu*` survives one step with probability
/// `lambda` and is still distributed as `mu*`.
pub fn delayed_csqst_atoms(law: &CsqstLaw) -> Vec<f64> {
    let mut out = vec![0.0; law.joint_atoms.len()];
    for t in 1..out.len() {
        out[t] = law.lambda * law.joint_atoms[t - 1];
    }
    out
}

/// Minimal CSQST law from the local-chain separation.
pub fn csqst_law(
    spectral: &SpectralData,
    table: &SeparationTable,
    t_max: usize,
) -> Result<CsqstLaw> {
    let delta = table.delta_alpha;
    if (t_max as f64) + delta < 0.0 {
        return Err(QstError::NegativeShiftedTime { t: t_max, delta });
    }
    if t_max > table.t_max {
        return Err(QstError::InvalidParameter(format!(
            "horizon {t_max} exceeds separation table horizon {}",
            table.t_max
        )));
    }
    let lambda = spectral.lambda;
    let pow = |s: f64| spectral.lambda_pow(s);
    let joint_atoms: Vec<f64> = (0..=t_max)
        .map(|t| pow(t as f64 + delta) * (table.envelope(t as isize - 1) - table.envelope(t as isize)))
        .collect();
    let sums = partial_sum_functional(&joint_atoms, lambda);
    let partial_sum_residuals = (0..=t_max)
        .map(|t| (sums[t] - pow(delta) * (1.0 - table.envelope_alpha[t])).abs())
        .collect();
    let tail_bounds = (0..=t_max)
        .map(|t| pow(t as f64 + delta) * table.envelope_alpha[t])
        .collect();
    Ok(CsqstLaw {
        lambda,
        delta_alpha: delta,
        infinity_mass: 1.0 - joint_atoms.iter().sum::<f64>(),
        joint_atoms,
        separation: table.envelope_alpha[..=t_max].to_vec(),
        partial_sum_residuals,
        tail_bounds,
    })
}

/// CSQST stopping hazard: `J_*(t, y)` from the local-chain separation on `A`,
/// zero on `G`.
pub fn csqst_jump_table(chain: &AbsorbingChain, table: &SeparationTable) -> JumpTable {
    let values = (0..=table.t_max)
        .map(|t| {
            let prev = table.envelope(t as isize - 1);
            let now = table.envelope_alpha[t];
            let mut row = vec![0.0; chain.len()];
            for (k, &y) in chain.transient().iter().enumerate() {
                row[y] = jump_probability(prev, now, table.per_state[t][k]);
            }
            row
        })
        .collect();
    JumpTable::new(values, chain)
}

/// Checks `P(X_t = y, tau_* = t) = mu*(y) P(tau_* = t < tau_G)` on `A` by
/// exact propagation of the two-layer chain; returns the largest discrepancy.
pub fn csqst_defining_property_check(
    alpha: &Measure,
    chain: &AbsorbingChain,
    spectral: &SpectralData,
    t_max: usize,
) -> Result<f64> {
    let table = SeparationTable::for_alpha_local(chain, spectral, alpha, t_max)?;
    let law = csqst_law(spectral, &table, t_max)?;
    let jumps = csqst_jump_table(chain, &table);
    let path = crate::sim::run_exact(alpha, chain, &jumps, t_max)?;
    let mut worst = 0.0f64;
    for (t, state) in path.iter().enumerate() {
        for (k, &y) in chain.transient().iter().enumerate() {
            let expected = spectral.mu_star[k] * law.joint_atoms[t];
            worst = worst.max((state.jumped[y] - expected).abs());
        }
        for &g in chain.targets() {
            worst = worst.max(state.jumped[g].abs());
        }
    }
    Ok(worst)
}

/// Smallest `t` with `lambda^(t+delta) < 1e-14`, capped at `10 ceil(1/(1-lambda))`.
pub fn default_horizon(lambda: f64, delta: f64) -> usize {
    let cap = 10 * (1.0 / (1.0 - lambda)).ceil() as usize;
    let needed = (1e-14f64.ln() / lambda.ln() - delta).floor() + 1.0;
    let needed = if needed.is_finite() && needed > 1.0 {
        needed as usize
    } else {
        1
    };
    needed.min(cap).max(1)
}
