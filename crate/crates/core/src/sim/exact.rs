use crate::chain::{AbsorbingChain, Measure};
use crate::error::{QstError, Result};
use crate::strong_times::JumpTable;

/// Law of the auxiliary chain at time `t`, split by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedLaw {
    pub t: usize,
    /// Mass on `(x, 0)`.
    pub p0: Vec<f64>,
    /// Mass on `(x, 1)`.
    pub p1: Vec<f64>,
    /// Mass that switched layers at time `t`, i.e. `P(X_t = x, tau_1 = t)`.
    pub jumped: Vec<f64>,
}

impl AugmentedLaw {
    /// `p0 + p1`, which must equal `mu^alpha_t`.
    pub fn marginal(&self) -> Vec<f64> {
        self.p0.iter().zip(&self.p1).map(|(a, b)| a + b).collect()
    }

    /// `P(tau_1 > t)`
    pub fn unstopped_mass(&self) -> f64 {
        self.p0.iter().sum()
    }
}

/// Time-zero law: `alpha(y) J(0, y)` on layer 1, the rest on layer 0.
pub fn initial_law(alpha: &Measure, chain: &AbsorbingChain, jumps: &JumpTable) -> Result<AugmentedLaw> {
    if !alpha.is_probability() {
        return Err(QstError::InvalidMeasure(format!(
            "initial measure has mass {}",
            alpha.total()
        )));
    }
    let a = alpha.to_full(chain);
    let jumped: Vec<f64> = a.iter().enumerate().map(|(y, m)| m * jumps.at(0, y)).collect();
    let p0 = a.iter().zip(&jumped).map(|(m, j)| m - j).collect();
    Ok(AugmentedLaw {
        t: 0,
        p0,
        p1: jumped.clone(),
        jumped,
    })
}

/// One step of the auxiliary chain, applying the hazard `J(t+1, .)` at the
/// arrival state.
pub fn augmented_step(law: &AugmentedLaw, chain: &AbsorbingChain, jumps: &JumpTable) -> AugmentedLaw {
    let t = law.t + 1;
    let arrived = chain.step(&law.p0);
    let jumped: Vec<f64> = arrived
        .iter()
        .enumerate()
        .map(|(z, m)| m * jumps.at(t, z))
        .collect();
    let p0 = arrived.iter().zip(&jumped).map(|(m, j)| m - j).collect();
    let p1 = chain
        .step(&law.p1)
        .into_iter()
        .zip(&jumped)
        .map(|(m, j)| m + j)
        .collect();
    AugmentedLaw { t, p0, p1, jumped }
}

/// Laws at `t = 0..=t_max`.
pub fn run_exact(
    alpha: &Measure,
    chain: &AbsorbingChain,
    jumps: &JumpTable,
    t_max: usize,
) -> Result<Vec<AugmentedLaw>> {
    let mut out = Vec::with_capacity(t_max + 1);
    out.push(initial_law(alpha, chain, jumps)?);
    for t in 0..t_max {
        let next = augmented_step(&out[t], chain, jumps);
        out.push(next);
    }
    Ok(out)
}

/// `P(tau_1 > t)` for `t = 0..=t_max`.
pub fn exact_strong_time_tail(
    alpha: &Measure,
    chain: &AbsorbingChain,
    jumps: &JumpTable,
    t_max: usize,
) -> Result<Vec<f64>> {
    Ok(run_exact(alpha, chain, jumps, t_max)?
        .iter()
        .map(AugmentedLaw::unstopped_mass)
        .collect())
}
