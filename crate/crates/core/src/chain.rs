//! Finite absorbing chains, probability measures on them, and their evolution.
//!
//! A chain is a row-stochastic matrix `P` on a finite state space split into
//! a target set `G` of absorbing states and its complement `A`. Everything
//! downstream indexes states densely; labels only exist at the boundary.

use std::collections::{HashMap, HashSet};

use serde::Deserialize;

use crate::error::{QstError, Result};
use crate::matrix::DenseMatrix;

/// Stochasticity tolerance for rows of `P` and for probability measures.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Largest state space handled by the dense kernels.
pub const MAX_STATES: usize = 4096;

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// Rewrite target rows to identity rows instead of rejecting them.
    pub force_absorb: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbingChain {
    labels: Vec<String>,
    p: DenseMatrix,
    targets: Vec<usize>,
    transient: Vec<usize>,
    /// Position of each state inside `transient`, if it is transient.
    transient_pos: Vec<Option<usize>>,
    target_pos: Vec<Option<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainSpecDoc {
    states: Vec<String>,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    absorbing: Vec<String>,
    #[serde(default)]
    alpha: Option<HashMap<String, f64>>,
}

/// A parsed chain-spec file: the chain plus the optional initial distribution.
#[derive(Debug, Clone)]
pub struct ChainDocument {
    pub chain: AbsorbingChain,
    pub alpha: Option<Measure>,
}

/// Parses and validates a chain-spec document.
pub fn parse_chain(text: &str, opts: &ParseOptions) -> Result<AbsorbingChain> {
    parse_chain_document(text, opts).map(|doc| doc.chain)
}

pub fn parse_chain_document(text: &str, opts: &ParseOptions) -> Result<ChainDocument> {
    let doc: ChainSpecDoc =
        serde_json::from_str(text).map_err(|e| QstError::MalformedSpec(e.to_string()))?;
    let chain = AbsorbingChain::new(doc.states, doc.p, &doc.absorbing, opts)?;
    let alpha = match doc.alpha {
        None => None,
        Some(map) => {
            let mut weights = vec![0.0; chain.len()];
            for (label, w) in map {
                let idx = chain
                    .index_of(&label)
                    .ok_or_else(|| QstError::UnknownState(label.clone()))?;
                weights[idx] = w;
            }
            Some(Measure::new(Domain::Full, weights)?)
        }
    };
    Ok(ChainDocument { chain, alpha })
}

impl AbsorbingChain {
    /// Validates and builds a chain from labels, rows of `P`, and target labels.
    pub fn new(
        labels: Vec<String>,
        rows: Vec<Vec<f64>>,
        absorbing: &[String],
        opts: &ParseOptions,
    ) -> Result<Self> {
        let n = labels.len();
        if n > MAX_STATES {
            return Err(QstError::TooLarge {
                states: n,
                max: MAX_STATES,
            });
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(QstError::MalformedSpec(format!("duplicate state {l:?}")));
            }
        }
        if rows.len() != n {
            return Err(QstError::MalformedSpec(format!(
                "P has {} rows for {n} states",
                rows.len()
            )));
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(QstError::MalformedSpec(format!(
                "row {} has {} entries, expected {n}",
                labels[i],
                r.len()
            )));
        }
        let index: HashMap<&str, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let mut is_target = vec![false; n];
        for g in absorbing {
            let &i = index
                .get(g.as_str())
                .ok_or_else(|| QstError::UnknownState(g.clone()))?;
            is_target[i] = true;
        }
        let mut p = DenseMatrix::from_rows(&rows).expect("row lengths checked above");

        for i in 0..n {
            for j in 0..n {
                let v = p[(i, j)];
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(QstError::EntryOutOfRange {
                        row: labels[i].clone(),
                        col: labels[j].clone(),
                        value: v,
                    });
                }
            }
        }
        for (i, sum) in p.row_sums().into_iter().enumerate() {
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(QstError::RowSumViolation {
                    row: labels[i].clone(),
                    sum,
                });
            }
        }

        let targets: Vec<usize> = (0..n).filter(|&i| is_target[i]).collect();
        let transient: Vec<usize> = (0..n).filter(|&i| !is_target[i]).collect();
        if targets.is_empty() {
            return Err(QstError::EmptyPartition { which: "target" });
        }
        if transient.is_empty() {
            return Err(QstError::EmptyPartition { which: "transient" });
        }
        for &g in &targets {
            if p[(g, g)] != 1.0 {
                if !opts.force_absorb {
                    return Err(QstError::NonAbsorbingTarget {
                        state: labels[g].clone(),
                    });
                }
                for j in 0..n {
                    p[(g, j)] = if j == g { 1.0 } else { 0.0 };
                }
            }
        }

        let mut transient_pos = vec![None; n];
        for (k, &i) in transient.iter().enumerate() {
            transient_pos[i] = Some(k);
        }
        let mut target_pos = vec![None; n];
        for (k, &i) in targets.iter().enumerate() {
            target_pos[i] = Some(k);
        }
        let chain = Self {
            labels,
            p,
            targets,
            transient,
            transient_pos,
            target_pos,
        };
        if !is_primitive(&chain.restrict_transient(), None) {
            return Err(QstError::NotPrimitive);
        }
        Ok(chain)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn transition(&self) -> &DenseMatrix {
        &self.p
    }

    /// Target (absorbing) state indices, ascending.
    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// Transient state indices, ascending.
    pub fn transient(&self) -> &[usize] {
        &self.transient
    }

    pub fn is_target(&self, i: usize) -> bool {
        self.target_pos[i].is_some()
    }

    pub fn transient_position(&self, i: usize) -> Option<usize> {
        self.transient_pos[i]
    }

    pub fn target_position(&self, i: usize) -> Option<usize> {
        self.target_pos[i]
    }

    /// The sub-stochastic block `[P]_A`, indexed in the order of [`Self::transient`].
    pub fn restrict_transient(&self) -> DenseMatrix {
        self.p.submatrix(&self.transient, &self.transient)
    }

    /// One-step flux from the transient set into each target, `R = P[A, G]`.
    pub fn exit_flux(&self) -> DenseMatrix {
        self.p.submatrix(&self.transient, &self.targets)
    }

    /// Spreads a vector indexed by `A` onto the full state space (zero on `G`).
    pub fn embed_transient(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (k, &i) in self.transient.iter().enumerate() {
            out[i] = v[k];
        }
        out
    }

    pub fn embed_targets(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (k, &i) in self.targets.iter().enumerate() {
            out[i] = v[k];
        }
        out
    }

    pub fn project_transient(&self, full: &[f64]) -> Vec<f64> {
        self.transient.iter().map(|&i| full[i]).collect()
    }

    pub fn project_targets(&self, full: &[f64]) -> Vec<f64> {
        self.targets.iter().map(|&i| full[i]).collect()
    }

    /// One step of the forward equation on the full space.
    pub fn step(&self, v: &[f64]) -> Vec<f64> {
        self.p.left_mul(v)
    }
}

/// Which part of the state space a [`Measure`]'s weights are indexed by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Full,
    Transient,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    domain: Domain,
    weights: Vec<f64>,
}

impl Measure {
    /// Builds a nonnegative measure; weights are indexed by the domain's ordering.
    pub fn new(domain: Domain, weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(QstError::InvalidMeasure(format!("weight {w} is negative or not finite")));
        }
        Ok(Self { domain, weights })
    }

    pub fn point(chain: &AbsorbingChain, label: &str) -> Result<Self> {
        let i = chain
            .index_of(label)
            .ok_or_else(|| QstError::UnknownState(label.to_string()))?;
        let mut w = vec![0.0; chain.len()];
        w[i] = 1.0;
        Self::new(Domain::Full, w)
    }

    pub fn point_index(chain: &AbsorbingChain, i: usize) -> Self {
        let mut w = vec![0.0; chain.len()];
        w[i] = 1.0;
        Self {
            domain: Domain::Full,
            weights: w,
        }
    }

    pub fn uniform_transient(chain: &AbsorbingChain) -> Self {
        let n = chain.transient().len();
        Self {
            domain: Domain::Transient,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_probability(&self) -> bool {
        (self.total() - 1.0).abs() <= STOCHASTIC_TOL
    }

    /// Rescales to total mass one.
    pub fn normalized(&self) -> Result<Self> {
        let total = self.total();
        if total <= 0.0 {
            return Err(QstError::InvalidMeasure("zero total mass".into()));
        }
        Ok(Self {
            domain: self.domain,
            weights: self.weights.iter().map(|w| w / total).collect(),
        })
    }

    /// Weights on the full state space.
    pub fn to_full(&self, chain: &AbsorbingChain) -> Vec<f64> {
        match self.domain {
            Domain::Full => self.weights.clone(),
            Domain::Transient => chain.embed_transient(&self.weights),
            Domain::Target => chain.embed_targets(&self.weights),
        }
    }

    /// Weights on the transient set; fails if any mass sits on a target.
    pub fn on_transient(&self, chain: &AbsorbingChain) -> Result<Vec<f64>> {
        match self.domain {
            Domain::Transient => Ok(self.weights.clone()),
            Domain::Target => Err(QstError::SupportOutsideTransient {
                state: chain.label(chain.targets()[0]).to_string(),
            }),
            Domain::Full => {
                if let Some(&g) = chain.targets().iter().find(|&&g| self.weights[g] > 0.0) {
                    return Err(QstError::SupportOutsideTransient {
                        state: chain.label(g).to_string(),
                    });
                }
                Ok(chain.project_transient(&self.weights))
            }
        }
    }
}

/// `mu_t = alpha P^t` by repeated vector-matrix products.
pub fn evolve(alpha: &Measure, chain: &AbsorbingChain, t: usize) -> Result<Measure> {
    if !alpha.is_probability() {
        return Err(QstError::InvalidMeasure(format!(
            "initial measure has mass {}",
            alpha.total()
        )));
    }
    let mut v = alpha.to_full(chain);
    for _ in 0..t {
        v = chain.step(&v);
    }
    Ok(Measure {
        domain: Domain::Full,
        weights: v,
    })
}

/// The full trajectory `mu_0, ..., mu_{t_max}` of the forward equation.
pub fn evolve_path(start: &[f64], chain: &AbsorbingChain, t_max: usize) -> Vec<Vec<f64>> {
    let mut path = Vec::with_capacity(t_max + 1);
    path.push(start.to_vec());
    for t in 0..t_max {
        let next = chain.step(&path[t]);
        path.push(next);
    }
    path
}

/// How the members of an [`EvolvingMeasure`] are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    /// `mu_t = base P^t`.
    PushForward,
    /// `mu_t = lambda^(t+shift) mu*` on `A`, `(1 - lambda^(t+shift)) omega` on `G`.
    Squeezing {
        lambda: f64,
        mu_star: Vec<f64>,
        omega: Vec<f64>,
        shift: f64,
    },
}

/// A family `mu_t` with `mu_{t+1} = mu_t P`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolvingMeasure {
    base: Vec<f64>,
    generator: Generator,
}

impl EvolvingMeasure {
    pub fn push_forward(base: &Measure, chain: &AbsorbingChain) -> Self {
        Self {
            base: base.to_full(chain),
            generator: Generator::PushForward,
        }
    }

    pub fn squeezing(
        chain: &AbsorbingChain,
        lambda: f64,
        mu_star: Vec<f64>,
        omega: Vec<f64>,
        shift: f64,
    ) -> Self {
        let generator = Generator::Squeezing {
            lambda,
            mu_star,
            omega,
            shift,
        };
        let base = squeezing_at(chain, &generator, 0.0);
        Self { base, generator }
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    /// Member at time zero, on the full space.
    pub fn base(&self) -> &[f64] {
        &self.base
    }

    /// `mu_0, ..., mu_{t_max}` on the full space, propagated from `mu_0`.
    /// For the squeezing family this agrees with the closed form up to the
    /// rounding of `lambda`, which the closed form amplifies by `t`.
    pub fn materialize(&self, chain: &AbsorbingChain, t_max: usize) -> Vec<Vec<f64>> {
        evolve_path(&self.base, chain, t_max)
    }

    /// Member at time `t` from the generator's closed form, when it has one.
    pub fn closed_form(&self, chain: &AbsorbingChain, t: usize) -> Option<Vec<f64>> {
        match self.generator {
            Generator::PushForward => None,
            Generator::Squeezing { .. } => Some(squeezing_at(chain, &self.generator, t as f64)),
        }
    }

    /// Largest deviation from `mu_{t+1} = mu_t P` over `t < t_max`, on the
    /// closed form when there is one.
    pub fn evolution_defect(&self, chain: &AbsorbingChain, t_max: usize) -> f64 {
        let path: Vec<Vec<f64>> = match self.generator {
            Generator::PushForward => self.materialize(chain, t_max),
            Generator::Squeezing { .. } => (0..=t_max)
                .map(|t| squeezing_at(chain, &self.generator, t as f64))
                .collect(),
        };
        path.windows(2)
            .map(|w| {
                let pushed = chain.step(&w[0]);
                crate::matrix::max_abs(pushed.iter().zip(&w[1]).map(|(a, b)| a - b))
            })
            .fold(0.0, f64::max)
    }
}

fn squeezing_at(chain: &AbsorbingChain, generator: &Generator, t: f64) -> Vec<f64> {
    let Generator::Squeezing {
        lambda,
        mu_star,
        omega,
        shift,
    } = generator
    else {
        unreachable!("squeezing_at called on a push-forward family")
    };
    let exponent = (t + shift) * lambda.ln();
    let decay = exponent.exp();
    let escaped = -exponent.exp_m1();
    let mut out = chain.embed_transient(mu_star);
    for v in out.iter_mut() {
        *v *= decay;
    }
    for (k, &g) in chain.targets().iter().enumerate() {
        out[g] = escaped * omega[k];
    }
    out
}

/// Whether some power `n <= bound` of the zero pattern of `sub` is strictly
/// positive. `bound` defaults to the Wielandt number `n^2 - 2n + 2`.
pub fn is_primitive(sub: &DenseMatrix, bound: Option<usize>) -> bool {
    let n = sub.nrows();
    if n == 0 || !sub.is_square() {
        return false;
    }
    let wielandt = n * n + 2 - 2 * n;
    let bound = bound.unwrap_or(wielandt);
    if bound == 0 {
        return false;
    }
    if bound >= wielandt {
        irreducible_and_aperiodic(sub)
    } else {
        pattern_power_positive(sub, bound)
    }
}

fn adjacency(sub: &DenseMatrix) -> Vec<Vec<usize>> {
    let n = sub.nrows();
    (0..n)
        .map(|i| (0..n).filter(|&j| sub[(i, j)] > 0.0).collect())
        .collect()
}

fn bfs_levels(adj: &[Vec<usize>]) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[0] = Some(0);
    let mut queue = std::collections::VecDeque::from([0]);
    while let Some(u) = queue.pop_front() {
        let lu = level[u].unwrap();
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = Some(lu + 1);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

// Primitive iff strongly connected with period one. The period is the gcd of
// level(u) + 1 - level(v) over all edges u -> v of a BFS from one vertex.
fn irreducible_and_aperiodic(sub: &DenseMatrix) -> bool {
    let adj = adjacency(sub);
    let n = adj.len();
    let fwd = bfs_levels(&adj);
    if fwd.iter().any(Option::is_none) {
        return false;
    }
    let mut rev = vec![Vec::new(); n];
    for (u, out) in adj.iter().enumerate() {
        for &v in out {
            rev[v].push(u);
        }
    }
    if bfs_levels(&rev).iter().any(Option::is_none) {
        return false;
    }
    let mut period = 0;
    for (u, out) in adj.iter().enumerate() {
        for &v in out {
            let d = (fwd[u].unwrap() + 1).abs_diff(fwd[v].unwrap());
            period = gcd(period, d);
        }
    }
    period == 1
}

type BitRow = Vec<u64>;

fn bool_matmul(a: &[BitRow], b: &[BitRow]) -> Vec<BitRow> {
    let n = a.len();
    a.iter()
        .map(|row| {
            let mut out = vec![0u64; b[0].len()];
            for k in 0..n {
                if row[k / 64] >> (k % 64) & 1 == 1 {
                    for (o, w) in out.iter_mut().zip(&b[k]) {
                        *o |= w;
                    }
                }
            }
            out
        })
        .collect()
}

// Once some power is positive every later one is too, so checking the
// `bound`-th power by repeated squaring is enough.
fn pattern_power_positive(sub: &DenseMatrix, bound: usize) -> bool {
    let n = sub.nrows();
    let words = n.div_ceil(64);
    let base: Vec<BitRow> = (0..n)
        .map(|i| {
            let mut row = vec![0u64; words];
            for j in 0..n {
                if sub[(i, j)] > 0.0 {
                    row[j / 64] |= 1 << (j % 64);
                }
            }
            row
        })
        .collect();
    let mut result: Option<Vec<BitRow>> = None;
    let mut power = base;
    let mut e = bound;
    while e > 0 {
        if e & 1 == 1 {
            result = Some(match result {
                None => power.clone(),
                Some(r) => bool_matmul(&r, &power),
            });
        }
        e >>= 1;
        if e > 0 {
            power = bool_matmul(&power, &power);
        }
    }
    let full = |row: &BitRow| (0..n).all(|j| row[j / 64] >> (j % 64) & 1 == 1);
    result.is_some_and(|r| r.iter().all(full))
}
