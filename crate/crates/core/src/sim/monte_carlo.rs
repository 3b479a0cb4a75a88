use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::chain::{AbsorbingChain, Measure};
use crate::error::{QstError, Result};
use crate::strong_times::JumpTable;

/// Two-sided 99% standard normal quantile.
pub const WILSON_Z99: f64 = 2.575_829_303_548_901;

const BLOCK: usize = 4096;

#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub n: usize,
    pub seed: u64,
    pub t_cap: usize,
    /// Worker cap; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

/// A binomial proportion with its Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub count: u64,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    fn new(count: u64, n: u64) -> Self {
        let (lo, hi) = wilson_interval(count, n, WILSON_Z99);
        Self {
            count,
            estimate: count as f64 / n as f64,
            lo,
            hi,
        }
    }

    pub fn contains(&self, p: f64) -> bool {
        self.lo <= p && p <= self.hi
    }
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub n: usize,
    pub seed: u64,
    pub t_cap: usize,
    /// `P(tau_1 > t)` for `t = 0..=t_cap`, where `tau_1` is the stopping time.
    pub stop_tail: Vec<Band>,
    /// `P(tau_G > t)`
    pub hitting_tail: Vec<Band>,
    /// `P(min(tau_1, tau_G) > t)`
    pub combined_tail: Vec<Band>,
    /// `P(X_{tau_G} = y)` for each target, in [`AbsorbingChain::targets`] order.
    pub exit: Vec<Band>,
    /// Trajectories still unstopped on `A` at `t_cap`.
    pub censored: u64,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    stop: Vec<u64>,
    hit: Vec<u64>,
    combined: Vec<u64>,
    exit: Vec<u64>,
    censored: u64,
}

impl Tally {
    fn new(t_cap: usize, targets: usize) -> Self {
        Self {
            stop: vec![0; t_cap + 1],
            hit: vec![0; t_cap + 1],
            combined: vec![0; t_cap + 1],
            exit: vec![0; targets],
            censored: 0,
        }
    }

    fn merge(mut self, other: &Tally) -> Self {
        for (a, b) in [
            (&mut self.stop, &other.stop),
            (&mut self.hit, &other.hit),
            (&mut self.combined, &other.combined),
            (&mut self.exit, &other.exit),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.censored += other.censored;
        self
    }
}

struct RowSampler {
    rows: Vec<(Vec<usize>, Vec<f64>)>,
}

impl RowSampler {
    fn new(rows: impl Iterator<Item = Vec<f64>>) -> Self {
        let rows = rows
            .map(|row| {
                let mut idx = Vec::new();
                let mut cum = Vec::new();
                let mut acc = 0.0;
                for (j, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        acc += p;
                        idx.push(j);
                        cum.push(acc);
                    }
                }
                (idx, cum)
            })
            .collect();
        Self { rows }
    }

    fn sample(&self, row: usize, u: f64) -> usize {
        let (idx, cum) = &self.rows[row];
        let total = *cum.last().expect("row has positive mass");
        let k = cum.partition_point(|&c| c <= u * total);
        idx[k.min(idx.len() - 1)]
    }
}

struct Outcome {
    stop: Option<usize>,
    hit: Option<usize>,
    exit: Option<usize>,
    censored: bool,
}

fn simulate_one(
    chain: &AbsorbingChain,
    jumps: &JumpTable,
    start: &RowSampler,
    step: &RowSampler,
    t_cap: usize,
    rng: &mut ChaCha8Rng,
) -> Outcome {
    let mut x = start.sample(0, rng.random());
    let mut stop = (rng.random::<f64>() < jumps.at(0, x)).then_some(0);
    let mut hit = chain.is_target(x).then_some(0);
    let mut exit = hit.map(|_| x);
    let mut t = 0;
    while t < t_cap {
        if hit.is_some() && (stop.is_some() || jumps.targets_silent() || t >= jumps.horizon()) {
            break;
        }
        t += 1;
        x = step.sample(x, rng.random());
        if stop.is_none() && rng.random::<f64>() < jumps.at(t, x) {
            stop = Some(t);
        }
        if hit.is_none() && chain.is_target(x) {
            hit = Some(t);
            exit = Some(x);
        }
    }
    Outcome {
        stop,
        hit,
        exit,
        censored: stop.is_none() && hit.is_none(),
    }
}

/// Samples `n` trajectories of the auxiliary chain. Trajectory `i` draws from
/// its own ChaCha stream `(seed, i)`, so results do not depend on the number
/// of workers.
pub fn sample_trajectories(
    alpha: &Measure,
    chain: &AbsorbingChain,
    jumps: &JumpTable,
    config: &SimConfig,
) -> Result<SimResult> {
    if config.n == 0 || config.t_cap == 0 {
        return Err(QstError::InvalidParameter(
            "n and t_cap must be at least 1".into(),
        ));
    }
    if !alpha.is_probability() {
        return Err(QstError::InvalidMeasure(format!(
            "initial measure has mass {}",
            alpha.total()
        )));
    }
    let start = RowSampler::new(std::iter::once(alpha.to_full(chain)));
    let step = RowSampler::new(chain.transition().to_rows().into_iter());
    let base = ChaCha8Rng::seed_from_u64(config.seed);
    let t_cap = config.t_cap;
    let n_targets = chain.targets().len();

    let run_block = |block: usize| {
        let mut tally = Tally::new(t_cap, n_targets);
        let lo = block * BLOCK;
        let hi = (lo + BLOCK).min(config.n);
        for i in lo..hi {
            let mut rng = base.clone();
            rng.set_stream(i as u64);
            let o = simulate_one(chain, jumps, &start, &step, t_cap, &mut rng);
            if let Some(s) = o.stop {
                tally.stop[s] += 1;
            }
            if let Some(h) = o.hit {
                tally.hit[h] += 1;
            }
            let combined = match (o.stop, o.hit) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            if let Some(c) = combined {
                tally.combined[c] += 1;
            }
            if let Some(x) = o.exit {
                tally.exit[chain.target_position(x).expect("exit is a target")] += 1;
            }
            tally.censored += o.censored as u64;
        }
        tally
    };
    let blocks = config.n.div_ceil(BLOCK);
    let collect = || -> Vec<Tally> { (0..blocks).into_par_iter().map(run_block).collect() };
    let tallies = match config.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| QstError::InvalidParameter(e.to_string()))?
            .install(collect),
        None => collect(),
    };
    let total = tallies
        .iter()
        .fold(Tally::new(t_cap, n_targets), |acc, t| acc.merge(t));

    let n = config.n as u64;
    let tail = |hist: &[u64]| -> Vec<Band> {
        let mut done = 0u64;
        hist.iter()
            .map(|h| {
                done += h;
                Band::new(n - done, n)
            })
            .collect()
    };
    Ok(SimResult {
        n: config.n,
        seed: config.seed,
        t_cap,
        stop_tail: tail(&total.stop),
        hitting_tail: tail(&total.hit),
        combined_tail: tail(&total.combined),
        exit: total.exit.iter().map(|&k| Band::new(k, n)).collect(),
        censored: total.censored,
    })
}
