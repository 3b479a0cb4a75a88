//! Named example chains.
//!
//! * `two-state`: one transient state leaving at rate 1/4.
//! * `three-state`: two transient states and one target.
//! * `birth-death-k` (`4 <= k <= 64`): nearest-neighbour walk on `{0..k}`
//!   with `G = {k}`, a reflecting well at `0`, and a drift towards the well.
//! * `trap-walk-n` (`n >= 3`): non-reversible walk on a ring of `n` states
//!   with two traps.

use serde::Serialize;

use crate::chain::{AbsorbingChain, ParseOptions};
use crate::error::{QstError, Result};

/// Drift used by `birth-death-k` when none is given.
pub fn default_drift(k: usize) -> f64 {
    0.3f64.min(1.0 / k as f64)
}

/// A chain spec in the on-disk format.
#[derive(Debug, Clone, Serialize)]
pub struct ZooModel {
    pub states: Vec<String>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub absorbing: Vec<String>,
}

impl ZooModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("zoo models serialize")
    }

    pub fn chain(&self) -> Result<AbsorbingChain> {
        AbsorbingChain::new(
            self.states.clone(),
            self.p.clone(),
            &self.absorbing,
            &ParseOptions::default(),
        )
    }
}

/// Looks up a model by name. `drift` only applies to `birth-death-k`.
pub fn model(name: &str, drift: Option<f64>) -> Result<ZooModel> {
    match name {
        "two-state" => Ok(two_state()),
        "three-state" => Ok(three_state()),
        _ => {
            if let Some(k) = name.strip_prefix("birth-death-") {
                let k: usize = k
                    .parse()
                    .map_err(|_| QstError::UnknownModel(name.to_string()))?;
                if !(4..=64).contains(&k) {
                    return Err(QstError::UnknownModel(name.to_string()));
                }
                birth_death(k, drift.unwrap_or_else(|| default_drift(k)))
            } else if let Some(n) = name.strip_prefix("trap-walk-") {
                let n: usize = n
                    .parse()
                    .map_err(|_| QstError::UnknownModel(name.to_string()))?;
                if n < 3 || n > crate::chain::MAX_STATES - 2 {
                    return Err(QstError::UnknownModel(name.to_string()));
                }
                Ok(trap_walk(n))
            } else {
                Err(QstError::UnknownModel(name.to_string()))
            }
        }
    }
}

/// Models exercised by the test suites.
pub fn catalog() -> Vec<&'static str> {
    vec![
        "two-state",
        "three-state",
        "birth-death-4",
        "birth-death-8",
        "birth-death-16",
        "birth-death-32",
        "birth-death-64",
        "trap-walk-3",
        "trap-walk-6",
        "trap-walk-12",
    ]
}

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

pub fn two_state() -> ZooModel {
    ZooModel {
        states: vec!["a".into(), "g".into()],
        p: vec![vec![0.75, 0.25], vec![0.0, 1.0]],
        absorbing: vec!["g".into()],
    }
}

pub fn three_state() -> ZooModel {
    ZooModel {
        states: vec!["1".into(), "2".into(), "3".into()],
        p: vec![
            vec![0.5, 0.3, 0.2],
            vec![0.2, 0.5, 0.3],
            vec![0.0, 0.0, 1.0],
        ],
        absorbing: vec!["3".into()],
    }
}

/// Holds with probability 0.2, steps up with `0.4 (1 - drift)` and down with
/// `0.4 (1 + drift)`; state 0 keeps the downward mass.
pub fn birth_death(k: usize, drift: f64) -> Result<ZooModel> {
    if !(drift.is_finite() && (-1.0..1.0).contains(&drift)) {
        return Err(QstError::InvalidParameter(format!(
            "drift must lie in [-1, 1), got {drift}"
        )));
    }
    let up = 0.4 * (1.0 - drift);
    let down = 0.4 * (1.0 + drift);
    let mut p = vec![vec![0.0; k + 1]; k + 1];
    for i in 0..k {
        p[i][i + 1] = up;
        if i == 0 {
            p[0][0] = 1.0 - up;
        } else {
            p[i][i - 1] = down;
            p[i][i] = 0.2;
        }
    }
    p[k][k] = 1.0;
    Ok(ZooModel {
        states: labels(k + 1),
        p,
        absorbing: vec![k.to_string()],
    })
}

/// Ring walk: `+1` w.p. 0.5, `-1` w.p. 0.2, hold w.p. 0.2. The last 0.1 goes
/// to trap `left` from state 0, to trap `right` from state `n/2`, and is held
/// elsewhere.
pub fn trap_walk(n: usize) -> ZooModel {
    let left = n;
    let right = n + 1;
    let mut p = vec![vec![0.0; n + 2]; n + 2];
    for i in 0..n {
        p[i][(i + 1) % n] += 0.5;
        p[i][(i + n - 1) % n] += 0.2;
        p[i][i] += 0.2;
        let exit = if i == 0 {
            left
        } else if i == n / 2 {
            right
        } else {
            i
        };
        p[i][exit] += 0.1;
    }
    p[left][left] = 1.0;
    p[right][right] = 1.0;
    let mut states = labels(n);
    states.push("left".into());
    states.push("right".into());
    ZooModel {
        states,
        p,
        absorbing: vec!["left".into(), "right".into()],
    }
}
