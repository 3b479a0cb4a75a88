use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use qst_core::chain::{evolve_path, ChainDocument, Domain, Measure};
use qst_core::hitting::{exit_decomposition_auto, hitting_tail_exact, representation_formula, ExitSplit, TailReport};
use qst_core::sim::{exact_strong_time_tail, run_exact, sample_trajectories, Band, SimConfig};
use qst_core::spectral::{time_shift, SPECTRAL_TOL};
use qst_core::strong_times::{csqst_jump_table, default_horizon, shifted_squeezing_strong_time};
use qst_core::suite::{hitting_checks, run_suite, Check};
use qst_core::{parse_chain_document, zoo, ErrorClass, ParseOptions, QstError, SeparationTable, SpectralData, SpectralOptions};

use crate::output::{write_csv, write_json, Cell};
use crate::{ChainArgs, CheckArgs, Hazard, SimulateArgs, ZooArgs};

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_CONVERGENCE: u8 = 3;
pub const EXIT_INVARIANT: u8 = 4;
pub const EXIT_COVERAGE: u8 = 5;

/// Minimal fraction of tail points whose band must contain the exact value.
const COVERAGE_MIN: f64 = 0.9;
/// Below this many trajectories the bands say little.
const SMALL_N: usize = 1000;

pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<QstError>().map(QstError::class) {
        Some(ErrorClass::Validation) => EXIT_VALIDATION,
        Some(ErrorClass::Convergence) => EXIT_CONVERGENCE,
        Some(ErrorClass::Invariant) => EXIT_INVARIANT,
        None => EXIT_OTHER,
    }
}

struct Session {
    doc: ChainDocument,
    spectral: SpectralData,
    alpha: Measure,
    alpha_name: String,
    delta: f64,
    t_max: usize,
}

fn load(args: &ChainArgs) -> Result<Session> {
    let text = fs::read_to_string(&args.chain)
        .with_context(|| format!("reading {}", args.chain.display()))?;
    let opts = ParseOptions {
        force_absorb: args.force_absorb,
    };
    let doc = parse_chain_document(&text, &opts)?;
    let spectral = SpectralData::compute(&doc.chain, &SpectralOptions::default())?;
    let (alpha, alpha_name) = resolve_alpha(args.alpha.as_deref(), &doc, &spectral)?;
    let on_a = alpha.on_transient(&doc.chain)?;
    let delta = time_shift(&on_a, &spectral.gamma, spectral.lambda)?;
    let t_max = match args.t_max {
        Some(t) => t as usize,
        None => default_horizon(spectral.lambda, delta),
    };
    if (t_max as f64) + delta < 0.0 {
        return Err(QstError::NegativeShiftedTime { t: t_max, delta }.into());
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    Ok(Session {
        doc,
        spectral,
        alpha,
        alpha_name,
        delta,
        t_max,
    })
}

fn resolve_alpha(
    spec: Option<&str>,
    doc: &ChainDocument,
    spectral: &SpectralData,
) -> Result<(Measure, String), QstError> {
    let chain = &doc.chain;
    let measure = match spec {
        Some("mu-star") => spectral.mu_star_measure(),
        Some("uniform") => Measure::uniform_transient(chain),
        Some(s) if s.starts_with("point:") => Measure::point(chain, &s["point:".len()..])?,
        Some(s) if s.contains('=') => {
            let mut weights = vec![0.0; chain.len()];
            for pair in s.split(',') {
                let (label, w) = pair
                    .split_once('=')
                    .ok_or_else(|| QstError::InvalidMeasure(format!("bad entry {pair:?}")))?;
                let idx = chain
                    .index_of(label.trim())
                    .ok_or_else(|| QstError::UnknownState(label.trim().to_string()))?;
                weights[idx] += w
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| QstError::InvalidMeasure(format!("bad weight {w:?}")))?;
            }
            Measure::new(Domain::Full, weights)?
        }
        Some(other) => {
            return Err(QstError::InvalidMeasure(format!(
                "unrecognized initial distribution {other:?}"
            )))
        }
        None => match &doc.alpha {
            Some(a) => a.clone(),
            None => Measure::point_index(chain, chain.transient()[0]),
        },
    };
    if !measure.is_probability() {
        return Err(QstError::InvalidMeasure(format!(
            "initial distribution has mass {}",
            measure.total()
        )));
    }
    let name = match spec {
        Some(s) => s.to_string(),
        None if doc.alpha.is_some() => "file".to_string(),
        None => format!("point:{}", chain.label(chain.transient()[0])),
    };
    Ok((measure, name))
}

/// Applies `--tol` overrides and re-grades the affected checks.
fn apply_tolerances(checks: &mut [Check], overrides: &[(String, f64)]) -> Result<(), QstError> {
    for (name, tol) in overrides {
        let prefix = format!("{name}.");
        let mut matched = false;
        for c in checks.iter_mut().filter(|c| c.name == *name || c.name.starts_with(&prefix)) {
            *c = Check::new(c.name.clone(), c.residual, *tol);
            matched = true;
        }
        if !matched {
            return Err(QstError::InvalidParameter(format!("no check named {name:?}")));
        }
    }
    Ok(())
}

fn report_failures(checks: &[Check]) -> u8 {
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
    for c in &failed {
        eprintln!(
            "invariant failed: {} (residual {:e} > {:e})",
            c.name, c.residual, c.tolerance
        );
    }
    if failed.is_empty() {
        0
    } else {
        EXIT_INVARIANT
    }
}

#[derive(Serialize)]
struct SpectralJson<'a> {
    lambda: f64,
    transient: Vec<&'a str>,
    targets: Vec<&'a str>,
    mu_star: &'a [f64],
    gamma: &'a [f64],
    nu: &'a [f64],
    omega: &'a [f64],
    p_tilde: Vec<Vec<f64>>,
    alpha: &'a str,
    alpha_tilde: &'a [f64],
    delta_alpha: f64,
    t_max: usize,
    residuals: Vec<Check>,
    failed_invariants: Vec<&'static str>,
}

pub fn analyze(args: &ChainArgs) -> Result<u8> {
    let s = load(args)?;
    let chain = &s.doc.chain;
    let table = SeparationTable::for_alpha(chain, &s.spectral, &s.alpha, s.t_max)?;
    let labels = |idx: &[usize]| idx.iter().map(|&i| chain.label(i)).collect::<Vec<_>>();
    let json = SpectralJson {
        lambda: s.spectral.lambda,
        transient: labels(chain.transient()),
        targets: labels(chain.targets()),
        mu_star: &s.spectral.mu_star,
        gamma: &s.spectral.gamma,
        nu: &s.spectral.nu,
        omega: &s.spectral.omega,
        p_tilde: s.spectral.p_tilde.to_rows(),
        alpha: &s.alpha_name,
        alpha_tilde: &table.alpha_tilde,
        delta_alpha: s.delta,
        t_max: s.t_max,
        residuals: s
            .spectral
            .residuals
            .named()
            .into_iter()
            .map(|(name, r)| Check::new(name, r, SPECTRAL_TOL))
            .collect(),
        failed_invariants: s.spectral.failed_invariants(SPECTRAL_TOL),
    };
    write_json(&args.out.join("spectral.json"), &json)?;
    write_csv(
        &args.out.join("separation.csv"),
        &["t", "s_tilde_alpha", "s_tilde_global"],
        (0..=s.t_max).map(|t| {
            vec![
                Cell::Int(t),
                Cell::Float(table.envelope_alpha[t]),
                Cell::Float(table.envelope_global[t]),
            ]
        }),
    )?;
    for name in &json.failed_invariants {
        eprintln!("invariant failed: spectral.{name}");
    }
    Ok(if json.failed_invariants.is_empty() {
        0
    } else {
        EXIT_INVARIANT
    })
}

fn write_tail_report(dir: &Path, report: &TailReport) -> Result<()> {
    let ratios = report.residual_ratio();
    write_csv(
        &dir.join("tail_report.csv"),
        &[
            "t",
            "exact_tail",
            "leading_term",
            "residual",
            "residual_augmented",
            "lower_bound",
            "upper_bound",
            "identity_error",
            "residual_ratio",
        ],
        report.rows.iter().zip(ratios).map(|(r, ratio)| {
            vec![
                Cell::Int(r.t),
                Cell::Float(r.exact_tail),
                Cell::OptFloat(r.leading_term),
                Cell::OptFloat(r.residual_derived),
                Cell::Float(r.residual_augmented),
                Cell::OptFloat(r.lower_bound),
                Cell::OptFloat(r.upper_bound),
                Cell::OptFloat(r.identity_error),
                Cell::OptFloat(ratio),
            ]
        }),
    )
}

fn write_exit_split(dir: &Path, split: &ExitSplit) -> Result<()> {
    write_csv(
        &dir.join("exit_split.csv"),
        &[
            "state",
            "direct_mass",
            "renewal_mass",
            "renewal_augmented",
            "absorption",
            "omega",
            "epsilon",
        ],
        split.rows.iter().map(|r| {
            vec![
                Cell::Text(r.state.clone()),
                Cell::Float(r.direct_mass),
                Cell::Float(r.renewal_mass),
                Cell::Float(r.renewal_augmented),
                Cell::Float(r.absorption),
                Cell::Float(r.omega),
                Cell::Float(split.epsilon),
            ]
        }),
    )
}

#[derive(Serialize)]
struct Summary<'a> {
    command: &'a str,
    chain: String,
    alpha: &'a str,
    lambda: f64,
    delta_alpha: f64,
    t_max: usize,
    passed: bool,
    max_residual: f64,
    checks: &'a [Check],
}

fn summary<'a>(command: &'a str, args: &ChainArgs, s: &'a Session, checks: &'a [Check]) -> Summary<'a> {
    Summary {
        command,
        chain: args.chain.display().to_string(),
        alpha: &s.alpha_name,
        lambda: s.spectral.lambda,
        delta_alpha: s.delta,
        t_max: s.t_max,
        passed: checks.iter().all(|c| c.passed),
        max_residual: checks.iter().map(|c| c.residual).fold(0.0, f64::max),
        checks,
    }
}

pub fn verify(checked: &CheckArgs) -> Result<u8> {
    let args = &checked.chain;
    let s = load(args)?;
    let chain = &s.doc.chain;
    let mut out = run_suite(chain, &s.spectral, &s.alpha, s.t_max)?;
    apply_tolerances(&mut out.checks, &checked.tolerances)?;
    let tail = out.csqst.tail();
    write_csv(
        &args.out.join("csqst.csv"),
        &["t", "atom", "tail", "partial_sum_identity_residual"],
        (0..=s.t_max).map(|t| {
            vec![
                Cell::Int(t),
                Cell::Float(out.csqst.joint_atoms[t]),
                Cell::Float(tail[t]),
                Cell::Float(out.csqst.partial_sum_residuals[t]),
            ]
        }),
    )?;
    let law = &out.strong_time.law;
    write_csv(
        &args.out.join("strong_time.csv"),
        &["t", "atom", "tail"],
        (0..=s.t_max).map(|t| {
            vec![
                Cell::Int(t),
                Cell::Float(law.atoms[t]),
                Cell::Float(law.tail[t]),
            ]
        }),
    )?;
    write_tail_report(&args.out, &out.tail_report)?;
    write_exit_split(&args.out, &out.exit_split)?;
    write_json(&args.out.join("summary.json"), &summary("verify", args, &s, &out.checks))?;
    Ok(report_failures(&out.checks))
}

pub fn report(checked: &CheckArgs) -> Result<u8> {
    let args = &checked.chain;
    let s = load(args)?;
    let chain = &s.doc.chain;
    let table = SeparationTable::for_alpha(chain, &s.spectral, &s.alpha, s.t_max)?;
    let tail_report = representation_formula(&s.alpha, chain, &s.spectral, &table, s.t_max)?;
    let split = exit_decomposition_auto(&s.alpha, chain, &s.spectral)?;
    let mut checks = hitting_checks(&s.spectral, &table, &tail_report, &split);
    apply_tolerances(&mut checks, &checked.tolerances)?;
    write_tail_report(&args.out, &tail_report)?;
    write_exit_split(&args.out, &split)?;
    write_json(&args.out.join("report_summary.json"), &summary("report", args, &s, &checks))?;
    Ok(report_failures(&checks))
}

/// Whether the band covers `exact`, allowing for rounding in the exact value.
fn covers(band: &Band, exact: f64) -> bool {
    band.lo - 1e-12 <= exact && exact <= band.hi + 1e-12
}

fn write_tail_bands(path: &Path, bands: &[Band], exact: &[f64]) -> Result<()> {
    write_csv(
        path,
        &["t", "empirical", "lo99", "hi99", "exact"],
        bands.iter().zip(exact).enumerate().map(|(t, (b, e))| {
            vec![
                Cell::Int(t),
                Cell::Float(b.estimate),
                Cell::Float(b.lo),
                Cell::Float(b.hi),
                Cell::Float(*e),
            ]
        }),
    )
}

#[derive(Serialize)]
struct SimSummary<'a> {
    chain: String,
    alpha: &'a str,
    hazard: &'a str,
    n: usize,
    seed: u64,
    t_cap: usize,
    censored: u64,
    exact_unresolved_at_cap: f64,
    points: usize,
    covered: usize,
    coverage: f64,
    passed: bool,
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("QST_THREADS") {
        Ok(v) if !v.trim().is_empty() => {
            let k: usize = v.trim().parse().map_err(|_| {
                QstError::InvalidParameter(format!("QST_THREADS must be a positive integer, got {v:?}"))
            })?;
            if k == 0 {
                bail!(QstError::InvalidParameter("QST_THREADS must be at least 1".into()));
            }
            Ok(Some(k))
        }
        _ => Ok(None),
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<u8> {
    let s = load(&args.chain)?;
    let chain = &s.doc.chain;
    let t_cap = args.t_cap.map_or(s.t_max, |t| t as usize);
    if args.n == 0 {
        return Err(QstError::InvalidParameter("--n must be at least 1".into()).into());
    }
    if args.n < SMALL_N {
        eprintln!(
            "warning: n = {} trajectories; confidence bands are uninformative",
            args.n
        );
    }
    let (jumps, hazard) = match args.hazard {
        Hazard::Strong => (
            shifted_squeezing_strong_time(&s.alpha, chain, &s.spectral, t_cap)?.jump_table(chain),
            "strong",
        ),
        Hazard::Csqst => {
            let table = SeparationTable::for_alpha_local(chain, &s.spectral, &s.alpha, t_cap)?;
            (csqst_jump_table(chain, &table), "csqst")
        }
    };
    let config = SimConfig {
        n: args.n,
        seed: args.seed,
        t_cap,
        threads: threads_from_env()?,
    };
    let sim = sample_trajectories(&s.alpha, chain, &jumps, &config)?;

    let hit_exact = hitting_tail_exact(&s.alpha, chain, t_cap);
    let stop_exact = exact_strong_time_tail(&s.alpha, chain, &jumps, t_cap)?;
    let combined_exact: Vec<f64> = run_exact(&s.alpha, chain, &jumps, t_cap)?
        .iter()
        .map(|law| chain.transient().iter().map(|&y| law.p0[y]).sum())
        .collect();
    let final_law = evolve_path(&s.alpha.to_full(chain), chain, t_cap)
        .pop()
        .expect("nonempty path");
    let exit_exact: Vec<f64> = chain.targets().iter().map(|&g| final_law[g]).collect();

    let out = &args.chain.out;
    write_tail_bands(&out.join("sim_tail.csv"), &sim.hitting_tail, &hit_exact)?;
    write_tail_bands(&out.join("sim_stop_tail.csv"), &sim.stop_tail, &stop_exact)?;
    write_tail_bands(&out.join("sim_combined_tail.csv"), &sim.combined_tail, &combined_exact)?;
    write_csv(
        &out.join("sim_exit.csv"),
        &["state", "empirical", "lo99", "hi99", "exact"],
        sim.exit.iter().zip(chain.targets()).zip(&exit_exact).map(|((b, &g), e)| {
            vec![
                Cell::Text(chain.label(g).to_string()),
                Cell::Float(b.estimate),
                Cell::Float(b.lo),
                Cell::Float(b.hi),
                Cell::Float(*e),
            ]
        }),
    )?;

    let pairs = [
        (&sim.hitting_tail, &hit_exact),
        (&sim.stop_tail, &stop_exact),
        (&sim.combined_tail, &combined_exact),
    ];
    let points: usize = pairs.iter().map(|(b, _)| b.len()).sum();
    let covered: usize = pairs
        .iter()
        .map(|(b, e)| b.iter().zip(e.iter()).filter(|(b, e)| covers(b, **e)).count())
        .sum();
    let coverage = covered as f64 / points as f64;
    let passed = coverage >= COVERAGE_MIN;
    write_json(
        &out.join("sim_summary.json"),
        &SimSummary {
            chain: args.chain.chain.display().to_string(),
            alpha: &s.alpha_name,
            hazard,
            n: sim.n,
            seed: sim.seed,
            t_cap,
            censored: sim.censored,
            exact_unresolved_at_cap: combined_exact[t_cap],
            points,
            covered,
            coverage,
            passed,
        },
    )?;
    if !passed {
        eprintln!("coverage {covered}/{points} below {COVERAGE_MIN}");
        return Ok(EXIT_COVERAGE);
    }
    Ok(0)
}

pub fn zoo(args: &ZooArgs) -> Result<u8> {
    let model = zoo::model(&args.name, args.drift)?;
    model.chain()?;
    let text = model.to_json() + "\n";
    match args.out.as_deref() {
        Some(p) if p == Path::new("-") => print!("{text}"),
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => {
            let p = format!("{}.json", args.name);
            fs::write(&p, text).with_context(|| format!("writing {p}"))?;
        }
    }
    Ok(0)
}
