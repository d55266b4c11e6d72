//! Structural and hypothesis checks, gathered into the run manifest.

use std::time::{SystemTime, UNIX_EPOCH};

use rwch::cahn_hilliard::{lipschitz_bound_g, CHProblem, Embedding, LipschitzBound, Scheme};
use rwch::operators::{self, SpectralReport};
use rwch::pme::window_violation;
use rwch::RandomWalk;
use serde::{Deserialize, Serialize};

use crate::config::{Instance, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// The number behind the verdict, when there is one.
    pub residual: Option<f64>,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, residual: Option<f64>, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            residual: residual.filter(|r| r.is_finite()),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassWindow {
    pub ok: bool,
    pub mass: f64,
    /// `nu(X) gamma^-`, absent when unbounded.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// Seconds since the Unix epoch when the manifest was written.
    pub created_unix: u64,
    pub config: RunConfig,
    pub n: Option<usize>,
    pub checks: Vec<Check>,
    pub gap1: Option<f64>,
    pub gap2: Option<f64>,
    /// `||G||` in `L^2(nu_1)`, with the analytic bound and the `L^1` norm used for Picard windows.
    pub lipschitz_g: Option<LipschitzSummary>,
    pub mass_window: Option<MassWindow>,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzSummary {
    pub numeric: f64,
    pub analytic: f64,
    pub l1: f64,
}

impl From<LipschitzBound> for LipschitzSummary {
    fn from(b: LipschitzBound) -> Self {
        Self {
            numeric: b.numeric,
            analytic: b.analytic,
            l1: b.l1,
        }
    }
}

impl Manifest {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn walk_checks(name: &str, rw: &RandomWalk, checks: &mut Vec<Check>) -> Option<SpectralReport> {
    let f = rw.flags();
    let tol = rw.tolerances();
    checks.push(Check::new(
        &format!("{name}.stochastic"),
        f.stochastic_residual <= tol.stochastic,
        Some(f.stochastic_residual),
        format!("max |row sum - 1| <= {:e}", tol.stochastic),
    ));
    checks.push(Check::new(
        &format!("{name}.invariance"),
        f.invariant,
        Some(f.invariance_residual),
        format!("max |(nu P - nu) / nu| <= {:e}", tol.invariance),
    ));
    checks.push(Check::new(
        &format!("{name}.reversibility"),
        f.reversible,
        Some(f.reversibility_residual),
        format!("detailed balance within {:e}", tol.reversibility),
    ));
    checks.push(Check::new(
        &format!("{name}.connected"),
        f.connected,
        Some(f.components as f64),
        format!("{} component(s)", f.components),
    ));
    if !(f.reversible && f.connected) {
        checks.push(Check::new(
            &format!("{name}.poincare"),
            false,
            None,
            "skipped: needs a reversible, connected walk",
        ));
        return None;
    }
    match operators::spectral_report(rw) {
        Ok(rep) => {
            checks.push(Check::new(
                &format!("{name}.poincare"),
                rep.gap > 0.0,
                Some(rep.gap),
                format!("spectral gap {:?} by {:?}", rep.gap, rep.method),
            ));
            Some(rep)
        }
        Err(e) => {
            checks.push(Check::new(
                &format!("{name}.poincare"),
                false,
                None,
                e.to_string(),
            ));
            None
        }
    }
}

/// Runs every check that does not need time stepping.
pub fn validate(cfg: &RunConfig) -> Manifest {
    let mut m = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        config: cfg.clone(),
        n: None,
        checks: Vec::new(),
        gap1: None,
        gap2: None,
        lipschitz_g: None,
        mass_window: None,
        passed: false,
    };
    let inst = match Instance::build(cfg) {
        Ok(i) => i,
        Err(e) => {
            m.checks
                .push(Check::new("build", false, None, format!("{e:#}")));
            return m;
        }
    };
    m.n = Some(inst.m1.n());
    m.gap1 = walk_checks("walk1", &inst.m1, &mut m.checks).map(|r| r.gap);
    m.gap2 = walk_checks("walk2", &inst.m2, &mut m.checks).map(|r| r.gap);

    let emb = Embedding::between(&inst.m1, &inst.m2);
    let needs_shared = cfg.scheme == Scheme::ImexSplit;
    m.checks.push(Check::new(
        "embedding",
        emb.shared || !needs_shared,
        Some(emb.big_m),
        if emb.shared {
            "both walks carry the same measure".to_string()
        } else {
            format!(
                "measures differ (max nu2/nu1 = {:?}); {}",
                emb.big_m,
                if needs_shared {
                    "imex_split needs a shared measure"
                } else {
                    "picard accepts this"
                }
            )
        },
    ));

    let graph = &inst.graph;
    let bad = inst.u0.iter().position(|&r| !graph.j_star(r).is_finite());
    m.checks.push(Check::new(
        "domain",
        bad.is_none(),
        bad.map(|i| inst.u0[i]),
        match bad {
            Some(i) => format!(
                "u0 at node {} is outside the domain of {}",
                inst.m1.space().name(i),
                graph.name()
            ),
            None => format!("u0 lies in the domain of {}", graph.name()),
        },
    ));

    let nu = inst.m1.nu();
    let mass = nu.integrate(inst.u0.as_slice());
    let (lower, upper) = (
        nu.total() * graph.gamma_minus(),
        nu.total() * graph.gamma_plus(),
    );
    let ok = window_violation(graph, nu, mass).is_none();
    m.mass_window = Some(MassWindow {
        ok,
        mass,
        lower: lower.is_finite().then_some(lower),
        upper: upper.is_finite().then_some(upper),
    });
    m.checks.push(Check::new(
        "mass_window",
        ok,
        Some(mass),
        format!(
            "need nu(X) gamma^- < mass < nu(X) gamma^+ strictly: {lower:?} < {mass:?} < {upper:?}"
        ),
    ));

    if m.checks.iter().all(|c| c.passed) {
        match inst.problem(cfg) {
            Ok(p) => {
                m.lipschitz_g = Some(lipschitz_bound_g(&p).into());
                m.checks
                    .push(Check::new("problem", true, None, "instance accepted"));
            }
            Err(e) => m
                .checks
                .push(Check::new("problem", false, None, format!("{e:#}"))),
        }
    }
    m.passed = m.checks.iter().all(|c| c.passed);
    m
}

/// Rebuilds the validated problem.
pub fn problem(cfg: &RunConfig) -> anyhow::Result<CHProblem> {
    Instance::build(cfg)?.problem(cfg)
}
