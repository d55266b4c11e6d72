//! Equilibria, steady-state detection and trajectory audits.

use serde::Serialize;

use crate::cahn_hilliard::{self, CHProblem, Scheme};
use crate::field::Field;
use crate::operators;
use crate::trajectory::Trajectory;
use crate::walk::NodeSet;

/// Whether a state is stationary for the Cahn-Hilliard flow.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub is_equilibrium: bool,
    /// A constant chemical potential, when one fits within `tol`.
    pub mu_const: Option<f64>,
    /// Half the gap between the feasibility intervals; 0 when they intersect.
    pub residual: f64,
    /// Nodes where `gamma^{-1}(u)` is a nondegenerate interval.
    pub binding_nodes: NodeSet,
}

/// Looks for a constant `mu` with `mu + delta Delta_2 u + c u in gamma^{-1}(u)` at
/// every node.
pub fn check_equilibrium(prob: &CHProblem, u: &Field, tol: f64) -> EquilibriumReport {
    let n = prob.n();
    let graph = &prob.spec.graph;
    let mut binding = NodeSet::empty(n);
    let infeasible = EquilibriumReport {
        is_equilibrium: false,
        mu_const: None,
        residual: f64::INFINITY,
        binding_nodes: NodeSet::empty(n),
    };
    if u.check(n).is_err() {
        return infeasible;
    }
    let lap2 = operators::laplacian(&prob.m2, u).expect("checked shape");
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for x in 0..n {
        let a = prob.spec.delta * lap2[x] + prob.spec.c * u[x];
        let Some((l, h)) = graph.inverse_interval(u[x]) else {
            return infeasible;
        };
        if l < h {
            binding.insert(x);
        }
        lo = lo.max(l - a);
        hi = hi.min(h - a);
    }
    let residual = (0.5 * (lo - hi)).max(0.0);
    let mu = match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        (false, true) => hi,
        (false, false) => 0.0,
    };
    let ok = residual <= tol;
    EquilibriumReport {
        is_equilibrium: ok,
        mu_const: ok.then_some(mu),
        residual,
        binding_nodes: binding,
    }
}

/// Sufficient condition for `chi_D - chi_{X \ D}` to be stationary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PurePhaseMargin {
    /// `c / delta - [1 + (sup_D H_D + sup_{X\D} H_{X\D}) / 2]`.
    pub margin: f64,
    /// `D` empty or everything: no interface, margin reported as `+inf`.
    pub degenerate: bool,
}

pub fn pure_phase_criterion(prob: &CHProblem, d: &NodeSet) -> PurePhaseMargin {
    if d.is_empty() || d.is_full() {
        return PurePhaseMargin {
            margin: f64::INFINITY,
            degenerate: true,
        };
    }
    let comp = d.complement();
    let sup_curv = |set: &NodeSet| {
        set.indices()
            .into_iter()
            .map(|x| 1.0 - 2.0 * prob.m2.mass_of(x, set))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let lhs = 1.0 + 0.5 * (sup_curv(d) + sup_curv(&comp));
    let ratio = if prob.spec.delta == 0.0 {
        f64::INFINITY
    } else {
        prob.spec.c / prob.spec.delta
    };
    PurePhaseMargin {
        margin: ratio - lhs,
        degenerate: false,
    }
}

/// Long-time behaviour of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticsReport {
    /// Spectral gap of `-Delta_2`, absent when the second walk has none.
    pub gap2: Option<f64>,
    /// `c < delta gap2`.
    pub predicts_mean_convergence: bool,
    /// Margin of the two-phase criterion for `D = {u > midpoint}` on bounded ranges.
    pub pure_phase_margin: Option<f64>,
    pub steady: bool,
    /// Largest `||u^{n+1} - u^n||_2 / dt` over the trailing window.
    pub max_rate: f64,
    pub omega_candidate: Option<Field>,
    pub equilibrium: Option<EquilibriumReport>,
    /// `||u(T) - mean||_2` in `L^2(nu_1)`.
    pub distance_to_mean: f64,
}

/// Defaults used when no explicit settings are given.
pub const STEADY_WINDOW: usize = 50;
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

/// Declares the run steady when every snapshot-to-snapshot rate over the last `window`
/// steps is at most `tol`, then tests the final state for stationarity.
pub fn detect_steady_state(
    prob: &CHProblem,
    traj: &Trajectory,
    window: usize,
    tol: f64,
) -> AsymptoticsReport {
    let nu = prob.m1.nu();
    let gap2 = operators::spectral_gap(&prob.m2).ok();
    let predicts = gap2.is_some_and(|g| prob.spec.c < prob.spec.delta * g);
    let last = traj.snapshots.last();
    let last_step = last.map_or(0, |s| s.step);
    let from = last_step.saturating_sub(window);
    let tail: Vec<_> = traj.snapshots.iter().filter(|s| s.step >= from).collect();
    let max_rate = tail
        .windows(2)
        .map(|w| nu.norm_l2((&w[1].u - &w[0].u).as_slice()) / (w[1].t - w[0].t))
        .fold(0.0, f64::max);
    let steady = tail.len() >= 2 && max_rate <= tol;

    let graph = &prob.spec.graph;
    let (lo, hi) = (graph.gamma_minus(), graph.gamma_plus());
    let margin = last.filter(|_| lo.is_finite() && hi.is_finite()).map(|s| {
        let mid = 0.5 * (lo + hi);
        let d = NodeSet::from_mask(s.u.iter().map(|&x| x > mid).collect());
        pure_phase_criterion(prob, &d).margin
    });
    let distance_to_mean = last.map_or(f64::NAN, |s| {
        let mean = nu.mean(s.u.as_slice());
        nu.norm_l2(&s.u.iter().map(|x| x - mean).collect::<Vec<_>>())
    });
    let equilibrium = last
        .filter(|_| steady)
        .map(|s| check_equilibrium(prob, &s.u, EQUILIBRIUM_TOL));
    AsymptoticsReport {
        gap2,
        predicts_mean_convergence: predicts,
        pure_phase_margin: margin,
        steady,
        max_rate,
        omega_candidate: if steady {
            last.map(|s| s.u.clone())
        } else {
            None
        },
        equilibrium,
        distance_to_mean,
    }
}

/// One audited property.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditCheck {
    pub name: String,
    pub passed: bool,
    /// Smallest slack observed (negative when violated).
    pub worst_margin: f64,
    pub worst_step: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub passed: bool,
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn check(&self, name: &str) -> Option<&AuditCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const MASS_TOL: f64 = 1e-10;
pub const ENERGY_TOL: f64 = 1e-9;

fn skipped(name: &str, why: &str) -> AuditCheck {
    AuditCheck {
        name: name.into(),
        passed: true,
        worst_margin: f64::INFINITY,
        worst_step: None,
        detail: format!("skipped: {why}"),
    }
}

/// Track the smallest slack over steps.
struct Worst {
    margin: f64,
    step: Option<usize>,
}

impl Worst {
    fn new() -> Self {
        Self {
            margin: f64::INFINITY,
            step: None,
        }
    }

    fn see(&mut self, margin: f64, step: usize) {
        if margin < self.margin || margin.is_nan() {
            self.margin = margin;
            self.step = Some(step);
        }
    }

    fn into_check(self, name: &str, detail: String) -> AuditCheck {
        AuditCheck {
            name: name.into(),
            passed: self.margin >= 0.0,
            worst_margin: self.margin,
            worst_step: self.step,
            detail,
        }
    }
}

/// Recomputes conservation, dissipation and growth bounds from the stored snapshots.
pub fn audit(traj: &Trajectory, prob: &CHProblem) -> AuditReport {
    let nu = prob.m1.nu();
    let snaps = &traj.snapshots;
    let mut checks = Vec::new();
    let Some(first) = snaps.first() else {
        return AuditReport {
            passed: false,
            checks: vec![skipped("snapshots", "no snapshots")],
        };
    };
    let (c, delta, tau) = (prob.spec.c, prob.spec.delta, traj.tau);

    let m0 = nu.integrate(first.u.as_slice());
    let mass_tol = MASS_TOL * nu.total();
    let mut w = Worst::new();
    for s in snaps {
        w.see(mass_tol - (nu.integrate(s.u.as_slice()) - m0).abs(), s.step);
    }
    checks.push(w.into_check("mass", format!("|mass - {m0:e}| <= {mass_tol:e}")));

    let graph = &prob.spec.graph;
    let mut w = Worst::new();
    for s in snaps {
        let slack =
            s.u.iter()
                .map(|&x| (x - graph.gamma_minus()).min(graph.gamma_plus() - x))
                .fold(f64::INFINITY, f64::min);
        w.see(slack, s.step);
    }
    checks.push(w.into_check(
        "domain",
        format!("{} <= u <= {}", graph.gamma_minus(), graph.gamma_plus()),
    ));

    let monotone = prob.scheme == Scheme::ImexSplit && prob.embedding().shared;
    let energies: Option<Vec<f64>> = monotone.then(|| {
        snaps
            .iter()
            .map(|s| cahn_hilliard::energy(prob, &s.u).unwrap_or(f64::NAN))
            .collect()
    });
    match &energies {
        Some(e) => {
            let mut w = Worst::new();
            for k in 1..snaps.len() {
                w.see(ENERGY_TOL - (e[k] - e[k - 1]), snaps[k].step);
            }
            checks.push(w.into_check("energy", format!("E non-increasing within {ENERGY_TOL:e}")));
        }
        None => checks.push(skipped(
            "energy",
            "monotone energy holds for the split scheme on a shared measure",
        )),
    }

    let big_c = 4.0 * c.max(1.0);
    for (name, p) in [("lp_2", 2.0), ("lp_4", 4.0), ("lp_inf", f64::INFINITY)] {
        let base = nu.norm_lp(first.u.as_slice(), p);
        let mut w = Worst::new();
        for s in snaps {
            let bound = base * (big_c * s.t).exp() * (1.0 + 10.0 * tau);
            let norm = nu.norm_lp(s.u.as_slice(), p);
            let slack = if bound.is_infinite() {
                f64::INFINITY
            } else {
                bound - norm
            };
            w.see(slack.min(f64::MAX), s.step);
        }
        checks.push(w.into_check(
            name,
            format!("||u||_p <= ||u0||_p exp({big_c} t)(1 + 10 tau)"),
        ));
    }

    let gap2 = operators::spectral_gap(&prob.m2).ok();
    let lower = graph.split_lower_bound(c);
    match (energies, gap2, lower) {
        (Some(e), Some(gap), Some(b)) if delta > 0.0 => {
            let mean = m0 / nu.total();
            let radius = (2.0 * (e[0] - nu.total() * b).max(0.0) / (delta * gap)).sqrt();
            let bound = mean.abs() * nu.total().sqrt() + radius;
            let mut w = Worst::new();
            for s in snaps {
                w.see(bound + 1e-9 - nu.norm_l2(s.u.as_slice()), s.step);
            }
            checks.push(w.into_check("l2_uniform", format!("||u||_2 <= {bound:e}")));
        }
        _ => checks.push(skipped(
            "l2_uniform",
            "needs a split-scheme run, a positive gap of the second walk and a bounded potential",
        )),
    }

    AuditReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}
