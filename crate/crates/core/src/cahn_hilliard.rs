//! Doubly nonlocal Cahn-Hilliard flow
//! `u_t = Delta_1 mu`, `mu in -delta Delta_2 u + gamma^{-1}(u) - c u`.
//!
//! Two integrators are provided. `ImexSplit` treats the concave part `-c u`
//! explicitly and everything else implicitly, which makes the free energy
//! nonincreasing for any step. `Picard` rewrites the flow as a porous-medium
//! problem perturbed by the linear operator
//! `G = delta Delta_{12} + (c - delta) Delta_1 - delta Delta_2` and runs fixed-point
//! sweeps over short time windows.

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::linalg::seeded_vector;
use crate::operators::{self, DENSE_LIMIT};
use crate::pme::{self, is_pure_phase, window_violation, ResolventOptions, ResolventProblem};
use crate::potentials::{potential_energy, PotentialSpec};
use crate::sparse::CsrMatrix;
use crate::trajectory::{StepDiagnostics, StepRecord, Trajectory};
use crate::walk::RandomWalk;

/// Time integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    ImexSplit,
    Picard,
}

/// Solver controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChOptions {
    pub resolvent: ResolventOptions,
    /// Sweeps stop when the sup-in-time `L^1(nu_1)` change is below `picard_tol * nu_1(X)`.
    pub picard_tol: f64,
    pub picard_max_sweeps: usize,
    /// Window length as a fraction of `1 / L_G`.
    pub window_safety: f64,
    pub snapshot_stride: usize,
}

impl Default for ChOptions {
    fn default() -> Self {
        Self {
            resolvent: ResolventOptions::default(),
            picard_tol: 1e-9,
            picard_max_sweeps: 100,
            window_safety: 0.9,
            snapshot_stride: 1,
        }
    }
}

/// How the two measures relate on the shared node set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Embedding {
    pub shared: bool,
    /// `max nu_1 / nu_2`.
    pub density_max: f64,
    /// `1 / density_max`.
    pub m: f64,
    /// `max nu_2 / nu_1`.
    pub big_m: f64,
}

impl Embedding {
    pub fn between(m1: &RandomWalk, m2: &RandomWalk) -> Self {
        let (a, b) = (m1.nu().weights(), m2.nu().weights());
        let density_max = a.iter().zip(b).map(|(x, y)| x / y).fold(0.0, f64::max);
        let big_m = a.iter().zip(b).map(|(x, y)| y / x).fold(0.0, f64::max);
        Self {
            shared: m1.nu().relative_distance(m2.nu()) <= 1e-12,
            density_max,
            m: 1.0 / density_max,
            big_m,
        }
    }
}

/// A validated Cahn-Hilliard instance.
#[derive(Debug, Clone)]
pub struct CHProblem {
    pub m1: RandomWalk,
    pub m2: RandomWalk,
    pub spec: PotentialSpec,
    pub u0: Field,
    pub scheme: Scheme,
    pub tau: f64,
    pub t_end: f64,
    pub options: ChOptions,
    embedding: Embedding,
    pure_phase: bool,
    /// `delta (P_1 - I)(P_2 - I)`.
    double_laplacian: CsrMatrix,
    /// `G` above.
    g_operator: CsrMatrix,
    gap1: f64,
}

impl CHProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        m1: RandomWalk,
        m2: RandomWalk,
        spec: PotentialSpec,
        u0: Field,
        scheme: Scheme,
        tau: f64,
        t_end: f64,
        options: ChOptions,
    ) -> Result<Self> {
        if m1.n() != m2.n() {
            return Err(Error::DimensionMismatch {
                expected: m1.n(),
                found: m2.n(),
            });
        }
        pme::step_count(tau, t_end)?;
        let gap1 = operators::spectral_gap(&m1)?;
        if !m2.flags().invariant {
            return Err(Error::NotInvariant {
                residual: m2.flags().invariance_residual,
                tol: m2.tolerances().invariance,
            });
        }
        let embedding = Embedding::between(&m1, &m2);
        if scheme == Scheme::ImexSplit {
            if !embedding.shared {
                return Err(Error::invalid(
                    "the imex_split scheme needs both walks to share one measure; use picard",
                ));
            }
            m2.require_reversible()?;
        }
        u0.check(m1.n())?;
        if let Some(i) = u0.iter().position(|&r| !spec.graph.j_star(r).is_finite()) {
            return Err(Error::OutOfDomain {
                node: i,
                value: u0[i],
            });
        }
        let pure_phase = is_pure_phase(&spec.graph, &u0);
        let mass = m1.nu().integrate(u0.as_slice());
        if !pure_phase {
            if let Some((lower, upper)) = window_violation(&spec.graph, m1.nu(), mass) {
                return Err(Error::MassWindow {
                    time: 0.0,
                    mass,
                    lower,
                    upper,
                });
            }
        }
        let d1 = m1.kernel().minus_identity();
        let d2 = m2.kernel().minus_identity();
        let double_laplacian = d1.matmul(&d2)?.scale(spec.delta);
        let d12 = m1.kernel().matmul(m2.kernel())?.minus_identity();
        let g_operator = d12
            .add_scaled(spec.delta, &d1, spec.c - spec.delta)?
            .add_scaled(1.0, &d2, -spec.delta)?;
        Ok(Self {
            m1,
            m2,
            spec,
            u0,
            scheme,
            tau,
            t_end,
            options,
            embedding,
            pure_phase,
            double_laplacian,
            g_operator,
            gap1,
        })
    }

    pub fn n(&self) -> usize {
        self.m1.n()
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn is_pure_phase(&self) -> bool {
        self.pure_phase
    }

    pub fn gap1(&self) -> f64 {
        self.gap1
    }

    pub fn steps(&self) -> usize {
        pme::step_count(self.tau, self.t_end).expect("validated")
    }

    /// The operator `G` of the perturbed porous-medium form.
    pub fn g_operator(&self) -> &CsrMatrix {
        &self.g_operator
    }

    /// `delta Delta_1 Delta_2`, the implicit linear part of the split scheme.
    pub fn double_laplacian(&self) -> &CsrMatrix {
        &self.double_laplacian
    }

    /// Copy of the problem with another scheme, step or horizon.
    pub fn with_schedule(&self, scheme: Scheme, tau: f64, t_end: f64) -> Result<Self> {
        Self::new(
            self.m1.clone(),
            self.m2.clone(),
            self.spec.clone(),
            self.u0.clone(),
            scheme,
            tau,
            t_end,
            self.options,
        )
    }

    /// Copy of the problem started from another state.
    pub fn with_initial(&self, u0: Field) -> Result<Self> {
        Self::new(
            self.m1.clone(),
            self.m2.clone(),
            self.spec.clone(),
            u0,
            self.scheme,
            self.tau,
            self.t_end,
            self.options,
        )
    }
}

/// Numerical and analytic bounds on `||G||` in `L^2(nu_1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzBound {
    /// Operator norm in `L^2(nu_1)`.
    pub numeric: f64,
    pub analytic: f64,
    /// Operator norm in `L^1(nu_1)`, which sets the Picard window.
    pub l1: f64,
}

/// Operator norm of `G` in `L^2(nu_1)`.
pub fn lipschitz_bound_g(prob: &CHProblem) -> LipschitzBound {
    let (delta, c) = (prob.spec.delta, prob.spec.c);
    let e = &prob.embedding;
    let mut analytic = 4.0 * delta * (e.big_m * e.density_max).sqrt() + 2.0 * c;
    if e.shared {
        analytic = analytic.min(4.0 * delta + 2.0 * (c - delta).abs());
    }
    LipschitzBound {
        numeric: weighted_norm(&prob.g_operator, prob.m1.nu().weights()),
        analytic,
        l1: l1_norm(&prob.g_operator, prob.m1.nu().weights()),
    }
}

/// `||A||` on `L^1(nu)`: the largest `nu`-weighted column sum `sum_x nu_x |A_xy| / nu_y`.
fn l1_norm(a: &CsrMatrix, nu: &[f64]) -> f64 {
    let mut col = vec![0.0; a.n()];
    for (x, y, w) in a.triplets() {
        col[y] += nu[x] * w.abs();
    }
    col.iter().zip(nu).map(|(s, w)| s / w).fold(0.0, f64::max)
}

/// `||A||` in the `nu`-weighted Euclidean norm, i.e. the spectral norm of
/// `D^{1/2} A D^{-1/2}`.
fn weighted_norm(a: &CsrMatrix, nu: &[f64]) -> f64 {
    let n = a.n();
    let s: Vec<f64> = nu.iter().map(|w| w.sqrt()).collect();
    if n < DENSE_LIMIT {
        let mut m = DMatrix::zeros(n, n);
        for (x, y, w) in a.triplets() {
            m[(x, y)] = s[x] * w / s[y];
        }
        return SVD::new(m, false, false).singular_values.max();
    }
    let at = a.transpose();
    let mut x = seeded_vector(n, 0x9e0);
    let mut est = 0.0;
    for _ in 0..20_000 {
        let nx = x.iter().map(|t| t * t).sum::<f64>().sqrt();
        if nx == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|t| *t /= nx);
        // y = B x with B = S A S^{-1}; then B^T y.
        let xs: Vec<f64> = x.iter().zip(&s).map(|(t, si)| t / si).collect();
        let y: Vec<f64> = a.matvec(&xs).iter().zip(&s).map(|(t, si)| t * si).collect();
        let next = y.iter().map(|t| t * t).sum::<f64>().sqrt();
        let ys: Vec<f64> = y.iter().zip(&s).map(|(t, si)| t * si).collect();
        x = at
            .matvec(&ys)
            .iter()
            .zip(&s)
            .map(|(t, si)| t / si)
            .collect();
        if (next - est).abs() <= 1e-8 * next {
            return next;
        }
        est = next;
    }
    est
}

/// `E(u) = delta H_{m_2}(u) + sum nu (j*(u) - c u^2 / 2)`.
pub fn energy(prob: &CHProblem, u: &Field) -> Result<f64> {
    if !prob.embedding.shared {
        return Err(Error::invalid(
            "the free energy is only defined when both walks share one measure",
        ));
    }
    let psi = potential_energy(&prob.spec, u, prob.m1.nu());
    if !psi.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok(prob.spec.delta * operators::dirichlet_energy(&prob.m2, u)? + psi)
}

/// `mu = -delta Delta_2 u + v - c u` after checking `v in gamma^{-1}(u)`.
pub fn chemical_potential(prob: &CHProblem, u: &Field, v: &Field) -> Result<Field> {
    u.check(prob.n())?;
    v.check(prob.n())?;
    let sigma = prob.options.resolvent.sigma;
    for i in 0..u.len() {
        let back = prob.spec.graph.resolvent(sigma, u[i] + sigma * v[i]);
        if (back - u[i]).abs() > 1e-9 * (1.0 + u[i].abs()) {
            return Err(Error::invalid(format!(
                "v[{i}] = {} is not in gamma^{{-1}}({})",
                v[i], u[i]
            )));
        }
    }
    mu_with(prob, u, v, u)
}

fn mu_with(prob: &CHProblem, u: &Field, v: &Field, explicit: &Field) -> Result<Field> {
    let lap2 = operators::laplacian(&prob.m2, u)?;
    let (delta, c) = (prob.spec.delta, prob.spec.c);
    Ok(Field::from_fn(u.len(), |i| {
        -delta * lap2[i] + v[i] - c * explicit[i]
    }))
}

/// Result of one split step.
#[derive(Debug, Clone, PartialEq)]
pub struct ImexStep {
    pub u: Field,
    pub v: Field,
    pub mu: Field,
    pub residual: f64,
    pub iterations: usize,
}

/// One convex-splitting step: `w = u_n - tau c Delta_1 u_n`, then
/// `u - tau Delta_1 v + tau delta Delta_1 Delta_2 u = w` with `v in gamma^{-1}(u)`.
pub fn step_imex(
    prob: &CHProblem,
    u_n: &Field,
    warm: Option<(&Field, &Field)>,
) -> Result<ImexStep> {
    let tau = prob.tau;
    let lap1 = operators::laplacian(&prob.m1, u_n)?;
    let w = Field::from_fn(u_n.len(), |i| u_n[i] - tau * prob.spec.c * lap1[i]);
    let rp = ResolventProblem::new(
        &prob.m1,
        &prob.spec.graph,
        tau,
        &w,
        Some(&prob.double_laplacian),
    )?;
    let sol = pme::solve_resolvent(&rp, &prob.options.resolvent, warm)?;
    let mu = mu_with(prob, &sol.u, &sol.v, u_n)?;
    Ok(ImexStep {
        u: sol.u,
        v: sol.v,
        mu,
        residual: sol.residual,
        iterations: sol.iterations,
    })
}

/// End-of-run information from [`solve_with`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveSummary {
    pub steps: usize,
    pub notices: Vec<String>,
    pub picard_windows: usize,
    pub picard_sweeps: usize,
}

/// Integrates the problem, keeping snapshots at the configured stride.
pub fn solve(prob: &CHProblem) -> Result<Trajectory> {
    let mut traj = Trajectory::new(prob.tau, prob.options.snapshot_stride);
    let last = prob.steps();
    let summary = solve_with(prob, &mut |rec| {
        traj.push(rec, rec.diagnostics.step == last);
        Ok(())
    })?;
    traj.notices = summary.notices;
    Ok(traj)
}

/// Integrates the problem, handing every step to `observer` as it is produced.
pub fn solve_with(
    prob: &CHProblem,
    observer: &mut dyn FnMut(&StepRecord<'_>) -> Result<()>,
) -> Result<SolveSummary> {
    let mut summary = SolveSummary {
        steps: prob.steps(),
        ..Default::default()
    };
    if !prob.embedding.shared {
        summary
            .notices
            .push("measures differ: energy diagnostics disabled".into());
    }
    let graph = &prob.spec.graph;
    let u0 = &prob.u0;
    let v0 = Field::from_fn(u0.len(), |i| match graph.inverse_interval(u0[i]) {
        Some((lo, hi)) => graph.min_section(u0[i]).unwrap_or(0.0).clamp(lo, hi),
        None => 0.0,
    });
    let mu0 = mu_with(prob, u0, &v0, u0)?;
    emit(prob, observer, 0, u0, &v0, &mu0, 0.0, 0)?;

    if prob.pure_phase {
        summary
            .notices
            .push("pure phase: constant trajectory".into());
        for k in 1..=summary.steps {
            emit(prob, observer, k, u0, &v0, &mu0, 0.0, 0)?;
        }
        return Ok(summary);
    }
    match prob.scheme {
        Scheme::ImexSplit => run_imex(prob, observer, &v0, summary.steps)?,
        Scheme::Picard => run_picard(prob, observer, &v0, &mut summary)?,
    }
    Ok(summary)
}

#[allow(clippy::too_many_arguments)]
fn emit(
    prob: &CHProblem,
    observer: &mut dyn FnMut(&StepRecord<'_>) -> Result<()>,
    step: usize,
    u: &Field,
    v: &Field,
    mu: &Field,
    residual: f64,
    iterations: usize,
) -> Result<()> {
    let energy = if prob.embedding.shared {
        Some(energy(prob, u)?)
    } else {
        None
    };
    let d = StepDiagnostics {
        step,
        t: step as f64 * prob.tau,
        mass: prob.m1.nu().integrate(u.as_slice()),
        energy,
        dissipation: Some(0.5 * operators::gradient_product(&prob.m1, mu, mu)?),
        residual,
        iterations,
    };
    observer(&StepRecord {
        diagnostics: &d,
        u,
        v: Some(v),
        mu: Some(mu),
    })
}

fn run_imex(
    prob: &CHProblem,
    observer: &mut dyn FnMut(&StepRecord<'_>) -> Result<()>,
    v0: &Field,
    steps: usize,
) -> Result<()> {
    let mut u = prob.u0.clone();
    let mut v = v0.clone();
    let mut warm = false;
    for k in 1..=steps {
        let t = k as f64 * prob.tau;
        let s = step_imex(prob, &u, warm.then_some((&u, &v))).map_err(|e| e.at_step(k, t))?;
        warm = true;
        emit(
            prob,
            observer,
            k,
            &s.u,
            &s.v,
            &s.mu,
            s.residual,
            s.iterations,
        )?;
        u = s.u;
        v = s.v;
    }
    Ok(())
}

fn run_picard(
    prob: &CHProblem,
    observer: &mut dyn FnMut(&StepRecord<'_>) -> Result<()>,
    v0: &Field,
    summary: &mut SolveSummary,
) -> Result<()> {
    let steps = summary.steps;
    let tau = prob.tau;
    // Sweeps are measured in L^1(nu_1), where the window below makes them contract.
    let lg = lipschitz_bound_g(prob).l1;
    let per_window = if lg > 0.0 {
        ((prob.options.window_safety / lg / tau).floor() as usize).max(1)
    } else {
        steps.max(1)
    };
    let nu = prob.m1.nu();
    let threshold = prob.options.picard_tol * nu.total();
    let graph = &prob.spec.graph;

    let mut start = 0;
    let mut u_start = prob.u0.clone();
    let mut v_start = v0.clone();
    while start < steps {
        let k = per_window.min(steps - start);
        // Iterate sequences on the window: index j is time t_{start + j}.
        let mut z: Vec<Field> = vec![u_start.clone(); k + 1];
        let mut vs: Vec<Field> = vec![v_start.clone(); k + 1];
        let mut res = vec![(0.0, 0); k + 1];
        let mut prev_change = f64::INFINITY;
        let mut converged = false;
        for sweep in 1..=prob.options.picard_max_sweeps {
            summary.picard_sweeps += 1;
            let mut next = Vec::with_capacity(k + 1);
            let mut next_v = Vec::with_capacity(k + 1);
            next.push(u_start.clone());
            next_v.push(v_start.clone());
            let mut change = 0.0_f64;
            for j in 0..k {
                let step = start + j + 1;
                let t = step as f64 * tau;
                let gz = prob.g_operator.matvec(z[j].as_slice());
                let g = Field::from_fn(prob.n(), |i| next[j][i] - tau * gz[i]);
                let warm = if sweep > 1 {
                    (&z[j + 1], &vs[j + 1])
                } else {
                    (&next[j], &next_v[j])
                };
                let sol = ResolventProblem::new(&prob.m1, graph, tau, &g, None)
                    .and_then(|rp| pme::solve_resolvent(&rp, &prob.options.resolvent, Some(warm)))
                    .map_err(|e| e.at_step(step, t))?;
                change = change.max(nu.norm_l1((&sol.u - &z[j + 1]).as_slice()));
                res[j + 1] = (sol.residual, sol.iterations);
                next.push(sol.u);
                next_v.push(sol.v);
            }
            z = next;
            vs = next_v;
            if change <= threshold {
                converged = true;
                break;
            }
            if sweep >= 3 && change >= prev_change {
                return Err(Error::NotContracting {
                    ratio: change / prev_change,
                }
                .at_step(start + 1, (start + 1) as f64 * tau));
            }
            prev_change = change;
        }
        if !converged {
            return Err(Error::NoConvergence {
                solver: "Picard sweep",
                iterations: prob.options.picard_max_sweeps,
                residual: prev_change,
            }
            .at_step(start + 1, (start + 1) as f64 * tau));
        }
        summary.picard_windows += 1;
        for j in 1..=k {
            let mu = mu_with(prob, &z[j], &vs[j], &z[j])?;
            emit(
                prob,
                observer,
                start + j,
                &z[j],
                &vs[j],
                &mu,
                res[j].0,
                res[j].1,
            )?;
        }
        u_start = z[k].clone();
        v_start = vs[k].clone();
        start += k;
    }
    Ok(())
}
