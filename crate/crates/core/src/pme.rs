//! Porous-medium resolvent `(I + lambda B_gamma)^{-1}` and implicit-Euler mild solutions.
//!
//! The inclusion `v in gamma^{-1}(u)` is replaced by the parametrization
//! `u = R(z)`, `v = (z - u) / sigma` with `R` the scalar resolvent at step `sigma`,
//! and the resulting nonsmooth system in `z` is solved by semismooth Newton.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{Field, Measure};
use crate::linalg::{conjugate_gradient, gmres};
use crate::operators::DENSE_LIMIT;
use crate::potentials::{increasing_root, MonotoneGraph};
use crate::sparse::CsrMatrix;
use crate::trajectory::{StepDiagnostics, StepRecord, Trajectory};
use crate::walk::RandomWalk;

/// Controls for the nonlinear resolvent solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ResolventOptions {
    /// Target for `||F||_nu / (1 + ||g||_nu)`.
    pub tol: f64,
    pub sigma: f64,
    pub max_newton: usize,
    pub max_sweeps: usize,
}

impl Default for ResolventOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            sigma: 1.0,
            max_newton: 200,
            max_sweeps: 50_000,
        }
    }
}

/// Which inner method produced a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Newton,
    GaussSeidel,
    LaggedPicard,
}

/// Data of one resolvent solve `u - lambda Delta v + lambda L u = g`.
#[derive(Debug, Clone, Copy)]
pub struct ResolventProblem<'a> {
    walk: &'a RandomWalk,
    graph: &'a MonotoneGraph,
    lambda: f64,
    g: &'a Field,
    linear: Option<&'a CsrMatrix>,
}

impl<'a> ResolventProblem<'a> {
    pub fn new(
        walk: &'a RandomWalk,
        graph: &'a MonotoneGraph,
        lambda: f64,
        g: &'a Field,
        linear: Option<&'a CsrMatrix>,
    ) -> Result<Self> {
        walk.require_reversible()?;
        walk.require_connected()?;
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::invalid(format!("lambda must be > 0, got {lambda}")));
        }
        g.check(walk.n())?;
        if let Some(l) = linear {
            if l.n() != walk.n() {
                return Err(Error::DimensionMismatch {
                    expected: walk.n(),
                    found: l.n(),
                });
            }
        }
        let mass = walk.nu().integrate(g.as_slice());
        if let Some((lower, upper)) = window_violation(graph, walk.nu(), mass) {
            return Err(Error::MassWindow {
                time: 0.0,
                mass,
                lower,
                upper,
            });
        }
        Ok(Self {
            walk,
            graph,
            lambda,
            g,
            linear,
        })
    }
}

/// Output of a resolvent solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventSolution {
    pub u: Field,
    /// The element of `gamma^{-1}(u)` the solver converged to.
    pub v: Field,
    /// `||u - lambda Delta v + lambda L u - g||_nu`.
    pub residual: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

/// Returns the mass window `(lower, upper)` when `mass` is not strictly inside it.
///
/// Masses within `1e-12 nu(X)` of a finite bound count as on the bound.
pub fn window_violation(graph: &MonotoneGraph, nu: &Measure, mass: f64) -> Option<(f64, f64)> {
    let total = nu.total();
    let lower = total * graph.gamma_minus();
    let upper = total * graph.gamma_plus();
    let slack = |b: f64| 1e-12 * total * b.abs().max(1.0);
    let below = lower.is_finite() && mass <= lower + slack(graph.gamma_minus());
    let above = upper.is_finite() && mass >= upper - slack(graph.gamma_plus());
    (below || above || !mass.is_finite()).then_some((lower, upper))
}

/// Time-dependent source term `f(t)`.
#[derive(Clone, Default)]
pub enum Forcing {
    #[default]
    None,
    Steady(Field),
    /// Values at `t_0, t_1, ...`; the last sample is held beyond the end.
    Sampled(Vec<Field>),
    Function(Arc<dyn Fn(f64) -> Field + Send + Sync>),
}

impl std::fmt::Debug for Forcing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Forcing::None => write!(f, "Forcing::None"),
            Forcing::Steady(x) => write!(f, "Forcing::Steady({x:?})"),
            Forcing::Sampled(v) => write!(f, "Forcing::Sampled({} samples)", v.len()),
            Forcing::Function(_) => write!(f, "Forcing::Function"),
        }
    }
}

impl Forcing {
    /// Forcing at step `k`, time `t`; `None` means zero.
    pub fn at(&self, k: usize, t: f64) -> Option<Field> {
        match self {
            Forcing::None => None,
            Forcing::Steady(f) => Some(f.clone()),
            Forcing::Sampled(v) => v.get(k).or(v.last()).cloned(),
            Forcing::Function(f) => Some(f(t)),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Forcing::None)
    }
}

/// Verdict of the mass-window check along a time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassWindowReport {
    pub ok: bool,
    pub lower: f64,
    pub upper: f64,
    pub initial_mass: f64,
    /// First violating `(step, time, mass)`.
    pub first_violation: Option<(usize, f64, f64)>,
}

/// Checks `nu(X) gamma^- < mass(t) < nu(X) gamma^+` on the grid `t_k = k tau`, with the
/// forcing contribution accumulated by the trapezoid rule.
pub fn validate_mass_window(
    walk: &RandomWalk,
    graph: &MonotoneGraph,
    u0: &Field,
    forcing: &Forcing,
    tau: f64,
    t_end: f64,
) -> Result<MassWindowReport> {
    u0.check(walk.n())?;
    let nu = walk.nu();
    let m0 = nu.integrate(u0.as_slice());
    let total = nu.total();
    let mut report = MassWindowReport {
        ok: true,
        lower: total * graph.gamma_minus(),
        upper: total * graph.gamma_plus(),
        initial_mass: m0,
        first_violation: None,
    };
    let steps = step_count(tau, t_end)?;
    let forcing_mass = |k: usize| {
        forcing
            .at(k, k as f64 * tau)
            .map_or(0.0, |f| nu.integrate(f.as_slice()))
    };
    let mut mass = m0;
    let mut prev = forcing_mass(0);
    for k in 0..=steps {
        if k > 0 {
            let cur = forcing_mass(k);
            mass += 0.5 * tau * (prev + cur);
            prev = cur;
        }
        if window_violation(graph, nu, mass).is_some() {
            report.ok = false;
            report.first_violation = Some((k, k as f64 * tau, mass));
            break;
        }
        if forcing.is_zero() {
            break;
        }
    }
    Ok(report)
}

pub(crate) fn step_count(tau: f64, t_end: f64) -> Result<usize> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::invalid(format!("tau must be > 0, got {tau}")));
    }
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(Error::invalid(format!("T must be >= 0, got {t_end}")));
    }
    Ok((t_end / tau - 1e-9).ceil().max(0.0) as usize)
}

const NONMONOTONE_MEMORY: usize = 8;

/// Evaluation of the residual map at a given `z`.
#[derive(Clone)]
struct State {
    z: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    f: Vec<f64>,
    norm: f64,
}

struct Newton<'p, 'a> {
    prob: &'p ResolventProblem<'a>,
    sigma: f64,
}

impl Newton<'_, '_> {
    fn eval(&self, z: Vec<f64>) -> State {
        let p = self.prob;
        let u: Vec<f64> = z
            .iter()
            .map(|&zi| p.graph.resolvent(self.sigma, zi))
            .collect();
        let v: Vec<f64> = z
            .iter()
            .zip(&u)
            .map(|(zi, ui)| (zi - ui) / self.sigma)
            .collect();
        let f = residual_vector(p, &u, &v);
        let norm = p.walk.nu().norm_l2(&f);
        State { z, u, v, f, norm }
    }

    fn jacobian_dense(&self, z: &[f64], reg: f64) -> DMatrix<f64> {
        let p = self.prob;
        let n = z.len();
        let d: Vec<f64> = z
            .iter()
            .map(|&zi| p.graph.resolvent_derivative(self.sigma, zi))
            .collect();
        let ls = p.lambda / self.sigma;
        let mut j = DMatrix::zeros(n, n);
        for i in 0..n {
            j[(i, i)] += d[i] + ls * (1.0 - d[i]) + reg;
        }
        for (x, y, w) in p.walk.kernel().triplets() {
            j[(x, y)] -= ls * w * (1.0 - d[y]);
        }
        if let Some(l) = p.linear {
            for (x, y, w) in l.triplets() {
                j[(x, y)] += p.lambda * w * d[y];
            }
        }
        j
    }

    fn direction(&self, s: &State) -> Option<Vec<f64>> {
        let n = s.z.len();
        let reg = 1e-12;
        let rhs: Vec<f64> = s.f.iter().map(|x| -x).collect();
        if n < DENSE_LIMIT {
            let j = self.jacobian_dense(&s.z, reg);
            j.lu()
                .solve(&DVector::from_column_slice(&rhs))
                .map(|x| x.as_slice().to_vec())
        } else {
            let p = self.prob;
            let d: Vec<f64> =
                s.z.iter()
                    .map(|&zi| p.graph.resolvent_derivative(self.sigma, zi))
                    .collect();
            let ls = p.lambda / self.sigma;
            let Some(l) = p.linear else {
                return monotone_block_solve(p.walk, &d, ls, reg, &rhs);
            };
            let apply = |x: &[f64], out: &mut [f64]| {
                let ex: Vec<f64> = x.iter().zip(&d).map(|(a, di)| a * (1.0 - di)).collect();
                let pex = p.walk.kernel().matvec(&ex);
                let dx: Vec<f64> = x.iter().zip(&d).map(|(a, di)| a * di).collect();
                let lx = l.matvec(&dx);
                for i in 0..x.len() {
                    out[i] = d[i] * x[i] + ls * (ex[i] - pex[i]) + reg * x[i] + p.lambda * lx[i];
                }
            };
            // Left preconditioning by the exact solve without the linear part.
            let precond = |x: &[f64]| monotone_block_solve(p.walk, &d, ls, reg, x);
            if let Some(prhs) = precond(&rhs) {
                let left = |x: &[f64], out: &mut [f64]| {
                    let mut ax = vec![0.0; x.len()];
                    apply(x, &mut ax);
                    match precond(&ax) {
                        Some(y) => out.copy_from_slice(&y),
                        None => out.copy_from_slice(&ax),
                    }
                };
                if let Ok(x) = gmres(&left, &prhs, None, 1e-12, 60, 20 * n.max(100)) {
                    return Some(x);
                }
            }
            gmres(&apply, &rhs, None, 1e-12, 60, 20 * n.max(100)).ok()
        }
    }

    /// Damped semismooth Newton; returns the final state and iteration count.
    fn run(&self, mut z0: Vec<f64>, target: f64, max_iter: usize) -> (State, usize) {
        let nu = self.prob.walk.nu();
        let mass = nu.integrate(self.prob.g.as_slice());
        correct_mass(self.prob.graph, self.sigma, nu, &mut z0, mass);
        let mut s = self.eval(z0);
        let mut best = s.clone();
        let mut history: Vec<f64> = Vec::with_capacity(NONMONOTONE_MEMORY);
        let mut polish = 0;
        for it in 0..max_iter {
            if s.norm <= target {
                // Newton is quadratic here; a couple of extra steps reach rounding level.
                if polish >= 2 || s.norm == 0.0 {
                    return (best, it);
                }
                polish += 1;
            }
            let Some(mut dz) = self.direction(&s) else {
                return (best, it);
            };
            // The constant direction only moves the mass, and near saturation of R
            // its Newton component is badly scaled; it is settled by a scalar shift.
            let shift = nu.integrate(&dz) / nu.total();
            dz.iter_mut().for_each(|x| *x -= shift);
            let zmax = s.z.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            let cap = 10.0 * (1.0 + zmax);
            let dmax = dz.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            if !dmax.is_finite() {
                return (best, it);
            }
            if dmax > cap {
                dz.iter_mut().for_each(|x| *x *= cap / dmax);
            }
            // Nonmonotone acceptance against the worst of the recent norms: piecewise
            // linear problems need steps across kinks that may raise the residual.
            let reference = history.iter().fold(s.norm, |m: f64, x| m.max(*x));
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let mut trial: Vec<f64> = s.z.iter().zip(&dz).map(|(a, b)| a + alpha * b).collect();
                correct_mass(self.prob.graph, self.sigma, nu, &mut trial, mass);
                let t = self.eval(trial);
                if t.norm <= (1.0 - 1e-4 * alpha) * reference {
                    accepted = Some(t);
                    break;
                }
                alpha *= 0.5;
            }
            let Some(t) = accepted else {
                return (best, it);
            };
            if history.len() == NONMONOTONE_MEMORY {
                history.remove(0);
            }
            history.push(s.norm);
            s = t;
            if s.norm < best.norm {
                best = s.clone();
            }
        }
        (best, max_iter)
    }
}

/// Solves `(D + reg) x + ls (I - P)(I - D) x = r` for diagonal `D` with entries in `[0, 1]`.
///
/// Columns with `d = 1` reduce to the identity, so the nodes with `d < 1` form a closed
/// block. After `w = (1 - d) x` and weighting rows by `nu`, that block is symmetric
/// positive definite for a reversible walk and is handled by Jacobi-scaled CG.
fn monotone_block_solve(
    walk: &RandomWalk,
    d: &[f64],
    ls: f64,
    reg: f64,
    r: &[f64],
) -> Option<Vec<f64>> {
    let n = d.len();
    let nu = walk.nu().weights();
    let kernel = walk.kernel();
    let block: Vec<usize> = (0..n).filter(|&i| d[i] < 1.0).collect();
    let mut pos = vec![usize::MAX; n];
    for (k, &i) in block.iter().enumerate() {
        pos[i] = k;
    }
    let e = |i: usize| 1.0 - d[i];
    // Diagonal of the weighted block, used for the symmetric scaling.
    let diag: Vec<f64> = block
        .iter()
        .map(|&i| {
            let pii = kernel.get(i, i);
            nu[i] * ((d[i] + reg) / e(i) + ls * (1.0 - pii))
        })
        .collect();
    let scale: Vec<f64> = diag.iter().map(|a| a.sqrt()).collect();
    let apply = |q: &[f64], out: &mut [f64]| {
        for (k, &i) in block.iter().enumerate() {
            let wi = q[k] / scale[k];
            let mut acc = nu[i] * ((d[i] + reg) / e(i) + ls) * wi;
            for (y, pxy) in kernel.row(i) {
                let ky = pos[y];
                if ky != usize::MAX {
                    acc -= nu[i] * ls * pxy * q[ky] / scale[ky];
                }
            }
            out[k] = acc / scale[k];
        }
    };
    let b: Vec<f64> = block
        .iter()
        .enumerate()
        .map(|(k, &i)| nu[i] * r[i] / scale[k])
        .collect();
    let q = if block.is_empty() {
        Vec::new()
    } else {
        conjugate_gradient(&apply, &b, 1e-13, 20 * block.len() + 100).ok()?
    };
    let w: Vec<f64> = {
        let mut w = vec![0.0; n];
        for (k, &i) in block.iter().enumerate() {
            w[i] = q[k] / scale[k];
        }
        w
    };
    let pw = kernel.matvec(&w);
    let x = (0..n)
        .map(|i| {
            if pos[i] != usize::MAX {
                w[i] / e(i)
            } else {
                (r[i] - ls * (w[i] - pw[i])) / (1.0 + reg)
            }
        })
        .collect();
    Some(x)
}

/// `u - lambda Delta v + lambda L u - g`.
fn residual_vector(p: &ResolventProblem<'_>, u: &[f64], v: &[f64]) -> Vec<f64> {
    let pv = p.walk.kernel().matvec(v);
    let lu = p.linear.map(|l| l.matvec(u));
    (0..u.len())
        .map(|i| {
            let mut r = u[i] - p.lambda * (pv[i] - v[i]) - p.g[i];
            if let Some(lu) = &lu {
                r += p.lambda * lu[i];
            }
            r
        })
        .collect()
}

/// Shifts `z` by a constant so that `sum nu R(z)` equals the target mass.
// Negated comparisons below also reject NaN.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn correct_mass(graph: &MonotoneGraph, sigma: f64, nu: &Measure, z: &mut [f64], target: f64) {
    let w = nu.weights();
    let scale = nu.norm_l1(z).max(nu.total());
    let h = |k: f64| -> f64 {
        let m: f64 = z
            .iter()
            .zip(w)
            .map(|(zi, wi)| wi * graph.resolvent(sigma, zi + k))
            .sum();
        m - target
    };
    let dh = |k: f64| -> f64 {
        z.iter()
            .zip(w)
            .map(|(zi, wi)| wi * graph.resolvent_derivative(sigma, zi + k))
            .sum()
    };
    let h0 = h(0.0);
    let tol = 4.0 * f64::EPSILON * scale * (z.len() as f64).sqrt();
    if h0.abs() <= tol || !h0.is_finite() {
        return;
    }
    // Plain Newton usually lands in a step or two; the bracketed search is the backstop.
    let (mut kappa, mut hk) = (0.0, h0);
    for _ in 0..8 {
        let d = dh(kappa);
        if !(d > 0.0) {
            break;
        }
        let next = kappa - hk / d;
        let hn = h(next);
        if !(hn.abs() < hk.abs()) {
            break;
        }
        kappa = next;
        hk = hn;
        if hk.abs() <= tol {
            z.iter_mut().for_each(|zi| *zi += kappa);
            return;
        }
    }
    let dir = if h0 < 0.0 { 1.0 } else { -1.0 };
    let mut step = 1.0_f64.max(z.iter().fold(0.0_f64, |m, x| m.max(x.abs())));
    let mut far = None;
    for _ in 0..64 {
        if dir * h(dir * step) >= 0.0 {
            far = Some(dir * step);
            break;
        }
        step *= 2.0;
    }
    let Some(far) = far else {
        z.iter_mut().for_each(|zi| *zi += kappa);
        return;
    };
    let (lo, hi) = if dir > 0.0 { (0.0, far) } else { (far, 0.0) };
    let start = if (lo..=hi).contains(&kappa) {
        kappa
    } else {
        0.5 * (lo + hi)
    };
    let kappa = increasing_root(h, dh, lo, hi, start);
    if h(kappa).abs() < h0.abs() {
        z.iter_mut().for_each(|zi| *zi += kappa);
    }
}

/// Solves `u - lambda Delta v + lambda L u = g`, `v in gamma^{-1}(u)`.
///
/// `warm` is a previous `(u, v)` pair used as the starting point.
pub fn solve_resolvent(
    prob: &ResolventProblem<'_>,
    opts: &ResolventOptions,
    warm: Option<(&Field, &Field)>,
) -> Result<ResolventSolution> {
    let sigma = opts.sigma;
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
    }
    let nu = prob.walk.nu();
    let target = opts.tol * (1.0 + nu.norm_l2(prob.g.as_slice()));
    let z0: Vec<f64> = match warm {
        Some((u, v)) if u.len() == prob.g.len() && v.len() == prob.g.len() => {
            u.iter().zip(v.iter()).map(|(a, b)| a + sigma * b).collect()
        }
        _ => prob
            .g
            .iter()
            .map(|&gi| {
                // Starting from g itself keeps data beyond a plateau off the kink of R.
                let u = prob.graph.project_to_domain(gi);
                gi + sigma * prob.graph.min_section(u).unwrap_or(0.0)
            })
            .collect(),
    };
    let newton = Newton { prob, sigma };
    // Active sets move by about one node per boundary and iteration, so large
    // graphs get a budget proportional to their size.
    let budget = opts.max_newton.max(prob.g.len() / 2);
    let (state, iterations) = newton.run(z0, target, budget);
    let (mut z, mut iterations, mut method) = (state.z, iterations, SolveMethod::Newton);
    if state.norm > target {
        let fallback = match prob.linear {
            None => gauss_seidel(prob, opts, &state.u, &state.v, target),
            Some(_) => lagged_picard(prob, opts, &state.u, &state.v, target),
        };
        match fallback {
            Ok((zf, its, m)) => {
                z = zf;
                iterations += its;
                method = m;
            }
            Err(e) => {
                let best = state.norm.min(e.residual().unwrap_or(f64::INFINITY));
                return Err(Error::NoConvergence {
                    solver: "porous-medium resolvent",
                    iterations: iterations + opts.max_sweeps,
                    residual: best,
                });
            }
        }
    }
    let mass = nu.integrate(prob.g.as_slice());
    correct_mass(prob.graph, sigma, nu, &mut z, mass);
    let s = newton.eval(z);
    if s.norm > target {
        return Err(Error::NoConvergence {
            solver: "porous-medium resolvent",
            iterations,
            residual: s.norm,
        });
    }
    Ok(ResolventSolution {
        u: Field::new(s.u),
        v: Field::new(s.v),
        residual: s.norm,
        iterations,
        method,
    })
}

/// Nodewise Gauss-Seidel in `v`: each update solves the scalar inclusion exactly.
/// This is coordinate descent on a convex dual and converges for reversible walks.
fn gauss_seidel(
    prob: &ResolventProblem<'_>,
    opts: &ResolventOptions,
    u0: &[f64],
    v0: &[f64],
    target: f64,
) -> Result<(Vec<f64>, usize, SolveMethod)> {
    let n = u0.len();
    let (mut u, mut v) = (u0.to_vec(), v0.to_vec());
    let kernel = prob.walk.kernel();
    let lam = prob.lambda;
    let nu = prob.walk.nu();
    let mut best = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        for x in 0..n {
            let mut pxx = 0.0;
            let mut off = 0.0;
            for (y, p) in kernel.row(x) {
                if y == x {
                    pxx = p;
                } else {
                    off += p * v[y];
                }
            }
            let a = lam * (1.0 - pxx);
            let b = prob.g[x] + lam * off;
            if a <= 0.0 {
                u[x] = b;
                v[x] = prob.graph.min_section(b).unwrap_or(v[x]);
                continue;
            }
            u[x] = prob.graph.resolvent(a, b);
            v[x] = (b - u[x]) / a;
        }
        if sweep % 10 == 0 || sweep == opts.max_sweeps {
            let norm = nu.norm_l2(&residual_vector(prob, &u, &v));
            best = best.min(norm);
            if norm <= 0.5 * target {
                let z = u.iter().zip(&v).map(|(a, b)| a + opts.sigma * b).collect();
                return Ok((z, sweep, SolveMethod::GaussSeidel));
            }
        }
    }
    Err(Error::NoConvergence {
        solver: "Gauss-Seidel",
        iterations: opts.max_sweeps,
        residual: best,
    })
}

/// Treats `L u` explicitly and re-solves until the lag vanishes. Contracts when
/// `lambda ||L||` is small compared to the monotone part.
fn lagged_picard(
    prob: &ResolventProblem<'_>,
    opts: &ResolventOptions,
    u0: &[f64],
    v0: &[f64],
    target: f64,
) -> Result<(Vec<f64>, usize, SolveMethod)> {
    let l = prob.linear.expect("linear part present");
    let (mut u, mut v) = (Field::new(u0.to_vec()), Field::new(v0.to_vec()));
    let nu = prob.walk.nu();
    let mut total = 0;
    let mut best = f64::INFINITY;
    for _ in 0..500 {
        let lu = l.matvec(u.as_slice());
        let g = Field::from_fn(u.len(), |i| prob.g[i] - prob.lambda * lu[i]);
        let inner = ResolventProblem {
            g: &g,
            linear: None,
            ..*prob
        };
        let sol = solve_resolvent(&inner, opts, Some((&u, &v)))?;
        total += sol.iterations;
        u = sol.u;
        v = sol.v;
        let norm = nu.norm_l2(&residual_vector(prob, u.as_slice(), v.as_slice()));
        if norm <= 0.5 * target {
            let z = u
                .iter()
                .zip(v.iter())
                .map(|(a, b)| a + opts.sigma * b)
                .collect();
            return Ok((z, total, SolveMethod::LaggedPicard));
        }
        if norm >= best {
            break;
        }
        best = norm;
    }
    Err(Error::NoConvergence {
        solver: "lagged Picard",
        iterations: total,
        residual: best,
    })
}

/// Options for [`pme_mild_solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MildOptions {
    pub resolvent: ResolventOptions,
    pub snapshot_stride: usize,
}

impl Default for MildOptions {
    fn default() -> Self {
        Self {
            resolvent: ResolventOptions::default(),
            snapshot_stride: 1,
        }
    }
}

/// Implicit Euler `u^{n+1} = (I + tau B)^{-1}(u^n + tau f(t_n))`.
pub fn pme_mild_solve(
    walk: &RandomWalk,
    graph: &MonotoneGraph,
    u0: &Field,
    forcing: &Forcing,
    tau: f64,
    t_end: f64,
    opts: &MildOptions,
) -> Result<Trajectory> {
    let steps = step_count(tau, t_end)?;
    u0.check(walk.n())?;
    let nu = walk.nu();
    let mut traj = Trajectory::new(tau, opts.snapshot_stride);
    let functional = |u: &Field| -> f64 {
        nu.weights()
            .iter()
            .zip(u.iter())
            .map(|(w, &r)| w * graph.j_star(r))
            .sum()
    };
    let diag = |step: usize, u: &Field, residual: f64, iterations: usize| StepDiagnostics {
        step,
        t: step as f64 * tau,
        mass: nu.integrate(u.as_slice()),
        energy: Some(functional(u)),
        dissipation: None,
        residual,
        iterations,
    };

    let report = validate_mass_window(walk, graph, u0, forcing, tau, t_end)?;
    if !report.ok {
        if forcing.is_zero() && is_pure_phase(graph, u0) {
            let v = Field::from_fn(u0.len(), |_| 0.0);
            for k in 0..=steps {
                let d = diag(k, u0, 0.0, 0);
                traj.push(
                    &StepRecord {
                        diagnostics: &d,
                        u: u0,
                        v: Some(&v),
                        mu: None,
                    },
                    k == steps,
                );
            }
            traj.notices.push("pure phase: constant trajectory".into());
            return Ok(traj);
        }
        let (k, t, mass) = report.first_violation.expect("violation recorded");
        return Err(Error::MassWindow {
            time: t,
            mass,
            lower: report.lower,
            upper: report.upper,
        }
        .at_step(k, t));
    }

    let mut u = u0.clone();
    let mut v = Field::from_fn(u.len(), |i| {
        graph
            .min_section(graph.project_to_domain(u[i]))
            .unwrap_or(0.0)
    });
    let d0 = diag(0, &u, 0.0, 0);
    traj.push(
        &StepRecord {
            diagnostics: &d0,
            u: &u,
            v: None,
            mu: None,
        },
        steps == 0,
    );
    let mut warm = false;
    for k in 0..steps {
        let t = k as f64 * tau;
        let g = match forcing.at(k, t) {
            Some(f) => {
                f.check(walk.n()).map_err(|e| e.at_step(k + 1, t + tau))?;
                Field::from_fn(u.len(), |i| u[i] + tau * f[i])
            }
            None => u.clone(),
        };
        let sol = ResolventProblem::new(walk, graph, tau, &g, None)
            .and_then(|p| solve_resolvent(&p, &opts.resolvent, warm.then_some((&u, &v))))
            .map_err(|e| e.at_step(k + 1, t + tau))?;
        warm = true;
        u = sol.u;
        v = sol.v;
        let d = diag(k + 1, &u, sol.residual, sol.iterations);
        traj.push(
            &StepRecord {
                diagnostics: &d,
                u: &u,
                v: Some(&v),
                mu: None,
            },
            k + 1 == steps,
        );
    }
    Ok(traj)
}

/// Constant state sitting at a finite end of the range.
pub fn is_pure_phase(graph: &MonotoneGraph, u: &Field) -> bool {
    let first = u[0];
    let ends = [graph.gamma_minus(), graph.gamma_plus()];
    ends.iter().any(|e| e.is_finite() && *e == first) && u.iter().all(|&x| x == first)
}
