//! Averaging, Laplacian, Dirichlet energy, spectral gap and the `H^{-1}` metric.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::linalg::{conjugate_gradient, seeded_vector};
use crate::walk::RandomWalk;

/// Above this size, dense factorizations give way to iterative solvers.
pub const DENSE_LIMIT: usize = 500;

/// `(M f)(x) = sum_y P[x][y] f(y)`.
pub fn averaging(rw: &RandomWalk, f: &Field) -> Result<Field> {
    f.check(rw.n())?;
    Ok(Field::new(rw.kernel().matvec(f.as_slice())))
}

/// `Delta f = M f - f`.
pub fn laplacian(rw: &RandomWalk, f: &Field) -> Result<Field> {
    let mut out = averaging(rw, f)?;
    for (o, x) in out.as_mut_slice().iter_mut().zip(f.iter()) {
        *o -= x;
    }
    Ok(out)
}

/// `sum_x nu_x sum_y P[x][y] (f(y) - f(x)) (g(y) - g(x))`.
pub fn gradient_product(rw: &RandomWalk, f: &Field, g: &Field) -> Result<f64> {
    f.check(rw.n())?;
    g.check(rw.n())?;
    let nu = rw.nu().weights();
    Ok(rw
        .kernel()
        .triplets()
        .map(|(x, y, p)| nu[x] * p * (f[y] - f[x]) * (g[y] - g[x]))
        .sum())
}

/// `H(f) = 1/4 sum_x nu_x sum_y P[x][y] (f(x) - f(y))^2`.
pub fn dirichlet_energy(rw: &RandomWalk, f: &Field) -> Result<f64> {
    rw.require_reversible()?;
    Ok(0.25 * gradient_product(rw, f, f)?)
}

/// The symmetrized generator `I - S`, `S = D^{1/2} P D^{-1/2}`.
struct SymmetricGenerator<'a> {
    rw: &'a RandomWalk,
    sqrt_nu: Vec<f64>,
}

impl<'a> SymmetricGenerator<'a> {
    fn new(rw: &'a RandomWalk) -> Self {
        Self {
            rw,
            sqrt_nu: rw.nu().weights().iter().map(|w| w.sqrt()).collect(),
        }
    }

    /// Unit vector spanning the kernel of `I - S`.
    fn null_vector(&self) -> Vec<f64> {
        let norm = self.sqrt_nu.iter().map(|x| x * x).sum::<f64>().sqrt();
        self.sqrt_nu.iter().map(|x| x / norm).collect()
    }

    /// `(I - S + s s^T) x`, nonsingular with the same action off the kernel.
    fn apply_shifted(&self, x: &[f64], out: &mut [f64], s: &[f64]) {
        self.apply(x, out);
        let c: f64 = x.iter().zip(s).map(|(a, b)| a * b).sum();
        out.iter_mut().zip(s).for_each(|(o, b)| *o += c * b);
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let scaled: Vec<f64> = x.iter().zip(&self.sqrt_nu).map(|(a, s)| a / s).collect();
        self.rw.kernel().matvec_into(&scaled, out);
        for i in 0..x.len() {
            out[i] = x[i] - self.sqrt_nu[i] * out[i];
        }
    }

    fn dense(&self) -> DMatrix<f64> {
        let n = self.rw.n();
        let mut m = DMatrix::identity(n, n);
        for (x, y, p) in self.rw.kernel().triplets() {
            let s = self.sqrt_nu[x] * p / self.sqrt_nu[y];
            m[(x, y)] -= s;
        }
        // Symmetrize away rounding noise.
        (&m + m.transpose()) * 0.5
    }

    fn deflate(&self, x: &mut [f64], s: &[f64]) {
        let c: f64 = x.iter().zip(s).map(|(a, b)| a * b).sum();
        x.iter_mut().zip(s).for_each(|(a, b)| *a -= c * b);
    }
}

/// How a spectral quantity was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralMethod {
    DenseEigen,
    InverseIteration,
}

/// Spectral data of a reversible, connected walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralReport {
    pub n: usize,
    pub gap: f64,
    pub poincare_constant: f64,
    pub method: SpectralMethod,
}

impl fmt::Display for SpectralReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n = {}", self.n)?;
        writeln!(f, "gap = {:?}", self.gap)?;
        writeln!(f, "poincare_constant = {:?}", self.poincare_constant)?;
        let method = match self.method {
            SpectralMethod::DenseEigen => "dense_eigen",
            SpectralMethod::InverseIteration => "inverse_iteration",
        };
        writeln!(f, "method = {method}")
    }
}

/// Smallest nonzero eigenvalue of `I - S`.
pub fn spectral_gap(rw: &RandomWalk) -> Result<f64> {
    Ok(spectral_report(rw)?.gap)
}

pub fn spectral_report(rw: &RandomWalk) -> Result<SpectralReport> {
    rw.require_reversible()?;
    rw.require_connected()?;
    let n = rw.n();
    if n == 1 {
        return Err(Error::invalid("a single node has no spectral gap"));
    }
    let op = SymmetricGenerator::new(rw);
    let (gap, method) = if n < DENSE_LIMIT {
        let eig = SymmetricEigen::new(op.dense());
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        (vals[1], SpectralMethod::DenseEigen)
    } else {
        (
            inverse_iteration_gap(&op)?,
            SpectralMethod::InverseIteration,
        )
    };
    Ok(SpectralReport {
        n,
        gap,
        poincare_constant: 0.5 * gap,
        method,
    })
}

fn inverse_iteration_gap(op: &SymmetricGenerator<'_>) -> Result<f64> {
    let n = op.rw.n();
    let s = op.null_vector();
    let apply = |x: &[f64], out: &mut [f64]| op.apply_shifted(x, out, &s);
    let mut x = seeded_vector(n, 0x5eed);
    op.deflate(&mut x, &s);
    let mut lambda = f64::INFINITY;
    let mut ax = vec![0.0; n];
    for _ in 0..1000 {
        let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        x.iter_mut().for_each(|a| *a /= nx);
        let mut y = conjugate_gradient(&apply, &x, 1e-13, 20 * n)?;
        op.deflate(&mut y, &s);
        let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        y.iter_mut().for_each(|a| *a /= ny);
        op.apply(&y, &mut ax);
        let next: f64 = y.iter().zip(&ax).map(|(a, b)| a * b).sum();
        x = y;
        if (next - lambda).abs() <= 1e-13 * next {
            return Ok(next);
        }
        lambda = next;
    }
    Err(Error::NoConvergence {
        solver: "inverse iteration",
        iterations: 1000,
        residual: f64::NAN,
    })
}

enum PoissonSolver {
    Dense(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Iterative,
}

/// Poisson solver and `H^{-1}` metric on a reversible, connected walk.
pub struct HMinusOneContext {
    walk: RandomWalk,
    sqrt_nu: Vec<f64>,
    null: Vec<f64>,
    solver: PoissonSolver,
    gap: f64,
}

impl HMinusOneContext {
    pub fn new(rw: &RandomWalk) -> Result<Self> {
        let gap = spectral_gap(rw)?;
        let op = SymmetricGenerator::new(rw);
        let null = op.null_vector();
        let solver = if rw.n() < DENSE_LIMIT {
            let s = DVector::from_column_slice(&null);
            let m = op.dense() + &s * s.transpose();
            PoissonSolver::Dense(
                m.cholesky()
                    .ok_or_else(|| Error::invalid("Poisson factorization failed"))?,
            )
        } else {
            PoissonSolver::Iterative
        };
        Ok(Self {
            sqrt_nu: op.sqrt_nu,
            walk: rw.clone(),
            null,
            solver,
            gap,
        })
    }

    pub fn walk(&self) -> &RandomWalk {
        &self.walk
    }

    pub fn gap(&self) -> f64 {
        self.gap
    }

    fn check_mean_zero(&self, v: &Field) -> Result<()> {
        v.check(self.walk.n())?;
        let nu = self.walk.nu();
        let mass = nu.integrate(v.as_slice());
        if mass.abs() > 1e-10 * nu.norm_l1(v.as_slice()) {
            return Err(Error::NonzeroMean {
                mean: mass / nu.total(),
            });
        }
        Ok(())
    }

    fn solve_sym(&self, b: &[f64]) -> Result<Vec<f64>> {
        match &self.solver {
            PoissonSolver::Dense(chol) => Ok(chol
                .solve(&DVector::from_column_slice(b))
                .as_slice()
                .to_vec()),
            PoissonSolver::Iterative => {
                let op = SymmetricGenerator::new(&self.walk);
                let apply = |x: &[f64], out: &mut [f64]| op.apply_shifted(x, out, &self.null);
                let mut y = conjugate_gradient(&apply, b, 1e-13, 20 * self.walk.n())?;
                op.deflate(&mut y, &self.null);
                Ok(y)
            }
        }
    }

    /// Mean-zero `phi` with `Delta phi = v`.
    pub fn solve_poisson(&self, v: &Field) -> Result<Field> {
        self.check_mean_zero(v)?;
        let vnorm = self.walk.nu().norm_l2(v.as_slice());
        if vnorm == 0.0 {
            return Ok(Field::zeros(v.len()));
        }
        let mut b: Vec<f64> = v.iter().zip(&self.sqrt_nu).map(|(a, s)| -a * s).collect();
        let c: f64 = b.iter().zip(&self.null).map(|(a, s)| a * s).sum();
        b.iter_mut().zip(&self.null).for_each(|(a, s)| *a -= c * s);
        let mut psi = self.solve_sym(&b)?;
        let mut phi = Field::new(psi.iter().zip(&self.sqrt_nu).map(|(a, s)| a / s).collect());
        let mut residual = self.poisson_residual(&phi, v)?;
        // One round of refinement absorbs factorization rounding on stiff walks.
        if residual.1 > 1e-12 * vnorm {
            let corr: Vec<f64> = residual
                .0
                .iter()
                .zip(&self.sqrt_nu)
                .map(|(a, s)| -a * s)
                .collect();
            let dpsi = self.solve_sym(&corr)?;
            psi.iter_mut().zip(&dpsi).for_each(|(a, d)| *a += d);
            let c: f64 = psi.iter().zip(&self.null).map(|(a, s)| a * s).sum();
            psi.iter_mut()
                .zip(&self.null)
                .for_each(|(a, s)| *a -= c * s);
            phi = Field::new(psi.iter().zip(&self.sqrt_nu).map(|(a, s)| a / s).collect());
            residual = self.poisson_residual(&phi, v)?;
        }
        if residual.1 > 1e-10 * vnorm {
            return Err(Error::NoConvergence {
                solver: "Poisson solve",
                iterations: 2,
                residual: residual.1 / vnorm,
            });
        }
        Ok(phi)
    }

    fn poisson_residual(&self, phi: &Field, v: &Field) -> Result<(Vec<f64>, f64)> {
        let lap = laplacian(&self.walk, phi)?;
        let r: Vec<f64> = lap.iter().zip(v.iter()).map(|(a, b)| b - a).collect();
        let norm = self.walk.nu().norm_l2(&r);
        Ok((r, norm))
    }

    /// `<v1, v2> = -sum nu (Delta^{-1} v1) v2`.
    pub fn inner(&self, v1: &Field, v2: &Field) -> Result<f64> {
        self.check_mean_zero(v2)?;
        let phi = self.solve_poisson(v1)?;
        Ok(-self.walk.nu().inner(phi.as_slice(), v2.as_slice()))
    }

    pub fn norm(&self, v: &Field) -> Result<f64> {
        Ok(self.inner(v, v)?.max(0.0).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k2_gap_is_two() {
        let rw = RandomWalk::complete_graph(2).unwrap();
        assert!((spectral_gap(&rw).unwrap() - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn report_prints_key_values() {
        let rw = RandomWalk::complete_graph(3).unwrap();
        let text = spectral_report(&rw).unwrap().to_string();
        assert!(text.contains("gap = 1.5"));
        assert!(text.contains("method = dense_eigen"));
    }
}
