//! Maximal monotone graphs and the split potential `F' = gamma^{-1}(r) - c r`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{Field, Measure};

const ROOT_BUDGET: usize = 200;

/// Root of a nondecreasing `h` on `[lo, hi]` with `h(lo) <= 0 <= h(hi)`, by Newton steps
/// that fall back to bisection whenever they leave the bracket.
pub(crate) fn increasing_root(
    h: impl Fn(f64) -> f64,
    dh: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    start: f64,
) -> f64 {
    let mut x = start.clamp(lo, hi);
    for _ in 0..ROOT_BUDGET {
        let hx = h(x);
        if hx == 0.0 {
            return x;
        }
        if hx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        let d = dh(x);
        let newton = x - hx / d;
        let usable = d.is_finite() && d > 0.0;
        if usable && (newton - x).abs() <= 2.0 * f64::EPSILON * x.abs() {
            return newton.clamp(lo, hi);
        }
        let next = if usable && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == x {
            break;
        }
        x = next;
    }
    x
}

/// `|x|^e`, with the cheaper integer power when `e` is a small integer.
fn abs_pow(x: f64, e: f64) -> f64 {
    if e.fract() == 0.0 && e.abs() <= 32.0 {
        x.abs().powi(e as i32)
    } else {
        x.abs().powf(e)
    }
}

/// Scalar section for user-supplied graphs.
pub type SectionFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A graph given by its continuous, nondecreasing inverse on `[lo, hi]`.
#[derive(Clone)]
pub struct CustomGraph {
    name: String,
    lo: f64,
    hi: f64,
    section: SectionFn,
}

impl fmt::Debug for CustomGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomGraph")
            .field("name", &self.name)
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .finish()
    }
}

/// The built-in families and user-supplied graphs.
#[derive(Debug, Clone)]
pub enum GraphKind {
    /// `gamma^{-1}(r) = |r|^{p-1} r`.
    PowerLaw {
        p: f64,
    },
    /// `gamma^{-1}(r) = log(1 + r) - log(1 - r)` on `(-1, 1)`.
    Logarithmic,
    /// Subdifferential of the indicator of `[-1, 1]`.
    Obstacle,
    /// `r` below 0, flat on `[0, 1]`, `r - 1` above 1.
    Stefan,
    /// Subdifferential of the indicator of `[0, 1]`.
    HeleShaw,
    Custom(CustomGraph),
}

/// A maximal monotone graph seen through `gamma^{-1}`.
#[derive(Debug, Clone)]
pub struct MonotoneGraph {
    kind: GraphKind,
}

impl MonotoneGraph {
    pub fn power_law(p: f64) -> Result<Self> {
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::invalid(format!(
                "power-law exponent must be > 0, got {p}"
            )));
        }
        Ok(Self {
            kind: GraphKind::PowerLaw { p },
        })
    }

    pub fn logarithmic() -> Self {
        Self {
            kind: GraphKind::Logarithmic,
        }
    }

    pub fn obstacle() -> Self {
        Self {
            kind: GraphKind::Obstacle,
        }
    }

    pub fn stefan() -> Self {
        Self {
            kind: GraphKind::Stefan,
        }
    }

    pub fn hele_shaw() -> Self {
        Self {
            kind: GraphKind::HeleShaw,
        }
    }

    /// User graph from a continuous nondecreasing section on `[lo, hi]`.
    ///
    /// The resolvent is found by bisection, which is only exact when `gamma^{-1}` is
    /// single-valued and continuous. The primitive is integrated numerically from 0.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn custom(
        name: impl Into<String>,
        lo: f64,
        hi: f64,
        section: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(lo < hi) || lo > 0.0 || hi < 0.0 {
            return Err(Error::invalid(format!(
                "custom graph range [{lo}, {hi}] must be nonempty and contain 0"
            )));
        }
        Ok(Self {
            kind: GraphKind::Custom(CustomGraph {
                name: name.into(),
                lo,
                hi,
                section: Arc::new(section),
            }),
        })
    }

    pub fn kind(&self) -> &GraphKind {
        &self.kind
    }

    pub fn name(&self) -> String {
        match &self.kind {
            GraphKind::PowerLaw { p } => format!("power(p={p})"),
            GraphKind::Logarithmic => "logarithmic".into(),
            GraphKind::Obstacle => "obstacle".into(),
            GraphKind::Stefan => "stefan".into(),
            GraphKind::HeleShaw => "hele_shaw".into(),
            GraphKind::Custom(c) => c.name.clone(),
        }
    }

    /// `inf Ran(gamma)`.
    pub fn gamma_minus(&self) -> f64 {
        match &self.kind {
            GraphKind::PowerLaw { .. } | GraphKind::Stefan => f64::NEG_INFINITY,
            GraphKind::Logarithmic | GraphKind::Obstacle => -1.0,
            GraphKind::HeleShaw => 0.0,
            GraphKind::Custom(c) => c.lo,
        }
    }

    /// `sup Ran(gamma)`.
    pub fn gamma_plus(&self) -> f64 {
        match &self.kind {
            GraphKind::PowerLaw { .. } | GraphKind::Stefan => f64::INFINITY,
            GraphKind::Logarithmic | GraphKind::Obstacle | GraphKind::HeleShaw => 1.0,
            GraphKind::Custom(c) => c.hi,
        }
    }

    /// True when `gamma^{-1}(r)` is nonempty.
    pub fn in_domain(&self, r: f64) -> bool {
        match &self.kind {
            GraphKind::Logarithmic => r > -1.0 && r < 1.0,
            _ => r >= self.gamma_minus() && r <= self.gamma_plus(),
        }
    }

    /// The closed interval `gamma^{-1}(r)`, or `None` when it is empty.
    pub fn inverse_interval(&self, r: f64) -> Option<(f64, f64)> {
        if !self.in_domain(r) {
            return None;
        }
        match &self.kind {
            GraphKind::Obstacle | GraphKind::HeleShaw => {
                let lo = if r == self.gamma_minus() {
                    f64::NEG_INFINITY
                } else {
                    0.0
                };
                let hi = if r == self.gamma_plus() {
                    f64::INFINITY
                } else {
                    0.0
                };
                Some((lo, hi))
            }
            _ => {
                let s = self.min_section(r)?;
                Some((s, s))
            }
        }
    }

    /// Least-norm element of `gamma^{-1}(r)`.
    pub fn min_section(&self, r: f64) -> Option<f64> {
        if !self.in_domain(r) {
            return None;
        }
        Some(match &self.kind {
            GraphKind::PowerLaw { .. } if r == 0.0 => 0.0,
            GraphKind::PowerLaw { p } => abs_pow(r, p - 1.0) * r,
            GraphKind::Logarithmic => 2.0 * r.atanh(),
            GraphKind::Obstacle | GraphKind::HeleShaw => 0.0,
            GraphKind::Stefan => {
                if r < 0.0 {
                    r
                } else if r > 1.0 {
                    r - 1.0
                } else {
                    0.0
                }
            }
            GraphKind::Custom(c) => (c.section)(r),
        })
    }

    /// Nearest point of the domain to `r`, pulled slightly inside an open domain.
    pub fn project_to_domain(&self, r: f64) -> f64 {
        match &self.kind {
            GraphKind::Logarithmic => r.clamp(-1.0 + 1e-12, 1.0 - 1e-12),
            _ => r.clamp(self.gamma_minus(), self.gamma_plus()),
        }
    }

    /// `(I + t gamma^{-1})^{-1}(z)`.
    pub fn resolvent(&self, t: f64, z: f64) -> f64 {
        match &self.kind {
            GraphKind::PowerLaw { p } => {
                let p = *p;
                if p == 1.0 {
                    return z / (1.0 + t);
                }
                // Odd symmetry: solve x + t x^p = |z| on x >= 0.
                let a = z.abs();
                if a == 0.0 {
                    return 0.0;
                }
                let h = |x: f64| x + t * abs_pow(x, p - 1.0) * x - a;
                let dh = |x: f64| 1.0 + t * p * abs_pow(x, p - 1.0);
                // The root also sits below (|z| / t)^{1/p}.
                let cap = (a / t).powf(1.0 / p);
                z.signum() * increasing_root(h, dh, 0.0, a, a.min(cap))
            }
            GraphKind::Logarithmic => {
                if z == 0.0 {
                    return 0.0;
                }
                // In y = atanh(x) the equation tanh(y) + 2 t y = |z| is smooth and
                // bracketed by (|z| - 1) / 2t <= y <= |z| / 2t.
                let a = z.abs();
                let h = |y: f64| y.tanh() + 2.0 * t * y - a;
                let dh = |y: f64| {
                    let th = y.tanh();
                    1.0 - th * th + 2.0 * t
                };
                let (lo, hi) = (((a - 1.0) / (2.0 * t)).max(0.0), a / (2.0 * t));
                let y =
                    increasing_root(h, dh, lo, hi, (a / (1.0 + 2.0 * t)).atanh().min(hi).max(lo));
                z.signum() * y.tanh().min(1.0 - f64::EPSILON)
            }
            GraphKind::Obstacle => z.clamp(-1.0, 1.0),
            GraphKind::HeleShaw => z.clamp(0.0, 1.0),
            GraphKind::Stefan => {
                if z < 0.0 {
                    z / (1.0 + t)
                } else if z > 1.0 {
                    (z + t) / (1.0 + t)
                } else {
                    z
                }
            }
            GraphKind::Custom(c) => {
                let f = &c.section;
                let (mut lo, mut hi) = (c.lo, c.hi);
                let h = |x: f64| x + t * f(x) - z;
                if lo.is_infinite() {
                    lo = -1.0;
                    while h(lo) > 0.0 {
                        lo *= 2.0;
                    }
                } else if h(lo) >= 0.0 {
                    return lo;
                }
                if hi.is_infinite() {
                    hi = 1.0;
                    while h(hi) < 0.0 {
                        hi *= 2.0;
                    }
                } else if h(hi) <= 0.0 {
                    return hi;
                }
                increasing_root(h, |_| f64::NAN, lo, hi, 0.5 * (lo + hi))
            }
        }
    }

    /// Derivative of the resolvent in `z`; at kinks a one-sided value is returned.
    pub fn resolvent_derivative(&self, t: f64, z: f64) -> f64 {
        match &self.kind {
            GraphKind::PowerLaw { p } => {
                let x = self.resolvent(t, z);
                if x == 0.0 {
                    return if *p < 1.0 {
                        0.0
                    } else if *p == 1.0 {
                        1.0 / (1.0 + t)
                    } else {
                        1.0
                    };
                }
                1.0 / (1.0 + t * p * abs_pow(x, p - 1.0))
            }
            GraphKind::Logarithmic => {
                let x = self.resolvent(t, z);
                1.0 / (1.0 + 2.0 * t / (1.0 - x * x))
            }
            GraphKind::Obstacle => f64::from(u8::from((-1.0..=1.0).contains(&z))),
            GraphKind::HeleShaw => f64::from(u8::from((0.0..=1.0).contains(&z))),
            GraphKind::Stefan => {
                if (0.0..=1.0).contains(&z) {
                    1.0
                } else {
                    1.0 / (1.0 + t)
                }
            }
            GraphKind::Custom(_) => {
                let h = 1e-7 * z.abs().max(1.0);
                ((self.resolvent(t, z + h) - self.resolvent(t, z - h)) / (2.0 * h)).clamp(0.0, 1.0)
            }
        }
    }

    /// Primitive `j*(r) = int_0^r (gamma^{-1})^0`; `+inf` outside the closed domain.
    pub fn j_star(&self, r: f64) -> f64 {
        match &self.kind {
            GraphKind::PowerLaw { p } => abs_pow(r, p + 1.0) / (p + 1.0),
            GraphKind::Logarithmic => {
                if r.abs() > 1.0 {
                    f64::INFINITY
                } else if r.abs() == 1.0 {
                    2.0 * std::f64::consts::LN_2
                } else {
                    (1.0 + r) * (1.0 + r).ln() + (1.0 - r) * (1.0 - r).ln()
                }
            }
            GraphKind::Obstacle | GraphKind::HeleShaw => {
                if self.in_domain(r) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            GraphKind::Stefan => {
                if r < 0.0 {
                    0.5 * r * r
                } else if r > 1.0 {
                    0.5 * (r - 1.0) * (r - 1.0)
                } else {
                    0.0
                }
            }
            GraphKind::Custom(c) => {
                if !self.in_domain(r) {
                    return f64::INFINITY;
                }
                // Composite Simpson from 0 to r.
                let m = 2000;
                let h = r / m as f64;
                let f = &c.section;
                let mut s = f(0.0) + f(r);
                for k in 1..m {
                    let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                    s += w * f(k as f64 * h);
                }
                s * h / 3.0
            }
        }
    }

    /// `inf_r j*(r) - c r^2 / 2`, when known to be finite.
    pub fn split_lower_bound(&self, c: f64) -> Option<f64> {
        match &self.kind {
            GraphKind::PowerLaw { p } => {
                let p = *p;
                if p > 1.0 {
                    Some(c.powf((p + 1.0) / (p - 1.0)) * (1.0 / (p + 1.0) - 0.5))
                } else if p == 1.0 && c <= 1.0 {
                    Some(0.0)
                } else {
                    None
                }
            }
            GraphKind::Logarithmic => {
                if c <= 2.0 {
                    return Some(0.0);
                }
                let root = bisect_decreasing(|x| c * x - 2.0 * x.atanh(), 1e-12, 1.0 - 1e-16)?;
                Some(self.j_star(root) - 0.5 * c * root * root)
            }
            GraphKind::Obstacle | GraphKind::HeleShaw => Some(-0.5 * c),
            GraphKind::Stefan => (c < 1.0).then(|| -c / (2.0 * (1.0 - c))),
            GraphKind::Custom(_) => None,
        }
    }
}

fn bisect_decreasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    if f(lo) < 0.0 || f(hi) > 0.0 {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// The graph together with the coefficients of the free energy.
#[derive(Debug, Clone)]
pub struct PotentialSpec {
    pub graph: MonotoneGraph,
    pub c: f64,
    pub delta: f64,
}

impl PotentialSpec {
    pub fn new(graph: MonotoneGraph, c: f64, delta: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::invalid(format!("c must be > 0, got {c}")));
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::invalid(format!("delta must be >= 0, got {delta}")));
        }
        Ok(Self { graph, c, delta })
    }
}

/// Summary of a potential for reports.
#[derive(Debug, Clone, Serialize)]
pub struct PotentialSummary {
    pub graph: String,
    pub c: f64,
    pub delta: f64,
    pub gamma_minus: f64,
    pub gamma_plus: f64,
}

impl From<&PotentialSpec> for PotentialSummary {
    fn from(s: &PotentialSpec) -> Self {
        Self {
            graph: s.graph.name(),
            c: s.c,
            delta: s.delta,
            gamma_minus: s.graph.gamma_minus(),
            gamma_plus: s.graph.gamma_plus(),
        }
    }
}

/// `sum_x nu_x (j*(u_x) - c u_x^2 / 2)`, `+inf` when `u` leaves the domain.
pub fn potential_energy(spec: &PotentialSpec, u: &Field, nu: &Measure) -> f64 {
    let mut total = 0.0;
    for (w, &r) in nu.weights().iter().zip(u.iter()) {
        let j = spec.graph.j_star(r);
        if !j.is_finite() {
            return f64::INFINITY;
        }
        total += w * (j - 0.5 * spec.c * r * r);
    }
    total
}
