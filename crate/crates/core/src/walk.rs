//! Finite random walk spaces: a node set, a row-stochastic kernel and a positive measure.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::field::{Field, Measure};
use crate::sparse::CsrMatrix;

/// Nodes of a random walk space, optionally labelled and embedded.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpace {
    n: usize,
    labels: Option<Vec<String>>,
    coordinates: Option<Vec<Vec<f64>>>,
}

impl NodeSpace {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptySet);
        }
        Ok(Self {
            n,
            labels: None,
            coordinates: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: labels.len(),
            });
        }
        let mut sorted: Vec<&String> = labels.iter().collect();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("duplicate node label {:?}", w[0])));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_coordinates(mut self, coords: Vec<Vec<f64>>) -> Result<Self> {
        if coords.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: coords.len(),
            });
        }
        self.coordinates = Some(coords);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn coordinates(&self) -> Option<&[Vec<f64>]> {
        self.coordinates.as_deref()
    }

    /// Display name of node `i`: its label if present, else the index.
    pub fn name(&self, i: usize) -> String {
        match &self.labels {
            Some(l) => l[i].clone(),
            None => i.to_string(),
        }
    }

    fn restrict(&self, keep: &[usize]) -> Self {
        Self {
            n: keep.len(),
            labels: self
                .labels
                .as_ref()
                .map(|l| keep.iter().map(|&i| l[i].clone()).collect()),
            coordinates: self
                .coordinates
                .as_ref()
                .map(|c| keep.iter().map(|&i| c[i].clone()).collect()),
        }
    }
}

/// A subset of nodes with bitset semantics.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeSet {
    members: Vec<bool>,
}

impl NodeSet {
    pub fn empty(n: usize) -> Self {
        Self {
            members: vec![false; n],
        }
    }

    pub fn full(n: usize) -> Self {
        Self {
            members: vec![true; n],
        }
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self> {
        let mut s = Self::empty(n);
        for &i in indices {
            if i >= n {
                return Err(Error::invalid(format!("node {i} outside 0..{n}")));
            }
            s.members[i] = true;
        }
        Ok(s)
    }

    pub fn from_mask(members: Vec<bool>) -> Self {
        Self { members }
    }

    /// Subset encoded by the low `n` bits of `bits`.
    pub fn from_bits(n: usize, bits: u64) -> Self {
        Self {
            members: (0..n).map(|i| bits >> i & 1 == 1).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members[i]
    }

    pub fn insert(&mut self, i: usize) {
        self.members[i] = true;
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|&b| b)
    }

    pub fn is_full(&self) -> bool {
        self.members.iter().all(|&b| b)
    }

    pub fn complement(&self) -> Self {
        Self {
            members: self.members.iter().map(|b| !b).collect(),
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.members[i]).collect()
    }

    pub fn mask(&self) -> &[bool] {
        &self.members
    }

    /// Indicator-based two-phase field: `hi` on the set, `lo` off it.
    pub fn two_phase(&self, hi: f64, lo: f64) -> Field {
        Field::from_fn(self.n(), |i| if self.members[i] { hi } else { lo })
    }
}

impl Serialize for NodeSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.indices().serialize(s)
    }
}

/// Thresholds for the structural checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct WalkTolerances {
    pub stochastic: f64,
    pub invariance: f64,
    pub reversibility: f64,
}

impl Default for WalkTolerances {
    fn default() -> Self {
        Self {
            stochastic: 1e-12,
            invariance: 1e-10,
            reversibility: 1e-10,
        }
    }
}

/// Outcome of the structural checks, with the residuals behind each verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WalkFlags {
    pub invariant: bool,
    pub reversible: bool,
    pub connected: bool,
    pub stochastic_residual: f64,
    pub invariance_residual: f64,
    pub reversibility_residual: f64,
    pub components: usize,
}

/// A finite random walk space.
#[derive(Debug, Clone)]
pub struct RandomWalk {
    space: NodeSpace,
    kernel: CsrMatrix,
    nu: Measure,
    flags: WalkFlags,
    tol: WalkTolerances,
}

/// Radial profile `eta(r)` or `J(r)` for point clouds and grid kernels.
pub type Profile<'a> = &'a dyn Fn(f64) -> f64;

/// A regular 1D or 2D lattice with spacing `h`, nodes in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dims: Vec<usize>,
    pub h: f64,
}

impl Grid {
    fn points(&self) -> Result<Vec<Vec<f64>>> {
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::invalid("grid spacing must be positive"));
        }
        match self.dims.as_slice() {
            [nx] if *nx > 0 => Ok((0..*nx).map(|i| vec![i as f64 * self.h]).collect()),
            [nx, ny] if *nx > 0 && *ny > 0 => Ok((0..*nx)
                .flat_map(|i| (0..*ny).map(move |j| (i, j)))
                .map(|(i, j)| vec![i as f64 * self.h, j as f64 * self.h])
                .collect()),
            _ => Err(Error::invalid(
                "grid must be 1D or 2D with positive extents",
            )),
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl RandomWalk {
    /// Assembles a walk from parts, rejecting kernels that are not row-stochastic.
    pub fn from_parts(space: NodeSpace, kernel: CsrMatrix, nu: Measure) -> Result<Self> {
        Self::from_parts_with(space, kernel, nu, WalkTolerances::default())
    }

    pub fn from_parts_with(
        space: NodeSpace,
        kernel: CsrMatrix,
        nu: Measure,
        tol: WalkTolerances,
    ) -> Result<Self> {
        let n = space.n();
        if kernel.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: kernel.n(),
            });
        }
        if nu.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: nu.len(),
            });
        }
        let mut worst = 0.0_f64;
        for i in 0..n {
            if let Some((j, v)) = kernel.row(i).find(|&(_, v)| v < 0.0) {
                return Err(Error::NegativeWeight {
                    x: space.name(i),
                    y: space.name(j),
                    weight: v,
                });
            }
            let sum = kernel.row_sum(i);
            if (sum - 1.0).abs() > tol.stochastic {
                return Err(Error::NotStochastic {
                    row: i,
                    sum,
                    tol: tol.stochastic,
                });
            }
            worst = worst.max((sum - 1.0).abs());
        }
        let flags = compute_flags(&kernel, &nu, &tol, worst);
        Ok(Self {
            space,
            kernel,
            nu,
            flags,
            tol,
        })
    }

    /// Re-runs the structural checks with different thresholds.
    pub fn with_tolerances(self, tol: WalkTolerances) -> Result<Self> {
        Self::from_parts_with(self.space, self.kernel, self.nu, tol)
    }

    /// Walk of a symmetric weighted graph: `P = w / d`, `nu = d`.
    ///
    /// Each undirected edge is listed once; repeated edges accumulate.
    pub fn from_weighted_graph(
        n: usize,
        edges: &[(usize, usize, f64)],
        allow_loops: bool,
    ) -> Result<Self> {
        Self::from_weighted_graph_in(NodeSpace::new(n)?, edges, allow_loops)
    }

    /// As [`from_weighted_graph`](Self::from_weighted_graph) on a prepared node space.
    pub fn from_weighted_graph_in(
        space: NodeSpace,
        edges: &[(usize, usize, f64)],
        allow_loops: bool,
    ) -> Result<Self> {
        let n = space.n();
        let mut triplets = Vec::with_capacity(2 * edges.len());
        for &(x, y, w) in edges {
            if x >= n || y >= n {
                return Err(Error::invalid(format!("edge ({x}, {y}) outside 0..{n}")));
            }
            if !w.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite weight on edge ({x}, {y})"
                )));
            }
            if w < 0.0 {
                return Err(Error::NegativeWeight {
                    x: space.name(x),
                    y: space.name(y),
                    weight: w,
                });
            }
            if x == y {
                if !allow_loops {
                    return Err(Error::invalid(format!(
                        "self-loop at node {} but loops are disabled",
                        space.name(x)
                    )));
                }
                triplets.push((x, x, w));
            } else {
                triplets.push((x, y, w));
                triplets.push((y, x, w));
            }
        }
        let w = CsrMatrix::from_triplets(n, &triplets)?;
        let degrees: Vec<f64> = (0..n).map(|i| w.row_sum(i)).collect();
        if let Some(i) = degrees.iter().position(|&d| d <= 0.0) {
            return Err(Error::IsolatedNode {
                node: space.name(i),
            });
        }
        let p: Vec<_> = w
            .triplets()
            .map(|(i, j, v)| (i, j, v / degrees[i]))
            .collect();
        let kernel = CsrMatrix::from_triplets(n, &p)?;
        Self::from_parts(space, kernel, Measure::new(degrees)?)
    }

    /// Walk of a Markov kernel. Without `pi`, the stationary measure is found by power
    /// iteration on the lazy chain and normalised to total mass 1.
    pub fn from_markov_kernel(kernel: CsrMatrix, pi: Option<Measure>) -> Result<Self> {
        let n = kernel.n();
        let space = NodeSpace::new(n)?;
        let tol = WalkTolerances::default();
        match pi {
            Some(pi) => {
                let rw = Self::from_parts(space, kernel, pi)?;
                if !rw.flags.invariant {
                    return Err(Error::NotInvariant {
                        residual: rw.flags.invariance_residual,
                        tol: tol.invariance,
                    });
                }
                Ok(rw)
            }
            None => {
                // Validate stochasticity before iterating.
                let probe =
                    Self::from_parts(space.clone(), kernel.clone(), Measure::uniform(n, 1.0)?)?;
                let pi = stationary_measure(&probe.kernel)?;
                let rw = Self::from_parts(space, kernel, pi)?;
                if !rw.flags.invariant {
                    return Err(Error::NoStationaryMeasure {
                        reason: format!(
                            "invariance residual {:e} after power iteration",
                            rw.flags.invariance_residual
                        ),
                    });
                }
                Ok(rw)
            }
        }
    }

    /// Point-cloud graph with weights `eta(|x_i - x_j|)` and no self-loops.
    pub fn from_point_cloud(points: &[Vec<f64>], eta: Profile<'_>) -> Result<Self> {
        let n = points.len();
        let e0 = eta(0.0);
        if !(e0.is_finite() && e0 > 0.0) {
            return Err(Error::invalid(format!(
                "profile must satisfy eta(0) > 0, got {e0}"
            )));
        }
        if let Some(d) = points.iter().find(|p| p.len() != points[0].len()) {
            return Err(Error::DimensionMismatch {
                expected: points[0].len(),
                found: d.len(),
            });
        }
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let w = eta(distance(&points[i], &points[j]));
                if !(w.is_finite() && w >= 0.0) {
                    return Err(Error::invalid(format!(
                        "profile returned {w} for pair ({i}, {j})"
                    )));
                }
                if w > 0.0 {
                    edges.push((i, j, w));
                }
            }
        }
        let space = NodeSpace::new(n)?.with_coordinates(points.to_vec())?;
        Self::from_weighted_graph_in(space, &edges, false)
    }

    /// Quadrature of a radial convolution kernel on a lattice.
    ///
    /// Raw weights are `J(|x - y|) h^dim` within `truncation_radius`; rows are normalised
    /// and `nu_x = h^dim * (raw row mass)`, which keeps the walk reversible.
    pub fn from_grid_kernel(
        grid: &Grid,
        kernel: Profile<'_>,
        truncation_radius: f64,
        include_self: bool,
    ) -> Result<Self> {
        let pts = grid.points()?;
        let n = pts.len();
        let cell = grid.h.powi(grid.dims.len() as i32);
        let reach = (truncation_radius / grid.h).floor() as i64;
        let index = |coord: &[i64]| -> Option<usize> {
            match (grid.dims.as_slice(), coord) {
                ([nx], [i]) if *i >= 0 && (*i as usize) < *nx => Some(*i as usize),
                ([nx, ny], [i, j])
                    if *i >= 0 && (*i as usize) < *nx && *j >= 0 && (*j as usize) < *ny =>
                {
                    Some(*i as usize * ny + *j as usize)
                }
                _ => None,
            }
        };
        let mut triplets = Vec::new();
        let mut mass = vec![0.0; n];
        for x in 0..n {
            let base: Vec<i64> = pts[x].iter().map(|c| (c / grid.h).round() as i64).collect();
            let offsets: Vec<Vec<i64>> = if base.len() == 1 {
                (-reach..=reach).map(|a| vec![a]).collect()
            } else {
                (-reach..=reach)
                    .flat_map(|a| (-reach..=reach).map(move |b| vec![a, b]))
                    .collect()
            };
            for off in offsets {
                let c: Vec<i64> = base.iter().zip(&off).map(|(b, o)| b + o).collect();
                let Some(y) = index(&c) else { continue };
                if y == x && !include_self {
                    continue;
                }
                let r = distance(&pts[x], &pts[y]);
                if r > truncation_radius {
                    continue;
                }
                let j = kernel(r);
                if !(j.is_finite() && j >= 0.0) {
                    return Err(Error::invalid(format!("kernel returned {j} at r = {r}")));
                }
                if j > 0.0 {
                    triplets.push((x, y, j * cell));
                    mass[x] += j * cell;
                }
            }
        }
        if let Some(x) = mass.iter().position(|&m| m <= 0.0) {
            return Err(Error::IsolatedNode {
                node: format!("{x} (zero kernel mass within the truncation radius)"),
            });
        }
        let p: Vec<_> = triplets
            .iter()
            .map(|&(x, y, w)| (x, y, w / mass[x]))
            .collect();
        let nu: Vec<f64> = mass.iter().map(|m| m * cell).collect();
        let space = NodeSpace::new(n)?.with_coordinates(pts)?;
        Self::from_parts(space, CsrMatrix::from_triplets(n, &p)?, Measure::new(nu)?)
    }

    /// Unit-weight path `0 - 1 - ... - (n-1)`.
    pub fn path_graph(n: usize) -> Result<Self> {
        if n == 1 {
            return Self::identity(1);
        }
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
        Self::from_weighted_graph(n, &edges, false)
    }

    /// Unit-weight cycle on `n >= 3` nodes.
    pub fn cycle_graph(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::invalid("a cycle needs at least 3 nodes"));
        }
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
        Self::from_weighted_graph(n, &edges, false)
    }

    /// Unit-weight complete graph without loops.
    pub fn complete_graph(n: usize) -> Result<Self> {
        if n == 1 {
            return Self::identity(1);
        }
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j, 1.0)))
            .collect();
        Self::from_weighted_graph(n, &edges, false)
    }

    /// The lazy walk that never moves, with uniform unit measure.
    pub fn identity(n: usize) -> Result<Self> {
        Self::from_parts(
            NodeSpace::new(n)?,
            CsrMatrix::identity(n),
            Measure::uniform(n, 1.0)?,
        )
    }

    /// Walk on `omega` where mass leaving `omega` stays put.
    pub fn restrict(&self, omega: &NodeSet) -> Result<Self> {
        self.check_set(omega)?;
        if omega.is_empty() {
            return Err(Error::EmptySet);
        }
        let keep = omega.indices();
        let mut new_index = vec![usize::MAX; self.n()];
        for (k, &i) in keep.iter().enumerate() {
            new_index[i] = k;
        }
        let mut triplets = Vec::new();
        for (k, &x) in keep.iter().enumerate() {
            let mut escaped = 0.0;
            for (y, p) in self.kernel.row(x) {
                if y != x && omega.contains(y) {
                    triplets.push((k, new_index[y], p));
                } else if y != x {
                    escaped += p;
                }
            }
            triplets.push((k, k, self.kernel.get(x, x) + escaped));
        }
        Self::from_parts_with(
            self.space.restrict(&keep),
            CsrMatrix::from_triplets(keep.len(), &triplets)?,
            self.nu.restrict(&keep)?,
            self.tol,
        )
    }

    /// Two-step walk `P1 P2` carrying the measure of `self`, which must be invariant for `other`.
    pub fn convolve(&self, other: &RandomWalk) -> Result<Self> {
        if self.n() != other.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: other.n(),
            });
        }
        let residual = invariance_residual(&other.kernel, &self.nu);
        if residual > self.tol.invariance {
            return Err(Error::NotInvariant {
                residual,
                tol: self.tol.invariance,
            });
        }
        Self::from_parts_with(
            self.space.clone(),
            self.kernel.matmul(&other.kernel)?,
            self.nu.clone(),
            self.tol,
        )
    }

    /// `sum_{x in A} nu_x m_x(B)`.
    pub fn interaction(&self, a: &NodeSet, b: &NodeSet) -> Result<f64> {
        self.check_set(a)?;
        self.check_set(b)?;
        Ok(a.indices()
            .into_iter()
            .map(|x| self.nu.weights()[x] * self.mass_of(x, b))
            .sum())
    }

    /// `H(x) = 1 - 2 m_x(E)`, evaluated as `m_x(X \ E) - m_x(E)` so that the
    /// complement gives the exact negation.
    pub fn mean_curvature(&self, e: &NodeSet) -> Result<Field> {
        self.check_set(e)?;
        Ok(Field::from_fn(self.n(), |x| {
            let (inside, outside) = self.kernel.row(x).fold((0.0, 0.0), |(i, o), (y, p)| {
                if e.contains(y) {
                    (i + p, o)
                } else {
                    (i, o + p)
                }
            });
            (outside - inside).clamp(-1.0, 1.0)
        }))
    }

    /// `m_x(B)`.
    pub fn mass_of(&self, x: usize, b: &NodeSet) -> f64 {
        self.kernel
            .row(x)
            .filter(|&(y, _)| b.contains(y))
            .map(|(_, p)| p)
            .sum()
    }

    fn check_set(&self, s: &NodeSet) -> Result<()> {
        if s.n() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: s.n(),
            });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.space.n()
    }

    pub fn space(&self) -> &NodeSpace {
        &self.space
    }

    pub fn kernel(&self) -> &CsrMatrix {
        &self.kernel
    }

    pub fn nu(&self) -> &Measure {
        &self.nu
    }

    pub fn flags(&self) -> &WalkFlags {
        &self.flags
    }

    pub fn tolerances(&self) -> &WalkTolerances {
        &self.tol
    }

    pub fn is_reversible(&self) -> bool {
        self.flags.reversible
    }

    pub fn is_connected(&self) -> bool {
        self.flags.connected
    }

    pub fn require_reversible(&self) -> Result<()> {
        if !self.flags.reversible {
            return Err(Error::NotReversible {
                residual: self.flags.reversibility_residual,
                tol: self.tol.reversibility,
            });
        }
        Ok(())
    }

    pub fn require_connected(&self) -> Result<()> {
        if !self.flags.connected {
            return Err(Error::Disconnected {
                components: self.flags.components,
            });
        }
        Ok(())
    }
}

fn invariance_residual(kernel: &CsrMatrix, nu: &Measure) -> f64 {
    let pushed = kernel.vecmat(nu.weights());
    pushed
        .iter()
        .zip(nu.weights())
        .map(|(a, b)| (a - b).abs() / b)
        .fold(0.0, f64::max)
}

fn reversibility_residual(kernel: &CsrMatrix, nu: &Measure) -> f64 {
    let w = nu.weights();
    let mut worst = 0.0_f64;
    for (x, y, p) in kernel.triplets() {
        worst = worst.max((w[x] * p - w[y] * kernel.get(y, x)).abs());
    }
    worst / nu.max()
}

fn components(kernel: &CsrMatrix) -> usize {
    let n = kernel.n();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (x, y, p) in kernel.triplets() {
        if p > 0.0 {
            let (a, b) = (find(&mut parent, x), find(&mut parent, y));
            if a != b {
                parent[a] = b;
            }
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

fn compute_flags(
    kernel: &CsrMatrix,
    nu: &Measure,
    tol: &WalkTolerances,
    stochastic_residual: f64,
) -> WalkFlags {
    let inv = invariance_residual(kernel, nu);
    let rev = reversibility_residual(kernel, nu);
    let comps = components(kernel);
    WalkFlags {
        invariant: inv <= tol.invariance,
        reversible: rev <= tol.reversibility,
        connected: comps == 1,
        stochastic_residual,
        invariance_residual: inv,
        reversibility_residual: rev,
        components: comps,
    }
}

const POWER_BUDGET: usize = 100_000;
const POWER_TOL: f64 = 1e-12;

/// Left Perron vector of the lazy chain `(I + K) / 2`, which shares the stationary
/// measures of `K` but is aperiodic.
fn stationary_measure(kernel: &CsrMatrix) -> Result<Measure> {
    let n = kernel.n();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..POWER_BUDGET {
        let pushed = kernel.vecmat(&pi);
        let mut next: Vec<f64> = pi.iter().zip(&pushed).map(|(a, b)| 0.5 * (a + b)).collect();
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let residual = pushed
            .iter()
            .zip(&pi)
            .map(|(a, b)| {
                if *b > 0.0 {
                    (a - b).abs() / b
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max);
        pi = next;
        if residual <= POWER_TOL {
            return Measure::new(pi).map_err(|_| Error::NoStationaryMeasure {
                reason: "stationary vector has zero entries".into(),
            });
        }
    }
    Err(Error::NoStationaryMeasure {
        reason: format!("power iteration did not settle within {POWER_BUDGET} iterations"),
    })
}
