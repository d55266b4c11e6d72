//! Run configuration: JSON on disk, resolved against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rwch::cahn_hilliard::{CHProblem, ChOptions, Scheme};
use rwch::io;
use rwch::walk::{Grid, WalkTolerances};
use rwch::{Field, MonotoneGraph, NodeSpace, PotentialSpec, RandomWalk};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Walk driving the mass flux.
    pub walk: WalkSource,
    /// Walk of the interface term; the first walk when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walk2: Option<WalkSource>,
    pub potential: Potential,
    pub c: f64,
    pub delta: f64,
    pub u0: InitialState,
    #[serde(default)]
    pub scheme: Scheme,
    pub tau: f64,
    pub t_end: f64,
    #[serde(default)]
    pub solver: ChOptions,
    #[serde(default)]
    pub walk_tolerances: WalkTolerances,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSettings {
    /// Trailing steps inspected by the steady-state detector.
    pub steady_window: usize,
    /// Rate threshold; `1e-8 (1 + ||u0||_2)` when absent.
    pub steady_tol: Option<f64>,
    pub equilibrium_tol: f64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            steady_window: rwch::analysis::STEADY_WINDOW,
            steady_tol: None,
            equilibrium_tol: rwch::analysis::EQUILIBRIUM_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WalkSource {
    /// `x y w` lines; nodes are named by their first appearance.
    EdgeList {
        path: PathBuf,
        #[serde(default)]
        allow_loops: bool,
    },
    /// Row-stochastic matrix, optionally with its invariant measure as `node value` lines.
    Kernel {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        measure: Option<PathBuf>,
    },
    Grid {
        dims: Vec<usize>,
        h: f64,
        profile: Profile,
        #[serde(default)]
        include_self: bool,
    },
    PointCloud {
        path: PathBuf,
        profile: Profile,
    },
    Path {
        n: usize,
    },
    Cycle {
        n: usize,
    },
    Complete {
        n: usize,
    },
}

/// Radial weight `J(r)`, zero beyond `radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Indicator { radius: f64 },
    Gaussian { sigma: f64, radius: f64 },
}

impl Profile {
    fn radius(&self) -> f64 {
        match *self {
            Profile::Indicator { radius } | Profile::Gaussian { radius, .. } => radius,
        }
    }

    fn eval(&self, r: f64) -> f64 {
        match *self {
            _ if r > self.radius() => 0.0,
            Profile::Indicator { .. } => 1.0,
            Profile::Gaussian { sigma, .. } => (-0.5 * (r / sigma).powi(2)).exp(),
        }
    }

    fn check(&self) -> Result<()> {
        let ok = match *self {
            Profile::Indicator { radius } => radius > 0.0,
            Profile::Gaussian { sigma, radius } => sigma > 0.0 && radius > 0.0,
        };
        ensure!(ok, "profile parameters must be positive: {self:?}");
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    PowerLaw { p: f64 },
    Logarithmic,
    Obstacle,
    Stefan,
    HeleShaw,
}

impl Potential {
    pub fn graph(&self) -> Result<MonotoneGraph> {
        Ok(match *self {
            Potential::PowerLaw { p } => MonotoneGraph::power_law(p)?,
            Potential::Logarithmic => MonotoneGraph::logarithmic(),
            Potential::Obstacle => MonotoneGraph::obstacle(),
            Potential::Stefan => MonotoneGraph::stefan(),
            Potential::HeleShaw => MonotoneGraph::hele_shaw(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    /// `node value` lines.
    File {
        path: PathBuf,
    },
    /// `high` on the first `fraction` of the nodes, `low` on the rest.
    TwoPhaseSplit {
        #[serde(default = "half")]
        fraction: f64,
        #[serde(default = "one")]
        high: f64,
        #[serde(default = "minus_one")]
        low: f64,
    },
    /// Independent uniform values in `[a, b)`.
    RandomUniform {
        a: f64,
        b: f64,
        seed: u64,
    },
    Constant {
        value: f64,
    },
}

fn half() -> f64 {
    0.5
}
fn one() -> f64 {
    1.0
}
fn minus_one() -> f64 {
    -1.0
}

/// Named presets usable as `--preset` values.
pub const PRESETS: [&str; 2] = ["two-phase-split", "random-uniform"];

impl RunConfig {
    /// Reads a config file and makes its relative paths absolute.
    pub fn load(path: &Path, overrides: &[(String, Value)]) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut value: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        for (key, v) in overrides {
            set_key(&mut value, key, v.clone())?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value)
            .with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.check()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for w in [Some(&mut self.walk), self.walk2.as_mut()]
            .into_iter()
            .flatten()
        {
            match w {
                WalkSource::EdgeList { path, .. } | WalkSource::PointCloud { path, .. } => {
                    fix(path)
                }
                WalkSource::Kernel { path, measure } => {
                    fix(path);
                    if let Some(m) = measure {
                        fix(m);
                    }
                }
                _ => {}
            }
        }
        if let InitialState::File { path } = &mut self.u0 {
            fix(path);
        }
        fix(&mut self.output);
    }

    /// Range and existence checks that need no numerical work.
    pub fn check(&self) -> Result<()> {
        ensure!(
            self.tau.is_finite() && self.tau > 0.0,
            "tau must be > 0, got {}",
            self.tau
        );
        ensure!(
            self.t_end.is_finite() && self.t_end > 0.0,
            "t_end must be > 0, got {}",
            self.t_end
        );
        ensure!(
            self.c.is_finite() && self.c > 0.0,
            "c must be > 0, got {}",
            self.c
        );
        ensure!(
            self.delta.is_finite() && self.delta >= 0.0,
            "delta must be >= 0, got {}",
            self.delta
        );
        ensure!(
            self.solver.snapshot_stride >= 1,
            "snapshot_stride must be >= 1"
        );
        ensure!(
            self.analysis.steady_window >= 1,
            "steady_window must be >= 1"
        );
        for w in [Some(&self.walk), self.walk2.as_ref()]
            .into_iter()
            .flatten()
        {
            for p in w.files() {
                ensure!(p.is_file(), "walk file {} does not exist", p.display());
            }
            match w {
                WalkSource::Grid { profile, h, .. } => {
                    profile.check()?;
                    ensure!(*h > 0.0, "grid spacing must be > 0");
                }
                WalkSource::PointCloud { profile, .. } => profile.check()?,
                _ => {}
            }
        }
        match &self.u0 {
            InitialState::File { path } => {
                ensure!(
                    path.is_file(),
                    "initial state file {} does not exist",
                    path.display()
                )
            }
            InitialState::TwoPhaseSplit { fraction, .. } => {
                ensure!(
                    (0.0..=1.0).contains(fraction),
                    "fraction must lie in [0, 1]"
                )
            }
            InitialState::RandomUniform { a, b, .. } => {
                ensure!(a < b, "random_uniform needs a < b")
            }
            InitialState::Constant { .. } => {}
        }
        Ok(())
    }
}

impl WalkSource {
    fn files(&self) -> Vec<&Path> {
        match self {
            WalkSource::EdgeList { path, .. } | WalkSource::PointCloud { path, .. } => vec![path],
            WalkSource::Kernel { path, measure } => {
                let mut v = vec![path.as_path()];
                v.extend(measure.as_deref());
                v
            }
            _ => Vec::new(),
        }
    }

    pub fn build(&self, tol: WalkTolerances) -> Result<RandomWalk> {
        let rw = match self {
            WalkSource::EdgeList { path, allow_loops } => {
                let e = io::parse_edge_list(&read(path)?)
                    .with_context(|| path.display().to_string())?;
                let space = NodeSpace::new(e.labels.len())?.with_labels(e.labels)?;
                RandomWalk::from_weighted_graph_in(space, &e.edges, *allow_loops)?
            }
            WalkSource::Kernel { path, measure } => {
                let k =
                    io::parse_matrix(&read(path)?).with_context(|| path.display().to_string())?;
                let pi = match measure {
                    Some(m) => Some(
                        io::parse_measure(&read(m)?, k.n(), None)
                            .with_context(|| m.display().to_string())?,
                    ),
                    None => None,
                };
                RandomWalk::from_markov_kernel(k, pi)?
            }
            WalkSource::Grid {
                dims,
                h,
                profile,
                include_self,
            } => {
                let grid = Grid {
                    dims: dims.clone(),
                    h: *h,
                };
                RandomWalk::from_grid_kernel(
                    &grid,
                    &|r| profile.eval(r),
                    profile.radius(),
                    *include_self,
                )?
            }
            WalkSource::PointCloud { path, profile } => {
                let pts = io::parse_point_cloud(&read(path)?)
                    .with_context(|| path.display().to_string())?;
                RandomWalk::from_point_cloud(&pts, &|r| profile.eval(r))?
            }
            WalkSource::Path { n } => RandomWalk::path_graph(*n)?,
            WalkSource::Cycle { n } => RandomWalk::cycle_graph(*n)?,
            WalkSource::Complete { n } => RandomWalk::complete_graph(*n)?,
        };
        Ok(rw.with_tolerances(tol)?)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

impl InitialState {
    pub fn build(&self, n: usize, labels: Option<&[String]>) -> Result<Field> {
        Ok(match self {
            InitialState::File { path } => io::parse_field(&read(path)?, n, labels)
                .with_context(|| path.display().to_string())?,
            InitialState::TwoPhaseSplit {
                fraction,
                high,
                low,
            } => {
                let k = (fraction * n as f64).round() as usize;
                Field::from_fn(n, |i| if i < k { *high } else { *low })
            }
            InitialState::RandomUniform { a, b, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Field::from_fn(n, |_| rng.gen_range(*a..*b))
            }
            InitialState::Constant { value } => Field::constant(n, *value),
        })
    }

    /// Preset by name, as used on the command line.
    pub fn preset(name: &str, seed: Option<u64>) -> Result<Self> {
        match name {
            "two-phase-split" => Ok(InitialState::TwoPhaseSplit {
                fraction: 0.5,
                high: 1.0,
                low: -1.0,
            }),
            "random-uniform" => match seed {
                Some(seed) => Ok(InitialState::RandomUniform {
                    a: -0.5,
                    b: 0.5,
                    seed,
                }),
                None => bail!("the random-uniform preset needs --seed"),
            },
            other => bail!("unknown preset {other:?}; known: {}", PRESETS.join(", ")),
        }
    }
}

/// Everything built from a config.
pub struct Instance {
    pub m1: RandomWalk,
    pub m2: RandomWalk,
    pub u0: Field,
    pub graph: MonotoneGraph,
}

impl Instance {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        let m1 = cfg.walk.build(cfg.walk_tolerances).context("first walk")?;
        let m2 = match &cfg.walk2 {
            Some(w) => w.build(cfg.walk_tolerances).context("second walk")?,
            None => m1.clone(),
        };
        ensure!(
            m1.n() == m2.n(),
            "the walks live on different node sets ({} vs {} nodes)",
            m1.n(),
            m2.n()
        );
        let u0 = cfg
            .u0
            .build(m1.n(), m1.space().labels())
            .context("initial state")?;
        Ok(Self {
            m1,
            m2,
            u0,
            graph: cfg.potential.graph()?,
        })
    }

    pub fn problem(&self, cfg: &RunConfig) -> Result<CHProblem> {
        let spec = PotentialSpec::new(self.graph.clone(), cfg.c, cfg.delta)?;
        Ok(CHProblem::new(
            self.m1.clone(),
            self.m2.clone(),
            spec,
            self.u0.clone(),
            cfg.scheme,
            cfg.tau,
            cfg.t_end,
            cfg.solver,
        )?)
    }
}

/// Sets `a.b.c` in a JSON object, creating intermediate objects.
pub fn set_key(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        ensure!(!part.is_empty(), "empty segment in key {key:?}");
        let Value::Object(map) = cur else {
            bail!(
                "cannot set {key:?}: {:?} is not an object",
                parts[..i].join(".")
            );
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        cur = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

/// Parses `key=value`; the value is read as JSON, falling back to a plain string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let Some((k, v)) = s.split_once('=') else {
        bail!("expected key=value, got {s:?}");
    };
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}
