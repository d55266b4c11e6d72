//! One pass/fail line per acceptance criterion. Tolerances are pinned below.

mod common;

use std::time::{Duration, Instant};

use common::{random_field, random_graph, random_graph_with_loops, random_mean_zero, rng};
use rand::Rng;
use rwch::analysis::{check_equilibrium, detect_steady_state, pure_phase_criterion};
use rwch::cahn_hilliard::{solve, CHProblem, ChOptions, Scheme};
use rwch::operators::{self, HMinusOneContext};
use rwch::pme::{pme_mild_solve, Forcing, MildOptions};
use rwch::{Field, MonotoneGraph, NodeSet, PotentialSpec, RandomWalk};

const IBP_REL: f64 = 1e-11;
const COMPOSITION_ABS: f64 = 1e-14;
const OPERATOR_BUDGET: Duration = Duration::from_secs(5);
const GAP_K2: f64 = 1e-12;
const GAP_K3: f64 = 1e-10;
const SANDWICH_REL: f64 = 1e-10;
const HEAT_K2: f64 = 2e-3;
const CONTRACTION: f64 = 1e-10;
const PME_BUDGET: Duration = Duration::from_secs(30);
const MASS_DRIFT: f64 = 1e-10;
const ENERGY_RISE: f64 = 1e-9;
const ENVELOPE_REL: f64 = 1e-12;
const FIXED_POINT: f64 = 1e-9;
const MEAN_DISTANCE: f64 = 1e-5;
const EQUILIBRIUM: f64 = 1e-8;
const ASYMPTOTICS_BUDGET: Duration = Duration::from_secs(120);

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn dense(rw: &RandomWalk) -> Vec<Vec<f64>> {
    let n = rw.n();
    let mut p = vec![vec![0.0; n]; n];
    for (i, j, v) in rw.kernel().triplets() {
        p[i][j] += v;
    }
    p
}

#[allow(clippy::too_many_arguments)]
fn ch(
    m: &RandomWalk,
    graph: MonotoneGraph,
    c: f64,
    delta: f64,
    u0: Field,
    scheme: Scheme,
    tau: f64,
    t_end: f64,
) -> CHProblem {
    let spec = PotentialSpec::new(graph, c, delta).unwrap();
    CHProblem::new(
        m.clone(),
        m.clone(),
        spec,
        u0,
        scheme,
        tau,
        t_end,
        ChOptions::default(),
    )
    .unwrap()
}

/// Integration by parts and the composition identity, both against dense sums.
fn operator_identities() -> Verdict {
    let start = Instant::now();
    let mut r = rng(101);
    let (mut worst_ibp, mut worst_comp) = (0.0_f64, 0.0_f64);
    for k in 0..50 {
        let n = r.gen_range(2..=50);
        let a = if k % 2 == 0 {
            random_graph(&mut r, n, 0.2)
        } else {
            random_graph_with_loops(&mut r, n, 0.2)
        };
        let b = random_graph(&mut r, n, 0.2);
        let p = dense(&a);
        let nu = a.nu().weights();
        for _ in 0..100 {
            let f = random_field(&mut r, n, -1.0, 1.0);
            let g = random_field(&mut r, n, -1.0, 1.0);
            let lap = operators::laplacian(&a, &g).unwrap();
            let lhs: f64 = (0..n).map(|x| nu[x] * f[x] * lap[x]).sum();
            let (mut rhs, mut scale) = (0.0, 0.0);
            for x in 0..n {
                for y in 0..n {
                    let t = (f[y] - f[x]) * (g[y] - g[x]) * p[x][y] * nu[x];
                    rhs -= 0.5 * t;
                    scale += 0.5 * t.abs();
                }
            }
            worst_ibp = worst_ibp.max((lhs - rhs).abs() / scale.max(f64::MIN_POSITIVE));
        }
        let q = dense(&b);
        let lhs = a
            .kernel()
            .minus_identity()
            .matmul(&b.kernel().minus_identity())
            .unwrap()
            .to_dense();
        for x in 0..n {
            for y in 0..n {
                let pq: f64 = (0..n).map(|z| p[x][z] * q[z][y]).sum();
                let id = if x == y { 1.0 } else { 0.0 };
                worst_comp = worst_comp.max((lhs[(x, y)] - (pq - p[x][y] - q[x][y] + id)).abs());
            }
        }
    }
    let took = start.elapsed();
    let detail = format!("ibp rel {worst_ibp:.1e}, composition abs {worst_comp:.1e}, {took:.2?}");
    ensure(
        worst_ibp <= IBP_REL && worst_comp <= COMPOSITION_ABS && took < OPERATOR_BUDGET,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn spectral_facts() -> Verdict {
    let k2 = operators::spectral_gap(&RandomWalk::complete_graph(2).unwrap()).unwrap();
    let k3 = operators::spectral_gap(&RandomWalk::complete_graph(3).unwrap()).unwrap();
    ensure((k2 - 2.0).abs() <= GAP_K2, || format!("gap(K2) = {k2}"))?;
    ensure((k3 - 1.5).abs() <= GAP_K3, || format!("gap(K3) = {k3}"))?;
    let mut r = rng(102);
    let (mut max_gap, mut worst) = (0.0_f64, f64::INFINITY);
    for k in 0..30 {
        let n = r.gen_range(2..=40);
        let rw = if k % 3 == 0 {
            random_graph_with_loops(&mut r, n, 0.3)
        } else {
            random_graph(&mut r, n, 0.3)
        };
        let ctx = HMinusOneContext::new(&rw).unwrap();
        let gap = ctx.gap();
        max_gap = max_gap.max(gap);
        let lambda = gap / 2.0;
        for _ in 0..100 {
            let v = random_mean_zero(&mut r, &rw);
            let l2 = rw.nu().norm_l2(v.as_slice());
            let h = ctx.norm(&v).unwrap();
            // Slack of both inequalities, relative to the larger side.
            let upper = (2.0 / lambda).sqrt() * h;
            let lower = l2 / (2.0 * lambda).sqrt();
            worst = worst.min((upper - l2) / upper).min((lower - h) / lower);
        }
    }
    let detail = format!(
        "gap(K2) = {k2}, gap(K3) = {k3}, max random gap {max_gap:.4}, sandwich slack {worst:.1e}"
    );
    ensure(max_gap <= 2.0 + GAP_K2 && worst >= -SANDWICH_REL, || {
        detail.clone()
    })?;
    Ok(detail)
}

fn pme_engine() -> Verdict {
    let start = Instant::now();
    let k2 = RandomWalk::complete_graph(2).unwrap();
    let heat = MonotoneGraph::power_law(1.0).unwrap();
    let opts = MildOptions::default();
    let traj = pme_mild_solve(
        &k2,
        &heat,
        &Field::new(vec![1.0, 0.0]),
        &Forcing::None,
        1e-3,
        1.0,
        &opts,
    )
    .map_err(|e| e.to_string())?;
    let u = traj.final_state().unwrap();
    let e = (-2.0_f64).exp();
    let heat_err = (u[0] - 0.5 - 0.5 * e)
        .abs()
        .max((u[1] - 0.5 + 0.5 * e).abs());
    ensure(heat_err <= HEAT_K2, || {
        format!("heat K2 error {heat_err:.2e}")
    })?;

    let graphs = [
        MonotoneGraph::power_law(3.0).unwrap(),
        MonotoneGraph::logarithmic(),
        MonotoneGraph::obstacle(),
        MonotoneGraph::stefan(),
        MonotoneGraph::power_law(0.5).unwrap(),
    ];
    let mut r = rng(103);
    let (mut worst_contraction, mut worst_order, mut worst_domain) =
        (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut pairs = 0;
    while pairs < 20 {
        let g = &graphs[pairs % graphs.len()];
        let n = r.gen_range(3..=20);
        let rw = random_graph(&mut r, n, 0.3);
        let (lo, hi) = (g.gamma_minus().max(-2.0), g.gamma_plus().min(2.0));
        let a = Field::from_fn(n, |_| r.gen_range(lo..hi) * 0.9);
        let b = Field::from_fn(n, |i| (a[i] + r.gen_range(0.0..0.5)).min(0.95 * hi));
        let tau = r.gen_range(0.02..0.3);
        let run = |u0: &Field| pme_mild_solve(&rw, g, u0, &Forcing::None, tau, 1.0, &opts);
        let (Ok(ta), Ok(tb)) = (run(&a), run(&b)) else {
            continue;
        };
        pairs += 1;
        for (sa, sb) in ta.snapshots.windows(2).zip(tb.snapshots.windows(2)) {
            let before = rw.nu().norm_l1((&sa[0].u - &sb[0].u).as_slice());
            let after = rw.nu().norm_l1((&sa[1].u - &sb[1].u).as_slice());
            worst_contraction = worst_contraction.max(after - before);
            worst_order = worst_order.max((&sa[1].u - &sb[1].u).max());
        }
        for s in ta.snapshots.iter().chain(&tb.snapshots) {
            worst_domain = worst_domain
                .max(g.gamma_minus() - s.u.min())
                .max(s.u.max() - g.gamma_plus());
        }
    }
    let took = start.elapsed();
    let detail = format!(
        "heat K2 error {heat_err:.2e}, L1 growth {worst_contraction:.1e}, order defect {worst_order:.1e}, domain defect {worst_domain:.1e}, {took:.2?}"
    );
    ensure(
        worst_contraction <= CONTRACTION
            && worst_order <= CONTRACTION
            && worst_domain <= 0.0
            && took < PME_BUDGET,
        || detail.clone(),
    )?;
    Ok(detail)
}

/// `delta H_2(u) + sum nu (j*(u) - c u^2 / 2)` from the dense kernel.
fn energy_oracle(
    rw: &RandomWalk,
    p: &[Vec<f64>],
    graph: &MonotoneGraph,
    c: f64,
    delta: f64,
    u: &Field,
) -> f64 {
    let nu = rw.nu().weights();
    let n = rw.n();
    let mut h = 0.0;
    for x in 0..n {
        for y in 0..n {
            h += 0.25 * nu[x] * p[x][y] * (u[y] - u[x]).powi(2);
        }
    }
    delta * h
        + (0..n)
            .map(|x| nu[x] * (graph.j_star(u[x]) - 0.5 * c * u[x] * u[x]))
            .sum::<f64>()
}

fn conservation_and_dissipation() -> Verdict {
    let mut r = rng(104);
    let mut worst = (0.0_f64, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut total_steps = 0;
    let cases = [
        (MonotoneGraph::logarithmic(), 1.5, 1.0, 0.01, 100.0),
        (MonotoneGraph::obstacle(), 2.0, 0.5, 0.01, 100.0),
        (MonotoneGraph::power_law(3.0).unwrap(), 0.8, 1.0, 0.005, 1.0),
    ];
    for (graph, c, delta, tau, t_end) in cases {
        let n = 16;
        let rw = random_graph(&mut r, n, 0.25);
        let p = dense(&rw);
        let u0 = random_field(&mut r, n, -0.8, 0.8);
        let prob = ch(
            &rw,
            graph.clone(),
            c,
            delta,
            u0.clone(),
            Scheme::ImexSplit,
            tau,
            t_end,
        );
        let traj = solve(&prob).map_err(|e| format!("{}: {e}", graph.name()))?;
        total_steps += traj.steps();
        let nu = rw.nu();
        let m0 = nu.integrate(u0.as_slice());
        let big_c = 4.0 * c.max(1.0);
        let mut prev = energy_oracle(&rw, &p, &graph, c, delta, &u0);
        for s in &traj.snapshots {
            worst.0 = worst
                .0
                .max((nu.integrate(s.u.as_slice()) - m0).abs() / nu.total());
            let e = energy_oracle(&rw, &p, &graph, c, delta, &s.u);
            worst.1 = worst.1.max(e - prev);
            prev = e;
            for q in [2.0, 4.0, f64::INFINITY] {
                let bound = nu.norm_lp(u0.as_slice(), q) * (big_c * s.t).exp();
                let norm = nu.norm_lp(s.u.as_slice(), q);
                if bound.is_finite() {
                    worst.2 = worst.2.max((norm - bound) / bound);
                }
            }
        }
    }
    let detail = format!(
        "{total_steps} steps, mass drift {:.1e} nu(X), energy rise {:.1e}, envelope excess {:.1e}",
        worst.0, worst.1, worst.2
    );
    ensure(
        total_steps >= 20_000
            && worst.0 <= MASS_DRIFT
            && worst.1 <= ENERGY_RISE
            && worst.2 <= ENVELOPE_REL,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn equilibria() -> Verdict {
    let mut r = rng(105);
    let (mut fixed, mut worst_move, mut worst_two_delta) = (0, 0.0_f64, f64::INFINITY);
    for k in 0..8 {
        let n = r.gen_range(3..=10);
        let rw = if k % 2 == 0 {
            random_graph(&mut r, n, 0.3)
        } else {
            random_graph_with_loops(&mut r, n, 0.3)
        };
        let delta = r.gen_range(0.3..1.5);
        let c = delta * r.gen_range(1.0..2.5);
        let base = ch(
            &rw,
            MonotoneGraph::obstacle(),
            c,
            delta,
            Field::zeros(n),
            Scheme::ImexSplit,
            0.1,
            1.0,
        );
        let at_two = ch(
            &rw,
            MonotoneGraph::obstacle(),
            2.0 * delta,
            delta,
            Field::zeros(n),
            Scheme::ImexSplit,
            0.1,
            1.0,
        );
        for bits in 1..(1u64 << n) - 1 {
            let d = NodeSet::from_bits(n, bits);
            worst_two_delta = worst_two_delta.min(pure_phase_criterion(&at_two, &d).margin);
            if pure_phase_criterion(&base, &d).margin < 0.0 {
                continue;
            }
            let u = d.two_phase(1.0, -1.0);
            let rep = check_equilibrium(&base, &u, EQUILIBRIUM);
            ensure(rep.is_equilibrium, || {
                format!("margin >= 0 but residual {:.2e}", rep.residual)
            })?;
            // Only every third subset of the big graphs is integrated, to keep the run short.
            if n > 8 && bits % 3 != 0 {
                continue;
            }
            let traj = solve(&base.with_initial(u.clone()).unwrap()).map_err(|e| e.to_string())?;
            worst_move = worst_move.max(traj.final_state().unwrap().max_abs_diff(&u));
            fixed += 1;
        }
    }
    let detail = format!("{fixed} equilibria integrated to T = 1, max drift {worst_move:.1e}, min margin at c = 2 delta {worst_two_delta:.1e}");
    ensure(
        fixed > 50 && worst_move <= FIXED_POINT && worst_two_delta >= 0.0,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn asymptotics() -> Verdict {
    let start = Instant::now();
    let mut r = rng(106);
    let (mut worst_distance, mut steady_runs, mut worst_eq) = (0.0_f64, 0, 0.0_f64);
    for k in 0..20 {
        let n = r.gen_range(3..=12);
        let rw = random_graph(&mut r, n, 0.5);
        let gap = operators::spectral_gap(&rw).unwrap();
        let delta = r.gen_range(0.5..1.5);
        let c = delta * gap * r.gen_range(0.2..0.8);
        let graph = if k % 2 == 0 {
            MonotoneGraph::power_law(3.0).unwrap()
        } else {
            MonotoneGraph::logarithmic()
        };
        let u0 = random_field(&mut r, n, -0.6, 0.6);
        let t_end = 40.0 / (delta * gap - c);
        let tau = t_end / 400.0;
        let prob = ch(&rw, graph, c, delta, u0, Scheme::ImexSplit, tau, t_end);
        let traj = solve(&prob).map_err(|e| e.to_string())?;
        let rep = detect_steady_state(&prob, &traj, 50, 1e-8);
        ensure(rep.predicts_mean_convergence, || {
            "prediction flag off".into()
        })?;
        worst_distance = worst_distance.max(rep.distance_to_mean);
        if rep.steady {
            steady_runs += 1;
            worst_eq = worst_eq.max(rep.equilibrium.map_or(f64::INFINITY, |e| e.residual));
        }
    }
    let took = start.elapsed();
    let detail = format!(
        "max ||u(T) - mean|| {worst_distance:.1e}, {steady_runs}/20 steady with residual <= {worst_eq:.1e}, {took:.2?}"
    );
    ensure(
        worst_distance <= MEAN_DISTANCE && worst_eq <= EQUILIBRIUM && took < ASYMPTOTICS_BUDGET,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn scheme_cross_validation() -> Verdict {
    let mut r = rng(107);
    let graphs = [
        MonotoneGraph::obstacle(),
        MonotoneGraph::logarithmic(),
        MonotoneGraph::power_law(3.0).unwrap(),
        MonotoneGraph::obstacle(),
        MonotoneGraph::power_law(1.5).unwrap(),
    ];
    let mut lines = Vec::new();
    for graph in graphs {
        let n = r.gen_range(5..=10);
        let rw = random_graph(&mut r, n, 0.4);
        let u0 = random_field(&mut r, n, -0.6, 0.6);
        let base = ch(
            &rw,
            graph.clone(),
            1.0,
            0.5,
            u0,
            Scheme::ImexSplit,
            0.25,
            1.0,
        );
        let gaps: Vec<f64> = (2..=8)
            .map(|k| {
                let tau = 1.0 / f64::from(1 << k);
                let a = solve(&base.with_schedule(Scheme::ImexSplit, tau, 1.0).unwrap())
                    .map_err(|e| e.to_string())?;
                let b = solve(&base.with_schedule(Scheme::Picard, tau, 1.0).unwrap())
                    .map_err(|e| e.to_string())?;
                Ok(rw
                    .nu()
                    .norm_l2((a.final_state().unwrap() - b.final_state().unwrap()).as_slice()))
            })
            .collect::<Result<_, String>>()?;
        let summary = format!("{} {:.1e} -> {:.1e}", graph.name(), gaps[0], gaps[6]);
        ensure(gaps.windows(2).all(|w| w[1] < w[0]), || {
            format!("{}: {gaps:?}", graph.name())
        })?;
        lines.push(summary);
    }
    Ok(lines.join("; "))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 7] = [
        ("operator identities", operator_identities),
        ("spectral facts", spectral_facts),
        ("porous-medium engine", pme_engine),
        ("conservation and dissipation", conservation_and_dissipation),
        ("pure-phase equilibria", equilibria),
        ("mean convergence", asymptotics),
        ("scheme cross-validation", scheme_cross_validation),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS criterion {}: {name} ({detail})", i + 1),
            Err(detail) => {
                println!("FAIL criterion {}: {name} ({detail})", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
