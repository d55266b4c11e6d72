mod common;

use common::{assert_close, random_field, random_graph, rng};
use rand::Rng;
use rwch::analysis::pure_phase_criterion;
use rwch::cahn_hilliard::{
    chemical_potential, energy, lipschitz_bound_g, solve, step_imex, CHProblem, ChOptions, Scheme,
};
use rwch::{operators, CsrMatrix, Error, Field, MonotoneGraph, NodeSet, PotentialSpec, RandomWalk};

#[allow(clippy::too_many_arguments)]
fn problem(
    m1: &RandomWalk,
    m2: &RandomWalk,
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
        m1.clone(),
        m2.clone(),
        spec,
        u0,
        scheme,
        tau,
        t_end,
        ChOptions::default(),
    )
    .unwrap()
}

fn k2() -> RandomWalk {
    RandomWalk::complete_graph(2).unwrap()
}

fn l2(rw: &RandomWalk, f: &Field) -> f64 {
    rw.nu().norm_l2(f.as_slice())
}

#[test]
fn lipschitz_bound_on_k2() {
    let k = k2();
    let p = problem(
        &k,
        &k,
        MonotoneGraph::obstacle(),
        1.0,
        1.0,
        Field::zeros(2),
        Scheme::Picard,
        0.1,
        1.0,
    );
    let b = lipschitz_bound_g(&p);
    assert_close(b.numeric, 2.0, 1e-12);
    assert!(b.analytic >= b.numeric);
}

#[test]
fn lipschitz_bound_with_a_lazy_second_walk() {
    // With P_2 = I the flow reduces to u_t = Delta_1 v - c Delta_1 u, so G = c Delta_1.
    let k = k2();
    let id = RandomWalk::identity(2).unwrap();
    for (c, delta) in [(1.0, 1.0), (1.0, 3.0), (0.4, 0.2)] {
        let p = problem(
            &k,
            &id,
            MonotoneGraph::obstacle(),
            c,
            delta,
            Field::zeros(2),
            Scheme::Picard,
            0.1,
            1.0,
        );
        assert_close(lipschitz_bound_g(&p).numeric, 2.0 * c, 1e-12);
        let direct = k.kernel().minus_identity().scale(c);
        assert!(
            p.g_operator()
                .add_scaled(1.0, &direct, -1.0)
                .unwrap()
                .max_abs()
                <= 1e-15
        );
    }
}

#[test]
fn analytic_bound_dominates() {
    let mut r = rng(41);
    for _ in 0..40 {
        let n = r.gen_range(2..=25);
        let m1 = random_graph(&mut r, n, 0.3);
        let m2 = if r.gen_bool(0.5) {
            m1.clone()
        } else {
            random_graph(&mut r, n, 0.5)
        };
        let (c, delta) = (r.gen_range(0.05..4.0), r.gen_range(0.0..3.0));
        let p = problem(
            &m1,
            &m2,
            MonotoneGraph::power_law(3.0).unwrap(),
            c,
            delta,
            Field::zeros(n),
            Scheme::Picard,
            0.1,
            1.0,
        );
        let b = lipschitz_bound_g(&p);
        assert!(
            b.numeric <= b.analytic * (1.0 + 1e-12),
            "{} > {}",
            b.numeric,
            b.analytic
        );
    }
}

#[test]
fn product_of_laplacians_expands() {
    let mut r = rng(42);
    for _ in 0..30 {
        let n = r.gen_range(2..=30);
        let (a, b) = (random_graph(&mut r, n, 0.3), random_graph(&mut r, n, 0.3));
        let (p1, p2) = (a.kernel(), b.kernel());
        let lhs = p1.minus_identity().matmul(&p2.minus_identity()).unwrap();
        let rhs = p1
            .matmul(p2)
            .unwrap()
            .add_scaled(1.0, p1, -1.0)
            .unwrap()
            .add_scaled(1.0, p2, -1.0)
            .unwrap()
            .add_scaled(1.0, &CsrMatrix::identity(n), 1.0)
            .unwrap();
        assert!(lhs.add_scaled(1.0, &rhs, -1.0).unwrap().max_abs() <= 1e-14);
    }
}

#[test]
fn perturbed_form_matches_direct_composition() {
    // Delta_1 mu with mu = -delta Delta_2 u + v - c u equals Delta_1 v - G u.
    let mut r = rng(43);
    for _ in 0..30 {
        let n = r.gen_range(2..=20);
        let m1 = random_graph(&mut r, n, 0.3);
        let m2 = random_graph(&mut r, n, 0.4);
        let (c, delta) = (r.gen_range(0.05..3.0), r.gen_range(0.0..3.0));
        let p = problem(
            &m1,
            &m2,
            MonotoneGraph::power_law(2.0).unwrap(),
            c,
            delta,
            Field::zeros(n),
            Scheme::Picard,
            0.1,
            1.0,
        );
        let u = random_field(&mut r, n, -1.0, 1.0);
        let v = random_field(&mut r, n, -1.0, 1.0);
        let lap2u = operators::laplacian(&m2, &u).unwrap();
        let mu = Field::from_fn(n, |i| -delta * lap2u[i] + v[i] - c * u[i]);
        let direct = operators::laplacian(&m1, &mu).unwrap();
        let lap1v = operators::laplacian(&m1, &v).unwrap();
        let gu = p.g_operator().matvec(u.as_slice());
        let rewritten = Field::from_fn(n, |i| lap1v[i] - gu[i]);
        assert!(direct.max_abs_diff(&rewritten) <= 1e-13);
    }
}

#[test]
fn energy_examples() {
    let k = k2();
    let obs = MonotoneGraph::obstacle();
    for c in [0.5, 2.0, 7.0] {
        let p = problem(
            &k,
            &k,
            obs.clone(),
            c,
            1.0,
            Field::zeros(2),
            Scheme::ImexSplit,
            0.1,
            1.0,
        );
        assert_eq!(energy(&p, &Field::zeros(2)).unwrap(), 0.0);
    }
    let u = Field::new(vec![1.0, -1.0]);
    let p = problem(
        &k,
        &k,
        obs.clone(),
        2.0,
        1.0,
        Field::zeros(2),
        Scheme::ImexSplit,
        0.1,
        1.0,
    );
    assert_close(energy(&p, &u).unwrap(), 0.0, 1e-15);
    assert_eq!(
        energy(&p, &Field::new(vec![1.2, 0.0])).unwrap(),
        f64::INFINITY
    );
    // Affine in delta with slope H_{m_2}(u) = 2.
    let at = |delta: f64| {
        let p = problem(
            &k,
            &k,
            obs.clone(),
            2.0,
            delta,
            Field::zeros(2),
            Scheme::ImexSplit,
            0.1,
            1.0,
        );
        energy(&p, &u).unwrap()
    };
    assert_close(at(3.0) - at(1.0), 4.0, 1e-14);
    assert_close(at(0.0), -2.0, 1e-15);
}

#[test]
fn energy_needs_a_shared_measure() {
    let m1 = RandomWalk::path_graph(3).unwrap();
    let m2 = RandomWalk::complete_graph(3).unwrap();
    let p = problem(
        &m1,
        &m2,
        MonotoneGraph::obstacle(),
        1.0,
        1.0,
        Field::zeros(3),
        Scheme::Picard,
        0.1,
        1.0,
    );
    assert!(energy(&p, &Field::zeros(3)).is_err());
}

#[test]
fn chemical_potential_examples() {
    let k = k2();
    let obs = MonotoneGraph::obstacle();
    let p = problem(
        &k,
        &k,
        obs.clone(),
        2.0,
        1.0,
        Field::zeros(2),
        Scheme::ImexSplit,
        0.1,
        1.0,
    );
    let mu = chemical_potential(&p, &Field::new(vec![1.0, -1.0]), &Field::zeros(2)).unwrap();
    assert_eq!(mu.as_slice(), &[0.0, 0.0]);
    for s in [0.0, 0.3, 5.0] {
        let mu = chemical_potential(&p, &Field::constant(2, 1.0), &Field::constant(2, s)).unwrap();
        assert!(mu.iter().all(|&m| (m - (s - 2.0)).abs() <= 1e-15));
    }
    // A negative multiplier is not in the cone at the upper obstacle.
    assert!(chemical_potential(&p, &Field::constant(2, 1.0), &Field::constant(2, -0.5)).is_err());
    let cubic = MonotoneGraph::power_law(3.0).unwrap();
    let p = problem(
        &k,
        &k,
        cubic,
        0.7,
        1.0,
        Field::zeros(2),
        Scheme::ImexSplit,
        0.1,
        1.0,
    );
    let a = 0.6;
    let mu =
        chemical_potential(&p, &Field::constant(2, a), &Field::constant(2, a * a * a)).unwrap();
    assert!(mu
        .iter()
        .all(|&m| (m - (a * a * a - 0.7 * a)).abs() <= 1e-15));
}

#[test]
fn constant_states_are_fixed_by_a_step() {
    let rw = RandomWalk::cycle_graph(6).unwrap();
    for g in [
        MonotoneGraph::power_law(3.0).unwrap(),
        MonotoneGraph::logarithmic(),
        MonotoneGraph::obstacle(),
    ] {
        let u = Field::constant(6, 0.3);
        let p = problem(
            &rw,
            &rw,
            g,
            1.5,
            0.8,
            u.clone(),
            Scheme::ImexSplit,
            0.05,
            1.0,
        );
        let s = step_imex(&p, &u, None).unwrap();
        assert!(s.u.max_abs_diff(&u) <= 1e-12);
        let m0 = s.mu[0];
        assert!(s.mu.iter().all(|&m| (m - m0).abs() <= 1e-10));
    }
}

#[test]
fn separated_phases_stay_put() {
    let rw = RandomWalk::path_graph(6).unwrap();
    let d = NodeSet::from_indices(6, &[0, 1, 2]).unwrap();
    let u = d.two_phase(1.0, -1.0);
    for (c, delta) in [(2.0, 1.0), (3.0, 1.0), (5.0, 2.0)] {
        let p = problem(
            &rw,
            &rw,
            MonotoneGraph::obstacle(),
            c,
            delta,
            u.clone(),
            Scheme::ImexSplit,
            0.1,
            1.0,
        );
        assert!(pure_phase_criterion(&p, &d).margin >= 0.0);
        for tau in [1e-3, 0.1, 1.0] {
            let p = p.with_schedule(Scheme::ImexSplit, tau, 1.0).unwrap();
            let s = step_imex(&p, &u, None).unwrap();
            assert!(
                s.u.max_abs_diff(&u) <= 1e-10,
                "c={c} delta={delta} tau={tau}"
            );
        }
    }
}

#[test]
fn one_step_of_each_scheme_agrees() {
    let k = k2();
    let u = Field::new(vec![0.2, -0.2]);
    let tau = 1e-2;
    let base = problem(
        &k,
        &k,
        MonotoneGraph::power_law(3.0).unwrap(),
        0.5,
        1.0,
        u.clone(),
        Scheme::ImexSplit,
        tau,
        tau,
    );
    let imex = step_imex(&base, &u, None).unwrap();
    let picard = solve(&base.with_schedule(Scheme::Picard, tau, tau).unwrap()).unwrap();
    let gap = picard.final_state().unwrap().max_abs_diff(&imex.u);
    assert!(gap <= 10.0 * tau * tau, "gap {gap:e}");
}

#[test]
fn zero_initial_state_stays_zero() {
    let rw = RandomWalk::path_graph(5).unwrap();
    for g in [
        MonotoneGraph::power_law(3.0).unwrap(),
        MonotoneGraph::logarithmic(),
        MonotoneGraph::obstacle(),
        MonotoneGraph::stefan(),
    ] {
        for scheme in [Scheme::ImexSplit, Scheme::Picard] {
            let p = problem(
                &rw,
                &rw,
                g.clone(),
                0.7,
                1.0,
                Field::zeros(5),
                scheme,
                0.1,
                2.0,
            );
            let traj = solve(&p).unwrap();
            assert_eq!(traj.steps(), 20);
            for s in &traj.snapshots {
                assert!(s.u.norm_inf() <= 1e-12, "{} {scheme:?}", g.name());
            }
        }
    }
}

#[test]
fn small_c_relaxes_to_the_mean_on_k2() {
    let k = k2();
    let u0 = Field::new(vec![0.4, -0.2]);
    let p = problem(
        &k,
        &k,
        MonotoneGraph::power_law(3.0).unwrap(),
        0.1,
        1.0,
        u0,
        Scheme::ImexSplit,
        0.01,
        80.0,
    );
    let traj = solve(&p).unwrap();
    let u = traj.final_state().unwrap();
    let mean = k.nu().mean(u.as_slice());
    assert_close(mean, 0.1, 1e-12);
    assert!(l2(&k, &u.map(|x| x - mean)) <= 1e-6);
}

#[test]
fn schemes_converge_to_each_other() {
    let mut r = rng(44);
    let rw = random_graph(&mut r, 8, 0.4);
    let u0 = random_field(&mut r, 8, -0.5, 0.5);
    let base = problem(
        &rw,
        &rw,
        MonotoneGraph::power_law(3.0).unwrap(),
        1.0,
        0.5,
        u0,
        Scheme::ImexSplit,
        0.1,
        1.0,
    );
    let gaps: Vec<f64> = (2..=6)
        .map(|k| {
            let tau = 1.0 / f64::from(1 << k);
            let a = solve(&base.with_schedule(Scheme::ImexSplit, tau, 1.0).unwrap()).unwrap();
            let b = solve(&base.with_schedule(Scheme::Picard, tau, 1.0).unwrap()).unwrap();
            l2(&rw, &(a.final_state().unwrap() - b.final_state().unwrap()))
        })
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    // First order: halving tau roughly halves the gap.
    assert!(gaps[4] <= 0.1 * gaps[0], "{gaps:?}");
}

fn random_instance(
    r: &mut impl Rng,
    n: usize,
    rw: &RandomWalk,
) -> (MonotoneGraph, f64, f64, Field) {
    let g = match r.gen_range(0..4) {
        0 => MonotoneGraph::power_law(3.0).unwrap(),
        1 => MonotoneGraph::logarithmic(),
        2 => MonotoneGraph::obstacle(),
        _ => MonotoneGraph::power_law(1.5).unwrap(),
    };
    let (c, delta) = (r.gen_range(0.2..4.0), r.gen_range(0.1..2.0));
    let mut u0 = Field::from_fn(n, |_| r.gen_range(-0.9..0.9));
    let m = rw.nu().mean(u0.as_slice());
    if m.abs() > 0.8 {
        u0 = u0.map(|x| x - m);
    }
    (g, c, delta, u0)
}

#[test]
fn split_scheme_conserves_mass_and_dissipates_energy() {
    let mut r = rng(45);
    for trial in 0..20 {
        let n = r.gen_range(3..=15);
        let rw = random_graph(&mut r, n, 0.3);
        let (g, c, delta, u0) = random_instance(&mut r, n, &rw);
        let tau = [1e-3, 0.05, 1.0, 20.0][trial % 4];
        let p = problem(
            &rw,
            &rw,
            g.clone(),
            c,
            delta,
            u0,
            Scheme::ImexSplit,
            tau,
            40.0 * tau,
        );
        let traj = solve(&p).unwrap();
        let m0 = traj.diagnostics[0].mass;
        for w in traj.diagnostics.windows(2) {
            assert!(
                (w[1].mass - m0).abs() <= 1e-10 * rw.nu().total(),
                "{} mass",
                g.name()
            );
            let (e0, e1) = (w[0].energy.unwrap(), w[1].energy.unwrap());
            assert!(
                e1 <= e0 + 1e-9,
                "{} tau={tau} step {}: {e1} > {e0}",
                g.name(),
                w[1].step
            );
        }
        for s in &traj.snapshots {
            assert!(s.u.iter().all(|&x| g.in_domain(x)), "{}", g.name());
        }
    }
}

#[test]
fn lp_norms_grow_at_most_exponentially() {
    let mut r = rng(46);
    for _ in 0..10 {
        let n = r.gen_range(3..=15);
        let rw = random_graph(&mut r, n, 0.3);
        let (g, c, delta, u0) = random_instance(&mut r, n, &rw);
        let tau = 0.02;
        let p = problem(
            &rw,
            &rw,
            g,
            c,
            delta,
            u0.clone(),
            Scheme::ImexSplit,
            tau,
            2.0,
        );
        let traj = solve(&p).unwrap();
        let rate = 4.0 * c.max(1.0);
        for s in &traj.snapshots {
            let bound = |q: f64| {
                rw.nu().norm_lp(u0.as_slice(), q) * (rate * s.t).exp() * (1.0 + 10.0 * tau)
            };
            for q in [2.0, 4.0, f64::INFINITY] {
                assert!(
                    rw.nu().norm_lp(s.u.as_slice(), q) <= bound(q) + 1e-12,
                    "q={q} t={}",
                    s.t
                );
            }
        }
    }
}

#[test]
fn energy_identity_defect_shrinks_with_tau() {
    let mut r = rng(47);
    let rw = random_graph(&mut r, 8, 0.4);
    let u0 = random_field(&mut r, 8, -0.5, 0.5);
    let base = problem(
        &rw,
        &rw,
        MonotoneGraph::power_law(3.0).unwrap(),
        1.0,
        0.5,
        u0,
        Scheme::ImexSplit,
        0.1,
        0.5,
    );
    let defects: Vec<f64> = [0.1, 0.05, 0.025, 0.0125]
        .iter()
        .map(|&tau| {
            let traj = solve(&base.with_schedule(Scheme::ImexSplit, tau, 0.5).unwrap()).unwrap();
            traj.diagnostics
                .windows(2)
                .map(|w| {
                    let de = w[1].energy.unwrap() - w[0].energy.unwrap();
                    (de + tau * w[1].dissipation.unwrap()).abs()
                })
                .sum::<f64>()
        })
        .collect();
    assert!(defects.windows(2).all(|w| w[1] < 0.7 * w[0]), "{defects:?}");
}

#[test]
fn two_measures_run_under_picard() {
    let m1 = RandomWalk::path_graph(6).unwrap();
    let m2 = RandomWalk::complete_graph(6).unwrap();
    let u0 = Field::new(vec![0.5, 0.4, 0.1, -0.2, -0.3, -0.4]);
    let spec = PotentialSpec::new(MonotoneGraph::power_law(3.0).unwrap(), 0.5, 1.0).unwrap();
    let err = CHProblem::new(
        m1.clone(),
        m2.clone(),
        spec,
        u0.clone(),
        Scheme::ImexSplit,
        0.05,
        1.0,
        ChOptions::default(),
    );
    assert!(err.is_err());
    let p = problem(
        &m1,
        &m2,
        MonotoneGraph::power_law(3.0).unwrap(),
        0.5,
        1.0,
        u0,
        Scheme::Picard,
        0.05,
        1.0,
    );
    assert!(!p.embedding().shared);
    assert_close(p.embedding().big_m, 5.0, 1e-15);
    let traj = solve(&p).unwrap();
    assert!(traj.notices.iter().any(|n| n.contains("energy")));
    let m0 = traj.diagnostics[0].mass;
    for d in &traj.diagnostics {
        assert!(d.energy.is_none());
        assert!((d.mass - m0).abs() <= 1e-10 * m1.nu().total());
    }
}

#[test]
fn invalid_problems_are_rejected() {
    let rw = RandomWalk::path_graph(4).unwrap();
    let spec = PotentialSpec::new(MonotoneGraph::obstacle(), 1.0, 1.0).unwrap();
    let make = |u0: Field, tau: f64| {
        CHProblem::new(
            rw.clone(),
            rw.clone(),
            spec.clone(),
            u0,
            Scheme::ImexSplit,
            tau,
            1.0,
            ChOptions::default(),
        )
    };
    assert!(matches!(
        make(Field::new(vec![1.5, 0.0, 0.0, 0.0]), 0.1),
        Err(Error::OutOfDomain { node: 0, .. })
    ));
    assert!(make(Field::new(vec![1.0, 1.0, 1.0, 0.99]), 0.1).is_ok());
    assert!(make(Field::zeros(4), 0.0).is_err());
    assert!(make(Field::zeros(3), 0.1).is_err());
    // A pure phase is accepted and frozen.
    let p = make(Field::constant(4, -1.0), 0.1).unwrap();
    assert!(p.is_pure_phase());
    let traj = solve(&p).unwrap();
    assert_eq!(traj.final_state().unwrap(), &Field::constant(4, -1.0));
}
