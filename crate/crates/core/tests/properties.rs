mod common;

use std::collections::BTreeMap;

use hetpart_core::cost::{
    build_cost_table, estimate_comm, Capacities, CostEntry, CostTable, Device, LinkProfile,
    Precision, Profiles,
};
use hetpart_core::graph::{
    build_training_graph, cartpole_network, lunar_continuous_actor, mlp, Algorithm, ComputeGraph,
};
use hetpart_core::numerics::{
    bf16_to_f32, f16_to_f32, f32_to_bf16, f32_to_f16, is_power_of_two, LossScaler,
    LossScalerConfig, ScalerEvent,
};
use hetpart_core::partition::{
    brute_force_optimum, build_ilp, model_makespan, model_schedule, partition, simulate_schedule,
    solve_exact, sweep_batch_sizes, Assignment, RandomInstance,
};
use hetpart_core::train::dqn::RunRngs;
use hetpart_core::train::{Batch, DqnConfig, MixedEngine, Mlp, ReplayBuffer, Transition};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn zero_links() -> Vec<LinkProfile> {
    let mut links = Vec::new();
    for src in [Device::Ps, Device::Pl, Device::Aie] {
        for dst in [Device::Ps, Device::Pl, Device::Aie] {
            if src != dst {
                links.push(LinkProfile {
                    src,
                    dst,
                    bandwidth_bytes_per_s: f64::INFINITY,
                    latency_s: 0.0,
                });
            }
        }
    }
    links
}

/// Every node's predecessors are sources.
fn depth_at_most_two(g: &ComputeGraph) -> bool {
    g.nodes()
        .iter()
        .all(|n| g.predecessors(n.id).iter().all(|&p| g.predecessors(p).is_empty()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_solver_matches_enumeration(seed in any::<u64>()) {
        let inst = RandomInstance::generate(seed, 12);
        let model = build_ilp(&inst.graph, &inst.cost, &inst.capacities).unwrap();
        let sol = solve_exact(&model).unwrap();
        let (a, t) = brute_force_optimum(&inst.graph, &inst.cost, &inst.capacities).unwrap();
        prop_assert_eq!(sol.makespan_s, t);
        prop_assert_eq!(&sol.assignment, &a);
        prop_assert_eq!(model_makespan(&inst.graph, &inst.cost, &sol.assignment).unwrap(), t);
        let values = model.values(&sol.assignment, &sol.schedule);
        prop_assert!(model.violations(&values).is_empty());
        prop_assert_eq!(model.binary_count(), 2 * inst.graph.mm_count());
        prop_assert_eq!(model.continuous_count(), inst.graph.len() + 1);
    }

    #[test]
    fn lower_bound_never_exceeds_completions(seed in any::<u64>(), depth in 0usize..12) {
        let inst = RandomInstance::generate(seed, 10);
        let model = build_ilp(&inst.graph, &inst.cost, &Capacities::unbounded()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mm: Vec<_> = inst.graph.mm_nodes().map(|n| n.id).collect();
        let fixed: BTreeMap<_, _> = mm
            .iter()
            .take(depth)
            .map(|&id| (id, if rng.gen_bool(0.5) { Device::Aie } else { Device::Pl }))
            .collect();
        let bound = model.lower_bound(&fixed);
        for _ in 0..8 {
            let mut a = common::random_assignment(&inst.graph, &mut rng);
            a.0.extend(fixed.iter().map(|(&k, &v)| (k, v)));
            prop_assert!(bound <= model_makespan(&inst.graph, &inst.cost, &a).unwrap());
        }
        let opt = solve_exact(&model).unwrap().makespan_s;
        prop_assert!(model.lower_bound(&BTreeMap::new()) <= opt);
    }

    #[test]
    fn schedules_respect_edges_and_exclusivity(seed in any::<u64>()) {
        let inst = RandomInstance::generate(seed, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
        let a = common::random_assignment(&inst.graph, &mut rng);
        let links = Profiles::default().links().to_vec();
        let sim = simulate_schedule(&a, &inst.graph, &inst.cost, &links).unwrap();
        let rows: BTreeMap<_, _> = sim.rows.iter().map(|r| (r.node, r)).collect();
        for &(u, v) in inst.graph.edges() {
            let bytes = inst.graph.node(u).unwrap().bytes_out;
            let comm = estimate_comm(bytes, rows[&u].device, rows[&v].device, &links).unwrap();
            prop_assert!(rows[&v].start_s >= rows[&u].end_s + comm);
        }
        for nodes in sim.per_device.values() {
            for w in nodes.windows(2) {
                prop_assert!(rows[&w[1]].start_s >= rows[&w[0]].end_s);
            }
        }
        let literal = model_schedule(&inst.graph, &inst.cost, &a).unwrap();
        let d = |id| inst.cost.time(id, a.device(id).unwrap()).unwrap();
        for &(u, v) in inst.graph.edges() {
            let need = inst.graph.predecessors(u).iter().fold(d(u), |acc, &k| acc + d(k));
            prop_assert!(literal.start(v).unwrap() >= need);
        }
    }

    #[test]
    fn simulator_reproduces_contention_free_schedules(seed in any::<u64>()) {
        let inst = RandomInstance::generate(seed, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = common::random_assignment(&inst.graph, &mut rng);
        let oracle = common::standard_starts(&inst.graph, &inst.cost, &a);
        let sim = simulate_schedule(&a, &inst.graph, &inst.cost, &zero_links()).unwrap();
        if common::contention_free(&inst.graph, &inst.cost, &a, &oracle) {
            for r in &sim.rows {
                prop_assert_eq!(r.start_s, oracle[&r.node]);
            }
            if depth_at_most_two(&inst.graph) {
                let literal = model_schedule(&inst.graph, &inst.cost, &a).unwrap();
                for r in &sim.rows {
                    prop_assert_eq!(literal.start(r.node), Some(r.start_s));
                }
            }
        }
    }

    #[test]
    fn narrowing_error_bounds(bits in any::<u32>()) {
        let x = f32::from_bits(bits);
        prop_assume!(x.is_finite());
        let ax = x.abs();
        if (f32::MIN_POSITIVE..=f32::MAX / 2.0).contains(&ax) {
            let b = bf16_to_f32(f32_to_bf16(x));
            prop_assert!((x as f64 - b as f64).abs() <= ax as f64 * 2f64.powi(-8));
        }
        if (2f32.powi(-14)..=65504.0).contains(&ax) {
            let h = f16_to_f32(f32_to_f16(x));
            prop_assert!((x as f64 - h as f64).abs() <= ax as f64 * 2f64.powi(-11));
        }
    }

    #[test]
    fn narrowing_is_monotone(a in any::<u32>(), b in any::<u32>()) {
        let (x, y) = (f32::from_bits(a), f32::from_bits(b));
        prop_assume!(!x.is_nan() && !y.is_nan());
        let (x, y) = if x <= y { (x, y) } else { (y, x) };
        prop_assert!(bf16_to_f32(f32_to_bf16(x)) <= bf16_to_f32(f32_to_bf16(y)));
        prop_assert!(f16_to_f32(f32_to_f16(x)) <= f16_to_f32(f32_to_f16(y)));
    }

    #[test]
    fn narrowing_agrees_with_half_crate(bits in any::<u32>()) {
        let x = f32::from_bits(bits);
        prop_assume!(!x.is_nan());
        prop_assert_eq!(f32_to_bf16(x).to_bits(), half::bf16::from_f32(x).to_bits());
        prop_assert_eq!(f32_to_f16(x).to_bits(), half::f16::from_f32(x).to_bits());
    }

    #[test]
    fn scaler_stays_a_power_of_two(
        overflow in proptest::collection::vec(any::<bool>(), 0..600),
        init_exp in 0i32..24,
        interval in 1u32..20,
    ) {
        let mut sc = LossScaler::new(&LossScalerConfig {
            initial_scale: 2f32.powi(init_exp),
            growth_interval: interval,
            ..Default::default()
        }).unwrap();
        for &o in &overflow {
            let before = sc.clone();
            let ev = sc.update(o);
            prop_assert!(is_power_of_two(sc.scale) && sc.scale >= 1.0);
            if o {
                prop_assert_eq!(ev, ScalerEvent::BackedOff);
                prop_assert_eq!(sc.scale, (before.scale / 2.0).max(1.0));
                prop_assert_eq!(sc.good_steps, 0);
            } else if before.good_steps + 1 == interval {
                prop_assert_eq!(ev, ScalerEvent::Grew);
                prop_assert_eq!(sc.scale, (before.scale * 2.0).min(sc.max_scale));
            } else {
                prop_assert_eq!(sc.scale, before.scale);
                prop_assert_eq!(sc.good_steps, before.good_steps + 1);
            }
        }
    }

    #[test]
    fn cost_is_monotone_in_flops(f in 0u64..1u64 << 40, extra in 1u64..1u64 << 30) {
        let p = Profiles::default();
        let mut node = build_training_graph(&cartpole_network(), Algorithm::Dqn, 1).unwrap().nodes()[5].clone();
        for (dev, prec) in [(Device::Pl, Precision::Fp16), (Device::Aie, Precision::Bf16), (Device::Pl, Precision::Fp32)] {
            node.flops = f;
            let a = hetpart_core::cost::estimate_node_time(&node, p.device(dev).unwrap(), prec).unwrap();
            node.flops = f + extra;
            let b = hetpart_core::cost::estimate_node_time(&node, p.device(dev).unwrap(), prec).unwrap();
            prop_assert!(b >= a);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn engine_steps_keep_masters_pure(seed in any::<u64>(), steps in 1usize..6) {
        let cfg = DqnConfig { batch_size: 8, ..Default::default() };
        let net_spec = cartpole_network();
        let graph = build_training_graph(&net_spec, Algorithm::Dqn, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut assignment = Assignment::uniform(&graph, Device::Pl);
        for n in graph.nodes() {
            let d = [Device::Ps, Device::Pl, Device::Aie][rng.gen_range(0..3)];
            assignment.0.insert(n.id, d);
        }
        let mut engine = MixedEngine::new(&net_spec, &cfg, assignment).unwrap();
        let mut rngs = RunRngs::new(seed);
        let mut net = Mlp::new(&net_spec, &mut rngs.init);
        let target = net.target.bits();
        for _ in 0..steps {
            let items: Vec<Transition> = (0..8).map(|i| Transition {
                s: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                a: i % 2,
                r: 1.0,
                s_next: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                done: rng.gen_bool(0.1),
            }).collect();
            let batch = Batch::from_transitions(&items.iter().collect::<Vec<_>>());
            let before = net.master.bits();
            let res = engine.step(&mut net, &batch).unwrap();
            prop_assert!(engine.workspace().is_empty());
            prop_assert_eq!(net.target.bits(), target.clone());
            if res.skipped {
                prop_assert_eq!(net.master.bits(), before);
            }
        }
    }
}

#[test]
fn fp16_rounding_matches_nearest_enumeration() {
    // every finite FP16 value in ascending order
    let mut finite: Vec<(f64, u16)> = (0..=u16::MAX)
        .filter(|&b| b & 0x7C00 != 0x7C00 && b != 0x8000)
        .map(|b| (f16_to_f32(hetpart_core::numerics::Fp16Value::from_bits(b)) as f64, b))
        .collect();
    finite.sort_by(|a, b| a.0.total_cmp(&b.0));
    let nearest = |x: f64| -> u16 {
        if x.abs() >= 65520.0 {
            return if x > 0.0 { 0x7C00 } else { 0xFC00 };
        }
        let i = finite.partition_point(|&(v, _)| v < x);
        let hi = finite[i.min(finite.len() - 1)];
        let lo = finite[i.saturating_sub(1)];
        let (dl, dh) = (x - lo.0, hi.0 - x);
        let pick = if dl < dh {
            lo
        } else if dh < dl {
            hi
        } else if lo.1 & 1 == 0 {
            lo
        } else {
            hi
        };
        if pick.0 == 0.0 && x.is_sign_negative() { 0x8000 } else { pick.1 }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200_000 {
        let x = f32::from_bits(rng.gen::<u32>() & 0x7FFF_FFFF | if rng.gen() { 0x8000_0000 } else { 0 });
        if !x.is_finite() || x.abs() > 1e6 {
            continue;
        }
        assert_eq!(f32_to_f16(x).to_bits(), nearest(x as f64), "{x:e}");
    }
    // ties at the top of the range
    assert_eq!(nearest(65504.0 + 16.0), 0x7C00);
    assert_eq!(f32_to_f16(65504.0 + 16.0).to_bits(), 0x7C00);
    assert_eq!(f32_to_f16(65504.0 + 15.9).to_bits(), 0x7BFF);
    assert_eq!(f32_to_f16(70000.0).to_bits(), 0x7C00);
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(50, 77);
    for i in 0..50 {
        buf.push(Transition {
            s: vec![i as f32],
            a: 0,
            r: 0.0,
            s_next: vec![0.0],
            done: false,
        });
    }
    let mut counts = [0u64; 50];
    let draws = 100_000 / 10;
    for _ in 0..draws {
        for i in buf.sample_indices(10) {
            counts[i] += 1;
        }
    }
    let expected = (draws * 10) as f64 / 50.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 49 degrees of freedom, 0.999 quantile ≈ 85.35
    assert!(chi2 < 85.35, "chi-square {chi2}");
}

#[test]
fn aie_count_grows_with_batch_size_on_templates() {
    let profiles = Profiles::default();
    let sizes = [16, 32, 64, 128, 256, 512, 1024, 2048];
    let cases = [
        (cartpole_network(), Algorithm::Dqn),
        (mlp(4, &[400, 300], 2), Algorithm::Dqn),
        (lunar_continuous_actor(), Algorithm::Ddpg),
    ];
    for (net, alg) in cases {
        let report =
            sweep_batch_sizes(&net, alg, &sizes, &profiles, &Capacities::unbounded()).unwrap();
        assert!(report.is_monotone(), "{alg:?}: {:?}", report.rows);
    }
}

#[test]
fn capacity_exclusion_forces_pl() {
    let g = build_training_graph(&cartpole_network(), Algorithm::Dqn, 4096).unwrap();
    let cost = build_cost_table(&g, &Profiles::default()).unwrap();
    let unbounded = partition(&g, &cost, &Capacities::unbounded()).unwrap();
    let on_aie: Vec<_> = g
        .mm_nodes()
        .filter(|n| unbounded.assignment.device(n.id) == Some(Device::Aie))
        .map(|n| n.id)
        .collect();
    assert!(!on_aie.is_empty());
    let caps = Capacities::of(&[(Device::Pl, f64::INFINITY), (Device::Aie, 0.0)]);
    let model = build_ilp(&g, &cost, &caps).unwrap();
    for &id in &on_aie {
        assert!(model.is_excluded(id, Device::Aie));
    }
    let sol = solve_exact(&model).unwrap();
    assert_eq!(sol.assignment.count_on(Device::Aie), 0);
}

#[test]
fn gradients_match_finite_differences_on_random_nets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..10 {
        let specs = common::random_mlp(&mut rng);
        let check = common::grad_check(&specs, 4, 1e-3, 1e-2, &mut rng);
        assert!(check.max_rel_error <= 1e-4, "{specs:?}: {}", check.max_rel_error);
        assert!(check.skipped * 10 <= check.checked);
    }
}

#[test]
fn cost_table_for_fixture_is_exact() {
    let mut t = CostTable::default();
    t.insert(
        0,
        Device::Pl,
        CostEntry {
            precision: Precision::Fp16,
            t_seconds: 1.0,
            a_units: 0.0,
        },
    );
    assert_eq!(t.time(0, Device::Pl), Some(1.0));
    assert_eq!(t.time(0, Device::Aie), None);
}
