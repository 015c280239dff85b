mod common;

use common::*;
use dpse::baselines::*;
use dpse::env::{GaussianMixture2D, HoleProcess, HolePose};
use dpse::inversion::Objective;
use dpse::params::{ParamBounds, StrategyKind, StrategyParams, PROBE_POINTS};
use dpse::sim::{simulate, success_prob_oracle, TaskDataset};
use dpse::Error;
use proptest::prelude::*;
use rand::Rng;
use std::f64::consts::PI;

fn wrap_half_turn(a: f64) -> f64 {
    let mut a = a % PI;
    if a > PI / 2.0 {
        a -= PI;
    } else if a < -PI / 2.0 {
        a += PI;
    }
    a
}

#[test]
fn fixed_grid_spacing_and_bounds() {
    let sim = probe_sim();
    let x = baseline_fixed(StrategyKind::Probe, &sim.region);
    let pts = &x.as_probe().unwrap().points;
    assert_eq!(pts.len(), 16);
    let mut min = f64::INFINITY;
    for i in 0..16 {
        for j in i + 1..16 {
            min = min.min(((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt());
        }
    }
    let expect = 2.0 * (10.0 - 1.5) / 3.0;
    assert!((min - expect).abs() < 1e-12, "{min} vs {expect}");
    assert!(ParamBounds::new(StrategyKind::Probe, &sim.region).contains(&x.to_vec()));
    let s = baseline_fixed(StrategyKind::Spiral, &spiral_sim().region);
    assert!(ParamBounds::new(StrategyKind::Spiral, &spiral_sim().region).contains(&s.to_vec()));
    let sp = s.as_spiral().unwrap();
    assert_eq!(sp.center, [0.0, 0.0]);
    assert_eq!(sp.extents, [9.0, 9.0]);
    assert_eq!(sp.windings, 8.0);
}

#[test]
fn fixed_grid_success_matches_disk_union_area() {
    // spacing exceeds 2c and every disk lies inside the square, so the union is 16 whole disks
    let sim = probe_sim();
    let x = baseline_fixed(StrategyKind::Probe, &sim.region);
    let exact = 16.0 * PI * 1.5 * 1.5 / 400.0;
    let mut r = rng(5);
    let n = 100_000;
    let hits = (0..n)
        .filter(|_| {
            let h = HolePose::new(r.random_range(-10.0..10.0), r.random_range(-10.0..10.0));
            simulate(&x, h, &sim).success
        })
        .count();
    let p = hits as f64 / n as f64;
    let sd = (exact * (1.0 - exact) / n as f64).sqrt();
    assert!((p - exact).abs() < 4.0 * sd, "{p} vs {exact}");
}

#[test]
fn pca_axis_segment() {
    let region = spiral_sim().region;
    let holes: Vec<HolePose> = (0..61).map(|i| HolePose::new(-3.0 + 0.1 * i as f64, 0.0)).collect();
    let s = baseline_pca_spiral(&holes, &region).unwrap();
    let b = ParamBounds::new(StrategyKind::Spiral, &region);
    assert!(s.orientation.abs() < 1e-9);
    assert_eq!(s.extents[1], b.lo[4]);
    assert!(s.center[0].abs() < 1e-12 && s.center[1].abs() < 1e-12);
    // σ² of the uniform grid on [−3, 3] with 61 points, unbiased
    let var: f64 = (0..61).map(|i| (-3.0 + 0.1 * i as f64).powi(2)).sum::<f64>() / 60.0;
    assert!((s.extents[0] - 2.5 * var.sqrt()).abs() < 1e-9);
    assert_eq!(s.windings, (s.extents[0] / (2.0 * region.clearance)).ceil());
}

#[test]
fn pca_isotropic_cloud() {
    let region = spiral_sim().region;
    let mix = GaussianMixture2D::single([1.0, -1.0], [[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let mut r = dpse::rng::stream_rng(3, 0);
    let holes: Vec<HolePose> = (0..1000).map(|_| mix.sample(&mut r)).collect();
    let s = baseline_pca_spiral(&holes, &region).unwrap();
    assert!((s.extents[0] - s.extents[1]).abs() / s.extents[0] < 0.1, "{:?}", s.extents);
    assert!(ParamBounds::new(StrategyKind::Spiral, &region).contains(&StrategyParams::Spiral(s).to_vec()));
}

proptest! {
    #[test]
    fn pca_rotation_equivariance(phi in -3.0f64..3.0, seed in 0u64..50) {
        let region = spiral_sim().region;
        let mut r = rng(seed);
        let base: Vec<[f64; 2]> = (0..200).map(|_| [2.0 * r.random_range(-1.0..1.0), 0.5 * r.random_range(-1.0..1.0)]).collect();
        let rot = |a: f64| -> Vec<HolePose> {
            base.iter().map(|p| HolePose::new(a.cos() * p[0] - a.sin() * p[1], a.sin() * p[0] + a.cos() * p[1])).collect()
        };
        let s0 = baseline_pca_spiral(&rot(0.0), &region).unwrap();
        let s1 = baseline_pca_spiral(&rot(phi), &region).unwrap();
        let d = wrap_half_turn(s1.orientation - s0.orientation - phi);
        prop_assert!(d.abs() < 1e-6, "orientation {} -> {} for φ = {}", s0.orientation, s1.orientation, phi);
        prop_assert!((s0.extents[0] - s1.extents[0]).abs() < 1e-9);
        prop_assert!(s1.orientation.abs() <= PI / 2.0);
    }
}

#[test]
fn pca_degenerate_inputs() {
    let region = spiral_sim().region;
    assert!(matches!(baseline_pca_spiral(&[], &region), Err(Error::Degenerate(_))));
    assert!(matches!(baseline_pca_spiral(&[HolePose::new(1.0, 1.0)], &region), Err(Error::Degenerate(_))));
    let same = vec![HolePose::new(2.0, 3.0); 10];
    assert!(matches!(baseline_pca_spiral(&same, &region), Err(Error::Degenerate(_))));
}

fn gmm_cfg(seed: u64) -> GmmConfig {
    GmmConfig {
        seed,
        ..GmmConfig::default()
    }
}

#[test]
fn gmm_single_location_collapses() {
    let pts = vec![[2.5, -1.0]; 40];
    let fit = fit_gmm(&pts, &gmm_cfg(1)).unwrap();
    for m in &fit.means {
        assert!((m[0] - 2.5).abs() < 1e-2 && (m[1] + 1.0).abs() < 1e-2, "{m:?}");
    }
    assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn gmm_two_clusters_each_claim_means() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let mut pts = Vec::new();
        for c in [[-5.0, 4.0], [6.0, -3.0]] {
            for _ in 0..60 {
                pts.push([c[0] + 0.1 * r.random_range(-1.0..1.0), c[1] + 0.1 * r.random_range(-1.0..1.0)]);
            }
        }
        let fit = fit_gmm(&pts, &gmm_cfg(seed)).unwrap();
        let near = |c: [f64; 2]| fit.means.iter().filter(|m| (m[0] - c[0]).hypot(m[1] - c[1]) < 1.0).count();
        assert!(near([-5.0, 4.0]) >= 1 && near([6.0, -3.0]) >= 1, "seed {seed}: {:?}", fit.means);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn gmm_objective_is_monotone(seed in 0u64..1000, n in 16usize..120) {
        let mut r = rng(seed);
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [r.random_range(-8.0..8.0), r.random_range(-8.0..8.0)]).collect();
        let fit = fit_gmm(&pts, &gmm_cfg(seed)).unwrap();
        prop_assert!(fit.iterations <= 100);
        prop_assert_eq!(fit.objective_trace.len(), fit.iterations);
        for w in fit.objective_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
    }
}

fn probe_task(mix: GaussianMixture2D, n: usize, seed: u64) -> TaskDataset {
    let x0 = baseline_fixed(StrategyKind::Probe, &probe_sim().region);
    passive_task(&x0, mix, n, seed)
}

#[test]
fn gmm_probe_uses_successes_only() {
    let mix = GaussianMixture2D::single([0.0, 0.0], [[36.0, 0.0], [0.0, 36.0]]).unwrap();
    let task = probe_task(mix, 256, 3);
    let sim = probe_sim();
    let p = baseline_gmm_probe(&task, &sim.region, &gmm_cfg(3)).unwrap();
    assert_eq!(p.points.len(), PROBE_POINTS);
    assert!(ParamBounds::new(StrategyKind::Probe, &sim.region).contains(&StrategyParams::Probe(p.clone()).to_vec()));
    let succ = success_locations(&task);
    assert_eq!(succ.len(), task.records.iter().filter(|r| r.success).count());
    // every mean sits inside the convex hull bounding box of successful holes
    let (lo_x, hi_x) = succ.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, s| (a.0.min(s[0]), a.1.max(s[0])));
    assert!(p.points.iter().all(|m| m[0] >= lo_x - 1e-9 && m[0] <= hi_x + 1e-9));
}

#[test]
fn gmm_probe_errors() {
    let sim = probe_sim();
    let far = GaussianMixture2D::single([9.9, 9.9], [[0.01, 0.0], [0.0, 0.01]]).unwrap();
    let task = probe_task(far, 64, 4);
    assert!(matches!(baseline_gmm_probe(&task, &sim.region, &gmm_cfg(0)), Err(Error::InsufficientData(_))));
    let spiral = uniform_task(StrategyKind::Spiral, GaussianMixture2D::single([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]).unwrap(), 32, 1);
    assert!(matches!(baseline_gmm_probe(&spiral, &sim.region, &gmm_cfg(0)), Err(Error::Contract(_))));
    assert!(matches!(fit_gmm(&[[0.0, 0.0]; 4], &gmm_cfg(0)), Err(Error::InsufficientData(_))));
}

fn brute_ranks(objs: &[[f64; 2]]) -> Vec<usize> {
    let n = objs.len();
    let mut rank = vec![usize::MAX; n];
    let mut left: Vec<usize> = (0..n).collect();
    let mut r = 0;
    while !left.is_empty() {
        let front: Vec<usize> = left
            .iter()
            .copied()
            .filter(|&i| !left.iter().any(|&j| j != i && dominates(&objs[j], &objs[i])))
            .collect();
        for &i in &front {
            rank[i] = r;
        }
        left.retain(|i| !front.contains(i));
        r += 1;
    }
    rank
}

#[test]
fn non_dominated_sort_matches_brute_force() {
    let mut r = rng(17);
    for case in 0..200 {
        let n = r.random_range(1..=64);
        // coarse grid values force ties and duplicates
        let coarse = case % 2 == 0;
        let objs: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                if coarse {
                    [r.random_range(0..6) as f64, r.random_range(0..6) as f64]
                } else {
                    [r.random::<f64>(), r.random::<f64>()]
                }
            })
            .collect();
        assert_eq!(non_dominated_sort(&objs), brute_ranks(&objs), "case {case}");
    }
}

#[test]
fn mutually_non_dominating_population_is_one_front() {
    let objs: Vec<[f64; 2]> = (0..20).map(|i| [i as f64, 20.0 - i as f64]).collect();
    assert!(non_dominated_sort(&objs).iter().all(|&r| r == 0));
    let cd = crowding_distance(&objs);
    assert!(cd[0].is_infinite() && cd[19].is_infinite());
    assert!(cd[1..19].iter().all(|d| d.is_finite() && *d > 0.0));
    assert!(crowding_distance(&objs[..2]).iter().all(|d| d.is_infinite()));
}

#[test]
fn variation_operators_respect_bounds() {
    let lo = vec![-1.0, 0.0, 5.0];
    let hi = vec![1.0, 2.0, 6.0];
    let mut r = dpse::rng::stream_rng(0, 0);
    for _ in 0..2000 {
        let p1: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| r.random_range(*l..=*h)).collect();
        let p2: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| r.random_range(*l..=*h)).collect();
        let (mut c1, c2) = sbx(&p1, &p2, &lo, &hi, 15.0, &mut r);
        polynomial_mutation(&mut c1, &lo, &hi, 20.0, 1.0, &mut r);
        for c in [&c1, &c2] {
            assert!(c.iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| v >= l && v <= h && v.is_finite()));
        }
    }
}

#[test]
fn nsga2_config_validation() {
    let sim = probe_sim();
    let mix = GaussianMixture2D::single([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let mut process = HoleProcess::stationary(mix, 0);
    let bad = [
        Nsga2Config { mu: 1, ..Nsga2Config::probe_preset() },
        Nsga2Config { lambda: 1, ..Nsga2Config::probe_preset() },
        Nsga2Config { budget: 10, ..Nsga2Config::probe_preset() },
        Nsga2Config { evals_per_individual: 0, ..Nsga2Config::probe_preset() },
    ];
    for c in bad {
        assert!(matches!(nsga2_optimize(StrategyKind::Probe, &mut process, &c, &sim, &Objective::default()), Err(Error::Config(_))));
    }
    assert_eq!(process.timestep(), 0);
}

#[test]
fn nsga2_budget_elitism_and_bounds() {
    let sim = probe_sim();
    let mix = GaussianMixture2D::single([2.0, 2.0], [[4.0, 0.0], [0.0, 4.0]]).unwrap();
    for (evals, budget) in [(1usize, 300usize), (3, 301)] {
        let cfg = Nsga2Config {
            evals_per_individual: evals,
            budget,
            ..Nsga2Config::probe_preset()
        };
        let mut process = HoleProcess::stationary(mix.clone(), 1);
        let res = nsga2_optimize(StrategyKind::Probe, &mut process, &cfg, &sim, &Objective::default()).unwrap();
        assert!(res.executions <= budget && res.executions + evals > budget);
        assert_eq!(process.timestep() as usize, res.executions);
        for w in res.history.windows(2) {
            assert!(w[1] <= w[0], "history {:?}", res.history);
        }
        let bounds = ParamBounds::new(StrategyKind::Probe, &sim.region);
        assert!(res.front.iter().all(|i| i.rank == 0 && bounds.contains(&i.params)));
        assert!(bounds.contains(&res.best.params));
        let obj = Objective::default();
        let best = obj.scalarize(res.best.objectives[0], res.best.objectives[1]);
        assert_eq!(best, *res.history.last().unwrap());
    }
}

#[test]
fn nsga2_is_seed_deterministic() {
    let sim = spiral_sim();
    let mix = GaussianMixture2D::single([0.0, 0.0], [[4.0, 0.0], [0.0, 4.0]]).unwrap();
    let cfg = Nsga2Config::spiral_preset();
    let run = || {
        let mut p = HoleProcess::stationary(mix.clone(), 2);
        nsga2_optimize(StrategyKind::Spiral, &mut p, &cfg, &sim, &Objective::default()).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn nsga2_finds_tight_mode() {
    let sim = probe_sim();
    let mix = GaussianMixture2D::single([3.0, -2.0], [[0.25, 0.0], [0.0, 0.25]]).unwrap();
    let cfg = Nsga2Config {
        budget: 250,
        seed: 4,
        ..Nsga2Config::probe_preset()
    };
    let mut process = HoleProcess::stationary(mix.clone(), 4);
    let res = nsga2_optimize(StrategyKind::Probe, &mut process, &cfg, &sim, &Objective::default()).unwrap();
    let x = res.best_params(StrategyKind::Probe).unwrap();
    let est = success_prob_oracle(&x, &mix, 20_000, 9, &sim).unwrap();
    assert!(est.success_rate > 0.8, "oracle success {}", est.success_rate);
}
