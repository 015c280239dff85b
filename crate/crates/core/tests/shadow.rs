mod common;

use adgraph::{Tape, Tensor};
use common::*;
use dpse::baselines::baseline_fixed;
use dpse::env::{sample_mixture, GaussianMixture2D};
use dpse::params::{ProbeParams, StrategyKind, StrategyParams, PROBE_POINTS};
use dpse::shadow::{derived_cycle, derived_fail, Architecture, OutcomeStats, ShadowModel, TrainingMeta};
use dpse::sim::{success_prob_oracle, Timing};
use dpse::trainers::{pretrain, SourceDataset, TrainConfig};
use dpse::Error;
use proptest::prelude::*;
use rand::Rng;

const KINDS: [StrategyKind; 2] = [StrategyKind::Probe, StrategyKind::Spiral];
const ARCHS: [Architecture; 2] = [Architecture::Field, Architecture::Dense];

#[test]
fn fresh_models_predict_open_unit_probabilities() {
    let mut r = rng(1);
    for kind in KINDS {
        for arch in ARCHS {
            let m = model(kind, arch, 3);
            for _ in 0..10 {
                let u = random_u(&mut r, kind.dim(), 1.0);
                match &m.predict_normalized(&[u]).unwrap()[0] {
                    OutcomeStats::Probe { q } => {
                        assert_eq!(q.len(), PROBE_POINTS);
                        assert!(q.iter().all(|q| *q > 0.0 && *q < 1.0), "{q:?}");
                    }
                    OutcomeStats::Spiral { p_success, tau_search } => {
                        assert!(*p_success > 0.0 && *p_success < 1.0);
                        assert!(*tau_search > 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn input_gradient_of_fail_matches_finite_differences() {
    let mut r = rng(2);
    for kind in KINDS {
        for arch in ARCHS {
            let m = model(kind, arch, 5);
            for _ in 0..5 {
                let u = random_u(&mut r, kind.dim(), 0.9);
                let g = fail_grad(&m, &u);
                let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                for i in 0..u.len() {
                    let h = 1e-5;
                    let mut up = u.clone();
                    up[i] += h;
                    let mut dn = u.clone();
                    dn[i] -= h;
                    let fd = (fail_at(&m, &up) - fail_at(&m, &dn)) / (2.0 * h);
                    let e = rel_err(g[i], fd, 1e-3 * scale.max(1e-6));
                    assert!(e < 1e-3, "{kind:?}/{arch:?} coord {i}: tape {} fd {fd} (rel {e})", g[i]);
                }
            }
        }
    }
}

#[test]
fn weight_gradient_of_loss_matches_finite_differences() {
    let mut r = rng(3);
    for kind in KINDS {
        let mix = sample_mixture(4, &preset(kind)).unwrap();
        let task = uniform_task(kind, mix, 12, 4);
        for arch in ARCHS {
            let m = model(kind, arch, 6);
            let batch = m.encode(&refs(&task.records)).unwrap();
            let (_, grads) = m.loss_and_grad(&batch).unwrap();
            let loss_with = |w: Vec<Tensor>| {
                let mut c = m.clone();
                c.set_weights(w).unwrap();
                c.loss(&refs(&task.records)).unwrap()
            };
            for _ in 0..25 {
                let t = r.random_range(0..grads.len());
                let e = r.random_range(0..grads[t].len());
                let h = 1e-5;
                let mut up = m.weights().to_vec();
                up[t].data_mut()[e] += h;
                let mut dn = m.weights().to_vec();
                dn[t].data_mut()[e] -= h;
                let fd = (loss_with(up) - loss_with(dn)) / (2.0 * h);
                let a = grads[t].data()[e];
                assert!(rel_err(a, fd, 1e-3) < 1e-4, "{kind:?}/{arch:?} w[{t}][{e}]: {a} vs {fd}");
            }
        }
    }
}

#[test]
fn half_probabilities_fail_with_two_to_the_minus_sixteen() {
    let s = OutcomeStats::Probe { q: vec![0.5; 16] };
    assert!((derived_fail(&s) - 0.5f64.powi(16)).abs() < 1e-18);
    assert!((derived_fail(&s) - 1.526e-5).abs() < 1e-8);
}

#[test]
fn derived_cycle_limits() {
    let t = Timing::default();
    let mut q = vec![0.3; 16];
    q[0] = 1.0;
    let sure = OutcomeStats::Probe { q };
    assert_eq!(derived_fail(&sure), 0.0);
    assert!((derived_cycle(&sure, &t) - (t.t_setup + t.t_probe)).abs() < 1e-12);
    let never = OutcomeStats::Probe { q: vec![0.0; 16] };
    assert!((derived_cycle(&never, &t) - (t.t_setup + 16.0 * t.t_probe + t.t_fail)).abs() < 1e-12);
    let sp = OutcomeStats::Spiral {
        p_success: 0.75,
        tau_search: 3.0,
    };
    assert!((derived_fail(&sp) - 0.25).abs() < 1e-15);
    assert!((derived_cycle(&sp, &t) - (3.0 + 0.25 * t.t_fail)).abs() < 1e-12);
}

/// Runs the probe chain directly: probe k hits with probability q_k given
/// earlier misses.
fn bernoulli_chain(q: &[f64], t: &Timing, trials: usize, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let (mut fails, mut total) = (0usize, 0.0);
    for _ in 0..trials {
        let mut d = t.t_setup;
        let mut hit = false;
        for qk in q {
            d += t.t_probe;
            if r.random::<f64>() < *qk {
                hit = true;
                break;
            }
        }
        if !hit {
            fails += 1;
            d += t.t_fail;
        }
        total += d;
    }
    (fails as f64 / trials as f64, total / trials as f64)
}

#[test]
fn derived_metrics_match_bernoulli_chain() {
    let t = Timing::default();
    let mut r = rng(4);
    for case in 0..10 {
        let hi = [0.05, 0.15, 0.4][case % 3];
        let q: Vec<f64> = (0..16).map(|_| r.random_range(0.0..hi)).collect();
        let s = OutcomeStats::Probe { q: q.clone() };
        let (pf, pc) = (derived_fail(&s), derived_cycle(&s, &t));
        let n = 100_000;
        let (mf, mc) = bernoulli_chain(&q, &t, n, 100 + case as u64);
        let sigma = (pf * (1.0 - pf) / n as f64).sqrt().max(1.0 / n as f64);
        assert!((mf - pf).abs() < 3.0 * sigma, "fail {mf} vs {pf}");
        assert!((mc - pc).abs() / pc < 0.01, "cycle {mc} vs {pc}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn derived_metrics_stay_in_bounds(q in prop::collection::vec(0.0f64..=1.0, 16)) {
        let t = Timing::default();
        let s = OutcomeStats::Probe { q };
        let f = derived_fail(&s);
        let c = derived_cycle(&s, &t);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!(c >= t.t_setup + t.t_probe - 1e-12);
        prop_assert!(c <= t.t_setup + 16.0 * t.t_probe + t.t_fail + 1e-12);
    }
}

#[test]
fn tape_and_scalar_derived_metrics_agree() {
    let mut r = rng(5);
    for kind in KINDS {
        for arch in ARCHS {
            let m = model(kind, arch, 7);
            let rows: Vec<Vec<f64>> = (0..4).map(|_| random_u(&mut r, kind.dim(), 1.0)).collect();
            let stats = m.predict_normalized(&rows).unwrap();
            let mut tape = Tape::new();
            let w = m.bind(&mut tape, false);
            let u = tape.constant(Tensor::from_rows(&rows).unwrap());
            let f = m.forward(&mut tape, &w, u).unwrap();
            let fail = m.fail_var(&mut tape, &f).unwrap();
            let cycle = m.cycle_var(&mut tape, &f).unwrap();
            for (i, s) in stats.iter().enumerate() {
                let tf = tape.value(fail).data()[i];
                let tc = tape.value(cycle).data()[i];
                assert!((derived_fail(s) - tf).abs() < 1e-12 * tf.max(1e-3), "{kind:?}/{arch:?}");
                assert!((derived_cycle(s, m.timing()) - tc).abs() < 1e-9, "{kind:?}/{arch:?}");
            }
        }
    }
}

fn probe_record(hit: Option<usize>) -> dpse::sim::ExecutionRecord {
    let sim = probe_sim();
    let StrategyParams::Probe(p) = baseline_fixed(StrategyKind::Probe, &sim.region) else {
        unreachable!()
    };
    let hole = match hit {
        Some(k) => p.points[k],
        None => [9.9, 0.0],
    };
    let hole = dpse::env::HolePose::new(hole[0], hole[1]);
    let r = dpse::sim::simulate_probe(&p, hole, &sim);
    assert_eq!(r.hit_index(), hit);
    r
}

#[test]
fn success_at_first_probe_contributes_one_term() {
    let m = model(StrategyKind::Probe, Architecture::Field, 1);
    let r = probe_record(Some(0));
    let batch = m.encode(&[&r]).unwrap();
    let active: f64 = batch.hit.data().iter().chain(batch.miss.data()).sum();
    assert_eq!(active, 1.0);
    assert_eq!(batch.hit.data()[0], 1.0);
    let OutcomeStats::Probe { q } = m.predict(&r.params).unwrap() else {
        unreachable!()
    };
    let loss = m.loss(&[&r]).unwrap();
    assert!((loss + q[0].ln()).abs() < 1e-10, "{loss} vs {}", -q[0].ln());

    let miss = probe_record(None);
    let batch = m.encode(&[&miss]).unwrap();
    assert_eq!(batch.miss.data().iter().sum::<f64>(), 16.0);
    assert_eq!(batch.hit.data().iter().sum::<f64>(), 0.0);
    let third = probe_record(Some(2));
    let batch = m.encode(&[&third]).unwrap();
    assert_eq!(batch.miss.data().iter().sum::<f64>(), 2.0);
    assert_eq!(batch.hit.data()[2], 1.0);
}

#[test]
fn empty_batch_and_wrong_dimension_are_contract_errors() {
    let m = model(StrategyKind::Probe, Architecture::Field, 1);
    assert!(matches!(m.encode(&[]), Err(Error::Contract(_))));
    let mut tape = Tape::new();
    let w = m.bind(&mut tape, false);
    let u = tape.constant(Tensor::zeros(&[2, 8]));
    assert!(matches!(m.forward(&mut tape, &w, u), Err(Error::Contract(_))));
    let spiral = baseline_fixed(StrategyKind::Spiral, &probe_sim().region);
    assert!(matches!(m.predict(&spiral), Err(Error::Contract(_))));
}

#[test]
fn out_of_bounds_inputs_are_clamped() {
    let m = model(StrategyKind::Probe, Architecture::Field, 1);
    let inside = ProbeParams::new(vec![[10.0, -10.0]; 16]).unwrap();
    let outside = ProbeParams::new(vec![[25.0, -40.0]; 16]).unwrap();
    assert_eq!(
        m.predict(&StrategyParams::Probe(inside)).unwrap(),
        m.predict(&StrategyParams::Probe(outside)).unwrap()
    );
}

fn train_on(records: &dpse::sim::TaskDataset, epochs: usize, lr: f64, seed: u64) -> ShadowModel {
    let init = model(records.kind, Architecture::Field, seed);
    let source = SourceDataset::new(vec![records.clone()]).unwrap();
    let cfg = TrainConfig {
        epochs,
        lr,
        ..TrainConfig::pretrain().with_seed(seed)
    };
    pretrain(init, &source, &cfg).unwrap().model
}

#[test]
fn probe_order_barely_changes_fail_after_training() {
    let mix = sample_mixture(11, &preset(StrategyKind::Probe)).unwrap();
    let task = uniform_task(StrategyKind::Probe, mix, 1500, 11);
    let m = train_on(&task, 15, 1e-3, 11);
    let mut r = rng(6);
    for _ in 0..20 {
        let u = random_u(&mut r, 32, 1.0);
        let mut pts: Vec<[f64; 2]> = u.chunks(2).map(|c| [c[0], c[1]]).collect();
        let (i, j) = (r.random_range(0..16), r.random_range(0..16));
        pts.swap(i, j);
        let v: Vec<f64> = pts.concat();
        let (a, b) = (fail_at(&m, &u), fail_at(&m, &v));
        assert!((a - b).abs() < 0.05, "{a} vs {b}");
    }
}

#[test]
fn passive_training_calibrates_fail_at_the_executed_parameters() {
    let sim = probe_sim();
    let x0 = baseline_fixed(StrategyKind::Probe, &sim.region);
    let mix = GaussianMixture2D::single([2.0, -1.0], [[9.0, 0.0], [0.0, 9.0]]).unwrap();
    let task = passive_task(&x0, mix.clone(), 1024, 12);
    let m = train_on(&task, 100, 1e-2, 12);
    let predicted = derived_fail(&m.predict(&x0).unwrap());
    let oracle = success_prob_oracle(&x0, &mix, 10_000, 99, &sim).unwrap().failure_rate();
    assert!((predicted - oracle).abs() < 0.05, "{predicted} vs {oracle}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    for kind in KINDS {
        for arch in ARCHS {
            let mut m = model(kind, arch, 9);
            m.meta = TrainingMeta {
                tasks: 200,
                records_per_task: 128,
                seed: 9,
            };
            let bytes = m.to_bytes();
            let back = ShadowModel::from_bytes(&bytes).unwrap();
            assert_eq!(back.kind(), kind);
            assert_eq!(back.config(), m.config());
            assert_eq!(back.meta, m.meta);
            for (a, b) in back.weights().iter().zip(m.weights()) {
                let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a), bits(b));
            }
            assert_eq!(back.to_bytes(), bytes);
        }
    }
}

#[test]
fn corrupt_checkpoints_are_refused() {
    let bytes = model(StrategyKind::Probe, Architecture::Field, 9).to_bytes();
    let mut version = bytes.clone();
    version[8..12].copy_from_slice(&2u32.to_le_bytes());
    match ShadowModel::from_bytes(&version) {
        Err(Error::Integrity(msg)) => assert!(msg.contains("version"), "{msg}"),
        other => panic!("expected version error, got {other:?}"),
    }
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(ShadowModel::from_bytes(&magic), Err(Error::Integrity(_))));
    assert!(matches!(ShadowModel::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Integrity(_))));
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(ShadowModel::from_bytes(&trailing), Err(Error::Integrity(_))));
    let mut nan = bytes.clone();
    let n = nan.len();
    nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
    assert!(ShadowModel::from_bytes(&nan).is_err());
}
