use std::sync::Arc;

use dialogctl::dialog::corpus::{replay_corpus, Sequence};
use dialogctl::dialog::{run_dialog, ActionMask, Engine, ModelController, SelectionMode};
use dialogctl::nn::{init_model, AdaDeltaState, ModelKind, ModelParams};
use dialogctl::phone::{load_corpus, PhoneDomain};
use dialogctl::rl::*;
use dialogctl::sl::{fresh_model, masked_distributions, reconstructs, train_sl, SlConfig};
use dialogctl::usersim::{SimParams, SimulatedUser};
use dialogctl::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn engine() -> Engine<PhoneDomain> {
    Engine::new(Arc::new(PhoneDomain::builtin()))
}

fn mask(bits: &[bool]) -> ActionMask {
    ActionMask::new(bits.to_vec())
}

fn episode(
    inputs: Vec<Vec<f64>>,
    masks: Vec<ActionMask>,
    behavior: Vec<f64>,
    actions: Vec<usize>,
    reward: f64,
) -> Episode {
    let ret = compute_return(reward, actions.len(), DEFAULT_GAMMA).unwrap();
    Episode {
        inputs,
        masks,
        behavior,
        actions,
        reward,
        ret,
    }
}

fn log_prob(params: &ModelParams, ep: &Episode) -> f64 {
    let seq = Sequence {
        inputs: ep.inputs.clone(),
        masks: ep.masks.clone(),
        targets: ep.actions.clone(),
    };
    masked_distributions(params, &seq)
        .unwrap()
        .iter()
        .zip(&ep.actions)
        .map(|(p, a)| (p[*a] + PROB_EPS).ln())
        .sum()
}

#[test]
fn return_examples() {
    assert_eq!(compute_return(1.0, 1, 0.95).unwrap(), 1.0);
    assert!((compute_return(1.0, 5, 0.95).unwrap() - 0.81450625).abs() < 1e-15);
    assert_eq!(compute_return(0.0, 7, 0.95).unwrap(), 0.0);
    assert!(compute_return(1.0, 0, 0.95).is_err());
}

#[test]
fn baseline_of_empty_buffer_is_zero() {
    let p = init_model(ModelKind::Lstm, 3, 4, 2, 1).unwrap();
    assert_eq!(
        estimate_baseline(&BaselineBuffer::default(), &p).unwrap(),
        0.0
    );
    assert_eq!(BaselineBuffer::default().capacity(), 100);
}

#[test]
fn baseline_hand_computed() {
    // Zero weights give a uniform distribution over the allowed actions.
    let p = ModelParams::zeros(ModelKind::Dnn, 2, 3, 4).unwrap();
    let x = vec![vec![0.3, -0.2]; 3];
    let all = mask(&[true; 4]);
    let mut buf = BaselineBuffer::default();
    // pi = (1/2, 1/4), beh = (1/2, 1/2): w = 0.5, R = 0.95
    buf.push(episode(
        x[..2].to_vec(),
        vec![mask(&[true, true, false, false]), all.clone()],
        vec![0.5, 0.5],
        vec![1, 3],
        1.0,
    ));
    // pi = 1, beh = 0.05: w = 20 clipped to 10, R = 1
    buf.push(episode(
        x[..1].to_vec(),
        vec![mask(&[false, false, true, false])],
        vec![0.05],
        vec![2],
        1.0,
    ));
    // pi = 1/4 each, beh = (1/4, 1/2, 1): w = 0.125, R = 0
    buf.push(episode(
        x.clone(),
        vec![all.clone(); 3],
        vec![0.25, 0.5, 1.0],
        vec![0, 1, 2],
        0.0,
    ));
    let expected = (0.5 * 0.95 + 10.0 * 1.0 + 0.125 * 0.0) / (0.5 + 10.0 + 0.125);
    assert!((estimate_baseline(&buf, &p).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn baseline_with_behavior_policy_is_mean_return() {
    let e = engine();
    let seqs = replay_corpus(&e, &load_corpus()).unwrap();
    let (mut p, mut o) = fresh_model(ModelKind::Lstm, 45, 16, 14, 3).unwrap();
    train_sl(&mut p, &mut o, &seqs[..3], &SlConfig::default()).unwrap();
    let mut buf = BaselineBuffer::default();
    let mut total = 0.0;
    for i in 0..30 {
        let mut user = SimulatedUser::new(e.domain(), SimParams::default(), i);
        let mut ctl = ModelController::new(&p, SelectionMode::Sample, ChaCha8Rng::seed_from_u64(i));
        let (d, _) = run_dialog(&e, &mut ctl, &mut user, 20).unwrap();
        let ep = Episode::from_dialog(&d, DEFAULT_GAMMA).unwrap();
        total += ep.ret;
        buf.push(ep);
    }
    let b = estimate_baseline(&buf, &p).unwrap();
    assert!((b - total / 30.0).abs() < 1e-9, "{b} vs {}", total / 30.0);
}

#[test]
fn zero_advantage_leaves_model_unchanged() {
    let p0 = init_model(ModelKind::Lstm, 3, 4, 2, 5).unwrap();
    let mut p = p0.clone();
    let mut o = AdaDeltaState::new(&p);
    let ep = episode(
        vec![vec![0.1, 0.2, 0.3]],
        vec![mask(&[true, true])],
        vec![0.5],
        vec![1],
        1.0,
    );
    assert!(!policy_gradient_update(&mut p, &mut o, &ep, ep.ret, 1.0).unwrap());
    assert_eq!(p, p0);
}

#[test]
fn log_policy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for kind in [ModelKind::Lstm, ModelKind::Rnn, ModelKind::Dnn] {
        let p = init_model(kind, 3, 4, 2, rng.gen()).unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ep = episode(
            vec![x],
            vec![mask(&[true, true])],
            vec![0.5],
            vec![rng.gen_range(0..2)],
            1.0,
        );
        let g = log_policy_gradient(&p, &ep).unwrap();
        let grads: Vec<f64> = g.iter().copied().collect();
        let h = 1e-6;
        for (i, gi) in grads.iter().enumerate() {
            let mut plus = p.clone();
            *plus.iter_mut().nth(i).unwrap() += h;
            let mut minus = p.clone();
            *minus.iter_mut().nth(i).unwrap() -= h;
            let fd = (log_prob(&plus, &ep) - log_prob(&minus, &ep)) / (2.0 * h);
            let err = (fd - gi).abs() / fd.abs().max(gi.abs()).max(1e-8);
            assert!(
                err < 1e-4 || (fd - gi).abs() < 1e-9,
                "{kind} param {i}: fd {fd} vs {gi}"
            );
        }
    }
}

#[test]
fn gradient_is_finite_when_chosen_probability_underflows() {
    let mut p = init_model(ModelKind::Lstm, 3, 4, 3, 2).unwrap();
    for t in p.tensors.iter_mut().filter(|t| t.name == "b_out") {
        t.values = vec![2000.0, 0.0, 0.0];
    }
    let ep = episode(
        vec![vec![0.5, 0.5, 0.5]],
        vec![mask(&[true, true, false])],
        vec![1e-3],
        vec![1],
        1.0,
    );
    let seq = Sequence {
        inputs: ep.inputs.clone(),
        masks: ep.masks.clone(),
        targets: ep.actions.clone(),
    };
    assert_eq!(masked_distributions(&p, &seq).unwrap()[0][1], 0.0);
    let g = log_policy_gradient(&p, &ep).unwrap();
    assert!(g.is_finite());
    let mut o = AdaDeltaState::new(&p);
    policy_gradient_update(&mut p, &mut o, &ep, 0.0, 1.0).unwrap();
    assert!(p.is_finite());
}

#[test]
fn successful_episode_raises_its_action_probabilities() {
    let e = engine();
    let seqs = replay_corpus(&e, &load_corpus()).unwrap();
    let p0 = init_model(ModelKind::Lstm, 45, 16, 14, 9).unwrap();
    for s in seqs.iter().take(5) {
        let ep = episode(
            s.inputs.clone(),
            s.masks.clone(),
            vec![1.0; s.len()],
            s.targets.clone(),
            1.0,
        );
        let before = masked_distributions(&p0, s).unwrap();
        let mut p = p0.clone();
        let mut o = AdaDeltaState::new(&p);
        assert!(policy_gradient_update(&mut p, &mut o, &ep, 0.0, 1e-7).unwrap());
        let after = masked_distributions(&p, s).unwrap();
        for (t, a) in s.targets.iter().enumerate() {
            assert!(
                after[t][*a] >= before[t][*a] - 1e-15,
                "step {t}: {} -> {}",
                before[t][*a],
                after[t][*a]
            );
        }
    }
}

#[test]
fn guarded_updates_keep_the_corpus_reconstructed() {
    let e = engine();
    let seqs = replay_corpus(&e, &load_corpus()).unwrap();
    let guard = &seqs[..5];
    let (mut p, mut o) = fresh_model(ModelKind::Lstm, 45, 32, 14, 4).unwrap();
    train_sl(&mut p, &mut o, guard, &SlConfig::default()).unwrap();
    let mut buf = BaselineBuffer::default();
    for i in 0..60 {
        let d = {
            let mut user = SimulatedUser::new(e.domain(), SimParams::default(), 500 + i);
            let mut ctl =
                ModelController::new(&p, SelectionMode::Sample, ChaCha8Rng::seed_from_u64(i));
            run_dialog(&e, &mut ctl, &mut user, 20).unwrap().0
        };
        let ep = Episode::from_dialog(&d, DEFAULT_GAMMA).unwrap();
        let b = estimate_baseline(&buf, &p).unwrap();
        guarded_update(&mut p, &mut o, &ep, guard, b, 1.0, &SlConfig::default()).unwrap();
        assert!(reconstructs(&p, guard).unwrap(), "after update {i}");
        buf.push(ep);
    }
}

#[test]
fn failed_repair_rolls_back() {
    let e = engine();
    let seqs = replay_corpus(&e, &load_corpus()).unwrap();
    let (mut p, mut o) = fresh_model(ModelKind::Lstm, 45, 8, 14, 4).unwrap();
    let before = (p.clone(), o.clone());
    let s = &seqs[0];
    // Punishing the corpus actions breaks reconstruction; zero epochs cannot repair it.
    let ep = episode(
        s.inputs.clone(),
        s.masks.clone(),
        vec![1.0; s.len()],
        s.targets.clone(),
        0.0,
    );
    let sl = SlConfig {
        max_epochs: 0,
        ..SlConfig::default()
    };
    match guarded_update(&mut p, &mut o, &ep, &seqs[..1], 1.0, 1.0, &sl) {
        Err(Error::RepairFailed(0)) => assert_eq!((p, o), before),
        Ok(out) => panic!("expected a failed repair, got {out:?}"),
        Err(other) => panic!("{other}"),
    }
}

#[test]
fn empty_guard_set_is_a_plain_update() {
    let p0 = init_model(ModelKind::Rnn, 3, 4, 2, 5).unwrap();
    let ep = episode(
        vec![vec![0.1, 0.2, 0.3]],
        vec![mask(&[true, true])],
        vec![0.5],
        vec![1],
        1.0,
    );
    let (mut a, mut oa) = (p0.clone(), AdaDeltaState::new(&p0));
    let (mut b, mut ob) = (p0.clone(), AdaDeltaState::new(&p0));
    let out = guarded_update(&mut a, &mut oa, &ep, &[], 0.2, 1.0, &SlConfig::default()).unwrap();
    policy_gradient_update(&mut b, &mut ob, &ep, 0.2, 1.0).unwrap();
    assert!(out.updated && out.repair_epochs == 0);
    assert_eq!(a, b);
}

#[test]
fn no_learning_gives_a_flat_curve() {
    let e = engine();
    let seqs = replay_corpus(&e, &load_corpus()).unwrap();
    let cfg = RlConfig {
        n_sl: 2,
        n_rl_dialogs: 30,
        runs: 2,
        eval_every: 10,
        eval_dialogs: 40,
        alpha: 0.0,
        hidden: 16,
        ..RlConfig::default()
    };
    let c = rl_experiment(&e, &seqs, &cfg).unwrap();
    assert_eq!(c.checkpoints, vec![0, 10, 20, 30]);
    for r in &c.runs {
        assert!(r.tcr.iter().all(|t| *t == r.tcr[0]), "{:?}", r.tcr);
    }
}

#[test]
fn experiment_is_reproducible() {
    let e = engine();
    let seqs = replay_corpus(&e, &load_corpus()).unwrap();
    let cfg = RlConfig {
        n_sl: 1,
        n_rl_dialogs: 20,
        runs: 2,
        eval_every: 10,
        eval_dialogs: 30,
        hidden: 16,
        seed: 7,
        ..RlConfig::default()
    };
    let a = rl_experiment(&e, &seqs, &cfg).unwrap();
    let b = rl_experiment(&e, &seqs, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.mean.len(), a.checkpoints.len());
    assert!(a.stddev.iter().all(|s| *s >= 0.0));
}

#[test]
fn experiment_rejects_bad_arguments() {
    let e = engine();
    let seqs = replay_corpus(&e, &load_corpus()).unwrap();
    let too_many = RlConfig {
        n_sl: 22,
        ..RlConfig::default()
    };
    assert!(rl_experiment(&e, &seqs, &too_many).is_err());
    let no_eval = RlConfig {
        eval_every: 0,
        ..RlConfig::default()
    };
    assert!(rl_experiment(&e, &seqs, &no_eval).is_err());
}

fn dummy(ret: f64, w: f64) -> Episode {
    Episode {
        inputs: vec![vec![0.0, 0.0]],
        masks: vec![mask(&[true, true])],
        behavior: vec![w],
        actions: vec![0],
        reward: if ret > 0.0 { 1.0 } else { 0.0 },
        ret,
    }
}

proptest! {
    #[test]
    fn return_is_bounded_and_decreasing(t in 1usize..200) {
        let r = compute_return(1.0, t, DEFAULT_GAMMA).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!(compute_return(1.0, t + 1, DEFAULT_GAMMA).unwrap() < r);
    }

    #[test]
    fn buffer_keeps_the_newest(n in 0usize..300, cap in 1usize..120) {
        let mut buf = BaselineBuffer::new(cap);
        for i in 0..n {
            buf.push(dummy(i as f64, 0.5));
        }
        prop_assert_eq!(buf.len(), n.min(cap));
        let kept: Vec<f64> = buf.iter().map(|e| e.ret).collect();
        let expected: Vec<f64> = (n.saturating_sub(cap)..n).map(|i| i as f64).collect();
        prop_assert_eq!(kept, expected);
    }

    #[test]
    fn baseline_ignores_order(eps in prop::collection::vec((0.0f64..1.0, 0.01f64..1.0), 1..30), seed in any::<u64>()) {
        let p = ModelParams::zeros(ModelKind::Dnn, 2, 2, 2).unwrap();
        let mut a = BaselineBuffer::default();
        for (r, w) in &eps {
            a.push(dummy(*r, *w));
        }
        let mut shuffled = eps.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        let mut b = BaselineBuffer::default();
        for (r, w) in &shuffled {
            b.push(dummy(*r, *w));
        }
        let (x, y) = (estimate_baseline(&a, &p).unwrap(), estimate_baseline(&b, &p).unwrap());
        prop_assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn gradients_stay_finite_under_random_masks(seed in any::<u64>(), bits in prop::collection::vec(any::<bool>(), 5), big in 0.0f64..800.0) {
        let mut bits = bits;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rng.gen_range(0..5);
        bits[a] = true;
        let mut p = init_model(ModelKind::Lstm, 3, 4, 5, seed).unwrap();
        for t in p.tensors.iter_mut().filter(|t| t.name == "b_out") {
            t.values[rng.gen_range(0..5)] = big;
        }
        let steps = rng.gen_range(1..4);
        let ep = episode(
            (0..steps).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
            vec![mask(&bits); steps],
            vec![0.3; steps],
            vec![a; steps],
            1.0,
        );
        prop_assert!(log_policy_gradient(&p, &ep).unwrap().is_finite());
    }
}
