//! Acceptance run: one PASS/FAIL line per criterion. A FAIL is reported,
//! not raised, so the rest of the suite still runs; errors from the
//! library itself do panic.

use std::sync::Arc;
use std::time::Instant;

use dialogctl::dialog::corpus::{replay_corpus, Sequence};
use dialogctl::dialog::{
    mask_and_renormalize, run_dialog, select_action, ActionMask, Engine, ModelController,
    SelectionMode,
};
use dialogctl::nn::{
    backward_sequence, forward_sequence, init_model, softmax, write_checkpoint, ModelKind,
    ModelParams,
};
use dialogctl::phone::{load_corpus, PhoneDomain};
use dialogctl::rl::*;
use dialogctl::sl::*;
use dialogctl::usersim::{SimParams, SimulatedUser};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KINDS: [ModelKind; 3] = [ModelKind::Lstm, ModelKind::Rnn, ModelKind::Dnn];

struct Report {
    passed: usize,
    total: usize,
}

impl Report {
    fn line(&mut self, n: usize, name: &str, ok: bool, detail: String, started: Instant) {
        self.total += 1;
        self.passed += ok as usize;
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!(
            "{verdict} [{n}] {name}: {detail} ({:.1} s)",
            started.elapsed().as_secs_f64()
        );
    }
}

fn engine() -> Engine<PhoneDomain> {
    Engine::new(Arc::new(PhoneDomain::builtin()))
}

fn corpus(e: &Engine<PhoneDomain>) -> Vec<Sequence> {
    replay_corpus(e, &load_corpus()).unwrap()
}

/// sum_t w_t . z_t - ln softmax(z_t)[y_t], from the forward pass alone.
fn probe_loss(params: &ModelParams, inputs: &[Vec<f64>], w: &[Vec<f64>], y: &[usize]) -> f64 {
    forward_sequence(params, inputs)
        .unwrap()
        .iter()
        .zip(w)
        .zip(y)
        .map(|((z, w), &y)| z.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - softmax(z)[y].ln())
        .sum()
}

fn worst_fd_error(kind: ModelKind, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, d, h, a) = (
        rng.gen_range(1..6),
        rng.gen_range(2..6),
        rng.gen_range(2..6),
        rng.gen_range(2..5),
    );
    let mut params = init_model(kind, d, h, a, seed).unwrap();
    for v in params.iter_mut() {
        *v += rng.gen_range(-0.3..0.3);
    }
    let rows = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<f64>> {
        (0..t)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    };
    let inputs = rows(&mut rng, d);
    let w = rows(&mut rng, a);
    let y: Vec<usize> = (0..t).map(|_| rng.gen_range(0..a)).collect();
    let upstream: Vec<Vec<f64>> = forward_sequence(&params, &inputs)
        .unwrap()
        .iter()
        .zip(&w)
        .zip(&y)
        .map(|((z, w), &y)| {
            let mut p = softmax(z);
            p[y] -= 1.0;
            p.iter().zip(w).map(|(a, b)| a + b).collect()
        })
        .collect();
    let analytic: Vec<f64> = backward_sequence(&params, &inputs, &upstream)
        .unwrap()
        .iter()
        .copied()
        .collect();
    let delta = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, exact) in analytic.iter().enumerate() {
        let mut plus = params.clone();
        *plus.iter_mut().nth(k).unwrap() += delta;
        let mut minus = params.clone();
        *minus.iter_mut().nth(k).unwrap() -= delta;
        let numeric = (probe_loss(&plus, &inputs, &w, &y) - probe_loss(&minus, &inputs, &w, &y))
            / (2.0 * delta);
        worst = worst.max((numeric - exact).abs() / (numeric.abs() + exact.abs()).max(1e-6));
    }
    worst
}

fn gradients(r: &mut Report) {
    let t0 = Instant::now();
    let mut worst = [0.0f64; 3];
    for (i, kind) in KINDS.iter().enumerate() {
        for seed in 0..20 {
            worst[i] = worst[i].max(worst_fd_error(*kind, 1000 + seed));
        }
    }
    let ok = worst.iter().all(|w| *w < 1e-4) && t0.elapsed().as_secs() < 60;
    let detail = format!(
        "worst rel. error LSTM {:.1e}, RNN {:.1e}, DNN {:.1e} over 20 instances each",
        worst[0], worst[1], worst[2]
    );
    r.line(1, "gradient check", ok, detail, t0);
}

fn architectures(r: &mut Report, seqs: &[Sequence]) {
    let t0 = Instant::now();
    let cfg = EvalConfig {
        sl: SlConfig::with_plateau(100),
        ..EvalConfig::default()
    };
    let cells = compare_architectures(seqs, &KINDS, &[seqs.len()], &cfg).unwrap();
    let got = |k: ModelKind| cells.iter().find(|c| c.kind == k).unwrap();
    let (l, n, d) = (
        got(ModelKind::Lstm),
        got(ModelKind::Rnn),
        got(ModelKind::Dnn),
    );
    let ok = seqs.len() == 21
        && l.reconstructed
        && n.reconstructed
        && !d.reconstructed
        && t0.elapsed().as_secs() < 600;
    let detail = format!(
        "{} dialogs; LSTM {} ({} epochs), RNN {} ({} epochs), DNN {} ({:?})",
        seqs.len(),
        l.reconstructed,
        l.epochs,
        n.reconstructed,
        n.epochs,
        d.reconstructed,
        d.stop
    );
    r.line(2, "architecture table", ok, detail, t0);
}

fn loo(r: &mut Report, seqs: &[Sequence]) {
    let t0 = Instant::now();
    let rows = loo_eval(seqs, &[1, 2, 5, 10, 20], &EvalConfig::default()).unwrap();
    let at = |s: usize| rows.iter().find(|r| r.size == s).unwrap();
    let ordered = rows.iter().all(|r| r.dialog_accuracy <= r.turn_accuracy);
    let ok = at(1).turn_accuracy >= 0.60
        && at(20).turn_accuracy >= 0.85
        && ordered
        && rows.iter().all(|r| r.folds == 21)
        && t0.elapsed().as_secs() < 1800;
    let curve: Vec<String> = rows
        .iter()
        .map(|r| format!("{}:{:.3}/{:.3}", r.size, r.turn_accuracy, r.dialog_accuracy))
        .collect();
    let detail = format!(
        "size:per-turn/whole-dialog {}; need size 1 >= 0.60, size 20 >= 0.85",
        curve.join(" ")
    );
    r.line(3, "leave-one-out accuracy", ok, detail, t0);
}

fn retrain_speed(r: &mut Report, seqs: &[Sequence]) {
    let t0 = Instant::now();
    let (mut p, mut o) = fresh_model(ModelKind::Lstm, 45, DEFAULT_HIDDEN, 14, 0).unwrap();
    let n = seqs.len();
    train_sl(&mut p, &mut o, &seqs[..n - 1], &SlConfig::default()).unwrap();
    let rep = train_sl(&mut p, &mut o, seqs, &SlConfig::default()).unwrap();
    let secs = rep.wall_clock.as_secs_f64();
    let ok = rep.reconstructed && secs < 5.0;
    r.line(
        4,
        "warm retrain",
        ok,
        format!("{n} dialogs, {} epochs, {:.3} s", rep.epochs, secs),
        t0,
    );
}

fn roc(r: &mut Report, seqs: &[Sequence]) {
    let t0 = Instant::now();
    let res = roc_data(seqs, 10, 11, 10, &EvalConfig::default()).unwrap();
    let auc = res.auc.unwrap_or(0.0);
    let low = res.lowest_incorrect_fraction(20);
    let ok = auc >= 0.70 && low >= 0.5 && t0.elapsed().as_secs() < 900;
    let wrong = res.turns.iter().filter(|t| !t.correct).count();
    let detail = format!(
        "AUC {auc:.3}, {low:.2} of 20 lowest incorrect ({wrong}/{} turns incorrect overall)",
        res.turns.len()
    );
    r.line(5, "score ranking", ok, detail, t0);
}

fn rl_curves(r: &mut Report, e: &Engine<PhoneDomain>, seqs: &[Sequence]) {
    let t0 = Instant::now();
    let run = |n_sl| {
        let cfg = RlConfig {
            n_sl,
            n_rl_dialogs: 2000,
            runs: 5,
            eval_every: 200,
            eval_dialogs: 300,
            ..RlConfig::default()
        };
        rl_experiment(e, seqs, &cfg).unwrap()
    };
    let (zero, ten) = (run(0), run(10));
    let mut gap_ok = true;
    let mut gaps = Vec::new();
    for (i, k) in zero.checkpoints.iter().enumerate() {
        if *k > 500 {
            let gap = ten.mean[i] - zero.mean[i];
            gap_ok &= gap >= 0.10;
            gaps.push(format!("{k}:{gap:+.3}"));
        }
    }
    let last = zero.checkpoints.len() - 1;
    let spread_ok = ten.stddev[last] < zero.stddev[last];
    let ok = gap_ok && spread_ok && t0.elapsed().as_secs() < 7200;
    let detail = format!(
        "gap after 500: {}; final mean {:.3}±{:.3} (n_sl=10) vs {:.3}±{:.3} (n_sl=0)",
        gaps.join(" "),
        ten.mean[last],
        ten.stddev[last],
        zero.mean[last],
        zero.stddev[last]
    );
    r.line(6, "RL with supervised start", ok, detail, t0);
}

fn mask_safety(r: &mut Report) {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut violations = 0;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..20);
        let dist: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    0.0
                } else {
                    rng.gen::<f64>()
                }
            })
            .collect();
        let mut bits: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let keep = rng.gen_range(0..n);
        bits[keep] = true;
        let mask = ActionMask::new(bits);
        let p = mask_and_renormalize(&dist, &mask).unwrap();
        let zeroed = p.iter().zip(mask.iter()).all(|(v, ok)| ok || *v == 0.0);
        let a = select_action(&p, SelectionMode::Sample, &mut rng);
        let g = select_action(&p, SelectionMode::Greedy, &mut rng);
        if !zeroed
            || !mask.allowed(a)
            || !mask.allowed(g)
            || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            violations += 1;
        }
    }
    // Allowed entries whose probability underflows to zero.
    let mut finite = 0;
    let trials = 50;
    for s in 0..trials {
        let kind = KINDS[s % 3];
        let mut p = init_model(kind, 3, 4, 3, s as u64).unwrap();
        for t in p.tensors.iter_mut().filter(|t| t.name == "b_out") {
            t.values = vec![2000.0, 0.0, 0.0];
        }
        let seq = Sequence {
            inputs: vec![vec![0.5, -0.5, 0.2]; 2],
            masks: vec![ActionMask::new(vec![true, true, false]); 2],
            targets: vec![1, 0],
        };
        let ep = Episode {
            inputs: seq.inputs.clone(),
            masks: seq.masks.clone(),
            behavior: vec![1e-3, 0.5],
            actions: seq.targets.clone(),
            reward: 1.0,
            ret: 0.95,
        };
        let sl_ok = sl_gradient(&p, &seq)
            .map(|(_, g)| g.is_finite())
            .unwrap_or(false);
        let rl_ok = log_policy_gradient(&p, &ep)
            .map(|g| g.is_finite())
            .unwrap_or(false);
        finite += (sl_ok && rl_ok) as usize;
    }
    let ok = violations == 0 && finite == trials;
    r.line(
        7,
        "mask safety",
        ok,
        format!("{violations} violations in 10000 selections; {finite}/{trials} finite gradients"),
        t0,
    );
}

fn guard(r: &mut Report, e: &Engine<PhoneDomain>, seqs: &[Sequence]) {
    let t0 = Instant::now();
    let (mut p, mut o) = fresh_model(ModelKind::Lstm, 45, DEFAULT_HIDDEN, 14, 11).unwrap();
    train_sl(&mut p, &mut o, seqs, &SlConfig::default()).unwrap();
    let mut buf = BaselineBuffer::default();
    let (mut applied, mut held, mut rejected, mut repairs) = (0, 0, 0, 0);
    let updates = 1000;
    for i in 0..updates {
        let d = {
            let mut user = SimulatedUser::new(e.domain(), SimParams::default(), 90_000 + i);
            let mut ctl =
                ModelController::new(&p, SelectionMode::Sample, ChaCha8Rng::seed_from_u64(i));
            run_dialog(e, &mut ctl, &mut user, 20).unwrap().0
        };
        let ep = Episode::from_dialog(&d, DEFAULT_GAMMA).unwrap();
        let b = estimate_baseline(&buf, &p).unwrap();
        match guarded_update(&mut p, &mut o, &ep, seqs, b, 1.0, &SlConfig::default()) {
            Ok(g) => {
                applied += g.updated as usize;
                repairs += (g.repair_epochs > 0) as usize;
            }
            Err(_) => rejected += 1,
        }
        held += reconstructs(&p, seqs).unwrap() as usize;
        buf.push(ep);
    }
    let ok = held == updates as usize;
    let detail = format!("corpus reconstructed after {held}/{updates} updates ({applied} applied, {repairs} repaired, {rejected} rolled back)");
    r.line(8, "reconstruction guard", ok, detail, t0);
}

fn determinism(r: &mut Report, e: &Engine<PhoneDomain>, seqs: &[Sequence]) {
    let t0 = Instant::now();
    let train = || {
        let (mut p, mut o) = fresh_model(ModelKind::Lstm, 45, DEFAULT_HIDDEN, 14, 5).unwrap();
        train_sl(&mut p, &mut o, seqs, &SlConfig::default()).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&p, &mut bytes).unwrap();
        (p, bytes)
    };
    let (p, a) = train();
    let (_, b) = train();
    let seeds: Vec<u64> = (0..300).collect();
    let t1 = evaluate_tcr(e, &p, &SimParams::default(), &seeds, 20).unwrap();
    let t2 = evaluate_tcr(e, &p, &SimParams::default(), &seeds, 20).unwrap();
    let ok = a == b && t1 == t2;
    let detail = format!(
        "checkpoints identical: {} ({} bytes); greedy TCR {t1:.4} vs {t2:.4}",
        a == b,
        a.len()
    );
    r.line(9, "determinism", ok, detail, t0);
}

fn main() {
    // `cargo test` passes harness flags; `--list` must print nothing.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let e = engine();
    let seqs = corpus(&e);
    let mut r = Report {
        passed: 0,
        total: 0,
    };
    gradients(&mut r);
    architectures(&mut r, &seqs);
    loo(&mut r, &seqs);
    retrain_speed(&mut r, &seqs);
    roc(&mut r, &seqs);
    rl_curves(&mut r, &e, &seqs);
    mask_safety(&mut r);
    guard(&mut r, &e, &seqs);
    determinism(&mut r, &e, &seqs);
    println!("acceptance: {}/{} criteria pass", r.passed, r.total);
}
