//! Supervised training on replayed corpus dialogs, and the evaluations
//! built on it: leave-one-out accuracy, architecture comparison and
//! score/correctness curves.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dialog::corpus::Sequence;
use crate::dialog::{argmax, mask_and_renormalize};
use crate::error::{Error, Result};
use crate::mix_seed;
use crate::nn::{
    backward_sequence, forward_sequence, init_model, softmax, AdaDeltaState, Direction, ModelKind,
    ModelParams,
};

pub const DEFAULT_HIDDEN: usize = 32;
pub const DEFAULT_MAX_EPOCHS: usize = 2000;
pub const LOO_SIZES: [usize; 5] = [1, 2, 5, 10, 20];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlConfig {
    pub max_epochs: usize,
    /// Also stop once the epoch loss has not improved on its best value by
    /// more than `plateau_tol` for this many epochs.
    pub plateau_epochs: Option<usize>,
    pub plateau_tol: f64,
}

impl Default for SlConfig {
    fn default() -> Self {
        SlConfig {
            max_epochs: DEFAULT_MAX_EPOCHS,
            plateau_epochs: None,
            plateau_tol: 1e-4,
        }
    }
}

impl SlConfig {
    pub fn with_plateau(epochs: usize) -> Self {
        SlConfig {
            plateau_epochs: Some(epochs),
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Reconstructed,
    Plateau,
    MaxEpochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub reconstructed: bool,
    pub stop: StopReason,
    /// Summed cross-entropy over the corpus, accumulated during each epoch.
    pub losses: Vec<f64>,
    pub wall_clock: Duration,
}

/// Masked, renormalised distributions at every step of `seq`.
pub fn masked_distributions(params: &ModelParams, seq: &Sequence) -> Result<Vec<Vec<f64>>> {
    forward_sequence(params, &seq.inputs)?
        .iter()
        .zip(&seq.masks)
        .map(|(z, m)| mask_and_renormalize(&softmax(z), m))
        .collect()
}

/// Greedy action at every step, with recorded history fed back in.
pub fn predict(params: &ModelParams, seq: &Sequence) -> Result<Vec<usize>> {
    Ok(masked_distributions(params, seq)?
        .iter()
        .map(|p| argmax(p))
        .collect())
}

fn check_targets(seqs: &[Sequence]) -> Result<()> {
    for (i, s) in seqs.iter().enumerate() {
        if s.inputs.len() != s.targets.len() || s.masks.len() != s.targets.len() {
            return Err(Error::InvalidArgument(format!(
                "sequence {i} has ragged fields"
            )));
        }
        for (t, (m, a)) in s.masks.iter().zip(&s.targets).enumerate() {
            if !m.allowed(*a) {
                return Err(Error::MaskedCorpusAction {
                    dialog: i,
                    step: t,
                    action: a.to_string(),
                });
            }
        }
    }
    Ok(())
}

/// Cross-entropy of the targets under the masked distributions, and its
/// gradient. Masked entries get no gradient.
pub fn sl_gradient(params: &ModelParams, seq: &Sequence) -> Result<(f64, ModelParams)> {
    let dists = masked_distributions(params, seq)?;
    let mut loss = 0.0;
    let upstream: Vec<Vec<f64>> = dists
        .iter()
        .zip(&seq.masks)
        .zip(&seq.targets)
        .map(|((p, m), &a)| {
            loss -= p[a].max(f64::MIN_POSITIVE).ln();
            let mut g: Vec<f64> = p
                .iter()
                .zip(m.iter())
                .map(|(pj, ok)| if ok { *pj } else { 0.0 })
                .collect();
            g[a] -= 1.0;
            g
        })
        .collect();
    Ok((loss, backward_sequence(params, &seq.inputs, &upstream)?))
}

pub fn corpus_loss(params: &ModelParams, seqs: &[Sequence]) -> Result<f64> {
    let mut total = 0.0;
    for s in seqs {
        for (p, a) in masked_distributions(params, s)?.iter().zip(&s.targets) {
            total -= p[*a].max(f64::MIN_POSITIVE).ln();
        }
    }
    Ok(total)
}

/// True iff greedy selection reproduces every target of every sequence.
pub fn reconstructs(params: &ModelParams, seqs: &[Sequence]) -> Result<bool> {
    for s in seqs {
        if predict(params, s)? != s.targets {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Trains until the corpus is reconstructed (or another stop rule fires).
pub fn train_sl(
    params: &mut ModelParams,
    opt: &mut AdaDeltaState,
    seqs: &[Sequence],
    cfg: &SlConfig,
) -> Result<TrainReport> {
    train_sl_observed(params, opt, seqs, cfg, &mut |_, _| true)
}

/// As [`train_sl`]; `observer(epoch, loss)` runs after every epoch and may
/// return false to cancel, in which case the parameters keep their
/// partially trained values and `Error::Cancelled` is returned.
pub fn train_sl_observed(
    params: &mut ModelParams,
    opt: &mut AdaDeltaState,
    seqs: &[Sequence],
    cfg: &SlConfig,
    observer: &mut dyn FnMut(usize, f64) -> bool,
) -> Result<TrainReport> {
    let started = Instant::now();
    check_targets(seqs)?;
    let mut report = TrainReport {
        epochs: 0,
        reconstructed: true,
        stop: StopReason::Reconstructed,
        losses: Vec::new(),
        wall_clock: Duration::ZERO,
    };
    if reconstructs(params, seqs)? {
        report.wall_clock = started.elapsed();
        return Ok(report);
    }
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    report.reconstructed = false;
    report.stop = StopReason::MaxEpochs;
    while report.epochs < cfg.max_epochs {
        let mut loss = 0.0;
        for s in seqs {
            let (l, g) = sl_gradient(params, s)?;
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient);
            }
            loss += l;
            opt.apply(params, &g, Direction::Descend)?;
        }
        report.epochs += 1;
        report.losses.push(loss);
        if !observer(report.epochs, loss) {
            return Err(Error::Cancelled);
        }
        if reconstructs(params, seqs)? {
            report.reconstructed = true;
            report.stop = StopReason::Reconstructed;
            break;
        }
        if loss < best - cfg.plateau_tol {
            best = loss;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if cfg.plateau_epochs.is_some_and(|p| since_best >= p) {
            report.stop = StopReason::Plateau;
            break;
        }
    }
    report.wall_clock = started.elapsed();
    Ok(report)
}

/// Fresh model plus its optimiser.
pub fn fresh_model(
    kind: ModelKind,
    input_dim: usize,
    hidden: usize,
    n_actions: usize,
    seed: u64,
) -> Result<(ModelParams, AdaDeltaState)> {
    let params = init_model(kind, input_dim, hidden, n_actions, seed)?;
    let opt = AdaDeltaState::new(&params);
    Ok((params, opt))
}

fn dims(seqs: &[Sequence]) -> Result<(usize, usize)> {
    let s = seqs
        .iter()
        .find(|s| !s.is_empty())
        .ok_or_else(|| Error::InvalidArgument("corpus has no turns".into()))?;
    Ok((s.inputs[0].len(), s.masks[0].len()))
}

/// Settings shared by the evaluation protocols.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub kind: ModelKind,
    pub hidden: usize,
    pub seed: u64,
    pub sl: SlConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            kind: ModelKind::Lstm,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
            sl: SlConfig::default(),
        }
    }
}

/// Per-turn and whole-dialog correctness of greedy predictions on held-out dialogs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub turns_correct: usize,
    pub turns: usize,
    pub dialogs_correct: usize,
    pub dialogs: usize,
}

impl Accuracy {
    pub fn of(params: &ModelParams, seqs: &[Sequence]) -> Result<Self> {
        let mut acc = Accuracy::default();
        for s in seqs {
            let pred = predict(params, s)?;
            let ok = pred.iter().zip(&s.targets).filter(|(p, t)| p == t).count();
            acc.turns_correct += ok;
            acc.turns += s.len();
            acc.dialogs_correct += usize::from(ok == s.len());
            acc.dialogs += 1;
        }
        Ok(acc)
    }

    pub fn turn_rate(&self) -> f64 {
        if self.turns == 0 {
            0.0
        } else {
            self.turns_correct as f64 / self.turns as f64
        }
    }

    pub fn dialog_rate(&self) -> f64 {
        if self.dialogs == 0 {
            0.0
        } else {
            self.dialogs_correct as f64 / self.dialogs as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooRow {
    pub size: usize,
    /// Mean over folds of the held-out dialog's per-turn accuracy.
    pub turn_accuracy: f64,
    /// Fraction of folds whose held-out dialog had no errors.
    pub dialog_accuracy: f64,
    pub folds: usize,
    pub mean_epochs: f64,
    /// Fraction of training runs that reconstructed their training subset.
    pub reconstructed: f64,
}

/// Leave-one-out: each dialog in turn is held out; the others are shuffled
/// once per fold and the first `size` of them form the training set, so
/// smaller sets are nested in larger ones.
pub fn loo_eval(seqs: &[Sequence], sizes: &[usize], cfg: &EvalConfig) -> Result<Vec<LooRow>> {
    let n = seqs.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "leave-one-out needs at least two dialogs".into(),
        ));
    }
    if let Some(bad) = sizes.iter().find(|s| **s == 0 || **s > n - 1) {
        return Err(Error::InvalidArgument(format!(
            "training size {bad} outside 1..={}",
            n - 1
        )));
    }
    check_targets(seqs)?;
    let (d, a) = dims(seqs)?;
    let jobs: Vec<(usize, usize)> = (0..n)
        .flat_map(|f| sizes.iter().map(move |s| (f, *s)))
        .collect();
    let results: Vec<(usize, Accuracy, usize, bool)> = jobs
        .par_iter()
        .map(|&(fold, size)| {
            let mut rest: Vec<usize> = (0..n).filter(|i| *i != fold).collect();
            rest.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
                cfg.seed,
                fold as u64,
            )));
            let train: Vec<Sequence> = rest[..size].iter().map(|i| seqs[*i].clone()).collect();
            let (mut params, mut opt) = fresh_model(
                cfg.kind,
                d,
                cfg.hidden,
                a,
                mix_seed(cfg.seed ^ 0x5eed, (fold * 1000 + size) as u64),
            )?;
            let report = train_sl(&mut params, &mut opt, &train, &cfg.sl)?;
            let acc = Accuracy::of(&params, std::slice::from_ref(&seqs[fold]))?;
            Ok((size, acc, report.epochs, report.reconstructed))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &size in sizes {
        let mut turn = 0.0;
        let mut dialog = 0.0;
        let mut epochs = 0.0;
        let mut rec = 0.0;
        let mut folds = 0;
        for (s, acc, e, ok) in &results {
            if *s != size {
                continue;
            }
            turn += acc.turn_rate();
            dialog += acc.dialog_rate();
            epochs += *e as f64;
            rec += f64::from(u8::from(*ok));
            folds += 1;
        }
        let f = folds as f64;
        rows.push(LooRow {
            size,
            turn_accuracy: turn / f,
            dialog_accuracy: dialog / f,
            folds,
            mean_epochs: epochs / f,
            reconstructed: rec / f,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchCell {
    pub kind: ModelKind,
    pub dialogs: usize,
    pub reconstructed: bool,
    pub epochs: usize,
    pub stop: StopReason,
    pub final_loss: f64,
}

/// Trains each architecture on the first `n` dialogs for every `n` in
/// `sizes`, stopping on reconstruction or on a loss plateau.
pub fn compare_architectures(
    seqs: &[Sequence],
    kinds: &[ModelKind],
    sizes: &[usize],
    cfg: &EvalConfig,
) -> Result<Vec<ArchCell>> {
    check_targets(seqs)?;
    let (d, a) = dims(seqs)?;
    if let Some(bad) = sizes.iter().find(|s| **s == 0 || **s > seqs.len()) {
        return Err(Error::InvalidArgument(format!(
            "size {bad} outside 1..={}",
            seqs.len()
        )));
    }
    let jobs: Vec<(ModelKind, usize)> = kinds
        .iter()
        .flat_map(|k| sizes.iter().map(move |s| (*k, *s)))
        .collect();
    jobs.par_iter()
        .map(|&(kind, n)| {
            let (mut params, mut opt) =
                fresh_model(kind, d, cfg.hidden, a, mix_seed(cfg.seed, n as u64))?;
            let report = train_sl(&mut params, &mut opt, &seqs[..n], &cfg.sl)?;
            Ok(ArchCell {
                kind,
                dialogs: n,
                reconstructed: report.reconstructed,
                epochs: report.epochs,
                stop: report.stop,
                final_loss: corpus_loss(&params, &seqs[..n])?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredTurn {
    /// Masked probability of the greedy action.
    pub score: f64,
    pub correct: bool,
    pub repeat: usize,
    pub dialog: usize,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub turns: Vec<ScoredTurn>,
    /// (false-positive rate, true-positive rate), from the strictest threshold down.
    pub points: Vec<(f64, f64)>,
    /// `None` when every turn is correct or every turn is wrong.
    pub auc: Option<f64>,
}

impl RocResult {
    /// Fraction of the `k` lowest-scored turns that were predicted wrongly.
    pub fn lowest_incorrect_fraction(&self, k: usize) -> f64 {
        let mut sorted: Vec<&ScoredTurn> = self.turns.iter().collect();
        sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
        let k = k.min(sorted.len());
        if k == 0 {
            return 0.0;
        }
        sorted[..k].iter().filter(|t| !t.correct).count() as f64 / k as f64
    }
}

/// ROC of "score >= r predicts correct": TPR counts correct turns above the
/// threshold, FPR counts incorrect ones. Tied scores move together.
pub fn roc_curve(scored: &[(f64, bool)]) -> (Vec<(f64, f64)>, Option<f64>) {
    let pos = scored.iter().filter(|(_, c)| *c).count() as f64;
    let neg = scored.len() as f64 - pos;
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let fpr = if neg > 0.0 { fp / neg } else { 0.0 };
        let tpr = if pos > 0.0 { tp / pos } else { 0.0 };
        points.push((fpr, tpr));
    }
    let auc = (pos > 0.0 && neg > 0.0).then(|| {
        points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    });
    (points, auc)
}

/// Repeated random splits: train on `n_train` dialogs, score every turn of
/// `n_test` others.
pub fn roc_data(
    seqs: &[Sequence],
    repeats: usize,
    n_train: usize,
    n_test: usize,
    cfg: &EvalConfig,
) -> Result<RocResult> {
    if n_train == 0 || n_train + n_test > seqs.len() {
        return Err(Error::InvalidArgument(format!(
            "split {n_train}/{n_test} does not fit {} dialogs",
            seqs.len()
        )));
    }
    check_targets(seqs)?;
    let (d, a) = dims(seqs)?;
    let per_repeat: Vec<Vec<ScoredTurn>> = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let mut order: Vec<usize> = (0..seqs.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, r as u64)));
            let train: Vec<Sequence> = order[..n_train].iter().map(|i| seqs[*i].clone()).collect();
            let (mut params, mut opt) = fresh_model(
                cfg.kind,
                d,
                cfg.hidden,
                a,
                mix_seed(cfg.seed ^ 0xa11ce, r as u64),
            )?;
            train_sl(&mut params, &mut opt, &train, &cfg.sl)?;
            let mut out = Vec::new();
            for &di in &order[n_train..n_train + n_test] {
                let s = &seqs[di];
                for (step, (p, t)) in masked_distributions(&params, s)?
                    .iter()
                    .zip(&s.targets)
                    .enumerate()
                {
                    let g = argmax(p);
                    out.push(ScoredTurn {
                        score: p[g],
                        correct: g == *t,
                        repeat: r,
                        dialog: di,
                        step,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let turns: Vec<ScoredTurn> = per_repeat.into_iter().flatten().collect();
    let pairs: Vec<(f64, bool)> = turns.iter().map(|t| (t.score, t.correct)).collect();
    let (points, auc) = roc_curve(&pairs);
    Ok(RocResult { turns, points, auc })
}
