//! Policy-gradient training against the simulated user, with an
//! importance-weighted baseline and a supervised guard that keeps the
//! training dialogs reconstructed.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dialog::corpus::Sequence;
use crate::dialog::{
    run_dialog, ActionMask, Dialog, DomainHooks, Engine, ModelController, SelectionMode,
    DEFAULT_MAX_TURNS,
};
use crate::error::{Error, Result};
use crate::mix_seed;
use crate::nn::{backward_sequence, AdaDeltaState, Direction, ModelKind, ModelParams};
use crate::phone::PhoneDomain;
use crate::sl::{
    fresh_model, masked_distributions, reconstructs, train_sl, SlConfig, DEFAULT_HIDDEN,
};
use crate::usersim::{SimParams, SimulatedUser};

pub const DEFAULT_GAMMA: f64 = 0.95;
pub const BASELINE_CAPACITY: usize = 100;
pub const WEIGHT_CLIP: f64 = 10.0;
/// Added to the chosen action's probability before taking the log.
pub const PROB_EPS: f64 = 1e-8;

/// gamma^(T-1) * reward.
pub fn compute_return(reward: f64, decisions: usize, gamma: f64) -> Result<f64> {
    if decisions == 0 {
        return Err(Error::InvalidArgument(
            "an episode needs at least one decision".into(),
        ));
    }
    Ok(gamma.powi(decisions as i32 - 1) * reward)
}

/// One sampled dialog, kept in the form needed to replay it through another policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub inputs: Vec<Vec<f64>>,
    pub masks: Vec<ActionMask>,
    /// Probability the behaviour policy gave each chosen action.
    pub behavior: Vec<f64>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub ret: f64,
}

impl Episode {
    pub fn from_dialog(dialog: &Dialog, gamma: f64) -> Result<Self> {
        let reward = if dialog.success { 1.0 } else { 0.0 };
        Ok(Episode {
            inputs: dialog.records.iter().map(|r| r.features.clone()).collect(),
            masks: dialog.records.iter().map(|r| r.mask.clone()).collect(),
            behavior: dialog.records.iter().map(|r| r.behavior_prob).collect(),
            actions: dialog.actions(),
            reward,
            ret: compute_return(reward, dialog.records.len(), gamma)?,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn behavior_prob(&self) -> f64 {
        self.behavior.iter().product()
    }

    fn as_sequence(&self) -> Sequence {
        Sequence {
            inputs: self.inputs.clone(),
            masks: self.masks.clone(),
            targets: self.actions.clone(),
        }
    }
}

/// The most recent episodes, oldest evicted first.
#[derive(Clone, Debug)]
pub struct BaselineBuffer {
    episodes: VecDeque<Episode>,
    capacity: usize,
}

impl Default for BaselineBuffer {
    fn default() -> Self {
        Self::new(BASELINE_CAPACITY)
    }
}

impl BaselineBuffer {
    pub fn new(capacity: usize) -> Self {
        BaselineBuffer {
            episodes: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, episode: Episode) {
        if self.capacity == 0 {
            return;
        }
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }
}

/// Importance weight of `episode` under `params`, clipped to [0, WEIGHT_CLIP].
pub fn importance_weight(params: &ModelParams, episode: &Episode) -> Result<f64> {
    let dists = masked_distributions(params, &episode.as_sequence())?;
    let mut w = 1.0;
    for ((p, a), b) in dists.iter().zip(&episode.actions).zip(&episode.behavior) {
        w *= p[*a] / b;
    }
    Ok(if w.is_finite() {
        w.clamp(0.0, WEIGHT_CLIP)
    } else {
        WEIGHT_CLIP
    })
}

/// Weighted importance sampling estimate of the current policy's return
/// from the buffered episodes. Zero when the buffer is empty or every
/// weight vanishes.
pub fn estimate_baseline(buffer: &BaselineBuffer, params: &ModelParams) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for ep in buffer.iter() {
        let w = importance_weight(params, ep)?;
        num += w * ep.ret;
        den += w;
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// Sum over steps of the gradient of log(p'[a] + eps), where p' is the
/// masked, renormalised distribution.
pub fn log_policy_gradient(params: &ModelParams, episode: &Episode) -> Result<ModelParams> {
    let dists = masked_distributions(params, &episode.as_sequence())?;
    let upstream: Vec<Vec<f64>> = dists
        .iter()
        .zip(&episode.masks)
        .zip(&episode.actions)
        .map(|((p, m), &a)| {
            let k = p[a] / (p[a] + PROB_EPS);
            let mut g: Vec<f64> = p
                .iter()
                .zip(m.iter())
                .map(|(pj, ok)| if ok { -k * pj } else { 0.0 })
                .collect();
            g[a] += k;
            g
        })
        .collect();
    backward_sequence(params, &episode.inputs, &upstream)
}

/// Ascends alpha * (R - b) * grad log pi through AdaDelta. Returns false
/// when the scale is zero and nothing changed. A non-finite gradient
/// leaves both model and optimiser untouched.
pub fn policy_gradient_update(
    params: &mut ModelParams,
    opt: &mut AdaDeltaState,
    episode: &Episode,
    baseline: f64,
    alpha: f64,
) -> Result<bool> {
    let scale = alpha * (episode.ret - baseline);
    if scale == 0.0 || episode.is_empty() {
        return Ok(false);
    }
    let mut g = log_policy_gradient(params, episode)?;
    g.scale(scale);
    if !g.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    opt.apply(params, &g, Direction::Ascend)?;
    Ok(true)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardOutcome {
    pub updated: bool,
    /// Supervised epochs needed to restore reconstruction (0 if none).
    pub repair_epochs: usize,
}

/// Policy-gradient step followed by supervised repair on `corpus` if the
/// step broke reconstruction. If repair fails the model and optimiser are
/// rolled back and `RepairFailed` is returned.
pub fn guarded_update(
    params: &mut ModelParams,
    opt: &mut AdaDeltaState,
    episode: &Episode,
    corpus: &[Sequence],
    baseline: f64,
    alpha: f64,
    sl: &SlConfig,
) -> Result<GuardOutcome> {
    let saved = (params.clone(), opt.clone());
    let updated = policy_gradient_update(params, opt, episode, baseline, alpha)?;
    let mut out = GuardOutcome {
        updated,
        repair_epochs: 0,
    };
    if corpus.is_empty() || !updated || reconstructs(params, corpus)? {
        return Ok(out);
    }
    let report = train_sl(
        params,
        opt,
        corpus,
        &SlConfig {
            plateau_epochs: None,
            ..*sl
        },
    )?;
    if !report.reconstructed {
        (*params, *opt) = saved;
        return Err(Error::RepairFailed(report.epochs));
    }
    out.repair_epochs = report.epochs;
    Ok(out)
}

/// Fraction of `seeds.len()` simulated dialogs the frozen greedy policy completes.
pub fn evaluate_tcr(
    engine: &Engine<PhoneDomain>,
    params: &ModelParams,
    sim: &SimParams,
    seeds: &[u64],
    max_turns: usize,
) -> Result<f64> {
    if seeds.is_empty() {
        return Ok(0.0);
    }
    let wins: usize = seeds
        .par_iter()
        .map(|&s| {
            let mut user = SimulatedUser::new(engine.domain(), *sim, s);
            let mut ctl =
                ModelController::new(params, SelectionMode::Greedy, ChaCha8Rng::seed_from_u64(0));
            let (d, _) = run_dialog(engine, &mut ctl, &mut user, max_turns)?;
            Ok(usize::from(d.success))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(wins as f64 / seeds.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    /// Corpus dialogs used for pre-training and as the guard set.
    pub n_sl: usize,
    pub n_rl_dialogs: usize,
    pub runs: usize,
    pub eval_every: usize,
    pub eval_dialogs: usize,
    pub seed: u64,
    pub alpha: f64,
    pub gamma: f64,
    pub kind: ModelKind,
    pub hidden: usize,
    pub max_turns: usize,
    pub sim: SimParams,
    pub sl: SlConfig,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            n_sl: 0,
            n_rl_dialogs: 2000,
            runs: 10,
            eval_every: 10,
            eval_dialogs: 500,
            seed: 0,
            alpha: 1.0,
            gamma: DEFAULT_GAMMA,
            kind: ModelKind::Lstm,
            hidden: DEFAULT_HIDDEN,
            max_turns: DEFAULT_MAX_TURNS,
            sim: SimParams::default(),
            sl: SlConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlRun {
    pub run: usize,
    /// Corpus indices used for pre-training.
    pub sl_dialogs: Vec<usize>,
    /// TCR at each checkpoint.
    pub tcr: Vec<f64>,
    pub repairs: usize,
    pub rejected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlCurves {
    pub n_sl: usize,
    /// RL dialogs completed at each checkpoint; starts at 0.
    pub checkpoints: Vec<usize>,
    pub runs: Vec<RlRun>,
    pub mean: Vec<f64>,
    /// Population standard deviation across runs.
    pub stddev: Vec<f64>,
}

pub type ProgressFn<'a> = dyn Fn(usize, usize) -> bool + Sync + 'a;

/// Runs `cfg.runs` independent pre-train-then-RL experiments.
pub fn rl_experiment(
    engine: &Engine<PhoneDomain>,
    corpus: &[Sequence],
    cfg: &RlConfig,
) -> Result<RlCurves> {
    rl_experiment_observed(engine, corpus, cfg, &|_, _| true)
}

/// As [`rl_experiment`]; `progress(run, dialogs_done)` is called at every
/// checkpoint and may return false to cancel.
pub fn rl_experiment_observed(
    engine: &Engine<PhoneDomain>,
    corpus: &[Sequence],
    cfg: &RlConfig,
    progress: &ProgressFn,
) -> Result<RlCurves> {
    if cfg.n_sl > corpus.len() {
        return Err(Error::InvalidArgument(format!(
            "n_sl {} exceeds corpus of {}",
            cfg.n_sl,
            corpus.len()
        )));
    }
    if cfg.eval_every == 0 || cfg.runs == 0 {
        return Err(Error::InvalidArgument(
            "eval_every and runs must be positive".into(),
        ));
    }
    cfg.sim.validate()?;
    let layout = engine.domain().layout();
    let mut checkpoints = vec![0];
    let mut k = cfg.eval_every;
    while k < cfg.n_rl_dialogs {
        checkpoints.push(k);
        k += cfg.eval_every;
    }
    if cfg.n_rl_dialogs > 0 {
        checkpoints.push(cfg.n_rl_dialogs);
    }
    let eval_seeds: Vec<u64> = (0..cfg.eval_dialogs as u64)
        .map(|i| mix_seed(cfg.seed ^ 0xe7a1, i))
        .collect();
    let runs: Vec<RlRun> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| {
            let run_seed = mix_seed(cfg.seed, run as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
            let mut order: Vec<usize> = (0..corpus.len()).collect();
            order.shuffle(&mut rng);
            let sl_dialogs: Vec<usize> = order[..cfg.n_sl].to_vec();
            let guard: Vec<Sequence> = sl_dialogs.iter().map(|i| corpus[*i].clone()).collect();
            let (mut params, mut opt) = fresh_model(
                cfg.kind,
                layout.dim(),
                cfg.hidden,
                layout.actions,
                mix_seed(run_seed, 1),
            )?;
            if !guard.is_empty() {
                train_sl(&mut params, &mut opt, &guard, &cfg.sl)?;
            }
            let mut buffer = BaselineBuffer::default();
            let mut tcr = Vec::with_capacity(checkpoints.len());
            let mut repairs = 0;
            let mut rejected = 0;
            tcr.push(evaluate_tcr(
                engine,
                &params,
                &cfg.sim,
                &eval_seeds,
                cfg.max_turns,
            )?);
            for i in 0..cfg.n_rl_dialogs {
                let dialog = {
                    let mut user = SimulatedUser::new(
                        engine.domain(),
                        cfg.sim,
                        mix_seed(run_seed, 1000 + i as u64),
                    );
                    let ctl_rng =
                        ChaCha8Rng::seed_from_u64(mix_seed(run_seed, 1_000_000 + i as u64));
                    let mut ctl = ModelController::new(&params, SelectionMode::Sample, ctl_rng);
                    run_dialog(engine, &mut ctl, &mut user, cfg.max_turns)?.0
                };
                if !dialog.records.is_empty() {
                    let ep = Episode::from_dialog(&dialog, cfg.gamma)?;
                    let b = estimate_baseline(&buffer, &params)?;
                    match guarded_update(&mut params, &mut opt, &ep, &guard, b, cfg.alpha, &cfg.sl)
                    {
                        Ok(o) => repairs += usize::from(o.repair_epochs > 0),
                        Err(Error::RepairFailed(_) | Error::NonFiniteGradient) => rejected += 1,
                        Err(e) => return Err(e),
                    }
                    buffer.push(ep);
                }
                let done = i + 1;
                if checkpoints.binary_search(&done).is_ok() {
                    tcr.push(evaluate_tcr(
                        engine,
                        &params,
                        &cfg.sim,
                        &eval_seeds,
                        cfg.max_turns,
                    )?);
                    if !progress(run, done) {
                        return Err(Error::Cancelled);
                    }
                }
            }
            Ok(RlRun {
                run,
                sl_dialogs,
                tcr,
                repairs,
                rejected,
            })
        })
        .collect::<Result<_>>()?;
    let n = runs.len() as f64;
    let mean: Vec<f64> = (0..checkpoints.len())
        .map(|c| runs.iter().map(|r| r.tcr[c]).sum::<f64>() / n)
        .collect();
    let stddev = mean
        .iter()
        .enumerate()
        .map(|(c, m)| (runs.iter().map(|r| (r.tcr[c] - m).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    Ok(RlCurves {
        n_sl: cfg.n_sl,
        checkpoints,
        runs,
        mean,
        stddev,
    })
}
