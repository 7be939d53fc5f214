//! Live chat sessions over a shared model, with on-line correction,
//! an uncertainty queue, background jobs and model/corpus management.
//! Transport-free; the HTTP server wraps this.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialog::corpus::{replay_corpus, Corpus, CorpusDialog, Line, Sequence};
use crate::dialog::{
    DialogState, DomainHooks, Engine, ExecutedAction, ModelController, SelectionMode, TurnRecord,
};
use crate::error::{Error, Result};
use crate::mix_seed;
use crate::nn::{
    read_checkpoint, write_checkpoint, AdaDeltaState, ModelKind, ModelParams, ModelState,
};
use crate::phone::{load_corpus, PhoneDomain, PhoneStore};
use crate::rl::{rl_experiment_observed, RlConfig};
use crate::sl::{
    fresh_model, loo_eval, reconstructs, train_sl, train_sl_observed, EvalConfig, SlConfig,
    DEFAULT_HIDDEN,
};
use crate::usersim::SimParams;

pub const ENV_PREFIX: &str = "DIALOGCTL_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Bundled corpus when unset.
    pub corpus_path: Option<PathBuf>,
    /// Loaded at start-up if the file exists; written by `save_checkpoint`.
    pub checkpoint_path: Option<PathBuf>,
    pub seed: u64,
    pub kind: ModelKind,
    pub hidden: usize,
    pub sl: SlConfig,
    pub sim: SimParams,
    /// Turns kept for the uncertainty queue.
    pub queue_capacity: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            corpus_path: None,
            checkpoint_path: None,
            seed: 0,
            kind: ModelKind::Lstm,
            hidden: DEFAULT_HIDDEN,
            sl: SlConfig::default(),
            sim: SimParams::default(),
            queue_capacity: 1000,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ServiceConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.sim.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Applies `DIALOGCTL_*` overrides: HOST, PORT, CORPUS, CHECKPOINT,
    /// SEED, HIDDEN, and SIM_<PARAM> for any simulator probability
    /// (e.g. `DIALOGCTL_SIM_P_OOV_NAME`). Other variables are ignored.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_PREFIX}{key}: cannot parse `{v}`")))
        }
        for (k, v) in vars {
            let Some(key) = k.as_ref().strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let v = v.as_ref();
            match key {
                "HOST" => self.host = v.to_string(),
                "PORT" => self.port = num(key, v)?,
                "CORPUS" => self.corpus_path = Some(PathBuf::from(v)),
                "CHECKPOINT" => self.checkpoint_path = Some(PathBuf::from(v)),
                "SEED" => self.seed = num(key, v)?,
                "HIDDEN" => self.hidden = num(key, v)?,
                _ => {
                    if let Some(p) = key.strip_prefix("SIM_") {
                        self.sim.set(&p.to_ascii_lowercase(), num(key, v)?)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn addr(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

#[derive(Clone, Debug)]
pub struct ModelSnapshot {
    pub params: Arc<ModelParams>,
    /// Bumped on every replacement.
    pub version: u64,
}

/// Turn kept for uncertainty sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub session: u64,
    pub turn: usize,
    pub action: usize,
    pub action_name: String,
    /// Masked probability of the chosen action.
    pub score: f64,
    pub user_text: Option<String>,
    pub model_version: u64,
}

/// Bounded history of recent turns, queried lowest score first.
#[derive(Clone, Debug, Default)]
pub struct UncertaintyQueue {
    entries: VecDeque<QueueEntry>,
    capacity: usize,
}

impl UncertaintyQueue {
    pub fn new(capacity: usize) -> Self {
        UncertaintyQueue {
            entries: VecDeque::new(),
            capacity,
        }
    }

    pub fn push(&mut self, entry: QueueEntry) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Up to `limit` entries in ascending score order; ties keep arrival order.
    pub fn lowest(&self, limit: usize) -> Vec<QueueEntry> {
        let mut v: Vec<&QueueEntry> = self.entries.iter().collect();
        v.sort_by(|a, b| a.score.total_cmp(&b.score));
        v.into_iter().take(limit).cloned().collect()
    }

    fn drop_session(&mut self, session: u64) {
        self.entries.retain(|e| e.session != session);
    }
}

struct Session {
    mode: SelectionMode,
    state: DialogState<PhoneStore>,
    transcript: Vec<TurnRecord>,
    rng: ChaCha8Rng,
    model: ModelSnapshot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: u64,
    pub mode: SelectionMode,
    pub closed: bool,
    pub turns: usize,
    pub model_version: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnResponse {
    pub session: u64,
    /// Index of the first new transcript entry.
    pub first_turn: usize,
    pub actions: Vec<ExecutedAction>,
    pub closed: bool,
    pub model_version: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionRequest {
    pub session: u64,
    /// Index into the session transcript.
    pub turn: usize,
    pub action: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub epochs: usize,
    pub wall_clock_ms: f64,
    pub reconstructed: bool,
    pub model_version: u64,
    pub corpus_dialogs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobSpec {
    /// Retrain the live model from scratch on the current corpus.
    TrainSl,
    LooEval {
        #[serde(default = "default_loo_sizes")]
        sizes: Vec<usize>,
        #[serde(default)]
        seed: u64,
    },
    RlExperiment(RlConfig),
}

fn default_loo_sizes() -> Vec<usize> {
    crate::sl::LOO_SIZES.to_vec()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Finished,
    Failed,
    Cancelled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JobEventKind {
    Progress {
        done: usize,
        total: usize,
        message: String,
    },
    Finished {
        result: serde_json::Value,
    },
    Failed {
        message: String,
    },
    Cancelled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobEvent {
    /// Position in the job's event stream, from 0.
    pub seq: usize,
    #[serde(flatten)]
    pub kind: JobEventKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: u64,
    pub spec: JobSpec,
    pub state: JobState,
    pub events: Vec<JobEvent>,
}

struct Job {
    spec: JobSpec,
    cancel: AtomicBool,
    log: Mutex<(JobState, Vec<JobEvent>)>,
    changed: Condvar,
}

impl Job {
    fn emit(&self, kind: JobEventKind) {
        let mut log = lock(&self.log);
        match kind {
            JobEventKind::Finished { .. } => log.0 = JobState::Finished,
            JobEventKind::Failed { .. } => log.0 = JobState::Failed,
            JobEventKind::Cancelled => log.0 = JobState::Cancelled,
            JobEventKind::Progress { .. } => {}
        }
        let seq = log.1.len();
        log.1.push(JobEvent { seq, kind });
        self.changed.notify_all();
    }

    fn progress(&self, done: usize, total: usize, message: impl Into<String>) -> bool {
        self.emit(JobEventKind::Progress {
            done,
            total,
            message: message.into(),
        });
        !self.cancel.load(Ordering::SeqCst)
    }
}

/// State only the single model writer touches.
struct Writer {
    opt: AdaDeltaState,
    corpus: Corpus,
    seqs: Vec<Sequence>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

pub struct Service {
    config: ServiceConfig,
    engine: Engine<PhoneDomain>,
    model: RwLock<ModelSnapshot>,
    writer: Mutex<Writer>,
    sessions: Mutex<HashMap<u64, Arc<Mutex<Session>>>>,
    next_session: AtomicU64,
    queue: Mutex<UncertaintyQueue>,
    jobs: Mutex<HashMap<u64, Arc<Job>>>,
    next_job: AtomicU64,
}

impl Service {
    /// Loads the corpus and either the configured checkpoint or a model
    /// freshly trained to reconstruct the corpus.
    pub fn new(config: ServiceConfig) -> Result<Arc<Self>> {
        config.sim.validate()?;
        let engine = Engine::new(Arc::new(PhoneDomain::builtin()));
        let corpus = match &config.corpus_path {
            Some(p) => Corpus::load(p)?,
            None => load_corpus(),
        };
        let seqs = replay_corpus(&engine, &corpus)?;
        let layout = engine.domain().layout();
        let (params, opt) = match config.checkpoint_path.as_ref().filter(|p| p.exists()) {
            Some(p) => {
                let params = read_checkpoint(BufReader::new(File::open(p)?))?;
                check_layout(&params, layout.dim(), layout.actions)?;
                let opt = AdaDeltaState::new(&params);
                (params, opt)
            }
            None => {
                let (mut params, mut opt) = fresh_model(
                    config.kind,
                    layout.dim(),
                    config.hidden,
                    layout.actions,
                    config.seed,
                )?;
                if !seqs.is_empty() {
                    let report = train_sl(&mut params, &mut opt, &seqs, &config.sl)?;
                    if !report.reconstructed {
                        return Err(Error::RepairFailed(report.epochs));
                    }
                }
                (params, opt)
            }
        };
        Ok(Arc::new(Service {
            queue: Mutex::new(UncertaintyQueue::new(config.queue_capacity)),
            config,
            engine,
            model: RwLock::new(ModelSnapshot {
                params: Arc::new(params),
                version: 1,
            }),
            writer: Mutex::new(Writer { opt, corpus, seqs }),
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(1),
            jobs: Mutex::new(HashMap::new()),
            next_job: AtomicU64::new(1),
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn engine(&self) -> &Engine<PhoneDomain> {
        &self.engine
    }

    pub fn model(&self) -> ModelSnapshot {
        self.model.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    fn swap_model(&self, params: ModelParams) -> u64 {
        let mut m = self.model.write().unwrap_or_else(|p| p.into_inner());
        m.version += 1;
        m.params = Arc::new(params);
        m.version
    }

    fn writer(&self) -> Result<MutexGuard<'_, Writer>> {
        match self.writer.try_lock() {
            Ok(w) => Ok(w),
            Err(std::sync::TryLockError::Poisoned(p)) => Ok(p.into_inner()),
            Err(std::sync::TryLockError::WouldBlock) => Err(Error::Busy),
        }
    }

    fn session(&self, id: u64) -> Result<Arc<Mutex<Session>>> {
        lock(&self.sessions)
            .get(&id)
            .cloned()
            .ok_or(Error::NoSuchSession(id))
    }

    pub fn create_session(&self, mode: SelectionMode) -> Result<u64> {
        let id = self.next_session.fetch_add(1, Ordering::SeqCst);
        let model = self.model();
        let session = Session {
            mode,
            state: self.engine.start(ModelState::initial(&model.params)),
            transcript: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(mix_seed(self.config.seed, id)),
            model,
        };
        lock(&self.sessions).insert(id, Arc::new(Mutex::new(session)));
        Ok(id)
    }

    pub fn session_info(&self, id: u64) -> Result<SessionInfo> {
        let s = self.session(id)?;
        let s = lock(&s);
        Ok(SessionInfo {
            id,
            mode: s.mode,
            closed: s.state.closed,
            turns: s.transcript.len(),
            model_version: s.model.version,
        })
    }

    pub fn list_sessions(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = lock(&self.sessions).keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    /// Runs one user turn against the latest model.
    pub fn post_utterance(&self, id: u64, text: &str) -> Result<TurnResponse> {
        let s = self.session(id)?;
        let mut s = lock(&s);
        if s.state.closed {
            return Err(Error::SessionClosed);
        }
        s.model = self.model();
        let Session {
            mode,
            state,
            transcript,
            rng,
            model,
        } = &mut *s;
        let first_turn = transcript.len();
        let mut ctl = ModelController::new(&model.params, *mode, rng);
        let actions = self.engine.run_turn(state, &mut ctl, text, transcript)?;
        let mut q = lock(&self.queue);
        for (i, r) in transcript.iter().enumerate().skip(first_turn) {
            q.push(QueueEntry {
                session: id,
                turn: i,
                action: r.action,
                action_name: self.engine.domain().templates()[r.action].name.clone(),
                score: r.behavior_prob,
                user_text: r.user_text.clone(),
                model_version: model.version,
            });
        }
        Ok(TurnResponse {
            session: id,
            first_turn,
            actions,
            closed: state.closed,
            model_version: model.version,
        })
    }

    pub fn transcript(&self, id: u64) -> Result<Vec<TurnRecord>> {
        let s = self.session(id)?;
        let t = lock(&s).transcript.clone();
        Ok(t)
    }

    /// Forgets the session and its queued turns.
    pub fn close_session(&self, id: u64) -> Result<()> {
        lock(&self.sessions)
            .remove(&id)
            .ok_or(Error::NoSuchSession(id))?;
        lock(&self.queue).drop_session(id);
        Ok(())
    }

    pub fn uncertainty_queue(&self, limit: usize) -> Vec<QueueEntry> {
        lock(&self.queue).lowest(limit)
    }

    /// Saves the transcript up to `req.turn`, with the action there replaced,
    /// as a new training dialog and retrains to reconstruction. Nothing
    /// changes if the retrain fails.
    pub fn submit_correction(&self, req: CorrectionRequest) -> Result<RetrainReport> {
        let dialog = {
            let s = self.session(req.session)?;
            let s = lock(&s);
            let record = s.transcript.get(req.turn).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "turn {} outside transcript of {}",
                    req.turn,
                    s.transcript.len()
                ))
            })?;
            if req.action >= record.mask.len() || !record.mask.allowed(req.action) {
                return Err(Error::InvalidArgument(format!(
                    "action {} is masked at turn {}",
                    req.action, req.turn
                )));
            }
            prefix_dialog(
                self.engine.domain(),
                &s.transcript[..=req.turn],
                req.action,
                req.session,
            )
        };
        let mut w = self.writer()?;
        let mut corpus = w.corpus.clone();
        corpus.dialogs.push(dialog);
        self.retrain_on(&mut w, corpus, None)
    }

    fn retrain_on(
        &self,
        w: &mut Writer,
        corpus: Corpus,
        fresh: Option<&Job>,
    ) -> Result<RetrainReport> {
        let started = Instant::now();
        let seqs = replay_corpus(&self.engine, &corpus)?;
        let (mut params, mut opt) = match fresh {
            Some(_) => {
                let layout = self.engine.domain().layout();
                fresh_model(
                    self.config.kind,
                    layout.dim(),
                    self.config.hidden,
                    layout.actions,
                    self.config.seed,
                )?
            }
            None => ((*self.model().params).clone(), w.opt.clone()),
        };
        let report = match fresh {
            Some(job) => {
                let total = self.config.sl.max_epochs;
                train_sl_observed(
                    &mut params,
                    &mut opt,
                    &seqs,
                    &self.config.sl,
                    &mut |e, loss| e % 10 != 0 || job.progress(e, total, format!("loss {loss:.4}")),
                )?
            }
            None => train_sl(&mut params, &mut opt, &seqs, &self.config.sl)?,
        };
        if !report.reconstructed {
            return Err(Error::RepairFailed(report.epochs));
        }
        let corpus_dialogs = corpus.len();
        w.corpus = corpus;
        w.seqs = seqs;
        w.opt = opt;
        let model_version = self.swap_model(params);
        Ok(RetrainReport {
            epochs: report.epochs,
            wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
            reconstructed: true,
            model_version,
            corpus_dialogs,
        })
    }

    pub fn corpus_text(&self) -> String {
        lock(&self.writer).corpus.to_text()
    }

    /// Replaces the corpus and retrains from the current model.
    pub fn put_corpus(&self, text: &str) -> Result<RetrainReport> {
        let corpus = Corpus::parse(text)?;
        let mut w = self.writer()?;
        self.retrain_on(&mut w, corpus, None)
    }

    /// True iff the live model reconstructs the live corpus.
    pub fn reconstructs_corpus(&self) -> Result<bool> {
        let w = lock(&self.writer);
        reconstructs(&self.model().params, &w.seqs)
    }

    /// Writes the live model to `path`, or to the configured checkpoint path.
    pub fn save_checkpoint(&self, path: Option<&Path>) -> Result<PathBuf> {
        let path = self.checkpoint_target(path)?;
        let model = self.model();
        let mut f = BufWriter::new(File::create(&path)?);
        write_checkpoint(&model.params, &mut f)?;
        std::io::Write::flush(&mut f)?;
        Ok(path)
    }

    /// Replaces the live model. The corpus is left as is and need not be
    /// reconstructed by the loaded model until the next retrain.
    pub fn load_checkpoint(&self, path: Option<&Path>) -> Result<u64> {
        let path = self.checkpoint_target(path)?;
        let params = read_checkpoint(BufReader::new(File::open(&path)?))?;
        let layout = self.engine.domain().layout();
        check_layout(&params, layout.dim(), layout.actions)?;
        let mut w = self.writer()?;
        w.opt = AdaDeltaState::new(&params);
        Ok(self.swap_model(params))
    }

    fn checkpoint_target(&self, path: Option<&Path>) -> Result<PathBuf> {
        path.map(Path::to_path_buf)
            .or_else(|| self.config.checkpoint_path.clone())
            .ok_or_else(|| Error::Config("no checkpoint path given or configured".into()))
    }

    /// Starts a background job. Only one job runs at a time, and it holds
    /// the model writer for its whole run.
    pub fn start_job(self: &Arc<Self>, spec: JobSpec) -> Result<u64> {
        if let JobSpec::RlExperiment(cfg) = &spec {
            cfg.sim.validate()?;
        }
        let guard = self.writer()?;
        drop(guard);
        let mut jobs = lock(&self.jobs);
        if jobs.values().any(|j| lock(&j.log).0 == JobState::Running) {
            return Err(Error::Busy);
        }
        let id = self.next_job.fetch_add(1, Ordering::SeqCst);
        let job = Arc::new(Job {
            spec,
            cancel: AtomicBool::new(false),
            log: Mutex::new((JobState::Running, Vec::new())),
            changed: Condvar::new(),
        });
        jobs.insert(id, Arc::clone(&job));
        let svc = Arc::clone(self);
        // Take the writer before returning so a following correction sees Busy.
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let w = lock(&svc.writer);
            let _ = tx.send(());
            let outcome = svc.run_job(&job, w);
            match outcome {
                Ok(result) => job.emit(JobEventKind::Finished { result }),
                Err(Error::Cancelled) => job.emit(JobEventKind::Cancelled),
                Err(e) => job.emit(JobEventKind::Failed {
                    message: e.to_string(),
                }),
            }
        });
        drop(jobs);
        let _ = rx.recv();
        Ok(id)
    }

    fn run_job(&self, job: &Job, mut w: MutexGuard<'_, Writer>) -> Result<serde_json::Value> {
        match &job.spec {
            JobSpec::TrainSl => {
                let corpus = w.corpus.clone();
                let report = self.retrain_on(&mut w, corpus, Some(job))?;
                Ok(to_json(&report))
            }
            JobSpec::LooEval { sizes, seed } => {
                let cfg = EvalConfig {
                    kind: self.config.kind,
                    hidden: self.config.hidden,
                    seed: *seed,
                    sl: self.config.sl,
                };
                let mut rows = Vec::new();
                for (i, &size) in sizes.iter().enumerate() {
                    if !job.progress(i, sizes.len(), format!("training size {size}")) {
                        return Err(Error::Cancelled);
                    }
                    rows.extend(loo_eval(&w.seqs, &[size], &cfg)?);
                }
                job.progress(sizes.len(), sizes.len(), "done");
                Ok(to_json(&rows))
            }
            JobSpec::RlExperiment(cfg) => {
                let total = cfg.n_rl_dialogs;
                let curves = rl_experiment_observed(&self.engine, &w.seqs, cfg, &|run, done| {
                    job.progress(done, total, format!("run {run}"))
                })?;
                Ok(to_json(&curves))
            }
        }
    }

    pub fn cancel_job(&self, id: u64) -> Result<()> {
        let job = lock(&self.jobs)
            .get(&id)
            .cloned()
            .ok_or(Error::NoSuchJob(id))?;
        job.cancel.store(true, Ordering::SeqCst);
        Ok(())
    }

    pub fn job_status(&self, id: u64) -> Result<JobStatus> {
        let job = lock(&self.jobs)
            .get(&id)
            .cloned()
            .ok_or(Error::NoSuchJob(id))?;
        let log = lock(&job.log);
        Ok(JobStatus {
            id,
            spec: job.spec.clone(),
            state: log.0,
            events: log.1.clone(),
        })
    }

    /// Events from position `from` on, blocking up to `timeout` for at least
    /// one. The returned state tells the caller whether more can follow.
    pub fn wait_job_events(
        &self,
        id: u64,
        from: usize,
        timeout: Duration,
    ) -> Result<(JobState, Vec<JobEvent>)> {
        let job = lock(&self.jobs)
            .get(&id)
            .cloned()
            .ok_or(Error::NoSuchJob(id))?;
        let log = lock(&job.log);
        let (log, _) = job
            .changed
            .wait_timeout_while(log, timeout, |l| {
                l.1.len() <= from && l.0 == JobState::Running
            })
            .unwrap_or_else(|p| p.into_inner());
        Ok((log.0, log.1.iter().skip(from).cloned().collect()))
    }

    /// Blocks until the job leaves the running state.
    pub fn wait_job(&self, id: u64) -> Result<JobStatus> {
        loop {
            let (state, _) = self.wait_job_events(id, usize::MAX, Duration::from_millis(200))?;
            if state != JobState::Running {
                return self.job_status(id);
            }
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn check_layout(params: &ModelParams, dim: usize, actions: usize) -> Result<()> {
    params.validate()?;
    if params.input_dim != dim || params.n_actions != actions {
        return Err(Error::Checkpoint(format!(
            "model is {}x{} but the domain needs {dim}x{actions}",
            params.input_dim, params.n_actions
        )));
    }
    Ok(())
}

/// Corpus form of `records` with the last action replaced by `action`.
pub fn prefix_dialog<D: DomainHooks>(
    domain: &D,
    records: &[TurnRecord],
    action: usize,
    session: u64,
) -> CorpusDialog {
    let mut lines = Vec::new();
    let last = records.len().saturating_sub(1);
    for (i, r) in records.iter().enumerate() {
        if let Some(text) = r.annotated_text().filter(|t| !t.trim().is_empty()) {
            lines.push(Line::User(text));
        }
        let a = if i == last { action } else { r.action };
        lines.push(Line::System(domain.templates()[a].name.clone()));
    }
    CorpusDialog {
        title: format!("correction from session {session}, turn {last}"),
        lines,
    }
}
