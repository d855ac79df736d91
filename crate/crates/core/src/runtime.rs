//! Multi-agent runtime: one agent per module, a barrier per iteration and
//! crash-stop fault injection.
//!
//! Every round each live agent runs its x-update and publishes the
//! resulting production quantity. Once the round is collected the view is
//! broadcast back, and every agent evaluates the same stopping test on it
//! before doing its z- and multiplier updates. Agents that stay silent for
//! a round are declared inactive for the rest of the horizon.
//!
//! Two drivers share this logic. [`ExecutionMode::Simulated`] steps the
//! agents in lockstep on one thread, so a missing message is detected by
//! logical time. [`ExecutionMode::Threaded`] runs each agent on its own
//! thread and uses a wall-clock timeout.

use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::admm::{
    deviation_rel, dual_update, gradient_weight, median, settled, x_update, z_update, AdmmError,
    AdmmSettings, AdmmState, AgentContext, Snapshot,
};
use crate::economics::{interval_cost_eur, mlcoh, mlcoh_gradient, CostBreakdown, PeriodContext};
use crate::electrolyzer::{advance_status, startup_indicator, OperatingState, PeaStatus};
use crate::scenario::{FleetEntry, Scenario};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(50);

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("period {period}, iteration {iteration}: no live agents left")]
    NoLiveAgents { period: usize, iteration: u32 },
    #[error("period {period}: {source}")]
    Agent {
        period: usize,
        #[source]
        source: AdmmError,
    },
    #[error("period {period}, iteration {iteration}: agents disagree on the stopping test")]
    Disagreement { period: usize, iteration: u32 },
    #[error("agent thread {0} stopped unexpectedly")]
    Disconnected(usize),
    #[error("period {0} is outside the horizon")]
    PeriodOutOfRange(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageKind {
    ProductionQty,
    /// Orderly departure; the sender is treated as inactive from then on.
    Shutdown,
}

/// What an agent publishes each round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub kind: MessageKind,
    /// Position of the sender in the fleet directory.
    pub sender: usize,
    pub period: usize,
    pub iteration: u32,
    /// kg/h
    pub qty: f64,
    /// The sender's own iterates have stopped moving.
    pub settled: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultKind {
    #[default]
    Malfunction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultEvent {
    pub agent: String,
    pub period: usize,
    pub iteration: u32,
    pub kind: FaultKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecutionMode {
    /// Lockstep on the calling thread; an agent missing from a round is
    /// inactive.
    Simulated,
    /// One thread per agent; an agent not heard from within `timeout` is
    /// inactive.
    Threaded { timeout: Duration },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuntimeOptions {
    pub mode: ExecutionMode,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        RuntimeOptions {
            mode: ExecutionMode::Simulated,
        }
    }
}

impl RuntimeOptions {
    pub fn threaded(timeout: Duration) -> Self {
        RuntimeOptions {
            mode: ExecutionMode::Threaded { timeout },
        }
    }
}

/// Quantities gathered for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundView {
    pub period: usize,
    pub iteration: u32,
    /// kg/h per agent; zero for agents that did not publish.
    pub qty: Vec<f64>,
    pub present: Vec<bool>,
    pub settled: Vec<bool>,
}

impl RoundView {
    /// Sum in fleet order, so every agent gets the same bits.
    pub fn total(&self) -> f64 {
        self.qty.iter().sum()
    }

    pub fn live(&self) -> usize {
        self.present.iter().filter(|p| **p).count()
    }

    pub fn all_settled(&self) -> bool {
        self.present
            .iter()
            .zip(&self.settled)
            .all(|(p, s)| !*p || *s)
    }
}

/// Gathers the messages of one `(period, iteration)`.
#[derive(Debug, Clone)]
pub struct Collector {
    period: usize,
    iteration: u32,
    expected: Vec<bool>,
    received: Vec<Option<Message>>,
}

impl Collector {
    pub fn new(period: usize, iteration: u32, live: &[bool]) -> Self {
        Collector {
            period,
            iteration,
            expected: live.to_vec(),
            received: vec![None; live.len()],
        }
    }

    /// Accepts a message of the current round from an expected sender.
    /// Anything else is dropped and `false` returned.
    pub fn offer(&mut self, msg: Message) -> bool {
        let i = msg.sender;
        if msg.period != self.period
            || msg.iteration != self.iteration
            || i >= self.expected.len()
            || !self.expected[i]
            || self.received[i].is_some()
        {
            log::debug!("dropping message {msg:?}");
            return false;
        }
        self.received[i] = Some(msg);
        true
    }

    pub fn complete(&self) -> bool {
        self.expected
            .iter()
            .zip(&self.received)
            .all(|(e, r)| !*e || r.is_some())
    }

    pub fn finish(self) -> RoundView {
        let n = self.expected.len();
        let mut view = RoundView {
            period: self.period,
            iteration: self.iteration,
            qty: vec![0.0; n],
            present: vec![false; n],
            settled: vec![false; n],
        };
        for (i, msg) in self.received.into_iter().enumerate() {
            if let Some(m) = msg.filter(|m| m.kind == MessageKind::ProductionQty) {
                view.qty[i] = m.qty.max(0.0);
                view.present[i] = true;
                view.settled[i] = m.settled;
            }
        }
        view
    }
}

/// Receives the messages of one round until every live agent has published
/// or `timeout` has elapsed.
pub fn collect_iteration(
    rx: &Receiver<Message>,
    period: usize,
    iteration: u32,
    live: &[bool],
    timeout: Duration,
) -> RoundView {
    let mut collector = Collector::new(period, iteration, live);
    let deadline = Instant::now() + timeout;
    while !collector.complete() {
        match rx.recv_deadline(deadline) {
            Ok(msg) => {
                collector.offer(msg);
            }
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    collector.finish()
}

/// What the orchestrator hands each agent at the start of a period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodSetup {
    pub period: usize,
    pub ctx: PeriodContext,
    pub prev_state: OperatingState,
    pub production_admissible: bool,
    /// Round from which the agent stays silent.
    pub silent_from: Option<u32>,
    /// Keep exchanging without updates until this round even if converged,
    /// so that a scheduled fault gets to fire.
    pub hold_until: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Continue,
    Hold,
    Done,
}

/// Agent iterates after absorbing a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentReport {
    pub x: f64,
    pub x_state: OperatingState,
    pub z: f64,
    pub lambda: f64,
    pub k: u32,
    pub verdict: Verdict,
}

/// One module's agent. Knows the whole fleet directory but only its own
/// iterates.
#[derive(Debug, Clone)]
pub struct PeaAgent<'a> {
    index: usize,
    directory: &'a [FleetEntry],
    settings: AdmmSettings,
    allow_idle: bool,
    rng: ChaCha8Rng,
    state: Option<AdmmState>,
    setup: Option<PeriodSetup>,
}

/// Seed stream for an agent, derived from its id so that an agent's
/// cold start does not depend on its position in the fleet.
fn agent_stream(id: &str) -> u64 {
    let h = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(h[..8].try_into().expect("digest has 32 bytes"))
}

impl<'a> PeaAgent<'a> {
    pub fn new(index: usize, directory: &'a [FleetEntry], settings: AdmmSettings, allow_idle: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(agent_stream(&directory[index].pea.id));
        PeaAgent {
            index,
            directory,
            settings,
            allow_idle,
            rng,
            state: None,
            setup: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.directory[self.index].pea.id
    }

    fn context(&self) -> AgentContext<'a> {
        let entry = &self.directory[self.index];
        let setup = self.setup.expect("period started");
        let mut agent = AgentContext::new(&entry.pea, &entry.fin, setup.ctx, setup.prev_state);
        agent.production_admissible = setup.production_admissible;
        agent.idle_admissible = self.allow_idle || !setup.production_admissible;
        agent
    }

    /// Applies the warm start (or the random cold start in the first
    /// period) and returns the iteration-0 values.
    pub fn begin_period(&mut self, setup: PeriodSetup) -> (Snapshot, u32) {
        let entry = &self.directory[self.index];
        let state = match &self.state {
            Some(prev) => AdmmState::warm(prev.x, prev.x_state, prev.z, prev.z_state, &self.settings),
            None => AdmmState::random(&entry.pea, &self.settings, &mut self.rng),
        };
        let out = (state.snapshot(), state.k);
        self.state = Some(state);
        self.setup = Some(setup);
        out
    }

    /// x-update and publish. `None` when the agent is silent this round.
    pub fn propose(&mut self, iteration: u32) -> Result<Option<Message>, AdmmError> {
        let setup = self.setup.expect("period started");
        if setup.silent_from.is_some_and(|k| iteration >= k) {
            return Ok(None);
        }
        let agent = self.context();
        let state = self.state.as_mut().expect("period started");
        let choice = x_update(state, &agent)?;
        state.set_x(choice.op, choice.state);
        Ok(Some(Message {
            kind: MessageKind::ProductionQty,
            sender: self.index,
            period: setup.period,
            iteration,
            qty: agent.production(choice.state, choice.op),
            settled: settled(state),
        }))
    }

    /// Stopping test on the collected round, then the z- and multiplier
    /// updates unless the period is over.
    pub fn absorb(&mut self, view: &RoundView) -> Result<AgentReport, AdmmError> {
        let setup = self.setup.expect("period started");
        let agent = self.context();
        let demand = setup.ctx.demand;
        let total = view.total();
        let dev = deviation_rel(total, demand);
        let eps_dem = self.settings.eps_dem;

        let stop = view.all_settled() && dev.abs() < eps_dem;
        let verdict = match (stop, setup.hold_until) {
            (true, Some(h)) if view.iteration < h => Verdict::Hold,
            (true, _) => Verdict::Done,
            (false, _) => Verdict::Continue,
        };

        if verdict == Verdict::Continue {
            let gradients = self.fleet_gradients(view, &setup.ctx)?;
            // modules pinned at a limit in the direction of the gap take no share
            let movable = self.movable(view, demand - total);
            let state = self.state.as_mut().expect("period started");
            if state.g_ref.is_none() {
                let mut mags: Vec<f64> = gradients.iter().flatten().map(|g| g.abs()).collect();
                state.g_ref = median(&mut mags);
            }
            let g_ref = state.g_ref.unwrap_or(0.0);
            let weight = |g: f64| gradient_weight(g, g_ref);
            let w_sum: f64 = gradients
                .iter()
                .zip(&movable)
                .filter_map(|(g, m)| g.filter(|_| *m))
                .map(weight)
                .sum();
            let own = gradients[self.index].unwrap_or(0.0);
            let share = if movable[self.index] && w_sum > 0.0 {
                weight(own) / w_sum
            } else {
                0.0
            };

            // Move the own demand share from where z last was by this
            // agent's part of the remaining gap.
            let anchor = agent.production(state.z_state, state.z);
            let target = anchor + share * (demand - total);
            let z = z_update(state.x, demand - target, &agent);
            state.set_z(z.op, z.state);

            let lambda = dual_update(state, dev, own);
            state.set_lambda(lambda);
            state.k += 1;
        }

        let state = self.state.as_ref().expect("period started");
        Ok(AgentReport {
            x: state.x,
            x_state: state.x_state,
            z: state.z,
            lambda: state.lambda,
            k: state.k,
            verdict,
        })
    }

    /// Which present agents can still move toward closing `gap`. Falls back
    /// to all present agents when none can.
    fn movable(&self, view: &RoundView, gap: f64) -> Vec<bool> {
        let can_move: Vec<bool> = self
            .directory
            .iter()
            .zip(view.qty.iter().zip(&view.present))
            .map(|(entry, (qty, present))| {
                *present
                    && if gap > 0.0 {
                        *qty < entry.pea.production_bounds().1 * (1.0 - 1e-12)
                    } else if gap < 0.0 {
                        *qty > 0.0
                    } else {
                        true
                    }
            })
            .collect();
        if can_move.iter().any(|m| *m) {
            can_move
        } else {
            view.present.clone()
        }
    }

    /// mLCOH slope of every agent present in the round, evaluated at the
    /// operating point that yields its published quantity.
    fn fleet_gradients(&self, view: &RoundView, ctx: &PeriodContext) -> Result<Vec<Option<f64>>, AdmmError> {
        self.directory
            .iter()
            .zip(view.qty.iter().zip(&view.present))
            .map(|(entry, (qty, present))| {
                if !*present {
                    return Ok(None);
                }
                let pea = &entry.pea;
                let op = if *qty > 0.0 {
                    pea.operating_point_for(*qty, pea.op_max)
                } else {
                    pea.op_min
                };
                Ok(Some(mlcoh_gradient(op, &entry.fin, pea, ctx)?.value))
            })
            .collect()
    }
}

/// One line of the convergence trace: values after the round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub period: usize,
    pub iteration: u32,
    pub agent: String,
    pub x: f64,
    pub z: f64,
    pub lambda: f64,
    pub qty: f64,
    pub deviation: f64,
    pub startup_eur: f64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub agent: String,
    pub state: OperatingState,
    pub op: f64,
    pub z: f64,
    pub lambda: f64,
    /// kg/h
    pub qty: f64,
    pub breakdown: CostBreakdown,
    /// Money spent in the interval, €.
    pub cost_eur: f64,
    pub started: bool,
    pub active: bool,
}

/// Values an agent started the period from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialValues {
    pub x: f64,
    pub z: f64,
    pub lambda: f64,
    pub k: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultRecovery {
    pub agent: String,
    pub fault_iteration: u32,
    /// First round at or after the fault with the demand met again.
    pub recovered_iteration: Option<u32>,
    /// From the start of the fault round to the end of the recovering one.
    pub latency: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodResult {
    pub period: usize,
    pub demand: f64,
    pub agents: Vec<AgentOutcome>,
    /// `None` for agents that were already inactive.
    pub initial: Vec<Option<InitialValues>>,
    pub iterations_used: u32,
    pub deviation_rel: f64,
    pub converged: bool,
    pub wall_time: Duration,
    pub faults: Vec<FaultRecovery>,
    /// Relative deviation after every round.
    pub deviations: Vec<f64>,
}

impl PeriodResult {
    pub fn total_qty(&self) -> f64 {
        self.agents.iter().map(|a| a.qty).sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.agents.iter().map(|a| a.cost_eur).sum()
    }

    /// Unmet-demand flag.
    pub fn unmet_demand(&self) -> bool {
        !self.converged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleResult {
    pub scenario: String,
    pub digest: String,
    pub delta_int: f64,
    pub periods: Vec<PeriodResult>,
    pub trace: Vec<TraceRow>,
    pub total_kg: f64,
    pub total_cost_eur: f64,
    /// Aggregate cost over aggregate production, €/kg.
    pub mean_mlcoh: f64,
    pub total_iterations: u64,
    pub max_rescheduling_latency: Option<Duration>,
    pub all_converged: bool,
}

/// How the orchestrator reaches the agents.
trait Transport {
    fn begin(&mut self, setups: &[Option<PeriodSetup>]) -> Result<Vec<Option<(Snapshot, u32)>>, RuntimeError>;
    fn round(&mut self, period: usize, iteration: u32, live: &[bool]) -> Result<RoundView, RuntimeError>;
    fn absorb(&mut self, view: &RoundView) -> Result<Vec<Option<AgentReport>>, RuntimeError>;
}

struct Lockstep<'a> {
    agents: Vec<PeaAgent<'a>>,
    period: usize,
}

impl Transport for Lockstep<'_> {
    fn begin(&mut self, setups: &[Option<PeriodSetup>]) -> Result<Vec<Option<(Snapshot, u32)>>, RuntimeError> {
        Ok(self
            .agents
            .iter_mut()
            .zip(setups)
            .map(|(a, s)| {
                s.map(|s| {
                    self.period = s.period;
                    a.begin_period(s)
                })
            })
            .collect())
    }

    fn round(&mut self, period: usize, iteration: u32, live: &[bool]) -> Result<RoundView, RuntimeError> {
        let mut collector = Collector::new(period, iteration, live);
        for (agent, alive) in self.agents.iter_mut().zip(live) {
            if !*alive {
                continue;
            }
            let msg = agent
                .propose(iteration)
                .map_err(|source| RuntimeError::Agent { period, source })?;
            if let Some(msg) = msg {
                collector.offer(msg);
            }
        }
        Ok(collector.finish())
    }

    fn absorb(&mut self, view: &RoundView) -> Result<Vec<Option<AgentReport>>, RuntimeError> {
        self.agents
            .iter_mut()
            .zip(&view.present)
            .map(|(agent, present)| {
                if !*present {
                    return Ok(None);
                }
                agent
                    .absorb(view)
                    .map(Some)
                    .map_err(|source| RuntimeError::Agent {
                        period: view.period,
                        source,
                    })
            })
            .collect()
    }
}

enum Command {
    Begin(PeriodSetup),
    Propose(u32),
    Absorb(RoundView),
}

enum Reply {
    Began(usize, Snapshot, u32),
    Report(usize, AgentReport),
    Failed(AdmmError),
}

fn agent_loop(mut agent: PeaAgent<'_>, commands: Receiver<Command>, bus: Sender<Message>, replies: Sender<Reply>) {
    let index = agent.index;
    for command in commands {
        let reply = match command {
            Command::Begin(setup) => {
                let (snap, k) = agent.begin_period(setup);
                Reply::Began(index, snap, k)
            }
            Command::Propose(iteration) => match agent.propose(iteration) {
                Ok(Some(msg)) => {
                    if bus.send(msg).is_err() {
                        return;
                    }
                    continue;
                }
                Ok(None) => continue,
                Err(e) => Reply::Failed(e),
            },
            Command::Absorb(view) => match agent.absorb(&view) {
                Ok(report) => Reply::Report(index, report),
                Err(e) => Reply::Failed(e),
            },
        };
        if replies.send(reply).is_err() {
            return;
        }
    }
}

struct Threaded {
    commands: Vec<Sender<Command>>,
    bus: Receiver<Message>,
    replies: Receiver<Reply>,
    timeout: Duration,
    period: usize,
}

impl Threaded {
    fn send(&self, i: usize, command: Command) -> Result<(), RuntimeError> {
        self.commands[i]
            .send(command)
            .map_err(|_| RuntimeError::Disconnected(i))
    }

    fn wait_replies(&self, pending: &[bool]) -> Result<Vec<Option<Reply>>, RuntimeError> {
        let mut out: Vec<Option<Reply>> = pending.iter().map(|_| None).collect();
        let mut left = pending.iter().filter(|p| **p).count();
        while left > 0 {
            let reply = self
                .replies
                .recv()
                .map_err(|_| RuntimeError::Disconnected(usize::MAX))?;
            let i = match &reply {
                Reply::Began(i, ..) | Reply::Report(i, _) => *i,
                Reply::Failed(e) => {
                    return Err(RuntimeError::Agent {
                        period: self.period,
                        source: e.clone(),
                    })
                }
            };
            if pending[i] && out[i].is_none() {
                out[i] = Some(reply);
                left -= 1;
            }
        }
        Ok(out)
    }
}

impl Transport for Threaded {
    fn begin(&mut self, setups: &[Option<PeriodSetup>]) -> Result<Vec<Option<(Snapshot, u32)>>, RuntimeError> {
        let pending: Vec<bool> = setups.iter().map(Option::is_some).collect();
        for (i, s) in setups.iter().enumerate() {
            if let Some(s) = s {
                self.period = s.period;
                self.send(i, Command::Begin(*s))?;
            }
        }
        Ok(self
            .wait_replies(&pending)?
            .into_iter()
            .map(|r| match r {
                Some(Reply::Began(_, snap, k)) => Some((snap, k)),
                _ => None,
            })
            .collect())
    }

    fn round(&mut self, period: usize, iteration: u32, live: &[bool]) -> Result<RoundView, RuntimeError> {
        for (i, alive) in live.iter().enumerate() {
            if *alive {
                self.send(i, Command::Propose(iteration))?;
            }
        }
        let view = collect_iteration(&self.bus, period, iteration, live, self.timeout);
        // an agent that failed instead of publishing reports it here
        if let Ok(Reply::Failed(e)) = self.replies.try_recv() {
            return Err(RuntimeError::Agent { period, source: e });
        }
        Ok(view)
    }

    fn absorb(&mut self, view: &RoundView) -> Result<Vec<Option<AgentReport>>, RuntimeError> {
        for (i, present) in view.present.iter().enumerate() {
            if *present {
                self.send(i, Command::Absorb(view.clone()))?;
            }
        }
        Ok(self
            .wait_replies(&view.present)?
            .into_iter()
            .map(|r| match r {
                Some(Reply::Report(_, report)) => Some(report),
                _ => None,
            })
            .collect())
    }
}

/// Drives the period loop over a transport. Owns the plant-level status of
/// every module and the fault schedule.
pub struct Runtime<'a> {
    scenario: &'a Scenario,
    transport: Box<dyn Transport + 'a>,
    status: Vec<PeaStatus>,
    /// Scheduled state of each module in the previous period.
    prev_state: Vec<OperatingState>,
    last: Vec<Option<AgentReport>>,
    faults: Vec<FaultEvent>,
    next_period: usize,
    trace: Vec<TraceRow>,
}

impl<'a> Runtime<'a> {
    /// Lockstep runtime on the calling thread.
    pub fn simulated(scenario: &'a Scenario) -> Self {
        let s = &scenario.solver;
        let agents = (0..scenario.fleet.len())
            .map(|i| PeaAgent::new(i, &scenario.fleet, s.admm, s.allow_idle, s.seed))
            .collect();
        Self::with_transport(
            scenario,
            Box::new(Lockstep { agents, period: 0 }),
        )
    }

    fn with_transport(scenario: &'a Scenario, transport: Box<dyn Transport + 'a>) -> Self {
        let n = scenario.fleet.len();
        let mut rt = Runtime {
            scenario,
            transport,
            status: scenario.fleet.iter().map(|e| PeaStatus::new(e.initial_state)).collect(),
            prev_state: scenario.fleet.iter().map(|e| e.initial_state).collect(),
            last: vec![None; n],
            faults: Vec::new(),
            next_period: 1,
            trace: Vec::new(),
        };
        rt.inject_faults(&scenario.faults);
        rt
    }

    /// Adds fault events to the schedule. Events for unknown agents are
    /// ignored; scenario validation rejects them earlier.
    pub fn inject_faults(&mut self, events: &[FaultEvent]) {
        self.faults.extend(
            events
                .iter()
                .filter(|e| self.scenario.agent_index(&e.agent).is_some())
                .cloned(),
        );
        self.faults.sort_by_key(|e| (e.period, e.iteration));
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn status(&self) -> &[PeaStatus] {
        &self.status
    }

    /// Runs the next period of the horizon.
    pub fn run_period(&mut self) -> Result<PeriodResult, RuntimeError> {
        let t = self.next_period;
        if t > self.scenario.periods() {
            return Err(RuntimeError::PeriodOutOfRange(t));
        }
        let scenario = self.scenario;
        let fleet = &scenario.fleet;
        let n = fleet.len();
        let settings = scenario.solver.admm;
        let ctx = scenario.period_context(t);

        let mut live: Vec<bool> = self.status.iter().map(|s| s.active).collect();
        let silent_from: Vec<Option<u32>> = (0..n)
            .map(|i| {
                self.faults
                    .iter()
                    .filter(|f| f.period == t && f.agent == fleet[i].pea.id)
                    .map(|f| f.iteration)
                    .min()
            })
            .collect();
        let hold_until = (0..n).filter(|i| live[*i]).filter_map(|i| silent_from[i]).max();

        let setups: Vec<Option<PeriodSetup>> = (0..n)
            .map(|i| {
                live[i].then(|| PeriodSetup {
                    period: t,
                    ctx,
                    prev_state: self.prev_state[i],
                    production_admissible: self.status[i].production_admissible(&fleet[i].pea),
                    silent_from: silent_from[i],
                    hold_until,
                })
            })
            .collect();

        let start = Instant::now();
        let initial: Vec<Option<InitialValues>> = self
            .transport
            .begin(&setups)?
            .into_iter()
            .map(|s| {
                s.map(|(snap, k)| InitialValues {
                    x: snap.x,
                    z: snap.z,
                    lambda: snap.lambda,
                    k,
                })
            })
            .collect();

        let mut faults: Vec<FaultRecovery> = Vec::new();
        let mut fault_starts: Vec<Instant> = Vec::new();
        let mut deviations = Vec::new();
        let mut last_qty = vec![0.0; n];
        let mut iteration = 0u32;
        let (converged, dev) = loop {
            if !live.iter().any(|l| *l) {
                return Err(RuntimeError::NoLiveAgents { period: t, iteration });
            }
            let round_start = Instant::now();
            let view = self.transport.round(t, iteration, &live)?;
            if view.live() == 0 {
                return Err(RuntimeError::NoLiveAgents { period: t, iteration });
            }
            for i in 0..n {
                if live[i] && !view.present[i] {
                    log::info!(
                        "period {t}, iteration {iteration}: {} silent, marking inactive",
                        fleet[i].pea.id
                    );
                    live[i] = false;
                    self.status[i].active = false;
                    fault_starts.push(round_start);
                    faults.push(FaultRecovery {
                        agent: fleet[i].pea.id.clone(),
                        fault_iteration: iteration,
                        recovered_iteration: None,
                        latency: None,
                    });
                }
            }
            let dev = deviation_rel(view.total(), ctx.demand);
            deviations.push(dev);

            let reports = self.transport.absorb(&view)?;
            let verdicts: Vec<Verdict> = reports.iter().flatten().map(|r| r.verdict).collect();
            if verdicts.windows(2).any(|w| w[0] != w[1]) {
                return Err(RuntimeError::Disagreement { period: t, iteration });
            }
            let verdict = verdicts[0];

            for (i, r) in reports.iter().enumerate() {
                if r.is_some() {
                    self.last[i] = *r;
                }
                last_qty[i] = view.qty[i];
            }
            if dev.abs() < settings.eps_dem {
                for (f, since) in faults.iter_mut().zip(&fault_starts) {
                    if f.recovered_iteration.is_none() {
                        f.recovered_iteration = Some(iteration);
                        f.latency = Some(since.elapsed());
                    }
                }
            }
            self.record_trace(t, iteration, &view, dev);

            match verdict {
                Verdict::Done => break (true, dev),
                _ if iteration >= settings.max_iterations => break (false, dev),
                _ => iteration += 1,
            }
        };
        let wall_time = start.elapsed();

        let mut agents = Vec::with_capacity(n);
        for i in 0..n {
            let entry = &fleet[i];
            let (state, op, z, lambda) = match (&self.last[i], live[i]) {
                (Some(r), true) => (r.x_state, r.x, r.z, r.lambda),
                (Some(r), false) => (OperatingState::Idle, 0.0, r.z, r.lambda),
                (None, _) => (OperatingState::Idle, 0.0, 0.0, 0.0),
            };
            let started = startup_indicator(state, self.prev_state[i]) == 1;
            let breakdown = mlcoh(op, state, started, &entry.fin, &entry.pea, &ctx)
                .map_err(|e| RuntimeError::Agent { period: t, source: e.into() })?;
            let cost_eur = interval_cost_eur(op, state, started, &entry.fin, &entry.pea, &ctx)
                .map_err(|e| RuntimeError::Agent { period: t, source: e.into() })?;
            agents.push(AgentOutcome {
                agent: entry.pea.id.clone(),
                state,
                op,
                z,
                lambda,
                qty: if live[i] { last_qty[i] } else { 0.0 },
                breakdown,
                cost_eur,
                started,
                active: live[i],
            });
        }

        for i in 0..n {
            let mut requested = agents[i].state;
            if !self.status[i].production_admissible(&fleet[i].pea) && dev < -settings.eps_dem {
                requested = OperatingState::Production;
            }
            self.status[i] = advance_status(self.status[i], requested, &fleet[i].pea);
            self.prev_state[i] = agents[i].state;
            if !live[i] {
                self.last[i] = None;
            }
        }
        self.next_period += 1;

        Ok(PeriodResult {
            period: t,
            demand: ctx.demand,
            agents,
            initial,
            iterations_used: iteration,
            deviation_rel: dev,
            converged,
            wall_time,
            faults,
            deviations,
        })
    }

    fn record_trace(&mut self, t: usize, iteration: u32, view: &RoundView, dev: f64) {
        for (i, entry) in self.scenario.fleet.iter().enumerate() {
            let (x, z, lambda, x_state) = match &self.last[i] {
                Some(r) => (r.x, r.z, r.lambda, r.x_state),
                None => (0.0, 0.0, 0.0, OperatingState::Idle),
            };
            let active = view.present[i];
            let started = active && startup_indicator(x_state, self.prev_state[i]) == 1;
            self.trace.push(TraceRow {
                period: t,
                iteration,
                agent: entry.pea.id.clone(),
                x,
                z,
                lambda,
                qty: view.qty[i],
                deviation: dev,
                startup_eur: if started { entry.fin.c_su } else { 0.0 },
                active,
            });
        }
    }

    /// Runs every remaining period and aggregates the results.
    pub fn run_to_end(mut self) -> Result<ScheduleResult, RuntimeError> {
        let mut periods = Vec::new();
        while self.next_period <= self.scenario.periods() {
            periods.push(self.run_period()?);
        }
        Ok(aggregate(self.scenario, periods, self.trace))
    }
}

fn aggregate(scenario: &Scenario, periods: Vec<PeriodResult>, trace: Vec<TraceRow>) -> ScheduleResult {
    let total_kg: f64 = periods.iter().map(|p| p.total_qty() * scenario.delta_int).sum();
    let total_cost_eur: f64 = periods.iter().map(PeriodResult::total_cost).sum();
    ScheduleResult {
        scenario: scenario.name.clone(),
        digest: scenario.digest(),
        delta_int: scenario.delta_int,
        total_kg,
        total_cost_eur,
        mean_mlcoh: if total_kg > 0.0 { total_cost_eur / total_kg } else { f64::NAN },
        total_iterations: periods.iter().map(|p| u64::from(p.iterations_used)).sum(),
        max_rescheduling_latency: periods
            .iter()
            .flat_map(|p| p.faults.iter().filter_map(|f| f.latency))
            .max(),
        all_converged: periods.iter().all(|p| p.converged),
        periods,
        trace,
    }
}

/// Runs the whole horizon of `scenario`.
pub fn run_horizon(scenario: &Scenario, options: RuntimeOptions) -> Result<ScheduleResult, RuntimeError> {
    match options.mode {
        ExecutionMode::Simulated => Runtime::simulated(scenario).run_to_end(),
        ExecutionMode::Threaded { timeout } => std::thread::scope(|scope| {
            let s = &scenario.solver;
            let (bus_tx, bus_rx) = unbounded();
            let (reply_tx, reply_rx) = unbounded();
            let mut commands = Vec::new();
            for i in 0..scenario.fleet.len() {
                let (tx, rx) = unbounded();
                commands.push(tx);
                let agent = PeaAgent::new(i, &scenario.fleet, s.admm, s.allow_idle, s.seed);
                let bus = bus_tx.clone();
                let replies = reply_tx.clone();
                scope.spawn(move || agent_loop(agent, rx, bus, replies));
            }
            drop((bus_tx, reply_tx));
            let transport = Threaded {
                commands,
                bus: bus_rx,
                replies: reply_rx,
                timeout,
                period: 0,
            };
            // dropping the runtime closes the command channels and lets
            // the agent threads exit
            Runtime::with_transport(scenario, Box::new(transport)).run_to_end()
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(sender: usize, period: usize, iteration: u32, qty: f64) -> Message {
        Message {
            kind: MessageKind::ProductionQty,
            sender,
            period,
            iteration,
            qty,
            settled: false,
        }
    }

    #[test]
    fn collector_gathers_live_agents() {
        let mut c = Collector::new(1, 0, &[true, true, true]);
        for i in 0..3 {
            assert!(c.offer(msg(i, 1, 0, 0.01 * (i + 1) as f64)));
        }
        assert!(c.complete());
        let view = c.finish();
        assert_eq!(view.live(), 3);
        assert_eq!(view.qty, vec![0.01, 0.02, 0.03]);
    }

    #[test]
    fn collector_drops_stray_messages() {
        let mut c = Collector::new(2, 4, &[true, false, true]);
        assert!(!c.offer(msg(0, 2, 3, 1.0)), "previous iteration");
        assert!(!c.offer(msg(0, 1, 4, 1.0)), "previous period");
        assert!(!c.offer(msg(1, 2, 4, 1.0)), "inactive sender");
        assert!(!c.offer(msg(7, 2, 4, 1.0)), "unknown sender");
        assert!(c.offer(msg(0, 2, 4, 1.0)));
        assert!(!c.offer(msg(0, 2, 4, 2.0)), "duplicate");
        assert!(!c.complete());
        let view = c.finish();
        assert_eq!(view.qty, vec![1.0, 0.0, 0.0]);
        assert_eq!(view.present, vec![true, false, false]);
    }

    #[test]
    fn shutdown_counts_as_absent() {
        let mut c = Collector::new(1, 0, &[true, true]);
        c.offer(msg(0, 1, 0, 0.5));
        c.offer(Message {
            kind: MessageKind::Shutdown,
            ..msg(1, 1, 0, 0.5)
        });
        let view = c.finish();
        assert_eq!(view.present, vec![true, false]);
        assert_eq!(view.total(), 0.5);
    }

    #[test]
    fn wall_clock_collect_times_out_on_silent_agent() {
        let (tx, rx) = unbounded();
        tx.send(msg(0, 1, 3, 0.02)).unwrap();
        tx.send(msg(2, 1, 2, 0.05)).unwrap(); // late from the round before
        tx.send(msg(2, 1, 3, 0.03)).unwrap();
        let start = Instant::now();
        let view = collect_iteration(&rx, 1, 3, &[true, true, true], Duration::from_millis(20));
        assert!(start.elapsed() >= Duration::from_millis(20));
        assert_eq!(view.present, vec![true, false, true]);
        assert_eq!(view.qty, vec![0.02, 0.0, 0.03]);
    }

    #[test]
    fn settled_needs_every_present_agent() {
        let view = RoundView {
            period: 1,
            iteration: 2,
            qty: vec![0.1, 0.0, 0.1],
            present: vec![true, false, true],
            settled: vec![true, false, true],
        };
        assert!(view.all_settled());
        let view = RoundView {
            settled: vec![true, false, false],
            ..view
        };
        assert!(!view.all_settled());
    }
}
