//! Deterministic discrete-event simulator of the partially synchronous model.
//!
//! Before GST the adversary schedules deliveries and timer drift; every
//! message still in flight is delivered by `GST + delta`, and after GST every
//! message takes at most `delta` ticks and clocks do not drift. Processes are
//! state machines driven by start, delivery and timer events; local steps
//! take zero time.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::crypto::{Crypto, HashValue, PartialSignature};
use crate::darestark::ProofOracle;
use crate::model::{
    Message, MsgKind, ProcessId, ProtocolParams, SyncInstance, Tick, Validity, Value, View,
};

/// Default number of events processed before a run is declared stuck.
pub const DEFAULT_STEP_BUDGET: u64 = 5_000_000;
pub const STEP_BUDGET_ENV: &str = "DARE_LAB_STEP_BUDGET";

pub fn step_budget_from_env() -> u64 {
    std::env::var(STEP_BUDGET_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_STEP_BUDGET)
}

/// Timer identity within one process; measuring a slot again replaces the
/// pending expiry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimerSlot {
    SyncView(SyncInstance),
    SyncDissemination(SyncInstance),
    DisperserPace,
    AgrSubView,
    AgrPropose,
    Custom(u8),
}

/// A timer slot plus the view it concerns (informational, visible to the
/// adversary).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TimerTag {
    pub slot: TimerSlot,
    pub view: u64,
}

impl TimerTag {
    pub fn new(slot: TimerSlot, view: u64) -> Self {
        TimerTag { slot, view }
    }
}

/// Observable protocol events, recorded with their time.
#[derive(Clone, Debug, PartialEq)]
pub enum Output {
    Advance { inst: SyncInstance, view: View },
    Acquire(HashValue),
    AgreementDecide(HashValue),
    RetrieverOutput(Value),
    Decide(Value),
}

#[derive(Clone, Debug)]
pub struct OutputRecord {
    pub time: Tick,
    pub process: ProcessId,
    pub output: Output,
}

pub enum Effect {
    Send { to: ProcessId, msg: Message },
    Measure { tag: TimerTag, duration: Tick },
    Cancel(TimerSlot),
    Output(Output),
}

/// Per-run shared oracles: parameters, key registry, proof registry and the
/// validity predicate.
pub struct Env {
    pub params: ProtocolParams,
    pub crypto: Crypto,
    pub proofs: ProofOracle,
    pub validity: Arc<dyn Validity>,
}

impl Env {
    pub fn new(params: ProtocolParams, validity: Arc<dyn Validity>) -> Self {
        let crypto = Crypto::new(params.n, params.t);
        Env {
            params,
            crypto,
            proofs: ProofOracle::new(),
            validity,
        }
    }
}

/// Handle through which a process acts during one step.
pub struct Ctx<'a> {
    me: ProcessId,
    now: Tick,
    env: &'a mut Env,
    effects: &'a mut Vec<Effect>,
}

impl<'a> Ctx<'a> {
    pub fn new(me: ProcessId, now: Tick, env: &'a mut Env, effects: &'a mut Vec<Effect>) -> Self {
        Ctx {
            me,
            now,
            env,
            effects,
        }
    }

    pub fn me(&self) -> ProcessId {
        self.me
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.env.params
    }

    pub fn crypto(&mut self) -> &mut Crypto {
        &mut self.env.crypto
    }

    pub fn crypto_ref(&self) -> &Crypto {
        &self.env.crypto
    }

    pub fn env(&mut self) -> &mut Env {
        self.env
    }

    pub fn valid(&self, v: &Value) -> bool {
        self.env.validity.valid(v, &self.env.crypto)
    }

    pub fn hash(&mut self, bytes: &[u8]) -> HashValue {
        self.env.crypto.hash(bytes)
    }

    /// Partial signature under this process's own identity.
    pub fn share_sign(&mut self, m: &[u8]) -> PartialSignature {
        let me = self.me;
        self.env
            .crypto
            .share_sign(me, me, m)
            .expect("signing as oneself")
    }

    pub fn send(&mut self, to: ProcessId, msg: Message) {
        self.effects.push(Effect::Send { to, msg });
    }

    /// Sends to every process, this one included.
    pub fn broadcast(&mut self, msg: Message) {
        let n = self.env.params.n;
        for to in ProcessId::all(n) {
            self.effects.push(Effect::Send {
                to,
                msg: msg.clone(),
            });
        }
    }

    pub fn measure(&mut self, tag: TimerTag, duration: Tick) {
        self.effects.push(Effect::Measure { tag, duration });
    }

    pub fn cancel(&mut self, slot: TimerSlot) {
        self.effects.push(Effect::Cancel(slot));
    }

    pub fn output(&mut self, output: Output) {
        self.effects.push(Effect::Output(output));
    }

    /// Number of effects queued so far in this step.
    pub fn mark(&self) -> usize {
        self.effects.len()
    }

    /// Removes and returns the effects queued since `mark`.
    pub fn take_since(&mut self, mark: usize) -> Vec<Effect> {
        self.effects.split_off(mark)
    }

    pub fn push_effect(&mut self, e: Effect) {
        self.effects.push(e);
    }
}

pub trait Process {
    fn on_start(&mut self, ctx: &mut Ctx<'_>);
    fn on_message(&mut self, from: ProcessId, msg: Message, ctx: &mut Ctx<'_>);
    fn on_timer(&mut self, tag: TimerTag, ctx: &mut Ctx<'_>);
}

/// A process that never acts.
pub struct Silent;

impl Process for Silent {
    fn on_start(&mut self, _ctx: &mut Ctx<'_>) {}
    fn on_message(&mut self, _from: ProcessId, _msg: Message, _ctx: &mut Ctx<'_>) {}
    fn on_timer(&mut self, _tag: TimerTag, _ctx: &mut Ctx<'_>) {}
}

/// Network and clock scheduler. Returned times are clamped by the
/// simulator to the model's bounds.
pub trait Adversary {
    /// When `p` starts; clamped to `[0, GST]`.
    fn start_time(
        &mut self,
        _p: ProcessId,
        _params: &ProtocolParams,
        _rng: &mut ChaCha8Rng,
    ) -> Tick {
        0
    }

    /// Desired delivery time of `msg` sent at `now`.
    fn delivery_time(
        &mut self,
        now: Tick,
        from: ProcessId,
        to: ProcessId,
        msg: &Message,
        params: &ProtocolParams,
        rng: &mut ChaCha8Rng,
    ) -> Tick;

    /// Desired expiry of a timer of local `duration` measured at `now`.
    fn timer_expiry(
        &mut self,
        now: Tick,
        _owner: ProcessId,
        _tag: TimerTag,
        duration: Tick,
        _params: &ProtocolParams,
        _rng: &mut ChaCha8Rng,
    ) -> Tick {
        now + duration
    }
}

/// Every message takes exactly `delta`; clocks are exact.
#[derive(Clone, Copy, Debug, Default)]
pub struct Synchronous;

impl Adversary for Synchronous {
    fn delivery_time(
        &mut self,
        now: Tick,
        _from: ProcessId,
        _to: ProcessId,
        _msg: &Message,
        params: &ProtocolParams,
        _rng: &mut ChaCha8Rng,
    ) -> Tick {
        now + params.delta
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub step_budget: u64,
    /// Stop at this time even if not every correct process decided.
    pub horizon: Option<Tick>,
    /// Stop as soon as every correct process has decided.
    pub stop_when_decided: bool,
    pub record_transcript: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            step_budget: step_budget_from_env(),
            horizon: None,
            stop_when_decided: true,
            record_transcript: false,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SimMetrics {
    /// Bits sent by correct processes at or after GST, per kind.
    pub post_gst_bits_by_kind: BTreeMap<MsgKind, u64>,
    pub post_gst_msg_count_by_kind: BTreeMap<MsgKind, u64>,
    /// L-proportional part of the post-GST bits.
    pub post_gst_payload_bits: u64,
    /// Largest message sent by a correct process at any time.
    pub max_correct_msg_bits: u64,
    pub decision_time: BTreeMap<ProcessId, Tick>,
    pub steps: u64,
}

impl SimMetrics {
    pub fn bits_total(&self) -> u64 {
        self.post_gst_bits_by_kind.values().sum()
    }

    pub fn bits(&self, kind: MsgKind) -> u64 {
        self.post_gst_bits_by_kind.get(&kind).copied().unwrap_or(0)
    }

    pub fn count(&self, kind: MsgKind) -> u64 {
        self.post_gst_msg_count_by_kind
            .get(&kind)
            .copied()
            .unwrap_or(0)
    }

    /// `max(0, t_d - GST)` over correct deciders.
    pub fn latency(&self, gst: Tick) -> Option<Tick> {
        self.decision_time
            .values()
            .max()
            .map(|&t| t.saturating_sub(gst))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptLine {
    pub tick: Tick,
    pub sender: ProcessId,
    pub receiver: ProcessId,
    pub kind: MsgKind,
    pub bits: u64,
}

impl fmt::Display for TranscriptLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}|{}|{}|{}|{}",
            self.tick,
            self.sender.index(),
            self.receiver.index(),
            self.kind,
            self.bits
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    AllDecided,
    Horizon,
    Quiescent,
    BudgetExhausted,
}

pub struct RunReport {
    pub metrics: SimMetrics,
    pub outputs: Vec<OutputRecord>,
    pub transcript: Vec<TranscriptLine>,
    pub termination: Termination,
    pub end_time: Tick,
    pub correct: BTreeSet<ProcessId>,
    pub env: Env,
}

impl RunReport {
    pub fn decisions(&self) -> BTreeMap<ProcessId, Value> {
        let mut out = BTreeMap::new();
        for r in &self.outputs {
            if let Output::Decide(v) = &r.output {
                if self.correct.contains(&r.process) {
                    out.entry(r.process).or_insert_with(|| v.clone());
                }
            }
        }
        out
    }

    pub fn all_correct_decided(&self) -> bool {
        self.decisions().len() == self.correct.len()
    }

    pub fn transcript_dump(&self) -> String {
        self.transcript.iter().map(|l| format!("{l}\n")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Rank {
    Start = 0,
    Timer = 1,
    Deliver = 2,
}

enum Body {
    Start,
    Timer { tag: TimerTag, generation: u64 },
    Deliver { from: ProcessId, msg: Message },
}

struct Event {
    time: Tick,
    to: ProcessId,
    rank: Rank,
    seq: u64,
    body: Body,
}

impl Event {
    fn key(&self) -> (Tick, ProcessId, Rank, u64) {
        (self.time, self.to, self.rank, self.seq)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

pub struct Simulation {
    env: Env,
    procs: Vec<Box<dyn Process>>,
    corrupt: BTreeSet<ProcessId>,
    adversary: Box<dyn Adversary>,
    rng: ChaCha8Rng,
    config: SimConfig,
    queue: BinaryHeap<Event>,
    seq: u64,
    generations: HashMap<(ProcessId, TimerSlot), u64>,
    started: Vec<bool>,
    // deliveries to processes that have not started yet
    parked: Vec<Vec<(ProcessId, Message)>>,
    metrics: SimMetrics,
    outputs: Vec<OutputRecord>,
    transcript: Vec<TranscriptLine>,
}

impl Simulation {
    /// `procs[i]` runs as process `i + 1`; members of `corrupt` are excluded
    /// from metrics and from the decision goal.
    pub fn new(
        env: Env,
        procs: Vec<Box<dyn Process>>,
        corrupt: BTreeSet<ProcessId>,
        adversary: Box<dyn Adversary>,
        seed: u64,
        config: SimConfig,
    ) -> Self {
        assert_eq!(procs.len(), env.params.n, "one state machine per process");
        assert!(corrupt.len() <= env.params.t, "at most t corrupt processes");
        let n = env.params.n;
        Simulation {
            env,
            procs,
            corrupt,
            adversary,
            rng: ChaCha8Rng::seed_from_u64(seed),
            config,
            queue: BinaryHeap::new(),
            seq: 0,
            generations: HashMap::new(),
            started: vec![false; n],
            parked: vec![Vec::new(); n],
            metrics: SimMetrics::default(),
            outputs: Vec::new(),
            transcript: Vec::new(),
        }
    }

    fn push(&mut self, time: Tick, to: ProcessId, rank: Rank, body: Body) {
        self.seq += 1;
        self.queue.push(Event {
            time,
            to,
            rank,
            seq: self.seq,
            body,
        });
    }

    fn deliver_at(&mut self, now: Tick, from: ProcessId, to: ProcessId, msg: &Message) -> Tick {
        if from == to {
            return now;
        }
        let p = &self.env.params;
        let want = self
            .adversary
            .delivery_time(now, from, to, msg, p, &mut self.rng);
        let latest = if now >= p.gst {
            now + p.delta
        } else {
            p.gst + p.delta
        };
        want.clamp(now + 1, latest)
    }

    fn expire_at(&mut self, now: Tick, owner: ProcessId, tag: TimerTag, duration: Tick) -> Tick {
        let p = &self.env.params;
        if now >= p.gst {
            return now + duration;
        }
        let want = self
            .adversary
            .timer_expiry(now, owner, tag, duration, p, &mut self.rng);
        want.clamp(now + duration, p.gst + duration)
    }

    fn apply(&mut self, me: ProcessId, now: Tick, effects: Vec<Effect>) {
        let correct = !self.corrupt.contains(&me);
        for e in effects {
            match e {
                Effect::Send { to, msg } => {
                    let kind = msg.kind();
                    let bits = kind.bit_size(&self.env.params);
                    if correct {
                        self.metrics.max_correct_msg_bits =
                            self.metrics.max_correct_msg_bits.max(bits);
                        if now >= self.env.params.gst {
                            *self.metrics.post_gst_bits_by_kind.entry(kind).or_default() += bits;
                            *self
                                .metrics
                                .post_gst_msg_count_by_kind
                                .entry(kind)
                                .or_default() += 1;
                            self.metrics.post_gst_payload_bits +=
                                kind.payload_bits(&self.env.params);
                        }
                    }
                    if self.config.record_transcript {
                        self.transcript.push(TranscriptLine {
                            tick: now,
                            sender: me,
                            receiver: to,
                            kind,
                            bits,
                        });
                    }
                    let at = self.deliver_at(now, me, to, &msg);
                    self.push(at, to, Rank::Deliver, Body::Deliver { from: me, msg });
                }
                Effect::Measure { tag, duration } => {
                    let g = self.generations.entry((me, tag.slot)).or_default();
                    *g += 1;
                    let generation = *g;
                    let at = self.expire_at(now, me, tag, duration);
                    self.push(at, me, Rank::Timer, Body::Timer { tag, generation });
                }
                Effect::Cancel(slot) => {
                    *self.generations.entry((me, slot)).or_default() += 1;
                }
                Effect::Output(output) => {
                    if let Output::Decide(_) = output {
                        if correct {
                            self.metrics.decision_time.entry(me).or_insert(now);
                        }
                    }
                    self.outputs.push(OutputRecord {
                        time: now,
                        process: me,
                        output,
                    });
                }
            }
        }
    }

    fn correct_count(&self) -> usize {
        self.env.params.n - self.corrupt.len()
    }

    pub fn run(mut self) -> RunReport {
        let gst = self.env.params.gst;
        for p in ProcessId::all(self.env.params.n) {
            let at = self
                .adversary
                .start_time(p, &self.env.params, &mut self.rng)
                .min(gst);
            self.push(at, p, Rank::Start, Body::Start);
        }
        let mut termination = Termination::Quiescent;
        let mut end_time = 0;
        let mut effects = Vec::new();
        while let Some(ev) = self.queue.pop() {
            if let Some(h) = self.config.horizon {
                if ev.time > h {
                    termination = Termination::Horizon;
                    end_time = h;
                    break;
                }
            }
            if self.metrics.steps >= self.config.step_budget {
                termination = Termination::BudgetExhausted;
                break;
            }
            self.metrics.steps += 1;
            end_time = ev.time;
            let me = ev.to;
            let slot = me.index() - 1;
            if let Body::Deliver { from, msg } = ev.body {
                if !self.started[slot] {
                    self.parked[slot].push((from, msg));
                    continue;
                }
                let mut ctx = Ctx::new(me, ev.time, &mut self.env, &mut effects);
                self.procs[slot].on_message(from, msg, &mut ctx);
            } else {
                let proc = &mut self.procs[slot];
                let mut ctx = Ctx::new(me, ev.time, &mut self.env, &mut effects);
                match ev.body {
                    Body::Start => {
                        self.started[slot] = true;
                        proc.on_start(&mut ctx);
                        for (from, msg) in std::mem::take(&mut self.parked[slot]) {
                            proc.on_message(from, msg, &mut ctx);
                        }
                    }
                    Body::Deliver { .. } => unreachable!(),
                    Body::Timer { tag, generation } => {
                        if self.generations.get(&(me, tag.slot)) == Some(&generation) {
                            proc.on_timer(tag, &mut ctx);
                        }
                    }
                }
            }
            let batch = std::mem::take(&mut effects);
            self.apply(me, ev.time, batch);
            if self.config.stop_when_decided
                && self.metrics.decision_time.len() == self.correct_count()
            {
                termination = Termination::AllDecided;
                break;
            }
        }
        let correct = ProcessId::all(self.env.params.n)
            .filter(|p| !self.corrupt.contains(p))
            .collect();
        RunReport {
            metrics: self.metrics,
            outputs: self.outputs,
            transcript: self.transcript,
            termination,
            end_time,
            correct,
            env: self.env,
        }
    }
}
