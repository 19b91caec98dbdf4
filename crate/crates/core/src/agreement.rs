//! Validated Byzantine agreement on (hash, proof-of-dispersal) pairs.
//!
//! Single-leader sub-views are grouped into epochs of `t + 1`, so every
//! epoch contains a correct leader; epochs are synchronized by a second
//! [`Sync`] instance. Each sub-view runs two voting phases: a prepare-QC
//! locks the pair, a commit-QC decides it. Leaders re-propose the highest
//! lock reported by `n - t` STATUS messages; voters accept a different
//! pair only with a justification at least as recent as their lock.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::crypto::{HashValue, PartialSignature, ThresholdSignature};
use crate::model::{Message, ProcessId, ProtocolParams, SyncInstance, Tick, View};
use crate::simnet::{Ctx, Output, TimerSlot, TimerTag};
use crate::sync::Sync;

/// Length of a sub-view in units of the (local) delay bound.
pub const SUBVIEW_DELTAS: Tick = 9;
/// How long a leader waits for STATUS messages before proposing.
pub const PROPOSE_WAIT_DELTAS: Tick = 3;

pub fn subview_duration(p: &ProtocolParams, epoch: u64) -> Tick {
    SUBVIEW_DELTAS * p.local_delta(epoch)
}

/// Epoch length: `t + 1` sub-views plus `2 delta` of entry skew.
pub fn epoch_duration(p: &ProtocolParams, epoch: u64) -> Tick {
    (p.t as Tick + 1) * subview_duration(p, epoch) + 2 * p.local_delta(epoch)
}

/// Leader of global sub-view `w`.
pub fn subview_leader(n: usize, w: u64) -> ProcessId {
    ProcessId::new(((w - 1) % n as u64) as usize + 1)
}

/// The value agreed upon: a hash with its proof of dispersal.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Pair {
    pub h: HashValue,
    pub sig: ThresholdSignature,
}

impl Pair {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.h.to_bytes().to_vec();
        out.extend_from_slice(&self.sig.to_bytes());
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Prepare,
    Commit,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuorumCertificate {
    pub view: u64,
    pub phase: Phase,
    pub pair: Pair,
    pub sig: ThresholdSignature,
}

fn vote_message(view: u64, phase: Phase, digest: HashValue) -> Vec<u8> {
    let mut m = b"agr/vote/".to_vec();
    m.extend_from_slice(&view.to_be_bytes());
    m.push(match phase {
        Phase::Prepare => b'p',
        Phase::Commit => b'c',
    });
    m.extend_from_slice(&digest.to_bytes());
    m
}

/// External validity of a pair: its signature certifies dispersal of `h`.
pub fn pair_valid(ctx: &Ctx<'_>, pair: &Pair) -> bool {
    ctx.crypto_ref().verify_sig(&pair.h.to_bytes(), &pair.sig)
}

pub fn qc_valid(ctx: &mut Ctx<'_>, qc: &QuorumCertificate) -> bool {
    let digest = ctx.hash(&qc.pair.to_bytes());
    ctx.crypto_ref()
        .verify_sig(&vote_message(qc.view, qc.phase, digest), &qc.sig)
}

pub struct Agreement {
    sync: Sync,
    own: Option<Pair>,
    started: bool,
    halted: bool,
    decided: Option<Pair>,
    // decision not yet handed to the caller
    fresh: Option<Pair>,
    epoch: Option<View>,
    // current sub-view, 0 before the first epoch
    cur: u64,
    lock: Option<QuorumCertificate>,
    proposed: bool,
    propose_timer_done: bool,
    voted_prepare: bool,
    voted_commit: bool,
    statuses: BTreeMap<u64, BTreeMap<ProcessId, Option<QuorumCertificate>>>,
    votes: HashMap<(u64, Phase, HashValue), BTreeMap<ProcessId, PartialSignature>>,
    certified: HashSet<(u64, Phase)>,
    proposals: HashMap<HashValue, Pair>,
    // messages that arrived before `propose` or for a future sub-view
    early: Vec<(ProcessId, Message)>,
    future: BTreeMap<u64, Vec<(ProcessId, Message)>>,
}

impl Default for Agreement {
    fn default() -> Self {
        Self::new()
    }
}

impl Agreement {
    pub fn new() -> Self {
        Agreement {
            sync: Sync::new(SyncInstance::Agreement, epoch_duration),
            own: None,
            started: false,
            halted: false,
            decided: None,
            fresh: None,
            epoch: None,
            cur: 0,
            lock: None,
            proposed: false,
            propose_timer_done: false,
            voted_prepare: false,
            voted_commit: false,
            statuses: BTreeMap::new(),
            votes: HashMap::new(),
            certified: HashSet::new(),
            proposals: HashMap::new(),
            early: Vec::new(),
            future: BTreeMap::new(),
        }
    }

    pub fn decided(&self) -> Option<&Pair> {
        self.decided.as_ref()
    }

    pub fn lock(&self) -> Option<&QuorumCertificate> {
        self.lock.as_ref()
    }

    pub fn current_subview(&self) -> u64 {
        self.cur
    }

    /// Starts the protocol with this process's pair. Later calls are
    /// ignored.
    pub fn propose(&mut self, pair: Pair, ctx: &mut Ctx<'_>) -> Option<Pair> {
        if self.started {
            return None;
        }
        self.started = true;
        self.own = Some(pair);
        if let Some(e) = self.sync.start(ctx) {
            self.enter_epoch(e, ctx);
        }
        for (from, msg) in std::mem::take(&mut self.early) {
            self.handle(from, &msg, ctx);
        }
        self.fresh.take()
    }

    fn enter_epoch(&mut self, epoch: View, ctx: &mut Ctx<'_>) {
        self.epoch = Some(epoch);
        let w = (epoch.number() - 1) * (ctx.params().t as u64 + 1) + 1;
        self.enter_subview(w, ctx);
    }

    fn epoch_of(&self, w: u64, p: &ProtocolParams) -> u64 {
        (w - 1) / (p.t as u64 + 1) + 1
    }

    fn enter_subview(&mut self, w: u64, ctx: &mut Ctx<'_>) {
        if w <= self.cur {
            return;
        }
        self.cur = w;
        self.proposed = false;
        self.propose_timer_done = false;
        self.voted_prepare = false;
        self.voted_commit = false;
        self.statuses = self.statuses.split_off(&w);
        self.votes.retain(|k, _| k.0 >= w);
        let e = self.epoch_of(w, ctx.params());
        let d = subview_duration(ctx.params(), e);
        ctx.measure(TimerTag::new(TimerSlot::AgrSubView, w), d);
        let leader = subview_leader(ctx.params().n, w);
        ctx.send(
            leader,
            Message::AgrStatus {
                view: w,
                lock: self.lock.clone(),
            },
        );
        if leader == ctx.me() {
            let wait = PROPOSE_WAIT_DELTAS * ctx.params().local_delta(e);
            ctx.measure(TimerTag::new(TimerSlot::AgrPropose, w), wait);
        }
        let pending: Vec<_> = {
            let later = self.future.split_off(&(w + 1));
            let now = std::mem::replace(&mut self.future, later);
            now.into_iter()
                .filter(|(k, _)| *k == w)
                .flat_map(|(_, v)| v)
                .collect()
        };
        for (from, msg) in pending {
            self.handle(from, &msg, ctx);
        }
    }

    fn halt(&mut self, ctx: &mut Ctx<'_>) {
        self.halted = true;
        self.sync.halt(ctx);
        ctx.cancel(TimerSlot::AgrSubView);
        ctx.cancel(TimerSlot::AgrPropose);
        self.statuses.clear();
        self.votes.clear();
        self.future.clear();
    }

    pub fn on_timer(&mut self, tag: TimerTag, ctx: &mut Ctx<'_>) -> Option<Pair> {
        if self.halted || !self.started {
            return None;
        }
        match tag.slot {
            TimerSlot::AgrSubView if tag.view == self.cur => {
                let t1 = ctx.params().t as u64 + 1;
                if !self.cur.is_multiple_of(t1) {
                    self.enter_subview(self.cur + 1, ctx);
                }
            }
            TimerSlot::AgrPropose if tag.view == self.cur => {
                self.propose_timer_done = true;
                self.try_propose(ctx);
            }
            TimerSlot::SyncView(_) | TimerSlot::SyncDissemination(_) => {
                if let Some(e) = self.sync.on_timer(tag, ctx) {
                    self.enter_epoch(e, ctx);
                }
            }
            _ => {}
        }
        self.fresh.take()
    }

    fn try_propose(&mut self, ctx: &mut Ctx<'_>) {
        let w = self.cur;
        if self.proposed
            || !self.propose_timer_done
            || subview_leader(ctx.params().n, w) != ctx.me()
        {
            return;
        }
        let Some(reports) = self.statuses.get(&w) else {
            return;
        };
        if reports.len() < ctx.params().quorum() {
            return;
        }
        let highest = reports.values().flatten().max_by_key(|qc| qc.view).cloned();
        let (pair, justify) = match highest {
            Some(qc) => (qc.pair.clone(), Some(qc)),
            None => (self.own.clone().expect("started"), None),
        };
        self.proposed = true;
        let digest = ctx.hash(&pair.to_bytes());
        self.proposals.insert(digest, pair.clone());
        ctx.broadcast(Message::AgrPropose {
            view: w,
            pair,
            justify,
        });
    }

    pub fn on_message(
        &mut self,
        from: ProcessId,
        msg: &Message,
        ctx: &mut Ctx<'_>,
    ) -> Option<Pair> {
        if self.halted {
            return None;
        }
        let relevant = matches!(
            msg,
            Message::AgrStatus { .. }
                | Message::AgrPropose { .. }
                | Message::AgrVote { .. }
                | Message::AgrQc(_)
                | Message::AgrDecide(_)
                | Message::ViewCompleted {
                    inst: SyncInstance::Agreement,
                    ..
                }
                | Message::EnterView {
                    inst: SyncInstance::Agreement,
                    ..
                }
        );
        if !relevant {
            return None;
        }
        if !self.started {
            self.early.push((from, msg.clone()));
            return None;
        }
        self.handle(from, msg, ctx);
        self.fresh.take()
    }

    fn handle(&mut self, from: ProcessId, msg: &Message, ctx: &mut Ctx<'_>) {
        if self.halted {
            return;
        }
        match msg {
            Message::ViewCompleted { .. } | Message::EnterView { .. } => {
                if let Some(e) = self.sync.on_message(from, msg, ctx) {
                    self.enter_epoch(e, ctx);
                }
            }
            Message::AgrStatus { view, lock } => {
                if *view < self.cur || subview_leader(ctx.params().n, *view) != ctx.me() {
                    return;
                }
                if let Some(qc) = lock {
                    if qc.phase != Phase::Prepare || qc.view >= *view || !qc_valid(ctx, qc) {
                        return;
                    }
                }
                self.statuses
                    .entry(*view)
                    .or_default()
                    .insert(from, lock.clone());
                if *view == self.cur {
                    self.try_propose(ctx);
                }
            }
            Message::AgrPropose { view, .. } | Message::AgrVote { view, .. }
                if *view > self.cur =>
            {
                self.future
                    .entry(*view)
                    .or_default()
                    .push((from, msg.clone()));
            }
            Message::AgrQc(qc) if qc.phase == Phase::Prepare && qc.view > self.cur => {
                self.future
                    .entry(qc.view)
                    .or_default()
                    .push((from, msg.clone()));
            }
            Message::AgrPropose {
                view,
                pair,
                justify,
            } => {
                if *view == self.cur && from == subview_leader(ctx.params().n, *view) {
                    self.on_propose(*view, pair, justify.as_ref(), ctx);
                }
            }
            Message::AgrVote {
                view,
                phase,
                h,
                sig,
            } => {
                self.on_vote(from, *view, *phase, *h, sig, ctx);
            }
            Message::AgrQc(qc) | Message::AgrDecide(qc) => match qc.phase {
                Phase::Commit => {
                    if qc_valid(ctx, qc) && pair_valid(ctx, &qc.pair) {
                        self.decide(qc.clone(), ctx);
                    }
                }
                Phase::Prepare => {
                    if qc.view == self.cur && !self.voted_commit && qc_valid(ctx, qc) {
                        self.voted_commit = true;
                        if self.lock.as_ref().is_none_or(|l| l.view <= qc.view) {
                            self.lock = Some(qc.clone());
                        }
                        let digest = ctx.hash(&qc.pair.to_bytes());
                        let sig = ctx.share_sign(&vote_message(qc.view, Phase::Commit, digest));
                        let leader = subview_leader(ctx.params().n, qc.view);
                        ctx.send(
                            leader,
                            Message::AgrVote {
                                view: qc.view,
                                phase: Phase::Commit,
                                h: digest,
                                sig,
                            },
                        );
                    }
                }
            },
            _ => {}
        }
    }

    fn on_propose(
        &mut self,
        w: u64,
        pair: &Pair,
        justify: Option<&QuorumCertificate>,
        ctx: &mut Ctx<'_>,
    ) {
        if self.voted_prepare || !pair_valid(ctx, pair) {
            return;
        }
        if let Some(j) = justify {
            if j.phase != Phase::Prepare || j.view >= w || j.pair != *pair || !qc_valid(ctx, j) {
                return;
            }
        }
        let safe = match &self.lock {
            None => true,
            Some(lock) => lock.pair == *pair || justify.is_some_and(|j| j.view >= lock.view),
        };
        if !safe {
            return;
        }
        self.voted_prepare = true;
        let digest = ctx.hash(&pair.to_bytes());
        self.proposals.insert(digest, pair.clone());
        let sig = ctx.share_sign(&vote_message(w, Phase::Prepare, digest));
        ctx.send(
            subview_leader(ctx.params().n, w),
            Message::AgrVote {
                view: w,
                phase: Phase::Prepare,
                h: digest,
                sig,
            },
        );
    }

    fn on_vote(
        &mut self,
        from: ProcessId,
        w: u64,
        phase: Phase,
        digest: HashValue,
        sig: &PartialSignature,
        ctx: &mut Ctx<'_>,
    ) {
        if w < self.cur
            || subview_leader(ctx.params().n, w) != ctx.me()
            || self.certified.contains(&(w, phase))
            || !ctx
                .crypto_ref()
                .verify_partial(from, &vote_message(w, phase, digest), sig)
        {
            return;
        }
        let entry = self.votes.entry((w, phase, digest)).or_default();
        entry.insert(from, sig.clone());
        if entry.len() < ctx.params().quorum() {
            return;
        }
        let Some(pair) = self.proposals.get(&digest).cloned() else {
            return;
        };
        if let Ok(qsig) = ctx.crypto().combine(entry.values()) {
            self.certified.insert((w, phase));
            ctx.broadcast(Message::AgrQc(QuorumCertificate {
                view: w,
                phase,
                pair,
                sig: qsig,
            }));
        }
    }

    fn decide(&mut self, qc: QuorumCertificate, ctx: &mut Ctx<'_>) {
        if self.decided.is_some() {
            return;
        }
        self.decided = Some(qc.pair.clone());
        ctx.output(Output::AgreementDecide(qc.pair.h));
        self.fresh = Some(qc.pair.clone());
        ctx.broadcast(Message::AgrDecide(qc));
        self.halt(ctx);
    }
}
