//! Disperse, agree on the hash, retrieve the value.

use crate::agreement::{Agreement, Pair};
use crate::disperser::{AckRouting, Acquired, DisperseError, Disperser};
use crate::model::{Message, ProcessId, SyncInstance, Value};
use crate::retriever::Retriever;
use crate::simnet::{Ctx, Output, Process, TimerSlot, TimerTag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum DarePhase {
    Idle,
    Dispersing,
    Agreeing,
    Retrieving,
    Decided,
}

/// One DARE instance as a composable component.
pub struct Dare {
    phase: DarePhase,
    disperser: Disperser,
    agreement: Agreement,
    retriever: Retriever,
    acquired: Option<Acquired>,
    decided_pair: Option<Pair>,
    decision: Option<Value>,
}

impl Default for Dare {
    fn default() -> Self {
        Self::new()
    }
}

impl Dare {
    pub fn new() -> Self {
        Dare {
            phase: DarePhase::Idle,
            disperser: Disperser::new(AckRouting::ToLeader),
            agreement: Agreement::new(),
            retriever: Retriever::new(),
            acquired: None,
            decided_pair: None,
            decision: None,
        }
    }

    pub fn phase(&self) -> DarePhase {
        self.phase
    }

    pub fn decision(&self) -> Option<&Value> {
        self.decision.as_ref()
    }

    pub fn disperser(&self) -> &Disperser {
        &self.disperser
    }

    /// Proposes `v`; the decision is returned by whichever later call
    /// completes it.
    pub fn propose(&mut self, v: Value, ctx: &mut Ctx<'_>) -> Result<Option<Value>, DisperseError> {
        self.disperser.disperse(v, ctx)?;
        self.phase = DarePhase::Dispersing;
        Ok(None)
    }

    fn on_acquire(&mut self, acq: Acquired, ctx: &mut Ctx<'_>) -> Option<Value> {
        if self.acquired.is_some() {
            return None;
        }
        self.acquired = Some(acq.clone());
        if self.phase < DarePhase::Agreeing {
            self.phase = DarePhase::Agreeing;
        }
        let decided = self.agreement.propose(
            Pair {
                h: acq.h,
                sig: acq.sig,
            },
            ctx,
        )?;
        self.on_agreement_decide(decided, ctx)
    }

    fn on_agreement_decide(&mut self, pair: Pair, ctx: &mut Ctx<'_>) -> Option<Value> {
        let input = self.disperser.obtained(pair.h).cloned();
        self.decided_pair = Some(pair);
        self.phase = DarePhase::Retrieving;
        let v = self.retriever.input(input, ctx)?;
        self.finish(v, ctx)
    }

    fn finish(&mut self, v: Value, ctx: &mut Ctx<'_>) -> Option<Value> {
        if self.decision.is_some() || self.decided_pair.is_none() {
            return None;
        }
        self.phase = DarePhase::Decided;
        self.decision = Some(v.clone());
        ctx.output(Output::Decide(v.clone()));
        Some(v)
    }

    pub fn on_message(
        &mut self,
        from: ProcessId,
        msg: Message,
        ctx: &mut Ctx<'_>,
    ) -> Option<Value> {
        // a decided process keeps serving its symbol to others
        if self.phase == DarePhase::Idle {
            return None;
        }
        match &msg {
            Message::Dispersal(_)
            | Message::Ack { .. }
            | Message::Confirm { .. }
            | Message::ViewCompleted {
                inst: SyncInstance::Disperser,
                ..
            }
            | Message::EnterView {
                inst: SyncInstance::Disperser,
                ..
            } => {
                let acq = self.disperser.on_message(from, &msg, ctx)?;
                self.on_acquire(acq, ctx)
            }
            Message::SymbolShare(_) | Message::SymbolBcast(_) => {
                let v = self.retriever.on_message(from, &msg, ctx)?;
                self.finish(v, ctx)
            }
            _ => {
                let pair = self.agreement.on_message(from, &msg, ctx)?;
                self.on_agreement_decide(pair, ctx)
            }
        }
    }

    pub fn on_timer(&mut self, tag: TimerTag, ctx: &mut Ctx<'_>) -> Option<Value> {
        match tag.slot {
            TimerSlot::DisperserPace
            | TimerSlot::SyncView(SyncInstance::Disperser)
            | TimerSlot::SyncDissemination(SyncInstance::Disperser) => {
                self.disperser.on_timer(tag, ctx);
                None
            }
            _ => {
                let pair = self.agreement.on_timer(tag, ctx)?;
                self.on_agreement_decide(pair, ctx)
            }
        }
    }
}

/// A process running DARE on a fixed proposal.
pub struct DareProcess {
    proposal: Option<Value>,
    dare: Dare,
}

impl DareProcess {
    pub fn new(proposal: Value) -> Self {
        DareProcess {
            proposal: Some(proposal),
            dare: Dare::new(),
        }
    }

    pub fn dare(&self) -> &Dare {
        &self.dare
    }
}

impl Process for DareProcess {
    fn on_start(&mut self, ctx: &mut Ctx<'_>) {
        if let Some(v) = self.proposal.take() {
            self.dare
                .propose(v, ctx)
                .expect("harness proposes a valid value once");
        }
    }

    fn on_message(&mut self, from: ProcessId, msg: Message, ctx: &mut Ctx<'_>) {
        self.dare.on_message(from, msg, ctx);
    }

    fn on_timer(&mut self, tag: TimerTag, ctx: &mut Ctx<'_>) {
        self.dare.on_timer(tag, ctx);
    }
}
