//! Broadcast baseline: every leader sends its whole value to everyone, the
//! acknowledged hash goes through agreement and the value is fetched from
//! signers that hold it.

use std::collections::HashMap;

use crate::agreement::{Agreement, Pair};
use crate::crypto::HashValue;
use crate::disperser::{AckRouting, Acquired, Disperser};
use crate::model::{Message, ProcessId, SyncInstance, Value};
use crate::simnet::{Ctx, Output, Process, TimerSlot, TimerTag};

/// The baseline needs `X = 1` and `Y = n` in the parameters.
pub struct BaselineProcess {
    proposal: Option<Value>,
    disperser: Disperser,
    agreement: Agreement,
    acquired: bool,
    wanted: Option<HashValue>,
    // values we hold for others, beyond what the disperser obtained
    held: HashMap<HashValue, Value>,
    decided: bool,
}

impl BaselineProcess {
    pub fn new(proposal: Value) -> Self {
        BaselineProcess {
            proposal: Some(proposal),
            disperser: Disperser::new(AckRouting::AllToAll),
            agreement: Agreement::new(),
            acquired: false,
            wanted: None,
            held: HashMap::new(),
            decided: false,
        }
    }

    fn on_acquire(&mut self, acq: Acquired, ctx: &mut Ctx<'_>) {
        if self.acquired {
            return;
        }
        self.acquired = true;
        if let Some(pair) = self.agreement.propose(
            Pair {
                h: acq.h,
                sig: acq.sig,
            },
            ctx,
        ) {
            self.on_agreement_decide(pair, ctx);
        }
    }

    fn on_agreement_decide(&mut self, pair: Pair, ctx: &mut Ctx<'_>) {
        if let Some(v) = self.lookup(pair.h) {
            self.decide(v, ctx);
            return;
        }
        self.wanted = Some(pair.h);
        // t + 1 signers include a correct holder
        for &p in pair.sig.signers().iter().take(ctx.params().t + 1) {
            ctx.send(p, Message::Fetch(pair.h));
        }
    }

    fn lookup(&self, h: HashValue) -> Option<Value> {
        self.disperser
            .obtained(h)
            .or_else(|| self.held.get(&h))
            .cloned()
    }

    fn decide(&mut self, v: Value, ctx: &mut Ctx<'_>) {
        if self.decided {
            return;
        }
        self.decided = true;
        ctx.output(Output::Decide(v));
    }
}

impl Process for BaselineProcess {
    fn on_start(&mut self, ctx: &mut Ctx<'_>) {
        if let Some(v) = self.proposal.take() {
            self.disperser
                .disperse(v, ctx)
                .expect("harness proposes a valid value once");
        }
    }

    fn on_message(&mut self, from: ProcessId, msg: Message, ctx: &mut Ctx<'_>) {
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
                if let Some(acq) = self.disperser.on_message(from, &msg, ctx) {
                    self.on_acquire(acq, ctx);
                }
            }
            Message::Fetch(h) => {
                if let Some(v) = self.lookup(*h) {
                    ctx.send(from, Message::FetchReply(v));
                }
            }
            Message::FetchReply(v) => {
                let Some(h) = self.wanted else { return };
                if ctx.hash(v.bytes()) == h {
                    self.held.insert(h, v.clone());
                    self.decide(v.clone(), ctx);
                }
            }
            _ => {
                if let Some(pair) = self.agreement.on_message(from, &msg, ctx) {
                    self.on_agreement_decide(pair, ctx);
                }
            }
        }
    }

    fn on_timer(&mut self, tag: TimerTag, ctx: &mut Ctx<'_>) {
        match tag.slot {
            TimerSlot::DisperserPace
            | TimerSlot::SyncView(SyncInstance::Disperser)
            | TimerSlot::SyncDissemination(SyncInstance::Disperser) => {
                self.disperser.on_timer(tag, ctx)
            }
            _ => {
                if let Some(pair) = self.agreement.on_timer(tag, ctx) {
                    self.on_agreement_decide(pair, ctx);
                }
            }
        }
    }
}
