//! View synchronizer: rotates through views whose leader sets overlap for
//! at least `Delta` after GST, emitting `advance(V)`.

use std::collections::BTreeMap;

use crate::crypto::{PartialSignature, ThresholdSignature};
use crate::model::{Message, ProcessId, ProtocolParams, SyncInstance, Tick, View};
use crate::simnet::{Ctx, Output, TimerSlot, TimerTag};

/// Length of round `r` as measured locally.
pub type RoundDuration = fn(&ProtocolParams, u64) -> Tick;

/// Disperser views: `Delta + 2 delta`.
pub fn disperser_view_duration(p: &ProtocolParams, v: u64) -> Tick {
    p.local_view_duration(v)
}

/// Bytes signed by VIEW-COMPLETED for `view` of instance `inst`.
pub fn completion_message(inst: SyncInstance, view: View) -> Vec<u8> {
    let mut m = b"sync/view-completed/".to_vec();
    m.push(match inst {
        SyncInstance::Disperser => b'd',
        SyncInstance::Agreement => b'a',
    });
    m.extend_from_slice(&view.number().to_be_bytes());
    m
}

pub struct Sync {
    inst: SyncInstance,
    duration: RoundDuration,
    view: View,
    view_sig: Option<ThresholdSignature>,
    completed: BTreeMap<View, BTreeMap<ProcessId, PartialSignature>>,
    started: bool,
    halted: bool,
}

impl Sync {
    pub fn new(inst: SyncInstance, duration: RoundDuration) -> Self {
        Sync {
            inst,
            duration,
            view: View::FIRST,
            view_sig: None,
            completed: BTreeMap::new(),
            started: false,
            halted: false,
        }
    }

    pub fn view(&self) -> View {
        self.view
    }

    pub fn is_running(&self) -> bool {
        self.started && !self.halted
    }

    fn view_slot(&self) -> TimerSlot {
        TimerSlot::SyncView(self.inst)
    }

    fn dissemination_slot(&self) -> TimerSlot {
        TimerSlot::SyncDissemination(self.inst)
    }

    fn arm_view_timer(&self, ctx: &mut Ctx<'_>) {
        let d = (self.duration)(ctx.params(), self.view.number());
        ctx.measure(TimerTag::new(self.view_slot(), self.view.number()), d);
    }

    fn enter(&mut self, ctx: &mut Ctx<'_>) -> View {
        ctx.output(Output::Advance {
            inst: self.inst,
            view: self.view,
        });
        self.view
    }

    /// Starts the synchronizer and enters view 1.
    pub fn start(&mut self, ctx: &mut Ctx<'_>) -> Option<View> {
        if self.started || self.halted {
            return None;
        }
        self.started = true;
        self.arm_view_timer(ctx);
        Some(self.enter(ctx))
    }

    /// Stops all timers; later events are ignored.
    pub fn halt(&mut self, ctx: &mut Ctx<'_>) {
        if self.halted {
            return;
        }
        self.halted = true;
        ctx.cancel(self.view_slot());
        ctx.cancel(self.dissemination_slot());
        self.completed.clear();
    }

    fn prepare_entry(&mut self, ctx: &mut Ctx<'_>) {
        ctx.cancel(self.view_slot());
        let d = ctx.params().local_delta(self.view.number());
        ctx.measure(
            TimerTag::new(self.dissemination_slot(), self.view.number()),
            d,
        );
        let view = self.view;
        self.completed.retain(|v, _| *v >= view);
    }

    pub fn on_timer(&mut self, tag: TimerTag, ctx: &mut Ctx<'_>) -> Option<View> {
        if !self.is_running() {
            return None;
        }
        if tag.slot == self.view_slot() {
            let sig = ctx.share_sign(&completion_message(self.inst, self.view));
            ctx.broadcast(Message::ViewCompleted {
                inst: self.inst,
                view: self.view,
                sig,
            });
            None
        } else if tag.slot == self.dissemination_slot() {
            let sig = self
                .view_sig
                .clone()
                .expect("entered views beyond the first carry a signature");
            ctx.broadcast(Message::EnterView {
                inst: self.inst,
                view: self.view,
                sig,
            });
            self.arm_view_timer(ctx);
            Some(self.enter(ctx))
        } else {
            None
        }
    }

    /// Handles VIEW-COMPLETED and ENTER-VIEW of this instance; other
    /// messages are ignored.
    pub fn on_message(
        &mut self,
        from: ProcessId,
        msg: &Message,
        ctx: &mut Ctx<'_>,
    ) -> Option<View> {
        if !self.is_running() {
            return None;
        }
        match msg {
            Message::ViewCompleted { inst, view, sig } if *inst == self.inst => {
                if *view < self.view {
                    return None;
                }
                let m = completion_message(self.inst, *view);
                if !ctx.crypto_ref().verify_partial(from, &m, sig) {
                    return None;
                }
                let entry = self.completed.entry(*view).or_default();
                entry.insert(from, sig.clone());
                if entry.len() >= ctx.params().quorum() {
                    let combined = ctx.crypto().combine(entry.values()).ok()?;
                    self.view_sig = Some(combined);
                    self.view = view.next();
                    self.prepare_entry(ctx);
                }
                None
            }
            Message::EnterView { inst, view, sig } if *inst == self.inst => {
                if *view <= self.view || view.number() < 2 {
                    return None;
                }
                let prev = View::new(view.number() - 1);
                if !ctx
                    .crypto_ref()
                    .verify_sig(&completion_message(self.inst, prev), sig)
                {
                    return None;
                }
                self.view_sig = Some(sig.clone());
                self.view = *view;
                self.prepare_entry(ctx);
                None
            }
            _ => None,
        }
    }
}

/// A process running only the synchronizer; used to observe its
/// properties in isolation.
pub struct SyncProbe {
    sync: Sync,
}

impl SyncProbe {
    pub fn new() -> Self {
        SyncProbe {
            sync: Sync::new(SyncInstance::Disperser, disperser_view_duration),
        }
    }
}

impl Default for SyncProbe {
    fn default() -> Self {
        Self::new()
    }
}

impl crate::simnet::Process for SyncProbe {
    fn on_start(&mut self, ctx: &mut Ctx<'_>) {
        self.sync.start(ctx);
    }

    fn on_message(&mut self, from: ProcessId, msg: Message, ctx: &mut Ctx<'_>) {
        self.sync.on_message(from, &msg, ctx);
    }

    fn on_timer(&mut self, tag: TimerTag, ctx: &mut Ctx<'_>) {
        self.sync.on_timer(tag, ctx);
    }
}
