//! View-based dispersal: leaders push their value to paced groups, gather
//! `n - t` acknowledgements into a proof of dispersal and confirm it.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::crypto::{HashValue, PartialSignature, ThresholdSignature};
use crate::model::{Message, ProcessId, SyncInstance, Value, View};
use crate::simnet::{Ctx, Output, TimerSlot, TimerTag};
use crate::sync::{disperser_view_duration, Sync};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DisperseError {
    #[error("disperse may be invoked only once")]
    AlreadyStarted,
    #[error("proposal does not satisfy the validity predicate")]
    InvalidProposal,
}

/// Who receives acknowledgements.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AckRouting {
    /// Back to the leader that sent the value.
    ToLeader,
    /// To everyone (the broadcast baseline).
    AllToAll,
}

/// An acquired hash with its proof of dispersal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Acquired {
    pub h: HashValue,
    pub sig: ThresholdSignature,
}

pub struct Disperser {
    routing: AckRouting,
    proposal: Option<Value>,
    obtained: HashMap<HashValue, Value>,
    sync: Sync,
    view: Option<View>,
    next_group: usize,
    acks: HashMap<HashValue, BTreeMap<ProcessId, PartialSignature>>,
    confirmed: BTreeSet<HashValue>,
    acquired: Option<Acquired>,
    stopped: bool,
}

impl Disperser {
    pub fn new(routing: AckRouting) -> Self {
        Disperser {
            routing,
            proposal: None,
            obtained: HashMap::new(),
            sync: Sync::new(SyncInstance::Disperser, disperser_view_duration),
            view: None,
            next_group: 0,
            acks: HashMap::new(),
            confirmed: BTreeSet::new(),
            acquired: None,
            stopped: false,
        }
    }

    pub fn obtained(&self, h: HashValue) -> Option<&Value> {
        self.obtained.get(&h)
    }

    pub fn obtained_count(&self) -> usize {
        self.obtained.len()
    }

    pub fn acquired(&self) -> Option<&Acquired> {
        self.acquired.as_ref()
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    pub fn current_view(&self) -> Option<View> {
        self.view
    }

    pub fn disperse(&mut self, v: Value, ctx: &mut Ctx<'_>) -> Result<(), DisperseError> {
        if self.proposal.is_some() {
            return Err(DisperseError::AlreadyStarted);
        }
        if !ctx.valid(&v) {
            return Err(DisperseError::InvalidProposal);
        }
        self.proposal = Some(v);
        if let Some(view) = self.sync.start(ctx) {
            self.on_advance(view, ctx);
        }
        Ok(())
    }

    fn on_advance(&mut self, view: View, ctx: &mut Ctx<'_>) {
        ctx.cancel(TimerSlot::DisperserPace);
        self.view = Some(view);
        self.next_group = 0;
        if ctx.params().is_leader(ctx.me(), view) {
            self.send_next_group(ctx);
        }
    }

    fn send_next_group(&mut self, ctx: &mut Ctx<'_>) {
        let view = self.view.expect("pacing only inside a view");
        let (n, y, groups) = (ctx.params().n, ctx.params().y, ctx.params().groups());
        let k = self.next_group;
        if k >= groups {
            return;
        }
        let v = self.proposal.clone().expect("disperse precedes any view");
        for i in (k * y + 1)..=((k + 1) * y).min(n) {
            ctx.send(ProcessId::new(i), Message::Dispersal(v.clone()));
        }
        self.next_group += 1;
        if self.next_group < groups {
            let wait = ctx.params().local_delta(view.number());
            ctx.measure(TimerTag::new(TimerSlot::DisperserPace, view.number()), wait);
        }
    }

    pub fn on_timer(&mut self, tag: TimerTag, ctx: &mut Ctx<'_>) {
        if self.stopped {
            return;
        }
        if tag.slot == TimerSlot::DisperserPace {
            if self.view.map(View::number) == Some(tag.view) {
                self.send_next_group(ctx);
            }
            return;
        }
        if let Some(view) = self.sync.on_timer(tag, ctx) {
            self.on_advance(view, ctx);
        }
    }

    /// Returns the acquired pair when this message triggers acquisition.
    pub fn on_message(
        &mut self,
        from: ProcessId,
        msg: &Message,
        ctx: &mut Ctx<'_>,
    ) -> Option<Acquired> {
        if self.stopped || self.proposal.is_none() {
            return None;
        }
        match msg {
            Message::Dispersal(v) => {
                self.on_dispersal(from, v, ctx);
                None
            }
            Message::Ack { h, sig } => {
                self.on_ack(from, *h, sig, ctx);
                None
            }
            Message::Confirm { h, sig } => self.on_confirm(*h, sig, ctx),
            Message::ViewCompleted { .. } | Message::EnterView { .. } => {
                if let Some(view) = self.sync.on_message(from, msg, ctx) {
                    self.on_advance(view, ctx);
                }
                None
            }
            _ => None,
        }
    }

    fn on_dispersal(&mut self, from: ProcessId, v: &Value, ctx: &mut Ctx<'_>) {
        let Some(view) = self.view else { return };
        if !ctx.params().is_leader(from, view) || !ctx.valid(v) {
            return;
        }
        let h = ctx.hash(v.bytes());
        self.obtained.insert(h, v.clone());
        let sig = ctx.share_sign(&h.to_bytes());
        let ack = Message::Ack { h, sig };
        match self.routing {
            AckRouting::ToLeader => ctx.send(from, ack),
            AckRouting::AllToAll => ctx.broadcast(ack),
        }
    }

    fn on_ack(&mut self, from: ProcessId, h: HashValue, sig: &PartialSignature, ctx: &mut Ctx<'_>) {
        if self.confirmed.contains(&h) || !ctx.crypto_ref().verify_partial(from, &h.to_bytes(), sig)
        {
            return;
        }
        let entry = self.acks.entry(h).or_default();
        entry.insert(from, sig.clone());
        if entry.len() < ctx.params().quorum() {
            return;
        }
        if let Ok(sig) = ctx.crypto().combine(entry.values()) {
            self.confirmed.insert(h);
            self.acks.remove(&h);
            ctx.broadcast(Message::Confirm { h, sig });
        }
    }

    fn on_confirm(
        &mut self,
        h: HashValue,
        sig: &ThresholdSignature,
        ctx: &mut Ctx<'_>,
    ) -> Option<Acquired> {
        if !ctx.crypto_ref().verify_sig(&h.to_bytes(), sig) {
            return None;
        }
        let acquired = Acquired {
            h,
            sig: sig.clone(),
        };
        self.acquired = Some(acquired.clone());
        self.stopped = true;
        ctx.output(Output::Acquire(h));
        ctx.broadcast(Message::Confirm {
            h,
            sig: sig.clone(),
        });
        ctx.cancel(TimerSlot::DisperserPace);
        self.sync.halt(ctx);
        self.acks.clear();
        Some(acquired)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnyValue, ProtocolParams, Validity};
    use crate::simnet::{Effect, Env};
    use std::sync::Arc;

    struct OnlyOdd;

    impl Validity for OnlyOdd {
        fn valid(&self, v: &Value, _c: &crate::crypto::Crypto) -> bool {
            v.bytes().first().is_some_and(|b| b % 2 == 1)
        }
    }

    fn env(n: usize) -> Env {
        Env::new(ProtocolParams::new(n).unwrap(), Arc::new(OnlyOdd))
    }

    fn step<R>(
        env: &mut Env,
        me: usize,
        now: u64,
        f: impl FnOnce(&mut Ctx<'_>) -> R,
    ) -> (R, Vec<Effect>) {
        let mut effects = Vec::new();
        let mut ctx = Ctx::new(ProcessId::new(me), now, env, &mut effects);
        let r = f(&mut ctx);
        (r, effects)
    }

    fn sends(effects: &[Effect]) -> Vec<(usize, &'static str)> {
        effects
            .iter()
            .filter_map(|e| match e {
                Effect::Send { to, msg } => Some((to.index(), msg.kind().name())),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn disperse_contract() {
        let mut e = env(4);
        let mut d = Disperser::new(AckRouting::ToLeader);
        let (r, effects) = step(&mut e, 1, 0, |c| d.disperse(Value::new(vec![2]), c));
        assert_eq!(r, Err(DisperseError::InvalidProposal));
        assert!(effects.is_empty());
        let (r, _) = step(&mut e, 1, 0, |c| d.disperse(Value::new(vec![1]), c));
        assert_eq!(r, Ok(()));
        let (r, _) = step(&mut e, 1, 0, |c| d.disperse(Value::new(vec![3]), c));
        assert_eq!(r, Err(DisperseError::AlreadyStarted));
    }

    #[test]
    fn leader_paces_groups_and_view_change_stops_it() {
        let mut e = env(16);
        let mut d = Disperser::new(AckRouting::ToLeader);
        let (_, effects) = step(&mut e, 3, 0, |c| d.disperse(Value::new(vec![1]), c));
        let first: Vec<_> = sends(&effects)
            .into_iter()
            .filter(|s| s.1 == "DISPERSAL")
            .collect();
        assert_eq!(first, (1..=4).map(|i| (i, "DISPERSAL")).collect::<Vec<_>>());
        let pace = TimerTag::new(TimerSlot::DisperserPace, 1);
        let (_, effects) = step(&mut e, 3, 10, |c| d.on_timer(pace, c));
        assert_eq!(
            sends(&effects),
            (5..=8).map(|i| (i, "DISPERSAL")).collect::<Vec<_>>()
        );
        // entering view 2 cancels the chain; a stale expiry does nothing
        step(&mut e, 3, 15, |c| d.on_advance(View::new(2), c));
        let (_, effects) = step(&mut e, 3, 20, |c| d.on_timer(pace, c));
        assert!(sends(&effects).is_empty());
    }

    #[test]
    fn non_leader_sends_nothing() {
        let mut e = env(16);
        let mut d = Disperser::new(AckRouting::ToLeader);
        let (_, effects) = step(&mut e, 9, 0, |c| d.disperse(Value::new(vec![1]), c));
        assert!(sends(&effects).iter().all(|s| s.1 != "DISPERSAL"));
    }

    #[test]
    fn dispersal_acceptance_rules() {
        let mut e = env(4);
        let mut d = Disperser::new(AckRouting::ToLeader);
        step(&mut e, 3, 0, |c| {
            d.disperse(Value::new(vec![1]), c).unwrap()
        });
        // view 1 leaders at n = 4 are P1, P2
        let (_, effects) = step(&mut e, 3, 1, |c| {
            d.on_message(
                ProcessId::new(1),
                &Message::Dispersal(Value::new(vec![5])),
                c,
            )
        });
        assert_eq!(sends(&effects), vec![(1, "ACK")]);
        assert_eq!(d.obtained_count(), 1);
        let (_, effects) = step(&mut e, 3, 1, |c| {
            d.on_message(
                ProcessId::new(4),
                &Message::Dispersal(Value::new(vec![7])),
                c,
            )
        });
        assert!(sends(&effects).is_empty());
        let (_, effects) = step(&mut e, 3, 1, |c| {
            d.on_message(
                ProcessId::new(2),
                &Message::Dispersal(Value::new(vec![8])),
                c,
            )
        });
        assert!(sends(&effects).is_empty());
        assert_eq!(d.obtained_count(), 1);
    }

    #[test]
    fn ack_quorum_confirms_only_the_quorate_hash() {
        let mut e = env(4);
        let mut d = Disperser::new(AckRouting::ToLeader);
        step(&mut e, 1, 0, |c| {
            d.disperse(Value::new(vec![1]), c).unwrap()
        });
        let h = e.crypto.hash(b"value h");
        let h2 = e.crypto.hash(b"value h2");
        let mut confirms = Vec::new();
        for (signer, hash) in [(2, h), (3, h2), (3, h), (4, h)] {
            let sig = e
                .crypto
                .share_sign(
                    ProcessId::new(signer),
                    ProcessId::new(signer),
                    &hash.to_bytes(),
                )
                .unwrap();
            let msg = Message::Ack { h: hash, sig };
            let (_, effects) = step(&mut e, 1, 5, |c| {
                d.on_message(ProcessId::new(signer), &msg, c)
            });
            confirms.extend(effects.into_iter().filter_map(|e| match e {
                Effect::Send {
                    msg: Message::Confirm { h, .. },
                    ..
                } => Some(h),
                _ => None,
            }));
        }
        assert_eq!(confirms, vec![h; 4]);
    }

    #[test]
    fn first_valid_confirm_acquires_once() {
        let mut e = Env::new(ProtocolParams::new(4).unwrap(), Arc::new(AnyValue));
        let mut d = Disperser::new(AckRouting::ToLeader);
        step(&mut e, 4, 0, |c| {
            d.disperse(Value::new(vec![1]), c).unwrap()
        });
        let h = e.crypto.hash(b"v");
        let forged = ThresholdSignature::fabricate(h, vec![ProcessId::new(1)], 99);
        let (r, _) = step(&mut e, 4, 3, |c| {
            d.on_message(ProcessId::new(1), &Message::Confirm { h, sig: forged }, c)
        });
        assert_eq!(r, None);
        let partials: Vec<_> = (1..=3)
            .map(|i| {
                e.crypto
                    .share_sign(ProcessId::new(i), ProcessId::new(i), &h.to_bytes())
                    .unwrap()
            })
            .collect();
        let sig = e.crypto.combine(&partials).unwrap();
        let msg = Message::Confirm {
            h,
            sig: sig.clone(),
        };
        let (r, effects) = step(&mut e, 4, 4, |c| d.on_message(ProcessId::new(1), &msg, c));
        assert_eq!(r, Some(Acquired { h, sig }));
        assert_eq!(
            sends(&effects).iter().filter(|s| s.1 == "CONFIRM").count(),
            4
        );
        let (r, effects) = step(&mut e, 4, 5, |c| d.on_message(ProcessId::new(2), &msg, c));
        assert_eq!(r, None);
        assert!(effects.is_empty());
    }
}
