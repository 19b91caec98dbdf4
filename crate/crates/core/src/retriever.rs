//! Value retrieval from at least `t + 1` correct holders.
//!
//! Holders send symbol `j` to `P_j`. A process that receives `t + 1`
//! identical copies of its own symbol knows it is genuine and broadcasts it.
//! Everyone decodes with error correction once `2t + 1` broadcast symbols
//! are in, retrying as more arrive, and outputs only when the re-encoded
//! value matches at least `2t + 1` of them.

use std::collections::{BTreeSet, HashMap};

use crate::erasure::{Codec, Symbol, SymbolSet};
use crate::model::{Message, ProcessId, Value};
use crate::simnet::{Ctx, Output};

pub struct Retriever {
    input_given: bool,
    // senders of SYMBOL-SHARE, each counted once
    share_senders: BTreeSet<ProcessId>,
    share_tally: HashMap<Vec<u8>, usize>,
    broadcast_sent: bool,
    received: SymbolSet,
    output: Option<Value>,
}

impl Default for Retriever {
    fn default() -> Self {
        Self::new()
    }
}

impl Retriever {
    pub fn new() -> Self {
        Retriever {
            input_given: false,
            share_senders: BTreeSet::new(),
            share_tally: HashMap::new(),
            broadcast_sent: false,
            received: SymbolSet::new(),
            output: None,
        }
    }

    pub fn output(&self) -> Option<&Value> {
        self.output.as_ref()
    }

    pub fn symbols_received(&self) -> usize {
        self.received.len()
    }

    /// Supplies this process's input, `None` standing for bottom. Returns
    /// the output if it is already determined.
    pub fn input(&mut self, v: Option<Value>, ctx: &mut Ctx<'_>) -> Option<Value> {
        if self.input_given {
            return None;
        }
        self.input_given = true;
        if let Some(v) = v {
            let codec = Codec::for_params(ctx.params());
            for s in codec.encode(&v) {
                ctx.send(ProcessId::new(s.index()), Message::SymbolShare(s));
            }
        }
        self.try_output(ctx)
    }

    /// Tallies symbol messages; they are accepted before `input` too.
    pub fn on_message(
        &mut self,
        from: ProcessId,
        msg: &Message,
        ctx: &mut Ctx<'_>,
    ) -> Option<Value> {
        match msg {
            Message::SymbolShare(s) => {
                self.on_share(from, s, ctx);
                None
            }
            Message::SymbolBcast(s) => {
                if s.index() != from.index() || self.output.is_some() {
                    return None;
                }
                if self.received.insert(s.clone()) {
                    self.try_output(ctx)
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    fn on_share(&mut self, from: ProcessId, s: &Symbol, ctx: &mut Ctx<'_>) {
        if self.broadcast_sent || s.index() != ctx.me().index() || !self.share_senders.insert(from)
        {
            return;
        }
        let count = self.share_tally.entry(s.data().to_vec()).or_default();
        *count += 1;
        if *count > ctx.params().t {
            self.broadcast_sent = true;
            self.share_tally.clear();
            ctx.broadcast(Message::SymbolBcast(s.clone()));
        }
    }

    fn try_output(&mut self, ctx: &mut Ctx<'_>) -> Option<Value> {
        let p = ctx.params();
        let need = 2 * p.t + 1;
        if !self.input_given || self.output.is_some() || self.received.len() < need {
            return None;
        }
        let codec = Codec::for_params(p);
        let symbols = self.received.to_vec();
        let v = codec.decode_correcting(&symbols).ok()?;
        let reencoded = codec.encode(&v);
        let matches = symbols
            .iter()
            .filter(|s| reencoded[s.index() - 1].data() == s.data())
            .count();
        if matches < need {
            return None;
        }
        self.output = Some(v.clone());
        ctx.output(Output::RetrieverOutput(v.clone()));
        Some(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnyValue, ProtocolParams};
    use crate::simnet::{Effect, Env};
    use std::sync::Arc;

    fn env(n: usize) -> Env {
        let mut p = ProtocolParams::new(n).unwrap();
        p.l_bits = 256;
        Env::new(p, Arc::new(AnyValue))
    }

    fn step<R>(env: &mut Env, me: usize, f: impl FnOnce(&mut Ctx<'_>) -> R) -> (R, Vec<Effect>) {
        let mut effects = Vec::new();
        let mut ctx = Ctx::new(ProcessId::new(me), 0, env, &mut effects);
        let r = f(&mut ctx);
        (r, effects)
    }

    fn bcasts(effects: &[Effect]) -> usize {
        effects
            .iter()
            .filter(|e| {
                matches!(
                    e,
                    Effect::Send {
                        msg: Message::SymbolBcast(_),
                        ..
                    }
                )
            })
            .count()
    }

    #[test]
    fn two_identical_shares_trigger_broadcast_once() {
        let mut e = env(4);
        let v = Value::new((0..32).collect());
        let s3 = Codec::new(4, 1).unwrap().encode_one(&v, 3);
        let mut r = Retriever::new();
        let share = Message::SymbolShare(s3);
        let (_, fx) = step(&mut e, 3, |c| r.on_message(ProcessId::new(1), &share, c));
        assert_eq!(bcasts(&fx), 0);
        let (_, fx) = step(&mut e, 3, |c| r.on_message(ProcessId::new(1), &share, c));
        assert_eq!(bcasts(&fx), 0, "duplicate sender counted once");
        let (_, fx) = step(&mut e, 3, |c| r.on_message(ProcessId::new(2), &share, c));
        assert_eq!(bcasts(&fx), 4);
        let (_, fx) = step(&mut e, 3, |c| r.on_message(ProcessId::new(4), &share, c));
        assert_eq!(bcasts(&fx), 0);
    }

    #[test]
    fn three_broadcasts_with_one_corrupted_need_a_fourth() {
        let mut e = env(4);
        let v = Value::new((0..32).collect());
        let syms = Codec::new(4, 1).unwrap().encode(&v);
        let mut r = Retriever::new();
        step(&mut e, 1, |c| r.input(None, c));
        let garbage = Symbol::new(2, vec![0xAB; syms[1].data().len()]);
        for (from, s) in [(1, syms[0].clone()), (2, garbage), (3, syms[2].clone())] {
            let (out, _) = step(&mut e, 1, |c| {
                r.on_message(ProcessId::new(from), &Message::SymbolBcast(s), c)
            });
            assert_eq!(out, None);
        }
        let (out, _) = step(&mut e, 1, |c| {
            r.on_message(ProcessId::new(4), &Message::SymbolBcast(syms[3].clone()), c)
        });
        assert_eq!(out, Some(v));
    }

    #[test]
    fn symbol_must_carry_sender_index() {
        let mut e = env(4);
        let v = Value::new((0..32).collect());
        let syms = Codec::new(4, 1).unwrap().encode(&v);
        let mut r = Retriever::new();
        step(&mut e, 1, |c| r.input(Some(v.clone()), c));
        step(&mut e, 1, |c| {
            r.on_message(ProcessId::new(2), &Message::SymbolBcast(syms[0].clone()), c)
        });
        assert_eq!(r.symbols_received(), 0);
    }
}
