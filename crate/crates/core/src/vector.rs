//! Vector consensus by reduction to DARE: agree on `n - t` signed
//! proposals from distinct proposers.

use std::collections::BTreeMap;

use crate::crypto::{Crypto, PartialSignature};
use crate::dare::Dare;
use crate::model::{Message, ProcessId, Validity, Value};
use crate::simnet::{Ctx, Process, TimerTag};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedProposal {
    pub proposer: ProcessId,
    pub proposal: Value,
    pub sig: PartialSignature,
}

/// Bytes a proposer signs for its proposal.
pub fn proposal_message(proposal: &Value) -> Vec<u8> {
    let mut m = b"vector/proposal/".to_vec();
    m.extend_from_slice(proposal.bytes());
    m
}

impl SignedProposal {
    pub fn verifies(&self, crypto: &Crypto) -> bool {
        crypto.verify_partial(self.proposer, &proposal_message(&self.proposal), &self.sig)
    }
}

/// Serializes a vector as a DARE value.
pub fn encode_vector(entries: &[SignedProposal]) -> Value {
    let mut out = Vec::new();
    out.extend_from_slice(&(entries.len() as u32).to_be_bytes());
    for e in entries {
        out.extend_from_slice(&(e.proposer.index() as u32).to_be_bytes());
        out.extend_from_slice(&(e.proposal.bytes().len() as u32).to_be_bytes());
        out.extend_from_slice(e.proposal.bytes());
        out.extend_from_slice(&e.sig.to_bytes());
    }
    Value::new(out)
}

pub fn decode_vector(v: &Value) -> Option<Vec<SignedProposal>> {
    let b = v.bytes();
    let mut pos = 0usize;
    let mut take = |len: usize| -> Option<&[u8]> {
        let s = b.get(pos..pos.checked_add(len)?)?;
        pos += len;
        Some(s)
    };
    let u32_at = |s: &[u8]| u32::from_be_bytes(s.try_into().expect("4 bytes")) as usize;
    let count = u32_at(take(4)?);
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let proposer = u32_at(take(4)?);
        let len = u32_at(take(4)?);
        let proposal = Value::new(take(len)?.to_vec());
        let sig = PartialSignature::from_bytes(take(PartialSignature::ENCODED_LEN)?)?;
        if proposer == 0 {
            return None;
        }
        out.push(SignedProposal {
            proposer: ProcessId::new(proposer),
            proposal,
            sig,
        });
    }
    if take(1).is_some() {
        return None;
    }
    Some(out)
}

/// Valid iff the value is exactly `n - t` correctly signed proposals from
/// distinct proposers.
#[derive(Clone, Copy, Debug)]
pub struct VectorValidity {
    pub n: usize,
    pub t: usize,
}

impl VectorValidity {
    pub fn check(&self, entries: &[SignedProposal], crypto: &Crypto) -> bool {
        let mut seen = std::collections::BTreeSet::new();
        entries.len() == self.n - self.t
            && entries.iter().all(|e| {
                e.proposer.index() <= self.n && seen.insert(e.proposer) && e.verifies(crypto)
            })
    }
}

impl Validity for VectorValidity {
    fn valid(&self, v: &Value, crypto: &Crypto) -> bool {
        decode_vector(v).is_some_and(|entries| self.check(&entries, crypto))
    }
}

pub struct VectorProcess {
    proposal: Option<Value>,
    collected: BTreeMap<ProcessId, SignedProposal>,
    dare: Dare,
    dare_started: bool,
    early: Vec<(ProcessId, Message)>,
}

impl VectorProcess {
    pub fn new(proposal: Value) -> Self {
        VectorProcess {
            proposal: Some(proposal),
            collected: BTreeMap::new(),
            dare: Dare::new(),
            dare_started: false,
            early: Vec::new(),
        }
    }

    fn on_proposal(&mut self, from: ProcessId, sp: &SignedProposal, ctx: &mut Ctx<'_>) {
        if self.dare_started || sp.proposer != from || !sp.verifies(ctx.crypto_ref()) {
            return;
        }
        self.collected.entry(from).or_insert_with(|| sp.clone());
        let need = ctx.params().quorum();
        if self.collected.len() < need {
            return;
        }
        let entries: Vec<_> = self.collected.values().take(need).cloned().collect();
        self.dare_started = true;
        self.dare
            .propose(encode_vector(&entries), ctx)
            .expect("assembled vector is valid");
        for (from, msg) in std::mem::take(&mut self.early) {
            self.dare.on_message(from, msg, ctx);
        }
    }
}

impl Process for VectorProcess {
    fn on_start(&mut self, ctx: &mut Ctx<'_>) {
        let Some(v) = self.proposal.take() else {
            return;
        };
        let sig = ctx.share_sign(&proposal_message(&v));
        let sp = SignedProposal {
            proposer: ctx.me(),
            proposal: v,
            sig,
        };
        ctx.broadcast(Message::Proposal(sp));
    }

    fn on_message(&mut self, from: ProcessId, msg: Message, ctx: &mut Ctx<'_>) {
        match msg {
            Message::Proposal(sp) => self.on_proposal(from, &sp, ctx),
            other if !self.dare_started => self.early.push((from, other)),
            other => {
                self.dare.on_message(from, other, ctx);
            }
        }
    }

    fn on_timer(&mut self, tag: TimerTag, ctx: &mut Ctx<'_>) {
        self.dare.on_timer(tag, ctx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signed(c: &mut Crypto, i: usize, body: &[u8]) -> SignedProposal {
        let proposal = Value::new(body.to_vec());
        let sig = c
            .share_sign(
                ProcessId::new(i),
                ProcessId::new(i),
                &proposal_message(&proposal),
            )
            .unwrap();
        SignedProposal {
            proposer: ProcessId::new(i),
            proposal,
            sig,
        }
    }

    #[test]
    fn vector_round_trip_and_validity() {
        let mut c = Crypto::new(4, 1);
        let entries: Vec<_> = (1..=3).map(|i| signed(&mut c, i, &[i as u8; 5])).collect();
        let v = encode_vector(&entries);
        assert_eq!(decode_vector(&v).unwrap(), entries);
        let check = VectorValidity { n: 4, t: 1 };
        assert!(check.valid(&v, &c));
        assert!(!check.valid(&encode_vector(&entries[..2]), &c));
        let dup = vec![entries[0].clone(), entries[0].clone(), entries[1].clone()];
        assert!(!check.valid(&encode_vector(&dup), &c));
        let mut forged = entries.clone();
        forged[2].proposal = Value::new(vec![0; 5]);
        assert!(!check.valid(&encode_vector(&forged), &c));
        assert!(!check.valid(&Value::new(vec![1, 2, 3]), &c));
    }
}
