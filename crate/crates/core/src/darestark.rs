//! Shard-based dispersal and retrieval with succinct proofs of correct
//! encoding, over a simulation-trusted proof oracle.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use thiserror::Error;

use crate::agreement::{Agreement, Pair};
use crate::crypto::{Crypto, HashValue, PartialSignature};
use crate::erasure::{Codec, Symbol, SymbolSet};
use crate::model::{Message, ProcessId, ProtocolParams, Validity, Value};
use crate::simnet::{Ctx, Output, Process, TimerTag};

/// Opaque proof that `shard_i(v) = (h, s)` for some valid `v`; charged
/// `proof_kappa` bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ShardProof {
    token: u64,
}

impl ShardProof {
    pub fn fabricate(token: u64) -> Self {
        ShardProof { token }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProofError {
    #[error("value is not valid, no witness exists")]
    NoWitness,
}

/// `(symbol index, hash)` to `(symbol bytes, proof token)`.
type ProvenMap = HashMap<(usize, HashValue), (Arc<[u8]>, u64)>;

/// Registry of honestly proven `(i, h, s)` statements.
#[derive(Debug, Default)]
pub struct ProofOracle {
    proven: ProvenMap,
    next_token: u64,
}

impl ProofOracle {
    pub fn new() -> Self {
        ProofOracle {
            proven: HashMap::new(),
            next_token: 1,
        }
    }

    fn register(&mut self, i: usize, h: HashValue, s: &Symbol) -> ShardProof {
        if let Some((_, token)) = self.proven.get(&(i, h)) {
            return ShardProof { token: *token };
        }
        let token = self.next_token;
        self.next_token += 1;
        self.proven.insert((i, h), (s.data().into(), token));
        ShardProof { token }
    }

    pub fn verify(&self, i: usize, h: HashValue, s: &Symbol, proof: &ShardProof) -> bool {
        s.index() == i
            && self
                .proven
                .get(&(i, h))
                .is_some_and(|(data, token)| **data == *s.data() && *token == proof.token)
    }
}

/// `shard_i(v)`: `(hash(v), encode_i(v))` when `v` is valid, otherwise
/// nothing.
pub fn shard(
    i: usize,
    v: &Value,
    p: &ProtocolParams,
    crypto: &mut Crypto,
    validity: &dyn Validity,
) -> Option<(HashValue, Symbol)> {
    if !validity.valid(v, crypto) {
        return None;
    }
    Some((
        crypto.hash(v.bytes()),
        Codec::for_params(p).encode_one(v, i),
    ))
}

/// Shards and proofs for every index.
pub fn prove_all(
    v: &Value,
    p: &ProtocolParams,
    crypto: &mut Crypto,
    validity: &dyn Validity,
    oracle: &mut ProofOracle,
) -> Result<(HashValue, Vec<(Symbol, ShardProof)>), ProofError> {
    if !validity.valid(v, crypto) {
        return Err(ProofError::NoWitness);
    }
    let h = crypto.hash(v.bytes());
    let out = Codec::for_params(p)
        .encode(v)
        .into_iter()
        .map(|s| {
            let proof = oracle.register(s.index(), h, &s);
            (s, proof)
        })
        .collect();
    Ok((h, out))
}

/// Proof for a single index.
pub fn prove(
    i: usize,
    v: &Value,
    p: &ProtocolParams,
    crypto: &mut Crypto,
    validity: &dyn Validity,
    oracle: &mut ProofOracle,
) -> Result<ShardProof, ProofError> {
    let (h, s) = shard(i, v, p, crypto, validity).ok_or(ProofError::NoWitness)?;
    Ok(oracle.register(i, h, &s))
}

fn prove_in_ctx(
    v: &Value,
    ctx: &mut Ctx<'_>,
) -> Result<(HashValue, Vec<(Symbol, ShardProof)>), ProofError> {
    let env = ctx.env();
    let validity = env.validity.clone();
    prove_all(
        v,
        &env.params,
        &mut env.crypto,
        validity.as_ref(),
        &mut env.proofs,
    )
}

pub struct DareStark {
    proposal: Option<Value>,
    proposed_hash: Option<HashValue>,
    proposal_shards: HashMap<HashValue, (Symbol, ShardProof)>,
    acks: BTreeMap<ProcessId, PartialSignature>,
    proposed_to_agreement: bool,
    agreement: Agreement,
    decision_symbols: HashMap<HashValue, SymbolSet>,
    decided: bool,
}

impl DareStark {
    pub fn new(proposal: Value) -> Self {
        DareStark {
            proposal: Some(proposal),
            proposed_hash: None,
            proposal_shards: HashMap::new(),
            acks: BTreeMap::new(),
            proposed_to_agreement: false,
            agreement: Agreement::new(),
            decision_symbols: HashMap::new(),
            decided: false,
        }
    }

    fn on_agreement_decide(&mut self, pair: Pair, ctx: &mut Ctx<'_>) {
        if let Some((s, proof)) = self.proposal_shards.get(&pair.h) {
            ctx.broadcast(Message::StarkRetrieve {
                h: pair.h,
                symbol: s.clone(),
                proof: *proof,
            });
        }
    }

    fn on_ack(&mut self, from: ProcessId, h: HashValue, sig: &PartialSignature, ctx: &mut Ctx<'_>) {
        if self.proposed_to_agreement
            || Some(h) != self.proposed_hash
            || !ctx.crypto_ref().verify_partial(from, &h.to_bytes(), sig)
        {
            return;
        }
        self.acks.insert(from, sig.clone());
        if self.acks.len() < ctx.params().quorum() {
            return;
        }
        if let Ok(sig) = ctx.crypto().combine(self.acks.values()) {
            self.proposed_to_agreement = true;
            self.acks.clear();
            if let Some(pair) = self.agreement.propose(Pair { h, sig }, ctx) {
                self.on_agreement_decide(pair, ctx);
            }
        }
    }

    fn on_retrieve(
        &mut self,
        from: ProcessId,
        h: HashValue,
        s: &Symbol,
        proof: &ShardProof,
        ctx: &mut Ctx<'_>,
    ) {
        if self.decided || !ctx.env().proofs.verify(from.index(), h, s, proof) {
            return;
        }
        let set = self
            .decision_symbols
            .entry(h)
            .or_insert_with(|| SymbolSet::for_hash(h));
        set.insert(s.clone());
        if set.len() < ctx.params().t + 1 {
            return;
        }
        let symbols = set.to_vec();
        let v = Codec::for_params(ctx.params())
            .decode(&symbols)
            .expect("proven symbols decode");
        self.decided = true;
        self.decision_symbols.clear();
        ctx.output(Output::Decide(v));
    }
}

impl Process for DareStark {
    fn on_start(&mut self, ctx: &mut Ctx<'_>) {
        let Some(v) = self.proposal.take() else {
            return;
        };
        let (h, shards) = prove_in_ctx(&v, ctx).expect("harness proposes a valid value");
        self.proposed_hash = Some(h);
        for (s, proof) in shards {
            ctx.send(
                ProcessId::new(s.index()),
                Message::StarkDispersal {
                    h,
                    symbol: s,
                    proof,
                },
            );
        }
    }

    fn on_message(&mut self, from: ProcessId, msg: Message, ctx: &mut Ctx<'_>) {
        match &msg {
            Message::StarkDispersal { h, symbol, proof } => {
                let me = ctx.me().index();
                if ctx.env().proofs.verify(me, *h, symbol, proof) {
                    self.proposal_shards.insert(*h, (symbol.clone(), *proof));
                    let sig = ctx.share_sign(&h.to_bytes());
                    ctx.send(from, Message::StarkAck { h: *h, sig });
                }
            }
            Message::StarkAck { h, sig } => self.on_ack(from, *h, sig, ctx),
            Message::StarkRetrieve { h, symbol, proof } => {
                self.on_retrieve(from, *h, symbol, proof, ctx)
            }
            _ => {
                if let Some(pair) = self.agreement.on_message(from, &msg, ctx) {
                    self.on_agreement_decide(pair, ctx);
                }
            }
        }
    }

    fn on_timer(&mut self, tag: TimerTag, ctx: &mut Ctx<'_>) {
        if let Some(pair) = self.agreement.on_timer(tag, ctx) {
            self.on_agreement_decide(pair, ctx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AnyValue;

    struct NonEmpty;

    impl Validity for NonEmpty {
        fn valid(&self, v: &Value, _c: &Crypto) -> bool {
            !v.bytes().is_empty()
        }
    }

    fn setup() -> (ProtocolParams, Crypto, ProofOracle) {
        let mut p = ProtocolParams::new(4).unwrap();
        p.l_bits = 256;
        (p.clone(), Crypto::new(p.n, p.t), ProofOracle::new())
    }

    #[test]
    fn shard_definition() {
        let (p, mut c, _) = setup();
        let v = Value::new(vec![9; 32]);
        let (h, s) = shard(2, &v, &p, &mut c, &NonEmpty).unwrap();
        assert_eq!(h, c.hash(v.bytes()));
        assert_eq!(s, Codec::for_params(&p).encode(&v)[1]);
        assert_eq!(shard(2, &v, &p, &mut c, &NonEmpty), Some((h, s)));
        assert_eq!(shard(2, &Value::new(vec![]), &p, &mut c, &NonEmpty), None);
    }

    #[test]
    fn proofs_are_complete_and_sound() {
        let (p, mut c, mut o) = setup();
        let v = Value::new(vec![5; 32]);
        let proof = prove(3, &v, &p, &mut c, &NonEmpty, &mut o).unwrap();
        let (h, s) = shard(3, &v, &p, &mut c, &NonEmpty).unwrap();
        assert!(o.verify(3, h, &s, &proof));
        let garbage = Symbol::new(3, vec![0; s.data().len()]);
        assert!(!o.verify(3, h, &garbage, &proof));
        assert!(!o.verify(3, h, &s, &ShardProof::fabricate(proof.token + 7)));
        assert_eq!(
            prove(1, &Value::new(vec![]), &p, &mut c, &NonEmpty, &mut o),
            Err(ProofError::NoWitness)
        );
    }

    #[test]
    fn t_plus_one_proven_shards_decode_to_the_valid_value() {
        let (p, mut c, mut o) = setup();
        let v = Value::new((0..32).collect());
        let (h, shards) = prove_all(&v, &p, &mut c, &AnyValue, &mut o).unwrap();
        let picked: Vec<Symbol> = shards
            .iter()
            .filter(|(s, proof)| s.index() >= 3 && o.verify(s.index(), h, s, proof))
            .map(|(s, _)| s.clone())
            .collect();
        assert_eq!(picked.len(), p.t + 1);
        let out = Codec::for_params(&p).decode(&picked).unwrap();
        assert_eq!(out, v);
        assert_eq!(c.hash(out.bytes()), h);
    }
}
