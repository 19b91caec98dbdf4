//! Adversary schedulers and Byzantine behaviour scripts, and the named
//! scenarios built from them.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::darestark::{prove_all, ShardProof};
use crate::erasure::{Codec, Symbol};
use crate::model::{
    materialized_len, Message, MsgKind, ProcessId, ProtocolParams, SyncInstance, Tick, Value,
};
use crate::simnet::{Adversary, Ctx, Effect, Process, TimerSlot, TimerTag};
use crate::vector::{proposal_message, SignedProposal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    GoodCase,
    AdversarialShift,
    SilentFaults,
    Equivocation,
    PreGstChaos,
    RetrievalCorruption,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::GoodCase,
        Scenario::AdversarialShift,
        Scenario::SilentFaults,
        Scenario::Equivocation,
        Scenario::PreGstChaos,
        Scenario::RetrievalCorruption,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::GoodCase => "good-case",
            Scenario::AdversarialShift => "adversarial-shift",
            Scenario::SilentFaults => "silent-faults",
            Scenario::Equivocation => "equivocation",
            Scenario::PreGstChaos => "pre-gst-chaos",
            Scenario::RetrievalCorruption => "retrieval-corruption",
        }
    }

    /// Behaviour of the corrupt processes, if any.
    pub fn script(self) -> Option<ByzScript> {
        match self {
            Scenario::GoodCase | Scenario::AdversarialShift => None,
            Scenario::SilentFaults | Scenario::PreGstChaos => Some(ByzScript::Silent),
            Scenario::Equivocation => Some(ByzScript::Equivocate),
            Scenario::RetrievalCorruption => Some(ByzScript::GarbageSymbols),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown scenario `{0}`")]
pub struct UnknownScenario(pub String);

impl FromStr for Scenario {
    type Err = UnknownScenario;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| UnknownScenario(s.to_string()))
    }
}

/// Picks `t` distinct processes to corrupt.
pub fn pick_corrupt(n: usize, t: usize, rng: &mut ChaCha8Rng) -> BTreeSet<ProcessId> {
    let mut all: Vec<ProcessId> = ProcessId::all(n).collect();
    all.shuffle(rng);
    all.into_iter().take(t).collect()
}

fn uniform(rng: &mut ChaCha8Rng, lo: Tick, hi: Tick) -> Tick {
    if hi <= lo {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Post-GST delays uniform in `[1, delta]`; before GST, arbitrary delays up
/// to `GST + delta`, timer drift by a per-process factor and staggered
/// starts.
pub struct RandomDelays {
    pre_gst_chaos: bool,
    drift: HashMap<ProcessId, f64>,
    max_drift: f64,
}

impl RandomDelays {
    pub fn new(pre_gst_chaos: bool) -> Self {
        RandomDelays {
            pre_gst_chaos,
            drift: HashMap::new(),
            max_drift: 3.0,
        }
    }
}

impl Adversary for RandomDelays {
    fn start_time(&mut self, _p: ProcessId, params: &ProtocolParams, rng: &mut ChaCha8Rng) -> Tick {
        if self.pre_gst_chaos {
            uniform(rng, 0, params.gst)
        } else {
            0
        }
    }

    fn delivery_time(
        &mut self,
        now: Tick,
        _from: ProcessId,
        _to: ProcessId,
        _msg: &Message,
        p: &ProtocolParams,
        rng: &mut ChaCha8Rng,
    ) -> Tick {
        if now >= p.gst || !self.pre_gst_chaos {
            return now + uniform(rng, 1, p.delta);
        }
        // mostly short hops, sometimes held until after GST
        if rng.gen_bool(0.8) {
            now + uniform(rng, 1, 3 * p.delta)
        } else {
            uniform(rng, now + 1, p.gst + p.delta)
        }
    }

    fn timer_expiry(
        &mut self,
        now: Tick,
        owner: ProcessId,
        _tag: TimerTag,
        duration: Tick,
        _p: &ProtocolParams,
        rng: &mut ChaCha8Rng,
    ) -> Tick {
        if !self.pre_gst_chaos {
            return now + duration;
        }
        let max = self.max_drift;
        let f = *self
            .drift
            .entry(owner)
            .or_insert_with(|| rng.gen_range(1.0..=max));
        now + (duration as f64 * f).round() as Tick
    }
}

/// Number of views whose leaders sleep through the shift: as many as keep
/// the sleepers at most `t`, but at least one.
pub fn shift_views(p: &ProtocolParams) -> usize {
    (p.t / p.x).max(1).min(p.rotation() - 1)
}

/// GST for the shift: late enough for the awake processes to arm their
/// entry into view `k + 1`.
pub fn shift_gst(p: &ProtocolParams) -> Tick {
    let k = shift_views(p) as Tick;
    (k + 1) * (p.view_duration() + 3 * p.delta) + 2 * p.delta
}

/// The adversarial shift: the leaders of views `1..=k` are correct but
/// slow. Each falls asleep as it is about to enter its own leader view,
/// hears nothing more until after GST and wakes exactly at GST; the awake
/// processes' entry into view `k + 1` is likewise stretched to GST. Every
/// leader's dispersal therefore lands after GST, and sleepers are
/// interrupted as late as the model allows.
pub struct AdversarialShift {
    sleepers: BTreeSet<ProcessId>,
    leader_view: HashMap<ProcessId, u64>,
    asleep: BTreeSet<ProcessId>,
    target_view: u64,
}

impl AdversarialShift {
    pub fn new(p: &ProtocolParams) -> Self {
        let k = shift_views(p) as u64;
        let mut sleepers = BTreeSet::new();
        let mut leader_view = HashMap::new();
        for v in 1..=k {
            for l in p.leaders(crate::model::View::new(v)) {
                sleepers.insert(l);
                leader_view.insert(l, v);
            }
        }
        // view-1 leaders never run before GST
        let asleep = sleepers
            .iter()
            .copied()
            .filter(|s| leader_view[s] == 1)
            .collect();
        AdversarialShift {
            sleepers,
            leader_view,
            asleep,
            target_view: k + 1,
        }
    }

    pub fn sleepers(&self) -> &BTreeSet<ProcessId> {
        &self.sleepers
    }
}

fn is_sync_kind(m: &Message) -> bool {
    matches!(m.kind(), MsgKind::ViewCompleted | MsgKind::EnterView)
}

impl Adversary for AdversarialShift {
    fn start_time(&mut self, p: ProcessId, params: &ProtocolParams, _rng: &mut ChaCha8Rng) -> Tick {
        if self.leader_view.get(&p) == Some(&1) {
            params.gst
        } else {
            0
        }
    }

    fn delivery_time(
        &mut self,
        now: Tick,
        _from: ProcessId,
        to: ProcessId,
        msg: &Message,
        p: &ProtocolParams,
        _rng: &mut ChaCha8Rng,
    ) -> Tick {
        if now >= p.gst {
            return now + p.delta;
        }
        if self.asleep.contains(&to) || !is_sync_kind(msg) {
            return p.gst + p.delta;
        }
        now + 1
    }

    fn timer_expiry(
        &mut self,
        now: Tick,
        owner: ProcessId,
        tag: TimerTag,
        duration: Tick,
        p: &ProtocolParams,
        _rng: &mut ChaCha8Rng,
    ) -> Tick {
        if tag.slot != TimerSlot::SyncDissemination(SyncInstance::Disperser) {
            return now + duration;
        }
        if self.leader_view.get(&owner) == Some(&tag.view) {
            self.asleep.insert(owner);
            return p.gst;
        }
        if !self.sleepers.contains(&owner) && tag.view == self.target_view {
            return p.gst;
        }
        now + duration
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ByzScript {
    /// Never sends anything.
    Silent,
    /// Runs the protocol but sends conflicting values to different
    /// recipients.
    Equivocate,
    /// Runs the protocol but corrupts every RS symbol it sends.
    GarbageSymbols,
}

/// A corrupt process: an honest state machine whose outgoing effects are
/// rewritten by a script.
pub struct Byzantine {
    inner: Box<dyn Process>,
    script: ByzScript,
    rng: ChaCha8Rng,
    proposal: Option<Value>,
    stark_variants: HashMap<u8, (crate::crypto::HashValue, Vec<(Symbol, ShardProof)>)>,
}

impl Byzantine {
    pub fn new(inner: Box<dyn Process>, script: ByzScript, seed: u64) -> Self {
        Byzantine {
            inner,
            script,
            rng: ChaCha8Rng::seed_from_u64(seed),
            proposal: None,
            stark_variants: HashMap::new(),
        }
    }

    /// The value the inner process proposes; needed to equivocate on
    /// proven shards.
    pub fn with_proposal(mut self, v: Value) -> Self {
        self.proposal = Some(v);
        self
    }

    fn garbage(&mut self, index: usize, len: usize) -> Symbol {
        let mut data = vec![0u8; len];
        self.rng.fill_bytes(&mut data);
        Symbol::new(index, data)
    }

    fn rewrite(&mut self, effects: Vec<Effect>, ctx: &mut Ctx<'_>) -> Vec<Effect> {
        let mut out = Vec::with_capacity(effects.len());
        for e in effects {
            let Effect::Send { to, msg } = e else {
                out.push(e);
                continue;
            };
            let msg = match self.script {
                ByzScript::Silent => continue,
                ByzScript::GarbageSymbols => match msg {
                    Message::SymbolShare(s) => {
                        Message::SymbolShare(self.garbage(s.index(), s.data().len()))
                    }
                    Message::SymbolBcast(s) => {
                        Message::SymbolBcast(self.garbage(s.index(), s.data().len()))
                    }
                    Message::StarkRetrieve { h, symbol, proof } => Message::StarkRetrieve {
                        h,
                        symbol: self.garbage(symbol.index(), symbol.data().len()),
                        proof,
                    },
                    other => other,
                },
                ByzScript::Equivocate => match self.equivocate(to, msg, ctx) {
                    Some(m) => m,
                    None => continue,
                },
            };
            out.push(Effect::Send { to, msg });
        }
        out
    }

    fn equivocate(&mut self, to: ProcessId, msg: Message, ctx: &mut Ctx<'_>) -> Option<Message> {
        let flip = (to.index() % 2) as u8 + 1;
        Some(match msg {
            Message::Dispersal(v) => Message::Dispersal(variant(&v, flip)),
            Message::StarkDispersal { h, symbol, proof } => {
                let key = flip;
                if !self.stark_variants.contains_key(&key) {
                    let Some(v) = self.proposal.as_ref() else {
                        return Some(Message::StarkDispersal { h, symbol, proof });
                    };
                    let alt = variant(v, flip);
                    let env = ctx.env();
                    let validity = env.validity.clone();
                    let Ok(proven) = prove_all(
                        &alt,
                        &env.params,
                        &mut env.crypto,
                        validity.as_ref(),
                        &mut env.proofs,
                    ) else {
                        return Some(Message::StarkDispersal { h, symbol, proof });
                    };
                    self.stark_variants.insert(key, proven);
                }
                let (h2, shards) = &self.stark_variants[&key];
                let (s, p) = shards[to.index() - 1].clone();
                Message::StarkDispersal {
                    h: *h2,
                    symbol: s,
                    proof: p,
                }
            }
            Message::Proposal(sp) => {
                let alt = variant(&sp.proposal, flip);
                let sig = ctx.share_sign(&proposal_message(&alt));
                Message::Proposal(SignedProposal {
                    proposer: sp.proposer,
                    proposal: alt,
                    sig,
                })
            }
            // a leader that shows its proposal to only half of the processes
            Message::AgrPropose { .. } if flip == 2 => return None,
            Message::SymbolBcast(s) if flip == 2 => {
                let len = s.data().len();
                Message::SymbolBcast(self.garbage(s.index(), len))
            }
            other => other,
        })
    }

    fn run(&mut self, ctx: &mut Ctx<'_>, f: impl FnOnce(&mut dyn Process, &mut Ctx<'_>)) {
        if self.script == ByzScript::Silent {
            return;
        }
        let mark = ctx.mark();
        f(self.inner.as_mut(), ctx);
        let produced = ctx.take_since(mark);
        for e in self.rewrite(produced, ctx) {
            ctx.push_effect(e);
        }
    }
}

/// A different value of the same shape and validity (the magic prefix is
/// left intact).
pub fn variant(v: &Value, flip: u8) -> Value {
    let mut b = v.bytes().to_vec();
    if let Some(last) = b.last_mut() {
        *last ^= flip;
    } else {
        b.push(flip);
    }
    Value::new(b)
}

impl Process for Byzantine {
    fn on_start(&mut self, ctx: &mut Ctx<'_>) {
        if self.script == ByzScript::GarbageSymbols {
            // announce a bogus symbol right away
            let p = ctx.params().clone();
            let width = Codec::for_params(&p)
                .encode_one(
                    &Value::new(vec![0; materialized_len(p.l_bits)]),
                    ctx.me().index(),
                )
                .data()
                .len();
            let s = self.garbage(ctx.me().index(), width);
            ctx.broadcast(Message::SymbolBcast(s));
        }
        self.run(ctx, |p, c| p.on_start(c));
    }

    fn on_message(&mut self, from: ProcessId, msg: Message, ctx: &mut Ctx<'_>) {
        self.run(ctx, |p, c| p.on_message(from, msg, c));
    }

    fn on_timer(&mut self, tag: TimerTag, ctx: &mut Ctx<'_>) {
        self.run(ctx, |p, c| p.on_timer(tag, c));
    }
}
