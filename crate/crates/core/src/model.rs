//! Shared vocabulary: process identifiers, protocol parameters, values and
//! the complete wire message set with its bit-size model.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::agreement::{Pair, Phase, QuorumCertificate};
use crate::crypto::{Crypto, HashValue, PartialSignature, ThresholdSignature};
use crate::darestark::ShardProof;
use crate::erasure::Symbol;
use crate::vector::SignedProposal;

/// Bits charged to every message on top of its payload.
pub const HEADER_BITS: u64 = 64;
/// Codec word size in bits (one GF(2^16) element).
pub const WORD_BITS: u64 = 16;
/// Values longer than this are carried by a representative prefix only.
pub const MATERIALIZE_LIMIT_BYTES: usize = 64 * 1024;

/// Simulated time.
pub type Tick = u64;

/// Delay assumed by every process in unknown-delta mode before any growth.
pub const UNKNOWN_DELTA_GUESS: Tick = 1;
/// Cap on the doubling exponent in unknown-delta mode.
pub const MAX_GROWTH_EXPONENT: u64 = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParamError {
    #[error("n = {0} is not of the form 3t + 1 with t >= 1")]
    NotThreeTPlusOne(usize),
    #[error("n = {n} cannot tolerate t = {t} faults (need n >= 3t + 1, t >= 1)")]
    FaultBound { n: usize, t: usize },
    #[error("leader count X = {x} outside 1..={n}")]
    LeaderCount { x: usize, n: usize },
    #[error("group size Y = {y} outside 1..={n}")]
    GroupSize { y: usize, n: usize },
    #[error("kappa = {kappa} must exceed ceil(log2 n) = {min}")]
    KappaTooSmall { kappa: u64, min: u64 },
    #[error("delta must be positive")]
    ZeroDelta,
    #[error("L = {l} bits is below (t+1)*w = {min}")]
    ValueTooShort { l: u64, min: u64 },
}

/// 1-based process index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcessId(usize);

impl ProcessId {
    pub fn new(index: usize) -> Self {
        assert!(index >= 1, "process indices start at 1");
        ProcessId(index)
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn all(n: usize) -> impl Iterator<Item = ProcessId> {
        (1..=n).map(ProcessId)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct View(u64);

impl View {
    pub const FIRST: View = View(1);

    pub fn new(number: u64) -> Self {
        assert!(number >= 1, "views start at 1");
        View(number)
    }

    pub fn number(self) -> u64 {
        self.0
    }

    pub fn next(self) -> View {
        View(self.0 + 1)
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "V{}", self.0)
    }
}

pub fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

pub fn ceil_sqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r < n {
        r += 1;
    }
    while r > 0 && (r - 1) * (r - 1) >= n {
        r -= 1;
    }
    r
}

pub fn ceil_log2(n: usize) -> u64 {
    let mut bits = 0;
    while (1usize << bits) < n {
        bits += 1;
    }
    bits
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolParams {
    pub n: usize,
    pub t: usize,
    pub x: usize,
    pub y: usize,
    pub delta: Tick,
    pub gst: Tick,
    pub l_bits: u64,
    pub kappa: u64,
    pub proof_kappa: u64,
    pub unknown_delta_mode: bool,
}

impl ProtocolParams {
    /// Parameters for `n = 3t + 1` with the default knobs.
    pub fn new(n: usize) -> Result<Self, ParamError> {
        if n < 4 || !(n - 1).is_multiple_of(3) {
            return Err(ParamError::NotThreeTPlusOne(n));
        }
        Self::with_faults(n, (n - 1) / 3)
    }

    /// Parameters for any `n >= 3t + 1`.
    pub fn with_faults(n: usize, t: usize) -> Result<Self, ParamError> {
        let side = ceil_sqrt(n);
        let p = ProtocolParams {
            n,
            t,
            x: side,
            y: side,
            delta: 10,
            gst: 0,
            l_bits: 1024,
            kappa: 256,
            proof_kappa: 2048,
            unknown_delta_mode: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let (n, t) = (self.n, self.t);
        if t < 1 || n < 3 * t + 1 {
            return Err(ParamError::FaultBound { n, t });
        }
        if self.x < 1 || self.x > n {
            return Err(ParamError::LeaderCount { x: self.x, n });
        }
        if self.y < 1 || self.y > n {
            return Err(ParamError::GroupSize { y: self.y, n });
        }
        let min = ceil_log2(n);
        if self.kappa <= min {
            return Err(ParamError::KappaTooSmall {
                kappa: self.kappa,
                min,
            });
        }
        if self.delta == 0 {
            return Err(ParamError::ZeroDelta);
        }
        let min_l = (t as u64 + 1) * WORD_BITS;
        if self.l_bits < min_l {
            return Err(ParamError::ValueTooShort {
                l: self.l_bits,
                min: min_l,
            });
        }
        Ok(())
    }

    /// Size of a signing quorum, `n - t` (equal to `2t + 1` when `n = 3t + 1`).
    pub fn quorum(&self) -> usize {
        self.n - self.t
    }

    pub fn symbol_bits(&self) -> u64 {
        ceil_div(self.l_bits, self.t as u64 + 1)
    }

    /// Number of dispersal groups, `ceil(n / Y)`.
    pub fn groups(&self) -> usize {
        self.n.div_ceil(self.y)
    }

    /// Views per leader rotation, `ceil(n / X)`.
    pub fn rotation(&self) -> usize {
        self.n.div_ceil(self.x)
    }

    /// Required overlap of a synchronized view: `delta * n/Y + 3 delta`.
    pub fn big_delta(&self) -> Tick {
        self.delta * self.groups() as Tick + 3 * self.delta
    }

    pub fn view_duration(&self) -> Tick {
        self.big_delta() + 2 * self.delta
    }

    /// The delay bound processes act on: `delta`, or the fixed guess when
    /// delta is unknown.
    pub fn assumed_delta(&self) -> Tick {
        if self.unknown_delta_mode {
            UNKNOWN_DELTA_GUESS
        } else {
            self.delta
        }
    }

    /// Timeout multiplier for round `r` (a view or epoch number): 1 when
    /// delta is known, `2^(r-1)` (capped) otherwise.
    pub fn growth(&self, r: u64) -> Tick {
        if self.unknown_delta_mode {
            1 << (r.saturating_sub(1)).min(MAX_GROWTH_EXPONENT)
        } else {
            1
        }
    }

    /// Local `delta` used for waits inside round `r`.
    pub fn local_delta(&self, r: u64) -> Tick {
        self.assumed_delta() * self.growth(r)
    }

    /// Disperser view length for view `v`, from the assumed delay.
    pub fn local_view_duration(&self, v: u64) -> Tick {
        let d = self.assumed_delta();
        (d * self.groups() as Tick + 5 * d) * self.growth(v)
    }

    pub fn processes(&self) -> impl Iterator<Item = ProcessId> {
        ProcessId::all(self.n)
    }

    /// Leaders of `view`: `X` consecutive processes, rotating with period
    /// `ceil(n / X)`.
    pub fn leaders(&self, view: View) -> Vec<ProcessId> {
        leaders_for(self.n, self.x, view)
    }

    pub fn is_leader(&self, p: ProcessId, view: View) -> bool {
        let group = ((view.number() - 1) % self.rotation() as u64) as usize;
        (p.index() - 1) / self.x == group
    }
}

pub fn leaders_for(n: usize, x: usize, view: View) -> Vec<ProcessId> {
    let rotation = n.div_ceil(x);
    let group = ((view.number() - 1) % rotation as u64) as usize;
    let first = group * x + 1;
    (first..=(first + x - 1).min(n))
        .map(ProcessId::new)
        .collect()
}

/// An opaque value. Message sizes come from `ProtocolParams::l_bits`; the
/// bytes are the materialized content, capped at
/// [`MATERIALIZE_LIMIT_BYTES`] for very large `L`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Value {
    bytes: Arc<[u8]>,
}

impl Value {
    pub fn new(bytes: Vec<u8>) -> Self {
        Value {
            bytes: bytes.into(),
        }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit_length(&self) -> u64 {
        self.bytes.len() as u64 * 8
    }
}

/// Number of bytes to materialize for an `l_bits`-bit value.
pub fn materialized_len(l_bits: u64) -> usize {
    ((l_bits / 8) as usize).min(MATERIALIZE_LIMIT_BYTES)
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: Vec<String> = self
            .bytes
            .iter()
            .take(6)
            .map(|b| format!("{b:02x}"))
            .collect();
        write!(f, "Value({} bytes, {}..)", self.bytes.len(), head.join(""))
    }
}

/// External validity predicate `valid(v)`.
pub trait Validity: Send + Sync {
    fn valid(&self, v: &Value, crypto: &Crypto) -> bool;
}

/// Accepts every value.
#[derive(Clone, Copy, Debug, Default)]
pub struct AnyValue;

impl Validity for AnyValue {
    fn valid(&self, _v: &Value, _crypto: &Crypto) -> bool {
        true
    }
}

/// Which synchronizer instance a view message belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SyncInstance {
    Disperser,
    Agreement,
}

#[derive(Clone, Debug)]
pub enum Message {
    Dispersal(Value),
    Ack {
        h: HashValue,
        sig: PartialSignature,
    },
    Confirm {
        h: HashValue,
        sig: ThresholdSignature,
    },
    ViewCompleted {
        inst: SyncInstance,
        view: View,
        sig: PartialSignature,
    },
    EnterView {
        inst: SyncInstance,
        view: View,
        sig: ThresholdSignature,
    },
    SymbolShare(Symbol),
    SymbolBcast(Symbol),
    StarkDispersal {
        h: HashValue,
        symbol: Symbol,
        proof: ShardProof,
    },
    StarkAck {
        h: HashValue,
        sig: PartialSignature,
    },
    StarkRetrieve {
        h: HashValue,
        symbol: Symbol,
        proof: ShardProof,
    },
    AgrStatus {
        view: u64,
        lock: Option<QuorumCertificate>,
    },
    AgrPropose {
        view: u64,
        pair: Pair,
        justify: Option<QuorumCertificate>,
    },
    AgrVote {
        view: u64,
        phase: Phase,
        h: HashValue,
        sig: PartialSignature,
    },
    AgrQc(QuorumCertificate),
    AgrDecide(QuorumCertificate),
    Proposal(SignedProposal),
    Fetch(HashValue),
    FetchReply(Value),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MsgKind {
    Dispersal,
    Ack,
    Confirm,
    ViewCompleted,
    EnterView,
    SymbolShare,
    SymbolBcast,
    StarkDispersal,
    StarkAck,
    StarkRetrieve,
    AgrEpochCompleted,
    AgrEnterEpoch,
    AgrStatus,
    AgrPropose,
    AgrVote,
    AgrQc,
    AgrDecide,
    Proposal,
    Fetch,
    FetchReply,
}

impl MsgKind {
    pub const ALL: [MsgKind; 20] = [
        MsgKind::Dispersal,
        MsgKind::Ack,
        MsgKind::Confirm,
        MsgKind::ViewCompleted,
        MsgKind::EnterView,
        MsgKind::SymbolShare,
        MsgKind::SymbolBcast,
        MsgKind::StarkDispersal,
        MsgKind::StarkAck,
        MsgKind::StarkRetrieve,
        MsgKind::AgrEpochCompleted,
        MsgKind::AgrEnterEpoch,
        MsgKind::AgrStatus,
        MsgKind::AgrPropose,
        MsgKind::AgrVote,
        MsgKind::AgrQc,
        MsgKind::AgrDecide,
        MsgKind::Proposal,
        MsgKind::Fetch,
        MsgKind::FetchReply,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MsgKind::Dispersal => "DISPERSAL",
            MsgKind::Ack => "ACK",
            MsgKind::Confirm => "CONFIRM",
            MsgKind::ViewCompleted => "VIEW-COMPLETED",
            MsgKind::EnterView => "ENTER-VIEW",
            MsgKind::SymbolShare => "SYMBOL-SHARE",
            MsgKind::SymbolBcast => "SYMBOL-BCAST",
            MsgKind::StarkDispersal => "STARK-DISPERSAL",
            MsgKind::StarkAck => "STARK-ACK",
            MsgKind::StarkRetrieve => "STARK-RETRIEVE",
            MsgKind::AgrEpochCompleted => "AGR-EPOCH-COMPLETED",
            MsgKind::AgrEnterEpoch => "AGR-ENTER-EPOCH",
            MsgKind::AgrStatus => "AGR-STATUS",
            MsgKind::AgrPropose => "AGR-PROPOSE",
            MsgKind::AgrVote => "AGR-VOTE",
            MsgKind::AgrQc => "AGR-QC",
            MsgKind::AgrDecide => "AGR-DECIDE",
            MsgKind::Proposal => "PROPOSAL",
            MsgKind::Fetch => "FETCH",
            MsgKind::FetchReply => "FETCH-REPLY",
        }
    }

    /// Modeled size of a message of this kind.
    pub fn bit_size(self, p: &ProtocolParams) -> u64 {
        let k = p.kappa;
        let body = match self {
            MsgKind::Dispersal | MsgKind::FetchReply => p.l_bits,
            MsgKind::Ack
            | MsgKind::ViewCompleted
            | MsgKind::StarkAck
            | MsgKind::AgrEpochCompleted
            | MsgKind::AgrVote
            | MsgKind::Fetch => k,
            MsgKind::Confirm | MsgKind::EnterView | MsgKind::AgrEnterEpoch => 2 * k,
            MsgKind::SymbolShare | MsgKind::SymbolBcast => p.symbol_bits() + k,
            MsgKind::StarkDispersal | MsgKind::StarkRetrieve => p.symbol_bits() + k + p.proof_kappa,
            MsgKind::AgrStatus => 4 * k,
            MsgKind::AgrPropose => 5 * k,
            MsgKind::AgrQc | MsgKind::AgrDecide => 3 * k,
            MsgKind::Proposal => ceil_div(p.l_bits, p.quorum() as u64),
        };
        body + HEADER_BITS
    }

    /// The part of `bit_size` that grows with `L`.
    pub fn payload_bits(self, p: &ProtocolParams) -> u64 {
        match self {
            MsgKind::Dispersal | MsgKind::FetchReply => p.l_bits,
            MsgKind::SymbolShare
            | MsgKind::SymbolBcast
            | MsgKind::StarkDispersal
            | MsgKind::StarkRetrieve => p.symbol_bits(),
            MsgKind::Proposal => ceil_div(p.l_bits, p.quorum() as u64).saturating_sub(p.kappa),
            _ => 0,
        }
    }
}

impl fmt::Display for MsgKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Message {
    pub fn kind(&self) -> MsgKind {
        match self {
            Message::Dispersal(_) => MsgKind::Dispersal,
            Message::Ack { .. } => MsgKind::Ack,
            Message::Confirm { .. } => MsgKind::Confirm,
            Message::ViewCompleted {
                inst: SyncInstance::Disperser,
                ..
            } => MsgKind::ViewCompleted,
            Message::ViewCompleted {
                inst: SyncInstance::Agreement,
                ..
            } => MsgKind::AgrEpochCompleted,
            Message::EnterView {
                inst: SyncInstance::Disperser,
                ..
            } => MsgKind::EnterView,
            Message::EnterView {
                inst: SyncInstance::Agreement,
                ..
            } => MsgKind::AgrEnterEpoch,
            Message::SymbolShare(_) => MsgKind::SymbolShare,
            Message::SymbolBcast(_) => MsgKind::SymbolBcast,
            Message::StarkDispersal { .. } => MsgKind::StarkDispersal,
            Message::StarkAck { .. } => MsgKind::StarkAck,
            Message::StarkRetrieve { .. } => MsgKind::StarkRetrieve,
            Message::AgrStatus { .. } => MsgKind::AgrStatus,
            Message::AgrPropose { .. } => MsgKind::AgrPropose,
            Message::AgrVote { .. } => MsgKind::AgrVote,
            Message::AgrQc(_) => MsgKind::AgrQc,
            Message::AgrDecide(_) => MsgKind::AgrDecide,
            Message::Proposal(_) => MsgKind::Proposal,
            Message::Fetch(_) => MsgKind::Fetch,
            Message::FetchReply(_) => MsgKind::FetchReply,
        }
    }

    pub fn bit_size(&self, p: &ProtocolParams) -> u64 {
        self.kind().bit_size(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, l: u64) -> ProtocolParams {
        let mut p = ProtocolParams::new(n).unwrap();
        p.l_bits = l;
        p
    }

    #[test]
    fn size_table_examples() {
        let p = params(4, 1024);
        assert_eq!(MsgKind::Dispersal.bit_size(&p), 1088);
        assert_eq!(MsgKind::Ack.bit_size(&p), 320);
        // ceil(1024 / 2) + 256 + 2048 + 64, worked by hand
        assert_eq!(MsgKind::StarkRetrieve.bit_size(&p), 512 + 256 + 2048 + 64);
        assert_eq!(MsgKind::StarkRetrieve.bit_size(&p), 2880);
        assert_eq!(MsgKind::Confirm.bit_size(&p), 2 * 256 + 64);
        assert_eq!(MsgKind::EnterView.bit_size(&p), 576);
        assert_eq!(MsgKind::SymbolBcast.bit_size(&p), 512 + 256 + 64);
    }

    #[test]
    fn size_monotone_in_l_only_for_value_kinds() {
        for kind in MsgKind::ALL {
            let small = kind.bit_size(&params(7, 1024));
            let large = kind.bit_size(&params(7, 4096));
            assert!(small > 0);
            if kind.payload_bits(&params(7, 4096)) > 0 {
                assert!(large > small, "{kind}");
            } else {
                assert_eq!(large, small, "{kind}");
            }
        }
    }

    #[test]
    fn param_validation() {
        assert_eq!(ProtocolParams::new(6), Err(ParamError::NotThreeTPlusOne(6)));
        assert!(ProtocolParams::new(1).is_err());
        assert!(ProtocolParams::with_faults(36, 11).is_ok());
        assert!(ProtocolParams::with_faults(36, 12).is_err());
        let p = ProtocolParams::new(16).unwrap();
        assert_eq!((p.x, p.y, p.t), (4, 4, 5));
        let mut q = p.clone();
        q.kappa = 4;
        assert!(matches!(
            q.validate(),
            Err(ParamError::KappaTooSmall { .. })
        ));
        q = p.clone();
        q.l_bits = 16 * 5;
        assert!(matches!(
            q.validate(),
            Err(ParamError::ValueTooShort { .. })
        ));
    }

    #[test]
    fn durations_for_sixteen() {
        let p = ProtocolParams::new(16).unwrap();
        assert_eq!(p.big_delta(), 70);
        assert_eq!(p.view_duration(), 90);
    }

    #[test]
    fn leaders_rotate() {
        let p = ProtocolParams::new(16).unwrap();
        let ids = |v: &[usize]| v.iter().map(|&i| ProcessId::new(i)).collect::<Vec<_>>();
        assert_eq!(p.leaders(View::new(1)), ids(&[1, 2, 3, 4]));
        assert_eq!(p.leaders(View::new(4)), ids(&[13, 14, 15, 16]));
        assert_eq!(p.leaders(View::new(5)), p.leaders(View::new(1)));
        let q = ProtocolParams::new(4).unwrap();
        let mut all: Vec<_> = q.leaders(View::new(1));
        all.extend(q.leaders(View::new(2)));
        assert_eq!(all, ids(&[1, 2, 3, 4]));
    }

    #[test]
    fn small_math() {
        assert_eq!(ceil_sqrt(16), 4);
        assert_eq!(ceil_sqrt(17), 5);
        assert_eq!(ceil_sqrt(1), 1);
        assert_eq!(ceil_log2(16), 4);
        assert_eq!(ceil_log2(17), 5);
    }
}
