//! Simulation-grade hashing and (n - t)-of-n threshold signatures.
//!
//! Everything is backed by a per-run registry: hashes are interned byte
//! strings (so they are injective by construction) and a signature verifies
//! only if the registry saw it being produced legitimately. Every object is
//! charged `kappa` bits by the size model in [`crate::model`].

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::model::ProcessId;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HashValue(u64);

impl HashValue {
    /// Canonical byte encoding, used when a hash is itself signed.
    pub fn to_bytes(self) -> [u8; 9] {
        let mut out = [0u8; 9];
        out[0] = b'h';
        out[1..].copy_from_slice(&self.0.to_be_bytes());
        out
    }

    /// A token that was never handed out by any registry.
    pub fn bogus(id: u64) -> Self {
        HashValue(u64::MAX - id)
    }
}

impl fmt::Debug for HashValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PartialSignature {
    signer: ProcessId,
    digest: HashValue,
    tag: u64,
}

impl PartialSignature {
    pub fn signer(&self) -> ProcessId {
        self.signer
    }

    pub fn digest(&self) -> HashValue {
        self.digest
    }

    pub fn tag(&self) -> u64 {
        self.tag
    }

    /// Arbitrary token an adversary might put on the wire.
    pub fn fabricate(signer: ProcessId, digest: HashValue, tag: u64) -> Self {
        PartialSignature {
            signer,
            digest,
            tag,
        }
    }

    pub const ENCODED_LEN: usize = 24;

    pub fn to_bytes(&self) -> [u8; Self::ENCODED_LEN] {
        let mut out = [0u8; Self::ENCODED_LEN];
        out[..8].copy_from_slice(&(self.signer.index() as u64).to_be_bytes());
        out[8..16].copy_from_slice(&self.digest.0.to_be_bytes());
        out[16..].copy_from_slice(&self.tag.to_be_bytes());
        out
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        if b.len() != Self::ENCODED_LEN {
            return None;
        }
        let word = |i: usize| u64::from_be_bytes(b[i..i + 8].try_into().expect("8 bytes"));
        let signer = usize::try_from(word(0)).ok().filter(|&i| i >= 1)?;
        Some(PartialSignature {
            signer: ProcessId::new(signer),
            digest: HashValue(word(8)),
            tag: word(16),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ThresholdSignature {
    digest: HashValue,
    signers: Arc<[ProcessId]>,
    tag: u64,
}

impl ThresholdSignature {
    pub fn digest(&self) -> HashValue {
        self.digest
    }

    pub fn signers(&self) -> &[ProcessId] {
        &self.signers
    }

    pub fn fabricate(digest: HashValue, signers: Vec<ProcessId>, tag: u64) -> Self {
        ThresholdSignature {
            digest,
            signers: signers.into(),
            tag,
        }
    }

    /// Canonical encoding, used when a signature is itself hashed or signed.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + 8 * self.signers.len());
        out.push(b's');
        out.extend_from_slice(&self.digest.0.to_be_bytes());
        out.extend_from_slice(&self.tag.to_be_bytes());
        for p in self.signers.iter() {
            out.extend_from_slice(&(p.index() as u64).to_be_bytes());
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("{caller} attempted to sign as {signer}")]
    Forgery {
        caller: ProcessId,
        signer: ProcessId,
    },
    #[error("only {have} distinct signers, {need} required")]
    InsufficientQuorum { have: usize, need: usize },
    #[error("partial signatures cover different messages")]
    MixedMessage,
    #[error("partial signature from {0} does not verify")]
    InvalidPartial(ProcessId),
}

/// Per-run key registry and hash oracle.
#[derive(Debug, Clone)]
pub struct Crypto {
    n: usize,
    threshold: usize,
    interned: HashMap<Box<[u8]>, HashValue>,
    partials: HashMap<(ProcessId, HashValue), u64>,
    combined: HashMap<u64, (HashValue, Arc<[ProcessId]>)>,
    next_tag: u64,
}

impl Crypto {
    /// Registry for `n` processes tolerating `t` faults; quorum is `n - t`.
    pub fn new(n: usize, t: usize) -> Self {
        Crypto {
            n,
            threshold: n - t,
            interned: HashMap::new(),
            partials: HashMap::new(),
            combined: HashMap::new(),
            next_tag: 1,
        }
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn hash(&mut self, bytes: &[u8]) -> HashValue {
        if let Some(h) = self.interned.get(bytes) {
            return *h;
        }
        let h = HashValue(self.interned.len() as u64);
        self.interned.insert(bytes.into(), h);
        h
    }

    /// The digest of `bytes` if it was ever hashed in this run.
    pub fn lookup(&self, bytes: &[u8]) -> Option<HashValue> {
        self.interned.get(bytes).copied()
    }

    fn fresh_tag(&mut self) -> u64 {
        let tag = self.next_tag;
        self.next_tag += 1;
        tag
    }

    /// `caller` signs `m` under identity `signer`; only `caller == signer`
    /// is permitted.
    pub fn share_sign(
        &mut self,
        caller: ProcessId,
        signer: ProcessId,
        m: &[u8],
    ) -> Result<PartialSignature, CryptoError> {
        if caller != signer || signer.index() > self.n {
            return Err(CryptoError::Forgery { caller, signer });
        }
        let digest = self.hash(m);
        let tag = match self.partials.get(&(signer, digest)) {
            Some(tag) => *tag,
            None => {
                let tag = self.fresh_tag();
                self.partials.insert((signer, digest), tag);
                tag
            }
        };
        Ok(PartialSignature {
            signer,
            digest,
            tag,
        })
    }

    fn partial_is_genuine(&self, sig: &PartialSignature) -> bool {
        self.partials.get(&(sig.signer, sig.digest)) == Some(&sig.tag)
    }

    pub fn verify_partial(&self, signer: ProcessId, m: &[u8], sig: &PartialSignature) -> bool {
        sig.signer == signer && self.lookup(m) == Some(sig.digest) && self.partial_is_genuine(sig)
    }

    pub fn combine<'a, I>(&mut self, partials: I) -> Result<ThresholdSignature, CryptoError>
    where
        I: IntoIterator<Item = &'a PartialSignature>,
    {
        let mut digest = None;
        let mut signers = BTreeSet::new();
        for sig in partials {
            if !self.partial_is_genuine(sig) {
                return Err(CryptoError::InvalidPartial(sig.signer));
            }
            match digest {
                None => digest = Some(sig.digest),
                Some(d) if d != sig.digest => return Err(CryptoError::MixedMessage),
                Some(_) => {}
            }
            signers.insert(sig.signer);
        }
        if signers.len() < self.threshold {
            return Err(CryptoError::InsufficientQuorum {
                have: signers.len(),
                need: self.threshold,
            });
        }
        let digest = digest.expect("non-empty quorum");
        let signers: Arc<[ProcessId]> = signers.into_iter().collect::<Vec<_>>().into();
        let tag = self.fresh_tag();
        self.combined.insert(tag, (digest, signers.clone()));
        Ok(ThresholdSignature {
            digest,
            signers,
            tag,
        })
    }

    pub fn verify_sig(&self, m: &[u8], sig: &ThresholdSignature) -> bool {
        if self.lookup(m) != Some(sig.digest) {
            return false;
        }
        match self.combined.get(&sig.tag) {
            Some((d, signers)) => *d == sig.digest && *signers == sig.signers,
            None => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(i: usize) -> ProcessId {
        ProcessId::new(i)
    }

    fn sign_all(c: &mut Crypto, ids: &[usize], m: &[u8]) -> Vec<PartialSignature> {
        ids.iter()
            .map(|&i| c.share_sign(p(i), p(i), m).unwrap())
            .collect()
    }

    #[test]
    fn hash_is_deterministic_and_injective() {
        let mut c = Crypto::new(4, 1);
        let a = c.hash(b"alpha");
        assert_eq!(a, c.hash(b"alpha"));
        assert_ne!(a, c.hash(b"beta"));
        assert_eq!(c.lookup(b"alpha"), Some(a));
        assert_eq!(c.lookup(b"gamma"), None);
    }

    #[test]
    fn partials_bind_signer_and_message() {
        let mut c = Crypto::new(4, 1);
        let s = c.share_sign(p(1), p(1), b"x").unwrap();
        c.hash(b"y");
        assert!(c.verify_partial(p(1), b"x", &s));
        assert!(!c.verify_partial(p(1), b"y", &s));
        assert!(!c.verify_partial(p(2), b"x", &s));
        assert_eq!(
            c.share_sign(p(2), p(3), b"x"),
            Err(CryptoError::Forgery {
                caller: p(2),
                signer: p(3)
            })
        );
        let forged = PartialSignature::fabricate(p(3), s.digest(), s.tag());
        assert!(!c.verify_partial(p(3), b"x", &forged));
    }

    #[test]
    fn combine_quorum_rules() {
        let mut c = Crypto::new(4, 1);
        let sigs = sign_all(&mut c, &[1, 2, 3], b"m");
        let sig = c.combine(&sigs).unwrap();
        assert!(c.verify_sig(b"m", &sig));
        c.hash(b"m2");
        assert!(!c.verify_sig(b"m2", &sig));
        assert_eq!(
            c.combine(&sigs[..2]),
            Err(CryptoError::InsufficientQuorum { have: 2, need: 3 })
        );
        let dup = vec![sigs[0].clone(), sigs[0].clone(), sigs[1].clone()];
        assert_eq!(
            c.combine(&dup),
            Err(CryptoError::InsufficientQuorum { have: 2, need: 3 })
        );
        let mut mixed = sigs.clone();
        mixed[2] = c.share_sign(p(3), p(3), b"other").unwrap();
        assert_eq!(c.combine(&mixed), Err(CryptoError::MixedMessage));
    }

    #[test]
    fn fabricated_threshold_signature_rejected() {
        let mut c = Crypto::new(4, 1);
        let d = c.hash(b"m");
        for tag in 0..8 {
            let fake = ThresholdSignature::fabricate(d, vec![p(1), p(2), p(3)], tag);
            assert!(!c.verify_sig(b"m", &fake));
        }
        let sigs = sign_all(&mut c, &[1, 2, 4], b"m");
        let real = c.combine(&sigs).unwrap();
        let reused = ThresholdSignature::fabricate(d, vec![p(1), p(2), p(3)], real.tag);
        assert!(!c.verify_sig(b"m", &reused));
    }

    proptest! {
        #[test]
        fn interning_never_collides(a in proptest::collection::vec(any::<u8>(), 0..40),
                                    b in proptest::collection::vec(any::<u8>(), 0..40)) {
            let mut c = Crypto::new(4, 1);
            let ha = c.hash(&a);
            let hb = c.hash(&b);
            prop_assert_eq!(ha == hb, a == b);
        }

        #[test]
        fn combine_succeeds_iff_quorum(t in 1usize..4, mask in any::<u16>()) {
            let n = 3 * t + 1;
            let mut c = Crypto::new(n, t);
            let ids: Vec<usize> = (1..=n).filter(|i| mask & (1 << (i - 1)) != 0).collect();
            let sigs = sign_all(&mut c, &ids, b"msg");
            let res = c.combine(&sigs);
            prop_assert_eq!(res.is_ok(), ids.len() > 2 * t);
            if let Ok(sig) = res {
                prop_assert!(c.verify_sig(b"msg", &sig));
            }
        }
    }
}
