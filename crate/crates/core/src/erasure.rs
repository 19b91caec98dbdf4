//! Reed-Solomon codec over GF(2^16).
//!
//! A value is prefixed with its byte length, padded, and split into 16-bit
//! words; every `t + 1` consecutive words are the coefficients of one
//! degree-`t` polynomial. Symbol `i` is the concatenation of all codeword
//! evaluations at `x = i`, so any `t + 1` symbols rebuild the value.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::crypto::HashValue;
use crate::model::{ProtocolParams, Value};

const LEN_PREFIX: usize = 8;

pub(crate) mod gf {
    use super::OnceLock;

    const POLY: u32 = 0x1_100B;
    const ORDER: usize = 65_535;

    struct Tables {
        exp: Vec<u16>,
        log: Vec<u16>,
    }

    fn tables() -> &'static Tables {
        static TABLES: OnceLock<Tables> = OnceLock::new();
        TABLES.get_or_init(|| {
            let mut exp = vec![0u16; 2 * ORDER];
            let mut log = vec![0u16; ORDER + 1];
            let mut x: u32 = 1;
            for i in 0..ORDER {
                exp[i] = x as u16;
                log[x as usize] = i as u16;
                x <<= 1;
                if x & 0x1_0000 != 0 {
                    x ^= POLY;
                }
            }
            for i in ORDER..2 * ORDER {
                exp[i] = exp[i - ORDER];
            }
            Tables { exp, log }
        })
    }

    pub fn mul(a: u16, b: u16) -> u16 {
        if a == 0 || b == 0 {
            return 0;
        }
        let t = tables();
        t.exp[t.log[a as usize] as usize + t.log[b as usize] as usize]
    }

    pub fn inv(a: u16) -> u16 {
        assert!(a != 0, "zero has no inverse");
        let t = tables();
        t.exp[ORDER - t.log[a as usize] as usize]
    }

    /// Horner evaluation; `coeffs[0]` is the constant term.
    pub fn eval(coeffs: &[u16], x: u16) -> u16 {
        coeffs.iter().rev().fold(0, |acc, &c| mul(acc, x) ^ c)
    }

    #[cfg(test)]
    pub fn generator_order() -> usize {
        let t = tables();
        (1..=ORDER).find(|&i| t.exp[i] == 1).unwrap_or(0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ErasureError {
    #[error("codec layout unsupported for n = {n}, t = {t}")]
    Layout { n: usize, t: usize },
    #[error("{have} symbols supplied, {need} required")]
    Arity { have: usize, need: usize },
    #[error("symbol index {0} supplied twice")]
    DuplicateIndex(usize),
    #[error("symbol index {0} outside 1..=n")]
    IndexOutOfRange(usize),
    #[error("no consistent codeword within the correction radius")]
    DecodeFailure,
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Symbol {
    index: usize,
    data: Arc<[u8]>,
}

impl Symbol {
    pub fn new(index: usize, data: Vec<u8>) -> Self {
        Symbol {
            index,
            data: data.into(),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

impl std::fmt::Debug for Symbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Symbol({}, {} bytes)", self.index, self.data.len())
    }
}

/// Symbols keyed by index, optionally all claiming one hash.
#[derive(Clone, Debug, Default)]
pub struct SymbolSet {
    symbols: BTreeMap<usize, Symbol>,
    target_hash: Option<HashValue>,
}

impl SymbolSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn for_hash(h: HashValue) -> Self {
        SymbolSet {
            symbols: BTreeMap::new(),
            target_hash: Some(h),
        }
    }

    pub fn target_hash(&self) -> Option<HashValue> {
        self.target_hash
    }

    /// Adds a symbol; returns false when its index is already present.
    pub fn insert(&mut self, s: Symbol) -> bool {
        if self.symbols.contains_key(&s.index) {
            return false;
        }
        self.symbols.insert(s.index, s);
        true
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn to_vec(&self) -> Vec<Symbol> {
        self.symbols.values().cloned().collect()
    }
}

/// Codec for `n` symbols of which any `t + 1` reconstruct.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Codec {
    n: usize,
    t: usize,
}

impl Codec {
    pub fn new(n: usize, t: usize) -> Result<Self, ErasureError> {
        if n >= 65_535 || t + 1 > n {
            return Err(ErasureError::Layout { n, t });
        }
        Ok(Codec { n, t })
    }

    pub fn for_params(p: &ProtocolParams) -> Self {
        Codec::new(p.n, p.t).expect("validated params fit the codec")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    fn k(&self) -> usize {
        self.t + 1
    }

    fn codewords(&self, bytes: &[u8]) -> Vec<Vec<u16>> {
        let k = self.k();
        let mut payload = Vec::with_capacity(bytes.len() + LEN_PREFIX + 2 * k);
        payload.extend_from_slice(&(bytes.len() as u64).to_be_bytes());
        payload.extend_from_slice(bytes);
        let unit = 2 * k;
        payload.resize(payload.len().div_ceil(unit) * unit, 0);
        let words: Vec<u16> = payload
            .chunks(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        words.chunks(k).map(|c| c.to_vec()).collect()
    }

    fn evaluate(&self, codewords: &[Vec<u16>], index: usize) -> Symbol {
        let x = index as u16;
        let mut data = Vec::with_capacity(codewords.len() * 2);
        for cw in codewords {
            data.extend_from_slice(&gf::eval(cw, x).to_be_bytes());
        }
        Symbol::new(index, data)
    }

    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<Symbol> {
        let cws = self.codewords(bytes);
        (1..=self.n).map(|i| self.evaluate(&cws, i)).collect()
    }

    pub fn encode(&self, v: &Value) -> Vec<Symbol> {
        self.encode_bytes(v.bytes())
    }

    /// Symbol `index` alone.
    pub fn encode_one(&self, v: &Value, index: usize) -> Symbol {
        self.evaluate(&self.codewords(v.bytes()), index)
    }

    fn check_indices(&self, symbols: &[Symbol]) -> Result<(), ErasureError> {
        let mut seen = vec![false; self.n + 1];
        for s in symbols {
            if s.index == 0 || s.index > self.n {
                return Err(ErasureError::IndexOutOfRange(s.index));
            }
            if seen[s.index] {
                return Err(ErasureError::DuplicateIndex(s.index));
            }
            seen[s.index] = true;
        }
        Ok(())
    }

    /// Erasure decoding from any `t + 1` (or more) uncorrupted symbols.
    pub fn decode(&self, symbols: &[Symbol]) -> Result<Value, ErasureError> {
        self.check_indices(symbols)?;
        if symbols.len() < self.k() {
            return Err(ErasureError::Arity {
                have: symbols.len(),
                need: self.k(),
            });
        }
        let mut chosen: Vec<&Symbol> = symbols.iter().collect();
        chosen.sort_by_key(|s| s.index);
        chosen.truncate(self.k());
        let width = chosen[0].data.len();
        if !width.is_multiple_of(2) || chosen.iter().any(|s| s.data.len() != width) {
            return Err(ErasureError::DecodeFailure);
        }
        let xs: Vec<u16> = chosen.iter().map(|s| s.index as u16).collect();
        let basis = lagrange_basis(&xs);
        let mut cws = Vec::with_capacity(width / 2);
        for c in 0..width / 2 {
            let ys: Vec<u16> = chosen.iter().map(|s| word_at(&s.data, c)).collect();
            cws.push(combine_basis(&basis, &ys));
        }
        unpack(&cws).ok_or(ErasureError::DecodeFailure)
    }

    /// Largest number of corrupted symbols `decode_correcting` repairs among
    /// `m` supplied symbols.
    pub fn correction_radius(&self, m: usize) -> usize {
        m.saturating_sub(self.k()) / 2
    }

    /// Error-correcting decoding (Berlekamp-Welch per codeword). Succeeds iff
    /// some codeword differs from at most `correction_radius(m)` of the `m`
    /// supplied symbols; that codeword is then unique.
    pub fn decode_correcting(&self, symbols: &[Symbol]) -> Result<Value, ErasureError> {
        self.check_indices(symbols)?;
        let need = 2 * self.t + 1;
        if symbols.len() < need {
            return Err(ErasureError::Arity {
                have: symbols.len(),
                need,
            });
        }
        let mut sorted: Vec<&Symbol> = symbols.iter().collect();
        sorted.sort_by_key(|s| s.index);
        let width = modal_width(&sorted);
        if width == 0 || !width.is_multiple_of(2) {
            return Err(ErasureError::DecodeFailure);
        }
        let m = sorted.len();
        let e = self.correction_radius(m);
        let xs: Vec<u16> = sorted.iter().map(|s| s.index as u16).collect();
        let basis = lagrange_basis(&xs[..self.k()]);
        let mut cws = Vec::with_capacity(width / 2);
        for c in 0..width / 2 {
            let ys: Vec<u16> = sorted
                .iter()
                .map(|s| {
                    if s.data.len() == width {
                        word_at(&s.data, c)
                    } else {
                        0
                    }
                })
                .collect();
            let fast = combine_basis(&basis, &ys[..self.k()]);
            let consistent = xs[self.k()..]
                .iter()
                .zip(&ys[self.k()..])
                .all(|(&x, &y)| gf::eval(&fast, x) == y);
            if consistent {
                cws.push(fast);
            } else {
                cws.push(berlekamp_welch(&xs, &ys, self.t, e).ok_or(ErasureError::DecodeFailure)?);
            }
        }
        let mismatches = sorted
            .iter()
            .filter(|s| self.evaluate(&cws, s.index).data != s.data)
            .count();
        if mismatches > e {
            return Err(ErasureError::DecodeFailure);
        }
        unpack(&cws).ok_or(ErasureError::DecodeFailure)
    }
}

fn word_at(data: &[u8], c: usize) -> u16 {
    u16::from_be_bytes([data[2 * c], data[2 * c + 1]])
}

fn modal_width(symbols: &[&Symbol]) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for s in symbols {
        *counts.entry(s.data.len()).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by_key(|&(w, c)| (c, std::cmp::Reverse(w)))
        .map_or(0, |(w, _)| w)
}

fn unpack(cws: &[Vec<u16>]) -> Option<Value> {
    let mut bytes = Vec::with_capacity(cws.len() * cws.first().map_or(0, |c| c.len()) * 2);
    for cw in cws {
        for w in cw {
            bytes.extend_from_slice(&w.to_be_bytes());
        }
    }
    if bytes.len() < LEN_PREFIX {
        return None;
    }
    let len = u64::from_be_bytes(bytes[..LEN_PREFIX].try_into().ok()?) as usize;
    if len > bytes.len() - LEN_PREFIX {
        return None;
    }
    if bytes[LEN_PREFIX + len..].iter().any(|&b| b != 0) {
        return None;
    }
    Some(Value::new(bytes[LEN_PREFIX..LEN_PREFIX + len].to_vec()))
}

/// Coefficient vectors of the Lagrange basis polynomials for points `xs`.
fn lagrange_basis(xs: &[u16]) -> Vec<Vec<u16>> {
    let k = xs.len();
    // master(x) = prod (x - x_j), highest degree last
    let mut master = vec![1u16];
    for &xj in xs {
        let mut next = vec![0u16; master.len() + 1];
        for (d, &c) in master.iter().enumerate() {
            next[d + 1] ^= c;
            next[d] ^= gf::mul(c, xj);
        }
        master = next;
    }
    xs.iter()
        .map(|&xj| {
            // synthetic division master / (x - xj)
            let mut q = vec![0u16; k];
            let mut carry = 0u16;
            for d in (1..=k).rev() {
                carry = master[d] ^ gf::mul(carry, xj);
                q[d - 1] = carry;
            }
            let denom = gf::eval(&q, xj);
            let scale = gf::inv(denom);
            q.iter().map(|&c| gf::mul(c, scale)).collect()
        })
        .collect()
}

fn combine_basis(basis: &[Vec<u16>], ys: &[u16]) -> Vec<u16> {
    let k = basis.len();
    let mut out = vec![0u16; k];
    for (b, &y) in basis.iter().zip(ys) {
        if y == 0 {
            continue;
        }
        for d in 0..k {
            out[d] ^= gf::mul(b[d], y);
        }
    }
    out
}

/// Finds the degree-`t` polynomial agreeing with all but at most `e` of the
/// points, or `None`.
fn berlekamp_welch(xs: &[u16], ys: &[u16], t: usize, e: usize) -> Option<Vec<u16>> {
    let m = xs.len();
    let q_len = e + t + 1;
    let cols = q_len + e;
    // rows: sum_j Q_j x^j - y sum_{k<e} E_k x^k = y x^e
    let mut rows: Vec<Vec<u16>> = Vec::with_capacity(m);
    for (&x, &y) in xs.iter().zip(ys) {
        let mut row = vec![0u16; cols + 1];
        let mut pw = 1u16;
        for j in 0..q_len {
            row[j] = pw;
            if j < e {
                row[q_len + j] = gf::mul(y, pw);
            }
            if j == e {
                row[cols] = gf::mul(y, pw);
            }
            pw = gf::mul(pw, x);
        }
        rows.push(row);
    }
    let solution = solve(rows, cols)?;
    let q = &solution[..q_len];
    let mut err = solution[q_len..].to_vec();
    err.push(1);
    let (quot, rem) = poly_divmod(q, &err);
    if rem.iter().any(|&c| c != 0) {
        return None;
    }
    let mut p = quot;
    p.resize(t + 1, 0);
    if quot_degree_exceeds(&p, t) {
        return None;
    }
    let agree = xs
        .iter()
        .zip(ys)
        .filter(|(&x, &y)| gf::eval(&p, x) == y)
        .count();
    (m - agree <= e).then_some(p)
}

fn quot_degree_exceeds(p: &[u16], t: usize) -> bool {
    p.iter().skip(t + 1).any(|&c| c != 0)
}

/// Gaussian elimination; free variables are set to zero.
fn solve(mut rows: Vec<Vec<u16>>, cols: usize) -> Option<Vec<u16>> {
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..rows.len()).find(|&i| rows[i][c] != 0) else {
            continue;
        };
        rows.swap(r, p);
        let inv = gf::inv(rows[r][c]);
        for v in rows[r].iter_mut() {
            *v = gf::mul(*v, inv);
        }
        for i in 0..rows.len() {
            if i != r && rows[i][c] != 0 {
                let f = rows[i][c];
                for j in 0..=cols {
                    let sub = gf::mul(f, rows[r][j]);
                    rows[i][j] ^= sub;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == rows.len() {
            break;
        }
    }
    if rows[r..].iter().any(|row| row[cols] != 0) {
        return None;
    }
    let mut x = vec![0u16; cols];
    for (i, &c) in pivots.iter().enumerate() {
        x[c] = rows[i][cols];
    }
    Some(x)
}

/// Polynomial long division, coefficients lowest degree first; `d` must have
/// a non-zero leading coefficient.
fn poly_divmod(a: &[u16], d: &[u16]) -> (Vec<u16>, Vec<u16>) {
    let mut rem = a.to_vec();
    let dd = d.len() - 1;
    if rem.len() <= dd {
        return (vec![0], rem);
    }
    let lead_inv = gf::inv(d[dd]);
    let mut quot = vec![0u16; rem.len() - dd];
    for i in (dd..rem.len()).rev() {
        let coef = gf::mul(rem[i], lead_inv);
        quot[i - dd] = coef;
        if coef != 0 {
            for (j, &dj) in d.iter().enumerate() {
                rem[i - dd + j] ^= gf::mul(coef, dj);
            }
        }
    }
    rem.truncate(dd);
    (quot, rem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn value(seed: u64, len: usize) -> Value {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Value::new((0..len).map(|_| rng.gen()).collect())
    }

    #[test]
    fn field_is_well_formed() {
        assert_eq!(gf::generator_order(), 65_535);
        for a in [1u16, 2, 3, 0x1234, 0xffff] {
            assert_eq!(gf::mul(a, gf::inv(a)), 1);
        }
    }

    #[test]
    fn symbol_width_matches_l_over_t_plus_one() {
        let c = Codec::new(4, 1).unwrap();
        let v = value(1, 128);
        let syms = c.encode(&v);
        assert_eq!(syms.len(), 4);
        // 1024-bit value plus the 64-bit length prefix, split over 2 words per codeword
        assert_eq!(syms[0].data().len() * 8, (1024 + 64) / 2);
        assert_eq!(syms, c.encode(&v));
    }

    #[test]
    fn any_two_of_four_decode() {
        let c = Codec::new(4, 1).unwrap();
        let v = value(2, 100);
        let syms = c.encode(&v);
        for a in 0..4 {
            for b in a + 1..4 {
                assert_eq!(c.decode(&[syms[a].clone(), syms[b].clone()]).unwrap(), v);
            }
        }
        assert_eq!(
            c.decode(&syms[..1]),
            Err(ErasureError::Arity { have: 1, need: 2 })
        );
    }

    #[test]
    fn correcting_one_error_with_all_four() {
        let c = Codec::new(4, 1).unwrap();
        let v = value(3, 77);
        let mut syms = c.encode(&v);
        let junk: Vec<u8> = syms[2].data().iter().map(|b| b ^ 0x5a).collect();
        syms[2] = Symbol::new(3, junk);
        assert_eq!(c.decode_correcting(&syms).unwrap(), v);
        // with three symbols one error is beyond the unique-decoding radius
        assert_eq!(
            c.decode_correcting(&syms[..3]),
            Err(ErasureError::DecodeFailure)
        );
        assert_eq!(c.decode_correcting(&c.encode(&v)[..3]).unwrap(), v);
    }

    #[test]
    fn duplicate_and_out_of_range_indices() {
        let c = Codec::new(4, 1).unwrap();
        let syms = c.encode(&value(4, 10));
        assert_eq!(
            c.decode(&[syms[0].clone(), syms[0].clone()]),
            Err(ErasureError::DuplicateIndex(1))
        );
        let stray = Symbol::new(9, syms[0].data().to_vec());
        assert_eq!(
            c.decode(&[syms[0].clone(), stray]),
            Err(ErasureError::IndexOutOfRange(9))
        );
    }

    #[test]
    fn empty_value_round_trips() {
        let c = Codec::new(7, 2).unwrap();
        let v = Value::new(Vec::new());
        assert_eq!(c.decode(&c.encode(&v)[4..]).unwrap(), v);
    }

    #[test]
    fn symbol_set_rejects_duplicates() {
        let mut s = SymbolSet::new();
        assert!(s.insert(Symbol::new(1, vec![1, 2])));
        assert!(!s.insert(Symbol::new(1, vec![3, 4])));
        assert_eq!(s.len(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mds_any_subset(bytes in proptest::collection::vec(any::<u8>(), 0..200),
                          t in 1usize..4, pick in any::<u64>()) {
            let n = 3 * t + 1;
            let c = Codec::new(n, t).unwrap();
            let v = Value::new(bytes);
            let syms = c.encode(&v);
            let mut rng = ChaCha8Rng::seed_from_u64(pick);
            let mut idx: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                idx.swap(i, rng.gen_range(0..=i));
            }
            let subset: Vec<Symbol> = idx[..t + 1].iter().map(|&i| syms[i].clone()).collect();
            prop_assert_eq!(c.decode(&subset).unwrap(), v);
        }

        #[test]
        fn corrects_up_to_t_errors_with_all_symbols(
            bytes in proptest::collection::vec(any::<u8>(), 1..120),
            t in 1usize..4, seed in any::<u64>()) {
            let n = 3 * t + 1;
            let c = Codec::new(n, t).unwrap();
            let v = Value::new(bytes);
            let mut syms = c.encode(&v);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..t {
                let i = rng.gen_range(0..n);
                let junk: Vec<u8> = syms[i].data().iter().map(|_| rng.gen()).collect();
                syms[i] = Symbol::new(i + 1, junk);
            }
            prop_assert_eq!(c.decode_correcting(&syms).unwrap(), v);
        }
    }
}
