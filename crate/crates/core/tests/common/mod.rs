//! Independent oracles for the integration tests. Nothing here calls into
//! the codec's field arithmetic.

#![allow(dead_code)]

use dare_core::erasure::Symbol;

/// Field polynomial x^16 + x^12 + x^3 + x + 1.
pub const FIELD_POLY: u32 = 0x1_100B;

/// Carry-less shift-and-add multiply, reduced bit by bit.
pub fn gf_mul(a: u16, b: u16) -> u16 {
    let (mut a, mut b, mut acc) = (a as u32, b as u32, 0u32);
    while b != 0 {
        if b & 1 == 1 {
            acc ^= a;
        }
        b >>= 1;
        a <<= 1;
        if a & 0x1_0000 != 0 {
            a ^= FIELD_POLY;
        }
    }
    acc as u16
}

/// `a^(2^16 - 2)` by square-and-multiply.
pub fn gf_inv(a: u16) -> u16 {
    assert_ne!(a, 0);
    let (mut base, mut e, mut acc) = (a, 0xFFFEu32, 1u16);
    while e > 0 {
        if e & 1 == 1 {
            acc = gf_mul(acc, base);
        }
        base = gf_mul(base, base);
        e >>= 1;
    }
    acc
}

pub fn gf_pow(x: u16, e: usize) -> u16 {
    (0..e).fold(1, |acc, _| gf_mul(acc, x))
}

/// Evaluates `sum c_j x^j` term by term.
pub fn poly_eval(coeffs: &[u16], x: u16) -> u16 {
    coeffs
        .iter()
        .enumerate()
        .fold(0, |acc, (j, &c)| acc ^ gf_mul(c, gf_pow(x, j)))
}

/// Coefficients through the points `(xs, ys)` by Gauss-Jordan on the
/// Vandermonde system. `xs` must be distinct.
pub fn interpolate(xs: &[u16], ys: &[u16]) -> Vec<u16> {
    let k = xs.len();
    let mut m: Vec<Vec<u16>> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let mut row: Vec<u16> = (0..k).map(|j| gf_pow(x, j)).collect();
            row.push(y);
            row
        })
        .collect();
    for col in 0..k {
        let pivot = (col..k).find(|&r| m[r][col] != 0).expect("distinct points");
        m.swap(col, pivot);
        let inv = gf_inv(m[col][col]);
        for v in m[col].iter_mut() {
            *v = gf_mul(*v, inv);
        }
        for r in 0..k {
            if r != col && m[r][col] != 0 {
                let f = m[r][col];
                for c in 0..=k {
                    let sub = gf_mul(f, m[col][c]);
                    m[r][c] ^= sub;
                }
            }
        }
    }
    m.iter().map(|row| row[k]).collect()
}

/// Codewords of `bytes` for `k = t + 1`: 8-byte big-endian length, the
/// bytes, zero padding to a multiple of `2k`, big-endian 16-bit words,
/// `k` words per codeword, constant term first.
pub fn layout(bytes: &[u8], k: usize) -> Vec<Vec<u16>> {
    let mut buf = (bytes.len() as u64).to_be_bytes().to_vec();
    buf.extend_from_slice(bytes);
    while !buf.len().is_multiple_of(2 * k) {
        buf.push(0);
    }
    let words: Vec<u16> = buf
        .chunks(2)
        .map(|c| ((c[0] as u16) << 8) | c[1] as u16)
        .collect();
    words.chunks(k).map(<[u16]>::to_vec).collect()
}

/// Inverse of `layout`, `None` when the length prefix is inconsistent.
pub fn unlayout(cws: &[Vec<u16>]) -> Option<Vec<u8>> {
    let bytes: Vec<u8> = cws
        .iter()
        .flatten()
        .flat_map(|w| [(w >> 8) as u8, *w as u8])
        .collect();
    if bytes.len() < 8 {
        return None;
    }
    let len = u64::from_be_bytes(bytes[..8].try_into().unwrap()) as usize;
    if len > bytes.len() - 8 || bytes[8 + len..].iter().any(|&b| b != 0) {
        return None;
    }
    Some(bytes[8..8 + len].to_vec())
}

fn symbol_data(cws: &[Vec<u16>], x: u16) -> Vec<u8> {
    cws.iter()
        .flat_map(|cw| poly_eval(cw, x).to_be_bytes())
        .collect()
}

/// Reference encoder: symbol `i` holds every codeword evaluated at `i`.
pub fn encode(bytes: &[u8], n: usize, t: usize) -> Vec<Vec<u8>> {
    let cws = layout(bytes, t + 1);
    (1..=n).map(|i| symbol_data(&cws, i as u16)).collect()
}

fn subsets(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            go(i + 1, m, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, m, k, &mut Vec::new(), &mut out);
    out
}

/// Brute-force unique decoding: interpolate every `(t + 1)`-subset and
/// accept a candidate that disagrees with at most `(m - t - 1) / 2` of the
/// `m` supplied symbols.
pub fn brute_force_decode(symbols: &[Symbol], t: usize) -> Option<Vec<u8>> {
    let m = symbols.len();
    let k = t + 1;
    if m < 2 * t + 1 {
        return None;
    }
    let width = symbols[0].data().len();
    if width == 0 || !width.is_multiple_of(2) || symbols.iter().any(|s| s.data().len() != width) {
        return None;
    }
    let radius = (m - k) / 2;
    let mut found: Option<Vec<Vec<u16>>> = None;
    for subset in subsets(m, k) {
        let xs: Vec<u16> = subset.iter().map(|&i| symbols[i].index() as u16).collect();
        let cws: Vec<Vec<u16>> = (0..width / 2)
            .map(|c| {
                let ys: Vec<u16> = subset
                    .iter()
                    .map(|&i| {
                        let d = symbols[i].data();
                        ((d[2 * c] as u16) << 8) | d[2 * c + 1] as u16
                    })
                    .collect();
                interpolate(&xs, &ys)
            })
            .collect();
        let wrong = symbols
            .iter()
            .filter(|s| symbol_data(&cws, s.index() as u16) != s.data())
            .count();
        if wrong <= radius {
            if let Some(prev) = &found {
                assert_eq!(
                    prev, &cws,
                    "two codewords within the unique-decoding radius"
                );
            }
            found = Some(cws);
        }
    }
    unlayout(&found?)
}

/// `true` iff `signers` distinct processes reach a `k`-of-`n` threshold.
pub fn quorum_reached(signers: usize, n: usize, t: usize) -> bool {
    signers >= n - t
}
