mod common;

use dare_core::erasure::{Codec, Symbol};
use dare_core::model::Value;
use proptest::prelude::*;

fn params() -> impl Strategy<Value = (usize, usize)> {
    prop_oneof![
        Just((4usize, 1usize)),
        Just((7, 2)),
        Just((10, 3)),
        Just((13, 4))
    ]
}

#[test]
fn bitwise_field_matches_known_products() {
    // x * x^15 = x^16 = x^12 + x^3 + x + 1
    assert_eq!(common::gf_mul(0x0002, 0x8000), 0x100B);
    for a in [1u16, 2, 3, 0x1234, 0xFFFF] {
        assert_eq!(common::gf_mul(a, common::gf_inv(a)), 1);
    }
}

proptest! {
    #[test]
    fn encoder_matches_reference((n, t) in params(), bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let codec = Codec::new(n, t).unwrap();
        let got: Vec<Vec<u8>> = codec.encode(&Value::new(bytes.clone())).iter().map(|s| s.data().to_vec()).collect();
        prop_assert_eq!(got, common::encode(&bytes, n, t));
    }

    #[test]
    fn any_t_plus_one_symbols_decode(
        (n, t) in params(),
        bytes in proptest::collection::vec(any::<u8>(), 0..200),
        pick in proptest::sample::subsequence((1..=13usize).collect::<Vec<_>>(), 5),
    ) {
        let codec = Codec::new(n, t).unwrap();
        let all = codec.encode(&Value::new(bytes.clone()));
        let chosen: Vec<Symbol> = pick.iter().filter(|&&i| i <= n).take(t + 1).map(|&i| all[i - 1].clone()).collect();
        prop_assume!(chosen.len() == t + 1);
        let out = codec.decode(&chosen).unwrap();
        prop_assert_eq!(out.bytes(), &bytes[..]);
    }

    #[test]
    fn correcting_decoder_agrees_with_brute_force(
        (n, t) in prop_oneof![Just((4usize, 1usize)), Just((7, 2))],
        bytes in proptest::collection::vec(any::<u8>(), 1..40),
        corrupt in proptest::collection::vec(any::<bool>(), 7),
        noise in any::<u64>(),
    ) {
        let codec = Codec::new(n, t).unwrap();
        let mut syms = codec.encode(&Value::new(bytes));
        let mut state = noise | 1;
        for (i, s) in syms.iter_mut().enumerate() {
            if corrupt[i] {
                let data: Vec<u8> = s.data().iter().map(|b| {
                    state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                    b ^ (state as u8 | 1)
                }).collect();
                *s = Symbol::new(s.index(), data);
            }
        }
        let got = codec.decode_correcting(&syms).ok().map(|v| v.bytes().to_vec());
        prop_assert_eq!(got, common::brute_force_decode(&syms, t));
    }
}
