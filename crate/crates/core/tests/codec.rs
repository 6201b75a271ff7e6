use gridform_core::agents::codec::{decode, encode, ActMsg, ConsensusMsg, Framer, MeasMsg, Record};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
        -1e7..1e7f64,
    ]
}

fn record() -> impl Strategy<Value = Record> {
    prop_oneof![
        (any::<u32>(), any::<u64>(), finite(), finite(), finite(), finite(), finite()).prop_map(|(sender, seq, t, omega_cons, q_ratio, m_de, n_df)| {
            Record::Dapi(ConsensusMsg { sender, seq, t, omega_cons, q_ratio, m_de, n_df })
        }),
        (any::<u32>(), finite(), finite(), any::<Option<u64>>()).prop_map(|(inv, omega, v, seq)| Record::Act(ActMsg { inv, omega, v, seq })),
        (any::<u32>(), finite(), finite(), any::<Option<u64>>()).prop_map(|(inv, p, q, seq)| Record::Meas(MeasMsg { inv, p, q, seq })),
        any::<u32>().prop_map(Record::Hello),
        any::<usize>().prop_map(Record::Start),
    ]
}

/// Bitwise equality so that `-0.0` and `0.0` are told apart.
fn same(a: &Record, b: &Record) -> bool {
    let bits = |r: &Record| -> Vec<u64> {
        match *r {
            Record::Dapi(m) => vec![m.sender as u64, m.seq, m.t.to_bits(), m.omega_cons.to_bits(), m.q_ratio.to_bits(), m.m_de.to_bits(), m.n_df.to_bits()],
            Record::Act(a) => vec![1, a.inv as u64, a.omega.to_bits(), a.v.to_bits(), a.seq.map_or(u64::MAX, |s| s ^ 1)],
            Record::Meas(m) => vec![2, m.inv as u64, m.p.to_bits(), m.q.to_bits(), m.seq.map_or(u64::MAX, |s| s ^ 1)],
            Record::Hello(id) => vec![3, id as u64],
            Record::Start(n) => vec![4, n as u64],
        }
    };
    std::mem::discriminant(a) == std::mem::discriminant(b) && bits(a) == bits(b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn encode_decode_round_trip(r in record()) {
        let text = encode(&r);
        let back = decode(text.as_bytes()).unwrap();
        prop_assert!(same(&r, &back), "{r:?} -> {text:?} -> {back:?}");
        prop_assert_eq!(encode(&back), text);
    }

    #[test]
    fn framing_survives_arbitrary_splits(rs in prop::collection::vec(record(), 1..8), cuts in prop::collection::vec(any::<prop::sample::Index>(), 0..6)) {
        let stream: Vec<u8> = rs.iter().flat_map(|r| encode(r).into_bytes()).collect();
        let mut at: Vec<usize> = cuts.iter().map(|c| c.index(stream.len())).collect();
        at.sort_unstable();
        let mut f = Framer::default();
        let mut out = Vec::new();
        let mut prev = 0;
        for c in at.into_iter().chain([stream.len()]) {
            out.extend(f.push(&stream[prev..c]));
            prev = c;
        }
        prop_assert_eq!(f.pending(), 0);
        prop_assert_eq!(out.len(), rs.len());
        for (got, want) in out.iter().zip(&rs) {
            prop_assert!(same(got.as_ref().unwrap(), want));
        }
    }

    #[test]
    fn garbage_is_rejected_without_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode(&bytes);
        let mut f = Framer::default();
        let _ = f.push(&bytes);
    }
}
