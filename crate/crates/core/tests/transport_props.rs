use std::io::Cursor;

use chunkflow::transport::{decode_frame, read_message, write_message, Hello, Message};
use chunkflow::types::{Action, ActionChunk, JointState, Observation};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6f64..1e6,
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(f64::MAX),
    ]
}

fn observation() -> impl Strategy<Value = Observation> {
    (
        any::<u64>(),
        prop::collection::vec(finite(), 1..16),
        prop::collection::vec(any::<u8>(), 0..64),
        any::<u64>(),
    )
        .prop_map(|(timestep, joints, aux, capture_time_ms)| Observation {
            timestep,
            joints: JointState::new(joints).unwrap(),
            aux,
            capture_time_ms,
        })
}

fn chunk() -> impl Strategy<Value = ActionChunk> {
    (any::<u64>(), any::<u64>(), 1usize..8, 1usize..60).prop_flat_map(|(start, id, dim, len)| {
        prop::collection::vec(prop::collection::vec(finite(), dim), len).prop_map(move |rows| {
            ActionChunk {
                start_timestep: start,
                chunk_id: id,
                actions: rows.into_iter().map(Action::from_raw).collect(),
            }
        })
    })
}

fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        observation().prop_map(Message::Observation),
        chunk().prop_map(Message::ActionChunk),
        (any::<u32>(), any::<u32>(), any::<u32>()).prop_map(|(v, a, j)| Message::Hello(Hello {
            protocol_version: v,
            action_dim: a,
            joint_dim: j,
        })),
        Just(Message::Bye),
    ]
}

/// Compares floats by bit pattern so that -0.0 and 0.0 are told apart.
fn bits(m: &Message) -> Vec<u8> {
    m.encode()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn frames_round_trip(msg in message()) {
        let bytes = msg.encode();
        let back = decode_frame(&bytes).unwrap();
        prop_assert_eq!(bits(&back), bytes);
        prop_assert_eq!(back, msg);
    }
}

proptest! {
    #[test]
    fn streams_round_trip(msgs in prop::collection::vec(message(), 0..20)) {
        let mut buf = Vec::new();
        for m in &msgs {
            write_message(&mut buf, m).unwrap();
        }
        let mut r = Cursor::new(buf);
        let mut back = Vec::new();
        while let Some(m) = read_message(&mut r).unwrap() {
            back.push(m);
        }
        prop_assert_eq!(back, msgs);
    }

    #[test]
    fn truncation_never_panics(msg in message(), cut in 0usize..10_000) {
        let bytes = msg.encode();
        let cut = cut % bytes.len();
        prop_assert!(decode_frame(&bytes[..cut]).is_err());
    }

    #[test]
    fn garbage_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode_frame(&bytes);
        let _ = read_message(&mut Cursor::new(bytes));
    }
}
