use chunkflow::queue::{below_threshold, ActionQueue};
use chunkflow::types::{Action, ActionChunk, Aggregation};
use proptest::prelude::*;

fn chunk(start: u64, id: u64, len: usize, tag: f64) -> ActionChunk {
    ActionChunk {
        start_timestep: start,
        chunk_id: id,
        actions: (0..len)
            .map(|k| Action::from_raw(vec![tag, k as f64]))
            .collect(),
    }
}

fn agg() -> impl Strategy<Value = Aggregation> {
    prop_oneof![
        Just(Aggregation::ReplaceOverlap),
        (0.05f64..0.95).prop_map(|alpha| Aggregation::ExpBlend { alpha }),
    ]
}

fn timesteps(q: &ActionQueue) -> Vec<u64> {
    q.iter().map(|(t, _)| t).collect()
}

proptest! {
    #[test]
    fn merge_keeps_queue_contiguous_and_fresh(
        ops in prop::collection::vec((0u64..60, 1usize..30, 0usize..4), 1..40),
        strategy in agg(),
    ) {
        let mut q = ActionQueue::new();
        let mut now = 0u64;
        for (i, (start_off, len, pops)) in ops.into_iter().enumerate() {
            let c = chunk(now.saturating_sub(10) + start_off, i as u64, len, i as f64);
            let before = q.clone();
            match q.merge_chunk(&c, now, strategy) {
                Ok(_) => {
                    let ts = timesteps(&q);
                    prop_assert!(ts.windows(2).all(|w| w[1] == w[0] + 1));
                    prop_assert!(ts.iter().all(|&t| t >= now));
                }
                Err(_) => prop_assert_eq!(&q, &before),
            }
            for _ in 0..pops {
                if let Ok((t, _)) = q.pop_front() {
                    prop_assert!(t >= now);
                    now = t + 1;
                } else {
                    now += 1;
                }
            }
        }
    }

    #[test]
    fn replace_merge_is_idempotent(
        start in 0u64..100,
        len in 1usize..60,
        now_off in 0u64..80,
        existing in prop::option::of((0u64..100, 1usize..60)),
    ) {
        let now = start + now_off / 2;
        let mut q = ActionQueue::new();
        if let Some((s, l)) = existing {
            let _ = q.merge_chunk(&chunk(s, 0, l, 0.0), now, Aggregation::ReplaceOverlap);
        }
        let c = chunk(start, 1, len, 1.0);
        if q.merge_chunk(&c, now, Aggregation::ReplaceOverlap).is_ok() {
            let once = q.clone();
            q.merge_chunk(&c, now, Aggregation::ReplaceOverlap).unwrap();
            prop_assert_eq!(q, once);
        }
    }

    #[test]
    fn incoming_wins_on_overlap_with_replace(
        q_start in 0u64..50,
        q_len in 1usize..50,
        in_start in 0u64..50,
        in_len in 1usize..50,
    ) {
        let mut q = ActionQueue::from_chunk(&chunk(q_start, 0, q_len, 0.0));
        let c = chunk(in_start, 1, in_len, 1.0);
        if q.merge_chunk(&c, 0, Aggregation::ReplaceOverlap).is_ok() {
            for (t, a) in q.iter() {
                let in_new = (in_start..in_start + in_len as u64).contains(&t);
                prop_assert_eq!(a.values()[0], if in_new { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn threshold_matches_definition(len in 0usize..200, n in 1usize..200, k in 0u32..=100) {
        let g = f64::from(k) / 100.0;
        // exact rational comparison len/n < k/100
        let expected = (len as u64) * 100 < u64::from(k) * n as u64;
        prop_assert_eq!(below_threshold(len, n, g), expected);
    }
}
