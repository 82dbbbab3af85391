//! Property tests for the flow matrix round trip and the stratified split.

use proptest::prelude::*;

use ntc_core::flow::{
    from_matrix, to_matrix, ClassId, Direction, FlowRecord, Origin, PacketFeatures,
    FEATURE_COUNT, MAX_PACKETS,
};
use ntc_core::ingest::{class_stats, split, Dataset};
use ntc_core::ClassLabel;

fn arb_packet(first: bool) -> impl Strategy<Value = PacketFeatures> {
    (
        any::<u16>(),
        any::<u16>(),
        0.0f64..1000.0,
        0u32..100_000,
        if first { 1u8..=1 } else { 0u8..=1 },
        0u32..1_000_000,
    )
        .prop_map(|(src, dst, iat, payload, dir, win)| {
            PacketFeatures::new(src, dst, iat, payload, Direction::from_bit(dir).unwrap(), win)
                .unwrap()
        })
}

fn arb_flow() -> impl Strategy<Value = FlowRecord> {
    (1usize..=MAX_PACKETS).prop_flat_map(|len| {
        (
            arb_packet(true),
            proptest::collection::vec(arb_packet(false), len - 1),
        )
            .prop_map(|(first, rest)| {
                let mut packets = vec![first];
                packets.extend(rest);
                FlowRecord::new(packets, ClassId(0), Origin::Real).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matrix_round_trip(flow in arb_flow()) {
        let m = to_matrix(&flow);
        // Shape and zero padding.
        prop_assert_eq!(m.values.len(), FEATURE_COUNT);
        for row in &m.values {
            prop_assert_eq!(row.len(), MAX_PACKETS);
        }
        for j in flow.packet_count()..MAX_PACKETS {
            for i in 0..FEATURE_COUNT {
                prop_assert_eq!(m.values[i][j], 0.0);
            }
        }
        // Inverse reconstructs the packets exactly.
        let back = from_matrix(&m, flow.packet_count(), flow.label, flow.origin).unwrap();
        prop_assert_eq!(back, flow);
    }
}

fn dataset_with_counts(counts: &[usize]) -> Dataset {
    let labels: Vec<ClassLabel> = counts
        .iter()
        .enumerate()
        .map(|(i, _)| ClassLabel {
            id: ClassId(i),
            name: format!("c{i}"),
        })
        .collect();
    let mut flows = Vec::new();
    for (class, &n) in counts.iter().enumerate() {
        for k in 0..n {
            let p = PacketFeatures::new(
                (1000 + 97 * k % 50000) as u16,
                443,
                0.0,
                k as u32,
                Direction::SrcToDst,
                0,
            )
            .unwrap();
            flows.push(FlowRecord::new(vec![p], ClassId(class), Origin::Real).unwrap());
        }
    }
    Dataset::new(flows, labels)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_stratified_partition(
        counts in proptest::collection::vec(2usize..60, 2..5),
        frac in 0.2f64..0.9,
        seed in any::<u64>(),
    ) {
        let ds = dataset_with_counts(&counts);
        let (train, test) = split(&ds, frac, seed).unwrap();

        prop_assert_eq!(train.flows.len() + test.flows.len(), ds.flows.len());

        // Per class: the train share is within one flow of round(frac * n).
        let train_counts = train.counts_per_class();
        for (c, &n) in counts.iter().enumerate() {
            let expected = (frac * n as f64).round();
            prop_assert!(
                (train_counts[c] as f64 - expected).abs() <= 1.0,
                "class {} got {} of {}, expected ~{}",
                c, train_counts[c], n, expected
            );
        }

        // Partition by identity: every original flow is on exactly one side.
        let mut seen = vec![0usize; ds.flows.len()];
        for f in train.flows.iter().chain(test.flows.iter()) {
            let i = ds.flows.iter().position(|g| g == f).unwrap();
            seen[i] += 1;
        }
        // Flows are pairwise distinct in this dataset construction, so each
        // index is hit exactly once.
        prop_assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn stats_fractions_always_sum_to_one(
        counts in proptest::collection::vec(1usize..40, 1..6),
    ) {
        let ds = dataset_with_counts(&counts);
        let stats = class_stats(&ds).unwrap();
        prop_assert!((stats.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
