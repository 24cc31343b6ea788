use prism_core::data::io::{EDGE_TEXTS_FILE, EVENTS_FILE, NODE_TEXTS_FILE};
use prism_core::data::{
    build_candidate_pool, chronological_split, generate_synthetic, load_dataset_dir, sample_negative,
    write_dataset_dir, HistoryIndex, RetrievalQuery, Setting, Split, SyntheticConfig,
};
use prism_core::rng::Rng;
use prism_core::Error;
use proptest::prelude::*;
use std::collections::{BTreeSet, VecDeque};
use std::fs;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_partition_the_stream(n in 10usize..400, seed in any::<u64>()) {
        let ds = generate_synthetic(&SyntheticConfig::new(12, n, 3, 0.5, seed)).unwrap();
        let s = chronological_split(&ds, [0.7, 0.15, 0.15]).unwrap();
        prop_assert_eq!(s.train.len(), (0.7 * n as f64 + 1e-9).floor() as usize);
        prop_assert_eq!(s.val.len(), (0.15 * n as f64 + 1e-9).floor() as usize);
        prop_assert_eq!(s.train.start, 0);
        prop_assert_eq!(s.train.end, s.val.start);
        prop_assert_eq!(s.val.end, s.test.start);
        prop_assert_eq!(s.test.end, n);
        for split in [Split::Train, Split::Val, Split::Test] {
            let t = s.filtered(&ds, split, Setting::Transductive);
            let i = s.filtered(&ds, split, Setting::Inductive);
            prop_assert_eq!(t.len() + i.len(), s.range(split).len());
        }
        prop_assert!(s.filtered(&ds, Split::Train, Setting::Inductive).is_empty());
        let seen: BTreeSet<usize> = s.train_nodes.union(&s.inductive_nodes).copied().collect();
        prop_assert_eq!(seen.len(), ds.num_nodes());
    }

    #[test]
    fn histories_are_the_latest_strictly_earlier_events(seed in any::<u64>(), len in 1usize..8, q in 0usize..200) {
        let ds = generate_synthetic(&SyntheticConfig::new(10, 200, 2, 0.5, seed)).unwrap();
        let index = HistoryIndex::build_all(&ds);
        let probe = ds.events()[q];
        for node in [probe.src, probe.dst] {
            let h = index.extract_history(node, probe.timestamp, len);
            prop_assert_eq!(h.entries.len(), len);
            prop_assert_eq!(h.mask.len(), len);
            let expected: Vec<(usize, f64)> = ds
                .events()
                .iter()
                .filter(|e| e.timestamp < probe.timestamp && (e.src == node || e.dst == node))
                .map(|e| (if e.src == node { e.dst } else { e.src }, e.timestamp))
                .collect();
            let tail = &expected[expected.len().saturating_sub(len)..];
            let got: Vec<(usize, f64)> = h.valid().map(|e| (e.partner, e.timestamp)).collect();
            prop_assert_eq!(got, tail.to_vec());
            // Padding sits on the left.
            let first_valid = h.mask.iter().position(|&m| m).unwrap_or(len);
            prop_assert!(h.mask[first_valid..].iter().all(|&m| m));
        }
    }

    #[test]
    fn negatives_avoid_the_true_destination(seed in any::<u64>(), dst in 0usize..6) {
        let universe = vec![0, 1, 2, 3, 4, 5];
        let e = prism_core::data::InteractionEvent { src: 0, dst, edge_text: 0, timestamp: 1.0 };
        let mut rng = Rng::new(seed);
        for _ in 0..20 {
            let n = sample_negative(&mut rng, &e, &universe).unwrap();
            prop_assert!(n != dst && universe.contains(&n));
        }
        let query = RetrievalQuery { src: 0, timestamp: 1.0, true_dst: dst };
        let pool = build_candidate_pool(&mut rng, query, 4, &universe).unwrap();
        let distinct: BTreeSet<usize> = pool.candidates.iter().copied().collect();
        prop_assert_eq!(distinct.len(), 4);
        prop_assert!(distinct.contains(&dst));
    }
}

#[test]
fn synthetic_generation_is_deterministic() {
    let cfg = SyntheticConfig::new(30, 300, 3, 0.8, 17);
    let a = generate_synthetic(&cfg).unwrap();
    let b = generate_synthetic(&cfg).unwrap();
    assert_eq!(a, b);
    let c = generate_synthetic(&SyntheticConfig { seed: 18, ..cfg }).unwrap();
    assert_ne!(a.events(), c.events());
}

#[test]
fn full_recency_repeats_a_recent_partner() {
    let cfg = SyntheticConfig::new(24, 400, 4, 1.0, 5);
    let ds = generate_synthetic(&cfg).unwrap();
    let mut recent: Vec<VecDeque<usize>> = vec![VecDeque::new(); cfg.num_nodes];
    let mut repeats = 0;
    for e in ds.events() {
        if !recent[e.src].is_empty() {
            assert!(recent[e.src].contains(&e.dst), "{e:?} not among {:?}", recent[e.src]);
            repeats += 1;
        }
        for (a, b) in [(e.src, e.dst), (e.dst, e.src)] {
            recent[a].push_back(b);
            if recent[a].len() > cfg.recent_window {
                recent[a].pop_front();
            }
        }
    }
    assert!(repeats > 300);
}

#[test]
fn zero_recency_stays_within_the_community() {
    let ds = generate_synthetic(&SyntheticConfig::new(20, 300, 4, 0.0, 9)).unwrap();
    for e in ds.events() {
        assert_eq!(e.src % 4, e.dst % 4);
        assert_ne!(e.src, e.dst);
    }
    assert!(ds.events().windows(2).all(|w| w[0].timestamp < w[1].timestamp));
}

#[test]
fn dataset_files_roundtrip() {
    let ds = generate_synthetic(&SyntheticConfig::new(12, 60, 3, 0.5, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset_dir(&ds, dir.path()).unwrap();
    assert_eq!(load_dataset_dir(dir.path()).unwrap(), ds);
}

#[test]
fn malformed_files_are_reported() {
    let ds = generate_synthetic(&SyntheticConfig::new(12, 60, 3, 0.5, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset_dir(&ds, dir.path()).unwrap();
    let events = dir.path().join(EVENTS_FILE);
    let original = fs::read_to_string(&events).unwrap();

    fs::write(&events, format!("{original}0,1,0,notatime\n")).unwrap();
    assert!(matches!(load_dataset_dir(dir.path()), Err(Error::Parse { .. })));

    fs::write(&events, format!("{original}0,999,0,1000\n")).unwrap();
    match load_dataset_dir(dir.path()) {
        Err(Error::Integrity { what: "node", ids }) => assert_eq!(ids, vec![999]),
        other => panic!("expected integrity error, got {other:?}"),
    }

    fs::write(&events, original.replacen("src,dst", "source,dst", 1)).unwrap();
    assert!(load_dataset_dir(dir.path()).is_err());

    fs::write(&events, &original).unwrap();
    fs::remove_file(dir.path().join(NODE_TEXTS_FILE)).unwrap();
    assert!(matches!(load_dataset_dir(dir.path()), Err(Error::Io { .. })));
    assert!(dir.path().join(EDGE_TEXTS_FILE).exists());
}

#[test]
fn tiny_streams_cannot_be_split() {
    let ds = generate_synthetic(&SyntheticConfig::new(4, 9, 2, 0.5, 1)).unwrap();
    assert!(matches!(chronological_split(&ds, [0.7, 0.15, 0.15]), Err(Error::Config(_))));
    let ds = generate_synthetic(&SyntheticConfig::new(4, 20, 2, 0.5, 1)).unwrap();
    assert!(chronological_split(&ds, [0.7, 0.2, 0.2]).is_err());
}
