use dualamr::experiments::{parse_buckets, tercile_buckets};
use dualamr::toy::toy_setup;
use dualamr::training::{batch_indices, mask_features};
use dualamr::vocab::UNK_ID;
use dualamr::{extract_edges, parse_beam, parse_greedy, DecodeOptions, ModelConfig, Profile, RunConfig};
use dualamr_graph::{parse_penman, serialize_penman, AmrGraph};
use proptest::prelude::*;

fn tiny_run() -> RunConfig {
    let mut run = RunConfig::for_profile(Profile::Desk);
    run.model = ModelConfig::tiny(8);
    run
}

fn labels(g: &AmrGraph) -> Vec<(String, String, String)> {
    let name = |i: usize| g.node(i).label.clone();
    let mut e: Vec<_> = g.edges().iter().map(|e| (name(e.source), e.label.clone(), name(e.target))).collect();
    e.sort();
    e
}

fn heads_and_beta(m: usize, k: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, m + 1), k),
        prop::collection::vec(0.0f64..1.0, m + 1),
    )
}

proptest! {
    #[test]
    fn tercile_buckets_partition_lengths(lengths in prop::collection::vec(1usize..40, 0..60)) {
        let buckets = tercile_buckets(&lengths);
        prop_assert!(!buckets.is_empty() && buckets.len() <= 3);
        prop_assert_eq!(buckets[0].lo, 1);
        prop_assert_eq!(buckets.last().unwrap().hi, usize::MAX);
        for w in buckets.windows(2) {
            prop_assert_eq!(w[0].hi + 1, w[1].lo);
        }
        for &n in &lengths {
            prop_assert_eq!(buckets.iter().filter(|b| b.contains(n)).count(), 1);
        }
        let text = buckets.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(",");
        prop_assert_eq!(parse_buckets(&text).unwrap(), buckets);
    }

    #[test]
    fn batches_are_windows_of_epoch_permutations(
        seed in any::<u64>(), corpus in 1usize..20, first in 0usize..50, count in 0usize..50,
    ) {
        let whole = batch_indices(seed, corpus, 0, first + count);
        prop_assert_eq!(&whole[first..], &batch_indices(seed, corpus, first, count)[..]);
        for epoch in whole.chunks(corpus).filter(|c| c.len() == corpus) {
            let mut seen = epoch.to_vec();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..corpus).collect::<Vec<_>>());
        }
    }

    #[test]
    fn edges_are_sorted_real_nodes((heads, beta) in (1usize..8, 1usize..5).prop_flat_map(|(m, k)| heads_and_beta(m, k)),
                                   is_root in any::<bool>()) {
        let m = beta.len() - 1;
        let edges = extract_edges(&heads, &beta, is_root);
        prop_assert!(edges.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(edges.iter().all(|&e| (1..=m).contains(&e)));
        prop_assert!(edges.len() <= heads.len().max(1));
        if !is_root {
            prop_assert!(!edges.is_empty());
        }
    }

    #[test]
    fn config_text_round_trips(
        paper in any::<bool>(), seed in any::<u64>(), beam in 1usize..20, steps in 1usize..9,
        lr_scale in 0.01f64..2.0, edge_negatives in any::<bool>(),
    ) {
        let mut run = RunConfig::for_profile(if paper { Profile::Paper } else { Profile::Desk });
        run.train.seed = seed;
        run.train.lr_scale = lr_scale;
        run.train.edge_negatives = edge_negatives;
        run.decode.beam = beam;
        run.decode.steps = steps;
        prop_assert_eq!(RunConfig::from_text(&run.to_text(), None).unwrap(), run);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn masking_keeps_surfaces_and_extremes(corpus_seed in 0u64..1000, seed in any::<u64>(), rate in 0.0f64..1.0) {
        let (_, data) = toy_setup(&tiny_run(), 4, corpus_seed);
        for ex in &data {
            let masked = mask_features(&ex.input, rate, seed);
            prop_assert_eq!(&masked.tokens, &ex.input.tokens);
            prop_assert_eq!(&masked.chars, &ex.input.chars);
            prop_assert_eq!(masked.lemma_ids[0], ex.input.lemma_ids[0]);
            let none = mask_features(&ex.input, 0.0, seed);
            prop_assert_eq!(&none.lemma_ids, &ex.input.lemma_ids);
            let all = mask_features(&ex.input, 1.0, seed);
            prop_assert!(all.pos_ids[1..].iter().all(|&i| i == UNK_ID));
            prop_assert!(all.ner_ids[1..].iter().all(|&i| i == UNK_ID));
        }
    }

    #[test]
    fn untrained_parses_are_consistent(model_seed in 0u64..1000, corpus_seed in 0u64..1000, steps in 1usize..4) {
        let mut run = tiny_run();
        run.train.seed = model_seed;
        let (model, data) = toy_setup(&run, 3, corpus_seed);
        for ex in &data {
            let session = model.session(&ex.input).unwrap();
            let opts = DecodeOptions { steps, beam: 1, diagnostics: false };
            let greedy = parse_greedy(&session, &opts).unwrap();
            let beam = parse_beam(&session, &opts).unwrap();
            prop_assert_eq!(&greedy.steps, &beam.steps);
            prop_assert_eq!(greedy.score.to_bits(), beam.score.to_bits());
            let calls = steps * (greedy.nodes() + 1);
            prop_assert_eq!((greedy.calls.concept, greedy.calls.relation), (calls, calls));
            prop_assert!(greedy.nodes() <= session.node_cap());
            if let Some(g) = greedy.restored(&model) {
                let text = serialize_penman(&g);
                let back = parse_penman(&text).unwrap();
                prop_assert_eq!((back.len(), back.edges().len()), (g.len(), g.edges().len()));
                prop_assert_eq!(labels(&back), labels(&g));
            }
        }
    }
}
