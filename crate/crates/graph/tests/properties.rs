use dualamr_graph::random::{random_graph, RandomGraphConfig};
use dualamr_graph::{parse_penman, serialize_penman, smatch, smatch_exact, SmatchConfig};

fn small() -> RandomGraphConfig {
    RandomGraphConfig {
        max_vars: 6,
        ..RandomGraphConfig::default()
    }
}

#[test]
fn penman_roundtrip_200_graphs() {
    for seed in 0..200 {
        let g = random_graph(seed, &RandomGraphConfig::default());
        let text = serialize_penman(&g);
        let back = parse_penman(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
        assert_eq!(smatch(&back, &g, &SmatchConfig::default()).f1(), 1.0, "{text}");
        assert_eq!(smatch_exact(&back, &g).unwrap().f1(), 1.0);
        assert_eq!(back.len(), g.len());
        assert_eq!(back.edges().len(), g.edges().len());
    }
}

#[test]
fn hill_climbing_matches_exact_on_small_pairs() {
    let mut mismatches = Vec::new();
    for i in 0..200u64 {
        let a = random_graph(2 * i + 1000, &small());
        let b = random_graph(2 * i + 1001, &small());
        let exact = smatch_exact(&a, &b).unwrap();
        let hill = smatch(&a, &b, &SmatchConfig::default());
        if hill.f1() != exact.f1() {
            mismatches.push((i, hill.matched, exact.matched));
        }
    }
    assert!(mismatches.is_empty(), "{mismatches:?}");
}
