use cora::sgparse::{
    extract_scene_graph, graphs_from_json, graphs_to_json, mask_tokens, parse_conllu, subsample_graph, DepToken,
    SceneGraph,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CORPUS: &str = include_str!("golden/captions.conllu");
const EXPECTED: &str = include_str!("golden/graphs.json");

fn extracted() -> Vec<SceneGraph> {
    parse_conllu(CORPUS)
        .unwrap()
        .iter()
        .map(|s| extract_scene_graph(s))
        .collect()
}

#[test]
fn golden_corpus_matches_annotations() {
    let got = extracted();
    let want = graphs_from_json(EXPECTED).unwrap();
    assert!(want.len() >= 20);
    assert_eq!(got.len(), want.len());
    for (k, (g, w)) in got.iter().zip(&want).enumerate() {
        assert_eq!(g, w, "caption {k}");
        g.validate().unwrap();
    }
}

#[test]
fn golden_output_is_byte_identical() {
    let text = graphs_to_json(&extracted()).unwrap();
    assert_eq!(text, EXPECTED);
}

#[test]
fn golden_json_round_trip() {
    for g in extracted() {
        assert_eq!(SceneGraph::from_json(&g.to_json().unwrap()).unwrap(), g);
    }
    let all = extracted();
    assert_eq!(graphs_from_json(&graphs_to_json(&all).unwrap()).unwrap(), all);
}

#[test]
fn extraction_is_deterministic() {
    assert_eq!(extracted(), extracted());
}

#[test]
fn conllu_errors_name_the_line() {
    assert!(parse_conllu("").unwrap().is_empty());
    let bad = "1\tA\ta\tDET\t_\t_\t2\tdet\t_\n";
    let e = parse_conllu(bad).unwrap_err().to_string();
    assert!(e.contains("line 1"), "{e}");
    let bad = "# c\n1\tA\ta\tDET\t_\t_\tx\tdet\t_\t_\n";
    assert!(parse_conllu(bad).unwrap_err().to_string().contains("line 2"));
    let bad = "1\tA\ta\tDET\t_\t_\t7\tdet\t_\t_\n";
    assert!(parse_conllu(bad).is_err());
}

#[test]
fn multiword_ranges_and_empty_nodes_are_skipped() {
    let doc = "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n\
               1\tdo\tdo\tAUX\t_\t_\t0\troot\t_\t_\n\
               2\tn't\tnot\tPART\t_\t_\t1\tadvmod\t_\t_\n\
               2.1\tx\tx\tX\t_\t_\t_\t_\t_\t_\n";
    let s = parse_conllu(doc).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].len(), 2);
}

const UPOS: [&str; 6] = ["NOUN", "PROPN", "VERB", "ADJ", "ADP", "AUX"];
const DEPRELS: [&str; 14] = [
    "nsubj", "obj", "obl", "nmod", "amod", "acl", "case", "compound", "compound:prt", "conj", "cop", "fixed", "flat",
    "det",
];

fn random_tree(rng: &mut impl Rng) -> Vec<DepToken> {
    let n = rng.random_range(1..12);
    let root = rng.random_range(0..n);
    (0..n)
        .map(|i| {
            let head = if i == root {
                0
            } else {
                let mut h = rng.random_range(0..n);
                while h == i {
                    h = rng.random_range(0..n);
                }
                h + 1
            };
            let w = format!("w{}", rng.random_range(0..5));
            DepToken {
                index: i + 1,
                surface: w.clone(),
                lemma: w,
                upos: UPOS[rng.random_range(0..UPOS.len())].into(),
                head,
                deprel: if i == root {
                    "root".into()
                } else {
                    DEPRELS[rng.random_range(0..DEPRELS.len())].into()
                },
            }
        })
        .collect()
}

#[test]
fn random_parses_give_valid_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5000 {
        let tokens = random_tree(&mut rng);
        let g = extract_scene_graph(&tokens);
        g.validate().unwrap();
        assert_eq!(g, extract_scene_graph(&tokens));
        assert_eq!(g.fallback.is_some(), g.objects.is_empty());
    }
}

#[test]
fn subsampled_golden_graphs_stay_valid() {
    let graphs: Vec<SceneGraph> = extracted().into_iter().filter(|g| !g.is_empty()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..100_000u64 {
        let g = &graphs[seed as usize % graphs.len()];
        let node = rng.random_range(0.0..0.95);
        let edge = rng.random_range(0.0..0.95);
        let s = subsample_graph(g, node, edge, &mut ChaCha8Rng::seed_from_u64(seed));
        s.validate().unwrap();
        assert!(!s.objects.is_empty());
    }
    for g in &graphs {
        assert_eq!(&subsample_graph(g, 0.0, 0.0, &mut rng), g);
    }
}

#[test]
fn masking_keeps_a_survivor() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hat = vec!["hat".to_string()];
    for _ in 0..100 {
        assert_eq!(mask_tokens(&hat, 0.99, &mut rng).unwrap(), hat);
    }
    assert!(mask_tokens(&[], 0.1, &mut rng).is_err());
}
