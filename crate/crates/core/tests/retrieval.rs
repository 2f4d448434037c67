use std::collections::{HashMap, HashSet};

use cora::numcore::{DenseMatrix, DenseVector};
use cora::retrieval::{
    build_index, cache_bytes, cache_from_bytes, ensemble_scores, evaluate, query, query_named, rank_both_ways,
    read_embeddings, recall_at_k, rerank, rerank_matrix, rsum, write_embeddings, EmbeddingIndex, EmbeddingRecord,
    IndexKind, RetrievalResult,
};
use cora::Error;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn record(id: &str, v: &[f64]) -> EmbeddingRecord {
    EmbeddingRecord {
        id: id.to_string(),
        vector: DenseVector::new(v.to_vec()).unwrap(),
    }
}

fn random_records(n: usize, d: usize, rng: &mut impl Rng) -> Vec<EmbeddingRecord> {
    (0..n)
        .map(|i| EmbeddingRecord {
            id: format!("r{i:04}"),
            vector: DenseVector::random_normal(d, 1.0, rng),
        })
        .collect()
}

fn norm(row: &[f32]) -> f64 {
    row.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

#[test]
fn build_normalizes_and_validates() {
    let idx = build_index(&[record("a", &[0.0, 2.0, 0.0])], IndexKind::Image).unwrap();
    assert_eq!(idx.len(), 1);
    assert!((norm(idx.row(0)) - 1.0).abs() < 1e-6);
    assert_eq!(idx.row(0), &[0.0, 1.0, 0.0]);

    let dup = [record("a", &[1.0, 0.0]), record("a", &[0.0, 1.0])];
    assert!(matches!(build_index(&dup, IndexKind::Caption), Err(Error::InvalidArgument(_))));
    let zero = [record("a", &[1.0, 0.0]), record("b", &[0.0, 0.0])];
    assert!(matches!(build_index(&zero, IndexKind::Caption), Err(Error::Degenerate(_))));
    let ragged = [record("a", &[1.0, 0.0]), record("b", &[0.0, 1.0, 2.0])];
    assert!(build_index(&ragged, IndexKind::Caption).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let idx = build_index(&random_records(50, 8, &mut rng), IndexKind::Entity).unwrap();
    for i in 0..idx.len() {
        assert!((norm(idx.row(i)) - 1.0).abs() < 1e-6);
    }
    assert_eq!(idx.ids()[7], "r0007");
}

#[test]
fn query_self_match_and_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let recs = random_records(30, 16, &mut rng);
    let idx = build_index(&recs, IndexKind::Image).unwrap();
    for r in &recs {
        let res = query(&r.vector, &idx, 5).unwrap();
        assert_eq!(res.ranked[0].0, r.id);
        assert!((res.ranked[0].1 - 1.0).abs() < 1e-6);
        assert_eq!(res.ranked.len(), 5);
    }
    assert!(query(&recs[0].vector, &idx, 0).is_err());
    assert!(query(&DenseVector::zeros(16), &idx, 1).is_err());
    assert_eq!(query(&recs[0].vector, &idx, 100).unwrap().ranked.len(), 30);

    let basis: Vec<EmbeddingRecord> = (0..4)
        .map(|k| {
            let mut v = vec![0.0; 4];
            v[k] = 1.0;
            record(&format!("e{k}"), &v)
        })
        .collect();
    let idx = build_index(&basis, IndexKind::Image).unwrap();
    let res = query(&basis[2].vector, &idx, 4).unwrap();
    assert_eq!(res.ranked[0], ("e2".to_string(), 1.0));
    assert!(res.ranked[1].1 < res.ranked[0].1);
    // equal scores fall back to ascending id
    let rest: Vec<&str> = res.ids().skip(1).collect();
    assert_eq!(rest, ["e0", "e1", "e3"]);
}

#[test]
fn query_matches_exhaustive_scan() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let recs = random_records(100, 16, &mut rng);
        let idx = build_index(&recs, IndexKind::Image).unwrap();
        let q = DenseVector::random_normal(16, 1.0, &mut rng);
        let got = query(&q, &idx, 100).unwrap();
        let qn = q.norm();
        let mut oracle: Vec<(String, f64)> = recs
            .iter()
            .map(|r| (r.id.clone(), r.vector.dot(&q) / (r.vector.norm() * qn)))
            .collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let got_ids: Vec<&str> = got.ids().collect();
        let want_ids: Vec<&str> = oracle.iter().map(|(i, _)| i.as_str()).collect();
        assert_eq!(got_ids, want_ids);
        for ((_, s), (_, o)) in got.ranked.iter().zip(&oracle) {
            assert!((*s as f64 - o).abs() < 1e-6);
        }
        let top = query(&q, &idx, 7).unwrap();
        assert_eq!(top.ranked[..], got.ranked[..7]);
    }
}

fn result(query: &str, ids: &[&str]) -> RetrievalResult {
    RetrievalResult {
        query: query.into(),
        ranked: ids.iter().enumerate().map(|(k, id)| (id.to_string(), -(k as f32))).collect(),
    }
}

fn gt(pairs: &[(&str, &str)]) -> HashMap<String, HashSet<String>> {
    let mut m: HashMap<String, HashSet<String>> = HashMap::new();
    for (q, t) in pairs {
        m.entry(q.to_string()).or_default().insert(t.to_string());
    }
    m
}

#[test]
fn recall_examples() {
    let truth = gt(&[("q1", "a"), ("q2", "b")]);
    let first = [result("q1", &["a", "b", "c"]), result("q2", &["b", "a", "c"])];
    assert_eq!(recall_at_k(&first, &truth, 1).unwrap(), 1.0);
    let second = [result("q1", &["b", "a", "c"]), result("q2", &["a", "b", "c"])];
    assert_eq!(recall_at_k(&second, &truth, 1).unwrap(), 0.0);
    assert_eq!(recall_at_k(&second, &truth, 5).unwrap(), 1.0);
    let orphan = [result("q3", &["a"])];
    assert!(recall_at_k(&orphan, &truth, 1).is_err());
}

#[test]
fn recall_matches_counting_oracle_and_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ids: Vec<String> = (0..50).map(|i| format!("t{i}")).collect();
    let mut results = Vec::new();
    let mut truth: HashMap<String, HashSet<String>> = HashMap::new();
    for q in 0..1000 {
        let mut order = ids.clone();
        order.shuffle(&mut rng);
        let name = format!("q{q}");
        let n_gt = rng.random_range(1..=5);
        truth.insert(name.clone(), ids.choose_multiple(&mut rng, n_gt).cloned().collect());
        results.push(RetrievalResult {
            query: name,
            ranked: order.into_iter().map(|id| (id, 0.0)).collect(),
        });
    }
    let mut last = 0.0;
    for k in 1..=50 {
        let mut hits = 0;
        for r in &results {
            let g = &truth[&r.query];
            if r.ranked[..k].iter().any(|(id, _)| g.contains(id)) {
                hits += 1;
            }
        }
        let got = recall_at_k(&results, &truth, k).unwrap();
        assert_eq!(got, hits as f64 / 1000.0);
        assert!(got >= last);
        last = got;
    }
    assert_eq!(last, 1.0);
}

#[test]
fn rsum_and_rerank_examples() {
    assert_eq!(rsum([100.0; 3], [100.0; 3]), 600.0);
    assert_eq!(rsum([0.0; 3], [0.0; 3]), 0.0);
    assert_eq!(rerank(0.5, &[0.25, 0.9], 1.0).unwrap(), 0.5);
    assert_eq!(rerank(0.5, &[0.25, 0.9], 0.0).unwrap(), 0.25);
    assert!((rerank(0.5, &[0.25, 0.9], 0.8).unwrap() - 0.45).abs() < 1e-15);
    assert_eq!(rerank(0.3, &[], 0.2).unwrap(), 0.3);
    assert!(rerank(0.3, &[0.1], 1.5).is_err());
    assert!(rerank(0.3, &[0.1], -0.1).is_err());
}

#[test]
fn ensemble_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = DenseMatrix::random_normal(4, 6, 1.0, &mut rng);
    assert_eq!(ensemble_scores(std::slice::from_ref(&a)).unwrap(), a);
    let neg = DenseMatrix::from_fn(4, 6, |i, j| -a.get(i, j));
    assert!(ensemble_scores(&[a.clone(), neg]).unwrap().as_slice().iter().all(|&x| x == 0.0));
    let b = DenseMatrix::random_normal(4, 6, 1.0, &mut rng);
    let m = ensemble_scores(&[a.clone(), b.clone()]).unwrap();
    for i in 0..4 {
        for j in 0..6 {
            assert!((m.get(i, j) - (a.get(i, j) + b.get(i, j)) / 2.0).abs() < 1e-12);
        }
    }
    assert!(ensemble_scores(&[a, DenseMatrix::zeros(3, 6)]).is_err());
    assert!(ensemble_scores(&[]).is_err());
}

#[test]
fn beta_one_keeps_every_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s = DenseMatrix::from_fn(12, 15, |_, _| rng.random_range(-1.0f32..1.0) as f64);
    let mins: Vec<Vec<Option<f64>>> = (0..12)
        .map(|_| (0..15).map(|j| (j % 4 != 0).then(|| rng.random_range(-1.0..1.0))).collect())
        .collect();
    let img: Vec<String> = (0..12).map(|i| format!("i{i}")).collect();
    let cap: Vec<String> = (0..15).map(|i| format!("c{i}")).collect();
    let base = rank_both_ways(&s, &img, &cap, 15).unwrap();
    let same = rank_both_ways(&rerank_matrix(&s, &mins, 1.0).unwrap(), &img, &cap, 15).unwrap();
    assert_eq!(base, same);
    let moved = rank_both_ways(&rerank_matrix(&s, &mins, 0.5).unwrap(), &img, &cap, 15).unwrap();
    assert_ne!(base, moved);
}

#[test]
fn self_retrieval_is_perfect() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let recs = random_records(40, 12, &mut rng);
    let images = build_index(&recs, IndexKind::Image).unwrap();
    let captions = build_index(&recs, IndexKind::Caption).unwrap();
    let s = cora::retrieval::similarity_matrix(&images, &captions).unwrap();
    let pairs: Vec<(usize, usize)> = (0..40).map(|i| (i, i)).collect();
    let m = evaluate(&s, images.ids(), captions.ids(), &pairs).unwrap();
    assert_eq!(m.i2t, [100.0; 3]);
    assert_eq!(m.t2i, [100.0; 3]);
    assert_eq!(m.rsum(), 600.0);
}

#[test]
fn concurrent_queries_match_serial() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let idx: EmbeddingIndex = build_index(&random_records(500, 16, &mut rng), IndexKind::Image).unwrap();
    let queries: Vec<DenseVector> = (0..64).map(|_| DenseVector::random_normal(16, 1.0, &mut rng)).collect();
    let serial: Vec<RetrievalResult> = queries
        .iter()
        .enumerate()
        .map(|(i, q)| query_named(&i.to_string(), q, &idx, 10).unwrap())
        .collect();
    let parallel: Vec<RetrievalResult> = std::thread::scope(|s| {
        let handles: Vec<_> = queries
            .chunks(16)
            .enumerate()
            .map(|(c, chunk)| {
                let idx = &idx;
                s.spawn(move || {
                    chunk
                        .iter()
                        .enumerate()
                        .map(|(k, q)| query_named(&(c * 16 + k).to_string(), q, idx, 10).unwrap())
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(serial, parallel);
}

#[test]
fn embedding_cache_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let caps = build_index(&random_records(20, 8, &mut rng), IndexKind::Caption).unwrap();
    let mut ents = random_records(33, 8, &mut rng);
    for (k, e) in ents.iter_mut().enumerate() {
        e.id = format!("{}#{}", k % 20, k);
    }
    let ents = build_index(&ents, IndexKind::Entity).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.core");
    write_embeddings(&path, &[&caps, &ents]).unwrap();
    let back = read_embeddings(&path).unwrap();
    assert_eq!(back, vec![caps.clone(), ents.clone()]);
    assert_eq!(cache_bytes(&[&back[0], &back[1]]), std::fs::read(&path).unwrap());

    let bytes = cache_bytes(&[&caps]);
    assert!(matches!(cache_from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(cache_from_bytes(&bad), Err(Error::Format(_))));
    let mut bad = bytes.clone();
    bad[12] = 9;
    assert!(matches!(cache_from_bytes(&bad), Err(Error::Format(_))));
    assert!(cache_from_bytes(&[]).is_err());
}
