mod common;

use std::collections::HashSet;

use common::*;
use diagsearch::baselines::{goldberg_similarity, ssim, ImageSignature, SsimConfig};
use diagsearch::edgemap::{edge_map, EdgeMapConfig};
use diagsearch::eval::average_precision_in;
use diagsearch::index::ExternalNormalization;
use diagsearch::matrix::{Hit, ScoreMatrix};
use diagsearch::metric::mine_for_split;
use diagsearch::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn embeddings(rows: &[Vec<f64>]) -> Vec<EmbeddingVector> {
    rows.iter()
        .enumerate()
        .map(|(i, v)| EmbeddingVector {
            id: format!("e{i:02}"),
            values: v.clone(),
        })
        .collect()
}

fn embedding_rows(max_n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2..=max_n, 1usize..6).prop_flat_map(|(n, d)| {
        prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), n)
    })
}

fn nonzero(rows: &[Vec<f64>]) -> bool {
    rows.iter().all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-6)
}

fn metric_strategy() -> impl Strategy<Value = SimilarityMetric> {
    prop_oneof![Just(SimilarityMetric::Cosine), Just(SimilarityMetric::Euclidean)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn index_is_symmetric_and_bounded(rows in embedding_rows(20), metric in metric_strategy()) {
        prop_assume!(nonzero(&rows));
        let index = build_index(&embeddings(&rows), metric).unwrap();
        let m = index.matrix();
        for i in 0..m.len() {
            for j in 0..m.len() {
                prop_assert!((m.get(i, j) - m.get(j, i)).abs() <= 1e-6);
                prop_assert!((0.0..=5.0).contains(&m.get(i, j)));
            }
        }
    }

    #[test]
    fn query_prefix_stability(rows in embedding_rows(15), metric in metric_strategy()) {
        prop_assume!(nonzero(&rows));
        let index = build_index(&embeddings(&rows), metric).unwrap();
        let n = index.len();
        for id in index.matrix().ids() {
            for k in 1..n - 1 {
                let small = index.query(id, k).unwrap();
                let big = index.query(id, k + 1).unwrap();
                prop_assert_eq!(&small.hits[..], &big.hits[..k]);
            }
        }
    }

    #[test]
    fn query_result_invariants(rows in embedding_rows(15), metric in metric_strategy()) {
        prop_assume!(nonzero(&rows));
        let index = build_index(&embeddings(&rows), metric).unwrap();
        let n = index.len();
        for id in index.matrix().ids() {
            let r = index.query(id, n - 1).unwrap();
            prop_assert!(r.hits.windows(2).all(|w| w[0].score >= w[1].score));
            let unique: HashSet<_> = r.hits.iter().map(|h| &h.id).collect();
            prop_assert_eq!(unique.len(), r.hits.len());
            prop_assert!(r.hits.iter().all(|h| &h.id != id));
        }
    }

    #[test]
    fn external_duplicate_matches_internal(rows in embedding_rows(12), metric in metric_strategy()) {
        prop_assume!(nonzero(&rows));
        let embs = embeddings(&rows);
        let index = build_index(&embs, metric).unwrap();
        let n = index.len();
        for e in &embs {
            let raw: Vec<f64> = embs.iter().map(|o| pairwise_similarity(e, o, metric).unwrap()).collect();
            // near-ties may legitimately break differently after renormalization
            let distinct = raw.iter().enumerate().all(|(i, a)| raw.iter().skip(i + 1).all(|b| (a - b).abs() > 1e-9));
            if !distinct {
                continue;
            }
            let internal = index.query(&e.id, n - 1).unwrap();
            let external = index
                .query_external_embedding(&e.values, n, ExternalNormalization::Extended)
                .unwrap();
            prop_assert_eq!(&external.hits[0].id, &e.id);
            prop_assert_eq!(external.ids()[1..].to_vec(), internal.ids());
        }
    }

    #[test]
    fn ssim_identity_and_symmetry(seed in any::<u64>(), h in 7usize..20, w in 7usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_raster(h, w, &mut rng, false);
        let b = random_raster(h, w, &mut rng, seed % 2 == 0);
        let cfg = SsimConfig::default();
        prop_assert!((ssim(&a, &a, &cfg).unwrap() - 1.0).abs() <= 1e-9);
        let ab = ssim(&a, &b, &cfg).unwrap();
        prop_assert!((ab - ssim(&b, &a, &cfg).unwrap()).abs() <= 1e-9);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn goldberg_self_similarity(values in prop::collection::vec(-2i8..=2, 1..400)) {
        prop_assume!(values.iter().any(|&v| v != 0));
        let s = ImageSignature { values };
        prop_assert_eq!(goldberg_similarity(&s, &s).unwrap(), 1.0);
    }

    #[test]
    fn kl_is_non_negative(stats in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..16)) {
        let stats = LatentStats {
            mean: stats.iter().map(|s| s.0).collect(),
            log_variance: stats.iter().map(|s| s.1).collect(),
        };
        prop_assert!(kl_divergence(&stats).unwrap() >= 0.0);
    }

    #[test]
    fn triplet_loss_permutation_invariant(seed in any::<u64>(), n in 1usize..12, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..d).map(|_| rand::Rng::random_range(rng, -1.0..1.0)).collect()).collect()
        };
        let (a, p, q) = (gen(&mut rng), gen(&mut rng), gen(&mut rng));
        let base = triplet_loss(&a, &p, &q, 0.3).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let pick = |v: &[Vec<f64>]| perm.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        let shuffled = triplet_loss(&pick(&a), &pick(&p), &pick(&q), 0.3).unwrap();
        prop_assert!((base - shuffled).abs() <= 1e-12);
        prop_assert!(base >= 0.0);
    }

    #[test]
    fn triplet_loss_monotone(seed in any::<u64>(), d in 1usize..6, step in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = || -> Vec<f64> { (0..d).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect() };
        let (a, p, q) = (v(), v(), v());
        let base = triplet_loss(&[a.clone()], &[p.clone()], &[q.clone()], 0.5).unwrap();
        // push the negative further from the anchor along their difference
        let far_n: Vec<f64> = q.iter().zip(&a).map(|(x, y)| x + step * (x - y)).collect();
        prop_assert!(triplet_loss(&[a.clone()], &[p.clone()], &[far_n], 0.5).unwrap() <= base + 1e-12);
        // and the positive likewise
        let far_p: Vec<f64> = p.iter().zip(&a).map(|(x, y)| x + step * (x - y)).collect();
        prop_assert!(triplet_loss(&[a], &[far_p], &[q], 0.5).unwrap() >= base - 1e-12);
    }

    #[test]
    fn ap_bounded_and_perfect_iff_top_relevant(seed in any::<u64>(), n in 3usize..25, k in 1usize..30) {
        let truth = random_truth(n, seed);
        let ids = truth.ids().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let q = ids[0].clone();
        let mut others: Vec<String> = ids[1..].to_vec();
        others.shuffle(&mut rng);
        let ranking = RetrievalResult {
            query_id: q.clone(),
            hits: others.iter().map(|id| Hit { id: id.clone(), score: 0.0 }).collect(),
        };
        let out = average_precision_in(&ranking, &truth, &ids, 3.0, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&out.ap));
        let rel: Vec<bool> = others.iter().map(|o| truth.score(&q, o).unwrap() >= 3.0).collect();
        let top = k.min(out.relevant);
        let perfect = out.relevant > 0 && rel[..top].iter().all(|&r| r);
        prop_assert_eq!((out.ap - 1.0).abs() < 1e-12, perfect);
    }

    #[test]
    fn ap_ignores_irrelevant_tail_order(seed in any::<u64>(), n in 3usize..25, k in 1usize..30) {
        let truth = random_truth(n, seed);
        let ids = truth.ids().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let q = ids[0].clone();
        let mut others: Vec<String> = ids[1..].to_vec();
        others.shuffle(&mut rng);
        let rel = |id: &String| truth.score(&q, id).unwrap() >= 3.0;
        let last = others.iter().rposition(rel).map_or(0, |p| p + 1);
        let as_ranking = |order: &[String]| RetrievalResult {
            query_id: q.clone(),
            hits: order.iter().map(|id| Hit { id: id.clone(), score: 0.0 }).collect(),
        };
        let before = average_precision_in(&as_ranking(&others), &truth, &ids, 3.0, k).unwrap().ap;
        others[last..].shuffle(&mut rng);
        let after = average_precision_in(&as_ranking(&others), &truth, &ids, 3.0, k).unwrap().ap;
        prop_assert_eq!(before, after);
    }

    #[test]
    fn map_is_size_weighted_over_disjoint_subsets(seed in any::<u64>(), n in 4usize..20, cut in 1usize..19) {
        prop_assume!(cut < n);
        let truth = random_truth(n, seed);
        let ids = truth.ids().to_vec();
        let matrix = truth.matrix().clone();
        let cfg = EvalConfig { k_values: vec![1, 3], ..EvalConfig::default() };
        let all = mean_average_precision(&matrix, &truth, &ids, &cfg, "m").unwrap();
        let a = mean_average_precision(&matrix, &truth, &ids[..cut], &cfg, "m").unwrap();
        let b = mean_average_precision(&matrix, &truth, &ids[cut..], &cfg, "m").unwrap();
        for k in [1, 3] {
            let weighted = (a.map_at_k[&k] * cut as f64 + b.map_at_k[&k] * (n - cut) as f64) / n as f64;
            prop_assert!((all.map_at_k[&k] - weighted).abs() <= 1e-9);
            let mean: f64 = all.per_query.values().map(|m| m[&k]).sum::<f64>() / n as f64;
            prop_assert!((all.map_at_k[&k] - mean).abs() <= 1e-9);
        }
    }

    #[test]
    fn binary_matrix_shape(labels in prop::collection::vec(0u8..4, 1..20)) {
        let records = labels
            .iter()
            .enumerate()
            .map(|(i, l)| ImageRecord::new(format!("r{i}"), Raster::filled(2, 2, 0.0)).with_label(l.to_string()))
            .collect();
        let corpus = Corpus::new(records, (2, 2)).unwrap();
        let truth = binary_matrix_from_labels(&corpus).unwrap();
        let m = truth.matrix();
        for i in 0..m.len() {
            prop_assert_eq!(m.get(i, i), 5.0);
            for j in 0..m.len() {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
                prop_assert_eq!(m.get(i, j), if labels[i] == labels[j] { 5.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn split_partitions_and_isolation(seed in any::<u64>(), n in 2usize..40, frac in 0.05f64..0.95) {
        let truth = random_truth(n, seed);
        let spec = SplitSpec { mode: SplitMode::ZeroShot, train_fraction: frac, seed };
        let split = split_corpus(&truth, &spec).unwrap();
        let train: HashSet<_> = split.train_ids.iter().collect();
        let query: HashSet<_> = split.query_ids.iter().collect();
        prop_assert!(train.is_disjoint(&query));
        prop_assert_eq!(train.len() + query.len(), n);
        prop_assert_eq!(split.clone(), split_corpus(&truth, &spec).unwrap());
        if let Ok(mined) = mine_for_split(&truth, &split, &MetricConfig::default(), seed) {
            for t in &mined.triplets {
                for id in [&t.anchor_id, &t.positive_id, &t.negative_id] {
                    prop_assert!(!query.contains(id));
                }
            }
        }
    }

    #[test]
    fn matrix_csv_round_trip(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = vec![5.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let s: f64 = rand::Rng::random_range(&mut rng, 0.0..5.0);
                v[i * n + j] = s;
                v[j * n + i] = s;
            }
        }
        let truth = GroundTruthMatrix::new(ScoreMatrix::new(ids(n), v).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        truth.save(&path).unwrap();
        let back = ScoreMatrix::read_csv(&path).unwrap();
        prop_assert_eq!(back.ids(), truth.ids());
        for (a, b) in back.values().iter().zip(truth.matrix().values()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn edge_maps_are_binary_and_idempotent(seed in any::<u64>(), h in 3usize..20, w in 3usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rec = ImageRecord::new("x", random_raster(h, w, &mut rng, false));
        let cfg = EdgeMapConfig::default();
        let e = edge_map(&rec, &cfg).unwrap();
        prop_assert!(e.pixels.is_binary());
        prop_assert!(edge_map(&e, &cfg).unwrap().pixels.is_binary());
    }

    #[test]
    fn edge_maps_shift_with_input(seed in any::<u64>(), dx in 0usize..3, dy in 0usize..3) {
        // a shape on a blank canvas keeps the gradient peak unchanged under shifts
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = random_raster(8, 8, &mut rng, false);
        let (h, w) = (20, 20);
        let place = |oy: usize, ox: usize| Raster::from_fn(h, w, |y, x| {
            if (oy + 4..oy + 12).contains(&y) && (ox + 4..ox + 12).contains(&x) { base.get(y - oy - 4, x - ox - 4) } else { 0.0 }
        });
        let cfg = EdgeMapConfig::default();
        let a = edge_map(&ImageRecord::new("a", place(0, 0)), &cfg).unwrap().pixels;
        let b = edge_map(&ImageRecord::new("b", place(dy, dx)), &cfg).unwrap().pixels;
        for y in 2..h - 2 - dy {
            for x in 2..w - 2 - dx {
                prop_assert_eq!(a.get(y, x), b.get(y + dy, x + dx));
            }
        }
    }
}

#[test]
fn rank_order_follows_raw_similarity() {
    // brute force on indices of up to 50 items
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (n, metric) in [(50, SimilarityMetric::Cosine), (37, SimilarityMetric::Euclidean), (8, SimilarityMetric::Cosine)] {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect())
            .collect();
        let embs = embeddings(&rows);
        let index = build_index(&embs, metric).unwrap();
        for (qi, q) in embs.iter().enumerate() {
            let mut expected: Vec<(f64, &str)> = embs
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != qi)
                .map(|(_, e)| (pairwise_similarity(q, e, metric).unwrap(), e.id.as_str()))
                .collect();
            expected.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
            let got = index.knn(&q.id, n - 1).unwrap();
            assert_eq!(got, expected.iter().map(|e| e.1.to_owned()).collect::<Vec<_>>());
        }
    }
}

#[test]
fn ap_matches_oracle_on_random_rankings() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for round in 0..1000u64 {
        let truth = random_truth(9, round);
        let ids = truth.ids().to_vec();
        let q = ids[round as usize % 9].clone();
        let mut others: Vec<String> = ids.iter().filter(|i| **i != q).cloned().collect();
        others.shuffle(&mut rng);
        let k = rand::Rng::random_range(&mut rng, 1..=10);
        let ranking = RetrievalResult {
            query_id: q.clone(),
            hits: others.iter().map(|id| Hit { id: id.clone(), score: 0.0 }).collect(),
        };
        let rel: Vec<bool> = others.iter().map(|o| truth.score(&q, o).unwrap() >= 3.0).collect();
        let r = rel.iter().filter(|&&x| x).count();
        let got = diagsearch::average_precision(&ranking, &truth, 3.0, k).unwrap();
        assert!((got.ap - ap_oracle(&rel, r, k)).abs() <= 1e-12);
    }
}
