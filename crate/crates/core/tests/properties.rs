use std::collections::BTreeSet;

use cfer::corpus::{candidate_pairs, parse_dataset, to_json, RelationVocab};
use cfer::docgraph::{build_graph, mention_paths, EdgeKind};
use cfer::evaluator::{
    decide, distance_bucket, gold_facts, ign_f1, intra_inter_f1, micro_f1, select_thresholds, Fact,
    FactSet, ScoredPair, Thresholds,
};
use cfer::ndiff::Tensor;
use cfer::synthetic::random_document;
use cfer::trainer::{ema_update, lr_at, warmup_steps, EmaState};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn relations() -> RelationVocab {
    RelationVocab::new(vec!["a".into(), "b".into(), "c".into()]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dataset_json_round_trips(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let docs: Vec<_> = (0..3).map(|_| random_document(&mut rng, 4, 8, &relations())).collect();
        let back = parse_dataset(&to_json(&docs), &relations()).unwrap();
        prop_assert_eq!(back, docs);
    }

    #[test]
    fn candidate_pairs_enumerate_ordered_pairs(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc = random_document(&mut rng, 4, 8, &relations());
        let rv = relations();
        let pairs = candidate_pairs(&doc, &rv);
        let n = doc.entities.len();
        prop_assert_eq!(pairs.len(), n * n.saturating_sub(1));
        let mut seen = BTreeSet::new();
        for p in &pairs {
            prop_assert!(p.head != p.tail);
            prop_assert!(seen.insert((p.head, p.tail)));
            for (r, &bit) in p.labels.iter().enumerate() {
                let fact = doc.facts.iter().any(|f| f.head == p.head && f.tail == p.tail && f.relation == rv.label(r));
                prop_assert_eq!(bit, fact);
            }
        }
    }

    #[test]
    fn graph_structure_invariants(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc = random_document(&mut rng, 4, 8, &relations());
        let g = build_graph(&doc);
        prop_assert_eq!(g.count(EdgeKind::SelfLoop), g.node_count);
        for &(u, v, _) in &g.edges {
            prop_assert!(u <= v && v < g.node_count);
        }
        for (i, ns) in g.adjacency.iter().enumerate() {
            prop_assert!(ns.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(ns.contains(&i));
            for &j in ns {
                prop_assert!(g.adjacency[j].contains(&i));
            }
        }
        prop_assert_eq!(g.sentence_roots.len(), doc.sentences.len());

        let mut shuffled = doc.clone();
        for e in &mut shuffled.entities {
            e.mentions.shuffle(&mut rng);
        }
        prop_assert_eq!(build_graph(&shuffled).edges, g.edges);
    }

    #[test]
    fn mention_paths_are_valid(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc = random_document(&mut rng, 4, 8, &relations());
        let g = build_graph(&doc);
        let sub = cfer::docgraph::path_subgraph(&g);
        for e1 in 0..doc.entities.len() {
            for e2 in (0..doc.entities.len()).filter(|&e| e != e1) {
                let paths = mention_paths(&doc, &g, e1, e2, None).unwrap();
                let (m1, m2) = (doc.entities[e1].mentions.len(), doc.entities[e2].mentions.len());
                prop_assert_eq!(paths.len(), m1 * m2);
                for (k, p) in paths.iter().enumerate() {
                    prop_assert_eq!(p.nodes[0], g.anchor(e1, k / m2));
                    prop_assert_eq!(*p.nodes.last().unwrap(), g.anchor(e2, k % m2));
                    let distinct: BTreeSet<_> = p.nodes.iter().collect();
                    prop_assert_eq!(distinct.len(), p.nodes.len());
                    prop_assert!(p.nodes.windows(2).all(|w| sub.is_edge(w[0], w[1])));
                }
            }
        }
    }

    #[test]
    fn schedule_is_piecewise_linear(total in 2u64..5000, frac in 0.01f64..0.99, peak in 1e-5f64..1.0) {
        let w = warmup_steps(total, frac);
        prop_assume!(w < total);
        prop_assert_eq!(lr_at(total, total, frac, peak), 0.0);
        prop_assert_eq!(lr_at(w, total, frac, peak), peak);
        let slope_up = peak / w as f64;
        let slope_down = peak / (total - w) as f64;
        for s in [0, w / 2, w.saturating_sub(1), w + 1, (w + total) / 2, total - 1] {
            let lr = lr_at(s, total, frac, peak);
            prop_assert!(lr >= 0.0 && lr <= peak);
            let next = lr_at(s + 1, total, frac, peak);
            prop_assert!((next - lr).abs() <= slope_up.max(slope_down) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn ema_stays_in_the_history_envelope(
        init in -5.0f64..5.0,
        history in prop::collection::vec(-5.0f64..5.0, 1..40),
        decay in 0.0f64..0.999,
    ) {
        let mut ema = EmaState::new(&[Tensor::scalar(init)], decay);
        let mut lo = init;
        let mut hi = init;
        for &x in &history {
            ema_update(&mut ema, &[Tensor::scalar(x)]).unwrap();
            lo = lo.min(x);
            hi = hi.max(x);
            let s = ema.shadow[0].data()[0];
            prop_assert!(s >= lo - 1e-12 && s <= hi + 1e-12);
        }
    }

    #[test]
    fn metric_partitions_are_exhaustive(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rv = relations();
        let docs: Vec<_> = (0..3)
            .map(|i| {
                let mut d = random_document(&mut rng, 6, 4, &rv);
                d.doc_id = format!("d{i}");
                d
            })
            .collect();
        let gold = gold_facts(&docs, &rv);
        let mut pred = FactSet::new();
        for d in &docs {
            let n = d.entities.len();
            for h in 0..n {
                for t in (0..n).filter(|&t| t != h) {
                    if rng.random_bool(0.3) {
                        pred.insert(Fact { doc_id: d.doc_id.clone(), head: h, relation: rng.random_range(0..3), tail: t });
                    }
                }
            }
        }
        let all: FactSet = pred.union(&gold).cloned().collect();
        let mut buckets = [0usize; 3];
        let mut intra = 0;
        for f in &all {
            let d = docs.iter().find(|d| d.doc_id == f.doc_id).unwrap();
            let dist = d.sentence_distance(f.head, f.tail);
            buckets[distance_bucket(dist)] += 1;
            intra += (dist == 0) as usize;
        }
        prop_assert_eq!(buckets.iter().sum::<usize>(), all.len());
        prop_assert!(intra <= all.len());
        intra_inter_f1(&pred, &gold, &docs).unwrap();
        prop_assert_eq!(ign_f1(&pred, &gold, &BTreeSet::new(), &docs, &rv).unwrap(), micro_f1(&pred, &gold));
    }

    #[test]
    fn relation_thresholds_dominate_global_ones(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rv = relations();
        let mut scored = Vec::new();
        let mut gold = FactSet::new();
        for i in 0..30 {
            let probs: Vec<f64> = (0..3).map(|_| rng.random_range(0.001..0.999)).collect();
            for (r, &p) in probs.iter().enumerate() {
                if rng.random_bool(p) {
                    gold.insert(Fact { doc_id: "d".into(), head: i, relation: r, tail: i + 1 });
                }
            }
            scored.push(ScoredPair { doc_id: "d".into(), head: i, tail: i + 1, probabilities: probs });
        }
        let tuned = select_thresholds(&scored, &gold, &rv);
        let by_relation = |t: &Thresholds, r: usize| {
            let p: FactSet = decide(&scored, t).into_iter().filter(|f| f.relation == r).collect();
            let g: FactSet = gold.iter().filter(|f| f.relation == r).cloned().collect();
            (micro_f1(&p, &g).f1, g.is_empty())
        };
        for r in 0..3 {
            let (best, no_gold) = by_relation(&tuned, r);
            if no_gold {
                continue;
            }
            for k in 1..=9 {
                let global = Thresholds::uniform(&rv, k as f64 / 10.0);
                prop_assert!(best >= by_relation(&global, r).0);
            }
        }
    }
}
