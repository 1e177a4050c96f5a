//! Generated documents: unconstrained random documents for property tests,
//! and a small planted corpus whose cross-sentence relation can only be
//! decided by combining facts from different sentences.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, Entity, Mention, RelationFact, RelationVocab, Sentence};

/// Random dependency tree over `n` tokens: a random root, then every other
/// token attaches to a uniformly chosen token placed before it in a random
/// order.
pub fn random_tree(n: usize, rng: &mut impl Rng) -> Vec<i64> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut heads = vec![-1i64; n];
    for i in 1..n {
        heads[order[i]] = order[rng.random_range(0..i)] as i64;
    }
    heads
}

/// Random valid document: 1..=`max_sents` sentences of 1..=`max_tokens`
/// tokens, random trees, up to four entities with one to three random
/// single- or two-token mentions each, and random facts over `relations`.
pub fn random_document(
    rng: &mut impl Rng,
    max_sents: usize,
    max_tokens: usize,
    relations: &RelationVocab,
) -> Document {
    let n_sents = rng.random_range(1..=max_sents);
    let sentences: Vec<Sentence> = (0..n_sents)
        .map(|_| {
            let n = rng.random_range(1..=max_tokens);
            Sentence {
                tokens: (0..n)
                    .map(|_| format!("w{}", rng.random_range(0..20)))
                    .collect(),
                dep_heads: random_tree(n, rng),
            }
        })
        .collect();
    let n_entities = rng.random_range(0..=4);
    let entities: Vec<Entity> = (0..n_entities)
        .map(|entity_id| {
            let mentions = (0..rng.random_range(1..=3))
                .map(|_| {
                    let sent_id = rng.random_range(0..n_sents);
                    let len = sentences[sent_id].tokens.len();
                    let start = rng.random_range(0..len);
                    let end = (start + rng.random_range(1..=2)).min(len);
                    Mention {
                        sent_id,
                        span_start: start,
                        span_end: end,
                        surface: sentences[sent_id].tokens[start..end].join(" "),
                    }
                })
                .collect();
            Entity {
                entity_id,
                mentions,
                entity_type: None,
            }
        })
        .collect();
    let mut facts = Vec::new();
    if n_entities >= 2 && !relations.is_empty() {
        for _ in 0..rng.random_range(0..=3) {
            let head = rng.random_range(0..n_entities);
            let tail = (head + rng.random_range(1..n_entities)) % n_entities;
            facts.push(RelationFact {
                head,
                tail,
                relation: relations
                    .label(rng.random_range(0..relations.len()))
                    .to_string(),
                evidence: vec![],
            });
        }
    }
    Document {
        doc_id: format!("rand-{}", rng.random::<u32>()),
        sentences,
        entities,
        facts,
    }
}

pub const PLANTED_RELATIONS: [&str; 4] = ["founded", "member_of", "based_in", "works_in"];

const PERSONS: [&str; 6] = ["Alice", "Bob", "Carol", "Dave", "Erin", "Frank"];
const ORGS: [&str; 5] = ["Acme", "Globex", "Initech", "Umbrella", "Hooli"];
const PLACES: [&str; 5] = ["Rome", "Paris", "Oslo", "Lima", "Cairo"];
const NOUNS: [&str; 8] = [
    "weather", "food", "music", "city", "market", "river", "meeting", "report",
];
const ADJECTIVES: [&str; 8] = [
    "nice", "cold", "loud", "quiet", "busy", "calm", "long", "short",
];
const ADVERBS: [&str; 2] = ["also", "later"];

pub fn planted_relations() -> RelationVocab {
    RelationVocab::new(PLANTED_RELATIONS.iter().map(|s| s.to_string()).collect())
        .expect("distinct labels")
}

#[derive(Clone, Copy, PartialEq)]
enum Slot {
    Person(usize),
    Org(usize),
    Place(usize),
    Word,
}

struct Draft {
    tokens: Vec<(String, Slot)>,
    heads: Vec<i64>,
}

fn draft(parts: &[(&str, Slot)], heads: &[i64]) -> Draft {
    Draft {
        tokens: parts.iter().map(|&(t, s)| (t.to_string(), s)).collect(),
        heads: heads.to_vec(),
    }
}

/// Planted corpus of `n_docs` documents with 3–5 entities each.
///
/// Sentences state `founded(P, O)` ("P founded O ."), `member_of(P, O)`
/// ("P joined O .") and `based_in(O, L)` ("O is in L ."). `works_in(P, L)`
/// holds when P founded or joined an organization based in L; it is never
/// stated in a single sentence. Distractor sentences ("P met Q .") and
/// filler sentences are mixed in, and sentence order is shuffled.
pub fn planted_corpus(n_docs: usize, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|i| planted_document(&mut rng, format!("planted-{seed}-{i}")))
        .collect()
}

fn planted_document(rng: &mut ChaCha8Rng, doc_id: String) -> Document {
    let (n_persons, n_orgs, n_places) = loop {
        let p = rng.random_range(1..=2);
        let o = rng.random_range(1..=2);
        let l = rng.random_range(1..=o);
        if (3..=5).contains(&(p + o + l)) {
            break (p, o, l);
        }
    };
    let persons: Vec<&str> = PERSONS.choose_multiple(rng, n_persons).copied().collect();
    let orgs: Vec<&str> = ORGS.choose_multiple(rng, n_orgs).copied().collect();
    let places: Vec<&str> = PLACES.choose_multiple(rng, n_places).copied().collect();

    // Every place hosts at least one organization.
    let mut org_place: Vec<usize> = (0..n_orgs)
        .map(|o| {
            if o < n_places {
                o
            } else {
                rng.random_range(0..n_places)
            }
        })
        .collect();
    org_place.shuffle(rng);
    let person_org: Vec<(usize, bool)> = (0..n_persons)
        .map(|_| (rng.random_range(0..n_orgs), rng.random_bool(0.5)))
        .collect();

    let mut drafts = Vec::new();
    for (p, &(o, founded)) in person_org.iter().enumerate() {
        let verb = if founded { "founded" } else { "joined" };
        let (pw, ow) = (Slot::Person(p), Slot::Org(o));
        if rng.random_bool(0.3) {
            let adv = ADVERBS[rng.random_range(0..ADVERBS.len())];
            drafts.push(draft(
                &[
                    (persons[p], pw),
                    (adv, Slot::Word),
                    (verb, Slot::Word),
                    (orgs[o], ow),
                    (".", Slot::Word),
                ],
                &[2, 2, -1, 2, 2],
            ));
        } else {
            drafts.push(draft(
                &[
                    (persons[p], pw),
                    (verb, Slot::Word),
                    (orgs[o], ow),
                    (".", Slot::Word),
                ],
                &[1, -1, 1, 1],
            ));
        }
    }
    for (o, &l) in org_place.iter().enumerate() {
        drafts.push(draft(
            &[
                (orgs[o], Slot::Org(o)),
                ("is", Slot::Word),
                ("in", Slot::Word),
                (places[l], Slot::Place(l)),
                (".", Slot::Word),
            ],
            &[1, -1, 1, 2, 1],
        ));
    }
    if n_persons == 2 && rng.random_bool(0.5) {
        drafts.push(draft(
            &[
                (persons[0], Slot::Person(0)),
                ("met", Slot::Word),
                (persons[1], Slot::Person(1)),
                (".", Slot::Word),
            ],
            &[1, -1, 1, 1],
        ));
    }
    for _ in 0..rng.random_range(0..=2) {
        let noun = NOUNS[rng.random_range(0..NOUNS.len())];
        let adj = ADJECTIVES[rng.random_range(0..ADJECTIVES.len())];
        drafts.push(draft(
            &[
                ("the", Slot::Word),
                (noun, Slot::Word),
                ("was", Slot::Word),
                (adj, Slot::Word),
                (".", Slot::Word),
            ],
            &[1, 2, -1, 2, 2],
        ));
    }
    drafts.shuffle(rng);

    let n_entities = n_persons + n_orgs + n_places;
    let entity_of = |s: Slot| match s {
        Slot::Person(p) => Some(p),
        Slot::Org(o) => Some(n_persons + o),
        Slot::Place(l) => Some(n_persons + n_orgs + l),
        Slot::Word => None,
    };
    let mut mentions: Vec<Vec<Mention>> = vec![Vec::new(); n_entities];
    let mut sentences = Vec::with_capacity(drafts.len());
    for (sent_id, d) in drafts.iter().enumerate() {
        for (t, (tok, slot)) in d.tokens.iter().enumerate() {
            if let Some(e) = entity_of(*slot) {
                mentions[e].push(Mention {
                    sent_id,
                    span_start: t,
                    span_end: t + 1,
                    surface: tok.clone(),
                });
            }
        }
        sentences.push(Sentence {
            tokens: d.tokens.iter().map(|(t, _)| t.clone()).collect(),
            dep_heads: d.heads.clone(),
        });
    }
    let types = (0..n_entities).map(|e| {
        if e < n_persons {
            "PER"
        } else if e < n_persons + n_orgs {
            "ORG"
        } else {
            "LOC"
        }
    });
    let entities = mentions
        .into_iter()
        .zip(types)
        .enumerate()
        .map(|(entity_id, (mentions, ty))| Entity {
            entity_id,
            mentions,
            entity_type: Some(ty.to_string()),
        })
        .collect();

    let sentence_of = |slot_a: Slot, slot_b: Slot| {
        drafts
            .iter()
            .position(|d| {
                d.tokens.iter().any(|t| t.1 == slot_a) && d.tokens.iter().any(|t| t.1 == slot_b)
            })
            .map(|s| vec![s])
            .unwrap_or_default()
    };
    let mut facts = Vec::new();
    for (p, &(o, founded)) in person_org.iter().enumerate() {
        let (ps, os) = (Slot::Person(p), Slot::Org(o));
        facts.push(RelationFact {
            head: p,
            tail: n_persons + o,
            relation: if founded { "founded" } else { "member_of" }.into(),
            evidence: sentence_of(ps, os),
        });
        let l = org_place[o];
        let mut evidence = sentence_of(ps, os);
        evidence.extend(sentence_of(os, Slot::Place(l)));
        evidence.sort_unstable();
        facts.push(RelationFact {
            head: p,
            tail: n_persons + n_orgs + l,
            relation: "works_in".into(),
            evidence,
        });
    }
    for (o, &l) in org_place.iter().enumerate() {
        facts.push(RelationFact {
            head: n_persons + o,
            tail: n_persons + n_orgs + l,
            relation: "based_in".into(),
            evidence: sentence_of(Slot::Org(o), Slot::Place(l)),
        });
    }
    Document {
        doc_id,
        sentences,
        entities,
        facts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, validate_document_with};

    #[test]
    fn random_trees_are_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..10 {
            let heads = random_tree(n, &mut rng);
            assert_eq!(heads.iter().filter(|&&h| h < 0).count(), 1);
            for start in 0..n {
                let (mut cur, mut steps) = (start as i64, 0);
                while cur >= 0 {
                    cur = heads[cur as usize];
                    steps += 1;
                    assert!(steps <= n, "cycle");
                }
            }
        }
    }

    #[test]
    fn random_documents_validate() {
        let rv = RelationVocab::new(vec!["a".into(), "b".into()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let d = random_document(&mut rng, 4, 8, &rv);
            assert!(validate_document_with(&d, Some(&rv)).is_empty(), "{d:?}");
        }
    }

    #[test]
    fn planted_corpus_shape() {
        let docs = planted_corpus(20, 7);
        let rv = planted_relations();
        let mut labels = std::collections::BTreeSet::new();
        let mut cross = 0;
        for d in &docs {
            assert!(validate_document_with(d, Some(&rv)).is_empty());
            assert!((3..=5).contains(&d.entities.len()), "{}", d.entities.len());
            for f in &d.facts {
                labels.insert(f.relation.clone());
                if f.relation == "works_in" {
                    assert!(d.sentence_distance(f.head, f.tail) > 0);
                    cross += 1;
                }
            }
        }
        assert_eq!(labels.len(), 4);
        assert!(cross > 0);
        let v = build_vocab(&docs, 1);
        assert!((35..=60).contains(&v.len()), "vocab {}", v.len());
        assert_eq!(planted_corpus(20, 7), docs);
        assert_ne!(planted_corpus(20, 8), docs);
    }
}
