use std::fmt;

use super::{Document, RelationVocab, Sentence};

/// A broken invariant: where it was found and which rule it breaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.rule)
    }
}

fn push(out: &mut Vec<Violation>, path: impl Into<String>, rule: impl Into<String>) {
    out.push(Violation {
        path: path.into(),
        rule: rule.into(),
    });
}

pub fn validate_document(doc: &Document) -> Vec<Violation> {
    validate_document_with(doc, None)
}

/// Structural checks plus, when `relations` is given, label membership.
pub fn validate_document_with(doc: &Document, relations: Option<&RelationVocab>) -> Vec<Violation> {
    let mut out = Vec::new();
    if doc.sentences.is_empty() {
        push(&mut out, "sentences", "document has no sentences");
    }
    for (si, s) in doc.sentences.iter().enumerate() {
        validate_sentence(si, s, &mut out);
    }
    for (ei, e) in doc.entities.iter().enumerate() {
        if e.mentions.is_empty() {
            push(
                &mut out,
                format!("entities[{ei}].mentions"),
                "entity has no mentions",
            );
        }
        for (mi, m) in e.mentions.iter().enumerate() {
            let path = format!("entities[{ei}].mentions[{mi}]");
            let Some(sent) = doc.sentences.get(m.sent_id) else {
                push(
                    &mut out,
                    path,
                    format!("sent_id {} out of range", m.sent_id),
                );
                continue;
            };
            if m.span_start >= m.span_end || m.span_end > sent.tokens.len() {
                push(
                    &mut out,
                    path,
                    format!(
                        "span [{}, {}) not inside sentence {} of length {}",
                        m.span_start,
                        m.span_end,
                        m.sent_id,
                        sent.tokens.len()
                    ),
                );
            }
        }
    }
    let n = doc.entities.len();
    for (fi, f) in doc.facts.iter().enumerate() {
        let path = format!("facts[{fi}]");
        if f.head >= n || f.tail >= n {
            push(
                &mut out,
                path.clone(),
                format!(
                    "entity index out of range ({}, {}) for {n} entities",
                    f.head, f.tail
                ),
            );
        } else if f.head == f.tail {
            push(&mut out, path.clone(), "head and tail are the same entity");
        }
        if let Some(rv) = relations {
            if rv.get(&f.relation).is_none() {
                push(
                    &mut out,
                    format!("{path}.relation"),
                    format!("unknown relation label {:?}", f.relation),
                );
            }
        }
    }
    out
}

fn validate_sentence(si: usize, s: &Sentence, out: &mut Vec<Violation>) {
    let path = format!("sentences[{si}]");
    if s.tokens.is_empty() {
        push(out, path.clone(), "sentence has no tokens");
    }
    if s.dep_heads.len() != s.tokens.len() {
        push(
            out,
            format!("{path}.dep_heads"),
            format!("{} heads for {} tokens", s.dep_heads.len(), s.tokens.len()),
        );
        return;
    }
    let len = s.dep_heads.len() as i64;
    let mut usable = vec![true; s.dep_heads.len()];
    let mut roots = 0;
    for (t, &h) in s.dep_heads.iter().enumerate() {
        if h == -1 {
            roots += 1;
        } else if h < -1 || h >= len {
            push(
                out,
                format!("{path}.dep_heads[{t}]"),
                format!("head {h} out of range"),
            );
            usable[t] = false;
        } else if h == t as i64 {
            push(
                out,
                format!("{path}.dep_heads[{t}]"),
                "token is its own head",
            );
            usable[t] = false;
        }
    }
    if roots == 0 && !s.tokens.is_empty() {
        push(out, format!("{path}.dep_heads"), "no root (-1) present");
    }
    for cycle in head_cycles(&s.dep_heads, &usable) {
        push(
            out,
            format!("{path}.dep_heads"),
            format!("cycle through tokens {cycle:?}"),
        );
    }
}

/// Distinct cycles in the head relation, each reported once with its
/// members in ascending order.
fn head_cycles(heads: &[i64], usable: &[bool]) -> Vec<Vec<usize>> {
    // 0 = unvisited, 1 = on current walk, 2 = done
    let mut state = vec![0u8; heads.len()];
    let mut cycles = Vec::new();
    for start in 0..heads.len() {
        if state[start] != 0 {
            continue;
        }
        let mut walk = Vec::new();
        let mut cur = start;
        loop {
            if state[cur] == 2 {
                break;
            }
            if state[cur] == 1 {
                let pos = walk.iter().position(|&x| x == cur).expect("node on walk");
                let mut cycle: Vec<usize> = walk[pos..].to_vec();
                cycle.sort_unstable();
                cycles.push(cycle);
                break;
            }
            state[cur] = 1;
            walk.push(cur);
            let h = heads[cur];
            if h < 0 || !usable[cur] {
                break;
            }
            cur = h as usize;
        }
        for w in walk {
            state[w] = 2;
        }
    }
    cycles
}
