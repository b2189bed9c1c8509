//! Rule-based augmentation of comparison questions: polarity and comparative
//! substitutions, entity-order flips (all answer-flipping), and typed entity
//! substitution (answer-preserving). Static lexicons replace any external
//! POS/NER or thesaurus dependency.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{find_subseq, Answer, Dataset, Example, QType};
use crate::error::{Error, Result};

/// Involutive word-pair tables driving the mutation strategies.
#[derive(Debug, Clone, Default)]
pub struct MutationLexicon {
    /// same <-> different style words.
    polarity: HashMap<String, String>,
    /// comparative <-> antonym-comparative.
    comparatives: HashMap<String, String>,
}

impl MutationLexicon {
    pub fn from_file(path: impl AsRef<Path>) -> Result<MutationLexicon> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_table(&text)
    }

    pub fn from_str_table(text: &str) -> Result<MutationLexicon> {
        let mut lex = MutationLexicon::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [kind, a, b] = parts.as_slice() else {
                return Err(Error::Parse(format!(
                    "lexicon line {}: expected 'kind a b'",
                    lineno + 1
                )));
            };
            let table = match *kind {
                "polarity" => &mut lex.polarity,
                "comparative" => &mut lex.comparatives,
                other => {
                    return Err(Error::Parse(format!(
                        "lexicon line {}: unknown kind {other:?}",
                        lineno + 1
                    )))
                }
            };
            let (a, b) = (a.to_lowercase(), b.to_lowercase());
            for w in [&a, &b] {
                if table.contains_key(w) {
                    return Err(Error::Parse(format!(
                        "lexicon line {}: {w:?} breaks the involution",
                        lineno + 1
                    )));
                }
            }
            table.insert(a.clone(), b.clone());
            table.insert(b, a);
        }
        Ok(lex)
    }

    pub fn polarity_of(&self, word: &str) -> Option<&str> {
        self.polarity.get(&word.to_lowercase()).map(|s| s.as_str())
    }

    pub fn antonym_of(&self, word: &str) -> Option<&str> {
        self.comparatives
            .get(&word.to_lowercase())
            .map(|s| s.as_str())
    }

    /// Heuristic comparative trigger: a lexicon hit, or an -er/-ier surface
    /// form long enough not to be a stray noun.
    pub fn is_comparative_trigger(&self, word: &str) -> bool {
        let w = word.to_lowercase();
        self.comparatives.contains_key(&w)
            || (w.len() > 4 && w.ends_with("er") && w.chars().all(|c| c.is_ascii_alphabetic()))
    }
}

/// Typed entity pool for substitution, keyed by a coarse type tag.
#[derive(Debug, Clone, Default)]
pub struct EntityPool {
    entries: HashMap<String, Vec<Vec<String>>>,
}

/// Coarse tag from the title surface: works lead with "the", everything
/// else is treated as a person name.
pub fn entity_type_tag(title: &[String]) -> &'static str {
    match title.first() {
        Some(t) if t.to_lowercase() == "the" => "work",
        _ => "person",
    }
}

impl EntityPool {
    pub fn insert(&mut self, tag: &str, title: Vec<String>) {
        let bucket = self.entries.entry(tag.to_string()).or_default();
        if !bucket.contains(&title) {
            bucket.push(title);
        }
    }

    pub fn of_type(&self, tag: &str) -> &[Vec<String>] {
        self.entries.get(tag).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Pool of all supporting-document titles in a dataset.
    pub fn from_dataset(dataset: &Dataset) -> EntityPool {
        let mut pool = EntityPool::default();
        for ex in &dataset.examples {
            for &i in &ex.supporting {
                let title = ex.documents[i].title.clone();
                pool.insert(entity_type_tag(&title), title);
            }
        }
        pool
    }
}

fn flip_answer(a: &Answer) -> Answer {
    match a {
        Answer::Yes => Answer::No,
        Answer::No => Answer::Yes,
        other => other.clone(),
    }
}

fn answer_string(a: &Answer, fallback: &str) -> String {
    match a {
        Answer::Yes => "yes".to_string(),
        Answer::No => "no".to_string(),
        _ => fallback.to_string(),
    }
}

fn replace_word(tokens: &[String], from: &str, to: &str) -> (Vec<String>, usize) {
    let mut count = 0;
    let out = tokens
        .iter()
        .map(|t| {
            if t.to_lowercase() == from.to_lowercase() {
                count += 1;
                to.to_string()
            } else {
                t.clone()
            }
        })
        .collect();
    (out, count)
}

/// Replace every occurrence of the token sequence `from` with `to`.
pub fn replace_subseq(tokens: &[String], from: &[String], to: &[String]) -> (Vec<String>, usize) {
    let hits = find_subseq(tokens, from);
    if hits.is_empty() {
        return (tokens.to_vec(), 0);
    }
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    let mut count = 0;
    let mut hit_iter = hits.iter().peekable();
    while i < tokens.len() {
        if hit_iter.peek() == Some(&&i) {
            out.extend(to.iter().cloned());
            i += from.len();
            hit_iter.next();
            count += 1;
        } else {
            out.push(tokens[i].clone());
            i += 1;
        }
    }
    (out, count)
}

/// Swap occurrences of token sequences `a` and `b` inside `tokens`.
fn swap_subseqs(tokens: &[String], a: &[String], b: &[String]) -> Vec<String> {
    // Route through unique placeholders so a->b does not re-trigger b->a.
    let ph_a: Vec<String> = vec!["\u{0}A".to_string()];
    let ph_b: Vec<String> = vec!["\u{0}B".to_string()];
    let (t, _) = replace_subseq(tokens, a, &ph_a);
    let (t, _) = replace_subseq(&t, b, &ph_b);
    let (t, _) = replace_subseq(&t, &ph_a, b);
    let (t, _) = replace_subseq(&t, &ph_b, a);
    t
}

/// Outcome of polarity / antonym / flip mutations over a dataset.
#[derive(Debug, Default)]
pub struct AugmentResult {
    pub dataset: Dataset,
    /// (example id, reason) for examples a strategy had to skip.
    pub skipped: Vec<(String, String)>,
}

/// Generate mutated comparison examples. Originals are not modified; every
/// mutated example carries a strategy suffix on its id.
pub fn augment_comparison(
    dataset: &Dataset,
    lexicon: &MutationLexicon,
    seed: u64,
) -> AugmentResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = EntityPool::from_dataset(dataset);
    let mut out = AugmentResult::default();
    for ex in &dataset.examples {
        if ex.qtype != QType::Comparison || !ex.is_yes_no() {
            continue;
        }
        if let Some(m) = mutate_polarity(ex, lexicon) {
            out.dataset.examples.push(m);
        }
        match mutate_antonym(ex, lexicon) {
            Ok(Some(m)) => out.dataset.examples.push(m),
            Ok(None) => {}
            Err(reason) => out.skipped.push((ex.id.clone(), reason)),
        }
        if let Some(m) = mutate_entity_flip(ex, lexicon) {
            out.dataset.examples.push(m);
        }
        match substitute_entities(ex, &pool, rng.random::<u64>()) {
            Ok(m) => out.dataset.examples.push(m),
            Err(_) => out
                .skipped
                .push((ex.id.clone(), "entity pool exhausted".to_string())),
        }
    }
    out
}



/// Strategy: substitute "same" with "different" (and vice versa); the answer
/// flips.
pub fn mutate_polarity(ex: &Example, lexicon: &MutationLexicon) -> Option<Example> {
    let hit = ex
        .question
        .iter()
        .find_map(|t| lexicon.polarity_of(t).map(|r| (t.clone(), r.to_string())))?;
    let (question, n) = replace_word(&ex.question, &hit.0, &hit.1);
    debug_assert!(n > 0);
    let answer = flip_answer(&ex.answer);
    Some(Example {
        id: format!("{}-pol", ex.id),
        question,
        answer_text: answer_string(&answer, &ex.answer_text),
        answer,
        ..ex.clone()
    })
}

/// Strategy: rewrite comparatives to their antonym comparatives; the answer
/// flips. A triggered comparative missing from the lexicon skips the example.
pub fn mutate_antonym(
    ex: &Example,
    lexicon: &MutationLexicon,
) -> std::result::Result<Option<Example>, String> {
    let triggered: Vec<String> = ex
        .question
        .iter()
        .filter(|t| lexicon.is_comparative_trigger(t))
        .map(|t| t.to_lowercase())
        .collect();
    if triggered.is_empty() {
        return Ok(None);
    }
    let mut question = ex.question.clone();
    for word in &triggered {
        match lexicon.antonym_of(word) {
            Some(anto) => {
                let (q, _) = replace_word(&question, word, anto);
                question = q;
            }
            None => return Err(format!("comparative {word:?} not in lexicon")),
        }
    }
    let answer = flip_answer(&ex.answer);
    Ok(Some(Example {
        id: format!("{}-ant", ex.id),
        question,
        answer_text: answer_string(&answer, &ex.answer_text),
        answer,
        ..ex.clone()
    }))
}

/// Strategy: flip the order of the two compared entities when the question
/// carries a comparative; the answer flips.
pub fn mutate_entity_flip(ex: &Example, lexicon: &MutationLexicon) -> Option<Example> {
    if !ex
        .question
        .iter()
        .any(|t| lexicon.is_comparative_trigger(t))
    {
        return None;
    }
    let t1 = &ex.documents[ex.supporting[0]].title;
    let t2 = &ex.documents[ex.supporting[1]].title;
    if find_subseq(&ex.question, t1).is_empty() || find_subseq(&ex.question, t2).is_empty() {
        return None;
    }
    let question = swap_subseqs(&ex.question, t1, t2);
    let answer = flip_answer(&ex.answer);
    Some(Example {
        id: format!("{}-flip", ex.id),
        question,
        answer_text: answer_string(&answer, &ex.answer_text),
        answer,
        ..ex.clone()
    })
}

/// Replace both compared entities with two sampled same-type titles,
/// consistently across the question and the supporting documents. The
/// answer is preserved.
pub fn substitute_entities(ex: &Example, pool: &EntityPool, seed: u64) -> Result<Example> {
    if ex.qtype != QType::Comparison || !ex.is_yes_no() {
        return Err(Error::contract(format!(
            "{}: entity substitution applies to yes/no comparison examples",
            ex.id
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let old1 = ex.documents[ex.supporting[0]].title.clone();
    let old2 = ex.documents[ex.supporting[1]].title.clone();
    let tag = entity_type_tag(&old1);
    let candidates = pool.of_type(tag);
    if candidates.len() < 2 {
        return Err(Error::Substitution(format!(
            "{}: need at least 2 titles of type {tag}, pool has {}",
            ex.id,
            candidates.len()
        )));
    }
    let mut picks: Vec<&Vec<String>> = candidates.iter().collect();
    picks.shuffle(&mut rng);
    let new1 = picks[0].clone();
    let new2 = picks
        .iter()
        .find(|t| ***t != new1)
        .map(|t| (*t).clone())
        .ok_or_else(|| Error::Substitution(format!("{}: pool collapsed to one title", ex.id)))?;

    let question = {
        let q = swap_subseqs(&ex.question, &old1, &new1);
        if old2 == new1 {
            // old2 was just rewritten to new1; target those occurrences.
            swap_subseqs(&q, &new1, &new2)
        } else {
            swap_subseqs(&q, &old2, &new2)
        }
    };
    let mut documents = ex.documents.clone();
    for (sup, old, new) in [
        (ex.supporting[0], &old1, &new1),
        (ex.supporting[1], &old2, &new2),
    ] {
        let d = &mut documents[sup];
        let (title, _) = replace_subseq(&d.title, old, new);
        let (body, _) = replace_subseq(&d.body, old, new);
        d.title = title;
        d.body = body;
    }
    Ok(Example {
        id: format!("{}-sub", ex.id),
        question,
        documents,
        ..ex.clone()
    })
}

pub fn builtin_lexicon() -> MutationLexicon {
    MutationLexicon::from_str_table(include_str!("../data/lexicon.txt"))
        .expect("bundled lexicon is well-formed")
}
