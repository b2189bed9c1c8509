//! Multi-hop QA corpus: synthetic generation, HotpotQA-format JSON loading
//! and saving, and bridge-entity detection.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub title: Vec<String>,
    pub body: Vec<String>,
}

/// Token span inside one document body; `end` is exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub doc: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Answer {
    Span(Span),
    Yes,
    No,
    /// Gold string that could not be located in a supporting document;
    /// the example is usable for metrics only.
    Unlocated(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QType {
    Bridge,
    Comparison,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub question: Vec<String>,
    pub documents: Vec<Document>,
    pub answer: Answer,
    /// Gold answer string for metric computation.
    pub answer_text: String,
    pub qtype: QType,
    pub supporting: [usize; 2],
    /// Occurrence of the bridge entity in the supporting document that is
    /// not titled by it.
    pub bridge: Option<Span>,
}

impl Example {
    pub fn is_yes_no(&self) -> bool {
        matches!(self.answer, Answer::Yes | Answer::No)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

/// Whitespace plus punctuation splitting; surface case is preserved and
/// folded only at vocabulary-lookup time.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if ch.is_ascii_punctuation() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(ch.to_string());
        } else {
            cur.push(ch);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn join_tokens(tokens: &[String]) -> String {
    tokens.join(" ")
}

fn lower(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| t.to_lowercase()).collect()
}

/// All start offsets where `needle` occurs in `haystack`, case-insensitive.
pub fn find_subseq(haystack: &[String], needle: &[String]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return vec![];
    }
    let h = lower(haystack);
    let n = lower(needle);
    (0..=h.len() - n.len())
        .filter(|&i| h[i..i + n.len()] == n[..])
        .collect()
}

// ---------------------------------------------------------------------------
// Bridge detection
// ---------------------------------------------------------------------------

/// Heuristic bridge entity: the title of one supporting document occurring
/// in the other supporting document's body. Ties prefer the longer title,
/// then the earliest occurrence. The second return value flags the ambiguous
/// case where both titles occur in each other's documents.
pub fn detect_bridge_full(example: &Example) -> (Option<Span>, bool) {
    let [a, b] = example.supporting;
    let doc_a = &example.documents[a];
    let doc_b = &example.documents[b];
    let mut candidates: Vec<(usize, Span)> = Vec::new(); // (title_len, occurrence)
    for (title_doc, other_idx, other) in [(doc_a, b, doc_b), (doc_b, a, doc_a)] {
        if let Some(&start) = find_subseq(&other.body, &title_doc.title).first() {
            candidates.push((
                title_doc.title.len(),
                Span {
                    doc: other_idx,
                    start,
                    end: start + title_doc.title.len(),
                },
            ));
        }
    }
    let ambiguous = candidates.len() > 1;
    candidates.sort_by(|x, y| {
        y.0.cmp(&x.0)
            .then(x.1.doc.cmp(&y.1.doc))
            .then(x.1.start.cmp(&y.1.start))
    });
    (candidates.first().map(|(_, s)| *s), ambiguous)
}

pub fn detect_bridge(example: &Example) -> Option<Span> {
    detect_bridge_full(example).0
}

// ---------------------------------------------------------------------------
// HotpotQA-format JSON
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HotpotRecord {
    pub _id: String,
    pub question: String,
    pub answer: String,
    /// (title, sentences) pairs.
    pub context: Vec<(String, Vec<String>)>,
    pub supporting_facts: Vec<(String, usize)>,
    #[serde(rename = "type")]
    pub qtype: String,
    #[serde(default)]
    pub level: String,
}

fn split_sentences(body: &[String]) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut cur: Vec<String> = Vec::new();
    for tok in body {
        cur.push(tok.clone());
        if tok == "." {
            sentences.push(join_tokens(&cur));
            cur.clear();
        }
    }
    if !cur.is_empty() {
        sentences.push(join_tokens(&cur));
    }
    sentences
}

pub fn example_to_record(example: &Example) -> HotpotRecord {
    let context = example
        .documents
        .iter()
        .map(|d| (join_tokens(&d.title), split_sentences(&d.body)))
        .collect();
    let supporting_facts = example
        .supporting
        .iter()
        .map(|&i| (join_tokens(&example.documents[i].title), 0usize))
        .collect();
    HotpotRecord {
        _id: example.id.clone(),
        question: join_tokens(&example.question),
        answer: example.answer_text.clone(),
        context,
        supporting_facts,
        qtype: match example.qtype {
            QType::Bridge => "bridge".to_string(),
            QType::Comparison => "comparison".to_string(),
        },
        level: "synthetic".to_string(),
    }
}

pub fn record_to_example(record: &HotpotRecord, index: usize) -> Result<Example> {
    let question = tokenize(&record.question);
    if question.is_empty() {
        return Err(Error::Parse(format!("record {index}: empty question")));
    }
    let documents: Vec<Document> = record
        .context
        .iter()
        .map(|(title, sentences)| Document {
            title: tokenize(title),
            body: tokenize(&sentences.join(" ")),
        })
        .collect();
    if documents.is_empty() {
        return Err(Error::Parse(format!("record {index}: empty context")));
    }

    let mut supporting: Vec<usize> = Vec::new();
    for (title, _) in &record.supporting_facts {
        let want = lower(&tokenize(title));
        let found = documents
            .iter()
            .position(|d| lower(&d.title) == want)
            .ok_or_else(|| {
                Error::Parse(format!(
                    "record {index}: supporting title {title:?} not in context"
                ))
            })?;
        if !supporting.contains(&found) {
            supporting.push(found);
        }
    }
    if supporting.len() != 2 {
        return Err(Error::Parse(format!(
            "record {index}: expected 2 supporting documents, found {}",
            supporting.len()
        )));
    }
    let supporting = [supporting[0], supporting[1]];

    let qtype = match record.qtype.as_str() {
        "bridge" => QType::Bridge,
        "comparison" => QType::Comparison,
        other => {
            return Err(Error::Parse(format!(
                "record {index}: unknown question type {other:?}"
            )))
        }
    };

    let lowered = record.answer.trim().to_lowercase();
    let answer = if qtype == QType::Comparison && (lowered == "yes" || lowered == "no") {
        if lowered == "yes" {
            Answer::Yes
        } else {
            Answer::No
        }
    } else {
        let ans_tokens = tokenize(&record.answer);
        let mut found = None;
        for &doc in &supporting {
            if let Some(&start) = find_subseq(&documents[doc].body, &ans_tokens).first() {
                found = Some(Span {
                    doc,
                    start,
                    end: start + ans_tokens.len(),
                });
                break;
            }
        }
        match found {
            Some(span) => Answer::Span(span),
            None => Answer::Unlocated(record.answer.clone()),
        }
    };

    let mut example = Example {
        id: record._id.clone(),
        question,
        documents,
        answer,
        answer_text: record.answer.clone(),
        qtype,
        supporting,
        bridge: None,
    };
    example.bridge = detect_bridge(&example);
    Ok(example)
}

pub fn load_hotpot(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let values: Vec<serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("top-level JSON: {e}")))?;
    let mut examples = Vec::with_capacity(values.len());
    let mut seen = std::collections::HashSet::new();
    for (i, v) in values.into_iter().enumerate() {
        let record: HotpotRecord = serde_json::from_value(v)
            .map_err(|e| Error::Parse(format!("record {i}: {e}")))?;
        let ex = record_to_example(&record, i)?;
        if !seen.insert(ex.id.clone()) {
            return Err(Error::Parse(format!("record {i}: duplicate id {}", ex.id)));
        }
        examples.push(ex);
    }
    Ok(Dataset { examples })
}

pub fn save_hotpot(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let records: Vec<HotpotRecord> = dataset.examples.iter().map(example_to_record).collect();
    let text = serde_json::to_string_pretty(&records)?;
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    pub bridge_ratio: f64,
    pub vocab_size: usize,
    pub docs_per_example: usize,
    /// Probability that a distractor document repeats the asked attribute
    /// value, so surface matching alone cannot answer the question.
    pub distractor_overlap: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n: 100,
            bridge_ratio: 0.5,
            vocab_size: 200,
            docs_per_example: 4,
            distractor_overlap: 0.5,
        }
    }
}

const COUNTRIES: &[&str] = &[
    "France", "Germany", "Japan", "Brazil", "Canada", "Egypt", "Norway", "Peru",
];
const OCCUPATIONS: &[&str] = &[
    "teacher", "singer", "doctor", "painter", "engineer", "farmer", "pilot", "chef",
];
const POSITIONS: &[&str] = &[
    "mayor", "senator", "judge", "governor", "sheriff", "ambassador",
];
const RELATIONS: &[(&str, &str)] = &[("directed", "film"), ("wrote", "book"), ("produced", "show")];
const WORK_NOUNS: &[&str] = &[
    "Silver", "River", "Garden", "Shadow", "Crystal", "Harbor", "Meadow", "Ember", "Winter",
    "Falcon", "Lantern", "Orchard",
];
const SYLLABLES: &[&str] = &[
    "bel", "dor", "fin", "gar", "hal", "jor", "kel", "lom", "mar", "nor", "pol", "ren", "sil",
    "tor", "ul", "ver", "wil", "yor", "zan", "qua", "bri", "cas", "del", "eri", "fos", "gri",
];
const YEAR_LO: usize = 1950;
const YEAR_HI: usize = 1990; // exclusive

/// Template tokens, attribute values and work nouns: the fixed part of the
/// synthetic vocabulary, independent of `vocab_size`.
fn fixed_vocab_count() -> usize {
    let template = [
        "what", "is", "the", "a", "of", "person", "who", "in", "year", "was", "born", "were",
        "and", "known", "for", "same", "different", "are", "from", "older", "younger", "than",
        "occupation", "country", "position", "held", "worked", "as", "by", "have", "before",
        "?", ".",
    ];
    template.len()
        + COUNTRIES.len()
        + OCCUPATIONS.len()
        + POSITIONS.len()
        + RELATIONS.len() * 2
        + WORK_NOUNS.len()
        + (YEAR_HI - YEAR_LO)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

struct EntityPools {
    first_names: Vec<String>,
    last_names: Vec<String>,
}

impl EntityPools {
    fn build(vocab_size: usize, docs_per_example: usize) -> Result<EntityPools> {
        let fixed = fixed_vocab_count();
        let budget = vocab_size.saturating_sub(fixed);
        let half = budget / 2;
        // Need enough distinct persons for supporting plus distractor docs.
        if half < 4 || half * half < docs_per_example * 4 {
            return Err(Error::config(format!(
                "vocab_size {vocab_size} too small: {fixed} fixed tokens leave \
                 {budget} for entity names"
            )));
        }
        let mut names = Vec::new();
        'outer: for i in 0..SYLLABLES.len() {
            for j in 0..SYLLABLES.len() {
                if i == j {
                    continue;
                }
                names.push(capitalize(&format!("{}{}", SYLLABLES[i], SYLLABLES[j])));
                if names.len() >= budget {
                    break 'outer;
                }
            }
        }
        if names.len() < budget.min(2 * half) {
            return Err(Error::config(format!(
                "vocab_size {vocab_size} exceeds the synthesizable name pool"
            )));
        }
        let first_names = names[..half].to_vec();
        let last_names = names[half..2 * half].to_vec();
        Ok(EntityPools {
            first_names,
            last_names,
        })
    }

    fn person(&self, rng: &mut ChaCha8Rng) -> Vec<String> {
        vec![
            self.first_names.choose(rng).unwrap().clone(),
            self.last_names.choose(rng).unwrap().clone(),
        ]
    }

    fn work(&self, rng: &mut ChaCha8Rng) -> Vec<String> {
        let a = WORK_NOUNS.choose(rng).unwrap();
        let mut b = WORK_NOUNS.choose(rng).unwrap();
        while b == a {
            b = WORK_NOUNS.choose(rng).unwrap();
        }
        vec!["The".to_string(), a.to_string(), b.to_string()]
    }
}

fn toks(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

#[derive(Clone)]
struct PersonFacts {
    name: Vec<String>,
    country: String,
    occupation: String,
    position: String,
    year: usize,
}

impl PersonFacts {
    fn sample(pools: &EntityPools, rng: &mut ChaCha8Rng) -> PersonFacts {
        PersonFacts {
            name: pools.person(rng),
            country: COUNTRIES.choose(rng).unwrap().to_string(),
            occupation: OCCUPATIONS.choose(rng).unwrap().to_string(),
            position: POSITIONS.choose(rng).unwrap().to_string(),
            year: rng.random_range(YEAR_LO..YEAR_HI),
        }
    }

    fn doc(&self) -> Document {
        let mut body = Vec::new();
        body.extend(self.name.clone());
        body.extend(toks(&["was", "born", "in"]));
        body.push(self.year.to_string());
        body.push(".".into());
        body.extend(self.name.clone());
        body.extend(toks(&["worked", "as", "a"]));
        body.push(self.occupation.clone());
        body.push(".".into());
        body.extend(self.name.clone());
        body.extend(toks(&["is", "from"]));
        body.push(self.country.clone());
        body.push(".".into());
        body.extend(self.name.clone());
        body.extend(toks(&["held", "the", "position", "of"]));
        body.push(self.position.clone());
        body.push(".".into());
        Document {
            title: self.name.clone(),
            body,
        }
    }

    fn attribute(&self, kind: usize) -> String {
        match kind {
            0 => self.occupation.clone(),
            1 => self.country.clone(),
            2 => self.position.clone(),
            _ => self.year.to_string(),
        }
    }
}

fn force_attribute(facts: &mut PersonFacts, kind: usize, value: &str) {
    match kind {
        0 => facts.occupation = value.to_string(),
        1 => facts.country = value.to_string(),
        2 => facts.position = value.to_string(),
        _ => facts.year = value.parse().unwrap_or(facts.year),
    }
}

/// Generate a synthetic multi-hop dataset; a pure function of (config, seed).
pub fn generate_synthetic(config: &GenConfig, seed: u64) -> Result<Dataset> {
    if config.n < 1 {
        return Err(Error::config("n must be at least 1".to_string()));
    }
    if config.docs_per_example < 2 {
        return Err(Error::config("docs_per_example must be at least 2".to_string()));
    }
    if !(0.0..=1.0).contains(&config.bridge_ratio) {
        return Err(Error::config("bridge_ratio must lie in [0, 1]".to_string()));
    }
    let pools = EntityPools::build(config.vocab_size, config.docs_per_example)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_bridge = (config.n as f64 * config.bridge_ratio).round() as usize;
    let mut examples = Vec::with_capacity(config.n);
    for i in 0..config.n {
        // Proportional interleave with an exact bridge quota.
        let is_bridge = ((i + 1) * n_bridge) / config.n > (i * n_bridge) / config.n;
        let id = format!("syn-{i:06}");
        let example = if is_bridge {
            gen_bridge(&id, config, &pools, &mut rng)
        } else {
            gen_comparison(&id, config, &pools, &mut rng)
        };
        // Normalize through the record mapping so save/load is the identity.
        examples.push(record_to_example(&example_to_record(&example), i)?);
    }
    Ok(Dataset { examples })
}

fn distinct_person(pools: &EntityPools, rng: &mut ChaCha8Rng, taken: &[Vec<String>]) -> PersonFacts {
    loop {
        let p = PersonFacts::sample(pools, rng);
        if !taken.contains(&p.name) {
            return p;
        }
    }
}

fn gen_bridge(id: &str, config: &GenConfig, pools: &EntityPools, rng: &mut ChaCha8Rng) -> Example {
    let person = PersonFacts::sample(pools, rng);
    let work = pools.work(rng);
    let (rel, work_kind) = *RELATIONS.choose(rng).unwrap();
    let attr_kind = rng.random_range(0..4usize);

    // Work document: titled by the work, mentions the person (the bridge).
    let mut work_body = work.clone();
    work_body.extend(toks(&["is", "a", work_kind, rel, "by"]));
    work_body.extend(person.name.clone());
    work_body.push(".".into());
    let work_doc = Document {
        title: work.clone(),
        body: work_body,
    };
    let person_doc = person.doc();

    let question = match attr_kind {
        3 => {
            let mut q = toks(&["in", "what", "year", "was", "the", "person", "who", rel]);
            q.extend(work.clone());
            q.extend(toks(&["born", "?"]));
            q
        }
        k => {
            let attr_word = ["occupation", "country", "position"][k];
            let mut q = toks(&["what", "is", "the", attr_word, "of", "the", "person", "who", rel]);
            q.extend(work.clone());
            q.push("?".into());
            q
        }
    };
    let answer_text = person.attribute(attr_kind);

    let mut taken = vec![person.name.clone()];
    let mut docs: Vec<(Document, u8)> = vec![(work_doc, 1), (person_doc, 2)];
    for _ in 0..config.docs_per_example.saturating_sub(2) {
        let mut other = distinct_person(pools, rng, &taken);
        if rng.random_bool(config.distractor_overlap) {
            // Hard distractor: repeats the asked attribute value elsewhere.
            force_attribute(&mut other, attr_kind, &answer_text);
        }
        taken.push(other.name.clone());
        docs.push((other.doc(), 0));
    }
    docs.shuffle(rng);
    finish(id, question, docs, answer_text, QType::Bridge)
}

fn gen_comparison(
    id: &str,
    config: &GenConfig,
    pools: &EntityPools,
    rng: &mut ChaCha8Rng,
) -> Example {
    let mut p1 = PersonFacts::sample(pools, rng);
    let mut p2 = distinct_person(pools, rng, &[p1.name.clone()]);
    while p2.year == p1.year {
        p2.year = rng.random_range(YEAR_LO..YEAR_HI);
    }
    let kind = rng.random_range(0..3usize);
    let target_yes = rng.random_bool(0.5);
    let (question, yes) = match kind {
        0 => {
            if target_yes {
                p2.occupation = p1.occupation.clone();
            } else {
                while p2.occupation == p1.occupation {
                    p2.occupation = OCCUPATIONS.choose(rng).unwrap().to_string();
                }
            }
            // Phrased to share "worked as" with the attribute sentence so
            // attention can lock onto the occupation rows.
            let mut q = toks(&["have"]);
            q.extend(p1.name.clone());
            q.push("and".into());
            q.extend(p2.name.clone());
            q.extend(toks(&["worked", "as", "the", "same", "occupation", "?"]));
            (q, p1.occupation == p2.occupation)
        }
        1 => {
            if target_yes {
                p2.country = p1.country.clone();
            } else {
                while p2.country == p1.country {
                    p2.country = COUNTRIES.choose(rng).unwrap().to_string();
                }
            }
            let mut q = toks(&["are"]);
            q.extend(p1.name.clone());
            q.push("and".into());
            q.extend(p2.name.clone());
            q.extend(toks(&["from", "the", "same", "country", "?"]));
            (q, p1.country == p2.country)
        }
        _ => {
            if target_yes != (p1.year < p2.year) {
                std::mem::swap(&mut p1, &mut p2);
            }
            // Shares "was born" with the attribute sentence (see above).
            let mut q = toks(&["was"]);
            q.extend(p1.name.clone());
            q.extend(toks(&["born", "before"]));
            q.extend(p2.name.clone());
            q.push("?".into());
            (q, p1.year < p2.year)
        }
    };

    let mut taken = vec![p1.name.clone(), p2.name.clone()];
    let mut docs: Vec<(Document, u8)> = vec![(p1.doc(), 1), (p2.doc(), 2)];
    for _ in 0..config.docs_per_example.saturating_sub(2) {
        let other = distinct_person(pools, rng, &taken);
        taken.push(other.name.clone());
        docs.push((other.doc(), 0));
    }
    docs.shuffle(rng);
    let answer_text = if yes { "yes" } else { "no" }.to_string();
    finish(id, question, docs, answer_text, QType::Comparison)
}

fn finish(
    id: &str,
    question: Vec<String>,
    docs: Vec<(Document, u8)>,
    answer_text: String,
    qtype: QType,
) -> Example {
    let sup_a = docs.iter().position(|(_, tag)| *tag == 1).unwrap();
    let sup_b = docs.iter().position(|(_, tag)| *tag == 2).unwrap();
    let documents: Vec<Document> = docs.into_iter().map(|(d, _)| d).collect();
    let answer = match answer_text.as_str() {
        "yes" => Answer::Yes,
        "no" => Answer::No,
        _ => Answer::Unlocated(answer_text.clone()), // re-located by record mapping
    };
    Example {
        id: id.to_string(),
        question,
        documents,
        answer,
        answer_text,
        qtype,
        supporting: [sup_a, sup_b],
        bridge: None,
    }
}
