//! Synthetic dialogue records for fixtures and tests.
//!
//! Each record belongs to a topic. The history mentions two of the topic's
//! cue words plus a few generic surface words; the gold candidate carries
//! two of the topic's knowledge words and four fresh fact words, which the
//! reference response copies. Distractors are either other-topic knowledge
//! or surface lookalikes that repeat the history's generic words.

use std::collections::BTreeSet;
use std::path::Path;

use noisykag_core::{
    CandidatePool, DialogueHistory, GeneratedKnowledge, KnowledgeCandidate, KnowledgeSource, RngStream,
    Speaker, Turn,
};

use crate::backends::corpus_from;
use crate::dataset::{write_dataset, DatasetRecord};

const TOPICS: [&str; 8] = [
    "jazz", "volcano", "chess", "coffee", "sailing", "tennis", "opera", "glacier",
];
const CUES_PER_TOPIC: usize = 3;
const KNOWLEDGE_PER_TOPIC: usize = 3;
const FACT_WORDS: usize = 400;
const SURFACE_WORDS: usize = 30;
const LEXICON_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Generated knowledge is a noisy paraphrase of the gold candidate.
    Standard,
    /// Generated knowledge equals the gold candidate's text.
    GoldEcho,
    /// The gold candidate repeats the history, so it wins on raw scores.
    Saturated,
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub seed: u64,
    pub records: usize,
    pub id_prefix: String,
    pub kind: SynthKind,
    pub surface_distractors: usize,
    pub topic_distractors: usize,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, seed: u64, records: usize, id_prefix: &str) -> Self {
        SynthSpec {
            seed,
            records,
            id_prefix: id_prefix.into(),
            kind,
            surface_distractors: 2,
            topic_distractors: 3,
        }
    }
}

#[derive(Debug, Clone)]
struct Lexicon {
    cues: Vec<Vec<String>>,
    knowledge: Vec<Vec<String>>,
    facts: Vec<String>,
    surface: Vec<String>,
}

fn pick(rng: &mut RngStream, n: usize) -> usize {
    ((rng.open01() * n as f64) as usize).min(n - 1)
}

/// `count` distinct indices below `n`.
fn sample(rng: &mut RngStream, n: usize, count: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let i = pick(rng, n);
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

fn shuffle<T>(rng: &mut RngStream, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        items.swap(i, pick(rng, i + 1));
    }
}

impl Lexicon {
    fn new() -> Self {
        const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
        const VOWELS: &[u8] = b"aeiou";
        let mut rng = RngStream::new(LEXICON_SEED);
        let mut seen: BTreeSet<String> = TOPICS.iter().map(|t| t.to_string()).collect();
        let mut word = |rng: &mut RngStream, syllables: usize| loop {
            let w: String = (0..syllables)
                .flat_map(|_| {
                    [
                        CONSONANTS[pick(rng, CONSONANTS.len())] as char,
                        VOWELS[pick(rng, VOWELS.len())] as char,
                    ]
                })
                .collect();
            if seen.insert(w.clone()) {
                return w;
            }
        };
        let mut group = |rng: &mut RngStream, n: usize, syl: usize| -> Vec<String> {
            (0..n).map(|_| word(rng, syl)).collect()
        };
        let cues = (0..TOPICS.len()).map(|_| group(&mut rng, CUES_PER_TOPIC, 3)).collect();
        let knowledge = (0..TOPICS.len()).map(|_| group(&mut rng, KNOWLEDGE_PER_TOPIC, 3)).collect();
        let facts = group(&mut rng, FACT_WORDS, 3);
        let surface = group(&mut rng, SURFACE_WORDS, 2);
        Lexicon {
            cues,
            knowledge,
            facts,
            surface,
        }
    }

    fn facts(&self, rng: &mut RngStream, n: usize) -> Vec<String> {
        sample(rng, self.facts.len(), n).into_iter().map(|i| self.facts[i].clone()).collect()
    }

    fn other_topic(&self, rng: &mut RngStream, topic: usize) -> usize {
        (topic + 1 + pick(rng, TOPICS.len() - 1)) % TOPICS.len()
    }

    fn knowledge_words(&self, rng: &mut RngStream, topic: usize, n: usize) -> Vec<String> {
        sample(rng, KNOWLEDGE_PER_TOPIC, n)
            .into_iter()
            .map(|i| self.knowledge[topic][i].clone())
            .collect()
    }
}

fn record(lex: &Lexicon, spec: &SynthSpec, index: usize, rng: &mut RngStream) -> DatasetRecord {
    let topic = pick(rng, TOPICS.len());
    let cue = sample(rng, CUES_PER_TOPIC, 2);
    let (cue_a, cue_b) = (&lex.cues[topic][cue[0]], &lex.cues[topic][cue[1]]);
    let surface: Vec<String> = sample(rng, SURFACE_WORDS, 3)
        .into_iter()
        .map(|i| lex.surface[i].clone())
        .collect();
    let history = DialogueHistory::new(
        vec![
            Turn::new(Speaker::Apprentice, format!("tell me about {cue_a} {} {}", surface[0], surface[1]))
                .expect("non-empty turn"),
            Turn::new(Speaker::Wizard, format!("sure {cue_b} is {}", surface[2])).expect("non-empty turn"),
        ],
        None,
    )
    .expect("valid history");

    let know = lex.knowledge_words(rng, topic, 2);
    let facts = lex.facts(rng, 4);
    let mut gold_tokens: Vec<String> = match spec.kind {
        SynthKind::Saturated => vec![cue_a.clone(), cue_b.clone(), surface[0].clone(), surface[1].clone(), surface[2].clone()],
        _ => Vec::new(),
    };
    gold_tokens.extend(know.iter().cloned());
    gold_tokens.extend(facts.iter().cloned());
    let gold_text = gold_tokens.join(" ");

    let mut texts = vec![gold_text.clone()];
    let surface_distractors = match spec.kind {
        SynthKind::Saturated => 0,
        _ => spec.surface_distractors,
    };
    for _ in 0..surface_distractors {
        let s = sample(rng, 3, 2);
        let other = lex.other_topic(rng, topic);
        let mut t = vec![surface[s[0]].clone(), surface[s[1]].clone()];
        t.extend(lex.knowledge_words(rng, other, 1));
        t.extend(lex.facts(rng, 3));
        texts.push(t.join(" "));
    }
    let topic_distractors = spec.topic_distractors + spec.surface_distractors - surface_distractors;
    for _ in 0..topic_distractors {
        let other = lex.other_topic(rng, topic);
        let mut t = lex.knowledge_words(rng, other, 2);
        t.extend(lex.facts(rng, 4));
        texts.push(t.join(" "));
    }
    let mut order: Vec<usize> = (0..texts.len()).collect();
    shuffle(rng, &mut order);
    let id = format!("{}{index:04}", spec.id_prefix);
    let mut gold_id = String::new();
    let candidates: Vec<KnowledgeCandidate> = order
        .iter()
        .enumerate()
        .map(|(slot, &t)| {
            let cid = format!("{id}-k{slot}");
            if t == 0 {
                gold_id = cid.clone();
            }
            KnowledgeCandidate::new(cid, texts[t].clone())
        })
        .collect();
    let pool = CandidatePool::new(candidates, Some(gold_id.clone())).expect("valid pool");

    let generated = match spec.kind {
        SynthKind::GoldEcho | SynthKind::Saturated => gold_text,
        SynthKind::Standard => {
            let mut g = vec![know[0].clone(), facts[0].clone(), facts[1].clone()];
            g.extend(lex.facts(rng, 2));
            g.join(" ")
        }
    };
    let reference = format!("{} {} {} {}", facts[0], facts[1], facts[2], know[0]);
    DatasetRecord {
        id,
        history,
        candidates: pool,
        generated_knowledge: Some(GeneratedKnowledge::new(generated, KnowledgeSource::Dataset).expect("non-empty")),
        reference_response: reference,
        gold_knowledge_id: Some(gold_id),
    }
}

/// Deterministic in `spec`; the vocabulary is shared by every spec.
pub fn generate(spec: &SynthSpec) -> Vec<DatasetRecord> {
    let lex = Lexicon::new();
    let root = RngStream::new(spec.seed);
    (0..spec.records)
        .map(|i| record(&lex, spec, i, &mut root.split(i as u64)))
        .collect()
}

/// File name and spec of every bundled dataset.
pub fn bundled_specs() -> Vec<(&'static str, SynthSpec)> {
    vec![
        ("train.jsonl", SynthSpec::new(SynthKind::Standard, 1, 200, "train-")),
        ("valid.jsonl", SynthSpec::new(SynthKind::Standard, 2, 50, "valid-")),
        ("eval.jsonl", SynthSpec::new(SynthKind::Standard, 3, 100, "eval-")),
        ("reweigh.jsonl", SynthSpec::new(SynthKind::GoldEcho, 4, 30, "echo-")),
        ("saturated.jsonl", SynthSpec::new(SynthKind::Saturated, 5, 20, "sat-")),
    ]
}

/// Writes the bundled datasets and a `corpus.txt` holding all their texts.
pub fn write_fixtures(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut all = Vec::new();
    for (name, spec) in bundled_specs() {
        let records = generate(&spec);
        write_dataset(dir.join(name), &records)?;
        all.push(records);
    }
    let views: Vec<&[DatasetRecord]> = all.iter().map(Vec::as_slice).collect();
    let mut corpus = corpus_from(&views).join("\n");
    corpus.push('\n');
    std::fs::write(dir.join("corpus.txt"), corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_well_formed() {
        let spec = SynthSpec::new(SynthKind::Standard, 3, 20, "t");
        let a = generate(&spec);
        assert_eq!(a, generate(&spec));
        for r in &a {
            assert_eq!(r.candidates.len(), 6);
            r.candidates.validate().unwrap();
            let gold = r.gold_text().unwrap();
            for tok in r.reference_tokens() {
                assert!(gold.split(' ').any(|g| g == tok), "{tok} not in gold");
            }
        }
    }

    #[test]
    fn gold_echo_copies_gold() {
        for r in generate(&SynthSpec::new(SynthKind::GoldEcho, 1, 10, "e")) {
            assert_eq!(r.generated_knowledge.as_ref().unwrap().text, r.gold_text().unwrap());
        }
    }
}
