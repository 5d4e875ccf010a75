//! Corpus ingestion (JSONL), vocabulary building and the seeded synthetic
//! persona corpus with its template oracle.
//!
//! Synthetic rules: every persona sentence states one (topic, value) fact with
//! the topic's template, e.g. `i have a dog .`. A query states a different
//! value of one persona topic and then asks about that topic. The gold
//! response restates the persona's value for the asked topic, optionally
//! behind a short discourse prefix. NLI hypotheses use the response form;
//! a pair is entailment when the premise holds the same fact, contradiction
//! when it holds the same topic with another value, neutral otherwise.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{normalize, tokenize, Vocab, RESERVED_TOKENS};
use crate::error::{GdrError, Result};
use crate::matcher::NliLabel;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DialogueExample {
    pub persona: Vec<String>,
    pub query: String,
    pub response: String,
}

impl DialogueExample {
    /// Normalizes every field and checks nothing is empty.
    pub fn new(persona: Vec<String>, query: &str, response: &str) -> Result<Self> {
        let persona: Vec<String> = persona.iter().map(|s| normalize(s)).collect();
        if persona.is_empty() {
            return Err(GdrError::Invalid("persona has no sentences".into()));
        }
        if persona.iter().any(String::is_empty) {
            return Err(GdrError::Invalid("blank persona sentence".into()));
        }
        let (query, response) = (normalize(query), normalize(response));
        if query.is_empty() || response.is_empty() {
            return Err(GdrError::Invalid("blank query or response".into()));
        }
        Ok(Self {
            persona,
            query,
            response,
        })
    }
}

/// Premise sentences (one per line in the file's premise string),
/// hypothesis and label.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NliExample {
    pub premise: Vec<String>,
    pub hypothesis: String,
    pub label: NliLabel,
}

impl NliExample {
    pub fn new(premise: &str, hypothesis: &str, label: NliLabel) -> Result<Self> {
        let premise: Vec<String> = premise
            .split('\n')
            .map(normalize)
            .filter(|s| !s.is_empty())
            .collect();
        let hypothesis = normalize(hypothesis);
        if premise.is_empty() || hypothesis.is_empty() {
            return Err(GdrError::Invalid("blank premise or hypothesis".into()));
        }
        Ok(Self {
            premise,
            hypothesis,
            label,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct NliRecord {
    premise: String,
    hypothesis: String,
    label: String,
}

fn read_lines(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| GdrError::io(path, e))
}

fn data_err(path: &Path, line: usize, msg: impl Into<String>) -> GdrError {
    GdrError::Data {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// One JSON object per line; blank lines are skipped. Order is preserved.
pub fn load_dialogues(path: &Path) -> Result<Vec<DialogueExample>> {
    let text = read_lines(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: DialogueExample =
            serde_json::from_str(line).map_err(|e| data_err(path, i + 1, e.to_string()))?;
        let ex = DialogueExample::new(raw.persona, &raw.query, &raw.response)
            .map_err(|e| data_err(path, i + 1, e.to_string()))?;
        out.push(ex);
    }
    Ok(out)
}

pub fn load_nli(path: &Path) -> Result<Vec<NliExample>> {
    let text = read_lines(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: NliRecord =
            serde_json::from_str(line).map_err(|e| data_err(path, i + 1, e.to_string()))?;
        let label: NliLabel = rec
            .label
            .parse()
            .map_err(|e: GdrError| data_err(path, i + 1, e.to_string()))?;
        out.push(
            NliExample::new(&rec.premise, &rec.hypothesis, label)
                .map_err(|e| data_err(path, i + 1, e.to_string()))?,
        );
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(&item).map_err(|e| GdrError::Invalid(e.to_string()))?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| GdrError::io(path, e))
}

pub fn save_dialogues(path: &Path, data: &[DialogueExample]) -> Result<()> {
    write_jsonl(path, data.iter())
}

pub fn save_nli(path: &Path, data: &[NliExample]) -> Result<()> {
    write_jsonl(
        path,
        data.iter().map(|ex| NliRecord {
            premise: ex.premise.join("\n"),
            hypothesis: ex.hypothesis.clone(),
            label: ex.label.to_string(),
        }),
    )
}

/// Every text field of the dialogues.
pub fn dialogue_texts(data: &[DialogueExample]) -> Vec<&str> {
    let mut out = Vec::new();
    for ex in data {
        out.extend(ex.persona.iter().map(String::as_str));
        out.push(&ex.query);
        out.push(&ex.response);
    }
    out
}

pub fn nli_texts(data: &[NliExample]) -> Vec<&str> {
    let mut out = Vec::new();
    for ex in data {
        out.extend(ex.premise.iter().map(String::as_str));
        out.push(&ex.hypothesis);
    }
    out
}

/// Reserved tokens first, then tokens seen at least `min_count` times by
/// descending count and then lexicographically, truncated to `max_size`
/// non-reserved entries.
pub fn build_vocab<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    min_count: usize,
    max_size: Option<usize>,
) -> Result<Vocab> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in texts {
        for tok in tokenize(t) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count.max(1) && !RESERVED_TOKENS.contains(&t.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if let Some(n) = max_size {
        ranked.truncate(n);
    }
    Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

struct Topic {
    /// Statement with `{}` for the value.
    template: &'static str,
    questions: [&'static str; 2],
    values: [&'static str; 12],
}

const TOPICS: [Topic; 7] = [
    Topic {
        template: "i have a {} .",
        questions: ["what pet do you have ?", "do you have any pets ?"],
        values: [
            "dog", "cat", "fish", "bird", "hamster", "rabbit", "snake", "turtle", "horse", "lizard",
            "parrot", "ferret",
        ],
    },
    Topic {
        template: "i like to eat {} .",
        questions: ["what food do you like ?", "what do you like to eat ?"],
        values: [
            "pizza", "pasta", "sushi", "tacos", "salad", "burgers", "soup", "steak", "rice",
            "noodles", "curry", "bread",
        ],
    },
    Topic {
        template: "i work as a {} .",
        questions: ["what do you do for work ?", "what is your job ?"],
        values: [
            "teacher", "nurse", "doctor", "chef", "pilot", "farmer", "lawyer", "baker", "driver",
            "singer", "writer", "painter",
        ],
    },
    Topic {
        template: "my favorite color is {} .",
        questions: ["what is your favorite color ?", "which color do you like best ?"],
        values: [
            "red", "blue", "green", "yellow", "purple", "orange", "pink", "black", "white", "gray",
            "brown", "gold",
        ],
    },
    Topic {
        template: "i live in {} .",
        questions: ["where do you live ?", "which city are you from ?"],
        values: [
            "paris", "london", "tokyo", "berlin", "rome", "madrid", "boston", "chicago", "dublin",
            "sydney", "toronto", "seattle",
        ],
    },
    Topic {
        template: "i play {} .",
        questions: ["what sport do you play ?", "do you play any sports ?"],
        values: [
            "soccer", "tennis", "golf", "chess", "hockey", "baseball", "rugby", "cricket",
            "volleyball", "basketball", "football", "badminton",
        ],
    },
    Topic {
        template: "i listen to {} music .",
        questions: ["what music do you like ?", "what do you listen to ?"],
        values: [
            "rock", "jazz", "pop", "rap", "blues", "metal", "folk", "country", "techno", "reggae",
            "soul", "disco",
        ],
    },
];

/// Discourse prefixes a dialogue response may start with.
pub const RESPONSE_PREFIXES: [&str; 3] = ["", "well ,", "oh ,"];
/// Wider choice of prefixes and tails for NLI hypotheses.
pub const HYPOTHESIS_PREFIXES: [&str; 7] = ["", "well ,", "oh ,", "yes ,", "actually ,", "haha ,", "honestly ,"];
pub const HYPOTHESIS_SUFFIXES: [&str; 3] = ["", "how about you ?", "and you ?"];

pub const MAX_TOPICS: usize = TOPICS.len();
pub const MAX_VALUES: usize = 12;

/// One persona fact: indices into the topic and value tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fact {
    pub topic: usize,
    pub value: usize,
}

impl Fact {
    pub fn sentence(self) -> String {
        TOPICS[self.topic]
            .template
            .replace("{}", TOPICS[self.topic].values[self.value])
    }
}

/// Reads the fact stated by a template sentence, ignoring any discourse
/// prefix or tail. `None` for anything that is not exactly one template.
pub fn parse_fact(text: &str) -> Option<Fact> {
    let mut s = normalize(text);
    for p in HYPOTHESIS_PREFIXES.iter().filter(|p| !p.is_empty()) {
        if let Some(rest) = s.strip_prefix(&format!("{p} ")) {
            s = rest.to_string();
            break;
        }
    }
    for x in HYPOTHESIS_SUFFIXES.iter().filter(|x| !x.is_empty()) {
        if let Some(rest) = s.strip_suffix(&format!(" {x}")) {
            s = rest.to_string();
            break;
        }
    }
    for (t, topic) in TOPICS.iter().enumerate() {
        let (head, tail) = topic.template.split_once("{}").expect("template has a slot");
        if let Some(v) = s.strip_prefix(head).and_then(|r| r.strip_suffix(tail)) {
            if let Some(value) = topic.values.iter().position(|x| *x == v) {
                return Some(Fact { topic: t, value });
            }
        }
    }
    None
}

/// Ground-truth label of a template premise / hypothesis pair. Unparseable
/// hypotheses are neutral.
pub fn oracle_label(premise: &[String], hypothesis: &str) -> NliLabel {
    let Some(h) = parse_fact(hypothesis) else {
        return NliLabel::Neutral;
    };
    let facts: Vec<Fact> = premise.iter().filter_map(|s| parse_fact(s)).collect();
    if facts.contains(&h) {
        NliLabel::Entailment
    } else if facts.iter().any(|f| f.topic == h.topic) {
        NliLabel::Contradiction
    } else {
        NliLabel::Neutral
    }
}

/// Entailed by at least one persona sentence.
pub fn oracle_entailed(persona: &[String], response: &str) -> bool {
    persona
        .iter()
        .any(|s| oracle_label(std::slice::from_ref(s), response) == NliLabel::Entailment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub topics: usize,
    pub values_per_topic: usize,
    pub persona_size: usize,
    pub train_dialogues: usize,
    pub valid_dialogues: usize,
    pub test_dialogues: usize,
    pub nli_train: usize,
    pub nli_test: usize,
    /// Entailment, neutral, contradiction shares.
    pub nli_mix: [f64; 3],
    /// Probability that an NLI premise is a whole persona rather than a
    /// single sentence.
    pub nli_persona_premise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            topics: MAX_TOPICS,
            values_per_topic: MAX_VALUES,
            persona_size: 4,
            train_dialogues: 2000,
            valid_dialogues: 200,
            test_dialogues: 200,
            nli_train: 3000,
            nli_test: 300,
            nli_mix: [1.0 / 3.0; 3],
            nli_persona_premise: 0.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GdrError::Invalid(m.into()));
        if self.topics == 0 || self.topics > MAX_TOPICS {
            return bad("topics must be in 1..=7");
        }
        if self.values_per_topic < 2 || self.values_per_topic > MAX_VALUES {
            return bad("values_per_topic must be in 2..=12");
        }
        if self.persona_size == 0 || self.persona_size >= self.topics {
            return bad("persona_size must be positive and below the topic count");
        }
        let sizes = [
            self.train_dialogues,
            self.valid_dialogues,
            self.test_dialogues,
            self.nli_train,
            self.nli_test,
        ];
        if sizes.contains(&0) {
            return bad("all split sizes must be positive");
        }
        if self.nli_mix.iter().any(|p| !(0.0..=1.0).contains(p))
            || (self.nli_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad("nli_mix must be probabilities summing to 1");
        }
        if !(0.0..=1.0).contains(&self.nli_persona_premise) {
            return bad("nli_persona_premise must be a probability");
        }
        // Distinct dialogues: topic subsets × value choices × asked topic ×
        // distractor × question × prefix (persona order ignored).
        let v = self.values_per_topic as f64;
        let subsets = binomial(self.topics, self.persona_size);
        let space = subsets * v.powi(self.persona_size as i32) * self.persona_size as f64 * (v - 1.0) * 2.0 * 3.0;
        let wanted = (self.train_dialogues + self.valid_dialogues + self.test_dialogues) as f64;
        if wanted * 4.0 > space {
            return bad("requested dialogues exceed the template space");
        }
        // With single-sentence premises every label has a small, countable
        // space; whole-persona premises make it effectively unbounded.
        if self.nli_persona_premise == 0.0 {
            let facts = (self.topics * self.values_per_topic) as f64;
            let forms = (HYPOTHESIS_PREFIXES.len() * HYPOTHESIS_SUFFIXES.len()) as f64;
            let per_label = [
                facts * forms,
                facts * ((self.topics - 1) * self.values_per_topic) as f64 * forms,
                facts * (v - 1.0) * forms,
            ];
            let total = (self.nli_train + self.nli_test) as f64;
            if (0..3).any(|l| total * self.nli_mix[l] * 1.25 > per_label[l]) {
                return bad("requested NLI triples exceed the template space");
            }
        }
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<DialogueExample>,
    pub valid: Vec<DialogueExample>,
    pub test: Vec<DialogueExample>,
    pub nli_train: Vec<NliExample>,
    pub nli_test: Vec<NliExample>,
}

impl SyntheticCorpus {
    /// Vocabulary covering every token of every split.
    pub fn vocab(&self) -> Result<Vocab> {
        let mut texts = Vec::new();
        for split in [&self.train, &self.valid, &self.test] {
            texts.extend(dialogue_texts(split));
        }
        texts.extend(nli_texts(&self.nli_train));
        texts.extend(nli_texts(&self.nli_test));
        build_vocab(texts, 1, None)
    }

    /// Writes `dialogues.{train,valid,test}.jsonl`, `nli.{train,test}.jsonl`
    /// and `vocab.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| GdrError::io(dir, e))?;
        save_dialogues(&dir.join("dialogues.train.jsonl"), &self.train)?;
        save_dialogues(&dir.join("dialogues.valid.jsonl"), &self.valid)?;
        save_dialogues(&dir.join("dialogues.test.jsonl"), &self.test)?;
        save_nli(&dir.join("nli.train.jsonl"), &self.nli_train)?;
        save_nli(&dir.join("nli.test.jsonl"), &self.nli_test)?;
        self.vocab()?.save(&dir.join("vocab.txt"))
    }
}

struct Sampler<'a> {
    spec: &'a SyntheticSpec,
    rng: ChaCha8Rng,
}

impl Sampler<'_> {
    fn persona(&mut self) -> Vec<Fact> {
        let mut topics: Vec<usize> = (0..self.spec.topics).collect();
        topics.shuffle(&mut self.rng);
        topics
            .into_iter()
            .take(self.spec.persona_size)
            .map(|topic| Fact {
                topic,
                value: self.rng.gen_range(0..self.spec.values_per_topic),
            })
            .collect()
    }

    fn other_value(&mut self, value: usize) -> usize {
        let v = self.rng.gen_range(0..self.spec.values_per_topic - 1);
        if v >= value {
            v + 1
        } else {
            v
        }
    }

    fn prefixed(&mut self, fact: Fact) -> String {
        let p = RESPONSE_PREFIXES[self.rng.gen_range(0..RESPONSE_PREFIXES.len())];
        if p.is_empty() {
            fact.sentence()
        } else {
            format!("{p} {}", fact.sentence())
        }
    }

    fn dialogue(&mut self) -> DialogueExample {
        let persona = self.persona();
        let asked = persona[self.rng.gen_range(0..persona.len())];
        let distractor = Fact {
            topic: asked.topic,
            value: self.other_value(asked.value),
        };
        let question = TOPICS[asked.topic].questions[self.rng.gen_range(0..2)];
        DialogueExample {
            persona: persona.iter().map(|f| f.sentence()).collect(),
            query: format!("{} {question}", distractor.sentence()),
            response: self.prefixed(asked),
        }
    }

    fn nli(&mut self, label: NliLabel) -> NliExample {
        let whole = self.rng.gen_bool(self.spec.nli_persona_premise);
        let premise: Vec<Fact> = if whole {
            self.persona()
        } else {
            let mut p = self.persona();
            p.truncate(1);
            p
        };
        let anchor = premise[self.rng.gen_range(0..premise.len())];
        let hyp = match label {
            NliLabel::Entailment => anchor,
            NliLabel::Contradiction => Fact {
                topic: anchor.topic,
                value: self.other_value(anchor.value),
            },
            NliLabel::Neutral => {
                let free: Vec<usize> = (0..self.spec.topics)
                    .filter(|t| premise.iter().all(|f| f.topic != *t))
                    .collect();
                Fact {
                    topic: free[self.rng.gen_range(0..free.len())],
                    value: self.rng.gen_range(0..self.spec.values_per_topic),
                }
            }
        };
        let head = HYPOTHESIS_PREFIXES[self.rng.gen_range(0..HYPOTHESIS_PREFIXES.len())];
        let tail = HYPOTHESIS_SUFFIXES[self.rng.gen_range(0..HYPOTHESIS_SUFFIXES.len())];
        let hypothesis = [head, &hyp.sentence(), tail]
            .iter()
            .filter(|x| !x.is_empty())
            .copied()
            .collect::<Vec<_>>()
            .join(" ");
        NliExample {
            premise: premise.iter().map(|f| f.sentence()).collect(),
            hypothesis,
            label,
        }
    }
}

fn unique<T: Clone + Eq + std::hash::Hash>(
    n: usize,
    seen: &mut HashSet<T>,
    mut draw: impl FnMut() -> T,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 50 * n + 1000 {
            return Err(GdrError::Invalid("could not draw enough distinct examples".into()));
        }
        let x = draw();
        if seen.insert(x.clone()) {
            out.push(x);
        }
    }
    Ok(out)
}

/// Deterministic corpus from `spec`; all splits are mutually disjoint.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut s = Sampler {
        spec,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
    };
    let mut seen = HashSet::new();
    let train = unique(spec.train_dialogues, &mut seen, || s.dialogue())?;
    let valid = unique(spec.valid_dialogues, &mut seen, || s.dialogue())?;
    let test = unique(spec.test_dialogues, &mut seen, || s.dialogue())?;

    let mix = WeightedIndex::new(spec.nli_mix).map_err(|e| GdrError::Invalid(e.to_string()))?;
    let mut nli_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6e6c69);
    let mut seen = HashSet::new();
    let mut draw = || {
        let label = NliLabel::ALL[mix.sample(&mut nli_rng)];
        s.nli(label)
    };
    let nli_train = unique(spec.nli_train, &mut seen, &mut draw)?;
    let nli_test = unique(spec.nli_test, &mut seen, &mut draw)?;
    Ok(SyntheticCorpus {
        train,
        valid,
        test,
        nli_train,
        nli_test,
    })
}
