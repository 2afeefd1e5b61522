//! Network-free planner that mirrors the LLM planner's output contract.
//!
//! The grammar is deliberately small:
//!
//! * the query is split into sentences, and sentences are split again in
//!   front of a conditional lead (`if`, `upon`, `otherwise`) that follows a
//!   comma or conjunction, and in front of `and`/`then` when an intent verb
//!   follows;
//! * a chunk opening with a conditional lead gates its task on the task
//!   emitted just before it. The lead runs to the first comma (or up to the
//!   intent verb); it is negative when it contains a negation such as
//!   `not`, `negative`, `absent` or `inconclusive`, positive otherwise;
//! * the earliest intent verb in the chunk picks the intent, and a chunk
//!   that opens like a yes/no question (`Does ...`, `Is there ...`) is a
//!   classification;
//! * targets and modalities are found by longest-leftmost phrase matching
//!   against the registry vocabulary and the lexicon keys that map into it.
//!   A chunk without a known target falls back to the noun phrase after the
//!   intent verb, so unsupported targets still reach routing and get
//!   skipped there.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::naming::Intent;
use crate::normalize::SynonymLexicon;
use crate::plan::{validate_plan, ConditionPredicate, Plan, PlanError, TaskSpec};
use crate::registry::ReferenceVocab;
use crate::text::canonicalize;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OfflineError {
    #[error("no imaging task recognized in {0:?}")]
    NoTaskRecognized(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

const SEGMENTATION_VERBS: &[&str] = &[
    "segment", "isolat", "delimit", "delineat", "outlin", "mask", "contour", "trace", "extract",
];
const CLASSIFICATION_VERBS: &[&str] = &[
    "detect", "classif", "check", "assess", "screen", "examin", "evaluat", "determin", "diagnos",
    "identif", "find", "look", "test", "inspect", "verify", "predict", "recogni",
];
const QUESTION_OPENERS: &[&str] = &["is", "are", "does", "do", "did", "can", "could", "has", "have"];
const CONDITION_LEADS: &[&str] = &["if", "upon", "otherwise"];
const NEGATIONS: &[&str] = &[
    "not", "negative", "absent", "inconclusive", "no", "none", "normal", "otherwise", "unless",
];
const LEAD_WORDS: &[&str] = &[
    "confirmed", "confirmation", "found", "detected", "present", "positive", "negative", "not",
    "absent", "inconclusive", "so", "yes", "no",
];
const CONJUNCTIONS: &[&str] = &["and", "then", "also"];
const PRONOUNS: &[&str] = &["it", "them", "they", "this", "that"];
const LEADING_FILLER: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "any", "some", "all", "given", "provided",
    "possible", "potential", "signs", "sign", "of", "indications", "indication", "evidence",
    "presence", "for", "whether", "there", "is", "are", "be", "out", "up", "me", "please",
];
const STOP_WORDS: &[&str] = &[
    "in", "from", "on", "using", "with", "to", "within", "at", "by", "for", "and", "so", "of",
    "is", "are", "present", "visible",
];
const GENERIC_NOUNS: &[&str] = &[
    "region", "regions", "area", "areas", "image", "images", "scan", "scans", "picture", "photo",
    "part", "parts", "zone",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TermKind {
    Target,
    Modality,
}

#[derive(Debug, Clone)]
struct Term {
    raw: String,
    kind: TermKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Word(String),
    Comma,
}

struct Match<'a> {
    start: usize,
    len: usize,
    term: &'a Term,
}

/// Phrase dictionary built from a vocabulary and lexicon.
pub struct OfflineParser {
    terms: BTreeMap<String, Term>,
    max_words: usize,
}

/// Hyphens and spaces are interchangeable when matching phrases.
fn phrase_key(text: &str) -> String {
    let canon = canonicalize(text).replace('-', " ");
    canonicalize(&canon)
}

impl OfflineParser {
    pub fn new(vocab: &ReferenceVocab, lexicon: &SynonymLexicon) -> Self {
        let mut terms = BTreeMap::new();
        let kind_of = |value: &str| {
            if vocab.targets.contains(value) {
                Some(TermKind::Target)
            } else if vocab.modalities.contains(value) {
                Some(TermKind::Modality)
            } else {
                None
            }
        };
        let add = |terms: &mut BTreeMap<String, Term>, phrase: &str, kind: TermKind, force: bool| {
            let key = phrase_key(phrase);
            if key.is_empty() {
                return;
            }
            let plural = alloc::format!("{key}s");
            let term = Term {
                raw: phrase.to_string(),
                kind,
            };
            let singular_s = key.ends_with('s');
            if force || !terms.contains_key(&key) {
                terms.insert(key, term.clone());
            }
            if !singular_s {
                terms.entry(plural).or_insert(term);
            }
        };
        for (key, value) in lexicon.iter() {
            if let Some(kind) = kind_of(value) {
                add(&mut terms, key, kind, false);
            }
        }
        for t in &vocab.targets {
            add(&mut terms, t, TermKind::Target, true);
        }
        for m in &vocab.modalities {
            if !vocab.targets.contains(m) {
                add(&mut terms, m, TermKind::Modality, true);
            }
        }
        let max_words = terms.keys().map(|k| k.split(' ').count()).max().unwrap_or(1);
        Self { terms, max_words }
    }

    pub fn parse(&self, query: &str) -> Result<Plan, OfflineError> {
        let chunks: Vec<Vec<Token>> = sentences(query).flat_map(|s| split_chunks(tokenize(s))).collect();
        let query_modality = chunks.iter().find_map(|c| {
            let words = words_of(c);
            self.scan(&words)
                .into_iter()
                .find(|m| m.term.kind == TermKind::Modality)
                .map(|m| m.term.raw.clone())
        });

        let mut tasks: Vec<TaskSpec> = Vec::new();
        for chunk in &chunks {
            let (lead, body) = split_lead(chunk);
            let words = words_of(body);
            let Some((intent, verb_at)) = find_intent(&words) else {
                continue;
            };
            let matches = self.scan(&words);
            let modality = matches
                .iter()
                .find(|m| m.term.kind == TermKind::Modality)
                .map(|m| m.term.raw.clone())
                .or_else(|| query_modality.clone());
            let target = matches
                .iter()
                .filter(|m| m.term.kind == TermKind::Target)
                .find(|m| m.start >= verb_at)
                .or_else(|| matches.iter().find(|m| m.term.kind == TermKind::Target))
                .map(|m| m.term.raw.clone())
                .or_else(|| fallback_target(&words, verb_at, &matches, tasks.last()));
            let Some(target) = target else {
                continue;
            };

            let condition = match (lead, tasks.last()) {
                (Some(lead), Some(prev)) => Some(if is_negative(&lead) {
                    ConditionPredicate::negative(&prev.task_id)
                } else {
                    ConditionPredicate::positive(&prev.task_id)
                }),
                _ => None,
            };
            tasks.push(TaskSpec {
                task_id: alloc::format!("t{}", tasks.len() + 1),
                intent,
                raw_target: target,
                raw_modality: modality,
                depends_on: condition.iter().map(|c| c.source_task.clone()).collect(),
                condition,
            });
        }

        if tasks.is_empty() {
            return Err(OfflineError::NoTaskRecognized(query.to_string()));
        }
        let plan = Plan {
            query: query.to_string(),
            tasks,
        };
        validate_plan(&plan)?;
        Ok(plan)
    }

    fn scan(&self, words: &[String]) -> Vec<Match<'_>> {
        let mut found = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let longest = (1..=self.max_words.min(words.len() - i)).rev().find_map(|n| {
                let key = words[i..i + n].join(" ");
                self.terms.get(&key).map(|term| Match { start: i, len: n, term })
            });
            match longest {
                Some(m) => {
                    i += m.len;
                    found.push(m);
                }
                None => i += 1,
            }
        }
        found
    }
}

/// Parses `query` with a parser built from `vocab` and `lexicon`.
pub fn offline_parse(query: &str, vocab: &ReferenceVocab, lexicon: &SynonymLexicon) -> Result<Plan, OfflineError> {
    OfflineParser::new(vocab, lexicon).parse(query)
}

fn sentences(query: &str) -> impl Iterator<Item = &str> {
    query
        .split(['.', '?', '!', ';', '\n'])
        .filter(|s| !s.trim().is_empty())
}

fn tokenize(sentence: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    for chunk in sentence.split_whitespace() {
        let word = canonicalize(chunk);
        for part in word.split('-').filter(|p| !p.is_empty()) {
            tokens.push(Token::Word(part.to_string()));
        }
        if chunk.ends_with([',', ':']) {
            tokens.push(Token::Comma);
        }
    }
    tokens
}

fn words_of(tokens: &[Token]) -> Vec<String> {
    tokens
        .iter()
        .filter_map(|t| match t {
            Token::Word(w) => Some(w.clone()),
            Token::Comma => None,
        })
        .collect()
}

fn is_word(token: &Token, set: &[&str]) -> bool {
    matches!(token, Token::Word(w) if set.contains(&w.as_str()))
}

fn verb_intent(word: &str) -> Option<Intent> {
    if SEGMENTATION_VERBS.iter().any(|v| word.starts_with(v)) {
        Some(Intent::Segmentation)
    } else if CLASSIFICATION_VERBS.iter().any(|v| word.starts_with(v)) {
        Some(Intent::Classification)
    } else {
        None
    }
}

fn starts_with_verb(tokens: &[Token]) -> bool {
    tokens
        .iter()
        .filter_map(|t| match t {
            Token::Word(w) => Some(w.as_str()),
            Token::Comma => None,
        })
        .find(|w| !CONJUNCTIONS.contains(w))
        .is_some_and(|w| verb_intent(w).is_some())
}

/// Splits a sentence in front of conditional leads and verb-led
/// conjunctions.
fn split_chunks(tokens: Vec<Token>) -> Vec<Vec<Token>> {
    let mut chunks = Vec::new();
    let mut current: Vec<Token> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let token = &tokens[i];
        let after_break = current.is_empty()
            || matches!(current.last(), Some(Token::Comma))
            || current.last().is_some_and(|t| is_word(t, CONJUNCTIONS));
        let lead_here = is_word(token, CONDITION_LEADS) && after_break && !current.is_empty();
        let conj_here = is_word(token, CONJUNCTIONS)
            && !current.is_empty()
            && starts_with_verb(&tokens[i + 1..]);
        if lead_here || conj_here {
            while current
                .last()
                .is_some_and(|t| matches!(t, Token::Comma) || is_word(t, CONJUNCTIONS))
            {
                current.pop();
            }
            if !current.is_empty() {
                chunks.push(core::mem::take(&mut current));
            }
            if conj_here {
                i += 1;
                continue;
            }
        }
        current.push(token.clone());
        i += 1;
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    chunks
}

/// Separates a leading conditional clause from the task it gates.
fn split_lead(chunk: &[Token]) -> (Option<Vec<String>>, &[Token]) {
    let start = chunk.iter().position(|t| !is_word(t, CONJUNCTIONS)).unwrap_or(chunk.len());
    let chunk = &chunk[start..];
    if !chunk.first().is_some_and(|t| is_word(t, CONDITION_LEADS)) {
        return (None, chunk);
    }
    let end = match chunk.iter().position(|t| matches!(t, Token::Comma)) {
        Some(comma) => comma,
        None => {
            let fixed = 1 + chunk[1..].iter().take_while(|t| is_word(t, LEAD_WORDS)).count();
            if chunk[fixed..].iter().any(|t| matches!(t, Token::Word(w) if verb_intent(w).is_some())) && fixed > 1 {
                fixed
            } else {
                chunk
                    .iter()
                    .position(|t| matches!(t, Token::Word(w) if verb_intent(w).is_some()))
                    .unwrap_or(fixed)
            }
        }
    };
    let lead = words_of(&chunk[..end]);
    let body = chunk.get(end..).unwrap_or(&[]);
    let body = match body.first() {
        Some(Token::Comma) => &body[1..],
        _ => body,
    };
    (Some(lead), body)
}

fn is_negative(lead: &[String]) -> bool {
    lead.iter().any(|w| NEGATIONS.contains(&w.as_str()))
}

fn find_intent(words: &[String]) -> Option<(Intent, usize)> {
    if words.first().is_some_and(|w| QUESTION_OPENERS.contains(&w.as_str())) {
        let seg = words
            .iter()
            .position(|w| verb_intent(w) == Some(Intent::Segmentation));
        return Some(match seg {
            Some(at) => (Intent::Segmentation, at),
            None => (Intent::Classification, 0),
        });
    }
    words
        .iter()
        .enumerate()
        .find_map(|(i, w)| verb_intent(w).map(|intent| (intent, i)))
}

fn fallback_target(words: &[String], verb_at: usize, matches: &[Match<'_>], prev: Option<&TaskSpec>) -> Option<String> {
    let covered = |i: usize| {
        matches
            .iter()
            .any(|m| m.term.kind == TermKind::Modality && i >= m.start && i < m.start + m.len)
    };
    let mut phrase: Vec<&str> = Vec::new();
    for (i, w) in words.iter().enumerate().skip(verb_at + 1) {
        if covered(i) || verb_intent(w).is_some() {
            if phrase.is_empty() {
                continue;
            }
            break;
        }
        if phrase.is_empty() {
            if PRONOUNS.contains(&w.as_str()) && !words.get(i + 1).is_some_and(|n| !STOP_WORDS.contains(&n.as_str())) {
                return prev.map(|p| p.raw_target.clone());
            }
            if LEADING_FILLER.contains(&w.as_str()) {
                continue;
            }
        }
        if STOP_WORDS.contains(&w.as_str()) {
            break;
        }
        phrase.push(w);
    }
    while phrase.last().is_some_and(|w| GENERIC_NOUNS.contains(w)) {
        phrase.pop();
    }
    if phrase.is_empty() {
        None
    } else {
        Some(phrase.join(" "))
    }
}
