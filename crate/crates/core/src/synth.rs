//! Seeded toy languages and corpora for desk-scale experiments.
//!
//! Every language renders the same concept inventory through its own
//! lexicon and word order, so parallel text is obtained by rendering one
//! concept sequence twice. Related languages copy part of a parent lexicon.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

const N_NOUNS: usize = 60;
const N_VERBS: usize = 24;
const N_ADJS: usize = 16;
const N_PREPS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Concept {
    Noun(usize),
    Verb(usize),
    Adj(usize),
    Prep(usize),
    Det,
}

fn all_concepts() -> impl Iterator<Item = Concept> {
    (0..N_NOUNS)
        .map(Concept::Noun)
        .chain((0..N_VERBS).map(Concept::Verb))
        .chain((0..N_ADJS).map(Concept::Adj))
        .chain((0..N_PREPS).map(Concept::Prep))
        .chain(std::iter::once(Concept::Det))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyLanguage {
    pub code: String,
    lexicon: BTreeMap<Concept, String>,
    verb_final: bool,
    adj_after_noun: bool,
}

struct Phonology {
    onsets: Vec<&'static str>,
    vowels: Vec<&'static str>,
    codas: Vec<&'static str>,
}

const ONSETS: [&str; 18] = [
    "p", "t", "k", "b", "d", "g", "m", "n", "l", "r", "s", "f", "v", "z", "h", "w", "j", "ch",
];
const VOWELS: [&str; 7] = ["a", "e", "i", "o", "u", "ou", "è"];
const CODAS: [&str; 5] = ["", "", "n", "s", "r"];

fn phonology(rng: &mut ChaCha8Rng) -> Phonology {
    let pick = |rng: &mut ChaCha8Rng, from: &[&'static str], n: usize| -> Vec<&'static str> {
        from.choose_multiple(rng, n).copied().collect()
    };
    Phonology {
        onsets: pick(rng, &ONSETS, 10),
        vowels: pick(rng, &VOWELS, 4),
        codas: pick(rng, &CODAS, 3),
    }
}

fn fresh_word(p: &Phonology, rng: &mut ChaCha8Rng, short: bool) -> String {
    let syllables = if short { 1 } else { rng.random_range(1..=3) };
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(p.onsets.choose(rng).expect("non-empty"));
        w.push_str(p.vowels.choose(rng).expect("non-empty"));
    }
    w.push_str(p.codas.choose(rng).expect("non-empty"));
    w
}

impl ToyLanguage {
    /// A language with a fresh lexicon.
    pub fn isolate(code: &str, seed: u64) -> Self {
        Self::derive(code, None, 0.0, seed)
    }

    /// A language keeping each parent word with probability `share`.
    pub fn related(code: &str, parent: &ToyLanguage, share: f64, seed: u64) -> Self {
        Self::derive(code, Some(parent), share, seed)
    }

    fn derive(code: &str, parent: Option<&ToyLanguage>, share: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = phonology(&mut rng);
        let mut lexicon = BTreeMap::new();
        let mut used = std::collections::BTreeSet::new();
        for c in all_concepts() {
            let inherited = parent
                .filter(|_| rng.random_bool(share))
                .map(|par| par.lexicon[&c].clone());
            let mut w = match inherited {
                Some(w) if !used.contains(&w) => w,
                _ => fresh_word(&p, &mut rng, matches!(c, Concept::Det | Concept::Prep(_))),
            };
            while used.contains(&w) {
                w = fresh_word(&p, &mut rng, false);
            }
            used.insert(w.clone());
            lexicon.insert(c, w);
        }
        let (verb_final, adj_after_noun) = match parent {
            Some(par) => (par.verb_final, par.adj_after_noun),
            None => (rng.random_bool(0.5), rng.random_bool(0.5)),
        };
        Self {
            code: code.to_string(),
            lexicon,
            verb_final,
            adj_after_noun,
        }
    }

    /// Determiner and prepositions, the closest thing to a stopword list.
    pub fn function_words(&self) -> Vec<&str> {
        self.lexicon
            .iter()
            .filter(|(c, _)| matches!(c, Concept::Det | Concept::Prep(_)))
            .map(|(_, w)| w.as_str())
            .collect()
    }

    fn noun_phrase(&self, np: &NounPhrase, out: &mut Vec<String>) {
        out.push(self.lexicon[&Concept::Det].clone());
        let noun = self.lexicon[&Concept::Noun(np.noun)].clone();
        match np.adj {
            Some(a) if self.adj_after_noun => {
                out.push(noun);
                out.push(self.lexicon[&Concept::Adj(a)].clone());
            }
            Some(a) => {
                out.push(self.lexicon[&Concept::Adj(a)].clone());
                out.push(noun);
            }
            None => out.push(noun),
        }
    }

    pub fn render(&self, s: &Sentence) -> String {
        let mut words = Vec::new();
        self.noun_phrase(&s.subject, &mut words);
        let verb = self.lexicon[&Concept::Verb(s.verb)].clone();
        if !self.verb_final {
            words.push(verb.clone());
        }
        self.noun_phrase(&s.object, &mut words);
        if self.verb_final {
            words.push(verb);
        }
        if let Some((prep, np)) = &s.adjunct {
            words.push(self.lexicon[&Concept::Prep(*prep)].clone());
            self.noun_phrase(np, &mut words);
        }
        let mut text = words.join(" ");
        if let Some(first) = text.chars().next() {
            let upper: String = first.to_uppercase().collect();
            text.replace_range(..first.len_utf8(), &upper);
        }
        text.push('.');
        text
    }
}

#[derive(Debug, Clone, PartialEq)]
struct NounPhrase {
    noun: usize,
    adj: Option<usize>,
}

/// Language-independent sentence content.
#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    subject: NounPhrase,
    verb: usize,
    object: NounPhrase,
    adjunct: Option<(usize, NounPhrase)>,
}

/// Zipf-weighted sampler of sentence contents.
pub struct SentenceSampler {
    rng: ChaCha8Rng,
    nouns: WeightedIndex<f64>,
    verbs: WeightedIndex<f64>,
}

fn zipf(n: usize) -> WeightedIndex<f64> {
    WeightedIndex::new((0..n).map(|r| 1.0 / (r as f64 + 1.0))).expect("positive weights")
}

impl SentenceSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            nouns: zipf(N_NOUNS),
            verbs: zipf(N_VERBS),
        }
    }

    fn np(&mut self) -> NounPhrase {
        let noun = self.nouns.sample(&mut self.rng);
        let adj = self.rng.random_bool(0.4).then(|| self.rng.random_range(0..N_ADJS));
        NounPhrase { noun, adj }
    }

    pub fn sample(&mut self) -> Sentence {
        let subject = self.np();
        let verb = self.verbs.sample(&mut self.rng);
        let object = self.np();
        let adjunct = self.rng.random_bool(0.3).then(|| {
            let p = self.rng.random_range(0..N_PREPS);
            (p, self.np())
        });
        Sentence {
            subject,
            verb,
            object,
            adjunct,
        }
    }
}

/// Lines that the cleaning rules are expected to drop.
const JUNK: [&str; 6] = [
    "- menu item",
    "Lorem ipsum dolor sit amet, consectetur adipiscing elit.",
    "Call 555 0199 2231 4417 today.",
    "Ok.",
    "* * *",
    "CLICK HERE TO SUBSCRIBE NOW.",
];

/// `n_docs` documents, one per line, of 2-5 sentences; roughly one in
/// eight documents also carries a junk line.
pub fn monolingual_documents(lang: &ToyLanguage, n_docs: usize, seed: u64) -> Vec<String> {
    let mut sampler = SentenceSampler::new(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..n_docs)
        .map(|_| {
            let n = rng.random_range(2..=5);
            let mut sents: Vec<String> = (0..n).map(|_| lang.render(&sampler.sample())).collect();
            if rng.random_bool(0.125) {
                let junk = JUNK.choose(&mut rng).expect("non-empty");
                let at = rng.random_range(0..=sents.len());
                sents.insert(at, junk.to_string());
            }
            sents.join(" ")
        })
        .collect()
}

/// `n` aligned sentence pairs.
pub fn parallel_pairs(src: &ToyLanguage, tgt: &ToyLanguage, n: usize, seed: u64) -> Vec<(String, String)> {
    let mut sampler = SentenceSampler::new(seed);
    (0..n)
        .map(|_| {
            let s = sampler.sample();
            (src.render(&s), tgt.render(&s))
        })
        .collect()
}

/// The bundled toy family: two creoles sharing a lexifier, an isolate, and
/// the translation target.
pub fn toy_family(seed: u64) -> Vec<ToyLanguage> {
    let lex = ToyLanguage::isolate("lex", seed);
    let cr1 = ToyLanguage::related("cr1", &lex, 0.7, seed + 1);
    let cr2 = ToyLanguage::related("cr2", &lex, 0.6, seed + 2);
    let iso = ToyLanguage::isolate("iso", seed + 3);
    let eng = ToyLanguage::isolate("eng", seed + 4);
    vec![cr1, cr2, lex, iso, eng]
}
