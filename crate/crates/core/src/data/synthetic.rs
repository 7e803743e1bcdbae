//! Templated multi-domain review corpus with the label statistics of a
//! subjective QA dataset, plus an optional objective encyclopedic slice.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetSource, QAExample, REVIEW_DOMAINS, WIKIPEDIA};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub domains: Vec<String>,
    pub n_per_domain: usize,
    pub answerable_rate: f64,
    /// Fraction of review questions with a subjective Likert score.
    pub subjective_rate: f64,
    /// Number of encyclopedic (always objective) examples appended.
    pub squad_like: usize,
    pub squad_answerable_rate: f64,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            domains: REVIEW_DOMAINS.iter().map(|s| s.to_string()).collect(),
            n_per_domain: 100,
            answerable_rate: 0.44,
            subjective_rate: 0.827,
            squad_like: 0,
            squad_answerable_rate: 0.535,
            min_sentences: 3,
            max_sentences: 5,
            seed: 0,
        }
    }
}

/// Interrogative words and their shares among subjective review questions.
const SUBJ_PREFIXES: [(&str, f64); 5] = [("how", 61.41), ("what", 16.53), ("is", 7.95), ("does", 2.93), ("do", 2.23)];
const OBJ_PREFIXES: [(&str, f64); 5] = [("how", 42.32), ("what", 23.80), ("is", 10.49), ("where", 6.62), ("does", 4.68)];
const SQUAD_PREFIXES: [(&str, f64); 5] = [("what", 43.97), ("who", 9.92), ("how", 8.20), ("when", 5.30), ("in", 4.77)];

fn aspects(domain: &str) -> &'static [&'static str] {
    match domain {
        "books" => &["plot", "ending", "characters", "writing style", "pacing", "cover art", "dialogue", "main villain"],
        "electronics" => &["battery", "screen", "sound", "camera", "charger", "keyboard", "remote", "build quality"],
        "grocery" => &["flavor", "packaging", "sauce", "coffee", "texture", "price", "sweetness", "aroma"],
        "movies" => &["acting", "soundtrack", "special effects", "script", "ending", "cinematography", "lead actor", "story"],
        "restaurants" => &["service", "dessert", "pasta", "wine list", "staff", "atmosphere", "steak", "portion size"],
        "tripadvisor" => &["room", "breakfast", "pool", "location", "front desk", "view", "bed", "bathroom"],
        WIKIPEDIA => &["bridge", "cathedral", "university", "river", "railway", "treaty", "harbor", "museum"],
        _ => &["quality", "design", "price", "size", "color", "material", "finish", "weight"],
    }
}

fn openers(domain: &str) -> &'static [&'static str] {
    match domain {
        "books" => &["I finished this novel over the weekend.", "My book club picked this one.", "I read it on a long flight."],
        "electronics" => &["I bought this gadget last month.", "We use it every single day.", "It arrived two days early."],
        "grocery" => &["We ordered a big box of these.", "I tried this for breakfast.", "My kids eat it all the time."],
        "movies" => &["We watched it on a rainy night.", "I saw this film twice.", "The theater was almost full."],
        "restaurants" => &["We went there for a birthday dinner.", "I booked a table for four.", "It was busy on a Friday."],
        "tripadvisor" => &["We stayed three nights in June.", "I booked this hotel for a conference.", "We arrived late at night."],
        WIKIPEDIA => &["The city grew quickly in the last century.", "Historians still debate its origins.", "The region has a long record."],
        _ => &["I have used this for a while.", "It came highly recommended.", "I ordered it online."],
    }
}

const SUBJ_PHRASES: [&str; 16] = [
    "absolutely wonderful",
    "really disappointing",
    "worth every penny",
    "a bit too dull for me",
    "better than i expected",
    "simply amazing",
    "pretty mediocre overall",
    "way too loud",
    "surprisingly pleasant",
    "honestly the best part",
    "rather boring",
    "just perfect",
    "quite annoying",
    "lovely and warm",
    "awful",
    "fantastic",
];

const OBJ_PHRASES: [&str; 14] = [
    "made in germany",
    "sold in a blue box",
    "available in two sizes",
    "about ten years old",
    "listed at twenty dollars",
    "replaced last spring",
    "printed on thick paper",
    "rated for four hours",
    "located near the station",
    "built from solid oak",
    "open until midnight",
    "shipped in plastic wrap",
    "measured at two meters",
    "black",
];

const SQUAD_PHRASES: [&str; 12] = [
    "completed in 1932",
    "designed by a local engineer",
    "named after a medieval saint",
    "rebuilt after the great fire",
    "founded by merchants in 1802",
    "funded by the royal treasury",
    "extended during the war",
    "listed as a heritage site",
    "about four hundred meters long",
    "owned by the city council",
    "opened to the public in 1887",
    "restored in 1990",
];

const ANSWER_FRAMES: [(&str, &str); 4] = [
    ("The {a} is ", "."),
    ("I think the {a} was ", "."),
    ("Honestly the {a} felt ", " to me."),
    ("As for the {a}, it is ", "."),
];

const FILLER_FRAMES: [(&str, &str); 3] = [("The {a} was ", "."), ("I found the {a} ", "."), ("Our {a} seemed ", ".")];

fn question(word: &str, aspect: &str) -> String {
    match word {
        "how" => format!("How is the {aspect}?"),
        "what" => format!("What is the {aspect} like?"),
        "is" => format!("Is the {aspect} any good?"),
        "does" => format!("Does the {aspect} hold up?"),
        "do" => format!("Do people like the {aspect}?"),
        "where" => format!("Where does the {aspect} come from?"),
        "who" => format!("Who was behind the {aspect}?"),
        "when" => format!("When was the {aspect} finished?"),
        "in" => format!("In what way is the {aspect} notable?"),
        other => format!("{} about the {aspect}?", capitalize(other)),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn likert(rng: &mut ChaCha8Rng, subjective: bool) -> u8 {
    if subjective {
        rng.random_range(1..=2)
    } else {
        rng.random_range(3..=5)
    }
}

/// Exactly `round(rate · n)` true flags in shuffled order.
fn exact_flags(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<bool> {
    let k = ((rate * n as f64).round() as usize).min(n);
    let mut flags: Vec<bool> = (0..n).map(|i| i < k).collect();
    flags.shuffle(rng);
    flags
}

fn pick_prefix(rng: &mut ChaCha8Rng, table: &[(&'static str, f64)]) -> &'static str {
    let w = WeightedIndex::new(table.iter().map(|(_, p)| *p)).expect("positive weights");
    table[w.sample(rng)].0
}

struct Spec<'a> {
    domain: &'a str,
    index: usize,
    answerable: bool,
    subj_q: bool,
    subj_a: bool,
    source: DatasetSource,
}

fn build(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig, s: Spec) -> QAExample {
    let pool = aspects(s.domain);
    let aspect = *pool.choose(rng).expect("aspects");
    let prefixes: &[(&str, f64)] = match (s.source, s.subj_q) {
        (DatasetSource::SquadLike, _) => &SQUAD_PREFIXES,
        (_, true) => &SUBJ_PREFIXES,
        (_, false) => &OBJ_PREFIXES,
    };
    let q = question(pick_prefix(rng, prefixes), aspect);
    let phrase_pool: &[&str] = match (s.source, s.subj_a) {
        (DatasetSource::SquadLike, _) => &SQUAD_PHRASES,
        (_, true) => &SUBJ_PHRASES,
        (_, false) => &OBJ_PHRASES,
    };

    let lo = cfg.min_sentences.max(1);
    let n_sent = rng.random_range(lo..=cfg.max_sentences.max(lo));
    let others: Vec<&str> = pool.iter().copied().filter(|a| *a != aspect).collect();
    let mut sentences: Vec<String> = Vec::with_capacity(n_sent + 1);
    sentences.push(openers(s.domain).choose(rng).expect("openers").to_string());
    while sentences.len() < n_sent {
        let other = others.choose(rng).expect("other aspects");
        let (pre, post) = FILLER_FRAMES.choose(rng).expect("frames");
        let filler_pool: &[&str] = if rng.random_bool(0.5) { &SUBJ_PHRASES } else { &OBJ_PHRASES };
        let fill = if s.source == DatasetSource::SquadLike {
            SQUAD_PHRASES.choose(rng)
        } else {
            filler_pool.choose(rng)
        }
        .expect("phrases");
        sentences.push(format!("{}{fill}{post}", pre.replace("{a}", other)));
    }

    let (answer, answer_char_start) = if s.answerable {
        let answer = phrase_pool.choose(rng).expect("phrases").to_string();
        let (pre, post) = ANSWER_FRAMES.choose(rng).expect("frames");
        let pre = pre.replace("{a}", aspect);
        let slot = rng.random_range(1..=sentences.len());
        let offset: usize = sentences[..slot].iter().map(|x| x.chars().count() + 1).sum::<usize>()
            + pre.chars().count();
        sentences.insert(slot, format!("{pre}{answer}{post}"));
        (answer, offset as i64)
    } else {
        (String::new(), -1)
    };

    QAExample {
        id: format!("{}-{:05}", s.domain, s.index),
        question: q,
        context: sentences.join(" "),
        answer,
        answer_char_start,
        is_answerable: s.answerable,
        subj_question: likert(rng, s.subj_q),
        subj_answer: likert(rng, s.subj_a),
        domain: s.domain.to_string(),
        dataset_source: s.source,
    }
}

/// Generates `n_per_domain` review examples per domain, then the
/// encyclopedic slice. Answerable and subjective counts are exact per
/// domain (`round(rate · n)`), assigned in shuffled order.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Vec<QAExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.domains.len() * cfg.n_per_domain + cfg.squad_like);
    for domain in &cfg.domains {
        let n = cfg.n_per_domain;
        let answerable = exact_flags(&mut rng, n, cfg.answerable_rate);
        let subjective = exact_flags(&mut rng, n, cfg.subjective_rate);
        for i in 0..n {
            let subj_q = subjective[i];
            let subj_a = rng.random_bool(if subj_q { 0.9 } else { 0.3 });
            let spec = Spec {
                domain,
                index: i,
                answerable: answerable[i],
                subj_q,
                subj_a,
                source: DatasetSource::SubjLike,
            };
            out.push(build(&mut rng, cfg, spec));
        }
    }
    let answerable = exact_flags(&mut rng, cfg.squad_like, cfg.squad_answerable_rate);
    for (i, &ans) in answerable.iter().enumerate() {
        let spec = Spec {
            domain: WIKIPEDIA,
            index: i,
            answerable: ans,
            subj_q: false,
            subj_a: false,
            source: DatasetSource::SquadLike,
        };
        out.push(build(&mut rng, cfg, spec));
    }
    out
}
