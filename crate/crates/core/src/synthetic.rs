//! Small generated corpora with planted aspect patterns, used for overfit
//! checks, benches and the bundled test fixtures.
//!
//! Every aspect term is the root of its sentence's dependency tree (the
//! last word for multiword terms), so tree level indices carry the signal.
//! Nouns that serve as aspects elsewhere also appear as unlabeled modifiers.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Opinion, Review, Sentence, SplitTag};
use crate::deptree::{DepToken, DepTree};
use crate::error::Result;

const NOUNS: [&str; 10] = [
    "yemek", "servis", "mekan", "pizza", "kahve", "garson", "tatlı", "çorba", "manzara", "fiyat",
];
const ADJS: [&str; 10] = [
    "güzel", "harika", "kötü", "lezzetli", "soğuk", "pahalı", "temiz", "yavaş", "sıcak", "berbat",
];
const ADVS: [&str; 5] = ["çok", "gerçekten", "biraz", "oldukça", "fazla"];
const COMPOUNDS: [(&str, &str); 4] = [
    ("ördek", "göğsü"),
    ("kuzu", "tandır"),
    ("mercimek", "çorbası"),
    ("künefe", "tatlısı"),
];

pub const DEFAULT_SEED: u64 = 7;
pub const REVIEWS: usize = 25;
pub const SENTENCES_PER_REVIEW: usize = 2;

/// (form, UPOS, head, deprel, part of the aspect)
type Word = (String, &'static str, usize, &'static str, bool);

fn w(form: &str, upos: &'static str, head: usize, deprel: &'static str, aspect: bool) -> Word {
    (form.to_string(), upos, head, deprel, aspect)
}

fn sentence_words<R: Rng>(rng: &mut R) -> Vec<Word> {
    let noun = *NOUNS.choose(rng).expect("nonempty");
    let adj = *ADJS.choose(rng).expect("nonempty");
    let adv = *ADVS.choose(rng).expect("nonempty");
    match rng.random_range(0..4) {
        // adv adj NOUN
        0 => vec![
            w(adv, "ADV", 2, "advmod", false),
            w(adj, "ADJ", 3, "amod", false),
            w(noun, "NOUN", 0, "root", true),
        ],
        // modifier NOUN adv adj
        1 => {
            let modifier = loop {
                let m = *NOUNS.choose(rng).expect("nonempty");
                if m != noun {
                    break m;
                }
            };
            vec![
                w(modifier, "NOUN", 2, "nmod", false),
                w(noun, "NOUN", 0, "root", true),
                w(adv, "ADV", 4, "advmod", false),
                w(adj, "ADJ", 2, "amod", false),
            ]
        }
        // adv adj COMPOUND
        2 => {
            let (first, second) = *COMPOUNDS.choose(rng).expect("nonempty");
            vec![
                w(adv, "ADV", 2, "advmod", false),
                w(adj, "ADJ", 4, "amod", false),
                w(first, "NOUN", 4, "compound", true),
                w(second, "NOUN", 0, "root", true),
            ]
        }
        // NOUN adv adj
        _ => vec![
            w(noun, "NOUN", 0, "root", true),
            w(adv, "ADV", 3, "advmod", false),
            w(adj, "ADJ", 1, "amod", false),
        ],
    }
}

fn lokumu() -> Vec<Word> {
    vec![
        w("lokumu", "NOUN", 0, "root", true),
        w("tavsiye", "NOUN", 3, "compound", false),
        w("ederim", "VERB", 1, "acl", false),
    ]
}

fn build(id: &str, words: &[Word]) -> Result<(Sentence, DepTree)> {
    let mut text = String::new();
    let mut span: Option<(usize, usize)> = None;
    for (i, (form, ..)) in words.iter().enumerate() {
        if i > 0 {
            text.push(' ');
        }
        let start = text.chars().count();
        text.push_str(form);
        let end = text.chars().count();
        if words[i].4 {
            span = Some((span.map_or(start, |s| s.0), end));
        }
    }
    text.push('.');
    let root = words.iter().position(|w| w.2 == 0).expect("one root") + 1;

    let mut tokens: Vec<DepToken> = words
        .iter()
        .enumerate()
        .map(|(i, (form, upos, head, deprel, _))| DepToken {
            index: i + 1,
            form: form.clone(),
            upos: upos.to_string(),
            head: *head,
            deprel: deprel.to_string(),
        })
        .collect();
    tokens.push(DepToken {
        index: words.len() + 1,
        form: ".".into(),
        upos: "PUNCT".into(),
        head: root,
        deprel: "punct".into(),
    });
    let tree = DepTree::new(Some(id.to_string()), tokens)?;

    let opinions = span
        .map(|(from, to)| {
            let target: String = text.chars().skip(from).take(to - from).collect();
            vec![Opinion {
                target,
                category: "FOOD#QUALITY".into(),
                polarity: "positive".into(),
                from,
                to,
            }]
        })
        .unwrap_or_default();
    Ok((Sentence::new(id, text, opinions)?, tree))
}

/// A corpus of `REVIEWS` reviews with `SENTENCES_PER_REVIEW` sentences each,
/// plus its dependency trees in sentence order. The first sentence is
/// always "lokumu tavsiye ederim." with the aspect "lokumu".
pub fn planted_corpus(seed: u64) -> Result<(Corpus, Vec<DepTree>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reviews = Vec::with_capacity(REVIEWS);
    let mut trees = Vec::with_capacity(REVIEWS * SENTENCES_PER_REVIEW);
    for r in 0..REVIEWS {
        let rid = format!("s{:02}", r + 1);
        let mut sentences = Vec::with_capacity(SENTENCES_PER_REVIEW);
        for s in 0..SENTENCES_PER_REVIEW {
            let words = if r == 0 && s == 0 { lokumu() } else { sentence_words(&mut rng) };
            let (sentence, tree) = build(&format!("{rid}:{s}"), &words)?;
            sentences.push(sentence);
            trees.push(tree);
        }
        reviews.push(Review { id: rid, sentences });
    }
    Ok((Corpus::new(reviews, SplitTag::Train)?, trees))
}

/// CoNLL-U text for `trees`, one blank-line-terminated block each.
pub fn trees_to_conllu(trees: &[DepTree]) -> String {
    trees.iter().map(DepTree::to_conllu).collect()
}
