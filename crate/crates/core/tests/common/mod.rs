#![allow(dead_code)]

use std::path::PathBuf;

use dcsent::features::{FeatureVector, FEATURE_COUNT};
use dcsent::mlp::{self, MlpModel};
use dcsent::{LabeledPassage, Sentiment};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub type Labeled = Vec<(FeatureVector, Sentiment)>;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

/// Three unit-variance Gaussian blobs in 19 dimensions, centres drawn from
/// `U(-2, 2)`. Returns train/validation/test with the given per-class sizes.
pub fn three_blobs(per_class: [usize; 3], seed: u64) -> [Labeled; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<[f64; FEATURE_COUNT]> = (0..3)
        .map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0)))
        .collect();
    let noise = Normal::new(0.0, 1.0).unwrap();
    per_class.map(|n| {
        let mut set = Labeled::new();
        for (c, centre) in centres.iter().enumerate() {
            for _ in 0..n {
                let v = std::array::from_fn(|i| centre[i] + noise.sample(&mut rng));
                set.push((FeatureVector(v), Sentiment::ALL[c]));
            }
        }
        set.shuffle(&mut rng);
        set
    })
}

/// Largest relative error between the analytic gradient and a central
/// difference with step `eps`. Components whose magnitudes are both below
/// `1e-8` are compared absolutely.
pub fn gradient_check(model: &MlpModel, batch: &[(FeatureVector, Sentiment)], eps: f64) -> f64 {
    let (_, grads) = mlp::loss_and_grad(model, batch).unwrap();
    let analytic = grads.flat();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let original = *probe.params_mut().nth(i).unwrap();
        *probe.params_mut().nth(i).unwrap() = original + eps;
        let up = mlp::loss(&probe, batch).unwrap();
        *probe.params_mut().nth(i).unwrap() = original - eps;
        let down = mlp::loss(&probe, batch).unwrap();
        *probe.params_mut().nth(i).unwrap() = original;
        let numeric = (up - down) / (2.0 * eps);
        let err = if a.abs() < 1e-8 && numeric.abs() < 1e-8 {
            (a - numeric).abs()
        } else {
            (a - numeric).abs() / a.abs().max(numeric.abs())
        };
        worst = worst.max(err);
    }
    worst
}

const NEUTRAL_VOCAB: &[&str] = &[
    "the", "table", "stood", "near", "window", "while", "clock", "on", "wall", "counted", "minutes",
    "and", "a", "man", "walked", "past", "with", "paper", "under", "his", "arm", "bus", "arrived",
    "at", "stop", "corner", "street", "people", "waited", "in", "line", "for", "tickets", "door",
    "opened", "room", "had", "chairs", "lamp", "desk", "shelf", "books", "was", "were", "it", "then",
    "after", "before", "morning", "evening", "train", "station", "platform", "bag", "coat", "hat",
];

/// A capitalised, period-terminated sentence of `words` neutral words.
pub fn filler_sentence(rng: &mut impl Rng, words: usize) -> String {
    let mut w: Vec<&str> = (0..words).map(|_| *NEUTRAL_VOCAB.choose(rng).unwrap()).collect();
    let first = w[0];
    let cap = first[..1].to_uppercase() + &first[1..];
    w[0] = &cap;
    format!("{}.", w.join(" "))
}

const POSITIVE: &[&str] = &[
    "The food was great.",
    "Staff were friendly and helpful.",
    "An excellent stay overall.",
    "I loved the view.",
];
const NEGATIVE: &[&str] = &[
    "The room was dirty.",
    "Service was rude and slow.",
    "A terrible experience.",
    "I hated the noise.",
];

/// Each passage is `k` neutral sentences of at least 35 words plus one
/// polar sentence at a random position; the gold label is the polar one.
pub fn neutral_filler_corpus(k: usize, n: usize, seed: u64) -> Vec<LabeledPassage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Sentiment::Positive } else { Sentiment::Negative };
            let pool = if label == Sentiment::Positive { POSITIVE } else { NEGATIVE };
            let mut sentences: Vec<String> = (0..k)
                .map(|_| {
                    let words = rng.random_range(35..50);
                    filler_sentence(&mut rng, words)
                })
                .collect();
            let at = rng.random_range(0..=k);
            sentences.insert(at, pool.choose(&mut rng).unwrap().to_string());
            LabeledPassage::new(format!("k{k}-{i}"), sentences.join(" "), label)
        })
        .collect()
}

/// Passages of one strongly polar sentence padded with neutral filler to a
/// spread of lengths between 5 and 400 whitespace tokens.
pub fn long_passage_corpus(n: usize, seed: u64) -> Vec<LabeledPassage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (label, polar) = if i % 2 == 0 {
                (Sentiment::Positive, "Great, excellent, wonderful, superb.")
            } else {
                (Sentiment::Negative, "Awful, terrible, horrible, dirty.")
            };
            let target = 5 + (i * 395) / n.max(1);
            let mut text = polar.to_string();
            let mut len = 4;
            while len < target {
                let words = rng.random_range(5..15).min(target - len);
                text.push(' ');
                text.push_str(&filler_sentence(&mut rng, words));
                len += words;
            }
            LabeledPassage::new(format!("long-{i}"), text, label)
        })
        .collect()
}
