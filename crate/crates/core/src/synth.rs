//! Synthetic question corpus built from templates with interchangeable
//! word slots. Words in one synonym group share most of their contexts (each
//! template leaves one synonym out), so the corpus contains many
//! meaning-preserving rewrites of each sentence.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Slot groups. Groups named in `CONTENT` carry meaning; the others are
/// synonym sets.
const GROUPS: &[(&str, &[&str])] = &[
    ("get", &["get", "find", "obtain", "land"]),
    ("job", &["job", "position", "role"]),
    ("company", &["google", "microsoft", "amazon", "apple"]),
    ("best", &["best", "easiest", "fastest", "simplest"]),
    ("way", &["way", "method", "approach"]),
    ("learn", &["learn", "study", "master"]),
    ("skill", &["python", "french", "guitar", "chess", "cooking"]),
    ("people", &["people", "folks", "humans"]),
    ("like", &["like", "love", "enjoy"]),
    ("thing", &["music", "movies", "sports", "books"]),
    ("improve", &["improve", "boost", "increase"]),
    ("health", &["health", "fitness", "sleep", "memory"]),
    ("good", &["good", "great", "nice"]),
    ("place", &["place", "city", "spot"]),
    ("visit", &["visit", "see", "explore"]),
    ("country", &["india", "japan", "canada", "france"]),
    ("start", &["start", "begin", "launch"]),
    ("business", &["business", "company", "startup"]),
    ("quickly", &["quickly", "fast", "rapidly"]),
    ("money", &["money", "cash", "income"]),
    ("make", &["make", "earn", "generate"]),
];

const CONTENT: &[&str] = &["company", "skill", "thing", "health", "country"];

const TEMPLATES: &[&str] = &[
    "how can i {get} a {job} at {company} ?",
    "what is the {best} {way} to {learn} {skill} ?",
    "why do {people} {like} {thing} ?",
    "how do i {improve} my {health} ?",
    "what is a {good} {place} to {visit} in {country} ?",
    "how can i {start} a {business} {quickly} ?",
    "what is the {best} {way} to {make} {money} online ?",
    "how can i {learn} {skill} {quickly} ?",
    "do {people} in {country} {like} {thing} ?",
    "how do i {make} {money} with {skill} ?",
    "what is the {best} {way} to {improve} my {health} ?",
    "how can i {get} a {good} {job} in {country} ?",
];

/// Generates `n` sentences from a seeded RNG.
pub fn templated_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| templated_sentence(&mut rng)).collect()
}

pub fn templated_sentence<R: Rng>(rng: &mut R) -> String {
    let t = rng.random_range(0..TEMPLATES.len());
    fill(TEMPLATES[t], &mut |slot| pick(t, slot, rng))
}

/// Draws a word for `slot` in template `t`. Each template leaves out one
/// word of every synonym group, so synonyms share most but not all of
/// their contexts.
fn pick<R: Rng>(t: usize, slot: &str, rng: &mut R) -> &'static str {
    let (_, words) = GROUPS.iter().find(|(g, _)| *g == slot).expect("known slot");
    if CONTENT.contains(&slot) {
        return words.choose(rng).expect("non-empty");
    }
    let skip = t % words.len();
    let k = rng.random_range(0..words.len() - 1);
    words[if k >= skip { k + 1 } else { k }]
}

fn fill(template: &str, choose: &mut dyn FnMut(&str) -> &'static str) -> String {
    let mut out = Vec::new();
    for word in template.split(' ') {
        match word.strip_prefix('{').and_then(|w| w.strip_suffix('}')) {
            Some(slot) => out.push(choose(slot).to_string()),
            None => out.push(word.to_string()),
        }
    }
    out.join(" ")
}

/// Source sentences with `refs` references each. References keep the
/// source's content words and redraw every synonym slot.
pub fn templated_pairs(n: usize, refs: usize, seed: u64) -> Vec<(String, Vec<String>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let t = rng.random_range(0..TEMPLATES.len());
            let template = TEMPLATES[t];
            let mut content: Vec<&'static str> = Vec::new();
            let mut src_rng = ChaCha8Rng::seed_from_u64(rng.random());
            let source = fill(template, &mut |slot| {
                let w = pick(t, slot, &mut src_rng);
                if CONTENT.contains(&slot) {
                    content.push(w);
                }
                w
            });
            let references = (0..refs)
                .map(|_| {
                    let mut k = 0;
                    fill(template, &mut |slot| {
                        if CONTENT.contains(&slot) {
                            k += 1;
                            content[k - 1]
                        } else {
                            pick(t, slot, &mut rng)
                        }
                    })
                })
                .collect();
            (source, references)
        })
        .collect()
}

/// Number of distinct words the templates can produce.
pub fn vocabulary_bound() -> usize {
    let mut words: Vec<&str> = GROUPS.iter().flat_map(|(_, w)| w.iter().copied()).collect();
    for t in TEMPLATES {
        words.extend(t.split(' ').filter(|w| !w.starts_with('{')));
    }
    words.sort_unstable();
    words.dedup();
    words.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        assert_eq!(templated_corpus(50, 3), templated_corpus(50, 3));
        assert_ne!(templated_corpus(50, 3), templated_corpus(50, 4));
        assert!(vocabulary_bound() <= 200);
        for s in templated_corpus(200, 1) {
            assert!(s.split(' ').count() <= 15, "{s}");
        }
    }

    #[test]
    fn references_keep_content_words() {
        for (src, refs) in templated_pairs(30, 2, 5) {
            assert_eq!(refs.len(), 2);
            for r in refs {
                assert_eq!(r.split(' ').count(), src.split(' ').count());
                for w in src.split(' ') {
                    if GROUPS.iter().any(|(g, ws)| CONTENT.contains(g) && ws.contains(&w)) {
                        assert!(r.split(' ').any(|x| x == w), "{src} / {r}");
                    }
                }
            }
        }
    }
}
