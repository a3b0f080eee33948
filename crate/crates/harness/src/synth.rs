//! Templated synthetic dialogue corpus with annotated person names.

use std::path::Path;

use anyhow::{ensure, Context, Result};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

const NAMES: &[&str] = &[
    "Alice", "Bob", "Carol", "Dave", "Erin", "Frank", "Grace", "Heidi", "Ivan", "Judy", "Mallory", "Niaj", "Olivia",
    "Peggy", "Rupert", "Sybil", "Trent", "Victor", "Walter", "Yara", "Zane", "Amara", "Bruno", "Chloe", "Diego",
    "Elena", "Farah", "Gustav", "Hana", "Igor", "Jonas", "Keiko", "Liam", "Mei", "Nora", "Oscar", "Priya", "Quinn",
    "Rosa", "Samir", "Tariq", "Uma", "Vera", "Wendy", "Ximena", "Yusuf", "Zoe", "Anders", "Beatriz", "Cyrus", "Dalia",
    "Emil", "Fiona", "Gideon", "Helga", "Ines", "Jasper", "Kofi", "Lena", "Mateo",
];

const SYLLABLES: &[&str] = &[
    "ka", "ro", "mi", "len", "to", "sa", "vi", "dor", "ne", "lu", "ba", "ris",
];

const HOBBIES: &[&str] = &[
    "hiking",
    "painting",
    "chess",
    "swimming",
    "gardening",
    "cooking",
    "reading",
    "cycling",
    "dancing",
    "singing",
    "fishing",
    "knitting",
    "photography",
    "surfing",
    "yoga",
    "running",
    "baking",
    "camping",
    "skating",
    "drawing",
    "poetry",
    "karate",
    "tennis",
    "climbing",
    "sailing",
];
const CITIES: &[&str] = &[
    "paris", "tokyo", "berlin", "lima", "cairo", "oslo", "rome", "madrid", "toronto", "sydney", "dublin", "vienna",
    "prague", "lisbon", "seoul", "boston", "denver", "austin", "chicago", "miami", "athens", "warsaw", "nairobi",
    "mumbai", "havana",
];
const JOBS: &[&str] = &[
    "teacher",
    "nurse",
    "doctor",
    "chef",
    "pilot",
    "farmer",
    "lawyer",
    "baker",
    "writer",
    "painter",
    "engineer",
    "dentist",
    "plumber",
    "singer",
    "driver",
    "banker",
    "student",
    "carpenter",
    "librarian",
    "florist",
    "barber",
    "mechanic",
    "scientist",
    "designer",
    "waiter",
];
const PLACES: &[&str] = &[
    "park", "library", "museum", "market", "beach", "gym", "cafe", "station", "theater", "zoo", "mall", "school",
];
const PETS: &[&str] = &[
    "dog", "cat", "parrot", "hamster", "rabbit", "turtle", "horse", "goldfish", "lizard", "pony",
];
const VERBS: &[&str] = &[
    "walk", "travel", "cook", "read", "swim", "play", "sing", "dance", "paint", "run", "shop", "eat", "study", "relax",
    "fish", "camp", "ski", "skate", "bake", "write",
];
const TIMES: &[&str] = &["week", "month", "year", "summer", "winter", "spring"];
const TOPICS: &[&str] = &[
    "food", "color", "movie", "song", "book", "sport", "season", "animal", "game", "band",
];
const FOODS: &[&str] = &[
    "pizza",
    "sushi",
    "pasta",
    "tacos",
    "soup",
    "salad",
    "curry",
    "bread",
    "cheese",
    "cake",
    "rice",
    "noodles",
    "burgers",
    "pancakes",
    "dumplings",
    "chocolate",
    "apples",
    "steak",
    "falafel",
    "waffles",
];
const RELATIONS: &[&str] = &[
    "mother", "father", "sister", "brother", "wife", "husband", "cousin", "friend", "uncle", "aunt",
];
const DAYS: &[&str] = &[
    "monday",
    "tuesday",
    "wednesday",
    "thursday",
    "friday",
    "saturday",
    "sunday",
];

/// Lexicon written next to every generated corpus.
pub const STOP_WORDS: &[&str] = &[
    "a", "about", "am", "an", "and", "are", "as", "at", "be", "but", "by", "do", "ever", "for", "from", "have", "he",
    "her", "his", "i", "in", "is", "it", "last", "me", "mine", "my", "of", "on", "really", "she", "that", "the",
    "their", "they", "this", "to", "together", "too", "very", "was", "we", "what", "who", "with", "you", "your",
];

#[derive(Serialize)]
struct Record<'a> {
    text: &'a str,
    entities: Vec<&'a str>,
}

/// `count` distinct capitalized names; the fixed list first, then
/// syllable compounds.
fn entity_names(count: usize) -> Vec<String> {
    let mut out: Vec<String> = NAMES.iter().take(count).map(|s| s.to_string()).collect();
    let n = SYLLABLES.len();
    let mut i = 0usize;
    while out.len() < count {
        let (a, b, c) = (i % n, (i / n) % n, i / (n * n));
        let mut name = format!("{}{}", SYLLABLES[a], SYLLABLES[b]);
        if c > 0 {
            name.push_str(SYLLABLES[(c - 1) % n]);
            name.push_str(&"o".repeat((c - 1) / n));
        }
        let mut chars = name.chars();
        let first = chars.next().expect("non-empty").to_ascii_uppercase();
        let name = format!("{first}{}", chars.as_str());
        if !out.contains(&name) {
            out.push(name);
        }
        i += 1;
    }
    out
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty list")
}

/// One sentence; returns the text and the entity it names, if any.
fn sentence(rng: &mut ChaCha8Rng, names: &[String]) -> (String, Option<String>) {
    let e = names.choose(rng).expect("at least one entity").clone();
    let text = match rng.random_range(0..10) {
        0 => format!("hi , my name is {e} and i really like {} .", pick(rng, HOBBIES)),
        1 => format!(
            "my friend {e} lives in {} and works as a {} .",
            pick(rng, CITIES),
            pick(rng, JOBS)
        ),
        2 => format!(
            "have you ever met {e} at the {} in {} ?",
            pick(rng, PLACES),
            pick(rng, CITIES)
        ),
        3 => format!(
            "i have a {} named {e} and we love to {} together .",
            pick(rng, PETS),
            pick(rng, VERBS)
        ),
        4 => format!(
            "{e} and i went to {} last {} to {} .",
            pick(rng, CITIES),
            pick(rng, TIMES),
            pick(rng, VERBS)
        ),
        5 => format!(
            "yesterday {e} told me that the {} in {} is very good .",
            pick(rng, FOODS),
            pick(rng, CITIES)
        ),
        6 => format!(
            "my {} {e} is a {} who loves {} .",
            pick(rng, RELATIONS),
            pick(rng, JOBS),
            pick(rng, HOBBIES)
        ),
        7 => {
            let t = format!(
                "what is your favorite {} ? mine is {} .",
                pick(rng, TOPICS),
                pick(rng, FOODS)
            );
            return (t, None);
        }
        8 => {
            let t = format!(
                "i like to {} with my {} on {} .",
                pick(rng, VERBS),
                pick(rng, RELATIONS),
                pick(rng, DAYS)
            );
            return (t, None);
        }
        _ => {
            let t = format!(
                "i am a {} and i live in {} with my {} .",
                pick(rng, JOBS),
                pick(rng, CITIES),
                pick(rng, RELATIONS)
            );
            return (t, None);
        }
    };
    (text, Some(e))
}

/// Returns `(corpus, stop words)` file contents: `n` JSON-lines records and
/// a one-word-per-line lexicon.
pub fn generate_synthetic_corpus(n: usize, entity_count: usize, seed: u64) -> Result<(String, String)> {
    ensure!(n >= 1, "corpus size must be at least 1");
    ensure!(entity_count >= 1, "entity count must be at least 1");
    let names = entity_names(entity_count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = String::new();
    for _ in 0..n {
        let (text, entity) = sentence(&mut rng, &names);
        let record = Record {
            text: &text,
            entities: entity.iter().map(String::as_str).collect(),
        };
        corpus.push_str(&serde_json::to_string(&record)?);
        corpus.push('\n');
    }
    let stop: String = STOP_WORDS.iter().map(|w| format!("{w}\n")).collect();
    Ok((corpus, stop))
}

/// Writes `corpus.jsonl` and `stopwords.txt` into `dir`.
pub fn write_synthetic_corpus(dir: &Path, n: usize, entity_count: usize, seed: u64) -> Result<()> {
    let (corpus, stop) = generate_synthetic_corpus(n, entity_count, seed)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("corpus.jsonl"), corpus)?;
    std::fs::write(dir.join("stopwords.txt"), stop)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use embinv_core::corpus::{self, StopWords, Vocabulary};

    #[test]
    fn records_carry_their_entities() {
        let (text, stop) = generate_synthetic_corpus(1000, 50, 7).unwrap();
        let sw = StopWords::parse(&stop);
        let sentences = corpus::parse_corpus(&text, &sw, Path::new("synthetic")).unwrap();
        assert_eq!(sentences.len(), 1000);
        let with_entities = sentences.iter().filter(|s| !s.entities.is_empty()).count();
        assert!(with_entities > 500);
        let vocab = Vocabulary::build(&sentences, 10_000).unwrap();
        assert!(vocab.len() <= 500, "vocabulary of {}", vocab.len());
        assert!(sentences.iter().all(|s| s.stopword_mask.iter().any(|&m| m)));
    }

    #[test]
    fn same_seed_same_bytes() {
        assert_eq!(
            generate_synthetic_corpus(200, 5, 1).unwrap(),
            generate_synthetic_corpus(200, 5, 1).unwrap()
        );
        assert_ne!(
            generate_synthetic_corpus(200, 5, 1).unwrap().0,
            generate_synthetic_corpus(200, 5, 2).unwrap().0
        );
    }

    #[test]
    fn single_entity_is_always_named() {
        let (text, _) = generate_synthetic_corpus(300, 1, 3).unwrap();
        for line in text.lines() {
            let r = corpus::parse_record(line).unwrap();
            assert!(r.entities.is_empty() || r.entities == ["Alice"]);
        }
    }

    #[test]
    fn many_entities_stay_distinct() {
        let names = entity_names(400);
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 400);
    }
}
