use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const PAD_ID: usize = 0;
pub const MASK_ID: usize = 1;
pub const UNK_ID: usize = 2;
pub const RESERVED_TOKENS: usize = 3;

/// Word-level vocabulary: the most frequent tokens of the training
/// split, capped, plus the reserved pad/mask/unk ids. Frequency ties
/// break lexicographically so construction is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    pub fn build<S: AsRef<str>>(train_docs: &[S], cap: usize) -> Vocabulary {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for doc in train_docs {
            for word in doc.as_ref().split_whitespace() {
                *counts.entry(word.to_lowercase()).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(cap);

        let mut id_to_token = vec!["<pad>".to_string(), "<mask>".to_string(), "<unk>".to_string()];
        id_to_token.extend(ranked.into_iter().map(|(w, _)| w));
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
        }
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id
            .get(&token.to_lowercase())
            .copied()
            .unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    /// Encode one document, truncating to `max_len` tokens.
    pub fn encode(&self, doc: &str, max_len: usize) -> Vec<usize> {
        doc.split_whitespace()
            .take(max_len)
            .map(|w| self.id(w))
            .collect()
    }
}

/// Plain UTF-8 corpus, one document per line. Blank lines are skipped.
pub fn read_corpus(text: &str) -> Result<Vec<String>> {
    let docs: Vec<String> = text
        .lines()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty())
        .map(|l| l.to_string())
        .collect();
    if docs.is_empty() {
        return Err(Error::Data("corpus has no documents".into()));
    }
    Ok(docs)
}

/// First `train_frac` of the documents train, the rest evaluate.
pub fn frac_split<T>(docs: &[T], train_frac: f64) -> (&[T], &[T]) {
    let n_train = ((docs.len() as f64) * train_frac).floor() as usize;
    let n_train = n_train.clamp(1, docs.len().saturating_sub(1).max(1));
    docs.split_at(n_train.min(docs.len()))
}

/// 30% train / 10% validation / 60% test, by document order.
pub fn ttl_split<T>(docs: &[T]) -> (&[T], &[T], &[T]) {
    let n = docs.len();
    let train_end = (n * 3) / 10;
    let val_end = (n * 4) / 10;
    let (train, rest) = docs.split_at(train_end);
    let (val, test) = rest.split_at(val_end - train_end);
    (train, val, test)
}

/// Synthetic corpus of paired key-value bigrams.
///
/// Text is a stream of (key, value) word pairs. Each block of `BLOCK`
/// words draws a fresh random binding of every key to a distinct value
/// and spells out each key's bigram exactly twice, once in the first
/// half of the block and once in the second, in shuffled order. With a
/// chunk width of half a block, a masked value's only twin sits in the
/// neighboring chunk: attention inside one chunk carries no evidence,
/// transport from the previous chunk recovers the backward half, and
/// only a full-sequence window sees everything. Later blocks rebind the
/// same keys, so stale bindings actively mislead.
pub fn generate_topic_corpus(docs: usize, words_per_doc: usize, seed: u64) -> String {
    const HALF_SLOTS: usize = 16;
    const BLOCK: usize = 4 * HALF_SLOTS;
    let key_words: Vec<String> = (0..HALF_SLOTS).map(|i| format!("k{i:02}")).collect();
    let value_words: Vec<String> = (0..HALF_SLOTS).map(|i| format!("v{i:02}")).collect();

    let mut rng = Rng::new(seed);
    let mut out = String::new();
    for _ in 0..docs {
        let mut words: Vec<&str> = Vec::with_capacity(words_per_doc + BLOCK);
        while words.len() < words_per_doc {
            let mut binding: Vec<usize> = (0..HALF_SLOTS).collect();
            rng.shuffle(&mut binding);
            for _half in 0..2 {
                let mut order: Vec<usize> = (0..HALF_SLOTS).collect();
                rng.shuffle(&mut order);
                for &k in &order {
                    words.push(&key_words[k]);
                    words.push(&value_words[binding[k]]);
                }
            }
        }
        words.truncate(words_per_doc);
        out.push_str(&words.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_caps_and_ranks_by_frequency() {
        let docs = ["b b b a a c", "a d"];
        let v = Vocabulary::build(&docs, 3);
        assert_eq!(v.size(), RESERVED_TOKENS + 3);
        // a: 3, b: 3 (tie broken lexicographically), c: 1, d: 1 (c wins tie)
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("b"), 4);
        assert_eq!(v.id("c"), 5);
        assert_eq!(v.id("d"), UNK_ID);
    }

    #[test]
    fn unseen_tokens_map_to_unk() {
        let v = Vocabulary::build(&["hello world"], 10);
        assert_eq!(v.id("absent"), UNK_ID);
        assert_eq!(v.encode("hello absent", 10), vec![3, UNK_ID]);
    }

    #[test]
    fn encode_truncates() {
        let v = Vocabulary::build(&["a b c d e"], 10);
        assert_eq!(v.encode("a b c d e", 3).len(), 3);
    }

    #[test]
    fn ttl_split_is_30_10_60_by_document() {
        let docs: Vec<usize> = (0..100).collect();
        let (train, val, test) = ttl_split(&docs);
        assert_eq!(train.len(), 30);
        assert_eq!(val.len(), 10);
        assert_eq!(test.len(), 60);
        assert_eq!(train[0], 0);
        assert_eq!(test[59], 99);
    }

    #[test]
    fn corpus_generator_is_deterministic() {
        let a = generate_topic_corpus(5, 100, 7);
        let b = generate_topic_corpus(5, 100, 7);
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 5);
        assert_eq!(a.lines().next().unwrap().split_whitespace().count(), 100);
    }

    #[test]
    fn read_corpus_skips_blank_lines() {
        let docs = read_corpus("one doc\n\n  \nanother doc\n").unwrap();
        assert_eq!(docs.len(), 2);
        assert!(read_corpus("\n \n").is_err());
    }
}
