//! Token-id datasets and the raw-text converter that produces them.
//!
//! Token files hold one sample per line: `<label> <id> <id> ...` with label
//! 0 or 1. Id 0 is padding, id 1 is out-of-vocabulary and real words start
//! at 2 in order of decreasing corpus frequency.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::SequenceDataset;
use crate::error::{Error, Result};

const PAD_ID: u32 = crate::layers::PAD_ID as u32;
pub const OOV_ID: u32 = 1;
pub const FIRST_WORD_ID: u32 = 2;

/// Fixes a sequence to `maxlen` ids: long inputs keep their last `maxlen`
/// tokens, short ones are padded with zeros at the end.
pub fn pad_truncate(tokens: &[u32], maxlen: usize) -> Vec<u32> {
    assert!(maxlen >= 1, "maxlen must be positive");
    if tokens.len() >= maxlen {
        return tokens[tokens.len() - maxlen..].to_vec();
    }
    let mut out = tokens.to_vec();
    out.resize(maxlen, PAD_ID);
    out
}

/// Variable-length samples as read from a token file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenSamples {
    pub sequences: Vec<Vec<u32>>,
    pub labels: Vec<usize>,
}

impl TokenSamples {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Pads or truncates every sample into a fixed-length dataset.
    pub fn into_dataset(self, maxlen: usize) -> SequenceDataset {
        let ids: Vec<u32> = self
            .sequences
            .iter()
            .flat_map(|s| pad_truncate(s, maxlen))
            .collect();
        SequenceDataset::tokens(ids, maxlen, self.labels, 2).expect("labels are binary")
    }
}

/// Reads token lines, mapping every id above `vocab_limit` to the OOV id.
pub fn parse_token_lines(reader: impl BufRead, vocab_limit: usize) -> Result<TokenSamples> {
    let mut out = TokenSamples::default();
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let mut fields = line.split_whitespace();
        let label = match fields.next() {
            Some("0") => 0,
            Some("1") => 1,
            Some(other) => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("label must be 0 or 1, got {other:?}"),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: lineno,
                    message: "missing label".into(),
                })
            }
        };
        let mut ids = Vec::new();
        for field in fields {
            let id: i64 = field.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("token {field:?} is not an integer"),
            })?;
            if id < 0 {
                return Err(Error::Format(format!("line {lineno}: negative token id {id}")));
            }
            let id = if id as u64 > vocab_limit as u64 { OOV_ID as i64 } else { id };
            ids.push(u32::try_from(id).expect("id bounded by vocab limit"));
        }
        out.sequences.push(ids);
        out.labels.push(label);
    }
    Ok(out)
}

pub fn load_token_file(path: impl AsRef<Path>, vocab_limit: usize) -> Result<TokenSamples> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_token_lines(BufReader::new(file), vocab_limit)
}

pub fn load_token_dataset(
    path: impl AsRef<Path>,
    vocab_limit: usize,
    maxlen: usize,
) -> Result<SequenceDataset> {
    Ok(load_token_file(path, vocab_limit)?.into_dataset(maxlen))
}

/// Lowercases, drops apostrophes and splits on anything that is not a
/// letter or digit.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut cleaned = String::with_capacity(text.len());
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            cleaned.push(ch);
        } else if ch != '\'' && ch != '\u{2019}' {
            cleaned.push(' ');
        }
    }
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Frequency-ranked word list: the most common word gets id 2.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Counts every token; ties in frequency are ranked alphabetically.
    pub fn build<'a>(documents: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for doc in documents {
            for w in doc {
                *counts.entry(w.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let ids = ranked
            .into_iter()
            .enumerate()
            .map(|(k, (w, _))| (w.to_owned(), FIRST_WORD_ID + k as u32))
            .collect();
        Vocabulary { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.ids.get(word).copied()
    }

    /// Ids for `words`, with anything ranked beyond `limit` sent to OOV.
    pub fn encode(&self, words: &[String], limit: usize) -> Vec<u32> {
        words
            .iter()
            .map(|w| match self.id(w) {
                Some(id) if id as usize <= limit => id,
                _ => OOV_ID,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvertSummary {
    pub documents: usize,
    pub distinct_words: usize,
}

fn read_raw(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (label, text) = line
            .split_once(['\t', ' '])
            .unwrap_or((line.as_str(), ""));
        let label = match label.trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    line: k + 1,
                    message: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        };
        docs.push((label, tokenize(text)));
    }
    Ok(docs)
}

/// Converts raw `<label>\t<text>` files into token files.
///
/// All inputs share one vocabulary so a train/test pair stays consistent;
/// words ranked beyond `vocab` are written as the OOV id.
pub fn convert_text(inputs: &[PathBuf], outputs: &[PathBuf], vocab: usize) -> Result<ConvertSummary> {
    if inputs.len() != outputs.len() || inputs.is_empty() {
        return Err(Error::Config(format!(
            "need matching input and output files, got {} and {}",
            inputs.len(),
            outputs.len()
        )));
    }
    let corpora = inputs
        .iter()
        .map(|p| read_raw(p))
        .collect::<Result<Vec<_>>>()?;
    let vocabulary = Vocabulary::build(corpora.iter().flatten().map(|(_, words)| words.as_slice()));
    let mut documents = 0;
    for (docs, path) in corpora.iter().zip(outputs) {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (label, words) in docs {
            let mut line = label.to_string();
            for id in vocabulary.encode(words, vocab) {
                line.push(' ');
                line.push_str(&id.to_string());
            }
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        documents += docs.len();
    }
    Ok(ConvertSummary {
        documents,
        distinct_words: vocabulary.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str, limit: usize) -> Result<TokenSamples> {
        parse_token_lines(text.as_bytes(), limit)
    }

    #[test]
    fn pad_truncate_examples() {
        assert_eq!(pad_truncate(&[5, 6, 7], 5), vec![5, 6, 7, 0, 0]);
        let long: Vec<u32> = (1..=100).collect();
        assert_eq!(pad_truncate(&long, 80), (21..=100).collect::<Vec<_>>());
        assert_eq!(pad_truncate(&[], 3), vec![0, 0, 0]);
        assert_eq!(pad_truncate(&[4, 5], 2), vec![4, 5]);
    }

    #[test]
    fn oov_remapping() {
        let s = parse("1 7 19999 25000\n", 20000).unwrap();
        assert_eq!(s.sequences, vec![vec![7, 19999, 1]]);
        assert_eq!(s.labels, vec![1]);
        let s = parse("0 20000 20001\n", 20000).unwrap();
        assert_eq!(s.sequences[0], vec![20000, 1]);
    }

    #[test]
    fn empty_sequence_and_zero_limit() {
        let s = parse("0\n1 2 3\n", 100).unwrap();
        assert_eq!(s.sequences, vec![vec![], vec![2, 3]]);
        let s = parse("1 2 3 4 99\n", 0).unwrap();
        assert_eq!(s.sequences[0], vec![1, 1, 1, 1]);
    }

    #[test]
    fn malformed_lines() {
        let e = parse("1 2\n0 x 3\n", 10).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = parse("1 2\n\n", 10).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = parse("2 5\n", 10).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }), "{e}");
        assert_eq!(parse("1 4 -3\n", 10).unwrap_err().category(), "format");
    }

    #[test]
    fn dataset_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        fs::write(&p, "1 7 19999 25000\n0\n").unwrap();
        let d = load_token_dataset(&p, 20000, 4).unwrap();
        assert_eq!(d.token_sequence(0), &[7, 19999, 1, 0]);
        assert_eq!(d.token_sequence(1), &[0, 0, 0, 0]);
        assert_eq!(d.labels(), &[1, 0]);
        assert_eq!(load_token_dataset(dir.path().join("nope"), 1, 1).unwrap_err().category(), "io");
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(
            tokenize("It's GREAT, really-great!<br />Don't"),
            vec!["its", "great", "really", "great", "br", "dont"]
        );
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn vocabulary_ranks_by_frequency_then_alphabet() {
        let docs = [tokenize("b a c a b a"), tokenize("d c")];
        let v = Vocabulary::build(docs.iter().map(Vec::as_slice));
        assert_eq!(v.id("a"), Some(2));
        assert_eq!(v.id("b"), Some(3));
        assert_eq!(v.id("c"), Some(4));
        assert_eq!(v.id("d"), Some(5));
        assert_eq!(v.encode(&tokenize("a d zzz"), 4), vec![2, 1, 1]);
    }

    #[test]
    fn converter_shares_vocabulary() {
        let dir = tempfile::tempdir().unwrap();
        let p = |n: &str| dir.path().join(n);
        fs::write(p("train.raw"), "1\tgood good film\n0\tbad film\n").unwrap();
        fs::write(p("test.raw"), "1\tgood unseen\n").unwrap();
        let summary = convert_text(
            &[p("train.raw"), p("test.raw")],
            &[p("train.tok"), p("test.tok")],
            3,
        )
        .unwrap();
        assert_eq!(summary, ConvertSummary { documents: 3, distinct_words: 4 });
        // good=2, film=3, bad=4, unseen=5
        assert_eq!(fs::read_to_string(p("train.tok")).unwrap(), "1 2 2 3\n0 1 3\n");
        assert_eq!(fs::read_to_string(p("test.tok")).unwrap(), "1 2 1\n");
        let back = load_token_file(p("train.tok"), 3).unwrap();
        assert_eq!(back.labels, vec![1, 0]);

        fs::write(p("bad.raw"), "positive\tgood\n").unwrap();
        let e = convert_text(&[p("bad.raw")], &[p("bad.tok")], 3).unwrap_err();
        assert_eq!(e.category(), "parse");
        assert!(convert_text(&[p("train.raw")], &[], 3).is_err());
    }

    proptest! {
        #[test]
        fn pad_truncate_length(tokens in proptest::collection::vec(0u32..1000, 0..200), maxlen in 1usize..120) {
            let out = pad_truncate(&tokens, maxlen);
            prop_assert_eq!(out.len(), maxlen);
            if tokens.len() >= maxlen {
                prop_assert_eq!(&out[..], &tokens[tokens.len() - maxlen..]);
            } else {
                prop_assert_eq!(&out[..tokens.len()], &tokens[..]);
                prop_assert!(out[tokens.len()..].iter().all(|&t| t == 0));
            }
        }

        #[test]
        fn loaded_ids_respect_limit(
            ids in proptest::collection::vec(0u32..50_000, 0..30),
            limit in 0usize..30_000,
        ) {
            let line = std::iter::once("1".to_string())
                .chain(ids.iter().map(u32::to_string))
                .collect::<Vec<_>>()
                .join(" ");
            let s = parse(&line, limit).unwrap();
            for (&raw, &got) in ids.iter().zip(&s.sequences[0]) {
                if raw as usize > limit {
                    prop_assert_eq!(got, OOV_ID);
                } else {
                    prop_assert_eq!(got, raw);
                }
            }
        }
    }
}
