//! Corpus loading, TF-IDF featurization at width 500, and the synthetic
//! three-dimension corpus. Tokenizer: lowercase, split on
//! non-alphanumeric. idf_t = ln((1+N)/(1+df_t)) + 1, features are raw
//! counts x idf then L2-normalized.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapters::DimensionTag;
use crate::error::{Error, Result};
use crate::numeric::rng::Rng;
use crate::numeric::tensor::Tensor1;

/// Default TF-IDF vocabulary width.
pub const DEFAULT_VOCAB: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One labeled text example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub dimension: DimensionTag,
    pub class_label: usize,
    pub split: Split,
}

/// Load a JSONL corpus: one example per line with fields
/// text / dimension / class_label / split. Malformed lines are reported
/// with their 1-based line number.
pub fn load_corpus(path: &Path) -> Result<Vec<Example>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let ex = parse_example_line(&line, lineno)?;
        out.push(ex);
    }
    Ok(out)
}

/// Parse one JSONL corpus line. Exposed for fuzzing.
pub fn parse_example_line(line: &str, lineno: usize) -> Result<Example> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: lineno,
        msg: format!("invalid JSON: {e}"),
    })?;
    let obj = value.as_object().ok_or_else(|| Error::Parse {
        line: lineno,
        msg: "expected a JSON object".into(),
    })?;
    let field = |name: &str| {
        obj.get(name).ok_or_else(|| Error::Parse {
            line: lineno,
            msg: format!("missing field \"{name}\""),
        })
    };
    let text = field("text")?
        .as_str()
        .ok_or_else(|| Error::Parse {
            line: lineno,
            msg: "field \"text\" must be a string".into(),
        })?
        .to_string();
    if text.is_empty() {
        return Err(Error::Parse {
            line: lineno,
            msg: "field \"text\" must be non-empty".into(),
        });
    }
    let dim_str = field("dimension")?.as_str().ok_or_else(|| Error::Parse {
        line: lineno,
        msg: "field \"dimension\" must be a string".into(),
    })?;
    let dimension = DimensionTag::parse(dim_str).ok_or_else(|| Error::Parse {
        line: lineno,
        msg: format!("unknown dimension \"{dim_str}\""),
    })?;
    let class_label = field("class_label")?.as_u64().ok_or_else(|| Error::Parse {
        line: lineno,
        msg: "field \"class_label\" must be a non-negative integer".into(),
    })? as usize;
    let split_str = field("split")?.as_str().ok_or_else(|| Error::Parse {
        line: lineno,
        msg: "field \"split\" must be a string".into(),
    })?;
    let split = match split_str {
        "train" => Split::Train,
        "test" => Split::Test,
        other => {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("unknown split \"{other}\""),
            })
        }
    };
    Ok(Example {
        text,
        dimension,
        class_label,
        split,
    })
}

/// Write a corpus back out as JSONL, one example per line.
pub fn save_corpus(path: &Path, corpus: &[Example]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for ex in corpus {
        serde_json::to_writer(&mut file, ex)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

/// Fitted TF-IDF model. The vocabulary always has exactly `width`
/// entries; when the corpus vocabulary is smaller the tail is padded with
/// `#pad<k>` slots (the tokenizer can never produce a `#`, so pads never
/// match) carrying idf 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    pub vocabulary: Vec<String>,
    pub idf: Tensor1,
    pub tokenizer: String,
}

/// Lowercase, split on non-alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Fit TF-IDF on a corpus: top-`width` terms by document frequency, ties
/// broken lexicographically, smoothed idf.
pub fn fit_tfidf(corpus: &[Example], width: usize) -> Result<TfidfModel> {
    if corpus.is_empty() {
        return Err(Error::Argument("fit_tfidf: empty corpus".into()));
    }
    let n_docs = corpus.len() as f64;
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for ex in corpus {
        let unique: HashSet<String> = tokenize(&ex.text).into_iter().collect();
        for term in unique {
            *df.entry(term).or_insert(0) += 1;
        }
    }
    // Sort by df descending, then lexicographic. BTreeMap iteration is
    // already lexicographic, so a stable sort on count alone suffices.
    let mut terms: Vec<(String, usize)> = df.into_iter().collect();
    terms.sort_by(|a, b| b.1.cmp(&a.1));
    terms.truncate(width);
    let mut vocabulary: Vec<String> = Vec::with_capacity(width);
    let mut idf = Vec::with_capacity(width);
    for (term, count) in terms {
        vocabulary.push(term);
        idf.push(((1.0 + n_docs) / (1.0 + count as f64)).ln() + 1.0);
    }
    let mut pad = 0;
    while vocabulary.len() < width {
        vocabulary.push(format!("#pad{pad}"));
        idf.push(0.0);
        pad += 1;
    }
    Ok(TfidfModel {
        vocabulary,
        idf: Tensor1::new(idf),
        tokenizer: "lowercase, split on non-alphanumeric".into(),
    })
}

impl TfidfModel {
    pub fn width(&self) -> usize {
        self.vocabulary.len()
    }

    /// Raw term counts x idf, L2-normalized. A text with no in-vocabulary
    /// terms maps to the zero vector.
    pub fn featurize(&self, text: &str) -> Tensor1 {
        let index: BTreeMap<&str, usize> = self
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        let mut v = vec![0.0; self.width()];
        for token in tokenize(text) {
            if let Some(&i) = index.get(token.as_str()) {
                v[i] += self.idf.data[i];
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        Tensor1::new(v)
    }
}

/// Free-function form of featurization.
pub fn featurize(model: &TfidfModel, text: &str) -> Tensor1 {
    model.featurize(text)
}

const NOISE_POOL: usize = 30;
const KEYWORDS_PER_CLASS: usize = 6;
/// Tokens the mock judge treats as unsafe; a subset of harmless-dimension
/// texts carries one.
pub const UNSAFE_KEYWORDS: [&str; 4] = ["danger0", "danger1", "danger2", "danger3"];

fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Generate the synthetic three-dimension corpus. Each dimension owns
/// disjoint per-class keyword pools (`<dim><class>kw<j>`), texts mix 4
/// keyword draws with 3 shared noise tokens, and roughly a quarter of
/// harmless texts carry one unsafe keyword. The class label is the index
/// of the keyword pool the text draws from. Split: test iff
/// fnv1a(text) % 5 == 0.
pub fn synth_corpus(seed: u64, per_dimension: usize, class_count: usize) -> Result<Vec<Example>> {
    if per_dimension == 0 || class_count == 0 {
        return Err(Error::Argument(
            "synth_corpus: counts must be >= 1".into(),
        ));
    }
    let mut rng = Rng::new(seed);
    let mut corpus = Vec::with_capacity(3 * per_dimension);
    for dim in DimensionTag::ALL {
        for _ in 0..per_dimension {
            let class = rng.next_usize(class_count);
            let mut tokens: Vec<String> = Vec::new();
            for _ in 0..4 {
                let j = rng.next_usize(KEYWORDS_PER_CLASS);
                tokens.push(format!("{}{}kw{}", dim.name(), class, j));
            }
            for _ in 0..3 {
                tokens.push(format!("noise{}", rng.next_usize(NOISE_POOL)));
            }
            if dim == DimensionTag::Harmless && rng.next_f64() < 0.25 {
                tokens.push(UNSAFE_KEYWORDS[rng.next_usize(UNSAFE_KEYWORDS.len())].to_string());
            }
            rng.shuffle(&mut tokens);
            let text = tokens.join(" ");
            let split = if fnv1a(&text) % 5 == 0 {
                Split::Test
            } else {
                Split::Train
            };
            corpus.push(Example {
                text,
                dimension: dim,
                class_label: class,
                split,
            });
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_empty_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.flush().unwrap();
        assert!(load_corpus(f.path()).unwrap().is_empty());
    }

    #[test]
    fn load_single_line_round_trip() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"text":"hello world","dimension":"honest","class_label":1,"split":"test"}}"#
        )
        .unwrap();
        let corpus = load_corpus(f.path()).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus[0].text, "hello world");
        assert_eq!(corpus[0].dimension, DimensionTag::Honest);
        assert_eq!(corpus[0].class_label, 1);
        assert_eq!(corpus[0].split, Split::Test);
    }

    #[test]
    fn load_missing_dimension_names_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"text":"x","class_label":0,"split":"train"}}"#).unwrap();
        let err = load_corpus(f.path()).unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 1);
                assert!(msg.contains("dimension"), "{msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_unknown_dimension_errors() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"text":"x","dimension":"bogus","class_label":0,"split":"train"}}"#
        )
        .unwrap();
        assert!(matches!(
            load_corpus(f.path()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn save_load_round_trips() {
        let corpus = synth_corpus(5, 20, 2).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_corpus(f.path(), &corpus).unwrap();
        let loaded = load_corpus(f.path()).unwrap();
        assert_eq!(corpus, loaded);
    }

    fn one_doc(text: &str) -> Example {
        Example {
            text: text.into(),
            dimension: DimensionTag::Helpful,
            class_label: 0,
            split: Split::Train,
        }
    }

    #[test]
    fn fit_tfidf_one_doc_hand_idf() {
        // N=1, df=1 for both terms: idf = ln(2/2)+1 = 1.
        let model = fit_tfidf(&[one_doc("a b")], 10).unwrap();
        assert_eq!(model.width(), 10);
        for term in ["a", "b"] {
            let i = model.vocabulary.iter().position(|t| t == term).unwrap();
            assert!((model.idf.data[i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_tfidf_two_identical_docs() {
        // N=2, df=2: idf = ln(3/3)+1 = 1.
        let model = fit_tfidf(&[one_doc("a b"), one_doc("a b")], 4).unwrap();
        let i = model.vocabulary.iter().position(|t| t == "a").unwrap();
        assert!((model.idf.data[i] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn absent_terms_never_enter_vocabulary() {
        let model = fit_tfidf(&[one_doc("alpha beta")], 500).unwrap();
        assert!(!model.vocabulary.iter().any(|t| t == "gamma"));
        // Padded up to width with non-token slots.
        assert_eq!(model.width(), 500);
        assert!(model.vocabulary[2].starts_with("#pad"));
    }

    #[test]
    fn fit_tfidf_deterministic() {
        let corpus = synth_corpus(3, 50, 2).unwrap();
        let a = fit_tfidf(&corpus, 500).unwrap();
        let b = fit_tfidf(&corpus, 500).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn featurize_oov_is_zero_vector() {
        let model = fit_tfidf(&[one_doc("a b")], 8).unwrap();
        let v = model.featurize("zzz qqq");
        assert!(v.data.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn featurize_repetition_normalizes_away_on_single_axis() {
        let model = fit_tfidf(&[one_doc("a")], 4).unwrap();
        let once = model.featurize("a");
        let twice = model.featurize("a a");
        assert_eq!(once.data, twice.data);
    }

    #[test]
    fn featurize_norm_is_zero_or_one() {
        let corpus = synth_corpus(4, 30, 2).unwrap();
        let model = fit_tfidf(&corpus, 500).unwrap();
        for ex in corpus.iter().take(20) {
            let n = model.featurize(&ex.text).norm();
            assert!((n - 1.0).abs() < 1e-12 || n == 0.0);
        }
        assert_eq!(model.featurize("").len(), 500);
    }

    #[test]
    fn synth_corpus_deterministic_and_counts() {
        let a = synth_corpus(42, 100, 2).unwrap();
        let b = synth_corpus(42, 100, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 300);
        for dim in DimensionTag::ALL {
            assert_eq!(a.iter().filter(|e| e.dimension == dim).count(), 100);
        }
    }

    #[test]
    fn synth_corpus_has_both_splits() {
        let corpus = synth_corpus(42, 200, 2).unwrap();
        for dim in DimensionTag::ALL {
            assert!(corpus
                .iter()
                .any(|e| e.dimension == dim && e.split == Split::Test));
            assert!(corpus
                .iter()
                .any(|e| e.dimension == dim && e.split == Split::Train));
        }
    }

    /// Independent separability oracle: a one-vs-rest perceptron over
    /// TF-IDF features must separate the three dimensions.
    #[test]
    fn synth_corpus_linearly_separable() {
        let corpus = synth_corpus(7, 60, 2).unwrap();
        let model = fit_tfidf(&corpus, 500).unwrap();
        let feats: Vec<(Tensor1, usize)> = corpus
            .iter()
            .map(|e| (model.featurize(&e.text), e.dimension.index()))
            .collect();
        let dim = model.width();
        let mut w = vec![vec![0.0f64; dim + 1]; 3];
        for _epoch in 0..30 {
            for (x, label) in &feats {
                for c in 0..3 {
                    let target = if c == *label { 1.0 } else { -1.0 };
                    let score: f64 = w[c][..dim]
                        .iter()
                        .zip(&x.data)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        + w[c][dim];
                    if score * target <= 0.0 {
                        for (wi, xi) in w[c][..dim].iter_mut().zip(&x.data) {
                            *wi += target * xi;
                        }
                        w[c][dim] += target;
                    }
                }
            }
        }
        let mut correct = 0;
        for (x, label) in &feats {
            let scores: Vec<f64> = (0..3)
                .map(|c| {
                    w[c][..dim]
                        .iter()
                        .zip(&x.data)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        + w[c][dim]
                })
                .collect();
            let pred = scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if pred == *label {
                correct += 1;
            }
        }
        let acc = correct as f64 / feats.len() as f64;
        assert!(acc >= 0.99, "perceptron accuracy {acc}");
    }
}
