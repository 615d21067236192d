//! Raw feature construction: TF-IDF for text, validated loading of
//! precomputed image descriptors, and the shared feature-file format.
//!
//! Feature files are UTF-8, one record per line:
//!
//! ```text
//! id<TAB>label<TAB>v1,v2,...,vd
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};

const STOPWORDS_EN: &str = include_str!("../data/stopwords_en.txt");

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS_EN.lines().map(str::trim).filter(|w| !w.is_empty()).collect())
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

/// Lowercases, splits on runs of non-alphanumeric characters and drops
/// stopwords and tokens shorter than two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| t.chars().count() >= 2 && !is_stopword(t))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    df: Vec<usize>,
    num_docs: usize,
}

impl Vocabulary {
    /// Builds the vocabulary over every retained token of `corpus`.
    ///
    /// With `top_k`, only the `k` tokens of highest document frequency are
    /// kept (ties broken lexicographically). Indices follow lexicographic
    /// token order either way.
    pub fn fit<S: AsRef<str>>(corpus: &[S], top_k: Option<usize>) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in corpus {
            let unique: HashSet<String> = tokenize(doc.as_ref()).into_iter().collect();
            for t in unique {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut entries: Vec<(String, usize)> = df.into_iter().collect();
        if let Some(k) = top_k {
            entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            entries.truncate(k);
            entries.sort_by(|a, b| a.0.cmp(&b.0));
        }
        Self::from_entries(entries, corpus.len())
    }

    fn from_entries(entries: Vec<(String, usize)>, num_docs: usize) -> Result<Self> {
        let mut tokens = Vec::with_capacity(entries.len());
        let mut df = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (t, f)) in entries.into_iter().enumerate() {
            if f == 0 || f > num_docs {
                return Err(Error::parse(
                    format!("token {t:?}"),
                    format!("document frequency {f} outside 1..={num_docs}"),
                ));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::DuplicateId(t));
            }
            tokens.push(t);
            df.push(f);
        }
        Ok(Self {
            tokens,
            index,
            df,
            num_docs,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn df(&self, token: &str) -> Option<usize> {
        self.index_of(token).map(|i| self.df[i])
    }

    pub fn df_table(&self) -> &[usize] {
        &self.df
    }

    pub fn idf(&self, index: usize) -> f64 {
        (self.num_docs as f64 / self.df[index] as f64).ln()
    }

    /// Raw in-document counts of each vocabulary token.
    pub fn term_counts(&self, text: &str) -> Vec<f64> {
        let mut tf = vec![0.0; self.len()];
        for t in tokenize(text) {
            if let Some(i) = self.index_of(&t) {
                tf[i] += 1.0;
            }
        }
        tf
    }

    /// `tf(t) · ln(N / df(t))`, no smoothing or normalization.
    pub fn transform(&self, text: &str) -> Vec<f64> {
        let mut v = self.term_counts(text);
        for (i, x) in v.iter_mut().enumerate() {
            if *x != 0.0 {
                *x *= self.idf(i);
            }
        }
        v
    }

    /// Writes `#N=<count>` followed by `token<TAB>index<TAB>df` lines.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "#N={}", self.num_docs)?;
        for (i, (t, f)) in self.tokens.iter().zip(&self.df).enumerate() {
            writeln!(w, "{t}\t{i}\t{f}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse("vocabulary line 1", "missing #N header"))?;
        let num_docs = header
            .strip_prefix("#N=")
            .and_then(|n| n.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::parse("vocabulary line 1", "expected #N=<count>"))?;
        let mut entries = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let loc = || format!("vocabulary line {}", i + 1);
            let parts: Vec<&str> = line.split('\t').collect();
            let [token, idx, df] = parts.as_slice() else {
                return Err(Error::parse(loc(), "expected token<TAB>index<TAB>df"));
            };
            let idx: usize = idx.parse().map_err(|_| Error::parse(loc(), "bad index"))?;
            if idx != entries.len() {
                return Err(Error::parse(loc(), format!("index {idx} out of order")));
            }
            let df: usize = df.parse().map_err(|_| Error::parse(loc(), "bad df"))?;
            entries.push((token.to_string(), df));
        }
        Self::from_entries(entries, num_docs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// One line of a feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub label: usize,
    pub values: Vec<f64>,
}

impl FeatureRecord {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Parses a feature file. Every record must have `expected_dim` values, or,
/// when `None`, the width of the first record.
pub fn parse_feature_file(
    text: &str,
    source: &str,
    expected_dim: Option<usize>,
) -> Result<Vec<FeatureRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut dim = expected_dim;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let loc = || format!("{source}:{line_no}");
        let mut parts = line.splitn(3, '\t');
        let (Some(id), Some(label), Some(values)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::parse(loc(), "expected id<TAB>label<TAB>values"));
        };
        if id.is_empty() {
            return Err(Error::parse(loc(), "empty id"));
        }
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| Error::parse(loc(), format!("bad label {label:?}")))?;
        let mut parsed = Vec::new();
        if !values.trim().is_empty() {
            for (col, tok) in values.split(',').enumerate() {
                let v: f64 = tok.trim().parse().map_err(|_| {
                    Error::parse(format!("{}, value {}", loc(), col + 1), format!("not a number: {tok:?}"))
                })?;
                if !v.is_finite() {
                    return Err(Error::parse(
                        format!("{}, value {}", loc(), col + 1),
                        "non-finite value",
                    ));
                }
                parsed.push(v);
            }
        }
        let expected = *dim.get_or_insert(parsed.len());
        if parsed.len() != expected {
            return Err(Error::DimensionMismatch {
                id: id.to_string(),
                line: line_no,
                expected,
                found: parsed.len(),
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        out.push(FeatureRecord {
            id: id.to_string(),
            label,
            values: parsed,
        });
    }
    Ok(out)
}

pub fn load_feature_file(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Vec<FeatureRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::DanglingReference(path.to_path_buf())
        } else {
            e.into()
        }
    })?;
    parse_feature_file(&text, &path.display().to_string(), expected_dim)
}

/// Loads precomputed image descriptors (e.g. CNN activations) of a declared
/// width.
pub fn load_image_features(path: impl AsRef<Path>, expected_dim: usize) -> Result<Vec<FeatureRecord>> {
    load_feature_file(path, Some(expected_dim))
}

pub fn write_feature_records<'a, W: Write>(
    mut w: W,
    records: impl IntoIterator<Item = &'a FeatureRecord>,
) -> Result<()> {
    for r in records {
        write!(w, "{}\t{}\t", r.id, r.label)?;
        for (i, v) in r.values.iter().enumerate() {
            if i > 0 {
                w.write_all(b",")?;
            }
            write!(w, "{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn save_feature_file<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a FeatureRecord>,
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_feature_records(&mut w, records)?;
    w.flush()?;
    Ok(())
}

/// One line of a raw text corpus: `id<TAB>label<TAB>raw text`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusDoc {
    pub id: String,
    pub label: usize,
    pub text: String,
}

pub fn parse_corpus(text: &str, source: &str) -> Result<Vec<CorpusDoc>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let loc = || format!("{source}:{}", i + 1);
        let mut parts = line.splitn(3, '\t');
        let (Some(id), Some(label)) = (parts.next(), parts.next()) else {
            return Err(Error::parse(loc(), "expected id<TAB>label<TAB>text"));
        };
        let label = label
            .trim()
            .parse()
            .map_err(|_| Error::parse(loc(), format!("bad label {label:?}")))?;
        if !seen.insert(id.to_string()) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        docs.push(CorpusDoc {
            id: id.to_string(),
            label,
            text: parts.next().unwrap_or("").to_string(),
        });
    }
    Ok(docs)
}

/// Fits a vocabulary on `docs` and featurizes each of them.
pub fn featurize_corpus(docs: &[CorpusDoc], top_k: Option<usize>) -> Result<(Vocabulary, Vec<FeatureRecord>)> {
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let vocab = Vocabulary::fit(&texts, top_k)?;
    let records = docs
        .iter()
        .map(|d| FeatureRecord {
            id: d.id.clone(),
            label: d.label,
            values: vocab.transform(&d.text),
        })
        .collect();
    Ok((vocab, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The cat, the CAT!"), vec!["cat", "cat"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize("a b").is_empty());
        assert_eq!(tokenize("Tianjin explosion—2015"), vec!["tianjin", "explosion", "2015"]);
    }

    #[test]
    fn fit_examples() {
        let v = Vocabulary::fit(&["cat dog", "dog bird"], None).unwrap();
        assert_eq!(v.tokens(), &["bird", "cat", "dog"]);
        assert_eq!(v.df_table(), &[1, 1, 2]);
        assert_eq!(v.num_docs(), 2);

        let single = Vocabulary::fit(&["red green green blue"], None).unwrap();
        assert!(single.df_table().iter().all(|&d| d == 1));

        let top = Vocabulary::fit(&["cat dog", "dog bird"], Some(1)).unwrap();
        assert_eq!(top.tokens(), &["dog"]);

        let tie = Vocabulary::fit(&["cat dog", "dog bird"], Some(2)).unwrap();
        assert_eq!(tie.tokens(), &["bird", "dog"]);

        assert!(matches!(Vocabulary::fit::<&str>(&[], None), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn transform_examples() {
        let v = Vocabulary::fit(&["cat dog", "dog bird"], None).unwrap();
        let x = v.transform("cat cat");
        assert_eq!(x, vec![0.0, 2.0 * 2f64.ln(), 0.0]);
        assert_eq!(v.transform("dog"), vec![0.0; 3]);
        assert_eq!(v.transform(""), vec![0.0; 3]);
        assert_eq!(v.transform("zebra"), vec![0.0; 3]);
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let v = Vocabulary::fit(&["cat dog", "dog bird", "fish"], None).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("#N=3\nbird\t0\t1\n"));
        assert_eq!(Vocabulary::parse(&text).unwrap(), v);
        assert!(Vocabulary::parse("bird\t0\t1\n").is_err());
    }

    #[test]
    fn feature_file_parsing() {
        let ok = "a\t0\t1,2,3,4\nb\t1\t0.5,0,0,-1\nc\t2\t1e-3,2,3,4\n";
        let recs = parse_feature_file(ok, "mem", Some(4)).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[2].values[0], 1e-3);

        let wide = "a\t0\t1,2,3,4\nb\t0\t1,2,3,4,5\n";
        match parse_feature_file(wide, "mem", Some(4)) {
            Err(Error::DimensionMismatch { id, line, expected, found }) => {
                assert_eq!((id.as_str(), line, expected, found), ("b", 2, 4, 5));
            }
            other => panic!("{other:?}"),
        }

        let bad = "a\t0\t1,2\nb\t0\t1,x\n";
        match parse_feature_file(bad, "mem", None) {
            Err(Error::Parse { location, .. }) => assert_eq!(location, "mem:2, value 2"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_feature_file("a\t0\t1\na\t0\t2\n", "mem", None),
            Err(Error::DuplicateId(_))
        ));
        assert!(parse_feature_file("a\t-1\t1\n", "mem", None).is_err());
    }

    #[test]
    fn feature_records_round_trip() {
        let recs = vec![
            FeatureRecord { id: "x".into(), label: 3, values: vec![0.1, -2.5e-17, 3.0] },
            FeatureRecord { id: "y".into(), label: 0, values: vec![1.0 / 3.0, 0.0, -0.0] },
        ];
        let mut buf = Vec::new();
        write_feature_records(&mut buf, &recs).unwrap();
        let back = parse_feature_file(std::str::from_utf8(&buf).unwrap(), "mem", Some(3)).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn corpus_parsing() {
        let docs = parse_corpus("d1\t0\tThe cat sat\nd2\t1\t\n", "mem").unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[1].text, "");
        assert!(parse_corpus("d1\n", "mem").is_err());
    }

    proptest::proptest! {
        #[test]
        fn tokenize_idempotent(text in "[a-zA-Z0-9 ,.!'-]{0,80}") {
            let once = tokenize(&text);
            proptest::prop_assert_eq!(tokenize(&once.join(" ")), once);
        }

        #[test]
        fn transform_is_non_negative_and_df_consistent(
            docs in proptest::collection::vec("(alpha|beta|gamma|delta|omega| ){0,12}", 1..8)
        ) {
            let vocab = Vocabulary::fit(&docs, None).unwrap();
            let mut df = vec![0usize; vocab.len()];
            for d in &docs {
                proptest::prop_assert!(vocab.transform(d).iter().all(|v| *v >= 0.0 && v.is_finite()));
                for (i, c) in vocab.term_counts(d).iter().enumerate() {
                    if *c > 0.0 { df[i] += 1; }
                }
            }
            proptest::prop_assert_eq!(df.as_slice(), vocab.df_table());
        }
    }
}
