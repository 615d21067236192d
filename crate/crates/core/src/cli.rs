//! Command implementations behind the `crossalign` binary.
//!
//! Every command reads a [`RunConfig`], a flat `key = value` file whose
//! entries can each be overridden from the command line. One root `seed`
//! drives everything: synthetic data, the split, initialization and
//! sampling each derive their own stream from it.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::alignment::AlignmentKind;
use crate::datagen::{generate, SynthSpec};
use crate::dataset::{load_manifest, save_manifest, Dataset, Modality, SplitFractions};
use crate::error::{Error, Result};
use crate::features::{featurize_corpus, parse_corpus, save_feature_file};
use crate::network::ModelParams;
use crate::pipeline::{evaluate, partition_for, run_holdout, train_on, EvalOptions, HoldoutOutcome};
use crate::retrieval::{rank, write_map_csv, write_per_query_csv, Direction, EmbeddingIndex, EmbeddingKind, MapReport, Metric, RankingList};
use crate::trainer::{TrainConfig, TrainLog};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub manifest: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub top_k: Option<usize>,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub split: SplitFractions,
    pub metrics: Vec<Metric>,
    pub directions: Vec<Direction>,
    pub embedding: EmbeddingKind,
    pub depth: Option<usize>,
    pub per_query: bool,
    pub held_labels: Vec<usize>,
    pub query_id: Option<String>,
    pub k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("out"),
            manifest: None,
            model: None,
            corpus: None,
            top_k: None,
            train: TrainConfig::default(),
            synth: SynthSpec::default(),
            split: SplitFractions::default(),
            metrics: vec![Metric::Cosine],
            directions: Direction::BOTH.to_vec(),
            embedding: EmbeddingKind::Probability,
            depth: None,
            per_query: false,
            held_labels: Vec::new(),
            query_id: None,
            k: 10,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value.trim() {
        "" | "none" | "all" => Ok(None),
        v => parse_num(key, v).map(Some),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        v => Err(Error::Config(format!("bad boolean {v:?} for {key}"))),
    }
}

impl RunConfig {
    /// Keys accepted by [`RunConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "seed", "out_dir", "manifest", "model", "corpus", "top_k",
        "batch_size", "learning_rate", "momentum", "epochs", "hidden",
        "alignment", "alignment_weight", "mmd_offset", "mmd_degree", "triplet_margin",
        "synth_classes", "synth_n_image", "synth_n_text", "synth_dim_image",
        "synth_dim_text", "synth_latent_dim", "synth_sigma",
        "split_train", "split_validation", "split_test",
        "metric", "direction", "embedding", "depth", "per_query",
        "held_labels", "query_id", "k",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => {
                self.seed = parse_num(key, v)?;
                self.train.seed = self.seed;
                self.synth.seed = self.seed;
            }
            "out_dir" => self.out_dir = PathBuf::from(v),
            "manifest" => self.manifest = Some(PathBuf::from(v)),
            "model" => self.model = Some(PathBuf::from(v)),
            "corpus" => self.corpus = Some(PathBuf::from(v)),
            "top_k" => self.top_k = parse_optional(key, v)?,
            "batch_size" => self.train.batch_size = parse_num(key, v)?,
            "learning_rate" => self.train.learning_rate = parse_num(key, v)?,
            "momentum" => self.train.momentum = parse_num(key, v)?,
            "epochs" => self.train.epochs = parse_num(key, v)?,
            "hidden" => self.train.hidden = parse_num(key, v)?,
            "alignment" => {
                // Keep any previously set kind parameters.
                let kind: AlignmentKind = v.parse()?;
                self.train.alignment = match (kind, self.train.alignment) {
                    (AlignmentKind::Mmd { .. }, prev @ AlignmentKind::Mmd { .. }) => prev,
                    (AlignmentKind::Triplet { .. }, prev @ AlignmentKind::Triplet { .. }) => prev,
                    (k, _) => k,
                };
            }
            "alignment_weight" => self.train.alignment_weight = parse_num(key, v)?,
            "mmd_offset" | "mmd_degree" => {
                let (mut offset, mut degree) = match self.train.alignment {
                    AlignmentKind::Mmd { offset, degree } => (offset, degree),
                    _ => (crate::alignment::DEFAULT_MMD_OFFSET, crate::alignment::DEFAULT_MMD_DEGREE),
                };
                if key.trim() == "mmd_offset" {
                    offset = parse_num(key, v)?;
                } else {
                    degree = parse_num(key, v)?;
                }
                self.train.alignment = AlignmentKind::Mmd { offset, degree };
            }
            "triplet_margin" => {
                self.train.alignment = AlignmentKind::Triplet {
                    margin: parse_num(key, v)?,
                }
            }
            "synth_classes" => self.synth.classes = parse_num(key, v)?,
            "synth_n_image" => self.synth.n_image = parse_num(key, v)?,
            "synth_n_text" => self.synth.n_text = parse_num(key, v)?,
            "synth_dim_image" => self.synth.dim_image = parse_num(key, v)?,
            "synth_dim_text" => self.synth.dim_text = parse_num(key, v)?,
            "synth_latent_dim" => self.synth.latent_dim = parse_num(key, v)?,
            "synth_sigma" => self.synth.sigma = parse_num(key, v)?,
            "split_train" => self.split.train = parse_num(key, v)?,
            "split_validation" => self.split.validation = parse_num(key, v)?,
            "split_test" => self.split.test = parse_num(key, v)?,
            "metric" => {
                self.metrics = if v.eq_ignore_ascii_case("all") {
                    Metric::ALL.to_vec()
                } else {
                    v.split(',').map(str::parse).collect::<Result<_>>()?
                }
            }
            "direction" => {
                self.directions = if v.eq_ignore_ascii_case("both") {
                    Direction::BOTH.to_vec()
                } else {
                    vec![v.parse()?]
                }
            }
            "embedding" => self.embedding = v.parse()?,
            "depth" => self.depth = parse_optional(key, v)?,
            "per_query" => self.per_query = parse_bool(key, v)?,
            "held_labels" => {
                self.held_labels = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|x| parse_num(key, x)).collect::<Result<_>>()?
                }
            }
            "query_id" => self.query_id = Some(v.to_string()),
            "k" => self.k = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("config line {}", i + 1), "expected key = value"))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::DanglingReference(path.to_path_buf()),
            _ => e.into(),
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.split.validate()?;
        if self.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        Ok(())
    }

    fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            metrics: self.metrics.clone(),
            directions: self.directions.clone(),
            kind: self.embedding,
            depth: self.depth,
        }
    }

    fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        let p = path
            .clone()
            .ok_or_else(|| Error::Config(format!("missing required key {key}")))?;
        if !p.exists() {
            return Err(Error::DanglingReference(p));
        }
        Ok(p)
    }

    fn ensure_out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out_dir)?;
        Ok(&self.out_dir)
    }

    fn load_dataset(&self) -> Result<Dataset> {
        let manifest = Self::require(&self.manifest, "manifest")?;
        load_manifest(manifest).map(|(d, _)| d)
    }
}

#[derive(Debug, Clone)]
pub struct FeaturizeOutput {
    pub vocab_size: usize,
    pub num_docs: usize,
    pub features_path: PathBuf,
    pub vocab_path: PathBuf,
}

/// TF-IDF featurization of a `id<TAB>label<TAB>text` corpus into
/// `text_features.tsv` and `vocabulary.tsv` under `out_dir`.
pub fn cmd_featurize_text(cfg: &RunConfig) -> Result<FeaturizeOutput> {
    let corpus = RunConfig::require(&cfg.corpus, "corpus")?;
    let text = fs::read_to_string(&corpus)?;
    let docs = parse_corpus(&text, &corpus.display().to_string())?;
    let (vocab, records) = featurize_corpus(&docs, cfg.top_k)?;
    let out = cfg.ensure_out_dir()?;
    let features_path = out.join("text_features.tsv");
    let vocab_path = out.join("vocabulary.tsv");
    save_feature_file(&features_path, &records)?;
    vocab.save(&vocab_path)?;
    Ok(FeaturizeOutput {
        vocab_size: vocab.len(),
        num_docs: vocab.num_docs(),
        features_path,
        vocab_path,
    })
}

/// Writes a synthetic dataset and its manifest under `out_dir`.
pub fn cmd_gen_synth(cfg: &RunConfig) -> Result<PathBuf> {
    let dataset = generate(&cfg.synth)?;
    save_manifest(&dataset, cfg.ensure_out_dir()?)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model_path: PathBuf,
    pub log_path: PathBuf,
    pub log: TrainLog,
}

/// Trains on the train partition; writes `model.txt` and `train_log.csv`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let dataset = cfg.load_dataset()?;
    let out = cfg.ensure_out_dir()?.to_path_buf();
    let partition = partition_for(&dataset, cfg.split, cfg.seed)?;
    let (params, log) = train_on(&dataset, &partition, &cfg.train)?;
    let model_path = cfg.model.clone().unwrap_or_else(|| out.join("model.txt"));
    params.save(&model_path)?;
    let log_path = out.join("train_log.csv");
    log.save_csv(&log_path)?;
    Ok(TrainOutput {
        model_path,
        log_path,
        log,
    })
}

fn load_model_for(cfg: &RunConfig, dataset: &Dataset) -> Result<ModelParams> {
    let model_path = match &cfg.model {
        Some(p) => p.clone(),
        None => cfg.out_dir.join("model.txt"),
    };
    if !model_path.exists() {
        return Err(Error::DanglingReference(model_path));
    }
    let params = ModelParams::load(&model_path)?;
    for (modality, branch) in [(Modality::Image, &params.image), (Modality::Text, &params.text)] {
        if branch.input_dim() != dataset.dim(modality) {
            return Err(Error::DimensionMismatch {
                id: format!("{modality} branch"),
                line: 0,
                expected: branch.input_dim(),
                found: dataset.dim(modality),
            });
        }
    }
    if params.classes() < dataset.classes() {
        return Err(Error::Config(format!(
            "model has {} classes, dataset {}",
            params.classes(),
            dataset.classes()
        )));
    }
    Ok(params)
}

fn per_query_name(r: &MapReport) -> String {
    format!(
        "per_query_{}_{}.csv",
        r.direction.map_or("same_modality", Direction::name),
        r.metric
    )
}

fn write_reports(out: &Path, name: &str, reports: &[MapReport], per_query: bool) -> Result<PathBuf> {
    let path = out.join(name);
    let mut buf = Vec::new();
    write_map_csv(&mut buf, reports)?;
    fs::write(&path, buf)?;
    if per_query {
        for r in reports {
            let mut buf = Vec::new();
            write_per_query_csv(&mut buf, r)?;
            let stem = name.trim_end_matches(".csv");
            fs::write(out.join(format!("{stem}_{}", per_query_name(r))), buf)?;
        }
    }
    Ok(path)
}

/// Embeds the test partition and writes `map_report.csv`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<Vec<MapReport>> {
    cfg.validate()?;
    let dataset = cfg.load_dataset()?;
    let params = load_model_for(cfg, &dataset)?;
    let partition = partition_for(&dataset, cfg.split, cfg.seed)?;
    let reports = evaluate(&params, &dataset, &partition, &cfg.eval_options())?;
    write_reports(cfg.ensure_out_dir()?, "map_report.csv", &reports, cfg.per_query)?;
    Ok(reports)
}

/// Ranks the other modality's test partition for one test-partition query
/// and returns the top `k` (all candidates when fewer).
pub fn cmd_retrieve(cfg: &RunConfig) -> Result<RankingList> {
    cfg.validate()?;
    let dataset = cfg.load_dataset()?;
    let params = load_model_for(cfg, &dataset)?;
    let query_id = cfg
        .query_id
        .clone()
        .ok_or_else(|| Error::Config("missing required key query_id".into()))?;
    let partition = partition_for(&dataset, cfg.split, cfg.seed)?;
    let metric = *cfg.metrics.first().unwrap_or(&Metric::Cosine);

    for modality in Modality::BOTH {
        let test = &partition.get(modality).test;
        let Some(pos) = test.iter().position(|&i| dataset.records(modality)[i].id == query_id) else {
            continue;
        };
        let other = modality.other();
        let branch = |m: Modality| match m {
            Modality::Image => &params.image,
            Modality::Text => &params.text,
        };
        let queries = EmbeddingIndex::embed(branch(modality), &dataset, modality, &test[pos..=pos], cfg.embedding)?;
        let index = EmbeddingIndex::embed(branch(other), &dataset, other, &partition.get(other).test, cfg.embedding)?;
        let mut ranking = rank(queries.embedding(0), &query_id, queries.label(0), &index, metric)?;
        ranking.items.truncate(cfg.k);
        return Ok(ranking);
    }
    Err(Error::UnknownQueryId(query_id))
}

pub fn format_ranking(ranking: &RankingList) -> String {
    let mut s = format!(
        "query {} (label {})\nrank\tid\tlabel\tscore\trelevant\n",
        ranking.query_id, ranking.query_label
    );
    for (i, item) in ranking.items.iter().enumerate() {
        s.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{}\n",
            i + 1,
            item.id,
            item.label,
            item.score,
            if item.relevant { "*" } else { "" }
        ));
    }
    s
}

/// Trains without the held labels and reports held-label and seen-label
/// query MAP separately (`holdout_held.csv`, `holdout_seen.csv`).
pub fn cmd_holdout_eval(cfg: &RunConfig) -> Result<HoldoutOutcome> {
    cfg.validate()?;
    let dataset = cfg.load_dataset()?;
    let held: Vec<usize> = cfg.held_labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let outcome = run_holdout(&dataset, cfg.split, &held, &cfg.train, &cfg.eval_options())?;
    let out = cfg.ensure_out_dir()?;
    outcome.params.save(out.join("holdout_model.txt"))?;
    outcome.log.save_csv(out.join("holdout_train_log.csv"))?;
    write_reports(out, "holdout_held.csv", &outcome.held, cfg.per_query)?;
    write_reports(out, "holdout_seen.csv", &outcome.seen, cfg.per_query)?;
    Ok(outcome)
}

pub fn print_reports<W: Write>(mut w: W, reports: &[MapReport]) -> Result<()> {
    write_map_csv(&mut w, reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let cfg = RunConfig::parse(
            "# comment\nseed = 7\nepochs=3 # trailing\nmetric = all\nalignment = mmd\nmmd_degree = 3\nheld_labels = 1,2\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.synth.seed, 7);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.metrics, Metric::ALL.to_vec());
        assert_eq!(cfg.train.alignment, AlignmentKind::Mmd { offset: 1.0, degree: 3 });
        assert_eq!(cfg.held_labels, vec![1, 2]);
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse("sede = 1\n").is_err());
        assert!(RunConfig::parse("epochs = many\n").is_err());
        assert!(RunConfig::parse("just words\n").is_err());
        assert!(RunConfig::parse("metric = hamming\n").is_err());
    }

    #[test]
    fn every_listed_key_is_accepted() {
        let samples = [
            ("seed", "1"), ("out_dir", "x"), ("manifest", "m"), ("model", "m"), ("corpus", "c"),
            ("top_k", "3"), ("batch_size", "4"), ("learning_rate", "0.1"), ("momentum", "0.5"),
            ("epochs", "2"), ("hidden", "8"), ("alignment", "coral"), ("alignment_weight", "2"),
            ("mmd_offset", "1"), ("mmd_degree", "2"), ("triplet_margin", "1"),
            ("synth_classes", "3"), ("synth_n_image", "10"), ("synth_n_text", "10"),
            ("synth_dim_image", "4"), ("synth_dim_text", "4"), ("synth_latent_dim", "2"),
            ("synth_sigma", "0.2"), ("split_train", "0.6"), ("split_validation", "0.15"),
            ("split_test", "0.25"), ("metric", "cosine"), ("direction", "both"),
            ("embedding", "logit"), ("depth", "all"), ("per_query", "true"),
            ("held_labels", ""), ("query_id", "q"), ("k", "5"),
        ];
        assert_eq!(samples.len(), RunConfig::KEYS.len());
        let mut cfg = RunConfig::default();
        for (k, v) in samples {
            assert!(RunConfig::KEYS.contains(&k));
            cfg.set(k, v).unwrap();
        }
    }

    #[test]
    fn missing_paths_are_reported() {
        let mut cfg = RunConfig::default();
        cfg.manifest = Some(PathBuf::from("/definitely/not/here.tsv"));
        assert!(matches!(cmd_train(&cfg), Err(Error::DanglingReference(_))));
        cfg.manifest = None;
        assert!(matches!(cmd_train(&cfg), Err(Error::Config(_))));
    }
}
