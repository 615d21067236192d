//! Unpaired two-modality datasets: manifest loading, stratified splitting
//! and the new-event holdout.
//!
//! A manifest is UTF-8 text with one `modality<TAB>feature_file_path` line
//! per feature file; relative paths resolve against the manifest's
//! directory. Blank lines and `#` comments are ignored.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::features::{load_feature_file, save_feature_file, FeatureRecord};
use crate::numerics::{seeded_rng, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::Image, Modality::Text];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
        }
    }

    pub fn other(self) -> Self {
        match self {
            Modality::Image => Modality::Text,
            Modality::Text => Modality::Image,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "image" | "img" => Ok(Modality::Image),
            "text" | "txt" => Ok(Modality::Text),
            other => Err(Error::Config(format!("unknown modality {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub modality: Modality,
    pub label: usize,
    pub features: Vec<f64>,
}

/// Non-fatal findings reported while loading or splitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetWarning {
    /// Labels in `0..K` with no samples in either modality.
    LabelGap { missing: Vec<usize> },
    /// The modalities imply different label counts; the maximum is used.
    ClassCountMismatch { image: usize, text: usize },
    /// Too few samples of a label to populate every partition; all of them
    /// went to train.
    SmallLabel {
        modality: Modality,
        label: usize,
        count: usize,
    },
}

impl fmt::Display for DatasetWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetWarning::LabelGap { missing } => {
                write!(f, "labels without samples: {missing:?}")
            }
            DatasetWarning::ClassCountMismatch { image, text } => write!(
                f,
                "image data implies {image} labels, text data {text}; using {}",
                image.max(text)
            ),
            DatasetWarning::SmallLabel {
                modality,
                label,
                count,
            } => write!(
                f,
                "{modality} label {label} has only {count} samples; all assigned to train"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    image: Vec<SampleRecord>,
    text: Vec<SampleRecord>,
    classes: usize,
}

impl Dataset {
    /// Validates ids and widths and infers the label count as max label + 1.
    pub fn new(image: Vec<SampleRecord>, text: Vec<SampleRecord>) -> Result<(Self, Vec<DatasetWarning>)> {
        for (records, modality) in [(&image, Modality::Image), (&text, Modality::Text)] {
            let mut ids = HashSet::new();
            let dim = records.first().map(|r| r.features.len());
            for r in records {
                if r.modality != modality {
                    return Err(Error::Config(format!(
                        "record {:?} tagged {} in the {} set",
                        r.id, r.modality, modality
                    )));
                }
                if !ids.insert(r.id.as_str()) {
                    return Err(Error::DuplicateId(r.id.clone()));
                }
                if Some(r.features.len()) != dim {
                    return Err(Error::DimensionMismatch {
                        id: r.id.clone(),
                        line: 0,
                        expected: dim.unwrap_or(0),
                        found: r.features.len(),
                    });
                }
            }
        }
        let k_of = |rs: &[SampleRecord]| rs.iter().map(|r| r.label + 1).max().unwrap_or(0);
        let (k_img, k_txt) = (k_of(&image), k_of(&text));
        let classes = k_img.max(k_txt);
        let mut warnings = Vec::new();
        if k_img != k_txt && k_img > 0 && k_txt > 0 {
            warnings.push(DatasetWarning::ClassCountMismatch {
                image: k_img,
                text: k_txt,
            });
        }
        let present: BTreeSet<usize> = image.iter().chain(&text).map(|r| r.label).collect();
        let missing: Vec<usize> = (0..classes).filter(|l| !present.contains(l)).collect();
        if !missing.is_empty() {
            warnings.push(DatasetWarning::LabelGap { missing });
        }
        Ok((
            Self {
                image,
                text,
                classes,
            },
            warnings,
        ))
    }

    pub fn from_feature_records(
        image: Vec<FeatureRecord>,
        text: Vec<FeatureRecord>,
    ) -> Result<(Self, Vec<DatasetWarning>)> {
        let convert = |recs: Vec<FeatureRecord>, modality| {
            recs.into_iter()
                .map(|r| SampleRecord {
                    id: r.id,
                    modality,
                    label: r.label,
                    features: r.values,
                })
                .collect()
        };
        Self::new(convert(image, Modality::Image), convert(text, Modality::Text))
    }

    pub fn records(&self, modality: Modality) -> &[SampleRecord] {
        match modality {
            Modality::Image => &self.image,
            Modality::Text => &self.text,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Feature width of a modality (0 when it has no samples).
    pub fn dim(&self, modality: Modality) -> usize {
        self.records(modality).first().map_or(0, |r| r.features.len())
    }

    pub fn find(&self, modality: Modality, id: &str) -> Option<usize> {
        self.records(modality).iter().position(|r| r.id == id)
    }

    pub fn features(&self, modality: Modality, indices: &[usize]) -> Matrix {
        let recs = self.records(modality);
        let dim = self.dim(modality);
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            data.extend_from_slice(&recs[i].features);
        }
        Matrix::new(indices.len(), dim, data).expect("validated dataset")
    }

    pub fn labels(&self, modality: Modality, indices: &[usize]) -> Vec<usize> {
        let recs = self.records(modality);
        indices.iter().map(|&i| recs[i].label).collect()
    }

    pub fn ids(&self, modality: Modality, indices: &[usize]) -> Vec<String> {
        let recs = self.records(modality);
        indices.iter().map(|&i| recs[i].id.clone()).collect()
    }

    fn feature_records(&self, modality: Modality) -> Vec<FeatureRecord> {
        self.records(modality)
            .iter()
            .map(|r| FeatureRecord {
                id: r.id.clone(),
                label: r.label,
                values: r.features.clone(),
            })
            .collect()
    }
}

/// Loads a manifest and every feature file it references.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<(Dataset, Vec<DatasetWarning>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::DanglingReference(path.to_path_buf())
        } else {
            e.into()
        }
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut image = Vec::new();
    let mut txt = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = || format!("{}:{}", path.display(), i + 1);
        let Some((modality, file)) = line.split_once('\t') else {
            return Err(Error::parse(loc(), "expected modality<TAB>path"));
        };
        let modality: Modality = modality
            .parse()
            .map_err(|_| Error::parse(loc(), format!("unknown modality {modality:?}")))?;
        let file = PathBuf::from(file.trim());
        let resolved = if file.is_absolute() { file } else { base.join(file) };
        if !resolved.exists() {
            return Err(Error::DanglingReference(resolved));
        }
        let target = match modality {
            Modality::Image => &mut image,
            Modality::Text => &mut txt,
        };
        let expected = target.first().map(|r: &FeatureRecord| r.dim());
        target.extend(load_feature_file(&resolved, expected)?);
    }
    let (dataset, warnings) = Dataset::from_feature_records(image, txt)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((dataset, warnings))
}

/// Writes `image.tsv`, `text.tsv` and `manifest.tsv` into `dir` and returns
/// the manifest path.
pub fn save_manifest(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    save_feature_file(dir.join("image.tsv"), &dataset.feature_records(Modality::Image))?;
    save_feature_file(dir.join("text.tsv"), &dataset.feature_records(Modality::Text))?;
    let manifest = dir.join("manifest.tsv");
    fs::write(&manifest, "image\timage.tsv\ntext\ttext.tsv\n")?;
    Ok(manifest)
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            validation: 0.15,
            test: 0.25,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {parts:?} must lie in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }

    fn nonzero_parts(&self) -> usize {
        [self.train, self.validation, self.test]
            .iter()
            .filter(|&&f| f > 0.0)
            .count()
    }
}

/// Dataset indices (not ids) of one modality's partitions, each ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModalitySplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    pub image: ModalitySplit,
    pub text: ModalitySplit,
}

impl Partition {
    pub fn get(&self, modality: Modality) -> &ModalitySplit {
        match modality {
            Modality::Image => &self.image,
            Modality::Text => &self.text,
        }
    }

    fn get_mut(&mut self, modality: Modality) -> &mut ModalitySplit {
        match modality {
            Modality::Image => &mut self.image,
            Modality::Text => &mut self.text,
        }
    }
}

/// Partition sizes for `n` samples of one label.
///
/// Validation and test get `floor(n·f)`, train the remainder. If that leaves
/// train more than one sample above its exact share, the one extra sample
/// goes to whichever of validation/test has the larger fractional part.
fn partition_sizes(n: usize, f: &SplitFractions) -> (usize, usize, usize) {
    let exact_val = n as f64 * f.validation;
    let exact_test = n as f64 * f.test;
    let mut val = (exact_val + 1e-9).floor() as usize;
    let mut test = (exact_test + 1e-9).floor() as usize;
    let train_share = n as f64 * f.train;
    if (n - val - test) as f64 - train_share > 1.0 + 1e-9 {
        if exact_val - val as f64 >= exact_test - test as f64 {
            val += 1;
        } else {
            test += 1;
        }
    }
    (n - val - test, val, test)
}

/// Stratified-by-label random split, independently per modality.
pub fn split(
    dataset: &Dataset,
    fractions: SplitFractions,
    seed: u64,
) -> Result<(Partition, Vec<DatasetWarning>)> {
    fractions.validate()?;
    let mut rng = seeded_rng(seed);
    let mut partition = Partition::default();
    let mut warnings = Vec::new();
    let parts = fractions.nonzero_parts();
    for modality in Modality::BOTH {
        let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, r) in dataset.records(modality).iter().enumerate() {
            by_label.entry(r.label).or_default().push(i);
        }
        let out = partition.get_mut(modality);
        for (label, mut idx) in by_label {
            if idx.len() < parts {
                warnings.push(DatasetWarning::SmallLabel {
                    modality,
                    label,
                    count: idx.len(),
                });
                out.train.extend(idx);
                continue;
            }
            idx.shuffle(&mut rng);
            let (n_train, n_val, _) = partition_sizes(idx.len(), &fractions);
            out.train.extend_from_slice(&idx[..n_train]);
            out.validation.extend_from_slice(&idx[n_train..n_train + n_val]);
            out.test.extend_from_slice(&idx[n_train + n_val..]);
        }
        out.train.sort_unstable();
        out.validation.sort_unstable();
        out.test.sort_unstable();
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((partition, warnings))
}

/// Removes every sample with a held label from train and validation. Test
/// is left untouched so held-label samples remain available as queries.
pub fn new_event_holdout(dataset: &Dataset, held: &[usize], base: &Partition) -> Result<Partition> {
    let held: BTreeSet<usize> = held.iter().copied().collect();
    if let Some(&bad) = held.iter().find(|&&l| l >= dataset.classes()) {
        return Err(Error::UnknownLabel(bad));
    }
    if dataset.classes() > 0 && held.len() == dataset.classes() {
        return Err(Error::EmptyTraining);
    }
    let mut out = base.clone();
    for modality in Modality::BOTH {
        let recs = dataset.records(modality);
        let keep = |i: &usize| !held.contains(&recs[*i].label);
        let split = out.get_mut(modality);
        split.train.retain(keep);
        split.validation.retain(keep);
        if split.train.is_empty() && !recs.is_empty() {
            return Err(Error::EmptyTraining);
        }
    }
    Ok(out)
}
