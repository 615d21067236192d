//! Synthetic unpaired cross-modal data.
//!
//! Every label owns a latent prototype `z_k ~ N(0, I)`. Each modality has a
//! fixed random linear map `A` (entries `N(0, 1/latent_dim)`, so projected
//! coordinates have roughly unit variance) and emits `A·z_k + N(0, σ²)`.
//! Samples of the two modalities share labels but are never paired.

use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dataset::{Dataset, Modality, SampleRecord};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, seeded_rng, stream, Matrix, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub n_image: usize,
    pub n_text: usize,
    pub dim_image: usize,
    pub dim_text: usize,
    pub latent_dim: usize,
    /// Noise standard deviation.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 5,
            n_image: 200,
            n_text: 200,
            dim_image: 64,
            dim_text: 100,
            latent_dim: 8,
            sigma: 0.1,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("synthetic data needs at least 2 classes".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.dim_image < 2 || self.dim_text < 2 || self.latent_dim < 1 {
            return Err(Error::Config("feature dims must be at least 2".into()));
        }
        Ok(())
    }
}

fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

/// Generates the dataset described by `spec`. Labels cycle `0, 1, …, K−1`
/// so every label gets `n/K` samples, ±1.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seeded_rng(derive_seed(spec.seed, stream::DATAGEN));
    let prototypes = gaussian_matrix(spec.classes, spec.latent_dim, 1.0, &mut rng);
    let proj_std = 1.0 / (spec.latent_dim as f64).sqrt();
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::Config(e.to_string()))?;

    let mut emit = |modality: Modality, n: usize, dim: usize| -> Result<Vec<SampleRecord>> {
        let projection = gaussian_matrix(dim, spec.latent_dim, proj_std, &mut rng);
        let centers = prototypes.matmul_nt(&projection)?;
        let prefix = match modality {
            Modality::Image => "img",
            Modality::Text => "txt",
        };
        Ok((0..n)
            .map(|i| {
                let label = i % spec.classes;
                let features = centers
                    .row(label)
                    .iter()
                    .map(|c| c + noise.sample(&mut rng))
                    .collect();
                SampleRecord {
                    id: format!("{prefix}{i:05}"),
                    modality,
                    label,
                    features,
                }
            })
            .collect())
    };
    let image = emit(Modality::Image, spec.n_image, spec.dim_image)?;
    let text = emit(Modality::Text, spec.n_text, spec.dim_text)?;
    Ok(Dataset::new(image, text)?.0)
}
