//! Few-shot classification with per-class Mahalanobis distances.
//!
//! Each class `k` is summarized by its support mean `μ_k` and a regularized
//! covariance
//!
//! ```text
//! Q_k = λ_k Σ_k + (1 − λ_k) Σ_all + ε I,     λ_k = n_k / (n_k + 1)
//! ```
//!
//! where `Σ_k` is the class covariance, `Σ_all` the covariance of all
//! supports pooled together, and both use `1/n` normalization. Queries go to
//! the class with the smallest `(x − μ_k)ᵀ Q_k⁻¹ (x − μ_k)`; scores are a
//! softmax over the negated squared distances.
//!
//! Embeddings come from an [`Embedder`]. The routine around it has three
//! stages: load a fixed embedder (pretraining), optionally let it adapt to
//! the task's support images (finetuning), then evaluate an episode
//! (querying).

mod embed;
mod memb;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{undersample, Labeled, SliceSample};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::metrics::{ConfusionMatrix, ReportTable};
use crate::scalar::{argmax, softmax, Real};

pub use embed::{BaselineEmbedder, Embedder};
pub use memb::{read_embeddings, write_embeddings};

/// Default ridge added to every class covariance.
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// An embedding with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding<T> {
    pub class_id: usize,
    pub vector: Vec<T>,
}

impl<T> Labeled for LabeledEmbedding<T> {
    fn class_id(&self) -> usize {
        self.class_id
    }
}

/// How `Q_k` is formed from the support set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceMode {
    /// Class/task blend plus ridge.
    #[default]
    Blend,
    /// `Σ_k + ε I` only.
    RidgeOnly,
    /// `Q_k = I`: plain squared Euclidean distance to the class mean.
    Identity,
}

#[derive(Debug, Clone)]
pub struct ClassStatistics<T> {
    pub class_id: usize,
    pub count: usize,
    pub mean: Vec<T>,
    pub covariance: Matrix<T>,
    factor: Cholesky<T>,
}

impl<T: Real> ClassStatistics<T> {
    /// Statistics from an explicit mean and covariance.
    pub fn from_parts(
        class_id: usize,
        count: usize,
        mean: Vec<T>,
        covariance: Matrix<T>,
        epsilon: f64,
    ) -> Result<Self> {
        if covariance.dim() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: covariance.dim(),
            });
        }
        let factor = covariance
            .cholesky()
            .ok_or(Error::SingularCovariance { class_id, epsilon })?;
        Ok(Self {
            class_id,
            count,
            mean,
            covariance,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn mean_of<T: Real>(rows: &[&[T]], d: usize) -> Vec<T> {
    let mut m = vec![T::zero(); d];
    for r in rows {
        for (a, &b) in m.iter_mut().zip(r.iter()) {
            *a += b;
        }
    }
    let n = T::of_usize(rows.len());
    m.iter_mut().for_each(|v| *v /= n);
    m
}

fn covariance_of<T: Real>(rows: &[&[T]], mean: &[T]) -> Matrix<T> {
    let d = mean.len();
    let mut c = Matrix::zeros(d);
    let mut centered = vec![T::zero(); d];
    for r in rows {
        for i in 0..d {
            centered[i] = r[i] - mean[i];
        }
        c.add_outer(&centered, T::one());
    }
    c.scale(T::one() / T::of_usize(rows.len()));
    c
}

/// Per-class means and regularized covariances.
///
/// `supports` maps class id to that class's support embeddings; every class
/// needs at least one.
pub fn class_statistics<T: Real>(
    supports: &BTreeMap<usize, Vec<Vec<T>>>,
    epsilon: T,
    mode: CovarianceMode,
) -> Result<Vec<ClassStatistics<T>>> {
    if let Some((&class_id, _)) = supports.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::MissingSupport { class_id });
    }
    let d = supports
        .values()
        .flatten()
        .next()
        .map(Vec::len)
        .ok_or_else(|| Error::EmptyInput("no support embeddings".into()))?;
    for v in supports.values().flatten() {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: v.len(),
            });
        }
    }
    if !(epsilon >= T::zero()) {
        return Err(Error::config("epsilon must be nonnegative"));
    }

    let task_cov = match mode {
        CovarianceMode::Blend => {
            let all: Vec<&[T]> = supports.values().flatten().map(Vec::as_slice).collect();
            let global_mean = mean_of(&all, d);
            Some(covariance_of(&all, &global_mean))
        }
        _ => None,
    };

    supports
        .iter()
        .map(|(&class_id, rows)| {
            let rows: Vec<&[T]> = rows.iter().map(Vec::as_slice).collect();
            let mean = mean_of(&rows, d);
            let covariance = match mode {
                CovarianceMode::Identity => Matrix::identity(d),
                CovarianceMode::RidgeOnly => {
                    let mut q = covariance_of(&rows, &mean);
                    q.add_diagonal(epsilon);
                    q
                }
                CovarianceMode::Blend => {
                    let n = T::of_usize(rows.len());
                    let lambda = n / (n + T::one());
                    let mut q = covariance_of(&rows, &mean);
                    q.scale(lambda);
                    if let Some(task) = &task_cov {
                        q.add_scaled(task, T::one() - lambda);
                    }
                    q.add_diagonal(epsilon);
                    q
                }
            };
            ClassStatistics::from_parts(class_id, rows.len(), mean, covariance, epsilon.as_f64())
        })
        .collect()
}

/// `(x − μ)ᵀ Q⁻¹ (x − μ)` through the Cholesky factor of `Q`.
pub fn mahalanobis_sq<T: Real>(x: &[T], s: &ClassStatistics<T>) -> Result<T> {
    if x.len() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: s.dim(),
            got: x.len(),
        });
    }
    let diff: Vec<T> = x.iter().zip(&s.mean).map(|(&a, &b)| a - b).collect();
    Ok(s.factor.inverse_quadratic_form(&diff))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMode {
    #[default]
    Mahalanobis,
    /// Ignores the covariances.
    Euclidean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub class_id: usize,
    /// Softmax of negated squared distances, in the order of the statistics.
    pub scores: Vec<T>,
    pub distances: Vec<T>,
}

pub fn classify<T: Real>(
    queries: &[Vec<T>],
    stats: &[ClassStatistics<T>],
    mode: DistanceMode,
) -> Result<Vec<Prediction<T>>> {
    if stats.len() < 2 {
        return Err(Error::config(format!("need at least 2 classes, got {}", stats.len())));
    }
    queries
        .iter()
        .map(|q| {
            let distances = stats
                .iter()
                .map(|s| match mode {
                    DistanceMode::Mahalanobis => mahalanobis_sq(q, s),
                    DistanceMode::Euclidean => {
                        if q.len() != s.dim() {
                            return Err(Error::DimensionMismatch {
                                expected: s.dim(),
                                got: q.len(),
                            });
                        }
                        Ok(q.iter().zip(&s.mean).map(|(&a, &b)| (a - b) * (a - b)).sum())
                    }
                })
                .collect::<Result<Vec<T>>>()?;
            let neg: Vec<T> = distances.iter().map(|&d| -d).collect();
            let best = argmax(&neg).unwrap_or(0);
            Ok(Prediction {
                class_id: stats[best].class_id,
                scores: softmax(&neg),
                distances,
            })
        })
        .collect()
}

/// Support-set size per class for one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportSize {
    Count(usize),
    /// Every training sample is a support.
    Full,
}

impl SupportSize {
    pub fn label(&self) -> String {
        match self {
            SupportSize::Count(n) => n.to_string(),
            SupportSize::Full => "full".into(),
        }
    }
}

impl std::str::FromStr for SupportSize {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(SupportSize::Full);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(SupportSize::Count(n)),
            _ => Err(Error::config(format!(
                "support size {s:?} must be a positive integer or \"full\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeConfig {
    pub support_size: SupportSize,
    pub seed: u64,
    pub epsilon: f64,
    pub covariance: CovarianceMode,
    pub distance: DistanceMode,
    /// Per-class cap applied to the support pool before sampling.
    pub undersample_cap: Option<usize>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            support_size: SupportSize::Full,
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            covariance: CovarianceMode::Blend,
            distance: DistanceMode::Mahalanobis,
            undersample_cap: None,
        }
    }
}

/// Embedded train (support pool) and validation (query) splits.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeData<T> {
    /// Class names indexed by class id.
    pub labels: Vec<String>,
    pub train: Vec<LabeledEmbedding<T>>,
    pub validation: Vec<LabeledEmbedding<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAccuracy {
    pub class_id: usize,
    pub name: String,
    pub correct: u64,
    pub total: u64,
}

impl ClassAccuracy {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReport {
    pub support_size: SupportSize,
    pub accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
    pub confusion: ConfusionMatrix,
}

/// Samples supports, builds class statistics and classifies every
/// validation embedding.
pub fn run_episode<T: Real>(data: &EpisodeData<T>, cfg: &EpisodeConfig) -> Result<EpisodeReport> {
    let classes = data.labels.len();
    let name = |k: usize| data.labels.get(k).cloned().unwrap_or_else(|| k.to_string());
    if let Some(bad) = data
        .train
        .iter()
        .chain(&data.validation)
        .find(|e| e.class_id >= classes)
    {
        return Err(Error::config(format!(
            "class id {} outside the {classes} labels",
            bad.class_id
        )));
    }

    let pool = match cfg.undersample_cap {
        Some(cap) => undersample(&data.train, cap, cfg.seed)?,
        None => data.train.clone(),
    };
    let mut by_class: BTreeMap<usize, Vec<&LabeledEmbedding<T>>> = (0..classes).map(|k| (k, Vec::new())).collect();
    for e in &pool {
        by_class.entry(e.class_id).or_default().push(e);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut supports: BTreeMap<usize, Vec<Vec<T>>> = BTreeMap::new();
    for (&k, members) in &by_class {
        if members.is_empty() {
            return Err(Error::MissingSupport { class_id: k });
        }
        let chosen: Vec<Vec<T>> = match cfg.support_size {
            SupportSize::Full => members.iter().map(|e| e.vector.clone()).collect(),
            SupportSize::Count(n) if n > members.len() => {
                return Err(Error::SupportTooLarge {
                    class_name: name(k),
                    requested: n,
                    available: members.len(),
                })
            }
            SupportSize::Count(n) => {
                let mut idx = rand::seq::index::sample(&mut rng, members.len(), n).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| members[i].vector.clone()).collect()
            }
        };
        supports.insert(k, chosen);
    }

    let covariance = match cfg.distance {
        DistanceMode::Euclidean => CovarianceMode::Identity,
        DistanceMode::Mahalanobis => cfg.covariance,
    };
    let stats = class_statistics(&supports, T::lit(cfg.epsilon), covariance)?;
    let queries: Vec<Vec<T>> = data.validation.iter().map(|e| e.vector.clone()).collect();
    let predictions = classify(&queries, &stats, cfg.distance)?;

    let mut confusion = ConfusionMatrix::new(classes);
    for (q, p) in data.validation.iter().zip(&predictions) {
        confusion.add(q.class_id, p.class_id);
    }
    let per_class = (0..classes)
        .map(|k| ClassAccuracy {
            class_id: k,
            name: name(k),
            correct: confusion.get(k, k),
            total: confusion.row_total(k),
        })
        .collect();
    Ok(EpisodeReport {
        support_size: cfg.support_size,
        accuracy: confusion.accuracy(),
        per_class,
        confusion,
    })
}

/// Accuracy as a function of support-set size.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<EpisodeReport>,
}

impl SweepTable {
    /// Row label for a support size, e.g. `Simple CNAPS-100`.
    pub fn setting_label(size: SupportSize) -> String {
        format!("Simple CNAPS-{}", size.label())
    }

    /// Settings × accuracy table for one feature extractor.
    pub fn to_report(&self, extractor: &str) -> ReportTable {
        ReportTable::few_shot(
            &[extractor],
            self.rows
                .iter()
                .map(|r| (Self::setting_label(r.support_size), vec![Some(r.accuracy)]))
                .collect(),
        )
    }
}

/// Settings × accuracy table with one column per feature extractor. Every
/// sweep must cover the same support sizes in the same order.
pub fn combine_sweeps(columns: &[(&str, &SweepTable)]) -> Result<ReportTable> {
    let (_, first) = columns
        .first()
        .ok_or_else(|| Error::config("need at least one extractor column"))?;
    let sizes: Vec<SupportSize> = first.rows.iter().map(|r| r.support_size).collect();
    for (name, t) in columns {
        if !t.rows.iter().map(|r| r.support_size).eq(sizes.iter().copied()) {
            return Err(Error::config(format!(
                "sweep for {name:?} covers different support sizes"
            )));
        }
    }
    let names: Vec<&str> = columns.iter().map(|(n, _)| *n).collect();
    let rows = sizes
        .iter()
        .enumerate()
        .map(|(i, &size)| {
            (
                SweepTable::setting_label(size),
                columns.iter().map(|(_, t)| Some(t.rows[i].accuracy)).collect(),
            )
        })
        .collect();
    Ok(ReportTable::few_shot(&names, rows))
}

pub fn sweep_support_sizes<T: Real>(
    data: &EpisodeData<T>,
    sizes: &[SupportSize],
    base: &EpisodeConfig,
) -> Result<SweepTable> {
    if sizes.is_empty() {
        return Err(Error::config("support-size sweep needs at least one size"));
    }
    let rows = sizes
        .iter()
        .map(|&support_size| run_episode(data, &EpisodeConfig { support_size, ..*base }))
        .collect::<Result<_>>()?;
    Ok(SweepTable { rows })
}

/// Embeds labeled slices with an embedder.
pub fn embed_slices<E: Embedder + ?Sized>(embedder: &E, slices: &[SliceSample]) -> Vec<LabeledEmbedding<f64>> {
    slices
        .iter()
        .map(|s| LabeledEmbedding {
            class_id: s.class_id,
            vector: embedder.embed(&s.pixels),
        })
        .collect()
}

/// Pretrain / finetune / query routine around an embedder.
pub struct FewShotRoutine<E> {
    embedder: E,
    labels: Vec<String>,
}

impl<E: Embedder> FewShotRoutine<E> {
    /// Pretraining stage: adopt an already trained, fixed embedder.
    pub fn pretrained(embedder: E, labels: Vec<String>) -> Self {
        Self { embedder, labels }
    }

    /// Finetuning stage: lets the embedder adapt to the task's supports.
    pub fn finetune(&mut self, supports: &[SliceSample]) -> Result<()> {
        self.embedder.finetune(supports)
    }

    /// Querying stage: embeds both splits and evaluates one episode.
    pub fn query(
        &self,
        train: &[SliceSample],
        validation: &[SliceSample],
        cfg: &EpisodeConfig,
    ) -> Result<EpisodeReport> {
        run_episode(&self.episode_data(train, validation), cfg)
    }

    pub fn episode_data(&self, train: &[SliceSample], validation: &[SliceSample]) -> EpisodeData<f64> {
        EpisodeData {
            labels: self.labels.clone(),
            train: embed_slices(&self.embedder, train),
            validation: embed_slices(&self.embedder, validation),
        }
    }

    pub fn embedder(&self) -> &E {
        &self.embedder
    }
}

#[cfg(test)]
mod tests;
