//! Synthetic per-modality feature generation.
//!
//! Stands in for the frozen production encoders: each modality draws its
//! tokens from a Gaussian cluster structure (centroid coordinates at scale
//! `separation`, unit noise), and the token labels are the cluster ids of
//! the modalities named by the task. Tokens of other modalities get
//! seeded uniform-random labels, an irreducible-loss floor that makes
//! modality specialization measurable.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numkit::Matrix;
use crate::rng::rng_from;
use crate::tokens::{ModalityTag, RawFeatureBlock};
use crate::{Error, Result};

/// Per-modality token counts and raw feature dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub counts: BTreeMap<ModalityTag, usize>,
    pub raw_dims: BTreeMap<ModalityTag, usize>,
    /// Number of Gaussian clusters per modality.
    pub clusters: usize,
    /// Std of centroid coordinates; noise is unit.
    pub separation: f64,
}

impl SynthSpec {
    pub fn desk_default() -> Self {
        let counts = [
            (ModalityTag::Text, 4),
            (ModalityTag::Rgb, 6),
            (ModalityTag::Rgbd, 4),
            (ModalityTag::Bev, 2),
            (ModalityTag::Pc, 6),
            (ModalityTag::Voxel, 2),
        ]
        .into_iter()
        .collect();
        let raw_dims = [
            (ModalityTag::Text, 32),
            (ModalityTag::Rgb, 24),
            (ModalityTag::Rgbd, 16),
            (ModalityTag::Bev, 12),
            (ModalityTag::Pc, 16),
            (ModalityTag::Voxel, 8),
        ]
        .into_iter()
        .collect();
        SynthSpec {
            counts,
            raw_dims,
            clusters: 4,
            separation: 4.0,
        }
    }

    pub fn count(&self, tag: ModalityTag) -> usize {
        self.counts.get(&tag).copied().unwrap_or(0)
    }

    pub fn raw_dim(&self, tag: ModalityTag) -> usize {
        self.raw_dims.get(&tag).copied().unwrap_or(0)
    }

    pub fn total_tokens(&self) -> usize {
        ModalityTag::ALL.iter().map(|&t| self.count(t)).sum()
    }

    fn validate(&self) -> Result<()> {
        for tag in ModalityTag::ALL {
            if self.count(tag) > 0 && self.raw_dim(tag) == 0 {
                return Err(Error::Config(format!(
                    "modality {tag} has tokens but no raw dimension configured"
                )));
            }
        }
        if self.clusters == 0 {
            return Err(Error::Config("clusters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Which modalities carry the label signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTask {
    pub label_modalities: Vec<ModalityTag>,
    pub num_classes: usize,
}

impl SyntheticTask {
    pub fn pc_clusters(num_classes: usize) -> Self {
        SyntheticTask {
            label_modalities: vec![ModalityTag::Pc],
            num_classes,
        }
    }
}

/// One generated sample: raw blocks in canonical order plus per-token
/// labels and cluster assignments aligned with the assembled sequence.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub blocks: Vec<RawFeatureBlock>,
    pub labels: Vec<usize>,
    pub cluster_ids: Vec<usize>,
}

/// A stationary task: fixed centroids, fresh token noise per sample.
#[derive(Debug, Clone)]
pub struct SynthGenerator {
    spec: SynthSpec,
    task: SyntheticTask,
    centroids: BTreeMap<ModalityTag, Matrix>,
}

impl SynthGenerator {
    pub fn new(task_seed: u64, spec: SynthSpec, task: SyntheticTask) -> Result<Self> {
        spec.validate()?;
        if task.num_classes < spec.clusters && !task.label_modalities.is_empty() {
            return Err(Error::Config(format!(
                "num_classes {} < clusters {}: cluster-id labels would be out of range",
                task.num_classes, spec.clusters
            )));
        }
        let mut centroids = BTreeMap::new();
        for (i, tag) in ModalityTag::ALL.into_iter().enumerate() {
            let dim = spec.raw_dim(tag);
            if dim == 0 {
                continue;
            }
            let mut rng = rng_from(task_seed, "synth/centroids", &[i as u64]);
            centroids.insert(
                tag,
                Matrix::gaussian(spec.clusters, dim, spec.separation, &mut rng),
            );
        }
        Ok(SynthGenerator {
            spec,
            task,
            centroids,
        })
    }

    pub fn spec(&self) -> &SynthSpec {
        &self.spec
    }

    pub fn task(&self) -> &SyntheticTask {
        &self.task
    }

    pub fn centroids(&self, tag: ModalityTag) -> Option<&Matrix> {
        self.centroids.get(&tag)
    }

    /// Draws one sample. Deterministic given `sample_seed`.
    pub fn sample(&self, sample_seed: u64) -> SynthSample {
        let mut blocks = Vec::new();
        let mut labels = Vec::new();
        let mut cluster_ids = Vec::new();
        let mut label_rng = rng_from(sample_seed, "synth/labels", &[]);
        for (i, tag) in ModalityTag::ALL.into_iter().enumerate() {
            let count = self.spec.count(tag);
            let dim = self.spec.raw_dim(tag);
            let mut features = Matrix::zeros(count, dim);
            let mut rng = rng_from(sample_seed, "synth/block", &[i as u64]);
            let labeled = self.task.label_modalities.contains(&tag);
            for r in 0..count {
                let cluster = rng.gen_range(0..self.spec.clusters);
                if let Some(c) = self.centroids.get(&tag) {
                    let row = features.row_mut(r);
                    for (j, v) in row.iter_mut().enumerate() {
                        let noise: f64 = rng.sample(StandardNormal);
                        *v = c.get(cluster, j) + noise;
                    }
                }
                let random_label = label_rng.gen_range(0..self.task.num_classes);
                labels.push(if labeled { cluster } else { random_label });
                cluster_ids.push(cluster);
            }
            blocks.push(RawFeatureBlock {
                modality: tag,
                features,
            });
        }
        SynthSample {
            blocks,
            labels,
            cluster_ids,
        }
    }
}

/// Single-shot convenience: builds the generator and draws one sample,
/// both derived from `seed`.
pub fn synth_features(seed: u64, spec: &SynthSpec, task: &SyntheticTask) -> Result<SynthSample> {
    let gen = SynthGenerator::new(seed, spec.clone(), task.clone())?;
    Ok(gen.sample(crate::rng::derive_seed(seed, "synth/sample", &[0])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SynthSpec {
        SynthSpec::desk_default()
    }

    #[test]
    fn same_seed_gives_identical_blocks_and_labels() {
        let task = SyntheticTask::pc_clusters(4);
        let a = synth_features(42, &spec(), &task).unwrap();
        let b = synth_features(42, &spec(), &task).unwrap();
        assert_eq!(a.labels, b.labels);
        for (x, y) in a.blocks.iter().zip(&b.blocks) {
            assert_eq!(x.features, y.features);
        }
        let c = synth_features(43, &spec(), &task).unwrap();
        assert_ne!(a.blocks[1].features.data(), c.blocks[1].features.data());
    }

    #[test]
    fn zero_count_modality_gives_empty_block() {
        let mut s = spec();
        s.counts.insert(ModalityTag::Bev, 0);
        let task = SyntheticTask::pc_clusters(4);
        let out = synth_features(7, &s, &task).unwrap();
        let bev = out
            .blocks
            .iter()
            .find(|b| b.modality == ModalityTag::Bev)
            .unwrap();
        assert_eq!(bev.features.rows(), 0);
        assert_eq!(out.labels.len(), s.total_tokens());
    }

    #[test]
    fn nearest_centroid_oracle_recovers_pc_labels() {
        let task = SyntheticTask::pc_clusters(4);
        let gen = SynthGenerator::new(42, spec(), task).unwrap();
        let centroids = gen.centroids(ModalityTag::Pc).unwrap().clone();
        for s in 0..10 {
            let sample = gen.sample(1000 + s);
            // Token offset of the pc block within the assembled order.
            let mut offset = 0;
            for b in &sample.blocks {
                if b.modality == ModalityTag::Pc {
                    break;
                }
                offset += b.features.rows();
            }
            let pc = sample
                .blocks
                .iter()
                .find(|b| b.modality == ModalityTag::Pc)
                .unwrap();
            for r in 0..pc.features.rows() {
                let x = pc.features.row(r);
                let mut best = (f64::INFINITY, 0);
                for c in 0..centroids.rows() {
                    let d: f64 = x
                        .iter()
                        .zip(centroids.row(c))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if d < best.0 {
                        best = (d, c);
                    }
                }
                assert_eq!(best.1, sample.labels[offset + r], "sample {s} token {r}");
            }
        }
    }

    #[test]
    fn labels_in_range_for_unlabeled_modalities() {
        let task = SyntheticTask::pc_clusters(4);
        let out = synth_features(5, &spec(), &task).unwrap();
        assert!(out.labels.iter().all(|&l| l < 4));
    }
}
