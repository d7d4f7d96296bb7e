//! Controlled synthetic patch features.
//!
//! Every class owns a unit-norm prototype over the first `object_dim`
//! channels. A video is Gaussian background noise with the prototype added
//! to one grid cell per frame. Where that cell sits is governed by
//! [`SpatialJitter`]. In [`TemporalMode::OrderPair`] all classes share one
//! prototype split into two halves `A` (first half of the object channels)
//! and `B` (second half); each frame carries either `A` or `B`, and a class
//! is a balanced A/B sequence over the frames, so frame averages carry no
//! class information at all.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::features::{ClassRecord, FeatureDataset, FeatureVideo, DataOrigin};
use crate::tensor::DenseArray;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialJitter {
    /// Object at the centre cell in every video.
    Off,
    /// One uniformly drawn cell per video.
    #[default]
    PerVideo,
    /// A fresh cell for every frame.
    PerFrame,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalMode {
    #[default]
    None,
    OrderPair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub videos_per_class: usize,
    pub frames: usize,
    pub patches_per_side: usize,
    pub channels: usize,
    /// Channels carrying the class signal; 0 yields pure noise.
    pub object_dim: usize,
    pub noise_std: f64,
    pub spatial_jitter: SpatialJitter,
    pub temporal_mode: TemporalMode,
    /// Maximum circular frame shift of the temporal signal, drawn per video.
    pub temporal_shift: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_classes: 20,
            videos_per_class: 20,
            frames: 8,
            patches_per_side: 7,
            channels: 32,
            object_dim: 16,
            noise_std: 0.1,
            spatial_jitter: SpatialJitter::PerVideo,
            temporal_mode: TemporalMode::None,
            temporal_shift: 0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError(m));
        if self.frames == 0 || self.patches_per_side == 0 || self.channels == 0 {
            return fail("frames, patches_per_side and channels must be at least 1".into());
        }
        if self.object_dim > self.channels {
            return fail(format!(
                "object_dim {} exceeds channels {}",
                self.object_dim, self.channels
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail(format!("noise_std must be finite and non-negative (got {})", self.noise_std));
        }
        if self.temporal_mode == TemporalMode::OrderPair {
            if self.object_dim < 2 {
                return fail("order-pair mode needs object_dim >= 2 to split the signature".into());
            }
            if self.frames % 2 != 0 {
                return fail("order-pair mode needs an even frame count".into());
            }
            let available = binomial(self.frames, self.frames / 2);
            if self.n_classes > available {
                return fail(format!(
                    "order-pair mode supports at most {available} classes with {} frames",
                    self.frames
                ));
            }
        }
        Ok(())
    }

    pub fn video_shape(&self) -> [usize; 3] {
        [
            self.frames,
            self.patches_per_side * self.patches_per_side,
            self.channels,
        ]
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    if dim == 0 {
        return Vec::new();
    }
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Balanced A/B sequences (`false` = A), chosen greedily so each new class
/// is as far as possible in Hamming distance from the ones already taken.
/// The first two are "all A then all B" and its reverse.
pub fn order_pair_patterns(frames: usize, n_classes: usize) -> Vec<Vec<bool>> {
    let half = frames / 2;
    let mut candidates: Vec<Vec<bool>> = (0u64..1 << frames)
        .filter(|m| m.count_ones() as usize == half)
        .map(|m| (0..frames).map(|i| m >> (frames - 1 - i) & 1 == 1).collect())
        .collect();
    let hamming = |a: &[bool], b: &[bool]| a.iter().zip(b).filter(|(x, y)| x != y).count();
    let mut chosen: Vec<Vec<bool>> = Vec::with_capacity(n_classes);
    // lexicographically first candidate is A…AB…B
    while chosen.len() < n_classes && !candidates.is_empty() {
        let pick = if chosen.is_empty() {
            0
        } else {
            let mut best = 0;
            let mut best_score = 0;
            for (i, c) in candidates.iter().enumerate() {
                let score = chosen.iter().map(|s| hamming(s, c)).min().unwrap_or(0);
                if score > best_score {
                    best = i;
                    best_score = score;
                }
            }
            best
        };
        chosen.push(candidates.remove(pick));
    }
    chosen
}

pub fn pattern_name(pattern: &[bool]) -> String {
    pattern.iter().map(|&b| if b { 'B' } else { 'A' }).collect()
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<FeatureDataset, ConfigError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [l, p2, d] = spec.video_shape();
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| ConfigError(e.to_string()))?;

    let patterns = match spec.temporal_mode {
        TemporalMode::None => Vec::new(),
        TemporalMode::OrderPair => order_pair_patterns(l, spec.n_classes),
    };
    // Per-frame signal of each class: signal[c][i] is a dense vector over
    // the object channels.
    let signals: Vec<Vec<Vec<f64>>> = match spec.temporal_mode {
        TemporalMode::None => (0..spec.n_classes)
            .map(|_| {
                let proto = unit_vector(&mut rng, spec.object_dim);
                vec![proto; l]
            })
            .collect(),
        TemporalMode::OrderPair => {
            let h = spec.object_dim / 2;
            let proto = unit_vector(&mut rng, spec.object_dim);
            let mut a = proto.clone();
            a[h..].iter_mut().for_each(|x| *x = 0.0);
            let mut b = proto;
            b[..h].iter_mut().for_each(|x| *x = 0.0);
            let (a, b) = (normalise(a), normalise(b));
            patterns
                .iter()
                .map(|pat| pat.iter().map(|&is_b| if is_b { b.clone() } else { a.clone() }).collect())
                .collect()
        }
    };

    let centre = p2 / 2;
    let mut classes = Vec::with_capacity(spec.n_classes);
    for (c, signal) in signals.iter().enumerate() {
        let name = match spec.temporal_mode {
            TemporalMode::None => format!("class{c}"),
            TemporalMode::OrderPair => format!("order-{}", pattern_name(&patterns[c])),
        };
        let mut videos = Vec::with_capacity(spec.videos_per_class);
        for _ in 0..spec.videos_per_class {
            let video_cell = rng.random_range(0..p2);
            let shift = if spec.temporal_shift > 0 {
                rng.random_range(0..=spec.temporal_shift)
            } else {
                0
            };
            let planted: Vec<usize> = (0..l)
                .map(|_| match spec.spatial_jitter {
                    SpatialJitter::Off => centre,
                    SpatialJitter::PerVideo => video_cell,
                    SpatialJitter::PerFrame => rng.random_range(0..p2),
                })
                .collect();
            let mut data = vec![0f64; l * p2 * d];
            if spec.noise_std > 0.0 {
                data.iter_mut().for_each(|x| *x = noise.sample(&mut rng));
            }
            if spec.object_dim > 0 {
                for (i, &cell) in planted.iter().enumerate() {
                    let src = &signal[(i + l - shift % l) % l];
                    let base = (i * p2 + cell) * d;
                    for (j, &s) in src.iter().enumerate() {
                        data[base + j] += s;
                    }
                }
            }
            let features = DenseArray::new(vec![l, p2, d], data.into_iter().map(|x| x as f32).collect())
                .map_err(|e| ConfigError(e.to_string()))?;
            let mut video = FeatureVideo::new(features).map_err(|e| ConfigError(e.to_string()))?;
            if spec.object_dim > 0 {
                video = video.with_planted(planted);
            }
            videos.push(video);
        }
        classes.push(ClassRecord {
            id: c as u32,
            name,
            videos,
        });
    }
    FeatureDataset::new([l, p2, d], classes, DataOrigin::Synthetic).map_err(|e| ConfigError(e.to_string()))
}

fn normalise(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}
