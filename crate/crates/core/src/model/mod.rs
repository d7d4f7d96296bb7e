//! The SA-CT network, its parameters, and the frame-averaging ProtoNet
//! baseline.

mod config;
pub(crate) mod network;
mod params;

pub use config::ModelConfig;
pub use params::{CpeIds, ParamIds, SactParams, SavedModel, SavedParam, TMixerIds};

use crate::autodiff::Tape;
use crate::episodes::Episode;
use crate::error::{ConfigError, Result, TensorError};
use crate::tensor::{DenseArray, Scalar};
use network::Side;

/// Normalised attention of one query against one class,
/// `[frames, query patches, shots, support patches]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap<T> {
    weights: DenseArray<T>,
}

impl<T: Scalar> AttentionMap<T> {
    pub fn new(weights: DenseArray<T>) -> Result<Self, TensorError> {
        if weights.rank() != 4 {
            return Err(TensorError::Rank {
                op: "AttentionMap",
                expected: "4",
                shape: weights.shape().to_vec(),
            });
        }
        Ok(Self { weights })
    }

    /// From the tape layout `[frames, shots·patches, query patches]`.
    fn from_tape_layout(a: &DenseArray<T>, shots: usize) -> Result<Self, TensorError> {
        let s = a.shape();
        let (l, ps, pq) = (s[0], s[1] / shots, s[2]);
        let grouped = a.clone().reshape(&[l, shots, ps, pq])?;
        Self::new(grouped.permute(&[0, 3, 1, 2])?)
    }

    fn to_tape_layout(&self) -> Result<DenseArray<T>, TensorError> {
        let [l, pq, k, ps] = self.dims();
        self.weights.permute(&[0, 2, 3, 1])?.reshape(&[l, k * ps, pq])
    }

    pub fn weights(&self) -> &DenseArray<T> {
        &self.weights
    }

    /// `[frames, query patches, shots, support patches]`.
    pub fn dims(&self) -> [usize; 4] {
        let s = self.weights.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn get(&self, frame: usize, query_patch: usize, shot: usize, support_patch: usize) -> T {
        self.weights.get(&[frame, query_patch, shot, support_patch])
    }

    /// Σ over (shot, support patch) for every (frame, query patch).
    pub fn group_sums(&self) -> Vec<T> {
        let [l, pq, k, ps] = self.dims();
        let w = self.weights.data();
        (0..l * pq)
            .map(|g| w[g * k * ps..(g + 1) * k * ps].iter().copied().sum())
            .collect()
    }

    /// Mean over frames and shots: `[query patches, support patches]`.
    pub fn frame_shot_mean(&self) -> DenseArray<T> {
        let [l, pq, k, ps] = self.dims();
        let norm = T::one() / T::from_count(l * k);
        DenseArray::from_fn(&[pq, ps], |idx| {
            let (p, m) = (idx / ps, idx % ps);
            let mut acc = T::zero();
            for i in 0..l {
                for kk in 0..k {
                    acc = acc + self.get(i, p, kk, m);
                }
            }
            acc * norm
        })
    }
}

/// Logits and attention maps for one query.
#[derive(Clone, Debug)]
pub struct QueryOutput<T> {
    /// `-distance` per class.
    pub logits: Vec<T>,
    /// One map per class.
    pub attention: Vec<AttentionMap<T>>,
}

impl<T: Scalar> SactParams<T> {
    fn tape(&self) -> Result<(Tape<T>, network::Bound), TensorError> {
        let mut tape = Tape::new();
        let bound = network::bind(&mut tape, self)?;
        Ok((tape, bound))
    }

    /// `x + DWConv3x3(x)` for one frame `[P², D]` or a stack `[N, P², D]`.
    pub fn cpe(&self, x: &DenseArray<T>) -> Result<DenseArray<T>> {
        if !self.config().use_cpe {
            return Err(ConfigError("positional encoding is disabled in this model".into()).into());
        }
        let (mut tape, b) = self.tape()?;
        let single = x.rank() == 2;
        let input = if single {
            x.clone().reshape(&[1, x.shape()[0], x.shape()[1]])?
        } else {
            x.clone()
        };
        let v = network::constant(&mut tape, &input)?;
        let out = network::cpe(&mut tape, &b, v, self.config().patches_per_side)?;
        let value = tape.value(out).clone();
        Ok(if single { value.reshape(x.shape())? } else { value })
    }

    /// `[L, P², D]` → `[L/2, P², D]`.
    pub fn tmixer(&self, video: &DenseArray<T>) -> Result<DenseArray<T>> {
        if !self.config().use_tmixer {
            return Err(ConfigError("the temporal mixer is disabled in this model".into()).into());
        }
        self.check_video(video, self.config().frames)?;
        let (mut tape, b) = self.tape()?;
        let v = network::constant(&mut tape, video)?;
        let out = network::tmixer(&mut tape, &b, v)?;
        Ok(tape.value(out).clone())
    }

    /// Attention of `query` over the `support` videos of one class. Inputs
    /// are features as they enter the attention stage, i.e. after the
    /// temporal mixer when it is enabled.
    pub fn sca_attention(&self, query: &DenseArray<T>, support: &[DenseArray<T>]) -> Result<AttentionMap<T>> {
        let l = self.attention_input_frames(query)?;
        let (mut tape, b) = self.tape()?;
        let q = network::constant(&mut tape, query)?;
        let q = network::encode_mixed(&mut tape, &b, self.config(), q, Side::Query)?;
        let mut keys = Vec::with_capacity(support.len());
        for s in support {
            self.check_video(s, l)?;
            let v = network::constant(&mut tape, s)?;
            keys.push(network::encode_mixed(&mut tape, &b, self.config(), v, Side::Support)?.keys);
        }
        let att = network::class_attention(&mut tape, self.config(), q.keys, &keys)?;
        Ok(AttentionMap::from_tape_layout(tape.value(att), support.len())?)
    }

    /// `t[i,p] = Σ_{k,m} ã[i,p,k,m] · W_v s[i,k,m]`, `[frames, patches, d_v]`.
    pub fn query_prototype(&self, attention: &AttentionMap<T>, support: &[DenseArray<T>]) -> Result<DenseArray<T>> {
        let [l, _, k, _] = attention.dims();
        if k != support.len() {
            return Err(TensorError::Shape {
                op: "query_prototype",
                detail: format!("attention covers {k} shots, got {} support videos", support.len()),
            }
            .into());
        }
        let (mut tape, b) = self.tape()?;
        let att = network::constant(&mut tape, &attention.to_tape_layout()?)?;
        let mut values = Vec::with_capacity(k);
        for s in support {
            self.check_video(s, l)?;
            let v = network::constant(&mut tape, s)?;
            values.push(network::encode_mixed(&mut tape, &b, self.config(), v, Side::Support)?.values);
        }
        let proto = network::prototype(&mut tape, att, &values)?;
        Ok(tape.value(proto).clone())
    }

    /// Distance between a query (attention-stage features) and its
    /// prototype for one class.
    pub fn class_distance(&self, query: &DenseArray<T>, prototype: &DenseArray<T>) -> Result<T> {
        let l = self.attention_input_frames(query)?;
        let (mut tape, b) = self.tape()?;
        let q = network::constant(&mut tape, query)?;
        let q = network::encode_mixed(&mut tape, &b, self.config(), q, Side::Query)?;
        let expected = [l, self.config().patches(), self.config().value_dim()];
        if prototype.shape() != expected {
            return Err(TensorError::Shape {
                op: "class_distance",
                detail: format!("prototype shape {:?}, expected {:?}", prototype.shape(), expected),
            }
            .into());
        }
        let proto = network::constant(&mut tape, prototype)?;
        let d = network::distance(&mut tape, self.config(), proto, q.values)?;
        Ok(tape.value(d).item()?)
    }

    /// Per-query logits `-d(Q, S^c)`.
    pub fn forward(&self, episode: &Episode<'_>) -> Result<Vec<Vec<T>>> {
        Ok(self
            .forward_with_attention(episode)?
            .into_iter()
            .map(|q| q.logits)
            .collect())
    }

    pub fn forward_with_attention(&self, episode: &Episode<'_>) -> Result<Vec<QueryOutput<T>>> {
        let (mut tape, b) = self.tape()?;
        let graphs = network::episode_graph(&mut tape, &b, self.config(), episode)?;
        let shots = episode.shot();
        graphs
            .iter()
            .map(|g| {
                let attention = g
                    .attention
                    .iter()
                    .map(|&a| AttentionMap::from_tape_layout(tape.value(a), shots))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(QueryOutput {
                    logits: tape.value(g.logits).data().to_vec(),
                    attention,
                })
            })
            .collect()
    }

    fn attention_input_frames(&self, x: &DenseArray<T>) -> Result<usize> {
        let l = self.config().attended_frames();
        self.check_video(x, l)?;
        Ok(l)
    }

    fn check_video(&self, x: &DenseArray<T>, frames: usize) -> Result<()> {
        let cfg = self.config();
        let expected = [frames, cfg.patches(), cfg.channels];
        if x.shape() != expected {
            return Err(TensorError::Shape {
                op: "video",
                detail: format!("shape {:?}, expected {:?}", x.shape(), expected),
            }
            .into());
        }
        Ok(())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// ProtoNet on frame- and patch-averaged raw features: logits are
/// `-‖mean(query) - mean_k mean(support_k)‖²`.
pub fn pn_fsar_forward<T: Scalar>(episode: &Episode<'_>) -> Vec<Vec<T>> {
    fn embed<T: Scalar>(data: &[f32], channels: usize) -> Vec<T> {
        let rows = data.len() / channels;
        let mut acc = vec![T::zero(); channels];
        for row in data.chunks_exact(channels) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a = *a + T::from_f64_lossy(v as f64);
            }
        }
        let norm = T::from_count(rows);
        acc.into_iter().map(|a| a / norm).collect()
    }

    let prototypes: Vec<Vec<T>> = episode
        .support
        .iter()
        .map(|class| {
            let d = class[0].channels();
            let mut proto = vec![T::zero(); d];
            for video in class {
                for (p, e) in proto.iter_mut().zip(embed::<T>(video.data(), d)) {
                    *p = *p + e;
                }
            }
            let k = T::from_count(class.len());
            proto.into_iter().map(|p| p / k).collect()
        })
        .collect();

    episode
        .queries
        .iter()
        .map(|q| {
            let e = embed::<T>(q.video.data(), q.video.channels());
            prototypes
                .iter()
                .map(|proto| {
                    let d: T = proto.iter().zip(&e).map(|(&a, &b)| (a - b) * (a - b)).sum();
                    -d
                })
                .collect()
        })
        .collect()
}
