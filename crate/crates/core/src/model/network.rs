//! Tape-level construction of the SA-CT graph.
//!
//! Layout conventions: a video is `[frames, patches, channels]`; for one
//! class the attention tensor is `[frames, shots·patches, query patches]`, so
//! the softmax runs over axis 1 (the joint support-shot/support-patch axis).

use crate::autodiff::{Tape, Var};
use crate::episodes::Episode;
use crate::error::{DataError, Error, Result, TensorError};
use crate::model::{ModelConfig, SactParams};
use crate::tensor::{DenseArray, Scalar};

/// Parameters registered on one tape, with the transposes the row-major
/// projections need.
pub(crate) struct Bound {
    /// `W_qkᵀ`, `[D, d_k]`.
    w_qk_t: Var,
    /// `W_vᵀ`, `[D, d_v]`.
    w_v_t: Var,
    ln_query: (Var, Var),
    ln_support: (Var, Var),
    cpe: Option<(Var, Var)>,
    tmixer: Option<MixerVars>,
}

struct MixerVars {
    w1: Var,
    w2: Var,
    w3_t: Var,
    w4_t: Var,
    w5_t: Var,
    w6: Var,
    w7_t: Var,
    w8_t: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Side {
    Query,
    Support,
}

/// Attention keys (layer-normed projections of CPE-augmented features) and
/// values (projections of the features without CPE) of one video.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Encoded {
    pub keys: Var,
    pub values: Var,
}

pub(crate) fn bind<T: Scalar>(tape: &mut Tape<T>, params: &SactParams<T>) -> Result<Bound, TensorError> {
    let store = params.store();
    let ids = params.ids();
    let w_qk = tape.param(store, ids.w_qk)?;
    let w_v = tape.param(store, ids.w_v)?;
    let w_qk_t = tape.transpose(w_qk)?;
    let w_v_t = tape.transpose(w_v)?;
    let ln_query = (tape.param(store, ids.ln_query_gain)?, tape.param(store, ids.ln_query_bias)?);
    let ln_support = (
        tape.param(store, ids.ln_support_gain)?,
        tape.param(store, ids.ln_support_bias)?,
    );
    let cpe = match ids.cpe {
        Some(c) => Some((tape.param(store, c.kernel)?, tape.param(store, c.bias)?)),
        None => None,
    };
    let tmixer = match ids.tmixer {
        Some(t) => {
            let mut w = Vec::with_capacity(8);
            for id in t.w {
                w.push(tape.param(store, id)?);
            }
            Some(MixerVars {
                w1: w[0],
                w2: w[1],
                w3_t: tape.transpose(w[2])?,
                w4_t: tape.transpose(w[3])?,
                w5_t: tape.transpose(w[4])?,
                w6: w[5],
                w7_t: tape.transpose(w[6])?,
                w8_t: tape.transpose(w[7])?,
            })
        }
        None => None,
    };
    Ok(Bound {
        w_qk_t,
        w_v_t,
        ln_query,
        ln_support,
        cpe,
        tmixer,
    })
}

/// Temporal mixer: frame mixing, channel mixing, frame contraction L → L/2,
/// channel mixing.
pub(crate) fn tmixer<T: Scalar>(tape: &mut Tape<T>, b: &Bound, video: Var) -> Result<Var, TensorError> {
    let m = b.tmixer.as_ref().ok_or(TensorError::Shape {
        op: "tmixer",
        detail: "model was built without the temporal mixer".into(),
    })?;
    let [l, p, d] = shape3(tape, video, "tmixer")?;
    if l % 2 != 0 || tape.shape(m.w1) != [l, l] {
        return Err(TensorError::Shape {
            op: "tmixer",
            detail: format!("input has {l} frames, mixer expects {}", tape.shape(m.w1)[0]),
        });
    }
    let h = l / 2;

    // U = F + W2·σ(W1·F), mixing along frames for every (patch, channel) column.
    let f = tape.reshape(video, &[l, p * d])?;
    let t = tape.matmul(m.w1, f)?;
    let t = tape.relu(t)?;
    let t = tape.matmul(m.w2, t)?;
    let u = tape.add(f, t)?;

    // V = U + W4·σ(W3·U), mixing along channels for every (frame, patch) row.
    let u_rows = tape.reshape(u, &[l * p, d])?;
    let v = channel_mlp(tape, u_rows, m.w3_t, m.w4_t)?;

    // Y = W6·σ(W5ᵀ·V), contracting L frames to L/2; no residual.
    let v_frames = tape.reshape(v, &[l, p * d])?;
    let t = tape.matmul(m.w5_t, v_frames)?;
    let t = tape.relu(t)?;
    let y = tape.matmul(m.w6, t)?;

    // Z = Y + W8·σ(W7·Y).
    let y_rows = tape.reshape(y, &[h * p, d])?;
    let z = channel_mlp(tape, y_rows, m.w7_t, m.w8_t)?;
    tape.reshape(z, &[h, p, d])
}

fn channel_mlp<T: Scalar>(tape: &mut Tape<T>, rows: Var, first_t: Var, second_t: Var) -> Result<Var, TensorError> {
    let t = tape.matmul(rows, first_t)?;
    let t = tape.relu(t)?;
    let t = tape.matmul(t, second_t)?;
    tape.add(rows, t)
}

/// `x + DWConv3x3(x)` on the patch grid.
pub(crate) fn cpe<T: Scalar>(tape: &mut Tape<T>, b: &Bound, x: Var, side: usize) -> Result<Var, TensorError> {
    let (kernel, bias) = b.cpe.ok_or(TensorError::Shape {
        op: "cpe",
        detail: "model was built without positional encoding".into(),
    })?;
    let conv = tape.depthwise_conv3x3(x, kernel, bias, side)?;
    tape.add(x, conv)
}

/// Keys and values of a video that has already passed the temporal mixer
/// (or skipped it).
pub(crate) fn encode_mixed<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Bound,
    cfg: &ModelConfig,
    mixed: Var,
    side: Side,
) -> Result<Encoded, TensorError> {
    let attn_in = if b.cpe.is_some() {
        cpe(tape, b, mixed, cfg.patches_per_side)?
    } else {
        mixed
    };
    let projected = tape.matmul(attn_in, b.w_qk_t)?;
    let (gain, bias) = match side {
        Side::Query => b.ln_query,
        Side::Support => b.ln_support,
    };
    let keys = tape.layer_norm(projected, gain, bias)?;
    let values = tape.matmul(mixed, b.w_v_t)?;
    Ok(Encoded { keys, values })
}

pub(crate) fn encode_video<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Bound,
    cfg: &ModelConfig,
    video: Var,
    side: Side,
) -> Result<Encoded, TensorError> {
    let mixed = if b.tmixer.is_some() {
        tmixer(tape, b, video)?
    } else {
        video
    };
    encode_mixed(tape, b, cfg, mixed, side)
}

/// Normalised attention of every query patch over all support patches of one
/// class at the same frame index: `[frames, shots·patches, query patches]`.
pub(crate) fn class_attention<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    query_keys: Var,
    support_keys: &[Var],
) -> Result<Var, TensorError> {
    let [l, p, dk] = shape3(tape, query_keys, "sca_attention")?;
    for &s in support_keys {
        if tape.shape(s)[0] != l {
            return Err(TensorError::Shape {
                op: "sca_attention",
                detail: format!("query has {l} frames, support has {}", tape.shape(s)[0]),
            });
        }
    }
    let k = support_keys.len();
    let stacked = tape.stack(support_keys, 1)?;
    let ps = tape.shape(stacked)[2];
    let keys = tape.reshape(stacked, &[l, k * ps, dk])?;
    let q_t = tape.transpose(query_keys)?;
    let logits = tape.matmul(keys, q_t)?;
    let scaled = tape.mul_scalar(logits, T::one() / T::from_f64_lossy(cfg.temperature()))?;
    debug_assert_eq!(tape.shape(scaled), [l, k * ps, p]);
    tape.softmax(scaled, &[1])
}

/// Query-specific prototype `[frames, query patches, d_v]`.
pub(crate) fn prototype<T: Scalar>(
    tape: &mut Tape<T>,
    attention: Var,
    support_values: &[Var],
) -> Result<Var, TensorError> {
    let stacked = tape.stack(support_values, 1)?;
    let s = tape.shape(stacked).to_vec();
    let values = tape.reshape(stacked, &[s[0], s[1] * s[2], s[3]])?;
    let att_t = tape.transpose(attention)?;
    tape.matmul(att_t, values)
}

/// `(1/P²) Σ_p ‖(1/L'^e) Σ_i (t_ip − v_ip)‖²`.
pub(crate) fn distance<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    prototype: Var,
    query_values: Var,
) -> Result<Var, TensorError> {
    let [l, p, _] = shape3(tape, prototype, "class_distance")?;
    let diff = tape.sub(prototype, query_values)?;
    let over_frames = tape.sum(diff, &[0])?;
    let norm = T::from_count(l).powi(cfg.frame_norm_exponent as i32);
    let scaled = tape.mul_scalar(over_frames, T::one() / norm)?;
    let sq = tape.square(scaled)?;
    let total = tape.sum_all(sq)?;
    tape.mul_scalar(total, T::one() / T::from_count(p))
}

/// Graph outputs for one query.
pub(crate) struct QueryGraph {
    /// `[way]`, the negated class distances.
    pub logits: Var,
    /// Per class, `[frames, shots·patches, query patches]`.
    pub attention: Vec<Var>,
}

pub(crate) fn video_constant<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    video: &crate::features::FeatureVideo,
) -> Result<Var> {
    if video.shape() != cfg.video_shape() {
        return Err(Error::Data(DataError::ShapeMismatch {
            expected: cfg.video_shape(),
            found: video.shape(),
        }));
    }
    Ok(tape.constant(video.features().cast::<T>())?)
}

/// Full episode graph: supports are encoded once and shared by every query.
pub(crate) fn episode_graph<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Bound,
    cfg: &ModelConfig,
    episode: &Episode<'_>,
) -> Result<Vec<QueryGraph>> {
    let mut support_enc = Vec::with_capacity(episode.way());
    for class in &episode.support {
        let mut encs = Vec::with_capacity(class.len());
        for &video in class {
            let v = video_constant(tape, cfg, video)?;
            encs.push(encode_video(tape, b, cfg, v, Side::Support)?);
        }
        support_enc.push(encs);
    }
    let mut out = Vec::with_capacity(episode.queries.len());
    for query in &episode.queries {
        let v = video_constant(tape, cfg, query.video)?;
        let q = encode_video(tape, b, cfg, v, Side::Query)?;
        let mut neg_dists = Vec::with_capacity(support_enc.len());
        let mut attention = Vec::with_capacity(support_enc.len());
        for encs in &support_enc {
            let keys: Vec<Var> = encs.iter().map(|e| e.keys).collect();
            let values: Vec<Var> = encs.iter().map(|e| e.values).collect();
            let att = class_attention(tape, cfg, q.keys, &keys)?;
            let proto = prototype(tape, att, &values)?;
            let d = distance(tape, cfg, proto, q.values)?;
            neg_dists.push(tape.neg(d)?);
            attention.push(att);
        }
        let logits = tape.stack(&neg_dists, 0)?;
        out.push(QueryGraph { logits, attention });
    }
    Ok(out)
}

pub(crate) fn constant<T: Scalar>(tape: &mut Tape<T>, a: &DenseArray<T>) -> Result<Var, TensorError> {
    tape.constant(a.clone())
}

fn shape3<T: Scalar>(tape: &Tape<T>, v: Var, op: &'static str) -> Result<[usize; 3], TensorError> {
    match *tape.shape(v) {
        [a, b, c] => Ok([a, b, c]),
        ref s => Err(TensorError::Rank {
            op,
            expected: "3",
            shape: s.to_vec(),
        }),
    }
}
