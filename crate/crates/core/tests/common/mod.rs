//! Brute-force reference implementations written index by index, with no
//! code shared with the library beyond the array container.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sact::model::SactParams;
use sact::tensor::DenseArray;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_array(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> DenseArray<f64> {
    DenseArray::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Nested `[a][b][c]` view of a rank-3 array.
pub fn nested3(x: &DenseArray<f64>) -> Vec<Vec<Vec<f64>>> {
    let s = x.shape();
    (0..s[0])
        .map(|i| (0..s[1]).map(|j| (0..s[2]).map(|k| x.get(&[i, j, k])).collect()).collect())
        .collect()
}

pub fn matmul(a: &DenseArray<f64>, b: &DenseArray<f64>) -> DenseArray<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    assert_eq!(k, b.shape()[0]);
    let mut out = DenseArray::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.get(&[i, p]) * b.get(&[p, j]);
            }
            out.set(&[i, j], s);
        }
    }
    out
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-5).sqrt();
    x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| (v - mean) * inv * g + b)
        .collect()
}

fn mat_vec(w: &DenseArray<f64>, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    (0..rows)
        .map(|r| (0..cols).map(|c| w.get(&[r, c]) * x[c]).sum())
        .collect()
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// `x + bias + Σ_taps kernel·neighbour` on each `side × side` frame.
pub fn cpe(x: &[Vec<Vec<f64>>], kernel: &DenseArray<f64>, bias: &[f64], side: usize) -> Vec<Vec<Vec<f64>>> {
    x.iter()
        .map(|frame| {
            (0..side * side)
                .map(|cell| {
                    let (r, c) = ((cell / side) as isize, (cell % side) as isize);
                    (0..frame[0].len())
                        .map(|ch| {
                            let mut acc = frame[cell][ch] + bias[ch];
                            for dr in -1isize..=1 {
                                for dc in -1isize..=1 {
                                    let (rr, cc) = (r + dr, c + dc);
                                    if rr < 0 || cc < 0 || rr >= side as isize || cc >= side as isize {
                                        continue;
                                    }
                                    let k = kernel.get(&[(dr + 1) as usize, (dc + 1) as usize, ch]);
                                    acc += k * frame[rr as usize * side + cc as usize][ch];
                                }
                            }
                            acc
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Temporal mixer `[L][P²][D] → [L/2][P²][D]`, one output index at a time.
pub fn tmixer(f: &[Vec<Vec<f64>>], w: &[&DenseArray<f64>; 8]) -> Vec<Vec<Vec<f64>>> {
    let l = f.len();
    let p = f[0].len();
    let d = f[0][0].len();
    let h = l / 2;
    let [w1, w2, w3, w4, w5, w6, w7, w8] = *w;

    // frame mixing on every (patch, channel) column
    let mut u = f.to_vec();
    for pi in 0..p {
        for c in 0..d {
            let col: Vec<f64> = (0..l).map(|i| f[i][pi][c]).collect();
            let hidden: Vec<f64> = mat_vec(w1, &col).into_iter().map(relu).collect();
            let mixed = mat_vec(w2, &hidden);
            for i in 0..l {
                u[i][pi][c] = col[i] + mixed[i];
            }
        }
    }
    let channel_mix = |x: &mut Vec<Vec<Vec<f64>>>, a: &DenseArray<f64>, b: &DenseArray<f64>| {
        for frame in x.iter_mut() {
            for row in frame.iter_mut() {
                let hidden: Vec<f64> = mat_vec(a, row).into_iter().map(relu).collect();
                let mixed = mat_vec(b, &hidden);
                for (r, m) in row.iter_mut().zip(mixed) {
                    *r += m;
                }
            }
        }
    };
    let mut v = u;
    channel_mix(&mut v, w3, w4);

    // contraction L → L/2 with W5 transposed, no residual
    let mut y = vec![vec![vec![0.0; d]; p]; h];
    for pi in 0..p {
        for c in 0..d {
            let hidden: Vec<f64> = (0..h)
                .map(|a| relu((0..l).map(|i| w5.get(&[i, a]) * v[i][pi][c]).sum()))
                .collect();
            for j in 0..h {
                y[j][pi][c] = (0..h).map(|a| w6.get(&[j, a]) * hidden[a]).sum();
            }
        }
    }
    channel_mix(&mut y, w7, w8);
    y
}

pub fn mixer_weights(params: &SactParams<f64>) -> [&DenseArray<f64>; 8] {
    let names = [
        "tmixer.w1", "tmixer.w2", "tmixer.w3", "tmixer.w4", "tmixer.w5", "tmixer.w6", "tmixer.w7", "tmixer.w8",
    ];
    names.map(|n| params.get(n).expect("mixer weight"))
}

/// `LN(W_qk · (x [+ CPE(x)]))` per (frame, patch).
pub fn keys(params: &SactParams<f64>, x: &[Vec<Vec<f64>>], query_side: bool) -> Vec<Vec<Vec<f64>>> {
    let cfg = params.config();
    let input = if cfg.use_cpe {
        cpe(
            x,
            params.get("cpe.kernel").unwrap(),
            params.get("cpe.bias").unwrap().data(),
            cfg.patches_per_side,
        )
    } else {
        x.to_vec()
    };
    let prefix = if query_side { "ln_query" } else { "ln_support" };
    let gain = params.get(&format!("{prefix}.gain")).unwrap().data();
    let bias = params.get(&format!("{prefix}.bias")).unwrap().data();
    let w = params.get("w_qk").unwrap();
    input
        .iter()
        .map(|frame| frame.iter().map(|v| layer_norm(&mat_vec(w, v), gain, bias)).collect())
        .collect()
}

pub fn values(params: &SactParams<f64>, x: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    let w = params.get("w_v").unwrap();
    x.iter()
        .map(|frame| frame.iter().map(|v| mat_vec(w, v)).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ã[i][p][k][m]`: softmax over all (k, m) of `⟨k_s[i,k,m], k_q[i,p]⟩ / √d_k`.
pub fn sca(params: &SactParams<f64>, query: &[Vec<Vec<f64>>], support: &[Vec<Vec<Vec<f64>>>]) -> Vec<Vec<Vec<Vec<f64>>>> {
    let tau = (params.config().d_k as f64).sqrt();
    let qk = keys(params, query, true);
    let sk: Vec<_> = support.iter().map(|s| keys(params, s, false)).collect();
    let (l, p) = (query.len(), query[0].len());
    let (k, ps) = (support.len(), support[0][0].len());
    (0..l)
        .map(|i| {
            (0..p)
                .map(|pi| {
                    let mut logits = Vec::with_capacity(k * ps);
                    for kk in 0..k {
                        for m in 0..ps {
                            logits.push(dot(&sk[kk][i][m], &qk[i][pi]) / tau);
                        }
                    }
                    let w = softmax(&logits);
                    (0..k).map(|kk| w[kk * ps..(kk + 1) * ps].to_vec()).collect()
                })
                .collect()
        })
        .collect()
}

/// `t[i][p] = Σ_{k,m} ã[i][p][k][m] · W_v s[k][i][m]`.
pub fn prototype(
    params: &SactParams<f64>,
    att: &[Vec<Vec<Vec<f64>>>],
    support: &[Vec<Vec<Vec<f64>>>],
) -> Vec<Vec<Vec<f64>>> {
    let sv: Vec<_> = support.iter().map(|s| values(params, s)).collect();
    let dv = sv[0][0][0].len();
    att.iter()
        .enumerate()
        .map(|(i, frame)| {
            frame
                .iter()
                .map(|per_patch| {
                    let mut t = vec![0.0; dv];
                    for (kk, row) in per_patch.iter().enumerate() {
                        for (m, &a) in row.iter().enumerate() {
                            for (tv, &v) in t.iter_mut().zip(&sv[kk][i][m]) {
                                *tv += a * v;
                            }
                        }
                    }
                    t
                })
                .collect()
        })
        .collect()
}

/// `(1/P²) Σ_p ‖(1/L^e) Σ_i (t[i][p] − W_v q[i][p])‖²`.
pub fn distance(params: &SactParams<f64>, query: &[Vec<Vec<f64>>], proto: &[Vec<Vec<f64>>]) -> f64 {
    let qv = values(params, query);
    let l = query.len();
    let p = query[0].len();
    let norm = (l as f64).powi(params.config().frame_norm_exponent as i32);
    let mut total = 0.0;
    for pi in 0..p {
        let dv = qv[0][pi].len();
        for c in 0..dv {
            let s: f64 = (0..l).map(|i| proto[i][pi][c] - qv[i][pi][c]).sum();
            total += (s / norm).powi(2);
        }
    }
    total / p as f64
}

/// Full forward for one query against classes of supports; raw features
/// in, logits `-d` out.
pub fn logits(params: &SactParams<f64>, query: &[Vec<Vec<f64>>], classes: &[Vec<Vec<Vec<Vec<f64>>>>]) -> Vec<f64> {
    let mix = |x: &[Vec<Vec<f64>>]| {
        if params.config().use_tmixer {
            tmixer(x, &mixer_weights(params))
        } else {
            x.to_vec()
        }
    };
    let q = mix(query);
    classes
        .iter()
        .map(|support| {
            let s: Vec<_> = support.iter().map(|v| mix(v)).collect();
            let att = sca(params, &q, &s);
            let t = prototype(params, &att, &s);
            -distance(params, &q, &t)
        })
        .collect()
}

pub fn to_array(x: &[Vec<Vec<f64>>]) -> DenseArray<f64> {
    let shape = [x.len(), x[0].len(), x[0][0].len()];
    DenseArray::new(shape.to_vec(), x.iter().flatten().flatten().copied().collect()).unwrap()
}

/// Model with every parameter (including CPE and LN affines) drawn from
/// U(-scale, scale) around its initial value.
pub fn random_params(config: &sact::model::ModelConfig, seed: u64, scale: f64) -> SactParams<f64> {
    let mut params = SactParams::<f64>::init(config, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let ids: Vec<_> = params.store().ids().collect();
    for id in ids {
        for v in params.store_mut().get_mut(id).value.data_mut() {
            *v += r.random_range(-scale..scale);
        }
    }
    params
}

pub fn random_video(r: &mut ChaCha8Rng, frames: usize, patches: usize, channels: usize) -> Vec<Vec<Vec<f64>>> {
    (0..frames)
        .map(|_| (0..patches).map(|_| (0..channels).map(|_| r.random_range(-1.0..1.0)).collect()).collect())
        .collect()
}

/// Frame- and patch-averaged ProtoNet logits.
pub fn pn_logits(query: &[Vec<Vec<f64>>], classes: &[Vec<Vec<Vec<Vec<f64>>>>]) -> Vec<f64> {
    let embed = |v: &[Vec<Vec<f64>>]| {
        let d = v[0][0].len();
        let n = (v.len() * v[0].len()) as f64;
        (0..d)
            .map(|c| v.iter().flat_map(|f| f.iter().map(move |p| p[c])).sum::<f64>() / n)
            .collect::<Vec<f64>>()
    };
    let q = embed(query);
    classes
        .iter()
        .map(|support| {
            let embs: Vec<Vec<f64>> = support.iter().map(|s| embed(s)).collect();
            let proto: Vec<f64> = (0..q.len())
                .map(|c| embs.iter().map(|e| e[c]).sum::<f64>() / embs.len() as f64)
                .collect();
            -proto.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        })
        .collect()
}
