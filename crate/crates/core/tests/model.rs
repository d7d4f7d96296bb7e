mod common;

use common::{nested3, random_params, random_video, to_array};
use rand::Rng;
use sact::episodes::Episode;
use sact::features::FeatureVideo;
use sact::model::{argmax, pn_fsar_forward, AttentionMap, ModelConfig, SactParams};
use sact::tensor::DenseArray;

type Video = Vec<Vec<Vec<f64>>>;

fn small(frames: usize, side: usize, channels: usize, d_k: usize, tmixer: bool, cpe: bool) -> ModelConfig {
    ModelConfig {
        frames,
        patches_per_side: side,
        channels,
        d_k,
        d_v: None,
        use_tmixer: tmixer,
        use_cpe: cpe,
        frame_norm_exponent: 2,
    }
}

fn max_diff(a: &DenseArray<f64>, b: &Video) -> f64 {
    a.max_abs_diff(&to_array(b))
}

fn feature_video(v: &Video) -> FeatureVideo {
    let shape = [v.len(), v[0].len(), v[0][0].len()];
    FeatureVideo::from_data(shape, v.iter().flatten().flatten().map(|&x| x as f32).collect()).unwrap()
}

/// Round-trip through f32 so the oracle sees exactly what the model sees.
fn as_stored(v: &Video) -> Video {
    v.iter()
        .map(|f| f.iter().map(|p| p.iter().map(|&x| x as f32 as f64).collect()).collect())
        .collect()
}

#[test]
fn cpe_zero_kernel_is_identity() {
    let cfg = small(2, 3, 4, 2, false, true);
    let params = SactParams::<f64>::init(&cfg, 0).unwrap();
    let x = common::random_array(&mut common::rng(1), &[9, 4], 1.0);
    assert_eq!(params.cpe(&x).unwrap(), x);
}

#[test]
fn cpe_single_patch_uses_centre_tap() {
    let cfg = small(2, 1, 3, 2, false, true);
    let params = random_params(&cfg, 3, 0.7);
    let k = params.get("cpe.kernel").unwrap();
    let b = params.get("cpe.bias").unwrap();
    let x = common::random_array(&mut common::rng(4), &[1, 3], 1.0);
    let y = params.cpe(&x).unwrap();
    for c in 0..3 {
        let want = x.get(&[0, c]) * (1.0 + k.get(&[1, 1, c])) + b.get(&[c]);
        assert!((y.get(&[0, c]) - want).abs() < 1e-12);
    }
}

#[test]
fn cpe_matches_sliding_window() {
    for seed in 0..20 {
        let side = 1 + seed as usize % 3;
        let cfg = small(2, side, 4, 2, false, true);
        let params = random_params(&cfg, seed, 0.8);
        let x = random_video(&mut common::rng(seed + 100), 3, side * side, 4);
        let want = common::cpe(
            &x,
            params.get("cpe.kernel").unwrap(),
            params.get("cpe.bias").unwrap().data(),
            side,
        );
        let got = params.cpe(&to_array(&x)).unwrap();
        assert!(max_diff(&got, &want) < 1e-12, "seed {seed}");
    }
}

#[test]
fn cpe_disabled_is_config_error() {
    let params = SactParams::<f64>::init(&small(2, 2, 2, 2, false, false), 0).unwrap();
    assert!(matches!(
        params.cpe(&DenseArray::zeros(&[4, 2])),
        Err(sact::Error::Config(_))
    ));
}

#[test]
fn tmixer_zero_weights_collapse() {
    let cfg = small(2, 2, 3, 2, true, false);
    let mut params = SactParams::<f64>::init(&cfg, 0).unwrap();
    for i in 1..=8 {
        let name = format!("tmixer.w{i}");
        let shape = params.get(&name).unwrap().shape().to_vec();
        params.set(&name, DenseArray::zeros(&shape)).unwrap();
    }
    let x = common::random_array(&mut common::rng(2), &[2, 4, 3], 1.0);
    let y = params.tmixer(&x).unwrap();
    assert_eq!(y.shape(), &[1, 4, 3]);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn tmixer_halves_eight_frames() {
    let cfg = small(8, 7, 4, 2, true, true);
    let params = SactParams::<f64>::init(&cfg, 0).unwrap();
    let x = common::random_array(&mut common::rng(5), &[8, 49, 4], 1.0);
    assert_eq!(params.tmixer(&x).unwrap().shape(), &[4, 49, 4]);
}

#[test]
fn tmixer_rejects_wrong_shape() {
    let params = SactParams::<f64>::init(&small(4, 2, 3, 2, true, false), 0).unwrap();
    assert!(params.tmixer(&DenseArray::zeros(&[2, 4, 3])).is_err());
    assert!(ModelConfig {
        frames: 3,
        ..small(4, 2, 3, 2, true, false)
    }
    .validate()
    .is_err());
}

#[test]
fn tmixer_matches_loop_oracle() {
    for seed in 0..20 {
        let l = if seed % 2 == 0 { 2 } else { 4 };
        let side = 1 + seed as usize % 3;
        let cfg = small(l, side, 1 + seed as usize % 4, 2, true, false);
        let params = random_params(&cfg, seed, 0.5);
        let x = random_video(&mut common::rng(seed + 50), l, side * side, cfg.channels);
        let want = common::tmixer(&x, &common::mixer_weights(&params));
        let got = params.tmixer(&to_array(&x)).unwrap();
        assert!(max_diff(&got, &want) < 1e-12, "seed {seed}");
    }
}

#[test]
fn sca_single_patch_single_shot_is_one() {
    let cfg = small(2, 1, 3, 2, false, true);
    let params = random_params(&cfg, 1, 0.5);
    let q = common::random_array(&mut common::rng(1), &[2, 1, 3], 1.0);
    let s = common::random_array(&mut common::rng(2), &[2, 1, 3], 1.0);
    let att = params.sca_attention(&q, &[s]).unwrap();
    assert!(att.weights().data().iter().all(|&a| a == 1.0));
}

#[test]
fn sca_identical_support_patches_is_uniform() {
    let cfg = small(2, 2, 3, 3, false, false);
    let params = random_params(&cfg, 1, 0.5);
    let q = common::random_array(&mut common::rng(1), &[2, 4, 3], 1.0);
    let patch = [0.3, -0.2, 0.9];
    let s = DenseArray::from_fn(&[2, 4, 3], |i| patch[i % 3]);
    let att = params.sca_attention(&q, &[s.clone(), s]).unwrap();
    for &a in att.weights().data() {
        assert!((a - 1.0 / 8.0).abs() < 1e-12);
    }
}

#[test]
fn sca_matches_enumeration() {
    for seed in 0..20u64 {
        let (k, side) = (1 + seed as usize % 2, 1 + seed as usize % 3);
        let cfg = small(2 + 2 * (seed as usize % 2), side, 1 + seed as usize % 4, 3, false, seed % 3 != 0);
        let params = random_params(&cfg, seed, 0.6);
        let mut r = common::rng(seed + 7);
        let q = random_video(&mut r, cfg.frames, side * side, cfg.channels);
        let s: Vec<Video> = (0..k).map(|_| random_video(&mut r, cfg.frames, side * side, cfg.channels)).collect();
        let want = common::sca(&params, &q, &s);
        let s_arr: Vec<_> = s.iter().map(|v| to_array(v)).collect();
        let got = params.sca_attention(&to_array(&q), &s_arr).unwrap();
        let [l, pq, kk, ps] = got.dims();
        assert_eq!([l, pq, kk, ps], [cfg.frames, side * side, k, side * side]);
        for i in 0..l {
            for p in 0..pq {
                for a in 0..kk {
                    for m in 0..ps {
                        assert!((got.get(i, p, a, m) - want[i][p][a][m]).abs() < 1e-12, "seed {seed}");
                    }
                }
            }
        }
    }
}

#[test]
fn sca_rejects_frame_mismatch() {
    let cfg = small(4, 2, 3, 2, true, false);
    let params = SactParams::<f64>::init(&cfg, 0).unwrap();
    // attention inputs are post-mixer, so they must have 2 frames
    let q = DenseArray::zeros(&[4, 4, 3]);
    assert!(params.sca_attention(&q, &[q.clone()]).is_err());
    let q2 = DenseArray::zeros(&[2, 4, 3]);
    assert!(params.sca_attention(&q2, &[q.clone()]).is_err());
}

#[test]
fn temperature_is_root_dk() {
    for d_k in [1, 4] {
        let cfg = small(2, 2, 3, d_k, false, false);
        let params = random_params(&cfg, d_k as u64, 0.5);
        let mut r = common::rng(9);
        let q = random_video(&mut r, 2, 4, 3);
        let s = random_video(&mut r, 2, 4, 3);
        let qk = common::keys(&params, &q, true);
        let sk = common::keys(&params, &s, false);
        let tau = (d_k as f64).sqrt();
        let got = params.sca_attention(&to_array(&q), &[to_array(&s)]).unwrap();
        for i in 0..2 {
            for p in 0..4 {
                let pre: Vec<f64> = (0..4)
                    .map(|m| sk[i][m].iter().zip(&qk[i][p]).map(|(a, b)| a * b).sum::<f64>() / tau)
                    .collect();
                let want = common::softmax(&pre);
                for m in 0..4 {
                    assert!((got.get(i, p, 0, m) - want[m]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn prototype_one_hot_selects_patch() {
    let cfg = small(2, 2, 3, 2, false, false);
    let params = random_params(&cfg, 4, 0.5);
    let mut r = common::rng(4);
    let s: Vec<Video> = (0..2).map(|_| random_video(&mut r, 2, 4, 3)).collect();
    let (k_star, m_star) = (1, 2);
    let w = DenseArray::from_fn(&[2, 4, 2, 4], |idx| {
        let (k, m) = ((idx / 4) % 2, idx % 4);
        if k == k_star && m == m_star {
            1.0
        } else {
            0.0
        }
    });
    let att = AttentionMap::new(w).unwrap();
    let s_arr: Vec<_> = s.iter().map(|v| to_array(v)).collect();
    let t = params.query_prototype(&att, &s_arr).unwrap();
    let vals = common::values(&params, &s[k_star]);
    for i in 0..2 {
        for p in 0..4 {
            for c in 0..2 {
                assert!((t.get(&[i, p, c]) - vals[i][m_star][c]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn prototype_uniform_over_identical_patches() {
    let cfg = small(2, 2, 3, 2, false, false);
    let params = random_params(&cfg, 4, 0.5);
    let patch = [0.5, -1.0, 0.25];
    let s = DenseArray::from_fn(&[2, 4, 3], |i| patch[i % 3]);
    let att = AttentionMap::new(DenseArray::full(&[2, 4, 2, 4], 1.0 / 8.0)).unwrap();
    let t = params.query_prototype(&att, &[s.clone(), s]).unwrap();
    let want = common::values(&params, &[vec![patch.to_vec()]]);
    for i in 0..2 {
        for p in 0..4 {
            for c in 0..2 {
                assert!((t.get(&[i, p, c]) - want[0][0][c]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn prototype_matches_double_sum() {
    for seed in 0..20u64 {
        let (k, side) = (1 + seed as usize % 2, 1 + seed as usize % 3);
        let cfg = small(2, side, 3, 2, false, true);
        let params = random_params(&cfg, seed, 0.6);
        let mut r = common::rng(seed + 3);
        let q = random_video(&mut r, 2, side * side, 3);
        let s: Vec<Video> = (0..k).map(|_| random_video(&mut r, 2, side * side, 3)).collect();
        let s_arr: Vec<_> = s.iter().map(|v| to_array(v)).collect();
        let att = params.sca_attention(&to_array(&q), &s_arr).unwrap();
        let want = common::prototype(&params, &common::sca(&params, &q, &s), &s);
        let got = params.query_prototype(&att, &s_arr).unwrap();
        assert!(max_diff(&got, &want) < 1e-12, "seed {seed}");
    }
}

#[test]
fn distance_of_perfect_match_is_zero() {
    let cfg = small(2, 2, 3, 2, false, true);
    let params = random_params(&cfg, 1, 0.5);
    let q = random_video(&mut common::rng(1), 2, 4, 3);
    let t = to_array(&common::values(&params, &q));
    assert!(params.class_distance(&to_array(&q), &t).unwrap().abs() < 1e-15);
}

#[test]
fn distance_hand_arithmetic() {
    for e in [1, 2] {
        let cfg = ModelConfig {
            frame_norm_exponent: e,
            ..small(1, 1, 2, 2, false, false)
        };
        let mut params = SactParams::<f64>::init(&cfg, 0).unwrap();
        params
            .set("w_v", DenseArray::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        let q = DenseArray::zeros(&[1, 1, 2]);
        let t = DenseArray::new(vec![1, 1, 2], vec![3.0, 4.0]).unwrap();
        assert_eq!(params.class_distance(&q, &t).unwrap(), 25.0);
    }
}

#[test]
fn distance_matches_direct_sum() {
    for seed in 0..20u64 {
        let e = 1 + (seed % 2) as u32;
        let side = 1 + seed as usize % 3;
        let cfg = ModelConfig {
            frame_norm_exponent: e,
            ..small(1 + seed as usize % 4, side, 3, 2, false, false)
        };
        let params = random_params(&cfg, seed, 0.6);
        let mut r = common::rng(seed);
        let q = random_video(&mut r, cfg.frames, side * side, 3);
        let t = random_video(&mut r, cfg.frames, side * side, 2);
        let want = common::distance(&params, &q, &t);
        let got = params.class_distance(&to_array(&q), &to_array(&t)).unwrap();
        assert!(got >= 0.0);
        assert!((got - want).abs() < 1e-12, "seed {seed}");
    }
}

fn random_episode_videos(r: &mut impl Rng, cfg: &ModelConfig, way: usize, shot: usize) -> (Video, Vec<Vec<Video>>) {
    let gen = |r: &mut _| as_stored(&random_video_rng(r, cfg.frames, cfg.patches(), cfg.channels));
    let q = gen(r);
    let classes = (0..way).map(|_| (0..shot).map(|_| gen(r)).collect()).collect();
    (q, classes)
}

fn random_video_rng(r: &mut impl Rng, frames: usize, patches: usize, channels: usize) -> Video {
    (0..frames)
        .map(|_| (0..patches).map(|_| (0..channels).map(|_| r.random_range(-1.0..1.0)).collect()).collect())
        .collect()
}

fn episode_from<'a>(query: &'a FeatureVideo, support: &'a [Vec<FeatureVideo>], label: usize) -> Episode<'a> {
    Episode::from_videos(
        support.iter().map(|c| c.iter().collect()).collect(),
        vec![(query, label)],
    )
}

#[test]
fn forward_matches_full_oracle() {
    for seed in 0..8u64 {
        let cfg = ModelConfig {
            frame_norm_exponent: 1 + (seed % 2) as u32,
            ..small(4, 2, 3, 3, seed % 4 < 2, seed % 2 == 0)
        };
        let params = random_params(&cfg, seed, 0.5);
        let (q, classes) = random_episode_videos(&mut common::rng(seed), &cfg, 3, 2);
        let want = common::logits(&params, &q, &classes);
        let qv = feature_video(&q);
        let sv: Vec<Vec<FeatureVideo>> = classes.iter().map(|c| c.iter().map(feature_video).collect()).collect();
        let got = params.forward(&episode_from(&qv, &sv, 0)).unwrap();
        for (a, b) in got[0].iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn forward_single_class_predicts_zero() {
    let cfg = small(2, 2, 3, 2, true, true);
    let params = SactParams::<f32>::init(&cfg, 0).unwrap();
    let (q, classes) = random_episode_videos(&mut common::rng(0), &cfg, 1, 1);
    let qv = feature_video(&q);
    let sv: Vec<Vec<FeatureVideo>> = classes.iter().map(|c| c.iter().map(feature_video).collect()).collect();
    let logits = params.forward(&episode_from(&qv, &sv, 0)).unwrap();
    assert_eq!(logits[0].len(), 1);
    assert_eq!(argmax(&logits[0]), 0);
}

#[test]
fn query_equal_to_support_wins() {
    let cfg = small(4, 3, 8, 64, true, true);
    for seed in 0..100u64 {
        let params = SactParams::<f64>::init(&cfg, seed).unwrap();
        let mut r = common::rng(seed + 1000);
        let way = 5;
        let target = r.random_range(0..way);
        let (_, classes) = random_episode_videos(&mut r, &cfg, way, 1);
        let sv: Vec<Vec<FeatureVideo>> = classes.iter().map(|c| c.iter().map(feature_video).collect()).collect();
        let qv = sv[target][0].clone();
        let logits = params.forward(&episode_from(&qv, &sv, target)).unwrap();
        assert_eq!(argmax(&logits[0]), target, "seed {seed}: {:?}", logits[0]);
    }
}

#[test]
fn support_order_does_not_matter() {
    for seed in 0..10u64 {
        let cfg = small(4, 2, 3, 4, seed % 2 == 0, true);
        let params = random_params(&cfg, seed, 0.5);
        let (q, classes) = random_episode_videos(&mut common::rng(seed), &cfg, 3, 3);
        let qv = feature_video(&q);
        let sv: Vec<Vec<FeatureVideo>> = classes.iter().map(|c| c.iter().map(feature_video).collect()).collect();
        let mut rev = sv.clone();
        for c in &mut rev {
            c.rotate_left(1);
        }
        let a = params.forward(&episode_from(&qv, &sv, 0)).unwrap();
        let b = params.forward(&episode_from(&qv, &rev, 0)).unwrap();
        for (x, y) in a[0].iter().zip(&b[0]) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn support_patch_permutation_without_cpe() {
    for seed in 0..10u64 {
        let cfg = small(4, 2, 3, 4, seed % 2 == 0, false);
        let params = random_params(&cfg, seed, 0.5);
        let mut r = common::rng(seed);
        let l = cfg.attended_frames();
        let q = random_video(&mut r, l, 4, 3);
        let s: Vec<Video> = (0..2).map(|_| random_video(&mut r, l, 4, 3)).collect();
        let perm = [2, 0, 3, 1];
        let permuted: Vec<Video> = s
            .iter()
            .map(|v| v.iter().map(|f| perm.iter().map(|&m| f[m].clone()).collect()).collect())
            .collect();
        let arr = |vs: &[Video]| vs.iter().map(|v| to_array(v)).collect::<Vec<_>>();
        let qa = to_array(&q);
        let a = params.sca_attention(&qa, &arr(&s)).unwrap();
        let b = params.sca_attention(&qa, &arr(&permuted)).unwrap();
        for i in 0..l {
            for p in 0..4 {
                for k in 0..2 {
                    for m in 0..4 {
                        assert!((b.get(i, p, k, m) - a.get(i, p, k, perm[m])).abs() < 1e-12);
                    }
                }
            }
        }
        let da = params
            .class_distance(&qa, &params.query_prototype(&a, &arr(&s)).unwrap())
            .unwrap();
        let db = params
            .class_distance(&qa, &params.query_prototype(&b, &arr(&permuted)).unwrap())
            .unwrap();
        assert!((da - db).abs() < 1e-12);
    }
}

#[test]
fn attention_groups_are_normalised() {
    let cfg = small(4, 3, 4, 4, true, true);
    let params = random_params(&cfg, 2, 1.0);
    let (q, classes) = random_episode_videos(&mut common::rng(2), &cfg, 3, 2);
    let qv = feature_video(&q);
    let sv: Vec<Vec<FeatureVideo>> = classes.iter().map(|c| c.iter().map(feature_video).collect()).collect();
    let out = params.forward_with_attention(&episode_from(&qv, &sv, 0)).unwrap();
    for map in &out[0].attention {
        assert_eq!(map.dims(), [2, 9, 2, 9]);
        for s in map.group_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(map.weights().data().iter().all(|&a| a > 0.0 && a <= 1.0));
    }
}

#[test]
fn pn_self_match_and_ties() {
    let cfg = small(2, 2, 3, 2, false, false);
    let (_, classes) = random_episode_videos(&mut common::rng(5), &cfg, 3, 1);
    let sv: Vec<Vec<FeatureVideo>> = classes.iter().map(|c| c.iter().map(feature_video).collect()).collect();
    let q = sv[1][0].clone();
    let logits = pn_fsar_forward::<f64>(&episode_from(&q, &sv, 1));
    assert_eq!(logits[0][1], 0.0);
    assert_eq!(argmax(&logits[0]), 1);

    let twins = vec![sv[2].clone(), sv[2].clone()];
    let logits = pn_fsar_forward::<f64>(&episode_from(&q, &twins, 0));
    assert_eq!(logits[0][0], logits[0][1]);
    assert_eq!(argmax(&logits[0]), 0);
}

#[test]
fn pn_matches_direct_means() {
    for seed in 0..10u64 {
        let cfg = small(3, 2, 4, 2, false, false);
        let (q, classes) = random_episode_videos(&mut common::rng(seed), &cfg, 4, 3);
        let want = common::pn_logits(&q, &classes);
        let qv = feature_video(&q);
        let sv: Vec<Vec<FeatureVideo>> = classes.iter().map(|c| c.iter().map(feature_video).collect()).collect();
        let got = pn_fsar_forward::<f64>(&episode_from(&qv, &sv, 0));
        for (a, b) in got[0].iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn f32_and_f64_forward_agree() {
    let cfg = small(4, 2, 3, 4, true, true);
    let params = random_params(&cfg, 1, 0.5);
    let (q, classes) = random_episode_videos(&mut common::rng(1), &cfg, 3, 1);
    let qv = feature_video(&q);
    let sv: Vec<Vec<FeatureVideo>> = classes.iter().map(|c| c.iter().map(feature_video).collect()).collect();
    let ep = episode_from(&qv, &sv, 0);
    let a = params.forward(&ep).unwrap();
    let b = params.cast::<f32>().forward(&ep).unwrap();
    for (x, y) in a[0].iter().zip(&b[0]) {
        assert!((x - *y as f64).abs() < 1e-4 * (1.0 + x.abs()));
    }
}

#[test]
fn nested_view_round_trips() {
    let x = common::random_array(&mut common::rng(0), &[2, 3, 4], 1.0);
    assert_eq!(to_array(&nested3(&x)), x);
}
