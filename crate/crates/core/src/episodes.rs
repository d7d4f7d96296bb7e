//! C-way K-shot episode sampling.
//!
//! Every episode is a pure function of `(dataset, shape, seed)`. Streams of
//! tasks derive per-task seeds with [`derive_seed`]:
//!
//! ```text
//! splitmix64(z):
//!     z += 0x9E3779B97F4A7C15
//!     z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!     z  = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!     return z ^ (z >> 31)
//! derive_seed(master, t) = splitmix64(master ^ splitmix64(t))
//! ```
//!
//! (all arithmetic wrapping on u64). Within an episode the seed initialises a
//! ChaCha8 generator: classes are drawn without replacement, then per class
//! `K + n_query` distinct videos are drawn; the first `K` are supports and
//! the rest form that class's query pool. Each query picks its class
//! uniformly and takes the next unused video from that pool.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::features::{FeatureDataset, FeatureVideo};

pub fn splitmix64(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of task `task` in a stream rooted at `master`.
pub fn derive_seed(master: u64, task: u64) -> u64 {
    splitmix64(master ^ splitmix64(task))
}

/// `C` classes, `K` supports per class, `queries` query videos per episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeShape {
    pub way: usize,
    pub shot: usize,
    pub queries: usize,
}

impl EpisodeShape {
    pub fn new(way: usize, shot: usize, queries: usize) -> Self {
        Self { way, shot, queries }
    }
}

/// Position of a video inside its dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VideoRef {
    pub class_index: usize,
    pub video_index: usize,
}

#[derive(Clone, Debug)]
pub struct Query<'d> {
    pub video: &'d FeatureVideo,
    /// Index into the episode's classes, in `[0, way)`.
    pub label: usize,
    pub source: Option<VideoRef>,
}

#[derive(Clone, Debug)]
pub struct Episode<'d> {
    /// `support[c][k]`.
    pub support: Vec<Vec<&'d FeatureVideo>>,
    /// Dataset class id of each episode class.
    pub support_labels: Vec<u32>,
    pub support_refs: Vec<Vec<VideoRef>>,
    pub queries: Vec<Query<'d>>,
    pub seed: u64,
}

impl<'d> Episode<'d> {
    /// Hand-assembled episode; class ids are the class positions.
    pub fn from_videos(support: Vec<Vec<&'d FeatureVideo>>, queries: Vec<(&'d FeatureVideo, usize)>) -> Self {
        let way = support.len();
        Self {
            support_labels: (0..way as u32).collect(),
            support_refs: Vec::new(),
            support,
            queries: queries
                .into_iter()
                .map(|(video, label)| Query {
                    video,
                    label,
                    source: None,
                })
                .collect(),
            seed: 0,
        }
    }

    pub fn way(&self) -> usize {
        self.support.len()
    }

    pub fn shot(&self) -> usize {
        self.support.first().map_or(0, Vec::len)
    }
}

/// Draw one episode, fully determined by `seed`.
pub fn sample_episode<'d>(
    dataset: &'d FeatureDataset,
    shape: EpisodeShape,
    seed: u64,
) -> Result<Episode<'d>, DataError> {
    let classes = dataset.classes();
    if shape.way == 0 || classes.len() < shape.way {
        return Err(DataError::InsufficientClasses {
            available: classes.len(),
            requested: shape.way,
        });
    }
    let per_class = shape.shot + shape.queries;
    if let Some(short) = classes.iter().find(|c| c.videos.len() < per_class) {
        return Err(DataError::InsufficientVideos {
            class: short.id,
            available: short.videos.len(),
            requested: per_class,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = index::sample(&mut rng, classes.len(), shape.way).into_vec();

    let mut support = Vec::with_capacity(shape.way);
    let mut support_refs = Vec::with_capacity(shape.way);
    let mut pools = Vec::with_capacity(shape.way);
    for &ci in &chosen {
        let picks = index::sample(&mut rng, classes[ci].videos.len(), per_class).into_vec();
        let refs: Vec<VideoRef> = picks
            .iter()
            .map(|&vi| VideoRef {
                class_index: ci,
                video_index: vi,
            })
            .collect();
        support.push(refs[..shape.shot].iter().map(|r| &classes[ci].videos[r.video_index]).collect());
        support_refs.push(refs[..shape.shot].to_vec());
        pools.push(refs[shape.shot..].to_vec().into_iter());
    }

    let mut queries = Vec::with_capacity(shape.queries);
    for _ in 0..shape.queries {
        let label = rng.random_range(0..shape.way);
        let r = pools[label].next().expect("pool holds n_query videos");
        queries.push(Query {
            video: &classes[r.class_index].videos[r.video_index],
            label,
            source: Some(r),
        });
    }

    Ok(Episode {
        support,
        support_labels: chosen.iter().map(|&ci| classes[ci].id).collect(),
        support_refs,
        queries,
        seed,
    })
}

/// Task `task` of the stream rooted at `master_seed`.
pub fn stream_episode(
    dataset: &FeatureDataset,
    shape: EpisodeShape,
    master_seed: u64,
    task: usize,
) -> Result<Episode<'_>, DataError> {
    sample_episode(dataset, shape, derive_seed(master_seed, task as u64))
}

/// Reproducible sequence of `n_tasks` episodes; task `t` can also be
/// regenerated alone with [`stream_episode`].
pub fn episode_stream(
    dataset: &FeatureDataset,
    shape: EpisodeShape,
    master_seed: u64,
    n_tasks: usize,
) -> impl Iterator<Item = Result<Episode<'_>, DataError>> + '_ {
    (0..n_tasks).map(move |t| stream_episode(dataset, shape, master_seed, t))
}
