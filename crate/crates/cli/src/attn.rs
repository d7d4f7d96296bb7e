use std::fmt::Write as _;
use std::path::Path;

use sact::episodes::{sample_episode, EpisodeShape};
use sact::features::FeatureDataset;
use sact::model::{argmax, SactParams};
use serde::{Deserialize, Serialize};

use crate::commands::write_file;
use crate::error::{CliError, Result};

pub const AGGREGATION: &str = "attention averaged over attended frames and support shots; \
     the P×P grid is then split into G×G blocks with boundaries floor(g·P/G); \
     query rows inside a block are averaged and support columns inside a block are summed, \
     so every exported row still sums to 1";

/// Block index of a cell along one grid axis.
pub fn block_of(cell: usize, p: usize, g: usize) -> usize {
    (0..g).rfind(|&b| b * p / g <= cell).unwrap_or(0)
}

/// Block index of a flattened patch position `r·P + c`.
pub fn patch_block(patch: usize, p: usize, g: usize) -> usize {
    block_of(patch / p, p, g) * g + block_of(patch % p, p, g)
}

/// Pool a `[P², P²]` matrix (query rows, support columns) to `[G², G²]`.
pub fn pool(matrix: &[Vec<f64>], p: usize, g: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; g * g]; g * g];
    let mut counts = vec![0usize; g * g];
    for (q, row) in matrix.iter().enumerate() {
        let bq = patch_block(q, p, g);
        counts[bq] += 1;
        for (s, &w) in row.iter().enumerate() {
            out[bq][patch_block(s, p, g)] += w;
        }
    }
    for (row, &n) in out.iter_mut().zip(&counts) {
        row.iter_mut().for_each(|w| *w /= n as f64);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttnClass {
    /// Position of the class in the episode.
    pub index: usize,
    pub class_id: u32,
    pub name: String,
    /// Argmax column of every exported row.
    pub argmax: Vec<usize>,
    /// Planted cell per frame of each support shot, when known.
    pub support_planted: Option<Vec<Vec<usize>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttnManifest {
    pub episode_seed: u64,
    pub patches_per_side: usize,
    /// Exported grid side G; equals P without downsampling.
    pub grid: usize,
    pub way: usize,
    pub shot: usize,
    pub attended_frames: usize,
    pub aggregation: String,
    pub query_label: usize,
    pub query_planted: Option<Vec<usize>>,
    pub classes: Vec<AttnClass>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttnExport {
    pub manifest: AttnManifest,
    /// `[class][G² query rows][G² support columns]`.
    pub matrices: Vec<Vec<Vec<f64>>>,
}

/// Attention of the single query of episode `episode_seed` against every
/// class.
pub fn export_attention(
    params: &SactParams<f32>,
    dataset: &FeatureDataset,
    way: usize,
    shot: usize,
    episode_seed: u64,
    downsample: Option<usize>,
) -> Result<AttnExport> {
    let p = params.config().patches_per_side;
    let g = downsample.unwrap_or(p);
    if g == 0 || g > p {
        return Err(CliError::Config(format!(
            "--downsample {g} must be between 1 and the grid side P = {p}"
        )));
    }
    let episode = sample_episode(dataset, EpisodeShape::new(way, shot, 1), episode_seed)?;
    let params = params.cast::<f64>();
    let outputs = params.forward_with_attention(&episode)?;
    let out = &outputs[0];
    let query = &episode.queries[0];
    let mut matrices = Vec::with_capacity(way);
    let mut classes = Vec::with_capacity(way);
    for (c, map) in out.attention.iter().enumerate() {
        let mean = map.frame_shot_mean();
        let [pq, ps] = [mean.shape()[0], mean.shape()[1]];
        let full: Vec<Vec<f64>> = (0..pq).map(|q| mean.data()[q * ps..(q + 1) * ps].to_vec()).collect();
        let pooled = pool(&full, p, g);
        let class_index = episode.support_refs.get(c).and_then(|r| r.first()).map(|r| r.class_index);
        classes.push(AttnClass {
            index: c,
            class_id: episode.support_labels[c],
            name: class_index
                .map(|i| dataset.classes()[i].name.clone())
                .unwrap_or_default(),
            argmax: pooled.iter().map(|row| argmax(row)).collect(),
            support_planted: episode.support[c]
                .iter()
                .map(|v| v.planted().map(<[usize]>::to_vec))
                .collect(),
        });
        matrices.push(pooled);
    }
    Ok(AttnExport {
        manifest: AttnManifest {
            episode_seed,
            patches_per_side: p,
            grid: g,
            way,
            shot,
            attended_frames: params.config().attended_frames(),
            aggregation: AGGREGATION.to_string(),
            query_label: query.label,
            query_planted: query.video.planted().map(<[usize]>::to_vec),
            classes,
        },
        matrices,
    })
}

impl AttnExport {
    /// One block of rows per class: `class,query_block,s0,…`.
    pub fn to_csv(&self) -> String {
        let n = self.manifest.grid * self.manifest.grid;
        let mut s = String::from("episode_seed,class,query_block");
        for j in 0..n {
            let _ = write!(s, ",s{j}");
        }
        s.push('\n');
        for (c, m) in self.matrices.iter().enumerate() {
            for (q, row) in m.iter().enumerate() {
                let _ = write!(s, "{},{c},{q}", self.manifest.episode_seed);
                for w in row {
                    let _ = write!(s, ",{w:.9}");
                }
                s.push('\n');
            }
        }
        s
    }

    /// CSV at `out`, manifest at `out` with a `.json` extension.
    pub fn write(&self, out: &Path) -> Result<()> {
        write_file(out, self.to_csv())?;
        crate::commands::write_json(&out.with_extension("json"), &self.manifest)
    }
}
