//! Closed-form multiply-accumulate counts for one episode.
//!
//! Symbols: `L` input frames, `L'` frames at the attention stage, `P²`
//! patches, `D` channels, `C` way, `K` shot, `Q` queries, and
//! `V = C·K + Q` videos in the episode. A matrix product `[m,k]·[k,n]`
//! costs `m·k·n`. Layer norm, softmax, ReLU and additions are not counted.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Sca,
    TMixer,
}

/// Which temporal mixer precedes the attention stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixerCost {
    None,
    /// Frame and channel mixing only (W1..W4); frames stay at `L`.
    NonReducing,
    /// All four MLPs (W1..W8); frames drop to `L/2`.
    Reducing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostConfig {
    pub frames: u64,
    pub patches_per_side: u64,
    pub channels: u64,
    pub d_k: u64,
    pub d_v: u64,
    pub way: u64,
    pub shot: u64,
    pub queries: u64,
    pub use_cpe: bool,
    pub mixer: MixerCost,
}

impl CostConfig {
    /// Full-scale 5-way 5-shot setting with 7×7×2048 feature maps.
    pub fn full_scale(d_k: u64, mixer: MixerCost) -> Self {
        Self {
            frames: 8,
            patches_per_side: 7,
            channels: 2048,
            d_k,
            d_v: d_k,
            way: 5,
            shot: 5,
            queries: 1,
            use_cpe: true,
            mixer,
        }
    }

    pub fn attended_frames(&self) -> u64 {
        match self.mixer {
            MixerCost::Reducing => self.frames / 2,
            _ => self.frames,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostComponent {
    pub name: &'static str,
    pub stage: Stage,
    pub multiadds: u64,
    pub formula: &'static str,
    /// Scales exactly with `L'`.
    pub linear_in_frames: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub config: CostConfig,
    pub attended_frames: u64,
    pub components: Vec<CostComponent>,
    pub sca_total: u64,
    pub tmixer_total: u64,
    pub total: u64,
}

impl CostReport {
    pub fn component(&self, name: &str) -> Option<&CostComponent> {
        self.components.iter().find(|c| c.name == name)
    }
}

pub fn count_multiadds(cfg: &CostConfig) -> CostReport {
    let l = cfg.frames;
    let h = l / 2;
    let lp = cfg.attended_frames();
    let p2 = cfg.patches_per_side * cfg.patches_per_side;
    let (d, dk, dv) = (cfg.channels, cfg.d_k, cfg.d_v);
    let (c, k, q) = (cfg.way, cfg.shot, cfg.queries);
    let v = c * k + q;

    let mut out = Vec::new();
    let mut push = |name, stage, multiadds, formula, linear_in_frames| {
        out.push(CostComponent {
            name,
            stage,
            multiadds,
            formula,
            linear_in_frames,
        })
    };

    if cfg.mixer != MixerCost::None {
        push("tmixer.mlp1", Stage::TMixer, v * 2 * l * l * p2 * d, "V·2·L·L·P²·D", false);
        push("tmixer.mlp2", Stage::TMixer, v * 2 * l * p2 * d * d, "V·2·L·P²·D·D", false);
    }
    if cfg.mixer == MixerCost::Reducing {
        push(
            "tmixer.mlp3",
            Stage::TMixer,
            v * (l * h + h * h) * p2 * d,
            "V·(L·L/2 + L/2·L/2)·P²·D",
            false,
        );
        push("tmixer.mlp4", Stage::TMixer, v * 2 * h * p2 * d * d, "V·2·(L/2)·P²·D·D", false);
    }
    if cfg.use_cpe {
        push("sca.cpe", Stage::Sca, v * 9 * lp * p2 * d, "V·9·L'·P²·D", true);
    }
    push("sca.support_keys", Stage::Sca, c * k * lp * p2 * d * dk, "C·K·L'·P²·D·d_k", true);
    push("sca.query_keys", Stage::Sca, q * lp * p2 * d * dk, "Q·L'·P²·D·d_k", true);
    push("sca.support_values", Stage::Sca, c * k * lp * p2 * d * dv, "C·K·L'·P²·D·d_v", true);
    push("sca.query_values", Stage::Sca, q * lp * p2 * d * dv, "Q·L'·P²·D·d_v", true);
    push("sca.attention_logits", Stage::Sca, q * c * lp * p2 * k * p2 * dk, "Q·C·L'·P²·K·P²·d_k", true);
    push("sca.prototypes", Stage::Sca, q * c * lp * p2 * k * p2 * dv, "Q·C·L'·P²·K·P²·d_v", true);
    push("sca.distance", Stage::Sca, q * c * p2 * dv, "Q·C·P²·d_v", false);

    let stage_total = |s| out.iter().filter(|x| x.stage == s).map(|x| x.multiadds).sum::<u64>();
    let sca_total = stage_total(Stage::Sca);
    let tmixer_total = stage_total(Stage::TMixer);
    CostReport {
        config: *cfg,
        attended_frames: lp,
        sca_total,
        tmixer_total,
        total: sca_total + tmixer_total,
        components: out,
    }
}

/// Attention-stage cost at 8 and 4 frames for one `d_k`, against the
/// published 5.48G and 3.37G.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d_k: u64,
    pub sca_8_frames: u64,
    pub sca_4_frames: u64,
    pub reduction_pct: f64,
    pub rel_err_8: f64,
    pub rel_err_4: f64,
    /// Both counts within 1% of the published values.
    pub matches: bool,
}

pub const PUBLISHED_SCA_8: f64 = 5.48e9;
pub const PUBLISHED_SCA_4: f64 = 3.37e9;

pub fn dk_sweep(d_ks: impl IntoIterator<Item = u64>) -> Vec<SweepRow> {
    d_ks.into_iter()
        .map(|d_k| {
            let eight = count_multiadds(&CostConfig::full_scale(d_k, MixerCost::NonReducing)).sca_total;
            let four = count_multiadds(&CostConfig::full_scale(d_k, MixerCost::Reducing)).sca_total;
            let rel_err_8 = (eight as f64 - PUBLISHED_SCA_8).abs() / PUBLISHED_SCA_8;
            let rel_err_4 = (four as f64 - PUBLISHED_SCA_4).abs() / PUBLISHED_SCA_4;
            SweepRow {
                d_k,
                sca_8_frames: eight,
                sca_4_frames: four,
                reduction_pct: 100.0 * (1.0 - four as f64 / eight as f64),
                rel_err_8,
                rel_err_4,
                matches: rel_err_8 <= 0.01 && rel_err_4 <= 0.01,
            }
        })
        .collect()
}
