use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore};
use crate::error::{ConfigError, Error};
use crate::model::ModelConfig;
use crate::tensor::{DenseArray, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CpeIds {
    /// `[3, 3, channels]`.
    pub kernel: ParamId,
    /// `[channels]`.
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TMixerIds {
    /// W1..W8 in order: `[L,L] [L,L] [D,D] [D,D] [L,L/2] [L/2,L/2] [D,D] [D,D]`.
    pub w: [ParamId; 8],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamIds {
    /// Shared query/key projection `[d_k, D]`.
    pub w_qk: ParamId,
    /// Value projection `[d_v, D]`.
    pub w_v: ParamId,
    pub ln_query_gain: ParamId,
    pub ln_query_bias: ParamId,
    pub ln_support_gain: ParamId,
    pub ln_support_bias: ParamId,
    pub cpe: Option<CpeIds>,
    pub tmixer: Option<TMixerIds>,
}

/// Every learnable array of the network. Modules switched off in the
/// config own no parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SactParams<T> {
    config: ModelConfig,
    store: ParamStore<T>,
    ids: ParamIds,
}

/// Parameter layout with fan-in used by the uniform initialiser.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (l, d, dk, dv) = (cfg.frames, cfg.channels, cfg.d_k, cfg.value_dim());
    let mut out = vec![
        ("w_qk".to_string(), vec![dk, d], Init::Uniform(d)),
        ("w_v".to_string(), vec![dv, d], Init::Uniform(d)),
        ("ln_query.gain".to_string(), vec![dk], Init::Const(1.0)),
        ("ln_query.bias".to_string(), vec![dk], Init::Const(0.0)),
        ("ln_support.gain".to_string(), vec![dk], Init::Const(1.0)),
        ("ln_support.bias".to_string(), vec![dk], Init::Const(0.0)),
    ];
    if cfg.use_cpe {
        out.push(("cpe.kernel".into(), vec![3, 3, d], Init::Const(0.0)));
        out.push(("cpe.bias".into(), vec![d], Init::Const(0.0)));
    }
    if cfg.use_tmixer {
        let h = l / 2;
        let shapes = [
            (vec![l, l], l),
            (vec![l, l], l),
            (vec![d, d], d),
            (vec![d, d], d),
            // applied transposed, so the contraction runs over its L rows
            (vec![l, h], l),
            (vec![h, h], h),
            (vec![d, d], d),
            (vec![d, d], d),
        ];
        for (i, (shape, fan_in)) in shapes.into_iter().enumerate() {
            out.push((format!("tmixer.w{}", i + 1), shape, Init::Uniform(fan_in)));
        }
    }
    out
}

#[derive(Clone, Copy)]
enum Init {
    Uniform(usize),
    Const(f64),
}

impl<T: Scalar> SactParams<T> {
    /// Projections and mixer weights ~ U(-1/√fan_in, 1/√fan_in); CPE starts
    /// at zero and layer-norm affines at identity.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape, init) in layout(config) {
            let value = match init {
                Init::Const(c) => DenseArray::full(&shape, T::from_f64_lossy(c)),
                Init::Uniform(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    DenseArray::from_fn(&shape, |_| T::from_f64_lossy(rng.random_range(-bound..bound)))
                }
            };
            store.add(name, value);
        }
        let ids = Self::resolve_ids(config, &store)?;
        Ok(Self {
            config: config.clone(),
            store,
            ids,
        })
    }

    fn resolve_ids(config: &ModelConfig, store: &ParamStore<T>) -> Result<ParamIds, ConfigError> {
        let find = |name: &str| {
            store
                .find(name)
                .ok_or_else(|| ConfigError(format!("missing parameter {name}")))
        };
        let cpe = if config.use_cpe {
            Some(CpeIds {
                kernel: find("cpe.kernel")?,
                bias: find("cpe.bias")?,
            })
        } else {
            None
        };
        let tmixer = if config.use_tmixer {
            let mut w = [ParamId(0); 8];
            for (i, slot) in w.iter_mut().enumerate() {
                *slot = find(&format!("tmixer.w{}", i + 1))?;
            }
            Some(TMixerIds { w })
        } else {
            None
        };
        Ok(ParamIds {
            w_qk: find("w_qk")?,
            w_v: find("w_v")?,
            ln_query_gain: find("ln_query.gain")?,
            ln_query_bias: find("ln_query.bias")?,
            ln_support_gain: find("ln_support.gain")?,
            ln_support_bias: find("ln_support.bias")?,
            cpe,
            tmixer,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn ids(&self) -> &ParamIds {
        &self.ids
    }

    pub fn get(&self, name: &str) -> Option<&DenseArray<T>> {
        self.store.find(name).map(|id| &self.store.get(id).value)
    }

    /// Replace a parameter's value; the shape must not change.
    pub fn set(&mut self, name: &str, value: DenseArray<T>) -> Result<(), ConfigError> {
        let id = self
            .store
            .find(name)
            .ok_or_else(|| ConfigError(format!("unknown parameter {name}")))?;
        let p = self.store.get_mut(id);
        if p.value.shape() != value.shape() {
            return Err(ConfigError(format!(
                "parameter {name} has shape {:?}, got {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> SactParams<U> {
        let mut store = ParamStore::new();
        for (_, p) in self.store.iter() {
            store.add(p.name.clone(), p.value.cast());
        }
        SactParams {
            config: self.config.clone(),
            store,
            ids: self.ids,
        }
    }

    pub fn to_saved(&self) -> SavedModel {
        SavedModel {
            config: self.config.clone(),
            params: self
                .store
                .iter()
                .map(|(_, p)| SavedParam {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    data: p.value.data().iter().map(|v| v.to_f64_lossy()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_saved(saved: &SavedModel) -> Result<Self, Error> {
        saved.config.validate()?;
        let expected = layout(&saved.config);
        if expected.len() != saved.params.len() {
            return Err(ConfigError(format!(
                "model file has {} parameters, config implies {}",
                saved.params.len(),
                expected.len()
            ))
            .into());
        }
        let mut store = ParamStore::new();
        for ((name, shape, _), sp) in expected.iter().zip(&saved.params) {
            if *name != sp.name || *shape != sp.shape {
                return Err(ConfigError(format!(
                    "model file parameter {} {:?} does not match expected {} {:?}",
                    sp.name, sp.shape, name, shape
                ))
                .into());
            }
            let data = sp.data.iter().map(|&v| T::from_f64_lossy(v)).collect();
            store.add(sp.name.clone(), DenseArray::new(sp.shape.clone(), data)?);
        }
        let ids = Self::resolve_ids(&saved.config, &store)?;
        Ok(Self {
            config: saved.config.clone(),
            store,
            ids,
        })
    }
}

/// JSON form of a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub config: ModelConfig,
    pub params: Vec<SavedParam>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}
