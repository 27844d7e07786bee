use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DenseNet, Layer, OutputHead};
use crate::blob::{self, BlobRef};
use crate::error::{Error, Result};

pub const CHECKPOINT_MANIFEST: &str = "manifest.json";

/// The six bodies of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Encoder,
    Generator,
    Regressor,
    CriticSeen,
    CriticUnseen,
    CriticAttr,
}

impl NetKind {
    pub const ALL: [NetKind; 6] = [
        NetKind::Encoder,
        NetKind::Generator,
        NetKind::Regressor,
        NetKind::CriticSeen,
        NetKind::CriticUnseen,
        NetKind::CriticAttr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NetKind::Encoder => "encoder",
            NetKind::Generator => "generator",
            NetKind::Regressor => "regressor",
            NetKind::CriticSeen => "critic_seen",
            NetKind::CriticUnseen => "critic_unseen",
            NetKind::CriticAttr => "critic_attr",
        }
    }
}

/// Sizes shared by all six bodies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    pub feature_dim: usize,
    pub attribute_dim: usize,
    pub latent_dim: usize,
    pub hidden_width: usize,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    /// `E(v, a) -> (mean, logvar)` over the latent space.
    pub encoder: DenseNet,
    /// `G(a, z) -> v`, L2-normalized.
    pub generator: DenseNet,
    /// `R(v) -> a`, L2-normalized.
    pub regressor: DenseNet,
    /// Conditional critic `D(v, a)`.
    pub critic_seen: DenseNet,
    /// Unconditional visual critic `D^u(v)`.
    pub critic_unseen: DenseNet,
    /// Attribute critic `D^a(a)`.
    pub critic_attr: DenseNet,
}

impl ModelSet {
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        let Architecture {
            feature_dim: d_v,
            attribute_dim: d_a,
            latent_dim: k,
            hidden_width: h,
            radius,
        } = *arch;
        let l2 = OutputHead::L2Normalize { radius };
        // Each body gets its own derived seed so adding a net never perturbs
        // the others.
        let s = |i: u64| seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i);
        Ok(ModelSet {
            encoder: DenseNet::init(d_v + d_a, &[h], 0, OutputHead::GaussianParams { latent_dim: k }, s(1))?,
            generator: DenseNet::init(d_a + k, &[h], d_v, l2, s(2))?,
            regressor: DenseNet::init(d_v, &[h], d_a, l2, s(3))?,
            critic_seen: DenseNet::init(d_v + d_a, &[h], 1, OutputHead::Linear, s(4))?,
            critic_unseen: DenseNet::init(d_v, &[h], 1, OutputHead::Linear, s(5))?,
            critic_attr: DenseNet::init(d_a, &[h], 1, OutputHead::Linear, s(6))?,
        })
    }

    pub fn get(&self, kind: NetKind) -> &DenseNet {
        match kind {
            NetKind::Encoder => &self.encoder,
            NetKind::Generator => &self.generator,
            NetKind::Regressor => &self.regressor,
            NetKind::CriticSeen => &self.critic_seen,
            NetKind::CriticUnseen => &self.critic_unseen,
            NetKind::CriticAttr => &self.critic_attr,
        }
    }

    pub fn get_mut(&mut self, kind: NetKind) -> &mut DenseNet {
        match kind {
            NetKind::Encoder => &mut self.encoder,
            NetKind::Generator => &mut self.generator,
            NetKind::Regressor => &mut self.regressor,
            NetKind::CriticSeen => &mut self.critic_seen,
            NetKind::CriticUnseen => &mut self.critic_unseen,
            NetKind::CriticAttr => &mut self.critic_attr,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.generator.out_dim()
    }

    pub fn attribute_dim(&self) -> usize {
        self.regressor.out_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.in_dim() - self.attribute_dim()
    }

    /// Checks the six bodies agree on `d_v`, `d_a` and `k`.
    pub fn validate(&self) -> Result<()> {
        let d_v = self.feature_dim();
        let d_a = self.attribute_dim();
        let k = self.latent_dim();
        let checks = [
            (NetKind::Encoder, self.encoder.in_dim() == d_v + d_a && self.encoder.out_dim() == 2 * k),
            (NetKind::Regressor, self.regressor.in_dim() == d_v),
            (NetKind::CriticSeen, self.critic_seen.in_dim() == d_v + d_a && self.critic_seen.out_dim() == 1),
            (NetKind::CriticUnseen, self.critic_unseen.in_dim() == d_v && self.critic_unseen.out_dim() == 1),
            (NetKind::CriticAttr, self.critic_attr.in_dim() == d_a && self.critic_attr.out_dim() == 1),
        ];
        for (kind, ok) in checks {
            if !ok {
                return Err(Error::shape(format!(
                    "{} is inconsistent with d_v={d_v}, d_a={d_a}, k={k}",
                    kind.name()
                )));
            }
        }
        Ok(())
    }

    /// Writes all six nets plus `meta` as a checkpoint directory.
    pub fn save(&self, dir: &Path, meta: serde_json::Value) -> Result<()> {
        let nets: Vec<(&str, &DenseNet)> =
            NetKind::ALL.iter().map(|&k| (k.name(), self.get(k))).collect();
        save_nets(dir, &nets, meta)
    }

    /// Reads a checkpoint written by [`ModelSet::save`], returning its meta.
    pub fn load(dir: &Path) -> Result<(Self, serde_json::Value)> {
        let (mut nets, meta) = load_nets(dir)?;
        let mut take = |kind: NetKind| {
            nets.remove(kind.name()).ok_or_else(|| Error::Manifest {
                path: dir.join(CHECKPOINT_MANIFEST),
                message: format!("missing net `{}`", kind.name()),
            })
        };
        let models = ModelSet {
            encoder: take(NetKind::Encoder)?,
            generator: take(NetKind::Generator)?,
            regressor: take(NetKind::Regressor)?,
            critic_seen: take(NetKind::CriticSeen)?,
            critic_unseen: take(NetKind::CriticUnseen)?,
            critic_attr: take(NetKind::CriticAttr)?,
        };
        models.validate()?;
        Ok((models, meta))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    weight: BlobRef,
    bias: BlobRef,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetEntry {
    leaky_slope: f64,
    head: OutputHead,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    nets: BTreeMap<String, NetEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Writes named nets as `f32` blobs plus a manifest.
pub fn save_nets(dir: &Path, nets: &[(&str, &DenseNet)], meta: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = BTreeMap::new();
    for (name, net) in nets {
        let mut layers = Vec::new();
        for (i, layer) in net.layers().iter().enumerate() {
            layers.push(LayerEntry {
                weight: blob::write_matrix(dir, &format!("{name}.{i}.weight.f32"), &layer.weight)?,
                bias: blob::write_f32_vector(
                    dir,
                    &format!("{name}.{i}.bias.f32"),
                    layer.bias.as_slice().expect("contiguous"),
                )?,
            });
        }
        entries.insert(
            name.to_string(),
            NetEntry {
                leaky_slope: net.leaky_slope(),
                head: net.head(),
                layers,
            },
        );
    }
    blob::write_json(
        &dir.join(CHECKPOINT_MANIFEST),
        &CheckpointManifest {
            nets: entries,
            meta,
        },
    )
}

pub fn load_nets(dir: &Path) -> Result<(BTreeMap<String, DenseNet>, serde_json::Value)> {
    let manifest: CheckpointManifest = blob::read_json(&dir.join(CHECKPOINT_MANIFEST))?;
    let mut out = BTreeMap::new();
    for (name, entry) in manifest.nets {
        let layers = entry
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                Ok(Layer {
                    weight: blob::read_matrix(dir, &l.weight, &format!("{name}.{i}.weight"))?,
                    bias: blob::read_f32_vector(dir, &l.bias, &format!("{name}.{i}.bias"))?.into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(name, DenseNet::from_layers(layers, entry.leaky_slope, entry.head)?);
    }
    Ok((out, manifest.meta))
}
