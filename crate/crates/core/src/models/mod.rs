//! The multi-view architectures and their parameter bookkeeping.
//!
//! Parameter names are stable and hierarchical (`trunk.stage2.block1.conv1.f`),
//! which is what checkpoints and weight transfer key on.

mod config;
mod nets;
mod transfer;
mod trunk;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Dense};
use crate::params::{Ctx, ParamStore};
use crate::phc::{PhcConv, PhcSpec};
use crate::rng;
use crate::tensor::Scalar;

pub use config::{ModelConfig, PhResNetConfig, PhUNetConfig, PhyboNetConfig, PhyseNetConfig};
pub use nets::{DoubleConv, PhResNet, PhUNet, PhyboNet, PhyseNet};
pub use transfer::{transfer_weights, TransferMap};
pub use trunk::{Refiner, Trunk};

pub const TAPS: [&str; 2] = ["encoder", "classifier"];

#[derive(Clone, Debug)]
pub enum Net {
    PhResNet(PhResNet),
    PhyboNet(PhyboNet),
    PhyseNet(PhyseNet),
    PhUNet(PhUNet),
}

/// One parameterized layer, as enumerated for parameter accounting.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerInfo {
    Phc { name: String, spec: PhcSpec },
    BatchNorm { name: String, channels: usize },
    Dense { name: String, din: usize, dout: usize },
}

impl LayerInfo {
    pub fn name(&self) -> &str {
        match self {
            LayerInfo::Phc { name, .. } | LayerInfo::BatchNorm { name, .. } | LayerInfo::Dense { name, .. } => name,
        }
    }

    /// Trainable scalars by closed form.
    pub fn param_count(&self) -> usize {
        match self {
            LayerInfo::Phc { spec, .. } => spec.param_count(),
            LayerInfo::BatchNorm { channels, .. } => 2 * channels,
            LayerInfo::Dense { din, dout, .. } => din * dout + dout,
        }
    }
}

pub struct Output<'t, T: Scalar> {
    /// `(N, heads)` per head for classifiers; `(N, 1, H, W)` for PHUNet.
    pub logits: Vec<Var<'t, T>>,
    /// Intermediate feature maps named by [`TAPS`].
    pub taps: Vec<(&'static str, Var<'t, T>)>,
}

impl<'t, T: Scalar> Output<'t, T> {
    pub fn tap(&self, name: &str) -> Result<Var<'t, T>> {
        self.taps
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Contract(format!("unknown tap {name:?}; expected one of {TAPS:?}")))
    }
}

/// A built network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub net: Net,
}

impl<T: Scalar> Model<T> {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = rng::seeded(seed);
        let net = match config {
            ModelConfig::Phresnet(c) => Net::PhResNet(PhResNet::build(&mut store, c, &mut rng)?),
            ModelConfig::Phybonet(c) => Net::PhyboNet(PhyboNet::build(&mut store, c, &mut rng)?),
            ModelConfig::Physenet(c) => Net::PhyseNet(PhyseNet::build(&mut store, c, &mut rng)?),
            ModelConfig::Phunet(c) => Net::PhUNet(PhUNet::build(&mut store, c, &mut rng)?),
        };
        Ok(Model {
            config: config.clone(),
            store,
            net,
        })
    }

    pub fn forward<'t>(&'t self, tape: &'t Tape<T>, inputs: &[Var<'t, T>], train: bool) -> Result<Output<'t, T>> {
        let expected = self.config.inputs();
        if inputs.len() != expected {
            return Err(Error::shape(format!(
                "{} takes {expected} input tensors, got {}",
                self.config.arch(),
                inputs.len()
            )));
        }
        let ctx = Ctx::new(tape, &self.store, train);
        let f = match &self.net {
            Net::PhResNet(m) => m.forward(&ctx, inputs[0])?,
            Net::PhyboNet(m) => m.forward(&ctx, inputs[0], inputs[1])?,
            Net::PhyseNet(m) => m.forward(&ctx, inputs[0], inputs[1])?,
            Net::PhUNet(m) => m.forward(&ctx, inputs[0])?,
        };
        Ok(Output {
            logits: f.logits,
            taps: f.taps,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.trainable_count()
    }

    pub fn phc_layers(&self) -> Vec<&PhcConv> {
        let (convs, _, _) = self.parts();
        convs
    }

    /// Every parameterized layer in construction order.
    pub fn layers(&self) -> Vec<LayerInfo> {
        let (convs, bns, denses) = self.parts();
        let mut out: Vec<LayerInfo> = convs
            .into_iter()
            .map(|c| LayerInfo::Phc {
                name: c.name.clone(),
                spec: c.spec,
            })
            .collect();
        out.extend(bns.into_iter().map(|b| LayerInfo::BatchNorm {
            name: self
                .store
                .name(b.gamma)
                .trim_end_matches(".gamma")
                .to_string(),
            channels: b.channels,
        }));
        out.extend(denses.into_iter().map(|(name, d)| LayerInfo::Dense {
            name: name.to_string(),
            din: d.din,
            dout: d.dout,
        }));
        out
    }

    #[allow(clippy::type_complexity)]
    fn parts(&self) -> (Vec<&PhcConv>, Vec<&BatchNorm>, Vec<(&'static str, &Dense)>) {
        match &self.net {
            Net::PhResNet(m) => {
                let mut c = m.trunk.phc_layers();
                c.extend(m.refiner.phc_layers());
                let mut b = m.trunk.batch_norms();
                b.extend(m.refiner.batch_norms());
                (c, b, vec![("head", &m.head)])
            }
            Net::PhyboNet(m) => {
                let mut c = m.left_encoder.phc_layers();
                c.extend(m.right_encoder.phc_layers());
                c.extend(m.bottleneck.phc_layers());
                c.extend(m.refiner.phc_layers());
                let mut b = m.left_encoder.batch_norms();
                b.extend(m.right_encoder.batch_norms());
                b.extend(m.bottleneck.batch_norms());
                b.extend(m.refiner.batch_norms());
                (c, b, vec![("head_left", &m.head_left), ("head_right", &m.head_right)])
            }
            Net::PhyseNet(m) => {
                let mut c = m.encoder.phc_layers();
                c.extend(m.refiner_left.phc_layers());
                c.extend(m.refiner_right.phc_layers());
                let mut b = m.encoder.batch_norms();
                b.extend(m.refiner_left.batch_norms());
                b.extend(m.refiner_right.batch_norms());
                (c, b, vec![("head_left", &m.head_left), ("head_right", &m.head_right)])
            }
            Net::PhUNet(m) => (m.phc_layers(), m.batch_norms(), Vec::new()),
        }
    }
}
