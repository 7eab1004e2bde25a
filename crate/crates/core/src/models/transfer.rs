use super::{Model, ModelConfig};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Which tensors of a source checkpoint initialize which target tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferMap {
    /// `trunk.*` to the same names; refiners and head stay fresh.
    PatchToWhole,
    /// `trunk.*` into the shared PHYSEnet encoder, or the first two stages
    /// of `trunk.*` into both PHYBOnet encoders.
    TwoViewToFourView,
}

impl TransferMap {
    /// The map implied by the target architecture.
    pub fn infer(target: &ModelConfig) -> TransferMap {
        match target {
            ModelConfig::Phybonet(_) | ModelConfig::Physenet(_) => TransferMap::TwoViewToFourView,
            _ => TransferMap::PatchToWhole,
        }
    }

    fn targets(self, target: &ModelConfig, name: &str) -> Vec<String> {
        let Some(rest) = name.strip_prefix("trunk.") else {
            return Vec::new();
        };
        match (self, target) {
            (TransferMap::PatchToWhole, _) => vec![name.to_string()],
            (TransferMap::TwoViewToFourView, ModelConfig::Physenet(_)) => vec![format!("encoder.{rest}")],
            (TransferMap::TwoViewToFourView, ModelConfig::Phybonet(_)) => {
                if ["stem.", "stage1.", "stage2."].iter().any(|p| rest.starts_with(p)) {
                    vec![format!("left_encoder.{rest}"), format!("right_encoder.{rest}")]
                } else {
                    Vec::new()
                }
            }
            _ => Vec::new(),
        }
    }
}

/// Copies mapped tensors from `source` into `target` and returns how many
/// target tensors were written. Nothing is written unless every mapped
/// tensor exists in the target with the same shape.
pub fn transfer_weights<T: Scalar>(source: &Checkpoint<T>, target: &mut Model<T>, map: TransferMap) -> Result<usize> {
    if !matches!(source.config, ModelConfig::Phresnet(_)) {
        return Err(Error::config(format!(
            "weights can only be transferred from a phresnet checkpoint, got {}",
            source.config.arch()
        )));
    }
    if map == TransferMap::TwoViewToFourView
        && !matches!(target.config, ModelConfig::Phybonet(_) | ModelConfig::Physenet(_))
    {
        return Err(Error::config("two-view to four-view transfer needs a phybonet or physenet target"));
    }
    let mut writes = Vec::new();
    let mut bad = Vec::new();
    for (name, tensor) in &source.tensors {
        for dst in map.targets(&target.config, name) {
            match target.store.lookup(&dst) {
                Some(id) if target.store.get(id).shape() == tensor.shape() => writes.push((id, tensor)),
                Some(id) => bad.push((dst.clone(), format!("{dst}: {:?} vs {:?}", tensor.shape(), target.store.get(id).shape()))),
                None => bad.push((dst.clone(), format!("{dst}: missing from target"))),
            }
        }
    }
    if !bad.is_empty() {
        bad.sort();
        let (names, details): (Vec<String>, Vec<String>) = bad.into_iter().unzip();
        return Err(Error::Transfer {
            names,
            detail: details.join("; "),
        });
    }
    if writes.is_empty() {
        return Err(Error::Transfer {
            names: Vec::new(),
            detail: "no source tensor maps onto the target".into(),
        });
    }
    for (id, t) in &writes {
        target.store.set(*id, (*t).clone())?;
    }
    Ok(writes.len())
}
