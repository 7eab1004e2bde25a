use serde::{Deserialize, Serialize};

use super::BatchNorm;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{Ctx, ParamStore};
use crate::phc::{AlgebraInit, PhcConv, PhcSpec};
use crate::rng::Rng;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    /// Two 3×3 convolutions.
    #[default]
    Basic,
    /// 1×1 → 3×3 → 1×1 with a narrower middle.
    Bottleneck,
}

/// `y = ReLU(F(x) + skip(x))`; the skip is a 1×1 PHC projection with batch
/// norm exactly when the stride or the channel count changes.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub kind: BlockKind,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub convs: Vec<(PhcConv, BatchNorm)>,
    pub projection: Option<(PhcConv, BatchNorm)>,
}

impl ResidualBlock {
    /// Middle width of a bottleneck block: a quarter of the output, rounded
    /// up to a multiple of `n`.
    pub fn bottleneck_width(n: usize, cout: usize) -> usize {
        (cout / 4).div_ceil(n).max(1) * n
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: BlockKind,
        n: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        scheme: AlgebraInit,
        rng: &mut Rng,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::config("block stride must be positive"));
        }
        let specs = match kind {
            BlockKind::Basic => vec![
                PhcSpec::new(n, cin, cout, 3).stride(stride),
                PhcSpec::new(n, cout, cout, 3),
            ],
            BlockKind::Bottleneck => {
                let mid = Self::bottleneck_width(n, cout);
                vec![
                    PhcSpec::new(n, cin, mid, 1),
                    PhcSpec::new(n, mid, mid, 3).stride(stride),
                    PhcSpec::new(n, mid, cout, 1),
                ]
            }
        };
        let mut convs = Vec::with_capacity(specs.len());
        for (i, spec) in specs.into_iter().enumerate() {
            let conv = PhcConv::new(store, &format!("{name}.conv{}", i + 1), spec, scheme, rng)?;
            let bn = BatchNorm::new(store, &format!("{name}.bn{}", i + 1), spec.cout)?;
            convs.push((conv, bn));
        }
        let projection = if stride > 1 || cin != cout {
            let spec = PhcSpec::new(n, cin, cout, 1).stride(stride);
            let conv = PhcConv::new(store, &format!("{name}.proj"), spec, scheme, rng)?;
            let bn = BatchNorm::new(store, &format!("{name}.proj_bn"), cout)?;
            Some((conv, bn))
        } else {
            None
        };
        Ok(ResidualBlock {
            kind,
            cin,
            cout,
            stride,
            convs,
            projection,
        })
    }

    pub fn phc_layers(&self) -> impl Iterator<Item = &PhcConv> {
        self.convs.iter().chain(&self.projection).map(|(c, _)| c)
    }

    pub fn batch_norms(&self) -> impl Iterator<Item = &BatchNorm> {
        self.convs.iter().chain(&self.projection).map(|(_, b)| b)
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut h = x;
        let last = self.convs.len() - 1;
        for (i, (conv, bn)) in self.convs.iter().enumerate() {
            h = bn.forward(ctx, conv.forward(ctx, h)?)?;
            if i < last {
                h = h.relu()?;
            }
        }
        let skip = match &self.projection {
            Some((conv, bn)) => bn.forward(ctx, conv.forward(ctx, x)?)?,
            None => x,
        };
        h.add(skip)?.relu()
    }
}
