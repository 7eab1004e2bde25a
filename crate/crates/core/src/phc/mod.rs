//! Parameterized hypercomplex convolution (PHC) and multiplication (PHM)
//! layers. The weight is `W = Σₖ kron(A[k], F[k])` with `A: (n,n,n)` and
//! `n` filter banks `F[k]`, so a layer stores roughly `1/n` of the weights
//! of its real-valued counterpart.

mod algebra;

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{Ctx, ParamId, ParamKind, ParamStore};
use crate::rng::{self, Rng};
use crate::tensor::{self, ConvGeometry, Scalar, Tensor};

pub use algebra::{fixed_algebra, hamilton_conv, hamilton_weight, QuaternionAlgebra};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgebraInit {
    /// Canonical sign matrices; only for `n ∈ {1, 2, 4}`.
    #[default]
    Fixed,
    /// Entries uniform in `[−1/n, 1/n]`.
    Random,
}

/// Geometry of a PHC layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhcSpec {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl PhcSpec {
    /// Square `k×k`, stride 1, "same" padding, no bias.
    pub fn new(n: usize, cin: usize, cout: usize, k: usize) -> Self {
        PhcSpec {
            n,
            cin,
            cout,
            kernel: (k, k),
            stride: 1,
            padding: k / 2,
            bias: false,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        divisibility(self.n, self.cin, self.cout, "channels")?;
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride == 0 {
            return Err(Error::config("kernel extents and stride must be positive"));
        }
        Ok(())
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry::new(self.stride, self.padding)
    }

    pub fn filter_shape(&self) -> [usize; 5] {
        let (kh, kw) = self.kernel;
        [self.n, self.cout / self.n, self.cin / self.n, kh, kw]
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.cout, self.cin, self.kernel.0, self.kernel.1]
    }

    /// Weights of the equivalent real-valued convolution, without bias.
    pub fn real_weight_count(&self) -> usize {
        self.weight_shape().iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.n.pow(3) + self.real_weight_count() / self.n + if self.bias { self.cout } else { 0 }
    }

    pub fn param_ratio(&self) -> f64 {
        self.param_count() as f64 / self.real_weight_count() as f64
    }
}

/// Geometry of a PHM (fully connected) layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhmSpec {
    pub n: usize,
    pub din: usize,
    pub dout: usize,
    pub bias: bool,
}

impl PhmSpec {
    pub fn validate(&self) -> Result<()> {
        divisibility(self.n, self.din, self.dout, "features")
    }

    pub fn filter_shape(&self) -> [usize; 3] {
        [self.n, self.dout / self.n, self.din / self.n]
    }

    pub fn param_count(&self) -> usize {
        self.n.pow(3) + self.din * self.dout / self.n + if self.bias { self.dout } else { 0 }
    }

    pub fn param_ratio(&self) -> f64 {
        self.param_count() as f64 / (self.din * self.dout) as f64
    }
}

fn divisibility(n: usize, a: usize, b: usize, what: &str) -> Result<()> {
    if n == 0 {
        return Err(Error::config("hypercomplex order n must be positive"));
    }
    if a == 0 || b == 0 || a % n != 0 || b % n != 0 {
        return Err(Error::config(format!(
            "{what} {a}→{b} are not divisible by n={n}"
        )));
    }
    Ok(())
}

fn init_algebra<T: Scalar>(n: usize, scheme: AlgebraInit, rng: &mut Rng) -> Result<Tensor<T>> {
    match scheme {
        AlgebraInit::Fixed => fixed_algebra(n),
        AlgebraInit::Random => {
            let r = 1.0 / n as f64;
            Ok(Tensor::rand_uniform(&[n, n, n], -r, r, rng))
        }
    }
}

fn kaiming_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

/// A PHC layer as plain tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct PhcLayer<T> {
    pub spec: PhcSpec,
    pub a: Tensor<T>,
    pub f: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> PhcLayer<T> {
    pub fn new(spec: PhcSpec, a: Tensor<T>, f: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        spec.validate()?;
        let n = spec.n;
        if a.shape() != [n, n, n] || f.shape() != spec.filter_shape() {
            return Err(Error::shape(format!(
                "PHC tensors A{:?} F{:?} do not match {spec:?}",
                a.shape(),
                f.shape()
            )));
        }
        if bias.as_ref().map(|b| b.shape() != [spec.cout]).unwrap_or(spec.bias) {
            return Err(Error::shape("PHC bias does not match spec"));
        }
        Ok(PhcLayer { spec, a, f, bias })
    }

    /// Kaiming-uniform filters (fan-in `Cin·Kh·Kw`), zero bias.
    pub fn init(spec: PhcSpec, seed: u64, scheme: AlgebraInit) -> Result<Self> {
        Self::init_with(spec, &mut rng::seeded(seed), scheme)
    }

    pub fn init_with(spec: PhcSpec, rng: &mut Rng, scheme: AlgebraInit) -> Result<Self> {
        spec.validate()?;
        let a = init_algebra(spec.n, scheme, rng)?;
        let fan_in = spec.cin * spec.kernel.0 * spec.kernel.1;
        let f = kaiming_uniform(&spec.filter_shape(), fan_in, rng);
        let bias = spec.bias.then(|| Tensor::zeros(&[spec.cout]));
        Ok(PhcLayer { spec, a, f, bias })
    }

    pub fn build_weight(&self) -> Result<Tensor<T>> {
        crate::autograd::kron_sum_forward(&self.a, &self.f)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        tensor::conv2d(x, &self.build_weight()?, self.bias.as_ref(), self.spec.geometry())
    }

    pub fn param_count(&self) -> usize {
        self.a.len() + self.f.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }

    pub fn param_ratio(&self) -> f64 {
        self.param_count() as f64 / self.spec.real_weight_count() as f64
    }
}

/// A PHM layer as plain tensors; `W: (Dout, Din)`, `y = x·Wᵀ + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhmLayer<T> {
    pub spec: PhmSpec,
    pub a: Tensor<T>,
    pub f: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> PhmLayer<T> {
    pub fn new(spec: PhmSpec, a: Tensor<T>, f: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        spec.validate()?;
        let n = spec.n;
        if a.shape() != [n, n, n] || f.shape() != spec.filter_shape() {
            return Err(Error::shape(format!(
                "PHM tensors A{:?} F{:?} do not match {spec:?}",
                a.shape(),
                f.shape()
            )));
        }
        if bias.as_ref().map(|b| b.shape() != [spec.dout]).unwrap_or(spec.bias) {
            return Err(Error::shape("PHM bias does not match spec"));
        }
        Ok(PhmLayer { spec, a, f, bias })
    }

    pub fn init_with(spec: PhmSpec, rng: &mut Rng, scheme: AlgebraInit) -> Result<Self> {
        spec.validate()?;
        let a = init_algebra(spec.n, scheme, rng)?;
        let f = kaiming_uniform(&spec.filter_shape(), spec.din, rng);
        let bias = spec.bias.then(|| Tensor::zeros(&[spec.dout]));
        Ok(PhmLayer { spec, a, f, bias })
    }

    pub fn build_weight(&self) -> Result<Tensor<T>> {
        crate::autograd::kron_sum_forward(&self.a, &self.f)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = x.matmul(&self.build_weight()?.transpose2d()?)?;
        if let Some(b) = &self.bias {
            let d = self.spec.dout;
            for row in y.data_mut().chunks_mut(d) {
                row.iter_mut().zip(b.data()).for_each(|(v, &bv)| *v = *v + bv);
            }
        }
        Ok(y)
    }

    pub fn param_count(&self) -> usize {
        self.a.len() + self.f.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }
}

/// PHC convolution whose tensors live in a [`ParamStore`] as
/// `{name}.a`, `{name}.f` and optionally `{name}.bias`.
#[derive(Clone, Debug)]
pub struct PhcConv {
    pub spec: PhcSpec,
    pub name: String,
    pub a: ParamId,
    pub f: ParamId,
    pub bias: Option<ParamId>,
}

impl PhcConv {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: PhcSpec,
        scheme: AlgebraInit,
        rng: &mut Rng,
    ) -> Result<Self> {
        Self::register(store, name, PhcLayer::init_with(spec, rng, scheme)?)
    }

    pub fn register<T: Scalar>(store: &mut ParamStore<T>, name: &str, layer: PhcLayer<T>) -> Result<Self> {
        let a = store.insert(&format!("{name}.a"), layer.a, ParamKind::Trainable)?;
        let f = store.insert(&format!("{name}.f"), layer.f, ParamKind::Trainable)?;
        let bias = match layer.bias {
            Some(b) => Some(store.insert(&format!("{name}.bias"), b, ParamKind::Trainable)?),
            None => None,
        };
        Ok(PhcConv {
            spec: layer.spec,
            name: name.to_string(),
            a,
            f,
            bias,
        })
    }

    pub fn weight<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
        ctx.param(self.a).kron_sum(ctx.param(self.f))
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = x.conv2d(self.weight(ctx)?, self.spec.geometry())?;
        match self.bias {
            Some(b) => y.add_channel_bias(ctx.param(b)),
            None => Ok(y),
        }
    }
}

/// Store-backed PHM layer, named like [`PhcConv`].
#[derive(Clone, Debug)]
pub struct PhmLinear {
    pub spec: PhmSpec,
    pub name: String,
    pub a: ParamId,
    pub f: ParamId,
    pub bias: Option<ParamId>,
}

impl PhmLinear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: PhmSpec,
        scheme: AlgebraInit,
        rng: &mut Rng,
    ) -> Result<Self> {
        let layer = PhmLayer::init_with(spec, rng, scheme)?;
        let a = store.insert(&format!("{name}.a"), layer.a, ParamKind::Trainable)?;
        let f = store.insert(&format!("{name}.f"), layer.f, ParamKind::Trainable)?;
        let bias = match layer.bias {
            Some(b) => Some(store.insert(&format!("{name}.bias"), b, ParamKind::Trainable)?),
            None => None,
        };
        Ok(PhmLinear {
            spec,
            name: name.to_string(),
            a,
            f,
            bias,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let w = ctx.param(self.a).kron_sum(ctx.param(self.f))?;
        let y = x.matmul_bt(w)?;
        match self.bias {
            Some(b) => y.add_channel_bias(ctx.param(b)),
            None => Ok(y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n1_weight_is_the_filter() {
        let mut rng = rng::seeded(1);
        let spec = PhcSpec::new(1, 3, 5, 3);
        let f = Tensor::<f64>::randn(&spec.filter_shape(), &mut rng);
        let layer = PhcLayer::new(spec, Tensor::ones(&[1, 1, 1]), f.clone(), None).unwrap();
        assert_eq!(layer.build_weight().unwrap().data(), f.data());
        assert_eq!(layer.build_weight().unwrap().shape(), &[5, 3, 3, 3]);
    }

    #[test]
    fn n2_scalar_filters_form_a_complex_multiplication() {
        let spec = PhcSpec::new(2, 2, 2, 1);
        let a = fixed_algebra::<f64>(2).unwrap();
        let f = Tensor::from_f64(&[2, 1, 1, 1, 1], &[2.0, 3.0]).unwrap();
        let w = PhcLayer::new(spec, a, f, None).unwrap().build_weight().unwrap();
        assert_eq!(w.shape(), &[2, 2, 1, 1]);
        assert_eq!(w.data(), &[2.0, -3.0, 3.0, 2.0]);
    }

    #[test]
    fn n4_matches_hamilton_blocks() {
        let mut rng = rng::seeded(2);
        let spec = PhcSpec::new(4, 8, 12, 3);
        let layer = PhcLayer::<f64>::init_with(spec, &mut rng, AlgebraInit::Fixed).unwrap();
        let comps: Vec<Tensor<f64>> = (0..4).map(|k| layer.f.index0(k).unwrap()).collect();
        let oracle = hamilton_weight([&comps[0], &comps[1], &comps[2], &comps[3]]).unwrap();
        assert_eq!(layer.build_weight().unwrap(), oracle);
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut rng = rng::seeded(3);
        let spec = PhcSpec::new(2, 4, 6, 3).with_bias(true);
        let mut layer = PhcLayer::<f32>::init_with(spec, &mut rng, AlgebraInit::Fixed).unwrap();
        layer.bias = Some(Tensor::rand_uniform(&[6], -1.0, 1.0, &mut rng));
        let y = layer.forward(&Tensor::zeros(&[2, 4, 5, 5])).unwrap();
        let b = layer.bias.as_ref().unwrap().data();
        for (i, &v) in y.data().iter().enumerate() {
            assert_eq!(v, b[(i / 25) % 6]);
        }
        layer.bias = None;
        layer.spec.bias = false;
        assert_eq!(layer.forward(&Tensor::zeros(&[1, 4, 3, 3])).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn parameter_counts() {
        let s2 = PhcSpec::new(2, 64, 64, 3);
        assert_eq!(s2.param_count(), 18440);
        assert_eq!(s2.real_weight_count(), 36864);
        assert!((s2.param_ratio() - 0.50022).abs() < 1e-5);
        let s4 = PhcSpec::new(4, 64, 64, 3);
        assert_eq!(s4.param_count(), 9280);
        assert!((s4.param_ratio() - 0.2517).abs() < 1e-4);
        let s1 = PhcSpec::new(1, 64, 64, 3);
        assert_eq!(s1.param_ratio(), 1.0 + 1.0 / 36864.0);
        let layer = PhcLayer::<f32>::init(s4.with_bias(true), 0, AlgebraInit::Fixed).unwrap();
        assert_eq!(layer.param_count(), 9280 + 64);
    }

    #[test]
    fn divisibility_is_a_config_error() {
        assert!(matches!(PhcSpec::new(2, 3, 4, 3).validate(), Err(Error::Config(_))));
        assert!(matches!(
            PhcLayer::<f32>::init(PhcSpec::new(4, 8, 6, 1), 0, AlgebraInit::Random),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn init_schemes() {
        let l = PhcLayer::<f64>::init(PhcSpec::new(4, 8, 8, 3), 7, AlgebraInit::Fixed).unwrap();
        assert_eq!(l.a, QuaternionAlgebra::tensor());
        let l1 = PhcLayer::<f64>::init(PhcSpec::new(1, 8, 8, 3), 7, AlgebraInit::Fixed).unwrap();
        assert_eq!(l1.a.data(), &[1.0]);
        assert!(PhcLayer::<f64>::init(PhcSpec::new(3, 6, 6, 3), 7, AlgebraInit::Fixed).is_err());
        let r = PhcLayer::<f64>::init(PhcSpec::new(3, 6, 6, 3), 7, AlgebraInit::Random).unwrap();
        assert!(r.a.data().iter().all(|v| v.abs() <= 1.0 / 3.0));
        let bound = (6.0f64 / (8.0 * 9.0)).sqrt();
        assert!(l.f.data().iter().all(|v| v.abs() <= bound));
        let again = PhcLayer::<f64>::init(PhcSpec::new(4, 8, 8, 3), 7, AlgebraInit::Fixed).unwrap();
        assert_eq!(l, again);
    }

    #[test]
    fn phm_scalar_example() {
        let spec = PhmSpec {
            n: 2,
            din: 2,
            dout: 2,
            bias: false,
        };
        let f = Tensor::<f64>::from_f64(&[2, 1, 1], &[2.0, 3.0]).unwrap();
        let layer = PhmLayer::new(spec, fixed_algebra(2).unwrap(), f, None).unwrap();
        let y = layer.forward(&Tensor::from_f64(&[1, 2], &[1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0]);
    }

    #[test]
    fn phm_n1_is_dense_and_zero_input_gives_bias() {
        let mut rng = rng::seeded(4);
        let spec = PhmSpec {
            n: 1,
            din: 5,
            dout: 3,
            bias: true,
        };
        let mut layer = PhmLayer::<f64>::init_with(spec, &mut rng, AlgebraInit::Fixed).unwrap();
        layer.bias = Some(Tensor::randn(&[3], &mut rng));
        let x = Tensor::randn(&[4, 5], &mut rng);
        let w = layer.f.reshape(&[3, 5]).unwrap();
        let mut expect = x.matmul(&w.transpose2d().unwrap()).unwrap();
        for row in expect.data_mut().chunks_mut(3) {
            for (v, b) in row.iter_mut().zip(layer.bias.as_ref().unwrap().data()) {
                *v += b;
            }
        }
        assert!(layer.forward(&x).unwrap().max_abs_diff(&expect).unwrap() < 1e-12);
        let z = layer.forward(&Tensor::zeros(&[2, 5])).unwrap();
        assert_eq!(&z.data()[..3], layer.bias.as_ref().unwrap().data());
        assert_eq!(spec.param_count(), 1 + 15 + 3);
    }
}
