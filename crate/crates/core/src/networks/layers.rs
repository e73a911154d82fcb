//! Convolution layers with spectral and instance normalization.
//!
//! Everything is composed from differentiable tensor primitives so that
//! gradients of gradients (needed by the critic penalty) are available.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;
use tch::{Kind, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const IN_EPS: f64 = 1e-5;
const SN_EPS: f64 = 1e-12;
/// Power iterations run once when a layer is created.
const SN_WARMUP_ITERS: usize = 15;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LayerKind {
    Conv,
    Transposed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Norm {
    None,
    /// Spectral normalization of the weight only.
    Sn,
    /// Spectral normalization followed by instance normalization.
    SnIn,
    /// Instance normalization only.
    In,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Activation {
    None,
    LeakyRelu,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: Tensor) -> Tensor {
        match self {
            Activation::None => x,
            Activation::LeakyRelu => leaky_relu(&x),
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
        }
    }
}

pub fn leaky_relu(x: &Tensor) -> Tensor {
    x.maximum(&(x * LEAKY_SLOPE))
}

/// Zero padding `(left, right, top, bottom)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Padding {
    pub left: i64,
    pub right: i64,
    pub top: i64,
    pub bottom: i64,
}

impl Padding {
    pub const fn same(p: i64) -> Self {
        Self {
            left: p,
            right: p,
            top: p,
            bottom: p,
        }
    }

    fn symmetric(&self) -> Option<i64> {
        (self.left == self.right && self.top == self.bottom && self.left == self.top)
            .then_some(self.left)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvSpec {
    pub name: String,
    pub kind: LayerKind,
    pub kernel: i64,
    pub in_channels: i64,
    pub out_channels: i64,
    pub stride: i64,
    pub padding: Padding,
    pub norm: Norm,
    pub activation: Activation,
}

impl ConvSpec {
    pub fn conv(name: &str, kernel: i64, in_c: i64, out_c: i64, stride: i64, pad: i64) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Conv,
            kernel,
            in_channels: in_c,
            out_channels: out_c,
            stride,
            padding: Padding::same(pad),
            norm: Norm::None,
            activation: Activation::LeakyRelu,
        }
    }

    pub fn transposed(name: &str, in_c: i64, out_c: i64) -> Self {
        Self {
            kind: LayerKind::Transposed,
            ..Self::conv(name, 4, in_c, out_c, 2, 1)
        }
    }

    pub fn norm(mut self, norm: Norm) -> Self {
        self.norm = norm;
        self
    }

    pub fn activation(mut self, act: Activation) -> Self {
        self.activation = act;
        self
    }

    pub fn padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn weight_shape(&self) -> [i64; 4] {
        let k = self.kernel;
        match self.kind {
            LayerKind::Conv => [self.out_channels, self.in_channels, k, k],
            LayerKind::Transposed => [self.in_channels, self.out_channels, k, k],
        }
    }

    pub fn parameter_count(&self) -> i64 {
        let w: i64 = self.weight_shape().iter().product();
        w + self.out_channels
    }
}

pub(crate) fn param(t: &Tensor, frozen: bool) -> Tensor {
    if frozen {
        t.detach()
    } else {
        t.shallow_clone()
    }
}

pub(crate) fn normal_tensor<R: Rng + ?Sized>(shape: &[i64], std: f64, kind: Kind, rng: &mut R) -> Tensor {
    let n: i64 = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("std is positive");
    let values: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::from_slice(&values).to_kind(kind).reshape(shape)
}

fn unit(v: &Tensor) -> Tensor {
    v / (v.norm() + SN_EPS)
}

/// Persisted power-iteration vectors of one weight.
#[derive(Debug)]
pub struct SpectralState {
    pub u: Tensor,
    pub v: Tensor,
    transposed: bool,
}

impl SpectralState {
    fn matrix(&self, weight: &Tensor) -> Tensor {
        let w = if self.transposed {
            weight.transpose(0, 1)
        } else {
            weight.shallow_clone()
        };
        let rows = w.size()[0];
        w.reshape([rows, -1])
    }

    fn new<R: Rng + ?Sized>(weight: &Tensor, transposed: bool, rng: &mut R) -> Self {
        let kind = weight.kind();
        let shape = weight.size();
        let (rows, cols) = if transposed {
            (shape[1], shape[0] * shape[2] * shape[3])
        } else {
            (shape[0], shape[1..].iter().product())
        };
        let draw = |n: i64, rng: &mut R| {
            let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
            unit(&Tensor::from_slice(&v).to_kind(kind))
        };
        let state = Self {
            u: draw(rows, rng),
            v: draw(cols, rng),
            transposed,
        };
        for _ in 0..SN_WARMUP_ITERS {
            state.power_iterate(weight);
        }
        state
    }

    /// One power-iteration step, in place.
    pub fn power_iterate(&self, weight: &Tensor) {
        tch::no_grad(|| {
            let w = self.matrix(&weight.detach());
            let v = unit(&w.transpose(0, 1).mv(&self.u));
            let u = unit(&w.mv(&v));
            self.v.shallow_clone().copy_(&v);
            self.u.shallow_clone().copy_(&u);
        });
    }

    /// Estimated largest singular value; differentiable in `weight`.
    pub fn sigma(&self, weight: &Tensor) -> Tensor {
        let w = self.matrix(weight);
        self.u.dot(&w.mv(&self.v))
    }

    pub fn normalize(&self, weight: &Tensor) -> Tensor {
        weight / self.sigma(weight).clamp_min(SN_EPS)
    }
}

/// Divides `weight` (viewed as `[dim0, rest]`) by its largest singular value,
/// estimated with `iterations` power steps that update `u` in place.
pub fn spectral_normalize(weight: &Tensor, u: &mut Tensor, iterations: usize) -> Tensor {
    let rows = weight.size()[0];
    let w = weight.reshape([rows, -1]);
    let mut v = Tensor::zeros([w.size()[1]], (weight.kind(), weight.device()));
    tch::no_grad(|| {
        for _ in 0..iterations.max(1) {
            v = unit(&w.transpose(0, 1).mv(u));
            *u = unit(&w.mv(&v));
        }
    });
    let sigma = u.dot(&w.mv(&v));
    weight / sigma.clamp_min(SN_EPS)
}

#[derive(Debug)]
pub struct InstanceNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl InstanceNorm {
    fn new(channels: i64, kind: Kind) -> Self {
        Self {
            gamma: Tensor::ones([channels], (kind, tch::Device::Cpu)).set_requires_grad(true),
            beta: Tensor::zeros([channels], (kind, tch::Device::Cpu)).set_requires_grad(true),
        }
    }

    pub fn forward(&self, x: &Tensor, frozen: bool) -> Tensor {
        let c = x.size()[1];
        let mean = x.mean_dim([2i64, 3].as_slice(), true, x.kind());
        let centered = x - mean;
        let var = (&centered * &centered).mean_dim([2i64, 3].as_slice(), true, x.kind());
        let normed = centered / (var + IN_EPS).sqrt();
        normed * param(&self.gamma, frozen).view([1, c, 1, 1]) + param(&self.beta, frozen).view([1, c, 1, 1])
    }
}

#[derive(Debug)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub weight: Tensor,
    pub bias: Tensor,
    pub spectral: Option<SpectralState>,
    pub instance_norm: Option<InstanceNorm>,
}

impl ConvLayer {
    pub fn new<R: Rng + ?Sized>(spec: ConvSpec, kind: Kind, rng: &mut R) -> Self {
        let weight = normal_tensor(&spec.weight_shape(), INIT_STD, kind, rng).set_requires_grad(true);
        let bias = Tensor::zeros([spec.out_channels], (kind, tch::Device::Cpu)).set_requires_grad(true);
        let spectral = matches!(spec.norm, Norm::Sn | Norm::SnIn)
            .then(|| SpectralState::new(&weight, spec.kind == LayerKind::Transposed, rng));
        let instance_norm = matches!(spec.norm, Norm::SnIn | Norm::In).then(|| InstanceNorm::new(spec.out_channels, kind));
        Self {
            spec,
            weight,
            bias,
            spectral,
            instance_norm,
        }
    }

    /// Sets weight, bias and instance-norm affine parameters to zero.
    pub fn zero_(&mut self) {
        tch::no_grad(|| {
            let _ = self.weight.zero_();
            let _ = self.bias.zero_();
            if let Some(n) = &mut self.instance_norm {
                let _ = n.gamma.zero_();
                let _ = n.beta.zero_();
            }
        });
    }

    pub fn effective_weight(&self, frozen: bool) -> Tensor {
        let w = param(&self.weight, frozen);
        match &self.spectral {
            Some(sn) => sn.normalize(&w),
            None => w,
        }
    }

    pub fn forward(&self, x: &Tensor, frozen: bool) -> Tensor {
        let w = self.effective_weight(frozen);
        let b = param(&self.bias, frozen);
        let s = self.spec.stride;
        let (x, p) = match self.spec.padding.symmetric() {
            Some(p) => (x.shallow_clone(), p),
            None => {
                let p = self.spec.padding;
                (x.constant_pad_nd([p.left, p.right, p.top, p.bottom]), 0)
            }
        };
        let y = match self.spec.kind {
            LayerKind::Conv => x.conv2d(&w, Some(&b), [s, s], [p, p], [1, 1], 1),
            LayerKind::Transposed => x.conv_transpose2d(&w, Some(&b), [s, s], [p, p], [0, 0], 1, [1, 1]),
        };
        let y = match &self.instance_norm {
            Some(n) => n.forward(&y, frozen),
            None => y,
        };
        self.spec.activation.apply(y)
    }

    pub fn power_iterate(&self) {
        if let Some(sn) = &self.spectral {
            sn.power_iterate(&self.weight);
        }
    }

    pub fn named_params(&self, out: &mut Vec<(String, Tensor)>) {
        let n = &self.spec.name;
        out.push((format!("{n}.weight"), self.weight.shallow_clone()));
        out.push((format!("{n}.bias"), self.bias.shallow_clone()));
        if let Some(norm) = &self.instance_norm {
            out.push((format!("{n}.in.gamma"), norm.gamma.shallow_clone()));
            out.push((format!("{n}.in.beta"), norm.beta.shallow_clone()));
        }
    }

    pub fn named_buffers(&self, out: &mut Vec<(String, Tensor)>) {
        if let Some(sn) = &self.spectral {
            let n = &self.spec.name;
            out.push((format!("{n}.sn.u"), sn.u.shallow_clone()));
            out.push((format!("{n}.sn.v"), sn.v.shallow_clone()));
        }
    }
}

/// Two 3x3 convolutions with a LeakyReLU between them and an identity skip.
#[derive(Debug)]
pub struct ResidualBlock {
    pub name: String,
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(name: &str, channels: i64, kind: Kind, rng: &mut R) -> Self {
        let conv1 = ConvLayer::new(ConvSpec::conv(&format!("{name}.conv1"), 3, channels, channels, 1, 1), kind, rng);
        let conv2 = ConvLayer::new(
            ConvSpec::conv(&format!("{name}.conv2"), 3, channels, channels, 1, 1).activation(Activation::None),
            kind,
            rng,
        );
        Self {
            name: name.to_string(),
            conv1,
            conv2,
        }
    }

    pub fn channels(&self) -> i64 {
        self.conv1.spec.in_channels
    }

    pub fn forward(&self, x: &Tensor, frozen: bool) -> Tensor {
        x + self.conv2.forward(&self.conv1.forward(x, frozen), frozen)
    }

    pub fn named_params(&self, out: &mut Vec<(String, Tensor)>) {
        self.conv1.named_params(out);
        self.conv2.named_params(out);
    }
}
