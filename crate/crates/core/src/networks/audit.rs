//! Compares constructed networks against their reference layer tables.

use tch::{Kind, Tensor};

use super::layers::{Activation, ConvLayer, LayerKind, Norm};
use super::{Discriminator, Encoder, Generator};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Conv,
    Residual,
    Transposed,
    Pool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stride {
    One,
    Two,
    Half,
    NotApplicable,
}

/// One row of a layer table. `out_divisor` is `h / output_height`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRow {
    pub op: Op,
    pub output: String,
    pub kernel: i64,
    pub in_channels: i64,
    pub out_channels: i64,
    pub stride: Stride,
    pub norm: Norm,
    pub activation: Activation,
    pub out_divisor: Option<i64>,
}

#[allow(clippy::too_many_arguments)]
fn row(
    op: Op,
    output: &str,
    kernel: i64,
    in_channels: i64,
    out_channels: i64,
    stride: Stride,
    norm: Norm,
    activation: Activation,
    out_divisor: Option<i64>,
) -> LayerRow {
    LayerRow {
        op,
        output: output.to_string(),
        kernel,
        in_channels,
        out_channels,
        stride,
        norm,
        activation,
        out_divisor,
    }
}

use Activation::{LeakyRelu, Tanh};
use Norm::SnIn;

/// Reference generator table for first-layer width `b`.
pub fn expected_generator(b: i64) -> Vec<LayerRow> {
    let mut rows = vec![row(Op::Conv, "c1", 4, 8, b, Stride::Two, Norm::None, LeakyRelu, Some(2))];
    let enc = [(b, 2 * b, 4), (2 * b, 4 * b, 8), (4 * b, 8 * b, 16), (8 * b, 8 * b, 32)];
    for (i, (cin, cout, d)) in enc.into_iter().enumerate() {
        rows.push(row(Op::Conv, &format!("c{}", i + 2), 4, cin, cout, Stride::Two, SnIn, LeakyRelu, Some(d)));
    }
    for (i, c) in [8 * b, 8 * b, 16 * b, 16 * b].into_iter().enumerate() {
        rows.push(row(
            Op::Residual,
            &format!("res{}", i + 1),
            3,
            c,
            c,
            Stride::One,
            Norm::None,
            Activation::None,
            Some(32),
        ));
    }
    let dec = [
        ("t1", 16 * b, 8 * b, 16, LeakyRelu),
        ("t2", 16 * b, 4 * b, 8, LeakyRelu),
        ("t3", 8 * b, 2 * b, 4, LeakyRelu),
        ("t4", 4 * b, b, 2, LeakyRelu),
        ("out_g", 2 * b, 4, 1, Tanh),
    ];
    for (name, cin, cout, d, act) in dec {
        rows.push(row(Op::Transposed, name, 4, cin, cout, Stride::Half, SnIn, act, Some(d)));
    }
    rows
}

pub fn expected_discriminator(b: i64) -> Vec<LayerRow> {
    vec![
        row(Op::Conv, "d1", 4, 8, b, Stride::Two, Norm::None, LeakyRelu, Some(2)),
        row(Op::Conv, "d2", 4, b, 2 * b, Stride::Two, SnIn, LeakyRelu, Some(4)),
        row(Op::Conv, "out_df", 4, 2 * b, 4 * b, Stride::Two, SnIn, LeakyRelu, Some(8)),
        row(Op::Conv, "out_d", 4, 4 * b, 1, Stride::One, SnIn, Activation::None, Some(16)),
    ]
}

pub fn expected_encoder(b: i64) -> Vec<LayerRow> {
    vec![
        row(Op::Conv, "e1", 7, 4, b, Stride::One, Norm::None, LeakyRelu, Some(1)),
        row(Op::Conv, "e2", 4, b, 2 * b, Stride::Two, SnIn, LeakyRelu, Some(2)),
        row(Op::Conv, "e3", 4, 2 * b, 4 * b, Stride::Two, SnIn, LeakyRelu, Some(4)),
        row(Op::Conv, "e4", 4, 4 * b, 8 * b, Stride::Two, SnIn, LeakyRelu, Some(8)),
        row(Op::Pool, "out_e", 0, 8 * b, 8 * b, Stride::NotApplicable, Norm::None, Activation::None, None),
    ]
}

fn conv_row(layer: &ConvLayer, out_divisor: i64) -> LayerRow {
    let s = &layer.spec;
    let stride = match (s.kind, s.stride) {
        (LayerKind::Transposed, _) => Stride::Half,
        (LayerKind::Conv, 1) => Stride::One,
        (LayerKind::Conv, _) => Stride::Two,
    };
    let op = match s.kind {
        LayerKind::Conv => Op::Conv,
        LayerKind::Transposed => Op::Transposed,
    };
    row(op, &s.name, s.kernel, s.in_channels, s.out_channels, stride, s.norm, s.activation, Some(out_divisor))
}

fn divisor(input: i64, shape: &[i64]) -> i64 {
    input / shape[2]
}

fn diff(expected: &[LayerRow], actual: &[LayerRow]) -> Vec<String> {
    let mut out = Vec::new();
    if expected.len() != actual.len() {
        out.push(format!("expected {} layers, found {}", expected.len(), actual.len()));
    }
    for (e, a) in expected.iter().zip(actual) {
        if e != a {
            out.push(format!("{}: expected {e:?}, found {a:?}", e.output));
        }
    }
    out
}

const AUDIT_SIZE: i64 = 64;

fn probe(kind: Kind) -> Tensor {
    Tensor::zeros([1, 4, AUDIT_SIZE, AUDIT_SIZE], (kind, tch::Device::Cpu))
}

/// Lists every difference between the generator and its reference table.
pub fn audit_generator(g: &Generator) -> Result<Vec<String>> {
    let mut trace = Vec::new();
    let x = probe(g.kind());
    let v = Tensor::zeros([1, g.latent_dim()], (g.kind(), tch::Device::Cpu));
    tch::no_grad(|| g.forward_traced(&x, &x, &v, Some(&mut trace)))?;
    let shape = |name: &str| {
        trace
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| divisor(AUDIT_SIZE, s))
            .unwrap_or(0)
    };
    let mut actual: Vec<LayerRow> = g.encoder.iter().map(|l| conv_row(l, shape(&l.spec.name))).collect();
    for block in &g.residual {
        let c = block.channels();
        let mut r = conv_row(&block.conv1, shape(&block.name));
        r.op = Op::Residual;
        r.output = block.name.clone();
        r.in_channels = c;
        r.out_channels = block.conv2.spec.out_channels;
        r.activation = Activation::None;
        if block.conv1.spec.norm != Norm::None || block.conv2.spec.norm != Norm::None {
            r.norm = block.conv1.spec.norm;
        }
        actual.push(r);
    }
    actual.extend(g.decoder.iter().map(|l| conv_row(l, shape(&l.spec.name))));
    Ok(diff(&expected_generator(g.config().base_channels), &actual))
}

pub fn audit_discriminator(d: &Discriminator) -> Result<Vec<String>> {
    let mut trace = Vec::new();
    let x = probe(d.kind());
    tch::no_grad(|| d.forward_traced(&x, &x, true, Some(&mut trace)))?;
    let actual: Vec<LayerRow> = d
        .layers
        .iter()
        .zip(&trace)
        .map(|(l, (_, s))| conv_row(l, divisor(AUDIT_SIZE, s)))
        .collect();
    Ok(diff(&expected_discriminator(d.config().base_channels), &actual))
}

pub fn audit_encoder(e: &Encoder) -> Result<Vec<String>> {
    let mut trace = Vec::new();
    let x = probe(e.kind());
    let _ = tch::no_grad(|| e.forward_traced(&x, Some(&mut trace)))?;
    let mut actual: Vec<LayerRow> = e
        .layers
        .iter()
        .zip(&trace)
        .map(|(l, (_, s))| conv_row(l, divisor(AUDIT_SIZE, s)))
        .collect();
    let pooled = trace.last().map(|(_, s)| s.clone()).unwrap_or_default();
    let width = e.layers.last().map(|l| l.spec.out_channels).unwrap_or(0);
    let pooled_ok = pooled == vec![1, width];
    actual.push(row(
        Op::Pool,
        "out_e",
        0,
        width,
        if pooled_ok { width } else { -1 },
        Stride::NotApplicable,
        Norm::None,
        Activation::None,
        None,
    ));
    Ok(diff(&expected_encoder(e.config().base_channels), &actual))
}
