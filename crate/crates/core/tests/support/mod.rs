//! Test oracles shared by the integration suites: central finite
//! differences, and an f64 re-implementation of the depth network that
//! keeps rounding noise far below the finite-difference step.

#![allow(dead_code)]

use depthgrad_core::tape::{NodeId, Tape, UnaryKind};
use depthgrad_core::{DepthNet, ForwardOptions, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DENOM_FLOOR: f64 = 1e-3;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(DENOM_FLOOR)
}

pub fn uniform(shape: &[usize], lo: f32, hi: f32, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Max relative error of the tape gradient of `sum(r * build(inputs))`
/// against central differences of `reference`, an f64 implementation of
/// the same function, over every input entry.
pub fn check_op<F, R>(inputs: &[Tensor], build: F, reference: R, eps: f64, seed: u64) -> f64
where
    F: Fn(&mut Tape, &[NodeId]) -> NodeId,
    R: Fn(&[Vec<f64>]) -> Vec<f64>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|v| tape.leaf(v.clone(), true).unwrap()).collect();
    let out = build(&mut tape, &ids);
    let r = uniform(tape.value(out).unwrap().shape(), -1.0, 1.0, seed);
    let rn = tape.constant(r.clone()).unwrap();
    let weighted = tape.mul(out, rn).unwrap();
    let loss = tape.sum(weighted).unwrap();
    let grads = tape.backward(loss).unwrap();

    let r64: Vec<f64> = r.data().iter().map(|&v| v as f64).collect();
    let mut values: Vec<Vec<f64>> = inputs.iter().map(|t| t.data().iter().map(|&v| v as f64).collect()).collect();
    let reference_out = reference(&values);
    let tape_out = tape.value(out).unwrap().data();
    assert_eq!(reference_out.len(), tape_out.len(), "reference output size");
    for (a, b) in tape_out.iter().zip(&reference_out) {
        assert!((*a as f64 - b).abs() <= 1e-4 * b.abs().max(1.0), "reference disagrees: {a} vs {b}");
    }

    let mut worst = 0.0f64;
    for (k, &id) in ids.iter().enumerate() {
        let analytic = grads.grad_of(id).unwrap();
        for i in 0..values[k].len() {
            let base = values[k][i];
            let mut eval = |v: f64| {
                values[k][i] = v;
                reference(&values).iter().zip(&r64).map(|(o, r)| o * r).sum::<f64>()
            };
            let numeric = (eval(base + eps) - eval(base - eps)) / (2.0 * eps);
            values[k][i] = base;
            worst = worst.max(rel_err(analytic.data()[i] as f64, numeric));
        }
    }
    worst
}

/// Dense `c × h × w` map in f64.
#[derive(Clone, Debug)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

pub fn conv(x: &Map, weight: &[f64], bias: &[f64], c_out: usize, k: usize, stride: usize) -> Map {
    let pad = (k - 1) / 2;
    let (oh, ow) = (x.h.div_ceil(stride), x.w.div_ceil(stride));
    let n = oh * ow;
    let mut out: Vec<f64> = (0..c_out * n).map(|i| bias[i / n]).collect();
    let mut shifted = vec![0.0; n];
    for ci in 0..x.c {
        let input = &x.data[ci * x.h * x.w..(ci + 1) * x.h * x.w];
        for ky in 0..k {
            for kx in 0..k {
                // Input samples seen by tap (ky, kx) at every output pixel.
                for oy in 0..oh {
                    for ox in 0..ow {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        let inside = iy >= 0 && ix >= 0 && iy < x.h as isize && ix < x.w as isize;
                        shifted[oy * ow + ox] = if inside { input[iy as usize * x.w + ix as usize] } else { 0.0 };
                    }
                }
                for co in 0..c_out {
                    let wv = weight[((co * x.c + ci) * k + ky) * k + kx];
                    for (o, &v) in out[co * n..(co + 1) * n].iter_mut().zip(&shifted) {
                        *o += wv * v;
                    }
                }
            }
        }
    }
    Map { c: c_out, h: oh, w: ow, data: out }
}

pub fn elu(mut m: Map) -> Map {
    m.data.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = v.exp() - 1.0
        }
    });
    m
}

fn up2_concat(a: &Map, skip: &Map) -> Map {
    let (h, w) = (a.h * 2, a.w * 2);
    assert_eq!((h, w), (skip.h, skip.w));
    let mut data = Vec::with_capacity((a.c + skip.c) * h * w);
    for c in 0..a.c {
        for y in 0..h {
            for x in 0..w {
                data.push(a.data[(c * a.h + y / 2) * a.w + x / 2]);
            }
        }
    }
    data.extend_from_slice(&skip.data);
    Map { c: a.c + skip.c, h, w, data }
}

/// Depth map of a network with parameters `params` (weight then bias per
/// layer, as f64) on image `x`.
pub fn reference_depth(net: &DepthNet, params: &[Vec<f64>], x: &Map) -> Vec<f64> {
    let specs = net.config().layer_specs();
    let layer = |i: usize, m: &Map| {
        let s = &specs[i];
        conv(m, &params[2 * i], &params[2 * i + 1], s.out_channels, s.kernel, s.stride)
    };
    let mut skips = Vec::new();
    let mut h = x.clone();
    for i in 0..4 {
        h = elu(layer(i, &h));
        skips.push(h.clone());
    }
    for l in 1..=6 {
        h = elu(layer(3 + l, &h));
        h = match l {
            1 => up2_concat(&h, &skips[2]),
            3 => up2_concat(&h, &skips[1]),
            5 => up2_concat(&h, &skips[0]),
            _ => h,
        };
    }
    let head = layer(10, &h);
    let cfg = net.config();
    let (lo, hi) = (cfg.depth_min as f64, cfg.depth_max as f64);
    head.data[..head.h * head.w]
        .iter()
        .map(|&z| lo + (hi - lo) / (1.0 + (-z).exp()))
        .collect()
}

pub fn to_map(t: &Tensor) -> Map {
    let s = t.shape();
    Map { c: s[0], h: s[1], w: s[2], data: t.data().iter().map(|&v| v as f64).collect() }
}

#[derive(Debug, Default)]
pub struct NetReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Largest deviation between the f32 network and the f64 reference.
    pub forward_gap: f64,
}

/// Compares tape gradients of `sum(r * depth)` for `net` against central
/// differences of the f64 reference, on `per_tensor` random entries of
/// every parameter tensor and of the input image.
pub fn check_network(net: &DepthNet, x: &Tensor, eps: f64, per_tensor: usize, seed: u64) -> NetReport {
    let opts = ForwardOptions { input_requires_grad: true, ..ForwardOptions::training() };
    let mut pred = net.forward(x, &opts).unwrap();
    let r = uniform(pred.depth_map().shape(), -1.0, 1.0, seed);
    let rn = pred.tape.constant(r.clone()).unwrap();
    let weighted = pred.tape.mul(pred.depth, rn).unwrap();
    let loss = pred.tape.sum(weighted).unwrap();
    let grads = pred.tape.backward(loss).unwrap();

    let r64: Vec<f64> = r.data().iter().map(|&v| v as f64).collect();
    let mut params: Vec<Vec<f64>> =
        net.parameters().map(|p| p.data().iter().map(|&v| v as f64).collect()).collect();
    let mut image = to_map(x);
    let loss_of = |params: &[Vec<f64>], image: &Map| -> f64 {
        reference_depth(net, params, image).iter().zip(&r64).map(|(d, r)| d * r).sum()
    };

    let mut report = NetReport::default();
    let reference = reference_depth(net, &params, &image);
    for (a, b) in pred.depth_map().data().iter().zip(&reference) {
        report.forward_gap = report.forward_gap.max((*a as f64 - b).abs());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let leaves: Vec<NodeId> = pred.params.iter().flat_map(|&(w, b)| [w, b]).collect();
    for (k, &id) in leaves.iter().enumerate() {
        let analytic = grads.grad_of(id).unwrap();
        let n = params[k].len();
        for i in rand::seq::index::sample(&mut rng, n, per_tensor.min(n)) {
            let base = params[k][i];
            params[k][i] = base + eps;
            let plus = loss_of(&params, &image);
            params[k][i] = base - eps;
            let minus = loss_of(&params, &image);
            params[k][i] = base;
            let numeric = (plus - minus) / (2.0 * eps);
            report.max_rel_error = report.max_rel_error.max(rel_err(analytic.data()[i] as f64, numeric));
            report.checked += 1;
        }
    }
    let analytic = grads.grad_of(pred.input).unwrap();
    for i in rand::seq::index::sample(&mut rng, image.data.len(), per_tensor) {
        let base = image.data[i];
        image.data[i] = base + eps;
        let plus = loss_of(&params, &image);
        image.data[i] = base - eps;
        let minus = loss_of(&params, &image);
        image.data[i] = base;
        let numeric = (plus - minus) / (2.0 * eps);
        report.max_rel_error = report.max_rel_error.max(rel_err(analytic.data()[i] as f64, numeric));
        report.checked += 1;
    }
    report
}

pub const EPS: f64 = 1e-3;
pub const TOL: f64 = 1e-2;

fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    uniform(shape, 0.1, 1.0, seed).map(|v| if ((v * 1000.0) as u32).is_multiple_of(2) { v } else { -v })
}

fn map_of(shape: &[usize], data: &[f64]) -> Map {
    Map { c: shape[0], h: shape[1], w: shape[2], data: data.to_vec() }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn conv_checks() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (k, stride, seed) in [(3, 1, 1), (3, 2, 2), (1, 1, 3), (5, 2, 4)] {
        let x = uniform(&[2, 7, 6], -1.0, 1.0, seed);
        let w = uniform(&[3, 2, k, k], -1.0, 1.0, seed + 10);
        let b = uniform(&[3], -1.0, 1.0, seed + 20);
        let shape = x.shape().to_vec();
        let err = check_op(
            &[x, w, b],
            |t, i| t.conv2d(i[0], i[1], i[2], stride, (k - 1) / 2).unwrap(),
            |v| conv(&map_of(&shape, &v[0]), &v[1], &v[2], 3, k, stride).data,
            EPS,
            seed,
        );
        out.push((format!("conv2d k={k} stride={stride}"), err));
    }
    out
}

pub fn unary_checks() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let cases: [(UnaryKind, fn(f64) -> f64, Tensor); 7] = [
        (UnaryKind::Elu, |z| if z >= 0.0 { z } else { z.exp() - 1.0 }, uniform(&[2, 4, 4], -1.0, 1.0, 5)),
        (UnaryKind::Sigmoid, sigmoid, uniform(&[2, 4, 4], -1.0, 1.0, 6)),
        (UnaryKind::ExpClamped, |z| z.clamp(-10.0, 10.0).exp(), uniform(&[2, 4, 4], -1.0, 1.0, 7)),
        (UnaryKind::ExpClamped, |z| z.clamp(-10.0, 10.0).exp(), uniform(&[8], 10.5, 12.0, 8)),
        (UnaryKind::Square, |z| z * z, uniform(&[2, 4, 4], -1.0, 1.0, 9)),
        // The kink of abs and the pole of ln stay farther than the step.
        (UnaryKind::Abs, f64::abs, away_from_zero(&[2, 4, 4], 10)),
        (UnaryKind::Ln, f64::ln, uniform(&[2, 4, 4], 0.1, 1.0, 11)),
    ];
    for (kind, f, x) in cases {
        let err = check_op(&[x], |t, i| t.unary(kind, i[0]).unwrap(), |v| v[0].iter().map(|&z| f(z)).collect(), EPS, 12);
        out.push((format!("{kind:?}"), err));
    }
    out
}

pub fn elementwise_checks() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let a = uniform(&[2, 3, 3], -1.0, 1.0, 13);
    let b = away_from_zero(&[2, 3, 3], 14);
    type Build = fn(&mut Tape, &[NodeId]) -> NodeId;
    let ops: [(&str, Build, fn(f64, f64) -> f64); 5] = [
        ("add", |t, i| t.add(i[0], i[1]).unwrap(), |x, y| x + y),
        ("sub", |t, i| t.sub(i[0], i[1]).unwrap(), |x, y| x - y),
        ("mul", |t, i| t.mul(i[0], i[1]).unwrap(), |x, y| x * y),
        ("div", |t, i| t.div(i[0], i[1]).unwrap(), |x, y| x / y),
        ("affine", |t, i| t.affine(i[0], -1.5, 0.25).unwrap(), |x, _| -1.5 * x + 0.25),
    ];
    for (name, build, f) in ops {
        let reference = |v: &[Vec<f64>]| v[0].iter().zip(&v[1]).map(|(&x, &y)| f(x, y)).collect();
        let err = check_op(&[a.clone(), b.clone()], build, reference, EPS, 15);
        out.push((name.to_string(), err));
    }
    out
}

pub fn structural_checks() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let a = uniform(&[2, 3, 4], -1.0, 1.0, 16);
    let b = uniform(&[3, 3, 4], -1.0, 1.0, 17);

    let upsample = |v: &[Vec<f64>]| {
        let mut out = Vec::new();
        for c in 0..2 {
            for y in 0..9 {
                for x in 0..12 {
                    out.push(v[0][(c * 3 + y / 3) * 4 + x / 3]);
                }
            }
        }
        out
    };
    let err = check_op(std::slice::from_ref(&a), |t, i| t.upsample_nearest(i[0], 3).unwrap(), upsample, EPS, 18);
    out.push(("upsample".to_string(), err));

    let concat = |v: &[Vec<f64>]| [v[0].as_slice(), &v[1]].concat();
    let err = check_op(&[a.clone(), b.clone()], |t, i| t.concat_channels(i[0], i[1]).unwrap(), concat, EPS, 19);
    out.push(("concat".to_string(), err));

    let slice = |v: &[Vec<f64>]| v[0][12..36].to_vec();
    let err = check_op(std::slice::from_ref(&b), |t, i| t.slice_channels(i[0], 1, 2).unwrap(), slice, EPS, 20);
    out.push(("slice".to_string(), err));

    // The mask is read off the op applied to ones.
    let mut probe = Tape::new();
    let ones = probe.constant(Tensor::full(b.shape(), 1.0)).unwrap();
    let masked = probe.dropout(ones, 0.3, 99).unwrap();
    let mask: Vec<f64> = probe.value(masked).unwrap().data().iter().map(|&m| m as f64).collect();
    let dropout = |v: &[Vec<f64>]| v[0].iter().zip(&mask).map(|(x, m)| x * m).collect();
    let err = check_op(std::slice::from_ref(&b), |t, i| t.dropout(i[0], 0.3, 99).unwrap(), dropout, EPS, 21);
    out.push(("dropout".to_string(), err));

    let err = check_op(std::slice::from_ref(&b), |t, i| t.sum(i[0]).unwrap(), |v| vec![v[0].iter().sum()], EPS, 22);
    out.push(("sum".to_string(), err));
    let mean = |v: &[Vec<f64>]| vec![v[0].iter().sum::<f64>() / v[0].len() as f64];
    let err = check_op(&[b], |t, i| t.mean(i[0]).unwrap(), mean, EPS, 23);
    out.push(("mean".to_string(), err));
    out
}

pub fn composite_checks() -> Vec<(String, f64)> {
    let x = uniform(&[2, 8, 8], -1.0, 1.0, 24);
    let w1 = uniform(&[4, 2, 3, 3], -1.0, 1.0, 25);
    let b1 = uniform(&[4], -1.0, 1.0, 26);
    let w2 = uniform(&[1, 4, 3, 3], -1.0, 1.0, 27);
    let b2 = uniform(&[1], -1.0, 1.0, 28);
    let err = check_op(
        &[x, w1, b1, w2, b2],
        |t, i| {
            let h = t.conv2d(i[0], i[1], i[2], 2, 1).unwrap();
            let h = t.unary(UnaryKind::Elu, h).unwrap();
            let h = t.conv2d(h, i[3], i[4], 1, 1).unwrap();
            t.unary(UnaryKind::Sigmoid, h).unwrap()
        },
        |v| {
            let h = elu(conv(&map_of(&[2, 8, 8], &v[0]), &v[1], &v[2], 4, 3, 2));
            conv(&h, &v[3], &v[4], 1, 3, 1).data.into_iter().map(sigmoid).collect()
        },
        EPS,
        29,
    );
    vec![("conv-elu-conv-sigmoid".to_string(), err)]
}

/// Every per-op check, each as `(name, max relative error)`.
pub fn all_op_checks() -> Vec<(String, f64)> {
    [conv_checks(), unary_checks(), elementwise_checks(), structural_checks(), composite_checks()].concat()
}
