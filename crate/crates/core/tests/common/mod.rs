//! Oracles and helpers shared by the integration tests and the acceptance run.
//! Everything here is written independently of the library kernels it checks.

#![allow(dead_code)]

pub mod suites;

use mtdepth::tensor::ConvGeometry;
use mtdepth::{DepthBounds, DepthMap, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Uniform values with magnitude in `[gap, hi]` and random sign, keeping
/// finite differences clear of kinks at zero.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let values = (0..n)
        .map(|_| {
            let m = rng.gen_range(gap..hi);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), values).unwrap()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn normwise_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares tape gradients of `f` with central differences for every input.
///
/// `f` records a computation on the given leaves; a non-scalar result is
/// contracted with fixed random weights so every output element contributes.
/// Returns the worst norm-wise relative error over the inputs.
pub fn grad_check<F>(inputs: &[Tensor], seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |values: &[Tensor], with_grad: bool| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &leaves);
        let shape = tape.value(out).shape().to_vec();
        let loss = if tape.value(out).numel() == 1 {
            out
        } else {
            let mut r = rng(seed ^ 0xa5a5);
            let w = tape.constant(uniform(&mut r, &shape, -1.0, 1.0));
            let prod = tape.mul(out, w).unwrap();
            tape.sum(prod, None).unwrap()
        };
        let value = tape.value(loss).values()[0];
        if !with_grad {
            return (value, Vec::new());
        }
        tape.backward(loss).unwrap();
        let grads = leaves
            .iter()
            .zip(values)
            .map(|(&v, t)| {
                tape.grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; t.numel()])
            })
            .collect();
        (value, grads)
    };
    let (_, analytic) = eval(inputs, true);
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].values_mut()[j] += FD_EPS;
            let mut minus = inputs.to_vec();
            minus[k].values_mut()[j] -= FD_EPS;
            *slot = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * FD_EPS);
        }
        worst = worst.max(normwise_rel_err(&analytic[k], &numeric));
    }
    worst
}

/// Direct-summation convolution of `N x C x H x W` by `Cout x C x kh x kw`.
pub fn conv_oracle(input: &Tensor, kernel: &Tensor, bias: Option<&[f64]>, g: ConvGeometry) -> Tensor {
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let [co, _, kh, kw] = [
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    ];
    let ho = (h + 2 * g.padding - g.dilation * (kh - 1) - 1) / g.stride + 1;
    let wo = (w + 2 * g.padding - g.dilation * (kw - 1) - 1) / g.stride + 1;
    let x = input.values();
    let k = kernel.values();
    let mut out = vec![0.0; n * co * ho * wo];
    for b in 0..n {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(0.0, |bv| bv[o]);
                    for i in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                                let xx = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                acc += x[((b * c + i) * h + y as usize) * w + xx as usize]
                                    * k[((o * c + i) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((b * co + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, co, ho, wo], out).unwrap()
}

/// Kernel with `dilation - 1` zeros inserted between taps.
pub fn zero_inflate(kernel: &Tensor, dilation: usize) -> Tensor {
    let s = kernel.shape();
    let (co, c, kh, kw) = (s[0], s[1], s[2], s[3]);
    let (eh, ew) = (dilation * (kh - 1) + 1, dilation * (kw - 1) + 1);
    let mut out = vec![0.0; co * c * eh * ew];
    for p in 0..co * c {
        for y in 0..kh {
            for x in 0..kw {
                out[(p * eh + y * dilation) * ew + x * dilation] = kernel.values()[(p * kh + y) * kw + x];
            }
        }
    }
    Tensor::new(vec![co, c, eh, ew], out).unwrap()
}

/// Bilinear sample of one plane with half-pixel centers and edge clamping.
pub fn bilinear_oracle(src: &[f64], (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<f64> {
    let coord = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let (y0, y1, ly) = coord(oy, h, oh);
        for ox in 0..ow {
            let (x0, x1, lx) = coord(ox, w, ow);
            let top = (1.0 - lx) * src[y0 * w + x0] + lx * src[y0 * w + x1];
            let bottom = (1.0 - lx) * src[y1 * w + x0] + lx * src[y1 * w + x1];
            out.push((1.0 - ly) * top + ly * bottom);
        }
    }
    out
}

/// Two-pass variance of log differences over pixels valid in both maps.
pub fn silog_two_pass(pred: &DepthMap, gt: &DepthMap) -> Option<f64> {
    let diffs: Vec<f64> = (0..gt.depth.len())
        .filter(|&i| gt.valid[i] && pred.valid[i])
        .map(|i| gt.depth[i].ln() - pred.depth[i].ln())
        .collect();
    if diffs.is_empty() {
        return None;
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    Some(diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n)
}

/// Interval index by scanning edges computed from first principles.
pub fn quantize_scan(d: f64, n_cls: usize, bounds: DepthBounds, (cmin, cmax): (f64, f64)) -> usize {
    let norm = (bounds.d_max - bounds.d_min + 1.0).ln();
    let enc = |x: f64| (x - bounds.d_min + 1.0).ln() / norm;
    let (lo, hi) = (enc(cmin), enc(cmax));
    let e = enc(d.max(bounds.d_min));
    let mut label = 0;
    for k in 1..n_cls {
        if e >= lo + (hi - lo) * k as f64 / n_cls as f64 {
            label = k;
        }
    }
    label
}

/// Random sparse depth pair sharing at least one valid pixel.
pub fn random_sparse_pair(rng: &mut ChaCha8Rng) -> (DepthMap, DepthMap) {
    let h = rng.gen_range(1..12);
    let w = rng.gen_range(1..12);
    let density = rng.gen_range(0.05..1.0);
    let mut gt = DepthMap::invalid(h, w);
    let mut pred = DepthMap::invalid(h, w);
    for i in 0..h * w {
        if rng.gen::<f64>() < density {
            gt.depth[i] = rng.gen_range(1.0..120.0);
            gt.valid[i] = true;
        }
        pred.depth[i] = rng.gen_range(0.5..150.0);
        pred.valid[i] = true;
    }
    if gt.valid_count() == 0 {
        gt.depth[0] = 10.0;
        gt.valid[0] = true;
    }
    (pred, gt)
}
