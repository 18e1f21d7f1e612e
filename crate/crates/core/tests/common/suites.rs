//! Checks shared by the test suites and the acceptance run.

#![allow(dead_code)]

use mtdepth::data::{Dataset, DatasetSpec, Rgb, Split};
use mtdepth::harness::{validate, DepthPredictor, HarnessError, HeadPredictions};
use mtdepth::losses::{combine, silog, sparse_mse, sparse_softmax_ce};
use mtdepth::tensor::ConvGeometry;
use mtdepth::{
    ClipPlanes, DepthBounds, DepthMap, Heads, IntervalScheme, Model, ModelConfig, Tape, TaskWeights, Tensor,
};
use rand::Rng;

use super::{away_from_zero, grad_check, normwise_rel_err, rng, uniform, FD_EPS};

pub const OP_TOL: f64 = 1e-5;
pub const COMPOSITE_TOL: f64 = 1e-4;

/// Worst finite-difference error of every differentiable op for one seed.
pub fn op_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let shape = [2, 3, 4];
    let wide = uniform(&mut r, &shape, -2.0, 2.0);
    let positive = uniform(&mut r, &shape, 0.5, 3.0);
    let kinked = away_from_zero(&mut r, &shape, 0.05, 2.0);
    let other = uniform(&mut r, &shape, -2.0, 2.0);

    out.push((
        "neg",
        grad_check(std::slice::from_ref(&wide), seed, |t, v| t.neg(v[0]).unwrap()),
    ));
    out.push((
        "exp",
        grad_check(std::slice::from_ref(&wide), seed, |t, v| t.exp(v[0]).unwrap()),
    ));
    out.push((
        "log",
        grad_check(std::slice::from_ref(&positive), seed, |t, v| t.log(v[0]).unwrap()),
    ));
    out.push(("relu", grad_check(&[kinked], seed, |t, v| t.relu(v[0]).unwrap())));
    out.push((
        "square",
        grad_check(std::slice::from_ref(&wide), seed, |t, v| t.square(v[0]).unwrap()),
    ));
    out.push((
        "scale",
        grad_check(std::slice::from_ref(&wide), seed, |t, v| t.scale(v[0], -1.7).unwrap()),
    ));
    let pair = [wide.clone(), other.clone()];
    out.push(("add", grad_check(&pair, seed, |t, v| t.add(v[0], v[1]).unwrap())));
    out.push(("sub", grad_check(&pair, seed, |t, v| t.sub(v[0], v[1]).unwrap())));
    out.push(("mul", grad_check(&pair, seed, |t, v| t.mul(v[0], v[1]).unwrap())));
    out.push((
        "div",
        grad_check(&[wide.clone(), positive.clone()], seed, |t, v| {
            t.div(v[0], v[1]).unwrap()
        }),
    ));
    let scalar = Tensor::scalar(r.gen_range(0.5..2.0));
    out.push((
        "mul_scalar_broadcast",
        grad_check(&[wide.clone(), scalar], seed, |t, v| t.mul(v[0], v[1]).unwrap()),
    ));
    let mut mask: Vec<bool> = (0..wide.numel()).map(|_| r.gen()).collect();
    mask[0] = true;
    out.push((
        "sum",
        grad_check(std::slice::from_ref(&wide), seed, |t, v| t.sum(v[0], None).unwrap()),
    ));
    out.push((
        "masked_mean",
        grad_check(std::slice::from_ref(&wide), seed, |t, v| {
            t.mean(v[0], Some(&mask)).unwrap()
        }),
    ));

    let input = uniform(&mut r, &[2, 3, 7, 6], -1.0, 1.0);
    let kernel = uniform(&mut r, &[4, 3, 3, 3], -1.0, 1.0);
    let bias = uniform(&mut r, &[4], -1.0, 1.0);
    for (name, g) in [
        ("conv2d", ConvGeometry::new(1, 1, 1)),
        ("conv2d_strided", ConvGeometry::new(2, 1, 0)),
        ("conv2d_dilated", ConvGeometry::new(1, 2, 2)),
    ] {
        let err = grad_check(&[input.clone(), kernel.clone(), bias.clone()], seed, |t, v| {
            t.conv2d(v[0], v[1], Some(v[2]), g).unwrap()
        });
        out.push((name, err));
    }

    let planes = uniform(&mut r, &[2, 3, 7, 5], -1.0, 1.0);
    out.push((
        "pool2d",
        grad_check(std::slice::from_ref(&planes), seed, |t, v| {
            t.pool2d(v[0], (3, 2)).unwrap()
        }),
    ));
    out.push((
        "upsample_bilinear",
        grad_check(std::slice::from_ref(&planes), seed, |t, v| {
            t.upsample_bilinear(v[0], (11, 9)).unwrap()
        }),
    ));
    let extra = uniform(&mut r, &[2, 2, 7, 5], -1.0, 1.0);
    out.push((
        "concat",
        grad_check(&[planes.clone(), extra], seed, |t, v| {
            t.concat(&[v[0], v[1]], 1).unwrap()
        }),
    ));
    out.push((
        "dropout",
        grad_check(&[planes], seed, |t, v| {
            let mut d = rng(seed ^ 0xd0);
            t.dropout(v[0], 0.3, &mut d).unwrap()
        }),
    ));

    let logits = uniform(&mut r, &[2, 5, 3, 3], -2.0, 2.0);
    let labels: Vec<usize> = (0..18).map(|_| r.gen_range(0..5)).collect();
    let mut pix_mask: Vec<bool> = (0..18).map(|_| r.gen()).collect();
    pix_mask[0] = true;
    out.push((
        "sparse_softmax_ce",
        grad_check(&[logits], seed, |t, v| {
            sparse_softmax_ce(t, v[0], &labels, &pix_mask).unwrap()
        }),
    ));
    let pred = uniform(&mut r, &[2, 1, 3, 3], -1.0, 1.0);
    let target: Vec<f64> = (0..18).map(|_| r.gen_range(0.0..1.0)).collect();
    out.push((
        "sparse_mse",
        grad_check(&[pred], seed, |t, v| sparse_mse(t, v[0], &target, &pix_mask).unwrap()),
    ));

    let losses = [
        Tensor::scalar(r.gen_range(0.1..3.0)),
        Tensor::scalar(r.gen_range(0.1..3.0)),
    ];
    let weights = TaskWeights {
        s_reg: r.gen_range(-1.0..2.0),
        s_cls: r.gen_range(-1.0..2.0),
        ..TaskWeights::learned(0.0)
    };
    out.push((
        "combine_losses",
        grad_check(&losses, seed, |t, v| {
            combine(t, v[0], Some(v[1]), &weights, 1).unwrap().total
        }),
    ));
    out.push(("combine_log_variances", log_variance_error(&losses, weights)));
    out
}

/// Gradient of the combined objective with respect to both log-variances.
fn log_variance_error(losses: &[Tensor; 2], weights: TaskWeights) -> f64 {
    let eval = |w: TaskWeights| {
        let mut tape = Tape::new();
        let a = tape.constant(losses[0].clone());
        let b = tape.constant(losses[1].clone());
        let c = combine(&mut tape, a, Some(b), &w, 1).unwrap();
        (tape, c)
    };
    let (mut tape, c) = eval(weights);
    tape.backward(c.total).unwrap();
    let analytic = [
        tape.grad(c.s_reg.unwrap()).unwrap()[0],
        tape.grad(c.s_cls.unwrap()).unwrap()[0],
    ];
    let value = |w: TaskWeights| {
        let (tape, c) = eval(w);
        tape.value(c.total).values()[0]
    };
    let mut numeric = [0.0; 2];
    for (k, slot) in numeric.iter_mut().enumerate() {
        let (mut plus, mut minus) = (weights, weights);
        if k == 0 {
            plus.s_reg += FD_EPS;
            minus.s_reg -= FD_EPS;
        } else {
            plus.s_cls += FD_EPS;
            minus.s_cls -= FD_EPS;
        }
        *slot = (value(plus) - value(minus)) / (2.0 * FD_EPS);
    }
    normwise_rel_err(&analytic, &numeric)
}

pub fn tiny_model_config(n_cls: usize) -> ModelConfig {
    ModelConfig {
        stem_channels: 4,
        block_channels: [4, 6],
        head_channels: 4,
        pyramid_channels: 2,
        n_cls,
        dropout_p: 0.2,
        ..ModelConfig::default()
    }
}

/// Finite-difference check of the full model and multi-task objective,
/// over a random subset of parameters plus both log-variances.
pub fn composite_gradient_error(seed: u64, probes: usize) -> f64 {
    let mut r = rng(seed.wrapping_add(1000));
    let n_cls = 5;
    let mut model = Model::build(tiny_model_config(n_cls), seed).unwrap();
    // Zero-initialized biases can put ReLU inputs exactly on the kink, where
    // central differences straddle two slopes; check at a generic point instead.
    for p in model.params_mut() {
        p.value
            .values_mut()
            .iter_mut()
            .for_each(|v| *v += r.gen_range(-0.05..0.05));
    }
    let (n, h, w) = (2, 8, 8);
    let input = uniform(&mut r, &[n, 3, h, w], 0.0, 1.0);
    let targets: Vec<f64> = (0..n * h * w).map(|_| r.gen_range(0.0..1.0)).collect();
    let labels: Vec<usize> = (0..n * h * w).map(|_| r.gen_range(0..n_cls)).collect();
    let mut mask: Vec<bool> = (0..n * h * w).map(|_| r.gen_bool(0.4)).collect();
    mask[0] = true;
    let valid = mask.iter().filter(|&&m| m).count();
    let weights = TaskWeights {
        s_reg: r.gen_range(-0.5..1.5),
        s_cls: r.gen_range(-0.5..1.5),
        ..TaskWeights::learned(0.0)
    };

    let record = |model: &Model, weights: &TaskWeights| {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let mut drop = rng(seed ^ 0xfeed);
        let pass = model.forward(&mut tape, x, Heads::Both, Some(&mut drop)).unwrap();
        let l_reg = sparse_mse(&mut tape, pass.regression, &targets, &mask).unwrap();
        let l_cls = sparse_softmax_ce(&mut tape, pass.class_logits.unwrap(), &labels, &mask).unwrap();
        let c = combine(&mut tape, l_reg, Some(l_cls), weights, valid).unwrap();
        (tape, pass, c)
    };
    let (mut tape, pass, c) = record(&model, &weights);
    tape.backward(c.total).unwrap();
    let grads = model.gradients(&tape, &pass);
    let loss_at = |model: &Model, weights: &TaskWeights| {
        let (tape, _, c) = record(model, weights);
        tape.value(c.total).values()[0]
    };

    let sizes: Vec<usize> = model.params().iter().map(|p| p.value.numel()).collect();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for _ in 0..probes {
        let p = r.gen_range(0..sizes.len());
        let j = r.gen_range(0..sizes[p]);
        let shifted = |delta: f64| {
            let mut m = model.clone();
            m.params_mut()[p].value.values_mut()[j] += delta;
            loss_at(&m, &weights)
        };
        analytic.push(grads[p][j]);
        numeric.push((shifted(FD_EPS) - shifted(-FD_EPS)) / (2.0 * FD_EPS));
    }
    for (k, v) in [c.s_reg.unwrap(), c.s_cls.unwrap()].into_iter().enumerate() {
        analytic.push(tape.grad(v).unwrap()[0]);
        let shifted = |delta: f64| {
            let mut w = weights;
            if k == 0 {
                w.s_reg += delta;
            } else {
                w.s_cls += delta;
            }
            loss_at(&model, &w)
        };
        numeric.push((shifted(FD_EPS) - shifted(-FD_EPS)) / (2.0 * FD_EPS));
    }
    normwise_rel_err(&analytic, &numeric)
}

/// Worst `|silog - two-pass reference|` over `n` random sparse instances.
pub fn silog_oracle_error(n: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (pred, gt) = super::random_sparse_pair(&mut r);
        let got = silog(&pred, &gt).unwrap().raw;
        let want = super::silog_two_pass(&pred, &gt).unwrap();
        worst = worst.max((got - want).abs());
    }
    worst
}

/// Worst `|silog(k pred) - silog(pred)|` over random instances and the given scales.
pub fn silog_scale_error(n: usize, seed: u64, scales: &[f64]) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (pred, gt) = super::random_sparse_pair(&mut r);
        let base = silog(&pred, &gt).unwrap().raw;
        for &k in scales {
            let mut scaled = pred.clone();
            scaled.depth.iter_mut().for_each(|d| *d *= k);
            worst = worst.max((silog(&scaled, &gt).unwrap().raw - base).abs());
        }
    }
    worst
}

/// Raw error of the hand case gt = (e, e), pred = (1, e^2).
pub fn silog_hand_case() -> f64 {
    let e = std::f64::consts::E;
    let gt = DepthMap::from_depths(1, 2, vec![e, e]).unwrap();
    let pred = DepthMap::from_depths(1, 2, vec![1.0, e * e]).unwrap();
    silog(&pred, &gt).unwrap().raw
}

/// Worst decode(encode(d)) error in meters over `n` depths in `[2, 125]`.
pub fn depth_roundtrip_error(n: usize, seed: u64) -> f64 {
    let bounds = DepthBounds::default();
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let d = r.gen_range(bounds.d_min..=bounds.d_max);
            (bounds.decode(bounds.encode(d).unwrap()).unwrap() - d).abs()
        })
        .fold(0.0, f64::max)
}

/// Count of depths where `quantize` disagrees with the linear-scan oracle.
pub fn quantize_mismatches(n: usize, n_cls: usize, seed: u64) -> usize {
    let bounds = DepthBounds::default();
    let planes = ClipPlanes::default();
    let scheme = IntervalScheme::new(n_cls, bounds, planes).unwrap();
    let mut r = rng(seed);
    (0..n)
        .filter(|_| {
            // Reaches past both clip planes and below d_min to cover the clamps.
            let d = r.gen_range(0.5..140.0);
            scheme.quantize(d) != super::quantize_scan(d, n_cls, bounds, (planes.d_cmin, planes.d_cmax))
        })
        .count()
}

/// `max |edge[i+1] - edge[i] - delta|` with `delta` from the end edges.
pub fn edge_uniformity_error(n_cls: usize) -> f64 {
    let scheme = IntervalScheme::new(n_cls, DepthBounds::default(), ClipPlanes::default()).unwrap();
    let e = scheme.edges();
    let delta = (e[n_cls] - e[0]) / n_cls as f64;
    e.windows(2).map(|w| (w[1] - w[0] - delta).abs()).fold(0.0, f64::max)
}

/// Gradient descent on the log-variances alone with fixed task losses.
/// Returns the final `(s_reg, s_cls)`.
pub fn descend_log_variances(l_reg: f64, l_cls: f64, steps: usize, rate: f64) -> (f64, f64) {
    let mut weights = TaskWeights::learned(1.0);
    for _ in 0..steps {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(l_reg));
        let b = tape.constant(Tensor::scalar(l_cls));
        let c = combine(&mut tape, a, Some(b), &weights, 1).unwrap();
        tape.backward(c.total).unwrap();
        weights.s_reg -= rate * tape.grad(c.s_reg.unwrap()).unwrap()[0];
        weights.s_cls -= rate * tape.grad(c.s_cls.unwrap()).unwrap()[0];
    }
    (weights.s_reg, weights.s_cls)
}

/// Scores a predictor that outputs the quantized ground truth on the
/// default validation set, for each interval count.
pub fn label_oracle_scores(n_cls: &[usize]) -> Vec<f64> {
    let spec = DatasetSpec::default();
    let base = IntervalScheme::new(2, DepthBounds::default(), ClipPlanes::default()).unwrap();
    let set = spec.generate(Split::Val, &base).unwrap();
    n_cls
        .iter()
        .map(|&n| {
            let scheme = IntervalScheme::new(n, DepthBounds::default(), ClipPlanes::default()).unwrap();
            let oracle = LabelOracle {
                set: &set,
                scheme: &scheme,
            };
            validate(&oracle, &set, &scheme).unwrap().silog_cls.unwrap()
        })
        .collect()
}

struct LabelOracle<'a> {
    set: &'a Dataset,
    scheme: &'a IntervalScheme,
}

impl DepthPredictor for LabelOracle<'_> {
    fn predict(&self, image: &Rgb) -> Result<HeadPredictions, HarnessError> {
        let sample = self.set.samples.iter().find(|s| &s.rgb == image).unwrap();
        Ok(HeadPredictions {
            regression: vec![0.5; image.height * image.width],
            classes: Some(self.scheme.label_map(&sample.gt).label),
        })
    }
}
