//! Adaptive mean pooling and bilinear resampling over the last two axes.

/// Disjoint near-equal partition `[start, end)` of `input` cells for output cell `i`.
#[inline]
pub(crate) fn partition(i: usize, input: usize, output: usize) -> (usize, usize) {
    (i * input / output, (i + 1) * input / output)
}

pub(crate) fn pool_forward(x: &[f64], planes: usize, (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<f64> {
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            let (y0, y1) = partition(oy, h, oh);
            for ox in 0..ow {
                let (x0, x1) = partition(ox, w, ow);
                let mut acc = 0.0;
                for y in y0..y1 {
                    acc += src[y * w + x0..y * w + x1].iter().sum::<f64>();
                }
                dst[oy * ow + ox] = acc / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    out
}

pub(crate) fn pool_backward(g: &[f64], planes: usize, (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<f64> {
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &g[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1) = partition(oy, h, oh);
            for ox in 0..ow {
                let (x0, x1) = partition(ox, w, ow);
                let share = src[oy * ow + ox] / ((y1 - y0) * (x1 - x0)) as f64;
                for y in y0..y1 {
                    for v in &mut dst[y * w + x0..y * w + x1] {
                        *v += share;
                    }
                }
            }
        }
    }
    dx
}

/// Interpolation taps along one axis (align-corners = false).
#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    w_lo: f64,
    w_hi: f64,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let w_hi = src - lo as f64;
            Tap {
                lo,
                hi,
                w_lo: 1.0 - w_hi,
                w_hi,
            }
        })
        .collect()
}

pub(crate) fn upsample_forward(x: &[f64], planes: usize, (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<f64> {
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, a) in ty.iter().enumerate() {
            let r0 = &src[a.lo * w..(a.lo + 1) * w];
            let r1 = &src[a.hi * w..(a.hi + 1) * w];
            for (ox, b) in tx.iter().enumerate() {
                let top = b.w_lo * r0[b.lo] + b.w_hi * r0[b.hi];
                let bottom = b.w_lo * r1[b.lo] + b.w_hi * r1[b.hi];
                dst[oy * ow + ox] = a.w_lo * top + a.w_hi * bottom;
            }
        }
    }
    out
}

pub(crate) fn upsample_backward(
    g: &[f64],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<f64> {
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &g[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let v = src[oy * ow + ox];
                dst[a.lo * w + b.lo] += a.w_lo * b.w_lo * v;
                dst[a.lo * w + b.hi] += a.w_lo * b.w_hi * v;
                dst[a.hi * w + b.lo] += a.w_hi * b.w_lo * v;
                dst[a.hi * w + b.hi] += a.w_hi * b.w_hi * v;
            }
        }
    }
    dx
}
