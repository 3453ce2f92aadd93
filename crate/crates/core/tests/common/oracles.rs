//! Naive loop implementations used as independent references.
#![allow(dead_code)]

use stitchwork_core::features::FeatureNetwork;
use stitchwork_core::Image;

/// Direct-sum convolution of a CHW input with an OIHW kernel.
pub fn conv2d(x: &[f64], (c, h, w): (usize, usize, usize), k: &[f64], (o, kh, kw): (usize, usize, usize), stride: usize, pad: usize) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0.0;
                for ic in 0..c {
                    for a in 0..kh {
                        for b in 0..kw {
                            let y = (i * stride + a) as isize - pad as isize;
                            let xx = (j * stride + b) as isize - pad as isize;
                            if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                continue;
                            }
                            acc += x[ic * h * w + y as usize * w + xx as usize] * k[((oc * c + ic) * kh + a) * kw + b];
                        }
                    }
                }
                out[(oc * oh + i) * ow + j] = acc;
            }
        }
    }
    (out, oh, ow)
}

/// Scatter form of the transposed convolution; kernel is `c_in × c_out × kh × kw`.
pub fn conv_transpose2d(x: &[f64], (c, h, w): (usize, usize, usize), k: &[f64], (o, kh, kw): (usize, usize, usize), stride: usize, pad: usize) -> (Vec<f64>, usize, usize) {
    let oh = (h - 1) * stride + kh - 2 * pad;
    let ow = (w - 1) * stride + kw - 2 * pad;
    let mut out = vec![0.0; o * oh * ow];
    for ic in 0..c {
        for i in 0..h {
            for j in 0..w {
                let v = x[(ic * h + i) * w + j];
                for oc in 0..o {
                    for a in 0..kh {
                        for b in 0..kw {
                            let y = (i * stride + a) as isize - pad as isize;
                            let xx = (j * stride + b) as isize - pad as isize;
                            if y < 0 || xx < 0 || y >= oh as isize || xx >= ow as isize {
                                continue;
                            }
                            out[(oc * oh + y as usize) * ow + xx as usize] += v * k[((ic * o + oc) * kh + a) * kw + b];
                        }
                    }
                }
            }
        }
    }
    (out, oh, ow)
}

/// `Σ_k H_ik H_jk` for a row-major `d × p` matrix.
pub fn gram(hm: &[f64], d: usize, p: usize) -> Vec<f64> {
    let mut g = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..p {
                acc += hm[i * p + k] * hm[j * p + k];
            }
            g[i * d + j] = acc;
        }
    }
    g
}

/// Conv + bias + ReLU (+ 2×2 average pooling) layer by layer; returns the
/// `d × p` activation of every tap, pre-pooling.
pub fn features(image: &Image, net: &FeatureNetwork, taps: &[usize]) -> Vec<(usize, usize, Vec<f64>)> {
    let mut x: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let (mut c, mut h, mut w) = (image.channels(), image.height(), image.width());
    let mut out = vec![None; taps.len()];
    let deepest = *taps.iter().max().unwrap();
    for layer in 1..=deepest {
        let spec = net.layers()[layer - 1];
        let (wt, bias) = net.weights(layer);
        let k: Vec<f64> = wt.data().iter().map(|&v| v as f64).collect();
        let (mut y, oh, ow) = conv2d(&x, (c, h, w), &k, (spec.filters, spec.kernel, spec.kernel), spec.stride, spec.padding);
        for oc in 0..spec.filters {
            for v in &mut y[oc * oh * ow..(oc + 1) * oh * ow] {
                *v = (*v + bias.data()[oc] as f64).max(0.0);
            }
        }
        for (slot, &t) in out.iter_mut().zip(taps) {
            if t == layer {
                *slot = Some((spec.filters, oh * ow, y.clone()));
            }
        }
        (c, h, w) = (spec.filters, oh, ow);
        x = y;
        if spec.pool_after && layer < deepest {
            let (ph, pw) = (h / 2, w / 2);
            let mut pooled = vec![0.0; c * ph * pw];
            for ch in 0..c {
                for i in 0..ph {
                    for j in 0..pw {
                        let at = |a: usize, b: usize| x[(ch * h + a) * w + b];
                        pooled[(ch * ph + i) * pw + j] = 0.25 * (at(2 * i, 2 * j) + at(2 * i, 2 * j + 1) + at(2 * i + 1, 2 * j) + at(2 * i + 1, 2 * j + 1));
                    }
                }
            }
            (h, w) = (ph, pw);
            x = pooled;
        }
    }
    out.into_iter().map(|o| o.unwrap()).collect()
}

/// Largest singular value from a full SVD.
pub fn svd_sigma(w: &[f64], rows: usize, cols: usize) -> f64 {
    let m = nalgebra::DMatrix::from_row_slice(rows, cols, w);
    m.singular_values().max()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
