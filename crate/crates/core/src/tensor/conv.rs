//! Convolution kernels on raw row-major buffers (im2col + small GEMMs).

use super::Real;

/// `floor((size + 2·padding − kernel) / stride) + 1`, or `None` when the
/// kernel does not fit.
pub fn conv2d_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// `(size − 1)·stride − 2·padding + kernel`, or `None` when non-positive.
pub fn conv_transpose2d_output_size(
    size: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    if stride == 0 || kernel == 0 {
        return None;
    }
    let full = (size - 1) * stride + kernel;
    (full > 2 * padding).then(|| full - 2 * padding)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds `input` (`channels × height × width`) into a
/// `(channels·kh·kw) × (out_h·out_w)` matrix; out-of-bounds taps read zero.
pub(crate) fn im2col<T: Real>(input: &[T], g: &ConvGeom) -> Vec<T> {
    let cols = g.cols();
    let mut col = vec![T::zero(); g.rows() * cols];
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oi in 0..g.out_h {
                    let ii = (oi * g.stride + ki) as isize - g.padding as isize;
                    if ii < 0 || ii >= g.height as isize {
                        continue;
                    }
                    let src_row = &plane[ii as usize * g.width..(ii as usize + 1) * g.width];
                    for oj in 0..g.out_w {
                        let jj = (oj * g.stride + kj) as isize - g.padding as isize;
                        if jj >= 0 && jj < g.width as isize {
                            dst[oi * g.out_w + oj] = src_row[jj as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters-and-accumulates columns back onto the image grid.
pub(crate) fn col2im<T: Real>(col: &[T], g: &ConvGeom) -> Vec<T> {
    let cols = g.cols();
    let mut out = vec![T::zero(); g.channels * g.height * g.width];
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oi in 0..g.out_h {
                    let ii = (oi * g.stride + ki) as isize - g.padding as isize;
                    if ii < 0 || ii >= g.height as isize {
                        continue;
                    }
                    let base = ii as usize * g.width;
                    for oj in 0..g.out_w {
                        let jj = (oj * g.stride + kj) as isize - g.padding as isize;
                        if jj >= 0 && jj < g.width as isize {
                            plane[base + jj as usize] += src[oi * g.out_w + oj];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `C (m×n) = A (m×k) · B (k×n)`.
pub(crate) fn matmul_nn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for l in 0..k {
            let s = a[i * k + l];
            if s == T::zero() {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            crow.iter_mut().zip(brow).for_each(|(c, &b)| *c += s * b);
        }
    }
    c
}

/// `C (m×n) = A (m×k) · Bᵀ` where `B` is `n×k`.
pub(crate) fn matmul_nt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    c
}

/// `C (m×n) = Aᵀ · B` where `A` is `k×m` and `B` is `k×n`.
pub(crate) fn matmul_tn<T: Real>(a: &[T], b: &[T], k: usize, m: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for l in 0..k {
        let brow = &b[l * n..(l + 1) * n];
        for i in 0..m {
            let s = a[l * m + i];
            if s == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            crow.iter_mut().zip(brow).for_each(|(c, &b)| *c += s * b);
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_rules() {
        assert_eq!(conv2d_output_size(32, 3, 2, 1), Some(16));
        assert_eq!(conv2d_output_size(3, 2, 1, 0), Some(2));
        assert_eq!(conv2d_output_size(2, 3, 1, 0), None);
        assert_eq!(conv_transpose2d_output_size(8, 4, 2, 1), Some(16));
        assert_eq!(conv_transpose2d_output_size(1, 2, 1, 0), Some(2));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeom {
            channels: 2,
            height: 5,
            width: 4,
            kh: 3,
            kw: 2,
            stride: 2,
            padding: 1,
            out_h: conv2d_output_size(5, 3, 2, 1).unwrap(),
            out_w: conv2d_output_size(4, 2, 2, 1).unwrap(),
        };
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.rows() * g.cols()).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = im2col(&x, &g).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, &g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gemm_variants_agree() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| v as f64 * 0.5).collect(); // 3x4
        let c = matmul_nn(&a, &b, 2, 3, 4);
        // b transposed to 4x3
        let bt: Vec<f64> = (0..4).flat_map(|j| (0..3).map(move |l| (l * 4 + j) as f64 * 0.5)).collect();
        assert_eq!(c, matmul_nt(&a, &bt, 2, 3, 4));
        let at: Vec<f64> = (0..3).flat_map(|l| (0..2).map(move |i| (i * 3 + l) as f64)).collect();
        assert_eq!(c, matmul_tn(&at, &b, 3, 2, 4));
    }
}
