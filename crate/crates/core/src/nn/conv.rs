use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::Tensor;

/// 2-D convolution with square kernel, zero padding `k / 2`, im2col + GEMM.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    /// `out_c × (in_c · k · k)`, row-major.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Saved forward state needed for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Vec<f32>,
    in_h: usize,
    in_w: usize,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f32 {
    StandardNormal.sample(rng)
}

impl Conv2d {
    /// He-initialized convolution.
    pub fn new<R: Rng + ?Sized>(in_c: usize, out_c: usize, k: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = (in_c * k * k) as f32;
        let std = (2.0 / fan_in).sqrt();
        let weight = (0..out_c * in_c * k * k).map(|_| normal(rng) * std).collect();
        Conv2d {
            in_c,
            out_c,
            k,
            stride,
            weight,
            bias: vec![0.0; out_c],
        }
    }

    /// Small-variance init for prediction heads.
    pub fn new_head<R: Rng + ?Sized>(in_c: usize, out_c: usize, rng: &mut R) -> Self {
        let weight = (0..out_c * in_c).map(|_| normal(rng) * 0.01).collect();
        Conv2d {
            in_c,
            out_c,
            k: 1,
            stride: 1,
            weight,
            bias: vec![0.0; out_c],
        }
    }

    pub fn patch_len(&self) -> usize {
        self.in_c * self.k * self.k
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let pad = self.k / 2;
        (
            (h + 2 * pad - self.k) / self.stride + 1,
            (w + 2 * pad - self.k) / self.stride + 1,
        )
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn im2col(&self, x: &Tensor, oh: usize, ow: usize) -> Vec<f32> {
        let (k, s, pad) = (self.k, self.stride, (self.k / 2) as isize);
        let n = oh * ow;
        let mut cols = vec![0.0f32; self.patch_len() * n];
        for c in 0..self.in_c {
            let plane = &x.data[c * x.h * x.w..(c + 1) * x.h * x.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oi in 0..oh {
                        let ii = (oi * s) as isize + ki as isize - pad;
                        if ii < 0 || ii >= x.h as isize {
                            continue;
                        }
                        let src = &plane[ii as usize * x.w..(ii as usize + 1) * x.w];
                        let drow = &mut dst[oi * ow..(oi + 1) * ow];
                        for (oj, d) in drow.iter_mut().enumerate() {
                            let jj = (oj * s) as isize + kj as isize - pad;
                            if jj >= 0 && jj < x.w as isize {
                                *d = src[jj as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Tensor {
        let (k, s, pad) = (self.k, self.stride, (self.k / 2) as isize);
        let n = oh * ow;
        let mut dx = Tensor::zeros(self.in_c, h, w);
        for c in 0..self.in_c {
            let plane = &mut dx.data[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * n..(row + 1) * n];
                    for oi in 0..oh {
                        let ii = (oi * s) as isize + ki as isize - pad;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        let drow = &mut plane[ii as usize * w..(ii as usize + 1) * w];
                        for oj in 0..ow {
                            let jj = (oj * s) as isize + kj as isize - pad;
                            if jj >= 0 && jj < w as isize {
                                drow[jj as usize] += src[oi * ow + oj];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, ConvCache) {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let (oh, ow) = self.out_hw(x.h, x.w);
        let n = oh * ow;
        let cols = if self.k == 1 && self.stride == 1 {
            x.data.clone()
        } else {
            self.im2col(x, oh, ow)
        };
        let mut out = Vec::with_capacity(self.out_c * n);
        for &b in &self.bias {
            out.extend(std::iter::repeat(b).take(n));
        }
        gemm(
            self.out_c,
            self.patch_len(),
            n,
            &self.weight,
            Layout::RowMajor,
            &cols,
            Layout::RowMajor,
            1.0,
            &mut out,
        );
        (
            Tensor::from_vec(self.out_c, oh, ow, out),
            ConvCache {
                cols,
                in_h: x.h,
                in_w: x.w,
            },
        )
    }

    /// Accumulates parameter gradients and optionally returns the input gradient.
    pub fn backward(
        &self,
        cache: &ConvCache,
        grad_out: &Tensor,
        grad_w: &mut [f32],
        grad_b: &mut [f32],
        need_input_grad: bool,
    ) -> Option<Tensor> {
        let n = grad_out.plane();
        let kk = self.patch_len();
        for (gb, g) in grad_b.iter_mut().zip(grad_out.data.chunks(n)) {
            *gb += g.iter().sum::<f32>();
        }
        // dW (out_c × kk) += dY (out_c × n) · colsᵀ (n × kk)
        gemm(
            self.out_c,
            n,
            kk,
            &grad_out.data,
            Layout::RowMajor,
            &cache.cols,
            Layout::Transposed,
            1.0,
            grad_w,
        );
        if !need_input_grad {
            return None;
        }
        // dCols (kk × n) = Wᵀ (kk × out_c) · dY (out_c × n)
        let mut dcols = vec![0.0f32; kk * n];
        gemm(
            kk,
            self.out_c,
            n,
            &self.weight,
            Layout::Transposed,
            &grad_out.data,
            Layout::RowMajor,
            0.0,
            &mut dcols,
        );
        if self.k == 1 && self.stride == 1 {
            Some(Tensor::from_vec(self.in_c, cache.in_h, cache.in_w, dcols))
        } else {
            Some(self.col2im(&dcols, cache.in_h, cache.in_w, grad_out.h, grad_out.w))
        }
    }
}

#[derive(Clone, Copy)]
enum Layout {
    RowMajor,
    Transposed,
}

/// `c (m × n) = a (m × k) · b (k × n) + beta · c`, where `a`/`b` may be stored
/// transposed. Plain row-major storage throughout.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], la: Layout, b: &[f32], lb: Layout, beta: f32, c: &mut [f32]) {
    let (rsa, csa) = match la {
        Layout::RowMajor => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match lb {
        Layout::RowMajor => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: slice lengths checked above against the strides passed in.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
