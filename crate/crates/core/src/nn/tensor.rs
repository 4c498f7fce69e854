/// Dense channel-major (C, H, W) activation map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length");
        Tensor { c, h, w, data }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn at(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[(c * self.h + i) * self.w + j]
    }

    /// The feature vector at spatial position (i, j).
    pub fn column(&self, i: usize, j: usize) -> Vec<f32> {
        (0..self.c).map(|c| self.at(c, i, j)).collect()
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.c == other.c && self.h == other.h && self.w == other.w
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

pub const LEAKY_SLOPE: f32 = 0.1;

pub fn leaky_relu_inplace(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
}

/// Backward through a leaky ReLU given its output.
pub fn leaky_relu_backward(out: &Tensor, grad: &mut Tensor) {
    for (g, &y) in grad.data.iter_mut().zip(&out.data) {
        if y < 0.0 {
            *g *= LEAKY_SLOPE;
        }
    }
}

/// Nearest-neighbour upsampling to an explicit size (used for odd maps).
pub fn upsample_to(x: &Tensor, h: usize, w: usize) -> Tensor {
    let mut out = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        for i in 0..h {
            let si = (i * x.h / h).min(x.h - 1);
            for j in 0..w {
                let sj = (j * x.w / w).min(x.w - 1);
                out.data[(c * h + i) * w + j] = x.at(c, si, sj);
            }
        }
    }
    out
}

pub fn upsample_backward(grad: &Tensor, src_h: usize, src_w: usize) -> Tensor {
    let mut out = Tensor::zeros(grad.c, src_h, src_w);
    for c in 0..grad.c {
        for i in 0..grad.h {
            let si = (i * src_h / grad.h).min(src_h - 1);
            for j in 0..grad.w {
                let sj = (j * src_w / grad.w).min(src_w - 1);
                out.data[(c * src_h + si) * src_w + sj] += grad.at(c, i, j);
            }
        }
    }
    out
}

/// Global average pool to a flat vector of channel means.
pub fn global_avg_pool(x: &Tensor) -> Vec<f32> {
    let n = x.plane() as f32;
    x.data.chunks(x.plane()).map(|p| p.iter().sum::<f32>() / n).collect()
}

pub fn global_avg_pool_backward(grad: &[f32], h: usize, w: usize) -> Tensor {
    let n = (h * w) as f32;
    let mut data = Vec::with_capacity(grad.len() * h * w);
    for &g in grad {
        data.extend(std::iter::repeat(g / n).take(h * w));
    }
    Tensor::from_vec(grad.len(), h, w, data)
}
