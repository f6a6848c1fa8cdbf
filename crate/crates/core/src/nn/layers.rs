use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{ParamView, Parameterized};
use crate::rng::Rng;

fn uniform(rng: &mut Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Fully connected layer, `y = W x + b` with `W` stored row-major (out x in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    weight_shape: [usize; 2],
    bias_shape: [usize; 1],
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            weight: uniform(rng, in_dim * out_dim, bound),
            bias: uniform(rng, out_dim, bound),
            weight_shape: [out_dim, in_dim],
            bias_shape: [out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight_shape[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight_shape[0]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim());
        let n = self.in_dim();
        self.weight.chunks_exact(n).zip(&self.bias).map(|(row, b)| b + super::dot(row, x)).collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        let n = self.in_dim();
        let mut dx = vec![0.0; n];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = &self.weight[o * n..(o + 1) * n];
            let grow = &mut grad.weight[o * n..(o + 1) * n];
            for i in 0..n {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }
}

impl Parameterized for Linear {
    fn params(&self) -> Vec<(String, ParamView<'_>)> {
        vec![
            ("weight".into(), ParamView { shape: &self.weight_shape, data: &self.weight }),
            ("bias".into(), ParamView { shape: &self.bias_shape, data: &self.bias }),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Real 1-D convolution over a channel-major `(channels, len)` buffer with
/// zero padding of `kernel / 2` on both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub stride: usize,
    weight_shape: [usize; 3],
    bias_shape: [usize; 1],
}

impl Conv1d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / ((in_ch * kernel) as f64).sqrt();
        Self::from_parts(
            uniform(rng, out_ch * in_ch * kernel, bound),
            uniform(rng, out_ch, bound),
            [out_ch, in_ch, kernel],
            stride,
        )
    }

    pub(crate) fn from_parts(weight: Vec<f64>, bias: Vec<f64>, shape: [usize; 3], stride: usize) -> Self {
        assert!(stride >= 1 && shape[2] >= 1);
        Self { weight, bias, stride, weight_shape: shape, bias_shape: [shape[0]] }
    }

    pub fn in_channels(&self) -> usize {
        self.weight_shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight_shape[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight_shape[2]
    }

    fn padding(&self) -> usize {
        self.kernel() / 2
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.padding()).saturating_sub(self.kernel()) / self.stride + 1
    }

    /// Range of output positions `t` for which tap `j` reads inside the input.
    fn valid_range(&self, j: usize, len: usize, out_len: usize) -> (usize, usize) {
        let p = self.padding();
        let s = self.stride;
        let lo = if j >= p { 0 } else { (p - j).div_ceil(s) };
        // need t*s + j - p <= len - 1
        let hi_excl = if len + p < j + 1 { 0 } else { ((len - 1 + p - j) / s + 1).min(out_len) };
        (lo, hi_excl.max(lo))
    }

    pub fn forward(&self, x: &[f64], len: usize) -> (Vec<f64>, usize) {
        let (cin, cout, k) = (self.in_channels(), self.out_channels(), self.kernel());
        debug_assert_eq!(x.len(), cin * len);
        let out_len = self.out_len(len);
        let (p, s) = (self.padding(), self.stride);
        let mut y = vec![0.0; cout * out_len];
        for o in 0..cout {
            let yo = &mut y[o * out_len..(o + 1) * out_len];
            yo.fill(self.bias[o]);
            for i in 0..cin {
                let xi = &x[i * len..(i + 1) * len];
                for j in 0..k {
                    let w = self.weight[(o * cin + i) * k + j];
                    let (lo, hi) = self.valid_range(j, len, out_len);
                    for t in lo..hi {
                        yo[t] += w * xi[t * s + j - p];
                    }
                }
            }
        }
        (y, out_len)
    }

    pub fn backward(&self, x: &[f64], len: usize, dy: &[f64], grad: &mut Conv1d) -> Vec<f64> {
        let (cin, cout, k) = (self.in_channels(), self.out_channels(), self.kernel());
        let out_len = self.out_len(len);
        let (p, s) = (self.padding(), self.stride);
        let mut dx = vec![0.0; cin * len];
        for o in 0..cout {
            let dyo = &dy[o * out_len..(o + 1) * out_len];
            grad.bias[o] += dyo.iter().sum::<f64>();
            for i in 0..cin {
                let xi = &x[i * len..(i + 1) * len];
                let dxi = &mut dx[i * len..(i + 1) * len];
                for j in 0..k {
                    let widx = (o * cin + i) * k + j;
                    let w = self.weight[widx];
                    let (lo, hi) = self.valid_range(j, len, out_len);
                    let mut gw = 0.0;
                    for t in lo..hi {
                        let xt = t * s + j - p;
                        gw += dyo[t] * xi[xt];
                        dxi[xt] += w * dyo[t];
                    }
                    grad.weight[widx] += gw;
                }
            }
        }
        dx
    }
}

impl Parameterized for Conv1d {
    fn params(&self) -> Vec<(String, ParamView<'_>)> {
        vec![
            ("weight".into(), ParamView { shape: &self.weight_shape, data: &self.weight }),
            ("bias".into(), ParamView { shape: &self.bias_shape, data: &self.bias }),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Complex-valued 1-D convolution. Buffers hold `2 * channels` real rows:
/// all real parts first, then all imaginary parts. Computed as a real
/// convolution with the block weight `[[Wr, -Wi], [Wi, Wr]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexConv1d {
    pub weight_re: Vec<f64>,
    pub weight_im: Vec<f64>,
    pub bias_re: Vec<f64>,
    pub bias_im: Vec<f64>,
    pub stride: usize,
    weight_shape: [usize; 3],
    bias_shape: [usize; 1],
}

impl ComplexConv1d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / ((2 * in_ch * kernel) as f64).sqrt();
        let n = out_ch * in_ch * kernel;
        Self {
            weight_re: uniform(rng, n, bound),
            weight_im: uniform(rng, n, bound),
            bias_re: uniform(rng, out_ch, bound),
            bias_im: uniform(rng, out_ch, bound),
            stride,
            weight_shape: [out_ch, in_ch, kernel],
            bias_shape: [out_ch],
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight_shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight_shape[0]
    }

    fn as_real(&self) -> Conv1d {
        let [cout, cin, k] = self.weight_shape;
        let mut w = vec![0.0; 4 * cout * cin * k];
        let real_idx = |o: usize, i: usize, j: usize| (o * 2 * cin + i) * k + j;
        for o in 0..cout {
            for i in 0..cin {
                for j in 0..k {
                    let c = (o * cin + i) * k + j;
                    let (wr, wi) = (self.weight_re[c], self.weight_im[c]);
                    w[real_idx(o, i, j)] = wr;
                    w[real_idx(o, i + cin, j)] = -wi;
                    w[real_idx(o + cout, i, j)] = wi;
                    w[real_idx(o + cout, i + cin, j)] = wr;
                }
            }
        }
        let bias = self.bias_re.iter().chain(&self.bias_im).copied().collect();
        Conv1d::from_parts(w, bias, [2 * cout, 2 * cin, k], self.stride)
    }

    pub fn out_len(&self, len: usize) -> usize {
        self.as_real().out_len(len)
    }

    pub fn forward(&self, x: &[f64], len: usize) -> (Vec<f64>, usize) {
        self.as_real().forward(x, len)
    }

    pub fn backward(&self, x: &[f64], len: usize, dy: &[f64], grad: &mut ComplexConv1d) -> Vec<f64> {
        let real = self.as_real();
        let mut rg = real.zeros_like();
        let dx = real.backward(x, len, dy, &mut rg);
        let [cout, cin, k] = self.weight_shape;
        let real_idx = |o: usize, i: usize, j: usize| (o * 2 * cin + i) * k + j;
        for o in 0..cout {
            for i in 0..cin {
                for j in 0..k {
                    let c = (o * cin + i) * k + j;
                    grad.weight_re[c] += rg.weight[real_idx(o, i, j)] + rg.weight[real_idx(o + cout, i + cin, j)];
                    grad.weight_im[c] += rg.weight[real_idx(o + cout, i, j)] - rg.weight[real_idx(o, i + cin, j)];
                }
            }
            grad.bias_re[o] += rg.bias[o];
            grad.bias_im[o] += rg.bias[o + cout];
        }
        dx
    }
}

impl Parameterized for ComplexConv1d {
    fn params(&self) -> Vec<(String, ParamView<'_>)> {
        vec![
            ("weight_re".into(), ParamView { shape: &self.weight_shape, data: &self.weight_re }),
            ("weight_im".into(), ParamView { shape: &self.weight_shape, data: &self.weight_im }),
            ("bias_re".into(), ParamView { shape: &self.bias_shape, data: &self.bias_re }),
            ("bias_im".into(), ParamView { shape: &self.bias_shape, data: &self.bias_im }),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weight_re, &mut self.weight_im, &mut self.bias_re, &mut self.bias_im]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn naive_conv(c: &Conv1d, x: &[f64], len: usize) -> Vec<f64> {
        let (cin, cout, k) = (c.in_channels(), c.out_channels(), c.kernel());
        let p = k as isize / 2;
        let out_len = c.out_len(len);
        let mut y = vec![0.0; cout * out_len];
        for o in 0..cout {
            for t in 0..out_len {
                let mut acc = c.bias[o];
                for i in 0..cin {
                    for j in 0..k {
                        let idx = (t * c.stride) as isize + j as isize - p;
                        if idx >= 0 && (idx as usize) < len {
                            acc += c.weight[(o * cin + i) * k + j] * x[i * len + idx as usize];
                        }
                    }
                }
                y[o * out_len + t] = acc;
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut r = rng::stream(1, "t");
        for (k, s, len) in [(3, 1, 10), (5, 2, 17), (7, 2, 16), (1, 1, 4), (4, 3, 11)] {
            let c = Conv1d::new(3, 4, k, s, &mut r);
            let x = uniform(&mut r, 3 * len, 1.0);
            let (y, _) = c.forward(&x, len);
            let y2 = naive_conv(&c, &x, len);
            for (a, b) in y.iter().zip(&y2) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn complex_conv_matches_complex_arithmetic() {
        let mut r = rng::stream(2, "t");
        let c = ComplexConv1d::new(2, 3, 3, 1, &mut r);
        let len = 8;
        let x = uniform(&mut r, 4 * len, 1.0);
        let (y, out_len) = c.forward(&x, len);
        // output channel 1, position 4, by explicit complex sums
        let (o, t) = (1, 4);
        let mut acc_re = c.bias_re[o];
        let mut acc_im = c.bias_im[o];
        for i in 0..2 {
            for j in 0..3 {
                let idx = t + j;
                if idx < 1 || idx - 1 >= len {
                    continue;
                }
                let xi = idx - 1;
                let (xr, xm) = (x[i * len + xi], x[(i + 2) * len + xi]);
                let w = (o * 2 + i) * 3 + j;
                let (wr, wm) = (c.weight_re[w], c.weight_im[w]);
                acc_re += wr * xr - wm * xm;
                acc_im += wr * xm + wm * xr;
            }
        }
        assert!((y[o * out_len + t] - acc_re).abs() < 1e-12);
        assert!((y[(o + 3) * out_len + t] - acc_im).abs() < 1e-12);
    }
}
