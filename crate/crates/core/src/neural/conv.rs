use rand::Rng;

use super::gradcheck::Parameterized;
use super::tensor::Tensor;
use crate::error::{dims, Result};

/// 2-D cross-correlation over `[C, H, W]` inputs with square kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[C_out, C_in, K, K]`
    pub weight: Tensor,
    /// `[C_out]`
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

/// What `backward` needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    in_shape: [usize; 3],
    out_hw: (usize, usize),
    /// im2col matrix, `[C_in*K*K, H'*W']`.
    col: Vec<f64>,
}

/// `c = a * b + beta * c` with explicit strides, row-major `m x n` output.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_strides: (usize, usize), b: &[f64], b_strides: (usize, usize), c: &mut [f64], beta: f64) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    assert!(c.len() >= m * n);
    // SAFETY: the assertions above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: Tensor::he_uniform(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
            bias: Tensor::zeros(&[out_channels]),
            stride,
            pad,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let [c, h, w] = match input {
            [c, h, w] => [*c, *h, *w],
            _ => return Err(dims(format!("conv2d expects [C, H, W], got {input:?}"))),
        };
        if c != self.in_channels() {
            return Err(dims(format!("conv2d expects {} input channels, got {c}", self.in_channels())));
        }
        let k = self.kernel();
        if self.stride == 0 || h + 2 * self.pad < k || w + 2 * self.pad < k {
            return Err(dims(format!("kernel {k} does not fit input {h}x{w} with pad {}", self.pad)));
        }
        Ok(vec![
            self.out_channels(),
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        ])
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        let out_shape = self.output_shape(x.shape())?;
        let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (cout, ho, wo) = (out_shape[0], out_shape[1], out_shape[2]);
        let k = self.kernel();
        let p = ho * wo;
        let rows = cin * k * k;
        let mut col = vec![0.0; rows * p];
        let xd = x.data();
        for c in 0..cin {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut col[row * p..(row + 1) * p];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &xd[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * wo + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        let mut out = vec![0.0; cout * p];
        gemm(cout, rows, p, self.weight.data(), (rows, 1), &col, (p, 1), &mut out, 0.0);
        for (o, chunk) in out.chunks_exact_mut(p).enumerate() {
            let b = self.bias.data()[o];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        Ok((
            Tensor::new(out_shape, out)?,
            ConvCache {
                in_shape: [cin, h, w],
                out_hw: (ho, wo),
                col,
            },
        ))
    }

    /// Accumulates weight and bias gradients and returns the input gradient.
    pub fn backward(&self, cache: &ConvCache, dy: &Tensor, grad_weight: &mut Tensor, grad_bias: &mut Tensor) -> Tensor {
        let [cin, h, w] = cache.in_shape;
        let (ho, wo) = cache.out_hw;
        let k = self.kernel();
        let cout = self.out_channels();
        let p = ho * wo;
        let rows = cin * k * k;
        let dyd = dy.data();
        assert_eq!(dyd.len(), cout * p, "upstream gradient shape");

        gemm(cout, p, rows, dyd, (p, 1), &cache.col, (1, p), grad_weight.data_mut(), 1.0);
        for (o, chunk) in dyd.chunks_exact(p).enumerate() {
            grad_bias.data_mut()[o] += chunk.iter().sum::<f64>();
        }

        let mut dcol = vec![0.0; rows * p];
        gemm(rows, cout, p, self.weight.data(), (1, rows), dyd, (p, 1), &mut dcol, 0.0);
        let mut dx = vec![0.0; cin * h * w];
        for c in 0..cin {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &dcol[row * p..(row + 1) * p];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (c * h + iy as usize) * w;
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dx[base + ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![cin, h, w], dx).expect("input shape")
    }
}

impl Parameterized for Conv2d {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::gradient_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conv(weight: Tensor, bias: Tensor, stride: usize, pad: usize) -> Conv2d {
        Conv2d { weight, bias, stride, pad }
    }

    #[test]
    fn one_by_one_kernel_scales() {
        let c = conv(Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap(), Tensor::zeros(&[1]), 1, 0);
        let x = Tensor::new(vec![1, 3, 3], vec![1.0; 9]).unwrap();
        let (y, _) = c.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert!(y.data().iter().all(|v| *v == 2.0));
    }

    #[test]
    fn identity_kernel_with_padding() {
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let c = conv(Tensor::new(vec![1, 1, 3, 3], w).unwrap(), Tensor::zeros(&[1]), 1, 1);
        let x = Tensor::new(vec![1, 4, 5], (0..20).map(|v| v as f64 * 0.7 - 3.0).collect()).unwrap();
        let (y, _) = c.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn output_shape_formula_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = Conv2d::new(3, 4, 3, 2, 1, &mut rng);
        assert_eq!(c.output_shape(&[3, 9, 10]).unwrap(), vec![4, 5, 5]);
        assert!(c.output_shape(&[2, 9, 10]).is_err());
        assert!(c.output_shape(&[3, 9]).is_err());
        let big = Conv2d::new(1, 1, 5, 1, 0, &mut rng);
        assert!(big.output_shape(&[1, 3, 3]).is_err());
    }

    #[test]
    fn naive_cross_correlation_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = Conv2d::new(2, 3, 3, 2, 1, &mut rng);
        let x = Tensor::he_uniform(&[2, 6, 7], 1, &mut rng);
        let (y, _) = c.forward(&x).unwrap();
        let (ho, wo) = (y.shape()[1], y.shape()[2]);
        for o in 0..3 {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = c.bias.data()[o];
                    for ci in 0..2 {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let iy = (oy * 2 + ki) as isize - 1;
                                let ix = (ox * 2 + kj) as isize - 1;
                                if iy >= 0 && iy < 6 && ix >= 0 && ix < 7 {
                                    s += c.weight.data()[((o * 2 + ci) * 3 + ki) * 3 + kj]
                                        * x.data()[(ci * 6 + iy as usize) * 7 + ix as usize];
                                }
                            }
                        }
                    }
                    assert!((y.data()[(o * ho + oy) * wo + ox] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut c = Conv2d::new(2, 3, 3, 1, 1, &mut rng);
        c.bias = Tensor::he_uniform(&[3], 1, &mut rng);
        let x = Tensor::he_uniform(&[2, 5, 5], 1, &mut rng);
        let proj = Tensor::he_uniform(&[3, 5, 5], 1, &mut rng);
        let loss = |m: &Conv2d, x: &Tensor| -> f64 {
            let (y, _) = m.forward(x).unwrap();
            y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = c.forward(&x).unwrap();
        let dy = proj.clone();
        let mut gw = Tensor::zeros(c.weight.shape());
        let mut gb = Tensor::zeros(c.bias.shape());
        let dx = c.backward(&cache, &dy, &mut gw, &mut gb);
        let err = gradient_check(&mut c, |m| loss(m, &x), &[gw, gb], 1e-5, usize::MAX, 0);
        assert!(err < 1e-6, "param err {err}");

        // Input gradient, treating the input as the only parameter.
        struct Input(Tensor);
        impl Parameterized for Input {
            fn params(&self) -> Vec<&Tensor> {
                vec![&self.0]
            }
            fn params_mut(&mut self) -> Vec<&mut Tensor> {
                vec![&mut self.0]
            }
        }
        let mut inp = Input(x.clone());
        let err = gradient_check(&mut inp, |i| loss(&c, &i.0), &[dx], 1e-5, usize::MAX, 0);
        assert!(err < 1e-6, "input err {err}");
    }
}
