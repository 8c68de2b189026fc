use rand::Rng;

use super::conv::{Conv2d, ConvCache};
use super::gradcheck::Parameterized;
use super::tensor::Tensor;
use crate::error::{dims, Result};

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out, in]`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Tensor::he_uniform(&[output, input], input, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input() {
            return Err(dims(format!("dense expects {} inputs, got {}", self.input(), x.len())));
        }
        Ok(self
            .weight
            .data()
            .chunks_exact(self.input())
            .zip(self.bias.data())
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect())
    }

    pub fn backward(&self, x: &[f64], dy: &[f64], grad_weight: &mut Tensor, grad_bias: &mut Tensor) -> Vec<f64> {
        let n = self.input();
        let mut dx = vec![0.0; n];
        for (o, &g) in dy.iter().enumerate() {
            grad_bias.data_mut()[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = &self.weight.data()[o * n..(o + 1) * n];
            let grow = &mut grad_weight.data_mut()[o * n..(o + 1) * n];
            for i in 0..n {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }
}

/// Two 3x3 convolutions with a ReLU between them, plus a shortcut:
/// `out = shortcut(x) + conv2(relu(conv1(x)))`.
///
/// The shortcut is the identity unless the block changes the channel count
/// or the stride, in which case it is a 1x1 projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub projection: Option<Conv2d>,
}

#[derive(Debug, Clone)]
pub struct ResidualCache {
    c1: ConvCache,
    hidden: Tensor,
    c2: ConvCache,
    proj: Option<ConvCache>,
}

impl ResidualBlock {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let conv1 = Conv2d::new(in_channels, out_channels, 3, stride, 1, rng);
        let conv2 = Conv2d::new(out_channels, out_channels, 3, 1, 1, rng);
        let projection = (in_channels != out_channels || stride != 1).then(|| Conv2d::new(in_channels, out_channels, 1, stride, 0, rng));
        Self { conv1, conv2, projection }
    }

    /// Zeroes the second convolution so the inner path outputs zero.
    pub fn zero_inner(&mut self) {
        self.conv2.weight.fill(0.0);
        self.conv2.bias.fill(0.0);
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mid = self.conv1.output_shape(input)?;
        let out = self.conv2.output_shape(&mid)?;
        let short = match &self.projection {
            Some(p) => p.output_shape(input)?,
            None => input.to_vec(),
        };
        if short != out {
            return Err(dims(format!("residual shortcut {short:?} does not match inner path {out:?}")));
        }
        Ok(out)
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, ResidualCache)> {
        let (a, c1) = self.conv1.forward(x)?;
        let hidden = relu(&a);
        let (b, c2) = self.conv2.forward(&hidden)?;
        let (mut out, proj) = match &self.projection {
            Some(p) => {
                let (s, cp) = p.forward(x)?;
                (s, Some(cp))
            }
            None => (x.clone(), None),
        };
        out.add_assign(&b);
        Ok((out, ResidualCache { c1, hidden, c2, proj }))
    }

    fn backward(&self, cache: &ResidualCache, dy: &Tensor, grads: &mut [Tensor]) -> Tensor {
        let (g1, rest) = grads.split_at_mut(2);
        let (g2, gp) = rest.split_at_mut(2);
        let (gw2, gb2) = g2.split_at_mut(1);
        let mut dh = self.conv2.backward(&cache.c2, dy, &mut gw2[0], &mut gb2[0]);
        relu_backward(&cache.hidden, &mut dh);
        let (gw1, gb1) = g1.split_at_mut(1);
        let mut dx = self.conv1.backward(&cache.c1, &dh, &mut gw1[0], &mut gb1[0]);
        match (&self.projection, &cache.proj) {
            (Some(p), Some(cp)) => {
                let (gwp, gbp) = gp.split_at_mut(1);
                dx.add_assign(&p.backward(cp, dy, &mut gwp[0], &mut gbp[0]));
            }
            _ => dx.add_assign(dy),
        }
        dx
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.conv1.weight, &self.conv1.bias, &self.conv2.weight, &self.conv2.bias];
        if let Some(p) = &self.projection {
            v.extend([&p.weight, &p.bias]);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
        ];
        if let Some(p) = &mut self.projection {
            v.extend([&mut p.weight, &mut p.bias]);
        }
        v
    }
}

fn relu(x: &Tensor) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v.max(0.0)).collect()).expect("same shape")
}

/// Masks `dy` in place where the ReLU output was zero.
fn relu_backward(out: &Tensor, dy: &mut Tensor) {
    dy.data_mut().iter_mut().zip(out.data()).for_each(|(g, &o)| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    Relu,
    Residual(ResidualBlock),
    /// `[C, H, W] -> [C]`
    GlobalAvgPool,
    Dense(Dense),
}

#[derive(Debug, Clone)]
enum LayerCache {
    Conv(ConvCache),
    Relu(Tensor),
    Residual(ResidualCache),
    Pool(Vec<usize>),
    Dense(Vec<f64>),
}

/// Forward-pass record consumed by [`Sequential::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    caches: Vec<LayerCache>,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::Residual(_) => "residual",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::Dense(_) => "dense",
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv(c) => c.output_shape(input),
            Layer::Relu => Ok(input.to_vec()),
            Layer::Residual(r) => r.output_shape(input),
            Layer::GlobalAvgPool => match input {
                [c, h, w] if h * w > 0 => Ok(vec![*c]),
                _ => Err(dims(format!("global pooling expects [C, H, W], got {input:?}"))),
            },
            Layer::Dense(d) => {
                if input == [d.input()] {
                    Ok(vec![d.output()])
                } else {
                    Err(dims(format!("dense expects [{}], got {input:?}", d.input())))
                }
            }
        }
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerCache)> {
        Ok(match self {
            Layer::Conv(c) => {
                let (y, cache) = c.forward(x)?;
                (y, LayerCache::Conv(cache))
            }
            Layer::Relu => {
                let y = relu(x);
                (y.clone(), LayerCache::Relu(y))
            }
            Layer::Residual(r) => {
                let (y, cache) = r.forward(x)?;
                (y, LayerCache::Residual(cache))
            }
            Layer::GlobalAvgPool => {
                let shape = x.shape().to_vec();
                let hw = shape[1] * shape[2];
                let y = x.data().chunks_exact(hw).map(|c| c.iter().sum::<f64>() / hw as f64).collect();
                (Tensor::from_vec(y), LayerCache::Pool(shape))
            }
            Layer::Dense(d) => (Tensor::from_vec(d.forward(x.data())?), LayerCache::Dense(x.data().to_vec())),
        })
    }

    fn backward(&self, cache: &LayerCache, dy: &Tensor, grads: &mut [Tensor]) -> Tensor {
        match (self, cache) {
            (Layer::Conv(c), LayerCache::Conv(cc)) => {
                let (gw, gb) = grads.split_at_mut(1);
                c.backward(cc, dy, &mut gw[0], &mut gb[0])
            }
            (Layer::Relu, LayerCache::Relu(out)) => {
                let mut dx = dy.clone();
                relu_backward(out, &mut dx);
                dx
            }
            (Layer::Residual(r), LayerCache::Residual(rc)) => r.backward(rc, dy, grads),
            (Layer::GlobalAvgPool, LayerCache::Pool(shape)) => {
                let hw = shape[1] * shape[2];
                let data = dy.data().iter().flat_map(|&g| std::iter::repeat_n(g / hw as f64, hw)).collect();
                Tensor::new(shape.clone(), data).expect("pool input shape")
            }
            (Layer::Dense(d), LayerCache::Dense(x)) => {
                let (gw, gb) = grads.split_at_mut(1);
                Tensor::from_vec(d.backward(x, dy.data(), &mut gw[0], &mut gb[0]))
            }
            _ => unreachable!("cache produced by the same layer"),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv(c) => vec![&c.weight, &c.bias],
            Layer::Residual(r) => r.params(),
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Relu | Layer::GlobalAvgPool => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Residual(r) => r.params_mut(),
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Relu | Layer::GlobalAvgPool => vec![],
        }
    }
}

/// Ordered layer list with shapes checked at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    input_shape: Vec<usize>,
    shapes: Vec<Vec<usize>>,
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let mut shapes = Vec::with_capacity(layers.len());
        let mut cur = input_shape.clone();
        for (i, l) in layers.iter().enumerate() {
            cur = l
                .output_shape(&cur)
                .map_err(|e| dims(format!("layer {i} ({}): {e}", l.kind())))?;
            shapes.push(cur.clone());
        }
        Ok(Self {
            input_shape,
            shapes,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().map_or(&self.input_shape, |s| s.as_slice())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Output shape of every layer.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_trace(x).map(|(y, _)| y)
    }

    pub fn forward_trace(&self, x: &Tensor) -> Result<(Tensor, Trace)> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(dims(format!("network expects {:?}, got {:?}", self.input_shape, x.shape())));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for l in &self.layers {
            let (y, cache) = l.forward(&cur)?;
            y.ensure_finite(l.kind())?;
            caches.push(cache);
            cur = y;
        }
        Ok((cur, Trace { caches }))
    }

    /// Backpropagates `dy`; `grads` follows the order of [`Sequential::params`].
    pub fn backward(&self, trace: &Trace, dy: &Tensor, grads: &mut [Tensor]) -> Tensor {
        let counts: Vec<usize> = self.layers.iter().map(|l| l.params().len()).collect();
        let mut offsets = Vec::with_capacity(counts.len());
        let mut acc = 0;
        for c in &counts {
            offsets.push(acc);
            acc += c;
        }
        assert_eq!(acc, grads.len(), "one gradient tensor per parameter tensor");
        let mut g = dy.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            g = l.backward(&trace.caches[i], &g, &mut grads[offsets[i]..offsets[i] + counts[i]]);
        }
        g
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

impl Parameterized for Sequential {
    fn params(&self) -> Vec<&Tensor> {
        Sequential::params(self)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        Sequential::params_mut(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::gradient_check;
    use crate::neural::tensor::zeros_like;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn weighted_sum(y: &Tensor, w: &Tensor) -> f64 {
        y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    }

    fn check(net: &mut Sequential, x: &Tensor, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Tensor::he_uniform(net.output_shape(), 1, &mut rng);
        let (y, trace) = net.forward_trace(x).unwrap();
        let mut grads = zeros_like(&net.params());
        net.backward(&trace, &w, &mut grads);
        let _ = y;
        gradient_check(net, |n| weighted_sum(&n.forward(x).unwrap(), &w), &grads, 1e-5, usize::MAX, 0)
    }

    #[test]
    fn residual_block_zero_inner_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut block = ResidualBlock::new(3, 3, 1, &mut rng);
        block.zero_inner();
        let x = Tensor::he_uniform(&[3, 6, 5], 1, &mut rng);
        let (y, _) = block.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn residual_projection_when_shape_changes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(ResidualBlock::new(8, 16, 2, &mut rng).projection.is_some());
        assert!(ResidualBlock::new(8, 8, 1, &mut rng).projection.is_none());
        let net = Sequential::new(vec![8, 9, 9], vec![Layer::Residual(ResidualBlock::new(8, 16, 2, &mut rng))]).unwrap();
        assert_eq!(net.output_shape(), &[16, 5, 5]);
    }

    #[test]
    fn shape_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bad = Sequential::new(
            vec![2, 4, 4],
            vec![Layer::Conv(Conv2d::new(2, 3, 3, 1, 1, &mut rng)), Layer::GlobalAvgPool, Layer::Dense(Dense::new(4, 2, &mut rng))],
        );
        assert!(bad.is_err());
        let net = Sequential::new(vec![2, 4, 4], vec![Layer::GlobalAvgPool]).unwrap();
        assert!(net.forward(&Tensor::zeros(&[2, 4, 5])).is_err());
    }

    #[test]
    fn residual_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (cin, cout, stride) in [(2, 2, 1), (2, 4, 2)] {
            let mut block = ResidualBlock::new(cin, cout, stride, &mut rng);
            block.conv2.bias = Tensor::he_uniform(&[cout], 1, &mut rng);
            let mut net = Sequential::new(vec![cin, 6, 6], vec![Layer::Residual(block)]).unwrap();
            let x = Tensor::he_uniform(&[cin, 6, 6], 1, &mut rng);
            let err = check(&mut net, &x, 1);
            assert!(err < 1e-6, "{cin}->{cout}/{stride}: {err}");
        }
    }

    #[test]
    fn dense_pool_relu_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = Sequential::new(
            vec![3, 4, 4],
            vec![
                Layer::Conv(Conv2d::new(3, 4, 3, 1, 1, &mut rng)),
                Layer::Relu,
                Layer::GlobalAvgPool,
                Layer::Dense(Dense::new(4, 5, &mut rng)),
                Layer::Relu,
                Layer::Dense(Dense::new(5, 3, &mut rng)),
            ],
        )
        .unwrap();
        let x = Tensor::he_uniform(&[3, 4, 4], 1, &mut rng);
        let err = check(&mut net, &x, 2);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn forward_is_deterministic_and_rejects_nan() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = Sequential::new(
            vec![2, 5, 5],
            vec![Layer::Conv(Conv2d::new(2, 2, 3, 1, 1, &mut rng)), Layer::Relu, Layer::GlobalAvgPool],
        )
        .unwrap();
        let x = Tensor::he_uniform(&[2, 5, 5], 1, &mut rng);
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
        let mut bad = x.clone();
        bad.data_mut()[3] = f64::NAN;
        assert!(matches!(net.forward(&bad), Err(crate::Error::Numeric(_))));
    }
}
