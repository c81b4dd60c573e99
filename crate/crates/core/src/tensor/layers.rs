//! Layer kernels: cross-correlation conv, batch norm, ReLU, average pool,
//! and the dense head. Each layer caches what its backward pass needs and
//! accumulates parameter gradients until `zero_grad`.

use super::{for_each_chunk, map_indexed, matmul_acc, Tensor4};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn fan_in_uniform(n: usize, fan_in: usize, rng: &mut impl Rng) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// 2-D cross-correlation (no kernel flip) with square kernel, zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// [out][in][k][k], row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weights: Vec<f64>,
    pub grad_bias: Vec<f64>,
    cols: Vec<f64>,
    in_dims: (usize, usize, usize, usize),
    out_dims: (usize, usize),
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weights: fan_in_uniform(out_channels * fan_in, fan_in, rng),
            bias: vec![0.0; out_channels],
            grad_weights: vec![0.0; out_channels * fan_in],
            grad_bias: vec![0.0; out_channels],
            cols: Vec::new(),
            in_dims: (0, 0, 0, 0),
            out_dims: (0, 0),
        }
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    pub fn zero_grad(&mut self) {
        self.grad_weights.fill(0.0);
        self.grad_bias.fill(0.0);
    }

    fn im2col(&self, x: &[f64], h: usize, w: usize, out: &mut [f64]) {
        let (oh, ow) = self.out_dims;
        let k = self.kernel;
        let n = oh * ow;
        for ci in 0..self.in_channels {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for kh in 0..k {
                for kw in 0..k {
                    let row = &mut out[((ci * k + kh) * k + kw) * n..((ci * k + kh) * k + kw + 1) * n];
                    for ohi in 0..oh {
                        let ih = (ohi * self.stride + kh) as isize - self.padding as isize;
                        for owi in 0..ow {
                            let iw = (owi * self.stride + kw) as isize - self.padding as isize;
                            row[ohi * ow + owi] = if ih >= 0
                                && ih < h as isize
                                && iw >= 0
                                && iw < w as isize
                            {
                                plane[ih as usize * w + iw as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize, out: &mut [f64]) {
        let (oh, ow) = self.out_dims;
        let k = self.kernel;
        let n = oh * ow;
        for ci in 0..self.in_channels {
            let plane = &mut out[ci * h * w..(ci + 1) * h * w];
            for kh in 0..k {
                for kw in 0..k {
                    let row = &cols[((ci * k + kh) * k + kw) * n..((ci * k + kh) * k + kw + 1) * n];
                    for ohi in 0..oh {
                        let ih = (ohi * self.stride + kh) as isize - self.padding as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for owi in 0..ow {
                            let iw = (owi * self.stride + kw) as isize - self.padding as isize;
                            if iw >= 0 && iw < w as isize {
                                plane[ih as usize * w + iw as usize] += row[ohi * ow + owi];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        assert_eq!(x.channels, self.in_channels, "conv input channel mismatch");
        let (oh, ow) = self.out_spatial(x.height, x.width);
        assert!(oh >= 1 && ow >= 1, "conv output collapses to nothing");
        self.in_dims = x.dims();
        self.out_dims = (oh, ow);
        let k2c = self.in_channels * self.kernel * self.kernel;
        let n = oh * ow;
        let mut cols = std::mem::take(&mut self.cols);
        cols.clear();
        cols.resize(x.batch * k2c * n, 0.0);

        // im2col per batch item
        {
            let (h, w) = (x.height, x.width);
            let conv = &*self;
            let x_ref = &x.data;
            let item = x.item_len();
            for_each_chunk(&mut cols, k2c * n, |b, chunk| {
                conv.im2col(&x_ref[b * item..(b + 1) * item], h, w, chunk);
            });
        }
        self.cols = cols;

        let mut out = Tensor4::zeros(x.batch, self.out_channels, oh, ow);
        let cols = &self.cols;
        let weights = &self.weights;
        let bias = &self.bias;
        let co = self.out_channels;
        for_each_chunk(&mut out.data, co * n, |b, chunk| {
            for (c, row) in chunk.chunks_mut(n).enumerate() {
                row.fill(bias[c]);
            }
            matmul_acc(chunk, weights, &cols[b * k2c * n..(b + 1) * k2c * n], co, k2c, n);
        });
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor4) -> Tensor4 {
        let (b, _, h, w) = self.in_dims;
        let (oh, ow) = self.out_dims;
        assert_eq!(grad_out.dims(), (b, self.out_channels, oh, ow), "stale forward record");
        let k2c = self.in_channels * self.kernel * self.kernel;
        let n = oh * ow;
        let cols = &self.cols;

        // weight gradients: parallel over output channels, batch summed in order
        {
            let gout = &grad_out.data;
            for_each_chunk(&mut self.grad_weights, k2c, |co, wrow| {
                for bi in 0..b {
                    let gslice = &gout[(bi * self.out_channels + co) * n..(bi * self.out_channels + co + 1) * n];
                    let pcols = &cols[bi * k2c * n..(bi + 1) * k2c * n];
                    for (kk, acc) in wrow.iter_mut().enumerate() {
                        let prow = &pcols[kk * n..(kk + 1) * n];
                        let mut dot = 0.0;
                        for (g, p) in gslice.iter().zip(prow.iter()) {
                            dot += g * p;
                        }
                        *acc += dot;
                    }
                }
            });
            for_each_chunk(&mut self.grad_bias, 1, |co, slot| {
                let mut acc = 0.0;
                for bi in 0..b {
                    let gslice = &gout[(bi * self.out_channels + co) * n..(bi * self.out_channels + co + 1) * n];
                    acc += gslice.iter().sum::<f64>();
                }
                slot[0] += acc;
            });
        }

        // input gradients: parallel over batch items
        let mut grad_in = Tensor4::zeros(b, self.in_channels, h, w);
        {
            let conv = &*self;
            let gout = &grad_out.data;
            let item = self.in_channels * h * w;
            let weights = &self.weights;
            let co_n = self.out_channels;
            for_each_chunk(&mut grad_in.data, item, |bi, chunk| {
                let gslice = &gout[bi * co_n * n..(bi + 1) * co_n * n];
                let mut dcols = vec![0.0; k2c * n];
                for co in 0..co_n {
                    let grow = &gslice[co * n..(co + 1) * n];
                    let wrow = &weights[co * k2c..(co + 1) * k2c];
                    for (kk, &wv) in wrow.iter().enumerate() {
                        let drow = &mut dcols[kk * n..(kk + 1) * n];
                        for (d, g) in drow.iter_mut().zip(grow.iter()) {
                            *d += wv * g;
                        }
                    }
                }
                conv.col2im(&dcols, h, w, chunk);
            });
        }
        grad_in
    }
}

/// Per-channel batch normalization with learned scale/shift and running
/// statistics for eval mode.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    xhat: Vec<f64>,
    ivar: Vec<f64>,
    in_dims: (usize, usize, usize, usize),
    trained_forward: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            eps: 1e-5,
            momentum: 0.1,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            grad_gamma: vec![0.0; channels],
            grad_beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            xhat: Vec::new(),
            ivar: Vec::new(),
            in_dims: (0, 0, 0, 0),
            trained_forward: false,
        }
    }

    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> Tensor4 {
        assert_eq!(x.channels, self.channels, "batch-norm channel mismatch");
        if mode == Mode::Train {
            assert!(x.batch >= 2, "training-mode batch norm needs batch >= 2");
        }
        self.in_dims = x.dims();
        self.trained_forward = mode == Mode::Train;
        let (bsz, c, h, w) = x.dims();
        let plane = h * w;
        let n = (bsz * plane) as f64;

        let stats: Vec<(f64, f64)> = match mode {
            Mode::Train => map_indexed(c, |ci| {
                let mut sum = 0.0;
                let mut sumsq = 0.0;
                for b in 0..bsz {
                    let base = (b * c + ci) * plane;
                    for v in &x.data[base..base + plane] {
                        sum += v;
                        sumsq += v * v;
                    }
                }
                let mean = sum / n;
                let var = (sumsq / n - mean * mean).max(0.0);
                (mean, var)
            }),
            Mode::Eval => (0..c)
                .map(|ci| (self.running_mean[ci], self.running_var[ci]))
                .collect(),
        };

        if mode == Mode::Train {
            for ci in 0..c {
                let (mean, var) = stats[ci];
                // running variance uses the unbiased estimate
                let unbiased = if n > 1.0 { var * n / (n - 1.0) } else { var };
                self.running_mean[ci] =
                    (1.0 - self.momentum) * self.running_mean[ci] + self.momentum * mean;
                self.running_var[ci] =
                    (1.0 - self.momentum) * self.running_var[ci] + self.momentum * unbiased;
            }
        }

        self.ivar = stats.iter().map(|&(_, v)| 1.0 / (v + self.eps).sqrt()).collect();
        self.xhat = vec![0.0; x.len()];
        let mut out = Tensor4::zeros(bsz, c, h, w);
        {
            let ivar = &self.ivar;
            let gamma = &self.gamma;
            let beta = &self.beta;
            let xd = &x.data;
            let item = c * plane;
            // fill xhat and out together, parallel over batch items
            let xhat_ptr = &mut self.xhat;
            for_each_chunk(xhat_ptr, item, |b, xh_chunk| {
                for ci in 0..c {
                    let (mean, _) = stats[ci];
                    let iv = ivar[ci];
                    let base = (b * c + ci) * plane;
                    for (dst, src) in xh_chunk[ci * plane..(ci + 1) * plane]
                        .iter_mut()
                        .zip(xd[base..base + plane].iter())
                    {
                        *dst = (src - mean) * iv;
                    }
                }
            });
            let xhat = &self.xhat;
            for_each_chunk(&mut out.data, item, |b, chunk| {
                for ci in 0..c {
                    let g = gamma[ci];
                    let be = beta[ci];
                    let base = (b * c + ci) * plane;
                    for (dst, src) in chunk[ci * plane..(ci + 1) * plane]
                        .iter_mut()
                        .zip(xhat[base..base + plane].iter())
                    {
                        *dst = g * src + be;
                    }
                }
            });
        }
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor4) -> Tensor4 {
        assert_eq!(grad_out.dims(), self.in_dims, "stale forward record");
        let (bsz, c, h, w) = self.in_dims;
        let plane = h * w;
        let n = (bsz * plane) as f64;

        // per-channel reductions, batch order fixed
        let sums: Vec<(f64, f64)> = map_indexed(c, |ci| {
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for b in 0..bsz {
                let base = (b * c + ci) * plane;
                for (g, xh) in grad_out.data[base..base + plane]
                    .iter()
                    .zip(self.xhat[base..base + plane].iter())
                {
                    s1 += g;
                    s2 += g * xh;
                }
            }
            (s1, s2)
        });
        for ci in 0..c {
            self.grad_beta[ci] += sums[ci].0;
            self.grad_gamma[ci] += sums[ci].1;
        }

        let mut grad_in = Tensor4::zeros(bsz, c, h, w);
        let item = c * plane;
        let gamma = &self.gamma;
        let ivar = &self.ivar;
        let xhat = &self.xhat;
        let god = &grad_out.data;
        let train = self.trained_forward;
        for_each_chunk(&mut grad_in.data, item, |b, chunk| {
            for ci in 0..c {
                let (s1, s2) = sums[ci];
                let scale = gamma[ci] * ivar[ci];
                let base = (b * c + ci) * plane;
                let dst = &mut chunk[ci * plane..(ci + 1) * plane];
                if train {
                    for ((d, g), xh) in dst
                        .iter_mut()
                        .zip(god[base..base + plane].iter())
                        .zip(xhat[base..base + plane].iter())
                    {
                        *d = scale * (g - s1 / n - xh * s2 / n);
                    }
                } else {
                    for (d, g) in dst.iter_mut().zip(god[base..base + plane].iter()) {
                        *d = scale * g;
                    }
                }
            }
        });
        grad_in
    }
}

/// Rectified linear unit.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<f64>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        self.mask = x.data.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        let mut out = x.clone();
        for v in out.data.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor4) -> Tensor4 {
        assert_eq!(grad_out.len(), self.mask.len(), "stale forward record");
        let mut g = grad_out.clone();
        for (v, m) in g.data.iter_mut().zip(self.mask.iter()) {
            *v *= m;
        }
        g
    }
}

/// Average pooling without padding.
#[derive(Debug, Clone)]
pub struct AvgPool2d {
    pub kernel: usize,
    pub stride: usize,
    in_dims: (usize, usize, usize, usize),
}

impl AvgPool2d {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self {
            kernel,
            stride,
            in_dims: (0, 0, 0, 0),
        }
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - self.kernel) / self.stride + 1, (w - self.kernel) / self.stride + 1)
    }

    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        assert!(x.height >= self.kernel && x.width >= self.kernel, "pool window exceeds input");
        self.in_dims = x.dims();
        let (oh, ow) = self.out_spatial(x.height, x.width);
        let mut out = Tensor4::zeros(x.batch, x.channels, oh, ow);
        let scale = 1.0 / (self.kernel * self.kernel) as f64;
        let (c, h, w) = (x.channels, x.height, x.width);
        let xd = &x.data;
        let k = self.kernel;
        let s = self.stride;
        for_each_chunk(&mut out.data, c * oh * ow, |b, chunk| {
            for ci in 0..c {
                let plane = &xd[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                for ohi in 0..oh {
                    for owi in 0..ow {
                        let mut acc = 0.0;
                        for kh in 0..k {
                            for kw in 0..k {
                                acc += plane[(ohi * s + kh) * w + (owi * s + kw)];
                            }
                        }
                        chunk[(ci * oh + ohi) * ow + owi] = acc * scale;
                    }
                }
            }
        });
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor4) -> Tensor4 {
        let (bsz, c, h, w) = self.in_dims;
        let (oh, ow) = self.out_spatial(h, w);
        assert_eq!(grad_out.dims(), (bsz, c, oh, ow), "stale forward record");
        let scale = 1.0 / (self.kernel * self.kernel) as f64;
        let mut grad_in = Tensor4::zeros(bsz, c, h, w);
        let god = &grad_out.data;
        let k = self.kernel;
        let s = self.stride;
        for_each_chunk(&mut grad_in.data, c * h * w, |b, chunk| {
            for ci in 0..c {
                let plane = &mut chunk[ci * h * w..(ci + 1) * h * w];
                let gplane = &god[(b * c + ci) * oh * ow..(b * c + ci + 1) * oh * ow];
                for ohi in 0..oh {
                    for owi in 0..ow {
                        let g = gplane[ohi * ow + owi] * scale;
                        for kh in 0..k {
                            for kw in 0..k {
                                plane[(ohi * s + kh) * w + (owi * s + kw)] += g;
                            }
                        }
                    }
                }
            }
        });
        grad_in
    }
}

/// Dense layer over the flattened (channels·height·width) features.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// [out][in], row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weights: Vec<f64>,
    pub grad_bias: Vec<f64>,
    input: Vec<f64>,
    in_dims: (usize, usize, usize, usize),
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        Self {
            in_features,
            out_features,
            weights: fan_in_uniform(out_features * in_features, in_features, rng),
            bias: vec![0.0; out_features],
            grad_weights: vec![0.0; out_features * in_features],
            grad_bias: vec![0.0; out_features],
            input: Vec::new(),
            in_dims: (0, 0, 0, 0),
        }
    }

    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        assert_eq!(x.item_len(), self.in_features, "dense input feature mismatch");
        self.in_dims = x.dims();
        self.input = x.data.clone();
        let mut out = Tensor4::zeros(x.batch, self.out_features, 1, 1);
        let weights = &self.weights;
        let bias = &self.bias;
        let xin = &self.input;
        let nf = self.in_features;
        let no = self.out_features;
        for_each_chunk(&mut out.data, no, |b, chunk| {
            let xb = &xin[b * nf..(b + 1) * nf];
            for (o, dst) in chunk.iter_mut().enumerate() {
                let wrow = &weights[o * nf..(o + 1) * nf];
                let mut acc = bias[o];
                for (wv, xv) in wrow.iter().zip(xb.iter()) {
                    acc += wv * xv;
                }
                *dst = acc;
            }
        });
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor4) -> Tensor4 {
        let (bsz, c, h, w) = self.in_dims;
        assert_eq!(grad_out.dims(), (bsz, self.out_features, 1, 1), "stale forward record");
        let nf = self.in_features;
        let no = self.out_features;
        let xin = &self.input;
        let god = &grad_out.data;
        for_each_chunk(&mut self.grad_weights, nf, |o, wrow| {
            for b in 0..bsz {
                let g = god[b * no + o];
                if g != 0.0 {
                    let xb = &xin[b * nf..(b + 1) * nf];
                    for (wv, xv) in wrow.iter_mut().zip(xb.iter()) {
                        *wv += g * xv;
                    }
                }
            }
        });
        for (o, gb) in self.grad_bias.iter_mut().enumerate() {
            for b in 0..bsz {
                *gb += god[b * no + o];
            }
        }
        let mut grad_in = Tensor4::zeros(bsz, c, h, w);
        let weights = &self.weights;
        for_each_chunk(&mut grad_in.data, nf, |b, chunk| {
            for o in 0..no {
                let g = god[b * no + o];
                if g != 0.0 {
                    let wrow = &weights[o * nf..(o + 1) * nf];
                    for (d, wv) in chunk.iter_mut().zip(wrow.iter()) {
                        *d += g * wv;
                    }
                }
            }
        });
        grad_in
    }
}

/// Dispatch wrapper so networks can hold a flat layer list.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    Norm(BatchNorm2d),
    Relu(Relu),
    Pool(AvgPool2d),
    Dense(Linear),
}

impl Layer {
    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> Tensor4 {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::Norm(l) => l.forward(x, mode),
            Layer::Relu(l) => l.forward(x),
            Layer::Pool(l) => l.forward(x),
            Layer::Dense(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, grad: &Tensor4) -> Tensor4 {
        match self {
            Layer::Conv(l) => l.backward(grad),
            Layer::Norm(l) => l.backward(grad),
            Layer::Relu(l) => l.backward(grad),
            Layer::Pool(l) => l.backward(grad),
            Layer::Dense(l) => l.backward(grad),
        }
    }

    /// Visit (parameters, gradients) pairs in a fixed order.
    pub fn visit_params(&mut self, f: &mut impl FnMut(&mut [f64], &mut [f64])) {
        match self {
            Layer::Conv(l) => {
                f(&mut l.weights, &mut l.grad_weights);
                f(&mut l.bias, &mut l.grad_bias);
            }
            Layer::Norm(l) => {
                f(&mut l.gamma, &mut l.grad_gamma);
                f(&mut l.beta, &mut l.grad_beta);
            }
            Layer::Dense(l) => {
                f(&mut l.weights, &mut l.grad_weights);
                f(&mut l.bias, &mut l.grad_bias);
            }
            Layer::Relu(_) | Layer::Pool(_) => {}
        }
    }

    /// Visit non-trainable state (batch-norm running statistics).
    pub fn visit_state(&mut self, f: &mut impl FnMut(&mut [f64])) {
        if let Layer::Norm(l) = self {
            f(&mut l.running_mean);
            f(&mut l.running_var);
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |_, g| g.fill(0.0));
    }
}
