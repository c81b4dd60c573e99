//! Network architectures: the region classifier (RC) and the deep residual
//! channel estimator (DRN), their parameter and multiplication counters, and
//! self-describing checkpoints.
//!
//! Both networks consume a pilot observation packed as a (batch, 2, Q, 1)
//! tensor (real and imaginary channels). The classifier emits T logits; the
//! estimator emits 2·M(N+1) reals holding the re/im halves of the cascaded
//! channel vector.

use crate::rng;
use crate::tensor::{
    AvgPool2d, BatchNorm2d, Conv2d, Layer, Linear, Mode, Relu, Tensor4,
};
use num_complex::Complex64;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("bad spec: {0}")]
    BadSpec(String),
}

/// One architectural block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockSpec {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        norm: bool,
        relu: bool,
    },
    /// Bottleneck: 1×1 in→mid, 3×3 mid→mid (pad 1), 1×1 mid→out, with a 1×1
    /// in→out projection on the skip path and ReLU after the addition.
    Residual {
        in_ch: usize,
        mid_ch: usize,
        out_ch: usize,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

/// Ordered block list plus input/output contract.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    /// (channels, height, width) of one input item.
    pub input: (usize, usize, usize),
    pub blocks: Vec<BlockSpec>,
    pub output_len: usize,
}

/// Region classifier: three 3×3 conv stages (2→32→64→128, each +BN+ReLU,
/// padding 1 so the Q×1 spatial extent survives), a 1×1 reduction back to 2
/// channels, and a dense head onto T logits.
pub fn build_rc(n_slots: usize, n_regions: usize) -> NetSpec {
    assert!(n_slots >= 3 && n_regions >= 2);
    NetSpec {
        input: (2, n_slots, 1),
        blocks: vec![
            BlockSpec::Conv { in_ch: 2, out_ch: 32, kernel: 3, stride: 1, padding: 1, norm: true, relu: true },
            BlockSpec::Conv { in_ch: 32, out_ch: 64, kernel: 3, stride: 1, padding: 1, norm: true, relu: true },
            BlockSpec::Conv { in_ch: 64, out_ch: 128, kernel: 3, stride: 1, padding: 1, norm: true, relu: true },
            BlockSpec::Conv { in_ch: 128, out_ch: 2, kernel: 1, stride: 1, padding: 0, norm: false, relu: false },
            BlockSpec::Linear { in_features: 2 * n_slots, out_features: n_regions },
        ],
        output_len: n_regions,
    }
}

/// Deep residual channel estimator: a widening 3×3 conv (pad 2 grows Q×1 to
/// (Q+2)×3), three bottleneck blocks, a 1×1 reduction, average pooling, and
/// a dense head onto the 2·M(N+1) re/im output.
pub fn build_drn(n_slots: usize, n_antennas: usize, n_surface: usize) -> NetSpec {
    assert!(n_slots >= 3);
    let head_in = 2 * ((n_slots + 1) / 2);
    let out = 2 * n_antennas * (n_surface + 1);
    NetSpec {
        input: (2, n_slots, 1),
        blocks: vec![
            BlockSpec::Conv { in_ch: 2, out_ch: 32, kernel: 3, stride: 1, padding: 2, norm: true, relu: true },
            BlockSpec::Residual { in_ch: 32, mid_ch: 16, out_ch: 64 },
            BlockSpec::Residual { in_ch: 64, mid_ch: 32, out_ch: 128 },
            BlockSpec::Residual { in_ch: 128, mid_ch: 64, out_ch: 256 },
            BlockSpec::Conv { in_ch: 256, out_ch: 2, kernel: 1, stride: 1, padding: 0, norm: false, relu: false },
            BlockSpec::AvgPool { kernel: 3, stride: 2 },
            BlockSpec::Linear { in_features: head_in, out_features: out },
        ],
        output_len: out,
    }
}

impl NetSpec {
    /// (channels, height, width) after each block.
    pub fn shape_trace(&self) -> Vec<(usize, usize, usize)> {
        let mut shapes = Vec::with_capacity(self.blocks.len());
        let (mut c, mut h, mut w) = self.input;
        for b in &self.blocks {
            match *b {
                BlockSpec::Conv { out_ch, kernel, stride, padding, .. } => {
                    h = (h + 2 * padding - kernel) / stride + 1;
                    w = (w + 2 * padding - kernel) / stride + 1;
                    c = out_ch;
                }
                BlockSpec::Residual { out_ch, .. } => c = out_ch,
                BlockSpec::AvgPool { kernel, stride } => {
                    h = (h - kernel) / stride + 1;
                    w = (w - kernel) / stride + 1;
                }
                BlockSpec::Linear { out_features, .. } => {
                    c = out_features;
                    h = 1;
                    w = 1;
                }
            }
            shapes.push((c, h, w));
        }
        shapes
    }
}

/// Parameter census. `table` follows the architecture-table convention:
/// conv entries count weights only, the dense head counts weights plus its
/// bias. Conv biases and normalization scale/shift are reported separately.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub table_per_block: Vec<u64>,
    pub table_total: u64,
    pub conv_bias: u64,
    pub norm_params: u64,
}

pub fn param_count(spec: &NetSpec) -> ParamCount {
    let mut per = Vec::with_capacity(spec.blocks.len());
    let mut conv_bias = 0u64;
    let mut norm_params = 0u64;
    for b in &spec.blocks {
        let entry = match *b {
            BlockSpec::Conv { in_ch, out_ch, kernel, norm, .. } => {
                conv_bias += out_ch as u64;
                if norm {
                    norm_params += 2 * out_ch as u64;
                }
                (kernel * kernel * in_ch * out_ch) as u64
            }
            BlockSpec::Residual { in_ch, mid_ch, out_ch } => {
                conv_bias += (mid_ch + mid_ch + out_ch + out_ch) as u64;
                norm_params += 2 * (mid_ch + mid_ch) as u64;
                (in_ch * mid_ch + 9 * mid_ch * mid_ch + mid_ch * out_ch + in_ch * out_ch) as u64
            }
            BlockSpec::AvgPool { .. } => 0,
            BlockSpec::Linear { in_features, out_features } => {
                (in_features * out_features + out_features) as u64
            }
        };
        per.push(entry);
    }
    ParamCount {
        table_total: per.iter().sum(),
        table_per_block: per,
        conv_bias,
        norm_params,
    }
}

/// Multiplication count of one forward pass (convolution and dense products
/// only, matching the closed forms below), counted block by block from the
/// shape trace.
pub fn flops_count(spec: &NetSpec) -> u64 {
    let (mut c, mut h, mut w) = spec.input;
    let mut total = 0u64;
    for b in &spec.blocks {
        match *b {
            BlockSpec::Conv { in_ch, out_ch, kernel, stride, padding, .. } => {
                debug_assert_eq!(c, in_ch);
                h = (h + 2 * padding - kernel) / stride + 1;
                w = (w + 2 * padding - kernel) / stride + 1;
                total += (kernel * kernel * in_ch * out_ch * h * w) as u64;
                c = out_ch;
            }
            BlockSpec::Residual { in_ch, mid_ch, out_ch } => {
                let per_pos = in_ch * mid_ch + 9 * mid_ch * mid_ch + mid_ch * out_ch + in_ch * out_ch;
                total += (per_pos * h * w) as u64;
                c = out_ch;
            }
            BlockSpec::AvgPool { kernel, stride } => {
                h = (h - kernel) / stride + 1;
                w = (w - kernel) / stride + 1;
            }
            BlockSpec::Linear { in_features, out_features } => {
                debug_assert_eq!(c * h * w, in_features);
                total += (in_features * out_features) as u64;
                c = out_features;
                h = 1;
                w = 1;
            }
        }
    }
    total
}

/// Closed-form RC multiplication count: 92992·Q + 2·Q·T.
pub fn rc_flops_closed_form(n_slots: usize, n_regions: usize) -> u64 {
    (92_992 * n_slots + 2 * n_slots * n_regions) as u64
}

/// Closed-form DRN multiplication count:
/// 374208·(Q+2) + 4·M·(N+1)·floor((Q+1)/2).
pub fn drn_flops_closed_form(n_slots: usize, n_antennas: usize, n_surface: usize) -> u64 {
    (374_208 * (n_slots + 2) + 4 * n_antennas * (n_surface + 1) * ((n_slots + 1) / 2)) as u64
}

#[derive(Debug)]
enum BlockState {
    Plain(Vec<Layer>),
    Residual {
        main: Vec<Layer>,
        skip: Conv2d,
        post: Relu,
        cached_sum: bool,
    },
}

/// Instantiated network: spec plus live layer state.
#[derive(Debug)]
pub struct NetState {
    pub spec: NetSpec,
    blocks: Vec<BlockState>,
    /// Ablation toggle: when false, residual skip additions are dropped
    /// (shapes and parameter census unchanged).
    pub residual_enabled: bool,
}

fn conv_stack(
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    norm: bool,
    relu: bool,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<Layer> {
    let mut layers = vec![Layer::Conv(Conv2d::new(in_ch, out_ch, kernel, stride, padding, rng))];
    if norm {
        layers.push(Layer::Norm(BatchNorm2d::new(out_ch)));
    }
    if relu {
        layers.push(Layer::Relu(Relu::new()));
    }
    layers
}

impl NetState {
    pub fn new(spec: &NetSpec, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let blocks = spec
            .blocks
            .iter()
            .map(|b| match *b {
                BlockSpec::Conv { in_ch, out_ch, kernel, stride, padding, norm, relu } => {
                    BlockState::Plain(conv_stack(in_ch, out_ch, kernel, stride, padding, norm, relu, &mut rng))
                }
                BlockSpec::Residual { in_ch, mid_ch, out_ch } => {
                    let mut main = conv_stack(in_ch, mid_ch, 1, 1, 0, true, true, &mut rng);
                    main.extend(conv_stack(mid_ch, mid_ch, 3, 1, 1, true, true, &mut rng));
                    main.extend(conv_stack(mid_ch, out_ch, 1, 1, 0, false, false, &mut rng));
                    let skip = Conv2d::new(in_ch, out_ch, 1, 1, 0, &mut rng);
                    BlockState::Residual { main, skip, post: Relu::new(), cached_sum: false }
                }
                BlockSpec::AvgPool { kernel, stride } => {
                    BlockState::Plain(vec![Layer::Pool(AvgPool2d::new(kernel, stride))])
                }
                BlockSpec::Linear { in_features, out_features } => {
                    BlockState::Plain(vec![Layer::Dense(Linear::new(in_features, out_features, &mut rng))])
                }
            })
            .collect();
        Self {
            spec: spec.clone(),
            blocks,
            residual_enabled: true,
        }
    }

    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> Tensor4 {
        let (c, h, w) = self.spec.input;
        assert_eq!(
            (x.channels, x.height, x.width),
            (c, h, w),
            "input dims do not match the network contract"
        );
        let mut cur = x.clone();
        for block in self.blocks.iter_mut() {
            cur = match block {
                BlockState::Plain(layers) => {
                    let mut t = cur;
                    for l in layers.iter_mut() {
                        t = l.forward(&t, mode);
                    }
                    t
                }
                BlockState::Residual { main, skip, post, cached_sum } => {
                    let mut t = cur.clone();
                    for l in main.iter_mut() {
                        t = l.forward(&t, mode);
                    }
                    if self.residual_enabled {
                        let s = skip.forward(&cur);
                        for (a, b) in t.data.iter_mut().zip(s.data.iter()) {
                            *a += b;
                        }
                        *cached_sum = true;
                    } else {
                        *cached_sum = false;
                    }
                    post.forward(&t)
                }
            };
        }
        cur
    }

    pub fn backward(&mut self, grad: &Tensor4) -> Tensor4 {
        let mut g = grad.clone();
        for block in self.blocks.iter_mut().rev() {
            g = match block {
                BlockState::Plain(layers) => {
                    let mut t = g;
                    for l in layers.iter_mut().rev() {
                        t = l.backward(&t);
                    }
                    t
                }
                BlockState::Residual { main, skip, post, cached_sum } => {
                    let d_sum = post.backward(&g);
                    let mut t = d_sum.clone();
                    for l in main.iter_mut().rev() {
                        t = l.backward(&t);
                    }
                    if *cached_sum {
                        let s = skip.backward(&d_sum);
                        for (a, b) in t.data.iter_mut().zip(s.data.iter()) {
                            *a += b;
                        }
                    }
                    t
                }
            };
        }
        g
    }

    pub fn visit_params(&mut self, f: &mut impl FnMut(&mut [f64], &mut [f64])) {
        for block in self.blocks.iter_mut() {
            match block {
                BlockState::Plain(layers) => {
                    for l in layers.iter_mut() {
                        l.visit_params(f);
                    }
                }
                BlockState::Residual { main, skip, .. } => {
                    for l in main.iter_mut() {
                        l.visit_params(f);
                    }
                    f(&mut skip.weights, &mut skip.grad_weights);
                    f(&mut skip.bias, &mut skip.grad_bias);
                }
            }
        }
    }

    pub fn visit_state(&mut self, f: &mut impl FnMut(&mut [f64])) {
        for block in self.blocks.iter_mut() {
            match block {
                BlockState::Plain(layers) => {
                    for l in layers.iter_mut() {
                        l.visit_state(f);
                    }
                }
                BlockState::Residual { main, .. } => {
                    for l in main.iter_mut() {
                        l.visit_state(f);
                    }
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |_, g| g.fill(0.0));
    }

    pub fn param_len(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p, _| n += p.len());
        n
    }

    pub fn params_flat(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |p, _| out.extend_from_slice(p));
        out
    }

    pub fn grads_flat(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, g| out.extend_from_slice(g));
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        self.visit_params(&mut |p, _| {
            p.copy_from_slice(&flat[off..off + p.len()]);
            off += p.len();
        });
        assert_eq!(off, flat.len(), "flat parameter length mismatch");
    }

    pub fn state_flat(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_state(&mut |s| out.extend_from_slice(s));
        out
    }

    pub fn set_state_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        self.visit_state(&mut |s| {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        });
        assert_eq!(off, flat.len(), "flat state length mismatch");
    }

    /// Apply θ ← θ − lr·g over every trainable tensor.
    pub fn sgd_step(&mut self, lr: f64) {
        self.visit_params(&mut |p, g| crate::tensor::sgd_step(p, g, lr));
    }
}

impl Clone for NetState {
    fn clone(&self) -> Self {
        // Layer state (caches) is cheap to clone; rebuilding through the
        // parameter vectors would lose running statistics mid-epoch.
        let blocks = self
            .blocks
            .iter()
            .map(|b| match b {
                BlockState::Plain(layers) => BlockState::Plain(layers.clone()),
                BlockState::Residual { main, skip, post, cached_sum } => BlockState::Residual {
                    main: main.clone(),
                    skip: skip.clone(),
                    post: post.clone(),
                    cached_sum: *cached_sum,
                },
            })
            .collect();
        Self {
            spec: self.spec.clone(),
            blocks,
            residual_enabled: self.residual_enabled,
        }
    }
}

/// Pack complex pilot observations into the (batch, 2, Q, 1) input layout.
pub fn pack_observations(obs: &[Vec<Complex64>]) -> Tensor4 {
    let q = obs[0].len();
    let mut t = Tensor4::zeros(obs.len(), 2, q, 1);
    for (b, y) in obs.iter().enumerate() {
        assert_eq!(y.len(), q, "ragged observation batch");
        for (i, v) in y.iter().enumerate() {
            *t.at_mut(b, 0, i, 0) = v.re;
            *t.at_mut(b, 1, i, 0) = v.im;
        }
    }
    t
}

/// Pack complex labels as [re block | im block] rows.
pub fn pack_labels(labels: &[Vec<Complex64>]) -> Tensor4 {
    let d = labels[0].len();
    let mut t = Tensor4::zeros(labels.len(), 2 * d, 1, 1);
    for (b, l) in labels.iter().enumerate() {
        assert_eq!(l.len(), d, "ragged label batch");
        for (i, v) in l.iter().enumerate() {
            t.data[b * 2 * d + i] = v.re;
            t.data[b * 2 * d + d + i] = v.im;
        }
    }
    t
}

/// Reassemble one output row into the complex estimate.
pub fn unpack_estimate(row: &[f64]) -> Vec<Complex64> {
    assert!(row.len() % 2 == 0, "re/im halves must pair up");
    let d = row.len() / 2;
    (0..d).map(|i| Complex64::new(row[i], row[d + i])).collect()
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"NFCP";
const CHECKPOINT_VERSION: u32 = 1;

fn spec_to_text(spec: &NetSpec) -> String {
    let mut s = format!(
        "input {} {} {}\noutput {}\n",
        spec.input.0, spec.input.1, spec.input.2, spec.output_len
    );
    for b in &spec.blocks {
        match *b {
            BlockSpec::Conv { in_ch, out_ch, kernel, stride, padding, norm, relu } => {
                s.push_str(&format!(
                    "conv {in_ch} {out_ch} {kernel} {stride} {padding} {} {}\n",
                    norm as u8, relu as u8
                ));
            }
            BlockSpec::Residual { in_ch, mid_ch, out_ch } => {
                s.push_str(&format!("residual {in_ch} {mid_ch} {out_ch}\n"));
            }
            BlockSpec::AvgPool { kernel, stride } => {
                s.push_str(&format!("avgpool {kernel} {stride}\n"));
            }
            BlockSpec::Linear { in_features, out_features } => {
                s.push_str(&format!("linear {in_features} {out_features}\n"));
            }
        }
    }
    s
}

fn spec_from_text(text: &str) -> Result<NetSpec, NetError> {
    let mut input = None;
    let mut output_len = None;
    let mut blocks = Vec::new();
    for line in text.lines() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.is_empty() {
            continue;
        }
        let num = |i: usize| -> Result<usize, NetError> {
            parts
                .get(i)
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| NetError::BadSpec(format!("bad line: {line}")))
        };
        match parts[0] {
            "input" => input = Some((num(1)?, num(2)?, num(3)?)),
            "output" => output_len = Some(num(1)?),
            "conv" => blocks.push(BlockSpec::Conv {
                in_ch: num(1)?,
                out_ch: num(2)?,
                kernel: num(3)?,
                stride: num(4)?,
                padding: num(5)?,
                norm: num(6)? != 0,
                relu: num(7)? != 0,
            }),
            "residual" => blocks.push(BlockSpec::Residual {
                in_ch: num(1)?,
                mid_ch: num(2)?,
                out_ch: num(3)?,
            }),
            "avgpool" => blocks.push(BlockSpec::AvgPool { kernel: num(1)?, stride: num(2)? }),
            "linear" => blocks.push(BlockSpec::Linear {
                in_features: num(1)?,
                out_features: num(2)?,
            }),
            other => return Err(NetError::BadSpec(format!("unknown block kind: {other}"))),
        }
    }
    Ok(NetSpec {
        input: input.ok_or_else(|| NetError::BadSpec("missing input line".into()))?,
        blocks,
        output_len: output_len.ok_or_else(|| NetError::BadSpec("missing output line".into()))?,
    })
}

/// Write a self-describing checkpoint: magic, version, spec text, then every
/// parameter tensor followed by the normalization running statistics, all
/// little-endian f64.
pub fn save_checkpoint(net: &mut NetState, path: &Path) -> Result<(), NetError> {
    let mut tensors: Vec<Vec<f64>> = Vec::new();
    net.visit_params(&mut |p, _| tensors.push(p.to_vec()));
    net.visit_state(&mut |s| tensors.push(s.to_vec()));

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let spec_text = spec_to_text(&net.spec);
    out.extend_from_slice(&(spec_text.len() as u32).to_le_bytes());
    out.extend_from_slice(spec_text.as_bytes());
    out.push(net.residual_enabled as u8);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Load a checkpoint written by `save_checkpoint`, rebuilding the network
/// from the embedded spec.
pub fn load_checkpoint(path: &Path) -> Result<NetState, NetError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = 0usize;
    let take = |cur: &mut usize, n: usize| -> Result<&[u8], NetError> {
        if *cur + n > bytes.len() {
            return Err(NetError::BadCheckpoint("truncated file".into()));
        }
        let s = &bytes[*cur..*cur + n];
        *cur += n;
        Ok(s)
    };
    if take(&mut cur, 4)? != CHECKPOINT_MAGIC {
        return Err(NetError::BadCheckpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(NetError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let spec_len = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
    let spec_text = std::str::from_utf8(take(&mut cur, spec_len)?)
        .map_err(|_| NetError::BadCheckpoint("spec text not utf-8".into()))?
        .to_string();
    let spec = spec_from_text(&spec_text)?;
    let residual_enabled = take(&mut cur, 1)?[0] != 0;
    let n_tensors = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let len = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as usize;
        let raw = take(&mut cur, len * 8)?;
        let mut t = Vec::with_capacity(len);
        for chunk in raw.chunks_exact(8) {
            t.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        tensors.push(t);
    }

    let mut net = NetState::new(&spec, 0);
    net.residual_enabled = residual_enabled;
    let mut idx = 0;
    let mut fill_err = None;
    net.visit_params(&mut |p, _| {
        if let Some(t) = tensors.get(idx) {
            if t.len() == p.len() {
                p.copy_from_slice(t);
            } else {
                fill_err = Some(format!("tensor {idx} length {} != {}", t.len(), p.len()));
            }
        } else {
            fill_err = Some(format!("missing tensor {idx}"));
        }
        idx += 1;
    });
    net.visit_state(&mut |s| {
        if let Some(t) = tensors.get(idx) {
            if t.len() == s.len() {
                s.copy_from_slice(t);
            } else {
                fill_err = Some(format!("state tensor {idx} length mismatch"));
            }
        } else {
            fill_err = Some(format!("missing state tensor {idx}"));
        }
        idx += 1;
    });
    if idx != n_tensors {
        return Err(NetError::BadCheckpoint(format!(
            "checkpoint holds {n_tensors} tensors, network expects {idx}"
        )));
    }
    if let Some(e) = fill_err {
        return Err(NetError::BadCheckpoint(e));
    }
    Ok(net)
}
