//! Minimal 4-D tensor kernels with hand-written backward passes — just
//! enough to build, train, and gradient-check the two network
//! architectures in this crate.
//!
//! Everything runs in f64 so central-difference gradient checks stay sharp.
//! Batch items, output channels, and similar disjoint slices may be
//! processed in parallel; every reduction that crosses those boundaries runs
//! in a fixed order, so results are bit-identical for any thread count.

mod layers;
mod loss;

pub use layers::{AvgPool2d, BatchNorm2d, Conv2d, Layer, Linear, Mode, Relu};
pub use loss::{cross_entropy_loss, mse_loss};

/// Dense 4-D tensor in (batch, channels, height, width) order, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            batch,
            channels,
            height,
            width,
            data: vec![0.0; batch * channels * height * width],
        }
    }

    pub fn from_vec(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Self {
        assert_eq!(
            data.len(),
            batch * channels * height * width,
            "data length does not match dims"
        );
        Self {
            batch,
            channels,
            height,
            width,
            data,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.batch, self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn item(&self, b: usize) -> &[f64] {
        let n = self.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.item_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[((b * self.channels + c) * self.height + h) * self.width + w]
    }

    #[inline]
    pub fn at_mut(&mut self, b: usize, c: usize, h: usize, w: usize) -> &mut f64 {
        &mut self.data[((b * self.channels + c) * self.height + h) * self.width + w]
    }

    /// Select a subset of batch items, preserving order.
    pub fn gather_batch(&self, idx: &[usize]) -> Tensor4 {
        let n = self.item_len();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &b in idx {
            data.extend_from_slice(self.item(b));
        }
        Tensor4 {
            batch: idx.len(),
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// Run `f(i, chunk_i)` over consecutive equal-length chunks, in parallel when
/// the `parallel` feature is on. Chunks are disjoint, so the result never
/// depends on the thread count.
pub(crate) fn for_each_chunk<F>(data: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert_eq!(data.len() % chunk.max(1), 0);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, c) in data.chunks_mut(chunk).enumerate() {
            f(i, c);
        }
    }
}

/// Collect `f(i)` for i in 0..n, in parallel when enabled; output order is
/// fixed by index.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// C += A·B for row-major slices: A is m×k, B is k×n, C is m×n.
pub(crate) fn matmul_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow.iter()) {
                *cj += aik * bj;
            }
        }
    }
}

/// Learning-rate schedule: base value halved (or scaled by `decay_factor`)
/// every `decay_period` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdSchedule {
    pub base_lr: f64,
    pub decay_period: usize,
    pub decay_factor: f64,
}

impl SgdSchedule {
    /// The defaults used by every training run in this crate: 1e-3 halved
    /// every 15 epochs.
    pub fn standard() -> Self {
        Self {
            base_lr: 1e-3,
            decay_period: 15,
            decay_factor: 0.5,
        }
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.base_lr * self.decay_factor.powi((epoch / self.decay_period) as i32)
    }
}

/// Plain gradient-descent state: θ ← θ − λᵢ·g with the scheduled rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimState {
    pub schedule: SgdSchedule,
    pub epoch: usize,
}

impl OptimState {
    pub fn new(schedule: SgdSchedule) -> Self {
        Self { schedule, epoch: 0 }
    }

    pub fn learning_rate(&self) -> f64 {
        self.schedule.lr_at_epoch(self.epoch)
    }
}

/// One descent step over a (parameter, gradient) pair.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) {
    assert_eq!(params.len(), grads.len(), "gradient shape mismatch");
    for (p, g) in params.iter_mut().zip(grads.iter()) {
        *p -= lr * g;
    }
}
