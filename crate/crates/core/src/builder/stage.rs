//! One level of the streaming cascade.
//!
//! A stage receives its source frames in slot order and emits Gaussian and
//! Laplacian frames as soon as their kernel support has arrived. Only the
//! frames still reachable by a pending window are kept, so residency is a
//! small multiple of the kernel length regardless of sequence length.

use std::collections::VecDeque;
use std::ops::Range;

use crate::error::Result;
use crate::frame::quantize_u8;
use crate::kernels::{accumulate, kernel_for_stride, Kernel};

pub(crate) struct LevelStage {
    kernel: Kernel,
    stride: usize,
    n_src: usize,
    n_out: usize,
    frame_len: usize,
    quantize: bool,
    src: VecDeque<Vec<f32>>,
    src_base: usize,
    gauss: VecDeque<Vec<f32>>,
    gauss_base: usize,
    next_g: usize,
    next_l: usize,
    pool: Vec<Vec<f32>>,
    scratch: Vec<f32>,
    peak: usize,
}

impl LevelStage {
    pub(crate) fn new(stride: u8, n_src: usize, frame_len: usize, quantize: bool) -> Result<Self> {
        let kernel = kernel_for_stride(stride as u32)?;
        Ok(LevelStage {
            kernel,
            stride: stride as usize,
            n_src,
            n_out: n_src.div_ceil(stride as usize),
            frame_len,
            quantize,
            src: VecDeque::new(),
            src_base: 0,
            gauss: VecDeque::new(),
            gauss_base: 0,
            next_g: 0,
            next_l: 0,
            pool: Vec::new(),
            scratch: vec![0.0; frame_len],
            peak: 0,
        })
    }

    pub(crate) fn peak_resident(&self) -> usize {
        self.peak
    }

    fn received(&self) -> usize {
        self.src_base + self.src.len()
    }

    fn src_frame(&self, i: usize) -> &[f32] {
        &self.src[i - self.src_base]
    }

    pub(crate) fn gauss_frame(&self, k: usize) -> &[f32] {
        &self.gauss[k - self.gauss_base]
    }

    fn take_buffer(&mut self) -> Vec<f32> {
        self.pool.pop().unwrap_or_else(|| vec![0.0; self.frame_len])
    }

    fn trim(&mut self) {
        let k = &self.kernel;
        let mut keep_src = self.next_l;
        if self.next_g < self.n_out {
            let c = k.sample_index(self.next_g, self.n_src);
            keep_src = keep_src.min(c.saturating_sub(k.offset()));
        }
        while self.src_base < keep_src && !self.src.is_empty() {
            let buf = self.src.pop_front().unwrap();
            self.pool.push(buf);
            self.src_base += 1;
        }
        let keep_gauss = if self.next_l < self.n_src {
            self.next_l.saturating_sub(k.offset()) / self.stride
        } else {
            self.next_g
        };
        while self.gauss_base < keep_gauss && !self.gauss.is_empty() {
            let buf = self.gauss.pop_front().unwrap();
            self.pool.push(buf);
            self.gauss_base += 1;
        }
    }

    /// Feeds the next source frame. Laplacian frames go to `emit_laplacian`;
    /// the returned range names Gaussian frames that became available (read
    /// them with [`LevelStage::gauss_frame`] before the next push).
    pub(crate) fn push(
        &mut self,
        frame: &[f32],
        mut emit_laplacian: impl FnMut(usize, &[f32]) -> Result<()>,
    ) -> Result<Range<usize>> {
        self.trim();
        debug_assert!(self.received() < self.n_src, "stage received too many frames");
        let mut buf = self.take_buffer();
        buf.copy_from_slice(frame);
        self.src.push_back(buf);

        let received = self.received();
        let first_new = self.next_g;
        while self.next_g < self.n_out {
            let c = self.kernel.sample_index(self.next_g, self.n_src);
            let need = (c + self.kernel.reach()).min(self.n_src - 1);
            if need >= received {
                break;
            }
            let mut out = self.take_buffer();
            {
                let kernel = &self.kernel;
                let n = self.n_src;
                accumulate(&mut out, kernel, |j| self.src_frame(kernel.tap_index(c, j, 0, n)));
            }
            if self.quantize {
                for v in out.iter_mut() {
                    *v = quantize_u8(*v) as f32;
                }
            }
            self.gauss.push_back(out);
            self.next_g += 1;
        }

        while self.next_l < received {
            let t = self.next_l;
            let needed_g =
                ((t + self.kernel.reach()).min(self.n_src - 1) / self.stride).min(self.n_out - 1);
            if needed_g >= self.next_g {
                break;
            }
            let mut fstar = std::mem::take(&mut self.scratch);
            {
                let kernel = &self.kernel;
                let n = self.n_src;
                let s = self.stride;
                let last = self.n_out - 1;
                accumulate(&mut fstar, kernel, |j| {
                    let u = kernel.tap_index(t, j, 0, n);
                    self.gauss_frame((u / s).min(last))
                });
            }
            for (l, &v) in fstar.iter_mut().zip(self.src_frame(t)) {
                *l = v - *l;
            }
            let res = emit_laplacian(t, &fstar);
            self.scratch = fstar;
            res?;
            self.next_l += 1;
        }

        self.peak = self.peak.max(self.src.len() + self.gauss.len());
        Ok(first_new..self.next_g)
    }

    pub(crate) fn is_complete(&self) -> bool {
        self.next_g == self.n_out && self.next_l == self.n_src
    }
}
