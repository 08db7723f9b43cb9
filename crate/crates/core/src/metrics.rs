//! Fidelity metrics. Inputs are `[-1, 1]` tensors; every metric first maps
//! them to the `[0, 1]` display range (clamping).

use crate::error::{Error, Result};
use crate::parallel::Parallelism;
use crate::tensor::ImageTensor;

/// Side of the square SSIM window.
pub const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let a = a.to_unit_range();
    let b = b.to_unit_range();
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64)
}

/// `10 log10(1 / MSE)` in dB, `+inf` for identical images.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Summed-area table with a zero border row and column.
struct Integral {
    stride: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(h: usize, w: usize, value: impl Fn(usize, usize) -> f64) -> Self {
        let stride = w + 1;
        let mut sums = vec![0.0; (h + 1) * stride];
        for r in 0..h {
            let mut row = 0.0;
            for c in 0..w {
                row += value(r, c);
                sums[(r + 1) * stride + c + 1] = sums[r * stride + c + 1] + row;
            }
        }
        Self { stride, sums }
    }

    fn window(&self, r: usize, c: usize, size: usize) -> f64 {
        let s = self.stride;
        self.sums[(r + size) * s + c + size] - self.sums[r * s + c + size] - self.sums[(r + size) * s + c]
            + self.sums[r * s + c]
    }
}

/// Mean SSIM over all `8x8` windows (stride 1, uniform weights), averaged
/// across channels.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let shape = a.shape();
    if shape.height < SSIM_WINDOW || shape.width < SSIM_WINDOW {
        return Err(Error::InvalidParameter(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {shape}"
        )));
    }
    let a = a.to_unit_range();
    let b = b.to_unit_range();
    let (h, w) = (shape.height, shape.width);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    for ch in 0..shape.channels {
        let pa = |r: usize, c: usize| a.get(ch, r, c);
        let pb = |r: usize, c: usize| b.get(ch, r, c);
        let sa = Integral::new(h, w, pa);
        let sb = Integral::new(h, w, pb);
        let saa = Integral::new(h, w, |r, c| pa(r, c) * pa(r, c));
        let sbb = Integral::new(h, w, |r, c| pb(r, c) * pb(r, c));
        let sab = Integral::new(h, w, |r, c| pa(r, c) * pb(r, c));
        let mut acc = 0.0;
        let mut count = 0usize;
        for r in 0..=(h - SSIM_WINDOW) {
            for c in 0..=(w - SSIM_WINDOW) {
                let ma = sa.window(r, c, SSIM_WINDOW) / n;
                let mb = sb.window(r, c, SSIM_WINDOW) / n;
                let va = (saa.window(r, c, SSIM_WINDOW) / n - ma * ma).max(0.0);
                let vb = (sbb.window(r, c, SSIM_WINDOW) / n - mb * mb).max(0.0);
                let cov = sab.window(r, c, SSIM_WINDOW) / n - ma * mb;
                acc += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    Ok(total / shape.channels as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricRow {
    pub fn compute(a: &ImageTensor, b: &ImageTensor) -> Result<Self> {
        let mse = mse(a, b)?;
        Ok(Self {
            mse,
            psnr: psnr_from_mse(mse),
            ssim: ssim(a, b)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub mean: MetricRow,
}

/// Metrics for aligned image pairs plus dataset means. The mean PSNR is
/// infinite when any pair is identical.
pub fn evaluate(a: &[ImageTensor], b: &[ImageTensor], parallelism: Parallelism) -> Result<MetricReport> {
    if a.len() != b.len() {
        return Err(Error::Misaligned(format!(
            "{} images vs {} images",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Empty("metric input"));
    }
    let rows = parallelism.try_map(a, |i, x| MetricRow::compute(x, &b[i]))?;
    let n = rows.len() as f64;
    let mean = MetricRow {
        mse: rows.iter().map(|r| r.mse).sum::<f64>() / n,
        psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
    };
    Ok(MetricReport { rows, mean })
}
