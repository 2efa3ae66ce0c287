//! Image-quality metrics on RGB images in `[0, 1]`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::Image;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Image(format!(
            "dimension mismatch: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(sum / a.data.len() as f64)
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

fn luma(img: &Image) -> Vec<f64> {
    img.data
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM of the luma channels over every fully contained 11x11 window.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Image(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width, a.height
        )));
    }
    let (x, y) = (luma(a), luma(b));
    let w = gaussian_window();
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let (width, height) = (a.width, a.height);
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=height - SSIM_WINDOW {
        for c in 0..=width - SSIM_WINDOW {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let k = w[i] * w[j];
                    let idx = (r + i) * width + c + j;
                    let (u, v) = (x[idx], y[idx]);
                    mx += k * u;
                    my += k * v;
                    sxx += k * u * u;
                    syy += k * v * v;
                    sxy += k * u * v;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cxy = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageScore {
    pub image_id: String,
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-image scores plus an aggregate whose PSNR is the mean of per-image PSNRs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub split: String,
    pub checkpoint: String,
    pub images: Vec<ImageScore>,
    pub aggregate: ImageScore,
}

impl EvalReport {
    pub fn new(split: &str, checkpoint: &str, images: Vec<ImageScore>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidInput("report needs at least one image".into()));
        }
        let n = images.len() as f64;
        let mean = |f: fn(&ImageScore) -> f64| images.iter().map(f).sum::<f64>() / n;
        let aggregate = ImageScore {
            image_id: "ALL".into(),
            mse: mean(|s| s.mse),
            psnr_db: mean(|s| s.psnr_db),
            ssim: mean(|s| s.ssim),
        };
        Ok(Self {
            split: split.into(),
            checkpoint: checkpoint.into(),
            images,
            aggregate,
        })
    }

    /// Scores `predicted` against `target` pairwise.
    pub fn score(id: impl Into<String>, predicted: &Image, target: &Image) -> Result<ImageScore> {
        let m = mse(predicted, target)?;
        let s = if predicted.width >= SSIM_WINDOW && predicted.height >= SSIM_WINDOW {
            ssim(predicted, target)?
        } else {
            f64::NAN
        };
        Ok(ImageScore {
            image_id: id.into(),
            mse: m,
            psnr_db: psnr_from_mse(m, 1.0),
            ssim: s,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("image_id,mse,psnr_db,ssim\n");
        for r in self.images.iter().chain([&self.aggregate]) {
            s.push_str(&format!("{},{:e},{:.6},{:.6}\n", r.image_id, r.mse, r.psnr_db, r.ssim));
        }
        s
    }
}
