//! Rendering a trained field at dataset frames and scoring it.

use crate::error::Result;
use crate::fields::RadianceField;
use crate::metrics::{EvalReport, ImageScore};
use crate::render::{render_image, RenderConfig, RenderedImage};
use crate::scene::{SceneDataset, Split};

/// Renders frame `index` of `ds` at its own pose, time and resolution.
pub fn render_frame(
    field: &RadianceField,
    ds: &SceneDataset,
    index: usize,
    samples_per_ray: usize,
) -> Result<RenderedImage> {
    let f = &ds.frames[index];
    let cfg = RenderConfig {
        samples_per_ray,
        background: ds.background,
    };
    render_image(&f.camera, f.time, field, ds.bounds.t_near, ds.bounds.t_far, &cfg)
}

/// Squared depth error over pixels whose reference depth is positive
/// (rays that hit geometry). `None` when no pixel qualifies.
pub fn foreground_depth_mse(rendered: &[f32], reference: &[f32]) -> Option<f64> {
    let (sum, n) = rendered
        .iter()
        .zip(reference)
        .filter(|(_, &r)| r > 0.0)
        .fold((0.0, 0usize), |(s, n), (&a, &b)| {
            (s + (a as f64 - b as f64).powi(2), n + 1)
        });
    (n > 0).then(|| sum / n as f64)
}

/// Per-frame scores plus mean foreground depth error where depth is available.
pub struct SplitEval {
    pub report: EvalReport,
    pub depth_mse: Option<f64>,
}

pub fn evaluate_split(
    field: &RadianceField,
    ds: &SceneDataset,
    split: Split,
    samples_per_ray: usize,
    checkpoint_id: &str,
) -> Result<SplitEval> {
    let mut scores: Vec<ImageScore> = Vec::new();
    let mut depth = Vec::new();
    for (i, f) in ds.frames_in(split) {
        let r = render_frame(field, ds, i, samples_per_ray)?;
        scores.push(EvalReport::score(f.file.clone(), &r.rgb, &f.image)?);
        if let Some(d) = f.depth.as_deref().and_then(|d| foreground_depth_mse(&r.depth, d)) {
            depth.push(d);
        }
    }
    let report = EvalReport::new(split.as_str(), checkpoint_id, scores)?;
    let depth_mse = (!depth.is_empty()).then(|| depth.iter().sum::<f64>() / depth.len() as f64);
    Ok(SplitEval { report, depth_mse })
}

/// Scores of a restoration run against clean ground truth.
pub struct RestorationEval {
    /// Renders of the trained field vs the clean frames.
    pub restored: EvalReport,
    /// The degraded training inputs (nearest-upsampled when smaller) vs the clean frames.
    pub input: EvalReport,
    pub renders: Vec<(usize, RenderedImage)>,
}

/// Renders every `split` frame of `clean` at clean resolution and scores
/// both the renders and the corresponding `degraded` frames.
pub fn evaluate_restoration(
    field: &RadianceField,
    clean: &SceneDataset,
    degraded: &SceneDataset,
    split: Split,
    samples_per_ray: usize,
    checkpoint_id: &str,
) -> Result<RestorationEval> {
    if clean.frames.len() != degraded.frames.len() || clean.width % degraded.width != 0 {
        return Err(crate::Error::InvalidInput(
            "degraded dataset does not match the clean one".into(),
        ));
    }
    let factor = clean.width / degraded.width;
    let (mut restored, mut input, mut renders) = (Vec::new(), Vec::new(), Vec::new());
    for (i, f) in clean.frames_in(split) {
        let r = render_frame(field, clean, i, samples_per_ray)?;
        restored.push(EvalReport::score(f.file.clone(), &r.rgb, &f.image)?);
        let noisy = degraded.frames[i].image.upsample_nearest(factor)?;
        input.push(EvalReport::score(f.file.clone(), &noisy, &f.image)?);
        renders.push((i, r));
    }
    Ok(RestorationEval {
        restored: EvalReport::new(split.as_str(), checkpoint_id, restored)?,
        input: EvalReport::new(split.as_str(), "input", input)?,
        renders,
    })
}
