//! Two-phase optimization: rendering loss alone, then the full objective.

mod checkpoint;
mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use dynrf_autodiff::{adam_step, lr_at, AdamState, Gradients, Graph, ParamTensor, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;

use crate::error::{Error, Result};
use crate::fields::{total_color, FlowField, RadianceField};
use crate::losses::{
    consistency_losses, corr_loss, empty_space_flow_loss, render_loss, select_empty_space,
    smoothness_loss, specular_reg, ConsistencyBatch, Correspondence, LossValues, LossVars,
    EMPTY_SPACE_TRANSMITTANCE,
};
use crate::render::{composite_graph, ray_depths, Ray};
use crate::scene::{SceneDataset, Split};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOSS_LOG_FILE: &str = "loss.csv";
pub const LOSS_LOG_HEADER: &str = "step,lr,l_render,l_corr,l_rgb,l_density,l_flow,l_acc,l_spec,total";

const STREAM_RAYS: usize = 0;
const STREAM_JITTER: usize = 1;
const STREAM_CONSISTENCY: usize = 2;
const STREAM_CORRESPONDENCES: usize = 3;

/// Independent counter-based streams, one per consumer.
#[derive(Clone, Debug)]
pub struct Rngs([ChaCha8Rng; 4]);

impl Rngs {
    pub fn new(seed: u64) -> Self {
        Self(std::array::from_fn(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64);
            r
        }))
    }

    pub fn restore(seed: u64, positions: [u128; 4]) -> Self {
        let mut r = Self::new(seed);
        for (rng, p) in r.0.iter_mut().zip(positions) {
            rng.set_word_pos(p);
        }
        r
    }

    pub fn positions(&self) -> [u128; 4] {
        std::array::from_fn(|i| self.0[i].get_word_pos())
    }

    pub fn stream(&mut self, i: usize) -> &mut ChaCha8Rng {
        &mut self.0[i]
    }
}

/// Rays through uniformly drawn (frame, pixel) pairs with their target colors.
#[derive(Clone, Debug)]
pub struct RayBatch {
    pub rays: Vec<Ray>,
    pub targets: Vec<[f32; 3]>,
    pub frames: Vec<usize>,
}

pub fn sample_rays(ds: &SceneDataset, frames: &[usize], n: usize, rng: &mut impl Rng) -> Result<RayBatch> {
    if frames.is_empty() {
        return Err(Error::Dataset("no frames to sample rays from".into()));
    }
    let mut batch = RayBatch {
        rays: Vec::with_capacity(n),
        targets: Vec::with_capacity(n),
        frames: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let fi = frames[rng.gen_range(0..frames.len())];
        let f = &ds.frames[fi];
        let (row, col) = (rng.gen_range(0..ds.height), rng.gen_range(0..ds.width));
        let dir = f.camera.pixel_direction(row, col)?;
        batch.rays.push(Ray::new(f.camera.origin(), dir, ds.bounds.t_near, ds.bounds.t_far, f.time)?);
        batch.targets.push(f.image.pixel(row, col));
        batch.frames.push(fi);
    }
    Ok(batch)
}

pub fn sample_correspondences(records: &[Correspondence], n: usize, rng: &mut impl Rng) -> Vec<Correspondence> {
    if records.is_empty() {
        return Vec::new();
    }
    (0..n).map(|_| records[rng.gen_range(0..records.len())]).collect()
}

/// Half the points (in expectation) come from `near_surface` candidates when
/// any exist; the rest are uniform in the scene box at a random frame time.
/// Each target time is uniform within 0.5 of the point's time, clipped to `[-1, 1]`.
pub fn sample_consistency(
    ds: &SceneDataset,
    times: &[f64],
    n: usize,
    near_surface: &[([f32; 3], f32)],
    rng: &mut impl Rng,
) -> ConsistencyBatch {
    let b = &ds.bounds.aabb;
    let mut batch = ConsistencyBatch {
        points: Vec::with_capacity(n),
        times: Vec::with_capacity(n),
        target_times: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let (p, t) = if !near_surface.is_empty() && rng.gen_bool(0.5) {
            near_surface[rng.gen_range(0..near_surface.len())]
        } else {
            let p = [
                rng.gen_range(b.min.x..=b.max.x) as f32,
                rng.gen_range(b.min.y..=b.max.y) as f32,
                rng.gen_range(b.min.z..=b.max.z) as f32,
            ];
            (p, times[rng.gen_range(0..times.len())] as f32)
        };
        let tc = (t + rng.gen_range(-0.5f32..=0.5)).clamp(-1.0, 1.0);
        batch.points.push(p);
        batch.times.push(t);
        batch.target_times.push(tc);
    }
    batch
}

fn apply_grads(
    params: &mut [&mut ParamTensor],
    grads: &Gradients,
    opt: &mut AdamState,
    lr: f32,
) -> Result<()> {
    for p in params.iter_mut() {
        p.zero_grad();
        grads.accumulate(p)?;
    }
    adam_step(params, opt, lr)?;
    Ok(())
}

/// Loss components recorded at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub losses: LossValues,
    pub total: f64,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.step, self.lr, l.render, l.corr, l.rgb, l.density, l.flow, l.acc, l.spec, self.total
        )
    }
}

pub struct Trainer<'a> {
    dataset: &'a SceneDataset,
    config: TrainConfig,
    step: u64,
    radiance: RadianceField,
    flow: FlowField,
    radiance_opt: AdamState,
    flow_opt: AdamState,
    rngs: Rngs,
    train_frames: Vec<usize>,
    train_times: Vec<f64>,
    history: Vec<StepRecord>,
    warnings: Vec<String>,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a SceneDataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let radiance = RadianceField::new(config.radiance.clone(), config.seed)?;
        let flow = FlowField::new(config.flow.clone(), config.seed)?;
        let ckpt = Checkpoint {
            radiance_opt: AdamState::for_params(radiance.params()),
            flow_opt: AdamState::for_params(flow.params()),
            rng_positions: Rngs::new(config.seed).positions(),
            config,
            step: 0,
            radiance,
            flow,
        };
        Self::resume(dataset, ckpt)
    }

    pub fn resume(dataset: &'a SceneDataset, ckpt: Checkpoint) -> Result<Self> {
        dataset.validate()?;
        let train_frames: Vec<usize> = dataset.frames_in(Split::Train).map(|(i, _)| i).collect();
        if train_frames.is_empty() {
            return Err(Error::Dataset("no training frames".into()));
        }
        let mut train_times: Vec<f64> = train_frames.iter().map(|&i| dataset.frames[i].time).collect();
        train_times.sort_by(f64::total_cmp);
        train_times.dedup();
        let mut warnings = Vec::new();
        if dataset.correspondences.is_empty() {
            warnings.push(
                "dataset has no correspondences; correspondence and consistency terms are skipped".into(),
            );
        }
        Ok(Self {
            dataset,
            rngs: Rngs::restore(ckpt.config.seed, ckpt.rng_positions),
            config: ckpt.config,
            step: ckpt.step,
            radiance: ckpt.radiance,
            flow: ckpt.flow,
            radiance_opt: ckpt.radiance_opt,
            flow_opt: ckpt.flow_opt,
            train_frames,
            train_times,
            history: Vec::new(),
            warnings,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn radiance(&self) -> &RadianceField {
        &self.radiance
    }

    pub fn flow(&self) -> &FlowField {
        &self.flow
    }

    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            radiance: self.radiance.clone(),
            flow: self.flow.clone(),
            radiance_opt: self.radiance_opt.clone(),
            flow_opt: self.flow_opt.clone(),
            rng_positions: self.rngs.positions(),
        }
    }

    pub fn in_warmup(&self) -> bool {
        self.step < self.config.warmup_steps
    }

    /// One optimizer step. Parameters are left untouched if any loss is non-finite.
    pub fn step(&mut self) -> Result<StepRecord> {
        let cfg = &self.config;
        let w = cfg.weights.clone();
        let step = self.step;
        let lr = lr_at(step, cfg.base_lr, cfg.decay_factor, cfg.decay_steps);
        let n = cfg.samples_per_ray;
        let ds = self.dataset;
        let batch = sample_rays(ds, &self.train_frames, cfg.rays_per_batch, self.rngs.stream(STREAM_RAYS))?;
        let r = batch.rays.len();
        let mut points = Vec::with_capacity(r * n);
        let mut deltas = Vec::with_capacity(r * n);
        for ray in &batch.rays {
            let (d, dl) = ray_depths(ray, n, Some(self.rngs.stream(STREAM_JITTER)));
            points.extend(d.iter().map(|&s| ray.at(s).to_f32()));
            deltas.extend(dl.iter().map(|&x| x as f32));
        }
        let mut g = Graph::new();
        let rad = self.radiance.bind(&mut g);
        let p = g.constant(Tensor::new([r * n, 3], points.concat())?);
        let t = g.constant(Tensor::new(
            [r * n, 1],
            batch.rays.iter().flat_map(|ray| std::iter::repeat(ray.time as f32).take(n)).collect(),
        )?);
        let d = g.constant(Tensor::new(
            [r * n, 3],
            batch.rays.iter().flat_map(|ray| ray.direction.to_f32().repeat(n)).collect(),
        )?);
        let out = rad.forward(&mut g, p, t, d)?;
        let color = total_color(&mut g, &out)?;
        let comp = composite_graph(&mut g, out.sigma, color, &Tensor::new([r, n], deltas)?, ds.background)?;
        let target = g.constant(Tensor::new([r, 3], batch.targets.concat())?);
        let mut vars = LossVars {
            render: Some(render_loss(&mut g, comp.color, target)?),
            ..Default::default()
        };
        if w.specular_l2 > 0.0 {
            vars.spec = Some(specular_reg(&mut g, out.specular)?);
        }

        let joint = step >= cfg.warmup_steps;
        let has_corr = !ds.correspondences.is_empty();
        if joint {
            let flow = self.flow.bind(&mut g);
            let trans = g.value(comp.transmittance).data().to_vec();
            if w.flow_weight > 0.0 {
                let sel = select_empty_space(&trans, n, cfg.empty_space_k);
                let pts: Vec<[f32; 3]> = sel.iter().map(|&(ri, si)| points[ri * n + si]).collect();
                let ts: Vec<f32> = sel.iter().map(|&(ri, _)| batch.rays[ri].time as f32).collect();
                vars.flow = empty_space_flow_loss(&mut g, &flow, &pts, &ts)?;
            }
            let use_consistency = has_corr && (w.alpha > 0.0 || w.beta > 0.0);
            if use_consistency || w.acc_weight > 0.0 {
                let near: Vec<([f32; 3], f32)> = trans
                    .iter()
                    .enumerate()
                    .filter(|(_, &x)| x < EMPTY_SPACE_TRANSMITTANCE)
                    .map(|(i, _)| (points[i], batch.rays[i / n].time as f32))
                    .collect();
                let cb = sample_consistency(
                    ds,
                    &self.train_times,
                    cfg.consistency_points_per_batch,
                    &near,
                    self.rngs.stream(STREAM_CONSISTENCY),
                );
                if use_consistency {
                    let (rgb, density) = consistency_losses(&mut g, &rad, &flow, &cb)?;
                    vars.rgb = (w.alpha > 0.0).then_some(rgb);
                    vars.density = (w.beta > 0.0).then_some(density);
                }
                if w.acc_weight > 0.0 {
                    let pts: Vec<[f32; 4]> = cb
                        .points
                        .iter()
                        .zip(&cb.times)
                        .map(|(p, &t)| [p[0], p[1], p[2], t])
                        .collect();
                    vars.acc = Some(smoothness_loss(&mut g, &flow, &pts)?);
                }
            }
            if has_corr && w.corr_weight > 0.0 {
                let recs = sample_correspondences(
                    &ds.correspondences,
                    cfg.correspondences_per_batch,
                    self.rngs.stream(STREAM_CORRESPONDENCES),
                );
                vars.corr = Some(corr_loss(&mut g, &flow, &recs)?);
            }
        }

        let losses = vars.values(&g);
        let total = vars.total(&mut g, &w).map_err(|e| Error::Diverged {
            step,
            msg: e.to_string(),
        })?;
        let total_value = g.value(total).data()[0] as f64;
        let grads = g.backward(total)?;
        let lr32 = lr as f32;
        apply_grads(&mut self.radiance.params_mut(), &grads, &mut self.radiance_opt, lr32)?;
        if joint {
            apply_grads(&mut self.flow.params_mut(), &grads, &mut self.flow_opt, lr32)?;
        }
        self.step += 1;
        let rec = StepRecord {
            step,
            lr,
            losses,
            total: total_value,
        };
        self.history.push(rec);
        Ok(rec)
    }

    /// Trains to `total_steps`, logging and checkpointing into `out` when given.
    ///
    /// On divergence the error is returned and the last checkpoint on disk
    /// is left as it was.
    pub fn run(&mut self, out: Option<&Path>) -> Result<Checkpoint> {
        let total = self.config.total_steps;
        self.run_until(total, out)
    }

    pub fn run_until(&mut self, until: u64, out: Option<&Path>) -> Result<Checkpoint> {
        let mut log = match out {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(LOSS_LOG_FILE);
                let fresh = !path.exists() || self.step == 0;
                let file = fs::OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(!fresh)
                    .truncate(fresh)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                let mut w = BufWriter::new(file);
                if fresh {
                    writeln!(w, "{LOSS_LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
                }
                Some((w, path))
            }
            None => None,
        };
        let until = until.min(self.config.total_steps);
        while self.step < until {
            let rec = self.step()?;
            let last = self.step == until;
            if let Some((w, path)) = log.as_mut() {
                if rec.step % self.config.log_interval == 0 || last {
                    writeln!(w, "{}", rec.csv_row()).map_err(|e| Error::io(path.as_path(), e))?;
                }
            }
            if let Some(dir) = out {
                if self.step % self.config.checkpoint_interval == 0 || last {
                    if let Some((w, path)) = log.as_mut() {
                        w.flush().map_err(|e| Error::io(path.as_path(), e))?;
                    }
                    self.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
                }
            }
        }
        if let Some((mut w, path)) = log {
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(self.checkpoint())
    }
}

/// Trains from scratch and returns the final checkpoint.
pub fn train(dataset: &SceneDataset, cfg: TrainConfig, out: Option<&Path>) -> Result<Checkpoint> {
    Trainer::new(dataset, cfg)?.run(out)
}
