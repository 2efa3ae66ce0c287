use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use dynrf_core::eval::{evaluate_restoration, evaluate_split, RestorationEval};
use dynrf_core::geometry::Vec3;
use dynrf_core::image::{write_atomic, write_depth_png, write_depth_raster};
use dynrf_core::render::{render_image, Camera, RenderConfig, RenderedImage};
use dynrf_core::scene::{
    degrade, gen_preset, Degrade, GenOptions, SceneDataset, ScenePreset, Split, CAMERA_DISTANCE,
    FIELD_OF_VIEW,
};
use dynrf_core::train::{Checkpoint, TrainConfig, Trainer, CHECKPOINT_FILE};
use dynrf_core::Error;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(Error::NonFinite(_) | Error::StiffFlow(_) | Error::Diverged { .. }) => 4,
            CliError::Core(_) => 3,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "dynrf", version, about = "Dynamic radiance and flow fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug)]
struct Size {
    width: usize,
    height: usize,
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (w, h) = s.split_once('x').ok_or_else(|| format!("expected WxH, got '{s}'"))?;
        let parse = |v: &str| v.parse::<usize>().ok().filter(|&n| n > 0);
        match (parse(w), parse(h)) {
            (Some(width), Some(height)) => Ok(Size { width, height }),
            _ => Err(format!("expected positive WxH, got '{s}'")),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct TimeRange {
    start: f64,
    end: f64,
    count: usize,
}

impl FromStr for TimeRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || format!("expected T0:T1:N, got '{s}'");
        if parts.len() != 3 {
            return Err(bad());
        }
        let start: f64 = parts[0].parse().map_err(|_| bad())?;
        let end: f64 = parts[1].parse().map_err(|_| bad())?;
        let count: usize = parts[2].parse().map_err(|_| bad())?;
        if count == 0 || !start.is_finite() || !end.is_finite() {
            return Err(bad());
        }
        Ok(TimeRange { start, end, count })
    }
}

impl TimeRange {
    fn times(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        (0..self.count)
            .map(|i| self.start + (self.end - self.start) * i as f64 / (self.count - 1) as f64)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Trajectory {
    Orbit,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RestoreMode {
    Denoise,
    Superres,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Where rays start and stop and what shows behind the field.
#[derive(clap::Args)]
struct ViewArgs {
    /// Scene directory supplying pose indices, bounds and background.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    near: f64,
    #[arg(long, default_value_t = 6.0)]
    far: f64,
    /// Background color as r,g,b in [0, 1].
    #[arg(long, value_parser = parse_rgb)]
    background: Option<[f32; 3]>,
    #[arg(long, default_value_t = 128)]
    samples: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an analytic dynamic scene on disk.
    GenScene {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        views: usize,
        #[arg(long, default_value_t = 10)]
        times: usize,
        #[arg(long, default_value = "32x32")]
        size: Size,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 512)]
        correspondences: usize,
    },
    /// Train radiance and flow fields on a scene.
    Train {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one image from a checkpoint.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        /// A frame index of --scene, or 16 row-major camera-to-world values.
        #[arg(long, num_args = 1..=16, allow_negative_numbers = true)]
        pose: Vec<String>,
        /// Normalized time in [-1, 1].
        #[arg(long, allow_negative_numbers = true)]
        time: f64,
        #[arg(long)]
        size: Option<Size>,
        #[arg(long)]
        out: PathBuf,
        /// Depth output; `.png` writes a normalized preview, anything else raw f32.
        #[arg(long)]
        depth_out: Option<PathBuf>,
        #[command(flatten)]
        view: ViewArgs,
    },
    /// Render a camera trajectory over a range of times.
    Sweep {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum, default_value = "orbit")]
        trajectory: Trajectory,
        /// T0:T1:N in normalized time.
        #[arg(long, allow_hyphen_values = true)]
        times: TimeRange,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "64x64")]
        size: Size,
        #[arg(long, default_value_t = 30.0)]
        elevation_deg: f64,
        #[command(flatten)]
        view: ViewArgs,
    },
    /// Score a checkpoint on a scene split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum)]
        split: SplitArg,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 128)]
        samples: usize,
    },
    /// Train on degraded frames and score renders against the clean frames.
    RestoreDemo {
        #[arg(long, value_enum)]
        mode: RestoreMode,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Noise standard deviation in 8-bit units.
        #[arg(long, default_value_t = 25.0)]
        noise_std: f64,
        /// Integer downsampling factor for training frames.
        #[arg(long, default_value_t = 2)]
        factor: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_rgb(s: &str) -> Result<[f32; 3], String> {
    let v: Vec<f32> = s
        .split(',')
        .map(|x| x.trim().parse::<f32>())
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    match v[..] {
        [r, g, b] if v.iter().all(|x| (0.0..=1.0).contains(x)) => Ok([r, g, b]),
        _ => Err(format!("expected r,g,b in [0, 1], got '{s}'")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::GenScene {
            preset,
            out,
            views,
            times,
            size,
            seed,
            correspondences,
        } => {
            let preset = ScenePreset::from_str(&preset).map_err(|e| CliError::Usage(e.to_string()))?;
            let opts = GenOptions {
                views,
                times,
                width: size.width,
                height: size.height,
                seed,
                correspondences,
                ..GenOptions::default()
            };
            let ds = gen_preset(preset, &opts)?;
            publish_dir(&out, |tmp| ds.save(tmp))?;
            println!("wrote {} frames to {}", ds.frames.len(), out.display());
            Ok(())
        }
        Command::Train { scene, config, out } => {
            let ds = SceneDataset::load(&scene)?;
            let cfg = read_config(&config)?;
            let mut trainer = Trainer::new(&ds, cfg)?;
            let result = trainer.run(Some(&out));
            for w in trainer.warnings() {
                eprintln!("warning: {w}");
            }
            let ckpt = result?;
            let last = trainer.history().last().map_or(f64::NAN, |r| r.total);
            println!(
                "trained {} steps, final loss {last:.6}, checkpoint {}",
                ckpt.step,
                out.join(CHECKPOINT_FILE).display()
            );
            Ok(())
        }
        Command::Render {
            ckpt,
            pose,
            time,
            size,
            out,
            depth_out,
            view,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let ds = view.scene.as_deref().map(SceneDataset::load).transpose()?;
            let cam = pose_camera(&pose, ds.as_ref(), size)?;
            let img = render_view(&ckpt, &cam, time, &view, ds.as_ref())?;
            write_render(&img, &cam, &out, depth_out.as_deref())?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Sweep {
            ckpt,
            trajectory: Trajectory::Orbit,
            times,
            out,
            size,
            elevation_deg,
            view,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let ds = view.scene.as_deref().map(SceneDataset::load).transpose()?;
            let center = ds.as_ref().map_or(Vec3::new(0.0, 0.0, 0.0), |d| {
                let b = &d.bounds.aabb;
                (b.min + b.max) * 0.5
            });
            let ts = times.times();
            let mut frames = Vec::with_capacity(ts.len());
            for (i, &t) in ts.iter().enumerate() {
                let azimuth = std::f64::consts::TAU * i as f64 / ts.len() as f64;
                let cam = orbit_camera(center, azimuth, elevation_deg.to_radians(), size)?;
                frames.push(render_view(&ckpt, &cam, t, &view, ds.as_ref())?);
            }
            publish_dir(&out, |tmp| {
                for (i, f) in frames.iter().enumerate() {
                    f.rgb.write_png(&tmp.join(format!("frame_{i:04}.png")))?;
                }
                Ok(())
            })?;
            println!("wrote {} frames to {}", frames.len(), out.display());
            Ok(())
        }
        Command::Eval {
            ckpt,
            scene,
            split,
            report,
            samples,
        } => {
            let id = ckpt.display().to_string();
            let ckpt = Checkpoint::load(&ckpt)?;
            let ds = SceneDataset::load(&scene)?;
            let split: Split = split.into();
            if ds.frames_in(split).next().is_none() {
                return Err(Error::Dataset(format!("scene has no {} frames", split.as_str())).into());
            }
            let ev = evaluate_split(&ckpt.radiance, &ds, split, samples, &id)?;
            write_atomic(&report, ev.report.to_csv().as_bytes())?;
            let a = &ev.report.aggregate;
            print!("psnr {:.3} dB, ssim {:.4}, mse {:.3e}", a.psnr_db, a.ssim, a.mse);
            match ev.depth_mse {
                Some(d) => println!(", foreground depth mse {d:.4e}"),
                None => println!(),
            }
            Ok(())
        }
        Command::RestoreDemo {
            mode,
            scene,
            config,
            out,
            noise_std,
            factor,
            seed,
        } => {
            let clean = SceneDataset::load(&scene)?;
            let cfg = read_config(&config)?;
            let degradation = match mode {
                RestoreMode::Denoise => Degrade::Noise { stddev: noise_std },
                RestoreMode::Superres => Degrade::Downsample {
                    factor: factor as f64,
                },
            };
            let degraded = degrade(&clean, degradation, seed)?;
            let samples = cfg.eval_samples_per_ray;
            let mut trainer = Trainer::new(&degraded, cfg)?;
            let ckpt = trainer.run(None)?;
            let ev = evaluate_restoration(&ckpt.radiance, &clean, &degraded, Split::Train, samples, "restored")?;
            publish_dir(&out, |tmp| write_restoration(tmp, &ckpt, &clean, &ev))?;
            println!(
                "input mse {:.4e} ({:.2} dB), restored mse {:.4e} ({:.2} dB), ratio {:.3}",
                ev.input.aggregate.mse,
                ev.input.aggregate.psnr_db,
                ev.restored.aggregate.mse,
                ev.restored.aggregate.psnr_db,
                ev.restored.aggregate.mse / ev.input.aggregate.mse
            );
            Ok(())
        }
    }
}

fn read_config(path: &Path) -> CliResult<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(TrainConfig::parse(&text)?)
}

/// Builds a directory next to `out` and renames it into place only once
/// `fill` has succeeded.
fn publish_dir(out: &Path, fill: impl FnOnce(&Path) -> dynrf_core::Result<()>) -> CliResult<()> {
    if out.exists() {
        let empty = fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_none();
        if !empty {
            return Err(Error::InvalidInput(format!("{} exists and is not empty", out.display())).into());
        }
        fs::remove_dir(out).map_err(|e| Error::io(out, e))?;
    }
    let name = out
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("bad output path {}", out.display())))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(format!(".partial-{}", std::process::id()));
    let tmp = out.with_file_name(tmp_name);
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let result = fill(&tmp).and_then(|()| fs::rename(&tmp, out).map_err(|e| Error::io(out, e)));
    if result.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    Ok(result?)
}

fn pose_camera(pose: &[String], ds: Option<&SceneDataset>, size: Option<Size>) -> CliResult<Camera> {
    let values: Vec<&str> = pose
        .iter()
        .flat_map(|p| p.split(|c: char| c == ',' || c.is_whitespace()))
        .filter(|s| !s.is_empty())
        .collect();
    let cam = match values.len() {
        1 => {
            let index: usize = values[0]
                .parse()
                .map_err(|_| CliError::Usage(format!("pose index '{}' is not an integer", values[0])))?;
            let ds = ds.ok_or_else(|| CliError::Usage("a pose index needs --scene".into()))?;
            let frame = ds.frames.get(index).ok_or_else(|| {
                CliError::Usage(format!("pose index {index} out of range (scene has {} frames)", ds.frames.len()))
            })?;
            frame.camera.clone()
        }
        16 => {
            let mut m = [0.0f64; 16];
            for (dst, v) in m.iter_mut().zip(&values) {
                *dst = v
                    .parse()
                    .map_err(|_| CliError::Usage(format!("pose value '{v}' is not a number")))?;
            }
            let (w, h) = match (size, ds) {
                (Some(s), _) => (s.width, s.height),
                (None, Some(d)) => (d.width, d.height),
                (None, None) => return Err(CliError::Usage("an explicit pose needs --size or --scene".into())),
            };
            let fx = 0.5 * w as f64 / (0.5 * FIELD_OF_VIEW).tan();
            let cam = Camera {
                camera_to_world: m,
                fx,
                fy: fx,
                cx: 0.5 * w as f64,
                cy: 0.5 * h as f64,
                width: w,
                height: h,
            };
            cam.validate()?;
            cam
        }
        n => return Err(CliError::Usage(format!("--pose takes 1 index or 16 values, got {n}"))),
    };
    Ok(match size {
        Some(s) => cam.resized(s.width, s.height),
        None => cam,
    })
}

fn orbit_camera(center: Vec3, azimuth: f64, elevation: f64, size: Size) -> CliResult<Camera> {
    let dir = Vec3::new(
        elevation.cos() * azimuth.cos(),
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
    );
    let eye = center + dir * CAMERA_DISTANCE;
    Ok(Camera::look_at(
        eye,
        center,
        Vec3::new(0.0, 0.0, 1.0),
        FIELD_OF_VIEW,
        size.width,
        size.height,
    )?)
}

fn render_view(
    ckpt: &Checkpoint,
    cam: &Camera,
    time: f64,
    view: &ViewArgs,
    ds: Option<&SceneDataset>,
) -> CliResult<RenderedImage> {
    if !(-1.0..=1.0).contains(&time) {
        return Err(CliError::Usage(format!("time {time} outside [-1, 1]")));
    }
    if view.samples == 0 {
        return Err(CliError::Usage("--samples must be positive".into()));
    }
    let (near, far) = ds.map_or((view.near, view.far), |d| (d.bounds.t_near, d.bounds.t_far));
    let background = view
        .background
        .or(ds.map(|d| d.background))
        .unwrap_or([0.0; 3]);
    let cfg = RenderConfig {
        samples_per_ray: view.samples,
        background,
    };
    Ok(render_image(cam, time, &ckpt.radiance, near, far, &cfg)?)
}

fn write_render(img: &RenderedImage, cam: &Camera, out: &Path, depth_out: Option<&Path>) -> CliResult<()> {
    if let Some(d) = depth_out {
        if d.extension().is_some_and(|e| e == "png") {
            write_depth_png(d, cam.width, cam.height, &img.depth)?;
        } else {
            write_depth_raster(d, &img.depth)?;
        }
    }
    let written = img.rgb.write_png(out);
    if written.is_err() {
        if let Some(d) = depth_out {
            let _ = fs::remove_file(d);
        }
    }
    Ok(written?)
}

fn write_restoration(
    dir: &Path,
    ckpt: &Checkpoint,
    clean: &SceneDataset,
    ev: &RestorationEval,
) -> dynrf_core::Result<()> {
    ckpt.save(&dir.join(CHECKPOINT_FILE))?;
    write_atomic(&dir.join("report.csv"), ev.restored.to_csv().as_bytes())?;
    write_atomic(&dir.join("input_report.csv"), ev.input.to_csv().as_bytes())?;
    let renders = dir.join("renders");
    fs::create_dir_all(&renders).map_err(|e| Error::io(&renders, e))?;
    for (i, r) in &ev.renders {
        let stem = Path::new(&clean.frames[*i].file)
            .file_stem()
            .map_or_else(|| format!("frame{i}"), |s| s.to_string_lossy().into_owned());
        r.rgb.write_png(&renders.join(format!("{stem}.png")))?;
    }
    Ok(())
}
