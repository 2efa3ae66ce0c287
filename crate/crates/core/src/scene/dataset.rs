use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::analytic::AnalyticScene;
use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::image::{read_depth_raster, write_atomic, write_depth_raster, Image};
use crate::losses::Correspondence;
use crate::render::Camera;

pub const MANIFEST_FILE: &str = "scene.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidInput(format!("unknown split '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    #[serde(rename = "box")]
    pub aabb: Aabb,
    pub t_near: f64,
    pub t_far: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FrameRecord {
    file: String,
    time: f64,
    camera_to_world: Vec<f64>,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(default)]
    split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    width: usize,
    height: usize,
    bounds: Bounds,
    raw_time_range: [f64; 2],
    frames: Vec<FrameRecord>,
    #[serde(default)]
    correspondences_file: Option<String>,
    #[serde(default)]
    depth_dir: Option<String>,
    #[serde(default)]
    background: Option<[f32; 3]>,
    #[serde(default)]
    analytic: Option<AnalyticScene>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub file: String,
    pub camera: Camera,
    /// Time as written in the manifest.
    pub raw_time: f64,
    /// Time mapped into `[-1, 1]`.
    pub time: f64,
    pub split: Split,
    pub image: Image,
    pub depth: Option<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub width: usize,
    pub height: usize,
    pub bounds: Bounds,
    pub raw_time_range: [f64; 2],
    pub background: [f32; 3],
    pub frames: Vec<Frame>,
    pub correspondences: Vec<Correspondence>,
    pub analytic: Option<AnalyticScene>,
}

/// Affine map of `raw` from `range` onto `[-1, 1]`; a degenerate range maps to 0.
pub fn normalize_time(raw: f64, range: [f64; 2]) -> f64 {
    let span = range[1] - range[0];
    if span == 0.0 {
        0.0
    } else {
        -1.0 + 2.0 * (raw - range[0]) / span
    }
}

impl SceneDataset {
    pub fn frames_in(&self, split: Split) -> impl Iterator<Item = (usize, &Frame)> {
        self.frames
            .iter()
            .enumerate()
            .filter(move |(_, f)| f.split == split)
    }

    /// Distinct normalized frame times in ascending order.
    pub fn distinct_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.frames.iter().map(|f| f.time).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Dataset("scene has no frames".into()));
        }
        if !(self.bounds.t_near < self.bounds.t_far) || !(self.bounds.t_near >= 0.0) {
            return Err(Error::Dataset("bounds need 0 <= t_near < t_far".into()));
        }
        let [lo, hi] = self.raw_time_range;
        if !(lo <= hi) {
            return Err(Error::Dataset("raw_time_range must be ascending".into()));
        }
        for (i, f) in self.frames.iter().enumerate() {
            let frame_err = |msg: String| Error::Frame { frame: i, msg };
            f.camera.validate().map_err(|e| frame_err(e.to_string()))?;
            if f.raw_time < lo || f.raw_time > hi {
                return Err(frame_err(format!("time {} outside [{lo}, {hi}]", f.raw_time)));
            }
            if f.camera.width != self.width || f.camera.height != self.height {
                return Err(frame_err("camera extents differ from the scene".into()));
            }
            if f.image.width != self.width || f.image.height != self.height {
                return Err(frame_err(format!(
                    "image is {}x{}, scene declares {}x{}",
                    f.image.width, f.image.height, self.width, self.height
                )));
            }
            if matches!(&f.depth, Some(d) if d.len() != self.width * self.height) {
                return Err(frame_err("depth raster has the wrong size".into()));
            }
        }
        for (i, c) in self.correspondences.iter().enumerate() {
            if !(-1.0..=1.0).contains(&c.t_s) || !(-1.0..=1.0).contains(&c.t_g) {
                return Err(Error::Dataset(format!("correspondence {i} has a time outside [-1, 1]")));
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Dataset(format!("unsupported manifest version {}", m.version)));
        }
        let mut frames = Vec::with_capacity(m.frames.len());
        for (i, r) in m.frames.into_iter().enumerate() {
            let frame_err = |msg: String| Error::Frame { frame: i, msg };
            let pose: [f64; 16] = r
                .camera_to_world
                .as_slice()
                .try_into()
                .map_err(|_| frame_err("camera_to_world needs 16 values".into()))?;
            let camera = Camera {
                camera_to_world: pose,
                fx: r.fx,
                fy: r.fy,
                cx: r.cx,
                cy: r.cy,
                width: m.width,
                height: m.height,
            };
            camera.validate().map_err(|e| frame_err(e.to_string()))?;
            let [lo, hi] = m.raw_time_range;
            if r.time < lo || r.time > hi {
                return Err(frame_err(format!("time {} outside [{lo}, {hi}]", r.time)));
            }
            let image = Image::read_png(&dir.join(&r.file)).map_err(|e| frame_err(e.to_string()))?;
            let depth = match &m.depth_dir {
                Some(d) => Some(
                    read_depth_raster(&dir.join(d).join(depth_name(&r.file)), m.width, m.height)
                        .map_err(|e| frame_err(e.to_string()))?,
                ),
                None => None,
            };
            frames.push(Frame {
                time: normalize_time(r.time, m.raw_time_range),
                file: r.file,
                camera,
                raw_time: r.time,
                split: r.split,
                image,
                depth,
            });
        }
        let correspondences = match &m.correspondences_file {
            Some(f) => read_correspondences(&dir.join(f))?,
            None => Vec::new(),
        };
        let ds = SceneDataset {
            width: m.width,
            height: m.height,
            bounds: m.bounds,
            raw_time_range: m.raw_time_range,
            background: m.background.unwrap_or([0.0; 3]),
            frames,
            correspondences,
            analytic: m.analytic,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Writes manifest, images, depth rasters, and correspondences under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
        let has_depth = self.frames.iter().all(|f| f.depth.is_some());
        if has_depth {
            fs::create_dir_all(dir.join("depth")).map_err(|e| Error::io(dir, e))?;
        }
        let mut records = Vec::with_capacity(self.frames.len());
        for f in &self.frames {
            f.image.write_png(&dir.join(&f.file))?;
            if let (true, Some(d)) = (has_depth, &f.depth) {
                write_depth_raster(&dir.join("depth").join(depth_name(&f.file)), d)?;
            }
            records.push(FrameRecord {
                file: f.file.clone(),
                time: f.raw_time,
                camera_to_world: f.camera.camera_to_world.to_vec(),
                fx: f.camera.fx,
                fy: f.camera.fy,
                cx: f.camera.cx,
                cy: f.camera.cy,
                split: f.split,
            });
        }
        let correspondences_file = (!self.correspondences.is_empty()).then(|| "correspondences.bin".to_string());
        if let Some(name) = &correspondences_file {
            write_correspondences(&dir.join(name), &self.correspondences)?;
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            width: self.width,
            height: self.height,
            bounds: self.bounds.clone(),
            raw_time_range: self.raw_time_range,
            frames: records,
            correspondences_file,
            depth_dir: has_depth.then(|| "depth".to_string()),
            background: Some(self.background),
            analytic: self.analytic.clone(),
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Dataset(e.to_string()))?;
        write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())
    }
}

fn depth_name(image_file: &str) -> String {
    let stem = Path::new(image_file)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(image_file);
    format!("{stem}.f32")
}

/// `u64` record count, then 8 little-endian `f32` per record.
pub fn write_correspondences(path: &Path, records: &[Correspondence]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + 32 * records.len());
    bytes.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        let vals = [r.x_s[0], r.x_s[1], r.x_s[2], r.t_s, r.x_g[0], r.x_g[1], r.x_g[2], r.t_g];
        for v in vals {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &bytes)
}

pub fn read_correspondences(path: &Path) -> Result<Vec<Correspondence>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Dataset(format!("{}: {msg}", path.display()));
    if bytes.len() < 8 {
        return Err(bad("missing record count"));
    }
    let count = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = &bytes[8..];
    if Some(body.len()) != count.checked_mul(32) {
        return Err(bad("record count does not match file length"));
    }
    Ok(body
        .chunks_exact(32)
        .map(|rec| {
            let v: Vec<f32> = rec
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Correspondence {
                x_s: [v[0], v[1], v[2]],
                t_s: v[3],
                x_g: [v[4], v[5], v[6]],
                t_g: v[7],
            }
        })
        .collect())
}

/// Path of the manifest inside a scene directory.
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}
