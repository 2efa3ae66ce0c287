//! Checkpoint layout: `NRFC` magic, `u32` version, `u64` step, `u32`-prefixed
//! JSON config, four `u128` RNG word positions, two Adam headers (`u64` step
//! count and `f32` beta1, beta2, epsilon), then six parameter blocks: radiance
//! values, flow values, radiance first and second moments, flow first and
//! second moments.

use std::io::{Cursor, Read};
use std::path::Path;

use dynrf_autodiff::io::{read_tensors, write_tensors};
use dynrf_autodiff::{AdamState, Tensor};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::fields::{assign_params, FlowField, RadianceField};
use crate::image::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NRFC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub radiance: RadianceField,
    pub flow: FlowField,
    pub radiance_opt: AdamState,
    pub flow_opt: AdamState,
    /// Word positions of the ray, jitter, consistency, and correspondence streams.
    pub rng_positions: [u128; 4],
}

fn values<'a>(ps: impl IntoIterator<Item = &'a dynrf_autodiff::ParamTensor>) -> Vec<&'a Tensor> {
    ps.into_iter().map(|p| &p.value).collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut b = Vec::new();
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        b.extend_from_slice(&self.step.to_le_bytes());
        let json = serde_json::to_vec(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        b.extend_from_slice(&(json.len() as u32).to_le_bytes());
        b.extend_from_slice(&json);
        for p in self.rng_positions {
            b.extend_from_slice(&p.to_le_bytes());
        }
        for opt in [&self.radiance_opt, &self.flow_opt] {
            b.extend_from_slice(&opt.step_count.to_le_bytes());
            for v in [opt.beta1, opt.beta2, opt.epsilon] {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        write_tensors(&mut b, values(self.radiance.params()))?;
        write_tensors(&mut b, values(self.flow.params()))?;
        for opt in [&self.radiance_opt, &self.flow_opt] {
            write_tensors(&mut b, &opt.first_moment)?;
            write_tensors(&mut b, &opt.second_moment)?;
        }
        Ok(b)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut take = |n: usize| -> Result<Vec<u8>> {
            let mut buf = vec![0; n];
            r.read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint("truncated header".into()))?;
            Ok(buf)
        };
        if take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let step = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let json_len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        if json_len > bytes.len() {
            return Err(Error::Checkpoint("truncated config".into()));
        }
        let config: TrainConfig = serde_json::from_slice(&take(json_len)?)
            .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        config.validate()?;
        let mut rng_positions = [0u128; 4];
        for p in &mut rng_positions {
            *p = u128::from_le_bytes(take(16)?.try_into().expect("16 bytes"));
        }
        let mut opt_headers = Vec::new();
        for _ in 0..2 {
            let steps = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
            let f = |b: Vec<u8>| f32::from_le_bytes(b.try_into().expect("4 bytes"));
            opt_headers.push((steps, f(take(4)?), f(take(4)?), f(take(4)?)));
        }
        let mut blocks = Vec::with_capacity(6);
        for _ in 0..6 {
            blocks.push(read_tensors(&mut r).map_err(|e| Error::Checkpoint(e.to_string()))?);
        }
        if (r.position() as usize) != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after the last block".into()));
        }
        let mut radiance = RadianceField::new(config.radiance.clone(), config.seed)?;
        let mut flow = FlowField::new(config.flow.clone(), config.seed)?;
        let mut blocks = blocks.into_iter();
        let mut next = || blocks.next().expect("six blocks");
        assign_params(radiance.params_mut(), next())?;
        assign_params(flow.params_mut(), next())?;
        let mut opts = Vec::new();
        for (count, (steps, beta1, beta2, epsilon)) in
            [radiance.params().len(), flow.params().len()].into_iter().zip(opt_headers)
        {
            let (first_moment, second_moment) = (next(), next());
            if first_moment.len() != count || second_moment.len() != count {
                return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
            }
            opts.push(AdamState {
                first_moment,
                second_moment,
                step_count: steps,
                beta1,
                beta2,
                epsilon,
            });
        }
        let flow_opt = opts.pop().expect("two optimizers");
        let radiance_opt = opts.pop().expect("two optimizers");
        for (opt, params) in [(&radiance_opt, radiance.params()), (&flow_opt, flow.params())] {
            let ok = opt
                .first_moment
                .iter()
                .chain(&opt.second_moment)
                .zip(params.iter().chain(params.iter()))
                .all(|(m, p)| m.shape() == p.shape());
            if !ok {
                return Err(Error::Checkpoint("optimizer moment shapes do not match".into()));
            }
        }
        Ok(Self {
            config,
            step,
            radiance,
            flow,
            radiance_opt,
            flow_opt,
            rng_positions,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
