//! Training state and its binary checkpoint.
//!
//! Layout (little-endian): the 8-byte magic, a u64 header length and a TOML
//! header (config, counters, tensor table), then every parameter tensor,
//! both Adam moment sets, the loss log and the instance cache.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Adam;
use crate::cluster::{Instance, InstanceSet};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Matrix;

use super::config::RunConfig;

const MAGIC: &[u8; 8] = b"PSEGCKP1";

/// One optimizer step: batch means of each loss term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub stage: u32,
    pub epoch: u32,
    pub step: u64,
    pub lr: f64,
    pub semantic: f64,
    pub classification: f64,
    pub reconstruction: f64,
    pub total: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "stage,epoch,step,lr,loss_semantic,loss_classification,loss_reconstruction,loss_total";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:e},{:e},{:e},{:e},{:e}",
            self.stage,
            self.epoch,
            self.step,
            self.lr,
            self.semantic,
            self.classification,
            self.reconstruction,
            self.total
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: RunConfig,
    pub model: Model,
    pub adam: Adam,
    /// Completed epochs, counted across both stages.
    pub epoch: u32,
    /// Completed optimizer steps.
    pub step: u64,
    /// Instances per training scene, built when stage 2 starts.
    pub cache: Option<Vec<InstanceSet>>,
    pub log: Vec<LossRecord>,
}

impl TrainState {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(&config.model, config.train.seed)?;
        let adam = Adam::new(&model.params, config.train.adam);
        Ok(TrainState {
            config: config.clone(),
            model,
            adam,
            epoch: 0,
            step: 0,
            cache: None,
            log: Vec::new(),
        })
    }

    pub fn loss_csv(&self) -> String {
        let mut out = String::from(LossRecord::CSV_HEADER);
        out.push('\n');
        for r in &self.log {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format: 1,
            epoch: self.epoch,
            step: self.step as i64,
            adam_step: self.adam.step_count() as i64,
            log_records: self.log.len() as i64,
            cache_scenes: self.cache.as_ref().map_or(-1, |c| c.len() as i64),
            tensors: self
                .model
                .params
                .iter()
                .map(|(_, name, m)| TensorMeta {
                    name: name.to_string(),
                    rows: m.rows() as i64,
                    cols: m.cols() as i64,
                })
                .collect(),
            config: self.config.clone(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::Config(e.to_string()))?;
        let mut out = Vec::with_capacity(text.len() + 24 * self.model.params.scalar_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for m in self
            .model
            .params
            .values()
            .iter()
            .chain(self.adam.first_moments())
            .chain(self.adam.second_moments())
        {
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for r in &self.log {
            out.extend_from_slice(&r.stage.to_le_bytes());
            out.extend_from_slice(&r.epoch.to_le_bytes());
            out.extend_from_slice(&r.step.to_le_bytes());
            for v in [r.lr, r.semantic, r.classification, r.reconstruction, r.total] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for set in self.cache.iter().flatten() {
            put_u32(&mut out, set.assignment.len());
            put_u32(&mut out, set.instances.len());
            for inst in &set.instances {
                out.extend_from_slice(&inst.class_id.to_le_bytes());
                put_u32(&mut out, inst.points.len());
                inst.points.iter().for_each(|&p| put_u32(&mut out, p));
                put_u32(&mut out, inst.voxels.len());
                inst.voxels.iter().for_each(|&v| put_u32(&mut out, v));
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(malformed("not a checkpoint (bad magic)"));
        }
        let len = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| malformed("header is not UTF-8"))?;
        let header: Header = toml::from_str(text).map_err(|e| malformed(&format!("header: {e}")))?;
        if header.format != 1 {
            return Err(malformed(&format!("unsupported checkpoint format {}", header.format)));
        }
        let config = header.config;
        config.validate()?;
        let mut model = Model::new(&config.model, config.train.seed)?;
        if header.tensors.len() != model.params.len()
            || header
                .tensors
                .iter()
                .zip(model.params.iter())
                .any(|(t, (_, name, m))| {
                    t.name != name || t.rows as usize != m.rows() || t.cols as usize != m.cols()
                })
        {
            return Err(malformed("tensor table does not match the configured model"));
        }
        let shapes: Vec<(usize, usize)> = model.params.values().iter().map(Matrix::shape).collect();
        let read_set = |r: &mut Reader| -> Result<Vec<Matrix>> {
            shapes
                .iter()
                .map(|&(rows, cols)| {
                    let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                    Ok(Matrix::from_vec(rows, cols, data))
                })
                .collect()
        };
        let params = read_set(&mut r)?;
        let first = read_set(&mut r)?;
        let second = read_set(&mut r)?;
        model.params.assign(params)?;
        let adam = Adam::from_parts(config.train.adam, first, second, header.adam_step as u64)?;
        let mut log = Vec::with_capacity(header.log_records.max(0) as usize);
        for _ in 0..header.log_records {
            log.push(LossRecord {
                stage: r.u32()?,
                epoch: r.u32()?,
                step: r.u64()?,
                lr: r.f64()?,
                semantic: r.f64()?,
                classification: r.f64()?,
                reconstruction: r.f64()?,
                total: r.f64()?,
            });
        }
        let cache = if header.cache_scenes < 0 {
            None
        } else {
            let mut sets = Vec::new();
            for _ in 0..header.cache_scenes {
                let n = r.u32()? as usize;
                let k = r.u32()? as usize;
                let mut set = InstanceSet {
                    instances: Vec::with_capacity(k.min(1 << 16)),
                    assignment: vec![-1; n],
                };
                for idx in 0..k {
                    let class_id = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
                    let points = r.u32_list()?;
                    let voxels = r.u32_list()?;
                    for &p in &points {
                        let slot = set
                            .assignment
                            .get_mut(p)
                            .ok_or_else(|| malformed("cached point index out of range"))?;
                        *slot = idx as i64;
                    }
                    set.instances.push(Instance {
                        class_id,
                        points,
                        voxels,
                    });
                }
                sets.push(set);
            }
            Some(sets)
        };
        if r.pos != bytes.len() {
            return Err(malformed("trailing bytes after checkpoint"));
        }
        Ok(TrainState {
            config,
            model,
            adam,
            epoch: header.epoch,
            step: header.step as u64,
            cache,
            log,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: i64,
    cols: i64,
}

// TOML integers are signed 64-bit, hence the i64 counters.
#[derive(Serialize, Deserialize)]
struct Header {
    format: u32,
    epoch: u32,
    step: i64,
    adam_step: i64,
    log_records: i64,
    cache_scenes: i64,
    tensors: Vec<TensorMeta>,
    config: RunConfig,
}

fn malformed(msg: &str) -> Error {
    Error::Malformed(format!("checkpoint: {msg}"))
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| malformed("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u32_list(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()? as usize;
        if n * 4 > self.bytes.len() - self.pos {
            return Err(malformed("truncated"));
        }
        (0..n).map(|_| self.u32().map(|v| v as usize)).collect()
    }
}
