//! Binary checkpoints: network weights plus optional optimizer state.
//!
//! The format is a little-endian, versioned container:
//!
//! ```text
//! magic            8 bytes  "CSFMCKPT"
//! version          u32      currently 1
//! config           7 x u32  scale, channels, modules, blocks, reduction,
//!                           expansion, block-variant code
//! rgb_mean         3 x f64  per-channel training-set mean (unit domain)
//! step             u64      optimizer steps taken so far
//! param_count      u64      number of parameter tensors
//! per parameter:
//!   name           u32 length + UTF-8 bytes
//!   shape          4 x u64  n, c, h, w
//!   data           numel x f32
//! optimizer flag   u8       0 = weights only, 1 = training state follows
//! if 1:
//!   beta1, beta2, eps, base_lr   4 x f64
//!   total_iters, seed            2 x u64
//!   per parameter (same order):  numel x f32 first moment,
//!                                numel x f32 second moment
//! ```
//!
//! Parameters are stored in the network's canonical traversal order and the
//! loader verifies every name and shape against a freshly built network, so
//! a reloaded model reproduces the saved one bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{BlockVariant, CsfmConfig, CsfmNetwork, Initializer};
use crate::tensor::Shape;

const MAGIC: &[u8; 8] = b"CSFMCKPT";
const VERSION: u32 = 1;

/// Optimizer and schedule state stored alongside the weights so training can
/// resume exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
    pub total_iters: u64,
    pub seed: u64,
    /// Adam moments per parameter, in network traversal order.
    pub moments: Vec<(String, Vec<f32>, Vec<f32>)>,
}

/// Everything a checkpoint file holds.
pub struct LoadedCheckpoint {
    pub net: CsfmNetwork<f32>,
    pub rgb_mean: [f64; 3],
    pub step: u64,
    pub train: Option<TrainState>,
}

/// Writes `net` (and, when given, the training state) to `path`.
pub fn save_checkpoint(
    path: &Path,
    net: &CsfmNetwork<f32>,
    rgb_mean: [f64; 3],
    step: u64,
    train: Option<&TrainState>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = Sink {
        inner: BufWriter::new(file),
        path,
    };
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    let cfg = net.config();
    for v in [
        cfg.scale,
        cfg.channels,
        cfg.modules,
        cfg.blocks,
        cfg.reduction,
        cfg.expansion,
    ] {
        w.u32(v as u32)?;
    }
    w.u32(cfg.variant.code())?;
    for m in rgb_mean {
        w.f64(m)?;
    }
    w.u64(step)?;

    let names = net.param_names();
    w.u64(names.len() as u64)?;
    let mut failure: Option<Error> = None;
    net.for_each_param(&mut |name, tensor| {
        if failure.is_some() {
            return;
        }
        if let Err(e) = w.param_entry(name, tensor.shape(), tensor.data()) {
            failure = Some(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    match train {
        None => w.bytes(&[0u8])?,
        Some(state) => {
            w.bytes(&[1u8])?;
            for v in [state.beta1, state.beta2, state.eps, state.base_lr] {
                w.f64(v)?;
            }
            w.u64(state.total_iters)?;
            w.u64(state.seed)?;
            if state.moments.len() != names.len() {
                return Err(Error::Checkpoint(format!(
                    "training state covers {} parameters, network has {}",
                    state.moments.len(),
                    names.len()
                )));
            }
            for ((name, m, v), expected) in state.moments.iter().zip(&names) {
                if name != expected {
                    return Err(Error::Checkpoint(format!(
                        "training state lists {name} where {expected} was expected"
                    )));
                }
                w.f32_slice(m)?;
                w.f32_slice(v)?;
            }
        }
    }
    w.inner.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a checkpoint back, rebuilding the network from the stored
/// configuration and verifying every parameter name and shape.
pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Source {
        inner: BufReader::new(file),
        path,
    };
    let cfg = read_header(&mut r)?;
    let mut rgb_mean = [0f64; 3];
    for m in &mut rgb_mean {
        *m = r.f64()?;
        if !m.is_finite() {
            return Err(Error::Checkpoint(format!(
                "{}: stored channel mean is not finite",
                path.display()
            )));
        }
    }
    let step = r.u64()?;

    let mut net = CsfmNetwork::<f32>::new(cfg, &mut Initializer::Zeros)?;
    let names = net.param_names();
    let param_count = r.u64()?;
    if param_count != names.len() as u64 {
        return Err(Error::Checkpoint(format!(
            "{}: file lists {param_count} parameters, configuration implies {}",
            path.display(),
            names.len()
        )));
    }

    let mut entries: Vec<Vec<f32>> = Vec::with_capacity(names.len());
    let mut shapes: Vec<Shape> = Vec::with_capacity(names.len());
    for expected in &names {
        let name = r.string()?;
        if &name != expected {
            return Err(Error::Checkpoint(format!(
                "{}: found parameter {name} where {expected} was expected",
                path.display()
            )));
        }
        let shape = r.shape()?;
        entries.push(r.f32_vec(shape.numel())?);
        shapes.push(shape);
    }
    let mut cursor = 0usize;
    let mut failure: Option<Error> = None;
    net.for_each_param_mut(&mut |name, tensor| {
        if failure.is_some() {
            return;
        }
        if shapes[cursor] != tensor.shape() {
            failure = Some(Error::Checkpoint(format!(
                "stored shape of {name} does not match the configuration"
            )));
            return;
        }
        tensor.data_mut().copy_from_slice(&entries[cursor]);
        cursor += 1;
    });
    if let Some(e) = failure {
        return Err(e);
    }

    let train = match r.u8()? {
        0 => None,
        1 => {
            let beta1 = r.f64()?;
            let beta2 = r.f64()?;
            let eps = r.f64()?;
            let base_lr = r.f64()?;
            let total_iters = r.u64()?;
            let seed = r.u64()?;
            let mut moments = Vec::with_capacity(names.len());
            for (name, shape) in names.iter().zip(&shapes) {
                let m = r.f32_vec(shape.numel())?;
                let v = r.f32_vec(shape.numel())?;
                moments.push((name.clone(), m, v));
            }
            Some(TrainState {
                beta1,
                beta2,
                eps,
                base_lr,
                total_iters,
                seed,
                moments,
            })
        }
        other => {
            return Err(Error::Checkpoint(format!(
                "{}: unknown optimizer flag {other}",
                path.display()
            )))
        }
    };

    Ok(LoadedCheckpoint {
        net,
        rgb_mean,
        step,
        train,
    })
}

/// Counts the weight scalars serialized in a checkpoint by walking the
/// parameter table without loading the data.
pub fn checkpoint_scalar_count(path: &Path) -> Result<u64> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Source {
        inner: BufReader::new(file),
        path,
    };
    read_header(&mut r)?;
    for _ in 0..3 {
        r.f64()?;
    }
    r.u64()?; // step
    let param_count = r.u64()?;
    let mut total = 0u64;
    for _ in 0..param_count {
        r.string()?;
        let shape = r.shape()?;
        let numel = shape.numel() as u64;
        total += numel;
        r.skip(numel * 4)?;
    }
    Ok(total)
}

fn read_header(r: &mut Source<'_>) -> Result<CsfmConfig> {
    let mut magic = [0u8; 8];
    r.exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint file (bad magic)",
            r.path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported checkpoint version {version} (expected {VERSION})",
            r.path.display()
        )));
    }
    let scale = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let modules = r.u32()? as usize;
    let blocks = r.u32()? as usize;
    let reduction = r.u32()? as usize;
    let expansion = r.u32()? as usize;
    let variant = BlockVariant::from_code(r.u32()?)?;
    let cfg = CsfmConfig {
        scale,
        channels,
        modules,
        blocks,
        reduction,
        expansion,
        variant,
    };
    cfg.validate()
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", r.path.display())))?;
    Ok(cfg)
}

struct Sink<'a> {
    inner: BufWriter<File>,
    path: &'a Path,
}

impl Sink<'_> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b).map_err(|e| Error::io(self.path.display().to_string(), e))
    }

    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn f32_slice(&mut self, vs: &[f32]) -> Result<()> {
        let mut buf = Vec::with_capacity(vs.len() * 4);
        for v in vs {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.bytes(&buf)
    }

    fn param_entry(&mut self, name: &str, shape: Shape, data: &[f32]) -> Result<()> {
        self.u32(name.len() as u32)?;
        self.bytes(name.as_bytes())?;
        for d in [shape.n, shape.c, shape.h, shape.w] {
            self.u64(d as u64)?;
        }
        self.f32_slice(data)
    }
}

struct Source<'a> {
    inner: BufReader<File>,
    path: &'a Path,
}

impl Source<'_> {
    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Checkpoint(format!(
                    "{}: file ends before the checkpoint is complete",
                    self.path.display()
                ))
            } else {
                Error::io(self.path.display().to_string(), e)
            }
        })
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.exact(&mut b)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 4096 {
            return Err(Error::Checkpoint(format!(
                "{}: implausible parameter name length {len}",
                self.path.display()
            )));
        }
        let mut buf = vec![0u8; len];
        self.exact(&mut buf)?;
        String::from_utf8(buf).map_err(|_| {
            Error::Checkpoint(format!(
                "{}: parameter name is not valid UTF-8",
                self.path.display()
            ))
        })
    }

    fn shape(&mut self) -> Result<Shape> {
        let n = self.u64()? as usize;
        let c = self.u64()? as usize;
        let h = self.u64()? as usize;
        let w = self.u64()? as usize;
        Ok(Shape::new(n, c, h, w))
    }

    fn f32_vec(&mut self, len: usize) -> Result<Vec<f32>> {
        let mut buf = vec![0u8; len * 4];
        self.exact(&mut buf)?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn skip(&mut self, bytes: u64) -> Result<()> {
        self.inner
            .seek_relative(bytes as i64)
            .map_err(|e| Error::io(self.path.display().to_string(), e))
    }
}
