use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use plasm_nn::Module;
use plasm_tensor::{Element, Tensor};

use crate::error::{Error, FormatError, Result};
use crate::format::{Reader, Writer};
use crate::model::Model;
use crate::optim::Adam;

pub const PLCK_MAGIC: [u8; 4] = *b"PLCK";
pub const PLCK_VERSION: u8 = 1;
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";
const ADAM_STEP: &str = "adam.step";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrained,
    Trained,
}

impl Phase {
    fn tag(self) -> u8 {
        match self {
            Phase::Pretrained => 0,
            Phase::Trained => 1,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pretrained => "pretrained",
            Phase::Trained => "trained",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Named `f32` tensors in insertion order, a phase tag and the run
/// configuration as text.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub phase: Phase,
    pub tensors: Vec<NamedTensor>,
    pub config: String,
}

impl Checkpoint {
    pub fn new(phase: Phase, config: impl Into<String>) -> Self {
        Self {
            phase,
            tensors: Vec::new(),
            config: config.into(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f32>) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(FormatError::DuplicateName(name).into());
        }
        if name.len() > u16::MAX as usize || shape.len() > u8::MAX as usize {
            return Err(Error::Config(format!("tensor {name:?} cannot be stored")));
        }
        self.tensors.push(NamedTensor {
            name,
            shape: shape.to_vec(),
            data,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Every model parameter plus, when given, the optimizer moments and step.
    pub fn from_model<T: Element>(
        model: &Model<T>,
        optimizer: Option<&Adam<T>>,
        phase: Phase,
        config: impl Into<String>,
    ) -> Result<Self> {
        let to32 = |v: &[T]| v.iter().map(|x| x.as_f64() as f32).collect::<Vec<f32>>();
        let mut ck = Self::new(phase, config);
        for (name, t) in model.named_parameters() {
            ck.push(name, t.shape(), to32(&t.data()))?;
        }
        if let Some(opt) = optimizer {
            for ((name, t), (_, m, v)) in opt.params().iter().zip(opt.moments()) {
                ck.push(format!("{ADAM_M}{name}"), t.shape(), to32(m))?;
                ck.push(format!("{ADAM_V}{name}"), t.shape(), to32(v))?;
            }
            ck.push(ADAM_STEP, &[1], vec![opt.steps_taken() as f32])?;
        }
        Ok(ck)
    }

    pub fn as_map(&self) -> HashMap<&str, (&[usize], &[f32])> {
        self.tensors
            .iter()
            .map(|t| (t.name.as_str(), (t.shape.as_slice(), t.data.as_slice())))
            .collect()
    }

    /// Copy the tensors of `groups` into `model`.
    pub fn load_into<T: Element>(&self, model: &Model<T>, groups: &[&str]) -> Result<()> {
        model.load_groups(&self.as_map(), groups)
    }

    /// Restore optimizer state saved by [`Checkpoint::from_model`].
    pub fn restore_optimizer<T: Element>(&self, opt: &mut Adam<T>) -> Result<()> {
        let map = self.as_map();
        let step = map
            .get(ADAM_STEP)
            .and_then(|(_, d)| d.first())
            .ok_or_else(|| FormatError::MissingTensor(ADAM_STEP.into()))?;
        let conv = |d: &[f32]| d.iter().map(|&x| T::from_f64(x as f64)).collect::<Vec<T>>();
        let moments = opt
            .params()
            .iter()
            .map(|(name, _)| {
                let get = |prefix: &str| {
                    let key = format!("{prefix}{name}");
                    map.get(key.as_str())
                        .map(|(_, d)| conv(d))
                        .ok_or(FormatError::MissingTensor(key))
                };
                Ok((get(ADAM_M)?, get(ADAM_V)?))
            })
            .collect::<Result<Vec<_>>>()?;
        opt.restore(*step as usize, moments)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(&PLCK_MAGIC);
        w.u8(PLCK_VERSION);
        w.u8(self.phase.tag());
        w.u32(self.tensors.len() as u32);
        for t in &self.tensors {
            w.u16(t.name.len() as u16);
            w.bytes(t.name.as_bytes());
            w.u8(t.shape.len() as u8);
            for &d in &t.shape {
                w.u32(d as u32);
            }
            t.data.iter().for_each(|&x| w.f32(x));
        }
        w.u32(self.config.len() as u32);
        w.bytes(self.config.as_bytes());
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic(PLCK_MAGIC)?;
        let version = r.u8()?;
        if version != PLCK_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let phase = match r.u8()? {
            0 => Phase::Pretrained,
            1 => Phase::Trained,
            t => return Err(FormatError::UnknownPhase(t)),
        };
        let count = r.u32()? as usize;
        let mut seen = HashSet::new();
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| FormatError::InvalidUtf8("tensor name"))?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(FormatError::DuplicateName(name));
            }
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| FormatError::DimOverflow(shape.iter().map(|&d| d as u64).collect()))?;
            let data = r
                .take(n)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        let len = r.u32()? as usize;
        let config = std::str::from_utf8(r.take(len)?)
            .map_err(|_| FormatError::InvalidUtf8("config"))?
            .to_string();
        if r.remaining() != 0 {
            return Err(FormatError::LengthMismatch {
                expected: r.offset(),
                actual: bytes.len(),
            });
        }
        Ok(Self {
            phase,
            tensors,
            config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

/// Order-sensitive FNV-1a digest of a set of tensors' bits, for cheap
/// "did anything change" checks.
pub fn digest<T: Element>(tensors: &[(String, Tensor<T>)]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    };
    for (name, t) in tensors {
        name.bytes().for_each(&mut eat);
        for v in t.data().iter() {
            v.as_f64().to_bits().to_le_bytes().into_iter().for_each(&mut eat);
        }
    }
    h
}
