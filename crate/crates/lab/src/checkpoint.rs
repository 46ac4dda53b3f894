//! Single-file training snapshots.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "PRLSCKPT" | version u32 | dtype u8 | iteration u64
//! generator optimizer step u64 | discriminator optimizer step u64
//! rng seed [u8; 32] | rng stream u64 | rng word position u128
//! config length u32 | config TOML (UTF-8)
//! block count u32 | blocks...
//! block: name length u16 | name | rank u8 | dims u64 × rank | values
//! ```
//!
//! Block names are `g/<param>` and `d/<param>` for weights and
//! `g.m/`, `g.v/`, `d.m/`, `d.v/` for the optimizer moments.

use std::collections::BTreeMap;
use std::path::Path;

use prls_core::models::ParameterSet;
use prls_core::optim::OptimState;
use prls_core::{DType, Real, Tensor};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PRLSCKPT";
pub const VERSION: u32 = 1;

/// Enough of a ChaCha generator to rebuild it at the same position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    /// Completed iterations.
    pub iteration: usize,
    pub config: RunConfig,
    pub rng: RngState,
    pub generator: ParameterSet<T>,
    pub discriminator: ParameterSet<T>,
    pub g_opt: OptimState<T>,
    pub d_opt: OptimState<T>,
}

/// Fixed-size fields read without decoding the tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub version: u32,
    pub dtype: DType,
    pub iteration: usize,
    pub config: RunConfig,
}

fn put_block<T: Real>(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[T]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in values {
        v.write_le(out);
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::DTYPE.tag());
        out.extend_from_slice(&(self.iteration as u64).to_le_bytes());
        out.extend_from_slice(&self.g_opt.step.to_le_bytes());
        out.extend_from_slice(&self.d_opt.step.to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        let config = self.config.to_toml();
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());

        let nets = [("g", &self.generator, &self.g_opt), ("d", &self.discriminator, &self.d_opt)];
        let blocks: usize = nets.iter().map(|(_, p, _)| 3 * p.len()).sum();
        out.extend_from_slice(&(blocks as u32).to_le_bytes());
        for (tag, params, opt) in nets {
            for (i, p) in params.iter().enumerate() {
                put_block(&mut out, &format!("{tag}/{}", p.name), p.value.shape(), p.value.data());
                put_block(&mut out, &format!("{tag}.m/{}", p.name), p.value.shape(), &opt.m[i]);
                put_block(&mut out, &format!("{tag}.v/{}", p.name), p.value.shape(), &opt.v[i]);
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        // Write-then-rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Decodes a file written by [`Checkpoint::to_bytes`]. Parameter sets are
    /// rebuilt from the stored configuration and must match it exactly.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, origin);
        let header = r.header()?;
        if header.dtype != T::DTYPE {
            return Err(r.fail(format!(
                "holds {} values but {} were requested",
                header.dtype.name(),
                T::DTYPE.name()
            )));
        }
        let g_step = r.u64()?;
        let d_step = r.u64()?;
        let mut seed = [0u8; 32];
        seed.copy_from_slice(r.take(32)?);
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let config_len = r.u32()? as usize;
        let config_text = std::str::from_utf8(r.take(config_len)?).map_err(|_| r.fail("config is not UTF-8".into()))?;
        let config = RunConfig::from_toml(config_text)?;

        let count = r.u32()? as usize;
        let mut blocks = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.fail("block name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let width = std::mem::size_of::<T>();
            let raw = r.take(n * width)?;
            let values = raw.chunks_exact(width).map(T::read_le).collect();
            if blocks.insert(name.clone(), (shape, values)).is_some() {
                return Err(r.fail(format!("duplicate block {name}")));
            }
        }
        if !r.rest().is_empty() {
            return Err(r.fail(format!("{} trailing bytes", r.rest().len())));
        }

        let gen_spec = config.model.generator();
        let disc_spec = config.model.discriminator();
        let mut generator = gen_spec.init_params::<T>(0)?;
        let mut discriminator = disc_spec.init_params::<T>(0)?;
        let opt_g = config.trainer.generator.core();
        let opt_d = config.trainer.discriminator.core();
        let mut g_opt = OptimState::new(opt_g.kind, &generator.values());
        let mut d_opt = OptimState::new(opt_d.kind, &discriminator.values());
        g_opt.step = g_step;
        d_opt.step = d_step;
        for (tag, params, opt) in [("g", &mut generator, &mut g_opt), ("d", &mut discriminator, &mut d_opt)] {
            let names: Vec<String> = params.names().into_iter().map(String::from).collect();
            for (i, name) in names.iter().enumerate() {
                let want = params.get(name).expect("own name").shape().to_vec();
                let mut grab = |key: String| -> Result<Vec<T>> {
                    let (shape, values) = blocks
                        .remove(&key)
                        .ok_or_else(|| r.fail(format!("missing block {key}")))?;
                    if shape != want {
                        return Err(r.fail(format!("block {key} has shape {shape:?}, model expects {want:?}")));
                    }
                    Ok(values)
                };
                let value = grab(format!("{tag}/{name}"))?;
                opt.m[i] = grab(format!("{tag}.m/{name}"))?;
                opt.v[i] = grab(format!("{tag}.v/{name}"))?;
                *params.get_mut(name).expect("own name") = Tensor::new(&want, value)?;
            }
        }
        if let Some(extra) = blocks.keys().next() {
            return Err(r.fail(format!("block {extra} does not belong to the configured model")));
        }
        Ok(Self {
            iteration: header.iteration,
            config,
            rng: RngState { seed, stream, word_pos },
            generator,
            discriminator,
            g_opt,
            d_opt,
        })
    }
}

/// Reads only the header of a checkpoint file.
pub fn read_header(path: impl AsRef<Path>) -> Result<Header> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Reader::new(&bytes, path).header()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], origin: &'a Path) -> Self {
        Self { bytes, pos: 0, origin }
    }

    fn fail(&self, detail: String) -> Error {
        Error::Checkpoint {
            path: self.origin.to_path_buf(),
            detail,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn header(&mut self) -> Result<Header> {
        if self.take(8).ok() != Some(MAGIC.as_slice()) {
            return Err(self.fail("not a checkpoint file (bad magic)".into()));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                path: self.origin.to_path_buf(),
                found: version,
                expected: VERSION,
            });
        }
        let tag = self.u8()?;
        let dtype = DType::from_tag(tag).ok_or_else(|| self.fail(format!("unknown dtype tag {tag}")))?;
        let iteration = self.u64()? as usize;
        // Skip the optimizer steps and rng state to reach the config.
        self.take(8 + 8 + 32 + 8 + 16)?;
        let len = self.u32()? as usize;
        let text = std::str::from_utf8(self.take(len)?).map_err(|_| self.fail("config is not UTF-8".into()))?;
        let config = RunConfig::from_toml(text)?;
        // Leave the cursor just past the iteration field for full decoding.
        self.pos = 8 + 4 + 1 + 8;
        Ok(Header {
            version,
            dtype,
            iteration,
            config,
        })
    }
}
