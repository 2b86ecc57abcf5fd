//! Parameter tensors and the `UPDW1` weight file.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        5 bytes  "UPDW1"
//! config       u32 patch_size, u32 embed_dim, 4 x u32 depths, 4 x u32 heads,
//!              u32 window_size, f64 mlp_ratio, u32 num_classes, u64 seed
//! count        u32 number of tensors that follow
//! tensor       u16 name length, name (UTF-8), u8 rank, rank x u32 dims,
//!              prod(dims) x f64 values
//! [head]       optional: 4 bytes "HEAD", u32 count, tensors
//! ```
//!
//! Backbone tensors appear in this order: `patch_embed.{weight,bias}`; then
//! per stage `s`: `stages.s.merge.{weight,bias}` (stages 1..3 only), and per
//! block `b`: `stages.s.blocks.b.` + `norm1.{gamma,beta}`, `attn.qkv.{weight,bias}`,
//! `attn.proj.{weight,bias}`, `norm2.{gamma,beta}`, `mlp.fc1.{weight,bias}`,
//! `mlp.fc2.{weight,bias}`; finally `head.norm.{gamma,beta}` and
//! `head.fc.{weight,bias}`. Matrices are stored `in_dim x out_dim`.
//!
//! The optional `HEAD` section carries a trained `head.fc.{weight,bias}` pair
//! that replaces the one in the backbone block.

use std::io::{Read, Write};
use std::path::Path;

use super::layers::{LayerNorm, Linear};
use super::{SwinConfig, NUM_STAGES};
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"UPDW1";
const HEAD_TAG: &[u8; 4] = b"HEAD";

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub norm1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl BlockWeights {
    fn init(seed: u64, path: &str, dim: usize, hidden: usize) -> Self {
        Self {
            norm1: LayerNorm::new(dim),
            qkv: Linear::init(seed, &format!("{path}.attn.qkv"), dim, 3 * dim),
            proj: Linear::init(seed, &format!("{path}.attn.proj"), dim, dim),
            norm2: LayerNorm::new(dim),
            fc1: Linear::init(seed, &format!("{path}.mlp.fc1"), dim, hidden),
            fc2: Linear::init(seed, &format!("{path}.mlp.fc2"), hidden, dim),
        }
    }

    /// Block whose attention and MLP branches output zero, so the block is
    /// the identity through its residual connections.
    pub fn identity(dim: usize, hidden: usize) -> Self {
        Self {
            norm1: LayerNorm::new(dim),
            qkv: Linear::zeros(dim, 3 * dim),
            proj: Linear::zeros(dim, dim),
            norm2: LayerNorm::new(dim),
            fc1: Linear::zeros(dim, hidden),
            fc2: Linear::zeros(hidden, dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageWeights {
    /// 2x2 patch merging at the start of the stage; absent for stage 1.
    pub merge: Option<Linear>,
    pub blocks: Vec<BlockWeights>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub norm: LayerNorm,
    pub fc: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwinWeights {
    pub patch_embed: Linear,
    pub stages: Vec<StageWeights>,
    pub head: HeadWeights,
}

impl SwinWeights {
    /// Truncated-normal projections (std 0.02), zero biases, unit LayerNorms;
    /// every tensor keyed on `(config.seed, parameter path)`.
    pub fn init(cfg: &SwinConfig) -> Self {
        let seed = cfg.seed;
        let patch_len = cfg.patch_size * cfg.patch_size * 3;
        let stages = (0..NUM_STAGES)
            .map(|s| {
                let dim = cfg.stage_dim(s);
                let merge = (s > 0).then(|| {
                    Linear::init(seed, &format!("stages.{s}.merge"), 2 * dim, dim)
                });
                let blocks = (0..cfg.depths[s])
                    .map(|b| {
                        BlockWeights::init(
                            seed,
                            &format!("stages.{s}.blocks.{b}"),
                            dim,
                            cfg.mlp_hidden(s),
                        )
                    })
                    .collect();
                StageWeights { merge, blocks }
            })
            .collect();
        Self {
            patch_embed: Linear::init(seed, "patch_embed", patch_len, cfg.embed_dim),
            stages,
            head: HeadWeights {
                norm: LayerNorm::new(cfg.last_dim()),
                fc: Linear::init(seed, "head.fc", cfg.last_dim(), cfg.num_classes),
            },
        }
    }

    fn visit(&self, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        let lin = |f: &mut dyn FnMut(String, &[usize], &[f64]), p: &str, l: &Linear| {
            f(format!("{p}.weight"), l.weight.shape(), l.weight.as_slice().unwrap());
            f(format!("{p}.bias"), l.bias.shape(), l.bias.as_slice().unwrap());
        };
        let ln = |f: &mut dyn FnMut(String, &[usize], &[f64]), p: &str, n: &LayerNorm| {
            f(format!("{p}.gamma"), n.gamma.shape(), n.gamma.as_slice().unwrap());
            f(format!("{p}.beta"), n.beta.shape(), n.beta.as_slice().unwrap());
        };
        lin(f, "patch_embed", &self.patch_embed);
        for (s, stage) in self.stages.iter().enumerate() {
            if let Some(m) = &stage.merge {
                lin(f, &format!("stages.{s}.merge"), m);
            }
            for (b, blk) in stage.blocks.iter().enumerate() {
                let p = format!("stages.{s}.blocks.{b}");
                ln(f, &format!("{p}.norm1"), &blk.norm1);
                lin(f, &format!("{p}.attn.qkv"), &blk.qkv);
                lin(f, &format!("{p}.attn.proj"), &blk.proj);
                ln(f, &format!("{p}.norm2"), &blk.norm2);
                lin(f, &format!("{p}.mlp.fc1"), &blk.fc1);
                lin(f, &format!("{p}.mlp.fc2"), &blk.fc2);
            }
        }
        ln(f, "head.norm", &self.head.norm);
        lin(f, "head.fc", &self.head.fc);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(String, &[usize], &mut [f64]) -> Result<()>) -> Result<()> {
        fn lin(
            f: &mut dyn FnMut(String, &[usize], &mut [f64]) -> Result<()>,
            p: &str,
            l: &mut Linear,
        ) -> Result<()> {
            let shape = l.weight.shape().to_vec();
            f(format!("{p}.weight"), &shape, l.weight.as_slice_mut().unwrap())?;
            let shape = l.bias.shape().to_vec();
            f(format!("{p}.bias"), &shape, l.bias.as_slice_mut().unwrap())
        }
        fn ln(
            f: &mut dyn FnMut(String, &[usize], &mut [f64]) -> Result<()>,
            p: &str,
            n: &mut LayerNorm,
        ) -> Result<()> {
            let shape = n.gamma.shape().to_vec();
            f(format!("{p}.gamma"), &shape, n.gamma.as_slice_mut().unwrap())?;
            let shape = n.beta.shape().to_vec();
            f(format!("{p}.beta"), &shape, n.beta.as_slice_mut().unwrap())
        }
        lin(f, "patch_embed", &mut self.patch_embed)?;
        for (s, stage) in self.stages.iter_mut().enumerate() {
            if let Some(m) = &mut stage.merge {
                lin(f, &format!("stages.{s}.merge"), m)?;
            }
            for (b, blk) in stage.blocks.iter_mut().enumerate() {
                let p = format!("stages.{s}.blocks.{b}");
                ln(f, &format!("{p}.norm1"), &mut blk.norm1)?;
                lin(f, &format!("{p}.attn.qkv"), &mut blk.qkv)?;
                lin(f, &format!("{p}.attn.proj"), &mut blk.proj)?;
                ln(f, &format!("{p}.norm2"), &mut blk.norm2)?;
                lin(f, &format!("{p}.mlp.fc1"), &mut blk.fc1)?;
                lin(f, &format!("{p}.mlp.fc2"), &mut blk.fc2)?;
            }
        }
        ln(f, "head.norm", &mut self.head.norm)?;
        lin(f, "head.fc", &mut self.head.fc)
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, data| n += data.len());
        n
    }
}

fn write_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes the config and backbone, plus an optional trained head section.
pub fn encode(cfg: &SwinConfig, weights: &SwinWeights, trained_head: Option<&Linear>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [cfg.patch_size, cfg.embed_dim] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in cfg.depths.iter().chain(cfg.num_heads.iter()) {
        out.extend_from_slice(&(*v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(cfg.window_size as u32).to_le_bytes());
    out.extend_from_slice(&cfg.mlp_ratio.to_le_bytes());
    out.extend_from_slice(&(cfg.num_classes as u32).to_le_bytes());
    out.extend_from_slice(&cfg.seed.to_le_bytes());

    let mut count = 0u32;
    weights.visit(&mut |_, _, _| count += 1);
    out.extend_from_slice(&count.to_le_bytes());
    weights.visit(&mut |name, shape, data| write_tensor(&mut out, &name, shape, data));

    if let Some(head) = trained_head {
        out.extend_from_slice(HEAD_TAG);
        out.extend_from_slice(&2u32.to_le_bytes());
        write_tensor(&mut out, "head.fc.weight", head.weight.shape(), head.weight.as_slice().unwrap());
        write_tensor(&mut out, "head.fc.bias", head.bias.shape(), head.bias.as_slice().unwrap());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::WeightFormat(format!(
                "unexpected end of file at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor_into(&mut self, name: &str, shape: &[usize], dst: &mut [f64]) -> Result<()> {
        let len = self.u16()? as usize;
        let found = std::str::from_utf8(self.take(len)?)
            .map_err(|_| Error::WeightFormat("tensor name is not UTF-8".into()))?;
        if found != name {
            return Err(Error::WeightFormat(format!(
                "expected tensor {name}, found {found}"
            )));
        }
        let rank = self.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32()? as usize);
        }
        if dims != shape {
            return Err(Error::WeightFormat(format!(
                "tensor {name} has shape {dims:?}, config requires {shape:?}"
            )));
        }
        for slot in dst.iter_mut() {
            let v = self.f64()?;
            if !v.is_finite() {
                return Err(Error::WeightFormat(format!("tensor {name} holds {v}")));
            }
            *slot = v;
        }
        Ok(())
    }
}

/// Parses a weight file. Returns the config, the weights (with any trained
/// head already applied) and whether a trained head section was present.
pub fn decode(buf: &[u8]) -> Result<(SwinConfig, SwinWeights, bool)> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err(Error::WeightFormat("missing UPDW1 magic".into()));
    }
    let patch_size = cur.u32()? as usize;
    let embed_dim = cur.u32()? as usize;
    let mut depths = [0; NUM_STAGES];
    for d in depths.iter_mut() {
        *d = cur.u32()? as usize;
    }
    let mut num_heads = [0; NUM_STAGES];
    for h in num_heads.iter_mut() {
        *h = cur.u32()? as usize;
    }
    let cfg = SwinConfig {
        patch_size,
        embed_dim,
        depths,
        num_heads,
        window_size: cur.u32()? as usize,
        mlp_ratio: cur.f64()?,
        num_classes: cur.u32()? as usize,
        seed: cur.u64()?,
    };
    cfg.validate()
        .map_err(|e| Error::WeightFormat(format!("invalid config block: {e}")))?;

    let mut weights = SwinWeights::init(&cfg);
    let mut expected = 0u32;
    weights.visit(&mut |_, _, _| expected += 1);
    let count = cur.u32()?;
    if count != expected {
        return Err(Error::WeightFormat(format!(
            "file holds {count} tensors, config requires {expected}"
        )));
    }
    weights.visit_mut(&mut |name, shape, dst| cur.tensor_into(&name, shape, dst))?;

    let mut has_head = false;
    if cur.pos < buf.len() {
        if cur.take(HEAD_TAG.len())? != HEAD_TAG {
            return Err(Error::WeightFormat("unknown trailing section".into()));
        }
        if cur.u32()? != 2 {
            return Err(Error::WeightFormat("head section must hold 2 tensors".into()));
        }
        let fc = &mut weights.head.fc;
        let shape = fc.weight.shape().to_vec();
        cur.tensor_into("head.fc.weight", &shape, fc.weight.as_slice_mut().unwrap())?;
        let shape = fc.bias.shape().to_vec();
        cur.tensor_into("head.fc.bias", &shape, fc.bias.as_slice_mut().unwrap())?;
        has_head = true;
        if cur.pos != buf.len() {
            return Err(Error::WeightFormat("trailing bytes after head section".into()));
        }
    }
    Ok((cfg, weights, has_head))
}

pub fn save(
    path: impl AsRef<Path>,
    cfg: &SwinConfig,
    weights: &SwinWeights,
    trained_head: Option<&Linear>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(cfg, weights, trained_head);
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(SwinConfig, SwinWeights, bool)> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SwinConfig {
        SwinConfig {
            patch_size: 2,
            embed_dim: 8,
            depths: [1, 1, 2, 1],
            num_heads: [1, 2, 2, 4],
            window_size: 2,
            seed: 11,
            ..SwinConfig::default()
        }
    }

    #[test]
    fn init_is_reproducible() {
        let a = SwinWeights::init(&small());
        let b = SwinWeights::init(&small());
        assert_eq!(encode(&small(), &a, None), encode(&small(), &b, None));
        let other = SwinWeights::init(&SwinConfig { seed: 12, ..small() });
        assert_ne!(a, other);
        assert_eq!(a.patch_embed.bias.iter().sum::<f64>(), 0.0);
        assert!(a.stages[0].merge.is_none() && a.stages[1].merge.is_some());
    }

    #[test]
    fn roundtrip_with_head() {
        let cfg = small();
        let w = SwinWeights::init(&cfg);
        let mut head = w.head.fc.clone();
        head.weight.fill(0.25);
        head.bias[1] = -1.0;
        let bytes = encode(&cfg, &w, Some(&head));
        assert_eq!(&bytes[..5], b"UPDW1");
        let (cfg2, w2, has_head) = decode(&bytes).unwrap();
        assert_eq!(cfg2, cfg);
        assert!(has_head);
        assert_eq!(w2.head.fc, head);
        assert_eq!(w2.patch_embed, w.patch_embed);
        assert_eq!(w2.stages, w.stages);
    }

    #[test]
    fn rejects_corruption() {
        let cfg = small();
        let bytes = encode(&cfg, &SwinWeights::init(&cfg), None);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut trailing = bytes;
        trailing.extend_from_slice(b"JUNK");
        assert!(decode(&trailing).is_err());
    }
}
