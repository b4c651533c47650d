//! Flat binary parameter files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   8 bytes  "R3DPARAM"
//! version u32      1
//! count   u32      number of tensors
//! repeated `count` times:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims (u64 each)
//!   data     f64 × product(dims)
//! ```
//!
//! Tensor names are slash-separated paths such as `stage0/gate/r3/layer1/weight`.
//! Activation tags are stored as one-element tensors holding the tag code.

use std::io::{Read, Write};
use std::path::Path;

use super::{Activation, AttentionParams, AttentionSpec, DenseLayer, DenseParams, Matrix};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"R3DPARAM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    tensors: Vec<Tensor>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(Tensor {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.iter().any(|t| t.name == name)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            w.write_all(&(t.name.len() as u32).to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for d in &t.shape {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a parameter file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported parameter file version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut archive = Self::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                read_exact(&mut r, &mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            archive.tensors.push(Tensor { name, shape, data });
        }
        Ok(archive)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }

    pub fn put_layer(&mut self, prefix: &str, layer: &DenseLayer) {
        self.push(
            format!("{prefix}/weight"),
            vec![layer.input_dim(), layer.output_dim()],
            layer.weight.as_slice().to_vec(),
        );
        self.push(format!("{prefix}/bias"), vec![layer.output_dim()], layer.bias.clone());
        self.push(
            format!("{prefix}/activation"),
            vec![1],
            vec![layer.activation.code()],
        );
    }

    pub fn take_layer(&self, prefix: &str) -> Result<DenseLayer> {
        let w = self.get(&format!("{prefix}/weight"))?;
        if w.shape.len() != 2 {
            return Err(Error::Format(format!("{prefix}/weight is not a matrix")));
        }
        let bias = self.get(&format!("{prefix}/bias"))?.data.clone();
        if bias.len() != w.shape[1] {
            return Err(Error::shape("parameter bias", w.shape[1], bias.len()));
        }
        let act = self.get(&format!("{prefix}/activation"))?;
        let activation = Activation::from_code(*act.data.first().unwrap_or(&-1.0))?;
        Ok(DenseLayer {
            weight: Matrix::from_vec(w.shape[0], w.shape[1], w.data.clone())?,
            bias,
            activation,
        })
    }

    pub fn put_dense(&mut self, prefix: &str, p: &DenseParams) {
        self.push(format!("{prefix}/depth"), vec![1], vec![p.layers.len() as f64]);
        for (i, l) in p.layers.iter().enumerate() {
            self.put_layer(&format!("{prefix}/layer{i}"), l);
        }
    }

    pub fn take_dense(&self, prefix: &str) -> Result<DenseParams> {
        let depth = self.get(&format!("{prefix}/depth"))?.data[0] as usize;
        let layers = (0..depth)
            .map(|i| self.take_layer(&format!("{prefix}/layer{i}")))
            .collect::<Result<Vec<_>>>()?;
        let p = DenseParams { layers };
        p.validate()?;
        Ok(p)
    }

    pub fn put_attention(&mut self, prefix: &str, p: &AttentionParams) {
        let s = p.spec;
        self.push(
            format!("{prefix}/spec"),
            vec![4],
            vec![s.embed_dim as f64, s.heads as f64, s.ffn_dim as f64, s.ln_eps],
        );
        for (name, l) in [
            ("query", &p.query),
            ("key", &p.key),
            ("value", &p.value),
            ("output", &p.output),
            ("ffn_in", &p.ffn_in),
            ("ffn_out", &p.ffn_out),
        ] {
            self.put_layer(&format!("{prefix}/{name}"), l);
        }
        for (name, v) in [
            ("norm1_scale", &p.norm1_scale),
            ("norm1_shift", &p.norm1_shift),
            ("norm2_scale", &p.norm2_scale),
            ("norm2_shift", &p.norm2_shift),
        ] {
            self.push(format!("{prefix}/{name}"), vec![v.len()], v.clone());
        }
    }

    pub fn take_attention(&self, prefix: &str) -> Result<AttentionParams> {
        let s = &self.get(&format!("{prefix}/spec"))?.data;
        if s.len() != 4 {
            return Err(Error::Format(format!("{prefix}/spec must hold 4 values")));
        }
        let spec = AttentionSpec {
            embed_dim: s[0] as usize,
            heads: s[1] as usize,
            ffn_dim: s[2] as usize,
            ln_eps: s[3],
        };
        let vec = |n: &str| -> Result<Vec<f64>> { Ok(self.get(&format!("{prefix}/{n}"))?.data.clone()) };
        let p = AttentionParams {
            spec,
            query: self.take_layer(&format!("{prefix}/query"))?,
            key: self.take_layer(&format!("{prefix}/key"))?,
            value: self.take_layer(&format!("{prefix}/value"))?,
            output: self.take_layer(&format!("{prefix}/output"))?,
            ffn_in: self.take_layer(&format!("{prefix}/ffn_in"))?,
            ffn_out: self.take_layer(&format!("{prefix}/ffn_out"))?,
            norm1_scale: vec("norm1_scale")?,
            norm1_shift: vec("norm1_shift")?,
            norm2_scale: vec("norm2_scale")?,
            norm2_shift: vec("norm2_shift")?,
        };
        p.validate()?;
        Ok(p)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated parameter file: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinynet::MlpSpec;

    #[test]
    fn dense_and_attention_survive_a_round_trip() {
        let dense = DenseParams::init(&MlpSpec::new(vec![5, 4, 3]), 1).unwrap();
        let attn = AttentionParams::init(AttentionSpec::new(8, 2, 12), 2).unwrap();
        let mut ar = TensorArchive::new();
        ar.put_dense("head", &dense);
        ar.put_attention("attn", &attn);
        let mut buf = Vec::new();
        ar.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back = TensorArchive::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.take_dense("head").unwrap(), dense);
        assert_eq!(back.take_attention("attn").unwrap(), attn);
    }

    #[test]
    fn header_is_little_endian() {
        let mut ar = TensorArchive::new();
        ar.push("x", vec![2], vec![1.0, -2.5]);
        let mut buf = Vec::new();
        ar.write_to(&mut buf).unwrap();
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &1u32.to_le_bytes());
        assert_eq!(&buf[16..20], &1u32.to_le_bytes());
        assert_eq!(buf[20], b'x');
        assert_eq!(&buf[21..25], &1u32.to_le_bytes());
        assert_eq!(&buf[25..33], &2u64.to_le_bytes());
        assert_eq!(&buf[33..41], &1.0f64.to_le_bytes());
        assert_eq!(buf.len(), 49);
    }

    #[test]
    fn rejects_garbage() {
        assert!(TensorArchive::read_from(&b"NOTPARAMS..."[..]).is_err());
        let mut ar = TensorArchive::new();
        ar.push("x", vec![3], vec![1.0, 2.0, 3.0]);
        let mut buf = Vec::new();
        ar.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(TensorArchive::read_from(buf.as_slice()).is_err());
    }
}
