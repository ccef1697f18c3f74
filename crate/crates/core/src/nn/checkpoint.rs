//! Parameter checkpoints: a text manifest followed by raw little-endian f64.
//!
//! ```text
//! mtgnn-checkpoint v1
//! gru.w_z 16x64
//! ...
//! end
//! <little-endian f64 payload, tensors in manifest order>
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::params::ModelParams;

const MAGIC: &str = "mtgnn-checkpoint v1";

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut out = String::from(MAGIC);
    out.push('\n');
    for (name, t) in params.named_tensors() {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        out.push_str(&format!("{name} {}\n", shape.join("x")));
    }
    out.push_str("end\n");
    let mut bytes = out.into_bytes();
    for t in params.tensor_list() {
        for x in t.data() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    bytes
}

/// Fills `params` from a checkpoint; names and shapes must match exactly.
pub fn decode_checkpoint(bytes: &[u8], params: &mut ModelParams) -> Result<()> {
    let mut pos = 0;
    let mut next_line = |line_no: usize| -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or(Error::Parse {
            line: line_no,
            msg: "truncated manifest".into(),
        })?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })
    };
    if next_line(1)? != MAGIC {
        return Err(Error::Parse { line: 1, msg: "not a checkpoint".into() });
    }
    let expected: Vec<(String, Vec<usize>)> =
        params.named_tensors().iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect();
    for (k, (name, shape)) in expected.iter().enumerate() {
        let line = next_line(k + 2)?;
        let (got_name, got_shape) = line.split_once(' ').unwrap_or((line, ""));
        let got_shape: Vec<usize> = if got_shape.is_empty() {
            Vec::new()
        } else {
            got_shape
                .split('x')
                .map(|d| d.parse().map_err(|_| Error::Parse { line: k + 2, msg: format!("bad shape {got_shape:?}") }))
                .collect::<Result<_>>()?
        };
        if got_name != name || &got_shape != shape {
            return Err(Error::Shape(format!("checkpoint has {got_name} {got_shape:?}, model needs {name} {shape:?}")));
        }
    }
    if next_line(expected.len() + 2)? != "end" {
        return Err(Error::Parse { line: expected.len() + 2, msg: "manifest lists extra tensors".into() });
    }
    let payload = &bytes[pos..];
    let total: usize = params.tensor_list().iter().map(|t| t.len()).sum();
    if payload.len() != total * 8 {
        return Err(Error::Shape(format!("payload holds {} bytes, expected {}", payload.len(), total * 8)));
    }
    let mut chunks = payload.chunks_exact(8);
    for (_, t) in params.named_tensors_mut() {
        for x in t.data_mut() {
            let chunk = chunks.next().expect("payload length checked");
            *x = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, params: &mut ModelParams) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ModelDims;

    fn dims() -> ModelDims {
        ModelDims { num_nodes: 5, d_mem: 3, d_time: 2, d_edge: 1, d_static: 2 }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let p = ModelParams::init(dims(), 10.0, 3);
        let bytes = encode_checkpoint(&p);
        let mut q = ModelParams::zeros(dims());
        decode_checkpoint(&bytes, &mut q).unwrap();
        assert_eq!(p.fingerprint(), q.fingerprint());
        let text = String::from_utf8_lossy(&bytes[..60]);
        assert!(text.starts_with("mtgnn-checkpoint v1\ngru.w_z 3x12\n"), "{text}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = ModelParams::init(dims(), 10.0, 3);
        let bytes = encode_checkpoint(&p);
        let mut other = ModelParams::zeros(ModelDims { d_mem: 4, ..dims() });
        assert!(matches!(decode_checkpoint(&bytes, &mut other), Err(Error::Shape(_))));
        let mut q = ModelParams::zeros(dims());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 8], &mut q).is_err());
    }
}
