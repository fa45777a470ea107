//! Binary model file.
//!
//! ```text
//! CWSD1
//! vocab <V>
//! dim <D>
//! kernels <k>:<n_k> <k>:<n_k> ...
//! tags <T>
//! mask on|off
//! <one character per line for indices 2..V; PAD and UNK are implicit>
//! payload
//! <parameter arrays as little-endian f64>
//! ```
//!
//! Arrays follow [`ModelParams::tensors`] order. The payload length is
//! checked against the header before anything is decoded.

use std::io::Write;
use std::path::Path;

use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::model::{KernelSpec, Model, ModelConfig, ModelParams};
use crate::numkit::Matrix;
use crate::tagcodec::NUM_TAGS;

pub const MAGIC: &str = "CWSD1";
const PAYLOAD_MARKER: &str = "payload";

pub fn write_model<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let cfg = &model.config;
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str(&format!("vocab {}\n", model.vocab.len()));
    header.push_str(&format!("dim {}\n", cfg.dim));
    let kernels: Vec<String> = cfg
        .kernels
        .iter()
        .map(|k| format!("{}:{}", k.size, k.filters))
        .collect();
    header.push_str(&format!("kernels {}\n", kernels.join(" ")));
    header.push_str(&format!("tags {NUM_TAGS}\n"));
    header.push_str(&format!("mask {}\n", if cfg.mask { "on" } else { "off" }));
    for &c in model.vocab.chars() {
        if c == '\n' || c == '\r' {
            return Err(Error::invalid("vocabulary contains a line break character"));
        }
        header.push(c);
        header.push('\n');
    }
    header.push_str(PAYLOAD_MARKER);
    header.push('\n');

    let mut bytes = header.into_bytes();
    bytes.reserve(model.params.num_values() * 8);
    for t in model.params.tensors() {
        for v in t.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&bytes)
        .map_err(|e| Error::io("<model writer>", e))
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_model(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let Some(n) = rest.iter().position(|&b| b == b'\n') else {
            return Err(format_err(start, "unexpected end of header"));
        };
        let line = std::str::from_utf8(&rest[..n])
            .map_err(|_| format_err(start, "header line is not UTF-8"))?;
        self.pos = start + n + 1;
        Ok((start, line))
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (off, line) = self.line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok((off, v)),
            _ => Err(format_err(off, format!("expected \"{key} ...\", found {line:?}"))),
        }
    }
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset,
        msg: msg.into(),
    }
}

fn parse_usize(off: usize, what: &str, s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| format_err(off, format!("bad {what}: {s:?}")))
}

/// Parses a model file image. Nothing is constructed unless the whole file
/// validates.
pub fn read_model(bytes: &[u8]) -> Result<Model> {
    let mut cur = Cursor { bytes, pos: 0 };
    let (_, magic) = cur.line().map_err(|_| format_err(0, "missing magic"))?;
    if magic != MAGIC {
        return Err(format_err(0, format!("bad magic {magic:?}")));
    }
    let (off, v) = cur.field("vocab")?;
    let vocab_size = parse_usize(off, "vocabulary size", v)?;
    if vocab_size < 2 {
        return Err(format_err(off, "vocabulary size below the reserved entries"));
    }
    let (off, v) = cur.field("dim")?;
    let dim = parse_usize(off, "dimension", v)?;
    let (off, v) = cur.field("kernels")?;
    let kernels = v
        .split(' ')
        .map(|kv| {
            let (k, n) = kv
                .split_once(':')
                .ok_or_else(|| format_err(off, format!("bad kernel spec {kv:?}")))?;
            Ok(KernelSpec {
                size: parse_usize(off, "kernel size", k)?,
                filters: parse_usize(off, "filter count", n)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (tags_off, v) = cur.field("tags")?;
    let tags = parse_usize(tags_off, "tag count", v)?;
    let (off, v) = cur.field("mask")?;
    let mask = match v {
        "on" => true,
        "off" => false,
        _ => return Err(format_err(off, format!("bad mask flag {v:?}"))),
    };
    let config = ModelConfig { dim, kernels, mask };
    config
        .validate()
        .map_err(|e| format_err(off, e.to_string()))?;
    if tags != NUM_TAGS {
        return Err(format_err(tags_off, format!("expected {NUM_TAGS} tags, found {tags}")));
    }

    let vocab_off = cur.pos;
    let mut chars = Vec::new();
    loop {
        let (off, line) = cur.line()?;
        if line == PAYLOAD_MARKER {
            break;
        }
        let mut it = line.chars();
        match (it.next(), it.next()) {
            (Some(c), None) => chars.push((off, c)),
            _ => return Err(format_err(off, format!("bad vocabulary line {line:?}"))),
        }
    }

    let template = ModelParams::zeros(&config, vocab_size);
    let expected = template.num_values() * 8;
    let payload = &bytes[cur.pos..];
    if payload.len() != expected {
        return Err(format_err(
            cur.pos,
            format!(
                "payload is {} bytes but the header declares {expected}",
                payload.len()
            ),
        ));
    }
    if chars.len() != vocab_size - 2 {
        return Err(format_err(
            vocab_off,
            format!(
                "header declares {} vocabulary entries, listing has {}",
                vocab_size - 2,
                chars.len()
            ),
        ));
    }
    let mut vocab = Vocab::new();
    for (off, c) in chars {
        if vocab.get(c).is_some() {
            return Err(format_err(off, format!("duplicate vocabulary entry {c:?}")));
        }
        vocab.insert(c);
    }

    let mut values = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")));
    let mut params = template;
    for t in params.tensors_mut() {
        let (r, c) = t.shape();
        let data: Vec<f64> = values.by_ref().take(r * c).collect();
        *t = Matrix::from_vec(r, c, data)?;
    }
    Ok(Model {
        config,
        vocab,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> Model {
        let vocab = Vocab::from_chars("人工智能最近很火".chars());
        Model::new(ModelConfig::uniform(3, &[2, 3], 2), vocab, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
    }

    fn image(m: &Model) -> Vec<u8> {
        let mut buf = Vec::new();
        write_model(m, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mut m = model();
        m.params.clf_c.set(0, 0, -0.0);
        m.config.mask = false;
        let back = read_model(&image(&m)).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.vocab, m.vocab);
        for (a, b) in back.params.tensors().iter().zip(m.params.tensors()) {
            let ab: Vec<u64> = a.as_slice().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.as_slice().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn header_text() {
        let img = image(&model());
        let text = String::from_utf8_lossy(&img[..60]);
        assert!(text.starts_with("CWSD1\nvocab 10\ndim 3\nkernels 2:2 3:2\ntags 4\nmask on\n人\n"));
    }

    #[test]
    fn rejects_bad_magic() {
        let mut img = image(&model());
        img[0] = b'X';
        assert!(matches!(read_model(&img), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn rejects_truncation() {
        let img = image(&model());
        for cut in [3, 20, img.len() - 1, img.len() - 8] {
            assert!(matches!(read_model(&img[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
    }

    #[test]
    fn tampered_vocab_size_is_a_payload_mismatch() {
        let img = image(&model());
        let text = String::from_utf8(img[..20].to_vec()).unwrap();
        for v in ["vocab 11", "vocab 9"] {
            let mut t = img.clone();
            let at = text.find("vocab 10").unwrap();
            t.splice(at..at + 8, v.bytes());
            match read_model(&t) {
                Err(Error::Format { msg, .. }) => assert!(msg.contains("payload"), "{msg}"),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn rejects_wrong_tag_count() {
        let mut img = image(&model());
        let at = img.windows(6).position(|w| w == b"tags 4").unwrap();
        img[at + 5] = b'5';
        match read_model(&img) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, at),
            other => panic!("unexpected {other:?}"),
        }
    }
}
