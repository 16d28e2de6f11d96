//! Model files: line-oriented text, shortest round-trip decimals, and a
//! trailing SHA-256 over everything above the hash line.
//!
//! ```text
//! format_version 1
//! kind gdp_model
//! dtype f64
//! version gdp-net-1
//! ordering ns
//! encoder trad
//! input_dim 2
//! hidden_dim 32
//! embed_dim 8
//! seed 17
//! manifest <id>            (optional)
//! tensor age_proj.w 32 1
//! 0.1 -0.25 ...
//! ...
//! content_hash <hex>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{GdpModel, ModelDims, Network};
use crate::encoders::EncoderKind;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::sha256_hex;
use crate::sequencing::Ordering;

pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn write_model<T: Scalar>(model: &GdpModel<T>) -> String {
    write_model_cited(model, None)
}

/// Model text with an optional `manifest` line naming the run that wrote it.
pub fn write_model_cited<T: Scalar>(model: &GdpModel<T>, manifest_id: Option<&str>) -> String {
    let mut s = String::new();
    let d = &model.dims;
    let _ = writeln!(s, "format_version {MODEL_FORMAT_VERSION}");
    let _ = writeln!(s, "kind gdp_model");
    let _ = writeln!(s, "dtype {}", T::DTYPE);
    let _ = writeln!(s, "version {}", model.version);
    let _ = writeln!(s, "ordering {}", model.ordering.name());
    let _ = writeln!(s, "encoder {}", model.encoder_kind.name());
    let _ = writeln!(s, "input_dim {}", d.input_dim);
    let _ = writeln!(s, "hidden_dim {}", d.hidden_dim);
    let _ = writeln!(s, "embed_dim {}", d.embed_dim);
    let _ = writeln!(s, "seed {}", model.seed);
    if let Some(id) = manifest_id {
        let _ = writeln!(s, "manifest {id}");
    }
    for t in model.net.tensors() {
        let _ = writeln!(s, "tensor {} {} {}", t.name, t.rows, t.cols);
        let vals: Vec<String> = t.values.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "{}", vals.join(" "));
    }
    let hash = sha256_hex(s.as_bytes());
    let _ = writeln!(s, "content_hash {hash}");
    s
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn field<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<&'a str> {
    let line = lines.next().ok_or_else(|| fmt_err(format!("missing `{key}`")))?;
    match line.split_once(' ') {
        Some((k, v)) if k == key => Ok(v.trim()),
        _ => Err(fmt_err(format!("expected `{key}`, found `{line}`"))),
    }
}

fn num<N: std::str::FromStr>(s: &str, key: &str) -> Result<N> {
    s.parse()
        .map_err(|_| fmt_err(format!("`{key}` value `{s}` is not a valid number")))
}

pub fn parse_model<T: Scalar>(text: &str) -> Result<GdpModel<T>> {
    let body_end = text
        .rfind("content_hash ")
        .ok_or_else(|| fmt_err("missing content_hash line"))?;
    let (body, tail) = text.split_at(body_end);
    let expected = tail["content_hash ".len()..].trim().to_string();
    let found = sha256_hex(body.as_bytes());
    if expected != found {
        return Err(Error::HashMismatch { expected, found });
    }

    let mut lines = body.lines().peekable();
    let v: u32 = num(field(&mut lines, "format_version")?, "format_version")?;
    if v != MODEL_FORMAT_VERSION {
        return Err(fmt_err(format!("unsupported model format_version {v}")));
    }
    if field(&mut lines, "kind")? != "gdp_model" {
        return Err(fmt_err("not a gdp_model file"));
    }
    let dtype = field(&mut lines, "dtype")?;
    if dtype != T::DTYPE {
        return Err(fmt_err(format!("file holds {dtype} weights, requested {}", T::DTYPE)));
    }
    let version = field(&mut lines, "version")?.to_string();
    let ord = field(&mut lines, "ordering")?;
    let ordering = Ordering::parse(ord).ok_or_else(|| fmt_err(format!("unknown ordering `{ord}`")))?;
    let enc = field(&mut lines, "encoder")?;
    let encoder_kind = EncoderKind::parse(enc).ok_or_else(|| fmt_err(format!("unknown encoder `{enc}`")))?;
    let dims = ModelDims {
        input_dim: num(field(&mut lines, "input_dim")?, "input_dim")?,
        hidden_dim: num(field(&mut lines, "hidden_dim")?, "hidden_dim")?,
        embed_dim: num(field(&mut lines, "embed_dim")?, "embed_dim")?,
    };
    dims.validate().map_err(|e| fmt_err(e.to_string()))?;
    let seed = num(field(&mut lines, "seed")?, "seed")?;
    if lines.peek().is_some_and(|l| l.starts_with("manifest ")) {
        lines.next();
    }

    let mut net = Network::<T>::zeros(ordering, &dims);
    let shapes: Vec<(&str, usize, usize)> = net.tensors().iter().map(|t| (t.name, t.rows, t.cols)).collect();
    for (slot, (name, rows, cols)) in net.tensors_mut().into_iter().zip(shapes) {
        let header = field(&mut lines, "tensor")?;
        let want = format!("{name} {rows} {cols}");
        if header != want {
            return Err(fmt_err(format!("expected tensor `{want}`, found `{header}`")));
        }
        let data = lines
            .next()
            .ok_or_else(|| fmt_err(format!("tensor `{name}` has no data line")))?;
        let vals = data
            .split_whitespace()
            .map(|t| num::<T>(t, name))
            .collect::<Result<Vec<T>>>()?;
        if vals.len() != slot.values.len() {
            return Err(fmt_err(format!(
                "tensor `{name}` has {} values, expected {}",
                vals.len(),
                slot.values.len()
            )));
        }
        slot.values.copy_from_slice(&vals);
    }
    if let Some(extra) = lines.find(|l| !l.trim().is_empty()) {
        return Err(fmt_err(format!("unexpected line `{extra}`")));
    }
    Ok(GdpModel {
        ordering,
        encoder_kind,
        dims,
        seed,
        version,
        net,
    })
}

pub fn save_model<T: Scalar>(model: &GdpModel<T>, path: &Path) -> Result<()> {
    std::fs::write(path, write_model(model)).map_err(|e| Error::io(path, e))
}

/// The `manifest` id cited by a model file, if any.
pub fn cited_manifest(text: &str) -> Option<&str> {
    text.lines().find_map(|l| l.strip_prefix("manifest ")).map(str::trim)
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<GdpModel<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_model;

    fn dims() -> ModelDims {
        ModelDims {
            input_dim: 3,
            hidden_dim: 5,
            embed_dim: 2,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for ord in Ordering::ALL {
            let m: GdpModel<f64> = init_model(ord, EncoderKind::Pe, dims(), 11).unwrap();
            let text = write_model(&m);
            assert_eq!(parse_model::<f64>(&text).unwrap(), m);
            assert_eq!(write_model(&parse_model::<f64>(&text).unwrap()), text);
        }
        let m32: GdpModel<f32> = init_model(Ordering::Seq, EncoderKind::Trad, dims(), 1).unwrap();
        assert_eq!(parse_model::<f32>(&write_model(&m32)).unwrap(), m32);
    }

    #[test]
    fn manifest_citation_is_optional() {
        let m: GdpModel<f64> = init_model(Ordering::Ns, EncoderKind::Trad, dims(), 2).unwrap();
        let text = write_model_cited(&m, Some("abc123"));
        assert_eq!(cited_manifest(&text), Some("abc123"));
        assert_eq!(parse_model::<f64>(&text).unwrap(), m);
        assert_eq!(cited_manifest(&write_model(&m)), None);
    }

    #[test]
    fn tampering_is_detected() {
        let m: GdpModel<f64> = init_model(Ordering::Ns, EncoderKind::Trad, dims(), 11).unwrap();
        let text = write_model(&m).replacen("seed 11", "seed 12", 1);
        assert!(matches!(parse_model::<f64>(&text), Err(Error::HashMismatch { .. })));
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let m: GdpModel<f64> = init_model(Ordering::Ns, EncoderKind::Trad, dims(), 11).unwrap();
        assert!(matches!(parse_model::<f32>(&write_model(&m)), Err(Error::Format(_))));
    }
}
