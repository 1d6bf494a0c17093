//! Versioned plain-text model format.
//!
//! ```text
//! nnilc-mlp 1
//! layers 2 8 16 8 1
//! activations relu relu relu linear
//! normalizer_mean <m0> <m1>
//! normalizer_std <s0> <s1>
//! params <count>
//! <one parameter per line>
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load cycle is bit-exact.

use super::{Activation, MlpModel, Normalizer};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_HEADER: &str = "nnilc-mlp 1";

pub fn model_to_text(model: &MlpModel) -> String {
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    let mut out = String::new();
    out.push_str(MODEL_FORMAT_HEADER);
    out.push('\n');
    let sizes: Vec<String> = model.layer_sizes().iter().map(|s| s.to_string()).collect();
    out.push_str(&format!("layers {}\n", sizes.join(" ")));
    let acts: Vec<&str> = model.activations().iter().map(|a| a.name()).collect();
    out.push_str(&format!("activations {}\n", acts.join(" ")));
    out.push_str(&format!("normalizer_mean {}\n", join(&model.normalizer.mean)));
    out.push_str(&format!("normalizer_std {}\n", join(&model.normalizer.std)));
    out.push_str(&format!("params {}\n", model.params().len()));
    for p in model.params() {
        out.push_str(&p.to_string());
        out.push('\n');
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn keyed<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, key: &str) -> Result<(usize, Vec<&'a str>)> {
    let (no, line) = lines.next().ok_or_else(|| parse_err(0, format!("missing `{key}` line")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(parse_err(no, format!("expected `{key}`")));
    }
    Ok((no, parts.collect()))
}

fn parse_f64(no: usize, s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| parse_err(no, format!("`{s}` is not a number")))
}

pub fn model_from_text(text: &str) -> Result<MlpModel> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, h)) if h == MODEL_FORMAT_HEADER => {}
        Some((no, h)) => return Err(parse_err(no, format!("unsupported model header `{h}`"))),
        None => return Err(parse_err(0, "empty model file")),
    }
    let (no, sizes) = keyed(&mut lines, "layers")?;
    let sizes = sizes
        .iter()
        .map(|s| s.parse::<usize>().map_err(|_| parse_err(no, format!("bad layer size `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    let (no, acts) = keyed(&mut lines, "activations")?;
    let acts = acts
        .iter()
        .map(|s| Activation::from_name(s).ok_or_else(|| parse_err(no, format!("unknown activation `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    let mut pair = |key: &str| -> Result<[f64; 2]> {
        let (no, vals) = keyed(&mut lines, key)?;
        if vals.len() != 2 {
            return Err(parse_err(no, format!("`{key}` needs 2 values")));
        }
        Ok([parse_f64(no, vals[0])?, parse_f64(no, vals[1])?])
    };
    let mean = pair("normalizer_mean")?;
    let std = pair("normalizer_std")?;
    let (no, count) = keyed(&mut lines, "params")?;
    let count: usize = count
        .first()
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| parse_err(no, "bad parameter count"))?;
    let mut params = Vec::with_capacity(count);
    for (no, l) in lines.by_ref().take(count) {
        params.push(parse_f64(no, l)?);
    }
    if params.len() != count {
        return Err(parse_err(no, format!("expected {count} parameters, found {}", params.len())));
    }
    if let Some((no, _)) = lines.next() {
        return Err(parse_err(no, "trailing content after parameters"));
    }
    MlpModel::from_parts(sizes, acts, params, Normalizer { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::DEFAULT_LAYER_SIZES;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = MlpModel::new(&DEFAULT_LAYER_SIZES, Activation::Relu, 17).unwrap();
        m.normalizer = Normalizer { mean: [0.05000000000000001, -1e-17], std: [0.0353553, 0.222] };
        m.params_mut()[0] = std::f64::consts::PI * 1e-300;
        m.params_mut()[1] = -0.0;
        let text = model_to_text(&m);
        let back = model_from_text(&text).unwrap();
        assert_eq!(back.layer_sizes(), m.layer_sizes());
        assert_eq!(back.activations(), m.activations());
        for (a, b) in back.params().iter().zip(m.params()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.normalizer, m.normalizer);
        assert_eq!(model_to_text(&back), text);
    }

    #[test]
    fn malformed_files_name_the_line() {
        let m = MlpModel::new(&DEFAULT_LAYER_SIZES, Activation::Relu, 1).unwrap();
        let text = model_to_text(&m);
        let mut lines: Vec<&str> = text.lines().collect();
        lines[8] = "oops";
        match model_from_text(&lines.join("\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 9),
            other => panic!("{other:?}"),
        }
        assert!(model_from_text("nnilc-mlp 2\n").is_err());
        let truncated: Vec<&str> = text.lines().take(20).collect();
        assert!(model_from_text(&truncated.join("\n")).is_err());
    }
}
