//! Named-tensor text format shared by every model file.
//!
//! ```text
//! # handoff-tensors <kind>
//! <name>;<shape>;<v1>,<v2>,...
//! ```
//!
//! `shape` is `x`-separated dimensions (`16x8`, `4`). Values are row-major
//! and use the shortest round-trip decimal representation, so a model
//! written and read back is bit-identical.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            values,
        }
    }

    pub fn scalar(name: impl Into<String>, v: f64) -> Self {
        Self::new(name, &[1], vec![v])
    }
}

pub fn write_tensors(kind: &str, tensors: &[NamedTensor]) -> String {
    let mut out = format!("# handoff-tensors {kind}\n");
    for t in tensors {
        let shape: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        let values: Vec<String> = t.values.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{};{};{}\n", t.name, shape.join("x"), values.join(",")));
    }
    out
}

pub fn read_tensors(text: &str, expected_kind: &str) -> Result<Vec<NamedTensor>> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or("");
    let kind = header
        .strip_prefix("# handoff-tensors ")
        .ok_or_else(|| perr(1, "missing tensor header"))?;
    if kind != expected_kind {
        return Err(perr(1, &format!("expected `{expected_kind}` tensors, found `{kind}`")));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let ln = i + 1;
        let parts: Vec<&str> = line.split(';').collect();
        if parts.len() != 3 {
            return Err(perr(ln, "expected name;shape;values"));
        }
        let shape = parts[1]
            .split('x')
            .map(|d| d.parse::<usize>().map_err(|_| perr(ln, "bad shape")))
            .collect::<Result<Vec<_>>>()?;
        let values = if parts[2].is_empty() {
            Vec::new()
        } else {
            parts[2]
                .split(',')
                .map(|v| v.parse::<f64>().map_err(|_| perr(ln, "bad value")))
                .collect::<Result<Vec<_>>>()?
        };
        if shape.iter().product::<usize>() != values.len() {
            return Err(perr(ln, "shape does not match value count"));
        }
        out.push(NamedTensor {
            name: parts[0].to_string(),
            shape,
            values,
        });
    }
    Ok(out)
}

/// Looks up a tensor by name and checks its shape.
pub fn take<'a>(tensors: &'a [NamedTensor], name: &str, shape: &[usize]) -> Result<&'a [f64]> {
    let t = tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| perr(0, &format!("missing tensor `{name}`")))?;
    if t.shape != shape {
        return Err(perr(0, &format!("tensor `{name}` has shape {:?}, expected {shape:?}", t.shape)));
    }
    Ok(&t.values)
}

fn perr(line: usize, reason: &str) -> Error {
    Error::Parse {
        line,
        reason: reason.to_string(),
    }
}
