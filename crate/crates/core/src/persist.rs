//! Plain-text parameter files.
//!
//! A block is a header line followed by one line per tensor:
//!
//! ```text
//! evifuse-params v1 kind=evidence-net tensors=8 shapes=32x34,32,32,32,...
//! 0.0123 -0.5 ...
//! ```
//!
//! Values are written in Rust's shortest round-trip representation, so a
//! write/read cycle is bit-exact. Several blocks may be concatenated in one
//! file; a trained system is stored that way.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nn::ParamSet;

pub const FORMAT_TAG: &str = "evifuse-params";
pub const FORMAT_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlock {
    pub kind: String,
    pub shapes: Vec<Vec<usize>>,
    pub data: Vec<Vec<f64>>,
}

impl TensorBlock {
    pub fn new(kind: &str, shapes: Vec<Vec<usize>>, data: Vec<Vec<f64>>) -> Result<Self> {
        if kind.is_empty() || kind.contains(char::is_whitespace) {
            return Err(Error::Format(format!("invalid block kind `{kind}`")));
        }
        if shapes.len() != data.len() {
            return Err(Error::Format("shape list and tensor list differ in length".into()));
        }
        for (shape, t) in shapes.iter().zip(&data) {
            if shape.iter().product::<usize>() != t.len() {
                return Err(Error::Format(format!(
                    "tensor of {} values does not match shape {}",
                    t.len(),
                    shape_string(shape)
                )));
            }
            if let Some(v) = t.iter().find(|v| !v.is_finite()) {
                return Err(Error::Format(format!("non-finite value {v}")));
            }
        }
        Ok(Self {
            kind: kind.to_string(),
            shapes,
            data,
        })
    }

    pub fn from_params<P: ParamSet>(kind: &str, params: &P) -> Result<Self> {
        let data = params.tensors().iter().map(|t| t.to_vec()).collect();
        Self::new(kind, params.shapes(), data)
    }

    /// Copies the tensors into `params`, which must have identical shapes.
    pub fn load_into<P: ParamSet>(&self, kind: &str, params: &mut P) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!(
                "expected a `{kind}` block, found `{}`",
                self.kind
            )));
        }
        if params.shapes() != self.shapes {
            return Err(Error::Format(format!("shape list mismatch for `{kind}`")));
        }
        for (dst, src) in params.tensors_mut().into_iter().zip(&self.data) {
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    pub fn write_to(&self, out: &mut String) {
        let shapes: Vec<String> = self.shapes.iter().map(|s| shape_string(s)).collect();
        let _ = writeln!(
            out,
            "{FORMAT_TAG} {FORMAT_VERSION} kind={} tensors={} shapes={}",
            self.kind,
            self.shapes.len(),
            shapes.join(",")
        );
        for t in &self.data {
            let mut line = String::with_capacity(t.len() * 20);
            for (i, v) in t.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                let _ = write!(line, "{v:?}");
            }
            out.push_str(&line);
            out.push('\n');
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        self.write_to(&mut s);
        s
    }

    /// Parses every block in `text`. Lines starting with `#` between blocks
    /// are ignored.
    pub fn parse_all(text: &str) -> Result<Vec<TensorBlock>> {
        let mut lines = text.lines().enumerate().peekable();
        let mut blocks = Vec::new();
        while let Some((lineno, line)) = lines.next() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (kind, shapes) = parse_header(line, lineno + 1)?;
            let mut data = Vec::with_capacity(shapes.len());
            for shape in &shapes {
                let (n, body) = lines.next().ok_or_else(|| {
                    Error::Format(format!("block `{kind}` truncated after line {}", lineno + 1))
                })?;
                let values = body
                    .split_ascii_whitespace()
                    .map(|tok| {
                        tok.parse::<f64>().map_err(|_| {
                            Error::Format(format!("line {}: bad number `{tok}`", n + 1))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let expected: usize = shape.iter().product();
                if values.len() != expected {
                    return Err(Error::Format(format!(
                        "line {}: expected {expected} values, found {}",
                        n + 1,
                        values.len()
                    )));
                }
                data.push(values);
            }
            blocks.push(TensorBlock::new(&kind, shapes, data)?);
        }
        Ok(blocks)
    }

    pub fn parse_one(text: &str) -> Result<TensorBlock> {
        let mut blocks = Self::parse_all(text)?;
        if blocks.len() != 1 {
            return Err(Error::Format(format!("expected one block, found {}", blocks.len())));
        }
        Ok(blocks.remove(0))
    }
}

fn shape_string(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

fn parse_header(line: &str, lineno: usize) -> Result<(String, Vec<Vec<usize>>)> {
    let bad = |msg: &str| Error::Format(format!("line {lineno}: {msg}"));
    let mut parts = line.split_ascii_whitespace();
    if parts.next() != Some(FORMAT_TAG) {
        return Err(bad("missing format tag"));
    }
    match parts.next() {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(bad(&format!("unsupported format version `{v}`"))),
        None => return Err(bad("missing format version")),
    }
    let mut kind = None;
    let mut count = None;
    let mut shapes = None;
    for part in parts {
        let (key, value) = part.split_once('=').ok_or_else(|| bad("malformed header field"))?;
        match key {
            "kind" => kind = Some(value.to_string()),
            "tensors" => count = Some(value.parse::<usize>().map_err(|_| bad("bad tensor count"))?),
            "shapes" => {
                let parsed = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|s| {
                            s.split('x')
                                .map(|d| d.parse::<usize>().map_err(|_| bad("bad shape")))
                                .collect::<Result<Vec<usize>>>()
                        })
                        .collect::<Result<Vec<_>>>()?
                };
                shapes = Some(parsed);
            }
            _ => return Err(bad(&format!("unknown header field `{key}`"))),
        }
    }
    let kind = kind.ok_or_else(|| bad("missing kind"))?;
    let shapes = shapes.ok_or_else(|| bad("missing shapes"))?;
    if count != Some(shapes.len()) {
        return Err(bad("tensor count does not match shape list"));
    }
    Ok((kind, shapes))
}
