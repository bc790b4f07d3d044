//! NETSPEC line format.
//!
//! ```text
//! input <name> channels=<C>
//! conv <name> from=<src> k=<K> s=<S> p=<P> d=<D> cout=<C> bias=<0|1>
//! relu <name> from=<src>
//! maxpool <name> from=<src> k=<K> s=<S>
//! upsample <name> from=<src> f=<F>
//! cropconcat <name> from=<a>,<b>
//! output <name> from=<src>
//! ```
//!
//! `#` starts a comment. Conv defaults: `s=1 p=0 d=1 bias=1`; maxpool `s`
//! defaults to `k`.

use std::collections::HashMap;

use super::{ConvParams, LayerKind, LayerNode, NetworkGraph};
use crate::error::{Error, Result};

/// Cumulative stride as a reduced fraction (upsampling divides it).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Ratio {
    num: u64,
    den: u64,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Ratio {
    fn new(num: u64, den: u64) -> Self {
        let g = gcd(num, den);
        Ratio {
            num: num / g,
            den: den / g,
        }
    }

    fn times(self, s: usize) -> Self {
        Ratio::new(self.num * s as u64, self.den)
    }

    fn over(self, f: usize) -> Self {
        Ratio::new(self.num, self.den * f as u64)
    }
}

impl std::fmt::Display for Ratio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

struct Fields<'a> {
    line: usize,
    map: HashMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    fn parse(line: usize, tokens: &[&'a str], allowed: &[&str]) -> Result<Self> {
        let mut map = HashMap::new();
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::spec(line, format!("expected key=value, got '{tok}'")))?;
            if !allowed.contains(&k) {
                return Err(Error::spec(line, format!("unknown key '{k}'")));
            }
            if map.insert(k, v).is_some() {
                return Err(Error::spec(line, format!("duplicate key '{k}'")));
            }
        }
        Ok(Fields { line, map })
    }

    fn uint(&self, key: &str, default: Option<usize>, min: usize) -> Result<usize> {
        let v = match (self.map.get(key), default) {
            (Some(v), _) => v
                .parse::<usize>()
                .map_err(|_| Error::spec(self.line, format!("{key}: '{v}' is not a non-negative integer")))?,
            (None, Some(d)) => d,
            (None, None) => return Err(Error::spec(self.line, format!("missing required key '{key}'"))),
        };
        if v < min {
            return Err(Error::spec(self.line, format!("{key} must be >= {min}, got {v}")));
        }
        Ok(v)
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.map.get(key) {
            None => Ok(default),
            Some(&"0") => Ok(false),
            Some(&"1") => Ok(true),
            Some(v) => Err(Error::spec(self.line, format!("{key} must be 0 or 1, got '{v}'"))),
        }
    }

    fn from(&self) -> Result<&'a str> {
        self.map
            .get("from")
            .copied()
            .ok_or_else(|| Error::spec(self.line, "missing required key 'from'"))
    }
}

pub(super) fn parse(text: &str) -> Result<NetworkGraph> {
    let mut nodes: Vec<LayerNode> = Vec::new();
    let mut strides: Vec<Ratio> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut input = None;
    let mut output = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let keyword = tokens[0];
        let name = *tokens
            .get(1)
            .ok_or_else(|| Error::spec(line_no, format!("'{keyword}' needs a node name")))?;
        if name.contains('=') {
            return Err(Error::spec(line_no, format!("'{name}' is not a valid node name")));
        }
        if index.contains_key(name) {
            return Err(Error::spec(line_no, format!("duplicate node name '{name}'")));
        }
        let rest = &tokens[2..];

        let lookup = |src: &str| -> Result<usize> {
            if src == name {
                return Err(Error::spec(line_no, format!("node '{name}' refers to itself (cycle)")));
            }
            index.get(src).copied().ok_or_else(|| {
                Error::spec(
                    line_no,
                    format!("'{src}' is not declared before '{name}' (forward reference or cycle)"),
                )
            })
        };

        let (kind, parents) = match keyword {
            "input" => {
                let f = Fields::parse(line_no, rest, &["channels"])?;
                (
                    LayerKind::Input {
                        channels: f.uint("channels", None, 1)?,
                    },
                    vec![],
                )
            }
            "conv" => {
                let f = Fields::parse(line_no, rest, &["from", "k", "s", "p", "d", "cout", "bias"])?;
                let params = ConvParams {
                    k: f.uint("k", None, 1)?,
                    s: f.uint("s", Some(1), 1)?,
                    p: f.uint("p", Some(0), 0)?,
                    d: f.uint("d", Some(1), 1)?,
                    cout: f.uint("cout", None, 1)?,
                    bias: f.flag("bias", true)?,
                };
                (LayerKind::Conv(params), vec![lookup(f.from()?)?])
            }
            "relu" => {
                let f = Fields::parse(line_no, rest, &["from"])?;
                (LayerKind::Relu, vec![lookup(f.from()?)?])
            }
            "maxpool" => {
                let f = Fields::parse(line_no, rest, &["from", "k", "s"])?;
                let k = f.uint("k", None, 1)?;
                (
                    LayerKind::MaxPool {
                        k,
                        s: f.uint("s", Some(k), 1)?,
                    },
                    vec![lookup(f.from()?)?],
                )
            }
            "upsample" => {
                let f = Fields::parse(line_no, rest, &["from", "f"])?;
                (
                    LayerKind::Upsample {
                        f: f.uint("f", None, 2)?,
                    },
                    vec![lookup(f.from()?)?],
                )
            }
            "cropconcat" => {
                let f = Fields::parse(line_no, rest, &["from"])?;
                let srcs: Vec<&str> = f.from()?.split(',').collect();
                if srcs.len() != 2 {
                    return Err(Error::spec(
                        line_no,
                        "cropconcat needs exactly two parents: from=<a>,<b>",
                    ));
                }
                (LayerKind::CropConcat, vec![lookup(srcs[0])?, lookup(srcs[1])?])
            }
            "output" => {
                let f = Fields::parse(line_no, rest, &["from"])?;
                (LayerKind::Output, vec![lookup(f.from()?)?])
            }
            other => return Err(Error::spec(line_no, format!("unknown node kind '{other}'"))),
        };

        let idx = nodes.len();
        let (channels, stride) = match kind {
            LayerKind::Input { channels } => {
                if input.replace(idx).is_some() {
                    return Err(Error::spec(line_no, "more than one input node"));
                }
                (channels, Ratio::new(1, 1))
            }
            LayerKind::Conv(c) => (c.cout, strides[parents[0]].times(c.s)),
            LayerKind::MaxPool { s, .. } => (nodes[parents[0]].channels, strides[parents[0]].times(s)),
            LayerKind::Upsample { f } => (nodes[parents[0]].channels, strides[parents[0]].over(f)),
            LayerKind::Relu => (nodes[parents[0]].channels, strides[parents[0]]),
            LayerKind::CropConcat => {
                let (a, b) = (strides[parents[0]], strides[parents[1]]);
                if a != b {
                    return Err(Error::spec(
                        line_no,
                        format!("cropconcat parents sit at cumulative strides {a} and {b}"),
                    ));
                }
                (nodes[parents[0]].channels + nodes[parents[1]].channels, a)
            }
            LayerKind::Output => {
                if output.replace(idx).is_some() {
                    return Err(Error::spec(line_no, "more than one output node"));
                }
                (nodes[parents[0]].channels, strides[parents[0]])
            }
        };
        index.insert(name.to_string(), idx);
        strides.push(stride);
        nodes.push(LayerNode {
            name: name.to_string(),
            kind,
            parents,
            channels,
        });
    }

    let last = text.lines().count().max(1);
    let input = input.ok_or_else(|| Error::spec(last, "no input node"))?;
    let output = output.ok_or_else(|| Error::spec(last, "no output node"))?;
    let weights = vec![None; nodes.len()];
    Ok(NetworkGraph {
        nodes,
        input,
        output,
        weights,
    })
}
