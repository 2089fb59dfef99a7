//! Versioned text container for networks.
//!
//! ```text
//! factorlab-net 1
//! lookback 30
//! layers 2
//! lstm 5 32
//! dense 32 1 none
//! params 5
//! param weight 5 128
//! <f64 bit patterns as 16-digit hex, space separated>
//! mask 0110...          (or `mask none`)
//! ...
//! ```
//!
//! Values are stored as raw bit patterns so a round trip is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::nn::{Activation, Layer, NetworkGraph, Param};
use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "factorlab-net";
const VERSION: u32 = 1;

pub fn network_to_string(net: &NetworkGraph) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "lookback {}", net.lookback());
    let _ = writeln!(s, "layers {}", net.layers().len());
    for l in net.layers() {
        let _ = match *l {
            Layer::Dense {
                fan_in,
                fan_out,
                activation,
            } => writeln!(s, "dense {fan_in} {fan_out} {}", activation.name()),
            Layer::Lstm { input, hidden } => writeln!(s, "lstm {input} {hidden}"),
            Layer::Conv {
                c_in,
                c_out,
                kernel,
                activation,
            } => writeln!(s, "conv {c_in} {c_out} {kernel} {}", activation.name()),
        };
    }
    let _ = writeln!(s, "params {}", net.params().len());
    for p in net.params() {
        let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        let kind = if p.is_weight { "weight" } else { "bias" };
        let _ = writeln!(s, "param {kind} {}", dims.join(" "));
        let vals: Vec<String> = p.value.data().iter().map(|v| format!("{:016x}", v.to_bits())).collect();
        let _ = writeln!(s, "{}", vals.join(" "));
        match &p.mask {
            None => s.push_str("mask none\n"),
            Some(m) => {
                let bits: String = m.data().iter().map(|&v| if v == 0.0 { '0' } else { '1' }).collect();
                let _ = writeln!(s, "mask {bits}");
            }
        }
    }
    s
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Parse(format!("network file: {}", msg.into()))
}

fn nums(parts: &[&str]) -> Result<Vec<usize>> {
    parts
        .iter()
        .map(|p| p.parse::<usize>().map_err(|_| bad(format!("expected integer, got `{p}`"))))
        .collect()
}

fn keyword<'a>(line: Option<&'a str>, key: &str) -> Result<Vec<&'a str>> {
    let line = line.ok_or_else(|| bad(format!("unexpected end of file, expected `{key}`")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(bad(format!("expected `{key}`, got `{line}`")));
    }
    Ok(parts.collect())
}

fn single(parts: &[&str], key: &str) -> Result<usize> {
    match nums(parts)?.as_slice() {
        [v] => Ok(*v),
        _ => Err(bad(format!("`{key}` takes one integer"))),
    }
}

pub fn network_from_str(text: &str) -> Result<NetworkGraph> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = keyword(lines.next(), MAGIC)?;
    if header != [VERSION.to_string().as_str()] {
        return Err(bad(format!("unsupported version {header:?}")));
    }
    let lookback = single(&keyword(lines.next(), "lookback")?, "lookback")?;
    let n_layers = single(&keyword(lines.next(), "layers")?, "layers")?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let line = lines.next().ok_or_else(|| bad("missing layer line"))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let layer = match parts.as_slice() {
            ["dense", a, b, act] => {
                let v = nums(&[a, b])?;
                Layer::Dense {
                    fan_in: v[0],
                    fan_out: v[1],
                    activation: Activation::parse(act)?,
                }
            }
            ["lstm", a, b] => {
                let v = nums(&[a, b])?;
                Layer::Lstm {
                    input: v[0],
                    hidden: v[1],
                }
            }
            ["conv", a, b, k, act] => {
                let v = nums(&[a, b, k])?;
                Layer::Conv {
                    c_in: v[0],
                    c_out: v[1],
                    kernel: v[2],
                    activation: Activation::parse(act)?,
                }
            }
            _ => return Err(bad(format!("bad layer line `{line}`"))),
        };
        layers.push(layer);
    }
    let n_params = single(&keyword(lines.next(), "params")?, "params")?;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let head = keyword(lines.next(), "param")?;
        let (kind, dims) = head.split_first().ok_or_else(|| bad("param line without kind"))?;
        let is_weight = match *kind {
            "weight" => true,
            "bias" => false,
            other => return Err(bad(format!("unknown param kind `{other}`"))),
        };
        let shape = nums(dims)?;
        let values_line = lines.next().ok_or_else(|| bad("missing parameter values"))?;
        let data = values_line
            .split_whitespace()
            .map(|h| u64::from_str_radix(h, 16).map(f64::from_bits).map_err(|_| bad(format!("bad value `{h}`"))))
            .collect::<Result<Vec<f64>>>()?;
        let value = Tensor::new(shape.clone(), data)?;
        let mask_parts = keyword(lines.next(), "mask")?;
        let mask = match mask_parts.as_slice() {
            ["none"] => None,
            [bits] => {
                let data = bits
                    .chars()
                    .map(|c| match c {
                        '0' => Ok(0.0),
                        '1' => Ok(1.0),
                        _ => Err(bad("mask must be 0/1")),
                    })
                    .collect::<Result<Vec<f64>>>()?;
                Some(Tensor::new(shape, data)?)
            }
            _ => return Err(bad("bad mask line")),
        };
        params.push(Param {
            value,
            mask,
            is_weight,
        });
    }
    if lines.next().is_some() {
        return Err(bad("trailing content"));
    }
    NetworkGraph::with_params(lookback, layers, params)
}

pub fn save_network(net: &NetworkGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, network_to_string(net)).map_err(|e| Error::io(path, e))
}

pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    network_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::nn::{build_conv, build_dense, build_recurrent, ConvSpec};

    #[test]
    fn round_trip_is_bit_exact_for_every_topology() {
        let mut dense = build_dense(&[8, 4], Activation::Relu, 3, 1).unwrap();
        let mut mask = Tensor::filled(dense.params()[0].value.shape().to_vec(), 1.0);
        mask.data_mut()[3] = 0.0;
        dense.params_mut()[0].mask = Some(mask);
        let nets = [
            dense,
            build_recurrent(4, 3, 2).unwrap(),
            build_conv(&ConvSpec::default(), 3, 3).unwrap(),
        ];
        let x = Tensor::new(vec![5, 5, 3], (0..75).map(|k| (k as f64 * 0.37).sin()).collect()).unwrap();
        for net in nets {
            let text = network_to_string(&net);
            let back = network_from_str(&text).unwrap();
            assert_eq!(net, back);
            let a = net.predict(&x).unwrap();
            let b = back.predict(&x).unwrap();
            assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }

    #[test]
    fn rejects_wrong_version_and_truncation() {
        let net = build_dense(&[2], Activation::Tanh, 1, 0).unwrap();
        let text = network_to_string(&net);
        assert!(network_from_str(&text.replace("factorlab-net 1", "factorlab-net 9")).is_err());
        let cut: String = text.lines().take(6).collect::<Vec<_>>().join("\n");
        assert!(network_from_str(&cut).is_err());
    }
}
