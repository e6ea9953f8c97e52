//! Parser for the generator spec text format.
//!
//! Line-oriented: `key: value` headers, `[section]` markers, `block <name>`
//! group starts, one layer per line, and `decoder <- encoder` skip entries.
//! `#` starts a comment. Errors carry the 1-based line number.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::spec::{Act, Block, GeneratorSpec, LayerKind, LayerSpec, Norm};

#[derive(PartialEq, Clone, Copy)]
enum SectionTag {
    None,
    Speech,
    Face,
    Decoder,
    Output,
    Skips,
}

/// Parse a generator spec from its text form. The result is validated by
/// resolving it at its declared multiplier.
pub fn parse_spec(text: &str) -> Result<GeneratorSpec> {
    let mut header: BTreeMap<String, String> = BTreeMap::new();
    let mut section = SectionTag::None;
    let mut speech = Vec::new();
    let mut face = Vec::new();
    let mut decoder = Vec::new();
    let mut output = Vec::new();
    let mut skips = BTreeMap::new();

    for (ln, raw) in text.lines().enumerate() {
        let ln = ln + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = match name {
                "speech_encoder" => SectionTag::Speech,
                "face_encoder" => SectionTag::Face,
                "face_decoder" => SectionTag::Decoder,
                "output_block" => SectionTag::Output,
                "skips" => SectionTag::Skips,
                other => {
                    return Err(parse_err(ln, format!("unknown section '{other}'")));
                }
            };
            continue;
        }
        match section {
            SectionTag::None => {
                let (k, v) = line.split_once(':').ok_or_else(|| {
                    parse_err(ln, "expected 'key: value' before the first section")
                })?;
                header.insert(k.trim().to_string(), v.trim().to_string());
            }
            SectionTag::Skips => {
                let (to, from) = line.split_once("<-").ok_or_else(|| {
                    parse_err(ln, "expected '<decoder-block> <- <face-encoder-block>'")
                })?;
                skips.insert(to.trim().to_string(), from.trim().to_string());
            }
            _ => {
                let blocks: &mut Vec<Block> = match section {
                    SectionTag::Speech => &mut speech,
                    SectionTag::Face => &mut face,
                    SectionTag::Decoder => &mut decoder,
                    SectionTag::Output => &mut output,
                    _ => unreachable!(),
                };
                if let Some(name) = line.strip_prefix("block ") {
                    blocks.push(Block {
                        name: name.trim().to_string(),
                        layers: Vec::new(),
                    });
                } else {
                    let layer = parse_layer(ln, line)?;
                    blocks
                        .last_mut()
                        .ok_or_else(|| parse_err(ln, "layer outside of a block"))?
                        .layers
                        .push(layer);
                }
            }
        }
    }

    let get_usize = |key: &str| -> Result<usize> {
        header
            .get(key)
            .ok_or_else(|| parse_err(0, format!("missing header '{key}'")))?
            .parse()
            .map_err(|_| parse_err(0, format!("header '{key}' is not an integer")))
    };

    let spec = GeneratorSpec {
        spec_version: get_usize("spec_version")? as u32,
        name: header
            .get("name")
            .cloned()
            .ok_or_else(|| parse_err(0, "missing header 'name'"))?,
        face_size: get_usize("face_size")?,
        speech_shape: (get_usize("speech_rows")?, get_usize("speech_cols")?),
        speech_encoder: speech,
        face_encoder: face,
        face_decoder: decoder,
        output_block: output
            .into_iter()
            .next()
            .ok_or_else(|| parse_err(0, "missing [output_block] section"))?,
        skip_wiring: skips,
        channel_multiplier: header
            .get("channel_multiplier")
            .map(|v| v.parse().map_err(|_| parse_err(0, "bad channel_multiplier")))
            .transpose()?
            .unwrap_or(1.0),
        residuals_enabled: header.get("residuals").map(|v| v == "on").unwrap_or(true),
    };
    if spec.spec_version != 1 {
        return Err(parse_err(
            0,
            format!("unsupported spec_version {}", spec.spec_version),
        ));
    }
    spec.resolve()?;
    Ok(spec)
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(l, _)| l)
}

fn parse_err(line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        line,
        detail: detail.into(),
    }
}

/// `conv <name> <in> -> <out> k3 s2[x1] p1 [op1] [bn] [relu|lrelu|sigmoid|linear]`
/// `res <name> <ch> k3 s1 p1 bn relu`
fn parse_layer(ln: usize, line: &str) -> Result<LayerSpec> {
    let mut toks = line.split_whitespace().peekable();
    let kind = match toks.next() {
        Some("conv") => LayerKind::Conv,
        Some("convt") => LayerKind::ConvTranspose,
        Some("res") => LayerKind::ResidualConv,
        Some("outconv") => LayerKind::OutputConv,
        other => {
            return Err(parse_err(
                ln,
                format!("unknown layer kind {:?}", other.unwrap_or("")),
            ))
        }
    };
    let name = toks
        .next()
        .ok_or_else(|| parse_err(ln, "missing layer name"))?
        .to_string();

    let (in_ch, out_ch) = if kind == LayerKind::ResidualConv {
        let ch: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(ln, "residual layer needs a channel count"))?;
        (ch, ch)
    } else {
        let in_ch: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(ln, "missing input channels"))?;
        if toks.next() != Some("->") {
            return Err(parse_err(ln, "expected '->' between channel counts"));
        }
        let out_ch: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(ln, "missing output channels"))?;
        (in_ch, out_ch)
    };

    let mut layer = LayerSpec {
        name,
        kind,
        in_ch,
        out_ch,
        kernel: 3,
        stride: (1, 1),
        padding: 0,
        output_padding: 0,
        norm: Norm::None,
        act: Act::None,
    };
    let mut saw_kernel = false;
    for tok in toks {
        match tok {
            "bn" => {
                layer.norm = Norm::BatchNorm;
                continue;
            }
            "relu" => {
                layer.act = Act::Relu;
                continue;
            }
            "lrelu" => {
                layer.act = Act::LeakyRelu;
                continue;
            }
            "sigmoid" => {
                layer.act = Act::Sigmoid;
                continue;
            }
            "linear" => {
                layer.act = Act::None;
                continue;
            }
            _ => {}
        }
        if let Some(v) = tok.strip_prefix('k') {
            layer.kernel = v
                .parse()
                .map_err(|_| parse_err(ln, format!("bad kernel '{tok}'")))?;
            saw_kernel = true;
        } else if let Some(v) = tok.strip_prefix("op") {
            layer.output_padding = v
                .parse()
                .map_err(|_| parse_err(ln, format!("bad output padding '{tok}'")))?;
        } else if let Some(v) = tok.strip_prefix('s') {
            layer.stride = match v.split_once('x') {
                Some((a, b)) => (
                    a.parse().map_err(|_| parse_err(ln, format!("bad stride '{tok}'")))?,
                    b.parse().map_err(|_| parse_err(ln, format!("bad stride '{tok}'")))?,
                ),
                None => {
                    let s = v
                        .parse()
                        .map_err(|_| parse_err(ln, format!("bad stride '{tok}'")))?;
                    (s, s)
                }
            };
        } else if let Some(v) = tok.strip_prefix('p') {
            layer.padding = v
                .parse()
                .map_err(|_| parse_err(ln, format!("bad padding '{tok}'")))?;
        } else {
            return Err(parse_err(ln, format!("unknown token '{tok}'")));
        }
    }
    if !saw_kernel {
        return Err(parse_err(ln, "layer is missing a kernel size (k...)"));
    }
    Ok(layer)
}
