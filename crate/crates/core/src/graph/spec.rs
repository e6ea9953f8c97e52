//! Data-driven description of the two-encoder/one-decoder generator family,
//! plus the resolution step that turns a spec (channel multiplier, residual
//! toggle) into a concrete layer list with propagated channels and spatial
//! dims.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{conv_out_dim, convt_out_dim};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
    /// `act(bn(conv(x)) + x)`; preserves channels and spatial dims.
    ResidualConv,
    /// Final projection to RGB; never normalized, never channel-scaled.
    OutputConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    BatchNorm,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    Relu,
    LeakyRelu,
    Sigmoid,
    None,
}

#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: (usize, usize),
    pub padding: usize,
    pub output_padding: usize,
    pub norm: Norm,
    pub act: Act,
}

#[derive(Debug, Clone)]
pub struct Block {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

/// Which section of the generator a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    SpeechEncoder,
    FaceEncoder,
    FaceDecoder,
    OutputBlock,
}

#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub spec_version: u32,
    pub name: String,
    /// Face frames are square RGB; the generator input is 6 channels
    /// (reference frame + masked pose frame).
    pub face_size: usize,
    /// Speech window shape (feature rows, time cols), single channel.
    pub speech_shape: (usize, usize),
    pub speech_encoder: Vec<Block>,
    pub face_encoder: Vec<Block>,
    pub face_decoder: Vec<Block>,
    pub output_block: Block,
    /// decoder-block (or output-block) name -> face-encoder block name
    /// whose features are concatenated onto that block's input.
    pub skip_wiring: BTreeMap<String, String>,
    pub channel_multiplier: f64,
    pub residuals_enabled: bool,
}

/// One layer after resolution: channels scaled and propagated, spatial dims
/// computed, position in the stable layer order assigned.
#[derive(Debug, Clone)]
pub struct ResolvedLayer {
    pub spec: LayerSpec,
    pub index: usize,
    pub section: Section,
    pub block: usize,
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
}

/// A spec resolved to a concrete architecture. Layer order (the sweep axis)
/// is: speech encoder, face encoder, face decoder, output block.
#[derive(Debug, Clone)]
pub struct ResolvedModel {
    pub spec: GeneratorSpec,
    pub layers: Vec<ResolvedLayer>,
    pub speech_blocks: Vec<Vec<usize>>,
    pub face_blocks: Vec<Vec<usize>>,
    pub decoder_blocks: Vec<Vec<usize>>,
    pub output_layers: Vec<usize>,
    /// Per decoder block, the face-encoder block concatenated at its input.
    pub skip_for_decoder: Vec<Option<usize>>,
    pub skip_for_output: Option<usize>,
}

impl GeneratorSpec {
    pub fn with_multiplier(mut self, m: f64) -> Self {
        self.channel_multiplier = m;
        self
    }

    pub fn with_residuals(mut self, enabled: bool) -> Self {
        self.residuals_enabled = enabled;
        self
    }

    /// Channel scaling rule: nearest integer, minimum 1.
    pub fn scale_channels(&self, c: usize) -> usize {
        ((c as f64 * self.channel_multiplier).round() as usize).max(1)
    }

    /// Validate the spec and produce the concrete layer list.
    pub fn resolve(&self) -> Result<ResolvedModel> {
        if self.face_decoder.len() != 7 {
            return Err(Error::spec(
                "decoder-has-7-blocks",
                format!("face_decoder has {} blocks", self.face_decoder.len()),
            ));
        }
        self.check_unique_names()?;
        self.check_skip_names()?;

        let mut rm = ResolvedModel {
            spec: self.clone(),
            layers: Vec::new(),
            speech_blocks: Vec::new(),
            face_blocks: Vec::new(),
            decoder_blocks: Vec::new(),
            output_layers: Vec::new(),
            skip_for_decoder: Vec::new(),
            skip_for_output: None,
        };

        // Encoders are simple chains.
        let (sh, sw) = self.speech_shape;
        let mut ch = 0;
        let mut hw = (sh, sw);
        let mut first = true;
        for block in &self.speech_encoder {
            let ids = self.resolve_block(block, Section::SpeechEncoder, rm.speech_blocks.len(), &mut ch, &mut hw, &mut first, &mut rm.layers)?;
            rm.speech_blocks.push(ids);
        }
        let speech_out = (ch, hw);

        let mut ch = 0;
        let mut hw = (self.face_size, self.face_size);
        let mut first = true;
        let mut face_outs = Vec::new();
        for block in &self.face_encoder {
            let ids = self.resolve_block(block, Section::FaceEncoder, rm.face_blocks.len(), &mut ch, &mut hw, &mut first, &mut rm.layers)?;
            rm.face_blocks.push(ids);
            face_outs.push((ch, hw));
        }

        // Decoder consumes the speech embedding, concatenating face-encoder
        // features per the skip wiring before each block.
        let (mut ch, mut hw) = speech_out;
        let mut first = false;
        for (bi, block) in self.face_decoder.iter().enumerate() {
            let skip = self.skip_index(&block.name)?;
            if let Some(fb) = skip {
                let (fch, fhw) = face_outs[fb];
                if fhw != hw {
                    return Err(Error::spec(
                        "skip-spatial-agreement",
                        format!(
                            "decoder block '{}' input is {}x{} but skip '{}' provides {}x{}",
                            block.name, hw.0, hw.1, self.face_encoder[fb].name, fhw.0, fhw.1
                        ),
                    ));
                }
                ch += fch;
            }
            rm.skip_for_decoder.push(skip);
            let ids = self.resolve_block(block, Section::FaceDecoder, bi, &mut ch, &mut hw, &mut first, &mut rm.layers)?;
            rm.decoder_blocks.push(ids);
        }

        rm.skip_for_output = self.skip_index(&self.output_block.name)?;
        if let Some(fb) = rm.skip_for_output {
            let (fch, fhw) = face_outs[fb];
            if fhw != hw {
                return Err(Error::spec(
                    "skip-spatial-agreement",
                    format!(
                        "output block input is {}x{} but skip provides {}x{}",
                        hw.0, hw.1, fhw.0, fhw.1
                    ),
                ));
            }
            ch += fch;
        }
        rm.output_layers = self.resolve_block(
            &self.output_block,
            Section::OutputBlock,
            0,
            &mut ch,
            &mut hw,
            &mut false,
            &mut rm.layers,
        )?;

        // Image-to-image contract: output matches the face frame.
        if hw != (self.face_size, self.face_size) || ch != 3 {
            return Err(Error::spec(
                "output-is-face-frame",
                format!(
                    "generator output is {ch}x{}x{}, expected 3x{}x{}",
                    hw.0, hw.1, self.face_size, self.face_size
                ),
            ));
        }
        Ok(rm)
    }

    #[allow(clippy::too_many_arguments)]
    fn resolve_block(
        &self,
        block: &Block,
        section: Section,
        block_idx: usize,
        ch: &mut usize,
        hw: &mut (usize, usize),
        first: &mut bool,
        out: &mut Vec<ResolvedLayer>,
    ) -> Result<Vec<usize>> {
        let mut ids = Vec::new();
        for layer in &block.layers {
            if layer.kind == LayerKind::ResidualConv && !self.residuals_enabled {
                continue;
            }
            let mut spec = layer.clone();
            // First encoder layer keeps its declared input width; everything
            // else takes the propagated channel count.
            spec.in_ch = if *first { layer.in_ch } else { *ch };
            spec.out_ch = match spec.kind {
                LayerKind::OutputConv => layer.out_ch,
                LayerKind::ResidualConv => spec.in_ch,
                _ => self.scale_channels(layer.out_ch),
            };
            *first = false;

            let (ih, iw) = *hw;
            let (oh, ow) = match spec.kind {
                LayerKind::ConvTranspose => (
                    convt_out_dim(ih, spec.kernel, spec.stride.0, spec.padding, spec.output_padding)
                        .map_err(|e| layer_err(&spec.name, e))?,
                    convt_out_dim(iw, spec.kernel, spec.stride.1, spec.padding, spec.output_padding)
                        .map_err(|e| layer_err(&spec.name, e))?,
                ),
                _ => (
                    conv_out_dim(ih, spec.kernel, spec.stride.0, spec.padding)
                        .map_err(|e| layer_err(&spec.name, e))?,
                    conv_out_dim(iw, spec.kernel, spec.stride.1, spec.padding)
                        .map_err(|e| layer_err(&spec.name, e))?,
                ),
            };
            if spec.kind == LayerKind::ResidualConv && (oh, ow) != (ih, iw) {
                return Err(Error::spec(
                    "residual-preserves-dims",
                    format!("residual layer '{}' maps {ih}x{iw} to {oh}x{ow}", spec.name),
                ));
            }
            // At base scale the declared wiring must agree with propagation.
            if self.channel_multiplier == 1.0 && spec.in_ch != layer.in_ch {
                return Err(Error::spec(
                    "channel-propagation",
                    format!(
                        "layer '{}' declares {} input channels but receives {}",
                        spec.name, layer.in_ch, spec.in_ch
                    ),
                ));
            }

            *ch = spec.out_ch;
            *hw = (oh, ow);
            let index = out.len();
            ids.push(index);
            out.push(ResolvedLayer {
                spec,
                index,
                section,
                block: block_idx,
                in_hw: (ih, iw),
                out_hw: (oh, ow),
            });
        }
        if ids.is_empty() {
            return Err(Error::spec(
                "block-not-empty",
                format!("block '{}' resolves to no layers", block.name),
            ));
        }
        Ok(ids)
    }

    fn skip_index(&self, block_name: &str) -> Result<Option<usize>> {
        let Some(target) = self.skip_wiring.get(block_name) else {
            return Ok(None);
        };
        self.face_encoder
            .iter()
            .position(|b| &b.name == target)
            .map(Some)
            .ok_or_else(|| {
                Error::spec(
                    "skip-target-exists",
                    format!("skip for '{block_name}' names unknown face-encoder block '{target}'"),
                )
            })
    }

    fn check_unique_names(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        let blocks = self
            .speech_encoder
            .iter()
            .chain(&self.face_encoder)
            .chain(&self.face_decoder)
            .chain(core::iter::once(&self.output_block));
        for b in blocks {
            for l in &b.layers {
                if seen.insert(l.name.clone(), ()).is_some() {
                    return Err(Error::spec(
                        "unique-names",
                        format!("duplicate layer name '{}'", l.name),
                    ));
                }
            }
        }
        Ok(())
    }

    fn check_skip_names(&self) -> Result<()> {
        for key in self.skip_wiring.keys() {
            let known = self.face_decoder.iter().any(|b| &b.name == key)
                || &self.output_block.name == key;
            if !known {
                return Err(Error::spec(
                    "skip-target-exists",
                    format!("skip wiring names unknown decoder block '{key}'"),
                ));
            }
        }
        Ok(())
    }

    /// Serialize back to the spec text format (the inverse of the parser).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("spec_version: {}\n", self.spec_version));
        s.push_str(&format!("name: {}\n", self.name));
        s.push_str(&format!("face_size: {}\n", self.face_size));
        s.push_str(&format!("speech_rows: {}\n", self.speech_shape.0));
        s.push_str(&format!("speech_cols: {}\n", self.speech_shape.1));
        s.push_str(&format!("channel_multiplier: {}\n", self.channel_multiplier));
        s.push_str(&format!(
            "residuals: {}\n",
            if self.residuals_enabled { "on" } else { "off" }
        ));
        let section = |name: &str, blocks: &[Block], s: &mut String| {
            s.push_str(&format!("\n[{name}]\n"));
            for b in blocks {
                s.push_str(&format!("block {}\n", b.name));
                for l in &b.layers {
                    s.push_str("  ");
                    s.push_str(&layer_line(l));
                    s.push('\n');
                }
            }
        };
        section("speech_encoder", &self.speech_encoder, &mut s);
        section("face_encoder", &self.face_encoder, &mut s);
        section("face_decoder", &self.face_decoder, &mut s);
        section("output_block", core::slice::from_ref(&self.output_block), &mut s);
        s.push_str("\n[skips]\n");
        for (k, v) in &self.skip_wiring {
            s.push_str(&format!("{k} <- {v}\n"));
        }
        s
    }
}

fn layer_err(name: &str, e: Error) -> Error {
    Error::spec("layer-geometry", format!("layer '{name}': {e}"))
}

fn layer_line(l: &LayerSpec) -> String {
    let kind = match l.kind {
        LayerKind::Conv => "conv",
        LayerKind::ConvTranspose => "convt",
        LayerKind::ResidualConv => "res",
        LayerKind::OutputConv => "outconv",
    };
    let stride = if l.stride.0 == l.stride.1 {
        format!("s{}", l.stride.0)
    } else {
        format!("s{}x{}", l.stride.0, l.stride.1)
    };
    let mut line = if l.kind == LayerKind::ResidualConv {
        format!("{kind} {} {} k{} {stride} p{}", l.name, l.in_ch, l.kernel, l.padding)
    } else {
        format!(
            "{kind} {} {} -> {} k{} {stride} p{}",
            l.name, l.in_ch, l.out_ch, l.kernel, l.padding
        )
    };
    if l.output_padding > 0 {
        line.push_str(&format!(" op{}", l.output_padding));
    }
    match l.norm {
        Norm::BatchNorm => line.push_str(" bn"),
        Norm::None => {}
    }
    match l.act {
        Act::Relu => line.push_str(" relu"),
        Act::LeakyRelu => line.push_str(" lrelu"),
        Act::Sigmoid => line.push_str(" sigmoid"),
        Act::None => line.push_str(" linear"),
    }
    line
}

impl ResolvedModel {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Stable map from layer name to its ordinal in the sweep axis.
    pub fn layer_index(&self) -> BTreeMap<String, usize> {
        self.layers
            .iter()
            .map(|l| (l.spec.name.clone(), l.index))
            .collect()
    }

    pub fn decoder_block_name(&self, bi: usize) -> String {
        self.spec.face_decoder[bi].name.to_string()
    }

    /// Layer indices of the output block (the final projection group).
    pub fn output_block_layers(&self) -> &[usize] {
        &self.output_layers
    }
}
