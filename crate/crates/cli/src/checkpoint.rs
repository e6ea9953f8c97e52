//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "LWTF" | version u32 | meta_len u32 | meta (key: value text)
//! | spec_len u32 | generator spec text (0 when absent)
//! | entry_count u32
//! | entries: name_len u16, name, rank u8, dims u32 x rank, dtype u8,
//!            payload_len u64, raw little-endian f32 payload
//! | quant_len u32 | QuantSection JSON (0 when absent)
//! | crc32 u32 over every preceding byte
//! ```
//!
//! Weight round-trips are bitwise: a loaded model reproduces forward
//! outputs exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};

use lwtf_core::graph::{
    build_model, build_sync_expert, parse_spec, BuiltModel, ConvStack, Discriminator,
    GeneratorSpec, SyncExpert,
};
use lwtf_core::quant::{PrecisionAssignment, QuantParams};
use lwtf_core::tensor::Tensor;

use crate::crc32::Crc32;

pub const MAGIC: &[u8; 4] = b"LWTF";
pub const VERSION: u32 = 1;

/// Quantization state carried alongside the weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantSection {
    pub assignment: PrecisionAssignment,
    pub act_qparams: BTreeMap<String, QuantParams>,
    pub method: String,
    pub calib_frames: usize,
}

/// What a checkpoint file holds.
pub enum Payload {
    Generator(Box<BuiltModel<f32>>),
    SyncExpert(Box<SyncExpert<f32>>),
    Discriminator(Box<Discriminator<f32>>),
}

pub struct Checkpoint {
    pub payload: Payload,
    pub meta: BTreeMap<String, String>,
    pub quant: Option<QuantSection>,
}

impl Checkpoint {
    pub fn generator(model: BuiltModel<f32>, meta: BTreeMap<String, String>) -> Self {
        Checkpoint {
            payload: Payload::Generator(Box::new(model)),
            meta,
            quant: None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.payload {
            Payload::Generator(_) => "generator",
            Payload::SyncExpert(_) => "sync_expert",
            Payload::Discriminator(_) => "discriminator",
        }
    }

    pub fn expect_generator(self) -> anyhow::Result<(BuiltModel<f32>, Option<QuantSection>)> {
        match self.payload {
            Payload::Generator(m) => Ok((*m, self.quant)),
            _ => bail!("checkpoint holds a {} model, expected a generator", self.kind()),
        }
    }

    pub fn expect_expert(self) -> anyhow::Result<SyncExpert<f32>> {
        match self.payload {
            Payload::SyncExpert(e) => Ok(*e),
            _ => bail!("checkpoint holds a {} model, expected a sync expert", self.kind()),
        }
    }
}

fn push_entry(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(shape.len() as u8);
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.push(0u8); // dtype tag: f32
    buf.extend_from_slice(&((data.len() * 4) as u64).to_le_bytes());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn generator_entries(model: &BuiltModel<f32>) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut out = Vec::new();
    for (li, lw) in model.weights.iter().enumerate() {
        let name = &model.resolved.layers[li].spec.name;
        out.push((
            format!("{name}.weight"),
            lw.weight.shape().to_vec(),
            lw.weight.data().to_vec(),
        ));
        out.push((
            format!("{name}.bias"),
            lw.bias.shape().to_vec(),
            lw.bias.data().to_vec(),
        ));
        if let Some(bn) = &lw.bn {
            out.push((
                format!("{name}.gamma"),
                bn.gamma.shape().to_vec(),
                bn.gamma.data().to_vec(),
            ));
            out.push((
                format!("{name}.beta"),
                bn.beta.shape().to_vec(),
                bn.beta.data().to_vec(),
            ));
            out.push((
                format!("{name}.running_mean"),
                vec![bn.running_mean.len()],
                bn.running_mean.clone(),
            ));
            out.push((
                format!("{name}.running_var"),
                vec![bn.running_var.len()],
                bn.running_var.clone(),
            ));
        }
    }
    out
}

fn stack_entries(prefix: &str, stack: &ConvStack<f32>) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    stack
        .named_params(prefix)
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec(), t.data().to_vec()))
        .collect()
}

/// Serialize a checkpoint to bytes.
pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut meta = ckpt.meta.clone();
    meta.insert("kind".into(), ckpt.kind().into());

    let spec_text = match &ckpt.payload {
        Payload::Generator(m) => {
            let text = m.resolved.spec.to_text();
            meta.insert("spec_hash".into(), format!("{:08x}", crate::crc32::crc32(text.as_bytes())));
            meta.insert("multiplier".into(), format!("{}", m.resolved.spec.channel_multiplier));
            meta.insert(
                "residuals".into(),
                if m.resolved.spec.residuals_enabled { "on" } else { "off" }.into(),
            );
            meta.entry("seed".into()).or_insert_with(|| format!("{}", m.seed));
            text
        }
        _ => String::new(),
    };

    let entries = match &ckpt.payload {
        Payload::Generator(m) => generator_entries(m),
        Payload::SyncExpert(e) => {
            let mut v = stack_entries("speech", &e.speech_net);
            v.extend(stack_entries("video", &e.video_net));
            v
        }
        Payload::Discriminator(d) => stack_entries("disc", &d.net),
    };

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let meta_text: String = meta.iter().map(|(k, v)| format!("{k}: {v}\n")).collect();
    buf.extend_from_slice(&(meta_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta_text.as_bytes());
    buf.extend_from_slice(&(spec_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(spec_text.as_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, shape, data) in &entries {
        push_entry(&mut buf, name, shape, data);
    }
    let quant_json = ckpt
        .quant
        .as_ref()
        .map(|q| serde_json::to_vec(q).expect("quant section serializes"))
        .unwrap_or_default();
    buf.extend_from_slice(&(quant_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&quant_json);

    let mut crc = Crc32::new();
    crc.update(&buf);
    buf.extend_from_slice(&crc.finish().to_le_bytes());
    buf
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> anyhow::Result<()> {
    let bytes = encode(ckpt);
    let mut f = std::fs::File::create(path)
        .with_context(|| format!("creating checkpoint {}", path.display()))?;
    f.write_all(&bytes)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> anyhow::Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            bail!(
                "checkpoint truncated at offset {} (wanted {} more bytes)",
                self.pos,
                n
            );
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> anyhow::Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> anyhow::Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> anyhow::Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decode a checkpoint. When `expected_spec` is given, the stored weights
/// must fit a model built from that spec (shape mismatches name the layer).
pub fn decode(bytes: &[u8], expected_spec: Option<&GeneratorSpec>) -> anyhow::Result<Checkpoint> {
    if bytes.len() < 12 {
        bail!("checkpoint too small ({} bytes)", bytes.len());
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(tail.try_into().unwrap());
    let mut crc = Crc32::new();
    crc.update(body);
    let computed = crc.finish();
    if computed != stored_crc {
        bail!(
            "checksum mismatch at trailer offset {} (stored {stored_crc:08x}, computed {computed:08x})",
            body.len()
        );
    }

    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        bail!("bad magic: not an LWTF checkpoint");
    }
    let version = r.u32()?;
    if version != VERSION {
        bail!(
            "checkpoint format version {version} is not supported (this build reads version {VERSION}); \
             regenerate or migrate the file"
        );
    }
    let meta_len = r.u32()? as usize;
    let meta_text = std::str::from_utf8(r.take(meta_len)?).context("meta is not UTF-8")?;
    let mut meta = BTreeMap::new();
    for line in meta_text.lines() {
        if let Some((k, v)) = line.split_once(':') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let spec_len = r.u32()? as usize;
    let spec_text = std::str::from_utf8(r.take(spec_len)?).context("spec is not UTF-8")?;

    let entry_count = r.u32()? as usize;
    let mut entries: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::with_capacity(entry_count);
    for _ in 0..entry_count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)?.to_string();
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let dtype = r.take(1)?[0];
        if dtype != 0 {
            bail!("entry '{name}' has unsupported dtype tag {dtype}");
        }
        let payload_len = r.u64()? as usize;
        let raw = r.take(payload_len)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, shape, data));
    }
    let quant_len = r.u32()? as usize;
    let quant = if quant_len > 0 {
        Some(serde_json::from_slice::<QuantSection>(r.take(quant_len)?)?)
    } else {
        None
    };

    let kind = meta.get("kind").map(String::as_str).unwrap_or("generator");
    let payload = match kind {
        "generator" => {
            let spec = match expected_spec {
                Some(s) => s.clone(),
                None => parse_spec(spec_text).map_err(|e| anyhow!("embedded spec: {e}"))?,
            };
            let seed: u64 = meta.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0);
            let mut model = build_model::<f32>(&spec, seed)
                .map_err(|e| anyhow!("rebuilding model: {e}"))?;
            fill_generator(&mut model, &entries)?;
            Payload::Generator(Box::new(model))
        }
        "sync_expert" => {
            let seed: u64 = meta.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0);
            let mut expert = build_sync_expert::<f32>(seed);
            fill_stack("speech", &mut expert.speech_net, &entries)?;
            fill_stack("video", &mut expert.video_net, &entries)?;
            Payload::SyncExpert(Box::new(expert))
        }
        "discriminator" => {
            let seed: u64 = meta.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0);
            let mut disc = lwtf_core::graph::build_discriminator::<f32>(seed);
            fill_stack("disc", &mut disc.net, &entries)?;
            Payload::Discriminator(Box::new(disc))
        }
        other => bail!("unknown checkpoint kind '{other}'"),
    };
    Ok(Checkpoint {
        payload,
        meta,
        quant,
    })
}

fn fill_generator(
    model: &mut BuiltModel<f32>,
    entries: &[(String, Vec<usize>, Vec<f32>)],
) -> anyhow::Result<()> {
    let by_name: BTreeMap<&str, (&Vec<usize>, &Vec<f32>)> = entries
        .iter()
        .map(|(n, s, d)| (n.as_str(), (s, d)))
        .collect();
    let layer_names: Vec<String> = model
        .resolved
        .layers
        .iter()
        .map(|l| l.spec.name.clone())
        .collect();
    for (li, name) in layer_names.iter().enumerate() {
        let set = |suffix: &str, target: &mut Tensor<f32>| -> anyhow::Result<()> {
            let key = format!("{name}.{suffix}");
            let (shape, data) = by_name
                .get(key.as_str())
                .ok_or_else(|| anyhow!("checkpoint is missing weights for layer '{name}'"))?;
            if shape.as_slice() != target.shape() {
                bail!(
                    "layer '{name}': checkpoint {suffix} has shape {shape:?} but the target spec wants {:?}",
                    target.shape()
                );
            }
            *target = Tensor::new((*shape).clone(), (*data).clone())
                .map_err(|e| anyhow!("layer '{name}': {e}"))?;
            Ok(())
        };
        let has_bn = model.weights[li].bn.is_some();
        set("weight", &mut model.weights[li].weight)?;
        set("bias", &mut model.weights[li].bias)?;
        if has_bn {
            set("gamma", &mut model.weights[li].bn.as_mut().unwrap().gamma)?;
            set("beta", &mut model.weights[li].bn.as_mut().unwrap().beta)?;
            let bn = model.weights[li].bn.as_mut().unwrap();
            for (suffix, buf) in [
                ("running_mean", &mut bn.running_mean),
                ("running_var", &mut bn.running_var),
            ] {
                let key = format!("{name}.{suffix}");
                let (shape, data) = by_name
                    .get(key.as_str())
                    .ok_or_else(|| anyhow!("checkpoint is missing {suffix} for layer '{name}'"))?;
                if shape.as_slice() != [buf.len()] {
                    bail!(
                        "layer '{name}': checkpoint {suffix} has shape {shape:?} but the target spec wants [{}]",
                        buf.len()
                    );
                }
                buf.copy_from_slice(data);
            }
        }
    }
    Ok(())
}

fn fill_stack(
    prefix: &str,
    stack: &mut ConvStack<f32>,
    entries: &[(String, Vec<usize>, Vec<f32>)],
) -> anyhow::Result<()> {
    let by_name: BTreeMap<&str, (&Vec<usize>, &Vec<f32>)> = entries
        .iter()
        .map(|(n, s, d)| (n.as_str(), (s, d)))
        .collect();
    for (i, (w, b)) in stack.weights.iter_mut().enumerate() {
        for (suffix, target) in [("weight", &mut *w), ("bias", &mut *b)] {
            let key = format!("{prefix}.{i}.{suffix}");
            let (shape, data) = by_name
                .get(key.as_str())
                .ok_or_else(|| anyhow!("checkpoint is missing entry '{key}'"))?;
            if shape.as_slice() != target.shape() {
                bail!(
                    "entry '{key}' has shape {shape:?}, expected {:?}",
                    target.shape()
                );
            }
            *target = Tensor::new((*shape).clone(), (*data).clone())
                .map_err(|e| anyhow!("entry '{key}': {e}"))?;
        }
    }
    Ok(())
}

pub fn load(path: &Path, expected_spec: Option<&GeneratorSpec>) -> anyhow::Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .with_context(|| format!("opening checkpoint {}", path.display()))?
        .read_to_end(&mut bytes)?;
    decode(&bytes, expected_spec).with_context(|| format!("reading {}", path.display()))
}
