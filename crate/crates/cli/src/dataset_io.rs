//! Dataset persistence: a directory holding a text manifest plus one binary
//! blob per clip (tensor entries: dims + dtype tag, then raw little-endian
//! f32 data).

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context};

use lwtf_core::synth::{Clip, GenParams, Split, Splits, SynthDataset};
use lwtf_core::tensor::Tensor;

const CLIP_MAGIC: &[u8; 4] = b"LWTC";

fn write_tensor(buf: &mut Vec<u8>, shape: &[usize], data: &[f32]) {
    buf.push(shape.len() as u8);
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.push(0u8); // f32
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_tensor(r: &mut &[u8]) -> anyhow::Result<(Vec<usize>, Vec<f32>)> {
    let take = |r: &mut &[u8], n: usize| -> anyhow::Result<Vec<u8>> {
        if r.len() < n {
            bail!("clip blob truncated");
        }
        let (head, rest) = r.split_at(n);
        let out = head.to_vec();
        *r = rest;
        Ok(out)
    };
    let rank = take(r, 1)?[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u32::from_le_bytes(take(r, 4)?.try_into().unwrap()) as usize);
    }
    let dtype = take(r, 1)?[0];
    if dtype != 0 {
        bail!("unsupported dtype tag {dtype} in clip blob");
    }
    let n: usize = shape.iter().product();
    let raw = take(r, n * 4)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((shape, data))
}

pub fn save_dataset(ds: &SynthDataset, dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir.join("clips"))?;
    let ids = |v: &[u32]| {
        v.iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut manifest = String::new();
    manifest.push_str("format: lwtf-dataset-v1\n");
    manifest.push_str(&format!("seed: {}\n", ds.params.seed));
    manifest.push_str(&format!("identities: {}\n", ds.params.n_identities));
    manifest.push_str(&format!("clips_per_identity: {}\n", ds.params.clips_per_identity));
    manifest.push_str(&format!("clip_len: {}\n", ds.params.clip_len));
    manifest.push_str(&format!("clip_count: {}\n", ds.clips.len()));
    manifest.push_str(&format!("split_train: {}\n", ids(&ds.splits.train)));
    manifest.push_str(&format!("split_val: {}\n", ids(&ds.splits.val)));
    manifest.push_str(&format!("split_test: {}\n", ids(&ds.splits.test)));
    manifest.push_str(&format!("split_calib: {}\n", ids(&ds.splits.calib)));
    std::fs::write(dir.join("manifest.txt"), manifest)?;

    for (i, clip) in ds.clips.iter().enumerate() {
        let mut buf = Vec::new();
        buf.extend_from_slice(CLIP_MAGIC);
        buf.extend_from_slice(&clip.identity.to_le_bytes());
        write_tensor(&mut buf, clip.speech.shape(), clip.speech.data());
        write_tensor(&mut buf, clip.frames.shape(), clip.frames.data());
        write_tensor(&mut buf, &[clip.aperture.len()], &clip.aperture);
        let path = dir.join("clips").join(format!("clip_{i:05}.bin"));
        std::fs::File::create(&path)?.write_all(&buf)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> anyhow::Result<SynthDataset> {
    let manifest = std::fs::read_to_string(dir.join("manifest.txt"))
        .with_context(|| format!("reading {}", dir.join("manifest.txt").display()))?;
    let mut kv = std::collections::BTreeMap::new();
    for line in manifest.lines() {
        if let Some((k, v)) = line.split_once(':') {
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    if kv.get("format").map(String::as_str) != Some("lwtf-dataset-v1") {
        bail!("not an lwtf dataset directory: {}", dir.display());
    }
    let get = |k: &str| -> anyhow::Result<&String> {
        kv.get(k).ok_or_else(|| anyhow!("manifest is missing '{k}'"))
    };
    let num = |k: &str| -> anyhow::Result<usize> {
        Ok(get(k)?.parse::<usize>().map_err(|_| anyhow!("bad manifest field '{k}'"))?)
    };
    let id_list = |k: &str| -> anyhow::Result<Vec<u32>> {
        let s = get(k)?;
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',')
            .map(|x| x.trim().parse::<u32>().map_err(|_| anyhow!("bad id in '{k}'")))
            .collect()
    };
    let params = GenParams {
        seed: get("seed")?.parse()?,
        n_identities: num("identities")?,
        clips_per_identity: num("clips_per_identity")?,
        clip_len: num("clip_len")?,
    };
    let splits = Splits {
        train: id_list("split_train")?,
        val: id_list("split_val")?,
        test: id_list("split_test")?,
        calib: id_list("split_calib")?,
    };
    let clip_count = num("clip_count")?;
    let mut clips = Vec::with_capacity(clip_count);
    for i in 0..clip_count {
        let path = dir.join("clips").join(format!("clip_{i:05}.bin"));
        let mut bytes = Vec::new();
        std::fs::File::open(&path)
            .with_context(|| format!("opening {}", path.display()))?
            .read_to_end(&mut bytes)?;
        if bytes.len() < 8 || &bytes[..4] != CLIP_MAGIC {
            bail!("{} is not a clip blob", path.display());
        }
        let identity = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let mut r = &bytes[8..];
        let (s_shape, s_data) = read_tensor(&mut r)?;
        let (f_shape, f_data) = read_tensor(&mut r)?;
        let (_a_shape, a_data) = read_tensor(&mut r)?;
        clips.push(Clip {
            identity,
            speech: Tensor::new(s_shape, s_data).map_err(|e| anyhow!("{e}"))?,
            frames: Tensor::new(f_shape, f_data).map_err(|e| anyhow!("{e}"))?,
            aperture: a_data,
        });
    }
    Ok(SynthDataset {
        params,
        clips,
        splits,
    })
}

/// Deterministic evaluation items: the first `count` test-split items.
pub fn eval_items(ds: &SynthDataset, count: usize) -> Vec<lwtf_core::synth::Item> {
    let mut items = ds.ordered_items(Split::Test);
    items.truncate(count);
    items
}

/// Deterministic calibration items from the held-out calibration pool.
pub fn calib_items(ds: &SynthDataset, count: usize) -> Vec<lwtf_core::synth::Item> {
    let mut items = ds.ordered_items(Split::Calib);
    items.truncate(count);
    items
}
