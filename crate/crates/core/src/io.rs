//! Dataset layout, PNG mask codec, checkpoint format, and the synthetic
//! sequence generator.
//!
//! Sequence layout (normative):
//! ```text
//! <seq>/frames/00000.png   RGB, 8-bit
//! <seq>/masks/00000.png    8-bit grayscale or palette-indexed; value = id
//! ```
//! Checkpoint layout (normative, little-endian):
//! magic "VSEGCKPT" | u64 manifest byte length | manifest JSON | tensor blob.

use crate::array::ArrayD;
use crate::dynhead::HeadConfig;
use crate::error::{Error, Result};
use crate::featnet::FeatNetConfig;
use crate::matching::ObjectLabelMap;
use crate::model::Model;
use crate::param::{ParamSet, Parameter};
use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// PNG frames and masks
// ---------------------------------------------------------------------------

/// Load an RGB frame, normalized to [0,1], as [H,W,3].
pub fn load_frame<T: Scalar>(path: &Path) -> Result<ArrayD<T>> {
    let decoder = png::Decoder::new(File::open(path)?);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width as usize, info.height as usize);
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Data(format!("{}: expected 8-bit PNG", path.display())));
    }
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => buf[..w * h * 3].to_vec(),
        png::ColorType::Rgba => buf[..w * h * 4]
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
        png::ColorType::Grayscale => buf[..w * h].iter().flat_map(|&v| [v, v, v]).collect(),
        other => {
            return Err(Error::Data(format!(
                "{}: unsupported frame color type {other:?}",
                path.display()
            )))
        }
    };
    let inv = T::from_f(1.0 / 255.0);
    Ok(ArrayD::from_vec(
        &[h, w, 3],
        rgb.iter().map(|&v| T::from_usize_(v as usize) * inv).collect(),
    ))
}

/// Load a mask; pixel value (grayscale) or palette index = object id.
pub fn load_mask(path: &Path) -> Result<ObjectLabelMap> {
    let decoder = png::Decoder::new(File::open(path)?);
    let mut reader = decoder.read_info()?;
    // palette PNGs must yield raw indices, not expanded colors
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let ids: Vec<u32> = match (info.color_type, info.bit_depth) {
        (png::ColorType::Grayscale, png::BitDepth::Eight)
        | (png::ColorType::Indexed, png::BitDepth::Eight) => {
            buf[..w * h].iter().map(|&v| v as u32).collect()
        }
        (ct, bd) => {
            return Err(Error::Data(format!(
                "{}: unsupported mask format {ct:?}/{bd:?}",
                path.display()
            )))
        }
    };
    Ok(ObjectLabelMap::from_labels(h, w, ids))
}

fn atomic_write(path: &Path, write_fn: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write_fn(&mut w)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_mask(path: &Path, mask: &ObjectLabelMap) -> Result<()> {
    let data: Vec<u8> = mask
        .labels
        .iter()
        .map(|&v| u8::try_from(v).map_err(|_| Error::Data(format!("object id {v} > 255"))))
        .collect::<Result<_>>()?;
    atomic_write(path, |w| {
        let mut enc = png::Encoder::new(w, mask.w as u32, mask.h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Default);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&data)?;
        Ok(())
    })
}

/// Save an [H,W,3] frame in [0,1] as 8-bit RGB.
pub fn save_frame<T: Scalar>(path: &Path, frame: &ArrayD<T>) -> Result<()> {
    let (h, w) = (frame.shape()[0], frame.shape()[1]);
    let data: Vec<u8> = frame
        .iter()
        .map(|&v| (v.to_f64s().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    atomic_write(path, |wr| {
        let mut enc = png::Encoder::new(wr, w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Default);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&data)?;
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Sequence directories
// ---------------------------------------------------------------------------

fn indexed_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for i in 0.. {
        let p = dir.join(format!("{i:05}.png"));
        if !p.exists() {
            break;
        }
        out.push(p);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no indexed PNG files in {}", dir.display())));
    }
    Ok(out)
}

pub fn load_frames<T: Scalar>(seq: &Path) -> Result<Vec<ArrayD<T>>> {
    indexed_files(&seq.join("frames"))?.iter().map(|p| load_frame(p)).collect()
}

pub fn load_masks(dir: &Path) -> Result<Vec<ObjectLabelMap>> {
    indexed_files(dir)?.iter().map(|p| load_mask(p)).collect()
}

/// Load a full sequence; frame/mask dimensions must agree per index.
pub fn load_sequence<T: Scalar>(seq: &Path) -> Result<(Vec<ArrayD<T>>, Vec<ObjectLabelMap>)> {
    let frames = load_frames::<T>(seq)?;
    let masks = load_masks(&seq.join("masks"))?;
    if frames.len() != masks.len() {
        return Err(Error::Data(format!(
            "{}: {} frames but {} masks",
            seq.display(),
            frames.len(),
            masks.len()
        )));
    }
    for (i, (f, m)) in frames.iter().zip(&masks).enumerate() {
        if f.shape()[0] != m.h || f.shape()[1] != m.w {
            return Err(Error::Data(format!("frame/mask dimension mismatch at index {i}")));
        }
    }
    Ok((frames, masks))
}

pub fn save_masks(dir: &Path, masks: &[ObjectLabelMap]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, m) in masks.iter().enumerate() {
        save_mask(&dir.join(format!("{i:05}.png")), m)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"VSEGCKPT";
const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    byte_len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    feat_config: FeatNetConfig,
    head_config: HeadConfig,
    head_in_channels: usize,
    tensors: Vec<TensorEntry>,
}

fn collect_tensors(model: &Model<f32>) -> Vec<(String, &ArrayD<f32>)> {
    let mut out = Vec::new();
    for p in &model.feat.params.params {
        out.push((format!("feat.{}", p.name), &p.value));
    }
    for p in &model.head.params.params {
        out.push((format!("head.{}", p.name), &p.value));
    }
    out
}

pub fn save_checkpoint(path: &Path, model: &Model<f32>) -> Result<()> {
    let tensors = collect_tensors(model);
    let mut entries = Vec::new();
    let mut offset = 0usize;
    for (name, arr) in &tensors {
        let byte_len = arr.len() * 4;
        entries.push(TensorEntry {
            name: name.clone(),
            shape: arr.shape().to_vec(),
            dtype: "f32".into(),
            offset,
            byte_len,
        });
        offset += byte_len;
    }
    let manifest = Manifest {
        format_version: CKPT_VERSION,
        feat_config: model.feat.cfg.clone(),
        head_config: model.head.cfg.clone(),
        head_in_channels: model.head.in_channels,
        tensors: entries,
    };
    let mjson = serde_json::to_vec(&manifest)?;
    atomic_write(path, |w| {
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&(mjson.len() as u64).to_le_bytes())?;
        w.write_all(&mjson)?;
        for (_, arr) in &tensors {
            for v in arr.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let mut f = File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let mut lenb = [0u8; 8];
    f.read_exact(&mut lenb)?;
    let mlen = u64::from_le_bytes(lenb) as usize;
    let mut mjson = vec![0u8; mlen];
    f.read_exact(&mut mjson)?;
    let manifest: Manifest = serde_json::from_slice(&mjson)
        .map_err(|e| Error::Checkpoint(format!("malformed manifest: {e}")))?;
    if manifest.format_version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unknown format version {}",
            manifest.format_version
        )));
    }
    let mut blob = Vec::new();
    f.read_to_end(&mut blob)?;

    let read_tensor = |e: &TensorEntry| -> Result<ArrayD<f32>> {
        if e.dtype != "f32" {
            return Err(Error::Checkpoint(format!("unsupported dtype {}", e.dtype)));
        }
        let end = e.offset + e.byte_len;
        if end > blob.len() {
            return Err(Error::Checkpoint(format!("tensor {} overruns blob", e.name)));
        }
        let data: Vec<f32> = blob[e.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if data.len() != e.shape.iter().product::<usize>() {
            return Err(Error::Checkpoint(format!("tensor {} shape/length mismatch", e.name)));
        }
        Ok(ArrayD::from_vec(&e.shape, data))
    };

    let mut prev_end = 0usize;
    for e in &manifest.tensors {
        if e.offset < prev_end {
            return Err(Error::Checkpoint("overlapping tensor offsets".into()));
        }
        prev_end = e.offset + e.byte_len;
    }

    let mut model = Model::init(&manifest.feat_config, &manifest.head_config, 0);
    if model.head.in_channels != manifest.head_in_channels {
        return Err(Error::Checkpoint("head input channel count mismatch".into()));
    }
    let load_into = |set: &mut ParamSet<f32>, prefix: &str| -> Result<()> {
        for p in &mut set.params {
            let full = format!("{prefix}.{}", p.name);
            let e = manifest
                .tensors
                .iter()
                .find(|t| t.name == full)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {full}")))?;
            let arr = read_tensor(e)?;
            if arr.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!("tensor {full} shape mismatch")));
            }
            *p = Parameter::new(p.name.clone(), arr);
        }
        Ok(())
    };
    load_into(&mut model.feat.params, "feat")?;
    load_into(&mut model.head.params, "head")?;
    Ok(model)
}

// ---------------------------------------------------------------------------
// Synthetic sequences
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Square,
    Disc,
}

fn default_n_videos() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub n_objects: usize,
    /// Cycled over objects.
    pub shapes: Vec<ShapeKind>,
    /// Pixels per frame, cycled over objects.
    pub velocities: Vec<[f64; 2]>,
    /// Side length (square) or diameter (disc).
    pub object_size: usize,
    pub n_frames: usize,
    pub color_jitter: f64,
    pub seed: u64,
    #[serde(default = "default_n_videos")]
    pub n_videos: usize,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.object_size >= self.height.min(self.width) {
            return Err(Error::Config("object larger than canvas".into()));
        }
        if self.n_objects == 0 || self.n_frames == 0 || self.n_videos == 0 {
            return Err(Error::Config("n_objects, n_frames, n_videos must be >= 1".into()));
        }
        if self.shapes.is_empty() || self.velocities.is_empty() {
            return Err(Error::Config("shapes and velocities must be non-empty".into()));
        }
        Ok(())
    }
}

// fixed, well-separated object colors (id 1..)
const OBJECT_COLORS: [[f64; 3]; 6] = [
    [0.85, 0.25, 0.2],
    [0.2, 0.55, 0.9],
    [0.3, 0.8, 0.3],
    [0.9, 0.8, 0.2],
    [0.7, 0.3, 0.8],
    [0.2, 0.8, 0.8],
];

/// Fixed display color for an object id (1-based into the palette).
pub fn id_color(id: u32) -> [f64; 3] {
    OBJECT_COLORS[(id as usize).saturating_sub(1) % OBJECT_COLORS.len()]
}

/// Reflecting bounce inside [0, limit].
fn bounce(pos: f64, limit: f64) -> f64 {
    if limit <= 0.0 {
        return 0.0;
    }
    let period = 2.0 * limit;
    let m = pos.rem_euclid(period);
    if m <= limit {
        m
    } else {
        period - m
    }
}

/// Render one video of moving shapes. Returns (frames, masks).
pub fn render_synthetic(
    spec: &SynthSpec,
    video_seed: u64,
) -> (Vec<ArrayD<f32>>, Vec<ObjectLabelMap>) {
    let mut rng = ChaCha8Rng::seed_from_u64(video_seed);
    let (h, w, sz) = (spec.height, spec.width, spec.object_size);
    let lim_y = (h - sz) as f64;
    let lim_x = (w - sz) as f64;
    let starts: Vec<(f64, f64)> = (0..spec.n_objects)
        .map(|_| {
            (
                (rng.gen_range(0..=(h - sz)) as f64),
                (rng.gen_range(0..=(w - sz)) as f64),
            )
        })
        .collect();
    let bg: [f64; 3] = [
        0.35 + rng.gen_range(-0.05..0.05),
        0.35 + rng.gen_range(-0.05..0.05),
        0.4 + rng.gen_range(-0.05..0.05),
    ];
    let mut frames = Vec::with_capacity(spec.n_frames);
    let mut masks = Vec::with_capacity(spec.n_frames);
    for t in 0..spec.n_frames {
        let mut frame = ArrayD::<f32>::zeros(&[h, w, 3]);
        let jitter: [f64; 3] = [
            rng.gen_range(-spec.color_jitter..=spec.color_jitter),
            rng.gen_range(-spec.color_jitter..=spec.color_jitter),
            rng.gen_range(-spec.color_jitter..=spec.color_jitter),
        ];
        for p in 0..h * w {
            for ch in 0..3 {
                frame.data_mut()[p * 3 + ch] = (bg[ch] + jitter[ch]).clamp(0.0, 1.0) as f32;
            }
        }
        let mut labels = vec![0u32; h * w];
        for oi in 0..spec.n_objects {
            let vel = spec.velocities[oi % spec.velocities.len()];
            let kind = spec.shapes[oi % spec.shapes.len()];
            let y0 = bounce(starts[oi].0 + vel[1] * t as f64, lim_y).round() as usize;
            let x0 = bounce(starts[oi].1 + vel[0] * t as f64, lim_x).round() as usize;
            let color = OBJECT_COLORS[oi % OBJECT_COLORS.len()];
            let id = (oi + 1) as u32;
            let r = sz as f64 / 2.0;
            for dy in 0..sz {
                for dx in 0..sz {
                    let inside = match kind {
                        ShapeKind::Square => true,
                        ShapeKind::Disc => {
                            let cy = dy as f64 + 0.5 - r;
                            let cx = dx as f64 + 0.5 - r;
                            cy * cy + cx * cx <= r * r
                        }
                    };
                    if !inside {
                        continue;
                    }
                    let p = (y0 + dy) * w + x0 + dx;
                    labels[p] = id;
                    for ch in 0..3 {
                        frame.data_mut()[p * 3 + ch] =
                            (color[ch] + jitter[ch]).clamp(0.0, 1.0) as f32;
                    }
                }
            }
        }
        frames.push(frame);
        masks.push(ObjectLabelMap::from_labels(h, w, labels));
    }
    (frames, masks)
}

/// Generate `spec.n_videos` sequences under `out`, one subdirectory per
/// video (`000/frames`, `000/masks`, ...). Deterministic per seed.
pub fn generate_synthetic(spec: &SynthSpec, out: &Path) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    let mut dirs = Vec::new();
    for vi in 0..spec.n_videos {
        let (frames, masks) = render_synthetic(spec, spec.seed.wrapping_add(vi as u64));
        let vdir = out.join(format!("{vi:03}"));
        let fdir = vdir.join("frames");
        std::fs::create_dir_all(&fdir)?;
        for (i, fr) in frames.iter().enumerate() {
            save_frame(&fdir.join(format!("{i:05}.png")), fr)?;
        }
        save_masks(&vdir.join("masks"), &masks)?;
        dirs.push(vdir);
    }
    Ok(dirs)
}
