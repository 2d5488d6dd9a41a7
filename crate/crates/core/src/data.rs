//! Bi-temporal datasets: on-disk layout, manifest, label conversion,
//! augmentation and a synthetic scene generator.
//!
//! Layout: `root/manifest.txt` plus `root/{split}/{id}/{t1,t2,label}.png`.
//! Images are 8-bit RGB; labels are 8-bit single-channel class indices.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, RgbImage};
use mcd_tensor::{Element, Rng, Tensor};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiTemporalSample {
    pub id: String,
    pub width: usize,
    pub height: usize,
    /// Row-major interleaved RGB.
    pub t1: Vec<u8>,
    pub t2: Vec<u8>,
    pub label: Vec<u8>,
}

impl BiTemporalSample {
    pub fn validate(&self, k: usize) -> Result<()> {
        let px = self.width * self.height;
        if self.t1.len() != 3 * px || self.t2.len() != 3 * px || self.label.len() != px {
            return Err(Error::sample(&self.id, "rasters differ in size"));
        }
        if let Some(pos) = self.label.iter().position(|&v| v as usize > k) {
            return Err(Error::sample(
                &self.id,
                format!(
                    "label value {} at ({}, {}) exceeds K = {k}",
                    self.label[pos],
                    pos % self.width,
                    pos / self.width
                ),
            ));
        }
        Ok(())
    }
}

/// Class colours; index 0 (no change) is black.
pub const DEFAULT_PALETTE: [[u8; 3]; 7] = [
    [0, 0, 0],
    [255, 0, 0],
    [0, 255, 0],
    [0, 0, 255],
    [255, 255, 0],
    [128, 0, 128],
    [0, 255, 255],
];

pub fn default_palette(k: usize) -> Vec<[u8; 3]> {
    (0..=k)
        .map(|i| match DEFAULT_PALETTE.get(i) {
            Some(&c) => c,
            // beyond the named colours: saturated hues from a fixed stride
            None => {
                let h = (i * 67) % 360;
                let x = (255 * (60 - (h % 120).abs_diff(60)) / 60) as u8;
                match h / 60 {
                    0 => [255, x, 0],
                    1 => [x, 255, 0],
                    2 => [0, 255, x],
                    3 => [0, x, 255],
                    4 => [x, 0, 255],
                    _ => [255, 0, x],
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub k: usize,
    pub class_names: Vec<String>,
    pub palette: Vec<[u8; 3]>,
    pub splits: BTreeMap<String, Vec<String>>,
}

impl DatasetManifest {
    pub fn new(k: usize) -> Self {
        let class_names = (0..=k)
            .map(|i| if i == 0 { "no_change".to_string() } else { format!("change_{i}") })
            .collect();
        Self {
            k,
            class_names,
            palette: default_palette(k),
            splits: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Manifest("k must be at least 1".into()));
        }
        if self.palette.len() != self.k + 1 || self.class_names.len() != self.k + 1 {
            return Err(Error::Manifest(format!("palette and class names must cover 0..={}", self.k)));
        }
        if self.palette[0] != [0, 0, 0] {
            return Err(Error::Manifest("palette_0 (no change) must be black".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "k={}", self.k);
        for (i, (name, c)) in self.class_names.iter().zip(&self.palette).enumerate() {
            let _ = writeln!(s, "class_name_{i}={name}");
            let _ = writeln!(s, "palette_{i}={},{},{}", c[0], c[1], c[2]);
        }
        for (split, ids) in &self.splits {
            let _ = writeln!(s, "split_{split}={}", ids.join(","));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut k = None;
        let mut names = BTreeMap::new();
        let mut colors = BTreeMap::new();
        let mut splits = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Manifest(format!("`{line}` is not key=value")))?;
            let index = |prefix: &str| -> Result<usize> {
                key[prefix.len()..]
                    .parse()
                    .map_err(|_| Error::Manifest(format!("bad key `{key}`")))
            };
            if key == "k" {
                k = Some(value.parse().map_err(|_| Error::Manifest(format!("bad k `{value}`")))?);
            } else if key.starts_with("class_name_") {
                names.insert(index("class_name_")?, value.to_string());
            } else if key.starts_with("palette_") {
                let rgb: Vec<u8> = value
                    .split(',')
                    .map(|v| v.trim().parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Manifest(format!("bad colour `{value}`")))?;
                let rgb: [u8; 3] = rgb
                    .try_into()
                    .map_err(|_| Error::Manifest(format!("colour `{value}` needs three components")))?;
                colors.insert(index("palette_")?, rgb);
            } else if let Some(split) = key.strip_prefix("split_") {
                let ids = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
                splits.insert(split.to_string(), ids);
            } else {
                return Err(Error::Manifest(format!("unknown key `{key}`")));
            }
        }
        let k = k.ok_or_else(|| Error::Manifest("missing k".into()))?;
        fn dense<V>(m: BTreeMap<usize, V>, what: &str, k: usize) -> Result<Vec<V>> {
            if m.keys().copied().eq(0..=k) {
                Ok(m.into_values().collect())
            } else {
                Err(Error::Manifest(format!("{what} entries must cover 0..={k}")))
            }
        }
        let m = Self {
            k,
            class_names: dense(names, "class_name", k)?,
            palette: dense(colors, "palette", k)?,
            splits,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let path = root.join(MANIFEST);
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }
}

fn read_image(path: &Path) -> Result<image::DynamicImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn read_rgb(path: &Path, id: &str) -> Result<(usize, usize, Vec<u8>)> {
    if !path.exists() {
        return Err(Error::sample(id, format!("missing file {}", path.display())));
    }
    let img = read_image(path)?.to_rgb8();
    Ok((img.width() as usize, img.height() as usize, img.into_raw()))
}

fn read_label(path: &Path, id: &str) -> Result<(usize, usize, Vec<u8>)> {
    if !path.exists() {
        return Err(Error::sample(id, format!("missing file {}", path.display())));
    }
    match read_image(path)? {
        image::DynamicImage::ImageLuma8(img) => Ok((img.width() as usize, img.height() as usize, img.into_raw())),
        other => Err(Error::sample(
            id,
            format!("label must be 8-bit single-channel, found {:?}", other.color()),
        )),
    }
}

/// Reads a standalone 8-bit single-channel label raster.
pub fn read_label_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    read_label(path, &path.display().to_string())
}

/// RGB raster of a class map through `palette`.
pub fn colorize(labels: &[u8], palette: &[[u8; 3]]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(3 * labels.len());
    for &l in labels {
        let c = palette
            .get(l as usize)
            .ok_or_else(|| Error::Invalid(format!("class {l} has no palette entry ({} colours)", palette.len())))?;
        out.extend_from_slice(c);
    }
    Ok(out)
}

/// Change/no-change agreement as RGB: TP white, TN black, FP red, FN green.
pub fn agreement_map(pred: &[u8], gt: &[u8]) -> Vec<u8> {
    pred.iter()
        .zip(gt)
        .flat_map(|(&p, &g)| match (p > 0, g > 0) {
            (true, true) => [255, 255, 255],
            (false, false) => [0, 0, 0],
            (true, false) => [255, 0, 0],
            (false, true) => [0, 255, 0],
        })
        .collect()
}

pub fn load_sample(dir: &Path, id: &str, k: usize) -> Result<BiTemporalSample> {
    let (w1, h1, t1) = read_rgb(&dir.join("t1.png"), id)?;
    let (w2, h2, t2) = read_rgb(&dir.join("t2.png"), id)?;
    let (wl, hl, label) = read_label(&dir.join("label.png"), id)?;
    if (w1, h1) != (w2, h2) || (w1, h1) != (wl, hl) {
        return Err(Error::sample(
            id,
            format!("size mismatch: t1 {w1}x{h1}, t2 {w2}x{h2}, label {wl}x{hl}"),
        ));
    }
    let s = BiTemporalSample {
        id: id.to_string(),
        width: w1,
        height: h1,
        t1,
        t2,
        label,
    };
    s.validate(k)?;
    Ok(s)
}

/// Samples of one split in lexicographic id order, loaded lazily.
pub struct DatasetStream {
    split_dir: PathBuf,
    ids: std::vec::IntoIter<String>,
    k: usize,
}

impl DatasetStream {
    pub fn ids(&self) -> &[String] {
        self.ids.as_slice()
    }
}

impl Iterator for DatasetStream {
    type Item = Result<BiTemporalSample>;

    fn next(&mut self) -> Option<Self::Item> {
        let id = self.ids.next()?;
        Some(load_sample(&self.split_dir.join(&id), &id, self.k))
    }
}

/// Opens `root/{split}`; a missing split directory is an empty split.
pub fn load_dataset(root: &Path, split: &str) -> Result<(DatasetManifest, DatasetStream)> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let manifest = DatasetManifest::load(root)?;
    let split_dir = root.join(split);
    let mut ids = Vec::new();
    if split_dir.is_dir() {
        for entry in fs::read_dir(&split_dir).map_err(|e| Error::io(&split_dir, e))? {
            let entry = entry.map_err(|e| Error::io(&split_dir, e))?;
            if entry.path().is_dir() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
    }
    ids.sort();
    let k = manifest.k;
    Ok((
        manifest,
        DatasetStream {
            split_dir,
            ids: ids.into_iter(),
            k,
        },
    ))
}

/// Loads a whole split into memory.
pub fn load_split(root: &Path, split: &str) -> Result<(DatasetManifest, Vec<BiTemporalSample>)> {
    let (m, stream) = load_dataset(root, split)?;
    Ok((m, stream.collect::<Result<_>>()?))
}

fn save_png(path: &Path, result: image::ImageResult<()>) -> Result<()> {
    result.map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn write_rgb(path: &Path, width: usize, height: usize, rgb: Vec<u8>) -> Result<()> {
    let img = RgbImage::from_raw(width as u32, height as u32, rgb)
        .ok_or_else(|| Error::Invalid(format!("{}: raster does not match {width}x{height}", path.display())))?;
    save_png(path, img.save(path))
}

pub fn write_gray(path: &Path, width: usize, height: usize, values: Vec<u8>) -> Result<()> {
    let img = GrayImage::from_raw(width as u32, height as u32, values)
        .ok_or_else(|| Error::Invalid(format!("{}: raster does not match {width}x{height}", path.display())))?;
    save_png(path, img.save(path))
}

pub fn write_sample(root: &Path, split: &str, s: &BiTemporalSample) -> Result<()> {
    let dir = root.join(split).join(&s.id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_rgb(&dir.join("t1.png"), s.width, s.height, s.t1.clone())?;
    write_rgb(&dir.join("t2.png"), s.width, s.height, s.t2.clone())?;
    write_gray(&dir.join("label.png"), s.width, s.height, s.label.clone())
}

/// Keeps the post-change class where the semantic labels differ and the
/// later label is known; everything else becomes 0.
pub fn scd_to_mcd(label_t1: &[u8], label_t2: &[u8]) -> Result<Vec<u8>> {
    if label_t1.len() != label_t2.len() {
        return Err(Error::Invalid(format!(
            "semantic maps differ in size: {} vs {} pixels",
            label_t1.len(),
            label_t2.len()
        )));
    }
    Ok(label_t1
        .iter()
        .zip(label_t2)
        .map(|(&a, &b)| if a != b && b > 0 { b } else { 0 })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentationConfig {
    pub flip: bool,
    pub rotate: bool,
}

/// Index remapping for one draw of flips and right-angle rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transform {
    pub hflip: bool,
    pub vflip: bool,
    /// Counter-clockwise quarter turns.
    pub quarter_turns: u8,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        hflip: false,
        vflip: false,
        quarter_turns: 0,
    };

    pub fn draw(cfg: AugmentationConfig, rng: &mut Rng) -> Self {
        let hflip = cfg.flip && rng.coin();
        let vflip = cfg.flip && rng.coin();
        let quarter_turns = if cfg.rotate { rng.below(4) as u8 } else { 0 };
        Self {
            hflip,
            vflip,
            quarter_turns,
        }
    }

    /// Applies the transform to a `height × width` raster with `ch` interleaved channels.
    pub fn apply(&self, data: &[u8], width: usize, height: usize, ch: usize) -> (usize, usize, Vec<u8>) {
        let (mut w, mut h) = (width, height);
        let mut cur = data.to_vec();
        let remap = |src: &[u8], w: usize, h: usize, ow: usize, oh: usize, f: &dyn Fn(usize, usize) -> (usize, usize)| {
            let mut out = vec![0u8; ow * oh * ch];
            for y in 0..oh {
                for x in 0..ow {
                    let (sx, sy) = f(x, y);
                    debug_assert!(sx < w && sy < h);
                    let (o, s) = ((y * ow + x) * ch, (sy * w + sx) * ch);
                    out[o..o + ch].copy_from_slice(&src[s..s + ch]);
                }
            }
            out
        };
        if self.hflip {
            cur = remap(&cur, w, h, w, h, &|x, y| (w - 1 - x, y));
        }
        if self.vflip {
            cur = remap(&cur, w, h, w, h, &|x, y| (x, h - 1 - y));
        }
        for _ in 0..self.quarter_turns {
            // counter-clockwise: output (x, y) reads input (w - 1 - y, x)
            let (ow, oh) = (h, w);
            cur = remap(&cur, w, h, ow, oh, &|x, y| (w - 1 - y, x));
            (w, h) = (ow, oh);
        }
        (w, h, cur)
    }
}

/// The same random flips and rotation applied to both images and the label.
pub fn augment(s: &BiTemporalSample, cfg: AugmentationConfig, rng: &mut Rng) -> BiTemporalSample {
    apply_transform(s, Transform::draw(cfg, rng))
}

pub fn apply_transform(s: &BiTemporalSample, t: Transform) -> BiTemporalSample {
    if t == Transform::IDENTITY {
        return s.clone();
    }
    let (width, height, t1) = t.apply(&s.t1, s.width, s.height, 3);
    let (_, _, t2) = t.apply(&s.t2, s.width, s.height, 3);
    let (_, _, label) = t.apply(&s.label, s.width, s.height, 1);
    BiTemporalSample {
        id: s.id.clone(),
        width,
        height,
        t1,
        t2,
        label,
    }
}

/// Per-channel normalisation applied to 8-bit pixels before the network.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.25;

/// Stacks samples into `[N, 3, H, W]` image tensors and a flat label vector.
pub fn batch_tensors<T: Element>(samples: &[&BiTemporalSample]) -> Result<(Tensor<T>, Tensor<T>, Vec<u8>)> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let (w, h) = (first.width, first.height);
    if let Some(s) = samples.iter().find(|s| (s.width, s.height) != (w, h)) {
        return Err(Error::sample(&s.id, format!("size differs from the batch's {w}x{h}")));
    }
    let planar = |rgb: &[u8], out: &mut Vec<T>| {
        for c in 0..3 {
            out.extend((0..w * h).map(|p| T::of((rgb[3 * p + c] as f64 / 255.0 - PIXEL_MEAN) / PIXEL_STD)));
        }
    };
    let (mut a, mut b, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for s in samples {
        planar(&s.t1, &mut a);
        planar(&s.t2, &mut b);
        labels.extend_from_slice(&s.label);
    }
    let shape = [samples.len(), 3, h, w];
    Ok((Tensor::new(&shape, a)?, Tensor::new(&shape, b)?, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub count: usize,
    pub size: usize,
    pub k: usize,
    pub seed: u64,
    /// Extra samples written to the `val` split.
    pub val: usize,
}

impl SynthSpec {
    /// Parses `count=8,size=64,k=3,seed=7[,val=2]`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SynthSpec {
            count: 8,
            size: 64,
            k: 3,
            seed: 0,
            val: 0,
        };
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::config(part, "expected key=value"))?;
            let n: u64 = value
                .parse()
                .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))?;
            match key {
                "count" => spec.count = n as usize,
                "size" => spec.size = n as usize,
                "k" => spec.k = n as usize,
                "seed" => spec.seed = n,
                "val" => spec.val = n as usize,
                _ => return Err(Error::config(key, "unknown synth key")),
            }
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect,
    Ellipse,
}

/// Smooth earth-toned texture; every channel stays within [48, 200] so it
/// never coincides with a class colour.
#[allow(clippy::needless_range_loop)]
fn background(size: usize, rng: &mut Rng) -> Vec<u8> {
    let cells = 5;
    let knots: Vec<[f64; 3]> = (0..cells * cells)
        .map(|_| {
            let base = rng.uniform_range(80.0, 150.0);
            [
                base + rng.uniform_range(-12.0, 20.0),
                base + rng.uniform_range(-10.0, 15.0),
                base + rng.uniform_range(-20.0, 5.0),
            ]
        })
        .collect();
    let mut out = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let fy = y as f64 / size as f64 * (cells - 1) as f64;
            let fx = x as f64 / size as f64 * (cells - 1) as f64;
            let (y0, x0) = (fy as usize, fx as usize);
            let (ly, lx) = (fy - y0 as f64, fx - x0 as f64);
            for c in 0..3 {
                let at = |yy: usize, xx: usize| knots[yy * cells + xx][c];
                let v = (1.0 - ly) * ((1.0 - lx) * at(y0, x0) + lx * at(y0, x0 + 1))
                    + ly * ((1.0 - lx) * at(y0 + 1, x0) + lx * at(y0 + 1, x0 + 1));
                let noisy = v + rng.uniform_range(-6.0, 6.0);
                out.push(noisy.round().clamp(48.0, 200.0) as u8);
            }
        }
    }
    out
}

fn synth_sample(id: String, size: usize, k: usize, palette: &[[u8; 3]], rng: &mut Rng) -> BiTemporalSample {
    let t1 = background(size, rng);
    let mut t2 = t1.clone();
    let mut t1 = t1;
    let mut label = vec![0u8; size * size];
    let wanted = 1 + rng.below(4) as usize;
    let mut placed = 0;
    let (lo, hi) = (size / 4, size / 2);
    for _ in 0..200 {
        if placed == wanted {
            break;
        }
        let w = lo + rng.below((hi - lo + 1) as u64) as usize;
        let h = lo + rng.below((hi - lo + 1) as u64) as usize;
        let x0 = rng.below((size - w + 1) as u64) as usize;
        let y0 = rng.below((size - h + 1) as u64) as usize;
        let shape = if rng.coin() { Shape::Rect } else { Shape::Ellipse };
        let class = 1 + rng.below(k as u64) as u8;
        let added = rng.coin();
        let inside = |x: usize, y: usize| match shape {
            Shape::Rect => true,
            Shape::Ellipse => {
                let dx = (x as f64 + 0.5 - x0 as f64 - w as f64 / 2.0) / (w as f64 / 2.0);
                let dy = (y as f64 + 0.5 - y0 as f64 - h as f64 / 2.0) / (h as f64 / 2.0);
                dx * dx + dy * dy <= 1.0
            }
        };
        // keep a one-pixel gap to every earlier shape
        let clear = (y0.saturating_sub(1)..(y0 + h + 1).min(size))
            .all(|y| (x0.saturating_sub(1)..(x0 + w + 1).min(size)).all(|x| label[y * size + x] == 0));
        if !clear {
            continue;
        }
        let color = palette[class as usize];
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                if !inside(x, y) {
                    continue;
                }
                let p = y * size + x;
                label[p] = class;
                let target = if added { &mut t2 } else { &mut t1 };
                target[3 * p..3 * p + 3].copy_from_slice(&color);
            }
        }
        placed += 1;
    }
    BiTemporalSample {
        id,
        width: size,
        height: size,
        t1,
        t2,
        label,
    }
}

/// Generates the samples of a synthetic dataset without touching disk.
pub fn synth_samples(spec: &SynthSpec) -> Result<(DatasetManifest, Vec<BiTemporalSample>, Vec<BiTemporalSample>)> {
    if spec.size == 0 || !spec.size.is_multiple_of(32) {
        return Err(Error::Invalid(format!("synthetic size {} must be a positive multiple of 32", spec.size)));
    }
    if spec.k == 0 || spec.k > 255 {
        return Err(Error::Invalid(format!("synthetic K = {} must lie in 1..=255", spec.k)));
    }
    let mut manifest = DatasetManifest::new(spec.k);
    let mut rng = Rng::new(spec.seed);
    let mut make = |prefix: &str, n: usize| -> Vec<BiTemporalSample> {
        (0..n)
            .map(|i| synth_sample(format!("{prefix}{i:04}"), spec.size, spec.k, &manifest.palette, &mut rng))
            .collect()
    };
    let train = make("s", spec.count);
    let val = make("v", spec.val);
    manifest.splits.insert("train".into(), train.iter().map(|s| s.id.clone()).collect());
    manifest.splits.insert("val".into(), val.iter().map(|s| s.id.clone()).collect());
    Ok((manifest, train, val))
}

/// Writes a synthetic dataset tree under `root`.
pub fn synth_generate(spec: &SynthSpec, root: &Path) -> Result<DatasetManifest> {
    let (manifest, train, val) = synth_samples(spec)?;
    manifest.save(root)?;
    for (split, samples) in [("train", &train), ("val", &val)] {
        let dir = root.join(split);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for s in samples.iter() {
            write_sample(root, split, s)?;
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agreement_colours() {
        let m = agreement_map(&[2, 0, 1, 0], &[3, 0, 0, 1]);
        assert_eq!(m, [255, 255, 255, 0, 0, 0, 255, 0, 0, 0, 255, 0]);
        // a perfect predictor is black and white only; an all-zero one never red
        let gt = [0u8, 1, 2, 0, 3];
        assert!(agreement_map(&gt, &gt).chunks(3).all(|c| c == [0, 0, 0] || c == [255, 255, 255]));
        assert!(agreement_map(&[0; 5], &gt).chunks(3).all(|c| c != [255, 0, 0]));
    }

    #[test]
    fn colorize_is_a_palette_lookup() {
        let pal = default_palette(3);
        assert_eq!(colorize(&[0, 3, 1], &pal).unwrap(), [0, 0, 0, 0, 0, 255, 255, 0, 0]);
        assert!(colorize(&[4], &pal).is_err());
    }

    #[test]
    fn to_class_rule() {
        assert_eq!(scd_to_mcd(&[4, 3, 2, 1], &[5, 3, 0, 2]).unwrap(), vec![5, 0, 0, 2]);
        assert!(scd_to_mcd(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let mut rng = Rng::new(1);
        let (w, h) = (5, 3);
        let data: Vec<u8> = (0..w * h * 3).map(|_| rng.below(256) as u8).collect();
        let t = Transform {
            hflip: false,
            vflip: false,
            quarter_turns: 1,
        };
        let (mut cw, mut ch, mut cur) = (w, h, data.clone());
        for _ in 0..4 {
            (cw, ch, cur) = t.apply(&cur, cw, ch, 3);
        }
        assert_eq!((cw, ch), (w, h));
        assert_eq!(cur, data);
    }

    #[test]
    fn quarter_turn_orientation() {
        // 2x2 label [a b; c d] turned counter-clockwise is [b d; a c]
        let t = Transform {
            hflip: false,
            vflip: false,
            quarter_turns: 1,
        };
        assert_eq!(t.apply(&[1, 2, 3, 4], 2, 2, 1).2, vec![2, 4, 1, 3]);
    }

    #[test]
    fn manifest_round_trip() {
        let mut m = DatasetManifest::new(6);
        m.splits.insert("train".into(), vec!["a".into(), "b".into()]);
        assert_eq!(DatasetManifest::parse(&m.to_text()).unwrap(), m);
        assert_eq!(m.palette[5], [128, 0, 128]);
        assert!(DatasetManifest::parse("k=1\nclass_name_0=x\npalette_0=0,0,0\n").is_err());
    }

    #[test]
    fn synthetic_labels_mark_exactly_the_changed_pixels() {
        let spec = SynthSpec {
            count: 6,
            size: 64,
            k: 3,
            seed: 7,
            val: 0,
        };
        let (_, train, _) = synth_samples(&spec).unwrap();
        for s in &train {
            for p in 0..64 * 64 {
                let differs = s.t1[3 * p..3 * p + 3] != s.t2[3 * p..3 * p + 3];
                assert_eq!(differs, s.label[p] != 0, "{} pixel {p}", s.id);
            }
            assert!(s.label.iter().any(|&v| v > 0));
        }
    }
}
