//! Images, labelled datasets, directory loading and stratified splits.

pub mod corpus;
mod shift;

pub use shift::{apply_shift, ShiftConfig};

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Pixel tensor in `(H, W, C)` order with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f32>,
}

impl Image {
    /// Builds an image, rejecting values outside `[-1, 1]` or non-finite.
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Invalid(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::shape(height * width * channels, pixels.len()));
        }
        if let Some(v) = pixels.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(Image {
            height,
            width,
            channels,
            pixels,
        })
    }

    /// Like [`Image::new`] but clamps into range; NaN maps to 0.
    pub fn from_clipped(height: usize, width: usize, channels: usize, mut pixels: Vec<f32>) -> Result<Self> {
        for v in &mut pixels {
            *v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        }
        Image::new(height, width, channels, pixels)
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Image::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds from a channel-major `(C, H, W)` buffer, clamping into range.
    pub fn from_chw(height: usize, width: usize, channels: usize, chw: &[f32]) -> Result<Self> {
        if chw.len() != height * width * channels {
            return Err(Error::shape(height * width * channels, chw.len()));
        }
        let plane = height * width;
        let mut pixels = vec![0.0; chw.len()];
        for c in 0..channels {
            for p in 0..plane {
                pixels[p * channels + c] = chw[c * plane + p];
            }
        }
        Image::from_clipped(height, width, channels, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Channel-major copy of the pixels.
    pub fn to_chw(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.pixels.len()];
        for p in 0..plane {
            for c in 0..self.channels {
                out[c * plane + p] = self.pixels[p * self.channels + c];
            }
        }
        out
    }

    /// Swaps rows and columns.
    pub fn transpose(&self) -> Image {
        let mut pixels = vec![0.0; self.pixels.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    pixels[(x * self.height + y) * self.channels + c] = self.get(y, x, c);
                }
            }
        }
        Image {
            height: self.width,
            width: self.height,
            channels: self.channels,
            pixels,
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let to_u8 = |v: f32| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
        let bytes: Vec<u8> = self.pixels.iter().map(|v| to_u8(*v)).collect();
        let (w, h) = (self.width as u32, self.height as u32);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        match self.channels {
            1 => image::GrayImage::from_raw(w, h, bytes).map(|i| i.save(path)),
            3 => image::RgbImage::from_raw(w, h, bytes).map(|i| i.save(path)),
            c => return Err(Error::Invalid(format!("cannot write {c}-channel PNG"))),
        }
        .expect("buffer sized from image")?;
        Ok(())
    }

    /// Decodes an image file, resizing to `(height, width)` when needed.
    pub fn load_png(path: &Path, height: usize, width: usize, channels: usize) -> Result<Self> {
        let dynamic = image::open(path)?;
        let dynamic = if dynamic.width() as usize != width || dynamic.height() as usize != height {
            dynamic.resize_exact(width as u32, height as u32, image::imageops::FilterType::Triangle)
        } else {
            dynamic
        };
        let raw = match channels {
            1 => dynamic.to_luma8().into_raw(),
            3 => dynamic.to_rgb8().into_raw(),
            c => return Err(Error::Invalid(format!("unsupported channel count {c}"))),
        };
        let pixels = raw.iter().map(|b| *b as f32 / 127.5 - 1.0).collect();
        Image::from_clipped(height, width, channels, pixels)
    }
}

/// Class-labelled images from one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub items: Vec<(Image, usize)>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub domain_tag: String,
}

impl LabeledDataset {
    pub fn new(items: Vec<(Image, usize)>, class_names: Vec<String>, domain_tag: impl Into<String>) -> Result<Self> {
        let num_classes = class_names.len();
        if num_classes < 2 {
            return Err(Error::Invalid(format!("need at least 2 classes, got {num_classes}")));
        }
        if let Some((_, c)) = items.iter().find(|(_, c)| *c >= num_classes) {
            return Err(Error::Invalid(format!("class id {c} >= {num_classes}")));
        }
        if let Some((first, _)) = items.first() {
            let shape = first.shape();
            if let Some((img, _)) = items.iter().find(|(i, _)| i.shape() != shape) {
                return Err(Error::shape(format!("{shape:?}"), format!("{:?}", img.shape())));
            }
        }
        Ok(LabeledDataset {
            items,
            num_classes,
            class_names,
            domain_tag: domain_tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn images(&self) -> impl Iterator<Item = &Image> {
        self.items.iter().map(|(i, _)| i)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|(_, c)| *c).collect()
    }

    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.items.first().map(|(i, _)| i.shape())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for (_, c) in &self.items {
            counts[*c] += 1;
        }
        counts
    }

    /// Keeps the first `n` items of each class, preserving order.
    pub fn take_per_class(&self, n: usize) -> LabeledDataset {
        let mut counts = vec![0; self.num_classes];
        let items = self
            .items
            .iter()
            .filter(|(_, c)| {
                counts[*c] += 1;
                counts[*c] <= n
            })
            .cloned()
            .collect();
        LabeledDataset {
            items,
            ..self.clone_meta()
        }
    }

    /// Keeps the first `n` items overall.
    pub fn take(&self, n: usize) -> LabeledDataset {
        LabeledDataset {
            items: self.items.iter().take(n).cloned().collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> LabeledDataset {
        LabeledDataset {
            items: Vec::new(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            domain_tag: self.domain_tag.clone(),
        }
    }

    /// Writes `root/<class>/<index>.png`.
    pub fn save(&self, root: &Path) -> Result<()> {
        for name in &self.class_names {
            let dir = root.join(name);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        for (idx, (img, c)) in self.items.iter().enumerate() {
            img.save_png(&root.join(&self.class_names[*c]).join(format!("{idx:05}.png")))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Invalid(format!("unknown split '{other}'"))),
        }
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Loads `root/<split>/<class>/*` with classes indexed by sorted directory name.
///
/// Undecodable files are skipped with a warning; a class left without any
/// image is an error.
pub fn load_dataset(root: &Path, split: Split, height: usize, width: usize, channels: usize) -> Result<LabeledDataset> {
    let base = root.join(split.as_str());
    let class_dirs: Vec<PathBuf> = sorted_entries(&base)?.into_iter().filter(|p| p.is_dir()).collect();
    let mut class_names = Vec::with_capacity(class_dirs.len());
    let mut items = Vec::new();
    for (class_id, dir) in class_dirs.iter().enumerate() {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let mut loaded = 0;
        for file in sorted_entries(dir)?.into_iter().filter(|p| p.is_file()) {
            match Image::load_png(&file, height, width, channels) {
                Ok(img) => {
                    items.push((img, class_id));
                    loaded += 1;
                }
                Err(e) => log::warn!("skipping {}: {e}", file.display()),
            }
        }
        if loaded == 0 {
            return Err(Error::EmptyClass(name));
        }
        class_names.push(name);
    }
    let tag = root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    LabeledDataset::new(items, class_names, tag)
}

/// Stratified split: each class contributes `round(fraction * count)` items to
/// the first part. Both parts keep the input order.
pub fn split_dataset(ds: &LabeledDataset, fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Invalid(format!("split fraction {fraction} not in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_first = vec![false; ds.len()];
    for class in 0..ds.num_classes {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|i| ds.items[*i].1 == class).collect();
        let take = (fraction * idx.len() as f64).round() as usize;
        if take == 0 || take == idx.len() {
            return Err(Error::Invalid(format!(
                "fraction {fraction} leaves class '{}' empty in one split ({} items)",
                ds.class_names[class],
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for i in &idx[..take] {
            in_first[*i] = true;
        }
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (item, first) in ds.items.iter().zip(&in_first) {
        if *first {
            a.push(item.clone());
        } else {
            b.push(item.clone());
        }
    }
    Ok((
        LabeledDataset { items: a, ..ds.clone_meta() },
        LabeledDataset { items: b, ..ds.clone_meta() },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(per_class: usize) -> LabeledDataset {
        let mut items = Vec::new();
        for c in 0..2 {
            for i in 0..per_class {
                let v = (i as f32 / per_class as f32) * 0.5 - c as f32 * 0.3;
                items.push((Image::constant(4, 4, 3, v).unwrap(), c));
            }
        }
        LabeledDataset::new(items, vec!["a".into(), "b".into()], "toy").unwrap()
    }

    #[test]
    fn image_rejects_out_of_range() {
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(Image::new(1, 1, 1, vec![-1.0]).is_ok());
    }

    #[test]
    fn chw_round_trip() {
        let img = Image::new(2, 3, 2, (0..12).map(|v| v as f32 / 12.0).collect()).unwrap();
        let back = Image::from_chw(2, 3, 2, &img.to_chw()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn split_counts_per_class() {
        let ds = toy(10);
        let (a, b) = split_dataset(&ds, 0.7, 1).unwrap();
        assert_eq!(a.class_counts(), vec![7, 7]);
        assert_eq!(b.class_counts(), vec![3, 3]);
        let (a2, b2) = split_dataset(&ds, 0.7, 1).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        let mut union: Vec<_> = a.items.iter().chain(&b.items).map(|(i, c)| (i.pixels()[0].to_bits(), *c)).collect();
        let mut orig: Vec<_> = ds.items.iter().map(|(i, c)| (i.pixels()[0].to_bits(), *c)).collect();
        union.sort();
        orig.sort();
        assert_eq!(union, orig);
    }

    #[test]
    fn split_rejects_empty_side() {
        assert!(split_dataset(&toy(2), 0.99, 0).is_err());
        assert!(split_dataset(&toy(2), 1.0, 0).is_err());
    }

    #[test]
    fn dataset_rejects_bad_labels() {
        let img = Image::constant(2, 2, 1, 0.0).unwrap();
        assert!(LabeledDataset::new(vec![(img.clone(), 2)], vec!["a".into(), "b".into()], "x").is_err());
        assert!(LabeledDataset::new(vec![(img, 0)], vec!["a".into()], "x").is_err());
    }

    #[test]
    fn load_counts_and_is_repeatable() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy(5);
        ds.save(&dir.path().join("train")).unwrap();
        let a = load_dataset(dir.path(), Split::Train, 4, 4, 3).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a.num_classes, 2);
        let b = load_dataset(dir.path(), Split::Train, 4, 4, 3).unwrap();
        let bits = |d: &LabeledDataset| -> Vec<u32> { d.images().flat_map(|i| i.pixels().iter().map(|v| v.to_bits())).collect() };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.labels(), b.labels());
    }

    #[test]
    fn load_errors_name_empty_class() {
        let dir = tempfile::tempdir().unwrap();
        toy(2).save(&dir.path().join("train")).unwrap();
        fs::create_dir_all(dir.path().join("train").join("zzz")).unwrap();
        fs::write(dir.path().join("train").join("zzz").join("bad.png"), b"not a png").unwrap();
        match load_dataset(dir.path(), Split::Train, 4, 4, 3) {
            Err(Error::EmptyClass(name)) => assert_eq!(name, "zzz"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_missing_directory_is_io_error() {
        let err = load_dataset(Path::new("/nonexistent/lsda"), Split::Test, 4, 4, 3).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
