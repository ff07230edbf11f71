use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use sha2::{Digest, Sha256};

use super::{Image, PatchIoError};
use crate::seed;

pub const CIFAR_RECORD: usize = 3073;
const CIFAR_SIDE: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    /// Raw CIFAR-10 binary batches: one label byte then 3×32×32 planar bytes.
    CifarBinary,
    /// `root/<class>/<name>.png`, or flat PNGs listed in `root/labels.csv`.
    ImageFolder { num_classes: Option<usize> },
}

/// Labelled images with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, num_classes: usize) -> Result<Self, PatchIoError> {
        if images.is_empty() {
            return Err(PatchIoError::NoSamples("empty image list".into()));
        }
        assert_eq!(images.len(), labels.len());
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(PatchIoError::LabelOutOfRange {
                index: i,
                label: l,
                num_classes,
            });
        }
        Ok(Self {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images[0].channels
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// SHA-256 over shapes, pixels and labels, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_classes as u64).to_le_bytes());
        for (img, &l) in self.images.iter().zip(&self.labels) {
            for d in [img.channels, img.height, img.width, l] {
                h.update((d as u64).to_le_bytes());
            }
            for v in &img.data {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn load_dataset(path: &Path, format: &DatasetFormat) -> Result<Dataset, PatchIoError> {
    if !path.exists() {
        return Err(PatchIoError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "path does not exist"),
        });
    }
    match format {
        DatasetFormat::CifarBinary => load_cifar(path),
        DatasetFormat::ImageFolder { num_classes } => load_image_folder(path, *num_classes),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, PatchIoError> {
    fs::read(path).map_err(|source| PatchIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn list_dir(path: &Path) -> Result<Vec<PathBuf>, PatchIoError> {
    let rd = fs::read_dir(path).map_err(|source| PatchIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for e in rd {
        let e = e.map_err(|source| PatchIoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        out.push(e.path());
    }
    out.sort();
    Ok(out)
}

/// Decodes CIFAR-10 records from an in-memory batch.
pub fn parse_cifar_batch(bytes: &[u8], file: &Path) -> Result<(Vec<Image>, Vec<usize>), PatchIoError> {
    if bytes.len() % CIFAR_RECORD != 0 {
        let offset = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
        return Err(PatchIoError::Malformed {
            path: file.to_path_buf(),
            offset,
            reason: format!(
                "truncated record: {} trailing bytes, expected {CIFAR_RECORD}",
                bytes.len() - offset
            ),
        });
    }
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(images.capacity());
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0] as usize;
        if label >= 10 {
            return Err(PatchIoError::Malformed {
                path: file.to_path_buf(),
                offset: i * CIFAR_RECORD,
                reason: format!("label {label} out of range for 10 classes"),
            });
        }
        let data = rec[1..].iter().map(|&b| b as f32 / 255.0).collect();
        images.push(Image::new(3, CIFAR_SIDE, CIFAR_SIDE, data));
        labels.push(label);
    }
    Ok((images, labels))
}

fn load_cifar(path: &Path) -> Result<Dataset, PatchIoError> {
    let files = if path.is_dir() {
        list_dir(path)?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e == "bin"))
            .collect()
    } else {
        vec![path.to_path_buf()]
    };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in &files {
        let (i, l) = parse_cifar_batch(&read(f)?, f)?;
        images.extend(i);
        labels.extend(l);
    }
    if images.is_empty() {
        return Err(PatchIoError::NoSamples(format!("no CIFAR records under {}", path.display())));
    }
    Dataset::new(images, labels, 10)
}

fn decode_png(path: &Path) -> Result<Image, PatchIoError> {
    let bytes = read(path)?;
    let dynimg = image::load_from_memory(&bytes).map_err(|e| PatchIoError::Malformed {
        path: path.to_path_buf(),
        offset: 0,
        reason: e.to_string(),
    })?;
    let rgb = dynimg.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    Ok(Image::new(3, h, w, data))
}

fn is_png(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn load_image_folder(root: &Path, num_classes: Option<usize>) -> Result<Dataset, PatchIoError> {
    let entries = list_dir(root)?;
    let class_dirs: Vec<&PathBuf> = entries.iter().filter(|p| p.is_dir()).collect();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let n;
    if !class_dirs.is_empty() {
        n = num_classes.unwrap_or(class_dirs.len());
        for (label, dir) in class_dirs.iter().enumerate() {
            for f in list_dir(dir)?.into_iter().filter(|p| is_png(p)) {
                images.push(decode_png(&f)?);
                labels.push(label);
            }
        }
    } else {
        let csv = root.join("labels.csv");
        if !csv.exists() {
            return Err(PatchIoError::NoSamples(format!(
                "{} has no class folders and no labels.csv",
                root.display()
            )));
        }
        let text = String::from_utf8_lossy(&read(&csv)?).into_owned();
        let mut offset = 0;
        for line in text.lines() {
            let line_offset = offset;
            offset += line.len() + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (name, label) = line.split_once(',').ok_or_else(|| PatchIoError::Malformed {
                path: csv.clone(),
                offset: line_offset,
                reason: "expected `file,label`".into(),
            })?;
            let Ok(label) = label.trim().parse::<usize>() else {
                if images.is_empty() && labels.is_empty() {
                    continue; // header
                }
                return Err(PatchIoError::Malformed {
                    path: csv.clone(),
                    offset: line_offset,
                    reason: format!("bad label `{}`", label.trim()),
                });
            };
            images.push(decode_png(&root.join(name.trim()))?);
            labels.push(label);
        }
        n = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    }
    if images.is_empty() {
        return Err(PatchIoError::NoSamples(format!("no PNG samples under {}", root.display())));
    }
    Dataset::new(images, labels, n)
}

/// Procedural datasets for desk-scale runs.
pub mod synthetic {
    use super::*;

    pub const SHAPE_CLASSES: [&str; 10] = [
        "square", "disk", "triangle", "plus", "cross", "ring", "frame", "h-stripes", "v-stripes", "diamond",
    ];

    fn inside(class: usize, dx: f64, dy: f64, s: f64) -> bool {
        let (ax, ay) = (dx.abs(), dy.abs());
        let cheb = ax.max(ay);
        let r = (dx * dx + dy * dy).sqrt();
        match class {
            0 => cheb <= s,
            1 => r <= s,
            2 => dy >= -s && dy <= s && ax <= (dy + s) / 2.0,
            3 => (ax <= s / 3.0 && ay <= s) || (ay <= s / 3.0 && ax <= s),
            4 => (ax - ay).abs() <= s / 3.0 && cheb <= s,
            5 => r <= s && r >= 0.55 * s,
            6 => cheb <= s && cheb >= 0.6 * s,
            7 => cheb <= s && ((dy + s) / (s / 2.5)).floor() as i64 % 2 == 0,
            8 => cheb <= s && ((dx + s) / (s / 2.5)).floor() as i64 % 2 == 0,
            9 => ax + ay <= s,
            _ => unreachable!(),
        }
    }

    fn render(class: usize, side: usize, rng: &mut impl Rng) -> Image {
        let s = rng.random_range(0.26..0.40) * side as f64;
        let margin = s + 1.0;
        let cx = rng.random_range(margin..side as f64 - margin);
        let cy = rng.random_range(margin..side as f64 - margin);
        let fg: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.5..1.0));
        let bg: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.3));
        let mut img = Image::zeros(3, side, side);
        for y in 0..side {
            for x in 0..side {
                let hit = inside(class, x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, s);
                for c in 0..3 {
                    let base = if hit { fg[c] } else { bg[c] };
                    let noise = rng.random_range(-0.05..0.05);
                    *img.at_mut(c, y, x) = (base + noise).clamp(0.0, 1.0);
                }
            }
        }
        img
    }

    /// Ten-class shapes set; labels cycle so every class is balanced.
    pub fn shapes(n: usize, side: usize, seed_value: u64) -> Dataset {
        let mut rng = seed::rng(seed_value, &[seed::stream::DATASET, 10]);
        let mut images = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % 10;
            images.push(render(class, side, &mut rng));
            labels.push(class);
        }
        Dataset::new(images, labels, 10).expect("nonempty synthetic set")
    }

    /// Two classes: a horizontal or a vertical bar.
    pub fn bars(n: usize, side: usize, seed_value: u64) -> Dataset {
        let mut rng = seed::rng(seed_value, &[seed::stream::DATASET, 2]);
        let mut images = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % 2;
            let thick = rng.random_range(side / 6..=side / 4).max(1);
            let at = rng.random_range(0..=side - thick);
            let mut img = Image::zeros(3, side, side);
            for c in 0..3 {
                for y in 0..side {
                    for x in 0..side {
                        let on = if class == 0 { (at..at + thick).contains(&y) } else { (at..at + thick).contains(&x) };
                        *img.at_mut(c, y, x) = if on { 0.9 } else { 0.1 };
                    }
                }
            }
            images.push(img);
            labels.push(class);
        }
        Dataset::new(images, labels, 2).expect("nonempty synthetic set")
    }
}
