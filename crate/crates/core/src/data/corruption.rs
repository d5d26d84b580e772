use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{Dataset, Domain, Image, LabeledImage, SeverityTable};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    DefocusBlur,
    Contrast,
    Brightness,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 5] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::DefocusBlur,
        CorruptionKind::Contrast,
        CorruptionKind::Brightness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::DefocusBlur => "defocus_blur",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Brightness => "brightness",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown corruption kind '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::Config(format!("severity {severity} outside 1..=5")));
        }
        Ok(Self { kind, severity })
    }

    pub fn severity(&self) -> u8 {
        self.severity
    }

    /// Every kind at all five severities.
    pub fn full_suite(kinds: &[CorruptionKind]) -> Vec<CorruptionSpec> {
        kinds
            .iter()
            .flat_map(|&kind| (1..=5).map(move |severity| CorruptionSpec { kind, severity }))
            .collect()
    }
}

impl fmt::Display for CorruptionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.severity)
    }
}

impl FromStr for CorruptionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, sev) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("expected kind:severity, got '{s}'")))?;
        let severity = sev
            .trim()
            .parse::<u8>()
            .map_err(|_| Error::Config(format!("bad severity in '{s}'")))?;
        CorruptionSpec::new(kind.trim().parse()?, severity)
    }
}

/// Parses a suite file: one `kind:severity` per line (or whitespace
/// separated), `#` comments. `kind:1-5` expands to a severity range.
pub fn parse_suite(text: &str, path: &Path) -> Result<Vec<CorruptionSpec>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split_whitespace() {
            let perr = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message,
            };
            match tok.split_once(':') {
                Some((kind, range)) if range.contains('-') => {
                    let (a, b) = range.split_once('-').unwrap_or_default();
                    let (a, b) = a
                        .parse::<u8>()
                        .ok()
                        .zip(b.parse::<u8>().ok())
                        .ok_or_else(|| perr(format!("bad severity range '{tok}'")))?;
                    let kind: CorruptionKind = kind.parse().map_err(|e: Error| perr(e.to_string()))?;
                    for s in a..=b {
                        out.push(CorruptionSpec::new(kind, s).map_err(|e| perr(e.to_string()))?);
                    }
                }
                _ => out.push(tok.parse().map_err(|e: Error| perr(e.to_string()))?),
            }
        }
    }
    Ok(out)
}

pub fn apply_corruption(img: &LabeledImage, spec: CorruptionSpec, rng_seed: u64) -> LabeledImage {
    apply_corruption_with(img, spec, &SeverityTable::default(), rng_seed)
}

/// Photometric transform of the pixels; boxes are copied untouched and the
/// result is tagged as target domain.
pub fn apply_corruption_with(
    img: &LabeledImage,
    spec: CorruptionSpec,
    table: &SeverityTable,
    rng_seed: u64,
) -> LabeledImage {
    let s = usize::from(spec.severity - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let image = match spec.kind {
        CorruptionKind::GaussianNoise => gaussian_noise(&img.image, table.gaussian_sigma[s], &mut rng),
        CorruptionKind::ShotNoise => shot_noise(&img.image, table.shot_photons[s], &mut rng),
        CorruptionKind::DefocusBlur => defocus_blur(&img.image, table.defocus_radius[s]),
        CorruptionKind::Contrast => contrast(&img.image, table.contrast_factor[s]),
        CorruptionKind::Brightness => brightness(&img.image, table.brightness_shift[s]),
    };
    LabeledImage {
        id: img.id.clone(),
        image,
        boxes: img.boxes.clone(),
        domain: Domain::Target,
    }
}

/// Corrupts every image at one severity, cycling through `kinds` by index.
pub fn corrupt_dataset(ds: &Dataset, kinds: &[CorruptionKind], severity: u8, rng_seed: u64) -> Result<Dataset> {
    corrupt_dataset_with(ds, kinds, severity, &SeverityTable::default(), rng_seed)
}

/// [`corrupt_dataset`] with an explicit strength table.
pub fn corrupt_dataset_with(
    ds: &Dataset,
    kinds: &[CorruptionKind],
    severity: u8,
    table: &SeverityTable,
    rng_seed: u64,
) -> Result<Dataset> {
    if kinds.is_empty() {
        return Err(Error::Config("no corruption kinds given".into()));
    }
    let items = ds
        .items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let spec = CorruptionSpec::new(kinds[i % kinds.len()], severity)?;
            Ok(apply_corruption_with(item, spec, table, crate::seed::splitmix64(rng_seed ^ i as u64)))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(items, Domain::Target, ds.class_names.clone())
}

pub fn gaussian_noise(img: &Image, sigma: f64, rng: &mut ChaCha8Rng) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    img.map(|_, _, p| p.map(|v| v + sigma * normal.sample(rng)))
}

pub fn shot_noise(img: &Image, photons: f64, rng: &mut ChaCha8Rng) -> Image {
    if !photons.is_finite() {
        return img.clone();
    }
    img.map(|_, _, p| {
        p.map(|v| {
            let lambda = v * photons;
            if lambda <= 0.0 {
                0.0
            } else {
                let k: f64 = Poisson::new(lambda).expect("positive rate").sample(rng);
                k / photons
            }
        })
    })
}

/// Uniform disk kernel of the given radius, edge-clamped.
pub fn defocus_blur(img: &Image, radius: f64) -> Image {
    if radius <= 0.0 {
        return img.clone();
    }
    let r = radius.ceil() as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| ((dx * dx + dy * dy) as f64) <= radius * radius)
        .collect();
    let w = img.width() as i64;
    let h = img.height() as i64;
    let norm = 1.0 / offsets.len() as f64;
    img.map(|x, y, _| {
        let mut acc = [0.0; 3];
        for &(dx, dy) in &offsets {
            let sx = (x as i64 + dx).clamp(0, w - 1) as usize;
            let sy = (y as i64 + dy).clamp(0, h - 1) as usize;
            let p = img.pixel(sx, sy);
            for c in 0..3 {
                acc[c] += p[c];
            }
        }
        acc.map(|v| v * norm)
    })
}

/// `(x - mean_c) * factor + mean_c` with per-channel means.
pub fn contrast(img: &Image, factor: f64) -> Image {
    let n = (img.width() * img.height()) as f64;
    let mut mean = [0.0; 3];
    for px in img.as_raw().chunks_exact(3) {
        for c in 0..3 {
            mean[c] += f64::from(px[c]) / 255.0;
        }
    }
    let mean = mean.map(|m| m / n);
    img.map(|_, _, p| [0, 1, 2].map(|c| (p[c] - mean[c]) * factor + mean[c]))
}

/// Adds `shift` to the HSV value channel, keeping hue and saturation.
pub fn brightness(img: &Image, shift: f64) -> Image {
    if shift == 0.0 {
        return img.clone();
    }
    img.map(|_, _, p| {
        let v = p[0].max(p[1]).max(p[2]);
        if v <= 0.0 {
            let g = shift.clamp(0.0, 1.0);
            return [g; 3];
        }
        let nv = (v + shift).clamp(0.0, 1.0);
        p.map(|c| c * nv / v)
    })
}
