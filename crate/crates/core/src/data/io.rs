//! Directory layout:
//!
//! ```text
//! <dir>/manifest.txt   domain=<d>, then one "<id> <item-domain>" per line
//! <dir>/meta.txt       class names, one per line
//! <dir>/images/<id>.png
//! <dir>/labels/<id>.txt   "class_id cx cy w h [confidence]" per box
//! ```

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{BoundingBox, Dataset, Domain, Image, LabeledImage};
use crate::{Error, Result};

/// One label record. Floats use the shortest round-trip representation.
pub fn format_record(b: &BoundingBox) -> String {
    match b.confidence {
        Some(c) => format!("{} {} {} {} {} {}", b.class_id, b.cx, b.cy, b.w, b.h, c),
        None => format!("{} {} {} {} {}", b.class_id, b.cx, b.cy, b.w, b.h),
    }
}

/// Parses label records. With `require_confidence` only 6-field records are
/// accepted; otherwise 5 or 6.
pub fn parse_label_text(text: &str, path: &Path, require_confidence: bool) -> Result<Vec<BoundingBox>> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        match (fields.len(), require_confidence) {
            (6, _) | (5, false) => {}
            (n, true) => return Err(perr(format!("expected 6 fields with confidence, found {n}"))),
            (n, false) => return Err(perr(format!("expected 5 or 6 fields, found {n}"))),
        }
        let class_id = fields[0]
            .parse::<usize>()
            .map_err(|_| perr(format!("bad class id '{}'", fields[0])))?;
        let mut nums = [0.0; 5];
        for (slot, tok) in nums.iter_mut().zip(&fields[1..]) {
            *slot = tok.parse::<f64>().map_err(|_| perr(format!("bad number '{tok}'")))?;
        }
        let mut b = BoundingBox::new(class_id, nums[0], nums[1], nums[2], nums[3]);
        if fields.len() == 6 {
            b.confidence = Some(nums[4]);
        }
        b.validate().map_err(|e| perr(e.to_string()))?;
        boxes.push(b);
    }
    Ok(boxes)
}

pub(crate) fn write_labels(path: &Path, boxes: &[BoundingBox]) -> Result<()> {
    let mut text = String::new();
    for b in boxes {
        text.push_str(&format_record(b));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let ierr = |e: png::EncodingError| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(ierr)?;
    writer.write_image_data(img.as_raw()).map_err(ierr)?;
    writer.finish().map_err(ierr)
}

pub fn read_png(path: &Path) -> Result<Image> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let ierr = |m: String| Error::Image {
        path: path.to_path_buf(),
        message: m,
    };
    let mut reader = png::Decoder::new(BufReader::new(file))
        .read_info()
        .map_err(|e| ierr(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ierr("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| ierr(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(ierr(format!("expected 8-bit RGB, got {:?}/{:?}", info.color_type, info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    Image::new(info.width as usize, info.height as usize, buf)
        .map_err(|e| ierr(e.to_string()))
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let images = dir.join("images");
    let labels = dir.join("labels");
    for d in [dir, &images, &labels] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut manifest = format!("domain={}\n", ds.domain);
    for item in &ds.items {
        manifest.push_str(&format!("{} {}\n", item.id, item.domain));
        write_png(&images.join(format!("{}.png", item.id)), &item.image)?;
        write_labels(&labels.join(format!("{}.txt", item.id)), &item.boxes)?;
    }
    let meta: String = ds.class_names.iter().map(|n| format!("{n}\n")).collect();
    let mpath = dir.join("meta.txt");
    fs::write(&mpath, meta).map_err(|e| Error::io(&mpath, e))?;
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Target-domain items without a label file load as unlabeled; a missing
/// label file for a source item is an error.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join("manifest.txt");
    let manifest = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut lines = manifest.lines().enumerate();
    let perr = |line: usize, message: String| Error::Parse {
        path: mpath.clone(),
        line,
        message,
    };
    let domain: Domain = match lines.next() {
        Some((_, l)) => l
            .strip_prefix("domain=")
            .ok_or_else(|| perr(1, "expected 'domain=<d>'".into()))?
            .parse()
            .map_err(|e: Error| perr(1, e.to_string()))?,
        None => return Err(perr(1, "empty manifest".into())),
    };
    let meta_path = dir.join("meta.txt");
    let class_names: Vec<String> = fs::read_to_string(&meta_path)
        .map_err(|e| Error::io(&meta_path, e))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();

    let mut items = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (id, item_domain) = line
            .split_once(' ')
            .ok_or_else(|| perr(i + 1, format!("expected '<id> <domain>', got '{line}'")))?;
        let item_domain: Domain = item_domain.parse().map_err(|e: Error| perr(i + 1, e.to_string()))?;
        let image = read_png(&dir.join("images").join(format!("{id}.png")))?;
        let lpath = dir.join("labels").join(format!("{id}.txt"));
        let boxes = match fs::read_to_string(&lpath) {
            Ok(text) => parse_label_text(&text, &lpath, false)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && item_domain == Domain::Target => Vec::new(),
            Err(e) => return Err(Error::io(&lpath, e)),
        };
        items.push(LabeledImage {
            id: id.to_string(),
            image,
            boxes,
            domain: item_domain,
        });
    }
    Dataset::new(items, domain, class_names)
}
