use crate::{Error, Result};

/// 8-bit RGB image, row-major HWC. Channel values map to reals `v / 255`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

pub const MIN_SIDE: usize = 8;

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::Contract(format!(
                "image {width}x{height} is smaller than {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Contract(format!(
                "image buffer has {} bytes, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).map(quantize));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        f64::from(self.data[(y * self.width + x) * 3 + c]) / 255.0
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        [self.get(x, y, 0), self.get(x, y, 1), self.get(x, y, 2)]
    }

    /// Per-pixel map on real values; the result is re-quantized.
    pub fn map(&self, mut f: impl FnMut(usize, usize, [f64; 3]) -> [f64; 3]) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                data.extend(f(x, y, self.pixel(x, y)).map(quantize));
            }
        }
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integer + 0.5), clamped at the border.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = fx - x0 as f64;
        let ay = fy - y0 as f64;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = self.get(x0, y0, c) * (1.0 - ax) + self.get(x1, y0, c) * ax;
            let bot = self.get(x0, y1, c) * (1.0 - ax) + self.get(x1, y1, c) * ax;
            *o = top * (1.0 - ay) + bot * ay;
        }
        out
    }

    /// Planar CHW floats resized to `size`x`size`, written into `out`.
    pub fn write_chw(&self, size: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), 3 * size * size);
        let plane = size * size;
        if size == self.width && size == self.height {
            for (i, px) in self.data.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    out[c * plane + i] = f64::from(px[c]) / 255.0;
                }
            }
            return;
        }
        let sx = self.width as f64 / size as f64;
        let sy = self.height as f64 / size as f64;
        for y in 0..size {
            for x in 0..size {
                let p = self.sample((x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy);
                for c in 0..3 {
                    out[c * plane + y * size + x] = p[c];
                }
            }
        }
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        let total: u64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| u64::from(a.abs_diff(*b)))
            .sum();
        total as f64 / 255.0 / self.data.len() as f64
    }
}
