//! Unit-interval images stored channel-major, plus PNG conversion.

use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

/// A `channels × height × width` image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::param(format!(
                "frame dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::param(format!(
                "frame data has {} values, expected {}",
                data.len(),
                channels * height * width
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.dims() == other.dims()
    }

    /// Luminance with ITU-R BT.601 weights; single-channel frames pass through.
    pub fn luminance(&self) -> Vec<f64> {
        if self.channels < 3 {
            return self.plane(0).iter().map(|&v| v as f64).collect();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        r.iter()
            .zip(g)
            .zip(b)
            .map(|((&r, &g), &b)| 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
            .collect()
    }

    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.data, (self.channels, self.height, self.width), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Stacks equally shaped frames into an `N × C × H × W` tensor.
    pub fn stack(frames: &[&Frame], dtype: DType, device: &Device) -> Result<Tensor> {
        let first = frames
            .first()
            .ok_or_else(|| Error::param("cannot stack an empty frame list"))?;
        let mut data = Vec::with_capacity(frames.len() * first.data.len());
        for f in frames {
            if !f.same_shape(first) {
                return Err(Error::param("cannot stack frames of different shapes"));
            }
            data.extend_from_slice(&f.data);
        }
        let (c, h, w) = first.dims();
        let t = Tensor::from_vec(data, (frames.len(), c, h, w), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Converts a `C × H × W` tensor, or a batch of them, into frames.
    pub fn from_tensor(t: &Tensor) -> Result<Vec<Frame>> {
        let t = t.to_dtype(DType::F32)?;
        let t = match t.rank() {
            3 => t.unsqueeze(0)?,
            4 => t,
            r => return Err(Error::param(format!("expected rank 3 or 4 tensor, got {r}"))),
        };
        let (n, c, h, w) = t.dims4()?;
        let flat = t.flatten_all()?.to_vec1::<f32>()?;
        let per = c * h * w;
        (0..n)
            .map(|i| Frame::new(c, h, w, flat[i * per..(i + 1) * per].to_vec()))
            .collect()
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let mut data = vec![0f32; 3 * h * w];
        for (i, px) in rgb.pixels().enumerate() {
            for c in 0..3 {
                data[c * h * w + i] = px[c] as f32 / 255.0;
            }
        }
        Frame::new(3, h, w, data)
    }

    /// Writes an 8-bit PNG (RGB for three channels, grayscale otherwise).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = (self.height, self.width);
        let quant = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let res = if self.channels >= 3 {
            let mut buf = Vec::with_capacity(3 * h * w);
            for i in 0..h * w {
                for c in 0..3 {
                    buf.push(quant(self.data[c * h * w + i]));
                }
            }
            image::RgbImage::from_raw(w as u32, h as u32, buf)
                .expect("buffer sized from frame dims")
                .save(path)
        } else {
            let buf = self.plane(0).iter().map(|&v| quant(v)).collect();
            image::GrayImage::from_raw(w as u32, h as u32, buf)
                .expect("buffer sized from frame dims")
                .save(path)
        };
        res.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Rounds every value to the nearest 8-bit level, as a PNG round-trip would.
    pub fn quantize_8bit(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }
}
