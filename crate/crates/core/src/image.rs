//! RGB float images and their 8-bit PNG / ASCII PPM encodings.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image with channel values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        RgbImage { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for v in 0..height {
            for u in 0..width {
                data.extend_from_slice(&f(u, v));
            }
        }
        RgbImage { width, height, data }
    }

    pub fn get(&self, u: usize, v: usize) -> [f64; 3] {
        let i = 3 * (v * self.width + u);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, u: usize, v: usize, rgb: [f64; 3]) {
        let i = 3 * (v * self.width + u);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Rec. 601 luma per pixel.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    /// The image as it reads back from an 8-bit file.
    pub fn quantized(&self) -> RgbImage {
        RgbImage {
            data: self.data.iter().map(|&x| to_u8(x) as f64 / 255.0).collect(),
            ..*self
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&x| to_u8(x)).collect()
    }

    /// Writes PNG unless the extension is `.ppm`, which writes ASCII P3.
    pub fn save(&self, path: &Path) -> Result<()> {
        if has_ext(path, "ppm") {
            self.save_ppm(path)
        } else {
            self.save_png(path)
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::format(path, e.to_string()))?;
        writer
            .write_image_data(&self.to_bytes())
            .map_err(|e| Error::format(path, e.to_string()))?;
        writer.finish().map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        let mut s = format!("P3\n{} {}\n255\n", self.width, self.height);
        for row in self.to_bytes().chunks(3 * self.width.max(1)) {
            let line: Vec<String> = row.iter().map(u8::to_string).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    /// Loads 8-bit PNG (gray, RGB or RGBA) or ASCII PPM, sniffing the
    /// content rather than trusting the extension.
    pub fn load(path: &Path) -> Result<RgbImage> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(b"P3") {
            parse_ppm(&bytes, path)
        } else {
            decode_png(&bytes, path)
        }
    }
}

fn has_ext(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let err = |e: png::DecodingError| Error::format(path, format!("png: {e}"));
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "png: image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::format(path, "png: unexpanded palette")),
    };
    let mut data = Vec::with_capacity(w * h * 3);
    for px in buf[..w * h * channels].chunks_exact(channels) {
        let rgb = if channels < 3 { [px[0]; 3] } else { [px[0], px[1], px[2]] };
        data.extend(rgb.iter().map(|&b| b as f64 / 255.0));
    }
    Ok(RgbImage { width: w, height: h, data })
}

fn parse_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::format(path, "ppm: not ASCII"))?;
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    let mut next_num = |what: &str| -> Result<usize> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::format(path, format!("ppm: bad {what}")))
    };
    // magic already checked by the caller
    let _ = next_num("magic").ok();
    let w = next_num("width")?;
    let h = next_num("height")?;
    let maxval = next_num("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(path, "ppm: bad maxval"));
    }
    let mut data = Vec::with_capacity(w * h * 3);
    for _ in 0..w * h * 3 {
        let x = next_num("sample")?;
        if x > maxval {
            return Err(Error::format(path, "ppm: sample exceeds maxval"));
        }
        data.push(x as f64 / maxval as f64);
    }
    Ok(RgbImage { width: w, height: h, data })
}
