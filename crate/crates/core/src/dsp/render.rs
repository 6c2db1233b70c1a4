use super::stft::Spectrogram;
use super::DspError;
use std::path::Path;

/// Row-major `height x width x 3` raster with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub pixels: Vec<f32>,
    pub height: usize,
    pub width: usize,
}

impl ImageTensor {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            pixels: vec![0.0; height * width * 3],
            height,
            width,
        }
    }

    pub fn from_pixels(pixels: Vec<f32>, height: usize, width: usize) -> Result<Self, DspError> {
        if pixels.len() != height * width * 3 {
            return Err(DspError::InvalidImage(format!(
                "{} values for a {height}x{width}x3 image",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DspError::InvalidImage(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { pixels, height, width })
    }

    /// Grayscale image with the scalar replicated into all three channels.
    pub fn from_gray(gray: &[f32], height: usize, width: usize) -> Self {
        debug_assert_eq!(gray.len(), height * width);
        let pixels = gray.iter().flat_map(|&g| [g, g, g]).collect();
        Self { pixels, height, width }
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * 3 + channel
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.pixels[self.index(row, col, channel)]
    }

    pub fn save_png(&self, path: &Path) -> Result<(), DspError> {
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::save_buffer(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| DspError::Image(format!("{}: {e}", path.display())))
    }

    pub fn load_png(path: &Path) -> Result<Self, DspError> {
        let img = image::open(path)
            .map_err(|e| DspError::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let pixels = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        Ok(Self {
            pixels,
            height: h as usize,
            width: w as usize,
        })
    }
}

/// Scalar-to-RGB mapping applied after normalization.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ColormapSpec {
    #[default]
    Grayscale,
    /// 256-entry lookup table.
    Table(Vec<[u8; 3]>),
}

impl ColormapSpec {
    /// Parses a lookup table file: 256 lines of `r g b` integers in 0..=255.
    pub fn parse_table(text: &str) -> Result<Self, DspError> {
        let mut entries = Vec::with_capacity(256);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || DspError::InvalidColormap(format!("line {}: expected 'r g b', got '{line}'", lineno + 1));
            if parts.len() != 3 {
                return Err(bad());
            }
            let mut rgb = [0u8; 3];
            for (slot, p) in rgb.iter_mut().zip(&parts) {
                *slot = p.parse::<u8>().map_err(|_| bad())?;
            }
            entries.push(rgb);
        }
        if entries.len() != 256 {
            return Err(DspError::InvalidColormap(format!(
                "expected 256 entries, found {}",
                entries.len()
            )));
        }
        Ok(ColormapSpec::Table(entries))
    }

    pub fn load(path: &Path) -> Result<Self, DspError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DspError::InvalidColormap(format!("{}: {e}", path.display())))?;
        Self::parse_table(&text)
    }

    pub fn map(&self, v: f32) -> [f32; 3] {
        match self {
            ColormapSpec::Grayscale => [v, v, v],
            ColormapSpec::Table(t) => {
                let i = (v.clamp(0.0, 1.0) * 255.0).round() as usize;
                let c = t[i];
                [c[0] as f32 / 255.0, c[1] as f32 / 255.0, c[2] as f32 / 255.0]
            }
        }
    }
}

/// Bilinear resize of a single-channel grid using pixel-center alignment.
pub fn resize_bilinear(src: &[f64], in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coords = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let rows = coords(out_h, in_h);
    let cols = coords(out_w, in_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let top = src[r0 * in_w + c0] * (1.0 - fc) + src[r0 * in_w + c1] * fc;
            let bottom = src[r1 * in_w + c0] * (1.0 - fc) + src[r1 * in_w + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

/// Normalizes a spectrogram to `[0, 1]`, resizes it to a square image with
/// time along the horizontal axis and low frequencies at the bottom, and
/// applies the colormap.
pub fn render_image(spec: &Spectrogram, out_size: usize, colormap: &ColormapSpec) -> Result<ImageTensor, DspError> {
    let n_frames = spec.n_frames();
    let n_bins = spec.n_bins();
    if n_frames == 0 || n_bins == 0 {
        return Err(DspError::EmptySpectrogram);
    }
    if out_size < 16 {
        return Err(DspError::InvalidConfig(format!("output size {out_size} below 16")));
    }
    let (lo, hi) = spec
        .values
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    // Grid with row 0 = highest bin.
    let mut grid = Vec::with_capacity(n_frames * n_bins);
    for row in 0..n_bins {
        let bin = n_bins - 1 - row;
        for frame in &spec.values {
            let v = if range > 0.0 { (frame[bin] - lo) / range } else { 0.0 };
            grid.push(v);
        }
    }
    let resized = resize_bilinear(&grid, n_bins, n_frames, out_size, out_size);
    let mut pixels = Vec::with_capacity(out_size * out_size * 3);
    for v in resized {
        pixels.extend_from_slice(&colormap.map(v.clamp(0.0, 1.0) as f32));
    }
    Ok(ImageTensor {
        pixels,
        height: out_size,
        width: out_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_from(values: Vec<Vec<f64>>) -> Spectrogram {
        Spectrogram {
            values,
            bin_hz: 1.0,
            frame_s: 1.0,
            db_floor: -80.0,
        }
    }

    #[test]
    fn constant_spectrogram_renders_black() {
        let s = spec_from(vec![vec![-20.0; 10]; 12]);
        let img = render_image(&s, 16, &ColormapSpec::Grayscale).unwrap();
        assert!(img.pixels.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn identity_resize_preserves_values() {
        let src: Vec<f64> = (0..20 * 20).map(|i| ((i * 7919) % 101) as f64 / 100.0).collect();
        let out = resize_bilinear(&src, 20, 20, 20, 20);
        for (a, b) in src.iter().zip(&out) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_render_preserves_normalized_values() {
        // 16 frames x 16 bins, values already spanning [0, 1].
        let values: Vec<Vec<f64>> = (0..16)
            .map(|f| (0..16).map(|b| ((f * 16 + b) as f64) / 255.0).collect())
            .collect();
        let img = render_image(&spec_from(values.clone()), 16, &ColormapSpec::Grayscale).unwrap();
        for row in 0..16 {
            for (col, frame) in values.iter().enumerate() {
                let expected = frame[15 - row] as f32;
                for ch in 0..3 {
                    assert!((img.get(row, col, ch) - expected).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn two_by_two_upsampled() {
        let out = resize_bilinear(&[0.0, 1.0, 0.0, 1.0], 2, 2, 4, 4);
        for row in out.chunks(4) {
            assert_eq!(row, &[0.0, 0.25, 0.75, 1.0]);
        }
    }

    #[test]
    fn low_frequencies_at_bottom() {
        // Energy only in bin 0.
        let values = vec![vec![0.0, -80.0, -80.0, -80.0]; 20];
        let img = render_image(&spec_from(values), 16, &ColormapSpec::Grayscale).unwrap();
        assert!(img.get(15, 5, 0) > 0.9);
        assert!(img.get(0, 5, 0) < 0.1);
    }

    #[test]
    fn empty_and_small_rejected() {
        assert!(matches!(
            render_image(&spec_from(vec![]), 16, &ColormapSpec::Grayscale),
            Err(DspError::EmptySpectrogram)
        ));
        assert!(render_image(&spec_from(vec![vec![0.0]]), 8, &ColormapSpec::Grayscale).is_err());
    }

    #[test]
    fn colormap_table_parsing() {
        let text: String = (0..256).map(|i| format!("{} {} {}\n", i, 255 - i, 0)).collect();
        let cm = ColormapSpec::parse_table(&text).unwrap();
        assert_eq!(cm.map(1.0), [1.0, 0.0, 0.0]);
        assert_eq!(cm.map(0.0), [0.0, 1.0, 0.0]);
        assert!(ColormapSpec::parse_table("1 2 3\n").is_err());
        assert!(ColormapSpec::parse_table(&text.replace("0 255 0", "0 256 0")).is_err());
    }

    #[test]
    fn png_roundtrip_quantizes_to_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let gray: Vec<f32> = (0..16 * 16).map(|i| (i % 256) as f32 / 255.0).collect();
        let img = ImageTensor::from_gray(&gray, 16, 16);
        img.save_png(&path).unwrap();
        let back = ImageTensor::load_png(&path).unwrap();
        assert_eq!(back.height, 16);
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
