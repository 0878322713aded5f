//! Hyperspectral cube and mask I/O, normalization, pixel linearization, and
//! dual-window context extraction.
//!
//! # Container format
//!
//! A cube is stored as two files: `<name>.json`, a header
//! `{"height":H,"width":W,"bands":C,"dtype":"f32le","interleave":"bsq"}`,
//! and `<name>.raw`, the payload of `H*W*C` little-endian `f32` values in
//! band-sequential order (all of band 0 row-major, then band 1, ...).
//! Ground-truth masks are either binary PGM (`P5`, maxval 255, nonzero =
//! anomaly) or a 1-band cube container.
//!
//! Pixels are linearized row-major: pixel `n` lives at image coordinates
//! `(n / W, n % W)`. Every stage of the pipeline relies on this one mapping.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A hyperspectral image: `bands` spectral planes of `height x width`
/// pixels, stored band-sequential (`values[b*H*W + r*W + c]`).
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<f64>,
}

impl HsiCube {
    /// Wraps values in band-sequential layout.
    pub fn new(height: usize, width: usize, bands: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::InvalidArgument(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        if values.len() != height * width * bands {
            return Err(Error::ShapeMismatch(format!(
                "cube expects {} values ({height}x{width}x{bands}), got {}",
                height * width * bands,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cube values".into()));
        }
        Ok(HsiCube { height, width, bands, values })
    }

    /// Image height in pixels.
    pub fn height(&self) -> usize {
        self.height
    }

    /// Image width in pixels.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of spectral bands.
    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Number of pixels (`H*W`).
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    /// All values in band-sequential order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Consumes the cube, returning its values in band-sequential order.
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value of band `b` at pixel `(r, c)`.
    pub fn at(&self, b: usize, r: usize, c: usize) -> f64 {
        self.values[b * self.height * self.width + r * self.width + c]
    }

    /// Spectrum of the pixel with linear index `n` (row-major), gathered
    /// across bands.
    pub fn spectrum(&self, n: usize) -> Vec<f64> {
        let plane = self.height * self.width;
        (0..self.bands).map(|b| self.values[b * plane + n]).collect()
    }
}

/// Pixels flattened to spectra: `count` rows of dimension `dim`, row `n`
/// being the spectrum of pixel `(n / W, n % W)` of the source cube.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectraMatrix {
    count: usize,
    dim: usize,
    values: Vec<f64>,
}

impl SpectraMatrix {
    /// Wraps row-major spectra.
    pub fn new(count: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != count * dim {
            return Err(Error::ShapeMismatch(format!(
                "spectra matrix expects {} values ({count} x {dim}), got {}",
                count * dim,
                values.len()
            )));
        }
        Ok(SpectraMatrix { count, dim, values })
    }

    /// Number of spectra.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Spectrum dimension (bands).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row `n` as a slice.
    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.dim..(n + 1) * self.dim]
    }
}

/// Binary ground truth: 1 marks an anomalous pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl GroundTruthMask {
    /// Wraps per-pixel labels (any nonzero input becomes 1).
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "mask expects {} labels ({height} x {width}), got {}",
                height * width,
                labels.len()
            )));
        }
        let labels = labels.into_iter().map(|v| u8::from(v != 0)).collect();
        Ok(GroundTruthMask { height, width, labels })
    }

    /// Mask height in pixels.
    pub fn height(&self) -> usize {
        self.height
    }

    /// Mask width in pixels.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Per-pixel labels in row-major order, each 0 or 1.
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Number of anomalous pixels.
    pub fn anomaly_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Number of background pixels.
    pub fn background_count(&self) -> usize {
        self.labels.len() - self.anomaly_count()
    }
}

/// A dual spatial window: the annulus between the `outer` and `inner`
/// squares supplies a pixel's spatial context; the inner square (which
/// contains the pixel itself) is excluded so anomalous centers do not
/// contaminate their own context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DualWindow {
    inner: usize,
    outer: usize,
}

impl DualWindow {
    /// Validates window sizes: both odd, `1 <= inner < outer`.
    pub fn new(inner: usize, outer: usize) -> Result<Self> {
        if inner % 2 == 0 || outer % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "window sizes must be odd, got ({inner}, {outer})"
            )));
        }
        if inner == 0 || inner >= outer {
            return Err(Error::InvalidArgument(format!(
                "windows must satisfy 1 <= inner < outer, got ({inner}, {outer})"
            )));
        }
        Ok(DualWindow { inner, outer })
    }

    /// Inner window side length.
    pub fn inner(&self) -> usize {
        self.inner
    }

    /// Outer window side length.
    pub fn outer(&self) -> usize {
        self.outer
    }

    /// Number of context pixels: `outer^2 - inner^2`.
    pub fn context_count(&self) -> usize {
        self.outer * self.outer - self.inner * self.inner
    }
}

/// The context spectra of one pixel: `count` spectra of dimension `dim` in
/// row-major scan order of the outer window (inner window skipped).
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSet {
    count: usize,
    dim: usize,
    values: Vec<f64>,
}

impl ContextSet {
    /// Wraps flat context spectra.
    pub fn new(count: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != count * dim {
            return Err(Error::ShapeMismatch(format!(
                "context set expects {} values ({count} x {dim}), got {}",
                count * dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("context spectra".into()));
        }
        Ok(ContextSet { count, dim, values })
    }

    /// Number of context spectra.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Spectrum dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Context spectrum `i` as a slice.
    pub fn spectrum(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CubeHeader {
    height: usize,
    width: usize,
    bands: usize,
    dtype: String,
    interleave: String,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads a cube from its JSON header and raw f32 BSQ payload.
pub fn load_cube(header_path: &Path, raw_path: &Path) -> Result<HsiCube> {
    let header_bytes = read_file(header_path)?;
    let header: CubeHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::format(header_path, format!("bad header JSON: {e}")))?;
    if header.dtype != "f32le" {
        return Err(Error::format(header_path, format!("unsupported dtype {:?}", header.dtype)));
    }
    if header.interleave != "bsq" {
        return Err(Error::format(
            header_path,
            format!("unsupported interleave {:?}", header.interleave),
        ));
    }
    if header.height == 0 || header.width == 0 || header.bands == 0 {
        return Err(Error::format(header_path, "dimensions must be positive".to_string()));
    }
    let raw = read_file(raw_path)?;
    let expect = header.height * header.width * header.bands * 4;
    if raw.len() != expect {
        return Err(Error::format(
            raw_path,
            format!(
                "payload length {} does not match header {}x{}x{} ({expect} bytes)",
                raw.len(),
                header.height,
                header.width,
                header.bands
            ),
        ));
    }
    let mut values = Vec::with_capacity(raw.len() / 4);
    for chunk in raw.chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
        if !v.is_finite() {
            return Err(Error::format(raw_path, "payload contains non-finite values".to_string()));
        }
        values.push(v);
    }
    HsiCube::new(header.height, header.width, header.bands, values)
}

/// Saves a cube as a JSON header plus raw f32 little-endian BSQ payload.
///
/// Values are rounded to f32; a cube whose values are f32-representable
/// (anything produced by [`load_cube`]) round-trips bit-exactly.
pub fn save_cube(cube: &HsiCube, header_path: &Path, raw_path: &Path) -> Result<()> {
    let header = CubeHeader {
        height: cube.height(),
        width: cube.width(),
        bands: cube.bands(),
        dtype: "f32le".into(),
        interleave: "bsq".into(),
    };
    let json = serde_json::to_string_pretty(&header).expect("header serialization is infallible");
    fs::write(header_path, json).map_err(|e| Error::io(header_path, e))?;
    let mut raw = Vec::with_capacity(cube.values().len() * 4);
    for &v in cube.values() {
        raw.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(raw_path, raw).map_err(|e| Error::io(raw_path, e))
}

/// Affinely maps the whole cube so its global minimum becomes 0 and global
/// maximum becomes 1. One scale for all bands, preserving relative band
/// shape (per-band scaling would distort spectral angles).
pub fn normalize_cube(cube: &HsiCube) -> Result<HsiCube> {
    let min = cube.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let max = cube.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return Err(Error::DegenerateInput(format!(
            "cube is constant (min == max == {min}); cannot normalize"
        )));
    }
    // Divide by the range (rather than multiplying by a reciprocal) so the
    // extremes land exactly on 0 and 1.
    let range = max - min;
    let values = cube.values().iter().map(|v| (v - min) / range).collect();
    HsiCube::new(cube.height(), cube.width(), cube.bands(), values)
}

/// Reshapes a cube into its `N x C` spectra matrix (row-major pixel order).
pub fn flatten(cube: &HsiCube) -> SpectraMatrix {
    let n = cube.pixel_count();
    let c = cube.bands();
    let plane = n;
    let mut values = vec![0.0; n * c];
    for (b, band) in cube.values().chunks_exact(plane).enumerate() {
        for (p, &v) in band.iter().enumerate() {
            values[p * c + b] = v;
        }
    }
    SpectraMatrix { count: n, dim: c, values }
}

/// Inverse of [`flatten`]: rebuilds the BSQ cube from spectra rows.
pub fn unflatten(spectra: &SpectraMatrix, height: usize, width: usize) -> Result<HsiCube> {
    if spectra.count() != height * width {
        return Err(Error::ShapeMismatch(format!(
            "{} spectra cannot fill a {height}x{width} image",
            spectra.count()
        )));
    }
    let c = spectra.dim();
    let plane = height * width;
    let mut values = vec![0.0; plane * c];
    for p in 0..plane {
        let row = spectra.row(p);
        for b in 0..c {
            values[b * plane + p] = row[b];
        }
    }
    HsiCube::new(height, width, c, values)
}

/// Extracts the dual-window context of pixel `pixel_index`: the spectra of
/// the annulus between the outer and inner windows, scanned row-major, with
/// out-of-image coordinates clamped to the nearest valid pixel (replicate
/// padding) so the count is the same at borders.
pub fn extract_context(
    cube: &HsiCube,
    pixel_index: usize,
    window: DualWindow,
) -> Result<ContextSet> {
    if pixel_index >= cube.pixel_count() {
        return Err(Error::InvalidArgument(format!(
            "pixel index {pixel_index} out of range for {} pixels",
            cube.pixel_count()
        )));
    }
    let (h, w, c) = (cube.height() as isize, cube.width() as isize, cube.bands());
    let r0 = (pixel_index / cube.width()) as isize;
    let c0 = (pixel_index % cube.width()) as isize;
    let outer_half = (window.outer() / 2) as isize;
    let inner_half = (window.inner() / 2) as isize;
    let plane = cube.pixel_count();
    let mut values = Vec::with_capacity(window.context_count() * c);
    for dr in -outer_half..=outer_half {
        for dc in -outer_half..=outer_half {
            if dr.abs() <= inner_half && dc.abs() <= inner_half {
                continue;
            }
            let r = (r0 + dr).clamp(0, h - 1) as usize;
            let col = (c0 + dc).clamp(0, w - 1) as usize;
            let n = r * cube.width() + col;
            for b in 0..c {
                values.push(cube.values()[b * plane + n]);
            }
        }
    }
    ContextSet::new(window.context_count(), c, values)
}

/// Loads a ground-truth mask from either a binary PGM (`P5`, maxval 255) or
/// a 1-band cube container (pass the JSON header path; the payload is looked
/// up at the same path with extension `raw`). Nonzero means anomaly.
pub fn load_mask(path: &Path) -> Result<GroundTruthMask> {
    let bytes = read_file(path)?;
    if bytes.starts_with(b"P5") {
        return parse_pgm_mask(path, &bytes);
    }
    if bytes.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'{') {
        let cube = load_cube(path, &path.with_extension("raw"))?;
        if cube.bands() != 1 {
            return Err(Error::format(
                path,
                format!("mask container must have 1 band, got {}", cube.bands()),
            ));
        }
        let labels = cube.values().iter().map(|&v| u8::from(v != 0.0)).collect();
        return GroundTruthMask::new(cube.height(), cube.width(), labels);
    }
    Err(Error::format(path, "not a P5 PGM or JSON cube header".to_string()))
}

/// Saves a mask as a binary PGM (`P5`, maxval 255): anomalies become 255.
pub fn save_mask(mask: &GroundTruthMask, path: &Path) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    bytes.extend(mask.labels().iter().map(|&l| if l == 1 { 255u8 } else { 0u8 }));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_pgm_mask(path: &Path, bytes: &[u8]) -> Result<GroundTruthMask> {
    let mut pos = 2; // past the "P5" magic
    let mut fields = [0usize; 3]; // width, height, maxval
    for field in fields.iter_mut() {
        // Skip whitespace and '#' comment lines between header tokens.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_digit() => break,
                _ => return Err(Error::format(path, "truncated PGM header".to_string())),
            }
        }
        let mut value = 0usize;
        while let Some(b) = bytes.get(pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value * 10 + (b - b'0') as usize;
            pos += 1;
        }
        *field = value;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(path, format!("PGM maxval must be 255, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(path, "PGM dimensions must be positive".to_string()));
    }
    // Single whitespace byte separates the header from the payload.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(path, "missing PGM header terminator".to_string())),
    }
    let payload = &bytes[pos..];
    if payload.len() != width * height {
        return Err(Error::format(
            path,
            format!("PGM payload has {} bytes, expected {}", payload.len(), width * height),
        ));
    }
    let labels = payload.iter().map(|&b| u8::from(b != 0)).collect();
    GroundTruthMask::new(height, width, labels)
}
