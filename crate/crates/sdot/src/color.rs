//! Color transfer between images via semi-discrete transport in RGB space.
//!
//! The target image's colors are subsampled into a palette of distinct
//! atoms with uniform masses; the source image's pixel colors (scaled to
//! `[0,1]^3`) form the source measure. After training heights, every source
//! pixel is replaced by the palette color its cell maps to, leaving the
//! spatial layout untouched. Output colors therefore always belong to the
//! palette exactly.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;

use crate::envelope::assign_cells;
use crate::error::{invalid_input, Error, Result};
use crate::rng::stream_rng;
use crate::solver::{train_height_net, TrainConfig, TrainOutcome};
use crate::source::SourceSpec;
use crate::target::DiscreteTarget;

/// An 8-bit RGB image. Pixels are row-major `r,g,b` bytes; on disk the
/// format is binary PPM (P6, maxval 255), read and written bit-exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid_input("image must be non-empty"));
        }
        if pixels.len() != width * height * 3 {
            return Err(invalid_input(format!(
                "pixel buffer holds {} bytes, expected {}",
                pixels.len(),
                width * height * 3
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Pixel colors scaled to `[0,1]^3`, flat row-major.
    pub fn unit_colors(&self) -> Vec<f64> {
        self.pixels.iter().map(|&b| b as f64 / 255.0).collect()
    }

    pub fn from_ppm_bytes(bytes: &[u8]) -> Result<Self> {
        let mut at = 0;
        let magic = next_token(bytes, &mut at)
            .ok_or_else(|| invalid_input("ppm: missing magic number"))?;
        if magic != b"P6" {
            return Err(invalid_input("ppm: only binary P6 is supported"));
        }
        let width = parse_header_int(bytes, &mut at, "width")?;
        let height = parse_header_int(bytes, &mut at, "height")?;
        let maxval = parse_header_int(bytes, &mut at, "maxval")?;
        if maxval != 255 {
            return Err(invalid_input(format!("ppm: maxval {maxval}, expected 255")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        if at >= bytes.len() || !bytes[at].is_ascii_whitespace() {
            return Err(invalid_input("ppm: malformed header/raster separator"));
        }
        at += 1;
        let need = width * height * 3;
        if bytes.len() < at + need {
            return Err(invalid_input("ppm: truncated pixel data"));
        }
        Image::new(width, height, bytes[at..at + need].to_vec())
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_ppm_bytes(&bytes)
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_ppm_bytes())?;
        Ok(())
    }
}

fn skip_ppm_filler(bytes: &[u8], at: &mut usize) {
    loop {
        while *at < bytes.len() && bytes[*at].is_ascii_whitespace() {
            *at += 1;
        }
        if *at < bytes.len() && bytes[*at] == b'#' {
            while *at < bytes.len() && bytes[*at] != b'\n' {
                *at += 1;
            }
        } else {
            return;
        }
    }
}

fn next_token<'a>(bytes: &'a [u8], at: &mut usize) -> Option<&'a [u8]> {
    skip_ppm_filler(bytes, at);
    let start = *at;
    while *at < bytes.len() && !bytes[*at].is_ascii_whitespace() {
        *at += 1;
    }
    (*at > start).then(|| &bytes[start..*at])
}

fn parse_header_int(bytes: &[u8], at: &mut usize, what: &str) -> Result<usize> {
    let tok = next_token(bytes, at).ok_or_else(|| invalid_input(format!("ppm: missing {what}")))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| invalid_input(format!("ppm: bad {what}")))
}

#[derive(Debug, Clone)]
pub struct ColorTransferOptions {
    /// Palette size: distinct colors subsampled from the target image.
    pub palette_size: usize,
    /// Solver configuration. The learning rate for color runs defaults to
    /// 0.05, much hotter than the synthetic benchmarks.
    pub train: TrainConfig,
    /// Seed for palette subsampling.
    pub palette_seed: u64,
}

impl Default for ColorTransferOptions {
    fn default() -> Self {
        let mut train = TrainConfig::default();
        train.opt.lr = 0.05;
        Self { palette_size: 512, train, palette_seed: 0 }
    }
}

#[derive(Debug)]
pub struct ColorTransferOutcome {
    pub image: Image,
    /// The palette atoms actually used (deduplicated target colors in
    /// `[0,1]^3` with uniform masses).
    pub palette: DiscreteTarget,
    /// Fraction of source pixels mapped to each palette atom.
    pub histogram: Vec<f64>,
    pub train: TrainOutcome,
}

impl ColorTransferOutcome {
    /// L1 distance between the pixel-assignment histogram and the palette
    /// masses; small values mean the transfer preserved the target measure.
    pub fn histogram_l1_to_masses(&self) -> f64 {
        self.histogram
            .iter()
            .zip(self.palette.masses())
            .map(|(p, nu)| (p - nu).abs())
            .sum()
    }
}

/// Subsample up to `k` distinct colors from the image by a seeded uniform
/// pixel draw without replacement.
pub fn sample_palette(image: &Image, k: usize, seed: u64) -> Result<DiscreteTarget> {
    if k == 0 {
        return Err(invalid_input("palette size must be >= 1"));
    }
    let n = image.pixel_count();
    let mut order: Vec<u32> = (0..n as u32).collect();
    let mut rng = stream_rng(seed, 0x9a1e77e);
    let mut atoms = Vec::with_capacity(k * 3);
    let mut seen: HashSet<[u8; 3]> = HashSet::with_capacity(k.min(n));
    let mut picked = 0;
    for i in 0..n {
        // Partial Fisher-Yates: draw the i-th pixel without replacement.
        let j = rng.random_range(i..n);
        order.swap(i, j);
        let p = order[i] as usize * 3;
        let rgb = [image.pixels[p], image.pixels[p + 1], image.pixels[p + 2]];
        if seen.insert(rgb) {
            atoms.extend(rgb.iter().map(|&b| b as f64 / 255.0));
            picked += 1;
            if picked == k {
                break;
            }
        }
    }
    DiscreteTarget::with_uniform_masses(atoms, 3)
}

/// Recolor `source_img` so its color distribution matches the palette drawn
/// from `target_img`. Every output pixel is exactly a palette color.
pub fn color_transfer(
    source_img: &Image,
    target_img: &Image,
    opts: &ColorTransferOptions,
) -> Result<ColorTransferOutcome> {
    let palette = sample_palette(target_img, opts.palette_size, opts.palette_seed)?;
    let source_colors = source_img.unit_colors();
    let source = SourceSpec::explicit(source_colors.clone(), 3)?;
    let train = train_height_net(&palette, &source, &opts.train)?;

    let winners = assign_cells(&source_colors, &palette, &train.heights)?;
    let mut counts = vec![0u64; palette.len()];
    let mut pixels = Vec::with_capacity(source_img.pixels.len());
    // Palette atoms came from u8 values, so rounding recovers them exactly.
    let palette_bytes: Vec<[u8; 3]> = (0..palette.len())
        .map(|i| {
            let a = palette.atom(i);
            [
                (a[0] * 255.0).round() as u8,
                (a[1] * 255.0).round() as u8,
                (a[2] * 255.0).round() as u8,
            ]
        })
        .collect();
    for &w in &winners {
        counts[w] += 1;
        pixels.extend_from_slice(&palette_bytes[w]);
    }
    let total = winners.len() as f64;
    let histogram = counts.iter().map(|&c| c as f64 / total).collect();
    Ok(ColorTransferOutcome {
        image: Image::new(source_img.width, source_img.height, pixels)?,
        palette,
        histogram,
        train,
    })
}
