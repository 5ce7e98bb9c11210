//! Procedural cratered heightfield generation, grayscale export, and the
//! sagittal terrain profile sampled by the planar simulation.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TerrainError {
    #[error("invalid terrain spec: {0}")]
    InvalidSpec(String),
    #[error("slice coordinate y = {y} outside terrain extent {extent}")]
    SliceOutOfExtent { y: f64, extent: f64 },
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One radially symmetric crater: a cosine-squared bowl of the given depth
/// plus an optional raised rim band outside the bowl radius.
#[derive(Debug, Clone, PartialEq)]
pub struct Crater {
    pub center: Vector2<f64>,
    pub radius: f64,
    pub depth: f64,
    pub rim_height: f64,
}

/// Width of the rim band as a fraction of the crater radius.
const RIM_BAND: f64 = 0.3;

impl Crater {
    /// Elevation contribution at distance `r` from the crater center.
    pub fn profile(&self, r: f64) -> f64 {
        if r < self.radius {
            let c = (std::f64::consts::FRAC_PI_2 * r / self.radius).cos();
            -self.depth * c * c
        } else if r < self.radius * (1.0 + RIM_BAND) {
            let s = (std::f64::consts::PI * (r - self.radius) / (RIM_BAND * self.radius)).sin();
            self.rim_height * s * s
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainSpec {
    /// Pixels per side of the square grid.
    pub grid_size: usize,
    /// Meters per side; the field spans `[-extent/2, extent/2]` in x and y.
    pub extent: f64,
    pub craters: Vec<Crater>,
    pub base_noise_amplitude: f64,
    pub rng_seed: u64,
}

impl Default for TerrainSpec {
    fn default() -> Self {
        // Crater dimensions and noise level sized so the default episode
        // crosses one crater rim within its seven hops.
        TerrainSpec {
            grid_size: 128,
            extent: 24.0,
            craters: vec![
                Crater {
                    center: Vector2::new(3.0, 0.0),
                    radius: 1.2,
                    depth: 0.12,
                    rim_height: 0.03,
                },
                Crater {
                    center: Vector2::new(-5.0, 4.0),
                    radius: 2.0,
                    depth: 0.4,
                    rim_height: 0.08,
                },
            ],
            base_noise_amplitude: 0.02,
            rng_seed: 42,
        }
    }
}

impl TerrainSpec {
    pub fn validate(&self) -> Result<(), TerrainError> {
        if self.grid_size < 2 {
            return Err(TerrainError::InvalidSpec(format!(
                "grid_size must be >= 2, got {}",
                self.grid_size
            )));
        }
        if !(self.extent > 0.0) {
            return Err(TerrainError::InvalidSpec(format!(
                "extent must be positive, got {}",
                self.extent
            )));
        }
        for (i, c) in self.craters.iter().enumerate() {
            if !(c.radius > 0.0) {
                return Err(TerrainError::InvalidSpec(format!(
                    "crater {i}: radius must be positive, got {}",
                    c.radius
                )));
            }
            if c.depth < 0.0 {
                return Err(TerrainError::InvalidSpec(format!(
                    "crater {i}: depth must be non-negative, got {}",
                    c.depth
                )));
            }
        }
        Ok(())
    }
}

/// Square elevation grid in meters, row-major with row 0 at `y = -extent/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heightfield {
    pub grid: Vec<f64>,
    pub grid_size: usize,
    pub extent: f64,
    pub min_elevation: f64,
    pub max_elevation: f64,
}

impl Heightfield {
    /// World coordinate of a grid index along either axis.
    pub fn world_coord(&self, index: usize) -> f64 {
        -0.5 * self.extent + self.extent * index as f64 / (self.grid_size - 1) as f64
    }

    /// Bilinear elevation sample; coordinates beyond the extent clamp to the
    /// boundary.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let n = self.grid_size;
        let to_pixel = |v: f64| {
            let u = (v + 0.5 * self.extent) / self.extent * (n - 1) as f64;
            u.clamp(0.0, (n - 1) as f64)
        };
        let (u, v) = (to_pixel(x), to_pixel(y));
        let (i0, j0) = (u.floor() as usize, v.floor() as usize);
        let (i1, j1) = ((i0 + 1).min(n - 1), (j0 + 1).min(n - 1));
        let (fu, fv) = (u - i0 as f64, v - j0 as f64);
        let at = |i: usize, j: usize| self.grid[j * n + i];
        let top = at(i0, j0) * (1.0 - fu) + at(i1, j0) * fu;
        let bot = at(i0, j1) * (1.0 - fu) + at(i1, j1) * fu;
        top * (1.0 - fv) + bot * fv
    }
}

/// Smoothed value noise: random lattice values with bilinear interpolation.
fn value_noise(spec: &TerrainSpec) -> Vec<f64> {
    let n = spec.grid_size;
    let mut out = vec![0.0; n * n];
    if spec.base_noise_amplitude == 0.0 {
        return out;
    }
    const LATTICE_STEP: usize = 8;
    let ln = n / LATTICE_STEP + 2;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let lattice: Vec<f64> = (0..ln * ln)
        .map(|_| rng.gen_range(-1.0..1.0) * spec.base_noise_amplitude)
        .collect();
    for j in 0..n {
        for i in 0..n {
            let u = i as f64 / LATTICE_STEP as f64;
            let v = j as f64 / LATTICE_STEP as f64;
            let (i0, j0) = (u.floor() as usize, v.floor() as usize);
            let (fu, fv) = (u - i0 as f64, v - j0 as f64);
            let at = |a: usize, b: usize| lattice[b * ln + a];
            let top = at(i0, j0) * (1.0 - fu) + at(i0 + 1, j0) * fu;
            let bot = at(i0, j0 + 1) * (1.0 - fu) + at(i0 + 1, j0 + 1) * fu;
            out[j * n + i] = top * (1.0 - fv) + bot * fv;
        }
    }
    out
}

/// Generate the heightfield: base noise plus additive crater contributions.
/// Deterministic for a given spec (seed included).
pub fn generate_heightfield(spec: &TerrainSpec) -> Result<Heightfield, TerrainError> {
    spec.validate()?;
    let n = spec.grid_size;
    let mut grid = value_noise(spec);
    for j in 0..n {
        let y = -0.5 * spec.extent + spec.extent * j as f64 / (n - 1) as f64;
        for i in 0..n {
            let x = -0.5 * spec.extent + spec.extent * i as f64 / (n - 1) as f64;
            for c in &spec.craters {
                let r = (Vector2::new(x, y) - c.center).norm();
                grid[j * n + i] += c.profile(r);
            }
        }
    }
    let min_elevation = grid.iter().cloned().fold(f64::MAX, f64::min);
    let max_elevation = grid.iter().cloned().fold(f64::MIN, f64::max);
    Ok(Heightfield {
        grid,
        grid_size: n,
        extent: spec.extent,
        min_elevation,
        max_elevation,
    })
}

/// Gray value for a flat field, where the linear map is degenerate.
pub const FLAT_GRAY: u16 = 32768;

/// Encode the field as a binary 16-bit PGM (P5, big-endian samples) with the
/// elevation range mapped linearly onto [0, 65535].
pub fn encode_grayscale(hf: &Heightfield) -> Vec<u8> {
    let n = hf.grid_size;
    let mut out = Vec::with_capacity(32 + 2 * n * n);
    out.extend_from_slice(format!("P5\n{n} {n}\n65535\n").as_bytes());
    let range = hf.max_elevation - hf.min_elevation;
    for &h in &hf.grid {
        let gray = if range > 0.0 {
            ((h - hf.min_elevation) / range * 65535.0).round() as u16
        } else {
            FLAT_GRAY
        };
        out.extend_from_slice(&gray.to_be_bytes());
    }
    out
}

/// Write the grayscale image atomically (temp file + rename).
pub fn export_grayscale(hf: &Heightfield, path: &Path) -> Result<(), TerrainError> {
    let bytes = encode_grayscale(hf);
    let io_err = |source| TerrainError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("pgm.tmp");
    let mut f = std::fs::File::create(&tmp).map_err(io_err)?;
    f.write_all(&bytes).map_err(io_err)?;
    f.sync_all().map_err(io_err)?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

/// Parse a binary 16-bit PGM produced by [`export_grayscale`]; test helper
/// for round-trip checks.
pub fn decode_grayscale(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>), TerrainError> {
    let bad = |m: &str| TerrainError::InvalidSpec(format!("bad PGM: {m}"));
    let header_end = bytes
        .windows(1)
        .enumerate()
        .filter(|(_, w)| w[0] == b'\n')
        .map(|(i, _)| i)
        .nth(2)
        .ok_or_else(|| bad("truncated header"))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| bad("non-utf8 header"))?;
    let mut lines = header.lines();
    if lines.next() != Some("P5") {
        return Err(bad("not P5"));
    }
    let dims: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad("missing dimensions"))?
        .split_whitespace()
        .filter_map(|t| t.parse().ok())
        .collect();
    let (w, h) = (dims[0], dims[1]);
    let data = &bytes[header_end + 1..];
    if data.len() != 2 * w * h {
        return Err(bad("sample count mismatch"));
    }
    let pixels = data
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((w, h, pixels))
}

/// Piecewise-linear 1-D elevation slice `h(x)` used by the planar contact
/// model. Samples beyond the extent clamp to the boundary elevation.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainProfile {
    pub x_start: f64,
    pub spacing: f64,
    pub heights: Vec<f64>,
    slopes: Vec<f64>,
}

impl TerrainProfile {
    /// Flat ground at the given elevation; used for unit tests and the
    /// flat-terrain config preset.
    pub fn flat(elevation: f64) -> Self {
        TerrainProfile {
            x_start: -1e6,
            spacing: 2e6,
            heights: vec![elevation, elevation],
            slopes: vec![0.0, 0.0],
        }
    }

    /// Uniform incline with the given slope; test helper.
    pub fn ramp(slope: f64) -> Self {
        let half = 1e3;
        TerrainProfile {
            x_start: -half,
            spacing: half,
            heights: vec![-half * slope, 0.0, half * slope],
            slopes: vec![slope, slope, slope],
        }
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.heights.len();
        let u = ((x - self.x_start) / self.spacing).clamp(0.0, (n - 1) as f64);
        let i = (u.floor() as usize).min(n - 2);
        (i, u - i as f64)
    }

    pub fn height(&self, x: f64) -> f64 {
        let (i, f) = self.locate(x);
        self.heights[i] * (1.0 - f) + self.heights[i + 1] * f
    }

    pub fn slope(&self, x: f64) -> f64 {
        let (i, f) = self.locate(x);
        self.slopes[i] * (1.0 - f) + self.slopes[i + 1] * f
    }

    /// Unit surface normal at `x`, pointing away from the ground.
    pub fn normal(&self, x: f64) -> Vector2<f64> {
        let beta = self.slope(x).atan();
        Vector2::new(-beta.sin(), beta.cos())
    }
}

/// Sample the sagittal slice of the field at constant `y`. Slopes come from
/// central differences of the sampled row.
pub fn profile_slice(hf: &Heightfield, y: f64) -> Result<TerrainProfile, TerrainError> {
    if y.abs() > 0.5 * hf.extent {
        return Err(TerrainError::SliceOutOfExtent { y, extent: hf.extent });
    }
    let n = hf.grid_size;
    let spacing = hf.extent / (n - 1) as f64;
    let heights: Vec<f64> = (0..n)
        .map(|i| {
            let x = -0.5 * hf.extent + spacing * i as f64;
            hf.sample(x, y)
        })
        .collect();
    let mut slopes = vec![0.0; n];
    for i in 0..n {
        let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
        slopes[i] = (heights[hi] - heights[lo]) / ((hi - lo) as f64 * spacing);
    }
    Ok(TerrainProfile {
        x_start: -0.5 * hf.extent,
        spacing,
        heights,
        slopes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn flat_spec() -> TerrainSpec {
        TerrainSpec {
            craters: vec![],
            base_noise_amplitude: 0.0,
            ..TerrainSpec::default()
        }
    }

    #[test]
    fn flat_field_is_zero() {
        let hf = generate_heightfield(&flat_spec()).unwrap();
        assert!(hf.grid.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn crater_center_depth() {
        let mut spec = flat_spec();
        // Odd grid size puts a node exactly at the crater center.
        spec.grid_size = 129;
        spec.craters.push(Crater {
            center: Vector2::new(0.0, 0.0),
            radius: 2.0,
            depth: 0.5,
            rim_height: 0.1,
        });
        let hf = generate_heightfield(&spec).unwrap();
        assert_abs_diff_eq!(hf.sample(0.0, 0.0), -0.5, epsilon = 1e-9);
        // Bowl profile vanishes at the radius; rim returns to zero past the band.
        let c = &spec.craters[0];
        assert_abs_diff_eq!(c.profile(2.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.profile(2.0 * (1.0 + RIM_BAND)), 0.0, epsilon = 1e-12);
        assert!(c.profile(2.3) > 0.0);
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = TerrainSpec::default();
        let a = generate_heightfield(&spec).unwrap();
        let b = generate_heightfield(&spec).unwrap();
        assert_eq!(a.grid, b.grid);
        assert_eq!(encode_grayscale(&a), encode_grayscale(&b));
    }

    #[test]
    fn crater_superposition_commutes() {
        let c1 = Crater {
            center: Vector2::new(1.0, 0.0),
            radius: 1.5,
            depth: 0.3,
            rim_height: 0.05,
        };
        let c2 = Crater {
            center: Vector2::new(-1.0, 0.5),
            radius: 2.0,
            depth: 0.2,
            rim_height: 0.0,
        };
        let mut spec_ab = flat_spec();
        spec_ab.craters = vec![c1.clone(), c2.clone()];
        let mut spec_ba = flat_spec();
        spec_ba.craters = vec![c2, c1];
        assert_eq!(
            generate_heightfield(&spec_ab).unwrap().grid,
            generate_heightfield(&spec_ba).unwrap().grid
        );
    }

    #[test]
    fn flat_export_is_mid_gray() {
        let hf = generate_heightfield(&flat_spec()).unwrap();
        let bytes = encode_grayscale(&hf);
        let (_, _, pixels) = decode_grayscale(&bytes).unwrap();
        assert!(pixels.iter().all(|&p| p == FLAT_GRAY));
    }

    #[test]
    fn two_level_export_hits_endpoints() {
        let hf = Heightfield {
            grid: vec![0.0, 1.0, 0.0, 1.0],
            grid_size: 2,
            extent: 1.0,
            min_elevation: 0.0,
            max_elevation: 1.0,
        };
        let (_, _, pixels) = decode_grayscale(&encode_grayscale(&hf)).unwrap();
        assert_eq!(pixels, vec![0, 65535, 0, 65535]);
    }

    #[test]
    fn export_roundtrip_within_quantization() {
        let hf = generate_heightfield(&TerrainSpec::default()).unwrap();
        let (w, h, pixels) = decode_grayscale(&encode_grayscale(&hf)).unwrap();
        assert_eq!((w, h), (hf.grid_size, hf.grid_size));
        let range = hf.max_elevation - hf.min_elevation;
        let step = range / 65535.0;
        for (p, &elev) in pixels.iter().zip(&hf.grid) {
            let back = hf.min_elevation + *p as f64 / 65535.0 * range;
            assert!((back - elev).abs() <= step);
        }
    }

    #[test]
    fn export_monotone_in_elevation() {
        let hf = generate_heightfield(&TerrainSpec::default()).unwrap();
        let (_, _, pixels) = decode_grayscale(&encode_grayscale(&hf)).unwrap();
        let mut order: Vec<usize> = (0..hf.grid.len()).collect();
        order.sort_by(|&a, &b| hf.grid[a].total_cmp(&hf.grid[b]));
        for w in order.windows(2) {
            assert!(pixels[w[0]] <= pixels[w[1]]);
        }
    }

    #[test]
    fn flat_profile_slice() {
        let hf = generate_heightfield(&flat_spec()).unwrap();
        let prof = profile_slice(&hf, 0.0).unwrap();
        assert_abs_diff_eq!(prof.height(1.23), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(prof.slope(1.23), 0.0, epsilon = 1e-12);
        // Clamped beyond the extent.
        assert_abs_diff_eq!(prof.height(1e4), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn slice_through_crater_center_reaches_floor() {
        let mut spec = flat_spec();
        spec.craters.push(Crater {
            center: Vector2::new(2.0, 0.0),
            radius: 3.0,
            depth: 0.6,
            rim_height: 0.0,
        });
        let hf = generate_heightfield(&spec).unwrap();
        let prof = profile_slice(&hf, 0.0).unwrap();
        let min = prof
            .heights
            .iter()
            .cloned()
            .fold(f64::MAX, f64::min);
        let center_sample = hf.sample(2.0, 0.0);
        assert_abs_diff_eq!(min, center_sample, epsilon = 1e-3);
    }

    #[test]
    fn slice_out_of_extent_errors() {
        let hf = generate_heightfield(&flat_spec()).unwrap();
        assert!(profile_slice(&hf, 1e4).is_err());
    }
}
