//! Range-image features: spherical projection of a scan onto an
//! azimuth-by-beam grid, image-space gradients turned into a 3-channel
//! normal map, and lifting of pixel features back onto the points.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Projection geometry. Defaults match a 64-beam spinning sensor with a
/// vertical field of view from +3 to -25 degrees.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RangeConfig {
    pub height: usize,
    pub width: usize,
    pub fov_up_deg: f64,
    pub fov_down_deg: f64,
}

impl Default for RangeConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 2048,
            fov_up_deg: 3.0,
            fov_down_deg: -25.0,
        }
    }
}

/// A projected scan: per-pixel range (0 = empty), the pixel every point
/// landed in, and per-pixel the point that owns it (the nearest one).
#[derive(Debug, Clone)]
pub struct RangeImage {
    pub height: usize,
    pub width: usize,
    depth: Vec<f64>,
    mapping: Vec<(usize, usize)>,
    pixel_owner: Vec<Option<usize>>,
}

impl RangeImage {
    pub fn depth_at(&self, row: usize, col: usize) -> f64 {
        self.depth[row * self.width + col]
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    /// Pixel `(row, col)` of each input point.
    pub fn mapping(&self) -> &[(usize, usize)] {
        &self.mapping
    }

    pub fn pixel_owner(&self) -> &[Option<usize>] {
        &self.pixel_owner
    }

    pub fn occupied_pixels(&self) -> usize {
        self.depth.iter().filter(|&&d| d > 0.0).count()
    }
}

/// Projects points onto the range image. Column comes from the azimuth,
/// row from the elevation angle mapped linearly over the vertical field of
/// view; when several points collide on a pixel the nearer one keeps it.
pub fn project_to_range(points: &[[f64; 3]], cfg: &RangeConfig) -> Result<RangeImage> {
    if points.is_empty() {
        return Err(Error::EmptyPointCloud);
    }
    let (h, w) = (cfg.height, cfg.width);
    let fov_up = cfg.fov_up_deg.to_radians();
    let fov_down = cfg.fov_down_deg.to_radians();
    let fov_span = fov_up - fov_down;

    let mut depth = vec![0.0f64; h * w];
    let mut mapping = Vec::with_capacity(points.len());
    let mut owner: Vec<Option<usize>> = vec![None; h * w];

    for (idx, p) in points.iter().enumerate() {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinitePoint { index: idx });
        }
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if r == 0.0 {
            return Err(Error::OriginPoint { index: idx });
        }
        let azimuth = p[1].atan2(p[0]);
        let col_f = (w as f64) * 0.5 * (1.0 - azimuth / std::f64::consts::PI);
        let col = (col_f.floor() as i64).clamp(0, w as i64 - 1) as usize;

        let pitch = (p[2] / r).asin();
        let row_f = (fov_up - pitch) / fov_span * (h as f64);
        let row = (row_f.floor() as i64).clamp(0, h as i64 - 1) as usize;

        mapping.push((row, col));
        let pix = row * w + col;
        if owner[pix].is_none() || r < depth[pix] {
            depth[pix] = r;
            owner[pix] = Some(idx);
        }
    }

    Ok(RangeImage {
        height: h,
        width: w,
        depth,
        mapping,
        pixel_owner: owner,
    })
}

/// Unit surface normals per pixel, three channels; empty pixels are zero.
#[derive(Debug, Clone)]
pub struct NormalMap {
    pub height: usize,
    pub width: usize,
    normals: Vec<[f64; 3]>,
}

impl NormalMap {
    pub fn at(&self, row: usize, col: usize) -> [f64; 3] {
        self.normals[row * self.width + col]
    }

    pub fn normals(&self) -> &[[f64; 3]] {
        &self.normals
    }
}

/// Depth gradient along one axis with empty-pixel skipping: central when
/// both neighbors are occupied, one-sided when only one is, zero otherwise.
fn directional_gradient(
    image: &RangeImage,
    row: usize,
    col: usize,
    step: impl Fn(usize, usize, i64) -> Option<(usize, usize)>,
) -> f64 {
    let here = image.depth_at(row, col);
    let before = step(row, col, -1)
        .map(|(r, c)| image.depth_at(r, c))
        .filter(|&d| d > 0.0);
    let after = step(row, col, 1)
        .map(|(r, c)| image.depth_at(r, c))
        .filter(|&d| d > 0.0);
    match (before, after) {
        (Some(b), Some(a)) => (a - b) / 2.0,
        (None, Some(a)) => a - here,
        (Some(b), None) => here - b,
        (None, None) => 0.0,
    }
}

/// Normals from the range image: `n = (d_x, d_y, 1) / sqrt(d_x^2 + d_y^2 + 1)`
/// where `d_x`, `d_y` are the column- and row-direction depth gradients.
/// The constant third channel makes the denominator the exact Euclidean
/// norm, so occupied normals are unit length by construction.
pub fn compute_normals(image: &RangeImage) -> NormalMap {
    let (h, w) = (image.height, image.width);
    let mut normals = vec![[0.0f64; 3]; h * w];
    for row in 0..h {
        for col in 0..w {
            if image.depth_at(row, col) == 0.0 {
                continue;
            }
            let dx = directional_gradient(image, row, col, |r, c, s| {
                let nc = c as i64 + s;
                (nc >= 0 && nc < w as i64).then_some((r, nc as usize))
            });
            let dy = directional_gradient(image, row, col, |r, c, s| {
                let nr = r as i64 + s;
                (nr >= 0 && nr < h as i64).then_some((nr as usize, c))
            });
            let norm = (dx * dx + dy * dy + 1.0).sqrt();
            normals[row * w + col] = [dx / norm, dy / norm, 1.0 / norm];
        }
    }
    NormalMap {
        height: h,
        width: w,
        normals,
    }
}

/// Assigns each point its pixel's normal; points sharing a pixel receive
/// identical vectors.
pub fn lift_to_points(nm: &NormalMap, mapping: &[(usize, usize)]) -> Vec<[f64; 3]> {
    mapping.iter().map(|&(r, c)| nm.at(r, c)).collect()
}

/// Debug dump: header of three little-endian u32 (height, width, channels)
/// followed by row-major little-endian f32 values.
pub fn write_image_dump<W: Write>(
    mut out: W,
    height: usize,
    width: usize,
    channels: usize,
    data: &[f32],
) -> Result<()> {
    if data.len() != height * width * channels {
        return Err(Error::ShapeMismatch {
            context: "image dump",
            expected: (height * width * channels).to_string(),
            got: data.len().to_string(),
        });
    }
    out.write_all(&(height as u32).to_le_bytes())?;
    out.write_all(&(width as u32).to_le_bytes())?;
    out.write_all(&(channels as u32).to_le_bytes())?;
    for v in data {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_image_dump<R: Read>(mut input: R) -> Result<(usize, usize, usize, Vec<f32>)> {
    let mut b4 = [0u8; 4];
    let mut next_u32 = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut b4)?;
        Ok(u32::from_le_bytes(b4))
    };
    let h = next_u32(&mut input)? as usize;
    let w = next_u32(&mut input)? as usize;
    let c = next_u32(&mut input)? as usize;
    let mut data = vec![0f32; h * w * c];
    let mut buf = [0u8; 4];
    for v in data.iter_mut() {
        input.read_exact(&mut buf)?;
        *v = f32::from_le_bytes(buf);
    }
    Ok((h, w, c, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mid_fov_z(cfg: &RangeConfig, horizontal: f64) -> f64 {
        // Elevation at the middle of the vertical field of view.
        let mid = (cfg.fov_up_deg + cfg.fov_down_deg) / 2.0;
        horizontal * mid.to_radians().tan()
    }

    #[test]
    fn point_on_positive_x_axis_maps_to_center_column() {
        let cfg = RangeConfig::default();
        let z = mid_fov_z(&cfg, 10.0);
        let image = project_to_range(&[[10.0, 0.0, z]], &cfg).unwrap();
        assert_eq!(image.occupied_pixels(), 1);
        assert_eq!(image.mapping()[0].1, cfg.width / 2);
    }

    #[test]
    fn nearer_point_owns_shared_pixel() {
        let cfg = RangeConfig::default();
        let z5 = mid_fov_z(&cfg, 5.0);
        let z10 = mid_fov_z(&cfg, 10.0);
        let image = project_to_range(&[[10.0, 0.0, z10], [5.0, 0.0, z5]], &cfg).unwrap();
        assert_eq!(image.mapping()[0], image.mapping()[1]);
        let (r, c) = image.mapping()[0];
        let expected = (5.0f64 * 5.0 + z5 * z5).sqrt();
        assert_relative_eq!(image.depth_at(r, c), expected, epsilon = 1e-12);
        assert_eq!(image.pixel_owner()[r * cfg.width + c], Some(1));
    }

    #[test]
    fn uniform_ring_occupies_every_column_once() {
        let cfg = RangeConfig::default();
        let w = cfg.width;
        // Azimuth cell centers: column n covers azimuth
        // pi * (1 - (2n+1)/W), so each point lands in its own column.
        let points: Vec<[f64; 3]> = (0..w)
            .map(|n| {
                let az = std::f64::consts::PI * (1.0 - (2.0 * n as f64 + 1.0) / w as f64);
                let z = mid_fov_z(&cfg, 10.0);
                [10.0 * az.cos(), 10.0 * az.sin(), z]
            })
            .collect();
        let image = project_to_range(&points, &cfg).unwrap();

        let mut column_hits = vec![0usize; w];
        for &(_, c) in image.mapping() {
            column_hits[c] += 1;
        }
        assert!(column_hits.iter().all(|&n| n == 1));
        assert_eq!(image.occupied_pixels(), w);
    }

    #[test]
    fn origin_point_reports_index() {
        let cfg = RangeConfig::default();
        match project_to_range(&[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]], &cfg) {
            Err(Error::OriginPoint { index }) => assert_eq!(index, 1),
            other => panic!("expected OriginPoint, got {other:?}"),
        }
    }

    fn constant_image(h: usize, w: usize, value: f64) -> RangeImage {
        RangeImage {
            height: h,
            width: w,
            depth: vec![value; h * w],
            mapping: Vec::new(),
            pixel_owner: vec![None; h * w],
        }
    }

    #[test]
    fn constant_depth_gives_up_normals() {
        let image = constant_image(8, 16, 5.0);
        let nm = compute_normals(&image);
        for row in 0..8 {
            for col in 0..16 {
                assert_eq!(nm.at(row, col), [0.0, 0.0, 1.0]);
            }
        }
    }

    #[test]
    fn unit_slope_plane_gives_diagonal_normal() {
        let (h, w) = (8, 16);
        let mut image = constant_image(h, w, 0.0);
        for row in 0..h {
            for col in 0..w {
                image.depth[row * w + col] = col as f64 + 1.0;
            }
        }
        let nm = compute_normals(&image);
        let expected = 1.0 / 2.0f64.sqrt();
        for row in 0..h {
            for col in 0..w {
                let n = nm.at(row, col);
                assert_relative_eq!(n[0], expected, epsilon = 1e-4);
                assert_relative_eq!(n[1], 0.0, epsilon = 1e-12);
                assert_relative_eq!(n[2], expected, epsilon = 1e-4);
            }
        }
    }

    #[test]
    fn random_field_matches_independent_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let (h, w) = (12, 24);
        let mut image = constant_image(h, w, 0.0);
        for v in image.depth.iter_mut() {
            *v = if rng.gen_bool(0.8) {
                rng.gen_range(1.0..30.0)
            } else {
                0.0
            };
        }
        let nm = compute_normals(&image);

        // Independent reimplementation over the flat array.
        let d = |r: i64, c: i64| -> Option<f64> {
            if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
                return None;
            }
            let v = image.depth[(r as usize) * w + c as usize];
            (v > 0.0).then_some(v)
        };
        for r in 0..h as i64 {
            for c in 0..w as i64 {
                let Some(center) = d(r, c) else {
                    assert_eq!(nm.at(r as usize, c as usize), [0.0; 3]);
                    continue;
                };
                let grad = |b: Option<f64>, a: Option<f64>| match (b, a) {
                    (Some(b), Some(a)) => (a - b) / 2.0,
                    (None, Some(a)) => a - center,
                    (Some(b), None) => center - b,
                    (None, None) => 0.0,
                };
                let dx = grad(d(r, c - 1), d(r, c + 1));
                let dy = grad(d(r - 1, c), d(r + 1, c));
                let norm = (dx * dx + dy * dy + 1.0).sqrt();
                let got = nm.at(r as usize, c as usize);
                assert_relative_eq!(got[0], dx / norm, epsilon = 1e-6);
                assert_relative_eq!(got[1], dy / norm, epsilon = 1e-6);
                assert_relative_eq!(got[2], 1.0 / norm, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn occupied_normals_are_unit_length() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(16);
        let cfg = RangeConfig {
            height: 16,
            width: 64,
            ..Default::default()
        };
        let points: Vec<[f64; 3]> = (0..500)
            .map(|_| {
                let az = rng.gen_range(-3.1..3.1);
                let r = rng.gen_range(2.0..50.0);
                let z = rng.gen_range(-5.0..0.5);
                [r * f64::cos(az), r * f64::sin(az), z]
            })
            .collect();
        let image = project_to_range(&points, &cfg).unwrap();
        let nm = compute_normals(&image);
        for row in 0..cfg.height {
            for col in 0..cfg.width {
                if image.depth_at(row, col) > 0.0 {
                    let n = nm.at(row, col);
                    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                    assert!((len - 1.0).abs() < 1e-5, "|n| = {len}");
                }
            }
        }
    }

    #[test]
    fn shared_pixel_points_lift_identical_features() {
        let cfg = RangeConfig::default();
        let z5 = mid_fov_z(&cfg, 5.0);
        let z10 = mid_fov_z(&cfg, 10.0);
        let image = project_to_range(&[[10.0, 0.0, z10], [5.0, 0.0, z5]], &cfg).unwrap();
        let nm = compute_normals(&image);
        let lifted = lift_to_points(&nm, image.mapping());
        assert_eq!(lifted[0], lifted[1]);
    }

    #[test]
    fn lifting_is_idempotent() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
        let cfg = RangeConfig {
            height: 8,
            width: 32,
            ..Default::default()
        };
        let points: Vec<[f64; 3]> = (0..100)
            .map(|_| {
                [
                    rng.gen_range(1.0..20.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-4.0..0.2),
                ]
            })
            .collect();
        let image = project_to_range(&points, &cfg).unwrap();
        let nm = compute_normals(&image);
        let once = lift_to_points(&nm, image.mapping());
        let twice = lift_to_points(&nm, image.mapping());
        assert_eq!(once, twice);

        // Gather oracle: direct indexing per point.
        for (i, &(r, c)) in image.mapping().iter().enumerate() {
            assert_eq!(once[i], nm.at(r, c));
        }
    }

    #[test]
    fn z_rotation_shifts_columns_cyclically() {
        let cfg = RangeConfig {
            height: 4,
            width: 64,
            ..Default::default()
        };
        let w = cfg.width;
        // Cell-centered azimuths away from the seam.
        let points: Vec<[f64; 3]> = (5..30)
            .map(|n| {
                let az = std::f64::consts::PI * (1.0 - (2.0 * n as f64 + 1.0) / w as f64);
                [10.0 * az.cos(), 10.0 * az.sin(), mid_fov_z(&cfg, 10.0)]
            })
            .collect();
        let k = 7i64;
        let theta = 2.0 * std::f64::consts::PI * k as f64 / w as f64;
        let rotated: Vec<[f64; 3]> = points
            .iter()
            .map(|p| {
                [
                    p[0] * theta.cos() - p[1] * theta.sin(),
                    p[0] * theta.sin() + p[1] * theta.cos(),
                    p[2],
                ]
            })
            .collect();
        let base = project_to_range(&points, &cfg).unwrap();
        let rot = project_to_range(&rotated, &cfg).unwrap();
        for (b, r) in base.mapping().iter().zip(rot.mapping().iter()) {
            let expected = (b.1 as i64 - k).rem_euclid(w as i64) as usize;
            assert_eq!(r.1, expected);
            assert_eq!(r.0, b.0);
        }
    }

    #[test]
    fn image_dump_round_trips() {
        let data: Vec<f32> = (0..24).map(|i| i as f32 * 0.5).collect();
        let mut buf = Vec::new();
        write_image_dump(&mut buf, 2, 3, 4, &data).unwrap();
        let (h, w, c, back) = read_image_dump(buf.as_slice()).unwrap();
        assert_eq!((h, w, c), (2, 3, 4));
        assert_eq!(back, data);
    }
}
