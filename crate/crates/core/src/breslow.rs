//! Tumour-depth measurement from a segmentation mask: find the outer
//! epidermis surface, estimate its local orientation, and measure the
//! deepest perpendicular extent of the main tumour mass. Also renders the
//! per-class TP/FP/FN error overlay.

use serde::Serialize;

use crate::error::{CoreError, Result};
use crate::raster::{LabelMask, RgbRaster, TissueClass};

pub const DEFAULT_WINDOW_RADIUS: f64 = 64.0;

/// The epidermis-background interface with a local frame at every point.
#[derive(Debug, Clone)]
pub struct SurfaceModel {
    /// Interface pixels in row-major scan order.
    pub boundary_points: Vec<(usize, usize)>,
    /// Unit tangent per boundary point, from a PCA over its neighborhood.
    pub tangents: Vec<(f64, f64)>,
    /// Unit normal per boundary point, oriented into the tissue.
    pub normals: Vec<(f64, f64)>,
    pub window_radius: f64,
}

/// Outcome of one measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreslowResult {
    pub thickness_um: f64,
    /// Deepest pixel of the main tumour mass.
    pub deep_point: (usize, usize),
    /// Boundary point the depth was measured from.
    pub surface_point: (usize, usize),
    pub main_mass_size: usize,
    pub method_flags: Vec<String>,
}

fn is_background(mask: &LabelMask, x: i64, y: i64) -> bool {
    if x < 0 || y < 0 || x >= mask.width as i64 || y >= mask.height as i64 {
        return false;
    }
    mask.get(x as usize, y as usize) == TissueClass::Background
}

/// Principal direction of a 2x2 covariance matrix.
fn principal_direction(sxx: f64, sxy: f64, syy: f64) -> (f64, f64) {
    if sxy.abs() < 1e-12 {
        return if sxx >= syy { (1.0, 0.0) } else { (0.0, 1.0) };
    }
    let lambda = 0.5 * (sxx + syy + ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt());
    let (vx, vy) = (sxy, lambda - sxx);
    let norm = (vx * vx + vy * vy).sqrt();
    (vx / norm, vy / norm)
}

/// Locates the epidermis-background interface and fits a local tangent and
/// inward normal at every boundary point.
pub fn extract_surface(mask: &LabelMask, window_radius: f64) -> Result<SurfaceModel> {
    let mut boundary = Vec::new();
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) != TissueClass::Epidermis {
                continue;
            }
            let (xi, yi) = (x as i64, y as i64);
            let touches_background = is_background(mask, xi - 1, yi)
                || is_background(mask, xi + 1, yi)
                || is_background(mask, xi, yi - 1)
                || is_background(mask, xi, yi + 1);
            if touches_background {
                boundary.push((x, y));
            }
        }
    }
    if boundary.is_empty() {
        return Err(CoreError::NoEpidermisSurface);
    }

    let r2 = window_radius * window_radius;
    let mut tangents = Vec::with_capacity(boundary.len());
    let mut normals = Vec::with_capacity(boundary.len());
    for &(bx, by) in &boundary {
        let mut n = 0.0;
        let (mut mx, mut my) = (0.0, 0.0);
        let window: Vec<(f64, f64)> = boundary
            .iter()
            .filter(|&&(x, y)| {
                let (dx, dy) = (x as f64 - bx as f64, y as f64 - by as f64);
                dx * dx + dy * dy <= r2
            })
            .map(|&(x, y)| (x as f64, y as f64))
            .collect();
        for &(x, y) in &window {
            n += 1.0;
            mx += x;
            my += y;
        }
        mx /= n;
        my /= n;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for &(x, y) in &window {
            sxx += (x - mx) * (x - mx);
            sxy += (x - mx) * (y - my);
            syy += (y - my) * (y - my);
        }

        let tangent = principal_direction(sxx, sxy, syy);
        let normal = orient_into_tissue(mask, (bx, by), (-tangent.1, tangent.0));
        tangents.push(tangent);
        normals.push(normal);
    }

    Ok(SurfaceModel {
        boundary_points: boundary,
        tangents,
        normals,
        window_radius,
    })
}

/// Picks the sign of a candidate normal by probing which side of the
/// boundary holds tissue.
fn orient_into_tissue(mask: &LabelMask, at: (usize, usize), normal: (f64, f64)) -> (f64, f64) {
    let score = |dir: (f64, f64)| {
        let mut tissue = 0;
        for t in 1..=8 {
            let x = (at.0 as f64 + dir.0 * t as f64).round() as i64;
            let y = (at.1 as f64 + dir.1 * t as f64).round() as i64;
            if x < 0 || y < 0 || x >= mask.width as i64 || y >= mask.height as i64 {
                continue;
            }
            if mask.get(x as usize, y as usize) != TissueClass::Background {
                tissue += 1;
            }
        }
        tissue
    };
    let flipped = (-normal.0, -normal.1);
    match score(normal).cmp(&score(flipped)) {
        std::cmp::Ordering::Greater => normal,
        std::cmp::Ordering::Less => flipped,
        std::cmp::Ordering::Equal => {
            if (normal.1, normal.0) > (flipped.1, flipped.0) {
                normal
            } else {
                flipped
            }
        }
    }
}

/// Largest 4-connected tumour component, in row-major discovery order.
pub fn main_tumour_mass(mask: &LabelMask) -> Result<Vec<(usize, usize)>> {
    let (w, h) = (mask.width, mask.height);
    let mut visited = vec![false; w * h];
    let mut best: Vec<(usize, usize)> = Vec::new();

    for start_y in 0..h {
        for start_x in 0..w {
            let idx = start_y * w + start_x;
            if visited[idx] || mask.get(start_x, start_y) != TissueClass::Tumour {
                continue;
            }
            let mut component = Vec::new();
            let mut stack = vec![(start_x, start_y)];
            visited[idx] = true;
            while let Some((x, y)) = stack.pop() {
                component.push((x, y));
                let mut push = |nx: i64, ny: i64| {
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        return;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    let nidx = ny * w + nx;
                    if !visited[nidx] && mask.get(nx, ny) == TissueClass::Tumour {
                        visited[nidx] = true;
                        stack.push((nx, ny));
                    }
                };
                push(x as i64 - 1, y as i64);
                push(x as i64 + 1, y as i64);
                push(x as i64, y as i64 - 1);
                push(x as i64, y as i64 + 1);
            }
            if component.len() > best.len() {
                best = component;
            }
        }
    }

    if best.is_empty() {
        return Err(CoreError::NoTumour);
    }
    Ok(best)
}

/// Measures the tumour thickness: each main-mass pixel is projected onto
/// the inward normal of its nearest boundary point; the maximum projection
/// (clamped at zero) scaled by `microns_per_pixel` is the thickness.
pub fn breslow(mask: &LabelMask, microns_per_pixel: f64, window_radius: f64) -> Result<BreslowResult> {
    let surface = extract_surface(mask, window_radius)?;
    let mass = main_tumour_mass(mask)?;

    let mut max_depth = f64::NEG_INFINITY;
    let mut deep_point = mass[0];
    let mut surface_point = surface.boundary_points[0];
    for &(px, py) in &mass {
        let (pxf, pyf) = (px as f64, py as f64);
        let mut nearest = 0;
        let mut nearest_d2 = f64::INFINITY;
        for (i, &(bx, by)) in surface.boundary_points.iter().enumerate() {
            let (dx, dy) = (pxf - bx as f64, pyf - by as f64);
            let d2 = dx * dx + dy * dy;
            if d2 < nearest_d2 {
                nearest_d2 = d2;
                nearest = i;
            }
        }
        let (bx, by) = surface.boundary_points[nearest];
        let normal = surface.normals[nearest];
        let depth = (pxf - bx as f64) * normal.0 + (pyf - by as f64) * normal.1;
        if depth > max_depth {
            max_depth = depth;
            deep_point = (px, py);
            surface_point = (bx, by);
        }
    }

    let mut method_flags = Vec::new();
    if max_depth <= 0.0 {
        method_flags.push("tumour_above_surface".to_string());
    }
    Ok(BreslowResult {
        thickness_um: max_depth.max(0.0) * microns_per_pixel,
        deep_point,
        surface_point,
        main_mass_size: mass.len(),
        method_flags,
    })
}

/// Per-pixel agreement image for one class: true positives white, false
/// positives teal, false negatives red, everything else black.
pub fn error_overlay(truth: &LabelMask, pred: &LabelMask, class: TissueClass) -> Result<RgbRaster> {
    if truth.width != pred.width || truth.height != pred.height {
        return Err(CoreError::ShapeMismatch(format!(
            "truth {}x{} vs prediction {}x{}",
            truth.width, truth.height, pred.width, pred.height
        )));
    }
    let mut pixels = Vec::with_capacity(truth.width * truth.height * 3);
    for (&t, &p) in truth.labels.iter().zip(&pred.labels) {
        let in_truth = t == class.id();
        let in_pred = p == class.id();
        let rgb: [u8; 3] = match (in_truth, in_pred) {
            (true, true) => [255, 255, 255],
            (false, true) => [0, 128, 128],
            (true, false) => [255, 0, 0],
            (false, false) => [0, 0, 0],
        };
        pixels.extend_from_slice(&rgb);
    }
    RgbRaster::new(
        truth.width,
        truth.height,
        pixels,
        crate::raster::DEFAULT_MICRONS_PER_PIXEL,
    )
}
