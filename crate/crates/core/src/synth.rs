//! Deterministic synthetic skin slides: a wavy epidermis band over dermis,
//! circular tumour blobs, and NDI specks, with an analytic tumour-depth
//! ground truth derived from the generating geometry.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::raster::{save_mask, save_raster, LabelMask, RgbRaster, SlideMeta, TissueClass};
use crate::split::{assign_splits, save_slide_manifest, SlideRecord};

/// Sinusoidal displacement of the outer skin surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceWave {
    pub amplitude_px: f64,
    pub period_px: f64,
    #[serde(default)]
    pub phase: f64,
}

/// One circular tumour mass: horizontal position, centre depth below the
/// dermo-epidermal junction, and radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TumourBlob {
    pub center_x: f64,
    pub depth_px: f64,
    pub radius_px: f64,
}

/// Full description of one synthetic slide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    /// Mean vertical position of the outer surface.
    pub surface_y_px: f64,
    pub epidermis_thickness_px: f64,
    pub surface_waviness: SurfaceWave,
    pub tumour_blobs: Vec<TumourBlob>,
    #[serde(default)]
    pub ndi_specks: usize,
    #[serde(default)]
    pub texture_noise: f64,
    #[serde(default = "default_mpp")]
    pub microns_per_pixel: f64,
    pub seed: u64,
}

fn default_mpp() -> f64 {
    crate::raster::DEFAULT_MICRONS_PER_PIXEL
}

/// Rendering colors per class, chosen to keep the five classes separable.
const BASE_COLORS: [[f64; 3]; 5] = [
    [235.0, 236.0, 240.0],
    [120.0, 40.0, 130.0],
    [180.0, 70.0, 90.0],
    [235.0, 170.0, 185.0],
    [130.0, 150.0, 190.0],
];

const SPECK_RADIUS: f64 = 3.0;

impl SynthSpec {
    /// Outer surface height at horizontal position `x`.
    pub fn surface(&self, x: f64) -> f64 {
        let wave = &self.surface_waviness;
        if wave.amplitude_px == 0.0 {
            self.surface_y_px
        } else {
            self.surface_y_px + wave.amplitude_px * (TAU * x / wave.period_px + wave.phase).sin()
        }
    }

    /// Dermo-epidermal junction height at horizontal position `x`.
    pub fn junction(&self, x: f64) -> f64 {
        self.surface(x) + self.epidermis_thickness_px
    }

    /// Absolute centre of a blob, derived from its junction-relative depth.
    pub fn blob_center(&self, blob: &TumourBlob) -> (f64, f64) {
        (blob.center_x, self.junction(blob.center_x) + blob.depth_px)
    }

    fn junction_ceiling(&self) -> f64 {
        self.surface_y_px + self.surface_waviness.amplitude_px.abs() + self.epidermis_thickness_px
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CoreError::SpecOutOfBounds(msg));
        if self.width < 16 || self.height < 16 {
            return fail(format!("canvas {}x{} is below 16x16", self.width, self.height));
        }
        if self.epidermis_thickness_px < 1.0 {
            return fail("epidermis band must be at least 1 px thick".into());
        }
        if !(0.0..=1.0).contains(&self.texture_noise) {
            return fail(format!("texture_noise {} outside [0, 1]", self.texture_noise));
        }
        if self.microns_per_pixel <= 0.0 {
            return fail("microns_per_pixel must be positive".into());
        }
        let wave = &self.surface_waviness;
        if wave.amplitude_px < 0.0 {
            return fail("surface amplitude must be non-negative".into());
        }
        if wave.amplitude_px > 0.0 && wave.period_px <= 0.0 {
            return fail("wavy surface needs a positive period".into());
        }
        if self.surface_y_px - wave.amplitude_px < 1.0 {
            return fail("surface crest leaves no background above the skin".into());
        }
        if self.junction_ceiling() > self.height as f64 - 2.0 {
            return fail("epidermis band reaches the bottom of the canvas".into());
        }
        for (i, blob) in self.tumour_blobs.iter().enumerate() {
            if blob.radius_px < 1.0 {
                return fail(format!("blob {i} radius {} below 1 px", blob.radius_px));
            }
            if blob.depth_px < blob.radius_px {
                return fail(format!(
                    "blob {i} centre depth {} is above its radius {}; it would pierce the junction",
                    blob.depth_px, blob.radius_px
                ));
            }
            if blob.center_x - blob.radius_px < 0.0
                || blob.center_x + blob.radius_px > self.width as f64 - 1.0
            {
                return fail(format!("blob {i} leaves the canvas horizontally"));
            }
            let (_, cy) = self.blob_center(blob);
            if cy + blob.radius_px > self.height as f64 - 1.0 {
                return fail(format!("blob {i} leaves the canvas at the bottom"));
            }
        }
        Ok(())
    }
}

/// Shortest distance from a point to the surface curve, found by dense
/// sampling followed by local refinement.
fn perpendicular_surface_distance(spec: &SynthSpec, px: f64, py: f64) -> f64 {
    let dist = |x: f64| {
        let dy = py - spec.surface(x);
        ((px - x) * (px - x) + dy * dy).sqrt()
    };

    let mut best_x = 0.0;
    let mut best = f64::INFINITY;
    let coarse_steps = spec.width * 2;
    for i in 0..=coarse_steps {
        let x = i as f64 * 0.5;
        let d = dist(x);
        if d < best {
            best = d;
            best_x = x;
        }
    }
    let mut x = best_x - 1.0;
    while x <= best_x + 1.0 {
        best = best.min(dist(x));
        x += 1.0 / 256.0;
    }
    best
}

/// Tumour depth implied by the generating geometry: the deepest point of
/// each blob, measured perpendicular to the outer surface, in µm.
pub fn analytic_breslow(spec: &SynthSpec) -> f64 {
    spec.tumour_blobs
        .iter()
        .map(|blob| {
            let (cx, cy) = spec.blob_center(blob);
            perpendicular_surface_distance(spec, cx, cy + blob.radius_px)
        })
        .fold(0.0, f64::max)
        * spec.microns_per_pixel
}

fn place_specks(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<(f64, f64)>> {
    let mut specks = Vec::with_capacity(spec.ndi_specks);
    let y_min = spec.junction_ceiling() + SPECK_RADIUS + 1.0;
    let y_max = spec.height as f64 - 1.0 - SPECK_RADIUS;
    let x_min = SPECK_RADIUS;
    let x_max = spec.width as f64 - 1.0 - SPECK_RADIUS;
    if spec.ndi_specks > 0 && (y_min >= y_max || x_min >= x_max) {
        return Err(CoreError::SpecOutOfBounds(
            "no dermis room left for ndi specks".into(),
        ));
    }

    for _ in 0..spec.ndi_specks {
        let mut placed = false;
        for _ in 0..1000 {
            let x = rng.gen_range(x_min..x_max);
            let y = rng.gen_range(y_min..y_max);
            let clear = spec.tumour_blobs.iter().all(|blob| {
                let (bx, by) = spec.blob_center(blob);
                let d2 = (x - bx) * (x - bx) + (y - by) * (y - by);
                let min_gap = blob.radius_px + SPECK_RADIUS + 2.0;
                d2 > min_gap * min_gap
            });
            if clear {
                specks.push((x, y));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(CoreError::SpecOutOfBounds(
                "could not place an ndi speck clear of the tumour blobs".into(),
            ));
        }
    }
    Ok(specks)
}

/// Renders one slide: feature raster, label mask, and the analytic tumour
/// depth in µm. Identical specs produce identical bytes.
pub fn generate_slide(spec: &SynthSpec) -> Result<(RgbRaster, LabelMask, f64)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let specks = place_specks(spec, &mut rng)?;

    let blob_centers: Vec<(f64, f64, f64)> = spec
        .tumour_blobs
        .iter()
        .map(|b| {
            let (x, y) = spec.blob_center(b);
            (x, y, b.radius_px)
        })
        .collect();
    let surface: Vec<f64> = (0..spec.width).map(|x| spec.surface(x as f64)).collect();

    let mut labels = Vec::with_capacity(spec.width * spec.height);
    for y in 0..spec.height {
        let yf = y as f64;
        for (x, &s) in surface.iter().enumerate() {
            let class = if yf < s {
                TissueClass::Background
            } else if yf < s + spec.epidermis_thickness_px {
                TissueClass::Epidermis
            } else {
                let xf = x as f64;
                let inside = |cx: f64, cy: f64, r: f64| {
                    (xf - cx) * (xf - cx) + (yf - cy) * (yf - cy) <= r * r
                };
                if blob_centers.iter().any(|&(cx, cy, r)| inside(cx, cy, r)) {
                    TissueClass::Tumour
                } else if specks.iter().any(|&(cx, cy)| inside(cx, cy, SPECK_RADIUS)) {
                    TissueClass::Ndi
                } else {
                    TissueClass::Dermis
                }
            };
            labels.push(class.id());
        }
    }
    let mask = LabelMask::new(spec.width, spec.height, labels)?;

    let noise = Normal::new(0.0, spec.texture_noise * 255.0)
        .map_err(|e| CoreError::SpecOutOfBounds(e.to_string()))?;
    let mut pixels = Vec::with_capacity(spec.width * spec.height * 3);
    for &id in &mask.labels {
        for &base in &BASE_COLORS[id as usize] {
            let v = base + noise.sample(&mut rng);
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    let raster = RgbRaster::new(spec.width, spec.height, pixels, spec.microns_per_pixel)?;

    Ok((raster, mask, analytic_breslow(spec)))
}

/// Per-slide variation of a base spec: fresh seed, shifted surface phase,
/// and jittered blob geometry, all drawn from the master stream.
fn randomized_spec(base: &SynthSpec, rng: &mut ChaCha8Rng) -> SynthSpec {
    let mut spec = base.clone();
    spec.seed = rng.gen();
    spec.surface_waviness.phase = rng.gen_range(0.0..TAU);

    let ceiling = spec.junction_ceiling();
    let r_cap = ((spec.height as f64 - 2.0 - ceiling) / 2.0).min(spec.width as f64 / 2.0 - 2.0);
    for blob in &mut spec.tumour_blobs {
        let r = (blob.radius_px * rng.gen_range(0.8..1.2)).clamp(1.0, r_cap);
        let depth_cap = spec.height as f64 - 2.0 - ceiling - r;
        let depth = (blob.depth_px * rng.gen_range(0.8..1.25)).clamp(r, depth_cap.max(r));
        let jitter = rng.gen_range(-(spec.width as f64) / 16.0..spec.width as f64 / 16.0);
        blob.radius_px = r;
        blob.depth_px = depth;
        blob.center_x = (blob.center_x + jitter).clamp(r + 1.0, spec.width as f64 - 2.0 - r);
    }
    spec
}

/// Generates `n_slides` slides (one synthetic patient each), writes feature,
/// mask, and metadata files plus a `slides.jsonl` manifest under `out_dir`,
/// and assigns patient-level splits.
pub fn generate_dataset(
    n_slides: usize,
    base_spec: &SynthSpec,
    seed: u64,
    ratios: (f64, f64, f64),
    out_dir: &Path,
) -> Result<Vec<SlideRecord>> {
    if n_slides < 3 {
        return Err(CoreError::InsufficientPatients {
            needed: 3,
            found: n_slides,
        });
    }
    base_spec.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_slides);
    for i in 0..n_slides {
        let spec = randomized_spec(base_spec, &mut rng);
        let (raster, mask, _) = generate_slide(&spec)?;

        let slide_id = format!("slide_{i:03}");
        let patient_id = format!("case_{i:03}");
        let feature_path = out_dir.join(format!("{slide_id}.png"));
        let label_path = out_dir.join(format!("{slide_id}_mask.png"));
        save_raster(&feature_path, &raster)?;
        save_mask(&label_path, &mask)?;
        crate::raster::save_meta(
            &feature_path,
            &SlideMeta {
                slide_id: slide_id.clone(),
                patient_id: patient_id.clone(),
                microns_per_pixel: spec.microns_per_pixel,
            },
        )?;
        records.push(SlideRecord {
            slide_id,
            patient_id,
            feature_path,
            label_path,
            split: None,
        });
    }

    let records = assign_splits(records, ratios, seed)?;
    save_slide_manifest(&out_dir.join("slides.jsonl"), &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::class_histogram;
    use crate::split::Split;

    fn flat_spec() -> SynthSpec {
        SynthSpec {
            width: 256,
            height: 256,
            surface_y_px: 100.0,
            epidermis_thickness_px: 20.0,
            surface_waviness: SurfaceWave {
                amplitude_px: 0.0,
                period_px: 128.0,
                phase: 0.0,
            },
            tumour_blobs: vec![TumourBlob {
                center_x: 128.0,
                depth_px: 40.0,
                radius_px: 40.0,
            }],
            ndi_specks: 0,
            texture_noise: 0.02,
            microns_per_pixel: 0.25,
            seed: 99,
        }
    }

    #[test]
    fn tangent_blob_matches_closed_form_depth() {
        let spec = flat_spec();
        let (_, _, breslow) = generate_slide(&spec).unwrap();
        assert!((breslow - 25.0).abs() < 1e-6, "got {breslow}");
    }

    #[test]
    fn no_blobs_means_no_tumour_and_zero_depth() {
        let mut spec = flat_spec();
        spec.tumour_blobs.clear();
        let (_, mask, breslow) = generate_slide(&spec).unwrap();
        assert_eq!(breslow, 0.0);
        assert_eq!(class_histogram(&mask)[TissueClass::Tumour as usize], 0);
    }

    #[test]
    fn identical_specs_render_identical_slides() {
        let mut spec = flat_spec();
        spec.ndi_specks = 5;
        spec.surface_waviness.amplitude_px = 6.0;
        let (r1, m1, b1) = generate_slide(&spec).unwrap();
        let (r2, m2, b2) = generate_slide(&spec).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        assert_eq!(b1, b2);
    }

    #[test]
    fn requested_classes_all_appear() {
        let mut spec = flat_spec();
        spec.ndi_specks = 4;
        let (_, mask, _) = generate_slide(&spec).unwrap();
        let hist = class_histogram(&mask);
        for class in TissueClass::ALL {
            assert!(hist[class as usize] > 0, "{} missing", class.name());
        }
    }

    #[test]
    fn every_tumour_pixel_lies_inside_a_declared_blob() {
        let mut spec = flat_spec();
        spec.surface_waviness.amplitude_px = 8.0;
        spec.tumour_blobs.push(TumourBlob {
            center_x: 60.0,
            depth_px: 35.0,
            radius_px: 25.0,
        });
        let (_, mask, _) = generate_slide(&spec).unwrap();

        for y in 0..mask.height {
            for x in 0..mask.width {
                if mask.get(x, y) != TissueClass::Tumour {
                    continue;
                }
                let inside = spec.tumour_blobs.iter().any(|b| {
                    let (cx, cy) = spec.blob_center(b);
                    let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                    dx * dx + dy * dy <= b.radius_px * b.radius_px
                });
                assert!(inside, "stray tumour pixel at ({x}, {y})");
            }
        }
    }

    #[test]
    fn columns_are_layered_background_epidermis_tissue() {
        let mut spec = flat_spec();
        spec.surface_waviness.amplitude_px = 8.0;
        spec.ndi_specks = 4;
        let (_, mask, _) = generate_slide(&spec).unwrap();

        for x in 0..mask.width {
            let column: Vec<TissueClass> = (0..mask.height).map(|y| mask.get(x, y)).collect();
            let first_epi = column.iter().position(|&c| c == TissueClass::Epidermis).unwrap();
            let first_deep = column
                .iter()
                .position(|&c| !matches!(c, TissueClass::Background | TissueClass::Epidermis))
                .unwrap();
            assert!(column[..first_epi].iter().all(|&c| c == TissueClass::Background));
            assert!(column[first_epi..first_deep].iter().all(|&c| c == TissueClass::Epidermis));
            assert!(column[first_deep..]
                .iter()
                .all(|&c| !matches!(c, TissueClass::Background | TissueClass::Epidermis)));
        }
    }

    /// Column-wise scan of the rendered mask; the analytic value must agree
    /// within one pixel on flat-surface specs.
    #[test]
    fn analytic_depth_matches_mask_scan_on_flat_surface() {
        let mut spec = flat_spec();
        spec.tumour_blobs.push(TumourBlob {
            center_x: 50.0,
            depth_px: 60.0,
            radius_px: 20.0,
        });
        let (_, mask, breslow) = generate_slide(&spec).unwrap();

        let mut deepest = 0.0f64;
        for x in 0..mask.width {
            let interface = (0..mask.height)
                .position(|y| mask.get(x, y) != TissueClass::Background)
                .unwrap() as f64;
            for y in 0..mask.height {
                if mask.get(x, y) == TissueClass::Tumour {
                    deepest = deepest.max(y as f64 - interface);
                }
            }
        }
        let scanned_um = deepest * spec.microns_per_pixel;
        assert!(
            (breslow - scanned_um).abs() <= 1.0 * spec.microns_per_pixel,
            "analytic {breslow} vs scanned {scanned_um}"
        );
    }

    #[test]
    fn out_of_bounds_specs_are_rejected() {
        let mut spec = flat_spec();
        spec.tumour_blobs[0].center_x = 250.0;
        assert!(matches!(generate_slide(&spec), Err(CoreError::SpecOutOfBounds(_))));

        let mut spec = flat_spec();
        spec.tumour_blobs[0].depth_px = 200.0;
        assert!(matches!(generate_slide(&spec), Err(CoreError::SpecOutOfBounds(_))));

        let mut spec = flat_spec();
        spec.tumour_blobs[0].depth_px = 10.0;
        assert!(matches!(generate_slide(&spec), Err(CoreError::SpecOutOfBounds(_))));

        let mut spec = flat_spec();
        spec.surface_y_px = 4.0;
        spec.surface_waviness.amplitude_px = 6.0;
        assert!(matches!(generate_slide(&spec), Err(CoreError::SpecOutOfBounds(_))));
    }

    #[test]
    fn dataset_generation_writes_files_and_splits() {
        let dir = tempfile::tempdir().unwrap();
        let records = generate_dataset(10, &flat_spec(), 7, (0.70, 0.15, 0.15), dir.path()).unwrap();

        assert_eq!(records.len(), 10);
        for rec in &records {
            assert!(rec.feature_path.exists());
            assert!(rec.label_path.exists());
            assert!(crate::raster::meta_path(&rec.feature_path).exists());
            assert!(rec.split.is_some());
        }
        assert!(dir.path().join("slides.jsonl").exists());
    }

    #[test]
    fn three_slides_split_one_each() {
        let dir = tempfile::tempdir().unwrap();
        let records = generate_dataset(3, &flat_spec(), 7, (0.34, 0.33, 0.33), dir.path()).unwrap();
        let count = |s: Split| records.iter().filter(|r| r.split == Some(s)).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (1, 1, 1));
    }

    #[test]
    fn fixed_seed_reproduces_the_manifest() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = generate_dataset(5, &flat_spec(), 42, (0.6, 0.2, 0.2), dir_a.path()).unwrap();
        let b = generate_dataset(5, &flat_spec(), 42, (0.6, 0.2, 0.2), dir_b.path()).unwrap();

        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.slide_id, rb.slide_id);
            assert_eq!(ra.patient_id, rb.patient_id);
            assert_eq!(ra.split, rb.split);
            assert_eq!(
                std::fs::read(&ra.feature_path).unwrap(),
                std::fs::read(&rb.feature_path).unwrap()
            );
            assert_eq!(
                std::fs::read(&ra.label_path).unwrap(),
                std::fs::read(&rb.label_path).unwrap()
            );
        }
    }

    #[test]
    fn tiny_datasets_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            generate_dataset(2, &flat_spec(), 7, (0.34, 0.33, 0.33), dir.path()),
            Err(CoreError::InsufficientPatients { .. })
        ));
    }
}
