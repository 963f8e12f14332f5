//! Eyeglass-corpus construction: background segmentation, non-parametric
//! texture synthesis onto the fixed silhouette, printable-color
//! preprocessing, and the synthetic desk-scale corpora (frame textures and
//! parametric faces) used when no scraped data is supplied.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{AgnError, Result};
use crate::image::{Image, Mask};
use crate::physical::{map_to_gamut, GamutHull};
use crate::scalar::Scalar;

pub const PATCH_HEIGHT: usize = 64;
pub const PATCH_WIDTH: usize = 176;

/// Procedural 64x176 eyeglass silhouette: two rounded lens rims joined by a
/// bridge, with temple stubs at the outer edges.
pub fn default_silhouette() -> Mask {
    let rim = |r: f64, c: f64, cr: f64, cc: f64, a: f64, b: f64| -> bool {
        // Superellipse ring (exponent 3 rounds the corners).
        let v = |ha: f64, hb: f64| {
            ((r - cr) / hb).abs().powi(3) + ((c - cc) / ha).abs().powi(3)
        };
        v(a, b) <= 1.0 && v(a - 7.0, b - 7.0) > 1.0
    };
    Mask::from_fn(PATCH_HEIGHT, PATCH_WIDTH, |ri, ci| {
        let (r, c) = (ri as f64, ci as f64);
        let left = rim(r, c, 32.0, 45.0, 36.0, 26.0);
        let right = rim(r, c, 32.0, 131.0, 36.0, 26.0);
        let bridge = (26.0..=34.0).contains(&r) && (76.0..=100.0).contains(&c);
        let stub_l = (24.0..=32.0).contains(&r) && c <= 10.0;
        let stub_r = (24.0..=32.0).contains(&r) && c >= 166.0;
        left || right || bridge || stub_l || stub_r
    })
    .expect("silhouette is nonempty")
}

/// Threshold segmentation of a frame photographed on a light background:
/// mask is true where the darkest channel falls below `white_threshold`,
/// keeping only the largest connected component.
pub fn segment_frames<F: Scalar>(image: &Image<F>, white_threshold: f64) -> Result<Mask> {
    let (h, w) = (image.height(), image.width());
    let mut dark = Array2::from_elem((h, w), false);
    for r in 0..h {
        for c in 0..w {
            let min_ch = (0..image.channels())
                .map(|ch| image.data()[[r, c, ch]].to_f64_lossy())
                .fold(f64::INFINITY, f64::min);
            dark[[r, c]] = min_ch < white_threshold;
        }
    }
    if !dark.iter().any(|&b| b) {
        return Err(AgnError::EmptySegmentation);
    }
    // Largest 4-connected component.
    let mut labels = Array2::from_elem((h, w), usize::MAX);
    let mut sizes: Vec<usize> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !dark[[r, c]] || labels[[r, c]] != usize::MAX {
                continue;
            }
            let id = sizes.len();
            let mut size = 0usize;
            let mut stack = vec![(r, c)];
            labels[[r, c]] = id;
            while let Some((rr, cc)) = stack.pop() {
                size += 1;
                let mut push = |nr: usize, nc: usize, labels: &mut Array2<usize>| {
                    if dark[[nr, nc]] && labels[[nr, nc]] == usize::MAX {
                        labels[[nr, nc]] = id;
                        stack.push((nr, nc));
                    }
                };
                if rr > 0 {
                    push(rr - 1, cc, &mut labels);
                }
                if rr + 1 < h {
                    push(rr + 1, cc, &mut labels);
                }
                if cc > 0 {
                    push(rr, cc - 1, &mut labels);
                }
                if cc + 1 < w {
                    push(rr, cc + 1, &mut labels);
                }
            }
            sizes.push(size);
        }
    }
    let biggest = sizes
        .iter()
        .enumerate()
        .max_by_key(|&(_, &s)| s)
        .map(|(i, _)| i)
        .unwrap();
    Mask::new(Array2::from_shape_fn((h, w), |(r, c)| labels[[r, c]] == biggest))
}

/// Efros-Leung non-parametric synthesis: grow the target region pixel by
/// pixel, matching Gaussian-weighted neighborhoods against the source and
/// sampling uniformly among candidates within (1+eps) of the best SSD.
///
/// Nondeterministic across seeds by design.
pub fn synthesize_texture<F: Scalar>(
    source: &Image<F>,
    source_mask: &Mask,
    target_mask: &Mask,
    patch_window: usize,
    rng_seed: u64,
) -> Result<Image<F>> {
    const EPS: f64 = 0.1;
    if patch_window < 3 || patch_window % 2 == 0 {
        return Err(AgnError::InvalidValue(
            "window must be an odd integer >= 3".into(),
        ));
    }
    let (sh, sw) = (source.height(), source.width());
    if patch_window > sh || patch_window > sw {
        return Err(AgnError::InvalidValue(format!(
            "window {patch_window} exceeds source extent {sh}x{sw}"
        )));
    }
    if source.height() != source_mask.height() || source.width() != source_mask.width() {
        return Err(AgnError::DimensionMismatch("source vs source mask".into()));
    }
    if source_mask.count_true() == 0 {
        return Err(AgnError::EmptyInput("source mask".into()));
    }
    let half = patch_window / 2;
    let channels = source.channels();
    let (th, tw) = (target_mask.height(), target_mask.width());
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    // Gaussian neighborhood weights.
    let sigma = patch_window as f64 / 6.4;
    let mut weights = vec![0.0f64; patch_window * patch_window];
    for dr in 0..patch_window {
        for dc in 0..patch_window {
            let dy = dr as f64 - half as f64;
            let dx = dc as f64 - half as f64;
            weights[dr * patch_window + dc] = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
        }
    }

    // Flat copies of the source for fast neighborhood scans.
    let src: Vec<f64> = {
        let mut v = Vec::with_capacity(sh * sw * channels);
        for r in 0..sh {
            for c in 0..sw {
                for ch in 0..channels {
                    v.push(source.data()[[r, c, ch]].to_f64_lossy());
                }
            }
        }
        v
    };
    let src_valid: Vec<bool> = {
        let mut v = Vec::with_capacity(sh * sw);
        for r in 0..sh {
            for c in 0..sw {
                v.push(source_mask.get(r, c));
            }
        }
        v
    };
    let candidates: Vec<(usize, usize)> = (half..sh - half)
        .flat_map(|r| (half..sw - half).map(move |c| (r, c)))
        .filter(|&(r, c)| src_valid[r * sw + c])
        .collect();
    if candidates.is_empty() {
        return Err(AgnError::EmptyInput(
            "no source windows fit inside the image".into(),
        ));
    }

    let mut out = vec![0.0f64; th * tw * channels];
    let mut filled = vec![false; th * tw];

    // Seed: copy one random valid source pixel onto a target pixel nearest
    // the stencil centroid.
    let (mut cr, mut cc, mut cnt) = (0.0f64, 0.0f64, 0.0f64);
    for r in 0..th {
        for c in 0..tw {
            if target_mask.get(r, c) {
                cr += r as f64;
                cc += c as f64;
                cnt += 1.0;
            }
        }
    }
    let (cr, cc) = (cr / cnt, cc / cnt);
    let seed_target = (0..th * tw)
        .filter(|&i| target_mask.get(i / tw, i % tw))
        .min_by(|&a, &b| {
            let da = (a / tw) as f64 - cr;
            let db = (b / tw) as f64 - cr;
            let ea = (a % tw) as f64 - cc;
            let eb = (b % tw) as f64 - cc;
            (da * da + ea * ea).total_cmp(&(db * db + eb * eb))
        })
        .unwrap();
    let &(sr, sc) = &candidates[rng.gen_range(0..candidates.len())];
    for ch in 0..channels {
        out[seed_target * channels + ch] = src[(sr * sw + sc) * channels + ch];
    }
    filled[seed_target] = true;

    // Onion growth: repeatedly synthesize unfilled stencil pixels that have
    // filled neighbors, most-constrained first.
    loop {
        let mut frontier: Vec<(usize, usize)> = Vec::new(); // (neighbor count, index)
        for idx in 0..th * tw {
            if filled[idx] || !target_mask.get(idx / tw, idx % tw) {
                continue;
            }
            let (r, c) = (idx / tw, idx % tw);
            let mut n = 0usize;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr >= 0 && nc >= 0 && (nr as usize) < th && (nc as usize) < tw
                        && filled[nr as usize * tw + nc as usize]
                    {
                        n += 1;
                    }
                }
            }
            if n > 0 {
                frontier.push((n, idx));
            }
        }
        if frontier.is_empty() {
            break;
        }
        frontier.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, idx) in frontier {
            if filled[idx] {
                continue;
            }
            let (r, c) = (idx / tw, idx % tw);
            // Gather the filled part of the target neighborhood.
            let mut best = f64::INFINITY;
            let mut scored: Vec<(f64, usize)> = Vec::with_capacity(candidates.len());
            for (ci, &(scr, scc)) in candidates.iter().enumerate() {
                let mut ssd = 0.0f64;
                let mut wsum = 0.0f64;
                for dr in 0..patch_window {
                    let tr = r as i64 + dr as i64 - half as i64;
                    if tr < 0 || tr >= th as i64 {
                        continue;
                    }
                    let srow = (scr + dr - half) * sw;
                    for dc in 0..patch_window {
                        let tc = c as i64 + dc as i64 - half as i64;
                        if tc < 0 || tc >= tw as i64 {
                            continue;
                        }
                        let t_idx = tr as usize * tw + tc as usize;
                        if !filled[t_idx] {
                            continue;
                        }
                        let s_idx = srow + (scc + dc - half);
                        if !src_valid[s_idx] {
                            continue;
                        }
                        let w = weights[dr * patch_window + dc];
                        for ch in 0..channels {
                            let d = out[t_idx * channels + ch] - src[s_idx * channels + ch];
                            ssd += w * d * d;
                        }
                        wsum += w;
                    }
                }
                if wsum > 0.0 {
                    let score = ssd / wsum;
                    scored.push((score, ci));
                    if score < best {
                        best = score;
                    }
                }
            }
            if scored.is_empty() {
                // No overlap information; copy any valid source pixel.
                let &(sr, sc) = &candidates[rng.gen_range(0..candidates.len())];
                for ch in 0..channels {
                    out[idx * channels + ch] = src[(sr * sw + sc) * channels + ch];
                }
                filled[idx] = true;
                continue;
            }
            let cutoff = best * (1.0 + EPS) + 1e-12;
            let pool: Vec<usize> = scored
                .iter()
                .filter(|&&(s, _)| s <= cutoff)
                .map(|&(_, ci)| ci)
                .collect();
            let (sr, sc) = candidates[pool[rng.gen_range(0..pool.len())]];
            for ch in 0..channels {
                out[idx * channels + ch] = src[(sr * sw + sc) * channels + ch];
            }
            filled[idx] = true;
        }
    }

    let mut data = Array3::<F>::zeros((th, tw, channels));
    for r in 0..th {
        for c in 0..tw {
            for ch in 0..channels {
                let v = if target_mask.get(r, c) {
                    out[(r * tw + c) * channels + ch]
                } else {
                    1.0 // white background outside the stencil
                };
                data[[r, c, ch]] = F::from_f64(v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(Image::from_data_unchecked(data))
}

/// Provenance of one corpus image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub file: String,
    pub source: String,
    pub seed: u64,
    pub gamut_mapped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub entries: Vec<CorpusEntry>,
    pub silhouette_file: String,
}

/// Gamut-project every patch and label the lot as one artifact class.
pub fn make_printable_dataset<F: Scalar>(
    images: &[Image<F>],
    hull: &GamutHull,
    silhouette: &Mask,
) -> Result<LabeledDataset<F>> {
    if images.is_empty() {
        return Err(AgnError::EmptyInput("corpus images".into()));
    }
    let mut items = Vec::with_capacity(images.len());
    for img in images {
        if img.height() != silhouette.height() || img.width() != silhouette.width() {
            return Err(AgnError::DimensionMismatch(format!(
                "patch {}x{} vs silhouette {}x{}",
                img.height(),
                img.width(),
                silhouette.height(),
                silhouette.width()
            )));
        }
        items.push((map_to_gamut(img, hull)?, 0usize));
    }
    LabeledDataset::new(items, 1)
}

/// Procedural frame texture styles for desk-scale corpora.
fn texture_value(style: usize, r: f64, c: f64, p: &[f64; 6]) -> [f64; 3] {
    match style % 5 {
        0 => [p[0], p[1], p[2]], // solid
        1 => {
            // Stripes at an angle.
            let t = (r * p[3] + c * p[4]) * 0.35;
            if t.sin() > 0.0 {
                [p[0], p[1], p[2]]
            } else {
                [p[3].fract(), p[4].fract(), p[5].fract()]
            }
        }
        2 => {
            // Horizontal gradient between two colors.
            let t = c / PATCH_WIDTH as f64;
            [
                p[0] * (1.0 - t) + p[3].fract() * t,
                p[1] * (1.0 - t) + p[4].fract() * t,
                p[2] * (1.0 - t) + p[5].fract() * t,
            ]
        }
        3 => {
            // Tortoise-shell blobs.
            let v = ((r * 0.9 + p[3] * 7.0).sin() * (c * 0.7 + p[4] * 9.0).cos()).abs();
            if v > 0.55 {
                [0.10 + 0.2 * p[0], 0.06 + 0.1 * p[1], 0.02]
            } else {
                [0.45 + 0.3 * p[0], 0.25 + 0.2 * p[1], 0.08 + 0.1 * p[2]]
            }
        }
        _ => {
            // Speckle.
            let h = ((r * 12.9898 + c * 78.233 + p[5] * 43.7).sin() * 43758.5453).fract().abs();
            let base = [p[0], p[1], p[2]];
            [
                (base[0] + 0.25 * h).min(1.0),
                (base[1] + 0.25 * h).min(1.0),
                (base[2] + 0.25 * h).min(1.0),
            ]
        }
    }
}

/// Synthetic eyeglass corpus: `count` textured frames on the silhouette,
/// white background.
pub fn synthetic_eyeglass_corpus<F: Scalar>(
    count: usize,
    silhouette: &Mask,
    rng_seed: u64,
) -> Vec<Image<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    (0..count)
        .map(|i| {
            let p: [f64; 6] = [
                rng.gen(),
                rng.gen(),
                rng.gen(),
                rng.gen::<f64>() * 2.0 + 0.2,
                rng.gen::<f64>() * 2.0 + 0.2,
                rng.gen(),
            ];
            let style = i;
            let mut data = Array3::<F>::zeros((silhouette.height(), silhouette.width(), 3));
            for r in 0..silhouette.height() {
                for c in 0..silhouette.width() {
                    let v = if silhouette.get(r, c) {
                        texture_value(style, r as f64, c as f64, &p)
                    } else {
                        [1.0, 1.0, 1.0]
                    };
                    for ch in 0..3 {
                        data[[r, c, ch]] = F::from_f64(v[ch].clamp(0.0, 1.0));
                    }
                }
            }
            Image::from_data_unchecked(data)
        })
        .collect()
}

/// Identity parameters for the parametric face sketcher.
#[derive(Debug, Clone)]
struct FaceIdentity {
    skin: [f64; 3],
    hair: [f64; 3],
    hair_len: f64,
    eye_color: [f64; 3],
    eye_radius: f64,
    brow_drop: f64,
    brow_thick: f64,
    mouth_width: f64,
    mouth_curve: f64,
    nose_len: f64,
    face_aspect: f64,
}

fn identity_params(rng: &mut ChaCha8Rng) -> FaceIdentity {
    FaceIdentity {
        skin: [
            0.55 + 0.4 * rng.gen::<f64>(),
            0.40 + 0.35 * rng.gen::<f64>(),
            0.28 + 0.3 * rng.gen::<f64>(),
        ],
        hair: [
            0.05 + 0.5 * rng.gen::<f64>(),
            0.03 + 0.35 * rng.gen::<f64>(),
            0.02 + 0.25 * rng.gen::<f64>(),
        ],
        hair_len: 0.10 + 0.16 * rng.gen::<f64>(),
        eye_color: [
            0.05 + 0.3 * rng.gen::<f64>(),
            0.1 + 0.4 * rng.gen::<f64>(),
            0.2 + 0.6 * rng.gen::<f64>(),
        ],
        eye_radius: 0.030 + 0.018 * rng.gen::<f64>(),
        brow_drop: 0.035 + 0.03 * rng.gen::<f64>(),
        brow_thick: 0.008 + 0.012 * rng.gen::<f64>(),
        mouth_width: 0.10 + 0.08 * rng.gen::<f64>(),
        mouth_curve: 0.05 * (rng.gen::<f64>() - 0.3),
        nose_len: 0.08 + 0.07 * rng.gen::<f64>(),
        face_aspect: 0.78 + 0.18 * rng.gen::<f64>(),
    }
}

/// Draw one face sample. Eye centers sit at (0.443*size) rows and
/// (0.308/0.692)*size columns so the canonical eyeglass alignment covers
/// them.
fn draw_face<F: Scalar>(id: &FaceIdentity, size: usize, rng: &mut ChaCha8Rng) -> Image<F> {
    let s = size as f64;
    let jx = (rng.gen::<f64>() - 0.5) * 0.04 * s;
    let jy = (rng.gen::<f64>() - 0.5) * 0.04 * s;
    let light = 0.85 + 0.3 * rng.gen::<f64>();
    let bg = [0.82 + 0.1 * rng.gen::<f64>(), 0.84, 0.88];
    let (ex1, ex2) = (0.308 * s + jx, 0.692 * s + jx);
    let ey = 0.443 * s + jy;
    let cx = 0.5 * s + jx;
    let cy = 0.52 * s + jy;
    let fw = 0.36 * s * id.face_aspect;
    let fh = 0.42 * s;
    let mut data = Array3::<F>::zeros((size, size, 3));
    for r in 0..size {
        for c in 0..size {
            let (y, x) = (r as f64, c as f64);
            let mut px = bg;
            let in_face = ((x - cx) / fw).powi(2) + ((y - cy) / fh).powi(2) <= 1.0;
            if in_face {
                // Vertical shading over the skin tone.
                let shade = 1.0 - 0.12 * ((y - cy) / fh).max(0.0);
                px = [id.skin[0] * shade, id.skin[1] * shade, id.skin[2] * shade];
                // Hair band across the forehead.
                if y < cy - fh * (1.0 - 2.0 * id.hair_len) {
                    px = id.hair;
                }
                // Brows.
                for ex in [ex1, ex2] {
                    if (y - (ey - id.brow_drop * s)).abs() < id.brow_thick * s
                        && (x - ex).abs() < 0.075 * s
                    {
                        px = [id.hair[0] * 0.7, id.hair[1] * 0.7, id.hair[2] * 0.7];
                    }
                }
                // Eyes: white with a colored pupil.
                for ex in [ex1, ex2] {
                    let d2 = (x - ex).powi(2) + (y - ey).powi(2);
                    let er = id.eye_radius * s;
                    if d2 <= (er * 1.6).powi(2) {
                        px = [0.93, 0.93, 0.93];
                    }
                    if d2 <= er.powi(2) {
                        px = id.eye_color;
                    }
                    if d2 <= (er * 0.45).powi(2) {
                        px = [0.05, 0.05, 0.05];
                    }
                }
                // Nose.
                if (x - cx).abs() < 0.012 * s
                    && y > ey + 0.02 * s
                    && y < ey + id.nose_len * s + 0.02 * s
                {
                    px = [px[0] * 0.82, px[1] * 0.82, px[2] * 0.82];
                }
                // Mouth with curvature.
                let mouth_y = cy + 0.26 * fh + id.mouth_curve * s * ((x - cx) / (0.2 * s)).powi(2);
                if (y - mouth_y).abs() < 0.016 * s && (x - cx).abs() < id.mouth_width * s {
                    px = [0.62, 0.18, 0.2];
                }
            } else if y < 0.30 * s + 8.0 * ((x - cx) / s).powi(2) * s * id.hair_len {
                // Hair outside the face oval.
                px = id.hair;
            }
            for ch in 0..3 {
                let noisy = (px[ch] * light + 0.02 * (rng.gen::<f64>() - 0.5)).clamp(0.0, 1.0);
                data[[r, c, ch]] = F::from_f64(noisy);
            }
        }
    }
    Image::from_data_unchecked(data)
}

/// Desk-scale face dataset: `per_identity` samples for each of
/// `identities` parametric subjects, square RGB images of `size` pixels.
pub fn synthetic_face_dataset<F: Scalar>(
    identities: usize,
    per_identity: usize,
    size: usize,
    rng_seed: u64,
) -> Result<LabeledDataset<F>> {
    if identities == 0 || per_identity == 0 {
        return Err(AgnError::InvalidValue(
            "identities and per_identity must be positive".into(),
        ));
    }
    let mut items = Vec::with_capacity(identities * per_identity);
    for id_idx in 0..identities {
        let mut id_rng = ChaCha8Rng::seed_from_u64(rng_seed.wrapping_add(id_idx as u64 * 7919));
        let id = identity_params(&mut id_rng);
        for _ in 0..per_identity {
            items.push((draw_face::<F>(&id, size, &mut id_rng), id_idx));
        }
    }
    LabeledDataset::new(items, identities)
}

/// Canonical patch placement: scale 64x176 by size/224 and center it over
/// the eye line drawn by [`synthetic_face_dataset`].
pub fn canonical_alignment(face_size: usize) -> crate::geometry::Homography {
    let s = face_size as f64 / 224.0;
    let dc = (face_size as f64 - PATCH_WIDTH as f64 * s) / 2.0;
    let dr = 0.30 * face_size as f64;
    crate::geometry::Homography::scale_then_translate(s, dr, dc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silhouette_has_expected_structure() {
        let m = default_silhouette();
        assert_eq!((m.height(), m.width()), (PATCH_HEIGHT, PATCH_WIDTH));
        let frac = m.count_true() as f64 / (PATCH_HEIGHT * PATCH_WIDTH) as f64;
        assert!(frac > 0.1 && frac < 0.5, "mask fraction {frac}");
        // Bridge row connects the lenses.
        assert!(m.get(30, 88));
        // Lens interiors are open.
        assert!(!m.get(32, 45));
        assert!(!m.get(32, 131));
    }

    #[test]
    fn segment_rejects_pure_white() {
        let img = Image::<f32>::filled(8, 8, 3, 1.0).unwrap();
        assert!(matches!(
            segment_frames(&img, 0.9),
            Err(AgnError::EmptySegmentation)
        ));
    }

    #[test]
    fn segment_recovers_black_rectangle() {
        let img = Image::<f32>::from_data_unchecked(Array3::from_shape_fn(
            (16, 16, 3),
            |(r, c, _)| {
                if (4..8).contains(&r) && (3..12).contains(&c) {
                    0.0
                } else {
                    1.0
                }
            },
        ));
        let m = segment_frames(&img, 0.9).unwrap();
        for r in 0..16 {
            for c in 0..16 {
                assert_eq!(m.get(r, c), (4..8).contains(&r) && (3..12).contains(&c));
            }
        }
    }

    #[test]
    fn segment_keeps_largest_component_only() {
        let img = Image::<f32>::from_data_unchecked(Array3::from_shape_fn(
            (16, 16, 3),
            |(r, c, _)| {
                let big = (2..10).contains(&r) && (2..10).contains(&c);
                let small = (12..14).contains(&r) && (12..14).contains(&c);
                if big || small {
                    0.0
                } else {
                    1.0
                }
            },
        ));
        let m = segment_frames(&img, 0.9).unwrap();
        assert_eq!(m.count_true(), 64);
        assert!(!m.get(12, 12));
    }

    #[test]
    fn constant_source_synthesizes_constant_texture() {
        let source = Image::<f64>::filled(12, 12, 3, 0.3).unwrap();
        let source_mask = Mask::from_fn(12, 12, |_, _| true).unwrap();
        let target_mask = Mask::from_fn(10, 10, |r, c| r >= 2 && c >= 2 && r < 8 && c < 8).unwrap();
        let out = synthesize_texture(&source, &source_mask, &target_mask, 5, 3).unwrap();
        for r in 0..10 {
            for c in 0..10 {
                let expect = if target_mask.get(r, c) { 0.3 } else { 1.0 };
                assert!((out.data()[[r, c, 0]] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn striped_source_preserves_histogram() {
        // Vertical two-color stripes of period 4.
        let source = Image::<f64>::from_data_unchecked(Array3::from_shape_fn(
            (24, 24, 3),
            |(_, c, ch)| {
                if (c / 2) % 2 == 0 {
                    [0.9, 0.1, 0.1][ch]
                } else {
                    [0.1, 0.1, 0.9][ch]
                }
            },
        ));
        let all = Mask::from_fn(24, 24, |_, _| true).unwrap();
        let target_mask = Mask::from_fn(20, 20, |_, _| true).unwrap();
        let out = synthesize_texture(&source, &all, &target_mask, 5, 9).unwrap();
        // Histogram oracle: fraction of red-dominant pixels within 10% of
        // the source's 50%.
        let red_frac = |img: &Image<f64>, h: usize, w: usize| {
            let mut red = 0usize;
            for r in 0..h {
                for c in 0..w {
                    if img.data()[[r, c, 0]] > img.data()[[r, c, 2]] {
                        red += 1;
                    }
                }
            }
            red as f64 / (h * w) as f64
        };
        let src_frac = red_frac(&source, 24, 24);
        let out_frac = red_frac(&out, 20, 20);
        assert!((src_frac - out_frac).abs() < 0.1, "{src_frac} vs {out_frac}");
    }

    #[test]
    fn different_seeds_differ_on_nonconstant_source() {
        let source = Image::<f64>::from_data_unchecked(Array3::from_shape_fn(
            (16, 16, 3),
            |(r, c, _)| ((r * 5 + c * 3) % 7) as f64 / 7.0,
        ));
        let all = Mask::from_fn(16, 16, |_, _| true).unwrap();
        let target = Mask::from_fn(12, 12, |_, _| true).unwrap();
        let a = synthesize_texture(&source, &all, &target, 5, 1).unwrap();
        let b = synthesize_texture(&source, &all, &target, 5, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn window_larger_than_source_rejected() {
        let source = Image::<f64>::filled(8, 8, 3, 0.5).unwrap();
        let all = Mask::from_fn(8, 8, |_, _| true).unwrap();
        let target = Mask::from_fn(8, 8, |_, _| true).unwrap();
        assert!(synthesize_texture(&source, &all, &target, 9, 1).is_err());
    }

    #[test]
    fn printable_dataset_identity_under_full_cube() {
        let sil = default_silhouette();
        let corpus = synthetic_eyeglass_corpus::<f64>(3, &sil, 5);
        let cube: Vec<[f64; 3]> = (0..8)
            .map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64])
            .collect();
        let hull = crate::physical::build_gamut_hull(&cube).unwrap();
        let ds = make_printable_dataset(&corpus, &hull, &sil).unwrap();
        assert_eq!(ds.len(), 3);
        for (i, (img, _)) in ds.items().iter().enumerate() {
            assert_eq!(img, &corpus[i]);
        }
    }

    #[test]
    fn printable_dataset_projects_into_hull_and_is_idempotent() {
        let sil = default_silhouette();
        let corpus = synthetic_eyeglass_corpus::<f64>(2, &sil, 6);
        // A shrunken cube so some colors fall outside.
        let hull = crate::physical::build_gamut_hull(&[
            [0.1, 0.1, 0.1],
            [0.9, 0.1, 0.1],
            [0.1, 0.9, 0.1],
            [0.1, 0.1, 0.9],
            [0.9, 0.9, 0.1],
            [0.9, 0.1, 0.9],
            [0.1, 0.9, 0.9],
            [0.9, 0.9, 0.9],
        ])
        .unwrap();
        let ds = make_printable_dataset(&corpus, &hull, &sil).unwrap();
        for (img, _) in ds.items() {
            for r in (0..img.height()).step_by(7) {
                for c in (0..img.width()).step_by(13) {
                    let p = [
                        img.data()[[r, c, 0]],
                        img.data()[[r, c, 1]],
                        img.data()[[r, c, 2]],
                    ];
                    assert!(hull.contains(p, 1e-6));
                }
            }
        }
        let images: Vec<_> = ds.items().iter().map(|(i, _)| i.clone()).collect();
        let again = make_printable_dataset(&images, &hull, &sil).unwrap();
        for (a, b) in ds.items().iter().zip(again.items()) {
            assert_eq!(a.0, b.0);
        }
    }

    #[test]
    fn face_dataset_shapes_and_labels() {
        let ds = synthetic_face_dataset::<f32>(3, 4, 64, 1).unwrap();
        assert_eq!(ds.len(), 12);
        assert_eq!(ds.class_count(), 3);
        for (img, label) in ds.items() {
            assert_eq!((img.height(), img.width(), img.channels()), (64, 64, 3));
            assert!(*label < 3);
        }
    }

    #[test]
    fn canonical_alignment_keeps_patch_inside_face() {
        let m = default_silhouette();
        let h = canonical_alignment(112);
        let plan = crate::overlay::OverlayPlan::new(&m, Some(&h), 112, 112);
        assert!(plan.is_ok());
    }
}
