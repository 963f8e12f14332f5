//! Physical-realizability math: printable-gamut projection, non-printability
//! scoring, and degree-3 polynomial luminance maps that stay differentiable
//! inside attack training.

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{AgnError, Result};
use crate::image::{Image, Mask};
use crate::scalar::Scalar;

const HULL_EPS: f64 = 1e-9;

type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Convex polytope in RGB space: the colors a printer can reproduce.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GamutHull {
    /// Extreme points of the sample cloud.
    pub vertices: Vec<Vec3>,
    /// Triangular facets as vertex indices, outward-oriented.
    pub facets: Vec<[usize; 3]>,
}

#[derive(Debug, Clone)]
struct HalfFacet {
    idx: [usize; 3],
    normal: Vec3, // unit, outward
    offset: f64,  // n . x <= offset inside
}

/// Convex hull of >= 4 affinely independent RGB samples (quickhull).
pub fn build_gamut_hull(samples: &[Vec3]) -> Result<GamutHull> {
    if samples.len() < 4 {
        return Err(AgnError::DegenerateGeometry(format!(
            "need at least 4 gamut samples, got {}",
            samples.len()
        )));
    }
    for s in samples {
        if s.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(AgnError::InvalidValue(format!(
                "gamut sample {s:?} outside [0,1]^3"
            )));
        }
    }
    let pts = samples;
    // Initial simplex: two extremes, the point farthest from their line,
    // then the point farthest from that plane.
    let (mut i0, mut i1) = (0, 1);
    let mut best = -1.0;
    for d in 0..3 {
        let lo = (0..pts.len()).min_by(|&a, &b| pts[a][d].total_cmp(&pts[b][d])).unwrap();
        let hi = (0..pts.len()).max_by(|&a, &b| pts[a][d].total_cmp(&pts[b][d])).unwrap();
        let dist = norm(sub(pts[hi], pts[lo]));
        if dist > best {
            best = dist;
            i0 = lo;
            i1 = hi;
        }
    }
    if best < HULL_EPS {
        return Err(AgnError::DegenerateGeometry("all samples coincide".into()));
    }
    let line = sub(pts[i1], pts[i0]);
    let i2 = (0..pts.len())
        .max_by(|&a, &b| {
            let da = norm(cross(line, sub(pts[a], pts[i0])));
            let db = norm(cross(line, sub(pts[b], pts[i0])));
            da.total_cmp(&db)
        })
        .unwrap();
    if norm(cross(line, sub(pts[i2], pts[i0]))) < HULL_EPS {
        return Err(AgnError::DegenerateGeometry("samples are collinear".into()));
    }
    let plane_n = cross(line, sub(pts[i2], pts[i0]));
    let i3 = (0..pts.len())
        .max_by(|&a, &b| {
            let da = dot(plane_n, sub(pts[a], pts[i0])).abs();
            let db = dot(plane_n, sub(pts[b], pts[i0])).abs();
            da.total_cmp(&db)
        })
        .unwrap();
    if dot(plane_n, sub(pts[i3], pts[i0])).abs() < HULL_EPS * norm(plane_n).max(1.0) {
        return Err(AgnError::DegenerateGeometry("samples are coplanar".into()));
    }

    let centroid = scale(
        [
            pts[i0][0] + pts[i1][0] + pts[i2][0] + pts[i3][0],
            pts[i0][1] + pts[i1][1] + pts[i2][1] + pts[i3][1],
            pts[i0][2] + pts[i1][2] + pts[i2][2] + pts[i3][2],
        ],
        0.25,
    );
    let make_facet = |idx: [usize; 3]| -> HalfFacet {
        let n = cross(sub(pts[idx[1]], pts[idx[0]]), sub(pts[idx[2]], pts[idx[0]]));
        let len = norm(n);
        let mut normal = scale(n, 1.0 / len);
        let mut offset = dot(normal, pts[idx[0]]);
        let mut idx = idx;
        if dot(normal, centroid) > offset {
            // Flip outward.
            idx.swap(1, 2);
            normal = scale(normal, -1.0);
            offset = -offset;
        }
        HalfFacet { idx, normal, offset }
    };
    let mut facets = vec![
        make_facet([i0, i1, i2]),
        make_facet([i0, i1, i3]),
        make_facet([i0, i2, i3]),
        make_facet([i1, i2, i3]),
    ];

    // Outside sets.
    let mut outside: Vec<Vec<usize>> = facets
        .iter()
        .map(|f| {
            (0..pts.len())
                .filter(|&p| dot(f.normal, pts[p]) - f.offset > HULL_EPS)
                .collect()
        })
        .collect();

    loop {
        let Some(fi) = (0..facets.len()).find(|&i| !outside[i].is_empty()) else {
            break;
        };
        // Farthest point outside facet fi.
        let &p = outside[fi]
            .iter()
            .max_by(|&&a, &&b| {
                let da = dot(facets[fi].normal, pts[a]) - facets[fi].offset;
                let db = dot(facets[fi].normal, pts[b]) - facets[fi].offset;
                da.total_cmp(&db)
            })
            .unwrap();
        // Visible facets and their horizon (edges seen exactly once).
        let visible: Vec<usize> = (0..facets.len())
            .filter(|&i| dot(facets[i].normal, pts[p]) - facets[i].offset > HULL_EPS)
            .collect();
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for &vi in &visible {
            let idx = facets[vi].idx;
            for e in [(idx[0], idx[1]), (idx[1], idx[2]), (idx[2], idx[0])] {
                let key = (e.0.min(e.1), e.0.max(e.1));
                *edge_count.entry(key).or_insert(0) += 1;
            }
        }
        let horizon: Vec<(usize, usize)> = edge_count
            .into_iter()
            .filter(|&(_, c)| c == 1)
            .map(|(e, _)| e)
            .collect();
        // Candidate points to redistribute.
        let mut orphans: Vec<usize> = Vec::new();
        for &vi in &visible {
            orphans.extend(outside[vi].iter().copied());
        }
        orphans.sort_unstable();
        orphans.dedup();
        // Remove visible facets (descending index).
        let mut visible = visible;
        visible.sort_unstable_by(|a, b| b.cmp(a));
        for vi in visible {
            facets.swap_remove(vi);
            outside.swap_remove(vi);
        }
        // New cone facets from horizon edges to p.
        for (a, b) in horizon {
            let f = make_facet([a, b, p]);
            let out: Vec<usize> = orphans
                .iter()
                .copied()
                .filter(|&q| q != p && dot(f.normal, pts[q]) - f.offset > HULL_EPS)
                .collect();
            facets.push(f);
            outside.push(out);
        }
    }

    let mut used: Vec<usize> = facets.iter().flat_map(|f| f.idx).collect();
    used.sort_unstable();
    used.dedup();
    let remap: HashMap<usize, usize> = used.iter().enumerate().map(|(n, &o)| (o, n)).collect();
    Ok(GamutHull {
        vertices: used.iter().map(|&i| pts[i]).collect(),
        facets: facets
            .iter()
            .map(|f| [remap[&f.idx[0]], remap[&f.idx[1]], remap[&f.idx[2]]])
            .collect(),
    })
}

impl GamutHull {
    fn half_facets(&self) -> Vec<HalfFacet> {
        self.facets
            .iter()
            .map(|&idx| {
                let n = cross(
                    sub(self.vertices[idx[1]], self.vertices[idx[0]]),
                    sub(self.vertices[idx[2]], self.vertices[idx[0]]),
                );
                let normal = scale(n, 1.0 / norm(n));
                HalfFacet {
                    idx,
                    normal,
                    offset: dot(normal, self.vertices[idx[0]]),
                }
            })
            .collect()
    }

    /// Signed distance to the farthest violated facet (<= 0 inside).
    pub fn violation(&self, p: Vec3) -> f64 {
        self.half_facets()
            .iter()
            .map(|f| dot(f.normal, p) - f.offset)
            .fold(f64::MIN, f64::max)
    }

    pub fn contains(&self, p: Vec3, tol: f64) -> bool {
        self.violation(p) <= tol
    }

    /// Volume via the divergence theorem over outward-oriented facets.
    pub fn volume(&self) -> f64 {
        self.facets
            .iter()
            .map(|&[a, b, c]| {
                dot(
                    self.vertices[a],
                    cross(self.vertices[b], self.vertices[c]),
                ) / 6.0
            })
            .sum()
    }

    /// Euclidean nearest point of the hull (itself if inside).
    pub fn project(&self, p: Vec3) -> Vec3 {
        if self.contains(p, HULL_EPS) {
            return p;
        }
        let mut best = (f64::MAX, p);
        for f in &self.facets {
            let q = closest_point_on_triangle(
                p,
                self.vertices[f[0]],
                self.vertices[f[1]],
                self.vertices[f[2]],
            );
            let d = norm(sub(p, q));
            if d < best.0 {
                best = (d, q);
            }
        }
        best.1
    }
}

/// Closest point on triangle (a,b,c) to p (Ericson, Real-Time Collision
/// Detection, 5.1.5).
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return add(a, scale(ab, v));
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return add(a, scale(ac, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return add(b, scale(sub(c, b), w));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    add(add(a, scale(ab, v)), scale(ac, w))
}

/// Replace every pixel by its Euclidean nearest point in the hull.
/// Idempotent: pixels already inside pass through unchanged.
pub fn map_to_gamut<F: Scalar>(image: &Image<F>, hull: &GamutHull) -> Result<Image<F>> {
    if image.channels() != 3 {
        return Err(AgnError::DimensionMismatch(
            "gamut mapping needs an RGB image".into(),
        ));
    }
    // Memo over exact color bit patterns; generator outputs repeat colors
    // rarely but file-derived corpora repeat them heavily.
    let mut memo: HashMap<[u64; 3], Vec3> = HashMap::new();
    let (h, w) = (image.height(), image.width());
    let mut out = image.data().clone();
    for r in 0..h {
        for c in 0..w {
            let p = [
                out[[r, c, 0]].to_f64_lossy(),
                out[[r, c, 1]].to_f64_lossy(),
                out[[r, c, 2]].to_f64_lossy(),
            ];
            if hull.contains(p, HULL_EPS) {
                continue;
            }
            let key = [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()];
            let q = *memo.entry(key).or_insert_with(|| hull.project(p));
            for ch in 0..3 {
                out[[r, c, ch]] = F::from_f64(q[ch].clamp(0.0, 1.0));
            }
        }
    }
    Ok(Image::from_data_unchecked(out))
}

/// Non-printability score: per masked pixel, the product over printable
/// colors of (distance / sqrt(3)); the mean over masked pixels lies in
/// [0,1] and reaches 0 iff every masked pixel is exactly printable.
pub fn non_printability_score<F: Scalar>(
    patch: &Image<F>,
    mask: &Mask,
    printable_set: &[Vec3],
) -> Result<f64> {
    if printable_set.is_empty() {
        return Err(AgnError::EmptyInput("printable color set".into()));
    }
    if patch.channels() != 3 {
        return Err(AgnError::DimensionMismatch("patch must be RGB".into()));
    }
    if patch.height() != mask.height() || patch.width() != mask.width() {
        return Err(AgnError::DimensionMismatch(format!(
            "patch {}x{} vs mask {}x{}",
            patch.height(),
            patch.width(),
            mask.height(),
            mask.width()
        )));
    }
    let max_dist = 3.0f64.sqrt();
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..patch.height() {
        for c in 0..patch.width() {
            if !mask.get(r, c) {
                continue;
            }
            let p = [
                patch.data()[[r, c, 0]].to_f64_lossy(),
                patch.data()[[r, c, 1]].to_f64_lossy(),
                patch.data()[[r, c, 2]].to_f64_lossy(),
            ];
            let mut prod = 1.0;
            for q in printable_set {
                prod *= norm(sub(p, *q)) / max_dist;
                if prod == 0.0 {
                    break;
                }
            }
            total += prod;
            count += 1;
        }
    }
    if count == 0 {
        return Err(AgnError::EmptyInput("mask selects no pixels".into()));
    }
    Ok(total / count as f64)
}

/// Per-channel degree-3 polynomial mapping baseline RGB to RGB under one
/// luminance level: observed = a + b*x + c*x^2 + d*x^3 per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LuminanceModel {
    pub level: String,
    /// coeffs[channel] = [a, b, c, d].
    pub coeffs: [[f64; 4]; 3],
    pub residual_rms: f64,
}

impl LuminanceModel {
    pub fn identity(level: &str) -> Self {
        Self {
            level: level.to_string(),
            coeffs: [[0.0, 1.0, 0.0, 0.0]; 3],
            residual_rms: 0.0,
        }
    }

    pub fn eval_channel(&self, channel: usize, x: f64) -> f64 {
        let [a, b, c, d] = self.coeffs[channel];
        a + b * x + c * x * x + d * x * x * x
    }

    pub fn derivative_channel(&self, channel: usize, x: f64) -> f64 {
        let [_, b, c, d] = self.coeffs[channel];
        b + 2.0 * c * x + 3.0 * d * x * x
    }
}

/// Least-squares fit of per-channel cubics from (baseline, observed) pairs.
pub fn fit_ptm(pairs: &[(Vec3, Vec3)], level: &str) -> Result<LuminanceModel> {
    if pairs.len() < 4 {
        return Err(AgnError::RankDeficient(format!(
            "need at least 4 pairs per level, got {}",
            pairs.len()
        )));
    }
    let mut coeffs = [[0.0; 4]; 3];
    let mut sq_err = 0.0;
    for ch in 0..3 {
        // Normal equations for the cubic design matrix [1, x, x^2, x^3].
        let mut ata = [[0.0f64; 4]; 4];
        let mut atb = [0.0f64; 4];
        for (x, y) in pairs {
            let xv = x[ch];
            let basis = [1.0, xv, xv * xv, xv * xv * xv];
            for i in 0..4 {
                for j in 0..4 {
                    ata[i][j] += basis[i] * basis[j];
                }
                atb[i] += basis[i] * y[ch];
            }
        }
        let sol = solve4(ata, atb).ok_or_else(|| {
            AgnError::RankDeficient(format!(
                "channel {ch} design matrix is rank-deficient (too few distinct baselines)"
            ))
        })?;
        coeffs[ch] = sol;
        for (x, y) in pairs {
            let xv = x[ch];
            let pred = sol[0] + sol[1] * xv + sol[2] * xv * xv + sol[3] * xv * xv * xv;
            sq_err += (pred - y[ch]) * (pred - y[ch]);
        }
    }
    Ok(LuminanceModel {
        level: level.to_string(),
        coeffs,
        residual_rms: (sq_err / (3.0 * pairs.len() as f64)).sqrt(),
    })
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let p = a[col][col];
        for j in 0..4 {
            a[col][j] /= p;
        }
        b[col] /= p;
        for row in 0..4 {
            if row != col {
                let f = a[row][col];
                for j in 0..4 {
                    a[row][j] -= f * a[col][j];
                }
                b[row] -= f * b[col];
            }
        }
    }
    Some(b)
}

/// Per-pixel polynomial evaluation, clamped to [0,1].
pub fn apply_ptm<F: Scalar>(patch: &Image<F>, model: &LuminanceModel) -> Result<Image<F>> {
    if patch.channels() != 3 {
        return Err(AgnError::DimensionMismatch("PTM patch must be RGB".into()));
    }
    let (h, w) = (patch.height(), patch.width());
    let mut out = Array3::<F>::zeros((h, w, 3));
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                let x = patch.data()[[r, c, ch]].to_f64_lossy();
                out[[r, c, ch]] = F::from_f64(model.eval_channel(ch, x).clamp(0.0, 1.0));
            }
        }
    }
    Ok(Image::from_data_unchecked(out))
}

/// PTM on a C x H x W patch; returns output plus the per-element derivative
/// (zero where the clamp is active) for the backward pass.
pub fn apply_ptm_chw<F: Scalar>(patch: &Array3<F>, model: &LuminanceModel) -> (Array3<F>, Array3<F>) {
    let mut out = patch.clone();
    let mut deriv = Array3::<F>::zeros(patch.raw_dim());
    for ch in 0..3 {
        let mut o = out.index_axis_mut(ndarray::Axis(0), ch);
        let mut d = deriv.index_axis_mut(ndarray::Axis(0), ch);
        ndarray::Zip::from(&mut o).and(&mut d).for_each(|ov, dv| {
            let x = ov.to_f64_lossy();
            let y = model.eval_channel(ch, x);
            *ov = F::from_f64(y.clamp(0.0, 1.0));
            *dv = if (0.0..=1.0).contains(&y) {
                F::from_f64(model.derivative_channel(ch, x))
            } else {
                F::zero()
            };
        });
    }
    (out, deriv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_corners() -> Vec<Vec3> {
        let mut v = Vec::new();
        for r in [0.0, 1.0] {
            for g in [0.0, 1.0] {
                for b in [0.0, 1.0] {
                    v.push([r, g, b]);
                }
            }
        }
        v
    }

    #[test]
    fn hull_of_cube_is_cube() {
        let hull = build_gamut_hull(&cube_corners()).unwrap();
        assert_eq!(hull.vertices.len(), 8);
        assert!((hull.volume() - 1.0).abs() < 1e-9);
        for s in cube_corners() {
            assert!(hull.contains(s, 1e-9));
        }
    }

    #[test]
    fn tetrahedron_volume_analytic() {
        let hull = build_gamut_hull(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert!((hull.volume() - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn interior_points_are_not_vertices() {
        let mut pts = cube_corners();
        pts.push([0.5, 0.5, 0.5]);
        pts.push([0.25, 0.5, 0.75]);
        let hull = build_gamut_hull(&pts).unwrap();
        assert_eq!(hull.vertices.len(), 8);
    }

    #[test]
    fn coplanar_samples_rejected() {
        let pts = vec![
            [0.0, 0.0, 0.5],
            [1.0, 0.0, 0.5],
            [0.0, 1.0, 0.5],
            [1.0, 1.0, 0.5],
            [0.3, 0.7, 0.5],
        ];
        assert!(build_gamut_hull(&pts).is_err());
    }

    #[test]
    fn projection_onto_tetrahedron_face() {
        // Projection of (1,1,1) onto the plane x+y+z=1 is (1/3,1/3,1/3).
        let hull = build_gamut_hull(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ])
        .unwrap();
        let q = hull.project([1.0, 1.0, 1.0]);
        for c in q {
            assert!((c - 1.0 / 3.0).abs() < 1e-9, "{q:?}");
        }
    }

    #[test]
    fn ptm_identity_fit() {
        let pairs: Vec<(Vec3, Vec3)> = (0..50)
            .map(|i| {
                let v = i as f64 / 49.0;
                ([v, v, v], [v, v, v])
            })
            .collect();
        let model = fit_ptm(&pairs, "base").unwrap();
        for ch in 0..3 {
            let [a, b, c, d] = model.coeffs[ch];
            assert!(a.abs() < 1e-6 && (b - 1.0).abs() < 1e-6 && c.abs() < 1e-6 && d.abs() < 1e-6);
        }
        assert!(model.residual_rms < 1e-9);
    }

    #[test]
    fn ptm_affine_recovery() {
        let pairs: Vec<(Vec3, Vec3)> = (0..50)
            .map(|i| {
                let v = i as f64 / 49.0;
                let y = 0.5 + 0.3 * v;
                ([v, v, v], [y, y, y])
            })
            .collect();
        let model = fit_ptm(&pairs, "bright").unwrap();
        for ch in 0..3 {
            let [a, b, c, d] = model.coeffs[ch];
            assert!((a - 0.5).abs() < 1e-6, "a={a}");
            assert!((b - 0.3).abs() < 1e-6, "b={b}");
            assert!(c.abs() < 1e-6 && d.abs() < 1e-6);
        }
        assert!(model.residual_rms < 1e-9);
        // 0.5 + 0.3*0.5 = 0.65 on an all-0.5 patch.
        let patch = Image::<f64>::filled(4, 4, 3, 0.5).unwrap();
        let mapped = apply_ptm(&patch, &model).unwrap();
        for &v in mapped.data().iter() {
            assert!((v - 0.65).abs() < 1e-12);
        }
    }

    #[test]
    fn ptm_rank_deficient_rejected() {
        // A single repeated baseline value cannot identify a cubic.
        let pairs: Vec<(Vec3, Vec3)> = (0..10).map(|_| ([0.4, 0.4, 0.4], [0.5, 0.5, 0.5])).collect();
        assert!(fit_ptm(&pairs, "x").is_err());
    }

    #[test]
    fn nps_zero_on_printable_and_one_on_extreme() {
        let mask = Mask::from_fn(2, 2, |_, _| true).unwrap();
        let black = Image::<f64>::filled(2, 2, 3, 0.0).unwrap();
        let white = Image::<f64>::filled(2, 2, 3, 1.0).unwrap();
        let set = vec![[0.0, 0.0, 0.0]];
        assert_eq!(non_printability_score(&black, &mask, &set).unwrap(), 0.0);
        assert!((non_printability_score(&white, &mask, &set).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nps_invariant_to_set_order() {
        let mask = Mask::from_fn(3, 3, |r, c| r != c).unwrap();
        let img = Image::<f64>::from_data_unchecked(Array3::from_shape_fn((3, 3, 3), |(r, c, ch)| {
            ((r * 7 + c * 3 + ch) % 10) as f64 / 10.0
        }));
        let a = vec![[0.1, 0.2, 0.3], [0.9, 0.8, 0.7], [0.5, 0.5, 0.5]];
        let mut b = a.clone();
        b.reverse();
        let sa = non_printability_score(&img, &mask, &a).unwrap();
        let sb = non_printability_score(&img, &mask, &b).unwrap();
        assert!((sa - sb).abs() < 1e-12);
    }
}
