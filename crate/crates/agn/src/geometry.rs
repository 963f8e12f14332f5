//! Projective transforms and bilinear resampling.
//!
//! A [`Homography`] maps patch (row, col) coordinates into base-image
//! coordinates. Warping runs by inverse mapping: every base pixel inside the
//! warped footprint samples the patch bilinearly, so warped pixel values are
//! linear in patch values and gradients pass straight through the weights.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{AgnError, Result};

/// 3x3 projective transform on (row, col, 1) homogeneous coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    pub m: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Pure translation by (dr, dc).
    pub fn translation(dr: f64, dc: f64) -> Self {
        Self {
            m: [[1.0, 0.0, dr], [0.0, 1.0, dc], [0.0, 0.0, 1.0]],
        }
    }

    /// Uniform scale about the origin followed by translation.
    pub fn scale_then_translate(scale: f64, dr: f64, dc: f64) -> Self {
        Self {
            m: [[scale, 0.0, dr], [0.0, scale, dc], [0.0, 0.0, 1.0]],
        }
    }

    pub fn apply(&self, r: f64, c: f64) -> (f64, f64) {
        let m = &self.m;
        let w = m[2][0] * r + m[2][1] * c + m[2][2];
        (
            (m[0][0] * r + m[0][1] * c + m[0][2]) / w,
            (m[1][0] * r + m[1][1] * c + m[1][2]) / w,
        )
    }

    pub fn inverse(&self) -> Result<Self> {
        let m = &self.m;
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if det.abs() < 1e-12 {
            return Err(AgnError::DegenerateGeometry(
                "homography is not invertible".into(),
            ));
        }
        let inv = |a: f64| a / det;
        Ok(Self {
            m: [
                [
                    inv(m[1][1] * m[2][2] - m[1][2] * m[2][1]),
                    inv(m[0][2] * m[2][1] - m[0][1] * m[2][2]),
                    inv(m[0][1] * m[1][2] - m[0][2] * m[1][1]),
                ],
                [
                    inv(m[1][2] * m[2][0] - m[1][0] * m[2][2]),
                    inv(m[0][0] * m[2][2] - m[0][2] * m[2][0]),
                    inv(m[0][2] * m[1][0] - m[0][0] * m[1][2]),
                ],
                [
                    inv(m[1][0] * m[2][1] - m[1][1] * m[2][0]),
                    inv(m[0][1] * m[2][0] - m[0][0] * m[2][1]),
                    inv(m[0][0] * m[1][1] - m[0][1] * m[1][0]),
                ],
            ],
        })
    }

    /// Least-squares homography from >=4 (src, dst) point pairs, solved via
    /// the standard DLT normal equations. Points are (row, col).
    pub fn from_correspondences(pairs: &[((f64, f64), (f64, f64))]) -> Result<Self> {
        if pairs.len() < 4 {
            return Err(AgnError::InvalidValue(
                "need at least 4 correspondences".into(),
            ));
        }
        // Each pair yields two rows of A h = b with h = 8 unknowns (m22 = 1).
        let n = pairs.len() * 2;
        let mut a = vec![[0.0f64; 8]; n];
        let mut b = vec![0.0f64; n];
        for (i, &((sr, sc), (dr, dc))) in pairs.iter().enumerate() {
            a[2 * i] = [sr, sc, 1.0, 0.0, 0.0, 0.0, -dr * sr, -dr * sc];
            b[2 * i] = dr;
            a[2 * i + 1] = [0.0, 0.0, 0.0, sr, sc, 1.0, -dc * sr, -dc * sc];
            b[2 * i + 1] = dc;
        }
        // Normal equations: (A^T A) h = A^T b, solved by Gaussian elimination.
        let mut ata = [[0.0f64; 9]; 8];
        for i in 0..8 {
            for j in 0..8 {
                ata[i][j] = (0..n).map(|k| a[k][i] * a[k][j]).sum();
            }
            ata[i][8] = (0..n).map(|k| a[k][i] * b[k]).sum();
        }
        for col in 0..8 {
            let piv = (col..8)
                .max_by(|&x, &y| ata[x][col].abs().partial_cmp(&ata[y][col].abs()).unwrap())
                .unwrap();
            if ata[piv][col].abs() < 1e-12 {
                return Err(AgnError::DegenerateGeometry(
                    "correspondences are degenerate".into(),
                ));
            }
            ata.swap(col, piv);
            let p = ata[col][col];
            for j in col..9 {
                ata[col][j] /= p;
            }
            for row in 0..8 {
                if row != col {
                    let f = ata[row][col];
                    for j in col..9 {
                        ata[row][j] -= f * ata[col][j];
                    }
                }
            }
        }
        let h: Vec<f64> = (0..8).map(|i| ata[i][8]).collect();
        Ok(Self {
            m: [
                [h[0], h[1], h[2]],
                [h[3], h[4], h[5]],
                [h[6], h[7], 1.0],
            ],
        })
    }
}

/// One bilinear sampling tap: base pixel `index` accumulates
/// `weight * patch[src]`.
#[derive(Debug, Clone)]
pub struct WarpTap {
    pub base_r: usize,
    pub base_c: usize,
    /// Up to four (patch_r, patch_c, weight) contributions.
    pub taps: Vec<(usize, usize, f64)>,
}

/// Resampling plan for warping a patch into a base frame.
///
/// `footprint[r][c]` is true where the warped mask covers the base image
/// (bilinear mask coverage >= 0.5). `taps` lists, for every footprint pixel,
/// the patch pixels and weights that produce its value.
#[derive(Debug, Clone)]
pub struct WarpPlan {
    pub footprint: Array2<bool>,
    pub taps: Vec<WarpTap>,
}

/// Build the inverse-mapped bilinear plan for `homography` taking patch
/// coordinates into a base of `base_h` x `base_w` pixels.
///
/// Every mask-true patch pixel must land inside the base image bounds.
pub fn plan_warp(
    mask: &Array2<bool>,
    homography: &Homography,
    base_h: usize,
    base_w: usize,
) -> Result<WarpPlan> {
    let (ph, pw) = (mask.shape()[0], mask.shape()[1]);
    // Bounds check on the forward map of every stencil pixel.
    for r in 0..ph {
        for c in 0..pw {
            if mask[[r, c]] {
                let (br, bc) = homography.apply(r as f64, c as f64);
                if br < -0.5 || bc < -0.5 || br > base_h as f64 - 0.5 || bc > base_w as f64 - 0.5 {
                    return Err(AgnError::AlignmentOutOfBounds(format!(
                        "patch pixel ({r},{c}) maps to ({br:.1},{bc:.1}) outside {base_h}x{base_w}"
                    )));
                }
            }
        }
    }
    let inv = homography.inverse()?;
    let mut footprint = Array2::from_elem((base_h, base_w), false);
    let mut taps = Vec::new();
    for br in 0..base_h {
        for bc in 0..base_w {
            let (pr, pc) = inv.apply(br as f64, bc as f64);
            if pr < -1.0 || pc < -1.0 || pr > ph as f64 || pc > pw as f64 {
                continue;
            }
            let r0 = pr.floor() as isize;
            let c0 = pc.floor() as isize;
            let fr = pr - r0 as f64;
            let fc = pc - c0 as f64;
            let corners = [
                (r0, c0, (1.0 - fr) * (1.0 - fc)),
                (r0, c0 + 1, (1.0 - fr) * fc),
                (r0 + 1, c0, fr * (1.0 - fc)),
                (r0 + 1, c0 + 1, fr * fc),
            ];
            let mut coverage = 0.0;
            let mut pixel_taps = Vec::with_capacity(4);
            for (rr, cc, w) in corners {
                if w == 0.0 || rr < 0 || cc < 0 || rr >= ph as isize || cc >= pw as isize {
                    continue;
                }
                let (rr, cc) = (rr as usize, cc as usize);
                if mask[[rr, cc]] {
                    coverage += w;
                    pixel_taps.push((rr, cc, w));
                }
            }
            if coverage >= 0.5 {
                // Renormalize so the masked region reproduces patch values
                // even where a neighbor falls outside the stencil.
                for t in &mut pixel_taps {
                    t.2 /= coverage;
                }
                footprint[[br, bc]] = true;
                taps.push(WarpTap {
                    base_r: br,
                    base_c: bc,
                    taps: pixel_taps,
                });
            }
        }
    }
    Ok(WarpPlan { footprint, taps })
}
