//! Optical-density color deconvolution of IHC images and DAB thresholding
//! into lymphocyte masks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::components::remove_small_components;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::slide::SlideMeta;

/// Transmitted intensity of an empty field.
pub const BACKGROUND_INTENSITY: f64 = 255.0;
/// Intensities are clamped to this floor before taking the logarithm.
pub const INTENSITY_FLOOR: f64 = 0.5;
pub const DEFAULT_DAB_THRESHOLD: f64 = 0.095;
/// Smallest DAB-positive component kept, in pixels at 0.454 µm/px.
pub const DEFAULT_MIN_AREA_PX: usize = 12;

pub const HEMATOXYLIN: [f64; 3] = [0.650, 0.704, 0.286];
pub const DAB: [f64; 3] = [0.268, 0.570, 0.776];

/// Row of the stain matrix holding the DAB basis vector.
pub const DAB_ROW: usize = 1;

/// Optical density per RGB channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdVector(pub [f64; 3]);

/// Optical density of one 8-bit RGB pixel: `-log10(max(I, 0.5) / 255)`.
pub fn rgb_to_od(rgb: [u8; 3]) -> OdVector {
    OdVector(rgb.map(channel_od))
}

#[inline]
fn channel_od(i: u8) -> f64 {
    let od = -(f64::from(i).max(INTENSITY_FLOOR) / BACKGROUND_INTENSITY).log10();
    // -log10(1) is -0.0
    od.max(0.0)
}

fn norm(v: [f64; 3]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn normalize(v: [f64; 3]) -> Result<[f64; 3]> {
    let n = norm(v);
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::SingularStainMatrix(format!(
            "stain vector {v:?} cannot be normalized"
        )));
    }
    Ok(v.map(|c| c / n))
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Three unit-norm stain basis vectors (rows: stain, columns: RGB channel)
/// together with the precomputed inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct StainMatrix {
    rows: [[f64; 3]; 3],
    inverse: [[f64; 3]; 3],
}

impl StainMatrix {
    /// Rows must already have unit norm (within 1e-9) and span R³.
    pub fn new(rows: [[f64; 3]; 3]) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.iter().any(|c| !c.is_finite()) {
                return Err(Error::SingularStainMatrix(format!("row {i} is not finite")));
            }
            let n = norm(*r);
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::SingularStainMatrix(format!("row {i} has norm {n}, expected 1")));
            }
        }
        let det = det3(&rows);
        if det.abs() <= 1e-12 {
            return Err(Error::SingularStainMatrix(format!("determinant {det:e}")));
        }
        let m = &rows;
        let mut inverse = [[0.0; 3]; 3];
        for (i, inv_row) in inverse.iter_mut().enumerate() {
            for (j, v) in inv_row.iter_mut().enumerate() {
                // adjugate transpose: inv[i][j] = cofactor(j, i) / det
                let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                *v = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
            }
        }
        Ok(StainMatrix { rows, inverse })
    }

    /// Normalizes the given vectors; a missing residual is completed with
    /// the normalized cross product of the first two.
    pub fn from_vectors(hematoxylin: [f64; 3], dab: [f64; 3], residual: Option<[f64; 3]>) -> Result<Self> {
        let h = normalize(hematoxylin)?;
        let d = normalize(dab)?;
        let r = normalize(residual.unwrap_or_else(|| cross(h, d)))?;
        StainMatrix::new([h, d, r])
    }

    /// Hematoxylin / DAB / residual.
    pub fn h_dab() -> Self {
        StainMatrix::from_vectors(HEMATOXYLIN, DAB, None).expect("default H-DAB basis is valid")
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.rows
    }

    /// Optical density produced by stain concentrations `c`: `cᵀ·M`.
    pub fn compose(&self, c: [f64; 3]) -> OdVector {
        let mut od = [0.0; 3];
        for (k, ck) in c.iter().enumerate() {
            for (ch, o) in od.iter_mut().enumerate() {
                *o += ck * self.rows[k][ch];
            }
        }
        OdVector(od)
    }

    #[inline]
    fn concentration(&self, od: &[f64; 3], stain: usize) -> f64 {
        od[0] * self.inverse[0][stain] + od[1] * self.inverse[1][stain] + od[2] * self.inverse[2][stain]
    }
}

impl Default for StainMatrix {
    fn default() -> Self {
        StainMatrix::h_dab()
    }
}

/// Stain concentrations `c` solving `cᵀ·M = odᵀ`. Negative components are kept.
pub fn deconvolve_od(od: OdVector, m: &StainMatrix) -> [f64; 3] {
    [0, 1, 2].map(|s| m.concentration(&od.0, s))
}

/// On-disk stain matrix configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StainMatrixConfig {
    pub hematoxylin: [f64; 3],
    pub dab: [f64; 3],
    #[serde(default)]
    pub residual: Option<[f64; 3]>,
}

impl StainMatrixConfig {
    pub fn build(&self) -> Result<StainMatrix> {
        StainMatrix::from_vectors(self.hematoxylin, self.dab, self.residual)
    }
}

/// Binary per-pixel lymphocyte indicator.
#[derive(Clone, Debug, PartialEq)]
pub struct LymphocyteMask {
    meta: SlideMeta,
    mask: Grid<bool>,
}

impl LymphocyteMask {
    pub fn new(meta: SlideMeta, mask: Grid<bool>) -> Result<Self> {
        meta.ensure_grid(&mask)?;
        Ok(LymphocyteMask { meta, mask })
    }

    pub fn meta(&self) -> &SlideMeta {
        &self.meta
    }

    pub fn mask(&self) -> &Grid<bool> {
        &self.mask
    }

    pub fn positive_count(&self) -> usize {
        self.mask.as_slice().iter().filter(|&&b| b).count()
    }
}

/// DAB concentration of every pixel.
pub fn dab_concentration(image: &Grid<[u8; 3]>, m: &StainMatrix) -> Grid<f64> {
    let lut: Vec<f64> = (0..=255u8).map(channel_od).collect();
    let data: Vec<f64> = image
        .as_slice()
        .par_iter()
        .map(|px| {
            let od = [lut[px[0] as usize], lut[px[1] as usize], lut[px[2] as usize]];
            m.concentration(&od, DAB_ROW)
        })
        .collect();
    Grid::from_vec(image.width(), image.height(), data).expect("same dimensions")
}

/// Pixels whose DAB concentration exceeds `threshold`, with 8-connected
/// components smaller than `min_area_px` removed.
pub fn dab_lymphocyte_mask(
    image: &Grid<[u8; 3]>,
    meta: &SlideMeta,
    m: &StainMatrix,
    threshold: f64,
    min_area_px: usize,
) -> Result<LymphocyteMask> {
    meta.ensure_grid(image)?;
    if threshold.is_nan() {
        return Err(Error::InvalidValue("DAB threshold is NaN".into()));
    }
    let positive = dab_concentration(image, m).map(|&c| c > threshold);
    LymphocyteMask::new(*meta, remove_small_components(&positive, min_area_px))
}
