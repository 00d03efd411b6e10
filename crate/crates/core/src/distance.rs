//! Exact signed Euclidean distance to the tumor margin.
//!
//! Normal pixels receive `+` the distance to the nearest Neoplastic pixel
//! center, Neoplastic pixels `-` the distance to the nearest Normal pixel
//! center. Background and Irrelevant pixels are neither sources nor targets.
//!
//! The transform is separable: a column sweep yields the vertical distance
//! to the nearest target in each column, then every row takes the lower
//! envelope of the parabolas `(x - q)² + g(q)²`. All squared distances are
//! exact integers; only the final `sqrt(d²) · µm/px` is rounded.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::slide::{RegionLabel, SlideMeta, TissueLabelMask};

/// Per-pixel signed distance in µm; `NaN` marks undefined pixels.
#[derive(Clone, Debug)]
pub struct SignedDistanceMap {
    meta: SlideMeta,
    dist: Grid<f64>,
}

impl SignedDistanceMap {
    pub fn new(meta: SlideMeta, dist: Grid<f64>) -> Result<Self> {
        meta.ensure_grid(&dist)?;
        Ok(SignedDistanceMap { meta, dist })
    }

    pub fn meta(&self) -> &SlideMeta {
        &self.meta
    }

    /// Raw grid with `NaN` for undefined pixels.
    pub fn grid(&self) -> &Grid<f64> {
        &self.dist
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let d = *self.dist.get(x, y);
        (!d.is_nan()).then_some(d)
    }

    pub fn defined_count(&self) -> usize {
        self.dist.as_slice().iter().filter(|d| !d.is_nan()).count()
    }
}

/// Column distance storage; `NONE` means no target in the column.
trait ColumnDist: Copy + Ord + Send + Sync + 'static {
    const NONE: Self;
    const ZERO: Self;
    fn step(self) -> Self;
    fn to_i64(self) -> i64;
}

impl ColumnDist for u16 {
    const NONE: Self = u16::MAX;
    const ZERO: Self = 0;
    #[inline]
    fn step(self) -> Self {
        self.saturating_add(1)
    }
    #[inline]
    fn to_i64(self) -> i64 {
        i64::from(self)
    }
}

impl ColumnDist for u32 {
    const NONE: Self = u32::MAX;
    const ZERO: Self = 0;
    #[inline]
    fn step(self) -> Self {
        self.saturating_add(1)
    }
    #[inline]
    fn to_i64(self) -> i64 {
        i64::from(self)
    }
}

/// Vertical distance (in pixels) from every cell to the nearest cell of
/// `target` in the same column, for both margin sides at once.
fn column_pass<D: ColumnDist>(labels: &Grid<RegionLabel>) -> (Vec<D>, Vec<D>) {
    let (w, h) = labels.dims();
    let mut to_neo = vec![D::NONE; w * h];
    let mut to_normal = vec![D::NONE; w * h];

    for y in 0..h {
        let row = labels.row(y);
        let (above_neo, here_neo) = to_neo.split_at_mut(y * w);
        let (above_nor, here_nor) = to_normal.split_at_mut(y * w);
        let here_neo = &mut here_neo[..w];
        let here_nor = &mut here_nor[..w];
        if y == 0 {
            for x in 0..w {
                match row[x] {
                    RegionLabel::Neoplastic => here_neo[x] = D::ZERO,
                    RegionLabel::Normal => here_nor[x] = D::ZERO,
                    _ => {}
                }
            }
        } else {
            let prev_neo = &above_neo[(y - 1) * w..];
            let prev_nor = &above_nor[(y - 1) * w..];
            for x in 0..w {
                let l = row[x];
                here_neo[x] = if l == RegionLabel::Neoplastic {
                    D::ZERO
                } else {
                    prev_neo[x].step()
                };
                here_nor[x] = if l == RegionLabel::Normal {
                    D::ZERO
                } else {
                    prev_nor[x].step()
                };
            }
        }
    }
    for y in (0..h.saturating_sub(1)).rev() {
        let (here_neo, below_neo) = to_neo.split_at_mut((y + 1) * w);
        let (here_nor, below_nor) = to_normal.split_at_mut((y + 1) * w);
        let here_neo = &mut here_neo[y * w..];
        let here_nor = &mut here_nor[y * w..];
        for x in 0..w {
            here_neo[x] = here_neo[x].min(below_neo[x].step());
            here_nor[x] = here_nor[x].min(below_nor[x].step());
        }
    }
    (to_neo, to_normal)
}

/// Scratch buffers for the per-row lower envelope.
#[derive(Default)]
pub(crate) struct RowScratch {
    sites: Vec<usize>,
    bounds: Vec<f64>,
    sq: Vec<i64>,
}

/// Squared distance to the nearest target for every `x` with `wanted(x)`,
/// written to `out[x]`; other entries are left untouched.
fn envelope_row<D: ColumnDist>(col: &[D], scratch: &mut RowScratch, mut emit: impl FnMut(usize, i64)) {
    let RowScratch { sites, bounds, sq } = scratch;
    sites.clear();
    bounds.clear();
    sq.clear();
    sq.extend(col.iter().map(|&g| {
        if g == D::NONE {
            -1
        } else {
            let g = g.to_i64();
            g * g
        }
    }));

    for (q, &fq) in sq.iter().enumerate() {
        if fq < 0 {
            continue;
        }
        let key_q = fq + (q * q) as i64;
        let mut s = f64::NEG_INFINITY;
        while let Some(&v) = sites.last() {
            let key_v = sq[v] + (v * v) as i64;
            s = (key_q - key_v) as f64 / (2 * (q - v)) as f64;
            if s <= *bounds.last().expect("bounds track sites") {
                sites.pop();
                bounds.pop();
                s = f64::NEG_INFINITY;
            } else {
                break;
            }
        }
        sites.push(q);
        bounds.push(s);
    }

    if sites.is_empty() {
        return;
    }
    let mut k = 0;
    for x in 0..col.len() {
        while k + 1 < sites.len() && bounds[k + 1] < x as f64 {
            k += 1;
        }
        let v = sites[k];
        let dx = x as i64 - v as i64;
        emit(x, dx * dx + sq[v]);
    }
}

enum ColumnDistances {
    Narrow(Vec<u16>, Vec<u16>),
    Wide(Vec<u32>, Vec<u32>),
}

/// Column pass results plus everything needed to produce any row of the
/// signed distance map on demand.
pub(crate) struct DistanceRows<'a> {
    labels: &'a Grid<RegionLabel>,
    microns_per_pixel: f64,
    columns: ColumnDistances,
}

impl<'a> DistanceRows<'a> {
    pub(crate) fn new(mask: &'a TissueLabelMask) -> Result<Self> {
        let labels = mask.labels();
        let (mut normal, mut neo) = (false, false);
        for &l in labels.as_slice() {
            normal |= l == RegionLabel::Normal;
            neo |= l == RegionLabel::Neoplastic;
            if normal && neo {
                break;
            }
        }
        if !(normal && neo) {
            return Err(Error::DegenerateLabels(format!(
                "need at least one Normal and one Neoplastic pixel (normal: {normal}, neoplastic: {neo})"
            )));
        }
        let columns = if labels.height() < u16::MAX as usize {
            let (a, b) = column_pass::<u16>(labels);
            ColumnDistances::Narrow(a, b)
        } else {
            let (a, b) = column_pass::<u32>(labels);
            ColumnDistances::Wide(a, b)
        };
        Ok(DistanceRows {
            labels,
            microns_per_pixel: mask.meta().microns_per_pixel,
            columns,
        })
    }

    pub(crate) fn height(&self) -> usize {
        self.labels.height()
    }

    /// Signed distances of row `y` into `out` (`NaN` where undefined).
    pub(crate) fn row_into(&self, y: usize, scratch: &mut RowScratch, out: &mut [f64]) {
        match &self.columns {
            ColumnDistances::Narrow(neo, nor) => self.row_generic(neo, nor, y, scratch, out),
            ColumnDistances::Wide(neo, nor) => self.row_generic(neo, nor, y, scratch, out),
        }
    }

    fn row_generic<D: ColumnDist>(
        &self,
        to_neo: &[D],
        to_normal: &[D],
        y: usize,
        scratch: &mut RowScratch,
        out: &mut [f64],
    ) {
        let w = self.labels.width();
        let row = self.labels.row(y);
        let mpp = self.microns_per_pixel;
        out.fill(f64::NAN);
        envelope_row(&to_neo[y * w..(y + 1) * w], scratch, |x, d2| {
            if row[x] == RegionLabel::Normal {
                out[x] = (d2 as f64).sqrt() * mpp;
            }
        });
        envelope_row(&to_normal[y * w..(y + 1) * w], scratch, |x, d2| {
            if row[x] == RegionLabel::Neoplastic {
                out[x] = -((d2 as f64).sqrt() * mpp);
            }
        });
    }
}

/// Exact signed Euclidean distance transform of a label grid, in µm.
pub fn signed_edt(labels: &TissueLabelMask) -> Result<SignedDistanceMap> {
    let rows = DistanceRows::new(labels)?;
    let (w, h) = labels.labels().dims();
    let mut dist = vec![f64::NAN; w * h];
    dist.par_chunks_mut(w)
        .enumerate()
        .for_each_init(RowScratch::default, |scratch, (y, out)| rows.row_into(y, scratch, out));
    SignedDistanceMap::new(*labels.meta(), Grid::from_vec(w, h, dist)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slide::Stain;
    use RegionLabel::*;

    fn mask(w: usize, h: usize, mpp: f64, labels: Vec<RegionLabel>) -> TissueLabelMask {
        let meta = SlideMeta::new(mpp, w, h, Stain::He).unwrap();
        TissueLabelMask::new(meta, Grid::from_vec(w, h, labels).unwrap()).unwrap()
    }

    fn values(map: &SignedDistanceMap) -> Vec<Option<f64>> {
        let (w, h) = map.grid().dims();
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| map.get(x, y))
            .collect()
    }

    #[test]
    fn line_of_four() {
        let m = mask(4, 1, 1.0, vec![Normal, Normal, Neoplastic, Neoplastic]);
        let d = signed_edt(&m).unwrap();
        assert_eq!(values(&d), vec![Some(2.0), Some(1.0), Some(-1.0), Some(-2.0)]);
    }

    #[test]
    fn irrelevant_is_excluded() {
        let m = mask(3, 1, 1.0, vec![Normal, Irrelevant, Neoplastic]);
        let d = signed_edt(&m).unwrap();
        assert_eq!(values(&d), vec![Some(2.0), None, Some(-2.0)]);
    }

    #[test]
    fn vertical_line_and_diagonal() {
        let m = mask(1, 3, 0.5, vec![Neoplastic, Background, Normal]);
        let d = signed_edt(&m).unwrap();
        assert_eq!(values(&d), vec![Some(-1.0), None, Some(1.0)]);

        let m = mask(2, 2, 1.0, vec![Normal, Background, Background, Neoplastic]);
        let d = signed_edt(&m).unwrap();
        let s = 2f64.sqrt();
        assert_eq!(values(&d), vec![Some(s), None, None, Some(-s)]);
    }

    #[test]
    fn missing_class_is_degenerate() {
        let m = mask(2, 1, 1.0, vec![Normal, Normal]);
        assert!(matches!(signed_edt(&m), Err(Error::DegenerateLabels(_))));
        let m = mask(2, 1, 1.0, vec![Neoplastic, Irrelevant]);
        assert!(matches!(signed_edt(&m), Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn wide_storage_matches_narrow() {
        let labels = Grid::from_fn(9, 7, |x, y| match (x * 7 + y * 3) % 5 {
            0 => Neoplastic,
            1 | 2 => Normal,
            3 => Irrelevant,
            _ => Background,
        });
        let (a, b) = column_pass::<u16>(&labels);
        let (c, d) = column_pass::<u32>(&labels);
        let widen = |v: Vec<u16>| -> Vec<u32> {
            v.into_iter()
                .map(|g| if g == u16::MAX { u32::MAX } else { u32::from(g) })
                .collect()
        };
        assert_eq!(widen(a), c);
        assert_eq!(widen(b), d);
    }
}
