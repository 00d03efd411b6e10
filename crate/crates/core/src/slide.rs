//! Slide geometry, region labels and conversion of annotations into label grids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Stain of the scanned section.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stain {
    #[serde(rename = "HE")]
    He,
    #[serde(rename = "IHC_CD3")]
    IhcCd3,
}

/// Physical sampling and extent of a raster region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeta")]
pub struct SlideMeta {
    pub microns_per_pixel: f64,
    pub width_px: usize,
    pub height_px: usize,
    pub stain: Stain,
}

#[derive(Deserialize)]
struct RawMeta {
    microns_per_pixel: f64,
    width_px: usize,
    height_px: usize,
    stain: Stain,
}

impl TryFrom<RawMeta> for SlideMeta {
    type Error = Error;

    fn try_from(raw: RawMeta) -> Result<Self> {
        SlideMeta::new(raw.microns_per_pixel, raw.width_px, raw.height_px, raw.stain)
    }
}

impl SlideMeta {
    pub fn new(microns_per_pixel: f64, width_px: usize, height_px: usize, stain: Stain) -> Result<Self> {
        if !(microns_per_pixel.is_finite() && microns_per_pixel > 0.0) {
            return Err(Error::InvalidMeta(format!(
                "microns_per_pixel must be positive and finite, got {microns_per_pixel}"
            )));
        }
        if width_px == 0 || height_px == 0 {
            return Err(Error::InvalidMeta(format!(
                "dimensions must be at least 1x1, got {width_px}x{height_px}"
            )));
        }
        Ok(SlideMeta {
            microns_per_pixel,
            width_px,
            height_px,
            stain,
        })
    }

    /// `(width, height)` in pixels.
    pub fn dims(&self) -> (usize, usize) {
        (self.width_px, self.height_px)
    }

    pub fn ensure_grid<T>(&self, grid: &Grid<T>) -> Result<()> {
        if grid.dims() != self.dims() {
            return Err(Error::ShapeMismatch {
                expected: self.dims(),
                actual: grid.dims(),
            });
        }
        Ok(())
    }
}

/// Per-pixel tissue class. The discriminant doubles as the on-disk palette
/// index and as overlap precedence (higher wins).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum RegionLabel {
    /// Outside the annotated region of interest.
    #[default]
    Background = 0,
    Normal = 1,
    Neoplastic = 2,
    Irrelevant = 3,
}

impl RegionLabel {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(RegionLabel::Background),
            1 => Some(RegionLabel::Normal),
            2 => Some(RegionLabel::Neoplastic),
            3 => Some(RegionLabel::Irrelevant),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

/// Region labels over the ROI grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TissueLabelMask {
    meta: SlideMeta,
    labels: Grid<RegionLabel>,
}

impl TissueLabelMask {
    pub fn new(meta: SlideMeta, labels: Grid<RegionLabel>) -> Result<Self> {
        meta.ensure_grid(&labels)?;
        Ok(TissueLabelMask { meta, labels })
    }

    pub fn meta(&self) -> &SlideMeta {
        &self.meta
    }

    pub fn labels(&self) -> &Grid<RegionLabel> {
        &self.labels
    }

    pub fn into_parts(self) -> (SlideMeta, Grid<RegionLabel>) {
        (self.meta, self.labels)
    }
}

/// One annotated polygon in pixel coordinates of the native magnification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedPolygon {
    pub label: RegionLabel,
    pub vertices: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub polygons: Vec<AnnotatedPolygon>,
}

impl AnnotationSet {
    fn validate(&self, meta: &SlideMeta) -> Result<()> {
        let (w, h) = (meta.width_px as f64, meta.height_px as f64);
        for (i, poly) in self.polygons.iter().enumerate() {
            if poly.label == RegionLabel::Background {
                return Err(Error::InvalidAnnotation(format!("polygon {i} is labeled background")));
            }
            if poly.vertices.len() < 3 {
                return Err(Error::InvalidAnnotation(format!(
                    "polygon {i} has {} vertices, need at least 3",
                    poly.vertices.len()
                )));
            }
            for &[x, y] in &poly.vertices {
                if !(x.is_finite() && y.is_finite()) {
                    return Err(Error::InvalidAnnotation(format!("polygon {i} has a non-finite vertex")));
                }
                if !(0.0..=w).contains(&x) || !(0.0..=h).contains(&y) {
                    return Err(Error::OutOfBounds(format!(
                        "polygon {i} vertex ({x}, {y}) outside [0, {w}] x [0, {h}]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// x coordinate where the edge `a -> b` crosses the horizontal line at `yc`,
/// if it does under the half-open rule `(ya > yc) != (yb > yc)`.
#[inline]
fn edge_crossing(a: [f64; 2], b: [f64; 2], yc: f64) -> Option<f64> {
    if (a[1] > yc) != (b[1] > yc) {
        Some(a[0] + (b[0] - a[0]) * (yc - a[1]) / (b[1] - a[1]))
    } else {
        None
    }
}

/// First column whose center `x + 0.5` is `>= bound`.
fn first_center_at_or_after(bound: f64, width: usize) -> usize {
    let mut x = (bound - 0.5).ceil().clamp(0.0, width as f64) as usize;
    while x > 0 && (x - 1) as f64 + 0.5 >= bound {
        x -= 1;
    }
    while x < width && (x as f64 + 0.5) < bound {
        x += 1;
    }
    x
}

/// Scanline rasterization by pixel-center containment (even-odd rule).
/// Overlaps resolve to the highest-precedence label:
/// Irrelevant > Neoplastic > Normal.
pub fn rasterize_annotations(ann: &AnnotationSet, meta: &SlideMeta) -> Result<TissueLabelMask> {
    ann.validate(meta)?;
    let (width, height) = meta.dims();
    let mut data = vec![RegionLabel::Background; width * height];

    data.par_chunks_mut(width)
        .enumerate()
        .for_each_init(Vec::new, |crossings: &mut Vec<f64>, (y, row)| {
            let yc = y as f64 + 0.5;
            for poly in &ann.polygons {
                crossings.clear();
                let vs = &poly.vertices;
                let mut prev = vs[vs.len() - 1];
                for &v in vs {
                    if let Some(x) = edge_crossing(v, prev, yc) {
                        crossings.push(x);
                    }
                    prev = v;
                }
                crossings.sort_by(f64::total_cmp);
                for span in crossings.chunks_exact(2) {
                    let start = first_center_at_or_after(span[0], width);
                    let end = first_center_at_or_after(span[1], width);
                    for cell in &mut row[start..end.max(start)] {
                        if poly.label > *cell {
                            *cell = poly.label;
                        }
                    }
                }
            }
        });

    TissueLabelMask::new(*meta, Grid::from_vec(width, height, data)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResampleMode {
    NearestNeighbor,
    Bilinear,
}

/// Cell types that `rescale_grid` can resample. Only intensity types
/// support bilinear blending; labels and masks return `None`.
pub trait Resample: Copy + Send + Sync {
    /// Blend four neighbors `[top-left, top-right, bottom-left, bottom-right]`
    /// with fractional offsets `fx`, `fy` in `[0, 1)`.
    fn bilinear(_corners: [Self; 4], _fx: f64, _fy: f64) -> Option<Self> {
        None
    }
}

impl Resample for RegionLabel {}
impl Resample for bool {}

#[inline]
fn lerp2(c: [f64; 4], fx: f64, fy: f64) -> f64 {
    let top = c[0] + (c[1] - c[0]) * fx;
    let bottom = c[2] + (c[3] - c[2]) * fx;
    top + (bottom - top) * fy
}

impl Resample for f64 {
    fn bilinear(c: [f64; 4], fx: f64, fy: f64) -> Option<f64> {
        Some(lerp2(c, fx, fy))
    }
}

impl Resample for f32 {
    fn bilinear(c: [f32; 4], fx: f64, fy: f64) -> Option<f32> {
        Some(lerp2(c.map(f64::from), fx, fy) as f32)
    }
}

impl Resample for u8 {
    fn bilinear(c: [u8; 4], fx: f64, fy: f64) -> Option<u8> {
        Some(lerp2(c.map(f64::from), fx, fy).round().clamp(0.0, 255.0) as u8)
    }
}

impl Resample for [u8; 3] {
    fn bilinear(c: [[u8; 3]; 4], fx: f64, fy: f64) -> Option<[u8; 3]> {
        let mut out = [0u8; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            *o = u8::bilinear(c.map(|p| p[ch]), fx, fy)?;
        }
        Some(out)
    }
}

/// `round(dim * factor)` with halves rounded up, at least 1.
pub fn scaled_dim(dim: usize, factor: f64) -> usize {
    ((dim as f64 * factor + 0.5).floor() as usize).max(1)
}

/// Resample a grid by `factor` (e.g. 0.9049 or 2.0 to match scan magnifications).
pub fn rescale_grid<T: Resample>(grid: &Grid<T>, factor: f64, mode: ResampleMode) -> Result<Grid<T>> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::InvalidScale(factor));
    }
    let (w, h) = grid.dims();
    if w == 0 || h == 0 {
        return Err(Error::InvalidValue("cannot rescale an empty grid".into()));
    }
    let (ow, oh) = (scaled_dim(w, factor), scaled_dim(h, factor));
    // Output pixel centers mapped back into input coordinates.
    let sx = w as f64 / ow as f64;
    let sy = h as f64 / oh as f64;

    match mode {
        ResampleMode::NearestNeighbor => {
            let cols: Vec<usize> = (0..ow)
                .map(|x| (((x as f64 + 0.5) * sx).floor() as usize).min(w - 1))
                .collect();
            Ok(Grid::from_fn(ow, oh, |x, y| {
                let sy_idx = (((y as f64 + 0.5) * sy).floor() as usize).min(h - 1);
                *grid.get(cols[x], sy_idx)
            }))
        }
        ResampleMode::Bilinear => {
            let probe = *grid.get(0, 0);
            if T::bilinear([probe; 4], 0.0, 0.0).is_none() {
                return Err(Error::UnsupportedInterpolation);
            }
            let axis = |o: usize, scale: f64, n: usize| -> (usize, usize, f64) {
                let c = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
                let i0 = c.floor() as usize;
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, c - i0 as f64)
            };
            let mut data = Vec::with_capacity(ow * oh);
            for y in 0..oh {
                let (y0, y1, fy) = axis(y, sy, h);
                for x in 0..ow {
                    let (x0, x1, fx) = axis(x, sx, w);
                    let corners = [
                        *grid.get(x0, y0),
                        *grid.get(x1, y0),
                        *grid.get(x0, y1),
                        *grid.get(x1, y1),
                    ];
                    data.push(T::bilinear(corners, fx, fy).ok_or(Error::UnsupportedInterpolation)?);
                }
            }
            Grid::from_vec(ow, oh, data)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use RegionLabel::*;

    fn meta(w: usize, h: usize) -> SlideMeta {
        SlideMeta::new(1.0, w, h, Stain::He).unwrap()
    }

    fn square(label: RegionLabel, x0: f64, y0: f64, x1: f64, y1: f64) -> AnnotatedPolygon {
        AnnotatedPolygon {
            label,
            vertices: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
        }
    }

    #[test]
    fn empty_annotation_set_is_background() {
        let mask = rasterize_annotations(&AnnotationSet::default(), &meta(4, 4)).unwrap();
        assert!(mask.labels().as_slice().iter().all(|&l| l == Background));
    }

    #[test]
    fn unit_square_covers_four_pixels() {
        let ann = AnnotationSet {
            polygons: vec![square(Normal, 0.0, 0.0, 2.0, 2.0)],
        };
        let mask = rasterize_annotations(&ann, &meta(4, 4)).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let expected = if x < 2 && y < 2 { Normal } else { Background };
                assert_eq!(*mask.labels().get(x, y), expected, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn overlap_takes_precedence() {
        let ann = AnnotationSet {
            polygons: vec![
                square(Normal, 0.0, 0.0, 2.0, 2.0),
                square(Irrelevant, 1.0, 1.0, 3.0, 3.0),
            ],
        };
        let mask = rasterize_annotations(&ann, &meta(4, 4)).unwrap();
        assert_eq!(*mask.labels().get(1, 1), Irrelevant);
        assert_eq!(*mask.labels().get(0, 0), Normal);
        assert_eq!(*mask.labels().get(2, 2), Irrelevant);
        assert_eq!(*mask.labels().get(3, 3), Background);
    }

    #[test]
    fn rejects_bad_polygons() {
        let two = AnnotationSet {
            polygons: vec![AnnotatedPolygon {
                label: Normal,
                vertices: vec![[0.0, 0.0], [1.0, 1.0]],
            }],
        };
        assert!(matches!(
            rasterize_annotations(&two, &meta(4, 4)),
            Err(Error::InvalidAnnotation(_))
        ));
        let outside = AnnotationSet {
            polygons: vec![square(Neoplastic, 0.0, 0.0, 4.5, 2.0)],
        };
        assert!(matches!(
            rasterize_annotations(&outside, &meta(4, 4)),
            Err(Error::OutOfBounds(_))
        ));
        let background = AnnotationSet {
            polygons: vec![square(Background, 0.0, 0.0, 1.0, 1.0)],
        };
        assert!(matches!(
            rasterize_annotations(&background, &meta(4, 4)),
            Err(Error::InvalidAnnotation(_))
        ));
    }

    #[test]
    fn annotation_json_round_trips_labels() {
        let json = r#"{"polygons":[{"label":"irrelevant","vertices":[[0,0],[1,0],[1,1]]}]}"#;
        let ann: AnnotationSet = serde_json::from_str(json).unwrap();
        assert_eq!(ann.polygons[0].label, Irrelevant);
        assert_eq!(ann.polygons[0].vertices[2], [1.0, 1.0]);
    }

    #[test]
    fn meta_rejects_nonpositive_pitch() {
        assert!(SlideMeta::new(0.0, 1, 1, Stain::He).is_err());
        assert!(SlideMeta::new(0.454, 0, 1, Stain::He).is_err());
        let bad = r#"{"microns_per_pixel":-1,"width_px":2,"height_px":2,"stain":"HE"}"#;
        assert!(serde_json::from_str::<SlideMeta>(bad).is_err());
    }

    #[test]
    fn nearest_neighbor_doubling_makes_blocks() {
        let g = Grid::from_vec(2, 2, vec![true, false, false, true]).unwrap();
        let up = rescale_grid(&g, 2.0, ResampleMode::NearestNeighbor).unwrap();
        assert_eq!(up.dims(), (4, 4));
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(*up.get(x, y), *g.get(x / 2, y / 2));
            }
        }
    }

    #[test]
    fn magnification_factor_rounds_dimensions() {
        let g = Grid::filled(100, 100, 0u8);
        let down = rescale_grid(&g, 0.9049, ResampleMode::NearestNeighbor).unwrap();
        assert_eq!(down.dims(), (90, 90));
        assert_eq!(scaled_dim(3, 0.5), 2);
        assert_eq!(scaled_dim(1, 0.01), 1);
    }

    #[test]
    fn invalid_factors_are_rejected() {
        let g = Grid::filled(3, 3, 1u8);
        for f in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                rescale_grid(&g, f, ResampleMode::NearestNeighbor),
                Err(Error::InvalidScale(_))
            ));
        }
    }

    #[test]
    fn bilinear_refuses_labels() {
        let g = Grid::filled(3, 3, Normal);
        assert!(matches!(
            rescale_grid(&g, 2.0, ResampleMode::Bilinear),
            Err(Error::UnsupportedInterpolation)
        ));
    }

    #[test]
    fn bilinear_preserves_constant_and_ramps() {
        let g = Grid::filled(5, 4, 0.25f64);
        let up = rescale_grid(&g, 1.7, ResampleMode::Bilinear).unwrap();
        assert!(up.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-12));

        let ramp = Grid::from_fn(4, 1, |x, _| x as f64);
        let up = rescale_grid(&ramp, 2.0, ResampleMode::Bilinear).unwrap();
        // centers at 0.25, 0.75, ... clamp at the edges
        let expected = [0.0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.0];
        for (a, b) in up.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
