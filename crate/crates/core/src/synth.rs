//! Synthetic slides with a known infiltration profile, used as end-to-end
//! ground truth.

use serde::{Deserialize, Serialize};

use crate::distance::signed_edt;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::profile::{FixedWindowSeries, WINDOW_BINS, WINDOW_BIN_WIDTH_UM, WINDOW_HALF_UM};
use crate::rng::CounterRng;
use crate::slide::{RegionLabel, SlideMeta, Stain, TissueLabelMask};
use crate::stain::LymphocyteMask;

/// Piecewise-constant lymphocyte density over signed margin distance.
/// Each piece is `[start_um, end_um, density]`, covering `[start, end)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfileSpec")]
pub struct ProfileSpec {
    pieces: Vec<[f64; 3]>,
}

#[derive(Deserialize)]
struct RawProfileSpec {
    pieces: Vec<[f64; 3]>,
}

impl TryFrom<RawProfileSpec> for ProfileSpec {
    type Error = Error;

    fn try_from(raw: RawProfileSpec) -> Result<Self> {
        ProfileSpec::new(raw.pieces)
    }
}

impl ProfileSpec {
    /// Pieces must be sorted, contiguous, cover `[-2000, +2000]` µm and
    /// carry densities in `[0, 1]`.
    pub fn new(pieces: Vec<[f64; 3]>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidValue("profile has no pieces".into()));
        }
        for (i, &[start, end, p]) in pieces.iter().enumerate() {
            if !(start.is_finite() && end.is_finite() && start < end) {
                return Err(Error::InvalidValue(format!(
                    "piece {i}: [{start}, {end}) is empty or not finite"
                )));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidValue(format!("piece {i}: density {p} outside [0, 1]")));
            }
            if i > 0 && pieces[i - 1][1] != start {
                return Err(Error::InvalidValue(format!(
                    "piece {i} starts at {start} but the previous piece ends at {}",
                    pieces[i - 1][1]
                )));
            }
        }
        let (lo, hi) = (pieces[0][0], pieces[pieces.len() - 1][1]);
        if lo > -WINDOW_HALF_UM || hi < WINDOW_HALF_UM {
            return Err(Error::InvalidValue(format!(
                "profile covers [{lo}, {hi}), must cover [-{WINDOW_HALF_UM}, {WINDOW_HALF_UM}]"
            )));
        }
        Ok(ProfileSpec { pieces })
    }

    /// Constant `density` everywhere.
    pub fn constant(density: f64) -> Result<Self> {
        ProfileSpec::new(vec![[-WINDOW_HALF_UM, WINDOW_HALF_UM, density]])
    }

    pub fn pieces(&self) -> &[[f64; 3]] {
        &self.pieces
    }

    /// Density at `d` µm; distances beyond the covered range take the
    /// density of the outermost piece.
    pub fn density_at(&self, d: f64) -> f64 {
        let i = self.pieces.partition_point(|p| p[1] <= d);
        self.pieces[i.min(self.pieces.len() - 1)][2]
    }

    /// Length-weighted mean density over `[a, b)`.
    pub fn mean_over(&self, a: f64, b: f64) -> f64 {
        let (lo, hi) = (self.pieces[0][0], self.pieces[self.pieces.len() - 1][1]);
        let mut acc = 0.0;
        if a < lo {
            acc += (lo.min(b) - a) * self.pieces[0][2];
        }
        if b > hi {
            acc += (b - hi.max(a)) * self.pieces[self.pieces.len() - 1][2];
        }
        for &[s, e, p] in &self.pieces {
            let overlap = e.min(b) - s.max(a);
            if overlap > 0.0 {
                acc += overlap * p;
            }
        }
        acc / (b - a)
    }
}

/// Shape of the tumor margin in a synthetic slide. Neoplastic tissue lies
/// left of the margin, normal tissue right of it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarginGeometry {
    /// Vertical margin through the middle column boundary.
    Straight,
    /// Vertical margin displaced by `amplitude_um · sin(2π y / period_um)`.
    Sine { amplitude_um: f64, period_um: f64 },
}

impl MarginGeometry {
    /// Margin position in pixel units for the center of row `y`.
    fn margin_x(&self, meta: &SlideMeta, y: usize) -> f64 {
        let mid = (meta.width_px / 2) as f64;
        match *self {
            MarginGeometry::Straight => mid,
            MarginGeometry::Sine {
                amplitude_um,
                period_um,
            } => {
                let y_um = (y as f64 + 0.5) * meta.microns_per_pixel;
                mid + amplitude_um / meta.microns_per_pixel * (std::f64::consts::TAU * y_um / period_um).sin()
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCase {
    pub labels: TissueLabelMask,
    /// Stands in for the H&E segmentation.
    pub lymph_a: LymphocyteMask,
    /// Independent realization standing in for the adjacent IHC section.
    pub lymph_b: LymphocyteMask,
    pub seed: u64,
    pub spec: ProfileSpec,
}

/// Stream ids of the two realizations.
pub const STREAM_A: u64 = 0;
pub const STREAM_B: u64 = 1;

pub fn generate_labels(geometry: MarginGeometry, meta: &SlideMeta) -> Result<TissueLabelMask> {
    if let MarginGeometry::Sine {
        amplitude_um,
        period_um,
    } = geometry
    {
        if !(amplitude_um.is_finite() && period_um.is_finite() && amplitude_um >= 0.0 && period_um > 0.0) {
            return Err(Error::InvalidValue(format!(
                "sine margin needs amplitude >= 0 and period > 0, got {amplitude_um} / {period_um}"
            )));
        }
    }
    let (w, h) = meta.dims();
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let m = geometry.margin_x(meta, y);
        let neo_cols = ((m - 0.5).ceil().max(0.0) as usize).min(w);
        let reach = (neo_cols.min(w - neo_cols)) as f64 * meta.microns_per_pixel;
        if reach < WINDOW_HALF_UM {
            return Err(Error::GeometryTooSmall(format!(
                "row {y} reaches only {reach} µm from the margin on one side, need {WINDOW_HALF_UM}"
            )));
        }
        data.extend((0..w).map(|x| {
            if x < neo_cols {
                RegionLabel::Neoplastic
            } else {
                RegionLabel::Normal
            }
        }));
    }
    TissueLabelMask::new(*meta, Grid::from_vec(w, h, data)?)
}

/// Lymphocyte realization on `stream`: every tissue pixel is positive with
/// probability `spec.density_at(signed distance)`.
fn realize(dist: &Grid<f64>, spec: &ProfileSpec, seed: u64, stream: u64) -> Grid<bool> {
    let rng = CounterRng::new(seed, stream);
    let data = dist
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &d)| !d.is_nan() && rng.uniform(i as u64) < spec.density_at(d))
        .collect();
    Grid::from_vec(dist.width(), dist.height(), data).expect("same dimensions")
}

/// Label mask plus two independent lymphocyte realizations of `spec`.
pub fn generate_case(
    spec: &ProfileSpec,
    geometry: MarginGeometry,
    meta: &SlideMeta,
    seed: u64,
) -> Result<SyntheticCase> {
    let labels = generate_labels(geometry, meta)?;
    let dist = signed_edt(&labels)?;
    let lymph_a = LymphocyteMask::new(*meta, realize(dist.grid(), spec, seed, STREAM_A))?;
    let meta_b = SlideMeta {
        stain: Stain::IhcCd3,
        ..*meta
    };
    let lymph_b = LymphocyteMask::new(meta_b, realize(dist.grid(), spec, seed, STREAM_B))?;
    Ok(SyntheticCase {
        labels,
        lymph_a,
        lymph_b,
        seed,
        spec: spec.clone(),
    })
}

/// Expected density in each window bin: the bin-length-weighted mean of
/// the profile, which is exact for tissue spread uniformly over distance.
pub fn oracle_curve(spec: &ProfileSpec) -> FixedWindowSeries {
    let values = (0..WINDOW_BINS)
        .map(|i| {
            let (a, _) = FixedWindowSeries::bin_range(i);
            spec.mean_over(a, a + WINDOW_BIN_WIDTH_UM)
        })
        .collect();
    FixedWindowSeries::new(values).expect("window length")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> SlideMeta {
        SlideMeta::new(20.0, 200, 8, Stain::He).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(ProfileSpec::new(vec![]).is_err());
        assert!(ProfileSpec::new(vec![[-2000.0, 0.0, 0.1], [10.0, 2000.0, 0.1]]).is_err());
        assert!(ProfileSpec::new(vec![[-2000.0, 0.0, 0.1], [0.0, 1990.0, 0.1]]).is_err());
        assert!(ProfileSpec::new(vec![[-2000.0, 2000.0, 1.5]]).is_err());
        assert!(ProfileSpec::new(vec![[-2000.0, 0.0, 0.1], [0.0, 2000.0, 0.3]]).is_ok());
        let json = r#"{"pieces":[[-2000,0,0.05],[0,2000,0.4]]}"#;
        let spec: ProfileSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.density_at(-0.001), 0.05);
        assert_eq!(spec.density_at(0.0), 0.4);
        assert_eq!(spec.density_at(5000.0), 0.4);
        assert_eq!(spec.density_at(-5000.0), 0.05);
        assert!(serde_json::from_str::<ProfileSpec>(r#"{"pieces":[]}"#).is_err());
    }

    #[test]
    fn constant_and_step_oracles() {
        let c = oracle_curve(&ProfileSpec::constant(0.3).unwrap());
        assert!(c.values().iter().all(|&v| v == 0.3));
        let step = ProfileSpec::new(vec![[-2000.0, 0.0, 0.05], [0.0, 2000.0, 0.4]]).unwrap();
        let o = oracle_curve(&step);
        assert!(o.values()[..200].iter().all(|&v| v == 0.05));
        assert!(o.values()[200..].iter().all(|&v| v == 0.4));
    }

    #[test]
    fn misaligned_piece_averages() {
        let spec = ProfileSpec::new(vec![[-2000.0, 3.0, 0.0], [3.0, 2000.0, 1.0]]).unwrap();
        let o = oracle_curve(&spec);
        assert!((o.values()[200] - 0.7).abs() < 1e-12);
        assert_eq!(o.values()[199], 0.0);
        assert_eq!(o.values()[201], 1.0);
    }

    #[test]
    fn degenerate_densities() {
        let zero = generate_case(
            &ProfileSpec::constant(0.0).unwrap(),
            MarginGeometry::Straight,
            &meta(),
            1,
        )
        .unwrap();
        assert_eq!(zero.lymph_a.positive_count() + zero.lymph_b.positive_count(), 0);
        let one = generate_case(
            &ProfileSpec::constant(1.0).unwrap(),
            MarginGeometry::Straight,
            &meta(),
            1,
        )
        .unwrap();
        assert_eq!(one.lymph_a.positive_count(), 200 * 8);
        assert_eq!(one.lymph_b.positive_count(), 200 * 8);
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let spec = ProfileSpec::constant(0.4).unwrap();
        let g = MarginGeometry::Sine {
            amplitude_um: 100.0,
            period_um: 80.0,
        };
        let m = SlideMeta::new(20.0, 230, 8, Stain::He).unwrap();
        let a = generate_case(&spec, g, &m, 99).unwrap();
        let b = generate_case(&spec, g, &m, 99).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.lymph_a, b.lymph_a);
        assert_eq!(a.lymph_b, b.lymph_b);
        assert_ne!(a.lymph_a.mask(), a.lymph_b.mask());
        let c = generate_case(&spec, g, &m, 100).unwrap();
        assert_ne!(a.lymph_a.mask(), c.lymph_a.mask());
    }

    #[test]
    fn straight_margin_splits_in_half() {
        let l = generate_labels(MarginGeometry::Straight, &meta()).unwrap();
        assert_eq!(*l.labels().get(99, 3), RegionLabel::Neoplastic);
        assert_eq!(*l.labels().get(100, 3), RegionLabel::Normal);
    }

    #[test]
    fn window_must_fit() {
        let small = SlideMeta::new(2.0, 1000, 4, Stain::He).unwrap();
        assert!(matches!(
            generate_labels(MarginGeometry::Straight, &small),
            Err(Error::GeometryTooSmall(_))
        ));
        let sine = MarginGeometry::Sine {
            amplitude_um: 60.0,
            period_um: 100.0,
        };
        assert!(matches!(
            generate_labels(sine, &meta()),
            Err(Error::GeometryTooSmall(_))
        ));
    }
}
