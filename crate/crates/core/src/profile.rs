//! Lymphocyte pixel density as a function of signed margin distance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{DistanceRows, RowScratch, SignedDistanceMap};
use crate::error::{Error, Result};
use crate::slide::{SlideMeta, TissueLabelMask};
use crate::stain::LymphocyteMask;

pub const DEFAULT_BIN_WIDTH_UM: f64 = 10.0;
/// Half-width of the comparison window on each side of the margin.
pub const WINDOW_HALF_UM: f64 = 2000.0;
pub const WINDOW_BIN_WIDTH_UM: f64 = 10.0;
pub const WINDOW_BINS: usize = 400;
/// Bin index (in units of the window bin width) of the first window bin.
pub const WINDOW_FIRST_BIN: i64 = -200;

/// Upper bound on the number of bins a single curve may span.
const MAX_BINS: u64 = 50_000_000;

/// Histogram bin of a signed distance: `floor(d / width)`.
#[inline]
pub fn bin_index(distance_um: f64, bin_width_um: f64) -> i64 {
    (distance_um / bin_width_um).floor() as i64
}

/// Per-bin lymphocyte and tissue pixel counts over signed distance.
///
/// Bin `i` covers `[bin_edges_um[i], bin_edges_um[i + 1])`. Bins without
/// tissue carry `tissue_px = 0` and density 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfiltrationCurve {
    pub bin_width_um: f64,
    pub bin_edges_um: Vec<f64>,
    pub density: Vec<f64>,
    pub tissue_px: Vec<u64>,
    pub lymph_px: Vec<u64>,
}

impl InfiltrationCurve {
    /// Builds a curve whose first bin starts at `first_bin * bin_width_um`.
    pub fn from_counts(bin_width_um: f64, first_bin: i64, tissue_px: Vec<u64>, lymph_px: Vec<u64>) -> Result<Self> {
        if !(bin_width_um.is_finite() && bin_width_um > 0.0) {
            return Err(Error::InvalidValue(format!("bin width {bin_width_um}")));
        }
        if tissue_px.len() != lymph_px.len() || tissue_px.is_empty() {
            return Err(Error::InvalidValue(
                "count arrays must be non-empty and equally long".into(),
            ));
        }
        if let Some(i) = (0..tissue_px.len()).find(|&i| lymph_px[i] > tissue_px[i]) {
            return Err(Error::InvalidValue(format!(
                "bin {i} has more lymphocyte pixels ({}) than tissue pixels ({})",
                lymph_px[i], tissue_px[i]
            )));
        }
        let bin_edges_um = (0..=tissue_px.len() as i64)
            .map(|i| (first_bin + i) as f64 * bin_width_um)
            .collect();
        let density = tissue_px
            .iter()
            .zip(&lymph_px)
            .map(|(&t, &l)| if t == 0 { 0.0 } else { l as f64 / t as f64 })
            .collect();
        Ok(InfiltrationCurve {
            bin_width_um,
            bin_edges_um,
            density,
            tissue_px,
            lymph_px,
        })
    }

    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    /// Index of the first bin in units of `bin_width_um`.
    pub fn first_bin(&self) -> i64 {
        (self.bin_edges_um[0] / self.bin_width_um).round() as i64
    }

    pub fn non_empty_bins(&self) -> usize {
        self.tissue_px.iter().filter(|&&t| t > 0).count()
    }

    /// Checks the structural invariants of a curve read from outside.
    pub fn validate(&self) -> Result<()> {
        let n = self.density.len();
        if n == 0 || self.tissue_px.len() != n || self.lymph_px.len() != n || self.bin_edges_um.len() != n + 1 {
            return Err(Error::InvalidValue("inconsistent curve array lengths".into()));
        }
        if !(self.bin_width_um.is_finite() && self.bin_width_um > 0.0) {
            return Err(Error::InvalidValue(format!("bin width {}", self.bin_width_um)));
        }
        let tol = 1e-9 * self.bin_width_um.max(1.0);
        let first = self.first_bin();
        for (i, &e) in self.bin_edges_um.iter().enumerate() {
            let expected = (first + i as i64) as f64 * self.bin_width_um;
            if (e - expected).abs() > tol * (1.0 + expected.abs()) {
                return Err(Error::InvalidValue(format!(
                    "bin edge {i} is {e}, expected {expected} (uniform multiples of the bin width)"
                )));
            }
        }
        for i in 0..n {
            let (t, l, d) = (self.tissue_px[i], self.lymph_px[i], self.density[i]);
            if l > t || !(0.0..=1.0).contains(&d) {
                return Err(Error::InvalidValue(format!(
                    "bin {i}: density {d}, lymph {l}, tissue {t}"
                )));
            }
            let expected = if t == 0 { 0.0 } else { l as f64 / t as f64 };
            if (d - expected).abs() > 1e-6 {
                return Err(Error::InvalidValue(format!(
                    "bin {i}: density {d} does not match {l}/{t}"
                )));
            }
        }
        Ok(())
    }
}

/// Sparse-to-dense histogram over a pre-sized bin range.
#[derive(Clone)]
struct Histogram {
    offset: i64,
    tissue: Vec<u64>,
    lymph: Vec<u64>,
}

impl Histogram {
    fn for_extent(meta: &SlideMeta, bin_width_um: f64) -> Result<Self> {
        if !(bin_width_um.is_finite() && bin_width_um > 0.0) {
            return Err(Error::InvalidValue(format!("bin width {bin_width_um}")));
        }
        let (w, h) = meta.dims();
        let diag = ((w * w + h * h) as f64).sqrt() * meta.microns_per_pixel;
        let half = (diag / bin_width_um).ceil() as u64 + 2;
        if 2 * half + 1 > MAX_BINS {
            return Err(Error::InvalidValue(format!(
                "bin width {bin_width_um} µm yields more than {MAX_BINS} bins"
            )));
        }
        let half = half as i64;
        let n = (2 * half + 1) as usize;
        Ok(Histogram {
            offset: half,
            tissue: vec![0; n],
            lymph: vec![0; n],
        })
    }

    #[inline]
    fn add(&mut self, bin: i64, lymph: bool) {
        let i = (bin + self.offset) as usize;
        self.tissue[i] += 1;
        self.lymph[i] += u64::from(lymph);
    }

    fn merge(mut self, other: Histogram) -> Histogram {
        for (a, b) in self.tissue.iter_mut().zip(&other.tissue) {
            *a += b;
        }
        for (a, b) in self.lymph.iter_mut().zip(&other.lymph) {
            *a += b;
        }
        self
    }

    fn into_curve(self, bin_width_um: f64) -> Result<InfiltrationCurve> {
        let first = self.tissue.iter().position(|&t| t > 0);
        let last = self.tissue.iter().rposition(|&t| t > 0);
        let (Some(first), Some(last)) = (first, last) else {
            return Err(Error::DegenerateLabels("no pixel has a defined distance".into()));
        };
        InfiltrationCurve::from_counts(
            bin_width_um,
            first as i64 - self.offset,
            self.tissue[first..=last].to_vec(),
            self.lymph[first..=last].to_vec(),
        )
    }
}

fn check_pair(meta: &SlideMeta, lymph: &LymphocyteMask) -> Result<()> {
    if meta.dims() != lymph.meta().dims() {
        return Err(Error::ShapeMismatch {
            expected: meta.dims(),
            actual: lymph.meta().dims(),
        });
    }
    if meta.microns_per_pixel != lymph.meta().microns_per_pixel {
        return Err(Error::InvalidMeta(format!(
            "distance map at {} µm/px but lymphocyte mask at {} µm/px",
            meta.microns_per_pixel,
            lymph.meta().microns_per_pixel
        )));
    }
    Ok(())
}

/// Bins every defined-distance pixel by `floor(d / bin_width_um)` and
/// counts lymphocyte-positive pixels among them.
pub fn infiltration_curve(
    dist: &SignedDistanceMap,
    lymph: &LymphocyteMask,
    bin_width_um: f64,
) -> Result<InfiltrationCurve> {
    check_pair(dist.meta(), lymph)?;
    let hist = Histogram::for_extent(dist.meta(), bin_width_um)?;
    let w = dist.meta().width_px;
    let hist = dist
        .grid()
        .as_slice()
        .par_chunks(w)
        .zip(lymph.mask().as_slice().par_chunks(w))
        .fold(
            || hist.clone(),
            |mut acc, (drow, lrow)| {
                for (&d, &l) in drow.iter().zip(lrow) {
                    if !d.is_nan() {
                        acc.add(bin_index(d, bin_width_um), l);
                    }
                }
                acc
            },
        )
        .reduce(|| hist.clone(), Histogram::merge);
    hist.into_curve(bin_width_um)
}

/// Distance transform and binning in one pass over rows, without
/// materializing the full distance map. Bit-identical to
/// `infiltration_curve(&signed_edt(labels)?, lymph, bin_width_um)`.
pub fn profile_labels(
    labels: &TissueLabelMask,
    lymph: &LymphocyteMask,
    bin_width_um: f64,
) -> Result<InfiltrationCurve> {
    check_pair(labels.meta(), lymph)?;
    let hist = Histogram::for_extent(labels.meta(), bin_width_um)?;
    let rows = DistanceRows::new(labels)?;
    let w = labels.meta().width_px;
    let mask = lymph.mask();
    let hist = (0..rows.height())
        .into_par_iter()
        .fold(
            || (hist.clone(), RowScratch::default(), vec![0.0; w]),
            |(mut acc, mut scratch, mut buf), y| {
                rows.row_into(y, &mut scratch, &mut buf);
                for (&d, &l) in buf.iter().zip(mask.row(y)) {
                    if !d.is_nan() {
                        acc.add(bin_index(d, bin_width_um), l);
                    }
                }
                (acc, scratch, buf)
            },
        )
        .map(|(acc, _, _)| acc)
        .reduce(|| hist.clone(), Histogram::merge);
    hist.into_curve(bin_width_um)
}

/// Exactly 400 densities over `[-2000, +2000)` µm in 10 µm bins; index 0
/// is the deepest neoplastic bin.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedWindowSeries {
    values: Vec<f64>,
}

impl FixedWindowSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != WINDOW_BINS {
            return Err(Error::InvalidValue(format!(
                "window series needs {WINDOW_BINS} values, got {}",
                values.len()
            )));
        }
        Ok(FixedWindowSeries { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `[start, end)` of window bin `i` in µm.
    pub fn bin_range(i: usize) -> (f64, f64) {
        let start = (WINDOW_FIRST_BIN + i as i64) as f64 * WINDOW_BIN_WIDTH_UM;
        (start, start + WINDOW_BIN_WIDTH_UM)
    }
}

/// Crops or reflection-pads a 10 µm curve onto the ±2 mm window.
///
/// Missing bins mirror the available ones without repeating the edge bin:
/// `[a, b, c]` padded by two on the left becomes `[c, b, a, b, c]`.
pub fn to_fixed_window(curve: &InfiltrationCurve) -> Result<FixedWindowSeries> {
    if (curve.bin_width_um - WINDOW_BIN_WIDTH_UM).abs() > 1e-9 {
        return Err(Error::InvalidValue(format!(
            "window requires {WINDOW_BIN_WIDTH_UM} µm bins, curve has {}",
            curve.bin_width_um
        )));
    }
    if curve.non_empty_bins() < 2 {
        return Err(Error::InsufficientSupport(format!(
            "curve has {} non-empty bins, need at least 2",
            curve.non_empty_bins()
        )));
    }
    let window_last = WINDOW_FIRST_BIN + WINDOW_BINS as i64 - 1;
    let src_first = curve.first_bin();
    let src_last = src_first + curve.len() as i64 - 1;
    let lo = src_first.max(WINDOW_FIRST_BIN);
    let hi = src_last.min(window_last);
    if lo > hi {
        return Err(Error::InsufficientSupport(format!(
            "curve bins [{src_first}, {src_last}] do not overlap the window"
        )));
    }
    let available = &curve.density[(lo - src_first) as usize..=(hi - src_first) as usize];
    let n = available.len();
    let left = (lo - WINDOW_FIRST_BIN) as usize;
    let right = (window_last - hi) as usize;
    if left >= n || right >= n {
        return Err(Error::InsufficientSupport(format!(
            "padding {left} left / {right} right bins needs more than the {n} available"
        )));
    }

    let mut values = Vec::with_capacity(WINDOW_BINS);
    values.extend((1..=left).rev().map(|j| available[j]));
    values.extend_from_slice(available);
    values.extend((1..=right).map(|j| available[n - 1 - j]));
    FixedWindowSeries::new(values)
}
