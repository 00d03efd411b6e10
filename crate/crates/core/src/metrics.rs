//! Object-level Dice between binary segmentations and point-to-disk
//! conversion for center-only ground truth.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::components::{label_components, Components};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::slide::SlideMeta;

/// Typical lymphocyte nuclear radius.
pub const DEFAULT_DISK_RADIUS_UM: f64 = 3.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchDice {
    pub patch: String,
    pub dice: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectDiceReport {
    pub per_patch: Vec<PatchDice>,
    pub mean_dice: f64,
}

impl ObjectDiceReport {
    pub fn new(per_patch: Vec<PatchDice>) -> Result<Self> {
        if per_patch.is_empty() {
            return Err(Error::InvalidValue("no patches to average".into()));
        }
        let mean_dice = per_patch.iter().map(|p| p.dice).sum::<f64>() / per_patch.len() as f64;
        Ok(ObjectDiceReport { per_patch, mean_dice })
    }
}

/// Pixel overlap counts between the components of two masks.
fn overlaps(a: &Components, b: &Components) -> HashMap<(u32, u32), usize> {
    let mut counts = HashMap::new();
    for (&la, &lb) in a.labels.as_slice().iter().zip(b.labels.as_slice()) {
        if la != 0 && lb != 0 {
            *counts.entry((la, lb)).or_insert(0) += 1;
        }
    }
    counts
}

/// Size-weighted mean over the components of `from` of the Dice with their
/// maximally overlapping component in `to`.
fn weighted_side(
    from: &Components,
    to: &Components,
    overlap: impl Fn(u32, u32) -> usize,
    partners: &[Vec<u32>],
) -> f64 {
    let total: usize = from.sizes[1..].iter().sum();
    let mut acc = 0.0;
    for k in 1..=from.count() as u32 {
        let size = from.sizes[k as usize];
        // ties resolve to the lowest partner id
        let best = partners[k as usize]
            .iter()
            .map(|&p| (overlap(k, p), p))
            .max_by(|x, y| x.0.cmp(&y.0).then(y.1.cmp(&x.1)));
        let dice = match best {
            Some((inter, p)) => 2.0 * inter as f64 / (size + to.sizes[p as usize]) as f64,
            None => 0.0,
        };
        acc += size as f64 * dice;
    }
    acc / total as f64
}

/// Object-level Dice with 8-connected components: the mean of the
/// size-weighted best-match Dice from ground truth to prediction and from
/// prediction to ground truth.
pub fn object_level_dice(pred: &Grid<bool>, gt: &Grid<bool>) -> Result<f64> {
    gt.ensure_same_dims(pred)?;
    let g = label_components(gt);
    let p = label_components(pred);
    match (g.count(), p.count()) {
        (0, 0) => return Ok(1.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let counts = overlaps(&g, &p);
    let mut g_partners = vec![Vec::new(); g.count() + 1];
    let mut p_partners = vec![Vec::new(); p.count() + 1];
    let mut keys: Vec<_> = counts.keys().copied().collect();
    keys.sort_unstable();
    for (gi, pj) in keys {
        g_partners[gi as usize].push(pj);
        p_partners[pj as usize].push(gi);
    }
    let gt_side = weighted_side(&g, &p, |gi, pj| counts[&(gi, pj)], &g_partners);
    let pred_side = weighted_side(&p, &g, |pj, gi| counts[&(gi, pj)], &p_partners);
    Ok(0.5 * (gt_side + pred_side))
}

/// Rasterizes point annotations into disks. Point coordinates are pixel
/// indices: pixel `(i, j)` has its center at `(i, j)`.
pub fn points_to_disks(centers: &[[f64; 2]], radius_um: f64, meta: &SlideMeta) -> Result<Grid<bool>> {
    if !(radius_um.is_finite() && radius_um > 0.0) {
        return Err(Error::InvalidValue(format!("disk radius {radius_um}")));
    }
    let (w, h) = meta.dims();
    let r = radius_um / meta.microns_per_pixel;
    let r2 = r * r;
    let mut mask = Grid::filled(w, h, false);
    for &[cx, cy] in centers {
        if !(cx.is_finite() && cy.is_finite()) || cx < 0.0 || cy < 0.0 || cx > (w - 1) as f64 || cy > (h - 1) as f64 {
            return Err(Error::OutOfBounds(format!(
                "center ({cx}, {cy}) outside [0, {}] x [0, {}]",
                w - 1,
                h - 1
            )));
        }
        let x0 = (cx - r).ceil().max(0.0) as usize;
        let x1 = ((cx + r).floor() as usize).min(w - 1);
        let y0 = (cy - r).ceil().max(0.0) as usize;
        let y1 = ((cy + r).floor() as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r2 {
                    mask.set(x, y, true);
                }
            }
        }
    }
    Ok(mask)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentersFile {
    pub centers: Vec<[f64; 2]>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slide::Stain;

    fn grid(rows: &[&str]) -> Grid<bool> {
        let w = rows[0].len();
        Grid::from_vec(
            w,
            rows.len(),
            rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_and_disjoint() {
        let m = grid(&["##..", "....", "..##"]);
        assert_eq!(object_level_dice(&m, &m).unwrap(), 1.0);
        let other = grid(&["..##", "....", "##.."]);
        assert_eq!(object_level_dice(&m, &other).unwrap(), 0.0);
    }

    #[test]
    fn empty_masks() {
        let e = Grid::filled(3, 3, false);
        let m = grid(&["#..", "...", "..."]);
        assert_eq!(object_level_dice(&e, &e).unwrap(), 1.0);
        assert_eq!(object_level_dice(&m, &e).unwrap(), 0.0);
        assert_eq!(object_level_dice(&e, &m).unwrap(), 0.0);
    }

    #[test]
    fn half_overlap_scores_half() {
        let gt = grid(&["####..", "......"]);
        let pred = grid(&["..####", "......"]);
        assert_eq!(object_level_dice(&pred, &gt).unwrap(), 0.5);
    }

    #[test]
    fn spurious_component_lowers_score() {
        let gt = grid(&["##....", "##....", "......"]);
        let pred = grid(&["##....", "##....", "......"]);
        let noisy = grid(&["##....", "##...#", "......"]);
        let base = object_level_dice(&pred, &gt).unwrap();
        let worse = object_level_dice(&noisy, &gt).unwrap();
        assert!(worse < base);
        // pred side: 4/5 * 1 + 1/5 * 0; gt side: 1
        assert!((worse - 0.5 * (1.0 + 0.8)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let a = Grid::filled(2, 2, false);
        let b = Grid::filled(3, 2, false);
        assert!(matches!(object_level_dice(&a, &b), Err(Error::ShapeMismatch { .. })));
    }

    fn meta(w: usize, h: usize) -> SlideMeta {
        SlideMeta::new(0.5, w, h, Stain::He).unwrap()
    }

    #[test]
    fn disks_from_points() {
        let m = meta(11, 11);
        assert_eq!(
            points_to_disks(&[], 3.5, &m)
                .unwrap()
                .as_slice()
                .iter()
                .filter(|&&b| b)
                .count(),
            0
        );
        let tiny = points_to_disks(&[[5.0, 5.0]], 0.2, &m).unwrap();
        assert_eq!(tiny.as_slice().iter().filter(|&&b| b).count(), 1);
        assert!(*tiny.get(5, 5));
        // 2 px at 0.5 µm/px
        let disk = points_to_disks(&[[5.0, 5.0]], 1.0, &m).unwrap();
        assert_eq!(disk.as_slice().iter().filter(|&&b| b).count(), 13);
        assert!(*disk.get(7, 5) && *disk.get(5, 3) && !*disk.get(7, 6));
    }

    #[test]
    fn disk_errors() {
        let m = meta(4, 4);
        assert!(matches!(
            points_to_disks(&[[4.0, 0.0]], 1.0, &m),
            Err(Error::OutOfBounds(_))
        ));
        assert!(matches!(
            points_to_disks(&[[-0.5, 0.0]], 1.0, &m),
            Err(Error::OutOfBounds(_))
        ));
        assert!(points_to_disks(&[[1.0, 1.0]], 0.0, &m).is_err());
    }

    #[test]
    fn report_mean() {
        let r = ObjectDiceReport::new(vec![
            PatchDice {
                patch: "a".into(),
                dice: 0.5,
            },
            PatchDice {
                patch: "b".into(),
                dice: 1.0,
            },
        ])
        .unwrap();
        assert_eq!(r.mean_dice, 0.75);
        assert!(ObjectDiceReport::new(vec![]).is_err());
    }
}
