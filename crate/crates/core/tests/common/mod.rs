//! Reference implementations used only by tests. Each is deliberately the
//! slow, obvious algorithm so it stays independent of the library path.
#![allow(dead_code)]

use tilprofile::slide::{AnnotationSet, RegionLabel};
use tilprofile::Grid;

/// Signed distance by checking every pixel pair; `None` where undefined.
pub fn brute_force_signed_distance(labels: &Grid<RegionLabel>, mpp: f64) -> Vec<Option<f64>> {
    let (w, h) = labels.dims();
    let collect = |class| -> Vec<(i64, i64)> {
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .filter(|&(x, y)| *labels.get(x, y) == class)
            .map(|(x, y)| (x as i64, y as i64))
            .collect()
    };
    let normal = collect(RegionLabel::Normal);
    let neo = collect(RegionLabel::Neoplastic);
    let nearest = |p: (i64, i64), targets: &[(i64, i64)]| -> f64 {
        let d2 = targets
            .iter()
            .map(|q| (p.0 - q.0).pow(2) + (p.1 - q.1).pow(2))
            .min()
            .expect("non-empty target set");
        (d2 as f64).sqrt() * mpp
    };
    (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            let p = (x as i64, y as i64);
            match labels.get(x, y) {
                RegionLabel::Normal => Some(nearest(p, &neo)),
                RegionLabel::Neoplastic => Some(-nearest(p, &normal)),
                _ => None,
            }
        })
        .collect()
}

/// Minimum accumulated |a_i - b_j| over every monotone warping path that
/// stays within the band, by explicit depth-first enumeration.
pub fn exhaustive_dtw(a: &[f64], b: &[f64], radius: usize) -> f64 {
    fn walk(a: &[f64], b: &[f64], r: usize, i: usize, j: usize, acc: f64, best: &mut f64) {
        if i.abs_diff(j) > r {
            return;
        }
        let acc = acc + (a[i] - b[j]).abs();
        if i == a.len() - 1 && j == b.len() - 1 {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, r, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, r, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, r, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, radius, 0, 0, 0.0, &mut best);
    best
}

/// Classic crossing-number test (PNPOLY).
pub fn point_in_polygon(vertices: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = vertices.len() - 1;
    for i in 0..vertices.len() {
        let [xi, yi] = vertices[i];
        let [xj, yj] = vertices[j];
        if (yi > y) != (yj > y) && x < xi + (xj - xi) * (y - yi) / (yj - yi) {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Per-pixel-center label with Irrelevant > Neoplastic > Normal precedence.
pub fn rasterize_by_pixel_centers(ann: &AnnotationSet, w: usize, h: usize) -> Grid<RegionLabel> {
    Grid::from_fn(w, h, |x, y| {
        let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
        let covering = |label| {
            ann.polygons
                .iter()
                .any(|p| p.label == label && point_in_polygon(&p.vertices, cx, cy))
        };
        [RegionLabel::Irrelevant, RegionLabel::Neoplastic, RegionLabel::Normal]
            .into_iter()
            .find(|&l| covering(l))
            .unwrap_or(RegionLabel::Background)
    })
}

#[allow(clippy::needless_range_loop)]
/// `x` solving `xᵀ M = b` by Gaussian elimination on the transposed system.
pub fn solve_transposed(m: &[[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    // Augmented rows of Mᵀ | b
    let mut a = [[0.0; 4]; 3];
    for r in 0..3 {
        for c in 0..3 {
            a[r][c] = m[c][r];
        }
        a[r][3] = b[r];
    }
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        for r in 0..3 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..4 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    [a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]]
}

use std::path::{Path, PathBuf};

/// Runs the CLI in-process; returns (exit code, stdout, stderr).
pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("tilprofile").chain(args.iter().copied());
    let code = tilprofile::cli::run_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub const PEAK_SPEC: &str = r#"{"pieces":[[-2000,-100,0.05],[-100,100,0.4],[100,2000,0.1]]}"#;

/// Writes a profile spec and runs `synth` into `dir/synth`.
pub fn synth_fixture(dir: &Path, width: usize, height: usize, seed: u64) -> PathBuf {
    let spec = dir.join("spec.json");
    std::fs::write(&spec, PEAK_SPEC).unwrap();
    let out = dir.join("synth");
    let (code, _, err) = run_cli(&[
        "synth",
        "--spec",
        p(&spec),
        "--width-px",
        &width.to_string(),
        "--height-px",
        &height.to_string(),
        "--microns-per-pixel",
        "2",
        "--seed",
        &seed.to_string(),
        "-o",
        p(&out),
    ]);
    assert_eq!(code, 0, "synth failed: {err}");
    out
}
