//! Curve comparison: z-score normalization, Sakoe-Chiba constrained DTW and
//! top-k retrieval of paired curves.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{FixedWindowSeries, WINDOW_BIN_WIDTH_UM};

/// Allowed alignment shift, in µm.
pub const SHIFT_TOLERANCE_UM: f64 = 10.0;
/// Band radius in bins: shift tolerance over bin width.
pub const DEFAULT_BAND_RADIUS: usize = (SHIFT_TOLERANCE_UM / WINDOW_BIN_WIDTH_UM) as usize;
/// Ranks reported in `MatchReport::topk_hits`.
pub const TOP_K: [usize; 3] = [1, 2, 3];

/// Zero-mean, unit population-variance series (all zeros for constant input).
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSeries(Vec<f64>);

impl NormalizedSeries {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub fn znorm(series: &[f64]) -> Result<NormalizedSeries> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    if let Some(v) = series.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidValue(format!("series contains {v}")));
    }
    let first = series[0];
    if series.iter().all(|&v| v == first) {
        return Ok(NormalizedSeries(vec![0.0; series.len()]));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    Ok(NormalizedSeries(series.iter().map(|v| (v - mean) / sd).collect()))
}

/// DTW with absolute local cost, restricted to `|i - j| <= band_radius`.
/// The accumulated cost is not normalized by path length.
pub fn cdtw_distance(a: &[f64], b: &[f64], band_radius: usize) -> Result<f64> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Err(Error::EmptySeries);
    }
    if n.abs_diff(m) > band_radius {
        return Err(Error::BandInfeasible {
            n,
            m,
            radius: band_radius,
        });
    }
    // Rows over i in 0..=n, full width 0..=m; only in-band cells are finite.
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur.fill(f64::INFINITY);
        let lo = i.saturating_sub(band_radius).max(1);
        let hi = (i + band_radius).min(m);
        for j in lo..=hi {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = (a[i - 1] - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// Ranked cDTW distances of every query against every target.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchReport {
    pub queries: Vec<String>,
    /// Targets ascending by distance, ties by target id.
    pub ranking: BTreeMap<String, Vec<(String, f64)>>,
    pub pairs: BTreeMap<String, String>,
    /// `topk_hits[&k]`: queries whose paired target ranks within the first `k`.
    pub topk_hits: BTreeMap<usize, usize>,
}

impl MatchReport {
    /// 1-based rank of the paired target for `query`.
    pub fn true_rank(&self, query: &str) -> Option<usize> {
        let target = self.pairs.get(query)?;
        self.ranking
            .get(query)?
            .iter()
            .position(|(t, _)| t == target)
            .map(|p| p + 1)
    }

    pub fn to_json(&self) -> MatchReportJson {
        MatchReportJson {
            ranking: self.ranking.clone(),
            topk: self.topk_hits.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            n: self.queries.len(),
        }
    }

    /// Human-readable summary table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str("query\ttrue_target\trank\tbest_target\tbest_distance\n");
        for q in &self.queries {
            let ranked = &self.ranking[q];
            let (best, dist) = ranked.first().map(|(t, d)| (t.as_str(), *d)).unwrap_or(("-", f64::NAN));
            let rank = self.true_rank(q).map_or("-".to_string(), |r| r.to_string());
            out.push_str(&format!("{q}\t{}\t{rank}\t{best}\t{dist:.6}\n", self.pairs[q]));
        }
        let n = self.queries.len();
        for (k, hits) in &self.topk_hits {
            out.push_str(&format!("top-{k}\t{hits}/{n}\n"));
        }
        out
    }
}

/// Wire form of a [`MatchReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchReportJson {
    pub ranking: BTreeMap<String, Vec<(String, f64)>>,
    pub topk: BTreeMap<String, usize>,
    pub n: usize,
}

/// Pairing file contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingFile {
    pub pairs: Vec<Pair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub query: String,
    pub target: String,
}

impl PairingFile {
    pub fn into_map(self) -> Result<BTreeMap<String, String>> {
        let mut map = BTreeMap::new();
        for p in self.pairs {
            if map.insert(p.query.clone(), p.target).is_some() {
                return Err(Error::InvalidPairing(format!("query {} paired twice", p.query)));
            }
        }
        Ok(map)
    }
}

fn unique_ids<'a>(kind: &str, ids: impl Iterator<Item = &'a String>) -> Result<HashSet<&'a str>> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidPairing(format!("duplicate {kind} id {id}")));
        }
    }
    Ok(seen)
}

/// Z-normalizes every series, computes all query/target cDTW distances and
/// tallies how often the paired target lands in the top 1, 2 and 3.
pub fn rank_matches(
    queries: &[(String, FixedWindowSeries)],
    targets: &[(String, FixedWindowSeries)],
    pairs: &BTreeMap<String, String>,
    band_radius: usize,
) -> Result<MatchReport> {
    if queries.is_empty() || targets.is_empty() {
        return Err(Error::InvalidPairing("need at least one query and one target".into()));
    }
    unique_ids("query", queries.iter().map(|(id, _)| id))?;
    let target_ids = unique_ids("target", targets.iter().map(|(id, _)| id))?;
    for (q, _) in queries {
        let t = pairs
            .get(q)
            .ok_or_else(|| Error::InvalidPairing(format!("query {q} has no paired target")))?;
        if !target_ids.contains(t.as_str()) {
            return Err(Error::InvalidPairing(format!(
                "query {q} is paired with unknown target {t}"
            )));
        }
    }

    let norm = |set: &[(String, FixedWindowSeries)]| -> Result<Vec<NormalizedSeries>> {
        set.iter().map(|(_, s)| znorm(s.values())).collect()
    };
    let qn = norm(queries)?;
    let tn = norm(targets)?;

    let rows: Vec<Vec<(String, f64)>> = qn
        .par_iter()
        .map(|q| {
            let mut ranked = targets
                .iter()
                .zip(&tn)
                .map(|((id, _), t)| Ok((id.clone(), cdtw_distance(q.values(), t.values(), band_radius)?)))
                .collect::<Result<Vec<_>>>()?;
            ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
            Ok(ranked)
        })
        .collect::<Result<_>>()?;

    let mut report = MatchReport {
        queries: queries.iter().map(|(id, _)| id.clone()).collect(),
        ranking: BTreeMap::new(),
        pairs: queries.iter().map(|(id, _)| (id.clone(), pairs[id].clone())).collect(),
        topk_hits: BTreeMap::new(),
    };
    for ((id, _), ranked) in queries.iter().zip(rows) {
        report.ranking.insert(id.clone(), ranked);
    }
    for k in TOP_K {
        let hits = report
            .queries
            .iter()
            .filter(|q| report.true_rank(q).is_some_and(|r| r <= k))
            .count();
        report.topk_hits.insert(k, hits);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_normalizes_to_zero() {
        assert_eq!(znorm(&[5.0; 4]).unwrap().values(), &[0.0; 4]);
    }

    #[test]
    fn three_point_series() {
        let z = znorm(&[1.0, 2.0, 3.0]).unwrap();
        let e = 1.0 / (2.0f64 / 3.0).sqrt();
        for (a, b) in z.values().iter().zip([-e, 0.0, e]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((e - 1.224_744_871_391_589).abs() < 1e-12);
    }

    #[test]
    fn znorm_errors() {
        assert!(matches!(znorm(&[]), Err(Error::EmptySeries)));
        assert!(matches!(znorm(&[1.0, f64::NAN]), Err(Error::InvalidValue(_))));
        assert!(matches!(znorm(&[1.0, f64::INFINITY]), Err(Error::InvalidValue(_))));
    }

    #[test]
    fn identical_series_have_zero_distance() {
        let a = [0.3, -1.0, 2.0, 0.0];
        assert_eq!(cdtw_distance(&a, &a, 1).unwrap(), 0.0);
    }

    #[test]
    fn small_shift_is_absorbed() {
        assert_eq!(cdtw_distance(&[0.0, 0.0, 1.0], &[0.0, 1.0, 0.0], 1).unwrap(), 1.0);
    }

    #[test]
    fn zero_band_is_manhattan() {
        let a = [1.0, 4.0, -2.0, 0.5];
        let b = [0.0, 1.0, 1.0, 1.0];
        let l1: f64 = a.iter().zip(b).map(|(x, y): (&f64, f64)| (x - y).abs()).sum();
        assert_eq!(cdtw_distance(&a, &b, 0).unwrap(), l1);
    }

    #[test]
    fn band_errors() {
        assert!(matches!(
            cdtw_distance(&[1.0, 2.0, 3.0], &[1.0], 1),
            Err(Error::BandInfeasible { .. })
        ));
        assert!(cdtw_distance(&[1.0, 2.0], &[1.0], 1).is_ok());
        assert!(matches!(cdtw_distance(&[], &[], 1), Err(Error::EmptySeries)));
    }

    fn window(f: impl Fn(usize) -> f64) -> FixedWindowSeries {
        FixedWindowSeries::new((0..400).map(f).collect()).unwrap()
    }

    #[test]
    fn self_retrieval_hits_everything() {
        let set: Vec<(String, FixedWindowSeries)> = (0..5)
            .map(|k| (format!("c{k}"), window(|i| ((i as f64) * 0.01 * (k + 1) as f64).sin())))
            .collect();
        let pairs = set.iter().map(|(id, _)| (id.clone(), id.clone())).collect();
        let r = rank_matches(&set, &set, &pairs, 1).unwrap();
        assert_eq!(r.topk_hits[&1], 5);
        for (q, _) in &set {
            assert_eq!(r.ranking[q][0], (q.clone(), 0.0));
        }
    }

    #[test]
    fn ties_break_by_target_id() {
        let q = vec![("q".to_string(), window(|i| i as f64))];
        let t = vec![
            ("b".to_string(), window(|i| i as f64)),
            ("a".to_string(), window(|i| 2.0 * i as f64 + 1.0)),
        ];
        let pairs = [("q".to_string(), "b".to_string())].into_iter().collect();
        let r = rank_matches(&q, &t, &pairs, 1).unwrap();
        assert_eq!(r.ranking["q"][0].0, "a");
        assert_eq!(r.true_rank("q"), Some(2));
        assert_eq!(r.topk_hits[&1], 0);
        assert_eq!(r.topk_hits[&2], 1);
    }

    #[test]
    fn bad_pairings_are_rejected() {
        let s = vec![("x".to_string(), window(|i| i as f64))];
        let unknown = [("x".to_string(), "nope".to_string())].into_iter().collect();
        assert!(matches!(
            rank_matches(&s, &s, &unknown, 1),
            Err(Error::InvalidPairing(_))
        ));
        assert!(matches!(
            rank_matches(&s, &s, &BTreeMap::new(), 1),
            Err(Error::InvalidPairing(_))
        ));
        let dup = PairingFile {
            pairs: vec![
                Pair {
                    query: "x".into(),
                    target: "x".into(),
                },
                Pair {
                    query: "x".into(),
                    target: "y".into(),
                },
            ],
        };
        assert!(dup.into_map().is_err());
    }

    #[test]
    fn report_json_shape() {
        let s = vec![("x".to_string(), window(|i| i as f64))];
        let pairs = [("x".to_string(), "x".to_string())].into_iter().collect();
        let r = rank_matches(&s, &s, &pairs, 1).unwrap();
        let json = serde_json::to_string(&r.to_json()).unwrap();
        assert_eq!(
            json,
            r#"{"ranking":{"x":[["x",0.0]]},"topk":{"1":1,"2":1,"3":1},"n":1}"#
        );
    }
}
