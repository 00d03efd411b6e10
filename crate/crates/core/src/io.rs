//! File formats: label / mask / RGB rasters, JSON sidecars, curve CSV and
//! JSON, and atomic output writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::profile::{FixedWindowSeries, InfiltrationCurve, WINDOW_BINS};
use crate::slide::{RegionLabel, SlideMeta, TissueLabelMask};
use crate::stain::LymphocyteMask;

pub const CURVE_CSV_HEADER: [&str; 5] = ["bin_start_um", "bin_end_um", "density", "tissue_px", "lymph_px"];
pub const WINDOW_CSV_HEADER: [&str; 3] = ["bin_start_um", "bin_end_um", "density"];

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

/// Writes `bytes` to `dir/name` via a temporary file in `dir` and a rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let target = dir.join(name);
    let mut tmp = tempfile::Builder::new()
        .prefix(&format!(".{name}."))
        .tempfile_in(dir)
        .map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(&target).map_err(|e| Error::io(&target, e.error))?;
    Ok(target)
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader.no_limits();
    reader.decode().map_err(|e| Error::format(path, e))
}

fn check_dims(meta: &SlideMeta, w: u32, h: u32) -> Result<()> {
    if (w as usize, h as usize) != meta.dims() {
        return Err(Error::ShapeMismatch {
            expected: meta.dims(),
            actual: (w as usize, h as usize),
        });
    }
    Ok(())
}

/// Reads a palette label image: 0 Background, 1 Normal, 2 Neoplastic, 3 Irrelevant.
pub fn read_labels(path: &Path, meta: &SlideMeta) -> Result<TissueLabelMask> {
    let img = match open_image(path)? {
        DynamicImage::ImageLuma8(img) => img,
        other => {
            return Err(Error::format(
                path,
                format!("label image must be 8-bit single channel, got {:?}", other.color()),
            ))
        }
    };
    check_dims(meta, img.width(), img.height())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let mut data = Vec::with_capacity(raw.len());
    for (i, &v) in raw.iter().enumerate() {
        let label = RegionLabel::from_u8(v).ok_or_else(|| {
            Error::format(
                path,
                format!("pixel ({}, {}) has label value {v}, expected 0..=3", i % w, i / w),
            )
        })?;
        data.push(label);
    }
    TissueLabelMask::new(*meta, Grid::from_vec(w, h, data)?)
}

fn encode_gray(w: usize, h: usize, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(data, w as u32, h as u32, ExtendedColorType::L8)
        .expect("in-memory PNG encoding");
    out
}

pub fn encode_labels(mask: &TissueLabelMask) -> Vec<u8> {
    let g = mask.labels();
    let data: Vec<u8> = g.as_slice().iter().map(|l| l.as_u8()).collect();
    encode_gray(g.width(), g.height(), &data)
}

/// Binary mask image; any non-zero gray value is positive.
pub fn read_mask(path: &Path, meta: &SlideMeta) -> Result<LymphocyteMask> {
    let img = open_image(path)?.into_luma8();
    check_dims(meta, img.width(), img.height())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|v| v != 0).collect();
    LymphocyteMask::new(*meta, Grid::from_vec(w, h, data)?)
}

/// Binary mask image without a metadata sidecar.
pub fn read_binary_png(path: &Path) -> Result<Grid<bool>> {
    let img = open_image(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Grid::from_vec(w, h, img.into_raw().into_iter().map(|v| v != 0).collect())
}

pub fn encode_mask(mask: &Grid<bool>) -> Vec<u8> {
    let data: Vec<u8> = mask.as_slice().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_gray(mask.width(), mask.height(), &data)
}

pub fn read_rgb(path: &Path) -> Result<Grid<[u8; 3]>> {
    let img = open_image(path)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0).collect();
    Grid::from_vec(w, h, data)
}

pub fn encode_rgb(image: &Grid<[u8; 3]>) -> Vec<u8> {
    let data: Vec<u8> = image.as_slice().iter().flatten().copied().collect();
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(
            &data,
            image.width() as u32,
            image.height() as u32,
            ExtendedColorType::Rgb8,
        )
        .expect("in-memory PNG encoding");
    out
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

pub fn curve_to_csv(curve: &InfiltrationCurve) -> Vec<u8> {
    let mut w = csv_writer();
    w.write_record(CURVE_CSV_HEADER).expect("in-memory write");
    for i in 0..curve.len() {
        w.write_record([
            curve.bin_edges_um[i].to_string(),
            curve.bin_edges_um[i + 1].to_string(),
            curve.density[i].to_string(),
            curve.tissue_px[i].to_string(),
            curve.lymph_px[i].to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn window_to_csv(series: &FixedWindowSeries) -> Vec<u8> {
    let mut w = csv_writer();
    w.write_record(WINDOW_CSV_HEADER).expect("in-memory write");
    for (i, v) in series.values().iter().enumerate() {
        let (a, b) = FixedWindowSeries::bin_range(i);
        w.write_record([a.to_string(), b.to_string(), v.to_string()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Curve file contents: a full per-bin curve or an already windowed series.
#[derive(Clone, Debug, PartialEq)]
pub enum CurveFile {
    Curve(InfiltrationCurve),
    Window(FixedWindowSeries),
}

impl CurveFile {
    pub fn into_window(self) -> Result<FixedWindowSeries> {
        match self {
            CurveFile::Curve(c) => crate::profile::to_fixed_window(&c),
            CurveFile::Window(w) => Ok(w),
        }
    }
}

fn parse_field<T: std::str::FromStr>(path: &Path, row: usize, field: Option<&str>) -> Result<T> {
    field
        .and_then(|f| f.trim().parse().ok())
        .ok_or_else(|| Error::format(path, format!("row {row}: missing or malformed field")))
}

pub fn read_curve_csv(path: &Path) -> Result<CurveFile> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_slice());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::format(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let records: Vec<csv::StringRecord> = reader
        .records()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(path, e))?;
    if records.is_empty() {
        return Err(Error::format(path, "curve has no rows"));
    }

    if header == CURVE_CSV_HEADER {
        let mut edges = Vec::with_capacity(records.len() + 1);
        let (mut density, mut tissue, mut lymph) = (Vec::new(), Vec::new(), Vec::new());
        for (i, r) in records.iter().enumerate() {
            let start: f64 = parse_field(path, i, r.get(0))?;
            let end: f64 = parse_field(path, i, r.get(1))?;
            if i == 0 {
                edges.push(start);
            } else if start != edges[i] {
                return Err(Error::format(path, format!("row {i}: bins are not contiguous")));
            }
            edges.push(end);
            density.push(parse_field(path, i, r.get(2))?);
            tissue.push(parse_field(path, i, r.get(3))?);
            lymph.push(parse_field(path, i, r.get(4))?);
        }
        let curve = InfiltrationCurve {
            bin_width_um: edges[1] - edges[0],
            bin_edges_um: edges,
            density,
            tissue_px: tissue,
            lymph_px: lymph,
        };
        curve.validate().map_err(|e| Error::format(path, e))?;
        Ok(CurveFile::Curve(curve))
    } else if header == WINDOW_CSV_HEADER {
        let mut values = Vec::with_capacity(WINDOW_BINS);
        for (i, r) in records.iter().enumerate() {
            let start: f64 = parse_field(path, i, r.get(0))?;
            let expected = FixedWindowSeries::bin_range(i).0;
            if (start - expected).abs() > 1e-6 {
                return Err(Error::format(
                    path,
                    format!("row {i}: bin starts at {start}, expected {expected}"),
                ));
            }
            values.push(parse_field(path, i, r.get(2))?);
        }
        FixedWindowSeries::new(values)
            .map(CurveFile::Window)
            .map_err(|e| Error::format(path, e))
    } else {
        Err(Error::format(path, format!("unrecognized header {header:?}")))
    }
}

/// Loads a curve from `.csv` or `.json`.
pub fn read_curve(path: &Path) -> Result<CurveFile> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_curve_csv(path),
        Some("json") => {
            let curve: InfiltrationCurve = read_json(path)?;
            curve.validate().map_err(|e| Error::format(path, e))?;
            Ok(CurveFile::Curve(curve))
        }
        _ => Err(Error::format(path, "curve files must be .csv or .json")),
    }
}

/// Curve files of a directory keyed by file stem, sorted by id.
pub fn read_curve_dir(dir: &Path) -> Result<Vec<(String, FixedWindowSeries)>> {
    if !dir.is_dir() {
        return Err(Error::FileNotFound(dir.to_path_buf()));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    paths.retain(|p| p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json")));
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let id = p
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::format(&p, "file name is not valid UTF-8"))?
            .to_string();
        if out.iter().any(|(existing, _): &(String, _)| *existing == id) {
            return Err(Error::format(&p, format!("duplicate curve id {id}")));
        }
        out.push((id, read_curve(&p)?.into_window()?));
    }
    if out.is_empty() {
        return Err(Error::format(dir, "directory holds no .csv or .json curves"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slide::Stain;

    #[test]
    fn curve_csv_round_trip() {
        let c = InfiltrationCurve::from_counts(10.0, -3, vec![4, 0, 7, 9], vec![1, 0, 7, 3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = write_atomic(dir.path(), "c.csv", &curve_to_csv(&c)).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("bin_start_um,bin_end_um,density,tissue_px,lymph_px\n-30,-20,0.25,4,1\n"));
        assert_eq!(read_curve(&p).unwrap(), CurveFile::Curve(c));
    }

    #[test]
    fn window_csv_round_trip() {
        let w = FixedWindowSeries::new((0..400).map(|i| i as f64 / 400.0).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = write_atomic(dir.path(), "w.csv", &window_to_csv(&w)).unwrap();
        assert_eq!(read_curve(&p).unwrap(), CurveFile::Window(w));
    }

    #[test]
    fn label_png_round_trip_and_bad_palette() {
        let meta = SlideMeta::new(1.0, 3, 2, Stain::He).unwrap();
        let labels = Grid::from_fn(3, 2, |x, y| RegionLabel::from_u8(((x + y) % 4) as u8).unwrap());
        let mask = TissueLabelMask::new(meta, labels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = write_atomic(dir.path(), "l.png", &encode_labels(&mask)).unwrap();
        assert_eq!(read_labels(&p, &meta).unwrap(), mask);

        let bad = write_atomic(dir.path(), "bad.png", &encode_gray(3, 2, &[0, 1, 2, 3, 4, 0])).unwrap();
        assert!(matches!(read_labels(&bad, &meta), Err(Error::Format { .. })));
        let other = SlideMeta::new(1.0, 4, 2, Stain::He).unwrap();
        assert!(matches!(read_labels(&p, &other), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn missing_files_are_named() {
        let meta = SlideMeta::new(1.0, 3, 2, Stain::He).unwrap();
        let e = read_labels(Path::new("/nonexistent/missing.png"), &meta).unwrap_err();
        assert_eq!(e.name(), "FileNotFound");
        let e = read_json::<SlideMeta>(Path::new("/nonexistent/meta.json")).unwrap_err();
        assert_eq!(e.name(), "FileNotFound");
    }
}
