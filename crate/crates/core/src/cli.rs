//! `tilprofile` command line: profile, deconvolve, match, eval-dice, synth, plot.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::io;
use crate::matching::{rank_matches, PairingFile, DEFAULT_BAND_RADIUS};
use crate::metrics::{
    object_level_dice, points_to_disks, CentersFile, ObjectDiceReport, PatchDice, DEFAULT_DISK_RADIUS_UM,
};
use crate::plot;
use crate::profile::{profile_labels, to_fixed_window, DEFAULT_BIN_WIDTH_UM, WINDOW_BIN_WIDTH_UM};
use crate::slide::{rasterize_annotations, AnnotationSet, SlideMeta, Stain};
use crate::stain::{dab_lymphocyte_mask, StainMatrix, StainMatrixConfig, DEFAULT_DAB_THRESHOLD, DEFAULT_MIN_AREA_PX};
use crate::synth::{generate_case, oracle_curve, MarginGeometry, ProfileSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Pipeline settings after merging defaults, `--config` and flags.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub bin_width_um: f64,
    pub dab_threshold: f64,
    pub min_area_px: usize,
    pub band_radius_bins: usize,
    pub stain_matrix_path: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            bin_width_um: DEFAULT_BIN_WIDTH_UM,
            dab_threshold: DEFAULT_DAB_THRESHOLD,
            min_area_px: DEFAULT_MIN_AREA_PX,
            band_radius_bins: DEFAULT_BAND_RADIUS,
            stain_matrix_path: None,
            output_dir: PathBuf::from("."),
        }
    }
}

/// `--config` file: every field optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    bin_width_um: Option<f64>,
    dab_threshold: Option<f64>,
    min_area_px: Option<usize>,
    band_radius_bins: Option<usize>,
    stain_matrix_path: Option<PathBuf>,
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON file setting any pipeline field; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving all outputs.
    #[arg(short = 'o', long = "output-dir", global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(
    name = "tilprofile",
    version,
    about = "Lymphocyte infiltration profiles at tumor margins"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Label mask (or annotations) + lymphocyte mask -> infiltration curve.
    Profile(ProfileArgs),
    /// IHC RGB image -> DAB lymphocyte mask.
    Deconvolve(DeconvolveArgs),
    /// Rank target curves for each query curve by cDTW distance.
    Match(MatchArgs),
    /// Object-level Dice of predicted against ground-truth masks.
    EvalDice(EvalDiceArgs),
    /// Generate a synthetic case from a piecewise-constant profile.
    Synth(SynthArgs),
    /// Render a curve as an SVG line plot.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct ProfileArgs {
    #[arg(long, conflicts_with = "annotations", required_unless_present = "annotations")]
    labels: Option<PathBuf>,
    /// Polygon annotations, rasterized at the slide geometry of --meta.
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    lymph: PathBuf,
    /// SlideMeta sidecar shared by labels and lymphocyte mask.
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    bin_width_um: Option<f64>,
}

#[derive(Debug, Args)]
struct DeconvolveArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    stain_matrix: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
    #[arg(long)]
    min_area_px: Option<usize>,
}

#[derive(Debug, Args)]
struct MatchArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    targets: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    band_radius_bins: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalDiceArgs {
    /// Predicted mask PNG, or a directory of them.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth mask PNG or centers JSON, or a directory of them (matched by file stem).
    #[arg(long)]
    gt: PathBuf,
    /// Pixel pitch for centers JSON ground truth.
    #[arg(long)]
    microns_per_pixel: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_DISK_RADIUS_UM)]
    disk_radius_um: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GeometryKind {
    Straight,
    Sine,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, value_enum, default_value = "straight")]
    geometry: GeometryKind,
    #[arg(long, default_value_t = 100.0)]
    amplitude_um: f64,
    #[arg(long, default_value_t = 1000.0)]
    period_um: f64,
    #[arg(long, default_value_t = 2000)]
    width_px: usize,
    #[arg(long, default_value_t = 2000)]
    height_px: usize,
    #[arg(long, default_value_t = 2.0)]
    microns_per_pixel: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    curve: PathBuf,
    #[arg(long)]
    title: Option<String>,
}

fn resolve_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &common.config {
        let file: ConfigFile = io::read_json(path)?;
        if let Some(v) = file.bin_width_um {
            cfg.bin_width_um = v;
        }
        if let Some(v) = file.dab_threshold {
            cfg.dab_threshold = v;
        }
        if let Some(v) = file.min_area_px {
            cfg.min_area_px = v;
        }
        if let Some(v) = file.band_radius_bins {
            cfg.band_radius_bins = v;
        }
        cfg.stain_matrix_path = file.stain_matrix_path;
        if let Some(v) = file.output_dir {
            cfg.output_dir = v;
        }
    }
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidValue(format!("{name} must be positive, got {v}")))
    }
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::format(path, "file name is not valid UTF-8"))
}

struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<(String, Vec<u8>)>,
}

impl<'a> Outputs<'a> {
    fn new(dir: &'a Path) -> Self {
        Outputs { dir, files: Vec::new() }
    }

    fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    /// Writes everything once all outputs have been computed.
    fn commit(self, stdout: &mut dyn Write) -> Result<()> {
        for (name, bytes) in &self.files {
            let path = io::write_atomic(self.dir, name, bytes)?;
            let _ = writeln!(stdout, "wrote {}", path.display());
        }
        Ok(())
    }
}

fn cmd_profile(args: &ProfileArgs, cfg: &PipelineConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let bin_width = positive("bin_width_um", args.bin_width_um.unwrap_or(cfg.bin_width_um))?;
    let meta: SlideMeta = io::read_json(&args.meta)?;
    let labels = match (&args.labels, &args.annotations) {
        (Some(path), _) => io::read_labels(path, &meta)?,
        (None, Some(path)) => rasterize_annotations(&io::read_json::<AnnotationSet>(path)?, &meta)?,
        (None, None) => unreachable!("clap requires one of --labels / --annotations"),
    };
    let lymph = io::read_mask(&args.lymph, &meta)?;
    let curve = profile_labels(&labels, &lymph, bin_width)?;

    let mut out = Outputs::new(&cfg.output_dir);
    out.add("curve.csv", io::curve_to_csv(&curve));
    out.add("curve.json", io::to_json_bytes(&curve));
    if (bin_width - WINDOW_BIN_WIDTH_UM).abs() <= 1e-9 {
        out.add("window.csv", io::window_to_csv(&to_fixed_window(&curve)?));
    } else {
        let _ = writeln!(stderr, "note: bin width {bin_width} µm, skipping the ±2 mm window");
    }
    out.commit(stdout)
}

fn cmd_deconvolve(args: &DeconvolveArgs, cfg: &PipelineConfig, stdout: &mut dyn Write) -> Result<()> {
    let meta: SlideMeta = io::read_json(&args.meta)?;
    let threshold = args.threshold.unwrap_or(cfg.dab_threshold);
    if threshold.is_nan() {
        return Err(Error::InvalidValue("threshold is NaN".into()));
    }
    let min_area = args.min_area_px.unwrap_or(cfg.min_area_px);
    let matrix = match args.stain_matrix.as_ref().or(cfg.stain_matrix_path.as_ref()) {
        Some(path) => io::read_json::<StainMatrixConfig>(path)?.build()?,
        None => StainMatrix::h_dab(),
    };
    let image = io::read_rgb(&args.image)?;
    let mask = dab_lymphocyte_mask(&image, &meta, &matrix, threshold, min_area)?;

    let mut out = Outputs::new(&cfg.output_dir);
    out.add("mask.png", io::encode_mask(mask.mask()));
    out.add("mask.json", io::to_json_bytes(mask.meta()));
    out.commit(stdout)
}

fn cmd_match(args: &MatchArgs, cfg: &PipelineConfig, stdout: &mut dyn Write) -> Result<()> {
    let radius = args.band_radius_bins.unwrap_or(cfg.band_radius_bins);
    let queries = io::read_curve_dir(&args.queries)?;
    let targets = io::read_curve_dir(&args.targets)?;
    let pairs = io::read_json::<PairingFile>(&args.pairs)?.into_map()?;
    let report = rank_matches(&queries, &targets, &pairs, radius)?;

    let mut out = Outputs::new(&cfg.output_dir);
    out.add("report.json", io::to_json_bytes(&report.to_json()));
    out.commit(stdout)?;
    let _ = stdout.write_all(report.table().as_bytes());
    Ok(())
}

fn load_gt(path: &Path, dims: (usize, usize), mpp: Option<f64>, radius_um: f64) -> Result<crate::grid::Grid<bool>> {
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        let mpp = mpp.ok_or_else(|| Error::InvalidValue("centers ground truth needs --microns-per-pixel".into()))?;
        let meta = SlideMeta::new(mpp, dims.0, dims.1, Stain::He)?;
        let centers: CentersFile = io::read_json(path)?;
        points_to_disks(&centers.centers, radius_um, &meta)
    } else {
        io::read_binary_png(path)
    }
}

fn cmd_eval_dice(args: &EvalDiceArgs, cfg: &PipelineConfig, stdout: &mut dyn Write) -> Result<()> {
    let pairs: Vec<(String, PathBuf, PathBuf)> = if args.pred.is_dir() {
        let mut preds: Vec<PathBuf> = std::fs::read_dir(&args.pred)
            .map_err(|e| Error::io(&args.pred, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
            .collect();
        preds.sort();
        preds
            .into_iter()
            .map(|p| {
                let id = stem(&p)?;
                let png = args.gt.join(format!("{id}.png"));
                let json = args.gt.join(format!("{id}.json"));
                let gt = match (png.exists(), json.exists()) {
                    (true, _) => png,
                    (false, true) => json,
                    (false, false) => return Err(Error::FileNotFound(png)),
                };
                Ok((id, p, gt))
            })
            .collect::<Result<_>>()?
    } else {
        vec![(stem(&args.pred)?, args.pred.clone(), args.gt.clone())]
    };

    let mut per_patch = Vec::with_capacity(pairs.len());
    for (id, pred_path, gt_path) in pairs {
        let pred = io::read_binary_png(&pred_path)?;
        let gt = load_gt(&gt_path, pred.dims(), args.microns_per_pixel, args.disk_radius_um)?;
        per_patch.push(PatchDice {
            patch: id,
            dice: object_level_dice(&pred, &gt)?,
        });
    }
    let report = ObjectDiceReport::new(per_patch)?;

    let mut out = Outputs::new(&cfg.output_dir);
    out.add("dice.json", io::to_json_bytes(&report));
    out.commit(stdout)?;
    let _ = writeln!(
        stdout,
        "mean object-level Dice: {:.6} over {} patches",
        report.mean_dice,
        report.per_patch.len()
    );
    Ok(())
}

fn cmd_synth(args: &SynthArgs, cfg: &PipelineConfig, stdout: &mut dyn Write) -> Result<()> {
    let spec: ProfileSpec = io::read_json(&args.spec)?;
    let meta = SlideMeta::new(args.microns_per_pixel, args.width_px, args.height_px, Stain::He)?;
    let geometry = match args.geometry {
        GeometryKind::Straight => MarginGeometry::Straight,
        GeometryKind::Sine => MarginGeometry::Sine {
            amplitude_um: args.amplitude_um,
            period_um: args.period_um,
        },
    };
    let case = generate_case(&spec, geometry, &meta, args.seed)?;

    let mut out = Outputs::new(&cfg.output_dir);
    out.add("labels.png", io::encode_labels(&case.labels));
    out.add("labels.json", io::to_json_bytes(case.labels.meta()));
    out.add("lymph_a.png", io::encode_mask(case.lymph_a.mask()));
    out.add("lymph_a.json", io::to_json_bytes(case.lymph_a.meta()));
    out.add("lymph_b.png", io::encode_mask(case.lymph_b.mask()));
    out.add("lymph_b.json", io::to_json_bytes(case.lymph_b.meta()));
    out.add("oracle.csv", io::window_to_csv(&oracle_curve(&spec)));
    out.commit(stdout)
}

fn cmd_plot(args: &PlotArgs, cfg: &PipelineConfig, stdout: &mut dyn Write) -> Result<()> {
    let id = stem(&args.curve)?;
    let title = args.title.clone().unwrap_or_else(|| id.clone());
    let svg = match io::read_curve(&args.curve)? {
        io::CurveFile::Curve(c) => plot::curve_svg(&c, &title),
        io::CurveFile::Window(w) => plot::window_svg(&w, &title),
    };
    let mut out = Outputs::new(&cfg.output_dir);
    out.add(format!("{id}.svg"), svg.into_bytes());
    out.commit(stdout)
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    match &cli.command {
        Command::Profile(a) => cmd_profile(a, &cfg, stdout, stderr),
        Command::Deconvolve(a) => cmd_deconvolve(a, &cfg, stdout),
        Command::Match(a) => cmd_match(a, &cfg, stdout),
        Command::EvalDice(a) => cmd_eval_dice(a, &cfg, stdout),
        Command::Synth(a) => cmd_synth(a, &cfg, stdout),
        Command::Plot(a) => cmd_plot(a, &cfg, stdout),
    }
}

/// Runs the CLI with explicit output streams and returns the exit code:
/// 0 success, 1 usage error, 2 data error (error name printed first).
pub fn run_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(&cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "{}: {e}", e.name());
            EXIT_DATA
        }
    }
}

/// Runs the CLI against the process's standard streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}
