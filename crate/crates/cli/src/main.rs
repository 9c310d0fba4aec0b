//! `pseudoref` — corrupt images, run the spectral surrogate, pick stopping
//! points with pseudo-reference criteria and tabulate PSNR gaps.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 a check failed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use pseudoref::bundle::{read_bundle, write_bundle, AuxRecord, Bundle, NoiseRecord};
use pseudoref::corruption::{
    corrupt, derive_seed, make_aux_pair, sample_mask, NoiseFamily, NoiseSpec, DEFAULT_AUX_SCALE,
    DEFAULT_KEEP_PROBABILITY,
};
use pseudoref::harness::run_suite;
use pseudoref::pipeline::{criterion_curve, mean_std, window_in_frames, CriterionInputs, DEFAULT_WINDOW_ITERATIONS};
use pseudoref::regsel::{oracle_lambda, select_lambda, LambdaGrid};
use pseudoref::stoppers::{frame_psnrs, oracle_index, Criterion, DEFAULT_BURN_IN_FRACTION};
use pseudoref::surrogate::{run_augmented, run_masked, run_plain, SurrogateConfig};
use pseudoref::{ImageTensor, Shape, Trajectory};

#[derive(Debug, Parser)]
#[command(name = "pseudoref", version, about = "Pseudo-reference early stopping for image reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Corrupt a clean 8-bit PNG (mapped to [0, 1] by /255) into an input bundle.
    Corrupt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        family: Family,
        /// σ (gaussian), photon scale λ (poisson) or probability p (impulse).
        #[arg(long)]
        level: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_AUX_SCALE)]
        aux_scale: f64,
        #[arg(long, default_value_t = 0.0)]
        aux_offset: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the spectral surrogate on an input bundle.
    Run {
        #[arg(long, value_enum)]
        mode: Mode,
        /// JSON run configuration; every field is optional.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Input bundle; overrides `input` in the configuration.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate stopping criteria on a trajectory bundle.
    Stop {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "csr")]
        criteria: Vec<Criterion>,
        /// WMV window in iterations.
        #[arg(long, default_value_t = DEFAULT_WINDOW_ITERATIONS)]
        window: u64,
        #[arg(long, default_value_t = DEFAULT_BURN_IN_FRACTION)]
        burn_in_frac: f64,
        /// Noise level for SURE; defaults to the bundle's gaussian σ.
        #[arg(long)]
        sigma: Option<f64>,
        /// Clean PNG used for PSNR fields when the bundle carries none.
        #[arg(long)]
        clean: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Directory for one `iteration,value` CSV per criterion.
        #[arg(long)]
        curves_dir: Option<PathBuf>,
    },
    /// Tabulate gaps (mean ± std) over stop reports, recomputing each from its bundle.
    Eval {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        /// Clean PNG; defaults to each bundle's clean payload.
        #[arg(long)]
        clean: Option<PathBuf>,
        /// CSV output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select a Tikhonov strength with the closest-channel pseudo-reference.
    SweepLambda {
        /// Noisy PNG or bundle directory.
        #[arg(long = "in")]
        input: PathBuf,
        /// Clean PNG for the oracle column; defaults to a bundle's clean payload.
        #[arg(long)]
        clean: Option<PathBuf>,
        /// Log-spaced grid `min:max:count`.
        #[arg(long, default_value = "1e-3:1e2:40")]
        grid_spec: LambdaGrid,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the empirical guarantee checks.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Family {
    Gaussian,
    Poisson,
    Impulse,
}

impl From<Family> for NoiseFamily {
    fn from(f: Family) -> Self {
        match f {
            Family::Gaussian => NoiseFamily::Gaussian,
            Family::Poisson => NoiseFamily::Poisson,
            Family::Impulse => NoiseFamily::Impulse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Plain,
    Masked,
    Augmented,
}

/// A check ran but did not pass (exit code 4).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct CheckFailed(String);

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    /// Relative paths resolve against the configuration file.
    input: Option<PathBuf>,
    surrogate: SurrogateConfig,
    keep_probability: f64,
    /// Defaults to a stream derived from the bundle's noise seed.
    mask_seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { input: None, surrogate: SurrogateConfig::default(), keep_probability: DEFAULT_KEEP_PROBABILITY, mask_seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CriterionResult {
    criterion: String,
    selected_iteration: u64,
    selected_psnr: Option<f64>,
    oracle_iteration: Option<u64>,
    oracle_psnr: Option<f64>,
    gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StopFile {
    bundle: PathBuf,
    mode: String,
    window_iterations: u64,
    burn_in_fraction: f64,
    sigma: Option<f64>,
    results: Vec<CriterionResult>,
}

const GAP_TOLERANCE: f64 = 1e-9;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<CheckFailed>().is_some() => {
            eprintln!("check failed: {e:#}");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Corrupt { input, family, level, seed, aux_scale, aux_offset, out } => {
            cmd_corrupt(&input, family.into(), level, seed, aux_scale, aux_offset, &out)
        }
        Command::Run { mode, config, input, out } => cmd_run(mode, config.as_deref(), input, &out),
        Command::Stop { bundle, criteria, window, burn_in_frac, sigma, clean, out, curves_dir } => cmd_stop(
            &bundle,
            &criteria,
            window,
            burn_in_frac,
            sigma,
            clean.as_deref(),
            &out,
            curves_dir.as_deref(),
        ),
        Command::Eval { reports, clean, out } => cmd_eval(&reports, clean.as_deref(), out.as_deref()),
        Command::SweepLambda { input, clean, grid_spec, out } => {
            cmd_sweep(&input, clean.as_deref(), &grid_spec, out.as_deref())
        }
        Command::Verify { suite, seed, out } => cmd_verify(&suite, seed, out.as_deref()),
    }
}

/// Loads an 8-bit PNG as `[0, 1]` intensities: grayscale gives one channel,
/// colour gives three (alpha is dropped).
fn load_png(path: &Path) -> anyhow::Result<ImageTensor> {
    let img = image::open(path).with_context(|| format!("cannot read image {}", path.display()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = if img.color().has_color() {
        (3, img.to_rgb8().into_raw())
    } else {
        (1, img.to_luma8().into_raw())
    };
    let tensor = ImageTensor::from_fn(Shape::new(channels, h, w), |c, r, col| {
        raw[(r * w + col) * channels + c] as f64 / 255.0
    })?;
    Ok(tensor)
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn cmd_corrupt(
    input: &Path,
    family: NoiseFamily,
    level: f64,
    seed: u64,
    aux_scale: f64,
    aux_offset: f64,
    out: &Path,
) -> anyhow::Result<()> {
    let clean = load_png(input)?;
    let spec = NoiseSpec::new(family, level)?.with_aux(aux_scale, aux_offset)?;
    let y = corrupt(&clean, &spec, derive_seed(seed, 0))?;
    let aux_seeds = (derive_seed(seed, 1), derive_seed(seed, 2));
    let (y1, y2) = make_aux_pair(&y, &spec, aux_seeds)?;
    let tau = spec.aux_level();
    let bundle = Bundle {
        aux: Some(AuxRecord { tau1: tau, tau2: tau, seeds: [aux_seeds.0, aux_seeds.1] }),
        y1: Some(y1),
        y2: Some(y2),
        clean: Some(clean),
        ..Bundle::input(y, NoiseRecord { family, level, seed })
    };
    write_bundle(out, &bundle)?;
    Ok(())
}

fn cmd_run(mode: Mode, config: Option<&Path>, input: Option<PathBuf>, out: &Path) -> anyhow::Result<()> {
    let cfg: RunConfig = match config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let mut cfg: RunConfig =
                serde_json::from_str(&text).with_context(|| format!("invalid run configuration {}", path.display()))?;
            if let (Some(rel), Some(dir)) = (cfg.input.as_ref(), path.parent()) {
                cfg.input = Some(dir.join(rel));
            }
            cfg
        }
        None => RunConfig::default(),
    };
    let input = input.or(cfg.input).context("no input bundle: pass --input or set `input` in the configuration")?;
    let source = read_bundle(&input).with_context(|| format!("reading {}", input.display()))?;
    let y = &source.y;
    let trajectory = match mode {
        Mode::Plain => run_plain(y, &cfg.surrogate)?,
        Mode::Masked => {
            let seed = cfg.mask_seed.unwrap_or_else(|| derive_seed(source.noise.seed, 3));
            let mask = sample_mask(y.height(), y.width(), cfg.keep_probability, seed)?;
            run_masked(y, &mask, &cfg.surrogate)?
        }
        Mode::Augmented => {
            let y1 = source.y1.as_ref().context("augmented runs need an input bundle with auxiliary copies")?;
            run_augmented(y, y1, &cfg.surrogate)?
        }
    };
    write_bundle(out, &Bundle { trajectory: Some(trajectory), ..source })?;
    Ok(())
}

/// Clean image for PSNR fields: an explicit PNG (quantized like a bundle
/// payload, so every stage sees the same values) or the bundle's own.
fn clean_for(bundle: &Bundle, png: Option<&Path>) -> anyhow::Result<Option<ImageTensor>> {
    match png {
        Some(path) => Ok(Some(load_png(path)?.quantize_f32())),
        None => Ok(bundle.clean.clone()),
    }
}

/// PSNR of every frame, the oracle index, and the gap at `selected`.
fn gap_at(traj: &Trajectory, clean: &ImageTensor, selected: usize) -> anyhow::Result<(Vec<f64>, usize, f64)> {
    let psnrs = frame_psnrs(traj, clean)?;
    let best = oracle_index(&psnrs);
    let gap = if selected == best { 0.0 } else { psnrs[best] - psnrs[selected] };
    Ok((psnrs, best, gap))
}

#[allow(clippy::too_many_arguments)]
fn cmd_stop(
    bundle_dir: &Path,
    criteria: &[Criterion],
    window: u64,
    burn_in_frac: f64,
    sigma: Option<f64>,
    clean_png: Option<&Path>,
    out: &Path,
    curves_dir: Option<&Path>,
) -> anyhow::Result<()> {
    let bundle = read_bundle(bundle_dir).with_context(|| format!("reading {}", bundle_dir.display()))?;
    let traj = bundle.require_trajectory()?;
    let sigma = sigma.or((bundle.noise.family == NoiseFamily::Gaussian).then_some(bundle.noise.level));
    let clean = clean_for(&bundle, clean_png)?;
    let inputs = CriterionInputs {
        trajectory: traj,
        y: &bundle.y,
        y2: bundle.y2.as_ref(),
        sigma,
        window: window_in_frames(traj.iterations(), window),
        burn_in_fraction: burn_in_frac,
    };

    let mut results = Vec::with_capacity(criteria.len());
    for &criterion in criteria {
        let curve = criterion_curve(criterion, &inputs).with_context(|| format!("criterion {criterion}"))?;
        let selected_iteration = curve.iterations[curve.selected_index()];
        // Curves may start after the first frame; index frames by iteration.
        let selected = traj.index_of(selected_iteration).context("selected iteration is not a checkpoint")?;
        if let Some(dir) = curves_dir {
            let mut csv = String::from("iteration,value\n");
            for (t, v) in curve.iterations.iter().zip(&curve.values) {
                writeln!(csv, "{t},{v}")?;
            }
            write_text(&dir.join(format!("{criterion}.csv")), &csv)?;
        }
        let result = match &clean {
            Some(clean) => {
                let (psnrs, best, gap) = gap_at(traj, clean, selected)?;
                CriterionResult {
                    criterion: criterion.to_string(),
                    selected_iteration,
                    selected_psnr: Some(psnrs[selected]),
                    oracle_iteration: Some(traj.iterations()[best]),
                    oracle_psnr: Some(psnrs[best]),
                    gap: Some(gap),
                }
            }
            None => CriterionResult {
                criterion: criterion.to_string(),
                selected_iteration,
                selected_psnr: None,
                oracle_iteration: None,
                oracle_psnr: None,
                gap: None,
            },
        };
        results.push(result);
    }

    let report = StopFile {
        bundle: std::path::absolute(bundle_dir)?,
        mode: bundle.mode().to_string(),
        window_iterations: window,
        burn_in_fraction: burn_in_frac,
        sigma,
        results,
    };
    write_text(out, &to_json(&report)?)
}

fn cmd_eval(reports: &[PathBuf], clean_png: Option<&Path>, out: Option<&Path>) -> anyhow::Result<()> {
    let clean_override = clean_png.map(|p| load_png(p).map(|t| t.quantize_f32())).transpose()?;
    // (criterion, mode) in first-seen order.
    let mut groups: Vec<((String, String), Vec<f64>)> = Vec::new();
    let mut mismatches = Vec::new();
    let mut cache: BTreeMap<PathBuf, (Bundle, Option<Vec<f64>>)> = BTreeMap::new();

    for path in reports {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let report: StopFile =
            serde_json::from_str(&text).with_context(|| format!("{} is not a stop report", path.display()))?;
        if !cache.contains_key(&report.bundle) {
            let bundle =
                read_bundle(&report.bundle).with_context(|| format!("reading {}", report.bundle.display()))?;
            cache.insert(report.bundle.clone(), (bundle, None));
        }
        let (bundle, psnrs) = cache.get_mut(&report.bundle).expect("inserted above");
        let traj = bundle.require_trajectory()?;
        if psnrs.is_none() {
            let clean = match &clean_override {
                Some(c) => c.clone(),
                None => bundle
                    .clean
                    .clone()
                    .with_context(|| format!("{} has no clean image; pass --clean", report.bundle.display()))?,
            };
            *psnrs = Some(frame_psnrs(traj, &clean)?);
        }
        let psnrs = psnrs.as_ref().expect("computed above");
        let best = oracle_index(psnrs);
        for r in &report.results {
            let selected = traj.index_of(r.selected_iteration).with_context(|| {
                format!("{}: iteration {} is not a checkpoint", path.display(), r.selected_iteration)
            })?;
            let gap = if selected == best { 0.0 } else { psnrs[best] - psnrs[selected] };
            if let Some(reported) = r.gap {
                if (gap - reported).abs() > GAP_TOLERANCE || gap.is_nan() != reported.is_nan() {
                    mismatches.push(format!(
                        "{} {}: reported gap {reported}, recomputed {gap}",
                        path.display(),
                        r.criterion
                    ));
                }
            }
            let key = (r.criterion.clone(), report.mode.clone());
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, gaps)) => gaps.push(gap),
                None => groups.push((key, vec![gap])),
            }
        }
    }

    let mut csv = String::from("criterion,mode,runs,mean_gap_db,std_gap_db,gap_db\n");
    for ((criterion, mode), gaps) in &groups {
        let (mean, std) = mean_std(gaps);
        writeln!(csv, "{criterion},{mode},{},{mean},{std},{mean:.2} ± {std:.2}", gaps.len())?;
    }
    emit(out, &csv)?;
    if !mismatches.is_empty() {
        bail!(CheckFailed(format!("gap recomputation disagrees:\n{}", mismatches.join("\n"))));
    }
    Ok(())
}

fn cmd_sweep(input: &Path, clean_png: Option<&Path>, grid: &LambdaGrid, out: Option<&Path>) -> anyhow::Result<()> {
    let (y, bundle_clean) = if input.is_dir() {
        let b = read_bundle(input).with_context(|| format!("reading {}", input.display()))?;
        (b.y, b.clean)
    } else {
        (load_png(input)?, None)
    };
    let clean = match clean_png {
        Some(p) => Some(load_png(p)?),
        None => bundle_clean,
    };
    let selection = select_lambda(&y, grid)?;
    let oracle = clean.as_ref().map(|c| oracle_lambda(&y, c, selection.pair.fit, grid)).transpose()?;

    let mut csv = String::from("lambda,pseudo_score,oracle_score\n");
    for (k, (lambda, score)) in grid.values().iter().zip(&selection.curve).enumerate() {
        let oracle_score = oracle.as_ref().map(|(_, curve)| curve[k].to_string()).unwrap_or_default();
        writeln!(csv, "{lambda},{score},{oracle_score}")?;
    }
    emit(out, &csv)?;

    eprintln!(
        "selected lambda {} (fit channel {}, reference {})",
        selection.lambda, selection.pair.fit, selection.pair.reference
    );
    if let Some((index, _)) = &oracle {
        eprintln!("oracle lambda {} ({} grid steps away)", grid.values()[*index], index.abs_diff(selection.index));
    }
    Ok(())
}

fn cmd_verify(suite: &str, seed: u64, out: Option<&Path>) -> anyhow::Result<()> {
    let report = run_suite(suite, seed)?;
    for check in &report.checks {
        eprintln!("{} {}", if check.passed { "PASS" } else { "FAIL" }, check.name);
    }
    if let Some(path) = out {
        write_text(path, &to_json(&report)?)?;
    }
    if !report.passed {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        bail!(CheckFailed(format!("{} (seed {seed})", failed.join(", "))));
    }
    Ok(())
}
