//! Timing, fidelity and DoA-sweep harnesses comparing the generative
//! surrogate against the diffraction oracle, plus their CSV formats.

use std::io::{BufRead, Write};
use std::time::Instant;

use num_complex::Complex64;
use thiserror::Error;

use crate::arrayproc::{argmax_first, doa_spectrum, ArrayError, ArrayResponse, SteeringConfig};
use crate::cvae::{generate, CvaeConfig, CvaeError, CvaeModel, Normalization};
use crate::diffraction::{field_vector, field_vector_par, DiffractionError, FieldVector, IntegrationConfig};
use crate::geometry::{sample_perturbed_state, BodyState, PerturbationSpec, Scenario};

/// FFT length used for every array response.
pub const DEFAULT_NFFT: usize = 257;
pub const FULL_WAVE_NOTE: &str = "n/a (out of scope)";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Oracle(#[from] DiffractionError),
    #[error(transparent)]
    Array(#[from] ArrayError),
    #[error(transparent)]
    Model(#[from] CvaeError),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub method: String,
    pub configuration: String,
    /// `None` for methods that are reported but not run.
    pub seconds_per_sample_per_link: Option<f64>,
    pub samples: usize,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub condition: String,
    /// Over the DoA grid, `20 log10 |F|`.
    pub rmse_db: f64,
    pub gamma_max_error_rad: f64,
    /// Per-antenna excess attenuation.
    pub antenna_rmse_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub cpu: String,
    pub profile: String,
    pub threads: usize,
}

impl Environment {
    pub fn detect() -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| s.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split(':').nth(1)).map(|s| s.trim().to_string()))
            .unwrap_or_else(|| std::env::consts::ARCH.to_string());
        let profile = if cfg!(debug_assertions) { "debug" } else { "release" }.to_string();
        Self { cpu, profile, threads: rayon::current_num_threads() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub timings: Vec<TimingRow>,
    pub accuracy: Vec<AccuracyRow>,
    pub environment: Environment,
}

impl BenchReport {
    pub fn timing(&self, method: &str, configuration: &str) -> Option<f64> {
        self.timings
            .iter()
            .find(|r| r.method == method && r.configuration == configuration)
            .and_then(|r| r.seconds_per_sample_per_link)
    }

    pub fn write_timings_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "method,configuration,seconds_per_sample_per_link,samples,parallel")?;
        for r in &self.timings {
            let t = r.seconds_per_sample_per_link.map_or(FULL_WAVE_NOTE.to_string(), |t| format!("{t:e}"));
            writeln!(out, "{},{},{},{},{}", r.method, r.configuration, t, r.samples, r.parallel)?;
        }
        Ok(())
    }

    pub fn write_accuracy_csv(&self, out: impl Write) -> std::io::Result<()> {
        write_accuracy_csv(&self.accuracy, out)
    }
}

pub fn write_accuracy_csv(rows: &[AccuracyRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "condition,rmse_db,gamma_max_error_rad,antenna_rmse_db")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.condition, r.rmse_db, r.gamma_max_error_rad, r.antenna_rmse_db)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub links: Vec<usize>,
    pub latent_dims: Vec<usize>,
    pub tolerances: Vec<f64>,
    pub surrogate_samples: usize,
    pub oracle_samples: usize,
    pub parallel: bool,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            links: vec![1, 9],
            latent_dims: vec![16, 32],
            tolerances: vec![1e-3, 1e-6],
            surrogate_samples: 1000,
            oracle_samples: 20,
            parallel: false,
            seed: 0,
        }
    }
}

pub fn surrogate_label(latent_dim: usize) -> String {
    format!("C-VAE Z={latent_dim}")
}

pub fn oracle_label(tolerance: f64) -> String {
    format!("diffraction eps={tolerance:e}")
}

pub fn links_label(links: usize) -> String {
    format!("L={links}")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median seconds per sample per link for the surrogate and the oracle.
///
/// Trained models are used where one matches `(Z, L)`; other combinations
/// time a freshly initialized network of the same shape, whose cost is the
/// same. Only the generation call is inside the timed region.
pub fn bench_generation(models: &[CvaeModel], body: &BodyState, cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    if cfg.surrogate_samples == 0 || cfg.oracle_samples == 0 {
        return Err(BenchError::Invalid("sample counts must be positive".into()));
    }
    let mut timings = Vec::new();
    for &links in &cfg.links {
        let scenario = reference_scenario(links)?;
        for &z in &cfg.latent_dims {
            let model = match models.iter().find(|m| m.latent_dim() == z && m.links() == links) {
                Some(m) => m.clone(),
                None => CvaeModel::new(CvaeConfig::new(z, links), Normalization::identity(links), cfg.seed)?,
            };
            let times: Vec<f64> = (0..cfg.surrogate_samples as u64)
                .map(|i| {
                    let t = Instant::now();
                    let out = generate(&model, body, 1, cfg.seed.wrapping_add(i));
                    let dt = t.elapsed().as_secs_f64();
                    std::hint::black_box(out);
                    dt
                })
                .collect();
            timings.push(TimingRow {
                method: surrogate_label(z),
                configuration: links_label(links),
                seconds_per_sample_per_link: Some(median(times) / links as f64),
                samples: cfg.surrogate_samples,
                parallel: false,
            });
        }
        let spec = PerturbationSpec::small_movements(cfg.seed);
        for &eps in &cfg.tolerances {
            let icfg = IntegrationConfig::new(eps, scenario.wavelength());
            let mut times = Vec::with_capacity(cfg.oracle_samples);
            for i in 0..cfg.oracle_samples as u64 {
                let state = sample_perturbed_state(body, &spec, i);
                let t = Instant::now();
                let out = if cfg.parallel { field_vector_par(&state, &scenario, &icfg)? } else { field_vector(&state, &scenario, &icfg)? };
                times.push(t.elapsed().as_secs_f64());
                std::hint::black_box(out);
            }
            timings.push(TimingRow {
                method: oracle_label(eps),
                configuration: links_label(links),
                seconds_per_sample_per_link: Some(median(times) / links as f64),
                samples: cfg.oracle_samples,
                parallel: cfg.parallel,
            });
        }
        timings.push(TimingRow {
            method: "FEKO full-wave".into(),
            configuration: links_label(links),
            seconds_per_sample_per_link: None,
            samples: 0,
            parallel: false,
        });
    }
    Ok(BenchReport { timings, accuracy: Vec::new(), environment: Environment::detect() })
}

fn reference_scenario(links: usize) -> Result<Scenario, BenchError> {
    if links % 2 == 0 {
        return Err(BenchError::Invalid(format!("link count {links} must be odd")));
    }
    Ok(Scenario::with_reference_links(links))
}

/// Oracle against surrogate for one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub condition: String,
    pub oracle: ArrayResponse,
    pub oracle_attenuation_db: Vec<f64>,
    /// Mean of `20 log10 |F|` over the surrogate draws, on the oracle grid.
    pub surrogate_db: Vec<f64>,
    pub surrogate_gamma_max: f64,
    /// Mean per-antenna excess attenuation over the draws.
    pub surrogate_attenuation_db: Vec<f64>,
    pub row: AccuracyRow,
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Compares a reference field against a set of candidate fields (for example
/// surrogate draws). Spectra and attenuations are averaged in dB.
pub fn compare_fields(condition: &str, reference: &FieldVector, draws: &[FieldVector], steering: &SteeringConfig, n_fft: usize) -> Result<Comparison, BenchError> {
    if draws.is_empty() {
        return Err(BenchError::Invalid("no draws to compare".into()));
    }
    let oracle = doa_spectrum(reference, steering, n_fft)?;
    let oracle_attenuation_db = reference.attenuation_db();
    let n = draws.len() as f64;
    let mut surrogate_db = vec![0.0; oracle.gamma_grid.len()];
    let mut surrogate_attenuation_db = vec![0.0; reference.len()];
    for f in draws {
        let r = doa_spectrum(f, steering, n_fft)?;
        surrogate_db.iter_mut().zip(&r.attenuation_db).for_each(|(acc, v)| *acc += v / n);
        surrogate_attenuation_db.iter_mut().zip(f.attenuation_db()).for_each(|(acc, v)| *acc += v / n);
    }
    let surrogate_gamma_max = oracle.gamma_grid[argmax_first(surrogate_db.iter().copied())];
    let row = AccuracyRow {
        condition: condition.to_string(),
        rmse_db: rmse(&oracle.attenuation_db, &surrogate_db),
        gamma_max_error_rad: (oracle.gamma_max - surrogate_gamma_max).abs(),
        antenna_rmse_db: rmse(&oracle_attenuation_db, &surrogate_attenuation_db),
    };
    Ok(Comparison { condition: condition.to_string(), oracle, oracle_attenuation_db, surrogate_db, surrogate_gamma_max, surrogate_attenuation_db, row })
}

pub fn condition_label(b: &BodyState) -> String {
    format!("x={} y={} phi={} hs={} ws1={} ws2={}", b.position.x, b.position.y, b.orientation, b.height, b.width_max, b.width_min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareConfig {
    pub oracle_tolerance: f64,
    pub n_draws: usize,
    pub n_fft: usize,
    pub seed: u64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { oracle_tolerance: 1e-6, n_draws: 100, n_fft: DEFAULT_NFFT, seed: 0 }
    }
}

/// Oracle response at each nominal body against the mean surrogate response.
pub fn compare_responses(model: &CvaeModel, scenario: &Scenario, bodies: &[BodyState], cfg: &CompareConfig) -> Result<Vec<Comparison>, BenchError> {
    if model.links() != scenario.num_antennas() {
        return Err(BenchError::Invalid(format!("model has {} links, scenario {}", model.links(), scenario.num_antennas())));
    }
    let icfg = IntegrationConfig::new(cfg.oracle_tolerance, scenario.wavelength());
    let steering = SteeringConfig::from_scenario(scenario);
    bodies
        .iter()
        .map(|b| {
            let oracle = field_vector_par(b, scenario, &icfg)?;
            let draws = generate(model, b, cfg.n_draws, cfg.seed);
            compare_fields(&condition_label(b), &oracle, &draws, &steering, cfg.n_fft)
        })
        .collect()
}

pub fn write_overlay_csv(comparisons: &[Comparison], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "condition,gamma_rad,oracle_db,surrogate_db")?;
    for c in comparisons {
        for ((g, o), s) in c.oracle.gamma_grid.iter().zip(&c.oracle.attenuation_db).zip(&c.surrogate_db) {
            writeln!(out, "{},{},{},{}", c.condition, g, o, s)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub y_start: f64,
    pub y_end: f64,
    /// m/s
    pub speed: f64,
    /// Hz
    pub sample_rate: f64,
    pub oracle_tolerance: f64,
    /// Surrogate draws averaged (in dB) per step.
    pub n_draws: usize,
    pub n_fft: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { y_start: -0.25, y_end: 0.25, speed: 0.5, sample_rate: 20.0, oracle_tolerance: 1e-6, n_draws: 100, n_fft: DEFAULT_NFFT, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepStep {
    pub t: f64,
    pub y: f64,
    pub gamma_max_vae: f64,
    pub gamma_max_oracle: f64,
}

/// Moves `body` laterally from `y_start` to `y_end` at constant speed and
/// tracks the dominant direction for both methods. The surrogate uses the
/// same latent draws at every step.
pub fn sweep_doa(model: &CvaeModel, scenario: &Scenario, body: &BodyState, cfg: &SweepConfig) -> Result<Vec<SweepStep>, BenchError> {
    if !(cfg.speed > 0.0 && cfg.sample_rate > 0.0) || cfg.n_draws == 0 {
        return Err(BenchError::Invalid("speed, sample rate and draw count must be positive".into()));
    }
    let span = cfg.y_end - cfg.y_start;
    let duration = span.abs() / cfg.speed;
    let steps = (duration * cfg.sample_rate + 1e-9).floor() as usize;
    let icfg = IntegrationConfig::new(cfg.oracle_tolerance, scenario.wavelength());
    let steering = SteeringConfig::from_scenario(scenario);
    (0..=steps)
        .map(|i| {
            let t = i as f64 / cfg.sample_rate;
            let y = cfg.y_start + span.signum() * cfg.speed * t;
            let state = BodyState::new(body.position.x, y, body.orientation, body.height, body.width_max, body.width_min)
                .map_err(|e| BenchError::Invalid(e.to_string()))?;
            let oracle = field_vector_par(&state, scenario, &icfg)?;
            let draws = generate(model, &state, cfg.n_draws, cfg.seed);
            let c = compare_fields("", &oracle, &draws, &steering, cfg.n_fft)?;
            Ok(SweepStep { t, y, gamma_max_vae: c.surrogate_gamma_max, gamma_max_oracle: c.oracle.gamma_max })
        })
        .collect()
}

pub const SWEEP_HEADER: &str = "t,y,gamma_max_vae,gamma_max_oracle";

pub fn write_sweep_csv(steps: &[SweepStep], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for s in steps {
        writeln!(out, "{},{},{},{}", s.t, s.y, s.gamma_max_vae, s.gamma_max_oracle)?;
    }
    Ok(())
}

/// Largest step against the overall direction of travel of a sequence, in
/// the same units as the sequence. Zero for a monotone sequence.
pub fn max_reversal(values: &[f64]) -> f64 {
    let Some((first, last)) = values.first().zip(values.last()) else {
        return 0.0;
    };
    let sign = if last >= first { 1.0 } else { -1.0 };
    // reversal against the running extreme, so slow drifts accumulate
    let mut extreme = *first;
    let mut worst: f64 = 0.0;
    for &v in values {
        worst = worst.max(sign * (extreme - v));
        if sign * v > sign * extreme {
            extreme = v;
        }
    }
    worst
}

fn parse_row(line: &str, lineno: usize, width: usize) -> Result<Vec<f64>, BenchError> {
    let cells: Vec<&str> = line.split(',').collect();
    if cells.len() != width {
        return Err(BenchError::Csv { line: lineno, message: format!("expected {width} columns, got {}", cells.len()) });
    }
    cells
        .iter()
        .map(|c| c.trim().parse::<f64>().map_err(|e| BenchError::Csv { line: lineno, message: format!("{c:?}: {e}") }))
        .collect()
}

fn check_header(line: Option<std::io::Result<String>>, header: &str) -> Result<(), BenchError> {
    match line {
        Some(Ok(l)) if l.trim() == header => Ok(()),
        Some(Ok(l)) => Err(BenchError::Csv { line: 1, message: format!("unexpected header {l:?}") }),
        Some(Err(e)) => Err(e.into()),
        None => Err(BenchError::Csv { line: 1, message: "empty input".into() }),
    }
}

pub fn read_sweep_csv(input: impl BufRead) -> Result<Vec<SweepStep>, BenchError> {
    let mut lines = input.lines();
    check_header(lines.next(), SWEEP_HEADER)?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_row(&line, i + 2, 4)?;
        out.push(SweepStep { t: v[0], y: v[1], gamma_max_vae: v[2], gamma_max_oracle: v[3] });
    }
    Ok(out)
}

pub const FIELD_HEADER: &str = "link_index,re,im,attenuation_db";

/// One row per link; several vectors are written back to back, each
/// restarting at link 0.
pub fn write_fields_csv(fields: &[FieldVector], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{FIELD_HEADER}")?;
    for f in fields {
        for (l, (v, a)) in f.values().iter().zip(f.attenuation_db()).enumerate() {
            writeln!(out, "{l},{},{},{a}", v.re, v.im)?;
        }
    }
    Ok(())
}

pub fn read_fields_csv(input: impl BufRead) -> Result<Vec<FieldVector>, BenchError> {
    let mut lines = input.lines();
    check_header(lines.next(), FIELD_HEADER)?;
    let mut out: Vec<Vec<Complex64>> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_row(&line, i + 2, 4)?;
        let link = v[0] as usize;
        if link == 0 {
            out.push(Vec::new());
        }
        match out.last_mut() {
            Some(cur) if cur.len() == link => cur.push(Complex64::new(v[1], v[2])),
            _ => return Err(BenchError::Csv { line: i + 2, message: format!("link index {link} out of sequence") }),
        }
    }
    if let Some(first) = out.first() {
        if let Some(bad) = out.iter().find(|f| f.len() != first.len()) {
            return Err(BenchError::Csv { line: 0, message: format!("vectors of {} and {} links", first.len(), bad.len()) });
        }
    }
    Ok(out.into_iter().map(FieldVector::new).collect())
}

pub const SPECTRUM_HEADER: &str = "gamma_rad,re,im,attenuation_db";

/// The spectrum rows followed by a `gamma_max=<rad>` summary line.
pub fn write_spectrum_csv(r: &ArrayResponse, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{SPECTRUM_HEADER}")?;
    for ((g, f), a) in r.gamma_grid.iter().zip(&r.response).zip(&r.attenuation_db) {
        writeln!(out, "{g},{},{},{a}", f.re, f.im)?;
    }
    writeln!(out, "gamma_max={}", r.gamma_max)
}

/// Parses [`write_spectrum_csv`] output into `(gamma, F)` rows and the
/// summary value.
pub fn read_spectrum_csv(input: impl BufRead) -> Result<(Vec<(f64, Complex64)>, Option<f64>), BenchError> {
    let mut lines = input.lines();
    check_header(lines.next(), SPECTRUM_HEADER)?;
    let mut rows = Vec::new();
    let mut gamma_max = None;
    for (i, line) in lines.enumerate() {
        let line = line?;
        if let Some(v) = line.strip_prefix("gamma_max=") {
            gamma_max = Some(v.trim().parse().map_err(|_| BenchError::Csv { line: i + 2, message: "bad summary".into() })?);
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_row(&line, i + 2, 4)?;
        rows.push((v[0], Complex64::new(v[1], v[2])));
    }
    Ok((rows, gamma_max))
}
