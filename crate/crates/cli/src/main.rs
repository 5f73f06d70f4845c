//! `rf-shadow` command-line front end.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use rf_shadow::arrayproc::{doa_spectrum, SteeringConfig};
use rf_shadow::bench::{
    bench_generation, compare_responses, read_fields_csv, sweep_doa, write_accuracy_csv, write_fields_csv, write_overlay_csv,
    write_spectrum_csv, write_sweep_csv, BenchConfig, CompareConfig, SweepConfig, DEFAULT_NFFT,
};
use rf_shadow::cvae::{generate, load_model, save_model, train, CvaeConfig, CvaeModel};
use rf_shadow::dataset::{build_dataset, load_dataset, save_dataset, write_csv, DatasetSpec, Split};
use rf_shadow::diffraction::{field_vector, IntegrationConfig};
use rf_shadow::geometry::{BodyState, Scenario, ScenarioDoc};

#[derive(Parser)]
#[command(name = "rf-shadow", version, about = "Body-induced RF perturbations: diffraction oracle, C-VAE surrogate, DoA")]
struct Cli {
    /// Scenario JSON; the built-in 4 m, 9-antenna link when omitted.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write CSV outputs and a JSON run manifest here instead of stdout.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Oracle field vector for one body state.
    Simulate(SimulateArgs),
    /// Build a training set from the oracle.
    Dataset(DatasetArgs),
    /// Train the C-VAE on a dataset.
    Train(TrainArgs),
    /// Draw field vectors from a trained model.
    Generate(GenerateArgs),
    /// Array response and dominant direction of a field vector.
    Doa(DoaArgs),
    /// Generation-time table.
    Bench(BenchArgs),
    /// Oracle against surrogate array responses.
    Compare(CompareArgs),
    /// Dominant direction along a lateral walk.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// "x,y,phi,hs,ws1,ws2"; falls back to the scenario's body.
    #[arg(long)]
    body: Option<String>,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long, default_value = "data.bin")]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    perturbations: usize,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    /// Also write a CSV mirror next to the binary file.
    #[arg(long)]
    export_csv: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 16)]
    z: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value = "model.bin")]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    body: Option<String>,
    #[arg(short = 'n', default_value_t = 1)]
    n: usize,
}

#[derive(Args)]
struct DoaArgs {
    /// Field CSV from `simulate` or `generate`.
    #[arg(long)]
    fields: PathBuf,
    #[arg(long, default_value_t = DEFAULT_NFFT)]
    nfft: usize,
    /// Which vector of a multi-sample file to use.
    #[arg(long, default_value_t = 0)]
    sample: usize,
}

#[derive(Args)]
struct BenchArgs {
    /// Trained models; other (Z, L) pairs are timed with fresh weights.
    #[arg(long)]
    model: Vec<PathBuf>,
    #[arg(long)]
    body: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,9")]
    links: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "16,32")]
    z: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1e-3,1e-6")]
    eps: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    surrogate_samples: usize,
    #[arg(long, default_value_t = 20)]
    oracle_samples: usize,
    /// Evaluate oracle links concurrently.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    model: PathBuf,
    /// Body states separated by ';'. Defaults to x=2, y=+-0.25.
    #[arg(long)]
    bodies: Option<String>,
    #[arg(long, default_value_t = 100)]
    draws: usize,
    #[arg(long, default_value_t = DEFAULT_NFFT)]
    nfft: usize,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    /// Body at the start of the walk; only x, phi and sizes are used.
    #[arg(long)]
    body: Option<String>,
    #[arg(long, default_value_t = -0.25, allow_hyphen_values = true)]
    y_start: f64,
    #[arg(long, default_value_t = 0.25, allow_hyphen_values = true)]
    y_end: f64,
    #[arg(long, default_value_t = 0.5)]
    speed: f64,
    #[arg(long, default_value_t = 20.0)]
    rate: f64,
    #[arg(long, default_value_t = 100)]
    draws: usize,
    #[arg(long, default_value_t = DEFAULT_NFFT)]
    nfft: usize,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
}

fn parse_body(s: &str) -> Result<BodyState> {
    let v: Vec<f64> = s
        .split(',')
        .map(|c| c.trim().parse::<f64>().with_context(|| format!("bad number {c:?} in body {s:?}")))
        .collect::<Result<_>>()?;
    if v.len() != 6 {
        bail!("body needs 6 values x,y,phi,hs,ws1,ws2, got {}", v.len());
    }
    Ok(BodyState::new(v[0], v[1], v[2], v[3], v[4], v[5])?)
}

fn fig3_body(y: f64) -> BodyState {
    BodyState::new(2.0, y, 0.0, 1.65, 0.55, 0.25).expect("valid body")
}

struct Run {
    command: &'static str,
    seed: u64,
    scenario: Scenario,
    scenario_body: Option<BodyState>,
    out_dir: Option<PathBuf>,
    inputs: serde_json::Map<String, Value>,
    outputs: Vec<String>,
}

impl Run {
    fn new(cli: &Cli, command: &'static str) -> Result<Self> {
        let (scenario, scenario_body) = match &cli.scenario {
            Some(p) => {
                let doc = ScenarioDoc::load(p).with_context(|| format!("reading scenario {}", p.display()))?;
                (doc.scenario()?, doc.body()?)
            }
            None => (Scenario::reference(), None),
        };
        if let Some(dir) = &cli.out_dir {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(Self { command, seed: cli.seed, scenario, scenario_body, out_dir: cli.out_dir.clone(), inputs: Default::default(), outputs: Vec::new() })
    }

    fn input(&mut self, key: &str, value: impl Into<Value>) {
        self.inputs.insert(key.to_string(), value.into());
    }

    fn body(&mut self, arg: &Option<String>) -> Result<BodyState> {
        let body = match (arg, self.scenario_body) {
            (Some(s), _) => parse_body(s)?,
            (None, Some(b)) => b,
            (None, None) => bail!("no body given: pass --body or put one in the scenario file"),
        };
        self.input("body", body.features().to_vec());
        Ok(body)
    }

    /// Output file inside `--out-dir` when set.
    fn path(&self, name: &Path) -> PathBuf {
        match &self.out_dir {
            Some(dir) if name.is_relative() => dir.join(name),
            _ => name.to_path_buf(),
        }
    }

    /// CSV to `<out-dir>/<name>` or stdout.
    fn emit(&mut self, name: &str, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
        match &self.out_dir {
            Some(dir) => {
                let path = dir.join(name);
                let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
                write(&mut w)?;
                w.flush()?;
                self.outputs.push(path.display().to_string());
            }
            None => {
                let stdout = std::io::stdout();
                let mut lock = stdout.lock();
                write(&mut lock)?;
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let Some(dir) = &self.out_dir else {
            return Ok(());
        };
        let manifest = json!({
            "command": self.command,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "build_profile": if cfg!(debug_assertions) { "debug" } else { "release" },
            "seed": self.seed,
            "scenario": serde_json::to_value(ScenarioDoc::from_parts(&self.scenario, None))?,
            "inputs": Value::Object(self.inputs),
            "outputs": self.outputs,
        });
        let path = dir.join(format!("{}.manifest.json", self.command));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn load_checked_model(path: &Path, scenario: &Scenario) -> Result<CvaeModel> {
    let model = load_model(path).with_context(|| format!("loading model {}", path.display()))?;
    if model.links() != scenario.num_antennas() {
        bail!("model has {} links but the scenario has {}", model.links(), scenario.num_antennas());
    }
    Ok(model)
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let mut run = Run::new(cli, "simulate")?;
    let body = run.body(&args.body)?;
    run.input("eps", args.eps);
    let cfg = IntegrationConfig::new(args.eps, run.scenario.wavelength());
    let field = field_vector(&body, &run.scenario, &cfg)?;
    run.emit("simulate.csv", |w| write_fields_csv(&[field], w))?;
    run.finish()
}

fn dataset(cli: &Cli, args: &DatasetArgs) -> Result<()> {
    let mut run = Run::new(cli, "dataset")?;
    let mut spec = DatasetSpec::default_for(&run.scenario, cli.seed)?;
    spec.perturbations_per_nominal = args.perturbations;
    spec.integration = IntegrationConfig::new(args.eps, run.scenario.wavelength());
    run.input("perturbations", args.perturbations);
    run.input("eps", args.eps);
    let (data, stats) = build_dataset(&spec)?;
    let out = run.path(&args.out);
    save_dataset(&data, &out).with_context(|| format!("writing {}", out.display()))?;
    run.outputs.push(out.display().to_string());
    if args.export_csv {
        let csv = out.with_extension("csv");
        let mut w = BufWriter::new(File::create(&csv)?);
        write_csv(&data, &mut w)?;
        w.flush()?;
        run.outputs.push(csv.display().to_string());
    }
    eprintln!("{} records: {} train, {} val, {} test", data.records.len(), stats.train, stats.validation, stats.test);
    run.finish()
}

fn train_cmd(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let mut run = Run::new(cli, "train")?;
    let data = load_dataset(&args.dataset, None).with_context(|| format!("loading dataset {}", args.dataset.display()))?;
    let stats = data.stats()?;
    let mut cfg = CvaeConfig::new(args.z, data.links());
    cfg.epochs = args.epochs;
    run.input("dataset", args.dataset.display().to_string());
    run.input("z", args.z);
    run.input("epochs", args.epochs);
    let model = CvaeModel::new(cfg, stats.normalization, cli.seed)?;
    let (trained, trace) = train(&model, &data.training_pairs(Split::Train), cli.seed)?;
    let out = run.path(&args.out);
    save_model(&trained, &out).with_context(|| format!("writing {}", out.display()))?;
    run.outputs.push(out.display().to_string());
    run.emit("train.csv", |w| {
        writeln!(w, "epoch,mean_loss")?;
        trace.iter().enumerate().try_for_each(|(e, l)| writeln!(w, "{e},{l}"))
    })?;
    run.finish()
}

fn generate_cmd(cli: &Cli, args: &GenerateArgs) -> Result<()> {
    let mut run = Run::new(cli, "generate")?;
    let body = run.body(&args.body)?;
    let model = load_checked_model(&args.model, &run.scenario)?;
    run.input("model", args.model.display().to_string());
    run.input("n", args.n);
    let fields = generate(&model, &body, args.n, cli.seed);
    run.emit("generate.csv", |w| write_fields_csv(&fields, w))?;
    run.finish()
}

fn doa(cli: &Cli, args: &DoaArgs) -> Result<()> {
    let mut run = Run::new(cli, "doa")?;
    let file = File::open(&args.fields).with_context(|| format!("opening {}", args.fields.display()))?;
    let fields = read_fields_csv(BufReader::new(file))?;
    let Some(field) = fields.get(args.sample) else {
        bail!("sample {} requested but the file holds {} vectors", args.sample, fields.len());
    };
    run.input("fields", args.fields.display().to_string());
    run.input("nfft", args.nfft);
    run.input("sample", args.sample);
    let response = doa_spectrum(field, &SteeringConfig::from_scenario(&run.scenario), args.nfft)?;
    run.emit("doa.csv", |w| write_spectrum_csv(&response, w))?;
    if run.out_dir.is_some() {
        println!("gamma_max={}", response.gamma_max);
    }
    run.finish()
}

fn bench(cli: &Cli, args: &BenchArgs) -> Result<()> {
    let mut run = Run::new(cli, "bench")?;
    let body = match &args.body {
        Some(_) => run.body(&args.body)?,
        None => fig3_body(0.25),
    };
    let models = args.model.iter().map(|p| load_model(p).with_context(|| format!("loading {}", p.display()))).collect::<Result<Vec<_>>>()?;
    let cfg = BenchConfig {
        links: args.links.clone(),
        latent_dims: args.z.clone(),
        tolerances: args.eps.clone(),
        surrogate_samples: args.surrogate_samples,
        oracle_samples: args.oracle_samples,
        parallel: args.parallel,
        seed: cli.seed,
    };
    run.input("links", args.links.clone());
    run.input("z", args.z.clone());
    run.input("eps", args.eps.clone());
    run.input("parallel", args.parallel);
    let report = bench_generation(&models, &body, &cfg)?;
    let env = &report.environment;
    run.input("cpu", env.cpu.clone());
    run.input("threads", env.threads);
    eprintln!("cpu: {}, profile: {}, threads: {}", env.cpu, env.profile, env.threads);
    run.emit("bench.csv", |w| report.write_timings_csv(w))?;
    run.finish()
}

fn compare(cli: &Cli, args: &CompareArgs) -> Result<()> {
    let mut run = Run::new(cli, "compare")?;
    let model = load_checked_model(&args.model, &run.scenario)?;
    let bodies = match &args.bodies {
        Some(s) => s.split(';').map(parse_body).collect::<Result<Vec<_>>>()?,
        None => vec![fig3_body(0.25), fig3_body(-0.25)],
    };
    run.input("model", args.model.display().to_string());
    run.input("bodies", bodies.iter().map(|b| b.features().to_vec()).collect::<Vec<_>>());
    run.input("draws", args.draws);
    run.input("eps", args.eps);
    let cfg = CompareConfig { oracle_tolerance: args.eps, n_draws: args.draws, n_fft: args.nfft, seed: cli.seed };
    let comparisons = compare_responses(&model, &run.scenario, &bodies, &cfg)?;
    let rows: Vec<_> = comparisons.iter().map(|c| c.row.clone()).collect();
    run.emit("compare.csv", |w| write_accuracy_csv(&rows, w))?;
    if run.out_dir.is_some() {
        run.emit("compare_overlay.csv", |w| write_overlay_csv(&comparisons, w))?;
    }
    run.finish()
}

fn sweep(cli: &Cli, args: &SweepArgs) -> Result<()> {
    let mut run = Run::new(cli, "sweep")?;
    let model = load_checked_model(&args.model, &run.scenario)?;
    let body = match &args.body {
        Some(_) => run.body(&args.body)?,
        None => fig3_body(args.y_start),
    };
    run.input("model", args.model.display().to_string());
    run.input("y_start", args.y_start);
    run.input("y_end", args.y_end);
    run.input("speed", args.speed);
    run.input("rate", args.rate);
    run.input("draws", args.draws);
    run.input("eps", args.eps);
    let cfg = SweepConfig {
        y_start: args.y_start,
        y_end: args.y_end,
        speed: args.speed,
        sample_rate: args.rate,
        oracle_tolerance: args.eps,
        n_draws: args.draws,
        n_fft: args.nfft,
        seed: cli.seed,
    };
    let steps = sweep_doa(&model, &run.scenario, &body, &cfg)?;
    run.emit("sweep.csv", |w| write_sweep_csv(&steps, w))?;
    run.finish()
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate(a) => simulate(&cli, a),
        Command::Dataset(a) => dataset(&cli, a),
        Command::Train(a) => train_cmd(&cli, a),
        Command::Generate(a) => generate_cmd(&cli, a),
        Command::Doa(a) => doa(&cli, a),
        Command::Bench(a) => bench(&cli, a),
        Command::Compare(a) => compare(&cli, a),
        Command::Sweep(a) => sweep(&cli, a),
    }
}
