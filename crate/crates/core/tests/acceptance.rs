//! End-to-end exit criteria. Runs every criterion, prints one PASS/FAIL line
//! each and exits non-zero if any fails.
//!
//! The default dataset is built once and one model per latent size is
//! trained on its training split; later criteria reuse them.

use std::f64::consts::FRAC_PI_2;
use std::time::{Duration, Instant};

use rf_shadow::arrayproc::{doa_spectrum, SteeringConfig};
use rf_shadow::bench::{bench_generation, compare_responses, links_label, max_reversal, oracle_label, surrogate_label, sweep_doa, BenchConfig, CompareConfig, SweepConfig, DEFAULT_NFFT};
use rf_shadow::cvae::{activation_pattern, elbo_loss, generate, train, CvaeConfig, CvaeModel, Normalization};
use rf_shadow::dataset::{build_dataset, to_bytes, Dataset, DatasetSpec, DatasetStats, Split};
use rf_shadow::diffraction::{field_vector, normalized_field_link, FieldVector, IntegrationConfig};
use rf_shadow::geometry::{AbsorbingSheet, BodyState, Scenario, Vec3};
use rf_shadow::rng::{stream, Domain};

use num_complex::Complex64;
use rand::Rng;

const SEED: u64 = 2024;
const EPOCHS: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn fig3_body(y: f64) -> BodyState {
    BodyState::new(2.0, y, 0.0, 1.65, 0.55, 0.25).unwrap()
}

struct Trained {
    dataset: Dataset,
    stats: DatasetStats,
    build_time: Duration,
    model: CvaeModel,
    trace: Vec<f64>,
    train_time: Duration,
}

fn train_default(scenario: &Scenario) -> Trained {
    let spec = DatasetSpec::default_for(scenario, SEED).unwrap();
    let t = Instant::now();
    let (dataset, stats) = build_dataset(&spec).unwrap();
    let build_time = t.elapsed();
    let mut cfg = CvaeConfig::new(16, scenario.num_antennas());
    cfg.epochs = EPOCHS;
    let init = CvaeModel::new(cfg, stats.normalization.clone(), SEED).unwrap();
    let t = Instant::now();
    let (model, trace) = train(&init, &dataset.training_pairs(Split::Train), SEED).unwrap();
    let train_time = t.elapsed();
    Trained { dataset, stats, build_time, model, trace, train_time }
}

fn knife_edge(s: &Scenario) -> Outcome {
    let size = 40.0 * s.wavelength();
    let sheet = AbsorbingSheet::new(Vec3::new(2.0, size / 2.0, s.link_height()), s.los_direction(), size, size).unwrap();
    let t = Instant::now();
    let e = normalized_field_link(&sheet, s.tx_position(), s.array_center(), s.wavelength(), &IntegrationConfig::new(1e-3, s.wavelength())).unwrap();
    let dt = t.elapsed().as_secs_f64();
    let db = -20.0 * e.norm().log10();
    outcome((db - 6.02).abs() <= 0.3 && dt < 5.0, format!("excess attenuation {db:.3} dB (target 6.02 +- 0.3), {dt:.3} s"))
}

fn free_space(s: &Scenario) -> Outcome {
    let body = BodyState::new(2.0, 3.0, 0.0, 1.65, 0.55, 0.25).unwrap();
    let f = field_vector(&body, s, &IntegrationConfig::new(1e-6, s.wavelength())).unwrap();
    let worst = f.values().iter().map(|e| (e - 1.0).norm()).fold(0.0, f64::max);
    outcome(worst < 1e-3, format!("max |e - 1| = {worst:.3e} at 3 m lateral (target < 1e-3)"))
}

fn self_convergence(s: &Scenario) -> Outcome {
    let mut worst: f64 = 0.0;
    for y in [0.25, 0.0, -0.25] {
        let coarse = field_vector(&fig3_body(y), s, &IntegrationConfig::new(1e-3, s.wavelength())).unwrap();
        let fine = field_vector(&fig3_body(y), s, &IntegrationConfig::new(1e-6, s.wavelength())).unwrap();
        for (a, b) in coarse.attenuation_db().iter().zip(fine.attenuation_db()) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(worst < 0.1, format!("max per-link difference {worst:.2e} dB between eps 1e-3 and 1e-6 (target < 0.1)"))
}

fn random_pair(index: u64) -> (FieldVector, BodyState) {
    let mut r = stream(SEED, Domain::Noise, 1000 + index);
    let field = (0..9).map(|_| Complex64::new(r.random_range(-1.2..1.2), r.random_range(-1.2..1.2))).collect();
    let body = BodyState::new(r.random_range(0.5..3.5), r.random_range(-0.3..0.3), r.random_range(-0.5..0.5), r.random_range(1.65..2.0), 0.55, 0.25).unwrap();
    (FieldVector::new(field), body)
}

fn gradient_check() -> Outcome {
    const MODELS: u64 = 10;
    const COORDS: usize = 64;
    const H: f64 = 1e-5;
    // wider fourth-order stencil, reported alongside to separate rounding
    // in the difference quotient from errors in the analytic gradient
    const H4: f64 = 1e-3;
    let mut worst: f64 = 0.0;
    let mut worst_grad = 0.0;
    let mut over = 0;
    let mut worst4: f64 = 0.0;
    let mut checked = 0;
    let mut kinks = 0;
    let mut short = 0;
    for k in 0..MODELS {
        let mut norm = Normalization::identity(9);
        norm.cond_mean = [2.0, 0.0, 0.0, 1.8, 0.55, 0.25];
        let model = CvaeModel::new(CvaeConfig::new(if k % 2 == 0 { 16 } else { 32 }, 9), norm, SEED + k).unwrap();
        let (field, body) = random_pair(k);
        let seed = SEED + 100 + k;
        let (_, grad) = elbo_loss(&model, &field, &body, seed).unwrap();
        let pattern = activation_pattern(&model, &field, &body, seed).unwrap();
        let mut r = stream(SEED, Domain::Shuffle, 5000 + k);
        let mut valid = 0;
        for _ in 0..100 * COORDS {
            if valid == COORDS {
                break;
            }
            let i = r.random_range(0..model.params.len());
            let shifted = |delta: f64| {
                let mut m = model.clone();
                m.params[i] += delta;
                m
            };
            let same = |m: &CvaeModel| activation_pattern(m, &field, &body, seed).unwrap() == pattern;
            let loss = |m: &CvaeModel| elbo_loss(m, &field, &body, seed).unwrap().0;
            let (plus, minus) = (shifted(H), shifted(-H));
            if !same(&plus) || !same(&minus) {
                kinks += 1;
                continue;
            }
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * H);
            let g = grad[i];
            if g.abs() < 1e-8 && fd.abs() < 1e-8 {
                continue;
            }
            let rel = (g - fd).abs() / g.abs().max(fd.abs());
            if rel > worst {
                worst = rel;
                worst_grad = g;
            }
            if rel >= 1e-4 {
                over += 1;
            }
            let wide: Vec<CvaeModel> = [2.0, 1.0, -1.0, -2.0].iter().map(|s| shifted(s * H4)).collect();
            if wide.iter().all(same) {
                let fd4 = (-loss(&wide[0]) + 8.0 * loss(&wide[1]) - 8.0 * loss(&wide[2]) + loss(&wide[3])) / (12.0 * H4);
                worst4 = worst4.max((g - fd4).abs() / g.abs().max(fd4.abs()));
            }
            valid += 1;
        }
        checked += valid;
        if valid < COORDS {
            short += 1;
        }
    }
    outcome(
        worst < 1e-4 && short == 0,
        format!(
            "max relative error {worst:.2e} over {checked} coordinates in {MODELS} models (target < 1e-4), {over} above tolerance, worst at |g| = {:.1e}; {kinks} kink-crossing coordinates skipped; fourth-order stencil at h = 1e-3: max relative error {worst4:.2e}",
            worst_grad.abs()
        ),
    )
}

fn convergence(t: &Trained) -> Outcome {
    let initial = t.trace[0];
    let last = *t.trace.last().unwrap();
    // smoothed trace: no 5-epoch window may rise by more than 10%
    let rising = t.trace[1..].windows(5).filter(|w| w[4] > 1.1 * w[0]).count();
    let minutes = t.train_time.as_secs_f64() / 60.0;
    outcome(
        last < 0.5 * initial && minutes <= 30.0,
        format!(
            "loss {initial:.3} -> {last:.3} over {EPOCHS} epochs on {} pairs ({} records), training {minutes:.1} min, dataset build {:.1} s, {rising} rising 5-epoch windows",
            t.stats.train,
            t.dataset.records.len(),
            t.build_time.as_secs_f64()
        ),
    )
}

fn fidelity(s: &Scenario, t: &Trained) -> Outcome {
    let cfg = IntegrationConfig::new(1e-6, s.wavelength());
    let nominals = t.dataset.nominals(Split::Test);
    let (mut se, mut n) = (0.0, 0.0);
    let (mut floor_se, mut floor_n) = (0.0, 0.0);
    for (i, nominal) in nominals.iter().enumerate() {
        let oracle = field_vector(nominal, s, &cfg).unwrap().attenuation_db();
        let draws = generate(&t.model, nominal, 100, SEED + i as u64);
        for (k, o) in oracle.iter().enumerate() {
            let mean = draws.iter().map(|f| f.attenuation_db()[k]).sum::<f64>() / draws.len() as f64;
            se += (mean - o).powi(2);
            n += 1.0;
        }
        // the same statistic for the oracle's own perturbed records
        let recs: Vec<_> = t.dataset.records.iter().filter(|r| r.nominal == *nominal).collect();
        for (k, o) in oracle.iter().enumerate() {
            let mean = recs.iter().map(|r| r.field.attenuation_db()[k]).sum::<f64>() / recs.len() as f64;
            floor_se += (mean - o).powi(2);
            floor_n += 1.0;
        }
    }
    let rmse = (se / n).sqrt();
    let floor = (floor_se / floor_n).sqrt();

    let cmp = compare_responses(&t.model, s, &[fig3_body(0.25), fig3_body(-0.25)], &CompareConfig { seed: SEED, ..CompareConfig::default() }).unwrap();
    let sides_agree = cmp.iter().all(|c| (c.oracle.gamma_max - FRAC_PI_2).signum() == (c.surrogate_gamma_max - FRAC_PI_2).signum());
    let sides: Vec<String> = cmp.iter().map(|c| format!("oracle {:.4} / surrogate {:.4}", c.oracle.gamma_max, c.surrogate_gamma_max)).collect();
    outcome(
        rmse <= 1.5 && sides_agree,
        format!(
            "held-out per-antenna RMSE {rmse:.3} dB over {} nominals (target <= 1.5; perturbed-oracle ensemble floor {floor:.3} dB); gamma_max at y=+0.25: {}, y=-0.25: {}",
            nominals.len(),
            sides[0],
            sides[1]
        ),
    )
}

fn speed(t: &Trained) -> Outcome {
    let cfg = BenchConfig { links: vec![9], latent_dims: vec![16], tolerances: vec![1e-3], seed: SEED, ..BenchConfig::default() };
    let report = bench_generation(std::slice::from_ref(&t.model), &fig3_body(0.25), &cfg).unwrap();
    let surrogate = report.timing(&surrogate_label(16), &links_label(9)).unwrap();
    let oracle = report.timing(&oracle_label(1e-3), &links_label(9)).unwrap();
    let ratio = oracle / surrogate;
    let throughput = 1.0 / (surrogate * 9.0);
    outcome(
        ratio >= 10.0 && throughput >= 50.0,
        format!("surrogate {surrogate:.2e} s/sample/link, oracle {oracle:.2e} s/sample/link, ratio {ratio:.0}x (target >= 10), {throughput:.0} vectors/s (target >= 50)"),
    )
}

fn doa_sweep(s: &Scenario, t: &Trained) -> Outcome {
    let cfg = SweepConfig { seed: SEED, ..SweepConfig::default() };
    let steps = sweep_doa(&t.model, s, &fig3_body(-0.25), &cfg).unwrap();
    let grid = doa_spectrum(&FieldVector::free_space(9), &SteeringConfig::from_scenario(s), DEFAULT_NFFT).unwrap().gamma_grid;
    let index = |g: f64| grid.iter().position(|v| *v == g).unwrap() as f64;
    let check = |pick: fn(&rf_shadow::bench::SweepStep) -> f64| {
        let idx: Vec<f64> = steps.iter().map(|st| index(pick(st))).collect();
        let (first, last) = (pick(&steps[0]), pick(steps.last().unwrap()));
        let crosses = (first - FRAC_PI_2) * (last - FRAC_PI_2) < 0.0;
        let reversal = max_reversal(&idx);
        (crosses && reversal <= 1.0, format!("{:.4} -> {:.4}, worst reversal {reversal} bins", first, last))
    };
    let (oracle_ok, oracle) = check(|st| st.gamma_max_oracle);
    let (vae_ok, vae) = check(|st| st.gamma_max_vae);
    outcome(oracle_ok && vae_ok, format!("{} steps; oracle {oracle}; surrogate {vae}", steps.len()))
}

fn determinism(s: &Scenario) -> Outcome {
    let mut spec = DatasetSpec::default_for(s, SEED).unwrap();
    spec.location_grid = spec.location_grid.iter().step_by(7).copied().collect();
    spec.perturbations_per_nominal = 3;
    let (a, stats) = build_dataset(&spec).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let (b, _) = pool.install(|| build_dataset(&spec)).unwrap();
    let data_same = to_bytes(&a) == to_bytes(&b);

    let mut cfg = CvaeConfig::new(16, 9);
    cfg.epochs = 3;
    let init = CvaeModel::new(cfg, stats.normalization, SEED).unwrap();
    let pairs = a.training_pairs(Split::Train);
    let (m1, t1) = train(&init, &pairs, SEED).unwrap();
    let (m2, t2) = pool.install(|| train(&init, &pairs, SEED)).unwrap();
    let bits = |m: &CvaeModel| m.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let train_same = bits(&m1) == bits(&m2) && t1 == t2;

    let g1 = generate(&m1, &fig3_body(0.1), 50, SEED);
    let g2 = pool.install(|| generate(&m2, &fig3_body(0.1), 50, SEED));
    let gen_same = g1 == g2;
    outcome(
        data_same && train_same && gen_same,
        format!("dataset bytes equal: {data_same}, trained parameters equal: {train_same}, generated fields equal: {gen_same} (1 vs 3 worker threads)"),
    )
}

/// Mean generated attenuation on the line of sight exceeds that 0.5 m off it.
fn condition_sensitivity(t: &Trained) -> Outcome {
    let mean_db = |b: BodyState| {
        let draws = generate(&t.model, &b, 200, SEED);
        draws.iter().map(|f| f.attenuation_db().iter().sum::<f64>() / f.len() as f64).sum::<f64>() / draws.len() as f64
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for x in [1.0, 2.0, 3.0] {
        let body = |y: f64| BodyState::new(x, y, 0.0, 1.65, 0.55, 0.25).unwrap();
        let (on, left, right) = (mean_db(body(0.0)), mean_db(body(-0.5)), mean_db(body(0.5)));
        ok &= on > left && on > right;
        parts.push(format!("x={x}: {on:.2} dB on, {left:.2} / {right:.2} dB at y=-0.5/+0.5"));
    }
    outcome(ok, parts.join("; "))
}

fn main() {
    let s = Scenario::reference();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("criterion {n} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "knife-edge limit", knife_edge(&s));
    report(2, "free-space identity", free_space(&s));
    report(3, "integration self-convergence", self_convergence(&s));
    report(4, "ELBO gradient check", gradient_check());
    let trained = train_default(&s);
    report(5, "training convergence", convergence(&trained));
    report(6, "surrogate fidelity", fidelity(&s, &trained));
    report(7, "speed ratio", speed(&trained));
    report(8, "DoA sweep", doa_sweep(&s, &trained));
    report(9, "determinism", determinism(&s));

    let sensitivity = condition_sensitivity(&trained);
    println!("check [{}] condition sensitivity: {}", if sensitivity.pass { "PASS" } else { "FAIL" }, sensitivity.detail);

    let mut failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| r.0.to_string()).collect();
    if !sensitivity.pass {
        failed.push("condition sensitivity".into());
    }
    println!("acceptance: {} of {} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failing criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
