use super::*;
use crate::geometry::BodyState;
use num_complex::Complex64;

fn body(y: f64) -> BodyState {
    BodyState::new(2.0, y, 0.0, 1.7, 0.55, 0.25).unwrap()
}

fn field(seed: u64, links: usize) -> FieldVector {
    let u = standard_normal(2 * links, seed, Domain::Noise, 0);
    FieldVector::new((0..links).map(|i| Complex64::new(0.5 + 0.3 * u[i], 0.3 * u[links + i])).collect())
}

fn random_model(z: usize, seed: u64) -> CvaeModel {
    CvaeModel::new(CvaeConfig::new(z, 9), Normalization::identity(9), seed).unwrap()
}

#[test]
fn zero_model_encodes_to_prior() {
    let m = CvaeModel::zeroed(CvaeConfig::new(16, 9), Normalization::identity(9)).unwrap();
    let lat = encode(&m, &field(1, 9), &body(0.1)).unwrap();
    assert!(lat.mean.iter().all(|v| *v == 0.0));
    assert!(lat.log_variance.iter().all(|v| *v == 0.0));
}

#[test]
fn zero_model_decodes_to_mean() {
    let mut norm = Normalization::identity(9);
    norm.field_mean = (0..18).map(|i| i as f64 * 0.1).collect();
    let m = CvaeModel::zeroed(CvaeConfig::new(16, 9), norm.clone()).unwrap();
    let out = decode(&m, &[0.3; 16], &body(0.0)).unwrap();
    assert_eq!(field_to_real(&out), norm.field_mean);
}

#[test]
fn encode_is_deterministic() {
    let m = random_model(16, 3);
    let a = encode(&m, &field(2, 9), &body(0.2)).unwrap();
    let b = encode(&m, &field(2, 9), &body(0.2)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn shape_errors() {
    let m = random_model(16, 3);
    assert!(matches!(encode(&m, &field(2, 7), &body(0.0)), Err(CvaeError::ShapeMismatch { .. })));
    assert!(matches!(decode(&m, &[0.0; 8], &body(0.0)), Err(CvaeError::ShapeMismatch { .. })));
}

#[test]
fn reparameterize_cases() {
    let lat = LatentGaussian { mean: vec![0.0; 4], log_variance: vec![0.0; 4] };
    assert_eq!(reparameterize(&lat, 5, 9), reparameterize(&lat, 5, 9));
    assert_ne!(reparameterize(&lat, 5, 9), reparameterize(&lat, 5, 10));

    let sharp = LatentGaussian { mean: vec![0.5, -1.0], log_variance: vec![LOG_VAR_MIN; 2] };
    let z = reparameterize(&sharp, 1, 0);
    assert!((z[0] - 0.5).abs() < 0.05 && (z[1] + 1.0).abs() < 0.05);
    // a zero standard deviation returns the mean exactly
    let exact = LatentGaussian { mean: vec![0.5, -1.0], log_variance: vec![f64::NEG_INFINITY; 2] };
    assert_eq!(reparameterize(&exact, 1, 0), vec![0.5, -1.0]);

    let lat = LatentGaussian { mean: vec![1.0, -2.0], log_variance: vec![0.0, 2f64.ln()] };
    let n = 10_000;
    let mut mean = [0.0; 2];
    for i in 0..n {
        let z = reparameterize(&lat, 77, i);
        mean[0] += z[0] / n as f64;
        mean[1] += z[1] / n as f64;
    }
    assert!((mean[0] - 1.0).abs() < 3.0 / 100.0);
    assert!((mean[1] + 2.0).abs() < 3.0 * 2f64.sqrt() / 100.0);
}

#[test]
fn kl_cases() {
    assert_eq!(kl_divergence(&[0.0; 5], &[0.0; 5]), 0.0);
    assert!(kl_divergence(&[0.3, -1.0], &[0.5, -2.0]) > 0.0);
}

#[test]
fn perfect_reconstruction_has_zero_loss() {
    let mut norm = Normalization::identity(9);
    let target = field(4, 9);
    norm.field_mean = field_to_real(&target);
    let m = CvaeModel::zeroed(CvaeConfig::new(16, 9), norm).unwrap();
    let (loss, grad) = elbo_loss(&m, &target, &body(0.0), 3).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|g| *g == 0.0));
}

#[test]
fn decoder_is_continuous() {
    let m = random_model(16, 8);
    let z = standard_normal(16, 1, Domain::Latent, 0);
    let base = field_to_real(&decode(&m, &z, &body(0.1)).unwrap());
    let mut last = f64::INFINITY;
    for step in [1e-2, 1e-4, 1e-6, 1e-8] {
        let zp: Vec<f64> = z.iter().map(|v| v + step).collect();
        let out = field_to_real(&decode(&m, &zp, &body(0.1)).unwrap());
        let diff = out.iter().zip(&base).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(diff < last);
        last = diff;
    }
    assert!(last < 1e-6);
}

#[test]
fn gradient_matches_finite_differences() {
    let m = random_model(16, 21);
    let (f, c) = (field(5, 9), body(-0.1));
    let (_, grad) = elbo_loss(&m, &f, &c, 9).unwrap();
    let base = activation_pattern(&m, &f, &c, 9).unwrap();
    let h = 1e-5;
    let mut checked = 0;
    for i in (0..m.params.len()).step_by(97) {
        let mut plus = m.clone();
        plus.params[i] += h;
        let mut minus = m.clone();
        minus.params[i] -= h;
        if activation_pattern(&plus, &f, &c, 9).unwrap() != base || activation_pattern(&minus, &f, &c, 9).unwrap() != base {
            continue;
        }
        let fd = (elbo_loss(&plus, &f, &c, 9).unwrap().0 - elbo_loss(&minus, &f, &c, 9).unwrap().0) / (2.0 * h);
        let g = grad[i];
        // below this magnitude the difference quotient is dominated by rounding
        if g.abs().max(fd.abs()) < 1e-4 {
            assert!((g - fd).abs() < 1e-8, "param {i}: analytic {g} fd {fd}");
            continue;
        }
        let rel = (g - fd).abs() / g.abs().max(fd.abs());
        assert!(rel < 1e-4, "param {i}: analytic {g} fd {fd}");
        checked += 1;
    }
    assert!(checked > 200);
}

#[test]
fn memorizes_single_sample() {
    let target = field(6, 9);
    let pair = TrainingPair { field: target.clone(), condition: body(0.0) };
    let norm = Normalization::fit([(&pair.field, &pair.condition)]).unwrap();
    let mut cfg = CvaeConfig::new(16, 9);
    cfg.epochs = 1500;
    cfg.batch_size = 1;
    cfg.learning_rate = 1e-2;
    let m = CvaeModel::new(cfg, norm, 2).unwrap();
    let (trained, trace) = train(&m, &[pair.clone()], 4).unwrap();
    assert!(trace.last().unwrap() < &(0.01 * trace[0].max(1.0)), "{:?}", &trace[trace.len() - 3..]);
    let lat = encode(&trained, &target, &pair.condition).unwrap();
    let rec = decode(&trained, &lat.mean, &pair.condition).unwrap();
    for (a, b) in rec.values().iter().zip(target.values()) {
        assert!((a - b).norm() < 1e-2, "{a} vs {b}");
    }
}

#[test]
fn training_is_deterministic() {
    let pairs: Vec<TrainingPair> = (0..40).map(|i| TrainingPair { field: field(i, 9), condition: body(0.01 * i as f64) }).collect();
    let norm = Normalization::fit(pairs.iter().map(|p| (&p.field, &p.condition))).unwrap();
    let mut cfg = CvaeConfig::new(16, 9);
    cfg.epochs = 3;
    cfg.batch_size = 16;
    let m = CvaeModel::new(cfg, norm, 1).unwrap();
    let (a, ta) = train(&m, &pairs, 7).unwrap();
    let (b, tb) = train(&m, &pairs, 7).unwrap();
    assert_eq!(a.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(ta, tb);
    let (c, _) = train(&m, &pairs, 8).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn empty_training_set() {
    let m = random_model(16, 1);
    assert!(matches!(train(&m, &[], 0), Err(CvaeError::EmptyDataset)));
}

#[test]
fn generate_cases() {
    let m = random_model(32, 4);
    assert!(generate(&m, &body(0.0), 0, 1).is_empty());
    let a = generate(&m, &body(0.0), 5, 1);
    let b = generate(&m, &body(0.0), 5, 1);
    assert_eq!(a, b);
    assert_eq!(a.len(), 5);
    assert!(a.iter().all(|f| f.len() == 9 && f.is_finite()));
    assert_ne!(a[0], a[1]);
}

#[test]
fn normalization_standardizes() {
    let pairs: Vec<(FieldVector, BodyState)> = (0..50).map(|i| (field(i, 9), body(0.004 * i as f64))).collect();
    let norm = Normalization::fit(pairs.iter().map(|(f, b)| (f, b))).unwrap();
    let rows: Vec<Vec<f64>> = pairs.iter().map(|(f, _)| norm.normalize_field(f).unwrap()).collect();
    for d in 0..18 {
        let mean = rows.iter().map(|r| r[d]).sum::<f64>() / 50.0;
        let var = rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / 50.0;
        assert!(mean.abs() < 1e-9 && (var.sqrt() - 1.0).abs() < 1e-9);
    }
    // constant features keep unit scale
    assert_eq!(norm.cond_scale[3], 1.0);
}

#[test]
fn save_load_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let m = random_model(16, 12);
    save_model(&m, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded, m);
    let path2 = dir.path().join("m2.bin");
    save_model(&loaded, &path2).unwrap();
    assert_eq!(bytes, std::fs::read(&path2).unwrap());
    assert_eq!(generate(&m, &body(0.1), 3, 9), generate(&loaded, &body(0.1), 3, 9));
    assert_eq!(&bytes[..4], b"CVAE");
}

#[test]
fn load_rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let m = random_model(16, 12);
    let bytes = io::to_bytes(&m);

    let truncated = dir.path().join("t.bin");
    std::fs::write(&truncated, &bytes[..bytes.len() - 11]).unwrap();
    assert!(matches!(load_model(&truncated), Err(CvaeError::CorruptFile(_))));

    let mut versioned = bytes.clone();
    versioned[4..8].copy_from_slice(&7u32.to_le_bytes());
    let v = dir.path().join("v.bin");
    std::fs::write(&v, &versioned).unwrap();
    assert!(matches!(load_model(&v), Err(CvaeError::FormatVersionMismatch { found: 7, .. })));

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(io::from_bytes(&trailing), Err(CvaeError::CorruptFile(_))));
    assert!(matches!(io::from_bytes(b"NOPE"), Err(CvaeError::CorruptFile(_))));
}

#[test]
fn z32_has_more_parameters_than_z16() {
    assert!(random_model(32, 0).params.len() > random_model(16, 0).params.len());
}
