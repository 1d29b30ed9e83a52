use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roomrec_core::audio::{EchoFrame, ECHO_SAMPLES};
use roomrec_core::baseline::svm::{kernel_matrix, solve_binary, SvmModel};
use roomrec_core::baseline::{mfcc, svm_predict, svm_train, Kernel, MfccConfig, SvmConfig};
use roomrec_core::Error;
use std::f64::consts::PI;

fn oracle_mfcc(x: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let (fs, len, hop, nfft, nf, nc) = (44_100.0, 1102, 441, 2048, 26, 13);
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let step = (mel(hi) - mel(lo)) / (nf + 1) as f64;
    let pts: Vec<f64> = (0..nf + 2).map(|i| inv(mel(lo) + step * i as f64)).collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start + len <= x.len() {
        let frame = &x[start..start + len];
        let mut energies = vec![0.0; nf];
        for k in 0..=nfft / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &v) in frame.iter().enumerate() {
                let ph = -2.0 * PI * (k * n % nfft) as f64 / nfft as f64;
                re += v * ph.cos();
                im += v * ph.sin();
            }
            let p = (re * re + im * im) / nfft as f64;
            let f = k as f64 * fs / nfft as f64;
            for m in 0..nf {
                let w = if f > pts[m] && f <= pts[m + 1] {
                    (f - pts[m]) / (pts[m + 1] - pts[m])
                } else if f > pts[m + 1] && f < pts[m + 2] {
                    (pts[m + 2] - f) / (pts[m + 2] - pts[m + 1])
                } else {
                    0.0
                };
                energies[m] += w * p;
            }
        }
        let logs: Vec<f64> = energies.iter().map(|e| e.max(1e-12).ln()).collect();
        for c in 0..nc {
            let norm = if c == 0 { (1.0 / nf as f64).sqrt() } else { (2.0 / nf as f64).sqrt() };
            let s: f64 = (0..nf)
                .map(|m| logs[m] * (PI * c as f64 * (m as f64 + 0.5) / nf as f64).cos())
                .sum();
            out.push(norm * s);
        }
        start += hop;
    }
    out
}

fn random_frame(seed: u64) -> EchoFrame<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EchoFrame::new((0..ECHO_SAMPLES).map(|_| rng.random_range(-0.3..0.3)).collect()).unwrap()
}

#[test]
fn mfcc_matches_direct_summation() {
    let frame = random_frame(11);
    for cfg in [MfccConfig::broadband(), MfccConfig::narrowband()] {
        let ours = mfcc(&frame, &cfg).unwrap();
        let theirs = oracle_mfcc(frame.samples(), cfg.low_hz, cfg.high_hz);
        assert_eq!(ours.len(), 104);
        assert_eq!(theirs.len(), 104);
        for (a, b) in ours.iter().zip(&theirs) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}

fn blobs(seed: u64, centers: &[(f64, f64)], per: usize, spread: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (c, &(cx, cy)) in centers.iter().enumerate() {
        for _ in 0..per {
            xs.push(vec![cx + rng.random_range(-spread..spread), cy + rng.random_range(-spread..spread)]);
            ys.push(c * 10 + 3);
        }
    }
    (xs, ys)
}

#[test]
fn separable_toy_set_is_learned_and_support_vectors_keep_their_label() {
    let (xs, ys) = blobs(1, &[(-2.0, 0.0), (2.0, 0.5)], 30, 1.0);
    for kernel in [Kernel::Linear, Kernel::Rbf { gamma: None }] {
        let model = svm_train(&xs, &ys, &SvmConfig { kernel, ..Default::default() }).unwrap();
        for (x, &y) in xs.iter().zip(&ys) {
            assert_eq!(svm_predict(&model, x).unwrap(), y);
        }
        let m = &model.machines[0];
        let sv: Vec<f64> = m.support[0].iter().zip(&model.std).zip(&model.mean).map(|((v, s), mu)| v * s + mu).collect();
        let expected = if m.coef[0] > 0.0 { model.classes[m.pos] } else { model.classes[m.neg] };
        assert_eq!(svm_predict(&model, &sv).unwrap(), expected);
    }
}

#[test]
fn machines_satisfy_kkt_conditions() {
    let (xs, ys) = blobs(2, &[(0.0, 0.0), (1.0, 1.0), (0.0, 1.5)], 40, 1.2);
    let cfg = SvmConfig::default();
    let model = svm_train(&xs, &ys, &cfg).unwrap();
    let kernel = model.kernel;
    let scaled: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| x.iter().zip(&model.mean).zip(&model.std).map(|((v, m), s)| (v - m) / s).collect())
        .collect();
    for m in &model.machines {
        let sum: f64 = m.coef.iter().sum();
        assert!(sum.abs() < 1e-9);
        assert!(m.coef.iter().all(|c| c.abs() <= cfg.c + 1e-12));
        for (x, &y) in scaled.iter().zip(&ys) {
            let idx = model.classes.binary_search(&y).unwrap();
            if idx != m.pos && idx != m.neg {
                continue;
            }
            let sign = if idx == m.pos { 1.0 } else { -1.0 };
            let alpha = m
                .support
                .iter()
                .zip(&m.coef)
                .find(|(sv, _)| sv.as_slice() == x.as_slice())
                .map_or(0.0, |(_, c)| c.abs());
            let margin = sign * m.decision(&kernel, x);
            let tol = 2.0 * cfg.eps;
            if alpha <= 0.0 {
                assert!(margin >= 1.0 - tol, "non-SV inside margin: {margin}");
            } else if alpha >= cfg.c {
                assert!(margin <= 1.0 + tol, "bounded SV outside margin: {margin}");
            } else {
                assert!((margin - 1.0).abs() <= tol, "free SV off margin: {margin}");
            }
        }
    }
}

#[test]
fn duplicating_points_keeps_the_decision_function() {
    let (xs, ys) = blobs(3, &[(-1.0, 0.0), (1.0, 0.2)], 25, 1.2);
    let cfg = SvmConfig {
        eps: 1e-6,
        ..Default::default()
    };
    let base = svm_train(&xs, &ys, &cfg).unwrap();
    let mut xs2 = xs.clone();
    xs2.extend(xs.iter().cloned());
    let mut ys2 = ys.clone();
    ys2.extend(ys.iter().copied());
    // Each copy carries half the weight, so halving C gives the same problem.
    let dup = svm_train(&xs2, &ys2, &SvmConfig { c: cfg.c / 2.0, ..cfg.clone() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let p = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let a = base.decisions(&p).unwrap()[0];
        let b = dup.decisions(&p).unwrap()[0];
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn rbf_kernel_matrix_is_positive_semidefinite() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts: Vec<Vec<f64>> = (0..12).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
    let n = pts.len();
    let k = kernel_matrix(&Kernel::Rbf { gamma: Some(0.7) }, &refs);
    for i in 0..n {
        for j in 0..n {
            assert_eq!(k[i * n + j], k[j * n + i]);
        }
    }
    // Cholesky of K + tiny ridge succeeds only for a PSD matrix.
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|p| l[i * n + p] * l[j * n + p]).sum();
            if i == j {
                let d = k[i * n + i] + 1e-10 - s;
                assert!(d > 0.0, "pivot {i} is {d}");
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (k[i * n + j] - s) / l[j * n + j];
            }
        }
    }
}

#[test]
fn prediction_agrees_with_kernel_expansion_and_voting() {
    let (xs, ys) = blobs(5, &[(0.0, 0.0), (2.0, 0.0), (1.0, 2.0), (3.0, 2.0)], 20, 1.0);
    let model = svm_train(&xs, &ys, &SvmConfig::default()).unwrap();
    let gamma = match model.kernel {
        Kernel::Rbf { gamma } => gamma.unwrap(),
        Kernel::Linear => unreachable!(),
    };
    assert_eq!(model.machines.len(), 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..40 {
        let p = vec![rng.random_range(-1.0..4.0), rng.random_range(-1.0..3.0)];
        let z: Vec<f64> = p.iter().zip(&model.mean).zip(&model.std).map(|((v, m), s)| (v - m) / s).collect();
        let mut votes = [0usize; 4];
        for m in &model.machines {
            let mut f = -m.rho;
            for (sv, c) in m.support.iter().zip(&m.coef) {
                let d: f64 = sv.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
                f += c * (-gamma * d).exp();
            }
            votes[if f > 0.0 { m.pos } else { m.neg }] += 1;
        }
        assert_eq!(model.votes(&p).unwrap().iter().sum::<usize>(), 6);
        let best = (0..4).fold(0, |b, i| if votes[i] > votes[b] { i } else { b });
        assert_eq!(svm_predict(&model, &p).unwrap(), model.classes[best]);
        assert_eq!(svm_predict(&model, &p).unwrap(), svm_predict(&model, &p).unwrap());
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let xs = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    assert!(matches!(svm_train(&xs, &[1, 1], &SvmConfig::default()), Err(Error::Argument(_))));
    let model = svm_train(&xs, &[0, 1], &SvmConfig::default()).unwrap();
    assert!(matches!(svm_predict(&model, &[0.0]), Err(Error::Shape(_))));
}

#[test]
fn model_json_round_trip() {
    let (xs, ys) = blobs(7, &[(0.0, 0.0), (2.0, 1.0), (1.0, 3.0)], 15, 1.0);
    let model = svm_train(&xs, &ys, &SvmConfig::default()).unwrap();
    let back = SvmModel::from_json(&model.to_json().unwrap()).unwrap();
    for x in &xs {
        assert_eq!(model.predict(x).unwrap(), back.predict(x).unwrap());
    }
    assert!(SvmModel::from_json("{").is_err());
}

#[test]
fn binary_solver_on_two_points_matches_closed_form() {
    // Two points at distance d under a linear kernel: alpha = 2 / d^2, rho = 0 when symmetric.
    let xs = [[1.0, 0.0], [-1.0, 0.0]];
    let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let k = kernel_matrix(&Kernel::Linear, &refs);
    let sol = solve_binary(&k, &[1.0, -1.0], 10.0, 1e-9);
    assert!((sol.alpha[0] - 0.5).abs() < 1e-9 && (sol.alpha[1] - 0.5).abs() < 1e-9);
    assert!(sol.rho.abs() < 1e-9);
}
