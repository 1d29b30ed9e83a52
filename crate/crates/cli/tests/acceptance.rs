//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (no libtest harness). The process exits nonzero on
//! a failed criterion only when `ROOMREC_ACCEPTANCE_STRICT=1`; otherwise the
//! FAIL lines are the report.

mod common;

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roomrec_core::audio::{fft, psd_narrowband, spectrogram, BandSelection, EchoFrame, ECHO_SAMPLES};
use roomrec_core::dataset::SplitPolicy;
use roomrec_core::experiments::{
    model_accuracy, run_designs, run_robustness_with, subsample_train, train_model, Corpus, ExperimentConfig,
};
use roomrec_core::nn::gradcheck::{check_gradients, random_batch, widen_margins, GradCheck};
use roomrec_core::nn::ops::Padding;
use roomrec_core::nn::{build_named_arch, conv2d, count_params, maxpool, CnnArch, FeatureKind, LayerSpec, Network, Tensor};
use roomrec_core::sim::{Interferer, SimSpec};
use roomrec_core::Model32;

use common::Check;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

struct Report {
    failed: usize,
}

impl Report {
    fn run(&mut self, name: &str, f: impl FnOnce() -> Check) {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                self.failed += 1;
                println!("FAIL  {name}: {why} [{secs:.1}s]");
            }
        }
    }
}

fn naive_dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, &v)| {
                    // Reduce k*t mod n first so the angle stays small and exact.
                    let phase = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                    Complex64::from_polar(v, phase)
                })
                .sum()
        })
        .collect()
}

fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>, padding: Padding) -> (Vec<usize>, Vec<f64>) {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw, f) = (k.shape()[0], k.shape()[1], k.shape()[3]);
    let (ph, pw, oh, ow) = match padding {
        Padding::Same => ((kh - 1) / 2, (kw - 1) / 2, h, w),
        Padding::Valid => (0, 0, h + 1 - kh, w + 1 - kw),
    };
    let mut out = vec![0.0; oh * ow * f];
    for i in 0..oh {
        for j in 0..ow {
            for o in 0..f {
                let mut acc = b.data()[o];
                for u in 0..kh {
                    for v in 0..kw {
                        let (r, s) = (i + u, j + v);
                        if r < ph || s < pw || r - ph >= h || s - pw >= w {
                            continue;
                        }
                        for ch in 0..c {
                            acc += x.data()[((r - ph) * w + (s - pw)) * c + ch] * k.data()[((u * kw + v) * c + ch) * f + o];
                        }
                    }
                }
                out[(i * ow + j) * f + o] = acc;
            }
        }
    }
    (vec![oh, ow, f], out)
}

fn pool_oracle(x: &Tensor<f64>, ph: usize, pw: usize) -> (Vec<usize>, Vec<f64>) {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h / ph, w / pw);
    let mut out = vec![f64::NEG_INFINITY; oh * ow * c];
    for i in 0..oh {
        for j in 0..ow {
            for ch in 0..c {
                for u in 0..ph {
                    for v in 0..pw {
                        let val = x.data()[((i * ph + u) * w + j * pw + v) * c + ch];
                        let o = &mut out[(i * ow + j) * c + ch];
                        *o = o.max(val);
                    }
                }
            }
        }
    }
    (vec![oh, ow, c], out)
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dsp_oracles() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for n in 1..=1024 {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = fft(&x).map_err(|e| e.to_string())?;
        let err = fast.iter().zip(naive_dft(&x)).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        worst = worst.max(err);
    }
    ensure!(worst < 1e-9, "fft vs DFT max abs err {worst:e}");

    let mut conv_err = 0.0f64;
    for (shape, kernel, padding) in [
        ([32, 5, 1], [4, 4, 1, 16], Padding::Same),
        ([16, 3, 16], [4, 4, 16, 32], Padding::Same),
        ([7, 6, 3], [3, 2, 3, 4], Padding::Valid),
        ([1, 147, 1], [1, 5, 1, 8], Padding::Same),
    ] {
        let x = rand_tensor(&shape, &mut rng);
        let k = rand_tensor(&kernel, &mut rng);
        let b = rand_tensor(&[kernel[3]], &mut rng);
        let got = conv2d(&x, &k, &b, padding).map_err(|e| e.to_string())?;
        let (oshape, want) = conv_oracle(&x, &k, &b, padding);
        ensure!(got.shape() == oshape.as_slice(), "conv shape {:?} vs {oshape:?}", got.shape());
        for (a, b) in got.data().iter().zip(&want) {
            conv_err = conv_err.max((a - b).abs());
        }
    }
    ensure!(conv_err < 1e-10, "conv2d max err {conv_err:e}");

    for (shape, ph, pw) in [([32, 5, 16], 2, 2), ([9, 7, 3], 3, 2), ([1, 147, 8], 1, 2)] {
        let x = rand_tensor(&shape, &mut rng);
        let (got, _) = maxpool(&x, ph, pw).map_err(|e| e.to_string())?;
        let (oshape, want) = pool_oracle(&x, ph, pw);
        ensure!(got.shape() == oshape.as_slice(), "pool shape {:?} vs {oshape:?}", got.shape());
        ensure!(got.data() == want.as_slice(), "maxpool differs from oracle on {shape:?}");
    }

    let band = BandSelection::default();
    let mut frames: Vec<Vec<f64>> = vec![vec![0.0; ECHO_SAMPLES], vec![1.0; ECHO_SAMPLES]];
    frames.push((0..ECHO_SAMPLES).map(|n| if n % 2 == 0 { 1.0 } else { -1.0 }).collect());
    for _ in 0..20 {
        let scale = rng.random_range(1e-6..1.0);
        frames.push((0..ECHO_SAMPLES).map(|_| scale * rng.random_range(-1.0..1.0)).collect());
    }
    for x in frames {
        let frame = EchoFrame::new(x).map_err(|e| e.to_string())?;
        let s = spectrogram(&frame, &band);
        ensure!(s.shape() == (32, 5), "spectrogram shape {:?}", s.shape());
        ensure!(s.values().iter().all(|v| v.is_finite()), "non-finite spectrogram cell");
        let p = psd_narrowband(&frame, &band);
        ensure!(p.len() == 147, "PSD has {} bins", p.len());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1}s");
    Ok(format!("fft err {worst:.1e} over lengths 1..=1024, conv err {conv_err:.1e}, shapes 32x5 / 147"))
}

fn small_arch(name: &str, input: [usize; 3], layers: Vec<LayerSpec>, classes: usize) -> CnnArch {
    CnnArch {
        name: name.into(),
        feature: FeatureKind::Spectrogram,
        input,
        layers,
        classes,
    }
}

fn gradients() -> Check {
    let start = Instant::now();
    let cases: Vec<(CnnArch, usize, Option<u64>, usize, Option<f64>)> = vec![
        (
            small_arch(
                "dense",
                [1, 6, 1],
                vec![LayerSpec::Flatten, LayerSpec::dense(5, true), LayerSpec::dense(3, false), LayerSpec::Softmax],
                3,
            ),
            4,
            None,
            usize::MAX,
            None,
        ),
        (
            small_arch(
                "conv+pool",
                [6, 4, 2],
                vec![
                    LayerSpec::conv(3, 3, 3),
                    LayerSpec::pool(2, 2),
                    LayerSpec::conv(2, 2, 2),
                    LayerSpec::Flatten,
                    LayerSpec::dense(3, false),
                    LayerSpec::Softmax,
                ],
                3,
            ),
            3,
            None,
            usize::MAX,
            None,
        ),
        (
            small_arch(
                "dropout",
                [1, 8, 1],
                vec![
                    LayerSpec::Flatten,
                    LayerSpec::dense(10, true),
                    LayerSpec::Dropout { rate: 0.4 },
                    LayerSpec::dense(3, false),
                    LayerSpec::Softmax,
                ],
                3,
            ),
            4,
            Some(77),
            usize::MAX,
            None,
        ),
        (build_named_arch("CNN-psd", 3).map_err(|e| e.to_string())?, 1, None, 25, Some(20.0)),
        (build_named_arch("C", 4).map_err(|e| e.to_string())?, 1, Some(5), 40, Some(20.0)),
    ];
    let mut worst = 0.0f64;
    let mut probes = 0;
    for (i, (arch, n, dropout, per_tensor, widen)) in cases.into_iter().enumerate() {
        let name = arch.name.clone();
        let (xs, ys) = random_batch(arch.input, arch.classes, n, 10 + i as u64);
        let mut net = Network::<f64>::init(arch, 20 + i as u64).map_err(|e| e.to_string())?;
        if let Some(g) = widen {
            widen_margins(&mut net, g, 3);
        }
        let cfg = GradCheck {
            dropout,
            per_tensor,
            ..GradCheck::default()
        };
        let r = check_gradients(&mut net, &xs, &ys, &cfg).map_err(|e| format!("{name}: {e}"))?;
        worst = worst.max(r.worst_rel);
        probes += r.probes;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "took {secs:.1}s");
    Ok(format!("{probes} probes, worst rel err {worst:.1e}"))
}

fn param_count() -> Check {
    let arch = build_named_arch("C", 22).map_err(|e| e.to_string())?;
    // conv 4x4x1x16 + b, conv 4x4x16x32 + b, pooled 8x1x32 -> dense 1024, dense 22.
    let (h, w) = (32 / 2 / 2, 5 / 2 / 2);
    let oracle = (4 * 4 * 16 + 16) + (4 * 4 * 16 * 32 + 32) + (h * w * 32 * 1024 + 1024) + (1024 * 22 + 22);
    let got = count_params(&arch);
    let net = Network::<f32>::init(arch, 1).map_err(|e| e.to_string())?;
    let stored: usize = net.tensors().iter().map(|t| t.data().len()).sum();
    ensure!(got == 294_214 && oracle == 294_214 && stored == got, "count {got}, oracle {oracle}, stored {stored}");
    Ok(format!("count_params(CNN-C, K=22) = {got}"))
}

/// Models and results shared between the corpus-level criteria.
struct Trained {
    corpus: Corpus<f32>,
    cfg: ExperimentConfig,
    cnn: Model32,
    cnn_accuracy: f64,
    cnn_seconds: f64,
}

fn train_reference() -> Result<Trained, String> {
    let spec = SimSpec::default();
    let corpus = Corpus::<f32>::synthetic(&spec, &SplitPolicy::default(), 1).map_err(|e| e.to_string())?;
    let cfg = ExperimentConfig::default();
    let arch = build_named_arch("C", corpus.classes()).map_err(|e| e.to_string())?;
    let (cnn, cell) = train_model(&corpus, &arch, &corpus.train, &cfg).map_err(|e| e.to_string())?;
    Ok(Trained {
        corpus,
        cfg,
        cnn,
        cnn_accuracy: cell.accuracy,
        cnn_seconds: cell.train_seconds,
    })
}

fn end_to_end(t: &Trained) -> Check {
    let c = &t.corpus;
    ensure!(
        c.classes() == 10 && c.train.len() == 5000 && c.val.len() == 2500 && c.test.len() == 2500,
        "corpus shape {} rooms, {}/{}/{}",
        c.classes(),
        c.train.len(),
        c.val.len(),
        c.test.len()
    );
    ensure!(t.cnn_accuracy >= 0.95, "CNN-C test accuracy {:.4}", t.cnn_accuracy);
    ensure!(t.cnn_seconds < 600.0, "training took {:.0}s", t.cnn_seconds);
    Ok(format!("CNN-C test accuracy {:.4}, trained in {:.0}s", t.cnn_accuracy, t.cnn_seconds))
}

fn design_matrix(t: &Trained) -> Check {
    let (m, _) = run_designs(&t.corpus, &t.cfg, &[("psd", "CNN", "CNN-psd"), ("spectrogram", "DNN", "DNN-spec")])
        .map_err(|e| e.to_string())?;
    let psd_cnn = m.accuracy("psd", "CNN").unwrap_or(0.0);
    let spec_dnn = m.accuracy("spectrogram", "DNN").unwrap_or(0.0);
    let detail = format!(
        "spectrogram+CNN {:.4}, psd+CNN {psd_cnn:.4}, spectrogram+DNN {spec_dnn:.4}",
        t.cnn_accuracy
    );
    ensure!(
        t.cnn_accuracy >= psd_cnn + 0.05 && t.cnn_accuracy >= spec_dnn + 0.05,
        "margin below 5 points: {detail}"
    );
    Ok(detail)
}

fn robustness(t: &Trained) -> Check {
    let (rows, _) =
        run_robustness_with(&t.corpus, &Interferer::default(), &t.cfg, Some(&t.cnn)).map_err(|e| e.to_string())?;
    let row = |m: &str| rows.iter().find(|r| r.method == m).cloned().ok_or(format!("no {m} row"));
    let cnn = row("CNN-narrowband")?;
    let svm = row("SVM-broadband")?;
    let detail = format!(
        "CNN {:.4}->{:.4} (drop {:.4}), broadband SVM {:.4}->{:.4} (drop {:.4})",
        cnn.clean,
        cnn.interfered,
        cnn.drop(),
        svm.clean,
        svm.interfered,
        svm.drop()
    );
    ensure!(cnn.drop() < svm.drop(), "CNN drop not smaller: {detail}");
    Ok(detail)
}

fn volume_trend(t: &Trained) -> Check {
    let arch = build_named_arch("C", t.corpus.classes()).map_err(|e| e.to_string())?;
    let mut acc = Vec::new();
    for v in [100, 250] {
        let subset = subsample_train(&t.corpus, v, t.cfg.seed).map_err(|e| e.to_string())?;
        let (model, _) = train_model(&t.corpus, &arch, &subset, &t.cfg).map_err(|e| e.to_string())?;
        acc.push(model_accuracy(&model, &t.corpus.test).map_err(|e| e.to_string())?);
    }
    // 500 per room is the full training split, so the reference model is that point.
    acc.push(t.cnn_accuracy);
    let detail = format!("100: {:.4}, 250: {:.4}, 500: {:.4}", acc[0], acc[1], acc[2]);
    ensure!(acc[2] >= acc[0], "500 below 100: {detail}");
    ensure!(acc.windows(2).all(|w| w[1] >= w[0] - 0.02), "not monotone within 2 points: {detail}");
    Ok(detail)
}

fn main() {
    let mut report = Report { failed: 0 };
    report.run("DSP oracle suite", dsp_oracles);
    report.run("Gradient suite", gradients);
    report.run("Parameter accounting", param_count);

    let dir = tempfile::tempdir().expect("tempdir");
    report.run("Service contract suite", || common::service_contract(&dir.path().join("contract")));
    report.run("Client loop headless", || {
        let recs = common::capture(roomrec_cli::Mode::Training, 0, 0)?;
        ensure!(recs.len() == 500, "training capture gave {} records", recs.len());
        common::client_loop(&dir.path().join("loop"))
    });

    let start = Instant::now();
    match train_reference() {
        Ok(t) => {
            report.run("Synthetic end-to-end", || end_to_end(&t));
            report.run("Design-matrix ordering", || design_matrix(&t));
            report.run("Robustness direction", || robustness(&t));
            report.run("Volume trend", || volume_trend(&t));
        }
        Err(e) => {
            for name in ["Synthetic end-to-end", "Design-matrix ordering", "Robustness direction", "Volume trend"] {
                report.run(name, || Err(format!("reference training failed: {e}")));
            }
        }
    }
    println!("corpus criteria took {:.0}s; {} failed", start.elapsed().as_secs_f64(), report.failed);
    if report.failed > 0 && std::env::var("ROOMREC_ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}
