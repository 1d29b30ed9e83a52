use roomrec_core::nn::gradcheck::{check_gradients, random_batch, widen_margins, GradCheck};
use roomrec_core::nn::ops::Padding;
use roomrec_core::nn::{build_named_arch, CnnArch, FeatureKind, LayerSpec, Network, Tensor};

fn arch(name: &str, input: [usize; 3], layers: Vec<LayerSpec>, classes: usize) -> CnnArch {
    CnnArch {
        name: name.into(),
        feature: FeatureKind::Spectrogram,
        input,
        layers,
        classes,
    }
}

fn check(mut net: Network<f64>, xs: &[Tensor<f64>], ys: &[usize], dropout: Option<u64>, per_tensor: usize) -> f64 {
    let cfg = GradCheck {
        dropout,
        per_tensor,
        ..GradCheck::default()
    };
    let report = check_gradients(&mut net, xs, ys, &cfg).unwrap_or_else(|e| panic!("{e}"));
    assert!(report.probes > 0);
    report.worst_rel
}

fn batch(input: [usize; 3], classes: usize, n: usize, seed: u64) -> (Vec<Tensor<f64>>, Vec<usize>) {
    random_batch(input, classes, n, seed)
}

#[test]
fn dense_layers() {
    let a = arch(
        "dense",
        [1, 6, 1],
        vec![LayerSpec::Flatten, LayerSpec::dense(5, true), LayerSpec::dense(3, false), LayerSpec::Softmax],
        3,
    );
    let (xs, ys) = batch(a.input, 3, 4, 1);
    check(Network::init(a, 11).unwrap(), &xs, &ys, None, usize::MAX);
}

#[test]
fn same_padded_conv() {
    let a = arch(
        "conv-same",
        [5, 4, 2],
        vec![
            LayerSpec::conv(3, 4, 4),
            LayerSpec::Flatten,
            LayerSpec::dense(3, false),
            LayerSpec::Softmax,
        ],
        3,
    );
    let (xs, ys) = batch(a.input, 3, 3, 2);
    check(Network::init(a, 12).unwrap(), &xs, &ys, None, usize::MAX);
}

#[test]
fn valid_padded_conv_without_relu() {
    let a = arch(
        "conv-valid",
        [5, 4, 1],
        vec![
            LayerSpec::Conv {
                filters: 2,
                kernel_h: 2,
                kernel_w: 3,
                padding: Padding::Valid,
                relu: false,
            },
            LayerSpec::Flatten,
            LayerSpec::dense(2, false),
            LayerSpec::Softmax,
        ],
        2,
    );
    let (xs, ys) = batch(a.input, 2, 3, 3);
    check(Network::init(a, 13).unwrap(), &xs, &ys, None, usize::MAX);
}

#[test]
fn maxpool_between_convs() {
    let a = arch(
        "pool",
        [6, 4, 1],
        vec![
            LayerSpec::conv(2, 3, 3),
            LayerSpec::pool(2, 2),
            LayerSpec::conv(2, 2, 2),
            LayerSpec::Flatten,
            LayerSpec::dense(3, false),
            LayerSpec::Softmax,
        ],
        3,
    );
    let (xs, ys) = batch(a.input, 3, 3, 4);
    check(Network::init(a, 14).unwrap(), &xs, &ys, None, usize::MAX);
}

#[test]
fn dropout_in_training_mode() {
    let a = arch(
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
    );
    let (xs, ys) = batch(a.input, 3, 4, 5);
    check(Network::init(a, 15).unwrap(), &xs, &ys, Some(77), usize::MAX);
}

#[test]
fn one_dimensional_psd_network() {
    let a = build_named_arch("CNN-psd", 3).unwrap();
    let (xs, ys) = batch(a.input, 3, 1, 6);
    let mut net = Network::init(a, 16).unwrap();
    widen_margins(&mut net, 20.0, 3);
    check(net, &xs, &ys, None, 25);
}

#[test]
fn full_cnn_c() {
    let a = build_named_arch("C", 4).unwrap();
    let (xs, ys) = batch(a.input, 4, 1, 7);
    let mut net = Network::init(a, 17).unwrap();
    widen_margins(&mut net, 20.0, 3);
    let worst = check(net, &xs, &ys, Some(5), 40);
    assert!(worst < 1e-4);
}

#[test]
fn zero_input_and_zero_weights_give_zero_conv_gradients() {
    let a = build_named_arch("C", 3).unwrap();
    let mut net = Network::<f64>::init(a.clone(), 1).unwrap();
    for t in net.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let x = Tensor::zeros(a.input.to_vec());
    let g = net.batch_gradients(&[&x], &[1], None).unwrap();
    let names = net.param_names();
    for (name, t) in names.iter().zip(g.grads.tensors()) {
        if name.starts_with("conv") && name.ends_with("weight") {
            assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
}

#[test]
fn duplicating_a_batch_leaves_mean_gradients_unchanged() {
    let a = build_named_arch("C", 3).unwrap();
    let net = Network::<f64>::init(a.clone(), 2).unwrap();
    let (xs, ys) = batch(a.input, 3, 5, 8);
    let once: Vec<&Tensor<f64>> = xs.iter().collect();
    let twice: Vec<&Tensor<f64>> = xs.iter().chain(xs.iter()).collect();
    let ys2: Vec<usize> = ys.iter().chain(ys.iter()).copied().collect();
    let g1 = net.batch_gradients(&once, &ys, None).unwrap();
    let g2 = net.batch_gradients(&twice, &ys2, None).unwrap();
    assert!((g1.loss - g2.loss).abs() < 1e-12);
    for (a, b) in g1.grads.tensors().iter().zip(g2.grads.tensors()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }
}

#[test]
fn mismatched_input_shape_is_a_shape_error() {
    let a = build_named_arch("C", 3).unwrap();
    let net = Network::<f64>::init(a, 2).unwrap();
    let x = Tensor::zeros(vec![1, 147, 1]);
    assert!(matches!(
        net.batch_gradients(&[&x], &[0], None),
        Err(roomrec_core::Error::Shape(_))
    ));
}
