use proptest::prelude::*;
use uniformer::autodiff::ConvParams;
use uniformer::nn::conv::conv_forward;
use uniformer::nn::{drop_path, ConvSpec, Ctx, Mode, NormSpec, ParamStore};
use uniformer::{Graph, Rng, Tensor};

/// Seven nested loops over (n, co, t, h, w) × (ci, kernel window), grouped,
/// zero padded, no flip.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, spec: &ConvSpec) -> Tensor<f64> {
    let xs = x.shape();
    let (n, cin, ti, hi, wi) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let [kt, kh, kw] = spec.kernel;
    let [st, sh, sw] = spec.stride;
    let [pt, ph, pw] = spec.padding;
    let cout = spec.out_channels;
    let cpg_in = cin / spec.groups;
    let cpg_out = cout / spec.groups;
    let [to, ho, wo] = spec.out_dims([ti, hi, wi]).unwrap();
    let at = |v: &Tensor<f64>, idx: [usize; 5]| {
        let s = v.shape();
        v.data()[(((idx[0] * s[1] + idx[1]) * s[2] + idx[2]) * s[3] + idx[3]) * s[4] + idx[4]]
    };
    let mut out = vec![0.0; n * cout * to * ho * wo];
    let mut o = 0;
    for bn in 0..n {
        for co in 0..cout {
            let grp = co / cpg_out;
            for ot in 0..to {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = b.map_or(0.0, |b| b.data()[co]);
                        for ci in 0..cpg_in {
                            for a in 0..kt {
                                for c in 0..kh {
                                    for d in 0..kw {
                                        let it = (ot * st + a) as isize - pt as isize;
                                        let ih = (oh * sh + c) as isize - ph as isize;
                                        let iw = (ow * sw + d) as isize - pw as isize;
                                        if it < 0 || ih < 0 || iw < 0 {
                                            continue;
                                        }
                                        let (it, ih, iw) = (it as usize, ih as usize, iw as usize);
                                        if it >= ti || ih >= hi || iw >= wi {
                                            continue;
                                        }
                                        let xv = at(x, [bn, grp * cpg_in + ci, it, ih, iw]);
                                        acc += xv * at(w, [co, ci, a, c, d]);
                                    }
                                }
                            }
                        }
                        out[o] = acc;
                        o += 1;
                    }
                }
            }
        }
    }
    Tensor::new([n, cout, to, ho, wo], out).unwrap()
}

fn run_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, spec: &ConvSpec) -> Tensor<f64> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.constant(w.clone());
    let bv = b.map(|b| g.constant(b.clone()));
    let y = conv_forward(&mut g, xv, spec, wv, bv).unwrap();
    g.value(y).clone()
}

fn random_spec(rng: &mut Rng) -> ConvSpec {
    let groups = [1, 2, 4][rng.below(3)];
    let cin = groups * (1 + rng.below(2));
    let cout = groups * (1 + rng.below(2));
    let kernel = [1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(3)];
    let spec = ConvSpec {
        stride: [1 + rng.below(2), 1 + rng.below(2), 1 + rng.below(2)],
        padding: [rng.below(2), rng.below(2), rng.below(2)],
        groups,
        ..ConvSpec::new(cin, cout, kernel)
    };
    spec
}

#[test]
fn conv_matches_naive_loop_oracle() {
    let mut rng = Rng::seed(11);
    for _ in 0..40 {
        let spec = random_spec(&mut rng);
        let n = 1 + rng.below(2);
        let dims = [1 + rng.below(2), 3 + rng.below(4), 3 + rng.below(4)];
        if spec.out_dims(dims).is_none() {
            continue;
        }
        let x = Tensor::uniform([n, spec.in_channels, dims[0], dims[1], dims[2]], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
        let b = Tensor::uniform([spec.out_channels], -1.0, 1.0, &mut rng);
        let got = run_conv(&x, &w, Some(&b), &spec);
        let want = naive_conv(&x, &w, Some(&b), &spec);
        assert_eq!(got.shape(), want.shape(), "{spec:?}");
        assert!(got.max_abs_diff(&want) < 1e-10, "{spec:?}: {}", got.max_abs_diff(&want));
    }
}

#[test]
fn conv_largest_shape_matches_oracle() {
    let mut rng = Rng::seed(3);
    let spec = ConvSpec::new(4, 4, [1, 3, 3]).with_padding([0, 1, 1]);
    let x = Tensor::uniform([2, 4, 2, 6, 6], -1.0, 1.0, &mut rng);
    let w = Tensor::uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
    let got = run_conv(&x, &w, None, &spec);
    assert!(got.max_abs_diff(&naive_conv(&x, &w, None, &spec)) < 1e-10);
}

#[test]
fn identity_depthwise_kernel_is_identity() {
    let mut rng = Rng::seed(1);
    let spec = ConvSpec::depthwise_same(3, [1, 1, 1]).unwrap().without_bias();
    let x = Tensor::uniform([2, 3, 2, 4, 5], -1.0, 1.0, &mut rng);
    let y = run_conv(&x, &Tensor::ones(spec.weight_shape()), None, &spec);
    assert_eq!(y, x);
}

#[test]
fn ones_kernel_counts_overlap_with_padding() {
    let spec = ConvSpec::depthwise_same(1, [1, 3, 3]).unwrap().without_bias();
    let y = run_conv(&Tensor::ones([1, 1, 1, 4, 4]), &Tensor::ones(spec.weight_shape()), None, &spec);
    let d = y.data();
    assert_eq!(d[5], 9.0);
    assert_eq!(d[6], 9.0);
    assert_eq!(d[0], 4.0);
    assert_eq!(d[15], 4.0);
    assert_eq!(d[1], 6.0);
}

#[test]
fn dense_conv_is_sum_of_channel_split_parts() {
    let mut rng = Rng::seed(5);
    let spec = ConvSpec::new(4, 3, [1, 3, 3]).with_padding([0, 1, 1]);
    let x = Tensor::uniform([2, 4, 1, 5, 5], -1.0, 1.0, &mut rng);
    let w = Tensor::uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
    let full = run_conv(&x, &w, None, &spec);
    let mut sum = Tensor::zeros(full.shape().to_vec());
    for half in 0..2 {
        let xs = Tensor::from_fn([2, 2, 1, 5, 5], |i| {
            let (n, r) = (i / 50, i % 50);
            x.data()[n * 100 + half * 50 + r]
        });
        let ws = Tensor::from_fn([3, 2, 1, 3, 3], |i| {
            let (o, r) = (i / 18, i % 18);
            w.data()[o * 36 + half * 18 + r]
        });
        let part = run_conv(&xs, &ws, None, &ConvSpec::new(2, 3, [1, 3, 3]).with_padding([0, 1, 1]));
        sum.add_assign(&part);
    }
    assert!(full.max_abs_diff(&sum) < 1e-12);
}

#[test]
fn depthwise_2d_equals_3d_with_unit_time_kernel() {
    let mut rng = Rng::seed(9);
    let x = Tensor::uniform([1, 3, 1, 6, 6], -1.0, 1.0, &mut rng);
    let w2 = Tensor::uniform([3, 1, 1, 3, 3], -1.0, 1.0, &mut rng);
    let spec2 = ConvSpec::depthwise_same(3, [1, 3, 3]).unwrap();
    // same taps, a 3-frame kernel that is zero off the centre frame
    let spec3 = ConvSpec::depthwise_same(3, [3, 3, 3]).unwrap();
    let w3 = Tensor::from_fn([3, 1, 3, 3, 3], |i| {
        let (c, f, r) = (i / 27, (i / 9) % 3, i % 9);
        if f == 1 {
            w2.data()[c * 9 + r]
        } else {
            0.0
        }
    });
    let a = run_conv(&x, &w2, None, &spec2);
    let b = run_conv(&x, &w3, None, &spec3);
    assert_eq!(a, b);
    assert_eq!(naive_conv(&x, &w2, None, &spec2), a);
}

#[test]
fn conv_rejects_bad_channels_and_groups() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros([1, 3, 1, 4, 4]));
    let spec = ConvSpec::pointwise(4, 4);
    let w = g.constant(Tensor::zeros(spec.weight_shape()));
    assert!(conv_forward(&mut g, x, &spec, w, None).is_err());

    let bad = ConvSpec {
        groups: 2,
        ..ConvSpec::pointwise(3, 4)
    };
    assert!(bad.validate().is_err());
    let w = g.constant(Tensor::zeros([4, 1, 1, 1, 1]));
    assert!(g.conv(x, w, None, ConvParams { groups: 2, ..Default::default() }).is_err());
    assert!(ConvSpec::depthwise_same(3, [1, 2, 3]).is_err());
}

#[test]
fn conv_output_extent_formula() {
    let spec = ConvSpec::new(3, 8, [1, 4, 4]).with_stride([1, 4, 4]);
    assert_eq!(spec.out_dims([1, 224, 224]), Some([1, 56, 56]));
    let spec = ConvSpec::new(3, 8, [3, 3, 3]).with_stride([2, 2, 2]).with_padding([1, 1, 1]);
    assert_eq!(spec.out_dims([16, 7, 8]), Some([8, 4, 4]));
    assert_eq!(ConvSpec::new(1, 1, [1, 5, 5]).out_dims([1, 4, 9]), None);
}

fn norm_forward(spec: NormSpec, x: &Tensor<f64>, mode: Mode, gamma: f64, beta: f64) -> (Tensor<f64>, Ctx<'static, f64>) {
    let mut params = ParamStore::new();
    let mut buffers = ParamStore::new();
    spec.init("n", &mut params, &mut buffers).unwrap();
    params.set("n.weight", Tensor::full([spec.num_features], gamma));
    params.set("n.bias", Tensor::full([spec.num_features], beta));
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let mut ctx = Ctx::bind(&mut g, &params, mode, Rng::seed(0));
    let y = spec.forward(&mut g, &mut ctx, "n", xv).unwrap();
    (g.value(y).clone(), ctx)
}

#[test]
fn batchnorm_eval_with_initial_stats_is_identity() {
    let mut rng = Rng::seed(2);
    let x = Tensor::uniform([2, 3, 1, 2, 2], -2.0, 2.0, &mut rng);
    let (y, _) = norm_forward(NormSpec::batch(3), &x, Mode::Eval, 1.0, 0.0);
    let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!(y.max_abs_diff(&x.map(|v| v * scale)) < 1e-15);
    assert!(y.max_abs_diff(&x) < 1e-4);
}

#[test]
fn batchnorm_train_constant_input_gives_zero() {
    let x = Tensor::full([4, 2, 1, 3, 3], 3.7);
    let (y, _) = norm_forward(NormSpec::batch(2), &x, Mode::Train, 1.0, 0.0);
    assert!(y.data().iter().all(|v| v.abs() < 1e-6));
}

#[test]
fn batchnorm_uses_population_variance() {
    let x = Tensor::from_f64([2, 2], &[-1.0, 1.0, 1.0, -1.0]).unwrap();
    let (y, mut ctx) = norm_forward(NormSpec::batch(2), &x, Mode::Train, 1.0, 0.0);
    let s = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!(y.max_abs_diff(&x.map(|v| v * s)) < 1e-12);
    let updates = ctx.take_bn_updates();
    assert_eq!(updates.len(), 1);
    assert_eq!(updates[0].1.var, vec![1.0, 1.0]);
}

#[test]
fn batchnorm_running_update_uses_momentum() {
    let mut buffers = ParamStore::<f64>::new();
    let mut params = ParamStore::new();
    NormSpec::batch(2).init("n", &mut params, &mut buffers).unwrap();
    uniformer::nn::norm::apply_running_update(&mut buffers, "n", &[1.0, 2.0], &[3.0, 5.0], 0.1).unwrap();
    let m = buffers.get("n.running_mean").unwrap().data();
    let v = buffers.get("n.running_var").unwrap().data();
    assert!((m[0] - 0.1).abs() < 1e-15 && (m[1] - 0.2).abs() < 1e-15);
    assert!((v[0] - 1.2).abs() < 1e-15 && (v[1] - 1.4).abs() < 1e-15);
}

#[test]
fn layernorm_examples() {
    let (y, _) = norm_forward(NormSpec::layer(4), &Tensor::full([3, 4], 2.5), Mode::Train, 1.0, 0.0);
    assert!(y.data().iter().all(|v| v.abs() < 1e-9));

    let x = Tensor::from_f64([1, 2], &[-1.0, 1.0]).unwrap();
    let (y, _) = norm_forward(NormSpec::layer(2), &x, Mode::Eval, 1.0, 0.0);
    let s = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!(y.max_abs_diff(&x.map(|v| v * s)) < 1e-12);

    let mut rng = Rng::seed(4);
    let x = Tensor::uniform([5, 3], -3.0, 3.0, &mut rng);
    let (y, _) = norm_forward(NormSpec::layer(3), &x, Mode::Eval, 0.0, 0.75);
    assert!(y.data().iter().all(|&v| v == 0.75));
}

#[test]
fn norms_reject_feature_mismatch() {
    let mut params = ParamStore::<f64>::new();
    let mut buffers = ParamStore::new();
    NormSpec::batch(3).init("b", &mut params, &mut buffers).unwrap();
    NormSpec::layer(3).init("l", &mut params, &mut buffers).unwrap();
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros([2, 4, 1, 2, 2]));
    let mut ctx = Ctx::bind(&mut g, &params, Mode::Train, Rng::seed(0));
    assert!(NormSpec::batch(3).forward(&mut g, &mut ctx, "b", x).is_err());
    assert!(NormSpec::layer(3).forward(&mut g, &mut ctx, "l", x).is_err());
}

#[test]
fn drop_path_rejects_rate_one_and_above() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::ones([2, 3]));
    let mut rng = Rng::seed(0);
    for rate in [1.0, 1.5, -0.1] {
        assert!(drop_path(&mut g, x, rate, Mode::Train, &mut rng).is_err());
    }
}

#[test]
fn drop_path_monte_carlo_survivors() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::ones([10_000, 2]));
    let mut rng = Rng::seed(42);
    let y = drop_path(&mut g, x, 0.5, Mode::Train, &mut rng).unwrap();
    let d = g.value(y).data();
    let survivors = d.chunks(2).filter(|r| r[0] != 0.0).count();
    assert!(d.iter().all(|&v| v == 0.0 || v == 2.0));
    assert!(d.chunks(2).all(|r| r[0] == r[1]));
    let frac = survivors as f64 / 10_000.0;
    assert!((frac - 0.5).abs() < 0.02, "{frac}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn batchnorm_train_output_is_standardized(seed in any::<u64>(), n in 1usize..4, c in 1usize..4, hw in 2usize..5) {
        let mut rng = Rng::seed(seed);
        let x = Tensor::uniform([n, c, 1, hw, hw], -5.0, 5.0, &mut rng);
        let (y, _) = norm_forward(NormSpec::batch(c), &x, Mode::Train, 1.0, 0.0);
        let per = hw * hw;
        for ch in 0..c {
            let vals: Vec<f64> = (0..n)
                .flat_map(|b| y.data()[(b * c + ch) * per..(b * c + ch + 1) * per].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
            prop_assert!(m.abs() < 1e-5);
            // eps shrinks the variance slightly below 1 for low-variance inputs
            prop_assert!((v - 1.0).abs() < 1e-4, "var {}", v);
        }
    }

    #[test]
    fn conv_oracle_agreement_random(seed in any::<u64>()) {
        let mut rng = Rng::seed(seed);
        let spec = random_spec(&mut rng);
        let dims = [1 + rng.below(2), 3 + rng.below(3), 3 + rng.below(3)];
        prop_assume!(spec.out_dims(dims).is_some());
        let x = Tensor::uniform([1, spec.in_channels, dims[0], dims[1], dims[2]], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
        let got = run_conv(&x, &w, None, &spec);
        prop_assert!(got.max_abs_diff(&naive_conv(&x, &w, None, &spec)) < 1e-10);
    }
}
