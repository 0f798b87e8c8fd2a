use proptest::prelude::*;
use uniformer::block::reference::local_mhra_literal;
use uniformer::block::{
    attention, dpe, ffn, global_mhra, init_block, local_mhra, uniformer_block, uniformer_block_with, window_mhra,
    BlockConfig, BlockParts, BlockType,
};
use uniformer::checks::module_gradcheck;
use uniformer::gradcheck::TOLERANCE;
use uniformer::nn::conv::conv_forward;
use uniformer::nn::{Ctx, Mode, ParamStore};
use uniformer::{Graph, Rng, Tensor};

const EPS: f64 = 1e-5;

fn init(cfg: &BlockConfig, seed: u64) -> (ParamStore<f64>, ParamStore<f64>) {
    let mut params = ParamStore::new();
    let mut buffers = ParamStore::new();
    init_block(cfg, "b", &mut params, &mut buffers, &mut Rng::seed(seed)).unwrap();
    (params, buffers)
}

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut Rng::seed(seed))
}

fn zero_all(params: &mut ParamStore<f64>) {
    for (_, t) in params.iter_mut() {
        *t = Tensor::zeros(t.shape().to_vec());
    }
}

/// Flat index into `N×C×T×H×W`.
fn at(shape: &[usize], n: usize, c: usize, t: usize, h: usize, w: usize) -> usize {
    (((n * shape[1] + c) * shape[2] + t) * shape[3] + h) * shape[4] + w
}

/// `y[c] = Σ_k W[c,k]·x[k] + b[c]` at every position of a map.
fn pointwise(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape().to_vec();
    let c = s[1];
    let sp = s[2] * s[3] * s[4];
    Tensor::from_fn(s.clone(), |i| {
        let (n, o, p) = (i / (c * sp), (i / sp) % c, i % sp);
        b.data()[o] + (0..c).map(|k| w.data()[o * c + k] * x.data()[(n * c + k) * sp + p]).sum::<f64>()
    })
}

#[test]
fn dpe_with_zero_weights_is_identity() {
    let cfg = BlockConfig::new(BlockType::Local, 4, 4);
    let (mut params, _) = init(&cfg, 1);
    zero_all(&mut params);
    let x = rand(&[2, 4, 1, 5, 5], 2);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let ctx = Ctx::bind(&mut g, &params, Mode::Eval, Rng::seed(0));
    let y = dpe(&mut g, &ctx, "b", &cfg, xv).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn dpe_on_constant_input() {
    let cfg = BlockConfig::new(BlockType::Local, 2, 2);
    let (mut params, _) = init(&cfg, 3);
    params.set("b.dpe.bias", Tensor::zeros([2]));
    let w = params.get("b.dpe.weight").unwrap().clone();
    let c = 1.5;
    let x = Tensor::full([1, 2, 1, 5, 5], c);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let ctx = Ctx::bind(&mut g, &params, Mode::Eval, Rng::seed(0));
    let y = dpe(&mut g, &ctx, "b", &cfg, xv).unwrap();
    let y = g.value(y);
    let s = y.shape().to_vec();
    for ch in 0..2 {
        let wsum: f64 = w.data()[ch * 9..ch * 9 + 9].iter().sum();
        let want = c * (1.0 + wsum);
        assert!((y.data()[at(&s, 0, ch, 0, 2, 2)] - want).abs() < 1e-12);
        assert!((y.data()[at(&s, 0, ch, 0, 1, 3)] - want).abs() < 1e-12);
        // corner sees only the lower-right 2×2 of the kernel
        let k = &w.data()[ch * 9..ch * 9 + 9];
        let corner = c * (1.0 + k[4] + k[5] + k[7] + k[8]);
        assert!((y.data()[at(&s, 0, ch, 0, 0, 0)] - corner).abs() < 1e-12);
    }
}

#[test]
fn dpe_minus_input_is_the_conv() {
    let cfg = BlockConfig::new(BlockType::Local, 3, 3);
    let (params, _) = init(&cfg, 4);
    let x = rand(&[2, 3, 1, 4, 6], 5);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let ctx = Ctx::bind(&mut g, &params, Mode::Eval, Rng::seed(0));
    let y = dpe(&mut g, &ctx, "b", &cfg, xv).unwrap();
    let w = ctx.param("b.dpe.weight").unwrap();
    let b = ctx.param("b.dpe.bias").unwrap();
    let conv = conv_forward(&mut g, xv, &cfg.dpe_spec().unwrap(), w, Some(b)).unwrap();
    let diff = Tensor::from_fn(x.shape().to_vec(), |i| g.value(y).data()[i] - x.data()[i]);
    assert!(diff.max_abs_diff(g.value(conv)) < 1e-15);
}

#[test]
fn dpe_rejects_even_kernel() {
    let mut cfg = BlockConfig::new(BlockType::Local, 2, 2);
    cfg.dpe_kernel = [1, 2, 3];
    assert!(cfg.validate().is_err());
    assert!(cfg.dpe_spec().is_err());
}

fn run_local(cfg: &BlockConfig, params: &ParamStore<f64>, buffers: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let mut ctx = Ctx::bind(&mut g, params, Mode::Eval, Rng::seed(0)).with_buffers(buffers);
    let y = local_mhra(&mut g, &mut ctx, "b.mhra", cfg, xv).unwrap();
    g.value(y).clone()
}

#[test]
fn local_zero_affinity_leaves_second_pointwise_bias() {
    let cfg = BlockConfig::new(BlockType::Local, 4, 4);
    let (mut params, buffers) = init(&cfg, 6);
    params.set("b.mhra.affinity", Tensor::zeros([4, 1, 5, 5]));
    let y = run_local(&cfg, &params, &buffers, &rand(&[2, 4, 1, 6, 6], 7));
    let bias = params.get("b.mhra.pw2.bias").unwrap();
    let sp = 36;
    for (i, v) in y.data().iter().enumerate() {
        assert!((v - bias.data()[(i / sp) % 4]).abs() < 1e-15);
    }
}

#[test]
fn local_unit_kernel_is_two_pointwise_convs() {
    let mut cfg = BlockConfig::new(BlockType::Local, 4, 4);
    cfg.local_kernel = [1, 1, 1];
    let (mut params, buffers) = init(&cfg, 8);
    params.set("b.mhra.affinity", Tensor::ones([4, 1, 1, 1]));
    let x = rand(&[1, 4, 1, 3, 5], 9);
    let y = run_local(&cfg, &params, &buffers, &x);
    let w = |n: &str| params.get(&format!("b.mhra.{n}.weight")).unwrap().reshape([4, 4]).unwrap();
    let b = |n: &str| params.get(&format!("b.mhra.{n}.bias")).unwrap().clone();
    // both BNs in eval mode with initial statistics scale by 1/√(1+eps)
    let s = 1.0 / (1.0 + EPS);
    let h = pointwise(&x, &w("pw1"), &b("pw1")).map(|v| v * s);
    let want = pointwise(&h, &w("pw2"), &b("pw2"));
    assert!(y.max_abs_diff(&want) < 1e-12);
}

#[test]
fn local_matches_literal_gather_for_all_ablation_kernels() {
    for (i, k) in [1usize, 3, 5, 7, 9].into_iter().enumerate() {
        let mut cfg = BlockConfig::new(BlockType::Local, 8, 8);
        cfg.local_kernel = [1, k, k];
        let (params, mut buffers) = init(&cfg, 10 + i as u64);
        let mut rng = Rng::seed(99);
        for (p, t) in buffers.iter_mut() {
            let (lo, hi) = if p.ends_with("var") { (0.5, 1.5) } else { (-0.3, 0.3) };
            *t = Tensor::uniform(t.shape().to_vec(), lo, hi, &mut rng);
        }
        let x = rand(&[1, 8, 1, 6, 6], 20 + i as u64);
        let y = run_local(&cfg, &params, &buffers, &x);
        let lit = local_mhra_literal(&x, &cfg, &params, &buffers, "b.mhra").unwrap();
        assert!(y.max_abs_diff(&lit) < 1e-10, "kernel {k}: {}", y.max_abs_diff(&lit));
    }
}

#[test]
fn local_shared_head_kernels_match_literal() {
    let mut cfg = BlockConfig::new(BlockType::Local, 8, 8);
    cfg.local_head_dim = 4;
    cfg.local_kernel = [3, 3, 3];
    let (params, buffers) = init(&cfg, 31);
    assert_eq!(params.get("b.mhra.affinity").unwrap().shape(), &[2, 3, 3, 3]);
    let x = rand(&[2, 8, 3, 4, 4], 32);
    let y = run_local(&cfg, &params, &buffers, &x);
    let lit = local_mhra_literal(&x, &cfg, &params, &buffers, "b.mhra").unwrap();
    assert!(y.max_abs_diff(&lit) < 1e-10);
}

#[test]
fn local_rejects_kernel_reaching_past_padding() {
    let check = |kernel: [usize; 3], shape: [usize; 5]| {
        let mut cfg = BlockConfig::new(BlockType::Local, 2, 2);
        cfg.local_kernel = kernel;
        let (params, buffers) = init(&cfg, 1);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(shape.to_vec()));
        let mut ctx = Ctx::bind(&mut g, &params, Mode::Eval, Rng::seed(0)).with_buffers(&buffers);
        local_mhra(&mut g, &mut ctx, "b.mhra", &cfg, x).is_ok()
    };
    assert!(check([3, 1, 1], [1, 2, 1, 4, 4]));
    assert!(check([5, 1, 1], [1, 2, 2, 4, 4]));
    assert!(check([1, 9, 9], [1, 2, 1, 4, 4]));
    assert!(!check([5, 1, 1], [1, 2, 1, 4, 4]));
    assert!(!check([1, 11, 1], [1, 2, 1, 4, 4]));
}

struct Global {
    cfg: BlockConfig,
    params: ParamStore<f64>,
}

impl Global {
    fn new(c: usize, head_dim: usize, seed: u64) -> Self {
        let cfg = BlockConfig::new(BlockType::Global, c, head_dim);
        let (mut params, _) = init(&cfg, seed);
        let mut rng = Rng::seed(seed + 1000);
        for (p, t) in params.iter_mut() {
            if p.contains("norm") {
                for v in t.data_mut() {
                    *v += rng.uniform_range(-0.3, 0.3);
                }
            }
        }
        Self { cfg, params }
    }

    fn run(&self, x: &Tensor<f64>) -> Tensor<f64> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let ctx = Ctx::bind(&mut g, &self.params, Mode::Eval, Rng::seed(0));
        let (y, _) = global_mhra(&mut g, &ctx, "b.norm1", "b.mhra", &self.cfg, xv, None).unwrap();
        g.value(y).clone()
    }

    fn run_window(&self, x: &Tensor<f64>, window: [usize; 2]) -> Tensor<f64> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let ctx = Ctx::bind(&mut g, &self.params, Mode::Eval, Rng::seed(0));
        let cfg = self.cfg.clone().with_window(window);
        let y = window_mhra(&mut g, &ctx, "b.norm1", "b.mhra", &cfg, xv, window).unwrap();
        g.value(y).clone()
    }

    /// Attention probabilities `[heads, L, L]` on raw tokens `[1, L, C]`.
    fn probs(&self, tokens: &Tensor<f64>) -> Tensor<f64> {
        let mut g = Graph::new();
        let t = g.constant(tokens.clone());
        let ctx = Ctx::bind(&mut g, &self.params, Mode::Eval, Rng::seed(0));
        let a = attention(&mut g, &ctx, "b.mhra", &self.cfg, t).unwrap();
        g.value(a.probs).clone()
    }

    fn linear(&self, name: &str, v: &[f64]) -> Vec<f64> {
        let w = self.params.get(&format!("b.mhra.{name}.weight")).unwrap();
        let b = self.params.get(&format!("b.mhra.{name}.bias")).unwrap();
        let c = v.len();
        (0..c)
            .map(|o| b.data()[o] + (0..c).map(|k| w.data()[o * c + k] * v[k]).sum::<f64>())
            .collect()
    }

    fn layer_norm(&self, v: &[f64]) -> Vec<f64> {
        let gm = self.params.get("b.norm1.weight").unwrap().data();
        let bt = self.params.get("b.norm1.bias").unwrap().data();
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n;
        v.iter()
            .enumerate()
            .map(|(i, a)| gm[i] * (a - m) / (var + EPS).sqrt() + bt[i])
            .collect()
    }
}

#[test]
fn single_token_attention_is_u_of_v() {
    let m = Global::new(8, 4, 40);
    let x = rand(&[1, 8, 1, 1, 1], 41);
    let y = m.run(&x);
    let want = m.linear("proj", &m.linear("v", &m.layer_norm(x.data())));
    for (a, b) in y.data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
    let p = m.probs(&rand(&[1, 1, 8], 42));
    assert!(p.data().iter().all(|&v| v == 1.0));
}

#[test]
fn global_is_permutation_equivariant() {
    let m = Global::new(8, 4, 50);
    let x = rand(&[1, 8, 1, 3, 4], 51);
    let mut perm: Vec<usize> = (0..12).collect();
    Rng::seed(52).shuffle(&mut perm);
    let permute = |t: &Tensor<f64>| Tensor::from_fn([1, 8, 1, 3, 4], |i| t.data()[(i / 12) * 12 + perm[i % 12]]);
    let y_of_px = m.run(&permute(&x));
    let p_of_y = permute(&m.run(&x));
    assert!(y_of_px.max_abs_diff(&p_of_y) < 1e-12);
}

#[test]
fn identical_tokens_attend_evenly() {
    let m = Global::new(8, 4, 60);
    let tok = rand(&[8], 61);
    let tokens = Tensor::from_fn([1, 2, 8], |i| tok.data()[i % 8]);
    let p = m.probs(&tokens);
    assert_eq!(p.shape(), &[2, 2, 2]);
    assert!(p.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
    let x = Tensor::from_fn([1, 8, 1, 1, 2], |i| tok.data()[i / 2]);
    let y = m.run(&x);
    for c in 0..8 {
        assert_eq!(y.data()[2 * c], y.data()[2 * c + 1]);
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let m = Global::new(16, 4, 70);
    let tokens = Tensor::uniform([2, 9, 16], -3.0, 3.0, &mut Rng::seed(71));
    let p = m.probs(&tokens);
    assert_eq!(p.shape(), &[8, 9, 9]);
    for row in p.data().chunks(9) {
        assert!(row.iter().all(|&v| v >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn unscaled_logits_are_an_option() {
    let mut m = Global::new(8, 4, 80);
    let tokens = rand(&[1, 5, 8], 81);
    let scaled = m.probs(&tokens);
    m.cfg.qk_scale = false;
    let raw = m.probs(&tokens);
    assert!(scaled.max_abs_diff(&raw) > 1e-6);
}

#[test]
fn unit_window_attends_to_itself() {
    let m = Global::new(8, 4, 90);
    let x = rand(&[1, 8, 1, 2, 3], 91);
    let y = m.run_window(&x, [1, 1]);
    for p in 0..6 {
        let v: Vec<f64> = (0..8).map(|c| x.data()[c * 6 + p]).collect();
        let want = m.linear("proj", &m.linear("v", &m.layer_norm(&v)));
        for c in 0..8 {
            assert!((y.data()[c * 6 + p] - want[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn windows_match_global_on_each_crop() {
    let m = Global::new(8, 4, 100);
    let x = rand(&[2, 8, 1, 4, 4], 101);
    let y = m.run_window(&x, [2, 2]);
    for (r0, c0) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
        let crop = |t: &Tensor<f64>| {
            Tensor::from_fn([2, 8, 1, 2, 2], |i| {
                let (n, c, h, w) = (i / 32, (i / 4) % 8, (i / 2) % 2, i % 2);
                t.data()[at(t.shape(), n, c, 0, r0 + h, c0 + w)]
            })
        };
        assert!(crop(&y).max_abs_diff(&m.run(&crop(&x))) < 1e-12);
    }
}

#[test]
fn ragged_windows_pad_and_crop() {
    let m = Global::new(8, 4, 105);
    let x = rand(&[1, 8, 1, 3, 5], 106);
    let y = m.run_window(&x, [2, 2]);
    assert_eq!(y.shape(), x.shape());
    assert!(y.all_finite());
    // the lone bottom-right token shares its window only with zero padding
    let tok: Vec<f64> = (0..8).map(|c| x.data()[at(x.shape(), 0, c, 0, 2, 4)]).collect();
    let alone = m.run(&Tensor::from_f64([1, 8, 1, 1, 1], &tok).unwrap());
    let got: Vec<f64> = (0..8).map(|c| y.data()[at(y.shape(), 0, c, 0, 2, 4)]).collect();
    assert!(got.iter().zip(alone.data()).any(|(a, b)| (a - b).abs() > 1e-9));
}

#[test]
fn full_extent_window_is_bit_identical_to_global() {
    let m = Global::new(8, 4, 110);
    let x = rand(&[2, 8, 2, 3, 5], 111);
    let g = m.run(&x);
    for window in [[3, 5], [14, 14]] {
        let w = m.run_window(&x, window);
        assert!(g.data().iter().zip(w.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn ffn_with_zero_second_layer_is_zero() {
    let cfg = BlockConfig::new(BlockType::Global, 4, 4);
    let (mut params, _) = init(&cfg, 120);
    params.set("b.ffn.fc2.weight", Tensor::zeros([4, 16]));
    params.set("b.ffn.fc2.bias", Tensor::zeros([4]));
    let mut g = Graph::new();
    let t = g.constant(rand(&[2, 5, 4], 121));
    let ctx = Ctx::bind(&mut g, &params, Mode::Eval, Rng::seed(0));
    let y = ffn(&mut g, &ctx, "b.ffn", &cfg, t).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn ffn_matches_hand_mlp_and_is_per_token() {
    let cfg = BlockConfig::new(BlockType::Global, 4, 4);
    let (params, _) = init(&cfg, 130);
    let x = rand(&[1, 3, 4], 131);
    let mut g = Graph::new();
    let t = g.constant(x.clone());
    let ctx = Ctx::bind(&mut g, &params, Mode::Eval, Rng::seed(0));
    let y = ffn(&mut g, &ctx, "b.ffn", &cfg, t).unwrap();
    let y = g.value(y).clone();

    let gelu = |v: f64| 0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v.powi(3))).tanh());
    let p = |n: &str| params.get(n).unwrap().data().to_vec();
    let (w1, b1, w2, b2) = (p("b.ffn.fc1.weight"), p("b.ffn.fc1.bias"), p("b.ffn.fc2.weight"), p("b.ffn.fc2.bias"));
    for tok in 0..3 {
        let v = &x.data()[tok * 4..tok * 4 + 4];
        let h: Vec<f64> = (0..16)
            .map(|j| gelu(b1[j] + (0..4).map(|k| w1[j * 4 + k] * v[k]).sum::<f64>()))
            .collect();
        for o in 0..4 {
            let want = b2[o] + (0..16).map(|j| w2[o * 16 + j] * h[j]).sum::<f64>();
            assert!((y.data()[tok * 4 + o] - want).abs() < 1e-12);
        }
    }

    let swapped = Tensor::from_fn([1, 3, 4], |i| x.data()[((2 - i / 4) * 4) + i % 4]);
    let mut g = Graph::new();
    let t = g.constant(swapped);
    let ctx = Ctx::bind(&mut g, &params, Mode::Eval, Rng::seed(0));
    let ys = ffn(&mut g, &ctx, "b.ffn", &cfg, t).unwrap();
    let ys = g.value(ys);
    for i in 0..12 {
        assert_eq!(ys.data()[i], y.data()[((2 - i / 4) * 4) + i % 4]);
    }
}

fn block_out(cfg: &BlockConfig, params: &ParamStore<f64>, buffers: &ParamStore<f64>, x: &Tensor<f64>, mode: Mode, parts: BlockParts) -> Tensor<f64> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let mut ctx = Ctx::bind(&mut g, params, mode, Rng::seed(0)).with_buffers(buffers);
    let y = uniformer_block_with(&mut g, &mut ctx, "b", cfg, xv, parts).unwrap();
    g.value(y).clone()
}

fn all_block_types() -> Vec<BlockConfig> {
    vec![
        BlockConfig::new(BlockType::Local, 8, 4),
        BlockConfig::new(BlockType::Global, 8, 4),
        BlockConfig::new(BlockType::Global, 8, 4).with_window([2, 3]),
    ]
}

#[test]
fn zero_parameters_make_the_block_an_identity() {
    let x = rand(&[2, 8, 1, 4, 5], 140);
    for cfg in all_block_types() {
        let (mut params, buffers) = init(&cfg, 141);
        zero_all(&mut params);
        for mode in [Mode::Eval, Mode::Train] {
            let y = block_out(&cfg, &params, &buffers, &x, mode, BlockParts::default());
            assert_eq!(y, x, "{:?}", cfg.block_type);
        }
    }
}

#[test]
fn eval_forward_is_deterministic_and_shape_preserving() {
    let x = rand(&[2, 8, 2, 4, 4], 150);
    for mut cfg in all_block_types() {
        cfg.drop_path_rate = 0.3;
        cfg.local_kernel = [3, 5, 5];
        cfg.dpe_kernel = [3, 3, 3];
        let (params, buffers) = init(&cfg, 151);
        let a = block_out(&cfg, &params, &buffers, &x, Mode::Eval, BlockParts::default());
        let b = block_out(&cfg, &params, &buffers, &x, Mode::Eval, BlockParts::default());
        assert_eq!(a.shape(), x.shape());
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn disabled_parts_drop_out_of_the_residual_sum() {
    let cfg = BlockConfig::new(BlockType::Global, 8, 4);
    let (params, buffers) = init(&cfg, 160);
    let x = rand(&[1, 8, 1, 3, 3], 161);
    let none = BlockParts { dpe: false, mhra: false, ffn: false };
    assert_eq!(block_out(&cfg, &params, &buffers, &x, Mode::Eval, none), x);
    let only_dpe = BlockParts { dpe: true, ..none };
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let ctx = Ctx::bind(&mut g, &params, Mode::Eval, Rng::seed(0));
    let d = dpe(&mut g, &ctx, "b", &cfg, xv).unwrap();
    assert_eq!(&block_out(&cfg, &params, &buffers, &x, Mode::Eval, only_dpe), g.value(d));
    let full = block_out(&cfg, &params, &buffers, &x, Mode::Eval, BlockParts::default());
    let no_ffn = block_out(&cfg, &params, &buffers, &x, Mode::Eval, BlockParts { ffn: false, ..Default::default() });
    assert!(full.max_abs_diff(&no_ffn) > 1e-6);
}

#[test]
fn block_rejects_wrong_channels_and_hourglass_type() {
    let cfg = BlockConfig::new(BlockType::Local, 8, 4);
    let (params, buffers) = init(&cfg, 170);
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros([1, 4, 1, 4, 4]));
    let mut ctx = Ctx::bind(&mut g, &params, Mode::Eval, Rng::seed(0)).with_buffers(&buffers);
    assert!(uniformer_block(&mut g, &mut ctx, "b", &cfg, x).is_err());
    let h = BlockConfig::new(BlockType::Hourglass, 4, 4);
    assert!(uniformer_block(&mut g, &mut ctx, "b", &h, x).is_err());
}

#[test]
fn block_config_validation() {
    assert!(BlockConfig::new(BlockType::Global, 8, 3).validate().is_err());
    let mut c = BlockConfig::new(BlockType::Local, 8, 4);
    c.local_kernel = [1, 4, 4];
    assert!(c.validate().is_err());
    let mut c = BlockConfig::new(BlockType::Window, 8, 4);
    assert!(c.validate().is_err());
    c.window = Some([7, 7]);
    assert!(c.validate().is_ok());
    let mut c = BlockConfig::new(BlockType::Global, 8, 4);
    c.window = Some([7, 7]);
    assert!(c.validate().is_err());
    let mut c = BlockConfig::new(BlockType::Global, 8, 4);
    c.drop_path_rate = 1.0;
    assert!(c.validate().is_err());
}

#[test]
fn whole_block_gradients_match_finite_differences() {
    let mut rng = Rng::seed(180);
    for cfg in [BlockConfig::new(BlockType::Local, 8, 4), BlockConfig::new(BlockType::Global, 8, 4)] {
        let (mut params, _) = init(&cfg, 181);
        for (_, t) in params.iter_mut() {
            for v in t.data_mut() {
                *v += rng.uniform_range(-0.1, 0.1);
            }
        }
        let x = Tensor::uniform([2, 8, 1, 4, 4], -1.0, 1.0, &mut rng);
        let c2 = cfg.clone();
        let report = module_gradcheck("block", x, &params, 7, Some(24), move |g, ctx, x| {
            uniformer_block(g, ctx, "b", &c2, x)
        })
        .unwrap();
        assert!(report.passed(TOLERANCE), "{:?}: {report:?}", cfg.block_type);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn every_block_preserves_shape(seed in any::<u64>(), t in 1usize..3, h in 2usize..6, w in 2usize..6, kind in 0usize..3) {
        let mut cfg = all_block_types().remove(kind);
        cfg.local_kernel = [1, 3, 3];
        let (params, buffers) = init(&cfg, seed);
        let x = rand(&[2, 8, t, h, w], seed ^ 1);
        let y = block_out(&cfg, &params, &buffers, &x, Mode::Train, BlockParts::default());
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert!(y.all_finite());
    }
}
