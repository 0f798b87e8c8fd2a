use crate::autodiff::{ConvParams, Graph, Var};
use crate::block::{init_block, uniformer_block, BlockConfig, BlockType};
use crate::error::Result;
use crate::gradcheck::{self, weighted_sum, GradcheckReport};
use crate::hourglass::{h_block_forward, HourglassConfig, ScoreToken, ShrinkPlan};
use crate::nn::{drop_path, Ctx, Mode, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

fn rand(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, rng)
}

/// Finite-difference check of `forward` with respect to its input and every
/// entry of `params`, under a random weighted-sum loss. Parameters are bound
/// in train mode with a fixed generator, so the function is deterministic.
pub fn module_gradcheck<F>(
    name: &str,
    x: Tensor<f64>,
    params: &ParamStore<f64>,
    seed: u64,
    max_per_input: Option<usize>,
    forward: F,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &mut Ctx<f64>, Var) -> Result<Var>,
{
    let paths: Vec<String> = params.paths().map(String::from).collect();
    let mut inputs = vec![x];
    inputs.extend(params.iter().map(|(_, t)| t.clone()));
    gradcheck::check(
        name,
        &inputs,
        |g, v| {
            let vars = paths.iter().cloned().zip(v[1..].iter().copied()).collect();
            let mut ctx = Ctx::from_vars(vars, Mode::Train, Rng::seed(seed));
            let out = forward(g, &mut ctx, v[0])?;
            weighted_sum(g, out, seed)
        },
        gradcheck::STEP,
        max_per_input,
        &mut Rng::seed(seed ^ 0x5eed),
    )
}

/// Block parameters with every entry nudged off its initial value, so that
/// norm affines are not exactly 1 / 0.
fn block_params(cfgs: &[(String, BlockConfig)], rng: &mut Rng) -> Result<ParamStore<f64>> {
    let mut params = ParamStore::new();
    let mut buffers = ParamStore::new();
    for (prefix, cfg) in cfgs {
        init_block(cfg, prefix, &mut params, &mut buffers, rng)?;
    }
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v += rng.uniform_range(-0.1, 0.1);
        }
    }
    Ok(params)
}

fn op_checks(rng: &mut Rng) -> Vec<(&'static str, Vec<Tensor<f64>>, OpFn)> {
    let a = rand(&[3, 4], rng);
    let b = rand(&[3, 4], rng);
    let s = rand(&[1], rng);
    let a3 = rand(&[2, 3, 4], rng);
    let b3 = rand(&[2, 4, 5], rng);
    let c3 = rand(&[2, 1, 4], rng);
    let w = rand(&[5, 4], rng);
    let bias = rand(&[5], rng);
    let x5 = rand(&[2, 4, 3, 4, 5], rng);
    let wg = rand(&[6, 2, 3, 2, 3], rng);
    let bg = rand(&[6], rng);
    let wd = rand(&[4, 1, 1, 3, 3], rng);
    let nx = rand(&[2, 3, 1, 2, 2], rng);
    let gm = Tensor::uniform([3], 0.5, 1.5, rng);
    let bt = rand(&[3], rng);
    let tok = rand(&[5, 3], rng);
    let away = a.map(|x| x.signum() * (x.abs() + 0.5));
    vec![
        ("add", vec![a.clone(), b.clone()], Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", vec![a.clone(), b.clone()], Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", vec![a.clone(), b.clone()], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("mul_broadcast", vec![a.clone(), s], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("add_scalar", vec![a.clone()], Box::new(|g, v| Ok(g.add_scalar(v[0], 0.3)))),
        ("mul_scalar", vec![a.clone()], Box::new(|g, v| Ok(g.mul_scalar(v[0], -1.7)))),
        ("gelu", vec![a.map(|x| 3.0 * x)], Box::new(|g, v| Ok(g.gelu(v[0])))),
        ("exp", vec![a.clone()], Box::new(|g, v| Ok(g.exp(v[0])))),
        ("recip", vec![away], Box::new(|g, v| Ok(g.recip(v[0])))),
        ("sum", vec![a.clone()], Box::new(|g, v| Ok(g.sum(v[0])))),
        ("sum_axis", vec![a3.clone()], Box::new(|g, v| g.sum_axis(v[0], 1))),
        ("reshape", vec![a3.clone()], Box::new(|g, v| g.reshape(v[0], &[6, 4]))),
        ("permute", vec![a3.clone()], Box::new(|g, v| g.permute(v[0], &[2, 0, 1]))),
        ("concat", vec![a3.clone(), c3], Box::new(|g, v| g.concat(&[v[1], v[0]], 1))),
        ("slice", vec![a3.clone()], Box::new(|g, v| g.slice(v[0], 2, 1, 2))),
        ("index_select", vec![a3.clone()], Box::new(|g, v| g.index_select(v[0], 1, &[2, 0, 2]))),
        ("matmul", vec![a3.clone(), b3], Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("linear", vec![a3.clone(), w, bias], Box::new(|g, v| g.linear(v[0], v[1], Some(v[2])))),
        ("softmax", vec![a3.map(|x| 2.0 * x)], Box::new(|g, v| g.softmax(v[0]))),
        ("cross_entropy", vec![rand(&[4, 3], rng)], Box::new(|g, v| g.cross_entropy(v[0], &[0, 2, 1, 2]))),
        (
            "conv_grouped_strided",
            vec![x5.clone(), wg, bg],
            Box::new(|g, v| {
                let p = ConvParams {
                    stride: [1, 2, 1],
                    padding: [1, 1, 1],
                    groups: 2,
                };
                g.conv(v[0], v[1], Some(v[2]), p)
            }),
        ),
        (
            "conv_depthwise",
            vec![x5, wd],
            Box::new(|g, v| {
                let p = ConvParams {
                    stride: [1; 3],
                    padding: [0, 1, 1],
                    groups: 4,
                };
                g.conv(v[0], v[1], None, p)
            }),
        ),
        (
            "batch_norm_train",
            vec![nx.clone(), gm.clone(), bt.clone()],
            Box::new(|g, v| Ok(g.batch_norm(v[0], v[1], v[2], None, 1e-5)?.0)),
        ),
        (
            "batch_norm_eval",
            vec![nx.clone(), gm.clone(), bt.clone()],
            Box::new(|g, v| {
                let (m, var) = ([0.1, -0.2, 0.3], [1.2, 0.8, 0.5]);
                Ok(g.batch_norm(v[0], v[1], v[2], Some((&m, &var)), 1e-5)?.0)
            }),
        ),
        ("layer_norm", vec![tok, gm, bt], Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5))),
        (
            "drop_path_fixed_mask",
            vec![nx],
            Box::new(|g, v| drop_path(g, v[0], 0.5, Mode::Train, &mut Rng::seed(3))),
        ),
    ]
}

type OpFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

fn hourglass_check(seed: u64, rng: &mut Rng) -> Result<GradcheckReport> {
    let cfg = BlockConfig::new(BlockType::Hourglass, 8, 4);
    let hg = HourglassConfig {
        ratio: 0.5,
        shrink_first: true,
    };
    let blocks = vec![("h0".to_string(), cfg.clone()), ("h1".to_string(), cfg.clone())];
    let mut params = block_params(&blocks, rng)?;
    params.insert("score_token", Tensor::normal([8], 0.5, rng))?;
    let x = rand(&[2, 8, 1, 4, 4], rng);

    let run = |g: &mut Graph<f64>, ctx: &mut Ctx<f64>, x: Var, frozen: Option<&[Vec<ShrinkPlan>]>| -> Result<(Var, Vec<Vec<ShrinkPlan>>)> {
        let mut score = ScoreToken::new(g, ctx.param("score_token")?, 2)?;
        let mut h = x;
        let mut plans = Vec::new();
        for (i, (p, c)) in blocks.iter().enumerate() {
            let fz = frozen.map(|f| f[i].as_slice());
            let out = h_block_forward(g, ctx, p, c, &hg, h, &mut score, i == 0, fz)?;
            h = out.x;
            plans.push(out.plans);
        }
        let s = g.reshape(score.token, &[2, 8])?;
        let s = g.mul_scalar(s, 3.0);
        let hs = g.reshape(h, &[2, 8 * 16])?;
        Ok((g.concat(&[hs, s], 1)?, plans))
    };
    // Record the selection once, then hold it fixed.
    let mut g = Graph::new();
    let vars = params.paths().map(|p| (p.to_string(), g.param(params.get(p).unwrap().clone()))).collect();
    let mut ctx = Ctx::from_vars(vars, Mode::Train, Rng::seed(seed));
    let xv = g.param(x.clone());
    let (_, plans) = run(&mut g, &mut ctx, xv, None)?;

    module_gradcheck("hourglass_x2_frozen_selection", x, &params, seed, None, |g, ctx, x| {
        Ok(run(g, ctx, x, Some(&plans))?.0)
    })
}

/// Every op, each block type, a four-block LLGG stack and two chained
/// hourglass blocks with frozen selection, all in 64-bit.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradcheckReport>> {
    let mut rng = Rng::seed(seed);
    let mut out = Vec::new();
    for (name, inputs, f) in op_checks(&mut rng) {
        let s = rng.next_u64();
        out.push(gradcheck::check(
            name,
            &inputs,
            |g, v| {
                let o = f(g, v)?;
                weighted_sum(g, o, s)
            },
            gradcheck::STEP,
            None,
            &mut Rng::seed(s),
        )?);
    }

    let x = rand(&[2, 8, 1, 4, 4], &mut rng);
    let local = BlockConfig::new(BlockType::Local, 8, 4);
    let global = BlockConfig::new(BlockType::Global, 8, 4);
    let window = BlockConfig::new(BlockType::Global, 8, 4).with_window([2, 2]);
    let mut local3 = local.clone();
    local3.local_kernel = [1, 3, 3];
    for (name, cfg) in [
        ("block_local", local.clone()),
        ("block_local_3x3", local3),
        ("block_global", global.clone()),
        ("block_window", window),
    ] {
        let blocks = vec![("b".to_string(), cfg.clone())];
        let params = block_params(&blocks, &mut rng)?;
        let s = rng.next_u64();
        out.push(module_gradcheck(name, x.clone(), &params, s, None, |g, ctx, x| {
            uniformer_block(g, ctx, "b", &cfg, x)
        })?);
    }

    let stack: Vec<(String, BlockConfig)> = [&local, &local, &global, &global]
        .iter()
        .enumerate()
        .map(|(i, c)| (format!("blocks.{i}"), (*c).clone()))
        .collect();
    let params = block_params(&stack, &mut rng)?;
    let s = rng.next_u64();
    out.push(module_gradcheck("stack_llgg", x, &params, s, Some(48), |g, ctx, x| {
        let mut h = x;
        for (p, c) in &stack {
            h = uniformer_block(g, ctx, p, c, h)?;
        }
        Ok(h)
    })?);

    let s = rng.next_u64();
    out.push(hourglass_check(s, &mut rng)?);
    Ok(out)
}
