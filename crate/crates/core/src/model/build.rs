use crate::autodiff::{BatchNormStats, Graph, Var};
use crate::block::{from_tokens, init_block, to_tokens, uniformer_block, BlockType};
use crate::error::{invalid, Result};
use crate::hourglass::{h_block_forward, ScoreToken};
use crate::model::ModelConfig;
use crate::nn::{Ctx, LinearSpec, Mode, NormSpec, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// A built backbone: configuration, learnable parameters and BN running
/// statistics.
#[derive(Clone, Debug)]
pub struct Model<S: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<S>,
    pub buffers: ParamStore<S>,
}

pub struct ModelOutput {
    pub logits: Var,
    /// Score-token classifier output when the model has an aux head.
    pub aux_logits: Option<Var>,
}

/// Construct every parameter of `config`, deterministically from `rng`.
pub fn build_model<S: Scalar>(config: &ModelConfig, rng: &mut Rng) -> Result<Model<S>> {
    config.validate()?;
    let mut params = ParamStore::new();
    let mut buffers = ParamStore::new();
    let blocks = config.block_configs();
    for (i, stage) in config.stages.iter().enumerate() {
        let p = format!("stages.{i}");
        config.stem(i).init(&format!("{p}.stem.conv"), &mut params, rng)?;
        NormSpec::layer(stage.channels).init(&format!("{p}.stem.norm"), &mut params, &mut buffers)?;
        if stage.has(BlockType::Hourglass) {
            params.insert(format!("{p}.score_token"), Tensor::normal([stage.channels], 0.02, rng))?;
        }
        for (j, b) in blocks[i].iter().enumerate() {
            init_block(b, &format!("{p}.blocks.{j}"), &mut params, &mut buffers, rng)?;
        }
    }
    let c = config.stages[3].channels;
    NormSpec::batch(c).init("norm", &mut params, &mut buffers)?;
    LinearSpec::new(c, config.num_classes).init("head", &mut params, rng, true)?;
    if config.aux_head {
        let last = config.last_hourglass_stage().expect("validated");
        LinearSpec::new(config.stages[last].channels, config.num_classes).init("aux_head", &mut params, rng, true)?;
    }
    Ok(Model {
        config: config.clone(),
        params,
        buffers,
    })
}

impl<S: Scalar> Model<S> {
    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Bind the parameters on `g` with the running statistics attached.
    pub fn bind<'a>(&'a self, g: &mut Graph<S>, mode: Mode, rng: Rng) -> Ctx<'a, S> {
        Ctx::bind(g, &self.params, mode, rng).with_buffers(&self.buffers)
    }

    /// Logits `[N, classes]` for an `N×C×T×H×W` input. Train mode collects BN
    /// statistics in `ctx`; see [`Model::apply_bn_updates`].
    pub fn forward(&self, g: &mut Graph<S>, ctx: &mut Ctx<S>, x: Var) -> Result<ModelOutput> {
        let cfg = &self.config;
        let s = g.shape(x).to_vec();
        if s.len() != 5 || s[1] != cfg.input.channels {
            return Err(invalid(
                "model",
                format!("expected N×{}×T×H×W input, got {s:?}", cfg.input.channels),
            ));
        }
        let n = s[0];
        let blocks = cfg.block_configs();
        let hg = cfg.hourglass();
        let mut h = x;
        let mut score: Option<ScoreToken> = None;
        for (i, stage) in cfg.stages.iter().enumerate() {
            let p = format!("stages.{i}");
            let grid_in = [g.shape(h)[2], g.shape(h)[3], g.shape(h)[4]];
            let stem = cfg.stem(i);
            if stem.out_dims(grid_in).is_none() {
                return Err(crate::Error::Stage {
                    stage: i + 1,
                    msg: format!("resolution {grid_in:?} collapses below 1 under the stem"),
                });
            }
            h = stem.forward(g, ctx, &format!("{p}.stem.conv"), h)?;
            let (t, grid) = to_tokens(g, h)?;
            let t = NormSpec::layer(stage.channels).forward(g, ctx, &format!("{p}.stem.norm"), t)?;
            h = from_tokens(g, t, grid)?;

            let mut first_h = true;
            if stage.has(BlockType::Hourglass) {
                let param = ctx.param(&format!("{p}.score_token"))?;
                score = Some(ScoreToken::new(g, param, n)?);
            }
            for (j, b) in blocks[i].iter().enumerate() {
                let bp = format!("{p}.blocks.{j}");
                if b.block_type == BlockType::Hourglass {
                    let st = score.as_mut().expect("score token created for hourglass stages");
                    h = h_block_forward(g, ctx, &bp, b, &hg, h, st, first_h, None)?.x;
                    first_h = false;
                } else {
                    h = uniformer_block(g, ctx, &bp, b, h)?;
                }
            }
        }
        let c = cfg.stages[3].channels;
        let h = NormSpec::batch(c).forward(g, ctx, "norm", h)?;
        let (t, _) = to_tokens(g, h)?;
        let pooled = g.mean_axis(t, 1)?;
        let logits = LinearSpec::new(c, cfg.num_classes).forward(g, ctx, "head", pooled)?;
        let aux_logits = match (cfg.aux_head, score) {
            (true, Some(st)) => {
                let last = cfg.last_hourglass_stage().expect("validated");
                let sc = cfg.stages[last].channels;
                let tok = g.reshape(st.token, &[n, sc])?;
                Some(LinearSpec::new(sc, cfg.num_classes).forward(g, ctx, "aux_head", tok)?)
            }
            _ => None,
        };
        Ok(ModelOutput { logits, aux_logits })
    }

    /// Eval-mode logits as a plain tensor.
    pub fn predict(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let mut ctx = self.bind(&mut g, Mode::Eval, Rng::seed(0));
        let out = self.forward(&mut g, &mut ctx, xv)?;
        Ok(g.value(out.logits).clone())
    }

    /// Fold batch statistics gathered during a training forward (see
    /// [`Ctx::take_bn_updates`]) into the running buffers.
    pub fn apply_bn_updates(&mut self, updates: Vec<(String, BatchNormStats<S>)>) -> Result<()> {
        for (prefix, stats) in updates {
            crate::nn::norm::apply_running_update(&mut self.buffers, &prefix, &stats.mean, &stats.var, 0.1)?;
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            buffers: self.buffers.cast(),
        }
    }
}
