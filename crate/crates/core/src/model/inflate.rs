use crate::error::{invalid, Result};
use crate::model::{build_model, Model, ModelConfig};
use crate::nn::ParamStore;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Temporal kernel sizes of the inflated convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TemporalKernels {
    pub stem: usize,
    pub dpe: usize,
    pub local: usize,
}

impl Default for TemporalKernels {
    fn default() -> Self {
        Self { stem: 3, dpe: 3, local: 5 }
    }
}

/// Replicate `w` (`[.., 1, kh, kw]`) `kt` times along its temporal axis and
/// divide by `kt`, so a static clip sees the same total weight.
pub fn inflate_weight<S: Scalar>(w: &Tensor<S>, kt: usize) -> Result<Tensor<S>> {
    let s = w.shape();
    let r = s.len();
    if r < 3 || s[r - 3] != 1 || kt == 0 {
        return Err(invalid("inflate", format!("cannot inflate weight {s:?} to kt={kt}")));
    }
    let outer: usize = s[..r - 3].iter().product();
    let plane = s[r - 2] * s[r - 1];
    let scale = S::of(1.0 / kt as f64);
    let mut data = Vec::with_capacity(outer * kt * plane);
    for o in 0..outer {
        let src = &w.data()[o * plane..(o + 1) * plane];
        for _ in 0..kt {
            data.extend(src.iter().map(|&v| v * scale));
        }
    }
    let mut shape = s.to_vec();
    shape[r - 3] = kt;
    Tensor::new(shape, data)
}

/// Fill a 3-D parameter tree from a 2-D one: tensors whose shapes already
/// agree are copied verbatim, convolution weights that gained a temporal
/// extent are inflated. Any other difference is an architecture mismatch.
pub fn inflate_params<S: Scalar>(src: &ParamStore<S>, target: &ParamStore<S>) -> Result<ParamStore<S>> {
    if src.len() != target.len() {
        return Err(invalid(
            "inflate",
            format!("architectures differ: {} vs {} parameters", src.len(), target.len()),
        ));
    }
    let mut out = ParamStore::new();
    for (path, t) in target.iter() {
        let w = src
            .get(path)
            .map_err(|_| invalid("inflate", format!("`{path}` missing from the 2-D model")))?;
        let (ws, ts) = (w.shape(), t.shape());
        let value = if ws == ts {
            w.clone()
        } else {
            let r = ws.len();
            let same_rest = r == ts.len() && r >= 3 && ws[..r - 3] == ts[..r - 3] && ws[r - 2..] == ts[r - 2..];
            if !same_rest || ws[r - 3] != 1 {
                return Err(invalid("inflate", format!("`{path}`: {ws:?} cannot become {ts:?}")));
            }
            inflate_weight(w, ts[r - 3])?
        };
        out.insert(path, value)?;
    }
    Ok(out)
}

/// The video counterpart of an image model with `frames`-frame input and
/// the given temporal kernels, weights inflated from `model`.
pub fn inflate_2d_to_3d<S: Scalar>(model: &Model<S>, frames: usize, kernels: TemporalKernels) -> Result<Model<S>> {
    let src = &model.config;
    if src.is_video() {
        return Err(invalid("inflate", "source model is already a video model"));
    }
    for (name, k) in [("stem", kernels.stem), ("dpe", kernels.dpe), ("local", kernels.local)] {
        if k % 2 == 0 {
            return Err(invalid("inflate", format!("{name} temporal kernel {k} must be odd")));
        }
    }
    let mut cfg: ModelConfig = src.clone();
    cfg.input.frames = frames;
    cfg.local_kernel[0] = kernels.local;
    cfg.dpe_kernel[0] = kernels.dpe;
    cfg.stem_temporal = kernels.stem;
    let template: Model<S> = build_model(&cfg, &mut Rng::seed(0))?;
    Ok(Model {
        params: inflate_params(&model.params, &template.params)?,
        buffers: model.buffers.clone(),
        config: cfg,
    })
}
