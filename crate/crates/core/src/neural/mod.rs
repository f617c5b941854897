//! Mask-estimation networks.
//!
//! Four architectures share the same building blocks:
//!
//! * `Vl2m` -- a deep BLSTM mapping landmark motion features to a binary
//!   mask estimate in (0, 1).
//! * `Vl2mRef` -- the VL2M component plus two encoder BLSTMs over the mask
//!   estimate and the noisy spectrogram, a linear fusion layer, and a
//!   decoder BLSTM emitting an amplitude mask in (0, clip).
//! * `AvConcat` -- one BLSTM over the concatenated features and noisy
//!   spectrogram, emitting an amplitude mask.
//! * `AvConcatRef` -- as `AvConcat` but over the concatenation of the
//!   VL2M-denoised spectrogram and the noisy spectrogram.
//!
//! The refinement models support an oracle-mask forward path for
//! pretraining and a frozen VL2M component for the second training stage.

pub mod checkpoint;
pub mod lstm;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::Grid;
use crate::scalar::Scalar;
use crate::seeds::rng_for;

use lstm::{
    scaled_sigmoid, scaled_sigmoid_backward, BlstmLayerGrads, BlstmStack, Dense, DenseCache,
    StackCache,
};

/// Cross-entropy clamp keeping the loss finite at saturated outputs.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Vl2m,
    Vl2mRef,
    AvConcat,
    AvConcatRef,
}

impl ModelKind {
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Vl2m => "vl2m",
            ModelKind::Vl2mRef => "vl2m_ref",
            ModelKind::AvConcat => "av_concat",
            ModelKind::AvConcatRef => "av_concat_ref",
        }
    }

    pub fn parse(s: &str) -> Result<ModelKind> {
        match s {
            "vl2m" => Ok(ModelKind::Vl2m),
            "vl2m_ref" => Ok(ModelKind::Vl2mRef),
            "av_concat" => Ok(ModelKind::AvConcat),
            "av_concat_ref" => Ok(ModelKind::AvConcatRef),
            other => Err(CoreError::InvalidArgument(format!(
                "unknown model kind '{other}'"
            ))),
        }
    }

    /// Refinement models train in two stages (oracle pretrain, then frozen
    /// VL2M substitution).
    pub fn is_two_stage(&self) -> bool {
        matches!(self, ModelKind::Vl2mRef | ModelKind::AvConcatRef)
    }

    pub fn uses_vl2m(&self) -> bool {
        matches!(
            self,
            ModelKind::Vl2m | ModelKind::Vl2mRef | ModelKind::AvConcatRef
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Landmark motion feature width.
    pub feat_dim: usize,
    /// Spectrogram bin count d.
    pub spec_bins: usize,
    /// BLSTM units per direction.
    pub units: usize,
    pub vl2m_layers: usize,
    pub concat_layers: usize,
    /// Layers in each of the refinement BLSTMs (mask encoder, spectrogram
    /// encoder, decoder).
    pub refine_layers: usize,
    /// Amplitude-mask head range (0, iam_clip).
    pub iam_clip: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feat_dim: 136,
            spec_bins: 257,
            units: 250,
            vl2m_layers: 5,
            concat_layers: 3,
            refine_layers: 1,
            iam_clip: 10.0,
        }
    }
}

impl ModelConfig {
    /// Fusion width z: the concatenated BLSTM output.
    pub fn fusion_dim(&self) -> usize {
        2 * self.units
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Vl2mNet<T> {
    stack: BlstmStack<T>,
    head: Dense<T>,
}

#[derive(Debug, Clone, PartialEq)]
struct RefineNet<T> {
    mask_enc: BlstmStack<T>,
    spec_enc: BlstmStack<T>,
    w_hm: Grid<T>,
    w_hy: Grid<T>,
    b_h: Grid<T>,
    decoder: BlstmStack<T>,
    head: Dense<T>,
}

#[derive(Debug, Clone, PartialEq)]
struct ConcatNet<T> {
    stack: BlstmStack<T>,
    head: Dense<T>,
}

/// One of the four mask-estimation architectures.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph<T> {
    kind: ModelKind,
    config: ModelConfig,
    vl2m: Option<Vl2mNet<T>>,
    refine: Option<RefineNet<T>>,
    concat: Option<ConcatNet<T>>,
    vl2m_frozen: bool,
}

impl<T: Scalar> ModelGraph<T> {
    /// Builds the architecture with deterministic seeded initialization:
    /// orthogonal recurrent blocks, scaled-uniform input matrices,
    /// forget-gate bias 1, zero other biases.
    pub fn new(kind: ModelKind, config: ModelConfig, seed: u64) -> Self {
        let z = config.fusion_dim();
        let vl2m = kind.uses_vl2m().then(|| Vl2mNet {
            stack: BlstmStack::zeros(config.feat_dim, config.units, config.vl2m_layers),
            head: Dense::zeros(z, config.spec_bins),
        });
        let refine = (kind == ModelKind::Vl2mRef).then(|| RefineNet {
            mask_enc: BlstmStack::zeros(config.spec_bins, config.units, config.refine_layers),
            spec_enc: BlstmStack::zeros(config.spec_bins, config.units, config.refine_layers),
            w_hm: Grid::from_elem(z, z, T::zero()),
            w_hy: Grid::from_elem(z, z, T::zero()),
            b_h: Grid::from_elem(1, z, T::zero()),
            decoder: BlstmStack::zeros(z, config.units, config.refine_layers),
            head: Dense::zeros(z, config.spec_bins),
        });
        let concat = match kind {
            ModelKind::AvConcat => Some(ConcatNet {
                stack: BlstmStack::zeros(
                    config.feat_dim + config.spec_bins,
                    config.units,
                    config.concat_layers,
                ),
                head: Dense::zeros(z, config.spec_bins),
            }),
            ModelKind::AvConcatRef => Some(ConcatNet {
                stack: BlstmStack::zeros(2 * config.spec_bins, config.units, config.concat_layers),
                head: Dense::zeros(z, config.spec_bins),
            }),
            _ => None,
        };

        let mut graph = ModelGraph {
            kind,
            config,
            vl2m,
            refine,
            concat,
            vl2m_frozen: false,
        };
        graph.init_params(seed);
        graph
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vl2m_frozen(&self) -> bool {
        self.vl2m_frozen
    }

    pub fn set_vl2m_frozen(&mut self, frozen: bool) {
        self.vl2m_frozen = frozen;
    }

    /// Output-head scale: 1 for the binary-mask head, iam_clip otherwise.
    pub fn mask_scale(&self) -> T {
        match self.kind {
            ModelKind::Vl2m => T::one(),
            _ => T::from_f64_lossy(self.config.iam_clip),
        }
    }

    // -- parameter registry --------------------------------------------------

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let push_stack = |names: &mut Vec<String>, prefix: &str, n: usize| {
            for l in 0..n {
                for dir in ["fwd", "bwd"] {
                    for tensor in ["w", "u", "b"] {
                        names.push(format!("{prefix}.blstm{l}.{dir}.{tensor}"));
                    }
                }
            }
        };
        if let Some(v) = &self.vl2m {
            push_stack(&mut names, "vl2m", v.stack.layers.len());
            names.push("vl2m.head.w".into());
            names.push("vl2m.head.b".into());
        }
        if let Some(r) = &self.refine {
            push_stack(&mut names, "mask_enc", r.mask_enc.layers.len());
            push_stack(&mut names, "spec_enc", r.spec_enc.layers.len());
            names.push("fusion.w_hm".into());
            names.push("fusion.w_hy".into());
            names.push("fusion.b_h".into());
            push_stack(&mut names, "decoder", r.decoder.layers.len());
            names.push("refine.head.w".into());
            names.push("refine.head.b".into());
        }
        if let Some(c) = &self.concat {
            push_stack(&mut names, "concat", c.stack.layers.len());
            names.push("concat.head.w".into());
            names.push("concat.head.b".into());
        }
        names
    }

    pub fn params(&self) -> Vec<&Grid<T>> {
        let mut out = Vec::new();
        fn stack_params<'a, T: Scalar>(stack: &'a BlstmStack<T>, out: &mut Vec<&'a Grid<T>>) {
            for layer in &stack.layers {
                out.push(&layer.fwd.w);
                out.push(&layer.fwd.u);
                out.push(&layer.fwd.b);
                out.push(&layer.bwd.w);
                out.push(&layer.bwd.u);
                out.push(&layer.bwd.b);
            }
        }
        if let Some(v) = &self.vl2m {
            stack_params(&v.stack, &mut out);
            out.push(&v.head.w);
            out.push(&v.head.b);
        }
        if let Some(r) = &self.refine {
            stack_params(&r.mask_enc, &mut out);
            stack_params(&r.spec_enc, &mut out);
            out.push(&r.w_hm);
            out.push(&r.w_hy);
            out.push(&r.b_h);
            stack_params(&r.decoder, &mut out);
            out.push(&r.head.w);
            out.push(&r.head.b);
        }
        if let Some(c) = &self.concat {
            stack_params(&c.stack, &mut out);
            out.push(&c.head.w);
            out.push(&c.head.b);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Grid<T>> {
        let mut out = Vec::new();
        fn stack_params_mut<'a, T: Scalar>(
            stack: &'a mut BlstmStack<T>,
            out: &mut Vec<&'a mut Grid<T>>,
        ) {
            for layer in stack.layers.iter_mut() {
                out.push(&mut layer.fwd.w);
                out.push(&mut layer.fwd.u);
                out.push(&mut layer.fwd.b);
                out.push(&mut layer.bwd.w);
                out.push(&mut layer.bwd.u);
                out.push(&mut layer.bwd.b);
            }
        }
        if let Some(v) = &mut self.vl2m {
            stack_params_mut(&mut v.stack, &mut out);
            out.push(&mut v.head.w);
            out.push(&mut v.head.b);
        }
        if let Some(r) = &mut self.refine {
            stack_params_mut(&mut r.mask_enc, &mut out);
            stack_params_mut(&mut r.spec_enc, &mut out);
            out.push(&mut r.w_hm);
            out.push(&mut r.w_hy);
            out.push(&mut r.b_h);
            stack_params_mut(&mut r.decoder, &mut out);
            out.push(&mut r.head.w);
            out.push(&mut r.head.b);
        }
        if let Some(c) = &mut self.concat {
            stack_params_mut(&mut c.stack, &mut out);
            out.push(&mut c.head.w);
            out.push(&mut c.head.b);
        }
        out
    }

    /// Per-tensor trainability, aligned with [`Self::params`]. VL2M tensors
    /// report false while the component is frozen.
    pub fn trainable(&self) -> Vec<bool> {
        self.param_names()
            .iter()
            .map(|n| !(self.vl2m_frozen && n.starts_with("vl2m.")))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn init_params(&mut self, seed: u64) {
        let units = self.config.units;
        let names = self.param_names();
        for (name, grid) in names.iter().zip(self.params_mut()) {
            let mut rng = rng_for(seed, name);
            if name.contains(".blstm") {
                if name.ends_with(".w") {
                    let limit = (6.0 / (grid.cols() + units) as f64).sqrt();
                    uniform_fill(grid, &mut rng, limit);
                } else if name.ends_with(".u") {
                    orthogonal_gate_blocks(grid, units, &mut rng);
                } else {
                    // Zero biases with forget gate at 1.
                    for v in grid.as_mut_slice() {
                        *v = T::zero();
                    }
                    for k in units..2 * units {
                        grid.as_mut_slice()[k] = T::one();
                    }
                }
            } else if name.ends_with(".w") || name.starts_with("fusion.w") {
                let limit = (6.0 / (grid.cols() + grid.rows()) as f64).sqrt();
                uniform_fill(grid, &mut rng, limit);
            } else {
                for v in grid.as_mut_slice() {
                    *v = T::zero();
                }
            }
        }
    }

    // -- forward passes ------------------------------------------------------

    fn check_features(&self, v: &Grid<T>) -> Result<()> {
        if v.cols() != self.config.feat_dim {
            return Err(CoreError::dims("feature dim", v.cols(), self.config.feat_dim));
        }
        Ok(())
    }

    fn check_spec(&self, y: &Grid<T>) -> Result<()> {
        if y.cols() != self.config.spec_bins {
            return Err(CoreError::dims("spec bins", y.cols(), self.config.spec_bins));
        }
        Ok(())
    }

    /// Mask estimate in (0, 1) from landmark motion features.
    pub fn forward_vl2m(&self, v: &Grid<T>) -> Result<(Grid<T>, Vl2mCache<T>)> {
        self.check_features(v)?;
        let net = self
            .vl2m
            .as_ref()
            .ok_or_else(|| CoreError::InvalidArgument("model has no vl2m component".into()))?;
        let (stack_out, stack) = net.stack.forward(v);
        let (pre, head) = net.head.forward(&stack_out);
        let m_hat = scaled_sigmoid(&pre, T::one());
        Ok((
            m_hat.clone(),
            Vl2mCache {
                stack,
                head,
                m_hat,
            },
        ))
    }

    fn refine_tail(
        &self,
        mask_input: Grid<T>,
        y: &Grid<T>,
        vl2m: Option<Vl2mCache<T>>,
    ) -> Result<(Grid<T>, RefineCache<T>)> {
        self.check_spec(y)?;
        mask_input.check_same_shape(y, "refine mask/spec")?;
        let net = self
            .refine
            .as_ref()
            .ok_or_else(|| CoreError::InvalidArgument("model has no refine component".into()))?;

        let (r_m, mask_enc) = net.mask_enc.forward(&mask_input);
        let (r_y, spec_enc) = net.spec_enc.forward(y);

        // h_t = W_hm r_m + W_hy r_y + b_h
        let z = self.config.fusion_dim();
        let mut fused = Grid::from_elem(y.rows(), z, T::zero());
        for t in 0..y.rows() {
            let row = fused.row_mut(t);
            row.copy_from_slice(net.b_h.row(0));
            for (r, out) in row.iter_mut().enumerate() {
                let wm = net.w_hm.row(r);
                let wy = net.w_hy.row(r);
                let mut acc = T::zero();
                for k in 0..z {
                    acc += wm[k] * r_m.at(t, k) + wy[k] * r_y.at(t, k);
                }
                *out += acc;
            }
        }

        let (dec_out, decoder) = net.decoder.forward(&fused);
        let (pre, head) = net.head.forward(&dec_out);
        let p_hat = scaled_sigmoid(&pre, T::from_f64_lossy(self.config.iam_clip));
        Ok((
            p_hat.clone(),
            RefineCache {
                vl2m,
                mask_enc,
                spec_enc,
                r_m,
                r_y,
                decoder,
                head,
                p_hat,
            },
        ))
    }

    /// Amplitude-mask estimate from features and the normalized noisy
    /// spectrogram, running the internal VL2M component.
    pub fn forward_vl2m_ref(&self, v: &Grid<T>, y: &Grid<T>) -> Result<(Grid<T>, RefineCache<T>)> {
        let (m_hat, vcache) = self.forward_vl2m(v)?;
        self.refine_tail(m_hat, y, Some(vcache))
    }

    /// Oracle-pretrain path: the externally supplied mask replaces the VL2M
    /// output.
    pub fn forward_vl2m_ref_from_mask(
        &self,
        mask: &Grid<T>,
        y: &Grid<T>,
    ) -> Result<(Grid<T>, RefineCache<T>)> {
        self.refine_tail(mask.clone(), y, None)
    }

    fn concat_tail(
        &self,
        left: &Grid<T>,
        y: &Grid<T>,
        vl2m: Option<Vl2mCache<T>>,
        y_for_mask_grad: Option<Grid<T>>,
    ) -> Result<(Grid<T>, ConcatCache<T>)> {
        let net = self
            .concat
            .as_ref()
            .ok_or_else(|| CoreError::InvalidArgument("model has no concat component".into()))?;
        if left.rows() != y.rows() {
            return Err(CoreError::dims("concat frames", left.rows(), y.rows()));
        }
        let mut input = Grid::from_elem(y.rows(), left.cols() + y.cols(), T::zero());
        for t in 0..y.rows() {
            let row = input.row_mut(t);
            row[..left.cols()].copy_from_slice(left.row(t));
            row[left.cols()..].copy_from_slice(y.row(t));
        }
        if input.cols() != net.stack.input_dim() {
            return Err(CoreError::dims(
                "concat input dim",
                input.cols(),
                net.stack.input_dim(),
            ));
        }
        let (stack_out, stack) = net.stack.forward(&input);
        let (pre, head) = net.head.forward(&stack_out);
        let p_hat = scaled_sigmoid(&pre, T::from_f64_lossy(self.config.iam_clip));
        Ok((
            p_hat.clone(),
            ConcatCache {
                vl2m,
                y_for_mask_grad,
                stack,
                head,
                p_hat,
            },
        ))
    }

    /// Early-fusion model: amplitude mask from concatenated [v, y].
    pub fn forward_av_concat(&self, v: &Grid<T>, y: &Grid<T>) -> Result<(Grid<T>, ConcatCache<T>)> {
        self.check_features(v)?;
        self.check_spec(y)?;
        self.concat_tail(v, y, None, None)
    }

    /// Refined early fusion: the concatenation input is [m_hat * y, y] with
    /// m_hat from the internal VL2M component.
    pub fn forward_av_concat_ref(
        &self,
        v: &Grid<T>,
        y: &Grid<T>,
    ) -> Result<(Grid<T>, ConcatCache<T>)> {
        self.check_spec(y)?;
        let (m_hat, vcache) = self.forward_vl2m(v)?;
        let denoised = m_hat.zip_map(y, |m, yv| m * yv);
        self.concat_tail(&denoised, y, Some(vcache), Some(y.clone()))
    }

    /// Oracle-pretrain path for the refined early-fusion model.
    pub fn forward_av_concat_ref_from_mask(
        &self,
        mask: &Grid<T>,
        y: &Grid<T>,
    ) -> Result<(Grid<T>, ConcatCache<T>)> {
        self.check_spec(y)?;
        mask.check_same_shape(y, "oracle mask/spec")?;
        let denoised = mask.zip_map(y, |m, yv| m * yv);
        self.concat_tail(&denoised, y, None, None)
    }

    /// Dispatching forward used by training and enhancement. `oracle_mask`
    /// drives the stage-1 path of the refinement models.
    pub fn forward(
        &self,
        features: &Grid<T>,
        y_norm: &Grid<T>,
        oracle_mask: Option<&Grid<T>>,
    ) -> Result<(Grid<T>, ForwardCache<T>)> {
        match (self.kind, oracle_mask) {
            (ModelKind::Vl2m, _) => {
                let (m, c) = self.forward_vl2m(features)?;
                Ok((m, ForwardCache::Vl2m(c)))
            }
            (ModelKind::Vl2mRef, Some(m)) => {
                let (p, c) = self.forward_vl2m_ref_from_mask(m, y_norm)?;
                Ok((p, ForwardCache::Refine(c)))
            }
            (ModelKind::Vl2mRef, None) => {
                let (p, c) = self.forward_vl2m_ref(features, y_norm)?;
                Ok((p, ForwardCache::Refine(c)))
            }
            (ModelKind::AvConcat, _) => {
                let (p, c) = self.forward_av_concat(features, y_norm)?;
                Ok((p, ForwardCache::Concat(c)))
            }
            (ModelKind::AvConcatRef, Some(m)) => {
                let (p, c) = self.forward_av_concat_ref_from_mask(m, y_norm)?;
                Ok((p, ForwardCache::Concat(c)))
            }
            (ModelKind::AvConcatRef, None) => {
                let (p, c) = self.forward_av_concat_ref(features, y_norm)?;
                Ok((p, ForwardCache::Concat(c)))
            }
        }
    }

    // -- backward ------------------------------------------------------------

    /// Exact gradients for every unfrozen parameter given the loss gradient
    /// on the output mask. Frozen components receive zero gradient.
    pub fn backward(&self, cache: &ForwardCache<T>, d_mask: &Grid<T>) -> Result<ModelGrads<T>> {
        let mut grads = ModelGrads::zeros_like(self);
        match cache {
            ForwardCache::Vl2m(c) => {
                self.backward_vl2m(c, d_mask, &mut grads)?;
            }
            ForwardCache::Refine(c) => {
                let net = self.refine.as_ref().expect("refine cache without net");
                let g = grads.refine.as_mut().expect("refine grads");
                let d_pre =
                    scaled_sigmoid_backward(&c.p_hat, d_mask, T::from_f64_lossy(self.config.iam_clip));
                let d_dec_out = net.head.backward(&c.head, &d_pre, &mut g.head_w, &mut g.head_b);
                let d_fused = net.decoder.backward(&c.decoder, &d_dec_out, &mut g.decoder);

                // Fusion layer backward.
                let z = self.config.fusion_dim();
                let frames = d_fused.rows();
                let mut d_r_m = Grid::from_elem(frames, z, T::zero());
                let mut d_r_y = Grid::from_elem(frames, z, T::zero());
                for t in 0..frames {
                    let df = d_fused.row(t);
                    for (r, &d) in df.iter().enumerate() {
                        for k in 0..z {
                            *g.w_hm.at_mut(r, k) += d * c.r_m.at(t, k);
                            *g.w_hy.at_mut(r, k) += d * c.r_y.at(t, k);
                            *d_r_m.at_mut(t, k) += net.w_hm.at(r, k) * d;
                            *d_r_y.at_mut(t, k) += net.w_hy.at(r, k) * d;
                        }
                        *g.b_h.at_mut(0, r) += d;
                    }
                }

                net.spec_enc.backward(&c.spec_enc, &d_r_y, &mut g.spec_enc);
                let d_mask_input = net.mask_enc.backward(&c.mask_enc, &d_r_m, &mut g.mask_enc);

                if let Some(vcache) = &c.vl2m {
                    if !self.vl2m_frozen {
                        self.backward_vl2m(vcache, &d_mask_input, &mut grads)?;
                    }
                }
            }
            ForwardCache::Concat(c) => {
                let net = self.concat.as_ref().expect("concat cache without net");
                let g = grads.concat.as_mut().expect("concat grads");
                let d_pre =
                    scaled_sigmoid_backward(&c.p_hat, d_mask, T::from_f64_lossy(self.config.iam_clip));
                let d_stack_out = net.head.backward(&c.head, &d_pre, &mut g.head_w, &mut g.head_b);
                let d_input = net.stack.backward(&c.stack, &d_stack_out, &mut g.stack);

                if let (Some(vcache), Some(y)) = (&c.vl2m, &c.y_for_mask_grad) {
                    if !self.vl2m_frozen {
                        // Input was [m_hat * y | y]; route the left block's
                        // gradient through the product into the mask.
                        let d = self.config.spec_bins;
                        let frames = d_input.rows();
                        let mut d_m_hat = Grid::from_elem(frames, d, T::zero());
                        for t in 0..frames {
                            let row = d_input.row(t);
                            for (f, out) in d_m_hat.row_mut(t).iter_mut().enumerate() {
                                *out = row[f] * y.at(t, f);
                            }
                        }
                        self.backward_vl2m(vcache, &d_m_hat, &mut grads)?;
                    }
                }
            }
        }
        grads.check_finite(self)?;
        Ok(grads)
    }

    fn backward_vl2m(
        &self,
        cache: &Vl2mCache<T>,
        d_m_hat: &Grid<T>,
        grads: &mut ModelGrads<T>,
    ) -> Result<()> {
        let net = self.vl2m.as_ref().expect("vl2m cache without net");
        let g = grads.vl2m.as_mut().expect("vl2m grads");
        let d_pre = scaled_sigmoid_backward(&cache.m_hat, d_m_hat, T::one());
        let d_stack_out = net.head.backward(&cache.head, &d_pre, &mut g.head_w, &mut g.head_b);
        net.stack.backward(&cache.stack, &d_stack_out, &mut g.stack);
        Ok(())
    }
}

fn uniform_fill<T: Scalar>(grid: &mut Grid<T>, rng: &mut impl rand::Rng, limit: f64) {
    for v in grid.as_mut_slice() {
        *v = T::from_f64_lossy((rng.random::<f64>() * 2.0 - 1.0) * limit);
    }
}

/// Fills a (4 units x units) recurrent matrix with one orthonormal block
/// per gate (Gram-Schmidt over seeded Gaussian rows).
fn orthogonal_gate_blocks<T: Scalar>(grid: &mut Grid<T>, units: usize, rng: &mut impl rand::Rng) {
    debug_assert_eq!(grid.rows(), 4 * units);
    debug_assert_eq!(grid.cols(), units);
    let mut gauss = || -> f64 {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    for gate in 0..4 {
        let mut rows: Vec<Vec<f64>> = (0..units)
            .map(|_| (0..units).map(|_| gauss()).collect())
            .collect();
        for i in 0..units {
            for j in 0..i {
                let proj: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                let (before, rest) = rows.split_at_mut(i);
                for (ri, &rj) in rest[0].iter_mut().zip(&before[j]) {
                    *ri -= proj * rj;
                }
            }
            let norm: f64 = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm > 1e-9, "degenerate orthogonal init");
            for v in &mut rows[i] {
                *v /= norm;
            }
        }
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                *grid.at_mut(gate * units + i, j) = T::from_f64_lossy(v);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Forward caches and gradients
// ---------------------------------------------------------------------------

pub struct Vl2mCache<T> {
    stack: StackCache<T>,
    head: DenseCache<T>,
    pub m_hat: Grid<T>,
}

pub struct RefineCache<T> {
    vl2m: Option<Vl2mCache<T>>,
    mask_enc: StackCache<T>,
    spec_enc: StackCache<T>,
    r_m: Grid<T>,
    r_y: Grid<T>,
    decoder: StackCache<T>,
    head: DenseCache<T>,
    pub p_hat: Grid<T>,
}

pub struct ConcatCache<T> {
    vl2m: Option<Vl2mCache<T>>,
    y_for_mask_grad: Option<Grid<T>>,
    stack: StackCache<T>,
    head: DenseCache<T>,
    pub p_hat: Grid<T>,
}

pub enum ForwardCache<T> {
    Vl2m(Vl2mCache<T>),
    Refine(RefineCache<T>),
    Concat(ConcatCache<T>),
}

struct Vl2mGrads<T> {
    stack: Vec<BlstmLayerGrads<T>>,
    head_w: Grid<T>,
    head_b: Grid<T>,
}

struct RefineGrads<T> {
    mask_enc: Vec<BlstmLayerGrads<T>>,
    spec_enc: Vec<BlstmLayerGrads<T>>,
    w_hm: Grid<T>,
    w_hy: Grid<T>,
    b_h: Grid<T>,
    decoder: Vec<BlstmLayerGrads<T>>,
    head_w: Grid<T>,
    head_b: Grid<T>,
}

struct ConcatGrads<T> {
    stack: Vec<BlstmLayerGrads<T>>,
    head_w: Grid<T>,
    head_b: Grid<T>,
}

/// Gradients mirroring the graph's parameter tensors; [`Self::tensors`]
/// is aligned with [`ModelGraph::params`].
pub struct ModelGrads<T> {
    vl2m: Option<Vl2mGrads<T>>,
    refine: Option<RefineGrads<T>>,
    concat: Option<ConcatGrads<T>>,
}

impl<T: Scalar> ModelGrads<T> {
    pub fn zeros_like(graph: &ModelGraph<T>) -> Self {
        ModelGrads {
            vl2m: graph.vl2m.as_ref().map(|v| Vl2mGrads {
                stack: v.stack.grads_zeros(),
                head_w: Grid::from_elem(v.head.w.rows(), v.head.w.cols(), T::zero()),
                head_b: Grid::from_elem(1, v.head.b.cols(), T::zero()),
            }),
            refine: graph.refine.as_ref().map(|r| RefineGrads {
                mask_enc: r.mask_enc.grads_zeros(),
                spec_enc: r.spec_enc.grads_zeros(),
                w_hm: Grid::from_elem(r.w_hm.rows(), r.w_hm.cols(), T::zero()),
                w_hy: Grid::from_elem(r.w_hy.rows(), r.w_hy.cols(), T::zero()),
                b_h: Grid::from_elem(1, r.b_h.cols(), T::zero()),
                decoder: r.decoder.grads_zeros(),
                head_w: Grid::from_elem(r.head.w.rows(), r.head.w.cols(), T::zero()),
                head_b: Grid::from_elem(1, r.head.b.cols(), T::zero()),
            }),
            concat: graph.concat.as_ref().map(|c| ConcatGrads {
                stack: c.stack.grads_zeros(),
                head_w: Grid::from_elem(c.head.w.rows(), c.head.w.cols(), T::zero()),
                head_b: Grid::from_elem(1, c.head.b.cols(), T::zero()),
            }),
        }
    }

    /// Tensor views in the canonical parameter order.
    pub fn tensors(&self) -> Vec<&Grid<T>> {
        let mut out = Vec::new();
        fn stack_tensors<'a, T>(layers: &'a [BlstmLayerGrads<T>], out: &mut Vec<&'a Grid<T>>) {
            for l in layers {
                out.push(&l.fwd.w);
                out.push(&l.fwd.u);
                out.push(&l.fwd.b);
                out.push(&l.bwd.w);
                out.push(&l.bwd.u);
                out.push(&l.bwd.b);
            }
        }
        if let Some(v) = &self.vl2m {
            stack_tensors(&v.stack, &mut out);
            out.push(&v.head_w);
            out.push(&v.head_b);
        }
        if let Some(r) = &self.refine {
            stack_tensors(&r.mask_enc, &mut out);
            stack_tensors(&r.spec_enc, &mut out);
            out.push(&r.w_hm);
            out.push(&r.w_hy);
            out.push(&r.b_h);
            stack_tensors(&r.decoder, &mut out);
            out.push(&r.head_w);
            out.push(&r.head_b);
        }
        if let Some(c) = &self.concat {
            stack_tensors(&c.stack, &mut out);
            out.push(&c.head_w);
            out.push(&c.head_b);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Grid<T>> {
        let mut out = Vec::new();
        fn stack_tensors_mut<'a, T>(
            layers: &'a mut [BlstmLayerGrads<T>],
            out: &mut Vec<&'a mut Grid<T>>,
        ) {
            for l in layers.iter_mut() {
                out.push(&mut l.fwd.w);
                out.push(&mut l.fwd.u);
                out.push(&mut l.fwd.b);
                out.push(&mut l.bwd.w);
                out.push(&mut l.bwd.u);
                out.push(&mut l.bwd.b);
            }
        }
        if let Some(v) = &mut self.vl2m {
            stack_tensors_mut(&mut v.stack, &mut out);
            out.push(&mut v.head_w);
            out.push(&mut v.head_b);
        }
        if let Some(r) = &mut self.refine {
            stack_tensors_mut(&mut r.mask_enc, &mut out);
            stack_tensors_mut(&mut r.spec_enc, &mut out);
            out.push(&mut r.w_hm);
            out.push(&mut r.w_hy);
            out.push(&mut r.b_h);
            stack_tensors_mut(&mut r.decoder, &mut out);
            out.push(&mut r.head_w);
            out.push(&mut r.head_b);
        }
        if let Some(c) = &mut self.concat {
            stack_tensors_mut(&mut c.stack, &mut out);
            out.push(&mut c.head_w);
            out.push(&mut c.head_b);
        }
        out
    }

    /// Accumulates another gradient set (same architecture) into this one.
    pub fn accumulate(&mut self, other: &ModelGrads<T>) {
        let others = other.tensors();
        for (mine, theirs) in self.tensors_mut().into_iter().zip(others) {
            for (a, &b) in mine.as_mut_slice().iter_mut().zip(theirs.as_slice()) {
                *a += b;
            }
        }
    }

    fn check_finite(&self, graph: &ModelGraph<T>) -> Result<()> {
        let names = graph.param_names();
        for (name, tensor) in names.iter().zip(self.tensors()) {
            if tensor.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(CoreError::NanGradient(name.clone()));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// Summed binary cross-entropy against an oracle binary mask.
    Tbm,
    /// Summed squared error of the masked spectrogram against the clean
    /// target (supervises the product, not the mask).
    Iam,
}

/// J = sum(-m log m_hat - (1-m) log(1-m_hat)) with m_hat clamped to
/// [1e-7, 1-1e-7].
pub fn loss_tbm<T: Scalar>(m_hat: &Grid<T>, target: &Grid<T>) -> Result<T> {
    Ok(loss_tbm_grad(m_hat, target)?.0)
}

pub fn loss_tbm_grad<T: Scalar>(m_hat: &Grid<T>, target: &Grid<T>) -> Result<(T, Grid<T>)> {
    m_hat.check_same_shape(target, "loss_tbm dims")?;
    let lo = T::from_f64_lossy(BCE_CLAMP);
    let hi = T::one() - lo;
    let mut loss = T::zero();
    let mut grad = Grid::from_elem(m_hat.rows(), m_hat.cols(), T::zero());
    for idx in 0..m_hat.len() {
        let m = target.as_slice()[idx];
        if m != T::zero() && m != T::one() {
            return Err(CoreError::InvalidArgument(
                "tbm target must be binary".into(),
            ));
        }
        let raw = m_hat.as_slice()[idx];
        let c = raw.max(lo).min(hi);
        loss += -(m * c.ln()) - (T::one() - m) * (T::one() - c).ln();
        // Gradient is zero on clamped cells (the loss is locally constant
        // in m_hat there).
        if raw > lo && raw < hi {
            grad.as_mut_slice()[idx] = (c - m) / (c * (T::one() - c));
        }
    }
    Ok((loss, grad))
}

/// J = sum((p_hat * y - s)^2).
pub fn loss_iam<T: Scalar>(p_hat: &Grid<T>, y: &Grid<T>, s: &Grid<T>) -> Result<T> {
    Ok(loss_iam_grad(p_hat, y, s)?.0)
}

pub fn loss_iam_grad<T: Scalar>(
    p_hat: &Grid<T>,
    y: &Grid<T>,
    s: &Grid<T>,
) -> Result<(T, Grid<T>)> {
    p_hat.check_same_shape(y, "loss_iam dims")?;
    p_hat.check_same_shape(s, "loss_iam dims")?;
    let two = T::from_f64_lossy(2.0);
    let mut loss = T::zero();
    let mut grad = Grid::from_elem(p_hat.rows(), p_hat.cols(), T::zero());
    for idx in 0..p_hat.len() {
        let yv = y.as_slice()[idx];
        let diff = p_hat.as_slice()[idx] * yv - s.as_slice()[idx];
        loss += diff * diff;
        grad.as_mut_slice()[idx] = two * diff * yv;
    }
    Ok((loss, grad))
}
