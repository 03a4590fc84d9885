//! The multi-view model: patchify each view, embed with a shared position
//! table and shared class token, run S local blocks per view with shared
//! weights, concatenate view-major, run T mask-free global blocks, pool
//! the class-token rows, classify.
//!
//! Convention: token matrices are row-major [tokens, D] and projections
//! multiply on the right (x * W), so `embed.w0` is [C p^2, D] and
//! `head.w` is [D, K].

use serde::{Deserialize, Serialize};

use crate::attention::{block_forward, AttnMask, AttnScale, BlockWeights};
use crate::element::Element;
use crate::error::{CoreError, Result};
use crate::params::ParamStore;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// What gets pooled into the single pre-head vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    /// Mean of the L attended class-token rows.
    ClassToken,
    /// Mean of all attended patch rows, class-token rows excluded.
    AvgPool,
}

impl PoolingMode {
    pub fn name(self) -> &'static str {
        match self {
            PoolingMode::ClassToken => "class_token",
            PoolingMode::AvgPool => "avg_pool",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "class_token" => Ok(PoolingMode::ClassToken),
            "avg_pool" => Ok(PoolingMode::AvgPool),
            other => Err(CoreError::Config(format!(
                "unknown pooling mode {other:?}, expected class_token or avg_pool"
            ))),
        }
    }
}

/// Full architecture description; every count the forward pass needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MVTConfig {
    /// Views per sample (L).
    pub views: usize,
    /// View height in pixels (rows).
    pub img_h: usize,
    /// View width in pixels (columns).
    pub img_w: usize,
    pub channels: usize,
    /// Patch side length p; pixels per patch row and column.
    pub patch: usize,
    /// Token width D.
    pub dim: usize,
    /// Attention heads M; must divide `dim`.
    pub heads: usize,
    /// Local (per-view) encoder blocks S.
    pub local_blocks: usize,
    /// Global (cross-view) encoder blocks T.
    pub global_blocks: usize,
    pub classes: usize,
    /// MLP expansion ratio r.
    pub mlp_ratio: usize,
    pub attn_scale: AttnScale,
    pub pooling: PoolingMode,
    pub ln_eps: f64,
}

impl MVTConfig {
    /// Smallest config that exercises every stage; the gradient-check and
    /// equivalence suites run on it.
    pub fn micro() -> Self {
        MVTConfig {
            views: 2,
            img_h: 4,
            img_w: 4,
            channels: 1,
            patch: 2,
            dim: 8,
            heads: 2,
            local_blocks: 1,
            global_blocks: 1,
            classes: 3,
            mlp_ratio: 4,
            attn_scale: AttnScale::PerHead,
            pooling: PoolingMode::ClassToken,
            ln_eps: 1e-5,
        }
    }

    /// Six-view training config small enough to reach high accuracy on the
    /// procedural dataset in CPU minutes.
    pub fn micro_tiny() -> Self {
        MVTConfig {
            views: 6,
            img_h: 32,
            img_w: 32,
            channels: 1,
            patch: 8,
            dim: 64,
            heads: 4,
            local_blocks: 2,
            global_blocks: 1,
            classes: 6,
            mlp_ratio: 4,
            attn_scale: AttnScale::PerHead,
            pooling: PoolingMode::ClassToken,
            ln_eps: 1e-5,
        }
    }

    /// D=192, M=3, S=8, T=4 on the desk-scale view geometry.
    pub fn tiny() -> Self {
        MVTConfig {
            views: 6,
            img_h: 32,
            img_w: 32,
            channels: 1,
            patch: 8,
            dim: 192,
            heads: 3,
            local_blocks: 8,
            global_blocks: 4,
            classes: 6,
            mlp_ratio: 4,
            attn_scale: AttnScale::PerHead,
            pooling: PoolingMode::ClassToken,
            ln_eps: 1e-5,
        }
    }

    /// D=384, M=6, S=8, T=4 on the desk-scale view geometry.
    pub fn small() -> Self {
        MVTConfig {
            dim: 384,
            heads: 6,
            ..Self::tiny()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "micro" => Ok(Self::micro()),
            "micro-tiny" => Ok(Self::micro_tiny()),
            "tiny" => Ok(Self::tiny()),
            "small" => Ok(Self::small()),
            other => Err(CoreError::Config(format!(
                "unknown preset {other:?}, expected micro, micro-tiny, tiny, or small"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CoreError::Config(msg));
        if self.views == 0 {
            return fail("views must be >= 1".into());
        }
        if self.patch == 0 || self.img_h == 0 || self.img_w == 0 || self.channels == 0 {
            return fail("image geometry extents must be >= 1".into());
        }
        if !self.img_h.is_multiple_of(self.patch) || !self.img_w.is_multiple_of(self.patch) {
            return fail(format!(
                "view {}x{} not divisible by patch {}",
                self.img_h, self.img_w, self.patch
            ));
        }
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return fail(format!(
                "width {} must be a positive multiple of heads {}",
                self.dim, self.heads
            ));
        }
        if self.classes < 2 {
            return fail("need at least 2 classes".into());
        }
        if self.mlp_ratio < 2 {
            return fail("mlp_ratio must be > 1".into());
        }
        if !self.ln_eps.is_finite() || self.ln_eps <= 0.0 {
            return fail(format!("ln_eps must be positive, got {}", self.ln_eps));
        }
        Ok(())
    }

    /// Patch grid width w = W/p.
    pub fn grid_w(&self) -> usize {
        self.img_w / self.patch
    }

    /// Patch grid height h = H/p.
    pub fn grid_h(&self) -> usize {
        self.img_h / self.patch
    }

    /// Tokens per view n = w*h + 1 (class token in row 0).
    pub fn tokens_per_view(&self) -> usize {
        self.grid_w() * self.grid_h() + 1
    }

    /// Flattened patch length C*p*p.
    pub fn patch_len(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    /// Closed-form parameter count:
    /// embed (Cp^2*D + n*D + D) + (S+T) per-block (4D^2 + 2rD^2 + 9D + rD)
    /// + head (D*K + K).
    pub fn param_count(&self) -> usize {
        let d = self.dim;
        let r = self.mlp_ratio;
        let n = self.tokens_per_view();
        let embed = self.patch_len() * d + n * d + d;
        let block = 4 * d * d + 2 * r * d * d + 9 * d + r * d;
        let head = d * self.classes + self.classes;
        embed + (self.local_blocks + self.global_blocks) * block + head
    }

    /// Row indices of the attended class tokens in the concatenated matrix.
    pub fn class_token_rows(&self) -> Vec<usize> {
        let n = self.tokens_per_view();
        (0..self.views).map(|j| j * n).collect()
    }

    /// Row indices of all patch tokens (class-token rows excluded).
    pub fn patch_rows(&self) -> Vec<usize> {
        let n = self.tokens_per_view();
        let mut rows = Vec::with_capacity(self.views * (n - 1));
        for j in 0..self.views {
            for i in 1..n {
                rows.push(j * n + i);
            }
        }
        rows
    }
}

/// Fresh parameters: truncated normal (std 0.02, clipped at two sigma) for
/// weight matrices and embeddings, zeros for biases and beta, ones for
/// gamma. Draw order is fixed (embed, local blocks, global blocks, head)
/// so a seed fully determines every value.
pub fn init_params<T: Element>(config: &MVTConfig, seed: u64) -> Result<ParamStore<T>> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    config.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, 0.02).expect("valid std");
    let mut draw = move |shape: &[usize]| -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                loop {
                    let x = normal.sample(&mut rng);
                    if x.abs() <= 0.04 {
                        return T::from_f64(x);
                    }
                }
            })
            .collect();
        Tensor::new(shape.to_vec(), data).expect("shape/data agree")
    };

    let d = config.dim;
    let rd = config.mlp_ratio * d;
    let n = config.tokens_per_view();
    let mut store = ParamStore::new();
    store.insert("embed.w0", draw(&[config.patch_len(), d]))?;
    store.insert("embed.pos", draw(&[n, d]))?;
    store.insert("embed.cls", draw(&[1, d]))?;
    for (stage, count) in [("local", config.local_blocks), ("global", config.global_blocks)] {
        for i in 0..count {
            let p = format!("{stage}.{i}");
            store.insert(format!("{p}.ln1.g"), Tensor::full(&[1, d], T::one()))?;
            store.insert(format!("{p}.ln1.b"), Tensor::zeros(&[1, d]))?;
            for w in ["wq", "wk", "wv", "wo"] {
                store.insert(format!("{p}.msa.{w}"), draw(&[d, d]))?;
            }
            for b in ["bq", "bk", "bv", "bo"] {
                store.insert(format!("{p}.msa.{b}"), Tensor::zeros(&[1, d]))?;
            }
            store.insert(format!("{p}.ln2.g"), Tensor::full(&[1, d], T::one()))?;
            store.insert(format!("{p}.ln2.b"), Tensor::zeros(&[1, d]))?;
            store.insert(format!("{p}.mlp.w1"), draw(&[d, rd]))?;
            store.insert(format!("{p}.mlp.b1"), Tensor::zeros(&[1, rd]))?;
            store.insert(format!("{p}.mlp.w2"), draw(&[rd, d]))?;
            store.insert(format!("{p}.mlp.b2"), Tensor::zeros(&[1, d]))?;
        }
    }
    store.insert("head.w", draw(&[d, config.classes]))?;
    store.insert("head.b", Tensor::zeros(&[1, config.classes]))?;
    debug_assert_eq!(store.numel(), config.param_count());
    Ok(store)
}

/// Cut a view into non-overlapping p x p patches: row i holds the pixels
/// of patch i in row-major patch order, each patch unfolded in (row, col,
/// channel) order. Views are row-major [H, W, C].
pub fn patchify<T: Element>(view: &Tensor<T>, config: &MVTConfig) -> Result<Tensor<T>> {
    let expect = [config.img_h, config.img_w, config.channels];
    if view.shape() != expect {
        return Err(CoreError::Config(format!(
            "view shape {:?} does not match configured {:?}",
            view.shape(),
            expect
        )));
    }
    let (w, c, p) = (config.img_w, config.channels, config.patch);
    let (gw, gh) = (config.grid_w(), config.grid_h());
    let v = view.data();
    let mut out = Vec::with_capacity(gw * gh * config.patch_len());
    for pr in 0..gh {
        for pc in 0..gw {
            for dr in 0..p {
                for dc in 0..p {
                    for ch in 0..c {
                        out.push(v[((pr * p + dr) * w + (pc * p + dc)) * c + ch]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![gw * gh, config.patch_len()], out)
}

/// Embedding-stage parameters as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct EmbedWeights {
    /// [C p^2, D] patch projection.
    pub w0: NodeId,
    /// [n, D] position table shared by all views; row 0 is the class slot.
    pub pos: NodeId,
    /// [1, D] class token shared by all views.
    pub cls: NodeId,
}

impl EmbedWeights {
    pub fn load<T: Element>(tape: &mut Tape<T>, store: &ParamStore<T>) -> Result<Self> {
        Ok(EmbedWeights {
            w0: tape.load_param(store, "embed.w0")?,
            pos: tape.load_param(store, "embed.pos")?,
            cls: tape.load_param(store, "embed.cls")?,
        })
    }
}

/// Token matrix of one view: row 0 = cls + pos[0], row i = patch_i * w0
/// + pos[i].
pub fn embed_view<T: Element>(
    tape: &mut Tape<T>,
    patches: NodeId,
    embed: &EmbedWeights,
) -> Result<NodeId> {
    let wh = tape.value(patches).rows();
    let projected = tape.matmul(patches, embed.w0)?;
    let pos_patches = tape.slice_rows(embed.pos, 1, wh)?;
    let tokens = tape.add(projected, pos_patches)?;
    let pos_cls = tape.slice_rows(embed.pos, 0, 1)?;
    let cls_token = tape.add(embed.cls, pos_cls)?;
    tape.concat_rows(&[cls_token, tokens])
}

/// Run every view through the same S blocks, independently.
pub fn local_encode<T: Element>(
    tape: &mut Tape<T>,
    views: &[NodeId],
    blocks: &[BlockWeights],
    scale: AttnScale,
) -> Result<Vec<NodeId>> {
    let mut out = Vec::with_capacity(views.len());
    for &z in views {
        let mut cur = z;
        for b in blocks {
            cur = block_forward(tape, cur, b, scale, None)?;
        }
        out.push(cur);
    }
    Ok(out)
}

/// Stack per-view token matrices view-major: all rows of view 0, then
/// view 1, and so on.
pub fn concat_views<T: Element>(tape: &mut Tape<T>, views: &[NodeId]) -> Result<NodeId> {
    tape.concat_rows(views)
}

/// T blocks over the concatenated token matrix. `mask` is `None` in the
/// real model (every token attends everywhere); tests inject a
/// block-diagonal mask here to reproduce the local stage.
pub fn global_encode<T: Element>(
    tape: &mut Tape<T>,
    m: NodeId,
    blocks: &[BlockWeights],
    scale: AttnScale,
    mask: Option<&AttnMask>,
) -> Result<NodeId> {
    let mut cur = m;
    for b in blocks {
        cur = block_forward(tape, cur, b, scale, mask)?;
    }
    Ok(cur)
}

/// Pool the configured row set to one [1, D] vector and apply the affine
/// head; returns [1, K] logits.
pub fn pool_and_classify<T: Element>(
    tape: &mut Tape<T>,
    m: NodeId,
    config: &MVTConfig,
    head_w: NodeId,
    head_b: NodeId,
) -> Result<NodeId> {
    let rows = match config.pooling {
        PoolingMode::ClassToken => config.class_token_rows(),
        PoolingMode::AvgPool => config.patch_rows(),
    };
    let picked = tape.gather_rows(m, &rows)?;
    let pooled = tape.mean_axis(picked, 0)?;
    let logits = tape.matmul(pooled, head_w)?;
    tape.add_row_bias(logits, head_b)
}

/// Every parameter of the model as tape nodes, loaded once per tape.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub embed: EmbedWeights,
    pub local: Vec<BlockWeights>,
    pub global: Vec<BlockWeights>,
    pub head_w: NodeId,
    pub head_b: NodeId,
}

pub fn load_model<T: Element>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &MVTConfig,
) -> Result<LoadedModel> {
    let embed = EmbedWeights::load(tape, store)?;
    let mut local = Vec::with_capacity(config.local_blocks);
    for i in 0..config.local_blocks {
        local.push(BlockWeights::load(
            tape,
            store,
            &format!("local.{i}"),
            config.heads,
            config.ln_eps,
        )?);
    }
    let mut global = Vec::with_capacity(config.global_blocks);
    for i in 0..config.global_blocks {
        global.push(BlockWeights::load(
            tape,
            store,
            &format!("global.{i}"),
            config.heads,
            config.ln_eps,
        )?);
    }
    Ok(LoadedModel {
        embed,
        local,
        global,
        head_w: tape.load_param(store, "head.w")?,
        head_b: tape.load_param(store, "head.b")?,
    })
}

/// Forward pass for one sample whose weights are already on the tape;
/// `views` must hold exactly L views of the configured size.
pub fn forward_loaded<T: Element>(
    tape: &mut Tape<T>,
    model: &LoadedModel,
    config: &MVTConfig,
    views: &[Tensor<T>],
) -> Result<NodeId> {
    if views.len() != config.views {
        return Err(CoreError::Config(format!(
            "expected {} views, got {}",
            config.views,
            views.len()
        )));
    }
    let mut embedded = Vec::with_capacity(views.len());
    for view in views {
        let patches = patchify(view, config)?;
        let node = tape.constant(patches);
        embedded.push(embed_view(tape, node, &model.embed)?);
    }
    let encoded = local_encode(tape, &embedded, &model.local, config.attn_scale)?;
    let m = concat_views(tape, &encoded)?;
    let mt = global_encode(tape, m, &model.global, config.attn_scale, None)?;
    pool_and_classify(tape, mt, config, model.head_w, model.head_b)
}

/// Load parameters and run one sample; returns the [1, K] logit node.
pub fn forward<T: Element>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &MVTConfig,
    views: &[Tensor<T>],
) -> Result<NodeId> {
    config.validate()?;
    let model = load_model(tape, store, config)?;
    forward_loaded(tape, &model, config, views)
}
