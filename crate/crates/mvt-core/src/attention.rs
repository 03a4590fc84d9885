//! Transformer block primitives: layer norm, multi-head self-attention
//! with an optional attention mask, the two-layer MLP, and the pre-norm
//! residual block that composes them.
//!
//! All functions record onto a caller-supplied [`Tape`]; weights arrive as
//! node handles so the same code serves both training (loaded parameters)
//! and oracle tests (hand-built leaves).

use crate::element::Element;
use crate::error::{CoreError, Result};
use crate::params::ParamStore;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Additive pre-softmax bias for disallowed attention positions. Large
/// enough that exp underflows to exactly 0.0 after max subtraction, which
/// is what makes masked global attention reproduce local attention.
pub const MASK_NEG: f64 = -1e30;

/// Denominator of the attention score scale.
///
/// The per-head width d = D/M is the default; full width D is selectable
/// for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttnScale {
    PerHead,
    FullWidth,
}

impl AttnScale {
    /// Multiplier applied to raw q.k scores.
    pub fn factor(self, dim: usize, heads: usize) -> f64 {
        let denom = match self {
            AttnScale::PerHead => dim / heads,
            AttnScale::FullWidth => dim,
        };
        1.0 / (denom as f64).sqrt()
    }
}

/// Boolean allow-matrix over token positions; entry (i, j) says whether
/// token i may attend to token j.
#[derive(Debug, Clone)]
pub struct AttnMask {
    allow: Vec<bool>,
    n: usize,
}

impl AttnMask {
    pub fn new(allow: Vec<bool>, n: usize) -> Result<Self> {
        if allow.len() != n * n {
            return Err(CoreError::Contract {
                op: "AttnMask::new",
                detail: format!("allow matrix has {} entries, expected {}", allow.len(), n * n),
            });
        }
        Ok(AttnMask { allow, n })
    }

    pub fn all_allowed(n: usize) -> Self {
        AttnMask {
            allow: vec![true; n * n],
            n,
        }
    }

    /// Mask under which token i attends to token j only when both fall in
    /// the same consecutive group of `group` tokens; `groups` groups total.
    /// With one group per view this turns a global attention call into
    /// `groups` independent per-view attentions.
    pub fn block_diagonal(groups: usize, group: usize) -> Self {
        let n = groups * group;
        let mut allow = vec![false; n * n];
        for g in 0..groups {
            let base = g * group;
            for i in 0..group {
                for j in 0..group {
                    allow[(base + i) * n + base + j] = true;
                }
            }
        }
        AttnMask { allow, n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_all_allowed(&self) -> bool {
        self.allow.iter().all(|&a| a)
    }

    fn check_rows(&self) -> Result<()> {
        for i in 0..self.n {
            if !self.allow[i * self.n..(i + 1) * self.n].iter().any(|&a| a) {
                return Err(CoreError::Contract {
                    op: "msa_forward",
                    detail: format!("attention mask row {i} allows no positions"),
                });
            }
        }
        Ok(())
    }

    /// Additive bias tensor (0 where allowed, [`MASK_NEG`] where not), or
    /// `None` when every position is allowed so callers can skip the add
    /// and stay bit-identical with the mask-free path.
    pub fn bias<T: Element>(&self) -> Option<Tensor<T>> {
        if self.is_all_allowed() {
            return None;
        }
        let data = self
            .allow
            .iter()
            .map(|&a| if a { T::zero() } else { T::from_f64(MASK_NEG) })
            .collect();
        Some(Tensor::new(vec![self.n, self.n], data).expect("square mask"))
    }
}

/// Layer norm parameters as tape nodes; gamma and beta are [1, D] rows.
#[derive(Debug, Clone, Copy)]
pub struct LnParams {
    pub gamma: NodeId,
    pub beta: NodeId,
    pub eps: f64,
}

impl LnParams {
    /// Load `{prefix}.g` and `{prefix}.b`.
    pub fn load<T: Element>(
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        prefix: &str,
        eps: f64,
    ) -> Result<Self> {
        Ok(LnParams {
            gamma: tape.load_param(store, &format!("{prefix}.g"))?,
            beta: tape.load_param(store, &format!("{prefix}.b"))?,
            eps,
        })
    }
}

/// Q/K/V/output projection weights as tape nodes; w* are [D, D], b* are
/// [1, D]. `heads` must divide D.
#[derive(Debug, Clone, Copy)]
pub struct MsaWeights {
    pub wq: NodeId,
    pub bq: NodeId,
    pub wk: NodeId,
    pub bk: NodeId,
    pub wv: NodeId,
    pub bv: NodeId,
    pub wo: NodeId,
    pub bo: NodeId,
    pub heads: usize,
}

impl MsaWeights {
    /// Load `{prefix}.wq`, `{prefix}.bq`, ..., `{prefix}.bo`.
    pub fn load<T: Element>(
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        prefix: &str,
        heads: usize,
    ) -> Result<Self> {
        Ok(MsaWeights {
            wq: tape.load_param(store, &format!("{prefix}.wq"))?,
            bq: tape.load_param(store, &format!("{prefix}.bq"))?,
            wk: tape.load_param(store, &format!("{prefix}.wk"))?,
            bk: tape.load_param(store, &format!("{prefix}.bk"))?,
            wv: tape.load_param(store, &format!("{prefix}.wv"))?,
            bv: tape.load_param(store, &format!("{prefix}.bv"))?,
            wo: tape.load_param(store, &format!("{prefix}.wo"))?,
            bo: tape.load_param(store, &format!("{prefix}.bo"))?,
            heads,
        })
    }
}

/// MLP weights as tape nodes: w1 [D, rD], b1 [1, rD], w2 [rD, D], b2 [1, D].
#[derive(Debug, Clone, Copy)]
pub struct MlpWeights {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl MlpWeights {
    pub fn load<T: Element>(
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        prefix: &str,
    ) -> Result<Self> {
        Ok(MlpWeights {
            w1: tape.load_param(store, &format!("{prefix}.w1"))?,
            b1: tape.load_param(store, &format!("{prefix}.b1"))?,
            w2: tape.load_param(store, &format!("{prefix}.w2"))?,
            b2: tape.load_param(store, &format!("{prefix}.b2"))?,
        })
    }
}

/// One encoder block: both layer norms, attention, and MLP.
#[derive(Debug, Clone, Copy)]
pub struct BlockWeights {
    pub ln1: LnParams,
    pub msa: MsaWeights,
    pub ln2: LnParams,
    pub mlp: MlpWeights,
}

impl BlockWeights {
    /// Load all block parameters under `{prefix}.` (e.g. `local.3.`).
    pub fn load<T: Element>(
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        prefix: &str,
        heads: usize,
        eps: f64,
    ) -> Result<Self> {
        Ok(BlockWeights {
            ln1: LnParams::load(tape, store, &format!("{prefix}.ln1"), eps)?,
            msa: MsaWeights::load(tape, store, &format!("{prefix}.msa"), heads)?,
            ln2: LnParams::load(tape, store, &format!("{prefix}.ln2"), eps)?,
            mlp: MlpWeights::load(tape, store, &format!("{prefix}.mlp"))?,
        })
    }
}

/// y = gamma * (x - mean_row) / sqrt(var_row + eps) + beta.
pub fn ln_forward<T: Element>(tape: &mut Tape<T>, x: NodeId, p: &LnParams) -> Result<NodeId> {
    tape.layer_norm(x, p.gamma, p.beta, p.eps)
}

/// Attention output plus the per-head softmax probability matrices, for
/// callers that inspect the attention pattern itself.
pub struct MsaOutput {
    pub out: NodeId,
    pub head_probs: Vec<NodeId>,
}

/// Multi-head self-attention over x [N, D]: project to Q/K/V, split heads
/// column-wise, per head softmax(scale * Q K^T + maskbias) V, concatenate
/// heads, output-project.
pub fn msa_forward_probs<T: Element>(
    tape: &mut Tape<T>,
    x: NodeId,
    w: &MsaWeights,
    scale: AttnScale,
    mask: Option<&AttnMask>,
) -> Result<MsaOutput> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 2 {
        return Err(CoreError::BadShape {
            op: "msa_forward",
            expected: "2-D token matrix".into(),
            got: shape,
        });
    }
    let (n, dim) = (shape[0], shape[1]);
    if w.heads == 0 || dim % w.heads != 0 {
        return Err(CoreError::Contract {
            op: "msa_forward",
            detail: format!("width {dim} not divisible by {} heads", w.heads),
        });
    }
    let bias_node = match mask {
        Some(m) => {
            if m.n() != n {
                return Err(CoreError::Contract {
                    op: "msa_forward",
                    detail: format!("mask is {}x{} but sequence has {n} tokens", m.n(), m.n()),
                });
            }
            m.check_rows()?;
            m.bias::<T>().map(|b| tape.constant(b))
        }
        None => None,
    };
    let d = dim / w.heads;
    let factor = T::from_f64(scale.factor(dim, w.heads));

    let mut q = tape.matmul(x, w.wq)?;
    q = tape.add_row_bias(q, w.bq)?;
    let mut k = tape.matmul(x, w.wk)?;
    k = tape.add_row_bias(k, w.bk)?;
    let mut v = tape.matmul(x, w.wv)?;
    v = tape.add_row_bias(v, w.bv)?;

    let mut head_outs = Vec::with_capacity(w.heads);
    let mut head_probs = Vec::with_capacity(w.heads);
    for h in 0..w.heads {
        let qh = tape.slice_cols(q, h * d, d)?;
        let kh = tape.slice_cols(k, h * d, d)?;
        let vh = tape.slice_cols(v, h * d, d)?;
        let raw = tape.matmul_nt(qh, kh)?;
        let mut scores = tape.scale(raw, factor)?;
        if let Some(b) = bias_node {
            scores = tape.add(scores, b)?;
        }
        let probs = tape.softmax_rows(scores)?;
        head_probs.push(probs);
        head_outs.push(tape.matmul(probs, vh)?);
    }
    let concat = tape.concat_cols(&head_outs)?;
    let projected = tape.matmul(concat, w.wo)?;
    let out = tape.add_row_bias(projected, w.bo)?;
    Ok(MsaOutput { out, head_probs })
}

pub fn msa_forward<T: Element>(
    tape: &mut Tape<T>,
    x: NodeId,
    w: &MsaWeights,
    scale: AttnScale,
    mask: Option<&AttnMask>,
) -> Result<NodeId> {
    Ok(msa_forward_probs(tape, x, w, scale, mask)?.out)
}

/// y = gelu(x w1 + b1) w2 + b2, applied row-independently.
pub fn mlp_forward<T: Element>(tape: &mut Tape<T>, x: NodeId, w: &MlpWeights) -> Result<NodeId> {
    let mut h = tape.matmul(x, w.w1)?;
    h = tape.add_row_bias(h, w.b1)?;
    h = tape.gelu(h)?;
    let mut y = tape.matmul(h, w.w2)?;
    y = tape.add_row_bias(y, w.b2)?;
    Ok(y)
}

/// Pre-norm residual block: x += MSA(LN1(x)); x += MLP(LN2(x)).
pub fn block_forward<T: Element>(
    tape: &mut Tape<T>,
    x: NodeId,
    w: &BlockWeights,
    scale: AttnScale,
    mask: Option<&AttnMask>,
) -> Result<NodeId> {
    let normed = ln_forward(tape, x, &w.ln1)?;
    let attn = msa_forward(tape, normed, &w.msa, scale, mask)?;
    let x1 = tape.add(x, attn)?;
    let normed2 = ln_forward(tape, x1, &w.ln2)?;
    let ff = mlp_forward(tape, normed2, &w.mlp)?;
    tape.add(x1, ff)
}
