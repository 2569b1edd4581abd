//! Decoder blocks, memory construction and autoregressive generation.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use super::layers::{AttnCache, Dropout, FfnCache, KeyValues, LnCache};
use super::params::{DecoderBlock, ModelParams};
use super::ModelError;
use crate::store::{CameraId, ClassId, EmbeddingSet};

/// Cross-attention input for one class: feature vectors with their camera
/// embedding added row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Memory {
    /// `s × D`.
    pub tokens: Array2<f64>,
    pub cameras: Vec<CameraId>,
    pub class_id: ClassId,
    pub source_record_ids: Vec<String>,
    /// The requested camera filter would have emptied the memory, so all
    /// records were used instead.
    pub fallback: bool,
}

impl Memory {
    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stack `vectors` with `ψ[camera]` added.
pub fn memory_tokens(
    params: &ModelParams,
    vectors: &[&[f64]],
    cameras: &[CameraId],
) -> Result<Array2<f64>, ModelError> {
    let psi = &params.camera_embeddings;
    let d = psi.ncols();
    let mut tokens = Array2::zeros((vectors.len(), d));
    for (i, (v, cam)) in vectors.iter().zip(cameras).enumerate() {
        if cam.0 as usize >= psi.nrows() {
            return Err(ModelError::UnknownCamera {
                camera: *cam,
                n_cameras: psi.nrows(),
            });
        }
        if v.len() != d {
            return Err(ModelError::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
        let mut row = tokens.row_mut(i);
        row.assign(&psi.row(cam.0 as usize));
        row.iter_mut().zip(v.iter()).for_each(|(t, x)| *t += x);
    }
    Ok(tokens)
}

/// Memory for `class`, optionally without the records of `excluded_camera`.
/// Rows follow record order.
pub fn build_memory(
    set: &EmbeddingSet,
    params: &ModelParams,
    class: ClassId,
    excluded_camera: Option<CameraId>,
) -> Result<Memory, ModelError> {
    let mut records = match excluded_camera {
        Some(cam) => set.camera_filtered_view(class, cam)?,
        None => set.class_view(class)?,
    };
    let fallback = records.is_empty();
    if fallback {
        records = set.class_view(class)?;
    }
    let vectors: Vec<&[f64]> = records.iter().map(|r| r.vector.as_slice()).collect();
    let cameras: Vec<CameraId> = records.iter().map(|r| r.camera_id).collect();
    Ok(Memory {
        tokens: memory_tokens(params, &vectors, &cameras)?,
        cameras,
        class_id: class,
        source_record_ids: records.iter().map(|r| r.id.clone()).collect(),
        fallback,
    })
}

struct BlockCache {
    ln_self: LnCache,
    normed_self: Array2<f64>,
    self_kv: KeyValues,
    self_attn: AttnCache,
    drop_self: Option<Array2<f64>>,
    ln_cross: LnCache,
    normed_cross: Array2<f64>,
    cross_attn: AttnCache,
    drop_cross: Option<Array2<f64>>,
    ln_ffn: LnCache,
    normed_ffn: Array2<f64>,
    ffn: FfnCache,
    drop_ffn: Option<Array2<f64>>,
}

fn apply(mask: &Option<Array2<f64>>, x: Array2<f64>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

fn block_forward<R: Rng>(
    block: &DecoderBlock,
    x: Array2<f64>,
    cross_kv: &KeyValues,
    n_heads: usize,
    dropout: &mut Option<Dropout<R>>,
) -> (Array2<f64>, BlockCache) {
    let (t, d) = x.dim();
    let mut mask = || dropout.as_mut().and_then(|dr| dr.mask(t, d));

    let (normed_self, ln_self) = block.norm_self.forward(&x);
    let self_kv = block.self_attn.project_kv(&normed_self);
    let (sa, self_attn) = block.self_attn.attend(&normed_self, &self_kv, n_heads, true);
    let drop_self = mask();
    let after_self = &x + &apply(&drop_self, sa);

    let (normed_cross, ln_cross) = block.norm_cross.forward(&after_self);
    let (ca, cross_attn) = block.cross_attn.attend(&normed_cross, cross_kv, n_heads, false);
    let drop_cross = mask();
    let after_cross = &after_self + &apply(&drop_cross, ca);

    let (normed_ffn, ln_ffn) = block.norm_ffn.forward(&after_cross);
    let (ff, ffn) = block.ffn.forward(&normed_ffn);
    let drop_ffn = mask();
    let out = &after_cross + &apply(&drop_ffn, ff);

    let cache = BlockCache {
        ln_self,
        normed_self,
        self_kv,
        self_attn,
        drop_self,
        ln_cross,
        normed_cross,
        cross_attn,
        drop_cross,
        ln_ffn,
        normed_ffn,
        ffn,
        drop_ffn,
    };
    (out, cache)
}

/// Returns the gradient w.r.t. the block input; cross-attention key/value
/// gradients are accumulated into `dcross`.
fn block_backward(
    block: &DecoderBlock,
    cache: &BlockCache,
    cross_kv: &KeyValues,
    dout: Array2<f64>,
    g: &mut DecoderBlock,
    dcross: &mut KeyValues,
) -> Array2<f64> {
    // out = after_cross + drop(ffn(ln(after_cross)))
    let dff = apply(&cache.drop_ffn, dout.clone());
    let dnormed = block.ffn.backward(&cache.normed_ffn, &cache.ffn, &dff, &mut g.ffn);
    let d_after_cross = dout + block.norm_ffn.backward(&cache.ln_ffn, &dnormed, &mut g.norm_ffn);

    // after_cross = after_self + drop(cross(ln(after_self)))
    let dca = apply(&cache.drop_cross, d_after_cross.clone());
    let dnormed = block.cross_attn.attend_backward(
        &cache.normed_cross,
        cross_kv,
        &cache.cross_attn,
        &dca,
        &mut g.cross_attn,
        dcross,
    );
    let d_after_self = d_after_cross + block.norm_cross.backward(&cache.ln_cross, &dnormed, &mut g.norm_cross);

    // after_self = x + drop(self(ln(x)))
    let dsa = apply(&cache.drop_self, d_after_self.clone());
    let (t, d) = cache.normed_self.dim();
    let mut dkv = KeyValues::zeros(t, d);
    let mut dnormed = block.self_attn.attend_backward(
        &cache.normed_self,
        &cache.self_kv,
        &cache.self_attn,
        &dsa,
        &mut g.self_attn,
        &mut dkv,
    );
    dnormed += &block.self_attn.kv_backward(&cache.normed_self, &dkv, &mut g.self_attn);
    d_after_self + block.norm_self.backward(&cache.ln_self, &dnormed, &mut g.norm_self)
}

struct StepCache {
    blocks: Vec<BlockCache>,
    last_hidden: Array2<f64>,
}

/// Everything produced by one generation pass, kept for backpropagation.
pub struct Generation {
    pub prototypes: Vec<Array1<f64>>,
    memory: Array2<f64>,
    cross_kv: Vec<KeyValues>,
    steps: Vec<StepCache>,
}

/// Generate `n` prototypes from memory tokens. Step `t` feeds
/// `[sos; p_1; …; p_{t-1}]` through the decoder and keeps the head output of
/// the last position.
pub fn generate_with<R: Rng>(
    params: &ModelParams,
    n_heads: usize,
    memory: &Array2<f64>,
    n: usize,
    mut dropout: Option<Dropout<R>>,
) -> Generation {
    let d = params.sos.len();
    let cross_kv: Vec<KeyValues> = params.blocks.iter().map(|b| b.cross_attn.project_kv(memory)).collect();
    let mut prototypes: Vec<Array1<f64>> = Vec::with_capacity(n);
    let mut steps = Vec::with_capacity(n);
    for t in 0..n {
        let mut x = Array2::zeros((t + 1, d));
        x.row_mut(0).assign(&params.sos);
        for (i, p) in prototypes.iter().enumerate() {
            x.row_mut(i + 1).assign(p);
        }
        let mut caches = Vec::with_capacity(params.blocks.len());
        for (block, kv) in params.blocks.iter().zip(&cross_kv) {
            let (y, cache) = block_forward(block, x, kv, n_heads, &mut dropout);
            caches.push(cache);
            x = y;
        }
        let last_hidden = x.slice(s![t..t + 1, ..]).to_owned();
        let p = params.head.forward(&last_hidden).row(0).to_owned();
        prototypes.push(p);
        steps.push(StepCache {
            blocks: caches,
            last_hidden,
        });
    }
    Generation {
        prototypes,
        memory: memory.clone(),
        cross_kv,
        steps,
    }
}

impl Generation {
    /// Backpropagate `dprototypes` (one gradient per generated prototype)
    /// through every step, the start token and the memory. Returns the
    /// gradient w.r.t. the memory tokens.
    pub fn backward(
        &self,
        params: &ModelParams,
        mut dprototypes: Vec<Array1<f64>>,
        g: &mut ModelParams,
    ) -> Array2<f64> {
        assert_eq!(dprototypes.len(), self.prototypes.len());
        let (s_len, d) = self.memory.dim();
        let mut dcross: Vec<KeyValues> = (0..params.blocks.len()).map(|_| KeyValues::zeros(s_len, d)).collect();
        for t in (0..self.steps.len()).rev() {
            let step = &self.steps[t];
            let dp = dprototypes[t].clone().insert_axis(Axis(0));
            let dlast = params.head.backward(&step.last_hidden, &dp, &mut g.head);
            let mut dx = Array2::zeros((t + 1, d));
            dx.row_mut(t).assign(&dlast.row(0));
            for (b, cache) in step.blocks.iter().enumerate().rev() {
                dx = block_backward(
                    &params.blocks[b],
                    cache,
                    &self.cross_kv[b],
                    dx,
                    &mut g.blocks[b],
                    &mut dcross[b],
                );
            }
            g.sos += &dx.row(0);
            for i in 1..=t {
                dprototypes[i - 1] += &dx.row(i);
            }
        }
        let mut dmemory = Array2::zeros((s_len, d));
        for (b, dkv) in dcross.iter().enumerate() {
            dmemory += &params.blocks[b]
                .cross_attn
                .kv_backward(&self.memory, dkv, &mut g.blocks[b].cross_attn);
        }
        dmemory
    }
}

/// Add memory-token gradients into the camera embedding gradient.
pub fn accumulate_camera_grad(dmemory: &Array2<f64>, cameras: &[CameraId], g: &mut ModelParams) {
    for (row, cam) in dmemory.rows().into_iter().zip(cameras) {
        let mut target = g.camera_embeddings.row_mut(cam.0 as usize);
        target += &row;
    }
}
