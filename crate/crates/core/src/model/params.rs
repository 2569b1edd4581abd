//! Parameter containers. The same types hold gradients and optimizer state.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::GcpConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in × out`; applied as `x · w + b` on row vectors.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderBlock {
    pub norm_self: LayerNorm,
    pub self_attn: Attention,
    pub norm_cross: LayerNorm,
    pub cross_attn: Attention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
}

/// Every trainable tensor of the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `n_cameras × D`, added to memory tokens by camera.
    pub camera_embeddings: Array2<f64>,
    pub sos: Array1<f64>,
    pub blocks: Vec<DecoderBlock>,
    pub head: Linear,
}

/// Read-only visitor over named tensors: `(name, shape, data)`.
pub type Visit<'a> = dyn FnMut(&str, &[usize], &[f64]) + 'a;
/// Mutable visitor over named tensors.
pub type VisitMut<'a> = dyn FnMut(&str, &[usize], &mut [f64]) + 'a;

fn vis1(name: &str, a: &Array1<f64>, f: &mut Visit) {
    f(name, a.shape(), a.as_slice().expect("standard layout"));
}

fn vis2(name: &str, a: &Array2<f64>, f: &mut Visit) {
    f(name, a.shape(), a.as_slice().expect("standard layout"));
}

fn vis1_mut(name: &str, a: &mut Array1<f64>, f: &mut VisitMut) {
    let shape = a.shape().to_vec();
    f(name, &shape, a.as_slice_mut().expect("standard layout"));
}

fn vis2_mut(name: &str, a: &mut Array2<f64>, f: &mut VisitMut) {
    let shape = a.shape().to_vec();
    f(name, &shape, a.as_slice_mut().expect("standard layout"));
}

impl Linear {
    fn zeros(inp: usize, out: usize) -> Self {
        Linear {
            w: Array2::zeros((inp, out)),
            b: Array1::zeros(out),
        }
    }

    fn xavier<R: Rng>(inp: usize, out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (inp + out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Linear {
            w: Array2::from_shape_fn((inp, out), |_| dist.sample(rng)),
            b: Array1::zeros(out),
        }
    }

    fn identity(dim: usize) -> Self {
        Linear {
            w: Array2::eye(dim),
            b: Array1::zeros(dim),
        }
    }

    fn visit(&self, prefix: &str, f: &mut Visit) {
        vis2(&format!("{prefix}.w"), &self.w, f);
        vis1(&format!("{prefix}.b"), &self.b, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut) {
        vis2_mut(&format!("{prefix}.w"), &mut self.w, f);
        vis1_mut(&format!("{prefix}.b"), &mut self.b, f);
    }
}

impl LayerNorm {
    fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    fn visit(&self, prefix: &str, f: &mut Visit) {
        vis1(&format!("{prefix}.gamma"), &self.gamma, f);
        vis1(&format!("{prefix}.beta"), &self.beta, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut) {
        vis1_mut(&format!("{prefix}.gamma"), &mut self.gamma, f);
        vis1_mut(&format!("{prefix}.beta"), &mut self.beta, f);
    }
}

impl Attention {
    fn zeros(dim: usize) -> Self {
        Attention {
            q: Linear::zeros(dim, dim),
            k: Linear::zeros(dim, dim),
            v: Linear::zeros(dim, dim),
            o: Linear::zeros(dim, dim),
        }
    }

    fn visit(&self, prefix: &str, f: &mut Visit) {
        self.q.visit(&format!("{prefix}.q"), f);
        self.k.visit(&format!("{prefix}.k"), f);
        self.v.visit(&format!("{prefix}.v"), f);
        self.o.visit(&format!("{prefix}.o"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut) {
        self.q.visit_mut(&format!("{prefix}.q"), f);
        self.k.visit_mut(&format!("{prefix}.k"), f);
        self.v.visit_mut(&format!("{prefix}.v"), f);
        self.o.visit_mut(&format!("{prefix}.o"), f);
    }
}

impl DecoderBlock {
    fn zeros(dim: usize, ffn: usize) -> Self {
        DecoderBlock {
            norm_self: LayerNorm::new(dim),
            self_attn: Attention::zeros(dim),
            norm_cross: LayerNorm::new(dim),
            cross_attn: Attention::zeros(dim),
            norm_ffn: LayerNorm::new(dim),
            ffn: FeedForward {
                up: Linear::zeros(dim, ffn),
                down: Linear::zeros(ffn, dim),
            },
        }
    }

    fn visit(&self, prefix: &str, f: &mut Visit) {
        self.norm_self.visit(&format!("{prefix}.norm_self"), f);
        self.self_attn.visit(&format!("{prefix}.self_attn"), f);
        self.norm_cross.visit(&format!("{prefix}.norm_cross"), f);
        self.cross_attn.visit(&format!("{prefix}.cross_attn"), f);
        self.norm_ffn.visit(&format!("{prefix}.norm_ffn"), f);
        self.ffn.up.visit(&format!("{prefix}.ffn.up"), f);
        self.ffn.down.visit(&format!("{prefix}.ffn.down"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut) {
        self.norm_self.visit_mut(&format!("{prefix}.norm_self"), f);
        self.self_attn.visit_mut(&format!("{prefix}.self_attn"), f);
        self.norm_cross.visit_mut(&format!("{prefix}.norm_cross"), f);
        self.cross_attn.visit_mut(&format!("{prefix}.cross_attn"), f);
        self.norm_ffn.visit_mut(&format!("{prefix}.norm_ffn"), f);
        self.ffn.up.visit_mut(&format!("{prefix}.ffn.up"), f);
        self.ffn.down.visit_mut(&format!("{prefix}.ffn.down"), f);
    }
}

impl ModelParams {
    /// All-zero tensors (LayerNorm gains included) shaped for `cfg`; used for
    /// gradients and momentum buffers.
    pub fn zeros(cfg: &GcpConfig) -> Self {
        let d = cfg.dim;
        let mut p = ModelParams {
            camera_embeddings: Array2::zeros((cfg.n_cameras, d)),
            sos: Array1::zeros(d),
            blocks: (0..cfg.n_blocks).map(|_| DecoderBlock::zeros(d, cfg.ffn_dim)).collect(),
            head: Linear::zeros(d, d),
        };
        p.fill(0.0);
        p
    }

    /// Random initialization.
    ///
    /// Projections are Xavier-uniform, except the cross-attention value and
    /// output maps and the prototype head, which start as identities: an
    /// untrained decoder then emits roughly an attention-weighted average of
    /// its memory plus a small residual, a sensible starting prototype.
    pub fn init<R: Rng>(cfg: &GcpConfig, rng: &mut R) -> Self {
        let d = cfg.dim;
        let small = Normal::new(0.0, cfg.init_std).expect("finite std");
        let blocks = (0..cfg.n_blocks)
            .map(|_| DecoderBlock {
                norm_self: LayerNorm::new(d),
                self_attn: Attention {
                    q: Linear::xavier(d, d, rng),
                    k: Linear::xavier(d, d, rng),
                    v: Linear::xavier(d, d, rng),
                    o: Linear::xavier(d, d, rng),
                },
                norm_cross: LayerNorm::new(d),
                cross_attn: Attention {
                    q: Linear::xavier(d, d, rng),
                    k: Linear::xavier(d, d, rng),
                    v: Linear::identity(d),
                    o: Linear::identity(d),
                },
                norm_ffn: LayerNorm::new(d),
                ffn: FeedForward {
                    up: Linear::xavier(d, cfg.ffn_dim, rng),
                    down: Linear::xavier(cfg.ffn_dim, d, rng),
                },
            })
            .collect();
        ModelParams {
            camera_embeddings: Array2::from_shape_fn((cfg.n_cameras, d), |_| small.sample(rng)),
            sos: Array1::from_shape_fn(d, |_| small.sample(rng)),
            blocks,
            head: Linear::identity(d),
        }
    }

    pub fn visit(&self, f: &mut Visit) {
        vis2("camera_embeddings", &self.camera_embeddings, f);
        vis1("sos", &self.sos, f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("blocks.{i}"), f);
        }
        self.head.visit("head", f);
    }

    pub fn visit_mut(&mut self, f: &mut VisitMut) {
        vis2_mut("camera_embeddings", &mut self.camera_embeddings, f);
        vis1_mut("sos", &mut self.sos, f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("blocks.{i}"), f);
        }
        self.head.visit_mut("head", f);
    }

    /// `(name, shape)` of every tensor in visiting order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, shape, _| out.push((name.to_string(), shape.to_vec())));
        out
    }

    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, data| n += data.len());
        n
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.visit(&mut |_, _, data| out.extend_from_slice(data));
        out
    }

    /// Overwrite every tensor from a flat buffer in visiting order.
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "flat buffer length");
        let mut offset = 0;
        self.visit_mut(&mut |_, _, data| {
            data.copy_from_slice(&flat[offset..offset + data.len()]);
            offset += data.len();
        });
    }

    pub fn fill(&mut self, value: f64) {
        self.visit_mut(&mut |_, _, data| data.fill(value));
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &ModelParams) {
        let flat = other.to_flat();
        let mut offset = 0;
        self.visit_mut(&mut |_, _, data| {
            for (d, o) in data.iter_mut().zip(&flat[offset..]) {
                *d += o;
            }
            offset += data.len();
        });
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, _, data| ok &= data.iter().all(|v| v.is_finite()));
        ok
    }
}
