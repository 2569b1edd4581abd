//! Forward and backward passes of the decoder's building blocks.
//!
//! Activations are `tokens × features` matrices. Every backward function adds
//! parameter gradients into a same-shaped gradient struct and returns the
//! gradient with respect to its input.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use super::params::{Attention, FeedForward, LayerNorm, Linear};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

impl Linear {
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, g: &mut Linear) -> Array2<f64> {
        g.w += &x.t().dot(dy);
        g.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }
}

pub struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LnCache) {
        let d = x.ncols() as f64;
        let mean = x.sum_axis(Axis(1)) / d;
        let centered = x - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
        let xhat = centered * inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &self.gamma + &self.beta;
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LnCache, dy: &Array2<f64>, g: &mut LayerNorm) -> Array2<f64> {
        g.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        g.beta += &dy.sum_axis(Axis(0));
        let d = dy.ncols() as f64;
        let dxhat = dy * &self.gamma;
        let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
        let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
        let inner = dxhat - &mean_dxhat.insert_axis(Axis(1)) - &cache.xhat * &mean_dxhat_xhat.insert_axis(Axis(1));
        inner * cache.inv_std.view().insert_axis(Axis(1))
    }
}

/// tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

pub struct FfnCache {
    pre: Array2<f64>,
    hidden: Array2<f64>,
}

impl FeedForward {
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, FfnCache) {
        let pre = self.up.forward(x);
        let hidden = pre.mapv(gelu);
        let y = self.down.forward(&hidden);
        (y, FfnCache { pre, hidden })
    }

    pub fn backward(&self, x: &Array2<f64>, cache: &FfnCache, dy: &Array2<f64>, g: &mut FeedForward) -> Array2<f64> {
        let dhidden = self.down.backward(&cache.hidden, dy, &mut g.down);
        let dpre = dhidden * &cache.pre.mapv(gelu_grad);
        self.up.backward(x, &dpre, &mut g.up)
    }
}

/// Keys and values of an attention layer over some source sequence.
pub struct KeyValues {
    pub k: Array2<f64>,
    pub v: Array2<f64>,
}

pub struct AttnCache {
    q: Array2<f64>,
    /// Softmax weights per head, `queries × keys`.
    probs: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

impl Attention {
    pub fn project_kv(&self, source: &Array2<f64>) -> KeyValues {
        KeyValues {
            k: self.k.forward(source),
            v: self.v.forward(source),
        }
    }

    /// Multi-head scaled dot-product attention of `x` over `kv`. With
    /// `causal`, query row `i` only sees key rows `0..=i`.
    pub fn attend(&self, x: &Array2<f64>, kv: &KeyValues, n_heads: usize, causal: bool) -> (Array2<f64>, AttnCache) {
        let q = self.q.forward(x);
        let (t, d) = q.dim();
        let dh = d / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut concat = Array2::zeros((t, d));
        let mut probs = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&kv.k.slice(cols).t()) * scale;
            for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
                if causal {
                    row.slice_mut(s![i + 1..]).fill(f64::NEG_INFINITY);
                }
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row /= sum;
            }
            concat.slice_mut(cols).assign(&scores.dot(&kv.v.slice(cols)));
            probs.push(scores);
        }
        let out = self.o.forward(&concat);
        (out, AttnCache { q, probs, concat })
    }

    /// Returns `dx`; key/value gradients are added to `dkv`.
    pub fn attend_backward(
        &self,
        x: &Array2<f64>,
        kv: &KeyValues,
        cache: &AttnCache,
        dout: &Array2<f64>,
        g: &mut Attention,
        dkv: &mut KeyValues,
    ) -> Array2<f64> {
        let dconcat = self.o.backward(&cache.concat, dout, &mut g.o);
        let n_heads = cache.probs.len();
        let (t, d) = cache.q.dim();
        let dh = d / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Array2::zeros((t, d));
        for (h, probs) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dhead = dconcat.slice(cols);
            let dprobs = dhead.dot(&kv.v.slice(cols).t());
            {
                let mut dv = dkv.v.slice_mut(cols);
                dv += &probs.t().dot(&dhead);
            }
            let row_dot = (&dprobs * probs).sum_axis(Axis(1));
            let dscores = (dprobs - &row_dot.insert_axis(Axis(1))) * probs * scale;
            dq.slice_mut(cols).assign(&dscores.dot(&kv.k.slice(cols)));
            let mut dk = dkv.k.slice_mut(cols);
            dk += &dscores.t().dot(&cache.q.slice(cols));
        }
        self.q.backward(x, &dq, &mut g.q)
    }

    /// Backward through the key/value projections of `source`.
    pub fn kv_backward(&self, source: &Array2<f64>, dkv: &KeyValues, g: &mut Attention) -> Array2<f64> {
        self.k.backward(source, &dkv.k, &mut g.k) + self.v.backward(source, &dkv.v, &mut g.v)
    }
}

impl KeyValues {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        KeyValues {
            k: Array2::zeros((rows, dim)),
            v: Array2::zeros((rows, dim)),
        }
    }
}

/// Inverted dropout on sublayer outputs. Masks are drawn in call order, so a
/// fixed generator state reproduces them exactly.
pub struct Dropout<R> {
    pub rate: f64,
    pub rng: R,
}

impl<R: Rng> Dropout<R> {
    pub fn mask(&mut self, rows: usize, cols: usize) -> Option<Array2<f64>> {
        if self.rate <= 0.0 {
            return None;
        }
        let keep = 1.0 - self.rate;
        Some(Array2::from_shape_fn((rows, cols), |_| {
            if self.rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_differences() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x = {x}");
        }
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let ln = LayerNorm {
            gamma: Array1::ones(4),
            beta: Array1::zeros(4),
        };
        let x = ndarray::array![[1.0, 2.0, 3.0, 4.0], [-5.0, 0.0, 5.0, 10.0]];
        let (y, _) = ln.forward(&x);
        for row in y.rows() {
            assert!(row.sum().abs() < 1e-12);
            let var = row.mapv(|v| v * v).sum() / 4.0;
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn causal_attention_rows_ignore_the_future() {
        let d = 4;
        let eye = Linear {
            w: Array2::eye(d),
            b: Array1::zeros(d),
        };
        let att = Attention {
            q: eye.clone(),
            k: eye.clone(),
            v: eye.clone(),
            o: eye,
        };
        let x = Array2::from_shape_fn((3, d), |(i, j)| (i * d + j) as f64 * 0.1);
        let kv = att.project_kv(&x);
        let (full, cache) = att.attend(&x, &kv, 2, true);
        assert_eq!(cache.probs[0][[0, 1]], 0.0);
        let x2 = x.slice(s![..2, ..]).to_owned();
        let (prefix, _) = att.attend(&x2, &att.project_kv(&x2), 2, true);
        assert_eq!(full.slice(s![..2, ..]), prefix);
    }
}
