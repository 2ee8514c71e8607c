//! One attention block:
//!
//! ```text
//! head_h(X) = LN_h( softmax(Q_h K_hᵀ / sqrt(d_k)) V_h )
//! Y         = LN( X + combine_h head_h(X) + FFN(X) )
//! ```
//!
//! The feed-forward branch reads the block input, not the attended values.
//! Token-wise work (the Q/K/V projections and the FFN) lives in
//! [`project`] so a caller can compute it once per sequence and then run
//! [`mix`] on many row subsets (relation tuples) of the same projection.

use crate::tensor::{
    affine, affine_backward, axpy, dot, gelu, gelu_grad, normalize, normalize_backward,
    softmax_in_place, Matrix,
};

use super::params::{AttentionParams, HeadCombine, ModelConfig};

/// Token-wise quantities for every row of the block input.
#[derive(Debug, Clone)]
pub struct Projection {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    ffn_pre: Matrix,
    ffn_act: Matrix,
    pub ffn: Matrix,
}

/// Gradients flowing back into a [`Projection`].
#[derive(Debug, Clone)]
pub struct ProjectionGrad {
    pub dq: Matrix,
    pub dk: Matrix,
    pub dv: Matrix,
    pub dffn: Matrix,
}

impl ProjectionGrad {
    pub fn zeros_for(p: &Projection) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows, m.cols);
        Self {
            dq: z(&p.q),
            dk: z(&p.k),
            dv: z(&p.v),
            dffn: z(&p.ffn),
        }
    }
}

#[derive(Debug, Clone)]
struct HeadCache {
    probs: Matrix,
    xhat: Matrix,
    inv_std: Vec<f64>,
}

/// Everything [`mix_backward`] needs from the forward pass.
#[derive(Debug, Clone)]
pub struct MixCache {
    rows: Vec<usize>,
    attention: bool,
    heads: Vec<HeadCache>,
    concat: Matrix,
    zhat: Matrix,
    z_inv: Vec<f64>,
}

impl MixCache {
    /// Attention weights of head `h` (`r x r`, rows sum to one).
    pub fn attention_weights(&self, h: usize) -> Option<&Matrix> {
        self.heads.get(h).map(|c| &c.probs)
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    /// Pre-affine normalized output tokens of the final layer norm.
    pub fn normalized_output(&self) -> &Matrix {
        &self.zhat
    }

    /// Pre-affine normalized output of head `h`.
    pub fn normalized_head(&self, h: usize) -> Option<&Matrix> {
        self.heads.get(h).map(|c| &c.xhat)
    }
}

pub fn project(p: &AttentionParams, x: &Matrix, attention: bool) -> Projection {
    let (q, k, v) = if attention {
        (
            affine(x, &p.wq, None),
            affine(x, &p.wk, None),
            affine(x, &p.wv, None),
        )
    } else {
        (
            Matrix::zeros(0, 0),
            Matrix::zeros(0, 0),
            Matrix::zeros(0, 0),
        )
    };
    let ffn_pre = affine(x, &p.w1, Some(&p.b1));
    let mut ffn_act = ffn_pre.clone();
    ffn_act.data.iter_mut().for_each(|v| *v = gelu(*v));
    let ffn = affine(&ffn_act, &p.w2, Some(&p.b2));
    Projection {
        q,
        k,
        v,
        ffn_pre,
        ffn_act,
        ffn,
    }
}

/// Runs the block on the rows `rows` of `x` (in that order), using the
/// precomputed projection of `x`. With `attention == false` the attention
/// branch is dropped and the block reduces to `LN(X + FFN(X))`.
pub fn mix(
    p: &AttentionParams,
    cfg: &ModelConfig,
    x: &Matrix,
    proj: &Projection,
    rows: &[usize],
    attention: bool,
) -> (Matrix, MixCache) {
    let r = rows.len();
    let d = cfg.dim;
    let hd = cfg.head_dim();
    let inv_scale = 1.0 / cfg.key_scale().sqrt();

    let mut z = Matrix::zeros(r, d);
    for (i, &src) in rows.iter().enumerate() {
        let zr = z.row_mut(i);
        zr.copy_from_slice(x.row(src));
        axpy(1.0, proj.ffn.row(src), zr);
    }

    let mut heads = Vec::new();
    let mut concat = Matrix::zeros(0, 0);
    if attention {
        if cfg.combine == HeadCombine::ConcatProject {
            concat = Matrix::zeros(r, cfg.heads * hd);
        }
        heads.reserve(cfg.heads);
        let mut out = vec![0.0; hd];
        for h in 0..cfg.heads {
            let span = h * hd..(h + 1) * hd;
            let mut probs = Matrix::zeros(r, r);
            for i in 0..r {
                let qi = &proj.q.row(rows[i])[span.clone()];
                let pr = probs.row_mut(i);
                for (j, &rj) in rows.iter().enumerate() {
                    pr[j] = dot(qi, &proj.k.row(rj)[span.clone()]) * inv_scale;
                }
                softmax_in_place(pr);
            }
            let mut xhat = Matrix::zeros(r, hd);
            let mut inv_std = vec![0.0; r];
            let gain = p.head_gain.row(h);
            let bias = p.head_bias.row(h);
            for i in 0..r {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (j, &rj) in rows.iter().enumerate() {
                    axpy(probs.get(i, j), &proj.v.row(rj)[span.clone()], &mut out);
                }
                inv_std[i] = normalize(&out, xhat.row_mut(i));
                let xh = xhat.row(i);
                match cfg.combine {
                    HeadCombine::Sum => {
                        let zr = z.row_mut(i);
                        for c in 0..hd {
                            zr[c] += gain[c] * xh[c] + bias[c];
                        }
                    }
                    HeadCombine::ConcatProject => {
                        let cr = &mut concat.row_mut(i)[span.clone()];
                        for c in 0..hd {
                            cr[c] = gain[c] * xh[c] + bias[c];
                        }
                    }
                }
            }
            heads.push(HeadCache {
                probs,
                xhat,
                inv_std,
            });
        }
        if cfg.combine == HeadCombine::ConcatProject {
            let merged = affine(&concat, &p.wo, None);
            axpy(1.0, &merged.data, &mut z.data);
        }
    }

    let mut zhat = Matrix::zeros(r, d);
    let mut z_inv = vec![0.0; r];
    let mut y = Matrix::zeros(r, d);
    for i in 0..r {
        z_inv[i] = normalize(z.row(i), zhat.row_mut(i));
        let (zh, yr) = (zhat.row(i), y.row_mut(i));
        for c in 0..d {
            yr[c] = p.gain[c] * zh[c] + p.bias[c];
        }
    }
    let cache = MixCache {
        rows: rows.to_vec(),
        attention,
        heads,
        concat,
        zhat,
        z_inv,
    };
    (y, cache)
}

/// Backward of [`mix`]. Accumulates weight gradients into `grads`,
/// projection gradients into `dproj` and the residual-path input gradient
/// into `dx`, all at the original row positions.
#[allow(clippy::too_many_arguments)]
pub fn mix_backward(
    p: &AttentionParams,
    cfg: &ModelConfig,
    proj: &Projection,
    cache: &MixCache,
    dy: &Matrix,
    grads: &mut AttentionParams,
    dproj: &mut ProjectionGrad,
    dx: &mut Matrix,
) {
    let rows = &cache.rows;
    let r = rows.len();
    let d = cfg.dim;
    let hd = cfg.head_dim();
    let inv_scale = 1.0 / cfg.key_scale().sqrt();

    let mut dz = Matrix::zeros(r, d);
    for i in 0..r {
        let (dyr, zh) = (dy.row(i), cache.zhat.row(i));
        let dzr = dz.row_mut(i);
        for c in 0..d {
            grads.gain[c] += dyr[c] * zh[c];
            grads.bias[c] += dyr[c];
            dzr[c] = dyr[c] * p.gain[c];
        }
        normalize_backward(zh, cache.z_inv[i], dzr);
        axpy(1.0, dzr, dx.row_mut(rows[i]));
        axpy(1.0, dzr, dproj.dffn.row_mut(rows[i]));
    }
    if !cache.attention {
        return;
    }

    let dconcat = if cfg.combine == HeadCombine::ConcatProject {
        let mut dc = Matrix::zeros(r, cfg.heads * hd);
        affine_backward(
            &cache.concat,
            &p.wo,
            &dz,
            &mut grads.wo,
            None,
            Some(&mut dc),
        );
        dc
    } else {
        Matrix::zeros(0, 0)
    };

    let mut d_out = Matrix::zeros(r, hd);
    let mut dp = vec![0.0; r];
    for (h, hc) in cache.heads.iter().enumerate() {
        let span = h * hd..(h + 1) * hd;
        let gain = p.head_gain.row(h);
        // gradient w.r.t. the un-normalized head output
        for i in 0..r {
            let da: &[f64] = match cfg.combine {
                HeadCombine::Sum => dz.row(i),
                HeadCombine::ConcatProject => &dconcat.row(i)[span.clone()],
            };
            let xh = hc.xhat.row(i);
            let dor = d_out.row_mut(i);
            let gg = grads.head_gain.row_mut(h);
            for c in 0..hd {
                gg[c] += da[c] * xh[c];
                dor[c] = da[c] * gain[c];
            }
            axpy(1.0, da, grads.head_bias.row_mut(h));
            normalize_backward(xh, hc.inv_std[i], dor);
        }
        for i in 0..r {
            let doi = d_out.row(i);
            let pi = hc.probs.row(i);
            for (j, &rj) in rows.iter().enumerate() {
                dp[j] = dot(doi, &proj.v.row(rj)[span.clone()]);
                axpy(pi[j], doi, &mut dproj.dv.row_mut(rj)[span.clone()]);
            }
            let inner = dot(&dp, pi);
            for (j, &rj) in rows.iter().enumerate() {
                let ds = pi[j] * (dp[j] - inner) * inv_scale;
                if ds == 0.0 {
                    continue;
                }
                axpy(
                    ds,
                    &proj.k.row(rj)[span.clone()],
                    &mut dproj.dq.row_mut(rows[i])[span.clone()],
                );
                axpy(
                    ds,
                    &proj.q.row(rows[i])[span.clone()],
                    &mut dproj.dk.row_mut(rj)[span.clone()],
                );
            }
        }
    }
}

/// Backward of [`project`]: turns projection gradients into weight
/// gradients and (optionally) input gradients.
pub fn project_backward(
    p: &AttentionParams,
    x: &Matrix,
    proj: &Projection,
    dproj: &ProjectionGrad,
    attention: bool,
    grads: &mut AttentionParams,
    mut dx: Option<&mut Matrix>,
) {
    if attention {
        affine_backward(x, &p.wq, &dproj.dq, &mut grads.wq, None, dx.as_deref_mut());
        affine_backward(x, &p.wk, &dproj.dk, &mut grads.wk, None, dx.as_deref_mut());
        affine_backward(x, &p.wv, &dproj.dv, &mut grads.wv, None, dx.as_deref_mut());
    }
    let mut dact = Matrix::zeros(proj.ffn_act.rows, proj.ffn_act.cols);
    affine_backward(
        &proj.ffn_act,
        &p.w2,
        &dproj.dffn,
        &mut grads.w2,
        Some(&mut grads.b2),
        Some(&mut dact),
    );
    for (g, &pre) in dact.data.iter_mut().zip(&proj.ffn_pre.data) {
        *g *= gelu_grad(pre);
    }
    affine_backward(x, &p.w1, &dact, &mut grads.w1, Some(&mut grads.b1), dx);
}

/// Full block over every row of `x`.
pub fn attend(
    p: &AttentionParams,
    cfg: &ModelConfig,
    x: &Matrix,
    attention: bool,
) -> (Matrix, Projection, MixCache) {
    let proj = project(p, x, attention);
    let rows: Vec<usize> = (0..x.rows).collect();
    let (y, cache) = mix(p, cfg, x, &proj, &rows, attention);
    (y, proj, cache)
}

/// Backward of [`attend`]; returns the input gradient.
pub fn attend_backward(
    p: &AttentionParams,
    cfg: &ModelConfig,
    x: &Matrix,
    proj: &Projection,
    cache: &MixCache,
    dy: &Matrix,
    grads: &mut AttentionParams,
) -> Matrix {
    let mut dproj = ProjectionGrad::zeros_for(proj);
    let mut dx = Matrix::zeros(x.rows, x.cols);
    mix_backward(p, cfg, proj, cache, dy, grads, &mut dproj, &mut dx);
    project_backward(p, x, proj, &dproj, cache.attention, grads, Some(&mut dx));
    dx
}
