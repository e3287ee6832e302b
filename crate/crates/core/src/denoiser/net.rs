//! Forward pass with cached activations and the matching reverse pass.

use std::collections::BTreeMap;

use super::{ConditionBundle, DenoiserParams};
use crate::error::{Error, Result};
use crate::numerics::Array;
use crate::world::NUM_ID_ENCODERS;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `a (n×k) · b (k×m)`.
fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for j in 0..m {
                row[j] += av * brow[j];
            }
        }
    }
    out
}

/// `acc += aᵀ (n×k)ᵀ · b (n×m)`, giving `k×m`.
fn add_at_b(acc: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let out = &mut acc[p * m..(p + 1) * m];
            for j in 0..m {
                out[j] += av * brow[j];
            }
        }
    }
}

/// `a (n×m) · bᵀ` where `b` is `k×m`, giving `n×k`.
fn matmul_bt(a: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            out[i * k + p] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

fn add_rows(acc: &mut [f64], rows: &[f64], width: usize) {
    for r in rows.chunks(width) {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
}

fn time_features(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for j in 0..half {
        let freq = (-(10_000f64.ln()) * j as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[j] = arg.sin();
        out[half + j] = arg.cos();
    }
    out
}

#[derive(Debug, Clone)]
struct AdapterCache {
    name: String,
    raw: Vec<f64>,
    pre: Vec<f64>,
    hid: Vec<f64>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    h_in: Vec<f64>,
    pre: Vec<f64>,
    h_mid: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    attn: Vec<f64>,
}

/// Activations retained for [`ForwardCache::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    temb: Vec<f64>,
    adapters: Vec<AdapterCache>,
    cond_tokens: Vec<f64>,
    blocks: Vec<BlockCache>,
    h_final: Vec<f64>,
    pub output: Array,
}

impl ForwardCache {
    /// Attention weights of block `l`, `tokens × condition tokens`.
    pub fn attention(&self, l: usize) -> &[f64] {
        &self.blocks[l].probs
    }

    pub fn num_cond_tokens(&self) -> usize {
        self.adapters.len()
    }
}

fn check_inputs(p: &DenoiserParams, zt: &Array, cond: &ConditionBundle) -> Result<()> {
    let c = &p.config;
    let want = [c.data_dim];
    for a in [zt, &cond.masked_bkg] {
        if a.shape() != want {
            return Err(Error::ShapeMismatch {
                expected: want.to_vec(),
                got: a.shape().to_vec(),
            });
        }
    }
    if cond.id_embeds.len() > NUM_ID_ENCODERS {
        return Err(Error::InvalidArgument(format!(
            "{} identity embeddings, at most {NUM_ID_ENCODERS} supported",
            cond.id_embeds.len()
        )));
    }
    for e in &cond.id_embeds {
        if e.len() != c.id_embed_dim {
            return Err(Error::ShapeMismatch {
                expected: vec![c.id_embed_dim],
                got: e.shape().to_vec(),
            });
        }
    }
    if cond.exp_embed.len() != c.exp_embed_dim {
        return Err(Error::ShapeMismatch {
            expected: vec![c.exp_embed_dim],
            got: cond.exp_embed.shape().to_vec(),
        });
    }
    Ok(())
}

/// Forward pass keeping every intermediate needed by the reverse pass.
pub fn forward_cached(p: &DenoiserParams, zt: &Array, t: usize, cond: &ConditionBundle) -> Result<ForwardCache> {
    check_inputs(p, zt, cond)?;
    let c = &p.config;
    let (n, w, a_dim, cw, ah) = (c.tokens, c.width, c.attn_dim, c.cond_width, c.adapter_hidden);

    let mut input = Vec::with_capacity(2 * c.data_dim);
    input.extend_from_slice(zt.as_slice());
    input.extend_from_slice(cond.masked_bkg.as_slice());

    let temb = time_features(t, c.time_dim);
    let mut tproj = matmul(&temb, p.get("time.w"), 1, c.time_dim, w);
    for (x, b) in tproj.iter_mut().zip(p.get("time.b")) {
        *x += b;
    }
    let mut h = matmul(&input, p.get("in.w"), 1, 2 * c.data_dim, n * w);
    for (x, b) in h.iter_mut().zip(p.get("in.b")) {
        *x += b;
    }
    for tok in h.chunks_mut(w) {
        for (x, tp) in tok.iter_mut().zip(&tproj) {
            *x += tp;
        }
    }

    let mut adapters = Vec::new();
    let sources = cond
        .id_embeds
        .iter()
        .enumerate()
        .map(|(i, e)| (c.id_adapter(i), e))
        .chain(std::iter::once(("adapt.exp".to_string(), &cond.exp_embed)));
    let mut cond_tokens = Vec::new();
    for (name, raw) in sources {
        let rd = raw.len();
        let mut pre = matmul(raw.as_slice(), p.get(&format!("{name}.w1")), 1, rd, ah);
        for (x, b) in pre.iter_mut().zip(p.get(&format!("{name}.b1"))) {
            *x += b;
        }
        let hid: Vec<f64> = pre.iter().map(|v| silu(*v)).collect();
        let mut tok = matmul(&hid, p.get(&format!("{name}.w2")), 1, ah, cw);
        for (x, b) in tok.iter_mut().zip(p.get(&format!("{name}.b2"))) {
            *x += b;
        }
        cond_tokens.extend_from_slice(&tok);
        adapters.push(AdapterCache {
            name,
            raw: raw.as_slice().to_vec(),
            pre,
            hid,
        });
    }
    let m = adapters.len();
    let scale = 1.0 / (a_dim as f64).sqrt();

    let mut blocks = Vec::with_capacity(c.blocks);
    for l in 0..c.blocks {
        let h_in = h;
        let mut pre = matmul(&h_in, p.get(&format!("blk{l}.mlp.w")), n, w, w);
        let bias = p.get(&format!("blk{l}.mlp.b"));
        for row in pre.chunks_mut(w) {
            for (x, b) in row.iter_mut().zip(bias) {
                *x += b;
            }
        }
        let h_mid: Vec<f64> = h_in.iter().zip(&pre).map(|(x, a)| x + silu(*a)).collect();

        let q = matmul(&h_mid, p.get(&format!("blk{l}.attn.q")), n, w, a_dim);
        let k = matmul(&cond_tokens, p.get(&format!("blk{l}.attn.k")), m, cw, a_dim);
        let v = matmul(&cond_tokens, p.get(&format!("blk{l}.attn.v")), m, cw, a_dim);
        let mut probs = matmul_bt(&q, &k, n, a_dim, m);
        for row in probs.chunks_mut(m) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = ((*x - mx) * scale).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let attn = matmul(&probs, &v, n, m, a_dim);
        let proj = matmul(&attn, p.get(&format!("blk{l}.attn.o")), n, a_dim, w);
        h = h_mid.iter().zip(&proj).map(|(x, y)| x + y).collect();
        blocks.push(BlockCache {
            h_in,
            pre,
            h_mid,
            q,
            k,
            v,
            probs,
            attn,
        });
    }

    let mut out = matmul(&h, p.get("out.w"), 1, n * w, c.data_dim);
    for (x, b) in out.iter_mut().zip(p.get("out.b")) {
        *x += b;
    }
    Ok(ForwardCache {
        input,
        temb,
        adapters,
        cond_tokens,
        blocks,
        h_final: h,
        output: Array::vector(out),
    })
}

/// Predicted noise `ε̂(z_t, t, C)`.
pub fn forward(p: &DenoiserParams, zt: &Array, t: usize, cond: &ConditionBundle) -> Result<Array> {
    Ok(forward_cached(p, zt, t, cond)?.output)
}

fn acc<'a>(grads: &'a mut BTreeMap<String, Array>, name: &str) -> &'a mut [f64] {
    grads
        .get_mut(name)
        .unwrap_or_else(|| panic!("missing gradient slot {name}"))
        .as_mut_slice()
}

impl ForwardCache {
    /// Accumulate `∂L/∂θ` into `grads` given `upstream = ∂L/∂ε̂`, returning
    /// `∂L/∂z_t`.
    pub fn backward(&self, p: &DenoiserParams, upstream: &Array, grads: &mut BTreeMap<String, Array>) -> Result<Array> {
        let c = &p.config;
        if upstream.len() != c.data_dim {
            return Err(Error::ShapeMismatch {
                expected: vec![c.data_dim],
                got: upstream.shape().to_vec(),
            });
        }
        let (n, w, a_dim, cw, ah) = (c.tokens, c.width, c.attn_dim, c.cond_width, c.adapter_hidden);
        let hidden = n * w;
        let m = self.adapters.len();
        let scale = 1.0 / (a_dim as f64).sqrt();
        let dout = upstream.as_slice();

        add_at_b(acc(grads, "out.w"), &self.h_final, dout, 1, hidden, c.data_dim);
        add_rows(acc(grads, "out.b"), dout, c.data_dim);
        let mut dh = matmul_bt(dout, p.get("out.w"), 1, c.data_dim, hidden);

        let mut dtok = vec![0.0; m * cw];
        for l in (0..c.blocks).rev() {
            let b = &self.blocks[l];
            let wo = p.get(&format!("blk{l}.attn.o"));
            add_at_b(acc(grads, &format!("blk{l}.attn.o")), &b.attn, &dh, n, a_dim, w);
            let dattn = matmul_bt(&dh, wo, n, w, a_dim);

            // attn = probs · v
            let dprobs = matmul_bt(&dattn, &b.v, n, a_dim, m);
            let mut dv = vec![0.0; m * a_dim];
            add_at_b(&mut dv, &b.probs, &dattn, n, m, a_dim);

            // softmax rows, then the 1/√d scaling
            let mut dscores = vec![0.0; n * m];
            for i in 0..n {
                let pr = &b.probs[i * m..(i + 1) * m];
                let dp = &dprobs[i * m..(i + 1) * m];
                let dot: f64 = pr.iter().zip(dp).map(|(x, y)| x * y).sum();
                for j in 0..m {
                    dscores[i * m + j] = pr[j] * (dp[j] - dot) * scale;
                }
            }
            let dq = matmul(&dscores, &b.k, n, m, a_dim);
            let mut dk = vec![0.0; m * a_dim];
            add_at_b(&mut dk, &dscores, &b.q, n, m, a_dim);

            add_at_b(acc(grads, &format!("blk{l}.attn.q")), &b.h_mid, &dq, n, w, a_dim);
            add_at_b(acc(grads, &format!("blk{l}.attn.k")), &self.cond_tokens, &dk, m, cw, a_dim);
            add_at_b(acc(grads, &format!("blk{l}.attn.v")), &self.cond_tokens, &dv, m, cw, a_dim);

            let wq = p.get(&format!("blk{l}.attn.q"));
            let dh_mid_q = matmul_bt(&dq, wq, n, a_dim, w);
            for (x, y) in dtok.iter_mut().zip(matmul_bt(&dk, p.get(&format!("blk{l}.attn.k")), m, a_dim, cw)) {
                *x += y;
            }
            for (x, y) in dtok.iter_mut().zip(matmul_bt(&dv, p.get(&format!("blk{l}.attn.v")), m, a_dim, cw)) {
                *x += y;
            }
            let dh_mid: Vec<f64> = dh.iter().zip(&dh_mid_q).map(|(x, y)| x + y).collect();

            // h_mid = h_in + silu(h_in·W + b)
            let dpre: Vec<f64> = dh_mid.iter().zip(&b.pre).map(|(d, a)| d * silu_grad(*a)).collect();
            add_at_b(acc(grads, &format!("blk{l}.mlp.w")), &b.h_in, &dpre, n, w, w);
            add_rows(acc(grads, &format!("blk{l}.mlp.b")), &dpre, w);
            let through = matmul_bt(&dpre, p.get(&format!("blk{l}.mlp.w")), n, w, w);
            dh = dh_mid.iter().zip(&through).map(|(x, y)| x + y).collect();
        }

        for (j, ad) in self.adapters.iter().enumerate() {
            let dt = &dtok[j * cw..(j + 1) * cw];
            let name = &ad.name;
            add_at_b(acc(grads, &format!("{name}.w2")), &ad.hid, dt, 1, ah, cw);
            add_rows(acc(grads, &format!("{name}.b2")), dt, cw);
            let dhid = matmul_bt(dt, p.get(&format!("{name}.w2")), 1, cw, ah);
            let dpre: Vec<f64> = dhid.iter().zip(&ad.pre).map(|(d, a)| d * silu_grad(*a)).collect();
            add_at_b(acc(grads, &format!("{name}.w1")), &ad.raw, &dpre, 1, ad.raw.len(), ah);
            add_rows(acc(grads, &format!("{name}.b1")), &dpre, ah);
        }

        // h0 = input·W_in + b_in + broadcast(temb·W_t + b_t)
        add_at_b(acc(grads, "in.w"), &self.input, &dh, 1, 2 * c.data_dim, hidden);
        add_rows(acc(grads, "in.b"), &dh, hidden);
        let mut dtproj = vec![0.0; w];
        add_rows(&mut dtproj, &dh, w);
        add_at_b(acc(grads, "time.w"), &self.temb, &dtproj, 1, c.time_dim, w);
        add_rows(acc(grads, "time.b"), &dtproj, w);
        let dinput = matmul_bt(&dh, p.get("in.w"), 1, hidden, 2 * c.data_dim);
        Ok(Array::vector(dinput[..c.data_dim].to_vec()))
    }
}

/// Gradients of `⟨upstream, ε̂(z_t, t, C)⟩` with respect to every parameter
/// and to `z_t`.
pub fn backward(
    p: &DenoiserParams,
    zt: &Array,
    t: usize,
    cond: &ConditionBundle,
    upstream: &Array,
) -> Result<(BTreeMap<String, Array>, Array)> {
    let cache = forward_cached(p, zt, t, cond)?;
    let mut grads = p.zeros_like();
    let dz = cache.backward(p, upstream, &mut grads)?;
    Ok((grads, dz))
}
