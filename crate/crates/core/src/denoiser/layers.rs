//! Dense kernels shared by inference and training, with hand-written
//! backward passes.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_K: f64 = 0.044_715;

pub(crate) struct LayerNormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Per-row layer norm with affine gain and bias.
pub(crate) fn layer_norm(
    x: ArrayView2<f64>,
    gain: ArrayView1<f64>,
    bias: ArrayView1<f64>,
) -> (Array2<f64>, LayerNormCache) {
    let (rows, cols) = x.dim();
    let mut xhat = Array2::zeros((rows, cols));
    let mut inv_std = Array1::zeros(rows);
    for (i, row) in x.outer_iter().enumerate() {
        let mean = row.sum() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = is;
        Zip::from(xhat.row_mut(i))
            .and(row)
            .for_each(|o, &v| *o = (v - mean) * is);
    }
    let mut out = xhat.clone();
    Zip::from(out.rows_mut()).for_each(|mut r| {
        Zip::from(&mut r)
            .and(gain)
            .and(bias)
            .for_each(|o, &g, &b| *o = *o * g + b);
    });
    (out, LayerNormCache { xhat, inv_std })
}

/// Returns `dx` and accumulates into `dgain`, `dbias`.
pub(crate) fn layer_norm_backward(
    dout: ArrayView2<f64>,
    cache: &LayerNormCache,
    gain: ArrayView1<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    let (rows, cols) = dout.dim();
    let n = cols as f64;
    let mut dx = Array2::zeros((rows, cols));
    for i in 0..rows {
        let d = dout.row(i);
        let xh = cache.xhat.row(i);
        Zip::from(&mut *dgain)
            .and(&d)
            .and(&xh)
            .for_each(|g, &dv, &x| *g += dv * x);
        Zip::from(&mut *dbias).and(&d).for_each(|b, &dv| *b += dv);
        let dxhat: Array1<f64> = &d * &gain;
        let mean_d = dxhat.sum() / n;
        let mean_dx = dxhat.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
        let is = cache.inv_std[i];
        Zip::from(dx.row_mut(i))
            .and(&dxhat)
            .and(&xh)
            .for_each(|o, &dh, &x| *o = is * (dh - mean_d - x * mean_dx));
    }
    dx
}

pub(crate) fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_K * u * u * u)).tanh())
}

pub(crate) fn gelu_grad(u: f64) -> f64 {
    let inner = GELU_C * (u + GELU_K * u * u * u);
    let th = inner.tanh();
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_K * u * u)
}

/// `x·W + b` with `b` broadcast over rows.
pub(crate) fn linear(x: ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Accumulates `dW += xᵀ·dy`, `db += Σ dy` and returns `dx = dy·Wᵀ`.
pub(crate) fn linear_backward(
    x: ArrayView2<f64>,
    dy: ArrayView2<f64>,
    w: &Array2<f64>,
    dw: &mut Array2<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    ndarray::linalg::general_mat_mul(1.0, &x.t(), &dy, 1.0, dw);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

pub(crate) fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            sum += e;
            e
        });
        row.mapv_inplace(|v| v / sum);
    }
}

/// Multi-head scaled dot-product attention. Queries, keys and values are
/// `tokens × dim`; heads split the feature axis evenly. Returns the
/// concatenated head outputs and the per-head attention probabilities.
pub(crate) fn multi_head_attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    heads: usize,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let (n, dim) = q.dim();
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((n, dim));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t());
        scores *= scale;
        softmax_rows(&mut scores);
        out.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    (out, probs)
}

/// Backward of [`multi_head_attention`]; returns `(dq, dk, dv)`.
pub(crate) fn multi_head_attention_backward(
    dout: ArrayView2<f64>,
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    probs: &[Array2<f64>],
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (n, dim) = q.dim();
    let heads = probs.len();
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros((n, dim));
    let mut dk = Array2::zeros((k.nrows(), dim));
    let mut dv = Array2::zeros((v.nrows(), dim));
    for (h, p) in probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let do_h = dout.slice(cols);
        dv.slice_mut(cols).assign(&p.t().dot(&do_h));
        let dp = do_h.dot(&v.slice(cols).t());
        let mut ds = Array2::zeros(p.raw_dim());
        for i in 0..p.nrows() {
            let pr = p.row(i);
            let dpr = dp.row(i);
            let dot: f64 = pr.iter().zip(dpr.iter()).map(|(a, b)| a * b).sum();
            Zip::from(ds.row_mut(i))
                .and(&pr)
                .and(&dpr)
                .for_each(|o, &pv, &dpv| *o = pv * (dpv - dot) * scale);
        }
        dq.slice_mut(cols).assign(&ds.dot(&k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&q.slice(cols)));
    }
    (dq, dk, dv)
}

/// Transformer-style sinusoidal embedding of a scalar time value.
pub(crate) fn sinusoidal_embedding(time: f64, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for j in 0..half {
        let freq = (-(10_000f64.ln()) * j as f64 / half as f64).exp();
        out[j] = (time * freq).sin();
        out[half + j] = (time * freq).cos();
    }
    out
}
