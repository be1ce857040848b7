//! Analytic gradients of the noise-prediction loss
//! `mean((ε − ε_θ(x_t, t, c))²)` and a central-difference checker.

use ndarray::{s, Array1, Array2, Axis};

use super::layers::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward,
    multi_head_attention, multi_head_attention_backward, LayerNormCache,
};
use super::{Denoiser, Params};
use crate::attention_control::AttentionControl;
use crate::error::{check_shape, Result};
use crate::schedule::Timestep;
use crate::text::{TextCondition, TextSlot};
use crate::video::LatentVideo;

struct BlockCache {
    ln1: LayerNormCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln2: LayerNormCache,
    m: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

impl Denoiser {
    /// Loss without gradients, through the inference path.
    pub fn loss(
        &self,
        x_t: &LatentVideo,
        t: Timestep,
        cond: &TextCondition,
        target: &LatentVideo,
    ) -> Result<f64> {
        let pred = self.predict_eps(x_t, t, cond, &mut AttentionControl::off())?;
        Ok(pred.sub(target)?.mean_square())
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        x_t: &LatentVideo,
        t: Timestep,
        cond: &TextCondition,
        target: &LatentVideo,
    ) -> Result<(f64, Params)> {
        check_shape(&x_t.shape().dims(), &target.shape().dims())?;
        let cfg = &self.config;
        let tl = cfg.text_len;
        let p = &self.params;

        // Forward with caches.
        let text = self.embed_text(cond)?;
        let patches = self.patchify(x_t)?;
        let img = linear(patches.view(), &p.outer.patch_w, &p.outer.patch_b) + &p.outer.img_pos;
        let mut h =
            ndarray::concatenate(Axis(0), &[text.view(), img.view()]).expect("widths match");
        let features = self.time_features(t);
        let mut caches = Vec::with_capacity(cfg.num_blocks);
        for (b, bp) in p.blocks.iter().enumerate() {
            let temb = self.block_time(b, &features);
            let x = &h + &temb;
            let (a, ln1) = layer_norm(x.view(), bp.ln1_g.view(), bp.ln1_b.view());
            let q = linear(a.view(), &bp.wq, &bp.bq);
            let k = linear(a.view(), &bp.wk, &bp.bk);
            let v = linear(a.view(), &bp.wv, &bp.bv);
            let (o, probs) = multi_head_attention(q.view(), k.view(), v.view(), cfg.heads);
            let y = &x + &linear(o.view(), &bp.wo, &bp.bo);
            let (m, ln2) = layer_norm(y.view(), bp.ln2_g.view(), bp.ln2_b.view());
            let u = linear(m.view(), &bp.w1, &bp.b1);
            let g = u.mapv(gelu);
            h = &y + &linear(g.view(), &bp.w2, &bp.b2);
            caches.push(BlockCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                o,
                ln2,
                m,
                u,
                g,
            });
        }
        let h_img = h.slice(s![tl.., ..]);
        let (f, lnf) = layer_norm(h_img, p.outer.final_ln_g.view(), p.outer.final_ln_b.view());
        let out = linear(f.view(), &p.outer.out_w, &p.outer.out_b);
        let target_tokens = self.patchify(target)?;
        let diff = &out - &target_tokens;
        let numel = diff.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / numel;

        // Backward.
        let mut grads = p.zeros_like();
        let dout = diff.mapv(|d| 2.0 * d / numel);
        let gout = &mut grads.outer;
        let df = linear_backward(
            f.view(),
            dout.view(),
            &p.outer.out_w,
            &mut gout.out_w,
            &mut gout.out_b,
        );
        let dh_img = layer_norm_backward(
            df.view(),
            &lnf,
            p.outer.final_ln_g.view(),
            &mut gout.final_ln_g,
            &mut gout.final_ln_b,
        );
        let mut dh = Array2::zeros(h.raw_dim());
        dh.slice_mut(s![tl.., ..]).assign(&dh_img);

        for (b, cache) in caches.iter().enumerate().rev() {
            let bp = &p.blocks[b];
            let gb = &mut grads.blocks[b];
            // h' = y + GELU(LN2(y)·W1 + b1)·W2 + b2
            let mut dy = dh.clone();
            let dg = linear_backward(cache.g.view(), dh.view(), &bp.w2, &mut gb.w2, &mut gb.b2);
            let mut du = dg;
            ndarray::Zip::from(&mut du)
                .and(&cache.u)
                .for_each(|d, &u| *d *= gelu_grad(u));
            let dm = linear_backward(cache.m.view(), du.view(), &bp.w1, &mut gb.w1, &mut gb.b1);
            dy += &layer_norm_backward(
                dm.view(),
                &cache.ln2,
                bp.ln2_g.view(),
                &mut gb.ln2_g,
                &mut gb.ln2_b,
            );
            // y = x + Attn(LN1(x))·Wo + bo
            let mut dx = dy.clone();
            let d_o = linear_backward(cache.o.view(), dy.view(), &bp.wo, &mut gb.wo, &mut gb.bo);
            let (dq, dk, dv) = multi_head_attention_backward(
                d_o.view(),
                cache.q.view(),
                cache.k.view(),
                cache.v.view(),
                &cache.probs,
            );
            let mut da = linear_backward(cache.a.view(), dq.view(), &bp.wq, &mut gb.wq, &mut gb.bq);
            da += &linear_backward(cache.a.view(), dk.view(), &bp.wk, &mut gb.wk, &mut gb.bk);
            da += &linear_backward(cache.a.view(), dv.view(), &bp.wv, &mut gb.wv, &mut gb.bv);
            dx += &layer_norm_backward(
                da.view(),
                &cache.ln1,
                bp.ln1_g.view(),
                &mut gb.ln1_g,
                &mut gb.ln1_b,
            );
            // x = h + W_t·sin(τ) + b_t
            let dtemb: Array1<f64> = dx.sum_axis(Axis(0));
            for (i, fi) in features.iter().enumerate() {
                gb.time_w.row_mut(i).scaled_add(*fi, &dtemb);
            }
            gb.time_b += &dtemb;
            dh = dx;
        }

        let gout = &mut grads.outer;
        for (i, slot) in cond.slots().iter().enumerate() {
            if let TextSlot::Token(tok) = slot {
                let row = dh.row(i);
                gout.token_emb.row_mut(tok.0 as usize).scaled_add(1.0, &row);
                gout.text_pos.row_mut(i).scaled_add(1.0, &row);
            }
        }
        let dimg = dh.slice(s![tl.., ..]);
        gout.img_pos += &dimg;
        ndarray::linalg::general_mat_mul(1.0, &patches.t(), &dimg, 1.0, &mut gout.patch_w);
        gout.patch_b += &dimg.sum_axis(Axis(0));

        Ok((loss, grads))
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_parameter: String,
}

/// Compares every analytic parameter gradient against a central finite
/// difference with step `h`. Relative error is
/// `|a − n| / max(|a|, |n|, floor)`.
pub fn finite_difference_check(
    model: &Denoiser,
    x_t: &LatentVideo,
    t: Timestep,
    cond: &TextCondition,
    target: &LatentVideo,
    h: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = model.loss_and_grad(x_t, t, cond, target)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .views()
        .into_iter()
        .map(|v| (v.name, v.data.to_vec()))
        .collect();
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_parameter: String::new(),
    };
    for (pi, (name, grad)) in analytic.iter().enumerate() {
        for (j, &a) in grad.iter().enumerate() {
            let original = probe.params().views()[pi].data[j];
            set_param(&mut probe, pi, j, original + h);
            let lp = probe.loss(x_t, t, cond, target)?;
            set_param(&mut probe, pi, j, original - h);
            let lm = probe.loss(x_t, t, cond, target)?;
            set_param(&mut probe, pi, j, original);
            let n = (lp - lm) / (2.0 * h);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_parameter = format!("{name}[{j}]");
            }
        }
    }
    Ok(report)
}

fn set_param(model: &mut Denoiser, tensor: usize, index: usize, value: f64) {
    let mut views = model.params_mut().views_mut();
    views[tensor].1[index] = value;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;
    use crate::schedule::NoiseSchedule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cached_loss_matches_inference_loss() {
        let mut m = Denoiser::new(DenoiserConfig::micro(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        m.params_mut()
            .outer
            .out_w
            .mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let s = NoiseSchedule::default_inference();
        let x = LatentVideo::randn(m.config().video_shape(), &mut rng);
        let e = LatentVideo::randn(m.config().video_shape(), &mut rng);
        let cond = TextCondition::parse("scene heavy rain", 4).unwrap();
        let (l1, _) = m.loss_and_grad(&x, s.timestep(30), &cond, &e).unwrap();
        let l2 = m.loss(&x, s.timestep(30), &cond, &e).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut m = Denoiser::new(DenoiserConfig::micro(), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        m.params_mut()
            .outer
            .out_w
            .mapv_inplace(|_| rng.random_range(-0.5..0.5));
        m.params_mut()
            .outer
            .out_b
            .mapv_inplace(|_| rng.random_range(-0.1..0.1));
        let s = NoiseSchedule::default_inference();
        let x = LatentVideo::randn(m.config().video_shape(), &mut rng);
        let e = LatentVideo::randn(m.config().video_shape(), &mut rng);
        let cond = TextCondition::parse("scene light rain", 4).unwrap();
        let r = finite_difference_check(&m, &x, s.timestep(40), &cond, &e, 1e-5, 1e-6).unwrap();
        assert_eq!(r.checked, m.params().num_parameters());
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }
}
