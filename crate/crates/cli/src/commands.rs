use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use derain_core::analysis::{
    default_rain_angle, inversion_sweep, prompt_probe, welch_t, InversionMethod,
};
use derain_core::attention_control::block_impact_study;
use derain_core::denoiser::{train_toy as train, TrainExample};
use derain_core::inversion::{ddpm_invert, reconstruct};
use derain_core::metrics::psnr;
use derain_core::pipeline::{derain as derain_video, InvertWith};
use derain_core::plot::line_chart;
use derain_core::synthetic_rain::{make_dataset, make_rainy_set};
use derain_core::video::{encode_ppm, latent_to_pixels, pixels_to_latent};
use derain_core::{
    AttentionControl, Denoiser, LatentVideo, MetricsReport, SceneBundle, TensorContainer,
    TextCondition,
};
use serde_json::json;

use crate::run::Run;

pub const VIDEO_ENTRY: &str = "video";

fn json_bytes(v: &serde_json::Value) -> anyhow::Result<Vec<u8>> {
    Ok((serde_json::to_string_pretty(v)? + "\n").into_bytes())
}

fn video_container(pixels: &LatentVideo) -> anyhow::Result<Vec<u8>> {
    let mut c = TensorContainer::new();
    c.insert_video(VIDEO_ENTRY, pixels)?;
    Ok(c.to_bytes())
}

fn write_frames(r: &mut Run, prefix: &str, pixels: &LatentVideo) -> anyhow::Result<()> {
    for f in 0..pixels.shape().frames {
        r.write(&format!("{prefix}_f{f}.ppm"), &encode_ppm(pixels, f)?)?;
    }
    Ok(())
}

fn load_model(r: &mut Run) -> anyhow::Result<Denoiser> {
    let path = r.config().checkpoint.clone();
    let bytes = r.read_input(&path)?;
    let model = Denoiser::from_container(&TensorContainer::from_bytes(&bytes)?)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    if model.config() != &r.config().model {
        log::warn!("checkpoint model config differs from the run config; using the checkpoint's");
    }
    Ok(model)
}

enum Input {
    Scene(Box<SceneBundle>),
    Video(LatentVideo),
}

impl Input {
    fn pixels(&self) -> &LatentVideo {
        match self {
            Input::Scene(b) => &b.rainy,
            Input::Video(v) => v,
        }
    }
}

/// A scene container from gen-data, or any container with a `video` entry.
fn load_input(r: &mut Run, path: &Path) -> anyhow::Result<Input> {
    let c = TensorContainer::from_bytes(&r.read_input(path)?)?;
    if c.get("rainy").is_some() {
        Ok(Input::Scene(Box::new(SceneBundle::from_container(&c)?)))
    } else {
        Ok(Input::Video(c.get_video(VIDEO_ENTRY)?))
    }
}

fn require_input(r: &Run) -> anyhow::Result<std::path::PathBuf> {
    r.config().input.clone().context("--input is required")
}

fn caption_corpus(r: &Run) -> anyhow::Result<Vec<TextCondition>> {
    let c = r.config();
    let set = make_dataset(
        c.data.train_videos,
        c.data.train_seed,
        c.model.video_shape(),
    )?;
    Ok(set.into_iter().map(|b| b.caption).collect())
}

fn eval_set(r: &Run, model: &Denoiser) -> anyhow::Result<Vec<SceneBundle>> {
    let c = r.config();
    Ok(make_rainy_set(
        c.data.eval_videos,
        c.data.eval_seed,
        model.config().video_shape(),
    )?)
}

pub fn gen_data(r: &mut Run) -> anyhow::Result<()> {
    let c = r.config().clone();
    let shape = c.model.video_shape();
    for (i, b) in make_dataset(c.data.train_videos, c.data.train_seed, shape)?
        .iter()
        .enumerate()
    {
        r.write(
            &format!("train/scene_{i:04}.vdt"),
            &b.to_container()?.to_bytes(),
        )?;
    }
    for (i, b) in make_rainy_set(c.data.eval_videos, c.data.eval_seed, shape)?
        .iter()
        .enumerate()
    {
        r.write(
            &format!("eval/scene_{i:04}.vdt"),
            &b.to_container()?.to_bytes(),
        )?;
        write_frames(r, &format!("eval/frames/scene_{i:04}_rainy"), &b.rainy)?;
        write_frames(r, &format!("eval/frames/scene_{i:04}_clean"), &b.clean)?;
    }
    Ok(())
}

pub fn train_toy(r: &mut Run) -> anyhow::Result<()> {
    let c = r.config().clone();
    let data: Vec<TrainExample> = make_dataset(
        c.data.train_videos,
        c.data.train_seed,
        c.model.video_shape(),
    )?
    .into_iter()
    .map(|b| TrainExample {
        latent: pixels_to_latent(&b.rainy),
        caption: b.caption,
    })
    .collect();
    let model = Denoiser::new(c.model.clone(), c.train.seed)?;
    log::info!(
        "training {} parameters on {} videos for {} steps",
        model.params().num_parameters(),
        data.len(),
        c.train.steps
    );
    let (model, report) = train(model, &data, &c.schedule.training()?, &c.train)?;
    r.write("model.vdt", &model.to_container()?.to_bytes())?;
    r.write(
        "train_report.json",
        &json_bytes(&serde_json::to_value(&report)?)?,
    )?;
    let mut csv = String::from("step,loss_ema\n");
    for (s, l) in &report.history {
        let _ = writeln!(csv, "{s},{l}");
    }
    r.write("loss.csv", csv.as_bytes())?;
    if !report.history.is_empty() {
        let xs: Vec<f64> = report.history.iter().map(|h| h.0 as f64).collect();
        let ys: Vec<f64> = report.history.iter().map(|h| h.1).collect();
        let svg = line_chart(
            "Training loss",
            "step",
            "loss (EMA)",
            &xs,
            &[("loss".into(), ys)],
        );
        r.write("loss.svg", svg.as_bytes())?;
    }
    Ok(())
}

pub fn invert(r: &mut Run) -> anyhow::Result<()> {
    let model = load_model(r)?;
    let path = require_input(r)?;
    let input = load_input(r, &path)?;
    let c = r.config().clone();
    let s = c.schedule.inference()?;
    let text_len = model.config().text_len;
    let cond = match c.invert_with {
        InvertWith::Null => TextCondition::null(text_len),
        InvertWith::Concept => TextCondition::parse(&c.concept, text_len)?,
    };
    let x0 = pixels_to_latent(input.pixels());
    let record = ddpm_invert(&x0, &cond, &model, &s, c.seed)?;
    let recon = reconstruct(
        &record,
        &cond,
        &model,
        &s,
        None,
        &mut AttentionControl::off(),
    )?;
    r.write("record.vdt", &record.to_container()?.to_bytes())?;
    let pixels = latent_to_pixels(&recon);
    r.write("reconstruction.vdt", &video_container(&pixels)?)?;
    write_frames(r, "frames/reconstruction", &pixels)?;
    let err = recon.max_abs_diff(&x0)?;
    let latent_psnr = psnr(&recon, &x0, 2.0)?;
    log::info!("reconstruction max |error| {err:.3e}, latent PSNR {latent_psnr:.1} dB");
    let report = json!({
        "condition": cond.to_string(),
        "max_abs_error": err,
        "latent_psnr_db": if latent_psnr.is_finite() { json!(latent_psnr) } else { json!("inf") },
    });
    r.write("invert_report.json", &json_bytes(&report)?)?;
    Ok(())
}

fn metrics_pair(
    b: &SceneBundle,
    output: &LatentVideo,
) -> anyhow::Result<(MetricsReport, MetricsReport)> {
    Ok((
        MetricsReport::compute(&b.rainy, &b.clean, &b.flow, &b.rain_mask)?,
        MetricsReport::compute(output, &b.clean, &b.flow, &b.rain_mask)?,
    ))
}

/// Headline comparison of an output against its rainy input.
fn verdict(input: &MetricsReport, output: &MetricsReport) -> serde_json::Value {
    let ratio = if input.rain_residual > 0.0 {
        output.rain_residual / input.rain_residual
    } else {
        0.0
    };
    let gain = output.psnr_vs_clean - input.psnr_vs_clean;
    json!({
        "rain_residual_ratio": ratio,
        "rain_residual_ratio_max": 0.5,
        "psnr_gain_db": gain,
        "psnr_gain_min_db": 1.0,
        "warp_error_input": input.warp_error,
        "warp_error_output": output.warp_error,
        "pass": ratio <= 0.5 && gain >= 1.0 && output.warp_error < input.warp_error,
    })
}

pub fn derain(r: &mut Run) -> anyhow::Result<()> {
    let model = load_model(r)?;
    let c = r.config().clone();
    let s = c.schedule.inference()?;
    let opts = c.derain_options()?;
    let corpus = caption_corpus(r)?;
    let inputs: Vec<(String, Input)> = match &c.input {
        Some(p) => vec![("single".into(), load_input(r, p)?)],
        None => eval_set(r, &model)?
            .into_iter()
            .enumerate()
            .map(|(i, b)| (format!("video_{i:02}"), Input::Scene(Box::new(b))))
            .collect(),
    };
    let mut summary = Vec::new();
    let mut csv = String::from("video,input_rain_residual,output_rain_residual,input_psnr,output_psnr,input_warp_error,output_warp_error\n");
    for (name, input) in &inputs {
        let out = derain_video(&model, &s, input.pixels(), &opts, &corpus)?;
        log::info!(
            "{name}: derained with negative prompt {}",
            out.negative_condition
        );
        r.write(
            &format!("{name}/derained.vdt"),
            &video_container(&out.pixels)?,
        )?;
        write_frames(r, &format!("{name}/frames/derained"), &out.pixels)?;
        if let Input::Scene(b) = input {
            let (mi, mo) = metrics_pair(b, &out.pixels)?;
            write_frames(r, &format!("{name}/frames/rainy"), &b.rainy)?;
            r.write(
                &format!("{name}/metrics.json"),
                &json_bytes(&json!({"input": mi.to_json(), "output": mo.to_json(), "verdict": verdict(&mi, &mo)}))?,
            )?;
            let _ = writeln!(
                csv,
                "{name},{},{},{},{},{},{}",
                mi.rain_residual,
                mo.rain_residual,
                mi.psnr_vs_clean,
                mo.psnr_vs_clean,
                mi.warp_error,
                mo.warp_error
            );
            summary.push((mi, mo));
        }
    }
    if !summary.is_empty() {
        let n = summary.len() as f64;
        let mean = |f: &dyn Fn(&(MetricsReport, MetricsReport)) -> f64| {
            summary.iter().map(f).sum::<f64>() / n
        };
        let ri = mean(&|p| p.0.rain_residual);
        let ro = mean(&|p| p.1.rain_residual);
        let pi = mean(&|p| p.0.psnr_vs_clean);
        let po = mean(&|p| p.1.psnr_vs_clean);
        let wi = mean(&|p| p.0.warp_error);
        let wo = mean(&|p| p.1.warp_error);
        log::info!("mean rain residual {ri:.5} -> {ro:.5}, PSNR {pi:.2} -> {po:.2} dB, warp error {wi:.5} -> {wo:.5}");
        r.write("metrics.csv", csv.as_bytes())?;
        let s = json!({
            "videos": summary.len(),
            "lambda": opts.lambda,
            "t_skip": opts.t_skip,
            "prompt_mode": opts.prompt_mode,
            "mean_input_rain_residual": ri,
            "mean_output_rain_residual": ro,
            "mean_input_psnr": pi,
            "mean_output_psnr": po,
            "mean_input_warp_error": wi,
            "mean_output_warp_error": wo,
        });
        r.write("summary.json", &json_bytes(&s)?)?;
    }
    Ok(())
}

fn parse_prompts(prompts: &[String], text_len: usize) -> anyhow::Result<Vec<TextCondition>> {
    Ok(prompts
        .iter()
        .map(|p| TextCondition::parse(p, text_len))
        .collect::<Result<_, _>>()?)
}

pub fn analyze_blocks(r: &mut Run) -> anyhow::Result<()> {
    let model = load_model(r)?;
    let c = r.config().clone();
    let s = c.schedule.inference()?;
    let prompts = parse_prompts(&c.analysis.block_prompts, model.config().text_len)?;
    let sel = block_impact_study(
        &model,
        &s,
        &prompts,
        &c.analysis.block_seeds,
        c.analysis.block_threshold_db,
    )?;
    log::info!("selected blocks {:?}", sel.selected);
    r.write("blocks.csv", sel.to_csv().as_bytes())?;
    r.write("blocks.svg", sel.to_svg().as_bytes())?;
    let scores: Vec<serde_json::Value> = sel
        .impact_scores
        .iter()
        .map(|&p| {
            if p.is_finite() {
                json!(p)
            } else {
                json!(p.to_string())
            }
        })
        .collect();
    let j = json!({"impact_scores": scores, "threshold_db": sel.threshold_db, "selected": sel.selected});
    r.write("blocks.json", &json_bytes(&j)?)?;
    Ok(())
}

pub fn sweep_inversion(r: &mut Run) -> anyhow::Result<()> {
    let model = load_model(r)?;
    let c = r.config().clone();
    let s = c.schedule.inference()?;
    let videos: Vec<LatentVideo> = eval_set(r, &model)?
        .into_iter()
        .take(c.analysis.sweep_videos)
        .map(|b| b.rainy)
        .collect();
    let table = inversion_sweep(
        &model,
        &s,
        &videos,
        &c.analysis.sweep_t_skips,
        &InversionMethod::ALL,
        c.seed,
    )?;
    r.write("sweep.csv", table.to_csv().as_bytes())?;
    r.write("sweep.svg", table.to_svg().as_bytes())?;
    let spread: serde_json::Map<String, serde_json::Value> = InversionMethod::ALL
        .iter()
        .map(|&m| (m.name().to_string(), json!(table.spread(m))))
        .collect();
    r.write(
        "sweep_spread.json",
        &json_bytes(&json!({ "psnr_spread_db": spread }))?,
    )?;
    Ok(())
}

pub fn probe_prompts(r: &mut Run) -> anyhow::Result<()> {
    let model = load_model(r)?;
    let c = r.config().clone();
    let s = c.schedule.inference()?;
    let prompts = parse_prompts(&c.analysis.probe_prompts, model.config().text_len)?;
    let angle = default_rain_angle();
    let reports = prompts
        .iter()
        .map(|p| prompt_probe(&model, &s, p, &c.analysis.probe_seeds, angle))
        .collect::<Result<Vec<_>, _>>()?;
    let mut csv = String::from("condition,rain_energy,background_energy,welch_t_vs_first\n");
    for rep in &reports {
        let t = welch_t(&rep.per_seed_rain_energy, &reports[0].per_seed_rain_energy);
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            rep.condition, rep.rain_energy, rep.background_energy, t
        );
        log::info!(
            "{:>18}: rain {:.5}  background {:.5}  t {:+.2}",
            rep.condition,
            rep.rain_energy,
            rep.background_energy,
            t
        );
    }
    r.write("probe.csv", csv.as_bytes())?;
    r.write("probe.json", &json_bytes(&serde_json::to_value(&reports)?)?)?;
    Ok(())
}

pub fn evaluate(r: &mut Run) -> anyhow::Result<()> {
    let path = require_input(r)?;
    let Input::Scene(b) = load_input(r, &path)? else {
        anyhow::bail!("evaluate needs a scene container with clean frames and flow as --input");
    };
    let dpath = r
        .config()
        .derained
        .clone()
        .context("--derained is required")?;
    let derained = TensorContainer::from_bytes(&r.read_input(&dpath)?)?.get_video(VIDEO_ENTRY)?;
    let (mi, mo) = metrics_pair(&b, &derained)?;
    let v = verdict(&mi, &mo);
    log::info!("{v}");
    r.write(
        "evaluate.json",
        &json_bytes(&json!({"input": mi.to_json(), "output": mo.to_json(), "verdict": v}))?,
    )?;
    r.write("input_metrics.csv", mi.to_csv().as_bytes())?;
    r.write("output_metrics.csv", mo.to_csv().as_bytes())?;
    Ok(())
}
