//! Held-out evaluation of a trained field.

use crate::config::RunConfig;
use crate::dataset::{Dataset, Split, View};
use crate::encoding::SourceView;
use crate::error::{Error, Result};
use crate::field::FieldParams;
use crate::metrics::{image_mse, mse, psnr_from_mse, ssim, EvalReport, MeanMetrics, Score, ViewMetrics};
use crate::rendering::{render_image, RenderOutput};
use crate::skeleton::{bbox_diagonal, extract_skeleton, pck, project_skeleton};

fn source_for(dataset: &Dataset, params: &FieldParams) -> Result<Option<SourceView>> {
    if params.config.feature_dim == 0 {
        Ok(None)
    } else {
        dataset.source().map(Some)
    }
}

/// Deterministic render of one dataset view.
pub fn render_view(params: &FieldParams, dataset: &Dataset, view: usize, n_samples: usize) -> Result<RenderOutput> {
    let v = dataset.view(view)?;
    let source = source_for(dataset, params)?;
    render_image(params, &v.camera, source.as_ref(), n_samples)
}

/// Scores one rendered view against its ground truth.
pub fn score_view(render: &RenderOutput, view: &View, dataset: &Dataset, cfg: &RunConfig) -> Result<ViewMetrics> {
    let teacher = view
        .teacher
        .as_ref()
        .ok_or_else(|| Error::Dataset(format!("view {} has no teacher heatmaps", view.index)))?;
    let mse_color = image_mse(&render.image, &view.image)?;
    let pred = extract_skeleton(&render.heatmaps, &dataset.manifest.bones, &cfg.skeleton)?;
    let gt = project_skeleton(&dataset.manifest.joints3d, &dataset.manifest.bones, &view.camera);
    let diag = bbox_diagonal(&gt);
    let pck_value = if diag > 0.0 { pck(&pred, &gt, cfg.pck_alpha, diag)? } else { 1.0 };
    Ok(ViewMetrics {
        view: view.index,
        psnr: Score(psnr_from_mse(mse_color, 1.0)),
        ssim: ssim(&render.image, &view.image, 1.0)?,
        mse_color,
        mse_heat: mse(&render.heatmaps.values, &teacher.values)?,
        pck: pck_value,
    })
}

/// Renders and scores every test view.
pub fn evaluate(params: &FieldParams, dataset: &Dataset, cfg: &RunConfig) -> Result<EvalReport> {
    let tests = dataset.split(Split::Test);
    if tests.is_empty() {
        return Err(Error::Dataset("dataset has no test views".into()));
    }
    let mut views = Vec::with_capacity(tests.len());
    for view in tests {
        let render = render_view(params, dataset, view.index, cfg.eval_samples)?;
        views.push(score_view(&render, view, dataset, cfg)?);
    }
    Ok(EvalReport {
        mean: MeanMetrics::of(&views),
        views,
        pck_alpha: cfg.pck_alpha,
        sigma_g: cfg.skeleton.sigma_g,
        tau: cfg.skeleton.tau,
        eval_samples: cfg.eval_samples,
    })
}
