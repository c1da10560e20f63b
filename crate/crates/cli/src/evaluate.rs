use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use turbrestore_core::metrics::{format_metric, mean_endpoint_error, psnr, rmse};
use turbrestore_core::warp::load_flows_dir;
use turbrestore_core::{frame_quality_check, load_pgm, load_sequence_dir, temporal_mean, RunManifest};

use crate::error::CliError;
use crate::EvaluateArgs;

/// One `metric,index,value` row; `index` is empty for scalar metrics.
type Row = (&'static str, Option<usize>, f64);

pub fn run(args: EvaluateArgs) -> Result<(), CliError> {
    let restored = load_pgm(&args.restored)?;
    let truth = args.truth.as_ref().map(load_pgm).transpose()?;
    let mut rows: Vec<Row> = Vec::new();

    if let Some(t) = &truth {
        rows.push(("rmse", None, rmse(&restored, t)?));
        rows.push(("psnr", None, psnr(&restored, t)?));
    }
    if let Some(dir) = &args.frames {
        let seq = load_sequence_dir(dir)?;
        for (i, d) in frame_quality_check(&seq, &restored)?.into_iter().enumerate() {
            rows.push(("frame_l2", Some(i), d));
        }
        if let Some(t) = &truth {
            for (i, f) in seq.iter().enumerate() {
                rows.push(("frame_rmse", Some(i), rmse(f, t)?));
            }
            rows.push(("temporal_mean_rmse", None, rmse(&temporal_mean(&seq), t)?));
        }
    }
    if let (Some(est_dir), Some(true_dir)) = (&args.flows, &args.true_flows) {
        let est = load_flows_dir(est_dir)?;
        let truth_flows = load_flows_dir(true_dir)?;
        if est.len() != truth_flows.len() {
            return Err(CliError::Input(format!(
                "{} holds {} flows but {} holds {}",
                est_dir.display(),
                est.len(),
                true_dir.display(),
                truth_flows.len()
            )));
        }
        let mut sum = 0.0;
        for (i, (e, t)) in est.iter().zip(&truth_flows).enumerate() {
            let epe = mean_endpoint_error(e, t, 0)?;
            sum += epe;
            rows.push(("flow_epe", Some(i), epe));
        }
        rows.push(("mean_flow_epe", None, sum / est.len() as f64));
    }

    match &args.output {
        Some(path) => {
            let file = File::create(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            write_rows(file, &rows, path)?;
        }
        None => write_rows(io::stdout().lock(), &rows, Path::new("<stdout>"))?,
    }

    let manifest_path = args
        .manifest
        .clone()
        .or_else(|| args.output.as_ref().map(|p| p.with_extension("manifest.txt")));
    if let Some(path) = manifest_path {
        let mut m = RunManifest::new("evaluate");
        m.set("restored", args.restored.display());
        let opt = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        m.set("truth", opt(&args.truth));
        m.set("frames", opt(&args.frames));
        m.set("flows", opt(&args.flows));
        m.set("true_flows", opt(&args.true_flows));
        m.set("output", opt(&args.output));
        m.save(path)?;
    }
    Ok(())
}

fn write_rows(out: impl Write, rows: &[Row], path: &Path) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "index", "value"]).map_err(err)?;
    for (name, index, value) in rows {
        let index = index.map_or(String::new(), |i| i.to_string());
        w.write_record([*name, index.as_str(), format_metric(*value).as_str()])
            .map_err(err)?;
    }
    w.flush()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
