use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use turbrestore_core::pgm::save_sequence_dir;
use turbrestore_core::solver::REPORT_COLUMNS;
use turbrestore_core::warp::save_flows_dir;
use turbrestore_core::{
    load_sequence_dir, restore, save_pgm, sliding_window_restore, BitDepth, RestoreReport, RunManifest,
    SolverConfig,
};

use crate::error::CliError;
use crate::{Depth, RestoreArgs};

/// Everything a restore run depends on, either from flags or from a manifest.
struct Plan {
    input: PathBuf,
    output: PathBuf,
    window: Option<usize>,
    depth: BitDepth,
    cfg: SolverConfig,
    report: PathBuf,
    manifest: PathBuf,
    dump_flows: Option<PathBuf>,
}

pub fn run(args: RestoreArgs) -> Result<(), CliError> {
    let plan = match &args.replay {
        Some(path) => plan_from_manifest(&RunManifest::load(path)?, &args)?,
        None => plan_from_flags(&args)?,
    };
    if plan.window.is_some() && plan.dump_flows.is_some() {
        return Err(CliError::Usage("--dump-flows is not available with --window".into()));
    }
    plan.cfg.validate()?;

    let seq = load_sequence_dir(&plan.input)?;
    let stable = reproducible();
    let mut manifest = RunManifest::new("restore");
    record(&mut manifest, &plan, seq.len());

    match plan.window {
        None => {
            let result = restore(&seq, &plan.cfg)?;
            save_pgm(&result.image.clamp_values(0.0, 1.0), &plan.output, plan.depth)?;
            let report = if stable { result.report.without_timings() } else { result.report };
            write_report(&plan.report, &report)?;
            if let Some(dir) = &plan.dump_flows {
                save_flows_dir(&result.flows, dir)?;
            }
        }
        Some(k) => {
            let (frames, reports) = sliding_window_restore(&seq, k, &plan.cfg)?;
            let clamped = frames
                .iter()
                .map(|f| f.clamp_values(0.0, 1.0))
                .collect::<Vec<_>>();
            let clamped = turbrestore_core::FrameSequence::new(clamped)?;
            save_sequence_dir(&clamped, &plan.output, plan.depth)?;
            let reports: Vec<_> = if stable {
                reports.iter().map(RestoreReport::without_timings).collect()
            } else {
                reports
            };
            write_window_report(&plan.report, k, &reports)?;
        }
    }
    manifest.save(&plan.manifest)?;
    Ok(())
}

/// With `SOURCE_DATE_EPOCH` set, wall-clock columns are zeroed so reruns
/// produce identical files.
fn reproducible() -> bool {
    std::env::var_os("SOURCE_DATE_EPOCH").is_some()
}

fn plan_from_flags(args: &RestoreArgs) -> Result<Plan, CliError> {
    let input = args.input.clone().expect("clap requires --input");
    let output = args.output.clone().expect("clap requires --output");
    let mut cfg = match args.lambda {
        Some(l) => SolverConfig::with_lambda0(l),
        None => SolverConfig::default(),
    };
    if let Some(n) = args.outer {
        cfg.outer_iters = n;
    }
    if let Some(n) = args.inner {
        cfg.inner_iters = n;
    }
    cfg.delta = args.delta;
    let depth = args.depth.unwrap_or(Depth::Sixteen).into();
    let window = args.window;
    Ok(Plan {
        report: args.report.clone().unwrap_or_else(|| beside(&output, window, "report.csv")),
        manifest: args.manifest.clone().unwrap_or_else(|| beside(&output, window, "manifest.txt")),
        dump_flows: args.dump_flows.clone(),
        input,
        output,
        window,
        depth,
        cfg,
    })
}

/// Replays a recorded run. Without a new `--output` the recorded paths are
/// reused; with one, unspecified side files follow the new output.
fn plan_from_manifest(m: &RunManifest, args: &RestoreArgs) -> Result<Plan, CliError> {
    if m.require("command")? != "restore" {
        return Err(CliError::Input(format!(
            "manifest records a {:?} run, not restore",
            m.require("command")?
        )));
    }
    let window = match m.require("window")? {
        "none" => None,
        _ => Some(m.parse_value("window")?),
    };
    let bits: u32 = m.parse_value("depth")?;
    let depth = BitDepth::from_bits(bits)
        .ok_or_else(|| CliError::Input(format!("manifest: unsupported depth {bits}")))?;
    let recorded = |key: &str| m.require(key).map(PathBuf::from);
    let (output, report, manifest, dump_flows) = match &args.output {
        Some(out) => (
            out.clone(),
            args.report.clone().unwrap_or_else(|| beside(out, window, "report.csv")),
            args.manifest.clone().unwrap_or_else(|| beside(out, window, "manifest.txt")),
            args.dump_flows.clone(),
        ),
        None => (
            recorded("output")?,
            args.report.clone().map_or_else(|| recorded("report"), Ok)?,
            args.manifest.clone().map_or_else(|| recorded("manifest"), Ok)?,
            args.dump_flows
                .clone()
                .or_else(|| m.get("dump_flows").filter(|v| *v != "none").map(PathBuf::from)),
        ),
    };
    Ok(Plan {
        input: recorded("input")?,
        output,
        window,
        depth,
        cfg: m.solver_config()?,
        report,
        manifest,
        dump_flows,
    })
}

fn record(m: &mut RunManifest, plan: &Plan, frames: usize) {
    m.set("input", plan.input.display());
    m.set("input.frames", frames);
    m.set("output", plan.output.display());
    m.set("report", plan.report.display());
    m.set("manifest", plan.manifest.display());
    match &plan.dump_flows {
        Some(d) => m.set("dump_flows", d.display()),
        None => m.set("dump_flows", "none"),
    }
    match plan.window {
        Some(k) => m.set("window", k),
        None => m.set("window", "none"),
    }
    m.set(
        "depth",
        match plan.depth {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        },
    );
    m.put_solver_config(&plan.cfg);
}

/// Default location of a side file: next to a single output image, inside
/// the output directory in window mode.
fn beside(output: &Path, window: Option<usize>, name: &str) -> PathBuf {
    if window.is_some() {
        return output.join(name);
    }
    match output.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.join(name),
        _ => PathBuf::from(name),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_report(path: &Path, report: &RestoreReport) -> Result<(), CliError> {
    report.write_csv(create(path)?)?;
    Ok(())
}

/// One block of rows per window, keyed by the index of its last frame.
fn write_window_report(path: &Path, window: usize, reports: &[RestoreReport]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    let mut header = vec!["frame"];
    header.extend(REPORT_COLUMNS);
    w.write_record(&header).map_err(err)?;
    for (j, report) in reports.iter().enumerate() {
        let frame = (j + window - 1).to_string();
        for r in &report.records {
            let mut row = vec![frame.clone()];
            row.extend(r.csv_fields());
            w.write_record(&row).map_err(err)?;
        }
    }
    w.flush()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
