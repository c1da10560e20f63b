use turbrestore_core::sim::resolution_chart;
use turbrestore_core::warp::save_flows_dir;
use turbrestore_core::{generate_sequence, load_pgm, save_pgm, save_sequence_dir, BitDepth, RunManifest, SimParams};

use crate::error::CliError;
use crate::SimulateArgs;

pub fn run(args: SimulateArgs) -> Result<(), CliError> {
    let params = SimParams {
        amplitude: args.amplitude,
        wavelength: args.wavelength,
        phase_seed: args.seed,
        noise_sigma: args.noise,
        frames: args.frames,
        mode: args.mode.into(),
    };
    params.validate()?;
    if params.frames == 0 {
        return Err(CliError::Usage("--frames must be >= 1".into()));
    }
    let truth = match (&args.truth, args.chart) {
        (Some(path), _) => load_pgm(path)?,
        (None, Some(size)) if size >= 8 => resolution_chart(size, size),
        (None, Some(size)) => return Err(CliError::Usage(format!("--chart must be >= 8, got {size}"))),
        (None, None) => unreachable!("clap requires a truth source"),
    };
    let depth: BitDepth = args.depth.into();

    let (seq, flows) = generate_sequence(&truth, &params)?;
    save_sequence_dir(&seq, &args.output, depth)?;
    save_flows_dir(&flows, &args.output)?;
    if let Some(path) = &args.save_truth {
        save_pgm(&truth, path, depth)?;
    }

    let mut m = RunManifest::new("simulate");
    match (&args.truth, args.chart) {
        (Some(path), _) => m.set("truth", path.display()),
        (None, Some(size)) => m.set("truth", format!("chart:{size}")),
        (None, None) => {}
    }
    if let Some(path) = &args.save_truth {
        m.set("saved_truth", path.display());
    }
    m.set("output", args.output.display());
    m.set("depth", depth.maxval().ilog2() + 1);
    m.put_sim_params(&params);
    let path = args.manifest.unwrap_or_else(|| args.output.join("manifest.txt"));
    m.save(path)?;
    Ok(())
}
