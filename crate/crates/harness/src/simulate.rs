//! `simulate`: every phantom through every configured protocol.

use std::path::Path;

use ums_core::ctsim::io::{encode_pgm, encode_sinogram, encode_window_sidecar, window_path, Window};
use ums_core::ctsim::{make_phantom, simulate_protocol_full, CtImage, ProtocolName, ProtocolSpec, Simulation};
use ums_core::metrics::{evaluate, psnr_for_output, MetricReport};

use crate::error::{core, Result};
use crate::output::{field, write_atomic, Csv, RunContext};

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_HEADER: [&str; 7] = ["image_id", "protocol", "method", "psnr_db", "ssim", "noise_sd", "mse_phantom"];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub image_id: String,
    pub protocol: ProtocolName,
    /// Against the ideal-protocol reconstruction of the same phantom.
    pub report: MetricReport,
    /// Mean squared error against the phantom inside the field of view.
    pub mse_phantom: f64,
}

fn write_image(path: &Path, img: &CtImage, window: Window) -> Result<()> {
    write_atomic(path, &encode_pgm(img, window).map_err(core("ctsim"))?)?;
    write_atomic(&window_path(path), encode_window_sidecar(img, window).as_bytes())
}

fn write_simulation(dir: &Path, stem: &str, sim: &Simulation) -> Result<()> {
    write_image(&dir.join(format!("{stem}.pgm")), &sim.recon, Window::fit(&sim.recon))?;
    let sino = encode_sinogram(&sim.sinogram).map_err(core("ctsim"))?;
    write_atomic(&dir.join(format!("{stem}.sino")), &sino)?;
    if let Some(noisy) = &sim.noisy {
        let bytes = encode_sinogram(noisy).map_err(core("ctsim"))?;
        write_atomic(&dir.join(format!("{stem}.noisy.sino")), &bytes)?;
    }
    Ok(())
}

fn masked_mse(a: &CtImage, b: &CtImage, roi: &[bool]) -> f64 {
    let (sum, n) = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .zip(roi)
        .filter(|(_, keep)| **keep)
        .fold((0.0, 0usize), |(s, n), ((x, y), _)| (s + (x - y).powi(2), n + 1));
    sum / n as f64
}

/// Writes `{phantom}_{protocol}.{pgm,window,sino,noisy.sino}`, the phantom
/// itself as `{phantom}_phantom.pgm`, and one metrics row per configured
/// protocol. The ideal protocol is always simulated as the reference; the
/// noiseless ideal run has no `.noisy.sino`.
pub fn run_simulate(ctx: &RunContext) -> Result<Vec<MetricRow>> {
    let dir = ctx.subdir("simulate")?;
    let ct = &ctx.manifest.world.ct;
    let reference_spec = ct
        .protocols
        .iter()
        .find(|p| p.name == ProtocolName::Ideal)
        .cloned()
        .unwrap_or_else(ProtocolSpec::ideal);

    let mut rows = Vec::new();
    let mut csv = Csv::new(&METRICS_HEADER);
    for kind in &ct.phantoms {
        let name = kind.name();
        let truth = make_phantom(kind, ct.image_size).map_err(core("ctsim"))?;
        write_image(&dir.join(format!("{name}_phantom.pgm")), &truth, Window::UNIT)?;
        let roi = truth.fov_mask();

        let simulate = |spec: &ProtocolSpec| {
            let seed = ctx.seed(&format!("harness.simulate.{name}.{}", spec.name));
            simulate_protocol_full(&truth, spec, seed).map_err(core("ctsim"))
        };
        let reference = simulate(&reference_spec)?;
        write_simulation(&dir, &format!("{name}_{}", ProtocolName::Ideal), &reference)?;

        for spec in &ct.protocols {
            let sim = if spec.name == ProtocolName::Ideal {
                reference.clone()
            } else {
                let sim = simulate(spec)?;
                write_simulation(&dir, &format!("{name}_{}", spec.name), &sim)?;
                sim
            };
            let report = evaluate(&sim.recon, &reference.recon, &roi).map_err(core("metrics"))?;
            let row = MetricRow {
                image_id: name.to_string(),
                protocol: spec.name,
                report,
                mse_phantom: masked_mse(&sim.recon, &truth, &roi),
            };
            csv.row(&[
                row.image_id.clone(),
                field(row.protocol),
                field("fbp"),
                field(psnr_for_output(report.psnr_db)),
                field(report.ssim),
                field(report.noise_sd),
                field(row.mse_phantom),
            ]);
            rows.push(row);
        }
    }
    csv.write(&dir.join(METRICS_CSV))?;
    Ok(rows)
}
