//! Browser bindings for the OTFS simulator: constellation explorer, pilot
//! channel-estimation view, and a small interactive BER sweep. Each function
//! returns a JSON string consumed by the static demo page.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use otfs_core::bench::{CompMode, DetectorKind, ExperimentConfig, ModelSet, SweepVar};
use otfs_core::detectors::{impulse_channel_estimate, ModAlphabet, ModScheme};
use otfs_core::iqi::{apply_iqi, exact_compensation, IqiParams};
use otfs_core::otfs::{add_awgn, apply_dd_channel, devectorize, vectorize, DdChannel, OtfsConfig};
use otfs_core::pipeline::LinkConfig;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(err)
}

fn points(v: &Array1<num_complex::Complex64>) -> Vec<[f64; 2]> {
    v.iter().map(|c| [c.re, c.im]).collect()
}

#[derive(Serialize)]
struct Constellation {
    ideal: Vec<[f64; 2]>,
    impaired: Vec<[f64; 2]>,
    compensating: Vec<[f64; 2]>,
    restored: Vec<[f64; 2]>,
}

/// IQI explorer: the ideal alphabet, its impaired image, the exact
/// compensating alphabet, and what the compensating alphabet looks like
/// after passing through the impairment again.
#[wasm_bindgen]
pub fn iqi_constellation(scheme: &str, delta_g: f64, delta_phi_deg: f64) -> Result<String, String> {
    let alphabet = ModAlphabet::new(ModScheme::parse(scheme).map_err(err)?);
    let ideal = Array1::from_vec(alphabet.symbols.clone());
    let params = IqiParams::new(delta_g, delta_phi_deg);
    let impaired = apply_iqi(&ideal, &params);
    let compensating = exact_compensation(&ideal, &params).map_err(err)?;
    let restored = apply_iqi(&compensating, &params);
    to_json(&Constellation {
        ideal: points(&ideal),
        impaired: points(&impaired),
        compensating: points(&compensating),
        restored: points(&restored),
    })
}

#[derive(Serialize)]
struct ChannelView {
    /// Received pilot-frame magnitudes, rows = Doppler bins.
    received_mag: Vec<Vec<f64>>,
    /// True effective path gains (re, im) in profile order.
    true_gains: Vec<[f64; 2]>,
    estimated_gains: Vec<[f64; 2]>,
    profile: Vec<[usize; 2]>,
    pilot_amp: f64,
}

/// Pilot impulse through a random delay-Doppler channel: shows where each
/// path lands on the grid and how well the single-pilot estimator reads the
/// gains back at the chosen pilot SNR.
#[wasm_bindgen]
pub fn channel_estimation_view(seed: u64, snr_pilot_db: f64) -> Result<String, String> {
    let link = LinkConfig::new(ModAlphabet::new(ModScheme::Bpsk), 10.0, snr_pilot_db);
    let cfg = OtfsConfig::new(4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channel = DdChannel::rayleigh(&link.profile, &mut rng);
    let rx = apply_dd_channel(&link.pilot_grid(), &channel, &cfg).map_err(err)?;
    let noisy = add_awgn(&vectorize(&rx, &cfg).map_err(err)?, &link.noise(), &mut rng);
    let noisy_grid = devectorize(&noisy, &cfg).map_err(err)?;
    let estimate = impulse_channel_estimate(
        &noisy_grid,
        link.pilot_loc,
        link.pilot_amp(),
        &link.profile,
        &cfg,
    )
    .map_err(err)?;
    let gains = |ch: &DdChannel| -> Vec<[f64; 2]> {
        (0..ch.paths.len())
            .map(|i| {
                let g = ch.effective_gain(i, &cfg);
                [g.re, g.im]
            })
            .collect()
    };
    let received_mag = (0..4)
        .map(|k| (0..4).map(|l| noisy_grid.values[(k, l)].norm()).collect())
        .collect();
    to_json(&ChannelView {
        received_mag,
        true_gains: gains(&channel),
        estimated_gains: gains(&estimate),
        profile: link.profile.iter().map(|&(a, b)| [a, b]).collect(),
        pilot_amp: link.pilot_amp(),
    })
}

#[derive(Serialize)]
struct SweepPoint {
    snr_db: f64,
    ber: f64,
    ci95: f64,
    errors: u64,
    bits: u64,
}

/// Small Monte Carlo BER sweep over data SNR. Compensation, when enabled,
/// uses the closed-form inverse on both sides so the demo needs no trained
/// model files.
#[wasm_bindgen]
pub fn ber_mini_sweep(
    scheme: &str,
    detector: &str,
    tx_dg: f64,
    tx_dphi: f64,
    rx_dg: f64,
    rx_dphi: f64,
    compensate: bool,
    frames: usize,
    seed: u64,
) -> Result<String, String> {
    let comp = if compensate { CompMode::Exact } else { CompMode::Off };
    let cfg = ExperimentConfig {
        preset: "wasm-demo".into(),
        scheme: ModScheme::parse(scheme).map_err(err)?,
        detector: DetectorKind::parse(detector).map_err(err)?,
        tx_iqi: (tx_dg, tx_dphi),
        rx_iqi: (rx_dg, rx_dphi),
        tx_comp: comp,
        rx_comp: comp,
        sweep: SweepVar::SnrData,
        frames_per_point: frames.clamp(1, 5000),
        seed,
        ..Default::default()
    };
    let result = otfs_core::bench::run_ber_sweep(&cfg, &ModelSet::default()).map_err(err)?;
    let out: Vec<SweepPoint> = result
        .iter()
        .map(|p| SweepPoint {
            snr_db: p.x_value,
            ber: p.ber,
            ci95: p.ci95_halfwidth,
            errors: p.bit_errors,
            bits: p.bits_total,
        })
        .collect();
    to_json(&out)
}
