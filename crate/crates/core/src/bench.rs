//! Experiment runner: flat key=value configs, named presets, a seeded Monte
//! Carlo BER engine with 95% confidence intervals, CSV emission, and model
//! training commands.
//!
//! Determinism contract: every frame draws from its own ChaCha8 stream
//! derived from (master seed, grid-point index, frame index), so a (config,
//! seed) pair always produces byte-identical output regardless of execution
//! order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detectors::{MlDetector, ModAlphabet, ModScheme};
use crate::error::{Error, Result};
use crate::iqi::{apply_iqi, exact_compensation, IqiParams};
use crate::neural::{save_weights, train, Mlp};
use crate::ofdm::{apply_time_channel, ofdm_modulate, ofdm_receive, OfdmConfig};
use crate::otfs::{uniform_delay_profile, DdChannel, NoiseModel};
use crate::pipeline::{
    dnn1_compensate, dnn2_estimate, gen_dnn1_dataset, gen_dnn2_dataset, gen_dnn3_dataset,
    gen_dnn4_dataset, ChannelKnowledge, DetectorChoice, DnnRole, FrameResult, IqiRange,
    LinkConfig, LinkSetup, RxCompensation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum System {
    Otfs,
    Ofdm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    Ml,
    Mmse,
    Dnn4,
}

/// How a compensation stage is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompMode {
    Off,
    Exact,
    Dnn,
}

/// Which parameter the x axis of the sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    SnrData,
    SnrPilot,
    TxGain,
    TxPhase,
    RxGain,
    RxPhase,
}

fn parse_enum<T>(s: &str, table: &[(&str, T)], what: &str) -> Result<T>
where
    T: Copy,
{
    table
        .iter()
        .find(|(k, _)| *k == s)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown {what} '{s}'")))
}

impl System {
    pub fn parse(s: &str) -> Result<Self> {
        parse_enum(s, &[("otfs", System::Otfs), ("ofdm", System::Ofdm)], "system")
    }
    pub fn name(&self) -> &'static str {
        match self {
            System::Otfs => "otfs",
            System::Ofdm => "ofdm",
        }
    }
}

impl DetectorKind {
    pub fn parse(s: &str) -> Result<Self> {
        parse_enum(
            s,
            &[
                ("ml", DetectorKind::Ml),
                ("mmse", DetectorKind::Mmse),
                ("dnn4", DetectorKind::Dnn4),
            ],
            "detector",
        )
    }
    pub fn name(&self) -> &'static str {
        match self {
            DetectorKind::Ml => "ml",
            DetectorKind::Mmse => "mmse",
            DetectorKind::Dnn4 => "dnn4",
        }
    }
}

impl CompMode {
    pub fn parse(s: &str) -> Result<Self> {
        parse_enum(
            s,
            &[
                ("off", CompMode::Off),
                ("exact", CompMode::Exact),
                ("dnn", CompMode::Dnn),
            ],
            "compensation mode",
        )
    }
    pub fn name(&self) -> &'static str {
        match self {
            CompMode::Off => "off",
            CompMode::Exact => "exact",
            CompMode::Dnn => "dnn",
        }
    }
}

impl SweepVar {
    pub fn parse(s: &str) -> Result<Self> {
        parse_enum(
            s,
            &[
                ("snr_data", SweepVar::SnrData),
                ("snr_pilot", SweepVar::SnrPilot),
                ("tx_gain", SweepVar::TxGain),
                ("tx_phase", SweepVar::TxPhase),
                ("rx_gain", SweepVar::RxGain),
                ("rx_phase", SweepVar::RxPhase),
            ],
            "sweep axis",
        )
    }
    pub fn name(&self) -> &'static str {
        match self {
            SweepVar::SnrData => "snr_data",
            SweepVar::SnrPilot => "snr_pilot",
            SweepVar::TxGain => "tx_gain",
            SweepVar::TxPhase => "tx_phase",
            SweepVar::RxGain => "rx_gain",
            SweepVar::RxPhase => "rx_phase",
        }
    }
}

fn est_mode_parse(s: &str) -> Result<ChannelKnowledge> {
    parse_enum(
        s,
        &[
            ("perfect", ChannelKnowledge::Perfect),
            ("impulse", ChannelKnowledge::ImpulseEstimate),
        ],
        "channel estimation mode",
    )
}

fn est_mode_name(m: ChannelKnowledge) -> &'static str {
    match m {
        ChannelKnowledge::Perfect => "perfect",
        ChannelKnowledge::ImpulseEstimate => "impulse",
    }
}

/// Optional on-disk model locations; loaded into a [`ModelSet`] before a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModelPaths {
    pub dnn1: Option<PathBuf>,
    pub dnn2: Option<PathBuf>,
    pub dnn3: Option<PathBuf>,
    pub dnn4: Option<PathBuf>,
}

/// In-memory trained models referenced by a sweep.
#[derive(Default)]
pub struct ModelSet {
    pub dnn1: Option<Mlp>,
    pub dnn2: Option<Mlp>,
    pub dnn3: Option<Mlp>,
    pub dnn4: Option<Mlp>,
}

impl ModelSet {
    pub fn load(paths: &ModelPaths) -> Result<Self> {
        let load = |p: &Option<PathBuf>| -> Result<Option<Mlp>> {
            match p {
                Some(path) => Ok(Some(crate::neural::load_weights(path)?)),
                None => Ok(None),
            }
        };
        Ok(Self {
            dnn1: load(&paths.dnn1)?,
            dnn2: load(&paths.dnn2)?,
            dnn3: load(&paths.dnn3)?,
            dnn4: load(&paths.dnn4)?,
        })
    }
}

/// One BER curve: a fixed transceiver configuration swept over one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Label written into every CSV row.
    pub preset: String,
    pub system: System,
    pub scheme: ModScheme,
    pub delay_bins: usize,
    pub doppler_bins: usize,
    /// Tx (delta_g, delta_phi_deg); (0, 0) means no Tx IQI.
    pub tx_iqi: (f64, f64),
    pub rx_iqi: (f64, f64),
    pub tx_comp: CompMode,
    pub rx_comp: CompMode,
    pub detector: DetectorKind,
    pub channel_est: ChannelKnowledge,
    pub sweep: SweepVar,
    pub grid: Vec<f64>,
    pub snr_data_db: f64,
    pub snr_pilot_db: f64,
    pub frames_per_point: usize,
    pub seed: u64,
    pub models: ModelPaths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: "custom".into(),
            system: System::Otfs,
            scheme: ModScheme::Bpsk,
            delay_bins: 4,
            doppler_bins: 4,
            tx_iqi: (0.0, 0.0),
            rx_iqi: (0.0, 0.0),
            tx_comp: CompMode::Off,
            rx_comp: CompMode::Off,
            detector: DetectorKind::Ml,
            channel_est: ChannelKnowledge::Perfect,
            sweep: SweepVar::SnrData,
            grid: snr_grid(),
            snr_data_db: 10.0,
            snr_pilot_db: 10.0,
            frames_per_point: 100_000,
            seed: 1,
            models: ModelPaths::default(),
        }
    }
}

fn fmt_grid(grid: &[f64]) -> String {
    grid.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames_per_point < 1 {
            return Err(Error::InvalidConfig("frames must be >= 1".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("sweep grid is empty".into()));
        }
        Ok(())
    }

    /// Flat key=value rendering; the audit copy written beside every output.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "preset = {}", self.preset);
        let _ = writeln!(s, "system = {}", self.system.name());
        let _ = writeln!(s, "scheme = {}", self.scheme.name());
        let _ = writeln!(s, "delay_bins = {}", self.delay_bins);
        let _ = writeln!(s, "doppler_bins = {}", self.doppler_bins);
        let _ = writeln!(s, "tx_dg = {}", self.tx_iqi.0);
        let _ = writeln!(s, "tx_dphi = {}", self.tx_iqi.1);
        let _ = writeln!(s, "rx_dg = {}", self.rx_iqi.0);
        let _ = writeln!(s, "rx_dphi = {}", self.rx_iqi.1);
        let _ = writeln!(s, "tx_comp = {}", self.tx_comp.name());
        let _ = writeln!(s, "rx_comp = {}", self.rx_comp.name());
        let _ = writeln!(s, "detector = {}", self.detector.name());
        let _ = writeln!(s, "channel_est = {}", est_mode_name(self.channel_est));
        let _ = writeln!(s, "sweep = {}", self.sweep.name());
        let _ = writeln!(s, "grid = {}", fmt_grid(&self.grid));
        let _ = writeln!(s, "snr_data = {}", self.snr_data_db);
        let _ = writeln!(s, "snr_pilot = {}", self.snr_pilot_db);
        let _ = writeln!(s, "frames = {}", self.frames_per_point);
        let _ = writeln!(s, "seed = {}", self.seed);
        for (key, path) in [
            ("dnn1_model", &self.models.dnn1),
            ("dnn2_model", &self.models.dnn2),
            ("dnn3_model", &self.models.dnn3),
            ("dnn4_model", &self.models.dnn4),
        ] {
            if let Some(p) = path {
                let _ = writeln!(s, "{key} = {}", p.display());
            }
        }
        s
    }

    /// Parse `key = value` lines; '#' starts a comment, blank lines ignored.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Apply one override; used both by file parsing and by CLI `--set`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::InvalidConfig(format!("invalid {what} '{value}'"));
        match key {
            "preset" => self.preset = value.to_string(),
            "system" => self.system = System::parse(value)?,
            "scheme" => self.scheme = ModScheme::parse(value)?,
            "delay_bins" => self.delay_bins = value.parse().map_err(|_| bad("delay_bins"))?,
            "doppler_bins" => {
                self.doppler_bins = value.parse().map_err(|_| bad("doppler_bins"))?
            }
            "tx_dg" => self.tx_iqi.0 = value.parse().map_err(|_| bad("tx_dg"))?,
            "tx_dphi" => self.tx_iqi.1 = value.parse().map_err(|_| bad("tx_dphi"))?,
            "rx_dg" => self.rx_iqi.0 = value.parse().map_err(|_| bad("rx_dg"))?,
            "rx_dphi" => self.rx_iqi.1 = value.parse().map_err(|_| bad("rx_dphi"))?,
            "tx_comp" => self.tx_comp = CompMode::parse(value)?,
            "rx_comp" => self.rx_comp = CompMode::parse(value)?,
            "detector" => self.detector = DetectorKind::parse(value)?,
            "channel_est" => self.channel_est = est_mode_parse(value)?,
            "sweep" => self.sweep = SweepVar::parse(value)?,
            "grid" => {
                self.grid = value
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("grid"))?
            }
            "snr_data" => self.snr_data_db = value.parse().map_err(|_| bad("snr_data"))?,
            "snr_pilot" => self.snr_pilot_db = value.parse().map_err(|_| bad("snr_pilot"))?,
            "frames" => self.frames_per_point = value.parse().map_err(|_| bad("frames"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "dnn1_model" => self.models.dnn1 = Some(PathBuf::from(value)),
            "dnn2_model" => self.models.dnn2 = Some(PathBuf::from(value)),
            "dnn3_model" => self.models.dnn3 = Some(PathBuf::from(value)),
            "dnn4_model" => self.models.dnn4 = Some(PathBuf::from(value)),
            other => {
                return Err(Error::InvalidConfig(format!("unknown config key '{other}'")))
            }
        }
        Ok(())
    }
}

/// One measured grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct BerPoint {
    pub x_value: f64,
    pub bit_errors: u64,
    pub bits_total: u64,
    pub ber: f64,
    pub ci95_halfwidth: f64,
}

impl BerPoint {
    fn from_counts(x_value: f64, bit_errors: u64, bits_total: u64) -> Self {
        let ber = bit_errors as f64 / bits_total as f64;
        let ci95_halfwidth = 1.96 * (ber * (1.0 - ber) / bits_total as f64).sqrt();
        Self {
            x_value,
            bit_errors,
            bits_total,
            ber,
            ci95_halfwidth,
        }
    }
}

/// Per-frame RNG stream: independent of execution order, unique per
/// (grid point, frame).
fn frame_rng(seed: u64, point_idx: usize, frame_idx: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((point_idx as u64) << 40) | (frame_idx as u64 + 1));
    rng
}

fn count_errors(r: &FrameResult) -> (u64, u64) {
    let errs = r
        .tx_bits
        .iter()
        .zip(&r.rx_bits)
        .filter(|(a, b)| a != b)
        .count() as u64;
    (errs, r.tx_bits.len() as u64)
}

/// Resolved per-point parameters after substituting the sweep value.
struct PointParams {
    snr_data_db: f64,
    snr_pilot_db: f64,
    tx: IqiParams,
    rx: IqiParams,
}

fn resolve_point(cfg: &ExperimentConfig, x: f64) -> PointParams {
    let mut p = PointParams {
        snr_data_db: cfg.snr_data_db,
        snr_pilot_db: cfg.snr_pilot_db,
        tx: IqiParams::new(cfg.tx_iqi.0, cfg.tx_iqi.1),
        rx: IqiParams::new(cfg.rx_iqi.0, cfg.rx_iqi.1),
    };
    match cfg.sweep {
        SweepVar::SnrData => p.snr_data_db = x,
        SweepVar::SnrPilot => p.snr_pilot_db = x,
        SweepVar::TxGain => p.tx.delta_g = x,
        SweepVar::TxPhase => p.tx.delta_phi_deg = x,
        SweepVar::RxGain => p.rx.delta_g = x,
        SweepVar::RxPhase => p.rx.delta_phi_deg = x,
    }
    p
}

fn iqi_active(p: &IqiParams) -> bool {
    p.delta_g != 0.0 || p.delta_phi_deg != 0.0
}

fn require_model<'a>(m: &'a Option<Mlp>, name: &str) -> Result<&'a Mlp> {
    m.as_ref()
        .ok_or_else(|| Error::InvalidConfig(format!("{name} model required but not provided")))
}

/// Run one OTFS grid point.
fn run_otfs_point(
    cfg: &ExperimentConfig,
    models: &ModelSet,
    point_idx: usize,
    x: f64,
) -> Result<BerPoint> {
    let p = resolve_point(cfg, x);
    let alphabet = ModAlphabet::new(cfg.scheme);
    let mut link = LinkConfig::new(alphabet.clone(), p.snr_data_db, p.snr_pilot_db);
    link.otfs = crate::otfs::OtfsConfig::new(cfg.delay_bins, cfg.doppler_bins);

    let tx_iqi = iqi_active(&p.tx).then_some(p.tx);
    let rx_iqi = iqi_active(&p.rx).then_some(p.rx);

    let ideal = Array1::from_vec(alphabet.symbols.clone());
    let tx_comp_alphabet = match (cfg.tx_comp, &tx_iqi) {
        (CompMode::Off, _) | (_, None) => None,
        (CompMode::Exact, Some(t)) => Some(exact_compensation(&ideal, t)?.to_vec()),
        (CompMode::Dnn, Some(t)) => {
            let net = require_model(&models.dnn1, "dnn1")?;
            let impaired = apply_iqi(&ideal, t);
            Some(dnn1_compensate(net, impaired.as_slice().unwrap())?)
        }
    };

    let rx_comp = match (cfg.rx_comp, &rx_iqi) {
        (CompMode::Off, _) | (_, None) => RxCompensation::Off,
        (CompMode::Exact, Some(r)) => RxCompensation::Exact(*r),
        (CompMode::Dnn, Some(r)) => {
            let dnn2 = require_model(&models.dnn2, "dnn2")?;
            let dnn3 = require_model(&models.dnn3, "dnn3")?;
            let observed = crate::pipeline::calibration_observation(r);
            let (dg, dphi) = dnn2_estimate(dnn2, &observed)?;
            RxCompensation::Dnn {
                dnn3,
                estimate: IqiParams::new(dg, dphi),
            }
        }
    };

    let ml_holder;
    let detector = match cfg.detector {
        DetectorKind::Ml => {
            ml_holder = MlDetector::new(alphabet, link.otfs.frame_len())?;
            DetectorChoice::Ml(&ml_holder)
        }
        DetectorKind::Mmse => DetectorChoice::Mmse,
        DetectorKind::Dnn4 => DetectorChoice::Dnn4(require_model(&models.dnn4, "dnn4")?),
    };

    let setup = LinkSetup {
        tx_iqi,
        rx_iqi,
        tx_comp_alphabet,
        precompensate_pilot: tx_iqi.is_some() && cfg.tx_comp != CompMode::Off,
        rx_comp,
        detector,
        channel_knowledge: cfg.channel_est,
    };

    let mut errors = 0u64;
    let mut bits = 0u64;
    for frame in 0..cfg.frames_per_point {
        let mut rng = frame_rng(cfg.seed, point_idx, frame);
        let r = crate::pipeline::simulate_frame(&link, &setup, &mut rng)?;
        let (e, b) = count_errors(&r);
        errors += e;
        bits += b;
    }
    Ok(BerPoint::from_counts(x, errors, bits))
}

/// OFDM counterpart of [`crate::pipeline::simulate_frame`]: same DD channel
/// statistics acting on a CP-OFDM frame, one-tap MMSE equalization with the
/// true (IQI-free) per-subcarrier response.
pub fn simulate_ofdm_frame<R: Rng + ?Sized>(
    cfg: &OfdmConfig,
    alphabet: &ModAlphabet,
    profile: &[(usize, usize)],
    snr_db: f64,
    tx_iqi: Option<&IqiParams>,
    rx_iqi: Option<&IqiParams>,
    rng: &mut R,
) -> Result<FrameResult> {
    let channel = DdChannel::rayleigh(profile, rng);
    let noise = NoiseModel::from_snr_db(snr_db);
    let n_syms = cfg.num_symbols * cfg.num_subcarriers;
    let tx_bits: Vec<u8> = (0..n_syms * alphabet.bits_per_symbol)
        .map(|_| rng.gen_range(0..2u8))
        .collect();
    let symbols = alphabet.bits_to_symbols(&tx_bits)?;
    let grid = ndarray::Array2::from_shape_vec((cfg.num_symbols, cfg.num_subcarriers), symbols)
        .expect("row-major symbol grid");
    let mut samples = Array1::from_vec(ofdm_modulate(&grid, cfg)?);
    if let Some(t) = tx_iqi {
        samples = apply_iqi(&samples, t);
    }
    let mut received = Array1::from_vec(apply_time_channel(samples.as_slice().unwrap(), &channel, cfg)?);
    for v in received.iter_mut() {
        *v += noise.sample(rng);
    }
    if let Some(r) = rx_iqi {
        received = apply_iqi(&received, r);
    }
    let indices = ofdm_receive(
        received.as_slice().unwrap(),
        &channel,
        cfg,
        noise.sigma2,
        alphabet,
    )?;
    Ok(FrameResult {
        tx_bits,
        rx_bits: alphabet.indices_to_bits(&indices),
    })
}

fn run_ofdm_point(cfg: &ExperimentConfig, point_idx: usize, x: f64) -> Result<BerPoint> {
    let p = resolve_point(cfg, x);
    let alphabet = ModAlphabet::new(cfg.scheme);
    // CP covers the longest delay of the shared tap profile.
    let profile = uniform_delay_profile();
    let cp = profile.iter().map(|&(d, _)| d).max().unwrap_or(0);
    let ofdm = OfdmConfig::new(cfg.delay_bins, cfg.doppler_bins, cp);
    let tx = iqi_active(&p.tx).then_some(p.tx);
    let rx = iqi_active(&p.rx).then_some(p.rx);
    let mut errors = 0u64;
    let mut bits = 0u64;
    for frame in 0..cfg.frames_per_point {
        let mut rng = frame_rng(cfg.seed, point_idx, frame);
        let r = simulate_ofdm_frame(
            &ofdm,
            &alphabet,
            &profile,
            p.snr_data_db,
            tx.as_ref(),
            rx.as_ref(),
            &mut rng,
        )?;
        let (e, b) = count_errors(&r);
        errors += e;
        bits += b;
    }
    Ok(BerPoint::from_counts(x, errors, bits))
}

/// Monte Carlo sweep over the configured grid.
pub fn run_ber_sweep(cfg: &ExperimentConfig, models: &ModelSet) -> Result<Vec<BerPoint>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.grid.len());
    for (idx, &x) in cfg.grid.iter().enumerate() {
        let point = match cfg.system {
            System::Otfs => run_otfs_point(cfg, models, idx, x)?,
            System::Ofdm => run_ofdm_point(cfg, idx, x)?,
        };
        out.push(point);
    }
    Ok(out)
}

/// Six significant digits, scientific notation.
fn sig6(v: f64) -> String {
    format!("{v:.5e}")
}

pub fn ber_csv(cfg: &ExperimentConfig, points: &[BerPoint]) -> String {
    let mut s = String::from("x_value,ber,errors,bits,ci95,seed,preset\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            p.x_value,
            sig6(p.ber),
            p.bit_errors,
            p.bits_total,
            sig6(p.ci95_halfwidth),
            cfg.seed,
            cfg.preset
        );
    }
    s
}

/// Write the CSV plus the resolved config (audit trail) beside it.
pub fn write_ber_outputs(
    cfg: &ExperimentConfig,
    points: &[BerPoint],
    out_path: &Path,
) -> Result<()> {
    fs::write(out_path, ber_csv(cfg, points))?;
    let mut cfg_path = out_path.as_os_str().to_owned();
    cfg_path.push(".config");
    fs::write(PathBuf::from(cfg_path), cfg.to_key_values())?;
    Ok(())
}

/// Canonical grids.
pub fn snr_grid() -> Vec<f64> {
    (0..=7).map(|i| 2.0 * i as f64).collect()
}

pub fn gain_grid() -> Vec<f64> {
    (0..=10).map(|i| 0.05 * i as f64).collect()
}

pub fn phase_grid() -> Vec<f64> {
    (0..=10).map(|i| 5.0 * i as f64).collect()
}

pub fn pilot_snr_grid() -> Vec<f64> {
    (0..=6).map(|i| 5.0 * i as f64).collect()
}

/// Operating point used throughout the compensation experiments.
pub const IQI_TEST_POINT: (f64, f64) = (0.4, 40.0);

fn scheme_detector(scheme: ModScheme) -> DetectorKind {
    match scheme {
        ModScheme::Bpsk => DetectorKind::Ml,
        ModScheme::Qam4 | ModScheme::Qam16 => DetectorKind::Mmse,
    }
}

fn tx_comp_curves(name: &str, scheme: ModScheme, frames: usize, seed: u64) -> Vec<ExperimentConfig> {
    let base = ExperimentConfig {
        scheme,
        detector: scheme_detector(scheme),
        sweep: SweepVar::SnrData,
        grid: snr_grid(),
        frames_per_point: frames,
        seed,
        ..Default::default()
    };
    vec![
        ExperimentConfig {
            preset: format!("{name}-ideal"),
            ..base.clone()
        },
        ExperimentConfig {
            preset: format!("{name}-uncompensated"),
            tx_iqi: IQI_TEST_POINT,
            ..base.clone()
        },
        ExperimentConfig {
            preset: format!("{name}-dnn1"),
            tx_iqi: IQI_TEST_POINT,
            tx_comp: CompMode::Dnn,
            ..base
        },
    ]
}

fn rx_comp_curves(name: &str, scheme: ModScheme, frames: usize, seed: u64) -> Vec<ExperimentConfig> {
    let base = ExperimentConfig {
        scheme,
        detector: scheme_detector(scheme),
        sweep: SweepVar::SnrData,
        grid: snr_grid(),
        frames_per_point: frames,
        seed,
        ..Default::default()
    };
    vec![
        ExperimentConfig {
            preset: format!("{name}-ideal"),
            ..base.clone()
        },
        ExperimentConfig {
            preset: format!("{name}-uncompensated"),
            rx_iqi: IQI_TEST_POINT,
            ..base.clone()
        },
        ExperimentConfig {
            preset: format!("{name}-dnn23"),
            rx_iqi: IQI_TEST_POINT,
            rx_comp: CompMode::Dnn,
            ..base
        },
    ]
}

fn sensitivity_pair(name: &str, sweep: SweepVar, frames: usize, seed: u64) -> Vec<ExperimentConfig> {
    let grid = match sweep {
        SweepVar::TxGain | SweepVar::RxGain => gain_grid(),
        _ => phase_grid(),
    };
    let base = ExperimentConfig {
        scheme: ModScheme::Bpsk,
        detector: DetectorKind::Ml,
        sweep,
        grid,
        snr_data_db: 12.0,
        frames_per_point: frames,
        seed,
        ..Default::default()
    };
    vec![
        ExperimentConfig {
            preset: format!("{name}-otfs"),
            ..base.clone()
        },
        ExperimentConfig {
            preset: format!("{name}-ofdm"),
            system: System::Ofdm,
            ..base
        },
    ]
}

fn detection_curves(
    name: &str,
    sweep: SweepVar,
    grid: Vec<f64>,
    snr_pilot_db: f64,
    with_iqi: bool,
    frames: usize,
    seed: u64,
) -> Vec<ExperimentConfig> {
    let iqi = if with_iqi { IQI_TEST_POINT } else { (0.0, 0.0) };
    let comp = if with_iqi { CompMode::Dnn } else { CompMode::Off };
    let base = ExperimentConfig {
        scheme: ModScheme::Bpsk,
        sweep,
        grid,
        snr_data_db: 10.0,
        snr_pilot_db,
        tx_iqi: iqi,
        rx_iqi: iqi,
        tx_comp: comp,
        rx_comp: comp,
        frames_per_point: frames,
        seed,
        ..Default::default()
    };
    vec![
        ExperimentConfig {
            preset: format!("{name}-dnn4"),
            detector: DetectorKind::Dnn4,
            ..base.clone()
        },
        ExperimentConfig {
            preset: format!("{name}-impulse-ml"),
            detector: DetectorKind::Ml,
            channel_est: ChannelKnowledge::ImpulseEstimate,
            ..base.clone()
        },
        ExperimentConfig {
            preset: format!("{name}-impulse-mmse"),
            detector: DetectorKind::Mmse,
            channel_est: ChannelKnowledge::ImpulseEstimate,
            ..base.clone()
        },
        ExperimentConfig {
            preset: format!("{name}-perfect-ml"),
            detector: DetectorKind::Ml,
            channel_est: ChannelKnowledge::Perfect,
            ..base
        },
    ]
}

/// Expand a named preset into its per-curve configs.
pub fn preset(name: &str, frames: usize, seed: u64) -> Result<Vec<ExperimentConfig>> {
    let curves = match name {
        "fig3a" => sensitivity_pair(name, SweepVar::TxPhase, frames, seed),
        "fig3b" => sensitivity_pair(name, SweepVar::TxGain, frames, seed),
        "fig3c" => sensitivity_pair(name, SweepVar::RxPhase, frames, seed),
        "fig3d" => sensitivity_pair(name, SweepVar::RxGain, frames, seed),
        "fig5" => tx_comp_curves(name, ModScheme::Qam4, frames, seed),
        "fig6a" => tx_comp_curves(name, ModScheme::Bpsk, frames, seed),
        "fig6b" => tx_comp_curves(name, ModScheme::Qam16, frames, seed),
        "fig7a" => rx_comp_curves(name, ModScheme::Bpsk, frames, seed),
        "fig7b" => rx_comp_curves(name, ModScheme::Qam4, frames, seed),
        "fig7c" => rx_comp_curves(name, ModScheme::Qam16, frames, seed),
        "fig8" => detection_curves(
            name,
            SweepVar::SnrPilot,
            pilot_snr_grid(),
            10.0,
            false,
            frames,
            seed,
        ),
        "fig9a" => detection_curves(name, SweepVar::SnrData, snr_grid(), 10.0, true, frames, seed),
        "fig9b" => detection_curves(name, SweepVar::SnrData, snr_grid(), 20.0, true, frames, seed),
        "fig9c" => detection_curves(name, SweepVar::SnrData, snr_grid(), 30.0, true, frames, seed),
        other => {
            return Err(Error::InvalidConfig(format!("unknown preset '{other}'")))
        }
    };
    Ok(curves)
}

pub fn preset_names() -> &'static [&'static str] {
    &[
        "fig3a", "fig3b", "fig3c", "fig3d", "fig5", "fig6a", "fig6b", "fig7a", "fig7b", "fig7c",
        "fig8", "fig9a", "fig9b", "fig9c",
    ]
}

/// IQI sensitivity comparison at 12 dB: one axis swept, the other zero,
/// OTFS and OFDM side by side.
pub struct SensitivityResult {
    pub axis: SweepVar,
    pub grid: Vec<f64>,
    pub otfs: Vec<BerPoint>,
    pub ofdm: Vec<BerPoint>,
    pub seed: u64,
}

pub fn sensitivity_sweep(axis: SweepVar, frames: usize, seed: u64) -> Result<SensitivityResult> {
    match axis {
        SweepVar::SnrData | SweepVar::SnrPilot => {
            return Err(Error::InvalidConfig(
                "sensitivity sweep axis must be an IQI parameter".into(),
            ))
        }
        _ => {}
    }
    let configs = sensitivity_pair("sensitivity", axis, frames, seed);
    let models = ModelSet::default();
    let otfs = run_ber_sweep(&configs[0], &models)?;
    let ofdm = run_ber_sweep(&configs[1], &models)?;
    Ok(SensitivityResult {
        axis,
        grid: configs[0].grid.clone(),
        otfs,
        ofdm,
        seed,
    })
}

pub fn sensitivity_csv(r: &SensitivityResult) -> String {
    let mut s = String::from(
        "x_value,otfs_ber,otfs_errors,otfs_bits,otfs_ci95,ofdm_ber,ofdm_errors,ofdm_bits,ofdm_ci95,seed,axis\n",
    );
    for (a, b) in r.otfs.iter().zip(&r.ofdm) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            a.x_value,
            sig6(a.ber),
            a.bit_errors,
            a.bits_total,
            sig6(a.ci95_halfwidth),
            sig6(b.ber),
            b.bit_errors,
            b.bits_total,
            sig6(b.ci95_halfwidth),
            r.seed,
            r.axis.name()
        );
    }
    s
}

/// Training request: defaults follow the per-role canonical hyperparameters;
/// any field can be overridden.
#[derive(Debug, Clone)]
pub struct TrainSpec {
    pub role: DnnRole,
    pub examples: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seed: u64,
    /// Data/pilot SNR for DNN-4 dataset generation.
    pub snr_data_db: f64,
    pub snr_pilot_db: f64,
    /// Estimated Rx imbalance, required for DNN-3.
    pub rx_estimate: Option<(f64, f64)>,
    /// Per-example SNR draw range for DNN-3.
    pub dnn3_snr_range_db: (f64, f64),
}

impl TrainSpec {
    pub fn new(role: DnnRole, seed: u64) -> Self {
        Self {
            role,
            examples: None,
            epochs: None,
            batch_size: None,
            learning_rate: None,
            seed,
            snr_data_db: 10.0,
            snr_pilot_db: 10.0,
            rx_estimate: None,
            dnn3_snr_range_db: (0.0, 14.0),
        }
    }
}

pub struct TrainOutcome {
    pub net: Mlp,
    pub loss_trace: Vec<f64>,
    /// Singular IQI draws resampled during DNN-1 dataset generation.
    pub resampled: usize,
    /// Metadata lines stored in the weight file.
    pub metadata: Vec<String>,
}

/// Build the role's dataset, train from scratch, and report the loss trace.
pub fn train_role(spec: &TrainSpec) -> Result<TrainOutcome> {
    let frame_len = 16;
    let n = spec.examples.unwrap_or_else(|| spec.role.default_example_count());
    let mut cfg = spec.role.default_train_config(spec.seed.wrapping_add(2));
    if let Some(e) = spec.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = spec.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = spec.learning_rate {
        cfg.adam.lr = lr;
    }

    let mut data_rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let mut resampled = 0usize;
    let data = match spec.role {
        DnnRole::Dnn1(scheme) => {
            let (d, r) = gen_dnn1_dataset(
                &ModAlphabet::new(scheme),
                n,
                &IqiRange::default(),
                &mut data_rng,
            )?;
            resampled = r;
            d
        }
        DnnRole::Dnn2 => gen_dnn2_dataset(
            &ModAlphabet::new(ModScheme::Bpsk),
            n,
            &IqiRange::default(),
            &mut data_rng,
        )?,
        DnnRole::Dnn3(scheme) => {
            let (dg, dphi) = spec.rx_estimate.ok_or_else(|| {
                Error::InvalidConfig("dnn3 training requires an Rx imbalance estimate".into())
            })?;
            let link = LinkConfig::new(ModAlphabet::new(scheme), spec.snr_data_db, spec.snr_pilot_db);
            gen_dnn3_dataset(
                &link,
                n,
                &IqiParams::new(dg, dphi),
                spec.dnn3_snr_range_db,
                &mut data_rng,
            )?
        }
        DnnRole::Dnn4 => {
            let link = LinkConfig::new(
                ModAlphabet::new(ModScheme::Bpsk),
                spec.snr_data_db,
                spec.snr_pilot_db,
            );
            gen_dnn4_dataset(&link, n, &mut data_rng)?
        }
    };

    let specs = spec.role.architecture(frame_len);
    let mut net = Mlp::new(&specs, spec.seed)?;
    let loss_trace = train(&mut net, &data, &cfg)?;

    let mut metadata = vec![
        format!("role {}", spec.role.name()),
        format!("examples {n}"),
        format!("epochs {}", cfg.epochs),
        format!("batch-size {}", cfg.batch_size),
        format!("learning-rate {}", cfg.adam.lr),
        format!("seed {}", spec.seed),
    ];
    if matches!(spec.role, DnnRole::Dnn4) {
        metadata.push(format!("snr-data-db {}", spec.snr_data_db));
        metadata.push(format!("snr-pilot-db {}", spec.snr_pilot_db));
    }
    if let Some((dg, dphi)) = spec.rx_estimate {
        metadata.push(format!("rx-estimate {dg} {dphi}"));
    }
    if let Some(last) = loss_trace.last() {
        metadata.push(format!("final-loss {last:e}"));
    }
    Ok(TrainOutcome {
        net,
        loss_trace,
        resampled,
        metadata,
    })
}

/// Train, save the weights, and save the loss trace as `<out>.loss.csv`.
pub fn train_command(spec: &TrainSpec, out_path: &Path) -> Result<TrainOutcome> {
    let outcome = train_role(spec)?;
    save_weights(&outcome.net, out_path, &outcome.metadata)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, loss) in outcome.loss_trace.iter().enumerate() {
        let _ = writeln!(csv, "{},{}", i + 1, sig6(*loss));
    }
    let mut loss_path = out_path.as_os_str().to_owned();
    loss_path.push(".loss.csv");
    fs::write(PathBuf::from(loss_path), csv)?;
    Ok(outcome)
}

pub use crate::neural::load_weights;

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn fast_cfg() -> ExperimentConfig {
        ExperimentConfig {
            preset: "test".into(),
            snr_data_db: 200.0,
            snr_pilot_db: 200.0,
            grid: vec![0.0, 2.0, 4.0],
            sweep: SweepVar::SnrPilot,
            frames_per_point: 5,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_clean_sweep_is_error_free() {
        // sweep pilot SNR so the 200 dB data SNR stays fixed
        let cfg = ExperimentConfig {
            sweep: SweepVar::SnrPilot,
            grid: vec![0.0, 10.0],
            ..fast_cfg()
        };
        let points = run_ber_sweep(&cfg, &ModelSet::default()).unwrap();
        for p in &points {
            assert_eq!(p.bit_errors, 0);
            assert_eq!(p.ber, 0.0);
            assert_eq!(p.bits_total, 5 * 16);
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let cfg = ExperimentConfig {
            snr_data_db: 8.0,
            ..fast_cfg()
        };
        let models = ModelSet::default();
        let a = run_ber_sweep(&cfg, &models).unwrap();
        let b = run_ber_sweep(&cfg, &models).unwrap();
        assert_eq!(ber_csv(&cfg, &a), ber_csv(&cfg, &b));
    }

    #[test]
    fn reference_one_shot_simulation_matches_sweep_engine() {
        // Independent single-loop reference: same per-frame streams, direct
        // re-simulation without the sweep plumbing.
        let cfg = ExperimentConfig {
            snr_data_db: 6.0,
            sweep: SweepVar::SnrData,
            grid: vec![6.0],
            frames_per_point: 400,
            seed: 11,
            ..Default::default()
        };
        let engine = run_ber_sweep(&cfg, &ModelSet::default()).unwrap();

        let link = LinkConfig::new(ModAlphabet::new(ModScheme::Bpsk), 6.0, 10.0);
        let det = MlDetector::new(ModAlphabet::new(ModScheme::Bpsk), 16).unwrap();
        let setup = LinkSetup::clean(DetectorChoice::Ml(&det));
        let mut errors = 0u64;
        let mut bits = 0u64;
        for frame in 0..400 {
            let mut rng = frame_rng(11, 0, frame);
            let r = crate::pipeline::simulate_frame(&link, &setup, &mut rng).unwrap();
            errors += r
                .tx_bits
                .iter()
                .zip(&r.rx_bits)
                .filter(|(a, b)| a != b)
                .count() as u64;
            bits += r.tx_bits.len() as u64;
        }
        assert_eq!(engine[0].bit_errors, errors);
        assert_eq!(engine[0].bits_total, bits);
    }

    #[test]
    fn ber_point_invariants() {
        let p = BerPoint::from_counts(3.0, 25, 1000);
        assert_eq!(p.ber, 0.025);
        assert!(p.ber >= 0.0 && p.ber <= 1.0);
        let expect = 1.96 * (0.025f64 * 0.975 / 1000.0).sqrt();
        assert!((p.ci95_halfwidth - expect).abs() < 1e-15);
    }

    #[test]
    fn config_round_trips_through_key_values() {
        let mut cfg = fast_cfg();
        cfg.models.dnn4 = Some(PathBuf::from("/tmp/dnn4.w"));
        cfg.tx_iqi = (0.4, 40.0);
        cfg.detector = DetectorKind::Dnn4;
        let text = cfg.to_key_values();
        let parsed = ExperimentConfig::from_key_values(&text).unwrap();
        assert_eq!(cfg, parsed);
    }

    #[test]
    fn config_rejects_unknown_keys_and_values() {
        assert!(ExperimentConfig::from_key_values("bogus = 1").is_err());
        assert!(ExperimentConfig::from_key_values("detector = turbo").is_err());
        assert!(ExperimentConfig::from_key_values("grid = 1,two").is_err());
    }

    #[test]
    fn empty_grid_and_zero_frames_rejected() {
        let mut cfg = fast_cfg();
        cfg.grid.clear();
        assert!(run_ber_sweep(&cfg, &ModelSet::default()).is_err());
        let mut cfg = fast_cfg();
        cfg.frames_per_point = 0;
        assert!(run_ber_sweep(&cfg, &ModelSet::default()).is_err());
    }

    #[test]
    fn csv_schema_and_formatting() {
        let cfg = fast_cfg();
        let points = vec![BerPoint::from_counts(2.0, 1, 80)];
        let csv = ber_csv(&cfg, &points);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "x_value,ber,errors,bits,ci95,seed,preset");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "2");
        assert_eq!(row[1], "1.25000e-2");
        assert_eq!(row[2], "1");
        assert_eq!(row[3], "80");
        assert_eq!(row[5], "9");
        assert_eq!(row[6], "test");
    }

    #[test]
    fn all_presets_expand() {
        for name in preset_names() {
            let curves = preset(name, 10, 1).unwrap();
            assert!(curves.len() >= 2, "{name}");
            let labels: Vec<&str> = curves.iter().map(|c| c.preset.as_str()).collect();
            let unique: std::collections::HashSet<&&str> = labels.iter().collect();
            assert_eq!(unique.len(), labels.len(), "{name} labels not unique");
            for c in &curves {
                c.validate().unwrap();
                assert!(c.preset.starts_with(name));
            }
        }
        assert!(preset("fig99", 10, 1).is_err());
    }

    #[test]
    fn sensitivity_zero_point_matches_clean_runs() {
        // At (0, 0) both systems must match their own no-IQI result exactly
        // (same seed, same streams).
        let frames = 40;
        let r = sensitivity_sweep(SweepVar::TxGain, frames, 5).unwrap();
        assert_eq!(r.grid[0], 0.0);
        let clean = sensitivity_sweep(SweepVar::TxPhase, frames, 5).unwrap();
        assert_eq!(r.otfs[0].bit_errors, clean.otfs[0].bit_errors);
        assert_eq!(r.ofdm[0].bit_errors, clean.ofdm[0].bit_errors);
        assert!(sensitivity_sweep(SweepVar::SnrData, 1, 1).is_err());
    }

    #[test]
    fn sensitivity_csv_has_per_system_columns() {
        let r = sensitivity_sweep(SweepVar::RxGain, 10, 3).unwrap();
        let csv = sensitivity_csv(&r);
        let header = csv.lines().next().unwrap();
        assert!(header.contains("otfs_ber"));
        assert!(header.contains("ofdm_ber"));
        assert_eq!(csv.lines().count(), r.grid.len() + 1);
    }

    #[test]
    fn missing_model_is_reported() {
        let cfg = ExperimentConfig {
            detector: DetectorKind::Dnn4,
            ..fast_cfg()
        };
        let err = run_ber_sweep(&cfg, &ModelSet::default()).unwrap_err();
        assert!(err.to_string().contains("dnn4"));
    }

    #[test]
    fn train_command_writes_model_and_loss_trace() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("dnn2.weights");
        let mut spec = TrainSpec::new(DnnRole::Dnn2, 7);
        spec.examples = Some(50);
        spec.epochs = Some(3);
        let outcome = train_command(&spec, &out).unwrap();
        assert_eq!(outcome.loss_trace.len(), 3);
        let net = load_weights(&out).unwrap();
        assert_eq!(net.input_dim(), 4);
        assert_eq!(net.output_dim(), 2);
        let loss = fs::read_to_string(dir.path().join("dnn2.weights.loss.csv")).unwrap();
        assert_eq!(loss.lines().count(), 4);
        assert_eq!(loss.lines().next().unwrap(), "epoch,loss");
        let text = fs::read_to_string(&out).unwrap();
        assert!(text.contains("# role dnn2"));
        assert!(text.contains("# seed 7"));
    }

    #[test]
    fn train_defaults_follow_roles() {
        let checks: HashMap<&str, (usize, usize, usize)> = [
            ("dnn1-bpsk", (1000, 5000, 5)),
            ("dnn2", (1000, 500, 5)),
            ("dnn3-bpsk", (50_000, 500, 50)),
            ("dnn4", (200_000, 500, 500)),
        ]
        .into_iter()
        .collect();
        for role in [
            DnnRole::Dnn1(ModScheme::Bpsk),
            DnnRole::Dnn2,
            DnnRole::Dnn3(ModScheme::Bpsk),
            DnnRole::Dnn4,
        ] {
            let (n, epochs, batch) = checks[role.name().as_str()];
            assert_eq!(role.default_example_count(), n);
            let cfg = role.default_train_config(0);
            assert_eq!(cfg.epochs, epochs);
            assert_eq!(cfg.batch_size, batch);
        }
    }

    #[test]
    fn dnn3_training_requires_estimate() {
        let spec = TrainSpec::new(DnnRole::Dnn3(ModScheme::Bpsk), 1);
        assert!(train_role(&spec).is_err());
    }

    #[test]
    fn write_ber_outputs_includes_resolved_config() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run.csv");
        let cfg = fast_cfg();
        let points = vec![BerPoint::from_counts(0.0, 0, 80)];
        write_ber_outputs(&cfg, &points, &out).unwrap();
        let audit = fs::read_to_string(dir.path().join("run.csv.config")).unwrap();
        let parsed = ExperimentConfig::from_key_values(&audit).unwrap();
        assert_eq!(parsed, cfg);
    }
}
