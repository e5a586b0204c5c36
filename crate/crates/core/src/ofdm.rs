//! Minimal OFDM arm over the same delay-Doppler channel, for the
//! IQI-sensitivity comparison against OTFS.
//!
//! A frame is N OFDM symbols of M subcarriers each, unitary (I)DFT, cyclic
//! prefix per symbol. The receiver equalizes each subcarrier with a single
//! tap computed from the true channel, so Doppler shows up as uncancelled
//! inter-carrier interference.

use ndarray::Array2;
use num_complex::Complex64;
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::detectors::ModAlphabet;
use crate::otfs::DdChannel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfdmConfig {
    pub num_subcarriers: usize,
    pub num_symbols: usize,
    pub cp_len: usize,
}

impl OfdmConfig {
    pub fn new(num_subcarriers: usize, num_symbols: usize, cp_len: usize) -> Self {
        Self {
            num_subcarriers,
            num_symbols,
            cp_len,
        }
    }

    pub fn block_len(&self) -> usize {
        self.num_subcarriers + self.cp_len
    }

    pub fn sample_count(&self) -> usize {
        self.num_symbols * self.block_len()
    }

    /// OTFS-equivalent frame length MN; the Doppler phase ramp is anchored to
    /// this so the physical channel matches the OTFS arm.
    pub fn equivalent_frame_len(&self) -> usize {
        self.num_subcarriers * self.num_symbols
    }
}

fn cexp(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase)
}

/// Unitary M-point inverse DFT.
fn idft(freq: &[Complex64]) -> Vec<Complex64> {
    let m = freq.len();
    let scale = 1.0 / (m as f64).sqrt();
    (0..m)
        .map(|a| {
            freq.iter()
                .enumerate()
                .map(|(f, &v)| v * cexp(TAU * (a * f) as f64 / m as f64))
                .sum::<Complex64>()
                * scale
        })
        .collect()
}

/// Unitary M-point forward DFT.
fn dft(time: &[Complex64]) -> Vec<Complex64> {
    let m = time.len();
    let scale = 1.0 / (m as f64).sqrt();
    (0..m)
        .map(|f| {
            time.iter()
                .enumerate()
                .map(|(a, &v)| v * cexp(-TAU * (a * f) as f64 / m as f64))
                .sum::<Complex64>()
                * scale
        })
        .collect()
}

/// IDFT each row of the N x M grid and prepend a cyclic prefix; rows are
/// concatenated in time order.
pub fn ofdm_modulate(grid: &Array2<Complex64>, cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    if grid.nrows() != cfg.num_symbols || grid.ncols() != cfg.num_subcarriers {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{} grid", cfg.num_symbols, cfg.num_subcarriers),
            got: format!("{}x{}", grid.nrows(), grid.ncols()),
        });
    }
    let mut out = Vec::with_capacity(cfg.sample_count());
    for row in grid.rows() {
        let time = idft(row.as_slice().expect("contiguous row"));
        out.extend_from_slice(&time[cfg.num_subcarriers - cfg.cp_len..]);
        out.extend_from_slice(&time);
    }
    Ok(out)
}

/// Strip CPs and DFT each symbol back to the frequency grid.
pub fn ofdm_demodulate(samples: &[Complex64], cfg: &OfdmConfig) -> Result<Array2<Complex64>> {
    if samples.len() != cfg.sample_count() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} samples", cfg.sample_count()),
            got: format!("{}", samples.len()),
        });
    }
    let mut grid = Array2::zeros((cfg.num_symbols, cfg.num_subcarriers));
    for n in 0..cfg.num_symbols {
        let start = n * cfg.block_len() + cfg.cp_len;
        let freq = dft(&samples[start..start + cfg.num_subcarriers]);
        for (m, v) in freq.into_iter().enumerate() {
            grid[(n, m)] = v;
        }
    }
    Ok(grid)
}

/// Discrete time-domain action of the DD channel:
/// r[n] = sum_i h_i * s[n - alpha_i] * exp(j*2pi*beta_i*(n - alpha_i)/(MN)),
/// with s zero-padded before the frame start and MN the OTFS-equivalent
/// frame length.
pub fn apply_time_channel(
    samples: &[Complex64],
    ch: &DdChannel,
    cfg: &OfdmConfig,
) -> Result<Vec<Complex64>> {
    for p in &ch.paths {
        if p.delay_tap > cfg.cp_len {
            return Err(Error::InvalidConfig(format!(
                "delay tap {} exceeds cyclic prefix {}",
                p.delay_tap, cfg.cp_len
            )));
        }
    }
    let frame_len = cfg.equivalent_frame_len() as f64;
    let mut out = vec![Complex64::new(0.0, 0.0); samples.len()];
    for p in &ch.paths {
        for (n, o) in out.iter_mut().enumerate() {
            if n < p.delay_tap {
                continue;
            }
            let src = n - p.delay_tap;
            let phase = TAU * p.doppler_tap as f64 * src as f64 / frame_len;
            *o += p.gain * samples[src] * cexp(phase);
        }
    }
    Ok(out)
}

/// One-tap frequency response of OFDM symbol `symbol_idx`: the diagonal of
/// the per-symbol DFT-domain channel operator, obtained by probing each
/// subcarrier through modulate -> channel -> demodulate. Off-diagonal energy
/// is the ICI the one-tap equalizer leaves behind.
pub fn per_subcarrier_response(
    ch: &DdChannel,
    cfg: &OfdmConfig,
    symbol_idx: usize,
) -> Result<Vec<Complex64>> {
    let mut diag = vec![Complex64::new(0.0, 0.0); cfg.num_subcarriers];
    for m in 0..cfg.num_subcarriers {
        let mut grid = Array2::zeros((cfg.num_symbols, cfg.num_subcarriers));
        grid[(symbol_idx, m)] = Complex64::new(1.0, 0.0);
        let rx = apply_time_channel(&ofdm_modulate(&grid, cfg)?, ch, cfg)?;
        let freq = ofdm_demodulate(&rx, cfg)?;
        diag[m] = freq[(symbol_idx, m)];
    }
    Ok(diag)
}

/// Full receive chain: strip CP, DFT, per-subcarrier single-tap MMSE with the
/// true per-symbol response, nearest-symbol quantization. Returns symbol
/// indices in row-major (symbol, subcarrier) order.
pub fn ofdm_receive(
    samples: &[Complex64],
    ch: &DdChannel,
    cfg: &OfdmConfig,
    sigma2: f64,
    alphabet: &ModAlphabet,
) -> Result<Vec<usize>> {
    if sigma2 < 0.0 {
        return Err(Error::NegativeVariance(sigma2));
    }
    let freq = ofdm_demodulate(samples, cfg)?;
    let mut out = Vec::with_capacity(cfg.num_symbols * cfg.num_subcarriers);
    for n in 0..cfg.num_symbols {
        let diag = per_subcarrier_response(ch, cfg, n)?;
        for m in 0..cfg.num_subcarriers {
            let c = diag[m];
            let eq = c.conj() * freq[(n, m)] / (c.norm_sqr() + sigma2);
            out.push(alphabet.quantize(eq));
        }
    }
    Ok(out)
}
