//! OTFS frame geometry, delay-Doppler <-> time-frequency transforms, the
//! P-path delay-Doppler channel, and AWGN bookkeeping.
//!
//! Symbols live on an N x M delay-Doppler grid (N Doppler rows, M delay
//! columns). The grid element at Doppler index `k`, delay index `l` maps to
//! vector index `k + N*l`. The channel acts as a twisted cyclic convolution
//! on the grid; `EffectiveChannel` is the same operator materialized as an
//! MN x MN matrix.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::TAU;

use crate::error::{Error, Result};

/// OTFS frame geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtfsConfig {
    /// Delay bins / subcarriers (M).
    pub delay_bins: usize,
    /// Doppler bins / time slots (N).
    pub doppler_bins: usize,
    /// Subcarrier spacing in Hz; the slot duration is its reciprocal.
    pub subcarrier_spacing_hz: f64,
    /// Carrier frequency in Hz (metadata only).
    pub carrier_freq_hz: f64,
}

impl OtfsConfig {
    pub fn new(delay_bins: usize, doppler_bins: usize) -> Self {
        Self {
            delay_bins,
            doppler_bins,
            subcarrier_spacing_hz: 3.75e3,
            carrier_freq_hz: 4e9,
        }
    }

    /// Total symbols per frame, MN.
    pub fn frame_len(&self) -> usize {
        self.delay_bins * self.doppler_bins
    }

    /// Vector index of grid element (doppler k, delay l): k + N*l.
    pub fn vec_index(&self, doppler: usize, delay: usize) -> usize {
        doppler + self.doppler_bins * delay
    }
}

/// N x M grid of complex values in the delay-Doppler domain.
/// Rows index Doppler (k), columns index delay (l).
#[derive(Debug, Clone, PartialEq)]
pub struct DdGrid {
    pub values: Array2<Complex64>,
}

/// N x M grid in the time-frequency domain (rows: time slot n, cols: subcarrier m).
#[derive(Debug, Clone, PartialEq)]
pub struct TfGrid {
    pub values: Array2<Complex64>,
}

impl DdGrid {
    pub fn zeros(cfg: &OtfsConfig) -> Self {
        Self {
            values: Array2::zeros((cfg.doppler_bins, cfg.delay_bins)),
        }
    }

    pub fn doppler_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn delay_bins(&self) -> usize {
        self.values.ncols()
    }

    fn check_dims(&self, cfg: &OtfsConfig) -> Result<()> {
        if self.doppler_bins() != cfg.doppler_bins || self.delay_bins() != cfg.delay_bins {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{} grid", cfg.doppler_bins, cfg.delay_bins),
                got: format!("{}x{} grid", self.doppler_bins(), self.delay_bins()),
            });
        }
        Ok(())
    }
}

/// Flatten a grid into an MN vector with element (k,l) at index k + N*l.
pub fn vectorize(grid: &DdGrid, cfg: &OtfsConfig) -> Result<Array1<Complex64>> {
    grid.check_dims(cfg)?;
    let mut v = Array1::zeros(cfg.frame_len());
    for l in 0..cfg.delay_bins {
        for k in 0..cfg.doppler_bins {
            v[cfg.vec_index(k, l)] = grid.values[(k, l)];
        }
    }
    Ok(v)
}

/// Inverse of [`vectorize`].
pub fn devectorize(v: &Array1<Complex64>, cfg: &OtfsConfig) -> Result<DdGrid> {
    if v.len() != cfg.frame_len() {
        return Err(Error::DimensionMismatch {
            expected: format!("vector of length {}", cfg.frame_len()),
            got: format!("length {}", v.len()),
        });
    }
    let mut g = DdGrid::zeros(cfg);
    for l in 0..cfg.delay_bins {
        for k in 0..cfg.doppler_bins {
            g.values[(k, l)] = v[cfg.vec_index(k, l)];
        }
    }
    Ok(g)
}

fn cexp(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase)
}

/// Map a DD grid to the TF grid:
/// X[n,m] = (1/MN) * sum_{k,l} x[k,l] * exp(j*2pi*(nk/N - ml/M)).
pub fn isfft(grid: &DdGrid, cfg: &OtfsConfig) -> Result<TfGrid> {
    grid.check_dims(cfg)?;
    let (n_bins, m_bins) = (cfg.doppler_bins, cfg.delay_bins);
    // X = (1/MN) * A x B^T with A[n,k] = e^{+j2pi nk/N}, B[m,l] = e^{-j2pi ml/M}.
    let a = Array2::from_shape_fn((n_bins, n_bins), |(n, k)| {
        cexp(TAU * (n * k) as f64 / n_bins as f64)
    });
    let b = Array2::from_shape_fn((m_bins, m_bins), |(l, m)| {
        cexp(-TAU * (m * l) as f64 / m_bins as f64)
    });
    let scale = Complex64::new(1.0 / (m_bins * n_bins) as f64, 0.0);
    let x = a.dot(&grid.values).dot(&b) * scale;
    Ok(TfGrid { values: x })
}

/// Map a TF grid back to the DD grid:
/// y[k,l] = sum_{n,m} Y[n,m] * exp(-j*2pi*(nk/N - ml/M)).
pub fn sfft(tf: &TfGrid, cfg: &OtfsConfig) -> Result<DdGrid> {
    if tf.values.nrows() != cfg.doppler_bins || tf.values.ncols() != cfg.delay_bins {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{} grid", cfg.doppler_bins, cfg.delay_bins),
            got: format!("{}x{} grid", tf.values.nrows(), tf.values.ncols()),
        });
    }
    let (n_bins, m_bins) = (cfg.doppler_bins, cfg.delay_bins);
    let c = Array2::from_shape_fn((n_bins, n_bins), |(k, n)| {
        cexp(-TAU * (k * n) as f64 / n_bins as f64)
    });
    let d = Array2::from_shape_fn((m_bins, m_bins), |(m, l)| {
        cexp(TAU * (l * m) as f64 / m_bins as f64)
    });
    let y = c.dot(&tf.values).dot(&d);
    Ok(DdGrid { values: y })
}

/// One propagation path: complex gain plus integer delay/Doppler taps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdPath {
    pub gain: Complex64,
    pub delay_tap: usize,
    pub doppler_tap: usize,
}

/// P-path delay-Doppler channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DdChannel {
    pub paths: Vec<DdPath>,
}

/// The 4-path uniform-power profile used throughout the benchmarks:
/// delay taps 0..=3, Doppler tap 1 on every path.
pub fn uniform_delay_profile() -> Vec<(usize, usize)> {
    vec![(0, 1), (1, 1), (2, 1), (3, 1)]
}

impl DdChannel {
    pub fn new(paths: Vec<DdPath>) -> Self {
        Self { paths }
    }

    /// Draw i.i.d. CN(0, 1/P) gains on the given (delay, doppler) tap profile.
    pub fn rayleigh<R: Rng + ?Sized>(profile: &[(usize, usize)], rng: &mut R) -> Self {
        let p = profile.len();
        let std = (0.5 / p as f64).sqrt();
        let paths = profile
            .iter()
            .map(|&(delay_tap, doppler_tap)| DdPath {
                gain: Complex64::new(
                    std * rng.sample::<f64, _>(StandardNormal),
                    std * rng.sample::<f64, _>(StandardNormal),
                ),
                delay_tap,
                doppler_tap,
            })
            .collect();
        Self { paths }
    }

    /// Build a channel whose *effective* gains (gain rotated by the
    /// delay-Doppler phase) equal `effective_gains` on the given taps.
    pub fn from_effective_gains(
        effective_gains: &[Complex64],
        profile: &[(usize, usize)],
        cfg: &OtfsConfig,
    ) -> Self {
        let mn = cfg.frame_len() as f64;
        let paths = effective_gains
            .iter()
            .zip(profile)
            .map(|(&g, &(delay_tap, doppler_tap))| DdPath {
                gain: g * cexp(TAU * (delay_tap * doppler_tap) as f64 / mn),
                delay_tap,
                doppler_tap,
            })
            .collect();
        Self { paths }
    }

    /// Effective gain of path `i`: h'_i = h_i * exp(-j*2pi*alpha_i*beta_i/(MN)).
    pub fn effective_gain(&self, i: usize, cfg: &OtfsConfig) -> Complex64 {
        let p = &self.paths[i];
        p.gain * cexp(-TAU * (p.delay_tap * p.doppler_tap) as f64 / cfg.frame_len() as f64)
    }

    fn check_taps(&self, cfg: &OtfsConfig) -> Result<()> {
        for p in &self.paths {
            if p.delay_tap >= cfg.delay_bins || p.doppler_tap >= cfg.doppler_bins {
                return Err(Error::TapOutOfBounds {
                    delay: p.delay_tap,
                    doppler: p.doppler_tap,
                    m: cfg.delay_bins,
                    n: cfg.doppler_bins,
                });
            }
        }
        Ok(())
    }
}

/// Noiseless twisted cyclic convolution of the grid with the channel:
/// y[k,l] = sum_i h'_i * x[(k - beta_i) mod N, (l - alpha_i) mod M].
pub fn apply_dd_channel(x: &DdGrid, ch: &DdChannel, cfg: &OtfsConfig) -> Result<DdGrid> {
    x.check_dims(cfg)?;
    ch.check_taps(cfg)?;
    let (n_bins, m_bins) = (cfg.doppler_bins, cfg.delay_bins);
    let mut y = DdGrid::zeros(cfg);
    for (i, p) in ch.paths.iter().enumerate() {
        let h_eff = ch.effective_gain(i, cfg);
        for k in 0..n_bins {
            let ks = (k + n_bins - p.doppler_tap) % n_bins;
            for l in 0..m_bins {
                let ls = (l + m_bins - p.delay_tap) % m_bins;
                y.values[(k, l)] += h_eff * x.values[(ks, ls)];
            }
        }
    }
    Ok(y)
}

/// Materialize the channel as the MN x MN matrix H with
/// H * vectorize(x) == vectorize(apply_dd_channel(x)).
pub fn build_effective_channel(ch: &DdChannel, cfg: &OtfsConfig) -> Result<Array2<Complex64>> {
    ch.check_taps(cfg)?;
    let (n_bins, m_bins) = (cfg.doppler_bins, cfg.delay_bins);
    let mn = cfg.frame_len();
    let mut h = Array2::zeros((mn, mn));
    for (i, p) in ch.paths.iter().enumerate() {
        let h_eff = ch.effective_gain(i, cfg);
        for k in 0..n_bins {
            let ks = (k + n_bins - p.doppler_tap) % n_bins;
            for l in 0..m_bins {
                let ls = (l + m_bins - p.delay_tap) % m_bins;
                h[(cfg.vec_index(k, l), cfg.vec_index(ks, ls))] += h_eff;
            }
        }
    }
    Ok(h)
}

/// Per-complex-sample AWGN level. For unit-energy symbols the defining
/// relation is sigma2 = 10^(-SNR_dB/10).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma2: f64,
}

impl NoiseModel {
    pub fn new(sigma2: f64) -> Result<Self> {
        if sigma2 < 0.0 {
            return Err(Error::NegativeVariance(sigma2));
        }
        Ok(Self { sigma2 })
    }

    pub fn from_snr_db(snr_db: f64) -> Self {
        Self {
            sigma2: 10f64.powf(-snr_db / 10.0),
        }
    }

    /// Draw one CN(0, sigma2) sample (variance split evenly across Re/Im).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        let std = (self.sigma2 / 2.0).sqrt();
        Complex64::new(
            std * rng.sample::<f64, _>(StandardNormal),
            std * rng.sample::<f64, _>(StandardNormal),
        )
    }
}

/// v + n with n i.i.d. CN(0, sigma2).
pub fn add_awgn<R: Rng + ?Sized>(
    v: &Array1<Complex64>,
    noise: &NoiseModel,
    rng: &mut R,
) -> Array1<Complex64> {
    v.mapv(|x| x + noise.sample(rng))
}
