//! Classical receiver baselines: modulation alphabets with Gray bit maps,
//! exhaustive maximum-likelihood detection, MMSE detection, and impulse-based
//! delay-Doppler channel estimation.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::otfs::{DdChannel, DdGrid, OtfsConfig};

/// Default cap on the ML candidate count (2^20).
pub const DEFAULT_ML_BUDGET: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModScheme {
    Bpsk,
    Qam4,
    Qam16,
}

impl ModScheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Self::Bpsk),
            "4qam" | "qam4" | "qpsk" => Ok(Self::Qam4),
            "16qam" | "qam16" => Ok(Self::Qam16),
            other => Err(Error::InvalidConfig(format!("unknown alphabet '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Bpsk => "bpsk",
            Self::Qam4 => "4qam",
            Self::Qam16 => "16qam",
        }
    }
}

/// A unit-average-energy constellation with a bijective bit map.
/// Symbol index `i` corresponds to the bit pattern of `i`, most significant
/// bit first; QAM maps are Gray-coded per axis, BPSK maps 0 -> +1, 1 -> -1.
#[derive(Debug, Clone, PartialEq)]
pub struct ModAlphabet {
    pub scheme: ModScheme,
    pub symbols: Vec<Complex64>,
    pub bits_per_symbol: usize,
}

/// 2-bit Gray map to the 4 amplitude levels {-3,-1,+1,+3} (unnormalized).
fn gray_level(b0: u8, b1: u8) -> f64 {
    match (b0, b1) {
        (0, 0) => -3.0,
        (0, 1) => -1.0,
        (1, 1) => 1.0,
        (1, 0) => 3.0,
        _ => unreachable!(),
    }
}

impl ModAlphabet {
    pub fn new(scheme: ModScheme) -> Self {
        match scheme {
            ModScheme::Bpsk => Self {
                scheme,
                symbols: vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
                bits_per_symbol: 1,
            },
            ModScheme::Qam4 => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                // bits (b0, b1): I = (1-2*b0)/sqrt(2), Q = (1-2*b1)/sqrt(2)
                let symbols = (0..4u8)
                    .map(|i| {
                        let b0 = (i >> 1) & 1;
                        let b1 = i & 1;
                        Complex64::new(
                            s * (1.0 - 2.0 * b0 as f64),
                            s * (1.0 - 2.0 * b1 as f64),
                        )
                    })
                    .collect();
                Self {
                    scheme,
                    symbols,
                    bits_per_symbol: 2,
                }
            }
            ModScheme::Qam16 => {
                let scale = 1.0 / 10f64.sqrt();
                // bits (b0,b1) drive I, (b2,b3) drive Q, Gray per axis.
                let symbols = (0..16u8)
                    .map(|i| {
                        let b = [(i >> 3) & 1, (i >> 2) & 1, (i >> 1) & 1, i & 1];
                        Complex64::new(
                            scale * gray_level(b[0], b[1]),
                            scale * gray_level(b[2], b[3]),
                        )
                    })
                    .collect();
                Self {
                    scheme,
                    symbols,
                    bits_per_symbol: 4,
                }
            }
        }
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    /// Index of the nearest symbol in Euclidean distance; ties go to the
    /// lowest index.
    pub fn quantize(&self, x: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, s) in self.symbols.iter().enumerate() {
            let d = (x - s).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Pack bits (0/1, `bits_per_symbol` per chunk, MSB first) into symbol
    /// indices.
    pub fn bits_to_indices(&self, bits: &[u8]) -> Result<Vec<usize>> {
        if bits.len() % self.bits_per_symbol != 0 {
            return Err(Error::BitCount(bits.len(), self.bits_per_symbol));
        }
        Ok(bits
            .chunks(self.bits_per_symbol)
            .map(|c| c.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize))
            .collect())
    }

    pub fn indices_to_bits(&self, indices: &[usize]) -> Vec<u8> {
        let mut bits = Vec::with_capacity(indices.len() * self.bits_per_symbol);
        for &idx in indices {
            for shift in (0..self.bits_per_symbol).rev() {
                bits.push(((idx >> shift) & 1) as u8);
            }
        }
        bits
    }

    pub fn bits_to_symbols(&self, bits: &[u8]) -> Result<Vec<Complex64>> {
        Ok(self
            .bits_to_indices(bits)?
            .into_iter()
            .map(|i| self.symbols[i])
            .collect())
    }

    /// Quantize each received symbol and unpack the bit patterns.
    pub fn symbols_to_bits(&self, symbols: &[Complex64]) -> Vec<u8> {
        let indices: Vec<usize> = symbols.iter().map(|&s| self.quantize(s)).collect();
        self.indices_to_bits(&indices)
    }

    fn is_real(&self) -> bool {
        self.symbols.iter().all(|s| s.im == 0.0)
    }
}

/// Exhaustive ML detector over the full candidate set, walked in mixed-radix
/// reflected Gray order so each step changes one symbol. The per-step metric
/// update uses the quadratic form ||y - Hx||^2 = ||y||^2 - 2 Re(b^H x) + x^H G x
/// with b = H^H y and G = H^H H.
pub struct MlDetector {
    alphabet: ModAlphabet,
    dim: usize,
    budget: u64,
    /// Gray schedule: (digit position, new digit value) per step.
    schedule: Vec<(u32, u8)>,
}

fn gray_schedule(base: usize, dim: usize) -> Vec<(u32, u8)> {
    // Loopless reflected mixed-radix Gray code (focus-pointer form).
    let total = (base as u128).pow(dim as u32);
    let mut schedule = Vec::with_capacity((total - 1) as usize);
    let mut digits = vec![0i32; dim];
    let mut dir = vec![1i32; dim];
    let mut focus: Vec<usize> = (0..=dim).collect();
    loop {
        let j = focus[0];
        focus[0] = 0;
        if j == dim {
            break;
        }
        digits[j] += dir[j];
        if digits[j] == 0 || digits[j] == base as i32 - 1 {
            dir[j] = -dir[j];
            focus[j] = focus[j + 1];
            focus[j + 1] = j + 1;
        }
        schedule.push((j as u32, digits[j] as u8));
    }
    schedule
}

impl MlDetector {
    pub fn new(alphabet: ModAlphabet, dim: usize) -> Result<Self> {
        Self::with_budget(alphabet, dim, DEFAULT_ML_BUDGET)
    }

    pub fn with_budget(alphabet: ModAlphabet, dim: usize, budget: u64) -> Result<Self> {
        let candidates = (alphabet.size() as u128).pow(dim as u32);
        if candidates > budget as u128 {
            return Err(Error::MlBudgetExceeded { candidates, budget });
        }
        let schedule = gray_schedule(alphabet.size(), dim);
        Ok(Self {
            alphabet,
            dim,
            budget,
            schedule,
        })
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    /// argmin over all candidate symbol vectors of ||y - Hx||^2; exact metric
    /// ties go to the lexicographically smallest index vector.
    pub fn detect(&self, y: &Array1<Complex64>, h: &Array2<Complex64>) -> Result<Vec<usize>> {
        let n = self.dim;
        if y.len() != n || h.nrows() != n || h.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("y of length {n} and {n}x{n} H"),
                got: format!("y of length {}, {}x{} H", y.len(), h.nrows(), h.ncols()),
            });
        }
        let b = h.t().mapv(|v| v.conj()).dot(y);
        let g = h.t().mapv(|v| v.conj()).dot(h);
        if self.alphabet.is_real() {
            Ok(self.detect_real(&b, &g))
        } else {
            Ok(self.detect_complex(&b, &g))
        }
    }

    /// Fast path for purely real alphabets (BPSK): only the real parts of b
    /// and G enter the metric.
    fn detect_real(&self, b: &Array1<Complex64>, g: &Array2<Complex64>) -> Vec<usize> {
        let n = self.dim;
        let syms: Vec<f64> = self.alphabet.symbols.iter().map(|s| s.re).collect();
        let br: Vec<f64> = b.iter().map(|v| v.re).collect();
        let gr: Vec<f64> = g.iter().map(|v| v.re).collect(); // row-major n x n
        let mut digits = vec![0u8; n];
        let x0 = syms[0];
        // t = G x for the all-zeros-index candidate.
        let mut t: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| gr[i * n + j] * x0).sum())
            .collect();
        let mut metric: f64 =
            -2.0 * br.iter().map(|bi| bi * x0).sum::<f64>() + x0 * t.iter().sum::<f64>();
        let mut best_metric = metric;
        let mut best = digits.clone();
        for &(pos, new_digit) in &self.schedule {
            let j = pos as usize;
            let delta = syms[new_digit as usize] - syms[digits[j] as usize];
            metric += delta * (2.0 * (t[j] - br[j]) + delta * gr[j * n + j]);
            let col = &gr[j * n..]; // row j == column j for symmetric real part
            for (ti, &gij) in t.iter_mut().zip(col.iter().take(n)) {
                *ti += delta * gij;
            }
            digits[j] = new_digit;
            if metric < best_metric
                || (metric == best_metric && digits < best)
            {
                best_metric = metric;
                best.copy_from_slice(&digits);
            }
        }
        best.into_iter().map(|d| d as usize).collect()
    }

    fn detect_complex(&self, b: &Array1<Complex64>, g: &Array2<Complex64>) -> Vec<usize> {
        let n = self.dim;
        let syms = &self.alphabet.symbols;
        let mut digits = vec![0u8; n];
        let x0 = syms[0];
        let mut t: Vec<Complex64> = (0..n)
            .map(|i| (0..n).map(|j| g[(i, j)] * x0).sum())
            .collect();
        let mut metric: f64 = -2.0
            * b.iter().map(|bi| (bi.conj() * x0).re).sum::<f64>()
            + t.iter().map(|ti| (x0.conj() * ti).re).sum::<f64>();
        let mut best_metric = metric;
        let mut best = digits.clone();
        for &(pos, new_digit) in &self.schedule {
            let j = pos as usize;
            let delta = syms[new_digit as usize] - syms[digits[j] as usize];
            metric += -2.0 * (b[j].conj() * delta).re
                + 2.0 * (delta.conj() * t[j]).re
                + delta.norm_sqr() * g[(j, j)].re;
            for (i, ti) in t.iter_mut().enumerate() {
                // G is Hermitian; column j equals conj of row j.
                *ti += delta * g[(j, i)].conj();
            }
            digits[j] = new_digit;
            if metric < best_metric
                || (metric == best_metric && digits < best)
            {
                best_metric = metric;
                best.copy_from_slice(&digits);
            }
        }
        best.into_iter().map(|d| d as usize).collect()
    }
}

/// One-shot ML detection; prefer [`MlDetector`] when calling repeatedly.
pub fn ml_detect(
    y: &Array1<Complex64>,
    h: &Array2<Complex64>,
    alphabet: &ModAlphabet,
) -> Result<Vec<usize>> {
    MlDetector::new(alphabet.clone(), y.len())?.detect(y, h)
}

/// Solve A z = rhs by Gaussian elimination with partial pivoting.
pub(crate) fn solve_complex(
    a: &Array2<Complex64>,
    rhs: &Array1<Complex64>,
) -> Result<Array1<Complex64>> {
    let n = a.nrows();
    if a.ncols() != n || rhs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("square system of size {n}"),
            got: format!("{}x{} matrix, rhs length {}", a.nrows(), a.ncols(), rhs.len()),
        });
    }
    let mut m = a.clone();
    let mut b = rhs.clone();
    let scale: f64 = m.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1.0);
    let tol = 1e-13 * scale;
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| {
                m[(i, col)]
                    .norm()
                    .partial_cmp(&m[(j, col)].norm())
                    .unwrap()
            })
            .unwrap();
        if m[(pivot_row, col)].norm() < tol {
            return Err(Error::SingularSystem(tol));
        }
        if pivot_row != col {
            for k in 0..n {
                let tmp = m[(col, k)];
                m[(col, k)] = m[(pivot_row, k)];
                m[(pivot_row, k)] = tmp;
            }
            b.swap(col, pivot_row);
        }
        let pivot = m[(col, col)];
        for row in col + 1..n {
            let factor = m[(row, col)] / pivot;
            if factor.norm() == 0.0 {
                continue;
            }
            for k in col..n {
                let sub = factor * m[(col, k)];
                m[(row, k)] -= sub;
            }
            let sub = factor * b[col];
            b[row] -= sub;
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= m[(row, k)] * x[k];
        }
        x[row] = acc / m[(row, row)];
    }
    Ok(x)
}

/// Linear MMSE stage: (H^H H + sigma2 I)^{-1} H^H y, before quantization.
pub fn mmse_linear_stage(
    y: &Array1<Complex64>,
    h: &Array2<Complex64>,
    sigma2: f64,
) -> Result<Array1<Complex64>> {
    if sigma2 < 0.0 {
        return Err(Error::NegativeVariance(sigma2));
    }
    let hh = h.t().mapv(|v| v.conj());
    let mut a = hh.dot(h);
    for i in 0..a.nrows() {
        a[(i, i)] += Complex64::new(sigma2, 0.0);
    }
    let rhs = hh.dot(y);
    solve_complex(&a, &rhs)
}

/// MMSE detection: linear stage followed by nearest-symbol quantization.
pub fn mmse_detect(
    y: &Array1<Complex64>,
    h: &Array2<Complex64>,
    sigma2: f64,
    alphabet: &ModAlphabet,
) -> Result<Vec<usize>> {
    let z = mmse_linear_stage(y, h, sigma2)?;
    Ok(z.iter().map(|&v| alphabet.quantize(v)).collect())
}

/// Estimate per-path effective gains from a received impulse-pilot frame.
/// The pilot frame carried a single nonzero symbol of amplitude `pilot_amp`
/// at grid location `pilot_loc` = (doppler, delay); each known tap pair then
/// shows up at a distinct read-off location.
pub fn impulse_channel_estimate(
    y_pilot: &DdGrid,
    pilot_loc: (usize, usize),
    pilot_amp: f64,
    profile: &[(usize, usize)],
    cfg: &OtfsConfig,
) -> Result<DdChannel> {
    for (i, a) in profile.iter().enumerate() {
        for b in &profile[i + 1..] {
            if a == b {
                return Err(Error::DuplicateTap(a.0, a.1));
            }
        }
    }
    let (k_p, l_p) = pilot_loc;
    let gains: Vec<Complex64> = profile
        .iter()
        .map(|&(delay_tap, doppler_tap)| {
            let k = (k_p + doppler_tap) % cfg.doppler_bins;
            let l = (l_p + delay_tap) % cfg.delay_bins;
            y_pilot.values[(k, l)] / pilot_amp
        })
        .collect();
    Ok(DdChannel::from_effective_gains(&gains, profile, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::otfs::{
        add_awgn, apply_dd_channel, build_effective_channel, devectorize, uniform_delay_profile,
        vectorize, NoiseModel,
    };
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn alphabets_unit_energy_and_bijective() {
        for scheme in [ModScheme::Bpsk, ModScheme::Qam4, ModScheme::Qam16] {
            let a = ModAlphabet::new(scheme);
            let mean_energy: f64 =
                a.symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / a.size() as f64;
            assert_abs_diff_eq!(mean_energy, 1.0, epsilon = 1e-12);
            // all symbols distinct
            for i in 0..a.size() {
                for j in i + 1..a.size() {
                    assert!((a.symbols[i] - a.symbols[j]).norm() > 1e-6);
                }
            }
        }
    }

    #[test]
    fn bpsk_bit_map() {
        let a = ModAlphabet::new(ModScheme::Bpsk);
        let syms = a.bits_to_symbols(&[0, 1]).unwrap();
        assert_eq!(syms[0], Complex64::new(1.0, 0.0));
        assert_eq!(syms[1], Complex64::new(-1.0, 0.0));
    }

    #[test]
    fn bit_roundtrip_all_alphabets() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for scheme in [ModScheme::Bpsk, ModScheme::Qam4, ModScheme::Qam16] {
            let a = ModAlphabet::new(scheme);
            let bits: Vec<u8> = (0..a.bits_per_symbol * 32)
                .map(|_| rng.gen_range(0..2u8))
                .collect();
            let syms = a.bits_to_symbols(&bits).unwrap();
            let back = a.symbols_to_bits(&syms);
            assert_eq!(bits, back);
        }
    }

    #[test]
    fn bad_bit_count_rejected() {
        let a = ModAlphabet::new(ModScheme::Qam4);
        assert!(matches!(
            a.bits_to_symbols(&[0, 1, 0]),
            Err(Error::BitCount(3, 2))
        ));
    }

    #[test]
    fn qam4_gray_adjacency() {
        // Exhaustive: any two symbols at minimum distance differ in one bit.
        let a = ModAlphabet::new(ModScheme::Qam4);
        let dmin = 2.0 * std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                let d = (a.symbols[i] - a.symbols[j]).norm();
                if d < dmin + 1e-9 {
                    let diff = (i ^ j).count_ones();
                    assert_eq!(diff, 1, "symbols {i},{j} at distance {d}");
                }
            }
        }
    }

    #[test]
    fn qam16_gray_adjacency() {
        let a = ModAlphabet::new(ModScheme::Qam16);
        let dmin = 2.0 / 10f64.sqrt();
        for i in 0..16 {
            for j in 0..16 {
                if i == j {
                    continue;
                }
                if (a.symbols[i] - a.symbols[j]).norm() < dmin + 1e-9 {
                    assert_eq!((i ^ j).count_ones(), 1);
                }
            }
        }
    }

    /// Independent plain-nested-loop exhaustive search, coded without the
    /// Gray-walk machinery.
    fn ml_oracle(
        y: &Array1<Complex64>,
        h: &Array2<Complex64>,
        alphabet: &ModAlphabet,
    ) -> Vec<usize> {
        let n = y.len();
        let q = alphabet.size();
        let total = q.pow(n as u32);
        let mut best = vec![0usize; n];
        let mut best_metric = f64::INFINITY;
        for cand in 0..total {
            // First symbol varies slowest so candidate order is lexicographic.
            let mut idx = vec![0usize; n];
            let mut c = cand;
            for pos in (0..n).rev() {
                idx[pos] = c % q;
                c /= q;
            }
            let mut metric = 0.0;
            for row in 0..n {
                let mut acc = y[row];
                for col in 0..n {
                    acc -= h[(row, col)] * alphabet.symbols[idx[col]];
                }
                metric += acc.norm_sqr();
            }
            if metric < best_metric {
                best_metric = metric;
                best = idx;
            }
        }
        best
    }

    #[test]
    fn ml_noiseless_recovers_bpsk() {
        let cfg = OtfsConfig::new(4, 4);
        let a = ModAlphabet::new(ModScheme::Bpsk);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let ch = DdChannel::rayleigh(&uniform_delay_profile(), &mut rng);
        let h = build_effective_channel(&ch, &cfg).unwrap();
        let idx: Vec<usize> = (0..16).map(|_| rng.gen_range(0..2)).collect();
        let x = Array1::from_iter(idx.iter().map(|&i| a.symbols[i]));
        let y = h.dot(&x);
        let got = ml_detect(&y, &h, &a).unwrap();
        assert_eq!(got, idx);
    }

    #[test]
    fn ml_identity_channel() {
        let a = ModAlphabet::new(ModScheme::Qam4);
        let n = 4;
        let h = Array2::from_shape_fn((n, n), |(i, j)| {
            Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0)
        });
        let idx = vec![2, 0, 3, 1];
        let y = Array1::from_iter(idx.iter().map(|&i| a.symbols[i]));
        assert_eq!(ml_detect(&y, &h, &a).unwrap(), idx);
    }

    #[test]
    fn ml_matches_independent_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for scheme in [ModScheme::Bpsk, ModScheme::Qam4] {
            let a = ModAlphabet::new(scheme);
            for _ in 0..10 {
                let n = 4;
                let h = Array2::from_shape_fn((n, n), |_| {
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                });
                let y = Array1::from_iter((0..n).map(|_| {
                    Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))
                }));
                assert_eq!(ml_detect(&y, &h, &a).unwrap(), ml_oracle(&y, &h, &a));
            }
        }
    }

    #[test]
    fn ml_budget_guard() {
        let a = ModAlphabet::new(ModScheme::Qam4);
        assert!(matches!(
            MlDetector::new(a, 16),
            Err(Error::MlBudgetExceeded { .. })
        ));
    }

    #[test]
    fn mmse_identity_noiseless() {
        let a = ModAlphabet::new(ModScheme::Qam16);
        let n = 4;
        let h = Array2::from_shape_fn((n, n), |(i, j)| {
            Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0)
        });
        let idx = vec![5, 11, 0, 15];
        let y = Array1::from_iter(idx.iter().map(|&i| a.symbols[i]));
        assert_eq!(mmse_detect(&y, &h, 0.0, &a).unwrap(), idx);
    }

    #[test]
    fn mmse_zero_noise_equals_zero_forcing() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let n = 4;
        let h = Array2::from_shape_fn((n, n), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let y = Array1::from_iter(
            (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))),
        );
        let z = mmse_linear_stage(&y, &h, 0.0).unwrap();
        // zero-forcing: solve H x = y directly
        let zf = solve_complex(&h, &y).unwrap();
        for (a, b) in z.iter().zip(zf.iter()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn mmse_linear_stage_matches_nalgebra() {
        use nalgebra::{Complex, DMatrix, DVector};
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..20 {
            let n = 4;
            let sigma2 = rng.gen_range(0.0..1.0);
            let h = Array2::from_shape_fn((n, n), |_| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            let y = Array1::from_iter((0..n).map(|_| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            }));
            let mine = mmse_linear_stage(&y, &h, sigma2).unwrap();

            let hn = DMatrix::from_fn(n, n, |i, j| Complex::new(h[(i, j)].re, h[(i, j)].im));
            let yn = DVector::from_fn(n, |i, _| Complex::new(y[i].re, y[i].im));
            let hh = hn.adjoint();
            let a = &hh * &hn + DMatrix::identity(n, n) * Complex::new(sigma2, 0.0);
            let rhs = &hh * &yn;
            let sol = a.lu().solve(&rhs).expect("nalgebra solve");
            for i in 0..n {
                let d = ((mine[i].re - sol[i].re).powi(2) + (mine[i].im - sol[i].im).powi(2))
                    .sqrt();
                assert!(d < 1e-10, "component {i} differs by {d}");
            }
        }
    }

    #[test]
    fn mmse_converges_to_zf_as_noise_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let n = 4;
        let h = Array2::from_shape_fn((n, n), |(i, j)| {
            Complex64::new(
                if i == j { 2.0 } else { 0.0 } + rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
            )
        });
        let y = Array1::from_iter(
            (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))),
        );
        let near = mmse_linear_stage(&y, &h, 1e-12).unwrap();
        let zf = solve_complex(&h, &y).unwrap();
        for (a, b) in near.iter().zip(zf.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn ml_never_worse_than_quantized_mmse() {
        let cfg = OtfsConfig::new(4, 4);
        let a = ModAlphabet::new(ModScheme::Bpsk);
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let det = MlDetector::new(a.clone(), 16).unwrap();
        for _ in 0..20 {
            let ch = DdChannel::rayleigh(&uniform_delay_profile(), &mut rng);
            let h = build_effective_channel(&ch, &cfg).unwrap();
            let idx: Vec<usize> = (0..16).map(|_| rng.gen_range(0..2)).collect();
            let x = Array1::from_iter(idx.iter().map(|&i| a.symbols[i]));
            let noise = NoiseModel::from_snr_db(6.0);
            let y = add_awgn(&h.dot(&x), &noise, &mut rng);
            let ml = det.detect(&y, &h).unwrap();
            let mmse = mmse_detect(&y, &h, noise.sigma2, &a).unwrap();
            let resid = |idx: &[usize]| {
                let x = Array1::from_iter(idx.iter().map(|&i| a.symbols[i]));
                let r = &y - &h.dot(&x);
                r.iter().map(|v| v.norm_sqr()).sum::<f64>()
            };
            assert!(resid(&ml) <= resid(&mmse) + 1e-12);
        }
    }

    #[test]
    fn impulse_estimate_noiseless_exact() {
        let cfg = OtfsConfig::new(4, 4);
        let profile = uniform_delay_profile();
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let ch = DdChannel::rayleigh(&profile, &mut rng);
        for amp in [1.0, 2.0] {
            let mut pilot = DdGrid::zeros(&cfg);
            pilot.values[(0, 0)] = Complex64::new(amp, 0.0);
            let y = apply_dd_channel(&pilot, &ch, &cfg).unwrap();
            let est = impulse_channel_estimate(&y, (0, 0), amp, &profile, &cfg).unwrap();
            for i in 0..profile.len() {
                let d = (est.effective_gain(i, &cfg) - ch.effective_gain(i, &cfg)).norm();
                assert!(d < 1e-12, "path {i}: {d}");
            }
        }
    }

    #[test]
    fn impulse_estimate_duplicate_taps_rejected() {
        let cfg = OtfsConfig::new(4, 4);
        let pilot = DdGrid::zeros(&cfg);
        let profile = vec![(0, 1), (0, 1)];
        assert!(matches!(
            impulse_channel_estimate(&pilot, (0, 0), 1.0, &profile, &cfg),
            Err(Error::DuplicateTap(0, 1))
        ));
    }

    #[test]
    fn impulse_estimate_noise_variance() {
        // Per-tap estimate error variance ~ sigma2 / pilot_amp^2.
        let cfg = OtfsConfig::new(4, 4);
        let profile = uniform_delay_profile();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let ch = DdChannel::rayleigh(&profile, &mut rng);
        let amp = 2.0;
        let sigma2 = 0.25;
        let noise = NoiseModel::new(sigma2).unwrap();
        let trials = 10_000;
        let mut err_acc = 0.0;
        let mut pilot = DdGrid::zeros(&cfg);
        pilot.values[(0, 0)] = Complex64::new(amp, 0.0);
        let clean = vectorize(&apply_dd_channel(&pilot, &ch, &cfg).unwrap(), &cfg).unwrap();
        for _ in 0..trials {
            let noisy = devectorize(&add_awgn(&clean, &noise, &mut rng), &cfg).unwrap();
            let est = impulse_channel_estimate(&noisy, (0, 0), amp, &profile, &cfg).unwrap();
            for i in 0..profile.len() {
                err_acc += (est.effective_gain(i, &cfg) - ch.effective_gain(i, &cfg)).norm_sqr();
            }
        }
        let per_tap_var = err_acc / (trials * profile.len()) as f64;
        let predicted = sigma2 / (amp * amp);
        assert!(
            (per_tap_var / predicted - 1.0).abs() < 0.05,
            "got {per_tap_var}, predicted {predicted}"
        );
    }

    #[test]
    fn impulse_estimate_averaging_converges() {
        let cfg = OtfsConfig::new(4, 4);
        let profile = uniform_delay_profile();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let ch = DdChannel::rayleigh(&profile, &mut rng);
        let amp = 1.0;
        let noise = NoiseModel::new(0.5).unwrap();
        let mut pilot = DdGrid::zeros(&cfg);
        pilot.values[(0, 0)] = Complex64::new(amp, 0.0);
        let clean = vectorize(&apply_dd_channel(&pilot, &ch, &cfg).unwrap(), &cfg).unwrap();
        let mean_err = |trials: usize, rng: &mut ChaCha8Rng| {
            let mut acc = vec![Complex64::new(0.0, 0.0); profile.len()];
            for _ in 0..trials {
                let noisy = devectorize(&add_awgn(&clean, &noise, rng), &cfg).unwrap();
                let est = impulse_channel_estimate(&noisy, (0, 0), amp, &profile, &cfg).unwrap();
                for (i, a) in acc.iter_mut().enumerate() {
                    *a += est.effective_gain(i, &cfg);
                }
            }
            acc.iter()
                .enumerate()
                .map(|(i, a)| (a / trials as f64 - ch.effective_gain(i, &cfg)).norm())
                .fold(0.0, f64::max)
        };
        let coarse = mean_err(100, &mut rng);
        let fine = mean_err(10_000, &mut rng);
        assert!(fine < coarse / 3.0, "coarse {coarse}, fine {fine}");
    }
}
