//! End-to-end transceiver wiring: training-data generators and runtime roles
//! for the four DNNs, pilot/data frame assembly, and single-frame link
//! simulation.
//!
//! DNN-1 learns a compensating transmit alphabet from the Tx-IQI-impaired
//! alphabet. DNN-2 regresses the receive gain/phase imbalance from an
//! impaired calibration alphabet. DNN-3 maps an impaired received vector back
//! to its clean counterpart. DNN-4 consumes a pilot frame plus a data frame
//! and emits the data bits directly.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;

use crate::detectors::{
    impulse_channel_estimate, mmse_detect, MlDetector, ModAlphabet, ModScheme,
};
use crate::error::{Error, Result};
use crate::iqi::{apply_iqi, exact_compensation, IqiParams};
use crate::neural::{chain_specs, Activation, Dataset, LayerSpec, Mlp, TrainConfig};
use crate::otfs::{
    add_awgn, apply_dd_channel, build_effective_channel, devectorize, vectorize, DdChannel,
    DdGrid, NoiseModel, OtfsConfig,
};

/// Static link parameters shared by dataset generation and simulation.
#[derive(Debug, Clone)]
pub struct LinkConfig {
    pub otfs: OtfsConfig,
    /// Known (delay, doppler) tap profile of the channel.
    pub profile: Vec<(usize, usize)>,
    pub alphabet: ModAlphabet,
    pub snr_data_db: f64,
    pub snr_pilot_db: f64,
    /// (doppler, delay) grid location of the single pilot symbol.
    pub pilot_loc: (usize, usize),
}

impl LinkConfig {
    pub fn new(alphabet: ModAlphabet, snr_data_db: f64, snr_pilot_db: f64) -> Self {
        Self {
            otfs: OtfsConfig::new(4, 4),
            profile: crate::otfs::uniform_delay_profile(),
            alphabet,
            snr_data_db,
            snr_pilot_db,
            pilot_loc: (0, 0),
        }
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel::from_snr_db(self.snr_data_db)
    }

    /// Pilot amplitude from |pilot|^2 / sigma2 = 10^(SNR_p/10) with sigma2
    /// fixed by the data SNR.
    pub fn pilot_amp(&self) -> f64 {
        (self.noise().sigma2 * 10f64.powf(self.snr_pilot_db / 10.0)).sqrt()
    }

    pub fn pilot_grid(&self) -> DdGrid {
        let mut g = DdGrid::zeros(&self.otfs);
        g.values[self.pilot_loc] = Complex64::new(self.pilot_amp(), 0.0);
        g
    }
}

/// Pilot frame + data frame sharing one channel realization.
#[derive(Debug, Clone)]
pub struct FramePair {
    pub pilot_frame: DdGrid,
    pub data_frame: DdGrid,
    pub channel: DdChannel,
}

impl FramePair {
    pub fn new(pilot_frame: DdGrid, data_frame: DdGrid, channel: DdChannel) -> Result<Self> {
        let nonzero = pilot_frame.values.iter().filter(|v| v.norm() > 0.0).count();
        if nonzero != 1 {
            return Err(Error::InvalidConfig(format!(
                "pilot frame must have exactly one nonzero entry, found {nonzero}"
            )));
        }
        Ok(Self {
            pilot_frame,
            data_frame,
            channel,
        })
    }
}

/// [Re(v); Im(v)] packing used for every DNN input/output.
pub fn pack_complex(v: &[Complex64]) -> Vec<f64> {
    v.iter()
        .map(|c| c.re)
        .chain(v.iter().map(|c| c.im))
        .collect()
}

pub fn unpack_complex(v: &[f64]) -> Result<Vec<Complex64>> {
    if v.len() % 2 != 0 {
        return Err(Error::DimensionMismatch {
            expected: "even-length packed vector".into(),
            got: format!("length {}", v.len()),
        });
    }
    let half = v.len() / 2;
    Ok((0..half)
        .map(|i| Complex64::new(v[i], v[half + i]))
        .collect())
}

/// Uniform draw box for IQI parameters during training-data generation.
#[derive(Debug, Clone, Copy)]
pub struct IqiRange {
    pub delta_g: (f64, f64),
    pub delta_phi_deg: (f64, f64),
}

impl Default for IqiRange {
    fn default() -> Self {
        Self {
            delta_g: (0.0, 0.5),
            delta_phi_deg: (0.0, 50.0),
        }
    }
}

impl IqiRange {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> IqiParams {
        IqiParams::new(
            rng.gen_range(self.delta_g.0..=self.delta_g.1),
            rng.gen_range(self.delta_phi_deg.0..=self.delta_phi_deg.1),
        )
    }
}

fn alphabet_vec(alphabet: &ModAlphabet) -> Array1<Complex64> {
    Array1::from_vec(alphabet.symbols.clone())
}

/// DNN-1 training pairs: impaired alphabet -> exactly-compensating alphabet,
/// over random Tx IQI draws. Returns the dataset and the number of singular
/// draws that had to be resampled.
pub fn gen_dnn1_dataset<R: Rng + ?Sized>(
    alphabet: &ModAlphabet,
    n: usize,
    range: &IqiRange,
    rng: &mut R,
) -> Result<(Dataset, usize)> {
    let ideal = alphabet_vec(alphabet);
    let width = 2 * alphabet.size();
    let mut inputs = Array2::zeros((n, width));
    let mut targets = Array2::zeros((n, width));
    let mut resampled = 0usize;
    for row in 0..n {
        let comp = loop {
            let p = range.draw(rng);
            match exact_compensation(&ideal, &p) {
                Ok(c) => break (p, c),
                Err(Error::SingularIqi { .. }) => resampled += 1,
                Err(e) => return Err(e),
            }
        };
        let (p, comp_alphabet) = comp;
        let impaired = apply_iqi(&ideal, &p);
        for (col, v) in pack_complex(impaired.as_slice().unwrap()).into_iter().enumerate() {
            inputs[(row, col)] = v;
        }
        for (col, v) in pack_complex(comp_alphabet.as_slice().unwrap())
            .into_iter()
            .enumerate()
        {
            targets[(row, col)] = v;
        }
    }
    Ok((Dataset::new(inputs, targets)?, resampled))
}

/// Run DNN-1 on an observed impaired alphabet to get the compensating
/// alphabet (indexed like the ideal one).
pub fn dnn1_compensate(net: &Mlp, observed_iq: &[Complex64]) -> Result<Vec<Complex64>> {
    let out = net.forward(&pack_complex(observed_iq))?;
    unpack_complex(&out)
}

/// DNN-2 training pairs: impaired calibration alphabet -> [delta_g, delta_phi_deg].
pub fn gen_dnn2_dataset<R: Rng + ?Sized>(
    alphabet: &ModAlphabet,
    n: usize,
    range: &IqiRange,
    rng: &mut R,
) -> Result<Dataset> {
    let ideal = alphabet_vec(alphabet);
    let width = 2 * alphabet.size();
    let mut inputs = Array2::zeros((n, width));
    let mut targets = Array2::zeros((n, 2));
    for row in 0..n {
        let p = range.draw(rng);
        let impaired = apply_iqi(&ideal, &p);
        for (col, v) in pack_complex(impaired.as_slice().unwrap()).into_iter().enumerate() {
            inputs[(row, col)] = v;
        }
        targets[(row, 0)] = p.delta_g;
        targets[(row, 1)] = p.delta_phi_deg;
    }
    Dataset::new(inputs, targets)
}

/// BPSK calibration alphabet as seen through the given Rx IQI (noiseless
/// loopback); the input the parameter estimator is evaluated on.
pub fn calibration_observation(p: &IqiParams) -> Vec<Complex64> {
    let calib = alphabet_vec(&ModAlphabet::new(ModScheme::Bpsk));
    apply_iqi(&calib, p).to_vec()
}

/// Estimate (delta_g, delta_phi_deg) from the received impaired calibration
/// alphabet.
pub fn dnn2_estimate(net: &Mlp, observed_iq: &[Complex64]) -> Result<(f64, f64)> {
    let out = net.forward(&pack_complex(observed_iq))?;
    if out.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: "2 outputs".into(),
            got: format!("{}", out.len()),
        });
    }
    Ok((out[0], out[1]))
}

/// DNN-3 training pairs: received vectors through channel + noise, impaired
/// with the *estimated* Rx IQI -> the clean vector. Per-example data SNR is
/// drawn uniformly from `snr_range_db` so the compensator works across the
/// evaluation grid.
pub fn gen_dnn3_dataset<R: Rng + ?Sized>(
    link: &LinkConfig,
    n: usize,
    estimated: &IqiParams,
    snr_range_db: (f64, f64),
    rng: &mut R,
) -> Result<Dataset> {
    let mn = link.otfs.frame_len();
    let mut inputs = Array2::zeros((n, 2 * mn));
    let mut targets = Array2::zeros((n, 2 * mn));
    for row in 0..n {
        let ch = DdChannel::rayleigh(&link.profile, rng);
        let indices: Vec<usize> =
            (0..mn).map(|_| rng.gen_range(0..link.alphabet.size())).collect();
        let x = Array1::from_iter(indices.iter().map(|&i| link.alphabet.symbols[i]));
        let x_grid = devectorize(&x, &link.otfs)?;
        let clean = vectorize(&apply_dd_channel(&x_grid, &ch, &link.otfs)?, &link.otfs)?;
        let snr = rng.gen_range(snr_range_db.0..=snr_range_db.1);
        let noisy = add_awgn(&clean, &NoiseModel::from_snr_db(snr), rng);
        let impaired = apply_iqi(&noisy, estimated);
        for (col, v) in pack_complex(impaired.as_slice().unwrap()).into_iter().enumerate() {
            inputs[(row, col)] = v;
        }
        for (col, v) in pack_complex(noisy.as_slice().unwrap()).into_iter().enumerate() {
            targets[(row, col)] = v;
        }
    }
    Dataset::new(inputs, targets)
}

/// Run DNN-3 on a packed impaired received vector.
pub fn dnn3_compensate(net: &Mlp, y_iq: &Array1<Complex64>) -> Result<Array1<Complex64>> {
    let out = net.forward(&pack_complex(y_iq.as_slice().unwrap()))?;
    Ok(Array1::from_vec(unpack_complex(&out)?))
}

/// DNN-4 training pairs: [Re(y_p); Im(y_p); Re(y_d); Im(y_d)] -> data bits.
/// Fresh channel, pilot noise, and data noise per example; BPSK data.
pub fn gen_dnn4_dataset<R: Rng + ?Sized>(
    link: &LinkConfig,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    let mn = link.otfs.frame_len();
    let noise = link.noise();
    let pilot = link.pilot_grid();
    let mut inputs = Array2::zeros((n, 4 * mn));
    let mut targets = Array2::zeros((n, mn));
    for row in 0..n {
        let ch = DdChannel::rayleigh(&link.profile, rng);
        let y_p = add_awgn(
            &vectorize(&apply_dd_channel(&pilot, &ch, &link.otfs)?, &link.otfs)?,
            &noise,
            rng,
        );
        let bits: Vec<u8> = (0..mn).map(|_| rng.gen_range(0..2u8)).collect();
        let x = Array1::from_iter(
            bits.iter()
                .map(|&b| link.alphabet.symbols[b as usize]),
        );
        let x_grid = devectorize(&x, &link.otfs)?;
        let y_d = add_awgn(
            &vectorize(&apply_dd_channel(&x_grid, &ch, &link.otfs)?, &link.otfs)?,
            &noise,
            rng,
        );
        for (col, v) in dnn4_input(&y_p, &y_d, link.pilot_amp()).into_iter().enumerate() {
            inputs[(row, col)] = v;
        }
        for (col, &b) in bits.iter().enumerate() {
            targets[(row, col)] = b as f64;
        }
    }
    Dataset::new(inputs, targets)
}

/// Concatenate pilot and data observations in the fixed packing order.
/// The pilot half is divided by the known pilot amplitude so the network sees
/// the same input scale regardless of the pilot boost; at the training point
/// the amplitude is 1 and this is a no-op.
pub fn dnn4_input(y_p: &Array1<Complex64>, y_d: &Array1<Complex64>, pilot_amp: f64) -> Vec<f64> {
    let scaled = y_p.mapv(|v| v / pilot_amp);
    let mut v = pack_complex(scaled.as_slice().unwrap());
    v.extend(pack_complex(y_d.as_slice().unwrap()));
    v
}

/// Threshold the sigmoid outputs at 0.5 (exact 0.5 maps to bit 0).
pub fn dnn4_detect(
    net: &Mlp,
    y_p: &Array1<Complex64>,
    y_d: &Array1<Complex64>,
    pilot_amp: f64,
) -> Result<Vec<u8>> {
    let out = net.forward(&dnn4_input(y_p, y_d, pilot_amp))?;
    Ok(out.iter().map(|&v| u8::from(v > 0.5)).collect())
}

/// Network architectures and training defaults for the four roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DnnRole {
    Dnn1(ModScheme),
    Dnn2,
    Dnn3(ModScheme),
    Dnn4,
}

impl DnnRole {
    pub fn architecture(&self, frame_len: usize) -> Vec<LayerSpec> {
        match self {
            DnnRole::Dnn1(scheme) => {
                let dims: Vec<usize> = match scheme {
                    ModScheme::Bpsk => vec![4, 64, 32, 16, 8, 4],
                    ModScheme::Qam4 => vec![8, 64, 32, 16, 8],
                    ModScheme::Qam16 => vec![32, 256, 128, 64, 32],
                };
                chain_specs(&dims, Activation::Tanh, Activation::Linear)
            }
            DnnRole::Dnn2 => chain_specs(&[4, 8, 2], Activation::Tanh, Activation::Linear),
            DnnRole::Dnn3(_) => chain_specs(
                &[2 * frame_len, 64, 2 * frame_len],
                Activation::Tanh,
                Activation::Linear,
            ),
            DnnRole::Dnn4 => chain_specs(
                &[4 * frame_len, 256, 64, frame_len],
                Activation::Relu,
                Activation::Sigmoid,
            ),
        }
    }

    pub fn default_example_count(&self) -> usize {
        match self {
            DnnRole::Dnn1(_) | DnnRole::Dnn2 => 1000,
            DnnRole::Dnn3(_) => 50_000,
            DnnRole::Dnn4 => 200_000,
        }
    }

    pub fn default_train_config(&self, shuffle_seed: u64) -> TrainConfig {
        let (epochs, batch_size) = match self {
            DnnRole::Dnn1(_) => (5000, 5),
            DnnRole::Dnn2 => (500, 5),
            DnnRole::Dnn3(_) => (500, 50),
            DnnRole::Dnn4 => (500, 500),
        };
        TrainConfig {
            epochs,
            batch_size,
            adam: Default::default(),
            shuffle_seed,
        }
    }

    pub fn name(&self) -> String {
        match self {
            DnnRole::Dnn1(s) => format!("dnn1-{}", s.name()),
            DnnRole::Dnn2 => "dnn2".into(),
            DnnRole::Dnn3(s) => format!("dnn3-{}", s.name()),
            DnnRole::Dnn4 => "dnn4".into(),
        }
    }
}

/// Receive-side IQI handling.
pub enum RxCompensation<'a> {
    Off,
    /// Algebraic inverse with the given (usually estimated) parameters.
    Exact(IqiParams),
    /// DNN-3 on the data frame; the pilot frame, whose statistics DNN-3 was
    /// not trained on, is compensated algebraically with the estimate.
    Dnn { dnn3: &'a Mlp, estimate: IqiParams },
}

/// Detector running at the end of the chain.
pub enum DetectorChoice<'a> {
    Ml(&'a MlDetector),
    Mmse,
    Dnn4(&'a Mlp),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKnowledge {
    Perfect,
    ImpulseEstimate,
}

/// One full configuration of the transceiver chain.
pub struct LinkSetup<'a> {
    pub tx_iqi: Option<IqiParams>,
    pub rx_iqi: Option<IqiParams>,
    /// Compensating alphabet the transmitter substitutes per symbol index
    /// (from DNN-1 or the exact model); None transmits the ideal alphabet.
    pub tx_comp_alphabet: Option<Vec<Complex64>>,
    /// Pre-distort the known pilot vector with the exact inverse of the Tx
    /// IQI (the transmitter can pre-rotate any known vector, not just
    /// alphabet symbols).
    pub precompensate_pilot: bool,
    pub rx_comp: RxCompensation<'a>,
    pub detector: DetectorChoice<'a>,
    pub channel_knowledge: ChannelKnowledge,
}

impl<'a> LinkSetup<'a> {
    /// Ideal chain: no impairments, chosen detector, perfect CSI.
    pub fn clean(detector: DetectorChoice<'a>) -> Self {
        Self {
            tx_iqi: None,
            rx_iqi: None,
            tx_comp_alphabet: None,
            precompensate_pilot: false,
            rx_comp: RxCompensation::Off,
            detector,
            channel_knowledge: ChannelKnowledge::Perfect,
        }
    }
}

/// Transmitted and detected bits of one simulated frame pair.
pub struct FrameResult {
    pub tx_bits: Vec<u8>,
    pub rx_bits: Vec<u8>,
}

/// Simulate one pilot+data frame pair through the configured chain.
pub fn simulate_frame<R: Rng + ?Sized>(
    link: &LinkConfig,
    setup: &LinkSetup,
    rng: &mut R,
) -> Result<FrameResult> {
    let cfg = &link.otfs;
    let mn = cfg.frame_len();
    let noise = link.noise();
    let channel = DdChannel::rayleigh(&link.profile, rng);

    // transmit side
    let tx_bits: Vec<u8> = (0..mn * link.alphabet.bits_per_symbol)
        .map(|_| rng.gen_range(0..2u8))
        .collect();
    let indices = link.alphabet.bits_to_indices(&tx_bits)?;
    let data_symbols: Vec<Complex64> = match &setup.tx_comp_alphabet {
        Some(comp) => indices.iter().map(|&i| comp[i]).collect(),
        None => indices.iter().map(|&i| link.alphabet.symbols[i]).collect(),
    };
    let mut data_vec = Array1::from_vec(data_symbols);

    let pilot_grid = link.pilot_grid();
    let mut pilot_vec = vectorize(&pilot_grid, cfg)?;
    if let Some(tx_params) = &setup.tx_iqi {
        if setup.precompensate_pilot {
            pilot_vec = exact_compensation(&pilot_vec, tx_params)?;
        }
        pilot_vec = apply_iqi(&pilot_vec, tx_params);
        data_vec = apply_iqi(&data_vec, tx_params);
    }

    let frames = FramePair::new(
        link.pilot_grid(),
        devectorize(&data_vec, cfg)?,
        channel,
    )?;

    // channel + noise, same realization for both frames
    let pilot_rx_grid =
        apply_dd_channel(&devectorize(&pilot_vec, cfg)?, &frames.channel, cfg)?;
    let mut y_p = add_awgn(&vectorize(&pilot_rx_grid, cfg)?, &noise, rng);
    let data_rx_grid = apply_dd_channel(&frames.data_frame, &frames.channel, cfg)?;
    let mut y_d = add_awgn(&vectorize(&data_rx_grid, cfg)?, &noise, rng);

    // receive-side IQI and compensation
    if let Some(rx_params) = &setup.rx_iqi {
        y_p = apply_iqi(&y_p, rx_params);
        y_d = apply_iqi(&y_d, rx_params);
    }
    match &setup.rx_comp {
        RxCompensation::Off => {}
        RxCompensation::Exact(params) => {
            y_p = exact_compensation(&y_p, params)?;
            y_d = exact_compensation(&y_d, params)?;
        }
        RxCompensation::Dnn { dnn3, estimate } => {
            y_p = exact_compensation(&y_p, estimate)?;
            y_d = dnn3_compensate(dnn3, &y_d)?;
        }
    }

    // detection
    let rx_bits = match &setup.detector {
        DetectorChoice::Dnn4(net) => dnn4_detect(net, &y_p, &y_d, link.pilot_amp())?,
        classical => {
            let h = match setup.channel_knowledge {
                ChannelKnowledge::Perfect => build_effective_channel(&frames.channel, cfg)?,
                ChannelKnowledge::ImpulseEstimate => {
                    let est = impulse_channel_estimate(
                        &devectorize(&y_p, cfg)?,
                        link.pilot_loc,
                        link.pilot_amp(),
                        &link.profile,
                        cfg,
                    )?;
                    build_effective_channel(&est, cfg)?
                }
            };
            let detected = match classical {
                DetectorChoice::Ml(det) => det.detect(&y_d, &h)?,
                DetectorChoice::Mmse => mmse_detect(&y_d, &h, noise.sigma2, &link.alphabet)?,
                DetectorChoice::Dnn4(_) => unreachable!(),
            };
            link.alphabet.indices_to_bits(&detected)
        }
    };

    Ok(FrameResult { tx_bits, rx_bits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Layer;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bpsk_link(snr_d: f64, snr_p: f64) -> LinkConfig {
        LinkConfig::new(ModAlphabet::new(ModScheme::Bpsk), snr_d, snr_p)
    }

    #[test]
    fn pilot_amp_convention() {
        let link = bpsk_link(10.0, 10.0);
        assert_abs_diff_eq!(link.pilot_amp(), 1.0, epsilon = 1e-12);
        let link = bpsk_link(10.0, 30.0);
        assert_abs_diff_eq!(link.pilot_amp(), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn frame_pair_rejects_multi_pilot() {
        let cfg = OtfsConfig::new(4, 4);
        let mut pilot = DdGrid::zeros(&cfg);
        pilot.values[(0, 0)] = Complex64::new(1.0, 0.0);
        pilot.values[(1, 1)] = Complex64::new(1.0, 0.0);
        let data = DdGrid::zeros(&cfg);
        let ch = DdChannel::new(vec![]);
        assert!(FramePair::new(pilot, data, ch).is_err());
    }

    #[test]
    fn pack_unpack_roundtrip() {
        let v = vec![Complex64::new(1.0, -2.0), Complex64::new(0.5, 3.0)];
        let packed = pack_complex(&v);
        assert_eq!(packed, vec![1.0, 0.5, -2.0, 3.0]);
        assert_eq!(unpack_complex(&packed).unwrap(), v);
    }

    #[test]
    fn dnn1_dataset_pairs_satisfy_roundtrip() {
        let alphabet = ModAlphabet::new(ModScheme::Qam4);
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let (data, resampled) =
            gen_dnn1_dataset(&alphabet, 200, &IqiRange::default(), &mut rng).unwrap();
        assert_eq!(resampled, 0);
        assert_eq!(data.len(), 200);
        // every target compensates its own (unknown) params: apply the IQI
        // model implied by input/target is not directly recoverable, but the
        // constructor identity apply_iqi(comp) == ideal must hold. Recover it
        // by re-deriving params from the impaired alphabet row: instead check
        // via a fresh generation with a fixed-range degenerate draw below.
        let zero_range = IqiRange {
            delta_g: (0.0, 0.0),
            delta_phi_deg: (0.0, 0.0),
        };
        let (data0, _) = gen_dnn1_dataset(&alphabet, 3, &zero_range, &mut rng).unwrap();
        let ideal = pack_complex(&alphabet.symbols);
        for row in 0..3 {
            for (col, &want) in ideal.iter().enumerate() {
                assert_abs_diff_eq!(data0.inputs[(row, col)], want, epsilon = 1e-12);
                assert_abs_diff_eq!(data0.targets[(row, col)], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dnn1_dataset_roundtrip_identity_against_iqi_module() {
        // regenerate with a known seed and verify apply_iqi(target) == ideal
        // by reconstructing the draw sequence
        let alphabet = ModAlphabet::new(ModScheme::Bpsk);
        let range = IqiRange::default();
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let (data, _) = gen_dnn1_dataset(&alphabet, 50, &range, &mut rng).unwrap();
        let mut rng2 = ChaCha8Rng::seed_from_u64(52);
        let ideal = alphabet_vec(&alphabet);
        for row in 0..50 {
            let p = range.draw(&mut rng2);
            let comp: Vec<Complex64> = unpack_complex(
                &data.targets.row(row).to_vec(),
            )
            .unwrap();
            let back = apply_iqi(&Array1::from_vec(comp), &p);
            for (a, b) in back.iter().zip(ideal.iter()) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn dataset_generation_is_pure_given_seed() {
        let alphabet = ModAlphabet::new(ModScheme::Qam4);
        let gen = || {
            let mut rng = ChaCha8Rng::seed_from_u64(53);
            gen_dnn1_dataset(&alphabet, 20, &IqiRange::default(), &mut rng)
                .unwrap()
                .0
        };
        let a = gen();
        let b = gen();
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.targets, b.targets);
    }

    #[test]
    fn dnn1_identity_probe_net() {
        // untrained single linear layer with W = I passes its input through
        let dim = 8;
        let net = Mlp {
            layers: vec![Layer {
                spec: LayerSpec::new(dim, dim, Activation::Linear),
                weights: Array2::from_shape_fn((dim, dim), |(i, j)| {
                    if i == j {
                        1.0
                    } else {
                        0.0
                    }
                }),
                biases: Array1::zeros(dim),
            }],
        };
        let alphabet = ModAlphabet::new(ModScheme::Qam4);
        let out = dnn1_compensate(&net, &alphabet.symbols).unwrap();
        for (a, b) in out.iter().zip(alphabet.symbols.iter()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn dnn2_dataset_matches_iqi_module() {
        let alphabet = ModAlphabet::new(ModScheme::Bpsk);
        let range = IqiRange::default();
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let data = gen_dnn2_dataset(&alphabet, 30, &range, &mut rng).unwrap();
        let mut rng2 = ChaCha8Rng::seed_from_u64(54);
        let ideal = alphabet_vec(&alphabet);
        for row in 0..30 {
            let p = range.draw(&mut rng2);
            let want = pack_complex(apply_iqi(&ideal, &p).as_slice().unwrap());
            for (col, w) in want.iter().enumerate() {
                assert_abs_diff_eq!(data.inputs[(row, col)], *w, epsilon = 1e-12);
            }
            assert_abs_diff_eq!(data.targets[(row, 0)], p.delta_g, epsilon = 1e-12);
            assert_abs_diff_eq!(data.targets[(row, 1)], p.delta_phi_deg, epsilon = 1e-12);
        }
    }

    #[test]
    fn dnn2_zero_probe_net_outputs_zero() {
        let net = Mlp {
            layers: vec![Layer {
                spec: LayerSpec::new(4, 2, Activation::Linear),
                weights: Array2::zeros((2, 4)),
                biases: Array1::zeros(2),
            }],
        };
        let alphabet = ModAlphabet::new(ModScheme::Bpsk);
        let (g, phi) = dnn2_estimate(&net, &alphabet.symbols).unwrap();
        assert_eq!((g, phi), (0.0, 0.0));
    }

    #[test]
    fn dnn3_dataset_constructor_identity() {
        let link = bpsk_link(10.0, 10.0);
        let est = IqiParams::new(0.37, 38.0);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let data = gen_dnn3_dataset(&link, 40, &est, (0.0, 14.0), &mut rng).unwrap();
        for row in 0..40 {
            let y_iq = Array1::from_vec(unpack_complex(&data.inputs.row(row).to_vec()).unwrap());
            let y = Array1::from_vec(unpack_complex(&data.targets.row(row).to_vec()).unwrap());
            let want = apply_iqi(&y, &est);
            for (a, b) in want.iter().zip(y_iq.iter()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn dnn4_dataset_shapes_and_sanity() {
        let link = bpsk_link(10.0, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let data = gen_dnn4_dataset(&link, 25, &mut rng).unwrap();
        assert_eq!(data.inputs.ncols(), 64);
        assert_eq!(data.targets.ncols(), 16);
        for t in data.targets.iter() {
            assert!(*t == 0.0 || *t == 1.0);
        }
    }

    #[test]
    fn dnn4_noiseless_identity_channel_is_sliceable() {
        // Degenerate setup: identity channel, no noise -> y_d equals the
        // modulated bits and a sign slicer on the input already decodes.
        let mut link = bpsk_link(200.0, 200.0);
        link.profile = vec![(0, 0)];
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let mn = link.otfs.frame_len();
        let data = {
            // single path with gain forced to 1: build by hand
            let bits: Vec<u8> = (0..mn).map(|_| rng.gen_range(0..2u8)).collect();
            let x = Array1::from_iter(bits.iter().map(|&b| link.alphabet.symbols[b as usize]));
            (bits, x)
        };
        let (bits, x) = data;
        // slicer: Re > 0 -> bit 0
        let sliced: Vec<u8> = x.iter().map(|v| u8::from(v.re < 0.0)).collect();
        assert_eq!(bits, sliced);
    }

    #[test]
    fn dnn4_threshold_rule() {
        // output exactly 0.5 -> bit 0; saturated outputs -> bit 1
        let mn = 1;
        let net = Mlp {
            layers: vec![Layer {
                spec: LayerSpec::new(4 * mn, mn, Activation::Linear),
                weights: Array2::zeros((mn, 4 * mn)),
                biases: Array1::from_vec(vec![0.5]),
            }],
        };
        let y = Array1::from_vec(vec![Complex64::new(0.0, 0.0)]);
        assert_eq!(dnn4_detect(&net, &y, &y, 1.0).unwrap(), vec![0]);
        let net_hi = Mlp {
            layers: vec![Layer {
                spec: LayerSpec::new(4 * mn, mn, Activation::Linear),
                weights: Array2::zeros((mn, 4 * mn)),
                biases: Array1::from_vec(vec![0.99]),
            }],
        };
        assert_eq!(dnn4_detect(&net_hi, &y, &y, 1.0).unwrap(), vec![1]);
    }

    #[test]
    fn clean_noiseless_ml_link_is_error_free() {
        let link = bpsk_link(200.0, 200.0);
        let det = MlDetector::new(link.alphabet.clone(), link.otfs.frame_len()).unwrap();
        let setup = LinkSetup::clean(DetectorChoice::Ml(&det));
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        for _ in 0..10 {
            let r = simulate_frame(&link, &setup, &mut rng).unwrap();
            assert_eq!(r.tx_bits, r.rx_bits);
        }
    }

    #[test]
    fn exact_compensated_chain_equals_clean_chain() {
        // Tx+Rx IQI with exact compensation on both sides gives the same
        // detected bits as the unimpaired chain under identical randomness.
        let link = bpsk_link(10.0, 10.0);
        let det = MlDetector::new(link.alphabet.clone(), link.otfs.frame_len()).unwrap();
        let params = IqiParams::new(0.4, 40.0);
        let comp = exact_compensation(&alphabet_vec(&link.alphabet), &params).unwrap();
        let setup_comp = LinkSetup {
            tx_iqi: Some(params),
            rx_iqi: Some(params),
            tx_comp_alphabet: Some(comp.to_vec()),
            precompensate_pilot: true,
            rx_comp: RxCompensation::Exact(params),
            detector: DetectorChoice::Ml(&det),
            channel_knowledge: ChannelKnowledge::Perfect,
        };
        let setup_clean = LinkSetup::clean(DetectorChoice::Ml(&det));
        for seed in 0..10 {
            let mut rng_a = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut rng_b = ChaCha8Rng::seed_from_u64(100 + seed);
            let a = simulate_frame(&link, &setup_comp, &mut rng_a).unwrap();
            let b = simulate_frame(&link, &setup_clean, &mut rng_b).unwrap();
            assert_eq!(a.tx_bits, b.tx_bits);
            assert_eq!(a.rx_bits, b.rx_bits);
        }
    }

    #[test]
    fn impulse_estimate_detection_works_at_high_pilot_snr() {
        let link = bpsk_link(15.0, 60.0);
        let det = MlDetector::new(link.alphabet.clone(), link.otfs.frame_len()).unwrap();
        let setup = LinkSetup {
            channel_knowledge: ChannelKnowledge::ImpulseEstimate,
            ..LinkSetup::clean(DetectorChoice::Ml(&det))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let mut errors = 0;
        let mut bits = 0;
        for _ in 0..200 {
            let r = simulate_frame(&link, &setup, &mut rng).unwrap();
            errors += r
                .tx_bits
                .iter()
                .zip(&r.rx_bits)
                .filter(|(a, b)| a != b)
                .count();
            bits += r.tx_bits.len();
        }
        // At 15 dB data SNR with near-perfect estimates the BER is far below 1%.
        assert!((errors as f64) / (bits as f64) < 0.01);
    }
}
