//! Wiretap channel: free-space path loss, block Rayleigh fading and AWGN.
//!
//! Alice broadcasts one symbol block; Bob and Eve each see it through their
//! own fading coefficient and noise. Receivers know their coefficient and
//! equalize coherently.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 2.998e8;

/// Smallest |h| accepted by [`equalize`].
pub const MIN_FADING_MAGNITUDE: f64 = 1e-12;

const NORMALIZED_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub d_bob_m: f64,
    pub d_eve_m: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            carrier_hz: 1e9,
            bandwidth_hz: 2e7,
            noise_figure_db: 10.0,
            d_bob_m: 1000.0,
            d_eve_m: 3000.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("carrier_hz", self.carrier_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_figure_db", self.noise_figure_db),
            ("d_bob_m", self.d_bob_m),
            ("d_eve_m", self.d_eve_m),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("channel.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn mu(&self) -> f64 {
        path_loss_mu(self.carrier_hz)
    }

    pub fn noise_watts(&self) -> f64 {
        noise_power(self.bandwidth_hz, self.noise_figure_db)
    }

    /// Transmit power that puts Bob's average SNR at `snr_db`.
    pub fn power_for_snr_db(&self, snr_db: f64) -> f64 {
        power_for_target_snr(db_to_linear(snr_db), self.d_bob_m, self.mu(), self.noise_watts())
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Free-space gain at the reference distance, `(c / (4 pi f_c))^2`.
pub fn path_loss_mu(carrier_hz: f64) -> f64 {
    (SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * carrier_hz)).powi(2)
}

/// Thermal noise `-174 + 10 log10(B) + N_f` in dBm.
pub fn noise_power_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    -174.0 + 10.0 * bandwidth_hz.log10() + noise_figure_db
}

/// Thermal noise in watts.
pub fn noise_power(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    db_to_linear(noise_power_dbm(bandwidth_hz, noise_figure_db)) / 1000.0
}

/// `P = gamma_T * N * d_B^2 / mu`, the power giving average SNR `gamma_T` at Bob.
pub fn power_for_target_snr(gamma_t: f64, d_bob_m: f64, mu: f64, noise_watts: f64) -> f64 {
    gamma_t * noise_watts / (mu * d_bob_m.powi(-2))
}

/// Circularly-symmetric complex Gaussian with the given total variance.
pub fn complex_gaussian<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Complex64 {
    let sigma = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(sigma * re, sigma * im)
}

/// One block-fading coefficient `sqrt(mu d^-2) X` with `X ~ CN(0, 1)`.
pub fn sample_fading<R: Rng + ?Sized>(distance_m: f64, mu: f64, rng: &mut R) -> Complex64 {
    let amplitude = (mu * distance_m.powi(-2)).sqrt();
    complex_gaussian(1.0, rng) * amplitude
}

/// AWGN samples with per-complex-symbol variance `noise_watts`.
pub fn sample_noise<R: Rng + ?Sized>(rows: usize, cols: usize, noise_watts: f64, rng: &mut R) -> Array2<Complex64> {
    let mut out = Array2::zeros((rows, cols));
    for w in out.iter_mut() {
        *w = complex_gaussian(noise_watts, rng);
    }
    out
}

/// Fading draws and powers for one coherence block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub h_bob: Complex64,
    pub h_eve: Complex64,
    pub power: f64,
    pub noise: f64,
}

impl ChannelRealization {
    /// Draws `h_B` then `h_E` for a block at average Bob SNR `snr_db`.
    pub fn draw<R: Rng + ?Sized>(config: &ChannelConfig, snr_db: f64, rng: &mut R) -> Self {
        let mu = config.mu();
        let h_bob = sample_fading(config.d_bob_m, mu, rng);
        let h_eve = sample_fading(config.d_eve_m, mu, rng);
        Self {
            h_bob,
            h_eve,
            power: config.power_for_snr_db(snr_db),
            noise: config.noise_watts(),
        }
    }

    /// Unit-gain, unit-power channel with the given noise power.
    pub fn identity(noise: f64) -> Self {
        Self {
            h_bob: Complex64::new(1.0, 0.0),
            h_eve: Complex64::new(1.0, 0.0),
            power: 1.0,
            noise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power > 0.0) || !(self.noise >= 0.0) {
            return Err(Error::Config(format!(
                "realization needs P > 0 and N >= 0, got P = {}, N = {}",
                self.power, self.noise
            )));
        }
        if !(self.h_bob.norm().is_finite() && self.h_eve.norm().is_finite()) {
            return Err(Error::Config("fading coefficients must be finite".into()));
        }
        Ok(())
    }

    pub fn fading(&self, receiver: Receiver) -> Complex64 {
        match receiver {
            Receiver::Bob => self.h_bob,
            Receiver::Eve => self.h_eve,
        }
    }

    /// Instantaneous receive SNR `P |h|^2 / N`.
    pub fn instantaneous_snr(&self, receiver: Receiver) -> f64 {
        self.power * self.fading(receiver).norm_sqr() / self.noise
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Receiver {
    Bob,
    Eve,
}

/// Complex symbols for a batch, one row per sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBlock {
    pub symbols: Array2<Complex64>,
    pub normalized: bool,
}

impl SymbolBlock {
    pub fn new(symbols: Array2<Complex64>) -> Self {
        Self {
            symbols,
            normalized: false,
        }
    }

    /// Pairs consecutive reals into complex symbols. `real` holds one row per
    /// token; `batch` sentences are stacked, so each sentence contributes
    /// `rows / batch * cols / 2` symbols.
    pub fn from_real(real: &Array2<f64>, batch: usize) -> Result<Self> {
        let (rows, cols) = real.dim();
        if batch == 0 || rows % batch != 0 || cols % 2 != 0 {
            return Err(Error::Shape(format!(
                "cannot pair a [{rows}, {cols}] real block into {batch} complex rows"
            )));
        }
        let per_sentence = rows / batch * cols / 2;
        let flat: Vec<Complex64> = real
            .as_standard_layout()
            .as_slice()
            .expect("standard layout")
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        let symbols = Array2::from_shape_vec((batch, per_sentence), flat).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Self::new(symbols))
    }

    /// Inverse of [`SymbolBlock::from_real`].
    pub fn to_real(&self, cols: usize) -> Result<Array2<f64>> {
        let total = self.symbols.len() * 2;
        if cols == 0 || total % cols != 0 {
            return Err(Error::Shape(format!("{total} reals do not fill rows of {cols}")));
        }
        let flat: Vec<f64> = self.symbols.iter().flat_map(|c| [c.re, c.im]).collect();
        Array2::from_shape_vec((total / cols, cols), flat).map_err(|e| Error::Shape(e.to_string()))
    }

    /// Batch-mean `|x|^2`.
    pub fn mean_power(&self) -> f64 {
        self.symbols.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.symbols.len() as f64
    }

    /// Scales the block to unit batch-mean power.
    pub fn normalize(&self) -> Self {
        let scale = self.mean_power().sqrt().recip();
        Self {
            symbols: self.symbols.mapv(|c| c * scale),
            normalized: true,
        }
    }

    fn check_normalized(&self) -> Result<()> {
        if !self.normalized {
            return Err(Error::Contract("transmit requires a power-normalized block".into()));
        }
        let p = self.mean_power();
        if (p - 1.0).abs() > NORMALIZED_TOLERANCE {
            return Err(Error::Contract(format!("block flagged normalized has mean power {p}")));
        }
        Ok(())
    }
}

/// `y = sqrt(P) h x + w` with fresh noise of variance `noise_watts` per symbol.
pub fn transmit<R: Rng + ?Sized>(
    x: &SymbolBlock,
    h: Complex64,
    power: f64,
    noise_watts: f64,
    rng: &mut R,
) -> Result<SymbolBlock> {
    x.check_normalized()?;
    let (rows, cols) = x.symbols.dim();
    let noise = sample_noise(rows, cols, noise_watts, rng);
    Ok(transmit_with_noise(x, h, power, &noise))
}

/// Deterministic core of [`transmit`] for a fixed noise draw.
pub fn transmit_with_noise(x: &SymbolBlock, h: Complex64, power: f64, noise: &Array2<Complex64>) -> SymbolBlock {
    let gain = h * power.sqrt();
    SymbolBlock::new(&x.symbols.mapv(|s| s * gain) + noise)
}

/// Coherent equalization `y / (sqrt(P) h)`.
pub fn equalize(y: &SymbolBlock, h: Complex64, power: f64) -> Result<SymbolBlock> {
    if h.norm() < MIN_FADING_MAGNITUDE {
        return Err(Error::DegenerateChannel(h.norm()));
    }
    let inv = (h * power.sqrt()).inv();
    Ok(SymbolBlock::new(y.symbols.mapv(|s| s * inv)))
}
