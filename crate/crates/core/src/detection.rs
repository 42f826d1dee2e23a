//! Camera model: intensity, saturating response, additive noise, finite gray
//! levels, and binning of pixel blocks into readout channels.

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::ComplexField;
use crate::error::OpticsError;
use crate::levels::LevelsRepr;

/// Saturating response `G(I) = I / (I + Is)`.
#[inline]
pub fn saturate(intensity: f64, i_sat: f64) -> f64 {
    intensity / (intensity + i_sat)
}

/// Detector response setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SaturationRepr", into = "SaturationRepr")]
pub enum Saturation {
    /// Fixed saturation intensity.
    Fixed(f64),
    /// Saturation intensity set to the median channel-pixel intensity of a
    /// calibration batch taken from the training set.
    Auto,
    /// No saturation: the response is the raw intensity.
    Linear,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SaturationRepr {
    Value(f64),
    Mode(String),
}

impl TryFrom<SaturationRepr> for Saturation {
    type Error = String;

    fn try_from(r: SaturationRepr) -> Result<Self, Self::Error> {
        match r {
            SaturationRepr::Value(v) => Ok(Saturation::Fixed(v)),
            SaturationRepr::Mode(m) => match m.as_str() {
                "auto" => Ok(Saturation::Auto),
                "linear" => Ok(Saturation::Linear),
                other => Err(format!(
                    "saturation must be a number, \"auto\" or \"linear\", got \"{other}\""
                )),
            },
        }
    }
}

impl From<Saturation> for SaturationRepr {
    fn from(s: Saturation) -> Self {
        match s {
            Saturation::Fixed(v) => SaturationRepr::Value(v),
            Saturation::Auto => SaturationRepr::Mode("auto".into()),
            Saturation::Linear => SaturationRepr::Mode("linear".into()),
        }
    }
}

/// Gray levels of the camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(try_from = "LevelsRepr", into = "LevelsRepr")]
pub enum ReadoutLevels {
    #[default]
    Continuous,
    /// `n` uniform steps on `[0, 1)`: a response `g` reads as
    /// `floor(g n) / n`.
    Discrete(u32),
}

impl TryFrom<LevelsRepr> for ReadoutLevels {
    type Error = String;

    fn try_from(r: LevelsRepr) -> Result<Self, Self::Error> {
        Ok(match r.into_levels()? {
            Some(n) => ReadoutLevels::Discrete(n),
            None => ReadoutLevels::Continuous,
        })
    }
}

impl From<ReadoutLevels> for LevelsRepr {
    fn from(l: ReadoutLevels) -> Self {
        LevelsRepr::from_levels(match l {
            ReadoutLevels::Continuous => None,
            ReadoutLevels::Discrete(n) => Some(n),
        })
    }
}

impl ReadoutLevels {
    #[inline]
    fn apply(self, g: f64) -> f64 {
        match self {
            ReadoutLevels::Continuous => g,
            ReadoutLevels::Discrete(n) => {
                let n = f64::from(n);
                (g * n).floor().clamp(0.0, n - 1.0) / n
            }
        }
    }
}

/// Placement of the readout channels: `m_channels` square blocks of
/// `block_side` pixels, row-major on a `ceil(sqrt(M))`-wide lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLayout {
    pub m_channels: usize,
    #[serde(default = "one")]
    pub block_side: usize,
    /// Top-left pixel of the lattice; centered on the zero-frequency pixel
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<[usize; 2]>,
}

fn one() -> usize {
    1
}

impl ChannelLayout {
    pub fn centered(m_channels: usize, block_side: usize) -> ChannelLayout {
        ChannelLayout {
            m_channels,
            block_side,
            origin: None,
        }
    }

    /// Top-left pixel of every channel block on a `side x side` detector.
    pub fn resolve(&self, side: usize) -> Result<Vec<(usize, usize)>, OpticsError> {
        let oob = |reason: String| OpticsError::ChannelsOutOfBounds { side, reason };
        if self.m_channels == 0 || self.block_side == 0 {
            return Err(oob("need at least one channel of non-zero size".into()));
        }
        let per_row = (self.m_channels as f64).sqrt().ceil() as usize;
        let rows = self.m_channels.div_ceil(per_row);
        let (span_w, span_h) = (per_row * self.block_side, rows * self.block_side);
        let (r0, c0) = match self.origin {
            Some([r, c]) => (r, c),
            None => {
                let center = side / 2;
                let lattice = per_row * self.block_side;
                if lattice / 2 > center {
                    return Err(oob(format!(
                        "{} channels of {}x{} pixels need a {lattice}-pixel square",
                        self.m_channels, self.block_side, self.block_side
                    )));
                }
                (center - lattice / 2, center - lattice / 2)
            }
        };
        if r0 + span_h > side || c0 + span_w > side {
            return Err(oob(format!("lattice at ({r0}, {c0}) spans {span_h}x{span_w} pixels")));
        }
        Ok((0..self.m_channels)
            .map(|m| {
                (
                    r0 + (m / per_row) * self.block_side,
                    c0 + (m % per_row) * self.block_side,
                )
            })
            .collect())
    }
}

/// Detector settings as written in a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub saturation: Saturation,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub readout_levels: ReadoutLevels,
    pub channels: ChannelLayout,
    /// Master seed of the per-sample noise streams; required when
    /// `noise_sigma > 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
    #[serde(default = "default_calibration")]
    pub calibration_samples: usize,
}

fn default_calibration() -> usize {
    256
}

impl DetectorConfig {
    pub fn new(channels: ChannelLayout, saturation: Saturation) -> DetectorConfig {
        DetectorConfig {
            saturation,
            noise_sigma: 0.0,
            readout_levels: ReadoutLevels::Continuous,
            channels,
            noise_seed: None,
            calibration_samples: default_calibration(),
        }
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        if let Saturation::Fixed(v) = self.saturation {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OpticsError::Detector(format!("saturation intensity {v} must be > 0")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(OpticsError::Detector(format!(
                "noise sigma {} must be >= 0",
                self.noise_sigma
            )));
        }
        if self.noise_sigma > 0.0 && self.noise_seed.is_none() {
            return Err(OpticsError::Detector("noise_sigma > 0 requires noise_seed".into()));
        }
        if let ReadoutLevels::Discrete(n) = self.readout_levels {
            if n < 2 {
                return Err(OpticsError::Detector(format!("{n} readout levels")));
            }
        }
        if self.saturation == Saturation::Auto && self.calibration_samples == 0 {
            return Err(OpticsError::Detector("calibration batch is empty".into()));
        }
        Ok(())
    }
}

/// Detector ready to read a field of a known side: saturation intensity
/// resolved and channel positions computed.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub side: usize,
    /// `None` for a linear response.
    pub i_sat: Option<f64>,
    pub noise_sigma: f64,
    pub readout_levels: ReadoutLevels,
    pub block_side: usize,
    pub origins: Vec<(usize, usize)>,
    pub noise_seed: u64,
}

impl Detector {
    /// Resolve `config` for a `side x side` field. `i_sat` must be supplied
    /// when the configuration asks for auto exposure.
    pub fn new(config: &DetectorConfig, side: usize, i_sat: Option<f64>) -> Result<Detector, OpticsError> {
        config.validate()?;
        let i_sat = match config.saturation {
            Saturation::Fixed(v) => Some(v),
            Saturation::Linear => None,
            Saturation::Auto => Some(i_sat.filter(|v| *v > 0.0).ok_or_else(|| {
                OpticsError::Detector("auto exposure needs a calibrated saturation intensity".into())
            })?),
        };
        Ok(Detector {
            side,
            i_sat,
            noise_sigma: config.noise_sigma,
            readout_levels: config.readout_levels,
            block_side: config.channels.block_side,
            origins: config.channels.resolve(side)?,
            noise_seed: config.noise_seed.unwrap_or(0),
        })
    }

    pub fn channels(&self) -> usize {
        self.origins.len()
    }

    /// Intensities of every pixel that belongs to a channel.
    pub(crate) fn channel_intensities<'a>(&'a self, values: &'a [Complex64]) -> impl Iterator<Item = f64> + 'a {
        let b = self.block_side;
        self.origins.iter().flat_map(move |&(r0, c0)| {
            (r0..r0 + b).flat_map(move |r| {
                values[r * self.side + c0..r * self.side + c0 + b]
                    .iter()
                    .map(|z| z.norm_sqr())
            })
        })
    }

    /// Read one field (`side^2` values) into `out` (one value per channel).
    pub(crate) fn read_into(&self, values: &[Complex64], noise: Option<&mut ChaCha8Rng>, out: &mut [f64]) {
        let b = self.block_side;
        let inv_area = 1.0 / (b * b) as f64;
        let normal = (self.noise_sigma > 0.0).then(|| Normal::new(0.0, self.noise_sigma).unwrap());
        let mut noise = noise;
        for (o, &(r0, c0)) in out.iter_mut().zip(&self.origins) {
            let mut acc = 0.0;
            for r in r0..r0 + b {
                for z in &values[r * self.side + c0..r * self.side + c0 + b] {
                    let mut i = z.norm_sqr();
                    if let (Some(dist), Some(rng)) = (&normal, noise.as_deref_mut()) {
                        i = (i + dist.sample(rng)).max(0.0);
                    }
                    let g = match self.i_sat {
                        Some(is) => saturate(i, is),
                        None => i,
                    };
                    acc += self.readout_levels.apply(g);
                }
            }
            *o = acc * inv_area;
        }
    }
}

/// Channel values for one propagated field. `noise` supplies the random
/// stream when the detector adds noise.
pub fn detect(
    field: &ComplexField,
    detector: &Detector,
    noise: Option<&mut ChaCha8Rng>,
) -> Result<Vec<f64>, OpticsError> {
    if field.side != detector.side {
        return Err(OpticsError::GridMismatch {
            expected: detector.side,
            found: field.side,
        });
    }
    let mut out = vec![0.0; detector.channels()];
    detector.read_into(&field.values, noise, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn detector(side: usize, layout: ChannelLayout, sat: Saturation) -> Detector {
        Detector::new(&DetectorConfig::new(layout, sat), side, None).unwrap()
    }

    #[test]
    fn midpoint_of_response() {
        let mut f = ComplexField::zeros(2);
        f.values[3] = Complex64::new(3.0, 4.0);
        let d = detector(
            2,
            ChannelLayout {
                m_channels: 1,
                block_side: 1,
                origin: Some([1, 1]),
            },
            Saturation::Fixed(25.0),
        );
        assert_eq!(detect(&f, &d, None).unwrap(), vec![0.5]);
    }

    #[test]
    fn dark_field_reads_zero() {
        let d = detector(8, ChannelLayout::centered(9, 2), Saturation::Fixed(1.0));
        let out = detect(&ComplexField::zeros(8), &d, None).unwrap();
        assert_eq!(out, vec![0.0; 9]);
    }

    #[test]
    fn single_pixel_channels() {
        // I = [0, Is, 3 Is] -> G = [0, 1/2, 3/4]
        let is: f64 = 2.0;
        let mut f = ComplexField::zeros(3);
        f.values[1] = Complex64::new(is.sqrt(), 0.0);
        f.values[3] = Complex64::new(0.0, (3.0 * is).sqrt());
        let d = detector(
            3,
            ChannelLayout {
                m_channels: 3,
                block_side: 1,
                origin: Some([0, 0]),
            },
            Saturation::Fixed(is),
        );
        let out = detect(&f, &d, None).unwrap();
        let want = [0.0, 0.5, 0.75];
        for (a, b) in out.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn channels_average_their_block() {
        let mut f = ComplexField::zeros(4);
        // Block at (0,0) of side 2: intensities 1, 1, 0, 0 with Is = 1.
        f.values[0] = Complex64::new(1.0, 0.0);
        f.values[1] = Complex64::new(0.0, 1.0);
        let d = detector(
            4,
            ChannelLayout {
                m_channels: 1,
                block_side: 2,
                origin: Some([0, 0]),
            },
            Saturation::Fixed(1.0),
        );
        assert_eq!(detect(&f, &d, None).unwrap(), vec![0.25]);
    }

    #[test]
    fn centered_layout_surrounds_dc() {
        let origins = ChannelLayout::centered(1600, 1).resolve(56).unwrap();
        assert_eq!(origins[0], (8, 8));
        assert_eq!(*origins.last().unwrap(), (47, 47));
        let origins = ChannelLayout::centered(4, 1).resolve(8).unwrap();
        assert_eq!(origins, vec![(3, 3), (3, 4), (4, 3), (4, 4)]);
        // Five channels occupy a 3-wide lattice with two rows.
        let origins = ChannelLayout::centered(5, 2).resolve(16).unwrap();
        assert_eq!(origins.len(), 5);
        assert_eq!(origins[3], (5 + 2, 5));
    }

    #[test]
    fn oversized_layout_rejected() {
        assert!(matches!(
            ChannelLayout::centered(4096, 1).resolve(56),
            Err(OpticsError::ChannelsOutOfBounds { side: 56, .. })
        ));
        let at_edge = ChannelLayout {
            m_channels: 4,
            block_side: 2,
            origin: Some([6, 6]),
        };
        assert!(at_edge.resolve(8).is_err());
        assert!(at_edge.resolve(10).is_ok());
    }

    #[test]
    fn config_validation() {
        let ch = ChannelLayout::centered(4, 1);
        let mut cfg = DetectorConfig::new(ch, Saturation::Fixed(0.0));
        assert!(cfg.validate().is_err());
        cfg.saturation = Saturation::Fixed(1.0);
        cfg.noise_sigma = 0.1;
        assert!(cfg.validate().is_err(), "noise without seed");
        cfg.noise_seed = Some(3);
        assert!(cfg.validate().is_ok());
        cfg.saturation = Saturation::Auto;
        assert!(Detector::new(&cfg, 8, None).is_err());
        assert_eq!(Detector::new(&cfg, 8, Some(2.0)).unwrap().i_sat, Some(2.0));
    }

    #[test]
    fn noise_is_seeded_and_nonnegative() {
        let mut cfg = DetectorConfig::new(ChannelLayout::centered(16, 1), Saturation::Linear);
        cfg.noise_sigma = 0.5;
        cfg.noise_seed = Some(1);
        let d = Detector::new(&cfg, 8, None).unwrap();
        let f = ComplexField::zeros(8);
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        let ra = detect(&f, &d, Some(&mut a)).unwrap();
        let rb = detect(&f, &d, Some(&mut b)).unwrap();
        assert_eq!(ra, rb);
        assert!(ra.iter().all(|&v| v >= 0.0));
        assert!(ra.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn saturation_parses_from_toml() {
        #[derive(Deserialize)]
        struct W {
            s: Saturation,
        }
        let p = |t: &str| toml::from_str::<W>(t).map(|w| w.s);
        assert_eq!(p("s = 0.5").unwrap(), Saturation::Fixed(0.5));
        assert_eq!(p("s = \"auto\"").unwrap(), Saturation::Auto);
        assert_eq!(p("s = \"linear\"").unwrap(), Saturation::Linear);
        assert!(p("s = \"bright\"").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn response_is_monotone(a in 0.0f64..1e6, b in 0.0f64..1e6, is in 1e-3f64..1e3) {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                prop_assume!(hi - lo > 1e-9 * hi.max(1.0));
                prop_assert!(saturate(lo, is) < saturate(hi, is));
                prop_assert!((saturate(is, is) - 0.5).abs() < 1e-15);
                prop_assert!(saturate(hi, is) < 1.0);
            }

            #[test]
            fn quantized_readout_in_range(g in 0.0f64..1.0, n in 2u32..1024) {
                let v = ReadoutLevels::Discrete(n).apply(g);
                prop_assert!((0.0..1.0).contains(&v));
                prop_assert!((v * f64::from(n) - (v * f64::from(n)).round()).abs() < 1e-9);
                prop_assert!(g - v < 1.0 / f64::from(n) + 1e-12 && v <= g);
            }
        }
    }
}
