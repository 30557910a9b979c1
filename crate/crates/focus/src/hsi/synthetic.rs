//! Synthetic hyperspectral data with planted ground truth.
//!
//! Every sample carries a smooth base spectrum plus a reflectance bump on the
//! bands of its class's discriminative spectral group, applied only inside an
//! elliptical lesion. The lesion mask and the planted band set are recorded,
//! so saliency metrics can be scored against a known answer.

use super::{default_partition, BandPartition, HsiCube, HsiError, Mask, REFLECTANCE_MAX};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    Class(usize),
    Value(f64),
}

impl Label {
    pub fn class(&self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(*c),
            Label::Value(_) => None,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Label::Class(_) => None,
            Label::Value(v) => Some(*v),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub cube: HsiCube,
    pub label: Label,
    /// Empty for lesion-free ("healthy") classes.
    pub lesion_mask: Mask,
    /// Band indices carrying the planted signal; empty for healthy classes.
    pub true_bands: Vec<usize>,
}

impl Sample {
    /// Whether this sample carries planted ground truth to localize.
    pub fn has_lesion(&self) -> bool {
        !self.true_bands.is_empty() && self.lesion_mask.count_ones() > 0
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub samples_per_class: usize,
    pub groups: usize,
    /// First and last wavelength in nm; bands spaced uniformly between.
    pub wavelength_range: (f64, f64),
    /// Discriminative spectral group per class (ignored for healthy classes).
    pub discriminative_group: Vec<usize>,
    /// The first `lesion_free_classes` classes are healthy: no lesion, no
    /// planted bands. Pits lesion presence against absence, the binary
    /// disease-detection setting.
    pub lesion_free_classes: usize,
    /// Reflectance delta planted on the discriminative bands.
    pub amplitude: f64,
    /// Heterogeneous band response: planted band b gets amplitude scaled by
    /// a balanced multiplier pattern (mean exactly 1, spread `band_jitter`),
    /// permuted per sample. Zero disables it. The mean contrast over the
    /// planted bands stays exactly `amplitude` either way.
    pub band_jitter: f64,
    /// Lesion semi-axis range as a fraction of the smaller spatial dimension.
    pub lesion_radius_frac: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
    /// Regression mode: one prompt set, per-sample bump strength is the
    /// target value. Requires classes == 1.
    pub regression: bool,
}

impl SyntheticSpec {
    /// Spread the discriminative groups evenly across the partition.
    pub fn spread_groups(classes: usize, groups: usize) -> Vec<usize> {
        (0..classes).map(|c| c * groups / classes).collect()
    }

    pub fn validate(&self) -> Result<(), HsiError> {
        if self.classes == 0 || self.bands == 0 || self.height == 0 || self.width == 0 {
            return Err(HsiError::InvalidSpec("zero-sized dimension".into()));
        }
        if self.samples_per_class == 0 {
            return Err(HsiError::InvalidSpec("samples_per_class must be >= 1".into()));
        }
        if self.discriminative_group.len() != self.classes {
            return Err(HsiError::InvalidSpec(format!(
                "{} discriminative groups for {} classes",
                self.discriminative_group.len(),
                self.classes
            )));
        }
        if self.discriminative_group.iter().any(|&g| g >= self.groups) {
            return Err(HsiError::InvalidSpec("discriminative group index >= G".into()));
        }
        if self.amplitude <= 0.0 {
            return Err(HsiError::InvalidSpec("amplitude must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.band_jitter) {
            return Err(HsiError::InvalidSpec("band_jitter must be in [0, 1)".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(HsiError::InvalidSpec("noise sigma must be >= 0".into()));
        }
        let (lo, hi) = self.lesion_radius_frac;
        if !(0.0 < lo && lo <= hi && hi <= 0.5) {
            return Err(HsiError::InvalidSpec("lesion radius fractions must satisfy 0 < lo <= hi <= 0.5".into()));
        }
        if self.regression && self.classes != 1 {
            return Err(HsiError::InvalidSpec("regression mode requires classes == 1".into()));
        }
        if self.lesion_free_classes >= self.classes {
            return Err(HsiError::InvalidSpec(
                "at least one class must carry a lesion".into(),
            ));
        }
        Ok(())
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        let (lo, hi) = self.wavelength_range;
        let step = if self.bands > 1 { (hi - lo) / (self.bands - 1) as f64 } else { 0.0 };
        (0..self.bands).map(|i| lo + step * i as f64).collect()
    }

    pub fn partition(&self) -> Result<BandPartition, HsiError> {
        default_partition(&self.wavelengths(), Some(self.groups))
    }
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 2,
            bands: 20,
            height: 32,
            width: 32,
            samples_per_class: 12,
            groups: 4,
            wavelength_range: (400.0, 2400.0),
            discriminative_group: SyntheticSpec::spread_groups(2, 4),
            amplitude: 0.3,
            band_jitter: 0.5,
            lesion_free_classes: 0,
            lesion_radius_frac: (0.22, 0.38),
            noise_sigma: 0.02,
            seed: 7,
            regression: false,
        }
    }
}

/// Smooth base spectrum shared by all classes; the signal lives solely in the
/// planted bump.
fn base_reflectance(band: usize, bands: usize) -> f64 {
    let t = band as f64 / bands.max(2) as f64;
    0.35 + 0.15 * (2.0 * std::f64::consts::PI * t).sin()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<Sample>, HsiError> {
    spec.validate()?;
    let wavelengths = spec.wavelengths();
    let partition = spec.partition()?;
    let root = SplitMix64::new(spec.seed);

    let mut samples = Vec::with_capacity(spec.classes * spec.samples_per_class);
    for class in 0..spec.classes {
        let healthy = class < spec.lesion_free_classes;
        let true_bands: Vec<usize> = if healthy {
            Vec::new()
        } else {
            partition.bands_of(spec.discriminative_group[class]).collect()
        };
        for index in 0..spec.samples_per_class {
            let mut rng = root.fork((class * spec.samples_per_class + index) as u64 + 1);
            let mask = if healthy {
                Mask::filled(spec.height, spec.width, false)
            } else {
                random_lesion(&mut rng, spec)
            };
            let amplitude = if spec.regression {
                spec.amplitude * rng.range_f64(0.5, 1.5)
            } else {
                spec.amplitude
            };
            let cube = render_cube(&mut rng, spec, &wavelengths, &mask, &true_bands, amplitude)?;
            let label = if spec.regression { Label::Value(amplitude) } else { Label::Class(class) };
            samples.push(Sample { cube, label, lesion_mask: mask, true_bands: true_bands.clone() });
        }
    }
    Ok(samples)
}

fn random_lesion(rng: &mut SplitMix64, spec: &SyntheticSpec) -> Mask {
    let (h, w) = (spec.height, spec.width);
    let unit = h.min(w) as f64;
    let (lo, hi) = spec.lesion_radius_frac;
    let rx = rng.range_f64(lo, hi) * unit;
    let ry = rng.range_f64(lo, hi) * unit;
    // Center placed so the ellipse fits inside the frame.
    let cx = rng.range_f64(rx, w as f64 - rx);
    let cy = rng.range_f64(ry, h as f64 - ry);
    let mut mask = Mask::filled(h, w, false);
    for y in 0..h {
        for x in 0..w {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            if dx * dx + dy * dy <= 1.0 {
                mask.set(y, x, true);
            }
        }
    }
    mask
}

/// Per-band amplitude multipliers for the planted set: symmetric around 1
/// (zero-sum offsets), shuffled per sample, so the mean over the planted
/// bands is exactly 1 while the per-band response varies.
fn band_multipliers(rng: &mut SplitMix64, n: usize, jitter: f64) -> Vec<f64> {
    if jitter == 0.0 || n == 1 {
        return vec![1.0; n];
    }
    let mut mults: Vec<f64> = (0..n)
        .map(|i| 1.0 + jitter * (2.0 * i as f64 / (n - 1) as f64 - 1.0))
        .collect();
    rng.shuffle(&mut mults);
    mults
}

fn render_cube(
    rng: &mut SplitMix64,
    spec: &SyntheticSpec,
    wavelengths: &[f64],
    mask: &Mask,
    true_bands: &[usize],
    amplitude: f64,
) -> Result<HsiCube, HsiError> {
    let (c, h, w) = (spec.bands, spec.height, spec.width);
    let mut bump = vec![0.0; c];
    let mults = band_multipliers(rng, true_bands.len(), spec.band_jitter);
    for (&b, &m) in true_bands.iter().zip(&mults) {
        bump[b] = amplitude * m;
    }
    let mut data = vec![0.0; c * h * w];
    for band in 0..c {
        let base = base_reflectance(band, c);
        for y in 0..h {
            for x in 0..w {
                let mut v = base;
                if bump[band] != 0.0 && mask.at(y, x) {
                    v += bump[band];
                }
                if spec.noise_sigma > 0.0 {
                    v += rng.normal(spec.noise_sigma);
                }
                data[(band * h + y) * w + x] = v.clamp(0.0, REFLECTANCE_MAX);
            }
        }
    }
    HsiCube::new(wavelengths.to_vec(), h, w, data)
}
