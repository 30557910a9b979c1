//! Hyperspectral cube model, spectral band partitioning, bit-exact file
//! formats and the synthetic ground-truth generator.

pub mod format;
pub mod synthetic;

pub use synthetic::{generate_synthetic, Label, Sample, SyntheticSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HsiError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: String },
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("trailing bytes after declared payload")]
    TrailingBytes,
    #[error("wavelengths must be strictly increasing (index {index})")]
    NonIncreasingWavelengths { index: usize },
    #[error("invalid cube: {0}")]
    InvalidCube(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Upper reflectance bound; above 1.0 is tolerated for sensor artifacts.
pub const REFLECTANCE_MAX: f64 = 1.5;

/// A C x H x W reflectance cube with a wavelength axis, stored band-major
/// (band, then row, then column) so one spectrum's spatial plane is
/// contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    wavelengths: Vec<f64>,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl HsiCube {
    pub fn new(
        wavelengths: Vec<f64>,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<HsiCube, HsiError> {
        let bands = wavelengths.len();
        if bands == 0 || height == 0 || width == 0 {
            return Err(HsiError::InvalidCube("zero-sized dimension".into()));
        }
        for i in 1..bands {
            if wavelengths[i] <= wavelengths[i - 1] {
                return Err(HsiError::NonIncreasingWavelengths { index: i });
            }
        }
        if data.len() != bands * height * width {
            return Err(HsiError::InvalidCube(format!(
                "{} values for {}x{}x{}",
                data.len(),
                bands,
                height,
                width
            )));
        }
        for &v in &data {
            if !v.is_finite() || !(0.0..=REFLECTANCE_MAX).contains(&v) {
                return Err(HsiError::InvalidCube(format!(
                    "reflectance {v} outside [0, {REFLECTANCE_MAX}]"
                )));
            }
        }
        Ok(HsiCube { wavelengths, height, width, data })
    }

    pub fn bands(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, band: usize, y: usize, x: usize) -> f64 {
        self.data[(band * self.height + y) * self.width + x]
    }

    /// The H x W plane of one band.
    pub fn band_plane(&self, band: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[band * plane..(band + 1) * plane]
    }
}

/// Binary H x W mask (lesion ground truth, rendered heatmaps).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Mask, HsiError> {
        if data.len() != height * width {
            return Err(HsiError::InvalidCube(format!(
                "mask: {} values for {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(Mask { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Mask {
        Mask { height, width, data: vec![value; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn at(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    /// Tight bounding box (x0, y0, x1, y1), inclusive, of the positive cells.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.at(y, x) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        any.then_some((x0, y0, x1, y1))
    }
}

/// Disjoint contiguous groups of band indices covering 0..C.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPartition {
    /// Half-open index spans, in band order.
    spans: Vec<(usize, usize)>,
    labels: Vec<String>,
    /// Wavelength cut points (nm) between named spectral regions.
    boundaries_nm: Vec<f64>,
}

/// Spectral region boundaries in nm: VIS below 700, red-edge to 750, NIR to
/// 1100, SWIR above.
pub const REGION_BOUNDARIES_NM: [f64; 3] = [700.0, 750.0, 1100.0];
pub const REGION_NAMES: [&str; 4] = ["VIS", "RedEdge", "NIR", "SWIR"];

impl BandPartition {
    pub fn from_spans(
        spans: Vec<(usize, usize)>,
        labels: Vec<String>,
        boundaries_nm: Vec<f64>,
        bands: usize,
    ) -> Result<BandPartition, HsiError> {
        if spans.is_empty() || spans.len() != labels.len() {
            return Err(HsiError::InvalidPartition("empty or mislabeled spans".into()));
        }
        let mut cursor = 0;
        for &(start, end) in &spans {
            if start != cursor || end <= start {
                return Err(HsiError::InvalidPartition(format!(
                    "span {start}..{end} breaks contiguous cover at {cursor}"
                )));
            }
            cursor = end;
        }
        if cursor != bands {
            return Err(HsiError::InvalidPartition(format!(
                "spans cover 0..{cursor}, cube has {bands} bands"
            )));
        }
        Ok(BandPartition { spans, labels, boundaries_nm })
    }

    /// Single group over all bands.
    pub fn single(bands: usize) -> BandPartition {
        BandPartition {
            spans: vec![(0, bands)],
            labels: vec!["ALL".into()],
            boundaries_nm: Vec::new(),
        }
    }

    pub fn group_count(&self) -> usize {
        self.spans.len()
    }

    pub fn band_count(&self) -> usize {
        self.spans.last().map(|&(_, end)| end).unwrap_or(0)
    }

    pub fn span(&self, g: usize) -> (usize, usize) {
        self.spans[g]
    }

    pub fn group_size(&self, g: usize) -> usize {
        let (s, e) = self.spans[g];
        e - s
    }

    pub fn bands_of(&self, g: usize) -> std::ops::Range<usize> {
        let (s, e) = self.spans[g];
        s..e
    }

    pub fn label(&self, g: usize) -> &str {
        &self.labels[g]
    }

    pub fn boundaries_nm(&self) -> &[f64] {
        &self.boundaries_nm
    }

    /// Group index of a band.
    pub fn group_of(&self, band: usize) -> usize {
        self.spans
            .iter()
            .position(|&(s, e)| band >= s && band < e)
            .expect("band inside partition cover")
    }
}

/// Partition bands into the named spectral regions, then subdivide uniformly
/// until `requested_groups` is reached (largest-average-size region first).
/// Empty regions are dropped. With `None`, the named regions stand as-is.
/// Requesting fewer groups than non-empty regions degrades to a uniform
/// contiguous split (the G=1 case is a single all-band group).
pub fn default_partition(
    wavelengths: &[f64],
    requested_groups: Option<usize>,
) -> Result<BandPartition, HsiError> {
    let bands = wavelengths.len();
    if bands == 0 {
        return Err(HsiError::InvalidPartition("no bands".into()));
    }
    for i in 1..bands {
        if wavelengths[i] <= wavelengths[i - 1] {
            return Err(HsiError::NonIncreasingWavelengths { index: i });
        }
    }
    if let Some(g) = requested_groups {
        if g == 0 {
            return Err(HsiError::InvalidPartition("requested 0 groups".into()));
        }
        if g > bands {
            return Err(HsiError::InvalidPartition(format!(
                "requested {g} groups for {bands} bands"
            )));
        }
    }

    // Named regions by wavelength; empty ones dropped.
    let mut regions: Vec<(usize, usize, &str)> = Vec::new();
    let mut start = 0;
    for (b, name) in REGION_BOUNDARIES_NM.iter().zip(REGION_NAMES.iter()) {
        let end = start + wavelengths[start..].iter().take_while(|w| **w < *b).count();
        if end > start {
            regions.push((start, end, name));
        }
        start = end;
    }
    if start < bands {
        regions.push((start, bands, REGION_NAMES[3]));
    }

    if let Some(g) = requested_groups {
        if g < regions.len() {
            return uniform_chunks(wavelengths, g);
        }
    }

    // How many parts each region gets: hand extra cuts to the region with the
    // largest bands-per-part until the requested count is reached.
    let mut parts: Vec<usize> = vec![1; regions.len()];
    if let Some(g) = requested_groups {
        let mut total = regions.len();
        while total < g {
            let mut best: Option<usize> = None;
            let mut best_avg = 0.0;
            for (i, &(s, e, _)) in regions.iter().enumerate() {
                let size = e - s;
                if parts[i] >= size {
                    continue; // cannot split below one band per group
                }
                let avg = size as f64 / parts[i] as f64;
                if avg > best_avg {
                    best_avg = avg;
                    best = Some(i);
                }
            }
            let i = best.ok_or_else(|| {
                HsiError::InvalidPartition(format!("cannot reach {g} groups with {bands} bands"))
            })?;
            parts[i] += 1;
            total += 1;
        }
    }

    // Materialize: split each region into near-equal contiguous chunks.
    let mut spans = Vec::new();
    let mut labels = Vec::new();
    for (i, &(s, e, name)) in regions.iter().enumerate() {
        let size = e - s;
        let q = parts[i];
        let (base, rem) = (size / q, size % q);
        let mut cursor = s;
        for piece in 0..q {
            let len = base + usize::from(piece < rem);
            spans.push((cursor, cursor + len));
            labels.push(if q == 1 { name.to_string() } else { format!("{name}-{}", piece + 1) });
            cursor += len;
        }
    }
    let boundaries = cut_wavelengths(wavelengths, &spans);
    BandPartition::from_spans(spans, labels, boundaries, bands)
}

/// Contiguous near-equal chunks ignoring the named regions.
fn uniform_chunks(wavelengths: &[f64], groups: usize) -> Result<BandPartition, HsiError> {
    let bands = wavelengths.len();
    let (base, rem) = (bands / groups, bands % groups);
    let mut spans = Vec::with_capacity(groups);
    let mut labels = Vec::with_capacity(groups);
    let mut cursor = 0;
    for piece in 0..groups {
        let len = base + usize::from(piece < rem);
        spans.push((cursor, cursor + len));
        labels.push(if groups == 1 { "ALL".to_string() } else { format!("SPAN-{}", piece + 1) });
        cursor += len;
    }
    let boundaries = cut_wavelengths(wavelengths, &spans);
    BandPartition::from_spans(spans, labels, boundaries, bands)
}

/// Wavelength at the first band of every group after the first.
fn cut_wavelengths(wavelengths: &[f64], spans: &[(usize, usize)]) -> Vec<f64> {
    spans.iter().skip(1).map(|&(s, _)| wavelengths[s]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wl(start: f64, step: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| start + step * i as f64).collect()
    }

    #[test]
    fn cube_invariants_enforced() {
        assert!(HsiCube::new(vec![500.0, 400.0], 1, 1, vec![0.1, 0.2]).is_err());
        assert!(HsiCube::new(vec![400.0, 500.0], 1, 1, vec![0.1]).is_err());
        assert!(HsiCube::new(vec![400.0, 500.0], 1, 1, vec![0.1, 1.6]).is_err());
        assert!(HsiCube::new(vec![400.0, 500.0], 1, 1, vec![0.1, 1.4]).is_ok());
    }

    #[test]
    fn named_regions_at_paper_boundaries() {
        // 400..1100 step 50 -> 15 bands
        let w = wl(400.0, 50.0, 15);
        let p = default_partition(&w, None).unwrap();
        // Half-open regions: VIS [400,700) = 6 bands, RedEdge [700,750) = 1,
        // NIR [750,1100) = 7, SWIR [1100,..) = 1.
        assert_eq!(p.label(0), "VIS");
        assert_eq!(p.span(0), (0, 6));
        assert_eq!(p.label(1), "RedEdge");
        assert_eq!(p.span(1), (6, 7));
        assert_eq!(p.label(2), "NIR");
        assert_eq!(p.span(2), (7, 14));
        assert_eq!(p.label(3), "SWIR");
        assert_eq!(p.span(3), (14, 15));
    }

    #[test]
    fn degenerate_single_group() {
        let w = wl(400.0, 10.0, 8);
        let p = BandPartition::single(w.len());
        assert_eq!(p.group_count(), 1);
        assert_eq!(p.bands_of(0), 0..8);
    }

    #[test]
    fn fewer_groups_than_regions_degrades_to_uniform() {
        let w = wl(400.0, 2000.0 / 19.0, 20); // spans all four named regions
        let p = default_partition(&w, Some(1)).unwrap();
        assert_eq!(p.group_count(), 1);
        assert_eq!(p.bands_of(0), 0..20);
        assert_eq!(p.label(0), "ALL");
        let p2 = default_partition(&w, Some(2)).unwrap();
        assert_eq!(p2.span(0), (0, 10));
        assert_eq!(p2.span(1), (10, 20));
    }

    #[test]
    fn subdivision_reaches_requested_group_count() {
        let w = wl(400.0, 2000.0 / 19.0, 20); // 400..2400 uniform
        let p = default_partition(&w, Some(10)).unwrap();
        assert_eq!(p.group_count(), 10);

        // Exhaustive cover/disjointness check.
        let mut seen = vec![0usize; 20];
        for g in 0..p.group_count() {
            for b in p.bands_of(g) {
                seen[b] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1), "cover: {seen:?}");

        // Within each subdivided named region, chunk sizes differ by <= 1.
        let mut by_region: std::collections::HashMap<&str, Vec<usize>> = Default::default();
        for g in 0..p.group_count() {
            let region = p.label(g).split('-').next().unwrap().to_string();
            let region = Box::leak(region.into_boxed_str());
            by_region.entry(region).or_default().push(p.group_size(g));
        }
        for (region, sizes) in by_region {
            let max = sizes.iter().max().unwrap();
            let min = sizes.iter().min().unwrap();
            assert!(max - min <= 1, "{region}: {sizes:?}");
        }
    }

    #[test]
    fn requested_groups_beyond_bands_is_error() {
        let w = wl(400.0, 100.0, 5);
        assert!(default_partition(&w, Some(6)).is_err());
    }

    #[test]
    fn group_of_inverts_spans() {
        let w = wl(400.0, 2000.0 / 19.0, 20);
        let p = default_partition(&w, Some(7)).unwrap();
        for g in 0..p.group_count() {
            for b in p.bands_of(g) {
                assert_eq!(p.group_of(b), g);
            }
        }
    }

    #[test]
    fn mask_bbox() {
        let mut m = Mask::filled(4, 5, false);
        m.set(1, 2, true);
        m.set(3, 4, true);
        assert_eq!(m.bbox(), Some((2, 1, 4, 3)));
        assert_eq!(Mask::filled(2, 2, false).bbox(), None);
    }
}
