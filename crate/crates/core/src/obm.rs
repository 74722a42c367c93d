//! Simplified object-based modeling of fluvial and deltaic training images.
//!
//! Fluvial grids are built from sinuous channel objects placed until the sand
//! proportion reaches a target. Deltaic grids are fans of branches radiating
//! from a source on the grid border. [`dress_facies`] adds levees and splays
//! to a binary channel grid.

use std::collections::VecDeque;
use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::ensemble::LabeledEnsemble;
use crate::error::{FaciesError, Result};
use crate::grid::{FaciesCodebook, FaciesGrid, CHANNEL, LEVEE, SHALE, SPLAY};

/// Seed for member `index` of a family rooted at `master`. Each index gets
/// its own ChaCha stream, so members are independent of generation order.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

fn uniform(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..=range.1)
    } else {
        range.0
    }
}

fn check_range(name: &str, r: (f64, f64), min: f64) -> Result<()> {
    if !(r.0.is_finite() && r.1.is_finite()) || r.0 > r.1 || r.0 < min {
        return Err(FaciesError::Argument(format!(
            "{name} range ({}, {}) must be ordered and at least {min}",
            r.0, r.1
        )));
    }
    Ok(())
}

/// Sinuous channel objects for binary fluvial grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSpec {
    /// Mean flow direction in degrees clockwise from north; 0 flows north to south.
    pub orientation_deg: f64,
    /// Channel width in pixels, inclusive integer range.
    pub width: (u32, u32),
    /// Meander amplitude in pixels.
    pub amplitude: (f64, f64),
    /// Meander wavelength in pixels.
    pub wavelength: (f64, f64),
    pub target_proportion: f64,
    /// Fraction of the cross-flow extent where centrelines may sit. `(0, 1)`
    /// lets objects straddle the borders so every column is equally likely.
    pub position_range: (f64, f64),
    /// Standard deviation of the per-pixel centreline random walk.
    pub jitter: f64,
    /// Placement attempts before giving up on the target proportion.
    pub max_objects: usize,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            orientation_deg: 0.0,
            width: (2, 3),
            amplitude: (2.0, 8.0),
            wavelength: (24.0, 64.0),
            target_proportion: 0.25,
            position_range: (0.0, 1.0),
            jitter: 0.15,
            max_objects: 400,
        }
    }
}

const JITTER_CLAMP: f64 = 2.0;

impl ChannelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width.0 == 0 || self.width.0 > self.width.1 {
            return Err(FaciesError::Argument(format!(
                "width range {:?} must be ordered and positive",
                self.width
            )));
        }
        check_range("amplitude", self.amplitude, 0.0)?;
        check_range("wavelength", self.wavelength, f64::MIN_POSITIVE)?;
        if !(self.target_proportion > 0.0 && self.target_proportion < 1.0) {
            return Err(FaciesError::Argument(format!(
                "target proportion {} not in (0, 1)",
                self.target_proportion
            )));
        }
        let (a, b) = self.position_range;
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a > b {
            return Err(FaciesError::Argument(format!(
                "position range ({a}, {b}) must be ordered within [0, 1]"
            )));
        }
        if !(self.jitter >= 0.0) || !self.orientation_deg.is_finite() {
            return Err(FaciesError::Argument("jitter and orientation must be finite, jitter ≥ 0".into()));
        }
        Ok(())
    }
}

/// Grid-centred frame rotated to the flow direction.
struct FlowFrame {
    along: (f64, f64),
    across: (f64, f64),
    cx: f64,
    cy: f64,
    half_along: f64,
    half_across: f64,
}

impl FlowFrame {
    fn new(height: usize, width: usize, orientation_deg: f64) -> Self {
        let t = orientation_deg.to_radians();
        let (s, c) = t.sin_cos();
        let (hw, hh) = (width as f64 / 2.0, height as f64 / 2.0);
        Self {
            along: (s, c),
            across: (c, -s),
            cx: hw,
            cy: hh,
            half_along: (hh * c).abs() + (hw * s).abs(),
            half_across: (hw * c).abs() + (hh * s).abs(),
        }
    }

    /// `(along, across)` coordinates of a pixel centre.
    fn project(&self, row: usize, col: usize) -> (f64, f64) {
        let (x, y) = (col as f64 + 0.5 - self.cx, row as f64 + 0.5 - self.cy);
        (
            x * self.along.0 + y * self.along.1,
            x * self.across.0 + y * self.across.1,
        )
    }
}

/// Binary fluvial grid (0 shale, 1 channel sand).
pub fn generate_fluvial(
    spec: &ChannelSpec,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<FaciesGrid> {
    spec.validate()?;
    let mut grid = FaciesGrid::filled(height, width, SHALE)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frame = FlowFrame::new(height, width, spec.orientation_deg);
    let total = height * width;
    let target = (spec.target_proportion * total as f64).ceil() as usize;
    let walk = Normal::new(0.0, spec.jitter.max(1e-12)).expect("finite jitter");
    let steps = (2.0 * frame.half_along).ceil() as usize + 3;
    let mut sand = 0usize;
    let mut attempts = 0usize;

    while sand < target {
        attempts += 1;
        if attempts > spec.max_objects {
            return Err(FaciesError::Generation(format!(
                "sand proportion {:.3} after {} objects, target {}",
                sand as f64 / total as f64,
                spec.max_objects,
                spec.target_proportion
            )));
        }
        let w = rng.random_range(spec.width.0..=spec.width.1) as f64;
        let amp = uniform(&mut rng, spec.amplitude);
        let lambda = uniform(&mut rng, spec.wavelength);
        let phase = rng.random_range(0.0..TAU);
        let (lo, hi) = if spec.position_range == (0.0, 1.0) {
            let margin = amp + w / 2.0 + JITTER_CLAMP;
            (-frame.half_across - margin, frame.half_across + margin)
        } else {
            let span = 2.0 * frame.half_across;
            (
                -frame.half_across + spec.position_range.0 * span,
                -frame.half_across + spec.position_range.1 * span,
            )
        };
        let offset = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let mut jitter = Vec::with_capacity(steps);
        let mut j = 0.0f64;
        for _ in 0..steps {
            j = (0.9 * j + walk.sample(&mut rng)).clamp(-JITTER_CLAMP, JITTER_CLAMP);
            jitter.push(if spec.jitter > 0.0 { j } else { 0.0 });
        }

        for row in 0..height {
            for col in 0..width {
                let (u, v) = frame.project(row, col);
                let step = ((u + frame.half_along).floor() as isize + 1).clamp(0, steps as isize - 1);
                let centre = offset + amp * (TAU * u / lambda + phase).sin() + jitter[step as usize];
                let d = v - centre;
                if d >= -w / 2.0 && d < w / 2.0 && grid.get(row, col) == SHALE {
                    grid.set(row, col, CHANNEL);
                    sand += 1;
                }
            }
        }
    }
    Ok(grid)
}

/// Radial fan of distributary branches for binary deltaic grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeltaSpec {
    /// `(row, col)` of the point source; must lie on the grid border.
    /// `None` places it at the middle of the upper border.
    pub source: Option<(usize, usize)>,
    /// Half-angle of the fan in degrees, in `[0, 90]`; 0 gives one straight branch direction.
    pub half_angle_deg: f64,
    /// Number of branches, inclusive range.
    pub branches: (u32, u32),
    /// Branch width at the source, in pixels.
    pub width: (f64, f64),
    /// Width change per pixel of downstream distance (negative narrows).
    pub widening: f64,
    /// Maximum angular deviation of a meandering branch, in degrees.
    pub meander_deg: f64,
    /// Meander wavelength along the branch, in pixels.
    pub meander_wavelength: (f64, f64),
}

impl Default for DeltaSpec {
    fn default() -> Self {
        Self {
            source: None,
            half_angle_deg: 55.0,
            branches: (3, 6),
            width: (2.0, 3.0),
            widening: 0.02,
            meander_deg: 20.0,
            meander_wavelength: (16.0, 40.0),
        }
    }
}

impl DeltaSpec {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if let Some((r, c)) = self.source {
            let on_border = (r == 0 || r == height - 1 || c == 0 || c == width - 1)
                && r < height
                && c < width;
            if !on_border {
                return Err(FaciesError::Argument(format!(
                    "delta source ({r}, {c}) is not on the border of a {height}x{width} grid"
                )));
            }
        }
        if !(0.0..=90.0).contains(&self.half_angle_deg) {
            return Err(FaciesError::Argument(format!(
                "fan half-angle {} not in [0, 90]",
                self.half_angle_deg
            )));
        }
        if self.branches.0 == 0 || self.branches.0 > self.branches.1 {
            return Err(FaciesError::Argument(format!(
                "branch count range {:?} must be ordered and positive",
                self.branches
            )));
        }
        check_range("branch width", self.width, 2.0)?;
        check_range("meander wavelength", self.meander_wavelength, f64::MIN_POSITIVE)?;
        if !self.widening.is_finite() || !(self.meander_deg >= 0.0) {
            return Err(FaciesError::Argument("widening and meander must be finite".into()));
        }
        Ok(())
    }
}

/// Paint every pixel whose centre lies within `radius` of `(x, y)`.
fn stamp_disc(grid: &mut FaciesGrid, x: f64, y: f64, radius: f64, code: u8) {
    let (h, w) = (grid.height() as isize, grid.width() as isize);
    let r0 = ((y - radius).floor() as isize).max(0);
    let r1 = ((y + radius).ceil() as isize).min(h - 1);
    let c0 = ((x - radius).floor() as isize).max(0);
    let c1 = ((x + radius).ceil() as isize).min(w - 1);
    for r in r0..=r1 {
        for c in c0..=c1 {
            let (dx, dy) = (c as f64 + 0.5 - x, r as f64 + 0.5 - y);
            if dx * dx + dy * dy <= radius * radius {
                grid.set(r as usize, c as usize, code);
            }
        }
    }
}

/// Binary deltaic grid: branches fanning out from a point source.
pub fn generate_deltaic(spec: &DeltaSpec, height: usize, width: usize, seed: u64) -> Result<FaciesGrid> {
    spec.validate(height, width)?;
    let mut grid = FaciesGrid::filled(height, width, SHALE)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sr, sc) = spec.source.unwrap_or((0, width / 2));
    // Flow heads into the grid, away from the border holding the source.
    let base: f64 = if sr == 0 {
        0.0
    } else if sr == height - 1 {
        180.0
    } else if sc == 0 {
        -90.0
    } else {
        90.0
    };
    let half = spec.half_angle_deg.to_radians();
    let meander = spec.meander_deg.to_radians().min(half);
    let count = rng.random_range(spec.branches.0..=spec.branches.1);
    let (x0, y0) = (sc as f64 + 0.5, sr as f64 + 0.5);
    let step = 0.5;
    let reach = (height + width) as f64 * 2.0;

    for _ in 0..count {
        let heading = if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 };
        let w0 = uniform(&mut rng, spec.width);
        let lambda = uniform(&mut rng, spec.meander_wavelength);
        let phase = rng.random_range(0.0..TAU);
        let (mut x, mut y) = (x0, y0);
        let mut s = 0.0;
        while s < reach {
            let radius = ((w0 + spec.widening * s) / 2.0).max(1.0);
            stamp_disc(&mut grid, x, y, radius, CHANNEL);
            let angle = (heading + meander * (TAU * s / lambda + phase).sin()).clamp(-half, half)
                + base.to_radians();
            x += step * angle.sin();
            y += step * angle.cos();
            s += step;
            if x < -radius || y < -radius || x > width as f64 + radius || y > height as f64 + radius {
                break;
            }
        }
    }
    Ok(grid)
}

/// Levees and crevasse splays added around channel sand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaciesDressing {
    /// Levee band width in pixels, inclusive range.
    pub levee_width: (u32, u32),
    /// Expected splays per connected channel body.
    pub splay_frequency: f64,
    /// Splay disc radius in pixels.
    pub splay_radius: (f64, f64),
}

impl Default for FaciesDressing {
    fn default() -> Self {
        Self {
            levee_width: (1, 2),
            splay_frequency: 2.0,
            splay_radius: (2.0, 4.0),
        }
    }
}

impl FaciesDressing {
    pub fn validate(&self) -> Result<()> {
        if self.levee_width.0 > self.levee_width.1 {
            return Err(FaciesError::Argument("levee width range is not ordered".into()));
        }
        if !(self.splay_frequency >= 0.0) || !self.splay_frequency.is_finite() {
            return Err(FaciesError::Argument("splay frequency must be finite and ≥ 0".into()));
        }
        check_range("splay radius", self.splay_radius, 0.0)
    }
}

const N8: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
const N4: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];

fn neighbours(
    r: usize,
    c: usize,
    h: usize,
    w: usize,
    offsets: &'static [(isize, isize)],
) -> impl Iterator<Item = (usize, usize)> {
    offsets.iter().filter_map(move |&(dr, dc)| {
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        (nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w).then_some((nr as usize, nc as usize))
    })
}

/// Number of 4-connected bodies of `code`.
fn count_bodies(grid: &FaciesGrid, code: u8) -> usize {
    let (h, w) = grid.dims();
    let mut seen = vec![false; h * w];
    let mut bodies = 0;
    for start in 0..h * w {
        if seen[start] || grid.cells()[start] != code {
            continue;
        }
        bodies += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for (nr, nc) in neighbours(i / w, i % w, h, w, &N4) {
                let j = nr * w + nc;
                if !seen[j] && grid.cells()[j] == code {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    bodies
}

/// Recode a binary sand grid into channel (1), levee (2), splay (4) and shale (0).
///
/// Levees are the cells within an 8-connected distance of the levee width from
/// channel sand. Splays are discs centred on outer levee cells and only
/// replace shale, so channel and levee cells are never overwritten.
pub fn dress_facies(binary: &FaciesGrid, dressing: &FaciesDressing, seed: u64) -> Result<FaciesGrid> {
    dressing.validate()?;
    if let Some(&c) = binary.cells().iter().find(|&&c| c > 1) {
        return Err(FaciesError::Argument(format!("input is not binary (found code {c})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = binary.dims();
    let mut out = binary.clone();

    let levee = rng.random_range(dressing.levee_width.0..=dressing.levee_width.1);
    let mut dist = vec![u32::MAX; h * w];
    let mut queue = VecDeque::new();
    for (i, &c) in binary.cells().iter().enumerate() {
        if c == CHANNEL {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        if dist[i] >= levee {
            continue;
        }
        for (nr, nc) in neighbours(i / w, i % w, h, w, &N8) {
            let j = nr * w + nc;
            if dist[j] == u32::MAX {
                dist[j] = dist[i] + 1;
                out.cells_mut()[j] = LEVEE;
                queue.push_back(j);
            }
        }
    }

    if dressing.splay_frequency > 0.0 {
        let rim = if levee > 0 { LEVEE } else { CHANNEL };
        let mut anchors: Vec<(usize, usize)> = (0..h * w)
            .filter(|&i| out.cells()[i] == rim)
            .map(|i| (i / w, i % w))
            .filter(|&(r, c)| neighbours(r, c, h, w, &N4).any(|(nr, nc)| out.get(nr, nc) == SHALE))
            .collect();
        let bodies = count_bodies(binary, CHANNEL);
        if !anchors.is_empty() && bodies > 0 {
            let poisson = Poisson::new(dressing.splay_frequency * bodies as f64).expect("positive rate");
            let n = poisson.sample(&mut rng) as usize;
            anchors.shuffle(&mut rng);
            for _ in 0..n {
                let (r, c) = anchors[rng.random_range(0..anchors.len())];
                let radius = uniform(&mut rng, dressing.splay_radius).max(1.0);
                let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
                let (r0, r1) = ((y - radius).floor().max(0.0) as usize, ((y + radius).ceil() as usize).min(h - 1));
                let (c0, c1) = ((x - radius).floor().max(0.0) as usize, ((x + radius).ceil() as usize).min(w - 1));
                for rr in r0..=r1 {
                    for cc in c0..=c1 {
                        let (dx, dy) = (cc as f64 + 0.5 - x, rr as f64 + 0.5 - y);
                        if dx * dx + dy * dy <= radius * radius && out.get(rr, cc) == SHALE {
                            out.set(rr, cc, SPLAY);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Sedimentary system of one training image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SedimentType {
    /// Binary fluvial channels.
    Fluvial,
    /// Binary deltaic fan ("deltaic-I").
    Deltaic,
    /// Deltaic fan with levees and splays ("deltaic-II").
    Deltaic4,
}

/// Dataset recipes mirroring the case studies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetCase {
    Fluvial,
    Deltaic,
    Deltaic4,
    Mixed2,
    Mixed3,
}

impl DatasetCase {
    /// Member types; a type's position is its label in mixed datasets.
    pub fn types(self) -> &'static [SedimentType] {
        use SedimentType::*;
        match self {
            DatasetCase::Fluvial => &[Fluvial],
            DatasetCase::Deltaic => &[Deltaic],
            DatasetCase::Deltaic4 => &[Deltaic4],
            DatasetCase::Mixed2 => &[Fluvial, Deltaic],
            DatasetCase::Mixed3 => &[Fluvial, Deltaic, Deltaic4],
        }
    }

    pub fn codebook(self) -> FaciesCodebook {
        if self.types().contains(&SedimentType::Deltaic4) {
            FaciesCodebook::four_facies()
        } else {
            FaciesCodebook::binary()
        }
    }

    pub fn is_labeled(self) -> bool {
        self.types().len() > 1
    }
}

impl fmt::Display for DatasetCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DatasetCase::Fluvial => "fluvial",
            DatasetCase::Deltaic => "deltaic",
            DatasetCase::Deltaic4 => "deltaic4",
            DatasetCase::Mixed2 => "mixed2",
            DatasetCase::Mixed3 => "mixed3",
        };
        f.write_str(s)
    }
}

impl FromStr for DatasetCase {
    type Err = FaciesError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fluvial" => Ok(DatasetCase::Fluvial),
            "deltaic" => Ok(DatasetCase::Deltaic),
            "deltaic4" => Ok(DatasetCase::Deltaic4),
            "mixed2" => Ok(DatasetCase::Mixed2),
            "mixed3" => Ok(DatasetCase::Mixed3),
            other => Err(FaciesError::Argument(format!("unknown dataset case {other:?}"))),
        }
    }
}

/// Every object-model parameter a dataset was built with.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpecs {
    pub channel: ChannelSpec,
    pub delta: DeltaSpec,
    pub dressing: FaciesDressing,
}

impl SynthSpecs {
    pub fn generate(&self, kind: SedimentType, height: usize, width: usize, seed: u64) -> Result<FaciesGrid> {
        match kind {
            SedimentType::Fluvial => generate_fluvial(&self.channel, height, width, seed),
            SedimentType::Deltaic => generate_deltaic(&self.delta, height, width, seed),
            SedimentType::Deltaic4 => {
                let sand = generate_deltaic(&self.delta, height, width, derive_seed(seed, 0))?;
                dress_facies(&sand, &self.dressing, derive_seed(seed, 1))
            }
        }
    }
}

/// Generate a dataset. `counts` holds one count per member type, or a single
/// count applied to every type.
pub fn build_dataset(
    case: DatasetCase,
    counts: &[usize],
    size: (usize, usize),
    specs: &SynthSpecs,
    seed: u64,
) -> Result<LabeledEnsemble> {
    let types = case.types();
    let counts: Vec<usize> = match counts {
        [n] => vec![*n; types.len()],
        c if c.len() == types.len() => c.to_vec(),
        c => {
            return Err(FaciesError::Argument(format!(
                "{} counts for {} sediment types",
                c.len(),
                types.len()
            )))
        }
    };
    if counts.contains(&0) {
        return Err(FaciesError::Argument("every count must be at least 1".into()));
    }
    let mut grids = Vec::with_capacity(counts.iter().sum());
    let mut labels = Vec::with_capacity(grids.capacity());
    let mut index = 0u64;
    for (label, (&kind, &n)) in types.iter().zip(&counts).enumerate() {
        for _ in 0..n {
            grids.push(specs.generate(kind, size.0, size.1, derive_seed(seed, index))?);
            labels.push(label as u8);
            index += 1;
        }
    }
    let mut order: Vec<usize> = (0..grids.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    order.shuffle(&mut rng);
    let ensemble = LabeledEnsemble::new(grids, case.is_labeled().then_some(labels), case.codebook())?;
    Ok(ensemble.select(&order))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fluvial_overshoot_is_bounded() {
        let spec = ChannelSpec::default();
        let (h, w) = (64, 64);
        let bound = spec.target_proportion + (spec.width.1 as usize * h) as f64 / (h * w) as f64;
        for seed in 0..50 {
            let g = generate_fluvial(&spec, h, w, seed).unwrap();
            let p = g.proportion(CHANNEL);
            assert!(p >= spec.target_proportion && p < bound, "seed {seed}: {p}");
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let specs = SynthSpecs::default();
        for kind in [SedimentType::Fluvial, SedimentType::Deltaic, SedimentType::Deltaic4] {
            let a = specs.generate(kind, 32, 48, 11).unwrap();
            let b = specs.generate(kind, 32, 48, 11).unwrap();
            let c = specs.generate(kind, 32, 48, 12).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn unreachable_proportion_errors() {
        let spec = ChannelSpec {
            target_proportion: 0.9,
            max_objects: 3,
            ..ChannelSpec::default()
        };
        assert!(matches!(
            generate_fluvial(&spec, 32, 32, 1),
            Err(FaciesError::Generation(_))
        ));
    }

    #[test]
    fn degenerate_fan_is_one_straight_branch() {
        let spec = DeltaSpec {
            half_angle_deg: 0.0,
            width: (3.0, 3.0),
            widening: 0.0,
            ..DeltaSpec::default()
        };
        let g = generate_deltaic(&spec, 40, 41, 5).unwrap();
        for r in 1..40 {
            let cols: Vec<usize> = (0..41).filter(|&c| g.get(r, c) == CHANNEL).collect();
            assert_eq!(cols, vec![19, 20, 21], "row {r}");
        }
    }

    #[test]
    fn spec_validation() {
        assert!(ChannelSpec { width: (4, 2), ..Default::default() }.validate().is_err());
        assert!(ChannelSpec { target_proportion: 1.0, ..Default::default() }.validate().is_err());
        assert!(DeltaSpec { source: Some((5, 5)), ..Default::default() }.validate(16, 16).is_err());
        assert!(DeltaSpec { source: Some((15, 5)), ..Default::default() }.validate(16, 16).is_ok());
        assert!(DeltaSpec { half_angle_deg: 95.0, ..Default::default() }.validate(16, 16).is_err());
        assert!(dress_facies(&FaciesGrid::filled(2, 2, 4).unwrap(), &FaciesDressing::default(), 0).is_err());
    }

    #[test]
    fn zero_dressing_recodes_only() {
        let sand = generate_deltaic(&DeltaSpec::default(), 32, 32, 3).unwrap();
        let plain = FaciesDressing {
            levee_width: (0, 0),
            splay_frequency: 0.0,
            splay_radius: (1.0, 1.0),
        };
        assert_eq!(dress_facies(&sand, &plain, 9).unwrap(), sand);
    }

    #[test]
    fn dataset_labels_and_counts() {
        let specs = SynthSpecs::default();
        let d = build_dataset(DatasetCase::Mixed3, &[1], (16, 16), &specs, 1).unwrap();
        let mut labels = d.labels().unwrap().to_vec();
        labels.sort();
        assert_eq!(labels, vec![0, 1, 2]);
        assert_eq!(d.codebook(), &FaciesCodebook::four_facies());

        let d = build_dataset(DatasetCase::Mixed2, &[6, 3], (16, 16), &specs, 1).unwrap();
        assert_eq!(d.label_histogram(2), vec![6, 3]);
        assert!(build_dataset(DatasetCase::Mixed2, &[1, 2, 3], (16, 16), &specs, 1).is_err());
        assert!(build_dataset(DatasetCase::Fluvial, &[0], (16, 16), &specs, 1).is_err());
        let f = build_dataset(DatasetCase::Fluvial, &[3], (16, 16), &specs, 1).unwrap();
        assert!(f.labels().is_none());
    }

    #[test]
    fn case_names_round_trip() {
        for c in [DatasetCase::Fluvial, DatasetCase::Deltaic, DatasetCase::Deltaic4, DatasetCase::Mixed2, DatasetCase::Mixed3] {
            assert_eq!(c.to_string().parse::<DatasetCase>().unwrap(), c);
        }
        assert!("braided".parse::<DatasetCase>().is_err());
    }
}
