//! Hard facies observations at well locations.
//!
//! Text format: one `row,col,facies_code` per line; `#` starts a comment.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{FaciesError, Result};
use crate::grid::{FaciesCodebook, FaciesGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WellObservation {
    pub row: usize,
    pub col: usize,
    pub facies: u8,
}

/// Well observations bound to a grid size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WellSet {
    height: usize,
    width: usize,
    observations: Vec<WellObservation>,
}

impl WellSet {
    pub fn new(
        height: usize,
        width: usize,
        observations: Vec<WellObservation>,
        codebook: &FaciesCodebook,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for o in &observations {
            if o.row >= height || o.col >= width {
                return Err(FaciesError::Argument(format!(
                    "well at ({}, {}) outside {height}x{width} grid",
                    o.row, o.col
                )));
            }
            if !seen.insert((o.row, o.col)) {
                return Err(FaciesError::Argument(format!(
                    "duplicate well location ({}, {})",
                    o.row, o.col
                )));
            }
            codebook.check(o.facies)?;
        }
        Ok(Self {
            height,
            width,
            observations,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            observations: Vec::new(),
        }
    }

    pub fn observations(&self) -> &[WellObservation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Wells at `count` distinct random pixels of `grid`, reading their facies
    /// from it, so the set is consistent with at least one realization.
    pub fn sample_from_grid(
        grid: &FaciesGrid,
        count: usize,
        codebook: &FaciesCodebook,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let n = grid.height() * grid.width();
        if count > n {
            return Err(FaciesError::Argument(format!(
                "{count} wells on a {n}-cell grid"
            )));
        }
        let mut picks = sample(rng, n, count).into_vec();
        picks.sort_unstable();
        let obs = picks
            .into_iter()
            .map(|i| WellObservation {
                row: i / grid.width(),
                col: i % grid.width(),
                facies: grid.cells()[i],
            })
            .collect();
        Self::new(grid.height(), grid.width(), obs, codebook)
    }

    /// Fraction of wells whose facies `grid` reproduces; 1 for no wells.
    pub fn match_fraction(&self, grid: &FaciesGrid) -> f64 {
        if self.observations.is_empty() {
            return 1.0;
        }
        let hits = self
            .observations
            .iter()
            .filter(|o| grid.get(o.row, o.col) == o.facies)
            .count();
        hits as f64 / self.observations.len() as f64
    }

    pub fn parse(
        text: &str,
        height: usize,
        width: usize,
        codebook: &FaciesCodebook,
    ) -> Result<Self> {
        let mut obs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || FaciesError::Format(format!("line {}: expected row,col,facies", lineno + 1));
            if fields.len() != 3 {
                return Err(bad());
            }
            obs.push(WellObservation {
                row: fields[0].parse().map_err(|_| bad())?,
                col: fields[1].parse().map_err(|_| bad())?,
                facies: fields[2].parse().map_err(|_| bad())?,
            });
        }
        Self::new(height, width, obs, codebook)
    }

    pub fn load(
        path: impl AsRef<Path>,
        height: usize,
        width: usize,
        codebook: &FaciesCodebook,
    ) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, height, width, codebook)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# row,col,facies_code  ({}x{} grid)\n", self.height, self.width);
        for o in &self.observations {
            let _ = writeln!(s, "{},{},{}", o.row, o.col, o.facies);
        }
        s
    }
}
