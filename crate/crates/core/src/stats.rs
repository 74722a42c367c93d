//! Ensemble statistics: e-type maps, their histograms, bias comparison between
//! two ensembles, and label confusion matrices.

use serde::{Deserialize, Serialize};

use crate::ensemble::LabeledEnsemble;
use crate::error::{FaciesError, Result};

/// Pixel-wise probability of one facies over an ensemble. Stored as exact
/// integer counts; `value = count / samples`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EtypeMap {
    pub facies: u8,
    pub height: usize,
    pub width: usize,
    pub samples: usize,
    counts: Vec<u32>,
}

impl EtypeMap {
    pub fn from_counts(facies: u8, height: usize, width: usize, samples: usize, counts: Vec<u32>) -> Result<Self> {
        if counts.len() != height * width {
            return Err(FaciesError::Shape("count grid does not match dims".into()));
        }
        if samples == 0 || counts.iter().any(|&c| c as usize > samples) {
            return Err(FaciesError::Argument("counts exceed sample count".into()));
        }
        Ok(Self {
            facies,
            height,
            width,
            samples,
            counts,
        })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn values(&self) -> Vec<f64> {
        let n = self.samples as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.counts[row * self.width + col] as f64 / self.samples as f64
    }

    pub fn mean(&self) -> f64 {
        pairwise_sum(&self.values()) / self.counts.len() as f64
    }

    pub fn std(&self) -> f64 {
        let v = self.values();
        let m = pairwise_sum(&v) / v.len() as f64;
        let sq: Vec<f64> = v.iter().map(|x| (x - m) * (x - m)).collect();
        (pairwise_sum(&sq) / v.len() as f64).sqrt()
    }
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// E-type of `facies`: the mean of the indicator grids over the ensemble.
pub fn etype(ensemble: &LabeledEnsemble, facies: u8) -> Result<EtypeMap> {
    let Some((h, w)) = ensemble.dims() else {
        return Err(FaciesError::Argument("e-type of an empty ensemble".into()));
    };
    ensemble.codebook().check(facies)?;
    let mut counts = vec![0u32; h * w];
    for g in ensemble.grids() {
        for (acc, &c) in counts.iter_mut().zip(g.cells()) {
            *acc += u32::from(c == facies);
        }
    }
    EtypeMap::from_counts(facies, h, w, ensemble.len(), counts)
}

/// E-types of every codebook facies, in codebook order.
pub fn etype_all(ensemble: &LabeledEnsemble) -> Result<Vec<EtypeMap>> {
    ensemble
        .codebook()
        .codes()
        .map(|code| etype(ensemble, code))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtypeHistogram {
    /// `bins + 1` edges spanning `[0, 1]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean: f64,
    pub std: f64,
}

pub const DEFAULT_BINS: usize = 50;

pub fn etype_histogram(map: &EtypeMap, bins: usize) -> Result<EtypeHistogram> {
    if bins < 2 {
        return Err(FaciesError::Argument(format!("need at least 2 bins, got {bins}")));
    }
    let edges: Vec<f64> = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let mut counts = vec![0usize; bins];
    for v in map.values() {
        let b = ((v * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(EtypeHistogram {
        edges,
        counts,
        mean: map.mean(),
        std: map.std(),
    })
}

impl EtypeHistogram {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{:.4},{:.4},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        s
    }
}

/// Pass/fail limits for comparing generated against training e-types.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasThresholds {
    pub max_mean_delta: f64,
    pub max_std_ratio: f64,
    pub max_pixel_delta: f64,
}

impl Default for BiasThresholds {
    fn default() -> Self {
        Self {
            max_mean_delta: 0.03,
            max_std_ratio: 2.0,
            max_pixel_delta: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaciesBias {
    pub facies: u8,
    pub train_mean: f64,
    pub gen_mean: f64,
    pub mean_delta: f64,
    pub train_std: f64,
    pub gen_std: f64,
    /// `gen_std / train_std`; 1 when both are zero.
    pub std_ratio: f64,
    pub max_pixel_delta: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub facies: Vec<FaciesBias>,
    pub thresholds: BiasThresholds,
    pub pass: bool,
}

/// Compare e-type statistics of a generated ensemble against training data.
pub fn bias_report(
    train: &LabeledEnsemble,
    generated: &LabeledEnsemble,
    facies: &[u8],
    thresholds: &BiasThresholds,
) -> Result<BiasReport> {
    if train.dims() != generated.dims() {
        return Err(FaciesError::Argument(format!(
            "grid dims differ: {:?} vs {:?}",
            train.dims(),
            generated.dims()
        )));
    }
    if train.codebook() != generated.codebook() {
        return Err(FaciesError::Argument("codebooks differ".into()));
    }
    let mut rows = Vec::with_capacity(facies.len());
    for &f in facies {
        let (a, b) = (etype(train, f)?, etype(generated, f)?);
        let (train_std, gen_std) = (a.std(), b.std());
        let std_ratio = if train_std > 0.0 {
            gen_std / train_std
        } else if gen_std == 0.0 {
            1.0
        } else {
            f64::INFINITY
        };
        let max_pixel_delta = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let (train_mean, gen_mean) = (a.mean(), b.mean());
        let mean_delta = (gen_mean - train_mean).abs();
        let pass = mean_delta <= thresholds.max_mean_delta
            && std_ratio <= thresholds.max_std_ratio
            && max_pixel_delta <= thresholds.max_pixel_delta;
        rows.push(FaciesBias {
            facies: f,
            train_mean,
            gen_mean,
            mean_delta,
            train_std,
            gen_std,
            std_ratio,
            max_pixel_delta,
            pass,
        });
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(BiasReport {
        facies: rows,
        thresholds: thresholds.clone(),
        pass,
    })
}

/// `k × k` counts, rows are true labels and columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], k: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(FaciesError::Shape("truth and prediction lengths differ".into()));
        }
        let mut counts = vec![0; k * k];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= k || p >= k {
                return Err(FaciesError::Argument(format!("label out of range for k = {k}")));
            }
            counts[t * k + p] += 1;
        }
        Ok(Self { k, counts })
    }

    pub fn get(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.chunks(self.k).map(|r| r.iter().sum()).collect()
    }

    /// `trace / total`; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.correct() as f64 / t as f64,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for j in 0..self.k {
            s.push_str(&format!(",{j}"));
        }
        s.push('\n');
        for i in 0..self.k {
            s.push_str(&i.to_string());
            for j in 0..self.k {
                s.push_str(&format!(",{}", self.get(i, j)));
            }
            s.push('\n');
        }
        s
    }
}
