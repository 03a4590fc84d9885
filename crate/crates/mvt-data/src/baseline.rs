//! Nearest-centroid sanity baseline on silhouette statistics. Its only
//! job is to show the rendered classes are separable enough to learn but
//! not trivially so; the features are per-view foreground pixel counts
//! and boundary (perimeter) pixel counts, summarized by mean and spread
//! across the view circuit.

use crate::dataset::ViewSet;
use crate::error::{DataError, Result};

pub const FEATURE_DIM: usize = 4;

/// Foreground mask at threshold 0.5 on the blurred image.
fn foreground(view: &[f32]) -> Vec<bool> {
    view.iter().map(|&v| v > 0.5).collect()
}

fn perimeter_count(mask: &[bool], w: usize, h: usize) -> usize {
    let mut count = 0;
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            let exposed = (x == 0 || !mask[y * w + x - 1])
                || (x + 1 == w || !mask[y * w + x + 1])
                || (y == 0 || !mask[(y - 1) * w + x])
                || (y + 1 == h || !mask[(y + 1) * w + x]);
            if exposed {
                count += 1;
            }
        }
    }
    count
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// [mean area, area spread, mean perimeter, perimeter spread] over views.
pub fn features(sample: &ViewSet, w: usize, h: usize) -> [f64; FEATURE_DIM] {
    let mut areas = Vec::with_capacity(sample.views.len());
    let mut perims = Vec::with_capacity(sample.views.len());
    for view in &sample.views {
        let mask = foreground(view);
        areas.push(mask.iter().filter(|&&m| m).count() as f64);
        perims.push(perimeter_count(&mask, w, h) as f64);
    }
    let (am, asd) = mean_std(&areas);
    let (pm, psd) = mean_std(&perims);
    [am, asd, pm, psd]
}

#[derive(Debug, Clone)]
pub struct CentroidBaseline {
    pub centroids: Vec<[f64; FEATURE_DIM]>,
    feature_mean: [f64; FEATURE_DIM],
    feature_scale: [f64; FEATURE_DIM],
    img_w: usize,
    img_h: usize,
}

impl CentroidBaseline {
    /// Per-class feature centroids in a train-set standardized space.
    pub fn fit(train: &[ViewSet], classes: usize, w: usize, h: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(DataError::Config("baseline needs training samples".into()));
        }
        let feats: Vec<[f64; FEATURE_DIM]> =
            train.iter().map(|s| features(s, w, h)).collect();
        let mut feature_mean = [0.0; FEATURE_DIM];
        let mut feature_scale = [0.0; FEATURE_DIM];
        for d in 0..FEATURE_DIM {
            let col: Vec<f64> = feats.iter().map(|f| f[d]).collect();
            let (m, sd) = mean_std(&col);
            feature_mean[d] = m;
            feature_scale[d] = if sd > 1e-9 { sd } else { 1.0 };
        }
        let mut sums = vec![[0.0; FEATURE_DIM]; classes];
        let mut counts = vec![0usize; classes];
        for (sample, f) in train.iter().zip(&feats) {
            if sample.label >= classes {
                return Err(DataError::Config(format!(
                    "label {} out of range for {} classes",
                    sample.label, classes
                )));
            }
            for d in 0..FEATURE_DIM {
                sums[sample.label][d] += (f[d] - feature_mean[d]) / feature_scale[d];
            }
            counts[sample.label] += 1;
        }
        let mut centroids = Vec::with_capacity(classes);
        for (sum, count) in sums.iter().zip(&counts) {
            if *count == 0 {
                return Err(DataError::Config(
                    "every class needs at least one training sample".into(),
                ));
            }
            let mut c = [0.0; FEATURE_DIM];
            for d in 0..FEATURE_DIM {
                c[d] = sum[d] / *count as f64;
            }
            centroids.push(c);
        }
        Ok(CentroidBaseline {
            centroids,
            feature_mean,
            feature_scale,
            img_w: w,
            img_h: h,
        })
    }

    /// Nearest centroid by Euclidean distance; ties go to the lowest
    /// class index.
    pub fn predict(&self, sample: &ViewSet) -> usize {
        let f = features(sample, self.img_w, self.img_h);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (label, c) in self.centroids.iter().enumerate() {
            let mut d2 = 0.0;
            for d in 0..FEATURE_DIM {
                let z = (f[d] - self.feature_mean[d]) / self.feature_scale[d] - c[d];
                d2 += z * z;
            }
            if d2 < best_d {
                best_d = d2;
                best = label;
            }
        }
        best
    }

    pub fn accuracy(&self, data: &[ViewSet]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let correct = data
            .iter()
            .filter(|s| self.predict(s) == s.label)
            .count();
        correct as f64 / data.len() as f64
    }
}
