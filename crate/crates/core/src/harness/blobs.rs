//! Gaussian class clusters, the small default dataset.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fedsim::Dataset;
use crate::nn::Matrix;

/// Class means on a regular polygon of unit circumradius in the first two
/// coordinates, rotated by a random phase (on a line when `dim = 1`).
/// Returns the means and the smallest distance between two of them.
fn layout<R: Rng + ?Sized>(num_classes: usize, dim: usize, rng: &mut R) -> (Vec<Vec<f64>>, f64) {
    let phase = rng.gen::<f64>() * 2.0 * PI;
    if dim == 1 {
        let means = (0..num_classes).map(|c| vec![c as f64]).collect();
        return (means, 1.0);
    }
    let means = (0..num_classes)
        .map(|c| {
            let a = phase + 2.0 * PI * c as f64 / num_classes as f64;
            let mut m = vec![0.0; dim];
            m[0] = a.cos();
            m[1] = a.sin();
            m
        })
        .collect();
    let d_min = if num_classes < 2 { 1.0 } else if num_classes == 2 { 2.0 } else { 2.0 * (PI / num_classes as f64).sin() };
    (means, d_min)
}

/// `num_classes × points_per_class` points with isotropic noise of standard
/// deviation `spread · d_min / 4`, where `d_min` is the closest pair of class
/// means. Rows cycle through the classes, so every prefix whose length is a
/// multiple of `num_classes` is balanced.
pub fn make_blobs<R: Rng + ?Sized>(
    num_classes: usize,
    points_per_class: usize,
    dim: usize,
    spread: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if num_classes == 0 || points_per_class == 0 || dim == 0 {
        return Err(Error::Config("blobs need positive classes, points and dimension".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Config("blob spread must be finite and non-negative".into()));
    }
    let (means, d_min) = layout(num_classes, dim, rng);
    let sigma = spread * d_min / 4.0;
    let n = num_classes * points_per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..points_per_class {
        for (c, mean) in means.iter().enumerate() {
            for m in mean {
                let z: f64 = rng.sample(StandardNormal);
                data.push(m + sigma * z);
            }
            labels.push(c);
        }
    }
    Dataset::new(Matrix::from_vec(n, dim, data)?, labels, num_classes)
}

/// Splits the first `train_per_class · C` rows off as training data.
pub fn split_blobs(all: &Dataset, train_per_class: usize) -> (Dataset, Dataset) {
    let cut = (train_per_class * all.num_classes).min(all.len());
    let train: Vec<usize> = (0..cut).collect();
    let test: Vec<usize> = (cut..all.len()).collect();
    (all.select(&train), all.select(&test))
}
