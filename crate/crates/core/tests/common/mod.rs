#![allow(dead_code)]

use mmct_core::rng::SeededRng;

pub fn gaussian(dim: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..dim).map(|_| rng.normal()).collect()
}

pub fn unit(dim: usize, rng: &mut SeededRng) -> Vec<f64> {
    let v = gaussian(dim, rng);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Random orthogonal matrix (rows) by Gram–Schmidt on Gaussian rows.
pub fn orthogonal(dim: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v = gaussian(dim, rng);
        for r in &rows {
            let p: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            rows.push(v.iter().map(|x| x / n).collect());
        }
    }
    rows
}

pub fn apply(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}
