//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use impactsel::features::{FeatureId, FeatureMatrix};
use impactsel::mlp::{Params, TrainedModel};
use impactsel::rng::SeededRng;
use ndarray::Array2;

pub fn random_signal(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gaussian()).collect()
}

pub fn random_matrix(rng: &mut SeededRng, k: usize, ids: &[FeatureId]) -> FeatureMatrix {
    let values = Array2::from_shape_fn((k, ids.len()), |_| rng.uniform());
    let rows = (0..k).map(|i| format!("r{i}")).collect();
    FeatureMatrix::new(ids.to_vec(), rows, values).unwrap()
}

/// Sums of squares of a balanced 2×2 design by visiting every
/// observation: (SS_A, SS_B, SS_AB, SS_E, SS_T).
pub fn brute_ss(cells: &[[Vec<f64>; 2]; 2]) -> (f64, f64, f64, f64, f64) {
    let all: Vec<(usize, usize, f64)> = (0..2)
        .flat_map(|i| (0..2).flat_map(move |j| cells[i][j].iter().map(move |&v| (i, j, v))))
        .collect();
    let mean_of = |pred: &dyn Fn(usize, usize) -> bool| {
        let sel: Vec<f64> = all.iter().filter(|(i, j, _)| pred(*i, *j)).map(|t| t.2).collect();
        sel.iter().sum::<f64>() / sel.len() as f64
    };
    let grand = mean_of(&|_, _| true);
    let (mut a, mut b, mut ab, mut e, mut t) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(i, j, v) in &all {
        let ma = mean_of(&|x, _| x == i);
        let mb = mean_of(&|_, y| y == j);
        let mc = mean_of(&|x, y| x == i && y == j);
        a += (ma - grand).powi(2);
        b += (mb - grand).powi(2);
        ab += (mc - ma - mb + grand).powi(2);
        e += (v - mc).powi(2);
        t += (v - grand).powi(2);
    }
    (a, b, ab, e, t)
}

/// Eval-mode forward pass written with explicit loops.
pub fn forward_oracle(m: &TrainedModel, x: &Array2<f64>) -> Vec<f64> {
    let p: &Params = &m.params;
    (0..x.nrows())
        .map(|r| {
            let mut h: Vec<f64> = x.row(r).to_vec();
            for layer in &p.hidden {
                let w = &layer.dense.w;
                let mut next = vec![0.0; w.nrows()];
                for o in 0..w.nrows() {
                    let mut z = layer.dense.b[o];
                    for i in 0..w.ncols() {
                        z += w[[o, i]] * h[i];
                    }
                    if let Some(bn) = &layer.bn {
                        z = bn.gamma[o] * (z - bn.running_mean[o]) / (bn.running_var[o] + 1e-5).sqrt() + bn.beta[o];
                    }
                    next[o] = z.tanh();
                }
                h = next;
            }
            let mut y = p.output.b[0];
            for i in 0..h.len() {
                y += p.output.w[[0, i]] * h[i];
            }
            y * m.target_std + m.target_mean
        })
        .collect()
}

/// Spearman rank correlation for series without ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}
