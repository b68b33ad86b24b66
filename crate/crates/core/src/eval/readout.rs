use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, Scalar};

const EPOCHS: usize = 50;
const BATCH: usize = 128;
const LR: f64 = 0.1;

fn standardize(x: &mut Array2<f64>, mean: &Array1<f64>, std: &Array1<f64>) {
    for mut row in x.rows_mut() {
        row -= mean;
        row /= std;
    }
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Test accuracy of a multinomial logistic regression trained by minibatch
/// gradient descent on standardized training representations.
pub fn linear_readout<S: Scalar>(
    train: ArrayView2<'_, S>,
    train_labels: &[usize],
    test: ArrayView2<'_, S>,
    test_labels: &[usize],
    n_classes: usize,
    seed: u64,
) -> Result<f64> {
    if train.nrows() != train_labels.len() || test.nrows() != test_labels.len() {
        return Err(Error::Shape("representations and labels differ in length".into()));
    }
    if train.ncols() != test.ncols() {
        return Err(Error::Shape("train and test representations differ in width".into()));
    }
    if let Some(&l) = train_labels.iter().chain(test_labels).find(|&&l| l >= n_classes) {
        return Err(Error::Data(format!("label {l} outside {n_classes} classes")));
    }
    let mut xtr = train.mapv(|v| v.as_f64());
    let mut xte = test.mapv(|v| v.as_f64());
    let mean = xtr.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(xtr.ncols()));
    let std = xtr.std_axis(Axis(0), 0.0);
    if std.iter().all(|&s| s < 1e-12) {
        eprintln!("warning: linear readout on constant representations");
    }
    let std = std.mapv(|s| if s < 1e-12 { 1.0 } else { s });
    standardize(&mut xtr, &mean, &std);
    standardize(&mut xte, &mean, &std);

    let d = xtr.ncols();
    let mut w = Array2::<f64>::zeros((d, n_classes));
    let mut b = Array1::<f64>::zeros(n_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..xtr.nrows()).collect();
    for _ in 0..EPOCHS {
        order.shuffle(&mut rng);
        for idx in order.chunks(BATCH) {
            let x = xtr.select(Axis(0), idx);
            let mut p = x.dot(&w) + &b;
            softmax_rows(&mut p);
            for (r, &i) in idx.iter().enumerate() {
                p[[r, train_labels[i]]] -= 1.0;
            }
            let scale = LR / idx.len() as f64;
            w.scaled_add(-scale, &x.t().dot(&p));
            b.scaled_add(-scale, &p.sum_axis(Axis(0)));
        }
    }
    let scores = xte.dot(&w) + &b;
    let correct = scores
        .rows()
        .into_iter()
        .zip(test_labels)
        .filter(|(row, &l)| {
            let best = (0..n_classes).fold(0, |a, k| if row[k] > row[a] { k } else { a });
            best == l
        })
        .count();
    Ok(correct as f64 / test_labels.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_toy_is_solved() {
        let x = ndarray::arr2(&[[-2.0, 0.1], [-1.5, -0.3], [1.7, 0.2], [2.2, -0.1]]);
        let y = [0, 0, 1, 1];
        assert_eq!(linear_readout(x.view(), &y, x.view(), &y, 2, 0).unwrap(), 1.0);
    }
}
