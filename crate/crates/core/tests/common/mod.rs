#![allow(dead_code)]

use halfstrip::classification::{classify, Verdict, DEFAULT_HORIZON};
use halfstrip::model::{build_retrial, uniformize, ThetaSpec};
use halfstrip::stationary::decay_rate_of_tail;
use halfstrip::{BlockTriple, Matrix, QbdModel, RowVector};
use rand::Rng;

pub fn scalar_model(p: f64, q: f64, r: f64) -> QbdModel {
    let s = |x: f64| Matrix::from_vec(1, 1, vec![x]).unwrap();
    QbdModel::homogeneous(s(1.0), BlockTriple::new(s(p), s(q), s(r)))
}

pub fn retrial(lambda: f64, mu: f64, c: usize, theta: &ThetaSpec) -> QbdModel {
    let g = build_retrial(lambda, mu, c, theta).unwrap();
    uniformize(&g, g.max_exit_rate()).unwrap()
}

/// Row `i` of each block gets its own mass; entries are random weights with
/// some zeros, but every block row keeps at least one positive entry.
fn random_blocks<R: Rng>(rng: &mut R, d: usize, masses: &[Vec<f64>]) -> Vec<Matrix> {
    let mut blocks = vec![vec![vec![0.0; d]; d]; masses[0].len()];
    for i in 0..d {
        for (b, block) in blocks.iter_mut().enumerate() {
            let mut w: Vec<f64> = (0..d)
                .map(|_| {
                    if rng.random::<f64>() < 0.3 {
                        0.0
                    } else {
                        rng.random_range(0.05..1.0)
                    }
                })
                .collect();
            if w.iter().all(|x| *x == 0.0) {
                w[rng.random_range(0..d)] = 1.0;
            }
            let total: f64 = w.iter().sum();
            block[i] = w.iter().map(|x| x / total * masses[i][b]).collect();
        }
    }
    blocks
        .into_iter()
        .map(|rows| Matrix::from_rows(&rows).unwrap())
        .collect()
}

fn random_triple<R: Rng>(rng: &mut R, d: usize) -> BlockTriple {
    let masses: Vec<Vec<f64>> = (0..d)
        .map(|_| {
            let q = rng.random_range(0.35..0.6);
            let p = rng.random_range(0.05..q - 0.15);
            vec![p, q, 1.0 - p - q]
        })
        .collect();
    let mut b = random_blocks(rng, d, &masses).into_iter();
    let (p, q, r) = (b.next().unwrap(), b.next().unwrap(), b.next().unwrap());
    BlockTriple::new(p, q, r)
}

/// A positive recurrent model with up to four phases, up to five
/// level-dependent levels and decay rate at most 0.7.
pub fn random_pr_model<R: Rng>(rng: &mut R) -> QbdModel {
    loop {
        let d = rng.random_range(1..=4);
        let masses: Vec<Vec<f64>> = (0..d)
            .map(|_| {
                let r0 = rng.random_range(0.0..0.5);
                vec![r0, 1.0 - r0]
            })
            .collect();
        let mut b = random_blocks(rng, d, &masses).into_iter();
        let (r0, p0) = (b.next().unwrap(), b.next().unwrap());
        let prefix = (0..rng.random_range(0..=5))
            .map(|_| random_triple(rng, d))
            .collect();
        let model = QbdModel::new(r0, p0, prefix, random_triple(rng, d));
        if !model.validate().is_valid() {
            continue;
        }
        let pr = classify(&model, &RowVector::uniform(d), DEFAULT_HORIZON)
            .map(|c| c.verdict == Verdict::PositiveRecurrent)
            .unwrap_or(false);
        if pr && decay_rate_of_tail(&model, 1e-12).is_ok_and(|l| l <= 0.7) {
            return model;
        }
    }
}
