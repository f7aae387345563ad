use rand::Rng;

use crate::model::QbdModel;
use crate::numeric::Matrix;

/// One-step transition sampler: for each level class and phase, the
/// cumulative distribution over (down, stay, up) x phase.
pub(crate) struct Sampler {
    d: usize,
    /// Index 0 is layer 0, `1..=n_prefix` the prefix, `n_prefix + 1` the tail.
    tables: Vec<Vec<Vec<f64>>>,
    tail_index: usize,
}

impl Sampler {
    pub(crate) fn new(model: &QbdModel) -> Self {
        let d = model.d;
        let zero = Matrix::zeros(d, d);
        let mut tables = vec![table(&zero, &model.r0, &model.p0)];
        for b in model.prefix.iter().chain(std::iter::once(&model.tail)) {
            tables.push(table(&b.q, &b.r, &b.p));
        }
        Self {
            d,
            tail_index: tables.len() - 1,
            tables,
        }
    }

    /// Next `(level, phase)`.
    pub(crate) fn step<R: Rng>(&self, rng: &mut R, level: usize, phase: usize) -> (usize, usize) {
        let cum = &self.tables[level.min(self.tail_index)][phase];
        let u = rng.random::<f64>() * cum[cum.len() - 1];
        let k = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
        let (move_, next_phase) = (k / self.d, k % self.d);
        (level + move_ - 1, next_phase)
    }
}

fn table(down: &Matrix, stay: &Matrix, up: &Matrix) -> Vec<Vec<f64>> {
    (0..down.rows())
        .map(|i| {
            let mut acc = 0.0;
            down.row(i)
                .iter()
                .chain(stay.row(i))
                .chain(up.row(i))
                .map(|x| {
                    acc += x;
                    acc
                })
                .collect()
        })
        .collect()
}
