use crate::error::{Error, Result};
use crate::model::QbdModel;
use crate::numeric::{stationary_left_vector, Matrix, RowVector};

/// Largest state count handed to the dense solver.
pub const DENSE_LIMIT: usize = 4096;

const DEFAULT_LEVELS: usize = 400;

/// Truncation level used when none is given: 400 levels, or fewer if the
/// dense limit would be exceeded.
pub fn default_truncation(model: &QbdModel) -> usize {
    (DENSE_LIMIT / model.d - 1).min(DEFAULT_LEVELS)
}

/// Stationary distribution of the chain cut at level `m`, with the upward
/// block of level `m` folded into its local block.
pub fn truncated_solve(model: &QbdModel, m: usize) -> Result<Vec<RowVector>> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "truncation level must be at least 1".into(),
        ));
    }
    let d = model.d;
    let states = (m + 1) * d;
    if states > DENSE_LIMIT {
        return Err(Error::TooLarge {
            states,
            limit: DENSE_LIMIT,
        });
    }

    let mut s = vec![0.0; states * states];
    let mut put = |from: usize, to: usize, block: &Matrix| {
        for i in 0..d {
            for j in 0..d {
                s[(from * d + i) * states + to * d + j] += block[(i, j)];
            }
        }
    };
    put(0, 0, &model.r0);
    put(0, 1, &model.p0);
    for n in 1..=m {
        let b = model.block_at(n);
        put(n, n - 1, &b.q);
        put(n, n, &b.r);
        put(n, (n + 1).min(m), &b.p);
    }

    let pi = stationary_left_vector(&Matrix::from_vec(states, states, s)?)?;
    Ok(pi.0.chunks(d).map(|c| RowVector(c.to_vec())).collect())
}
