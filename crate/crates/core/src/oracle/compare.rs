use serde::Serialize;

use super::simulate::{Per, SimStats};
use crate::numeric::RowVector;

/// Cells expected to collect fewer visits than this are pooled rather than
/// tested one by one: high levels are reached in rare bursts, and a handful
/// of bursts gives no usable standard error.
pub const MIN_EXPECTED_VISITS: f64 = 1000.0;

/// Simulated cells against exact values, in standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct CellComparison {
    pub tested: usize,
    pub worst_z: f64,
    /// `(level, phase)` of the worst tested cell.
    pub worst_cell: Option<(usize, usize)>,
    pub pooled_cells: usize,
    pub pooled_z: f64,
}

impl CellComparison {
    pub fn max_z(&self) -> f64 {
        self.worst_z.max(self.pooled_z)
    }
}

fn z(mean: f64, se: f64, exact: f64) -> f64 {
    let gap = (mean - exact).abs();
    if gap == 0.0 {
        0.0
    } else {
        gap / se
    }
}

/// Compares levels `0..exact.len()` of the simulated visits (per cycle or
/// per step) with `exact`.
pub fn compare_cells(stats: &SimStats, exact: &[RowVector], per: Per) -> CellComparison {
    let table = match per {
        Per::Cycle => &stats.visits_per_cycle,
        Per::Step => &stats.empirical_distribution,
    };
    let scale = match per {
        Per::Cycle => stats.cycles as f64,
        Per::Step => stats.mean_return_time.mean * stats.cycles as f64,
    };
    let mut out = CellComparison {
        tested: 0,
        worst_z: 0.0,
        worst_cell: None,
        pooled_cells: 0,
        pooled_z: 0.0,
    };
    let mut pooled = Vec::new();
    let mut pooled_exact = 0.0;
    for (n, row) in exact.iter().enumerate().take(table.len()) {
        for (j, &x) in row.0.iter().enumerate() {
            if x * scale >= MIN_EXPECTED_VISITS {
                let e = table[n][j];
                let zz = z(e.mean, e.se, x);
                out.tested += 1;
                if out.worst_cell.is_none() || zz > out.worst_z {
                    out.worst_z = zz;
                    out.worst_cell = Some((n, j));
                }
            } else {
                pooled.push((n, j));
                pooled_exact += x;
            }
        }
    }
    out.pooled_cells = pooled.len();
    if !pooled.is_empty() {
        let e = stats.pooled(&pooled, per);
        out.pooled_z = z(e.mean, e.se, pooled_exact);
    }
    out
}
