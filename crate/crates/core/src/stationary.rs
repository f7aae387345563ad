//! The explicit stationary distribution and its geometric decay.
//!
//! Starting from the censored chain on layer 0, every later level is
//! reached by pushing the layer-0 measure through the downward branching
//! matrices: `nu_n = nu_0 P_0 A_1^- ... A_{n-1}^- u~_n^-`.

use std::io::Write;

use serde::Serialize;

use crate::branching::{zeta_minus_tail, BranchingData, TailQuantities};
use crate::classification::{
    rho_plus_1, upper_series, SeriesValue, DEFAULT_HORIZON, RADIUS_MARGIN,
};
use crate::error::{Error, Result};
use crate::model::QbdModel;
use crate::numeric::{spectral_radius, stationary_left_vector, Matrix, RowVector};

/// Largest row-sum defect accepted for the censored layer-0 matrix.
pub const CENSORED_TOL: f64 = 1e-8;

/// Automatic truncation stops once a level carries less mass than this.
pub const LEVEL_MASS_FLOOR: f64 = 1e-12;

/// Upper bound on automatically chosen truncation levels.
pub const MAX_AUTO_LEVELS: usize = 100_000;

/// Entries below this are flushed to zero and flagged.
pub const UNDERFLOW: f64 = 1e-300;

/// `R_0 + P_0 zeta_1^-`: the walk watched only while it sits on layer 0.
pub fn censored_matrix(model: &QbdModel, data: &BranchingData) -> Matrix {
    &model.r0 + &(&model.p0 * data.zeta_minus(1))
}

/// Stationary vector of the censored layer-0 chain, normalized to sum one.
pub fn censored_measure(model: &QbdModel, data: &BranchingData) -> Result<RowVector> {
    let c = censored_matrix(model, data);
    let sums = c.row_sums();
    for (row, sum) in sums.iter().enumerate() {
        if (sum - 1.0).abs() > CENSORED_TOL {
            return Err(Error::NotStochastic { row, sum: *sum });
        }
    }
    let d = model.d;
    let mut data_rows = Vec::with_capacity(d);
    for (i, sum) in sums.iter().enumerate() {
        data_rows.push(c.row(i).iter().map(|x| x / sum).collect::<Vec<_>>());
    }
    stationary_left_vector(&Matrix::from_rows(&data_rows)?)
}

/// `R_n^+ = P_{n-1} u~_n^-`, so that `nu_n = nu_{n-1} R_n^+`.
pub fn r_plus(model: &QbdModel, data: &BranchingData, n: usize) -> Matrix {
    assert!(n >= 1);
    let p = if n == 1 {
        &model.p0
    } else {
        &model.block_at(n - 1).p
    };
    p * data.u_tilde_minus(n)
}

#[derive(Debug, Clone, Serialize)]
pub struct StationaryResult {
    pub censored: Matrix,
    /// Censored layer-0 measure, summing to one.
    pub mu0: RowVector,
    /// `nu[n]` is the stationary mass on level `n`.
    pub nu: Vec<RowVector>,
    /// Expected return time to layer 0 under the censored measure.
    pub normalizer: f64,
    pub decay_rate: f64,
    /// `log nu_n(j) / n` at the deepest level where phase `j` is still
    /// representable.
    pub empirical_rates: Vec<Option<f64>>,
    /// Total mass over the computed levels.
    pub mass: f64,
    pub underflow: bool,
    pub levels: usize,
}

impl StationaryResult {
    /// Mass on levels above the last computed one.
    pub fn truncated_mass(&self) -> f64 {
        (1.0 - self.mass).max(0.0)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "level,phase,nu,log_nu_over_n")?;
        for (n, row) in self.nu.iter().enumerate() {
            for (j, x) in row.0.iter().enumerate() {
                let rate = if n >= 1 && *x > 0.0 {
                    format!("{:e}", x.ln() / n as f64)
                } else {
                    String::new()
                };
                writeln!(out, "{n},{j},{x:e},{rate}")?;
            }
        }
        Ok(())
    }
}

/// Builds `nu_0, ..., nu_M`. With `max_level = None` the scan stops once a
/// level's mass drops below [`LEVEL_MASS_FLOOR`].
pub fn stationary_dist(
    model: &QbdModel,
    data: &BranchingData,
    max_level: Option<usize>,
) -> Result<StationaryResult> {
    let rho1 = rho_plus_1(model, data, DEFAULT_HORIZON)?;
    match rho1.value {
        SeriesValue::Finite(_) => {}
        SeriesValue::Infinite => {
            return Err(Error::NotPositiveRecurrent(
                "expected return time to layer 0 is infinite".into(),
            ))
        }
        SeriesValue::Inconclusive => {
            return Err(Error::NotPositiveRecurrent(
                "expected return time to layer 0 could not be certified finite".into(),
            ))
        }
    }
    let decay_rate = rho1.tail_radius;

    let censored = censored_matrix(model, data);
    let mu0 = censored_measure(model, data)?;
    let start = mu0.mul_mat(&model.p0);
    let normalizer = match upper_series(data, &start, 1, DEFAULT_HORIZON)?.value {
        SeriesValue::Finite(v) => v + mu0.sum(),
        _ => {
            return Err(Error::NotPositiveRecurrent(
                "return time from the censored measure is not finite".into(),
            ))
        }
    };

    let d = model.d;
    let mut underflow = false;
    let mut flush = |v: RowVector| -> RowVector {
        RowVector(
            v.0.into_iter()
                .map(|x| {
                    if x != 0.0 && x.abs() < UNDERFLOW {
                        underflow = true;
                        0.0
                    } else {
                        x
                    }
                })
                .collect(),
        )
    };

    let mut nu = vec![mu0.scale(1.0 / normalizer)];
    let mut mass = nu[0].sum();
    let mut w = start.scale(1.0 / normalizer);
    let limit = max_level.unwrap_or(MAX_AUTO_LEVELS);
    for n in 1..=limit {
        let level = flush(w.mul_mat(data.u_tilde_minus(n)));
        let level_mass = level.sum();
        mass += level_mass;
        nu.push(level);
        if max_level.is_none() && level_mass < LEVEL_MASS_FLOOR {
            break;
        }
        w = w.mul_mat(data.a_minus(n));
    }

    let levels = nu.len() - 1;
    let empirical_rates = (0..d)
        .map(|j| {
            (1..=levels)
                .rev()
                .find(|&n| nu[n].0[j] > 0.0)
                .map(|n| nu[n].0[j].ln() / n as f64)
        })
        .collect();

    Ok(StationaryResult {
        censored,
        mu0,
        nu,
        normalizer,
        decay_rate,
        empirical_rates,
        mass,
        underflow,
        levels,
    })
}

/// Largest entrywise gap between `nu_n` and `nu_{n-1} R_n^+`.
pub fn matrix_product_check(
    model: &QbdModel,
    data: &BranchingData,
    result: &StationaryResult,
) -> f64 {
    (1..=result.levels)
        .map(|n| {
            let pushed = result.nu[n - 1].mul_mat(&r_plus(model, data, n));
            pushed.max_abs_diff(&result.nu[n])
        })
        .fold(0.0, f64::max)
}

/// Largest entrywise violation of the global balance equations on levels
/// `0..levels - 1`.
pub fn balance_residual(model: &QbdModel, result: &StationaryResult) -> f64 {
    let nu = &result.nu;
    let mut worst: f64 = 0.0;
    if nu.len() < 2 {
        return worst;
    }
    let inflow0 = add(
        &nu[0].mul_mat(&model.r0),
        &nu[1].mul_mat(&model.block_at(1).q),
    );
    worst = worst.max(inflow0.max_abs_diff(&nu[0]));
    for n in 1..nu.len() - 1 {
        let b = model.block_at(n);
        let from_below = if n == 1 {
            nu[0].mul_mat(&model.p0)
        } else {
            nu[n - 1].mul_mat(&model.block_at(n - 1).p)
        };
        let inflow = add(
            &add(&from_below, &nu[n].mul_mat(&b.r)),
            &nu[n + 1].mul_mat(&model.block_at(n + 1).q),
        );
        worst = worst.max(inflow.max_abs_diff(&nu[n]));
    }
    worst
}

fn add(a: &RowVector, b: &RowVector) -> RowVector {
    RowVector(a.0.iter().zip(&b.0).map(|(x, y)| x + y).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayRate {
    pub lambda: f64,
    pub empirical: Vec<Option<f64>>,
}

/// Decay rate from the branching data together with the empirical
/// per-phase rates of a computed distribution.
pub fn decay_rate(data: &BranchingData, result: &StationaryResult) -> Result<DecayRate> {
    let lambda = spectral_radius(&data.tail.a_minus)?;
    if lambda >= 1.0 - RADIUS_MARGIN {
        return Err(Error::NotInD { radius: lambda });
    }
    Ok(DecayRate {
        lambda,
        empirical: result.empirical_rates.clone(),
    })
}

/// Perron root of the limiting `A^-`, from the tail blocks alone.
pub fn decay_rate_of_tail(model: &QbdModel, tol: f64) -> Result<f64> {
    let zeta = zeta_minus_tail(&model.tail, tol)?;
    let tail = TailQuantities::new(&model.tail, zeta)?;
    let lambda = spectral_radius(&tail.a_minus)?;
    if lambda >= 1.0 - RADIUS_MARGIN {
        return Err(Error::NotInD { radius: lambda });
    }
    Ok(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_retrial, uniformize, BlockTriple, ThetaSpec};

    fn scalar_model(p: f64, q: f64, r: f64) -> QbdModel {
        let s = |x: f64| Matrix::from_vec(1, 1, vec![x]).unwrap();
        QbdModel::homogeneous(s(1.0), BlockTriple::new(s(p), s(q), s(r)))
    }

    fn retrial() -> QbdModel {
        let g = build_retrial(0.2, 0.5, 1, &ThetaSpec::Constant(0.3)).unwrap();
        uniformize(&g, 1.0).unwrap()
    }

    #[test]
    fn birth_death_closed_form() {
        let model = scalar_model(0.3, 0.7, 0.0);
        let data = BranchingData::compute(&model, 1, 1e-12).unwrap();
        let res = stationary_dist(&model, &data, Some(40)).unwrap();
        assert!((res.nu[0].0[0] - 2.0 / 7.0).abs() < 1e-12);
        for n in 1..=40 {
            let exact = 20.0 / 49.0 * (3.0f64 / 7.0).powi(n as i32 - 1);
            assert!((res.nu[n].0[0] - exact).abs() < 1e-12 * exact.max(1e-3));
        }
        assert!((res.normalizer - 3.5).abs() < 1e-12);
        assert!((res.decay_rate - 3.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn automatic_truncation_reaches_mass_floor() {
        let model = retrial();
        let data = BranchingData::compute(&model, 1, 1e-12).unwrap();
        let res = stationary_dist(&model, &data, None).unwrap();
        assert!(res.nu.last().unwrap().sum() < LEVEL_MASS_FLOOR);
        assert!((res.mass - 1.0).abs() < 1e-10);
        assert!(!res.underflow);
    }

    #[test]
    fn product_form_and_balance() {
        let model = retrial();
        let data = BranchingData::compute(&model, 1, 1e-12).unwrap();
        let res = stationary_dist(&model, &data, Some(60)).unwrap();
        assert!(matrix_product_check(&model, &data, &res) < 1e-12);
        assert!(balance_residual(&model, &res) < 1e-10);
    }

    #[test]
    fn censored_measure_is_probability() {
        let model = retrial();
        let data = BranchingData::compute(&model, 1, 1e-12).unwrap();
        let c = censored_matrix(&model, &data);
        assert!(c.stochastic_defect() < 1e-9);
        let mu = censored_measure(&model, &data).unwrap();
        assert!(mu.is_probability(1e-12));
    }

    #[test]
    fn empirical_rate_approaches_lambda() {
        let model = retrial();
        let data = BranchingData::compute(&model, 1, 1e-12).unwrap();
        let res = stationary_dist(&model, &data, Some(2000)).unwrap();
        let dr = decay_rate(&data, &res).unwrap();
        assert!((dr.lambda - 2.0 / 3.0).abs() < 1e-10);
        for rate in dr.empirical.iter().flatten() {
            assert!((rate - dr.lambda.ln()).abs() < 1e-2, "{rate}");
        }
        assert!(res.underflow);
    }

    #[test]
    fn null_recurrent_is_rejected() {
        let model = scalar_model(0.5, 0.5, 0.0);
        let data = BranchingData::compute(&model, 1, 1e-12).unwrap();
        assert!(matches!(
            stationary_dist(&model, &data, Some(10)),
            Err(Error::NotPositiveRecurrent(_))
        ));
        assert!(matches!(
            decay_rate_of_tail(&model, 1e-12),
            Err(Error::NotInD { .. })
        ));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let model = scalar_model(0.3, 0.7, 0.0);
        let data = BranchingData::compute(&model, 1, 1e-12).unwrap();
        let res = stationary_dist(&model, &data, Some(3)).unwrap();
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("level,phase,nu,log_nu_over_n\n0,0,"));
    }
}
