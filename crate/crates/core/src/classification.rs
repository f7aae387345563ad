//! Recurrence and positive-recurrence criteria.
//!
//! Both criteria are infinite series. A verdict is only issued with a
//! certificate: the tail of each series is governed by the Perron root of a
//! limiting branching matrix, so once the explicit levels are exhausted the
//! remainder is either summed in closed form (radius below one) or shown not
//! to vanish (radius at one). Anything else is reported as inconclusive.

use serde::Serialize;

use crate::branching::{BranchingData, PlusRecursion, ZETA_TOL};
use crate::error::{Error, Result};
use crate::model::QbdModel;
use crate::numeric::{invert, spectral_radius, Matrix, RowVector};

pub const DEFAULT_HORIZON: usize = 10_000;

/// A limiting radius within this margin of one counts as one.
pub const RADIUS_MARGIN: f64 = 1e-10;

/// Terms below this, with a contracting tail, end the recurrence series.
pub const CONVERGENCE_FLOOR: f64 = 1e-14;

/// Terms must stay above this for [`DIVERGENCE_RUN`] consecutive levels to
/// certify divergence.
pub const DIVERGENCE_FLOOR: f64 = 1e-12;
pub const DIVERGENCE_RUN: usize = 100;

/// Partial sums beyond this are treated as divergent once the tail radius
/// reaches one.
pub const PARTIAL_SUM_CAP: f64 = 1e15;

/// Explicit return-time terms kept past the start of the tail, for
/// diagnostics.
const TAIL_DIAGNOSTIC_TERMS: usize = 256;

/// Exit matrices closer than this on consecutive levels are taken as settled.
const SETTLED: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum SeriesValue {
    Finite(f64),
    Infinite,
    Inconclusive,
}

impl SeriesValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            SeriesValue::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, SeriesValue::Finite(_))
    }

    fn map(self, f: impl FnOnce(f64) -> f64) -> Self {
        match self {
            SeriesValue::Finite(v) => SeriesValue::Finite(f(v)),
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Transient,
    NullRecurrent,
    PositiveRecurrent,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::Transient => "Transient",
            Verdict::NullRecurrent => "NullRecurrent",
            Verdict::PositiveRecurrent => "PositiveRecurrent",
            Verdict::Inconclusive => "Inconclusive",
        };
        f.write_str(s)
    }
}

/// Expected number of layer-0 visits, term by term.
#[derive(Debug, Clone, Serialize)]
pub struct BetaSeries {
    pub terms: Vec<f64>,
    pub partial_sums: Vec<f64>,
    pub value: SeriesValue,
    /// Perron root of the settled `A^+`, once the exit matrices settle.
    pub tail_radius: Option<f64>,
}

/// `beta^+ = sum_k mu_k A_k^+ ... A_1^+ u_0^+` with
/// `mu_k = mu zeta_0^+ ... zeta_{k-1}^+`, for up to `horizon` terms after the
/// zeroth.
pub fn beta_plus(model: &QbdModel, mu: &RowVector, horizon: usize) -> Result<BetaSeries> {
    if mu.len() != model.d {
        return Err(Error::Dimension(format!(
            "initial law has {} phases, model has {}",
            mu.len(),
            model.d
        )));
    }
    let mut levels = PlusRecursion::new(model);
    let level0 = levels.next().expect("recursion yields layer 0")?;

    let mut mu_k = mu.clone();
    let mut col = level0.u_plus.clone();
    let mut prev_zeta = level0.zeta;
    let first = mu_k.dot(&col);
    let mut terms = vec![first];
    let mut partial_sums = vec![first];
    let mut sum = first;

    let mut tail_radius: Option<f64> = None;
    let mut radius_level = 0;
    let mut run = 0;
    let n_prefix = model.prefix_len();

    for k in 1..=horizon {
        let level = levels.next().expect("recursion is unbounded")?;
        let a = level.a_plus.as_ref().expect("level >= 1");
        mu_k = mu_k.mul_mat(&prev_zeta);
        col = a.mul_vec(&col);
        let term = mu_k.dot(&col);
        sum += term;
        terms.push(term);
        partial_sums.push(sum);

        let settled = k > n_prefix && level.zeta.max_abs_diff(&prev_zeta) <= SETTLED;
        prev_zeta = level.zeta;
        if settled && (tail_radius.is_none() || k >= radius_level + 1000) {
            tail_radius = Some(spectral_radius(a)?);
            radius_level = k;
        }

        match tail_radius {
            Some(rho) if rho < 1.0 - RADIUS_MARGIN => {
                if term < CONVERGENCE_FLOOR {
                    return Ok(BetaSeries {
                        terms,
                        partial_sums,
                        value: SeriesValue::Finite(sum),
                        tail_radius,
                    });
                }
            }
            Some(_) => {
                run = if term >= DIVERGENCE_FLOOR { run + 1 } else { 0 };
                if run >= DIVERGENCE_RUN || sum >= PARTIAL_SUM_CAP {
                    return Ok(BetaSeries {
                        terms,
                        partial_sums,
                        value: SeriesValue::Infinite,
                        tail_radius,
                    });
                }
            }
            None => {}
        }
    }
    Ok(BetaSeries {
        terms,
        partial_sums,
        value: SeriesValue::Inconclusive,
        tail_radius,
    })
}

/// A downward branching series `sum_{k >= from} start A_from^- ... A_{k-1}^- u_k^-`.
#[derive(Debug, Clone, Serialize)]
pub struct UpperSeries {
    pub value: SeriesValue,
    /// Explicitly evaluated terms, starting with `k = from`.
    pub terms: Vec<f64>,
    pub tail_radius: f64,
}

/// Sums an upward-excursion series: explicit terms through the
/// level-dependent prefix, then the tail in closed form as
/// `w (I - A^-)^{-1} u^-` when the limiting radius is below one.
pub fn upper_series(
    data: &BranchingData,
    start: &RowVector,
    from: usize,
    horizon: usize,
) -> Result<UpperSeries> {
    assert!(from >= 1);
    let tail_radius = spectral_radius(&data.tail.a_minus)?;
    let tail_start = data.tail_start();
    let explicit_end = from.max(tail_start) + TAIL_DIAGNOSTIC_TERMS;

    let mut w = start.clone();
    let mut sum = 0.0;
    let mut terms = Vec::new();
    let mut k = from;
    loop {
        if k >= tail_start && (k >= explicit_end || k - from >= horizon) {
            break;
        }
        if k - from >= horizon {
            return Ok(UpperSeries {
                value: SeriesValue::Inconclusive,
                terms,
                tail_radius,
            });
        }
        let t = w.dot(&data.u_minus(k).0);
        terms.push(t);
        sum += t;
        w = w.mul_mat(data.a_minus(k));
        k += 1;
    }

    let value = if tail_radius < 1.0 - RADIUS_MARGIN {
        let d = data.d;
        let neumann = invert(&(&Matrix::identity(d) - &data.tail.a_minus))?;
        let remainder = w.mul_mat(&neumann).dot(&data.tail.u_minus.0);
        SeriesValue::Finite(sum + remainder)
    } else {
        let recent = &terms[terms.len().saturating_sub(DIVERGENCE_RUN)..];
        if recent.len() == DIVERGENCE_RUN && recent.iter().all(|t| *t >= DIVERGENCE_FLOOR) {
            SeriesValue::Infinite
        } else {
            SeriesValue::Inconclusive
        }
    };
    Ok(UpperSeries {
        value,
        terms,
        tail_radius,
    })
}

/// `varrho^+(mu) = mu P_0 (sum_k A_1^- ... A_{k-1}^- u_k^-) + mu 1`, the expected
/// first return time to layer 0 from initial law `mu`.
pub fn rho_plus(
    model: &QbdModel,
    data: &BranchingData,
    mu: &RowVector,
    horizon: usize,
) -> Result<UpperSeries> {
    let start = mu.mul_mat(&model.p0);
    let mut series = upper_series(data, &start, 1, horizon)?;
    series.value = series.value.map(|v| v + mu.sum());
    Ok(series)
}

/// `varrho_1^+`: the return-time series with every phase weighted by one.
pub fn rho_plus_1(model: &QbdModel, data: &BranchingData, horizon: usize) -> Result<UpperSeries> {
    rho_plus(model, data, &RowVector::ones(model.d), horizon)
}

/// Expected first return time to layer `n` from phase law `mu_n` on it.
///
/// Needs upward quantities through level `n - 1` in `data`.
pub fn expected_return_time(
    model: &QbdModel,
    data: &BranchingData,
    mu_n: &RowVector,
    n: usize,
    horizon: usize,
) -> Result<SeriesValue> {
    if n == 0 {
        return Ok(rho_plus(model, data, mu_n, horizon)?.value);
    }
    if n > data.levels + 1 {
        return Err(Error::InvalidArgument(format!(
            "return time to level {n} needs branching data through level {}",
            n - 1
        )));
    }
    let block = model.block_at(n);

    // Excursion below: enter n - 1, wander down to 0 and back up to n.
    let mut row = mu_n.mul_mat(&block.q);
    let mut below = 0.0;
    for j in (0..n).rev() {
        below += row.dot(&data.u_plus(j).0);
        if j >= 1 {
            row = row.mul_mat(data.a_plus(j));
        }
    }

    let above = upper_series(data, &mu_n.mul_mat(&block.p), n + 1, horizon)?;
    Ok(above.value.map(|v| v + below + mu_n.sum()))
}

#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub verdict: Verdict,
    pub beta: SeriesValue,
    pub beta_terms: Vec<f64>,
    pub beta_partial: Vec<f64>,
    pub rho1: SeriesValue,
    /// Return-time series for the supplied initial law.
    pub rho: SeriesValue,
    pub tail_radius_plus: Option<f64>,
    pub tail_radius_minus: f64,
    pub horizon: usize,
}

pub fn classify(model: &QbdModel, mu: &RowVector, horizon: usize) -> Result<Classification> {
    classify_with_tol(model, mu, horizon, ZETA_TOL)
}

pub fn classify_with_tol(
    model: &QbdModel,
    mu: &RowVector,
    horizon: usize,
    tol: f64,
) -> Result<Classification> {
    let data = BranchingData::compute(model, 1, tol)?;
    let rho1 = rho_plus_1(model, &data, horizon)?;
    let rho = rho_plus(model, &data, mu, horizon)?;
    let beta = beta_plus(model, mu, horizon)?;

    let verdict = match (rho1.value, beta.value) {
        (SeriesValue::Finite(_), _) => Verdict::PositiveRecurrent,
        (_, SeriesValue::Finite(_)) => Verdict::Transient,
        (SeriesValue::Infinite, SeriesValue::Infinite) => Verdict::NullRecurrent,
        _ => Verdict::Inconclusive,
    };
    Ok(Classification {
        verdict,
        beta: beta.value,
        beta_terms: beta.terms,
        beta_partial: beta.partial_sums,
        rho1: rho1.value,
        rho: rho.value,
        tail_radius_plus: beta.tail_radius,
        tail_radius_minus: rho1.tail_radius,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_retrial, uniformize, BlockTriple, ThetaSpec};

    fn scalar_model(p: f64, q: f64, r: f64) -> QbdModel {
        let s = |x: f64| Matrix::from_vec(1, 1, vec![x]).unwrap();
        QbdModel::homogeneous(s(1.0), BlockTriple::new(s(p), s(q), s(r)))
    }

    fn one() -> RowVector {
        RowVector(vec![1.0])
    }

    #[test]
    fn beta_symmetric_terms_are_one() {
        let beta = beta_plus(&scalar_model(0.5, 0.5, 0.0), &one(), 50).unwrap();
        assert!(beta.terms.iter().all(|t| (t - 1.0).abs() < 1e-12));
        assert!((beta.partial_sums[50] - 51.0).abs() < 1e-9);
    }

    #[test]
    fn beta_transient_geometric() {
        let beta = beta_plus(&scalar_model(0.7, 0.3, 0.0), &one(), 10_000).unwrap();
        for (k, t) in beta.terms.iter().enumerate().take(20) {
            assert!((t - (3.0f64 / 7.0).powi(k as i32)).abs() < 1e-13);
        }
        assert!((beta.value.finite().unwrap() - 1.75).abs() < 1e-10);
    }

    #[test]
    fn beta_first_term_is_one() {
        let g = build_retrial(0.2, 0.5, 1, &ThetaSpec::Constant(0.3)).unwrap();
        let mut model = uniformize(&g, 1.0).unwrap();
        model.r0 = Matrix::zeros(2, 2);
        model.p0 = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap();
        let beta = beta_plus(&model, &RowVector(vec![0.3, 0.7]), 5).unwrap();
        assert!((beta.terms[0] - 1.0).abs() < 1e-15);
        assert!(beta.partial_sums.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn rho1_scalar_cases() {
        let model = scalar_model(0.5, 0.5, 0.0);
        let data = BranchingData::compute(&model, 1, 1e-12).unwrap();
        assert_eq!(
            rho_plus_1(&model, &data, 10_000).unwrap().value,
            SeriesValue::Infinite
        );

        let model = scalar_model(0.3, 0.7, 0.0);
        let data = BranchingData::compute(&model, 1, 1e-12).unwrap();
        let v = rho_plus_1(&model, &data, 10_000)
            .unwrap()
            .value
            .finite()
            .unwrap();
        assert!((v - 3.5).abs() < 1e-12);
    }

    #[test]
    fn return_time_scalar_and_bound() {
        let model = scalar_model(0.3, 0.7, 0.0);
        let data = BranchingData::compute(&model, 5, 1e-12).unwrap();
        let t0 = expected_return_time(&model, &data, &one(), 0, 10_000).unwrap();
        assert!((t0.finite().unwrap() - 3.5).abs() < 1e-12);
        // Birth-death chain: stationary mass at level n is (20/49)(3/7)^{n-1},
        // so the return time to level n is its reciprocal.
        for n in 1..=4 {
            let t = expected_return_time(&model, &data, &one(), n, 10_000)
                .unwrap()
                .finite()
                .unwrap();
            let mass = 20.0 / 49.0 * (3.0f64 / 7.0).powi(n as i32 - 1);
            assert!((t - 1.0 / mass).abs() < 1e-9 * t, "level {n}: {t}");
        }
    }

    #[test]
    fn retrial_is_positive_recurrent() {
        let g = build_retrial(0.2, 0.5, 1, &ThetaSpec::Constant(0.3)).unwrap();
        let model = uniformize(&g, 1.0).unwrap();
        let c = classify(&model, &RowVector::uniform(2), DEFAULT_HORIZON).unwrap();
        assert_eq!(c.verdict, Verdict::PositiveRecurrent);
        assert!((c.tail_radius_minus - 2.0 / 3.0).abs() < 1e-10);
        let (rho, rho1) = (c.rho.finite().unwrap(), c.rho1.finite().unwrap());
        assert!(rho <= rho1);
    }

    #[test]
    fn scalar_verdicts() {
        let c = classify(&scalar_model(0.5, 0.5, 0.0), &one(), DEFAULT_HORIZON).unwrap();
        assert_eq!(c.verdict, Verdict::NullRecurrent);
        let c = classify(&scalar_model(0.7, 0.3, 0.0), &one(), DEFAULT_HORIZON).unwrap();
        assert_eq!(c.verdict, Verdict::Transient);
        let c = classify(&scalar_model(0.2, 0.5, 0.3), &one(), DEFAULT_HORIZON).unwrap();
        assert_eq!(c.verdict, Verdict::PositiveRecurrent);
    }

    #[test]
    fn short_horizon_on_long_prefix_is_inconclusive() {
        let theta = ThetaSpec::RationalDecay {
            a: 0.3,
            b: 0.3,
            levels: 200,
        };
        let g = build_retrial(0.2, 0.5, 1, &theta).unwrap();
        let model = uniformize(&g, g.max_exit_rate()).unwrap();
        let c = classify(&model, &RowVector::uniform(2), 50).unwrap();
        assert_eq!(c.verdict, Verdict::Inconclusive);
    }
}
