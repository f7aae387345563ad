//! Exit probabilities, mean-offspring matrices and occupation expectations.
//!
//! Upward quantities (`zeta_plus`, `a_plus`, `u_plus`) come from the forward
//! recursion started at the reflecting layer 0. Downward quantities
//! (`zeta_minus`, `a_minus`, `u_minus`, `u_tilde_minus`) come from a backward
//! recursion anchored in the level-independent tail, where the downward exit
//! matrix is the minimal nonnegative solution of a quadratic matrix equation.
//!
//! Level indexing follows the walk: `zeta_plus(0)` is the exit matrix of the
//! reflecting layer, `a_minus(n)` exists for `n >= 1`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BlockTriple, QbdModel};
use crate::numeric::{invert, Matrix, RowVector};

/// Default tolerance for the downward fixed point.
pub const ZETA_TOL: f64 = 1e-12;

/// Iteration budget of the functional iteration for the tail.
pub const ZETA_MAX_ITER: usize = 100_000;

/// First anchor level of the backward recursion, above the prefix.
pub const ANCHOR_OFFSET: usize = 16;

/// Offspring series are cut once the unassigned mass drops below this.
pub const PMF_TAIL_MASS: f64 = 1e-12;

const LR_MAX_ITER: usize = 128;
const ANCHOR_MAX_DOUBLINGS: usize = 20;
const PMF_MAX_TERMS: usize = 10_000_000;

fn ones(d: usize) -> Vec<f64> {
    vec![1.0; d]
}

/// `(I - a * b - c)^{-1}`.
fn resolvent(a: &Matrix, b: &Matrix, c: &Matrix) -> Result<Matrix> {
    let d = c.rows();
    invert(&(&(&Matrix::identity(d) - &(a * b)) - c))
}

/// `(I - q * below - r)^{-1}` for an upward step, with the diagonal of
/// `I - q * below - r` rebuilt from the off-diagonal mass and the row sums of
/// `up`. This avoids cancellation in `1 - r_ii - (q below)_ii` when leaving
/// upward is rare, and keeps `zeta^+` stochastic.
fn plus_fundamental(q: &Matrix, below: &Matrix, r: &Matrix, up: &Matrix) -> Result<Matrix> {
    let d = r.rows();
    let stay = &(q * below) + r;
    let up_mass = up.row_sums();
    let mut rows = Vec::with_capacity(d);
    for i in 0..d {
        let off: f64 = (0..d).filter(|&j| j != i).map(|j| stay[(i, j)]).sum();
        rows.push(
            (0..d)
                .map(|j| {
                    if i == j {
                        up_mass[i] + off
                    } else {
                        -stay[(i, j)]
                    }
                })
                .collect(),
        );
    }
    invert(&Matrix::from_rows(&rows)?)
}

fn clamp_nonnegative(m: Matrix) -> Matrix {
    let (rows, cols) = (m.rows(), m.cols());
    let data = m.as_slice().iter().map(|x| x.max(0.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("same shape")
}

/// `‖(I - P zeta_above - R) zeta - Q‖_max`, the defining identity of a
/// downward exit matrix.
pub fn minus_residual(block: &BlockTriple, zeta_above: &Matrix, zeta: &Matrix) -> f64 {
    let d = block.dim();
    let lhs = &(&(&Matrix::identity(d) - &(&block.p * zeta_above)) - &block.r) * zeta;
    lhs.max_abs_diff(&block.q)
}

/// `‖(I - Q zeta_below - R) zeta - P‖_max`, the defining identity of an
/// upward exit matrix.
pub fn plus_residual(block: &BlockTriple, zeta_below: &Matrix, zeta: &Matrix) -> f64 {
    let d = block.dim();
    let lhs = &(&(&Matrix::identity(d) - &(&block.q * zeta_below)) - &block.r) * zeta;
    lhs.max_abs_diff(&block.p)
}

/// One upward level: `zeta_n^+`, the fundamental factor
/// `(I - Q_n zeta_{n-1}^+ - R_n)^{-1}`, and the derived `A_n^+`, `u_n^+`.
#[derive(Debug, Clone)]
pub struct PlusLevel {
    pub level: usize,
    pub zeta: Matrix,
    pub fundamental: Matrix,
    /// `None` at layer 0.
    pub a_plus: Option<Matrix>,
    pub u_plus: Vec<f64>,
}

/// Streams the upward recursion level by level without storing it.
pub struct PlusRecursion<'a> {
    model: &'a QbdModel,
    next: usize,
    prev: Option<Matrix>,
    failed: bool,
}

impl<'a> PlusRecursion<'a> {
    pub fn new(model: &'a QbdModel) -> Self {
        Self {
            model,
            next: 0,
            prev: None,
            failed: false,
        }
    }

    fn step(&mut self) -> Result<PlusLevel> {
        let d = self.model.d;
        let n = self.next;
        let level = if n == 0 {
            // A layer-0 self-loop block only delays the jump up.
            let (fundamental, zeta) = if self.model.r0.is_zero() {
                (Matrix::identity(d), self.model.p0.clone())
            } else {
                let f = plus_fundamental(
                    &Matrix::zeros(d, d),
                    &Matrix::zeros(d, d),
                    &self.model.r0,
                    &self.model.p0,
                )?;
                let z = &f * &self.model.p0;
                (f, z)
            };
            let u_plus = fundamental.mul_vec(&ones(d));
            PlusLevel {
                level: 0,
                zeta,
                fundamental,
                a_plus: None,
                u_plus,
            }
        } else {
            let block = self.model.block_at(n);
            let below = self.prev.as_ref().expect("previous level computed");
            let fundamental = plus_fundamental(&block.q, below, &block.r, &block.p)?;
            PlusLevel {
                level: n,
                zeta: &fundamental * &block.p,
                a_plus: Some(&fundamental * &block.q),
                u_plus: fundamental.mul_vec(&ones(d)),
                fundamental,
            }
        };
        self.prev = Some(level.zeta.clone());
        self.next += 1;
        Ok(level)
    }
}

impl Iterator for PlusRecursion<'_> {
    type Item = Result<PlusLevel>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let out = self.step();
        self.failed = out.is_err();
        Some(out)
    }
}

/// `zeta_0^+, ..., zeta_{n_max}^+`.
pub fn zeta_plus_seq(model: &QbdModel, n_max: usize) -> Result<Vec<Matrix>> {
    PlusRecursion::new(model)
        .take(n_max + 1)
        .map(|l| l.map(|l| l.zeta))
        .collect()
}

/// Functional iterates `zeta <- (I - P zeta - R)^{-1} Q` of the tail, from zero.
pub struct MinusIterates<'a> {
    tail: &'a BlockTriple,
    current: Matrix,
}

impl<'a> MinusIterates<'a> {
    pub fn new(tail: &'a BlockTriple) -> Self {
        let d = tail.dim();
        Self {
            tail,
            current: Matrix::zeros(d, d),
        }
    }

    pub fn starting_at(tail: &'a BlockTriple, start: Matrix) -> Self {
        Self {
            tail,
            current: start,
        }
    }
}

impl Iterator for MinusIterates<'_> {
    type Item = Result<Matrix>;

    fn next(&mut self) -> Option<Self::Item> {
        let next = resolvent(&self.tail.p, &self.current, &self.tail.r)
            .map(|f| clamp_nonnegative(&f * &self.tail.q));
        if let Ok(z) = &next {
            self.current = z.clone();
        }
        Some(next)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointRun {
    pub zeta: Matrix,
    pub iterations: usize,
    pub residual: f64,
}

fn iterate_to_tolerance(
    tail: &BlockTriple,
    start: Matrix,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointRun> {
    let mut prev = start.clone();
    let mut residual = f64::INFINITY;
    for (k, next) in MinusIterates::starting_at(tail, start)
        .take(max_iter)
        .enumerate()
    {
        let next = next?;
        residual = next.max_abs_diff(&prev);
        if residual <= tol {
            return Ok(FixedPointRun {
                zeta: next,
                iterations: k + 1,
                residual,
            });
        }
        prev = next;
    }
    Err(Error::NoConvergence {
        what: "downward exit-matrix iteration",
        iterations: max_iter,
        estimate: prev.row_sums().into_iter().fold(0.0, f64::max),
        residual,
    })
}

/// Plain functional iteration from zero; converges monotonically to the
/// minimal nonnegative solution, linearly at best.
pub fn zeta_minus_functional(
    tail: &BlockTriple,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointRun> {
    iterate_to_tolerance(tail, Matrix::zeros(tail.dim(), tail.dim()), tol, max_iter)
}

/// Logarithmic reduction for the minimal solution of
/// `Z = Q + R Z + P Z^2`. Partial sums increase to the solution from below,
/// quadratically away from the null-recurrent boundary.
fn logarithmic_reduction(tail: &BlockTriple) -> Result<(Matrix, usize)> {
    let d = tail.dim();
    let id = Matrix::identity(d);
    let local = invert(&(&id - &tail.r))?;
    let mut up = &local * &tail.p;
    let mut down = &local * &tail.q;
    let mut zeta = down.clone();
    let mut carry = up.clone();
    for k in 1..=LR_MAX_ITER {
        let mix = &(&up * &down) + &(&down * &up);
        let scale = match invert(&(&id - &mix)) {
            Ok(s) => s,
            // Both halves have been absorbed; nothing further to add.
            Err(Error::Singular { .. }) => return Ok((zeta, k)),
            Err(e) => return Err(e),
        };
        up = &scale * &(&up * &up);
        down = &scale * &(&down * &down);
        let increment = &carry * &down;
        zeta = &zeta + &increment;
        carry = &carry * &up;
        if increment.norm_max() <= 1e-17 || carry.norm_max() <= 1e-300 {
            return Ok((zeta, k));
        }
    }
    Ok((zeta, LR_MAX_ITER))
}

/// Minimal nonnegative solution of `zeta = (I - P zeta - R)^{-1} Q` for the
/// limiting blocks, with its iteration record.
pub fn zeta_minus_tail_run(tail: &BlockTriple, tol: f64) -> Result<FixedPointRun> {
    let (start, lr_iters) = logarithmic_reduction(tail)?;
    let start = clamp_nonnegative(start);
    let mut run = iterate_to_tolerance(tail, start, tol, ZETA_MAX_ITER)?;
    run.iterations += lr_iters;
    run.residual = minus_residual(tail, &run.zeta, &run.zeta);
    Ok(run)
}

pub fn zeta_minus_tail(tail: &BlockTriple, tol: f64) -> Result<Matrix> {
    zeta_minus_tail_run(tail, tol).map(|r| r.zeta)
}

/// Seed `rho` placed at the anchor level of the backward recursion.
#[derive(Debug, Clone, PartialEq)]
pub enum Anchor {
    /// The tail fixed point itself; the recursion is then exact from the
    /// first tail level down.
    TailFixedPoint,
    Uniform,
    Identity,
    Custom(Matrix),
}

#[derive(Debug, Clone, Serialize)]
pub struct ZetaMinusSeq {
    /// `zeta_minus[k]` is the exit matrix of level `k + 1`.
    pub zetas: Vec<Matrix>,
    pub tail: Matrix,
    pub anchor_level: usize,
    pub doublings: usize,
}

/// `zeta_1^-, ..., zeta_{n_max}^-` anchored at the tail fixed point.
pub fn zeta_minus_seq(model: &QbdModel, n_max: usize, tol: f64) -> Result<Vec<Matrix>> {
    zeta_minus_seq_anchored(model, n_max, tol, &Anchor::TailFixedPoint).map(|s| s.zetas)
}

/// Backward recursion from level `anchor` (seeded with `seed`) down to level 1;
/// returns levels `1..=keep`.
fn backward(model: &QbdModel, anchor: usize, seed: &Matrix, keep: usize) -> Result<Vec<Matrix>> {
    let mut out = vec![Matrix::zeros(0, 0); keep];
    let mut z = seed.clone();
    if anchor <= keep {
        out[anchor - 1] = z.clone();
    }
    for n in (1..anchor).rev() {
        let b = model.block_at(n);
        z = clamp_nonnegative(&resolvent(&b.p, &z, &b.r)? * &b.q);
        if n <= keep {
            out[n - 1] = z.clone();
        }
    }
    Ok(out)
}

pub fn zeta_minus_seq_anchored(
    model: &QbdModel,
    n_max: usize,
    tol: f64,
    anchor: &Anchor,
) -> Result<ZetaMinusSeq> {
    let d = model.d;
    let tail = zeta_minus_tail(&model.tail, tol)?;
    let n_prefix = model.prefix_len();
    let keep = n_prefix + 1;

    let seed = match anchor {
        Anchor::TailFixedPoint => tail.clone(),
        Anchor::Uniform => Matrix::filled(d, d, 1.0 / d as f64),
        Anchor::Identity => Matrix::identity(d),
        Anchor::Custom(m) => {
            if m.rows() != d || m.cols() != d {
                return Err(Error::Dimension(format!("anchor seed must be {d}x{d}")));
            }
            m.clone()
        }
    };

    let (prefix_values, anchor_level, doublings) = if *anchor == Anchor::TailFixedPoint {
        (backward(model, keep, &seed, keep)?, keep, 0)
    } else {
        let mut a = n_prefix + ANCHOR_OFFSET;
        let mut prev = backward(model, a, &seed, keep)?;
        let mut doublings = 0;
        loop {
            if doublings == ANCHOR_MAX_DOUBLINGS {
                return Err(Error::NoConvergence {
                    what: "anchor doubling of the backward recursion",
                    iterations: doublings,
                    estimate: a as f64,
                    residual: f64::NAN,
                });
            }
            a *= 2;
            doublings += 1;
            let next = backward(model, a, &seed, keep)?;
            let change = next
                .iter()
                .zip(&prev)
                .map(|(x, y)| x.max_abs_diff(y))
                .fold(0.0, f64::max);
            prev = next;
            if change < tol {
                break;
            }
        }
        (prev, a, doublings)
    };

    let levels = n_max.max(n_prefix);
    let zetas = (1..=levels)
        .map(|n| {
            if n <= n_prefix {
                prefix_values[n - 1].clone()
            } else {
                tail.clone()
            }
        })
        .collect();
    Ok(ZetaMinusSeq {
        zetas,
        tail,
        anchor_level,
        doublings,
    })
}

/// Downward quantities of the limiting blocks.
#[derive(Debug, Clone, Serialize)]
pub struct TailQuantities {
    pub zeta_minus: Matrix,
    pub u_tilde_minus: Matrix,
    pub a_minus: Matrix,
    pub u_minus: RowVector,
}

impl TailQuantities {
    pub fn new(tail: &BlockTriple, zeta_minus: Matrix) -> Result<Self> {
        let u_tilde_minus = resolvent(&tail.p, &zeta_minus, &tail.r)?;
        Ok(Self {
            a_minus: &u_tilde_minus * &tail.p,
            u_minus: RowVector(u_tilde_minus.mul_vec(&ones(tail.dim()))),
            u_tilde_minus,
            zeta_minus,
        })
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct BranchingMeta {
    pub anchor_level: usize,
    pub anchor_doublings: usize,
    /// Largest `|zeta_n^+ 1 - 1|`.
    pub plus_stochastic_defect: f64,
    pub plus_residual: f64,
    pub minus_residual: f64,
    pub tail_residual: f64,
}

/// Both exit-matrix sequences, ready for [`branching_matrices`].
#[derive(Debug, Clone)]
pub struct Zetas {
    pub plus: Vec<Matrix>,
    pub minus: ZetaMinusSeq,
}

impl Zetas {
    pub fn compute(model: &QbdModel, levels: usize, tol: f64) -> Result<Self> {
        Ok(Self {
            plus: zeta_plus_seq(model, levels)?,
            minus: zeta_minus_seq_anchored(model, levels, tol, &Anchor::TailFixedPoint)?,
        })
    }
}

/// Per-level branching quantities. Upward ones are stored for levels
/// `0..=levels`; downward ones for `1..=max(levels, prefix_len)` and by the
/// tail beyond.
#[derive(Debug, Clone, Serialize)]
pub struct BranchingData {
    pub d: usize,
    pub prefix_len: usize,
    pub levels: usize,
    pub zeta_plus: Vec<Matrix>,
    pub fund_plus: Vec<Matrix>,
    pub a_plus: Vec<Matrix>,
    pub u_plus: Vec<RowVector>,
    pub zeta_minus: Vec<Matrix>,
    pub u_tilde_minus: Vec<Matrix>,
    pub a_minus: Vec<Matrix>,
    pub u_minus: Vec<RowVector>,
    pub tail: TailQuantities,
    pub meta: BranchingMeta,
}

/// Builds `A_n^±`, `u_n^±` and `u~_n^-` from the exit matrices.
pub fn branching_matrices(model: &QbdModel, zetas: &Zetas) -> Result<BranchingData> {
    let d = model.d;
    let one = ones(d);
    let levels = zetas
        .plus
        .len()
        .checked_sub(1)
        .ok_or_else(|| Error::InvalidArgument("need at least zeta_0^+".into()))?;

    let mut fund_plus = Vec::with_capacity(levels + 1);
    let mut a_plus = Vec::with_capacity(levels);
    let mut u_plus = Vec::with_capacity(levels + 1);
    let mut meta = BranchingMeta {
        anchor_level: zetas.minus.anchor_level,
        anchor_doublings: zetas.minus.doublings,
        ..Default::default()
    };

    let f0 = if model.r0.is_zero() {
        Matrix::identity(d)
    } else {
        plus_fundamental(
            &Matrix::zeros(d, d),
            &Matrix::zeros(d, d),
            &model.r0,
            &model.p0,
        )?
    };
    u_plus.push(RowVector(f0.mul_vec(&one)));
    fund_plus.push(f0);
    for (n, zeta) in zetas.plus.iter().enumerate() {
        meta.plus_stochastic_defect = meta.plus_stochastic_defect.max(zeta.stochastic_defect());
        if n == 0 {
            continue;
        }
        let b = model.block_at(n);
        let below = &zetas.plus[n - 1];
        let f = plus_fundamental(&b.q, below, &b.r, &b.p)?;
        meta.plus_residual = meta.plus_residual.max(plus_residual(b, below, zeta));
        a_plus.push(&f * &b.q);
        u_plus.push(RowVector(f.mul_vec(&one)));
        fund_plus.push(f);
    }

    let tail = TailQuantities::new(&model.tail, zetas.minus.tail.clone())?;
    meta.tail_residual = minus_residual(&model.tail, &tail.zeta_minus, &tail.zeta_minus);

    let minus_levels = levels.max(model.prefix_len());
    let zeta_minus_at =
        |n: usize| -> &Matrix { zetas.minus.zetas.get(n - 1).unwrap_or(&zetas.minus.tail) };
    let mut zeta_minus = Vec::with_capacity(minus_levels);
    let mut u_tilde_minus = Vec::with_capacity(minus_levels);
    let mut a_minus = Vec::with_capacity(minus_levels);
    let mut u_minus = Vec::with_capacity(minus_levels);
    for n in 1..=minus_levels {
        let b = model.block_at(n);
        let above = zeta_minus_at(n + 1);
        let zeta = zeta_minus_at(n);
        let ut = resolvent(&b.p, above, &b.r)?;
        meta.minus_residual = meta.minus_residual.max(minus_residual(b, above, zeta));
        a_minus.push(&ut * &b.p);
        u_minus.push(RowVector(ut.mul_vec(&one)));
        u_tilde_minus.push(ut);
        zeta_minus.push(zeta.clone());
    }

    Ok(BranchingData {
        d,
        prefix_len: model.prefix_len(),
        levels,
        zeta_plus: zetas.plus.clone(),
        fund_plus,
        a_plus,
        u_plus,
        zeta_minus,
        u_tilde_minus,
        a_minus,
        u_minus,
        tail,
        meta,
    })
}

impl BranchingData {
    /// Exit matrices and branching quantities up to `levels`.
    pub fn compute(model: &QbdModel, levels: usize, tol: f64) -> Result<Self> {
        branching_matrices(model, &Zetas::compute(model, levels, tol)?)
    }

    pub fn zeta_plus(&self, n: usize) -> &Matrix {
        &self.zeta_plus[n]
    }

    /// `(I - Q_n zeta_{n-1}^+ - R_n)^{-1}`; at `n = 0`, `(I - R_0)^{-1}`.
    pub fn fund_plus(&self, n: usize) -> &Matrix {
        &self.fund_plus[n]
    }

    pub fn a_plus(&self, n: usize) -> &Matrix {
        assert!(n >= 1, "A_n^+ is defined for n >= 1");
        &self.a_plus[n - 1]
    }

    pub fn u_plus(&self, n: usize) -> &RowVector {
        &self.u_plus[n]
    }

    fn minus_index(&self, n: usize) -> Option<usize> {
        assert!(n >= 1, "downward quantities are defined for n >= 1");
        (n <= self.zeta_minus.len()).then(|| n - 1)
    }

    pub fn zeta_minus(&self, n: usize) -> &Matrix {
        self.minus_index(n)
            .map_or(&self.tail.zeta_minus, |k| &self.zeta_minus[k])
    }

    pub fn u_tilde_minus(&self, n: usize) -> &Matrix {
        self.minus_index(n)
            .map_or(&self.tail.u_tilde_minus, |k| &self.u_tilde_minus[k])
    }

    pub fn a_minus(&self, n: usize) -> &Matrix {
        self.minus_index(n)
            .map_or(&self.tail.a_minus, |k| &self.a_minus[k])
    }

    pub fn u_minus(&self, n: usize) -> &RowVector {
        self.minus_index(n)
            .map_or(&self.tail.u_minus, |k| &self.u_minus[k])
    }

    /// First level from which every downward quantity equals its tail value.
    pub fn tail_start(&self) -> usize {
        self.prefix_len + 1
    }
}

/// `e_i step^m exit`.
fn matrix_geometric_pmf(step: &Matrix, exit: &[f64], i: usize, m: usize) -> f64 {
    let mut w = RowVector::unit(step.rows(), i);
    for _ in 0..m {
        w = w.mul_mat(step);
    }
    w.dot(exit)
}

fn matrix_geometric_series(step: &Matrix, exit: &[f64], i: usize) -> Vec<f64> {
    let mut w = RowVector::unit(step.rows(), i);
    let mut out = Vec::new();
    while out.len() < PMF_MAX_TERMS {
        out.push(w.dot(exit));
        w = w.mul_mat(step);
        if w.sum() < PMF_TAIL_MASS {
            break;
        }
    }
    out
}

fn lower_factors(model: &QbdModel, data: &BranchingData, n: usize) -> Result<(Matrix, Vec<f64>)> {
    assert!(
        n >= 1 && n <= data.levels,
        "level {n} outside computed range"
    );
    let b = model.block_at(n);
    let local = invert(&(&Matrix::identity(model.d) - &b.r))?;
    let step = &(&local * &b.q) * data.zeta_plus(n - 1);
    let exit = (&local * &b.p).mul_vec(&ones(model.d));
    Ok((step, exit))
}

fn upper_factors(model: &QbdModel, data: &BranchingData, n: usize) -> Result<(Matrix, Vec<f64>)> {
    assert!(n >= 1, "level must be at least 1");
    let b = model.block_at(n);
    let local = invert(&(&Matrix::identity(model.d) - &b.r))?;
    let step = &(&local * &b.p) * data.zeta_minus(n + 1);
    let exit = (&local * &b.q).mul_vec(&ones(model.d));
    Ok((step, exit))
}

/// Probability that one step into `(n, i)` from above begets `m` steps from
/// level `n` down to `n - 1` before the walk climbs back above `n`.
pub fn offspring_pmf_lower(
    model: &QbdModel,
    data: &BranchingData,
    n: usize,
    i: usize,
    m: usize,
) -> Result<f64> {
    let (step, exit) = lower_factors(model, data, n)?;
    Ok(matrix_geometric_pmf(&step, &exit, i, m))
}

/// The whole lower offspring distribution, cut once the remaining mass is
/// below [`PMF_TAIL_MASS`].
pub fn offspring_pmf_lower_series(
    model: &QbdModel,
    data: &BranchingData,
    n: usize,
    i: usize,
) -> Result<Vec<f64>> {
    let (step, exit) = lower_factors(model, data, n)?;
    Ok(matrix_geometric_series(&step, &exit, i))
}

/// Mirror of [`offspring_pmf_lower`]: steps from `n` up to `n + 1` begotten by
/// one step into `(n, i)` from below.
pub fn offspring_pmf_upper(
    model: &QbdModel,
    data: &BranchingData,
    n: usize,
    i: usize,
    m: usize,
) -> Result<f64> {
    let (step, exit) = upper_factors(model, data, n)?;
    Ok(matrix_geometric_pmf(&step, &exit, i, m))
}

pub fn offspring_pmf_upper_series(
    model: &QbdModel,
    data: &BranchingData,
    n: usize,
    i: usize,
) -> Result<Vec<f64>> {
    let (step, exit) = upper_factors(model, data, n)?;
    Ok(matrix_geometric_series(&step, &exit, i))
}

/// Expected visits to each phase of level `n <= k` before the walk, started
/// on layer `k` with phase law `mu_k`, first reaches layer `k + 1`.
pub fn expected_occupation_lower(
    data: &BranchingData,
    k: usize,
    mu_k: &RowVector,
    n: usize,
) -> RowVector {
    assert!(n <= k && k <= data.levels, "need n <= k <= computed levels");
    let mut v = mu_k.clone();
    for j in (n + 1..=k).rev() {
        v = v.mul_mat(data.a_plus(j));
    }
    // At n = 0 this is (I - R_0)^{-1}, the identity for a layer that always
    // jumps up.
    v.mul_mat(data.fund_plus(n))
}

/// Expected visits to each phase of level `n >= k` before the walk, started
/// on layer `k >= 1` with phase law `mu_k`, first reaches layer `k - 1`.
pub fn expected_occupation_upper(
    data: &BranchingData,
    k: usize,
    mu_k: &RowVector,
    n: usize,
) -> RowVector {
    assert!(k >= 1 && n >= k, "need 1 <= k <= n");
    let mut v = mu_k.clone();
    for j in k..n {
        v = v.mul_mat(data.a_minus(j));
    }
    v.mul_mat(data.u_tilde_minus(n))
}
