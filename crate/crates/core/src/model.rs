//! Half-strip walk models: discrete block models, continuous-time generators,
//! validation, and the retrial-queue family.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, STOCHASTIC_TOL};

/// Transition blocks of one level: up (`p`), down (`q`) and local (`r`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTriple {
    pub p: Matrix,
    pub q: Matrix,
    pub r: Matrix,
}

impl BlockTriple {
    pub fn new(p: Matrix, q: Matrix, r: Matrix) -> Self {
        Self { p, q, r }
    }

    pub fn dim(&self) -> usize {
        self.p.rows()
    }

    /// Same triple with up and down swapped, i.e. the walk seen upside down.
    pub fn flipped(&self) -> Self {
        Self {
            p: self.q.clone(),
            q: self.p.clone(),
            r: self.r.clone(),
        }
    }

    fn permute(&self, perm: &[usize]) -> Self {
        Self {
            p: self.p.permute(perm),
            q: self.q.permute(perm),
            r: self.r.permute(perm),
        }
    }
}

/// A walk on `{0, 1, ...} x {1..d}`: boundary blocks at layer 0, an explicit
/// level-dependent prefix for layers `1..=prefix.len()`, and a tail triple
/// shared by every higher layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QbdModel {
    pub d: usize,
    pub r0: Matrix,
    pub p0: Matrix,
    pub prefix: Vec<BlockTriple>,
    pub tail: BlockTriple,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QbdFile {
    #[serde(rename = "type", default)]
    _kind: Option<String>,
    d: usize,
    #[serde(default)]
    r0: Option<Matrix>,
    p0: Matrix,
    #[serde(default)]
    prefix: Vec<BlockTriple>,
    tail: BlockTriple,
}

impl<'de> Deserialize<'de> for QbdModel {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let f = QbdFile::deserialize(deserializer)?;
        let r0 = f.r0.unwrap_or_else(|| Matrix::zeros(f.d, f.d));
        Ok(QbdModel {
            d: f.d,
            r0,
            p0: f.p0,
            prefix: f.prefix,
            tail: f.tail,
        })
    }
}

impl QbdModel {
    pub fn new(r0: Matrix, p0: Matrix, prefix: Vec<BlockTriple>, tail: BlockTriple) -> Self {
        Self {
            d: p0.rows(),
            r0,
            p0,
            prefix,
            tail,
        }
    }

    /// Level-independent walk whose layer 0 always jumps up through `p0`.
    pub fn homogeneous(p0: Matrix, tail: BlockTriple) -> Self {
        let d = p0.rows();
        Self::new(Matrix::zeros(d, d), p0, Vec::new(), tail)
    }

    /// Materializes a level map `n -> blocks`: levels `1..=levels` become the
    /// prefix and `level_fn(levels + 1)` stands in for every higher level.
    pub fn from_level_fn(
        r0: Matrix,
        p0: Matrix,
        levels: usize,
        mut level_fn: impl FnMut(usize) -> BlockTriple,
    ) -> Self {
        let prefix = (1..=levels).map(&mut level_fn).collect();
        let tail = level_fn(levels + 1);
        Self::new(r0, p0, prefix, tail)
    }

    /// Number of explicitly level-dependent layers.
    pub fn prefix_len(&self) -> usize {
        self.prefix.len()
    }

    /// Blocks of level `n >= 1`.
    pub fn block_at(&self, n: usize) -> &BlockTriple {
        assert!(n >= 1, "block_at is defined for levels n >= 1");
        self.prefix.get(n - 1).unwrap_or(&self.tail)
    }

    /// Relabels phases: new phase `i` is old phase `perm[i]`.
    pub fn permute_phases(&self, perm: &[usize]) -> Self {
        Self {
            d: self.d,
            r0: self.r0.permute(perm),
            p0: self.p0.permute(perm),
            prefix: self.prefix.iter().map(|b| b.permute(perm)).collect(),
            tail: self.tail.permute(perm),
        }
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }

    /// Validates and returns the model, or the report as an error.
    pub fn validated(self) -> Result<Self> {
        let report = validate(&self);
        if report.is_valid() {
            Ok(self)
        } else {
            Err(Error::Invalid(report))
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        ModelFile::from_json(s)?.into_qbd()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

/// Where in the model a violation sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Boundary,
    Prefix(usize),
    Tail,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Boundary => write!(f, "boundary"),
            Level::Prefix(n) => write!(f, "level {n}"),
            Level::Tail => write!(f, "tail"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    R0,
    P0,
    Up,
    Down,
    Local,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Block::R0 => "r0",
            Block::P0 => "p0",
            Block::Up => "p",
            Block::Down => "q",
            Block::Local => "r",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Shape {
        level: Level,
        block: Block,
        rows: usize,
        cols: usize,
        expected: usize,
    },
    NegativeEntry {
        level: Level,
        block: Block,
        row: usize,
        col: usize,
        value: f64,
    },
    EntryAboveOne {
        level: Level,
        block: Block,
        row: usize,
        col: usize,
        value: f64,
    },
    RowSum {
        level: Level,
        row: usize,
        sum: f64,
    },
    /// A column of an up or down block is identically zero.
    ZeroColumn {
        level: Level,
        block: Block,
        column: usize,
    },
    /// Phase `to` of layer 0 cannot be reached from phase `from` of layer 0.
    BoundaryReducible {
        from: usize,
        to: usize,
    },
    NegativeRate {
        level: Level,
        block: Block,
        row: usize,
        col: usize,
        value: f64,
    },
    GeneratorRowSum {
        level: Level,
        row: usize,
        sum: f64,
    },
}

impl Violation {
    pub fn severity(&self) -> Severity {
        match self {
            Violation::ZeroColumn { .. } => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape {
                level,
                block,
                rows,
                cols,
                expected,
            } => write!(
                f,
                "{level}: block {block} is {rows}x{cols}, expected {expected}x{expected}"
            ),
            Violation::NegativeEntry {
                level,
                block,
                row,
                col,
                value,
            } => write!(f, "{level}: {block}({row},{col}) = {value} is negative"),
            Violation::EntryAboveOne {
                level,
                block,
                row,
                col,
                value,
            } => write!(f, "{level}: {block}({row},{col}) = {value} exceeds 1"),
            Violation::RowSum { level, row, sum } => {
                write!(f, "{level}: row {row} sums to {sum}, expected 1")
            }
            Violation::ZeroColumn {
                level,
                block,
                column,
            } => write!(
                f,
                "{level}: column {column} of {block} has no positive entry"
            ),
            Violation::BoundaryReducible { from, to } => {
                write!(f, "layer 0: phase {to} is not reachable from phase {from}")
            }
            Violation::NegativeRate {
                level,
                block,
                row,
                col,
                value,
            } => write!(
                f,
                "{level}: off-diagonal rate {block}({row},{col}) = {value} is negative"
            ),
            Violation::GeneratorRowSum { level, row, sum } => {
                write!(f, "{level}: generator row {row} sums to {sum}, expected 0")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    /// True when no violation has error severity.
    pub fn is_valid(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Violation> {
        self.violations
            .iter()
            .filter(|v| v.severity() == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Violation> {
        self.violations
            .iter()
            .filter(|v| v.severity() == Severity::Warning)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            let tag = match v.severity() {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            writeln!(f, "  {tag}: {v}")?;
        }
        Ok(())
    }
}

fn check_shape(m: &Matrix, d: usize, level: Level, block: Block, out: &mut Vec<Violation>) -> bool {
    if m.rows() == d && m.cols() == d {
        return true;
    }
    out.push(Violation::Shape {
        level,
        block,
        rows: m.rows(),
        cols: m.cols(),
        expected: d,
    });
    false
}

fn check_entries(m: &Matrix, level: Level, block: Block, out: &mut Vec<Violation>) {
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let value = m[(i, j)];
            if value < 0.0 {
                out.push(Violation::NegativeEntry {
                    level,
                    block,
                    row: i,
                    col: j,
                    value,
                });
            } else if value > 1.0 + STOCHASTIC_TOL {
                out.push(Violation::EntryAboveOne {
                    level,
                    block,
                    row: i,
                    col: j,
                    value,
                });
            }
        }
    }
}

fn check_row_sums(blocks: &[&Matrix], level: Level, out: &mut Vec<Violation>) {
    let d = blocks[0].rows();
    for row in 0..d {
        let sum: f64 = blocks.iter().map(|b| b.row(row).iter().sum::<f64>()).sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            out.push(Violation::RowSum { level, row, sum });
        }
    }
}

fn check_columns(m: &Matrix, level: Level, block: Block, out: &mut Vec<Violation>) {
    for (column, s) in m.col_sums().into_iter().enumerate() {
        if s <= 0.0 {
            out.push(Violation::ZeroColumn {
                level,
                block,
                column,
            });
        }
    }
}

/// Checks stochasticity, entry ranges, column positivity of the up and down
/// blocks, and that layer 0 forms a single communication class.
pub fn validate(model: &QbdModel) -> ValidationReport {
    let d = model.d;
    let mut out = Vec::new();
    if d == 0 {
        out.push(Violation::Shape {
            level: Level::Boundary,
            block: Block::P0,
            rows: 0,
            cols: 0,
            expected: 1,
        });
        return ValidationReport { violations: out };
    }

    let mut shapes_ok = check_shape(&model.r0, d, Level::Boundary, Block::R0, &mut out)
        & check_shape(&model.p0, d, Level::Boundary, Block::P0, &mut out);
    let levels = model
        .prefix
        .iter()
        .enumerate()
        .map(|(i, b)| (Level::Prefix(i + 1), b))
        .chain(std::iter::once((Level::Tail, &model.tail)));
    for (level, b) in levels.clone() {
        shapes_ok &= check_shape(&b.p, d, level, Block::Up, &mut out)
            & check_shape(&b.q, d, level, Block::Down, &mut out)
            & check_shape(&b.r, d, level, Block::Local, &mut out);
    }
    if !shapes_ok {
        return ValidationReport { violations: out };
    }

    check_entries(&model.r0, Level::Boundary, Block::R0, &mut out);
    check_entries(&model.p0, Level::Boundary, Block::P0, &mut out);
    check_row_sums(&[&model.r0, &model.p0], Level::Boundary, &mut out);
    for (level, b) in levels {
        check_entries(&b.p, level, Block::Up, &mut out);
        check_entries(&b.q, level, Block::Down, &mut out);
        check_entries(&b.r, level, Block::Local, &mut out);
        check_row_sums(&[&b.p, &b.q, &b.r], level, &mut out);
        check_columns(&b.p, level, Block::Up, &mut out);
        check_columns(&b.q, level, Block::Down, &mut out);
    }

    if !out.iter().any(|v| v.severity() == Severity::Error) {
        let reach = boundary_reachability(model);
        'outer: for from in 0..d {
            for to in 0..d {
                if !reach.get(from, to) {
                    out.push(Violation::BoundaryReducible { from, to });
                    break 'outer;
                }
            }
        }
    }
    ValidationReport { violations: out }
}

/// Boolean `d x d` relation used for reachability on phases.
#[derive(Clone, PartialEq, Eq)]
struct Relation {
    d: usize,
    bits: Vec<bool>,
}

impl Relation {
    fn empty(d: usize) -> Self {
        Self {
            d,
            bits: vec![false; d * d],
        }
    }

    fn support(m: &Matrix) -> Self {
        Self {
            d: m.rows(),
            bits: m.as_slice().iter().map(|x| *x > 0.0).collect(),
        }
    }

    fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.d + j]
    }

    fn union(&self, other: &Relation) -> Relation {
        Relation {
            d: self.d,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a || *b)
                .collect(),
        }
    }

    fn compose(&self, other: &Relation) -> Relation {
        let d = self.d;
        let mut out = Relation::empty(d);
        for i in 0..d {
            for k in 0..d {
                if self.get(i, k) {
                    for j in 0..d {
                        if other.get(k, j) {
                            out.bits[i * d + j] = true;
                        }
                    }
                }
            }
        }
        out
    }

    /// Reflexive-transitive closure (Warshall).
    fn star(&self) -> Relation {
        let d = self.d;
        let mut c = self.clone();
        for i in 0..d {
            c.bits[i * d + i] = true;
        }
        for k in 0..d {
            for i in 0..d {
                if c.get(i, k) {
                    for j in 0..d {
                        if c.get(k, j) {
                            c.bits[i * d + j] = true;
                        }
                    }
                }
            }
        }
        c
    }
}

/// Support of the first-passage matrix from level `n` down to `n - 1`, given
/// the support one level higher.
fn passage_down(block: &BlockTriple, above: &Relation) -> Relation {
    let local = Relation::support(&block.r).union(&Relation::support(&block.p).compose(above));
    local.star().compose(&Relation::support(&block.q))
}

/// Which layer-0 phases reach which, through arbitrary excursions upward.
fn boundary_reachability(model: &QbdModel) -> Relation {
    let d = model.d;
    // The tail relation is the least fixed point of a monotone map on d*d bits.
    let mut tail = Relation::empty(d);
    loop {
        let next = passage_down(&model.tail, &tail);
        if next == tail {
            break;
        }
        tail = next;
    }
    let mut above = tail;
    for block in model.prefix.iter().rev() {
        above = passage_down(block, &above);
    }
    let one_step =
        Relation::support(&model.r0).union(&Relation::support(&model.p0).compose(&above));
    one_step.star()
}

/// Rate blocks of one level of a continuous-time walk: `a` up, `b` local
/// (carries the negative diagonal), `c` down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorBlocks {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    pub d: usize,
    /// Local block of layer 0.
    pub b0: Matrix,
    /// Up block of layer 0.
    pub a0: Matrix,
    #[serde(default)]
    pub prefix: Vec<GeneratorBlocks>,
    pub tail: GeneratorBlocks,
}

impl GeneratorModel {
    fn levels(&self) -> impl Iterator<Item = (Level, &GeneratorBlocks)> {
        self.prefix
            .iter()
            .enumerate()
            .map(|(i, b)| (Level::Prefix(i + 1), b))
            .chain(std::iter::once((Level::Tail, &self.tail)))
    }

    /// Largest total exit rate over all states, the smallest admissible
    /// uniformization constant.
    pub fn max_exit_rate(&self) -> f64 {
        let diag_max = |b: &Matrix| (0..b.rows()).map(|i| -b[(i, i)]).fold(0.0, f64::max);
        self.levels()
            .map(|(_, g)| diag_max(&g.b))
            .fold(diag_max(&self.b0), f64::max)
    }

    pub fn validate(&self) -> ValidationReport {
        let d = self.d;
        let mut out = Vec::new();
        let mut shapes_ok = check_shape(&self.b0, d, Level::Boundary, Block::R0, &mut out)
            & check_shape(&self.a0, d, Level::Boundary, Block::P0, &mut out);
        for (level, g) in self.levels() {
            shapes_ok &= check_shape(&g.a, d, level, Block::Up, &mut out)
                & check_shape(&g.b, d, level, Block::Local, &mut out)
                & check_shape(&g.c, d, level, Block::Down, &mut out);
        }
        if !shapes_ok {
            return ValidationReport { violations: out };
        }
        let mut check = |level: Level, blocks: &[(Block, &Matrix)]| {
            for (block, m) in blocks {
                for i in 0..d {
                    for j in 0..d {
                        let value = m[(i, j)];
                        let diagonal = *block == Block::Local || *block == Block::R0;
                        if value < 0.0 && !(diagonal && i == j) {
                            out.push(Violation::NegativeRate {
                                level,
                                block: *block,
                                row: i,
                                col: j,
                                value,
                            });
                        }
                    }
                }
            }
            for row in 0..d {
                let sum: f64 = blocks
                    .iter()
                    .map(|(_, m)| m.row(row).iter().sum::<f64>())
                    .sum();
                if sum.abs() > STOCHASTIC_TOL {
                    out.push(Violation::GeneratorRowSum { level, row, sum });
                }
            }
        };
        check(
            Level::Boundary,
            &[(Block::R0, &self.b0), (Block::P0, &self.a0)],
        );
        for (level, g) in self.levels() {
            check(
                level,
                &[(Block::Up, &g.a), (Block::Local, &g.b), (Block::Down, &g.c)],
            );
        }
        ValidationReport { violations: out }
    }
}

/// Discretizes a generator: `P = A/gamma`, `Q = C/gamma`, `R = I + B/gamma`.
pub fn uniformize(g: &GeneratorModel, gamma: f64) -> Result<QbdModel> {
    let report = g.validate();
    if !report.is_valid() {
        return Err(Error::Invalid(report));
    }
    let rate = g.max_exit_rate();
    if gamma.is_nan() || gamma <= 0.0 || gamma < rate * (1.0 - 1e-12) {
        return Err(Error::GammaTooSmall { gamma, rate });
    }
    let d = g.d;
    let local = |b: &Matrix| {
        let mut r = &Matrix::identity(d) + &b.scale(1.0 / gamma);
        for i in 0..d {
            // Roundoff at gamma == rate.
            if r[(i, i)] < 0.0 {
                r[(i, i)] = 0.0;
            }
        }
        r
    };
    let triple = |g: &GeneratorBlocks| BlockTriple {
        p: g.a.scale(1.0 / gamma),
        q: g.c.scale(1.0 / gamma),
        r: local(&g.b),
    };
    Ok(QbdModel {
        d,
        r0: local(&g.b0),
        p0: g.a0.scale(1.0 / gamma),
        prefix: g.prefix.iter().map(triple).collect(),
        tail: triple(&g.tail),
    })
}

/// Total retrial rate as a function of the orbit size.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaSpec {
    Constant(f64),
    /// `theta_n = a + b / n` for `n <= levels`, and `a` beyond.
    RationalDecay {
        a: f64,
        b: f64,
        levels: usize,
    },
    /// Explicit `theta_1, theta_2, ...`; the last entry is used for all
    /// higher levels.
    Table(Vec<f64>),
}

impl ThetaSpec {
    /// Parses `"0.3"`, `"0.3+0.3/n"`, or a path to a whitespace-separated
    /// table of per-level rates.
    pub fn parse(spec: &str, levels: usize) -> Result<Self> {
        let spec = spec.trim();
        if let Ok(v) = spec.parse::<f64>() {
            return Ok(ThetaSpec::Constant(v));
        }
        if let Some(body) = spec.strip_suffix("/n") {
            let split = body
                .char_indices()
                .rev()
                .find(|(i, ch)| {
                    (*ch == '+' || *ch == '-')
                        && *i > 0
                        && !matches!(body.as_bytes()[i - 1], b'e' | b'E' | b'+' | b'-')
                })
                .map(|(i, _)| i);
            if let Some(i) = split {
                let a = body[..i].trim().parse::<f64>();
                let b = body[i..].trim().trim_start_matches('+').parse::<f64>();
                if let (Ok(a), Ok(b)) = (a, b) {
                    return Ok(ThetaSpec::RationalDecay { a, b, levels });
                }
            }
            return Err(Error::InvalidArgument(format!(
                "cannot parse retrial rate `{spec}`; expected `a+b/n`"
            )));
        }
        let text = std::fs::read_to_string(Path::new(spec)).map_err(|e| {
            Error::InvalidArgument(format!(
                "retrial rate `{spec}` is neither a number, `a+b/n`, nor a readable table: {e}"
            ))
        })?;
        let values = text
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad rate `{t}` in {spec}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "rate table {spec} is empty"
            )));
        }
        Ok(ThetaSpec::Table(values))
    }

    /// Number of level-dependent levels and the rate at level `n >= 1`.
    fn prefix_len(&self) -> usize {
        match self {
            ThetaSpec::Constant(_) => 0,
            ThetaSpec::RationalDecay { b, levels, .. } => {
                if *b == 0.0 {
                    0
                } else {
                    *levels
                }
            }
            ThetaSpec::Table(v) => v.len() - 1,
        }
    }

    pub fn at(&self, n: usize) -> f64 {
        match self {
            ThetaSpec::Constant(t) => *t,
            ThetaSpec::RationalDecay { a, b, levels } => {
                if n <= *levels {
                    a + b / n as f64
                } else {
                    *a
                }
            }
            ThetaSpec::Table(v) => v[(n.max(1) - 1).min(v.len() - 1)],
        }
    }

    pub fn limit(&self) -> f64 {
        match self {
            ThetaSpec::Constant(t) => *t,
            ThetaSpec::RationalDecay { a, .. } => *a,
            ThetaSpec::Table(v) => *v.last().expect("non-empty table"),
        }
    }
}

impl fmt::Display for ThetaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThetaSpec::Constant(t) => write!(f, "{t}"),
            ThetaSpec::RationalDecay { a, b, .. } => write!(f, "{a}+{b}/n"),
            ThetaSpec::Table(v) => write!(f, "table[{}]", v.len()),
        }
    }
}

/// Generator of the M/M/c retrial queue with total retrial rate `theta_n`
/// when `n` customers are in orbit. Phase `k` is the number of busy servers.
pub fn build_retrial(lambda: f64, mu: f64, c: usize, theta: &ThetaSpec) -> Result<GeneratorModel> {
    if !(lambda > 0.0 && mu > 0.0 && lambda.is_finite() && mu.is_finite()) {
        return Err(Error::InvalidArgument(
            "arrival and service rates must be positive".into(),
        ));
    }
    if c == 0 {
        return Err(Error::InvalidArgument("need at least one server".into()));
    }
    let prefix_len = theta.prefix_len();
    for n in 1..=prefix_len + 1 {
        let t = theta.at(n);
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "retrial rate at level {n} is {t}; it must be positive"
            )));
        }
    }
    let d = c + 1;
    let blocks = |t: f64| {
        let mut a = Matrix::zeros(d, d);
        let mut b = Matrix::zeros(d, d);
        let mut cm = Matrix::zeros(d, d);
        a[(c, c)] = lambda;
        for k in 0..d {
            if k < c {
                b[(k, k + 1)] = lambda;
                cm[(k, k + 1)] = t;
            }
            if k > 0 {
                b[(k, k - 1)] = k as f64 * mu;
            }
            let out: f64 = a.row(k).iter().sum::<f64>()
                + b.row(k).iter().sum::<f64>()
                + cm.row(k).iter().sum::<f64>();
            b[(k, k)] = -out;
        }
        GeneratorBlocks { a, b, c: cm }
    };
    let empty_orbit = blocks(0.0);
    Ok(GeneratorModel {
        d,
        b0: empty_orbit.b,
        a0: empty_orbit.a,
        prefix: (1..=prefix_len).map(|n| blocks(theta.at(n))).collect(),
        tail: blocks(theta.limit()),
    })
}

/// A model file: either discrete blocks or a generator with its
/// uniformization constant.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Qbd(QbdModel),
    Generator { model: GeneratorModel, gamma: f64 },
}

#[derive(Serialize, Deserialize)]
struct GeneratorFile {
    #[serde(rename = "type")]
    kind: String,
    gamma: f64,
    #[serde(flatten)]
    model: GeneratorModel,
}

impl ModelFile {
    pub fn from_json(s: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        match value.get("type").and_then(|t| t.as_str()) {
            Some("generator") => {
                let f: GeneratorFile = serde_json::from_value(value)?;
                Ok(ModelFile::Generator {
                    model: f.model,
                    gamma: f.gamma,
                })
            }
            None | Some("qbd") => Ok(ModelFile::Qbd(serde_json::from_value(value)?)),
            Some(other) => Err(Error::InvalidArgument(format!(
                "unknown model type `{other}`"
            ))),
        }
    }

    pub fn to_json(&self) -> String {
        match self {
            ModelFile::Qbd(m) => m.to_json(),
            ModelFile::Generator { model, gamma } => serde_json::to_string_pretty(&GeneratorFile {
                kind: "generator".into(),
                gamma: *gamma,
                model: model.clone(),
            })
            .expect("generator serializes"),
        }
    }

    pub fn into_qbd(self) -> Result<QbdModel> {
        match self {
            ModelFile::Qbd(m) => Ok(m),
            ModelFile::Generator { model, gamma } => uniformize(&model, gamma),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn scalar(p: f64, q: f64, r: f64) -> BlockTriple {
        BlockTriple::new(m(&[&[p]]), m(&[&[q]]), m(&[&[r]]))
    }

    fn two_phase_tail() -> BlockTriple {
        BlockTriple::new(
            m(&[&[0.1, 0.1], &[0.1, 0.1]]),
            m(&[&[0.3, 0.2], &[0.2, 0.3]]),
            m(&[&[0.2, 0.1], &[0.1, 0.2]]),
        )
    }

    #[test]
    fn valid_model_has_empty_report() {
        let model = QbdModel::homogeneous(m(&[&[0.5, 0.5], &[0.5, 0.5]]), two_phase_tail());
        assert!(model.validate().is_empty());
    }

    #[test]
    fn row_sum_violation_names_level() {
        let mut model = QbdModel::homogeneous(m(&[&[1.0]]), scalar(0.3, 0.7, 0.0));
        model.prefix.push(scalar(0.3, 0.5, 0.1));
        let report = model.validate();
        assert!(!report.is_valid());
        assert!(report.violations.iter().any(|v| matches!(
            v,
            Violation::RowSum { level: Level::Prefix(1), row: 0, sum } if (sum - 0.9).abs() < 1e-12
        )));
    }

    #[test]
    fn zero_column_is_reported() {
        let mut tail = two_phase_tail();
        tail.q = m(&[&[0.5, 0.0], &[0.5, 0.0]]);
        tail.r = m(&[&[0.2, 0.1], &[0.1, 0.2]]);
        let mut model = QbdModel::homogeneous(m(&[&[0.4, 0.4], &[0.5, 0.5]]), tail.clone());
        model.r0 = m(&[&[0.0, 0.2], &[0.0, 0.0]]);
        model.prefix.push(tail);
        let report = model.validate();
        assert!(report.violations.contains(&Violation::ZeroColumn {
            level: Level::Prefix(1),
            block: Block::Down,
            column: 1
        }));
        assert!(report.is_valid(), "zero columns are warnings: {report}");
    }

    #[test]
    fn boundary_reducibility_is_detected() {
        // Phases never mix: every block is diagonal.
        let diag = |x: f64| m(&[&[x, 0.0], &[0.0, x]]);
        let tail = BlockTriple::new(diag(0.3), diag(0.5), diag(0.2));
        let model = QbdModel::homogeneous(Matrix::identity(2), tail);
        let report = model.validate();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::BoundaryReducible { .. })));
    }

    #[test]
    fn reachability_through_higher_levels() {
        // Layer 0 only mixes phases by travelling up to level 2.
        let diag = |x: f64| m(&[&[x, 0.0], &[0.0, x]]);
        let swap = |x: f64| m(&[&[0.0, x], &[x, 0.0]]);
        let level1 = BlockTriple::new(diag(0.5), diag(0.5), Matrix::zeros(2, 2));
        let tail = BlockTriple::new(diag(0.4), swap(0.6), Matrix::zeros(2, 2));
        let mut model = QbdModel::homogeneous(Matrix::identity(2), tail);
        model.prefix.push(level1);
        let report = model.validate();
        assert!(
            !report
                .violations
                .iter()
                .any(|v| matches!(v, Violation::BoundaryReducible { .. })),
            "{report}"
        );
    }

    #[test]
    fn block_at_prefix_and_tail() {
        let mut model = QbdModel::homogeneous(m(&[&[1.0]]), scalar(0.3, 0.7, 0.0));
        model.prefix.push(scalar(0.2, 0.8, 0.0));
        assert_eq!(model.block_at(1), &scalar(0.2, 0.8, 0.0));
        assert_eq!(model.block_at(6), &model.tail);
        let plain = QbdModel::homogeneous(m(&[&[1.0]]), scalar(0.3, 0.7, 0.0));
        assert_eq!(plain.block_at(1), &plain.tail);
    }

    #[test]
    fn retrial_c1_blocks() {
        let g = build_retrial(0.2, 0.5, 1, &ThetaSpec::Constant(0.3)).unwrap();
        assert!(g.prefix.is_empty());
        assert_eq!(g.tail.a, m(&[&[0.0, 0.0], &[0.0, 0.2]]));
        assert_eq!(g.tail.c, m(&[&[0.0, 0.3], &[0.0, 0.0]]));
        let model = uniformize(&g, 1.0).unwrap();
        assert!(model.tail.r.max_abs_diff(&m(&[&[0.5, 0.2], &[0.5, 0.3]])) < 1e-15);
        assert!(model.tail.p.max_abs_diff(&m(&[&[0.0, 0.0], &[0.0, 0.2]])) < 1e-15);
        assert!(model.tail.q.max_abs_diff(&m(&[&[0.0, 0.3], &[0.0, 0.0]])) < 1e-15);
        assert!(model.validate().is_valid(), "{}", model.validate());
    }

    #[test]
    fn retrial_c2_corner_and_down_rows() {
        let (lambda, mu) = (0.1, 0.3);
        let theta = ThetaSpec::RationalDecay {
            a: 0.3,
            b: 0.3,
            levels: 5,
        };
        let g = build_retrial(lambda, mu, 2, &theta).unwrap();
        assert_eq!(g.prefix.len(), 5);
        assert!((g.tail.b[(2, 2)] + (lambda + 2.0 * mu)).abs() < 1e-15);
        for (n, level) in g.prefix.iter().enumerate() {
            let sums = level.c.row_sums();
            let t = 0.3 + 0.3 / (n + 1) as f64;
            assert!((sums[0] - t).abs() < 1e-15 && (sums[1] - t).abs() < 1e-15);
            assert_eq!(sums[2], 0.0);
        }
    }

    #[test]
    fn uniformized_rows_are_stochastic() {
        let theta = ThetaSpec::RationalDecay {
            a: 0.3,
            b: 0.3,
            levels: 20,
        };
        for c in 1..=4 {
            let g = build_retrial(0.15, 0.2, c, &theta).unwrap();
            let model = uniformize(&g, g.max_exit_rate()).unwrap();
            for n in 1..=25 {
                let b = model.block_at(n);
                let defect = (&(&b.p + &b.q) + &b.r).stochastic_defect();
                assert!(defect <= 1e-12, "c={c} n={n} defect {defect}");
            }
        }
    }

    #[test]
    fn normalized_rates_reproduce_entries() {
        // lambda + c mu + theta = 1 with gamma = 1.
        let g = build_retrial(0.1, 0.3, 2, &ThetaSpec::Constant(0.3)).unwrap();
        let model = uniformize(&g, 1.0).unwrap();
        assert_eq!(model.tail.p, g.tail.a);
        assert_eq!(model.tail.q, g.tail.c);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(model.tail.r[(i, j)], g.tail.b[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn gamma_too_small() {
        let g = build_retrial(0.2, 0.5, 1, &ThetaSpec::Constant(0.3)).unwrap();
        assert!(matches!(
            uniformize(&g, 0.5),
            Err(Error::GammaTooSmall { .. })
        ));
    }

    #[test]
    fn zero_rates_are_reducible() {
        let z = Matrix::zeros(2, 2);
        let blocks = GeneratorBlocks {
            a: z.clone(),
            b: z.clone(),
            c: z.clone(),
        };
        let g = GeneratorModel {
            d: 2,
            b0: z.clone(),
            a0: z.clone(),
            prefix: vec![],
            tail: blocks,
        };
        let model = uniformize(&g, 1.0).unwrap();
        assert!(model.tail.p.is_zero() && model.tail.q.is_zero());
        assert_eq!(model.tail.r, Matrix::identity(2));
        assert!(model
            .validate()
            .violations
            .iter()
            .any(|v| matches!(v, Violation::BoundaryReducible { .. })));
    }

    #[test]
    fn theta_grammar() {
        assert_eq!(
            ThetaSpec::parse("0.3", 10).unwrap(),
            ThetaSpec::Constant(0.3)
        );
        assert_eq!(
            ThetaSpec::parse("0.3+0.3/n", 10).unwrap(),
            ThetaSpec::RationalDecay {
                a: 0.3,
                b: 0.3,
                levels: 10
            }
        );
        assert_eq!(
            ThetaSpec::parse("1e-1-5e-2/n", 4).unwrap(),
            ThetaSpec::RationalDecay {
                a: 0.1,
                b: -0.05,
                levels: 4
            }
        );
        assert!(ThetaSpec::parse("0.3+x/n", 10).is_err());
        assert!(ThetaSpec::parse("/definitely/not/here", 10).is_err());
    }

    #[test]
    fn theta_table_file() {
        let dir = std::env::temp_dir().join(format!("halfstrip-theta-{}", std::process::id()));
        std::fs::write(&dir, "0.6 0.45\n0.3\n").unwrap();
        let spec = ThetaSpec::parse(dir.to_str().unwrap(), 0).unwrap();
        std::fs::remove_file(&dir).ok();
        assert_eq!(spec.at(1), 0.6);
        assert_eq!(spec.at(2), 0.45);
        assert_eq!(spec.at(9), 0.3);
        let g = build_retrial(0.2, 0.5, 1, &spec).unwrap();
        assert_eq!(g.prefix.len(), 2);
    }

    #[test]
    fn json_round_trip_and_default_r0() {
        let text = r#"{"d":1,"p0":[[1.0]],"tail":{"p":[[0.3]],"q":[[0.7]],"r":[[0.0]]}}"#;
        let model = QbdModel::from_json(text).unwrap();
        assert_eq!(model.r0, Matrix::zeros(1, 1));
        assert_eq!(QbdModel::from_json(&model.to_json()).unwrap(), model);

        let g = build_retrial(0.2, 0.5, 1, &ThetaSpec::Constant(0.3)).unwrap();
        let file = ModelFile::Generator {
            model: g,
            gamma: 1.0,
        };
        assert_eq!(ModelFile::from_json(&file.to_json()).unwrap(), file);
    }

    #[test]
    fn malformed_json_is_rejected() {
        assert!(QbdModel::from_json("{").is_err());
        assert!(QbdModel::from_json(r#"{"d":1,"p0":[[1.0, 2.0],[1.0]],"tail":{}}"#).is_err());
        assert!(ModelFile::from_json(r#"{"type":"bogus"}"#).is_err());
    }
}
