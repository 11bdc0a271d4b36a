//! Brute-force check of the closed-form bounds.
//!
//! Within a stratum, each exposure arm carries a distribution over the four
//! response types (always-y, y-iff-exposed, y-iff-unexposed, never-y). The
//! observational conditionals and the experimental probabilities impose six
//! linear equalities on these eight numbers, leaving a two-dimensional
//! polygon. PN, PS and PNS are linear on that polygon, so their extrema sit
//! on its vertices; a regular grid over the polygon is evaluated as well and
//! serves as a redundancy check on the vertex enumeration.
//!
//! Nothing here calls into [`crate::bounds`].

use serde::{Deserialize, Serialize};

use crate::bounds::{Interval, Method, Quantity};
use crate::error::{Error, Result};
use crate::model::{self, ExperimentalPair, ExperimentalQuantities, StratifiedJoint, StratumKey, StratumTable};

pub const DEFAULT_RESOLUTION: f64 = 1e-3;
pub const DEFAULT_TOL: f64 = 2e-3;
/// Slack on the non-negativity constraints.
pub const CONSTRAINT_TOL: f64 = 1e-9;

const VARS: usize = 8;
const ALWAYS: usize = 0;
const IF_EXPOSED: usize = 1;
const IF_UNEXPOSED: usize = 2;
// index 3 is the never-responding type
/// Offset of the unexposed arm's variables.
const UNEXPOSED_ARM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Restriction {
    #[default]
    None,
    /// Forces `P(y-iff-unexposed | w, s) = 0` in both arms.
    NoPrevention,
}

/// Affine map from the free coordinates to one response-type probability.
#[derive(Debug, Clone, Copy)]
struct Affine {
    constant: f64,
    coef: [f64; 2],
}

impl Affine {
    fn at(&self, f: [f64; 2]) -> f64 {
        self.constant + self.coef[0] * f[0] + self.coef[1] * f[1]
    }

    fn scaled(&self, k: f64) -> Affine {
        Affine {
            constant: self.constant * k,
            coef: [self.coef[0] * k, self.coef[1] * k],
        }
    }

    fn plus(&self, other: &Affine) -> Affine {
        Affine {
            constant: self.constant + other.constant,
            coef: [self.coef[0] + other.coef[0], self.coef[1] + other.coef[1]],
        }
    }
}

/// Solution set of the equality constraints: every variable as an affine
/// function of at most two free variables.
struct Parameterisation {
    vars: [Affine; VARS],
    dims: usize,
}

fn equality_system(table: &StratumTable, exp: &ExperimentalPair) -> ([[f64; VARS]; 6], [f64; 6]) {
    let px = table.p_x();
    let pxp = table.p_xp();
    let a = UNEXPOSED_ARM;
    let mut m = [[0.0; VARS]; 6];
    let mut rhs = [0.0; 6];
    // normalisation of each arm
    for j in 0..4 {
        m[0][j] = 1.0;
        m[1][a + j] = 1.0;
    }
    rhs[0] = 1.0;
    rhs[1] = 1.0;
    // consistency: observed outcome equals the potential outcome of the arm
    m[2][ALWAYS] = 1.0;
    m[2][IF_EXPOSED] = 1.0;
    rhs[2] = table.exposed_event / px;
    m[3][a + ALWAYS] = 1.0;
    m[3][a + IF_UNEXPOSED] = 1.0;
    rhs[3] = table.unexposed_event / pxp;
    // experimental margins as arm-weighted mixtures
    m[4][ALWAYS] = px;
    m[4][IF_EXPOSED] = px;
    m[4][a + ALWAYS] = pxp;
    m[4][a + IF_EXPOSED] = pxp;
    rhs[4] = exp.p_y_do_x;
    m[5][ALWAYS] = px;
    m[5][IF_UNEXPOSED] = px;
    m[5][a + ALWAYS] = pxp;
    m[5][a + IF_UNEXPOSED] = pxp;
    rhs[5] = exp.p_y_do_xprime;
    (m, rhs)
}

/// Gauss–Jordan elimination with partial pivoting.
fn parameterise(key: &StratumKey, mut m: [[f64; VARS]; 6], mut rhs: [f64; 6]) -> Result<Parameterisation> {
    const PIVOT_EPS: f64 = 1e-12;
    let rows = m.len();
    let mut pivots: Vec<(usize, usize)> = Vec::new();
    let mut row = 0;
    for col in 0..VARS {
        if row == rows {
            break;
        }
        let best = (row..rows)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .expect("non-empty range");
        if m[best][col].abs() < PIVOT_EPS {
            continue;
        }
        m.swap(row, best);
        rhs.swap(row, best);
        let p = m[row][col];
        for j in 0..VARS {
            m[row][j] /= p;
        }
        rhs[row] /= p;
        for i in 0..rows {
            if i != row && m[i][col] != 0.0 {
                let k = m[i][col];
                for j in 0..VARS {
                    m[i][j] -= k * m[row][j];
                }
                rhs[i] -= k * rhs[row];
            }
        }
        pivots.push((row, col));
        row += 1;
    }
    // leftover rows are 0 = rhs
    if rhs[row..].iter().any(|r| r.abs() > CONSTRAINT_TOL) {
        return Err(Error::EmptyPolytope(key.to_string()));
    }
    let free: Vec<usize> = (0..VARS).filter(|c| !pivots.iter().any(|(_, pc)| pc == c)).collect();
    if free.len() > 2 {
        return Err(Error::InvalidTable(format!(
            "stratum {key}: response-type polytope has {} free dimensions",
            free.len()
        )));
    }
    let mut vars = [Affine {
        constant: 0.0,
        coef: [0.0; 2],
    }; VARS];
    for (d, &c) in free.iter().enumerate() {
        vars[c].coef[d] = 1.0;
    }
    for &(r, c) in &pivots {
        let mut coef = [0.0; 2];
        for (d, &fc) in free.iter().enumerate() {
            coef[d] = -m[r][fc];
        }
        vars[c] = Affine { constant: rhs[r], coef };
    }
    Ok(Parameterisation { vars, dims: free.len() })
}

/// Min and max of the three target functionals over the feasible polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extrema {
    pub pn: [f64; 2],
    pub ps: [f64; 2],
    pub pns: [f64; 2],
    pub vertices: usize,
    pub grid_points: usize,
    /// Largest distance between grid and vertex extrema (`None` when no grid
    /// point was feasible).
    pub grid_gap: Option<f64>,
}

impl Extrema {
    pub fn get(&self, quantity: Quantity) -> [f64; 2] {
        match quantity {
            Quantity::PN => self.pn,
            Quantity::PS => self.ps,
            Quantity::PNS => self.pns,
        }
    }
}

struct Tracker {
    lo: [f64; 3],
    hi: [f64; 3],
    count: usize,
}

impl Tracker {
    fn new() -> Self {
        Self {
            lo: [f64::INFINITY; 3],
            hi: [f64::NEG_INFINITY; 3],
            count: 0,
        }
    }

    fn record(&mut self, values: [f64; 3]) {
        for i in 0..3 {
            self.lo[i] = self.lo[i].min(values[i]);
            self.hi[i] = self.hi[i].max(values[i]);
        }
        self.count += 1;
    }
}

/// Sweeps the response-type polygon of one stratum for all three quantities.
pub fn sweep(
    key: &StratumKey,
    table: &StratumTable,
    exp: &ExperimentalPair,
    resolution: f64,
    restriction: Restriction,
) -> Result<Extrema> {
    if !(resolution > 0.0 && resolution <= 0.1) {
        return Err(Error::InvalidArgument(format!(
            "resolution {resolution} outside (0, 0.1]"
        )));
    }
    let (m, rhs) = equality_system(table, exp);
    let param = parameterise(key, m, rhs)?;

    let mut constraints: Vec<Affine> = param.vars.to_vec();
    if restriction == Restriction::NoPrevention {
        for arm in [0, UNEXPOSED_ARM] {
            constraints.push(param.vars[arm + IF_UNEXPOSED].scaled(-1.0));
        }
    }
    let feasible = |f: [f64; 2]| constraints.iter().all(|g| g.at(f) >= -CONSTRAINT_TOL);

    let p_y_x = table.exposed_event / table.p_x();
    let p_yp_xp = table.unexposed_no_event / table.p_xp();
    if p_y_x <= 0.0 || p_yp_xp <= 0.0 {
        return Err(Error::InvalidTable(format!(
            "stratum {key}: PN/PS need P(y|x,s) > 0 and P(y'|x',s) > 0"
        )));
    }
    let pn = param.vars[IF_EXPOSED].scaled(1.0 / p_y_x);
    let ps = param.vars[UNEXPOSED_ARM + IF_EXPOSED].scaled(1.0 / p_yp_xp);
    let pns = param.vars[IF_EXPOSED]
        .scaled(table.p_x())
        .plus(&param.vars[UNEXPOSED_ARM + IF_EXPOSED].scaled(table.p_xp()));
    let targets = |f: [f64; 2]| [pn.at(f), ps.at(f), pns.at(f)];

    // vertices: points where `dims` constraints are tight
    let mut vertices = Tracker::new();
    let mut points = Vec::new();
    match param.dims {
        0 => points.push([0.0, 0.0]),
        1 => {
            for g in &constraints {
                if g.coef[0].abs() > 1e-12 {
                    points.push([-g.constant / g.coef[0], 0.0]);
                }
            }
        }
        _ => {
            for (i, g) in constraints.iter().enumerate() {
                for h in &constraints[i + 1..] {
                    let det = g.coef[0] * h.coef[1] - g.coef[1] * h.coef[0];
                    if det.abs() < 1e-12 {
                        continue;
                    }
                    let u = (-g.constant * h.coef[1] + h.constant * g.coef[1]) / det;
                    let v = (-h.constant * g.coef[0] + g.constant * h.coef[0]) / det;
                    points.push([u, v]);
                }
            }
        }
    }
    let mut bbox = [[f64::INFINITY, f64::NEG_INFINITY]; 2];
    for f in points.into_iter().filter(|f| feasible(*f)) {
        vertices.record(targets(f));
        for d in 0..2 {
            bbox[d][0] = bbox[d][0].min(f[d]);
            bbox[d][1] = bbox[d][1].max(f[d]);
        }
    }
    if vertices.count == 0 {
        return Err(Error::EmptyPolytope(key.to_string()));
    }

    // lattice points of the given resolution inside the vertex bounding box
    let mut grid = Tracker::new();
    let axis = |d: usize| -> Vec<f64> {
        if d >= param.dims {
            return vec![0.0];
        }
        let start = (bbox[d][0] / resolution).ceil() as i64;
        let end = (bbox[d][1] / resolution).floor() as i64;
        (start..=end).map(|i| i as f64 * resolution).collect()
    };
    let (us, vs) = (axis(0), axis(1));
    for &u in &us {
        for &v in &vs {
            if feasible([u, v]) {
                grid.record(targets([u, v]));
            }
        }
    }

    let grid_gap = (grid.count > 0).then(|| {
        (0..3)
            .map(|i| {
                (grid.lo[i] - vertices.lo[i])
                    .abs()
                    .max((grid.hi[i] - vertices.hi[i]).abs())
            })
            .fold(0.0, f64::max)
    });
    let pair = |i: usize| [vertices.lo[i].min(grid.lo[i]), vertices.hi[i].max(grid.hi[i])];
    Ok(Extrema {
        pn: pair(0),
        ps: pair(1),
        pns: pair(2),
        vertices: vertices.count,
        grid_points: grid.count,
        grid_gap,
    })
}

/// Extrema of one quantity over the feasible response-type distributions.
pub fn feasible_extrema(
    key: &StratumKey,
    stratum: &StratumTable,
    exp: &ExperimentalPair,
    quantity: Quantity,
    resolution: f64,
) -> Result<Interval> {
    feasible_extrema_restricted(key, stratum, exp, quantity, resolution, Restriction::None)
}

pub fn feasible_extrema_restricted(
    key: &StratumKey,
    stratum: &StratumTable,
    exp: &ExperimentalPair,
    quantity: Quantity,
    resolution: f64,
    restriction: Restriction,
) -> Result<Interval> {
    let [lower, upper] = sweep(key, stratum, exp, resolution, restriction)?.get(quantity);
    Ok(Interval {
        quantity,
        method: Method::PolytopeOracle { stratum: key.clone() },
        lower,
        upper,
        terms: Vec::new(),
    })
}

// ── Verification ──────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationEntry {
    pub stratum: StratumKey,
    pub quantity: Quantity,
    pub closed_form: [f64; 2],
    pub oracle: [f64; 2],
    pub discrepancy: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub tol: f64,
    pub resolution: f64,
    pub entries: Vec<VerificationEntry>,
    pub max_discrepancy: f64,
    pub passed: bool,
}

impl VerificationReport {
    pub fn failures(&self) -> impl Iterator<Item = &VerificationEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }
}

/// Compares conditional intervals (one per stratum and quantity, as produced
/// by [`crate::bounds::conditional_intervals`]) with the oracle extrema.
pub fn check_intervals(
    joint: &StratifiedJoint,
    exp: &ExperimentalQuantities,
    intervals: &[Interval],
    tol: f64,
    resolution: f64,
) -> Result<VerificationReport> {
    let mut entries = Vec::new();
    for (s, pair) in model::paired(joint, exp)? {
        let extrema = sweep(&s.key, &s.table, pair, resolution, Restriction::None)?;
        for interval in intervals {
            let matches = matches!(&interval.method, Method::Conditional { stratum } if *stratum == s.key);
            if !matches {
                continue;
            }
            let oracle = extrema.get(interval.quantity);
            let discrepancy = (interval.lower - oracle[0])
                .abs()
                .max((interval.upper - oracle[1]).abs());
            entries.push(VerificationEntry {
                stratum: s.key.clone(),
                quantity: interval.quantity,
                closed_form: [interval.lower, interval.upper],
                oracle,
                discrepancy,
                passed: discrepancy <= tol,
            });
        }
    }
    let max_discrepancy = entries.iter().map(|e| e.discrepancy).fold(0.0, f64::max);
    Ok(VerificationReport {
        tol,
        resolution,
        passed: entries.iter().all(|e| e.passed),
        entries,
        max_discrepancy,
    })
}

/// Cross-checks every conditional PN/PS/PNS box of the bounds module.
pub fn verify_bounds(
    joint: &StratifiedJoint,
    exp: &ExperimentalQuantities,
    tol: f64,
    resolution: f64,
) -> Result<VerificationReport> {
    let mut intervals = Vec::new();
    for q in Quantity::ALL {
        intervals.extend(crate::bounds::conditional_intervals(q, joint, exp)?);
    }
    check_intervals(joint, exp, &intervals, tol, resolution)
}
