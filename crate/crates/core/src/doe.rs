//! Orthogonal-array confirmation design and two-way ANOVA screening of
//! candidate features for energy sensitivity.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureId, FeatureMatrix};
use crate::linalg;
use crate::synthgen::{ConfirmationRun, CONFIRMATION_RUNS};

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Factor {
    Energy,
    Diameter,
    Mass,
    Location,
}

impl Factor {
    pub const ALL: [Factor; 4] = [Factor::Energy, Factor::Diameter, Factor::Mass, Factor::Location];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Factor::Energy => "energy",
            Factor::Diameter => "diameter",
            Factor::Mass => "mass",
            Factor::Location => "location",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub id: String,
    pub energy: f64,
    pub diameter_mm: f64,
    pub mass: f64,
    pub location_id: String,
    /// Coded levels in `Factor::ALL` order.
    pub coded: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestMatrix {
    pub rows: Vec<DesignRow>,
}

impl TestMatrix {
    /// Codes each factor's lower level as −1. Numeric factors compare by
    /// value, location by identifier.
    pub fn from_runs(runs: &[ConfirmationRun]) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::invalid("empty test matrix"));
        }
        fn coder(vals: Vec<f64>, name: &str) -> Result<impl Fn(f64) -> f64> {
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if vals.iter().any(|&v| v != lo && v != hi) || lo == hi {
                return Err(Error::invalid(format!("factor {name} must take exactly two levels")));
            }
            Ok(move |v: f64| if v == lo { -1.0 } else { 1.0 })
        }
        let e = coder(runs.iter().map(|r| r.energy).collect(), "energy")?;
        let d = coder(runs.iter().map(|r| r.diameter_mm).collect(), "diameter")?;
        let m = coder(runs.iter().map(|r| r.mass).collect(), "mass")?;
        let mut locs: Vec<&str> = runs.iter().map(|r| r.location_id).collect();
        locs.sort_unstable();
        locs.dedup();
        if locs.len() != 2 {
            return Err(Error::invalid("factor location must take exactly two levels"));
        }
        let rows = runs
            .iter()
            .map(|r| DesignRow {
                id: format!("ID{}", r.id),
                energy: r.energy,
                diameter_mm: r.diameter_mm,
                mass: r.mass,
                location_id: r.location_id.to_string(),
                coded: [
                    e(r.energy),
                    d(r.diameter_mm),
                    m(r.mass),
                    if r.location_id == locs[0] { -1.0 } else { 1.0 },
                ],
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn coded_column(&self, f: Factor) -> Vec<f64> {
        self.rows.iter().map(|r| r.coded[f.index()]).collect()
    }
}

pub fn build_confirmation_matrix() -> TestMatrix {
    TestMatrix::from_runs(&CONFIRMATION_RUNS).expect("confirmation runs form a two-level design")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    Intercept,
    Main(Factor),
    Interaction(Factor, Factor),
}

impl Term {
    fn column(&self, tm: &TestMatrix) -> Vec<f64> {
        match *self {
            Term::Intercept => vec![1.0; tm.len()],
            Term::Main(f) => tm.coded_column(f),
            Term::Interaction(a, b) => tm
                .coded_column(a)
                .iter()
                .zip(tm.coded_column(b))
                .map(|(x, y)| x * y)
                .collect(),
        }
    }
}

/// Intercept, four main effects and the energy interactions. In the L8
/// array the remaining pairwise interactions are aliased with these.
pub const DEFAULT_TERMS: [Term; 8] = [
    Term::Intercept,
    Term::Main(Factor::Energy),
    Term::Main(Factor::Diameter),
    Term::Main(Factor::Mass),
    Term::Main(Factor::Location),
    Term::Interaction(Factor::Energy, Factor::Diameter),
    Term::Interaction(Factor::Energy, Factor::Mass),
    Term::Interaction(Factor::Energy, Factor::Location),
];

#[derive(Debug, Clone, PartialEq)]
pub struct FactorialModel {
    pub terms: Vec<Term>,
    pub coefficients: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl FactorialModel {
    pub fn coefficient(&self, term: Term) -> Option<f64> {
        let swapped = match term {
            Term::Interaction(a, b) => Term::Interaction(b, a),
            t => t,
        };
        self.terms
            .iter()
            .position(|t| *t == term || *t == swapped)
            .map(|i| self.coefficients[i])
    }

    pub fn intercept(&self) -> Option<f64> {
        self.coefficient(Term::Intercept)
    }
}

pub fn fit_factorial_model(tm: &TestMatrix, y: &[f64]) -> Result<FactorialModel> {
    fit_factorial_model_with(tm, y, &DEFAULT_TERMS)
}

pub fn fit_factorial_model_with(tm: &TestMatrix, y: &[f64], terms: &[Term]) -> Result<FactorialModel> {
    if y.len() != tm.len() {
        return Err(Error::invalid(format!("{} responses for {} runs", y.len(), tm.len())));
    }
    let n = tm.len();
    let mut x = Array2::zeros((n, terms.len()));
    for (j, t) in terms.iter().enumerate() {
        for (i, v) in t.column(tm).into_iter().enumerate() {
            x[[i, j]] = v;
        }
    }
    let yv = Array1::from(y.to_vec());
    let beta = linalg::lstsq(x.view(), yv.view())?;
    let fitted = x.dot(&beta);
    let residuals = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    Ok(FactorialModel {
        terms: terms.to_vec(),
        coefficients: beta.to_vec(),
        fitted: fitted.to_vec(),
        residuals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub ss: f64,
    pub df: usize,
    pub ms: f64,
    /// `ms / ms_error`; `+∞` when the error term vanishes.
    pub f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    /// Row factor, `cells[a][_]`.
    pub a: Effect,
    /// Column factor, `cells[_][b]`.
    pub b: Effect,
    pub interaction: Effect,
    pub ss_error: f64,
    pub df_error: usize,
    pub ms_error: f64,
    pub ss_total: f64,
    pub f_crit: f64,
}

impl AnovaResult {
    pub fn significant(&self, e: &Effect) -> bool {
        e.f > self.f_crit
    }
}

/// Balanced two-way ANOVA with interaction on a 2×2 layout, `cells[a][b]`
/// holding the replicates of that combination.
pub fn two_way_anova(cells: &[[Vec<f64>; 2]; 2]) -> Result<AnovaResult> {
    let n = cells[0][0].len();
    if cells.iter().flatten().any(|c| c.len() != n) {
        return Err(Error::invalid("two-way ANOVA needs equal replicates per cell"));
    }
    if n < 2 {
        return Err(Error::invalid(format!("two-way ANOVA needs n >= 2 replicates, got {n}")));
    }
    if cells.iter().flatten().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite response in ANOVA cells"));
    }
    let nf = n as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let cell_mean = [
        [mean(&cells[0][0]), mean(&cells[0][1])],
        [mean(&cells[1][0]), mean(&cells[1][1])],
    ];
    let grand = (cell_mean[0][0] + cell_mean[0][1] + cell_mean[1][0] + cell_mean[1][1]) / 4.0;
    let a_mean = [
        (cell_mean[0][0] + cell_mean[0][1]) / 2.0,
        (cell_mean[1][0] + cell_mean[1][1]) / 2.0,
    ];
    let b_mean = [
        (cell_mean[0][0] + cell_mean[1][0]) / 2.0,
        (cell_mean[0][1] + cell_mean[1][1]) / 2.0,
    ];

    let ss_a = 2.0 * nf * a_mean.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_b = 2.0 * nf * b_mean.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_ab = 0.0;
    let mut ss_e = 0.0;
    let mut ss_t = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            ss_ab += nf * (cell_mean[i][j] - a_mean[i] - b_mean[j] + grand).powi(2);
            for v in &cells[i][j] {
                ss_e += (v - cell_mean[i][j]).powi(2);
                ss_t += (v - grand).powi(2);
            }
        }
    }

    let df_error = 4 * (n - 1);
    let ms_error = ss_e / df_error as f64;
    // Round-off floor relative to the total variation.
    let floor = 1e-12 * ss_t;
    let effect = |ss: f64| {
        let f = if ss_t == 0.0 || ss <= floor {
            0.0
        } else if ss_e <= floor {
            f64::INFINITY
        } else {
            ss / ms_error
        };
        Effect { ss, df: 1, ms: ss, f }
    };

    Ok(AnovaResult {
        a: effect(ss_a),
        b: effect(ss_b),
        interaction: effect(ss_ab),
        ss_error: ss_e,
        df_error,
        ms_error,
        ss_total: ss_t,
        f_crit: f_critical(1, df_error, ALPHA)?,
    })
}

/// Upper 5% points of F(df1, df2); rows df2 = 1..=30, columns df1 = 1..=5.
const F_TABLE_05: [[f64; 5]; 30] = [
    [161.4476, 199.5000, 215.7073, 224.5832, 230.1619],
    [18.5128, 19.0000, 19.1643, 19.2468, 19.2964],
    [10.1280, 9.5521, 9.2766, 9.1172, 9.0135],
    [7.7086, 6.9443, 6.5914, 6.3882, 6.2561],
    [6.6079, 5.7861, 5.4095, 5.1922, 5.0503],
    [5.9874, 5.1433, 4.7571, 4.5337, 4.3874],
    [5.5914, 4.7374, 4.3468, 4.1203, 3.9715],
    [5.3177, 4.4590, 4.0662, 3.8379, 3.6875],
    [5.1174, 4.2565, 3.8625, 3.6331, 3.4817],
    [4.9646, 4.1028, 3.7083, 3.4780, 3.3258],
    [4.8443, 3.9823, 3.5874, 3.3567, 3.2039],
    [4.7472, 3.8853, 3.4903, 3.2592, 3.1059],
    [4.6672, 3.8056, 3.4105, 3.1791, 3.0254],
    [4.6001, 3.7389, 3.3439, 3.1122, 2.9582],
    [4.5431, 3.6823, 3.2874, 3.0556, 2.9013],
    [4.4940, 3.6337, 3.2389, 3.0069, 2.8524],
    [4.4513, 3.5915, 3.1968, 2.9647, 2.8100],
    [4.4139, 3.5546, 3.1599, 2.9277, 2.7729],
    [4.3807, 3.5219, 3.1274, 2.8951, 2.7401],
    [4.3512, 3.4928, 3.0984, 2.8661, 2.7109],
    [4.3248, 3.4668, 3.0725, 2.8401, 2.6848],
    [4.3009, 3.4434, 3.0491, 2.8167, 2.6613],
    [4.2793, 3.4221, 3.0280, 2.7955, 2.6400],
    [4.2597, 3.4028, 3.0088, 2.7763, 2.6207],
    [4.2417, 3.3852, 2.9912, 2.7587, 2.6030],
    [4.2252, 3.3690, 2.9752, 2.7426, 2.5868],
    [4.2100, 3.3541, 2.9604, 2.7278, 2.5719],
    [4.1960, 3.3404, 2.9467, 2.7141, 2.5581],
    [4.1830, 3.3277, 2.9340, 2.7014, 2.5454],
    [4.1709, 3.3158, 2.9223, 2.6896, 2.5336],
];

pub fn f_critical(df1: usize, df2: usize, alpha: f64) -> Result<f64> {
    if !(1..=5).contains(&df1) || !(1..=30).contains(&df2) || (alpha - ALPHA).abs() > 1e-12 {
        return Err(Error::OutOfTable { df1, df2, alpha });
    }
    Ok(F_TABLE_05[df2 - 1][df1 - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combiner {
    #[default]
    Min,
    Max,
    Mean,
}

impl Combiner {
    pub fn as_str(&self) -> &'static str {
        match self {
            Combiner::Min => "min",
            Combiner::Max => "max",
            Combiner::Mean => "mean",
        }
    }

    pub fn combine(&self, f: &[f64]) -> f64 {
        match self {
            Combiner::Min => f.iter().copied().fold(f64::INFINITY, f64::min),
            Combiner::Max => f.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Combiner::Mean => f.iter().sum::<f64>() / f.len() as f64,
        }
    }
}

impl FromStr for Combiner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "min" => Ok(Combiner::Min),
            "max" => Ok(Combiner::Max),
            "mean" => Ok(Combiner::Mean),
            other => Err(Error::invalid(format!("unknown combiner `{other}`"))),
        }
    }
}

/// Energy crossed with each of the other factors.
pub const EVALUATION_FACTORS: [Factor; 3] = [Factor::Diameter, Factor::Mass, Factor::Location];

/// Row indices of each cell, `[energy level][factor level][replicate]`,
/// in ascending row order within a cell.
pub fn evaluation_cells(tm: &TestMatrix, factor: Factor) -> Result<[[Vec<usize>; 2]; 2]> {
    let mut cells: [[Vec<usize>; 2]; 2] = Default::default();
    for (i, r) in tm.rows.iter().enumerate() {
        let e = (r.coded[Factor::Energy.index()] > 0.0) as usize;
        let f = (r.coded[factor.index()] > 0.0) as usize;
        cells[e][f].push(i);
    }
    let n = cells[0][0].len();
    if cells.iter().flatten().any(|c| c.len() != n) || n < 2 {
        return Err(Error::invalid(format!("energy x {factor} cells are unbalanced")));
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSensitivity {
    pub id: FeatureId,
    /// Energy main-effect F of each evaluation, in `EVALUATION_FACTORS` order.
    pub f_per_evaluation: [f64; 3],
    pub f_reported: f64,
    pub energy_sensitive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub features: Vec<FeatureSensitivity>,
    pub f_crit: f64,
    pub combiner: Combiner,
}

impl SensitivityReport {
    pub fn get(&self, id: FeatureId) -> Option<&FeatureSensitivity> {
        self.features.iter().find(|f| f.id == id)
    }

    /// Energy-sensitive ids in table order.
    pub fn sensitive_ids(&self) -> Vec<FeatureId> {
        self.features.iter().filter(|f| f.energy_sensitive).map(|f| f.id).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let fmt_f = |v: f64| if v.is_infinite() { "inf".to_string() } else { format!("{v:.4}") };
        writeln!(out, "domain,id,F_calc,H0,energy_sensitive,F_eval1,F_eval2,F_eval3")?;
        for f in &self.features {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                f.id.domain().name(),
                f.id,
                fmt_f(f.f_reported),
                !f.energy_sensitive,
                if f.energy_sensitive { "Yes" } else { "No" },
                fmt_f(f.f_per_evaluation[0]),
                fmt_f(f.f_per_evaluation[1]),
                fmt_f(f.f_per_evaluation[2]),
            )?;
        }
        Ok(())
    }
}

pub fn evaluate_sensitivity(fm: &FeatureMatrix, tm: &TestMatrix) -> Result<SensitivityReport> {
    evaluate_sensitivity_with(fm, tm, Combiner::Min)
}

pub fn evaluate_sensitivity_with(fm: &FeatureMatrix, tm: &TestMatrix, combiner: Combiner) -> Result<SensitivityReport> {
    if fm.n_rows() != tm.len() {
        return Err(Error::invalid(format!(
            "{} feature rows for {} design runs",
            fm.n_rows(),
            tm.len()
        )));
    }
    if let Some((a, b)) = fm.row_ids.iter().zip(&tm.rows).find(|(a, r)| **a != r.id) {
        return Err(Error::invalid(format!("feature row `{a}` does not match design run `{}`", b.id)));
    }
    let layouts = EVALUATION_FACTORS
        .iter()
        .map(|&f| evaluation_cells(tm, f))
        .collect::<Result<Vec<_>>>()?;
    let f_crit = f_critical(1, 4 * (layouts[0][0][0].len() - 1), ALPHA)?;

    let mut features = Vec::with_capacity(fm.n_features());
    for (j, &id) in fm.ids.iter().enumerate() {
        let col = fm.values.column(j);
        let mut f_per = [0.0; 3];
        for (k, layout) in layouts.iter().enumerate() {
            let cells = layout.clone().map(|row| row.map(|idx| idx.iter().map(|&i| col[i]).collect()));
            f_per[k] = two_way_anova(&cells)?.a.f;
        }
        let f_reported = combiner.combine(&f_per);
        features.push(FeatureSensitivity {
            id,
            f_per_evaluation: f_per,
            f_reported,
            energy_sensitive: f_reported > f_crit,
        });
    }
    Ok(SensitivityReport { features, f_crit, combiner })
}
