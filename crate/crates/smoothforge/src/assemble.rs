//! Stack term blocks into the full design, compute initial values with one
//! penalized IRLS step, and set parametric prior precisions. The result is
//! the persistent [`Prefit`]: everything later stages need to generate model
//! code, sample, summarize, and predict without the original data.

use crate::basis::{
    absorb_centering, build_tensor_smooth, build_univariate_smooth, diagonalize,
    null_space_penalty, SmoothBlock,
};
use crate::data::DataTable;
use crate::error::Error;
use crate::formula::{Family, FamilySpec, FormulaAst, ModelPlan, SmoothKind};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpPrior {
    /// lambda[i] ~ dgamma(.05,.005), conjugate in the Gaussian setting.
    Gamma,
    /// rho[i] ~ dunif(lo, hi) on the log scale, lambda = exp(rho).
    LogUniform { lo: f64, hi: f64 },
}

pub const LOGUNIFORM_DEFAULT_LO: f64 = -12.0;
pub const LOGUNIFORM_DEFAULT_HI: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssembleOptions {
    pub diagonalize: bool,
    pub sp_prior: SpPrior,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions {
            diagonalize: false,
            sp_prior: SpPrior::Gamma,
        }
    }
}

/// The assembled model, persisted by `compile` and consumed by every later
/// subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct Prefit {
    pub formula: FormulaAst,
    pub family: FamilySpec,
    pub y: DVector<f64>,
    /// Prior weights: binomial denominators, ones otherwise.
    pub w: DVector<f64>,
    pub x: DMatrix<f64>,
    pub terms: Vec<SmoothBlock>,
    /// 0-based columns of the intercept and parametric coefficients.
    pub parametric_idx: Vec<usize>,
    pub sp_count: usize,
    pub b_init: DVector<f64>,
    pub lambda_init: DVector<f64>,
    /// Response precision initial value (GAUSSIAN only).
    pub tau_init: Option<f64>,
    /// One precision per parametric coefficient, from the 10*(|b|+se) rule.
    pub param_prior_tau: DVector<f64>,
    pub options: AssembleOptions,
    pub n_dropped: usize,
}

impl Prefit {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Sum of lambda-weighted penalties embedded at the smooth coefficient
    /// offsets (p x p). Diagonalized blocks contribute their group structure.
    pub fn penalty_precision(&self, lambda: &[f64]) -> DMatrix<f64> {
        assert_eq!(lambda.len(), self.sp_count);
        let p = self.p();
        let mut out = DMatrix::zeros(p, p);
        for block in &self.terms {
            let off = block.coef_offset;
            if let Some(ranges) = block.diag {
                let lam = lambda[block.lambda_offset];
                for i in 0..ranges.penalized {
                    out[(off + i, off + i)] += lam;
                }
                if ranges.null > 0 {
                    let lam0 = lambda[block.lambda_offset + 1];
                    for i in 0..ranges.null {
                        let j = off + ranges.penalized + i;
                        out[(j, j)] += lam0;
                    }
                }
            } else {
                for (j, pen) in block.penalties.iter().enumerate() {
                    let lam = lambda[block.lambda_offset + j];
                    let pc = block.p_c();
                    for a in 0..pc {
                        for b in 0..pc {
                            out[(off + a, off + b)] += lam * pen.s[(a, b)];
                        }
                    }
                }
            }
        }
        out
    }

    /// Horizontally concatenated penalty slab for one smooth: p_c x (m * p_c),
    /// column block j holding S_j. None for diagonalized blocks.
    pub fn packed_slab(&self, term: usize) -> Option<DMatrix<f64>> {
        let block = &self.terms[term];
        if block.diag.is_some() || block.penalties.is_empty() {
            return None;
        }
        let pc = block.p_c();
        let m = block.penalties.len();
        let mut slab = DMatrix::zeros(pc, m * pc);
        for (j, pen) in block.penalties.iter().enumerate() {
            slab.view_mut((0, j * pc), (pc, pc)).copy_from(&pen.s);
        }
        Some(slab)
    }
}

/// One penalized IRLS step's output: coefficient starting values and the
/// standard errors that scale the vague parametric priors.
#[derive(Debug, Clone, PartialEq)]
pub struct InitReport {
    pub b_init: DVector<f64>,
    pub se_init: DVector<f64>,
    pub eta0: DVector<f64>,
    pub mu0: DVector<f64>,
    pub notes: Vec<String>,
}

/// Family-specific data initialization of the mean, guarded away from the
/// support boundary.
fn init_mu(family: FamilySpec, y: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    match family.family {
        Family::Gaussian => y.clone(),
        Family::Gamma | Family::Poisson => {
            let ybar = y.mean();
            DVector::from_fn(y.len(), |i, _| y[i].max(ybar / 10.0) + 0.1)
        }
        Family::Binomial => DVector::from_fn(y.len(), |i, _| {
            (w[i] * y[i] + 0.5) / (w[i] + 1.0)
        }),
    }
}

pub fn assemble_design(
    plan: &ModelPlan,
    data: &DataTable,
    family: FamilySpec,
    options: AssembleOptions,
) -> Result<Prefit, Error> {
    let ast = &plan.ast;

    let mut used: Vec<usize> = vec![plan.response_col];
    used.extend(&plan.parametric_cols);
    for cols in &plan.smooth_cols {
        used.extend(cols);
    }
    used.sort_unstable();
    used.dedup();

    let keep: Vec<usize> = (0..data.n_rows())
        .filter(|&i| used.iter().all(|&c| data.rows[i][c].is_some()))
        .collect();
    let n_dropped = data.n_rows() - keep.len();
    if keep.is_empty() {
        return Err(Error::EmptyData);
    }
    let n = keep.len();
    let col = |c: usize| -> Vec<f64> { keep.iter().map(|&i| data.rows[i][c].unwrap()).collect() };

    let y_vals = col(plan.response_col);
    match family.family {
        Family::Binomial => {
            for (row, &v) in y_vals.iter().enumerate() {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::NonBinaryResponse { value: v, row: row + 1 });
                }
            }
        }
        Family::Gamma => {
            if let Some((row, &v)) = y_vals.iter().enumerate().find(|(_, &v)| v <= 0.0) {
                return Err(Error::Data(format!(
                    "family GAMMA requires a positive response; found {v} at row {}",
                    row + 1
                )));
            }
        }
        Family::Poisson => {
            if let Some((row, &v)) = y_vals.iter().enumerate().find(|(_, &v)| v < 0.0) {
                return Err(Error::Data(format!(
                    "family POISSON requires a nonnegative response; found {v} at row {}",
                    row + 1
                )));
            }
        }
        Family::Gaussian => {}
    }
    let y = DVector::from_vec(y_vals);
    let w = DVector::from_element(n, 1.0);

    // Build, center, and reparameterize each smooth block.
    let mut blocks: Vec<SmoothBlock> = Vec::with_capacity(ast.smooths.len());
    let mut lambda_cursor = 0usize;
    for (spec, cols) in ast.smooths.iter().zip(&plan.smooth_cols) {
        let mut block = match spec.kind {
            SmoothKind::S => {
                build_univariate_smooth(&col(cols[0]), spec.k[0], &spec.label(), &spec.variables[0])?
            }
            SmoothKind::Te => build_tensor_smooth(
                &col(cols[0]),
                &col(cols[1]),
                (spec.k[0], spec.k[1]),
                &spec.label(),
                (&spec.variables[0], &spec.variables[1]),
            )?,
        };
        block = absorb_centering(block)?;
        if options.diagonalize && block.penalties.len() == 1 {
            block = diagonalize(block)?;
            let ranges = block.diag.unwrap();
            block.lambda_count = 1 + usize::from(ranges.null > 0);
        } else {
            let s0 = null_space_penalty(&block.penalties, &format!("{}:null", block.label));
            if s0.rank > 0 {
                block.penalties.push(s0);
            }
            block.lambda_count = block.penalties.len();
        }
        block.lambda_offset = lambda_cursor;
        lambda_cursor += block.lambda_count;
        blocks.push(block);
    }
    let sp_count = lambda_cursor;

    // Assemble the full design: intercept, parametric columns, smooth blocks.
    let n_param = plan.parametric_cols.len();
    let p = 1 + n_param + blocks.iter().map(|b| b.p_c()).sum::<usize>();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        x[(i, 0)] = 1.0;
    }
    for (j, &c) in plan.parametric_cols.iter().enumerate() {
        let vals = col(c);
        for i in 0..n {
            x[(i, 1 + j)] = vals[i];
        }
    }
    let mut offset = 1 + n_param;
    for block in &mut blocks {
        block.coef_offset = offset;
        x.view_mut((0, offset), (n, block.p_c())).copy_from(&block.x);
        offset += block.p_c();
    }
    debug_assert_eq!(offset, p);

    let parametric_idx: Vec<usize> = (0..=n_param).collect();
    let mut prefit = Prefit {
        formula: ast.clone(),
        family,
        y,
        w,
        x,
        terms: blocks,
        parametric_idx,
        sp_count,
        b_init: DVector::zeros(p),
        lambda_init: DVector::from_element(sp_count, 1.0),
        tau_init: None,
        param_prior_tau: DVector::zeros(0),
        options,
        n_dropped,
    };

    let report = pirls_init(&prefit)?;
    prefit.param_prior_tau = parametric_prior_precision(
        &report.b_init,
        &report.se_init,
        &prefit.parametric_idx,
    );
    if family.family == Family::Gaussian {
        let rss = (&prefit.y - &prefit.x * &report.b_init).norm_squared();
        prefit.tau_init = Some(if rss > 0.0 { n as f64 / rss } else { 1.0 });
    }
    prefit.b_init = report.b_init;

    Ok(prefit)
}

/// One step of penalized iteratively re-weighted least squares at
/// `prefit.lambda_init`, giving starting values compatible with the initial
/// smoothing parameters.
pub fn pirls_init(prefit: &Prefit) -> Result<InitReport, Error> {
    let family = prefit.family;
    let n = prefit.n();
    let p = prefit.p();
    let mu0 = init_mu(family, &prefit.y, &prefit.w);
    let eta0 = DVector::from_fn(n, |i, _| family.link_eval(mu0[i]));
    let z = DVector::from_fn(n, |i, _| {
        eta0[i] + (prefit.y[i] - mu0[i]) * family.link_deriv(mu0[i])
    });
    let wt = DVector::from_fn(n, |i, _| family.irls_weight(mu0[i], prefit.w[i]));

    let mut xw = prefit.x.clone();
    for i in 0..n {
        let wi = wt[i];
        for j in 0..p {
            xw[(i, j)] *= wi;
        }
    }
    let xtwx = prefit.x.transpose() * &xw;
    let lambda: Vec<f64> = prefit.lambda_init.iter().copied().collect();
    let a = xtwx + prefit.penalty_precision(&lambda);
    let chol = nalgebra::Cholesky::new(a).ok_or_else(|| Error::Singular {
        context: " in the penalized IRLS initialization".to_string(),
    })?;
    let xtwz = xw.transpose() * &z;
    let b = chol.solve(&xtwz);
    let a_inv = chol.inverse();
    let se = DVector::from_fn(p, |j, _| a_inv[(j, j)].max(0.0).sqrt());

    if b.iter().chain(se.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Data(
            "non-finite values in the IRLS initialization".to_string(),
        ));
    }

    Ok(InitReport {
        b_init: b,
        se_init: se,
        eta0,
        mu0,
        notes: vec![format!(
            "one penalized IRLS step, family {}({}), all smoothing parameters at 1",
            family.family_name(),
            family.link_name()
        )],
    })
}

/// Vague parametric prior precisions: sd = 10(|b| + se), tau = sd^{-2}.
pub fn parametric_prior_precision(
    b_init: &DVector<f64>,
    se_init: &DVector<f64>,
    parametric_idx: &[usize],
) -> DVector<f64> {
    DVector::from_fn(parametric_idx.len(), |i, _| {
        let j = parametric_idx[i];
        let sd = 10.0 * (b_init[j].abs() + se_init[j]);
        1.0 / (sd * sd)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum DumpValue {
    Int(usize),
    Real(f64),
    Vector(DVector<f64>),
    Matrix(DMatrix<f64>),
}

/// Coefficient range sharing one precision, for codegen and the internal
/// sampler. `lambda_index` is 0-based into the smoothing-parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriorGroup {
    pub lambda_index: usize,
    pub start: usize,
    pub len: usize,
}

/// The named-array mapping written to the data dump, plus the prior group
/// index ranges that replace penalty slabs for diagonalized smooths.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerData {
    pub entries: Vec<(String, DumpValue)>,
    pub prior_groups: Vec<PriorGroup>,
}

pub fn pack_sampler_data(prefit: &Prefit) -> SamplerData {
    let mut entries = Vec::new();
    entries.push(("n".to_string(), DumpValue::Int(prefit.n())));
    entries.push(("y".to_string(), DumpValue::Vector(prefit.y.clone())));
    if prefit.family.family == Family::Binomial {
        entries.push(("w".to_string(), DumpValue::Vector(prefit.w.clone())));
    }
    entries.push(("X".to_string(), DumpValue::Matrix(prefit.x.clone())));
    entries.push((
        "zero".to_string(),
        DumpValue::Vector(DVector::zeros(prefit.p())),
    ));
    let mut prior_groups = Vec::new();
    for (i, block) in prefit.terms.iter().enumerate() {
        if let Some(ranges) = block.diag {
            prior_groups.push(PriorGroup {
                lambda_index: block.lambda_offset,
                start: block.coef_offset,
                len: ranges.penalized,
            });
            if ranges.null > 0 {
                prior_groups.push(PriorGroup {
                    lambda_index: block.lambda_offset + 1,
                    start: block.coef_offset + ranges.penalized,
                    len: ranges.null,
                });
            }
        } else if let Some(slab) = prefit.packed_slab(i) {
            entries.push((format!("S{}", i + 1), DumpValue::Matrix(slab)));
        }
    }
    SamplerData {
        entries,
        prior_groups,
    }
}
