//! Conjugate block Gibbs sampler for diagonalized Gaussian identity models.
//!
//! The model is y ~ N(Xb, 1/tau), with independent normal priors on the
//! coefficients: each smooth contributes a penalized group with precision
//! lambda_g and a null group with its own lambda, and the parametric
//! coefficients carry fixed precisions from the initialization rule. With
//! dgamma(.05,.005) priors on tau and every lambda, all three full
//! conditionals are available in closed form and one sweep per iteration
//! updates b, then tau, then each lambda group, in that order.

use crate::assemble::{Prefit, PriorGroup, SpPrior};
use crate::error::Error;
use crate::formula::{Family, Link};
use crate::numfmt::fmt_f64;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

pub const SP_SHAPE: f64 = 0.05;
pub const SP_RATE: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub n_iter: usize,
    pub burn: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            n_iter: 10_000,
            burn: 0,
            thin: 10,
            chains: 1,
            seed: 0,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<(), Error> {
        if self.n_iter == 0 || self.thin == 0 || self.chains == 0 {
            return Err(Error::Data(
                "sampler schedule must have positive n_iter, thin, and chains".to_string(),
            ));
        }
        if self.burn > self.n_iter {
            return Err(Error::Data(format!(
                "burn-in {} exceeds n_iter {}",
                self.burn, self.n_iter
            )));
        }
        Ok(())
    }

    /// Draws stored per chain: floor((n_iter - burn) / thin).
    pub fn stored_per_chain(&self) -> usize {
        (self.n_iter - self.burn) / self.thin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Monitor {
    B,
    Rho,
    Scale,
    Mu,
}

pub const DEFAULT_MONITORS: [Monitor; 3] = [Monitor::B, Monitor::Rho, Monitor::Scale];

/// Immutable per-model quantities shared by all chains.
#[derive(Debug)]
pub struct GibbsModel {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub groups: Vec<PriorGroup>,
    /// (coefficient index, fixed precision) for the parametric block.
    pub fixed_tau: Vec<(usize, f64)>,
    pub sp_count: usize,
    pub b_init: DVector<f64>,
    pub lambda_init: Vec<f64>,
    pub tau_init: f64,
}

impl GibbsModel {
    pub fn new(prefit: &Prefit) -> Result<Self, Error> {
        if prefit.family.family != Family::Gaussian || prefit.family.link != Link::Identity {
            return Err(Error::NotSampleable {
                reason: format!(
                    "family is {}({}); the conjugate sampler supports GAUSSIAN(IDENTITY) only",
                    prefit.family.family_name(),
                    prefit.family.link_name()
                ),
            });
        }
        if !prefit.options.diagonalize {
            return Err(Error::NotSampleable {
                reason: "the model was compiled without --diagonalize, so the smooth priors are \
                         multivariate normal"
                    .to_string(),
            });
        }
        if !matches!(prefit.options.sp_prior, SpPrior::Gamma) {
            return Err(Error::NotSampleable {
                reason: "the smoothing-parameter prior is log-uniform; conjugate lambda updates \
                         need the gamma prior"
                    .to_string(),
            });
        }
        let mut groups = Vec::new();
        for block in &prefit.terms {
            let Some(ranges) = block.diag else {
                return Err(Error::NotSampleable {
                    reason: format!(
                        "smooth {} keeps a multivariate normal prior (multi-penalty smooths \
                         cannot be diagonalized)",
                        block.label
                    ),
                });
            };
            groups.push(PriorGroup {
                lambda_index: block.lambda_offset,
                start: block.coef_offset,
                len: ranges.penalized,
            });
            if ranges.null > 0 {
                groups.push(PriorGroup {
                    lambda_index: block.lambda_offset + 1,
                    start: block.coef_offset + ranges.penalized,
                    len: ranges.null,
                });
            }
        }
        let fixed_tau = prefit
            .parametric_idx
            .iter()
            .zip(prefit.param_prior_tau.iter())
            .map(|(&i, &t)| (i, t))
            .collect();
        Ok(GibbsModel {
            x: prefit.x.clone(),
            y: prefit.y.clone(),
            xtx: prefit.x.transpose() * &prefit.x,
            xty: prefit.x.transpose() * &prefit.y,
            groups,
            fixed_tau,
            sp_count: prefit.sp_count,
            b_init: prefit.b_init.clone(),
            lambda_init: prefit.lambda_init.iter().copied().collect(),
            tau_init: prefit.tau_init.unwrap_or(1.0),
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

pub struct ChainState {
    pub b: DVector<f64>,
    pub lambda: Vec<f64>,
    pub tau: f64,
    pub rng: ChaCha8Rng,
}

impl ChainState {
    pub fn new(model: &GibbsModel, seed: u64) -> Self {
        ChainState {
            b: model.b_init.clone(),
            lambda: model.lambda_init.clone(),
            tau: model.tau_init,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

fn draw_gamma(rng: &mut ChaCha8Rng, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters are positive")
        .sample(rng)
}

/// Posterior precision of b at the current (lambda, tau).
fn beta_precision(model: &GibbsModel, lambda: &[f64], tau: f64) -> DMatrix<f64> {
    let mut q = &model.xtx * tau;
    for g in &model.groups {
        let lam = lambda[g.lambda_index];
        for i in g.start..g.start + g.len {
            q[(i, i)] += lam;
        }
    }
    for &(i, t) in &model.fixed_tau {
        q[(i, i)] += t;
    }
    q
}

/// Mean and Cholesky factor of the full conditional b ~ N(m, Q^{-1}),
/// Q = tau X'X + P(lambda), m = Q^{-1} tau X'y.
pub fn beta_conditional(
    model: &GibbsModel,
    lambda: &[f64],
    tau: f64,
) -> Result<(DVector<f64>, Cholesky<f64, Dyn>), Error> {
    let q = beta_precision(model, lambda, tau);
    let chol = Cholesky::new(q).ok_or_else(|| Error::Singular {
        context: " in the coefficient full conditional (propriety bug)".to_string(),
    })?;
    let mean = chol.solve(&(&model.xty * tau));
    Ok((mean, chol))
}

/// Mean and covariance of the b full conditional; test/oracle convenience.
pub fn beta_conditional_moments(
    model: &GibbsModel,
    lambda: &[f64],
    tau: f64,
) -> Result<(DVector<f64>, DMatrix<f64>), Error> {
    let (mean, chol) = beta_conditional(model, lambda, tau)?;
    Ok((mean, chol.inverse()))
}

pub fn update_beta(model: &GibbsModel, state: &mut ChainState) -> Result<(), Error> {
    let (mean, chol) = beta_conditional(model, &state.lambda, state.tau)?;
    let z = DVector::from_fn(model.p(), |_, _| {
        StandardNormal.sample(&mut state.rng)
    });
    // b = m + L^{-T} z gives covariance (L L')^{-1} = Q^{-1}
    let lt = chol.l().transpose();
    let u = lt
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Singular {
            context: " in the coefficient draw".to_string(),
        })?;
    state.b = mean + u;
    Ok(())
}

/// tau | b ~ Gamma(.05 + n/2, .005 + |y - Xb|^2 / 2); returns (shape, rate).
pub fn tau_conditional(n: usize, rss: f64) -> (f64, f64) {
    (SP_SHAPE + n as f64 / 2.0, SP_RATE + rss / 2.0)
}

pub fn update_tau(model: &GibbsModel, state: &mut ChainState) {
    let resid = &model.y - &model.x * &state.b;
    let (shape, rate) = tau_conditional(model.n(), resid.norm_squared());
    state.tau = draw_gamma(&mut state.rng, shape, rate);
}

/// lambda_g | b ~ Gamma(.05 + k_g/2, .005 + |b_g|^2 / 2); returns (shape, rate).
pub fn lambda_conditional(group_len: usize, bss: f64) -> (f64, f64) {
    (SP_SHAPE + group_len as f64 / 2.0, SP_RATE + bss / 2.0)
}

pub fn update_lambda(model: &GibbsModel, state: &mut ChainState, group: usize) {
    let g = &model.groups[group];
    let bss = state.b.rows(g.start, g.len).norm_squared();
    let (shape, rate) = lambda_conditional(g.len, bss);
    state.lambda[g.lambda_index] = draw_gamma(&mut state.rng, shape, rate);
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    pub chain: usize,
    pub iters: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

/// Thinned posterior draws of the monitored nodes, chain- and
/// iteration-indexed. Column order is fixed: b, rho, scale, mu.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStore {
    pub columns: Vec<String>,
    pub chains: Vec<ChainDraws>,
}

impl SampleStore {
    pub fn n_stored(&self) -> usize {
        self.chains.iter().map(|c| c.rows.len()).sum()
    }

    /// Column range of a vector node: requires node[1]..node[len] contiguous.
    pub fn node_range(&self, node: &str) -> Option<(usize, usize)> {
        let start = self
            .columns
            .iter()
            .position(|c| c == &format!("{node}[1]"))?;
        let mut len = 0;
        while start + len < self.columns.len()
            && self.columns[start + len] == format!("{node}[{}]", len + 1)
        {
            len += 1;
        }
        Some((start, len))
    }

    pub fn scalar_column(&self, node: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == node)
    }

    /// All stored values of one column, chains concatenated in index order.
    pub fn pooled(&self, col: usize) -> Vec<f64> {
        self.chains
            .iter()
            .flat_map(|c| c.rows.iter().map(move |r| r[col]))
            .collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(64 * self.n_stored());
        out.push_str("chain,iter");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for chain in &self.chains {
            for (it, row) in chain.iters.iter().zip(&chain.rows) {
                out.push_str(&chain.chain.to_string());
                out.push(',');
                out.push_str(&it.to_string());
                for v in row {
                    out.push(',');
                    out.push_str(&fmt_f64(*v));
                }
                out.push('\n');
            }
        }
        out
    }

    /// Read a samples CSV. Accepts our own layout and external exports:
    /// optional leading `chain` and `iter` columns, then node columns named
    /// `b[1]`, `rho[2]`, `scale`, `mu[7]`, ...
    pub fn from_csv_reader<R: std::io::Read>(reader: R, source: &str) -> Result<Self, Error> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Data(format!("{source}: {e}")))?
            .iter()
            .map(|h| h.to_string())
            .collect();
        let mut node_start = 0;
        let chain_col = (headers.first().map(String::as_str) == Some("chain")).then(|| {
            node_start += 1;
            0
        });
        let iter_col = (headers.get(node_start).map(String::as_str) == Some("iter")).then(|| {
            node_start += 1;
            node_start - 1
        });
        let columns: Vec<String> = headers[node_start..].to_vec();
        if columns.is_empty() {
            return Err(Error::Data(format!("{source}: no monitored columns")));
        }
        let mut chains: Vec<ChainDraws> = Vec::new();
        for (ridx, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::Data(format!("{source}: {e}")))?;
            let parse = |i: usize| -> Result<f64, Error> {
                record
                    .get(i)
                    .ok_or_else(|| Error::Data(format!("{source}: row {} too short", ridx + 2)))?
                    .parse()
                    .map_err(|_| {
                        Error::Data(format!(
                            "{source}: row {}, column {}: not a number",
                            ridx + 2,
                            i + 1
                        ))
                    })
            };
            let chain = match chain_col {
                Some(c) => parse(c)? as usize,
                None => 1,
            };
            let iter = match iter_col {
                Some(c) => parse(c)? as usize,
                None => ridx + 1,
            };
            let mut row = Vec::with_capacity(columns.len());
            for i in node_start..headers.len() {
                row.push(parse(i)?);
            }
            match chains.iter_mut().find(|c| c.chain == chain) {
                Some(c) => {
                    c.iters.push(iter);
                    c.rows.push(row);
                }
                None => chains.push(ChainDraws {
                    chain,
                    iters: vec![iter],
                    rows: vec![row],
                }),
            }
        }
        chains.sort_by_key(|c| c.chain);
        Ok(SampleStore { columns, chains })
    }
}

fn monitor_columns(monitors: &[Monitor], p: usize, sp: usize, n: usize) -> Vec<String> {
    let mut cols = Vec::new();
    if monitors.contains(&Monitor::B) {
        cols.extend((1..=p).map(|i| format!("b[{i}]")));
    }
    if monitors.contains(&Monitor::Rho) {
        cols.extend((1..=sp).map(|i| format!("rho[{i}]")));
    }
    if monitors.contains(&Monitor::Scale) {
        cols.push("scale".to_string());
    }
    if monitors.contains(&Monitor::Mu) {
        cols.extend((1..=n).map(|i| format!("mu[{i}]")));
    }
    cols
}

fn record_row(model: &GibbsModel, state: &ChainState, monitors: &[Monitor]) -> Vec<f64> {
    let mut row = Vec::new();
    if monitors.contains(&Monitor::B) {
        row.extend(state.b.iter().copied());
    }
    if monitors.contains(&Monitor::Rho) {
        row.extend(state.lambda.iter().map(|l| l.ln()));
    }
    if monitors.contains(&Monitor::Scale) {
        row.push(1.0 / state.tau);
    }
    if monitors.contains(&Monitor::Mu) {
        let mu = &model.x * &state.b;
        row.extend(mu.iter().copied());
    }
    row
}

fn run_chain(
    model: &GibbsModel,
    schedule: &Schedule,
    monitors: &[Monitor],
    chain_index: usize,
) -> Result<ChainDraws, Error> {
    let mut state = ChainState::new(model, schedule.seed + chain_index as u64);
    let mut draws = ChainDraws {
        chain: chain_index + 1,
        iters: Vec::with_capacity(schedule.stored_per_chain()),
        rows: Vec::with_capacity(schedule.stored_per_chain()),
    };
    for t in 1..=schedule.n_iter {
        update_beta(model, &mut state)?;
        update_tau(model, &mut state);
        for g in 0..model.groups.len() {
            update_lambda(model, &mut state, g);
        }
        if t > schedule.burn && (t - schedule.burn) % schedule.thin == 0 {
            draws.iters.push(t);
            draws.rows.push(record_row(model, &state, monitors));
        }
    }
    Ok(draws)
}

/// Run the conjugate Gibbs sampler. Chains run as independent parallel
/// replicas with seeds `seed + chain index`, merged in chain order;
/// identical inputs give identical stores byte for byte.
pub fn gibbs_run(
    prefit: &Prefit,
    schedule: &Schedule,
    monitors: &[Monitor],
) -> Result<SampleStore, Error> {
    schedule.validate()?;
    let model = GibbsModel::new(prefit)?;
    let columns = monitor_columns(monitors, model.p(), model.sp_count, model.n());

    let chains: Vec<ChainDraws> = if schedule.chains == 1 {
        vec![run_chain(&model, schedule, monitors, 0)?]
    } else {
        let model_ref = &model;
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..schedule.chains)
                .map(|c| scope.spawn(move || run_chain(model_ref, schedule, monitors, c)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("chain thread panicked"))
                .collect::<Result<Vec<_>, _>>()
        })?
    };

    Ok(SampleStore { columns, chains })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemble::{assemble_design, AssembleOptions};
    use crate::data::DataTable;
    use crate::formula::{parse_formula, validate_against_data, FamilySpec, Link};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn sine_prefit(n: usize, diagonalize: bool) -> Prefit {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let columns = vec!["y".to_string(), "x".to_string()];
        let rows = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) / n as f64;
                let noise: f64 = rng.gen::<f64>() - 0.5;
                let y = (std::f64::consts::TAU * x).sin() + 0.2 * noise;
                vec![Some(y), Some(x)]
            })
            .collect();
        let data = DataTable { columns, rows };
        let ast = parse_formula("y ~ s(x)").unwrap();
        let plan = validate_against_data(&ast, &data.columns, n, false).unwrap();
        let family = FamilySpec::new(Family::Gaussian, Link::Identity).unwrap();
        let options = AssembleOptions {
            diagonalize,
            ..AssembleOptions::default()
        };
        assemble_design(&plan, &data, family, options).unwrap()
    }

    #[test]
    fn store_counts_follow_the_schedule() {
        let prefit = sine_prefit(60, true);
        let schedule = Schedule {
            n_iter: 500,
            burn: 100,
            thin: 10,
            chains: 2,
            seed: 1,
        };
        let store = gibbs_run(&prefit, &schedule, &DEFAULT_MONITORS).unwrap();
        assert_eq!(store.chains.len(), 2);
        assert_eq!(store.chains[0].rows.len(), 40);
        assert_eq!(store.n_stored(), 80);
        assert_eq!(store.columns.len(), prefit.p() + prefit.sp_count + 1);
        // 10000/10 with no burn gives 1000 stored draws
        let schedule = Schedule {
            n_iter: 10_000,
            burn: 0,
            thin: 10,
            chains: 1,
            seed: 1,
        };
        assert_eq!(schedule.stored_per_chain(), 1000);
    }

    #[test]
    fn burn_equal_to_n_iter_stores_nothing() {
        let prefit = sine_prefit(40, true);
        let schedule = Schedule {
            n_iter: 50,
            burn: 50,
            thin: 5,
            chains: 1,
            seed: 3,
        };
        let store = gibbs_run(&prefit, &schedule, &DEFAULT_MONITORS).unwrap();
        assert_eq!(store.n_stored(), 0);
    }

    #[test]
    fn refuses_non_conjugate_models() {
        let prefit = sine_prefit(40, false);
        let err = gibbs_run(&prefit, &Schedule::default(), &DEFAULT_MONITORS).unwrap_err();
        match err {
            Error::NotSampleable { reason } => assert!(reason.contains("--diagonalize")),
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn refuses_log_uniform_sp_prior() {
        let mut prefit = sine_prefit(40, true);
        prefit.options.sp_prior = SpPrior::LogUniform {
            lo: -12.0,
            hi: 12.0,
        };
        let err = GibbsModel::new(&prefit).unwrap_err();
        assert!(matches!(err, Error::NotSampleable { .. }));
    }

    #[test]
    fn identity_design_has_halved_posterior_mean() {
        // X = I, tau = 1, prior precision 1 per coefficient: m = y/2
        let mut prefit = sine_prefit(40, true);
        let p = prefit.p();
        prefit.x = DMatrix::identity(p, p);
        prefit.y = DVector::from_fn(p, |i, _| (i as f64) - 2.0);
        prefit.param_prior_tau = DVector::from_element(1, 1.0);
        let model = GibbsModel::new(&prefit).unwrap();
        let lambda = vec![1.0; prefit.sp_count];
        let (mean, _) = beta_conditional(&model, &lambda, 1.0).unwrap();
        for i in 0..p {
            assert_abs_diff_eq!(mean[i], prefit.y[i] / 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn huge_lambda_shrinks_the_group_to_zero() {
        let prefit = sine_prefit(60, true);
        let model = GibbsModel::new(&prefit).unwrap();
        let mut state = ChainState::new(&model, 7);
        state.lambda = vec![1e12; prefit.sp_count];
        update_beta(&model, &mut state).unwrap();
        let g = &model.groups[0];
        for i in g.start..g.start + g.len {
            assert!(state.b[i].abs() < 1e-3, "b[{i}] = {}", state.b[i]);
        }
    }

    #[test]
    fn conditional_parameter_formulas() {
        let (shape, rate) = tau_conditional(100, 4.0);
        assert_eq!(shape, 0.05 + 50.0);
        assert_eq!(rate, 0.005 + 2.0);
        // no-data edge: the draw comes from the prior
        assert_eq!(tau_conditional(0, 0.0), (0.05, 0.005));
        let (shape, rate) = lambda_conditional(8, 2.0);
        assert_eq!(shape, 0.05 + 4.0);
        assert_eq!(rate, 0.005 + 1.0);
        // a singleton null-space group uses the same formula
        assert_eq!(lambda_conditional(1, 0.25), (0.05 + 0.5, 0.005 + 0.125));
        // zero coefficients leave only the prior rate
        assert_eq!(lambda_conditional(4, 0.0), (2.05, 0.005));
    }

    #[test]
    fn beta_conditional_moments_match_empirical_draws() {
        let prefit = sine_prefit(50, true);
        let model = GibbsModel::new(&prefit).unwrap();
        let lambda = vec![2.0; prefit.sp_count];
        let tau = 25.0;
        let (mean, cov) = beta_conditional_moments(&model, &lambda, tau).unwrap();

        let mut state = ChainState::new(&model, 11);
        state.lambda = lambda.clone();
        state.tau = tau;
        let n_draws = 20_000;
        let p = model.p();
        let mut sum = DVector::<f64>::zeros(p);
        let mut sumsq = DVector::<f64>::zeros(p);
        for _ in 0..n_draws {
            update_beta(&model, &mut state).unwrap();
            sum += &state.b;
            sumsq += state.b.map(|v| v * v);
        }
        let emp_mean = &sum / n_draws as f64;
        for j in 0..p {
            let var = sumsq[j] / n_draws as f64 - emp_mean[j] * emp_mean[j];
            let mc_se = (cov[(j, j)] / n_draws as f64).sqrt();
            assert!(
                (emp_mean[j] - mean[j]).abs() < 4.0 * mc_se,
                "mean of b[{j}]: {} vs {}",
                emp_mean[j],
                mean[j]
            );
            let var_se = cov[(j, j)] * (2.0 / (n_draws as f64 - 1.0)).sqrt();
            assert!(
                (var - cov[(j, j)]).abs() < 4.0 * var_se,
                "var of b[{j}]: {var} vs {}",
                cov[(j, j)]
            );
        }
    }

    #[test]
    fn tau_and_lambda_long_run_means_match_gamma_oracle() {
        let prefit = sine_prefit(50, true);
        let model = GibbsModel::new(&prefit).unwrap();
        let mut state = ChainState::new(&model, 13);
        let n_draws = 20_000;

        let resid = &model.y - &model.x * &state.b;
        let (shape, rate) = tau_conditional(model.n(), resid.norm_squared());
        let mut sum = 0.0;
        for _ in 0..n_draws {
            update_tau(&model, &mut state);
            sum += state.tau;
        }
        let analytic_mean = shape / rate;
        let analytic_sd = shape.sqrt() / rate;
        let mc_se = analytic_sd / (n_draws as f64).sqrt();
        assert!((sum / n_draws as f64 - analytic_mean).abs() < 4.0 * mc_se);

        let g = &model.groups[0];
        let bss = state.b.rows(g.start, g.len).norm_squared();
        let (shape, rate) = lambda_conditional(g.len, bss);
        let mut sum = 0.0;
        for _ in 0..n_draws {
            update_lambda(&model, &mut state, 0);
            sum += state.lambda[g.lambda_index];
        }
        let analytic_mean = shape / rate;
        let mc_se = (shape.sqrt() / rate) / (n_draws as f64).sqrt();
        assert!((sum / n_draws as f64 - analytic_mean).abs() < 4.0 * mc_se);
    }

    #[test]
    fn same_seed_gives_identical_stores() {
        let prefit = sine_prefit(60, true);
        let schedule = Schedule {
            n_iter: 300,
            burn: 50,
            thin: 5,
            chains: 2,
            seed: 42,
        };
        let a = gibbs_run(&prefit, &schedule, &DEFAULT_MONITORS).unwrap();
        let b = gibbs_run(&prefit, &schedule, &DEFAULT_MONITORS).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        let c = gibbs_run(
            &prefit,
            &Schedule {
                seed: 43,
                ..schedule
            },
            &DEFAULT_MONITORS,
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn geweke_style_stationarity_screen() {
        // well-specified simulated data: compare first-10% and last-50%
        // means of each monitored scalar on a thinned chain
        let prefit = sine_prefit(120, true);
        let schedule = Schedule {
            n_iter: 8_000,
            burn: 1_000,
            thin: 10,
            chains: 1,
            seed: 17,
        };
        let store = gibbs_run(&prefit, &schedule, &DEFAULT_MONITORS).unwrap();
        let rows = &store.chains[0].rows;
        let nd = rows.len();
        let first = &rows[..nd / 10];
        let last = &rows[nd / 2..];
        for col in 0..store.columns.len() {
            let m1: f64 = first.iter().map(|r| r[col]).sum::<f64>() / first.len() as f64;
            let m2: f64 = last.iter().map(|r| r[col]).sum::<f64>() / last.len() as f64;
            let v1: f64 = first.iter().map(|r| (r[col] - m1).powi(2)).sum::<f64>()
                / (first.len() - 1) as f64;
            let v2: f64 =
                last.iter().map(|r| (r[col] - m2).powi(2)).sum::<f64>() / (last.len() - 1) as f64;
            let se = (v1 / first.len() as f64 + v2 / last.len() as f64).sqrt();
            let z = (m1 - m2) / se.max(1e-300);
            assert!(
                z.abs() < 4.0,
                "column {} drifts: z = {z:.2}",
                store.columns[col]
            );
        }
    }

    #[test]
    fn csv_round_trip_preserves_the_store() {
        let prefit = sine_prefit(40, true);
        let schedule = Schedule {
            n_iter: 100,
            burn: 20,
            thin: 4,
            chains: 2,
            seed: 9,
        };
        let store = gibbs_run(&prefit, &schedule, &[Monitor::B, Monitor::Rho, Monitor::Scale])
            .unwrap();
        let csv = store.to_csv_string();
        let back = SampleStore::from_csv_reader(csv.as_bytes(), "test").unwrap();
        assert_eq!(back, store);
        let (start, len) = back.node_range("b").unwrap();
        assert_eq!((start, len), (0, prefit.p()));
        assert!(back.scalar_column("scale").is_some());
    }

    #[test]
    fn external_csv_without_chain_columns_is_accepted() {
        let csv = "b[1],b[2],scale\n0.1,0.2,1.5\n0.3,0.4,1.6\n";
        let store = SampleStore::from_csv_reader(csv.as_bytes(), "test").unwrap();
        assert_eq!(store.chains.len(), 1);
        assert_eq!(store.chains[0].iters, vec![1, 2]);
        assert_eq!(store.node_range("b"), Some((0, 2)));
    }

    #[test]
    fn mu_monitor_records_the_linear_predictor() {
        let prefit = sine_prefit(30, true);
        let schedule = Schedule {
            n_iter: 20,
            burn: 0,
            thin: 20,
            chains: 1,
            seed: 2,
        };
        let store = gibbs_run(
            &prefit,
            &schedule,
            &[Monitor::B, Monitor::Mu],
        )
        .unwrap();
        let row = &store.chains[0].rows[0];
        let p = prefit.p();
        let b = DVector::from_iterator(p, row[..p].iter().copied());
        let mu = &prefit.x * &b;
        for i in 0..prefit.n() {
            assert_abs_diff_eq!(row[p + i], mu[i], epsilon = 1e-12);
        }
    }
}
