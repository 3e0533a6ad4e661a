//! Gaussian linear mixed-effects machinery on residualized data.
//!
//! The working model for a group is `r_y = r_x β + Z b + ε` with
//! `Cov(r_y) = σ² V`, `V = Z Σ Zᵀ + I`. Up to constants the group
//! log-likelihood is
//!
//! ```text
//! ℓ_i(θ) = -(n_i/2) log σ² - ½ log det V_i - (1/2σ²) rᵀ V_i⁻¹ r,   r = r_y - r_x β
//! ```
//!
//! Parameter vectors are laid out as `[β (d), σ², Σ entries]`, where the Σ
//! entries are the lower triangle in row order: (0,0), (1,0), (1,1), (2,0), ...
//! The score is the gradient of `ℓ` in those coordinates; an off-diagonal
//! entry moves both `Σ[k,l]` and `Σ[l,k]`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;

use crate::data::Theta;
use crate::error::{Error, Result};

/// Lower bound on σ̂² when residuals are (numerically) zero.
pub const SIGMA2_FLOOR: f64 = 1e-12;

/// Residualized observations of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupResiduals {
    pub group_id: String,
    pub fold: Option<usize>,
    pub r_x: DMatrix<f64>,
    pub r_y: DVector<f64>,
    pub z: DMatrix<f64>,
}

impl GroupResiduals {
    pub fn n_obs(&self) -> usize {
        self.r_y.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    groups: Vec<GroupResiduals>,
    d: usize,
    q: usize,
    n_total: usize,
}

impl ResidualSet {
    pub fn new(groups: Vec<GroupResiduals>) -> Result<Self> {
        let first = groups
            .first()
            .ok_or(Error::TooFewObservations { rows: 0, needed: 1 })?;
        let (d, q) = (first.r_x.ncols(), first.z.ncols());
        for g in &groups {
            let n = g.r_y.len();
            let bad = |detail: String| Error::DimensionMismatch {
                group: g.group_id.clone(),
                detail,
            };
            if n == 0 {
                return Err(bad("no observations".into()));
            }
            if g.r_x.shape() != (n, d) || g.z.shape() != (n, q) {
                return Err(bad(format!(
                    "residual shapes r_x {:?}, z {:?} inconsistent with n = {n}, d = {d}, q = {q}",
                    g.r_x.shape(),
                    g.z.shape()
                )));
            }
            for (field, data) in [("r_x", g.r_x.as_slice()), ("r_y", g.r_y.as_slice()), ("z", g.z.as_slice())] {
                if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        group: g.group_id.clone(),
                        field,
                        row: idx % n,
                        col: idx / n,
                    });
                }
            }
        }
        let n_total = groups.iter().map(GroupResiduals::n_obs).sum();
        Ok(ResidualSet {
            groups,
            d,
            q,
            n_total,
        })
    }

    pub fn groups(&self) -> &[GroupResiduals] {
        &self.groups
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    /// Length of the score vector: d + 1 + q(q+1)/2.
    pub fn n_params(&self) -> usize {
        self.d + 1 + self.q * (self.q + 1) / 2
    }
}

/// (row, col) of each free Σ entry, lower triangle in row order.
pub fn sigma_entries(q: usize) -> Vec<(usize, usize)> {
    (0..q).flat_map(|k| (0..=k).map(move |l| (k, l))).collect()
}

/// V = Z Σ Zᵀ + I.
pub fn build_v(z: &DMatrix<f64>, sigma_mat: &DMatrix<f64>) -> DMatrix<f64> {
    let zs = z * sigma_mat;
    let mut v = &zs * z.transpose();
    let n = v.nrows();
    for i in 0..n {
        v[(i, i)] += 1.0;
        for j in 0..i {
            let avg = 0.5 * (v[(i, j)] + v[(j, i)]);
            v[(i, j)] = avg;
            v[(j, i)] = avg;
        }
    }
    v
}

/// One group's V factorization and the solves every quantity here needs.
struct Prepared {
    n: usize,
    logdet: f64,
    chol: Cholesky<f64, Dyn>,
    vinv_rx: DMatrix<f64>,
}

fn prepare(g: &GroupResiduals, sigma_mat: &DMatrix<f64>) -> Result<Prepared> {
    let v = build_v(&g.z, sigma_mat);
    let chol = v.cholesky().ok_or_else(|| {
        Error::Numerical(format!("V is not positive definite for group '{}'", g.group_id))
    })?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let vinv_rx = chol.solve(&g.r_x);
    Ok(Prepared {
        n: g.n_obs(),
        logdet,
        chol,
        vinv_rx,
    })
}

fn prepare_all(res: &ResidualSet, sigma_mat: &DMatrix<f64>) -> Result<Vec<Prepared>> {
    if sigma_mat.shape() != (res.q, res.q) {
        return Err(Error::InvalidConfig(format!(
            "Sigma is {:?}, expected {q}x{q}",
            sigma_mat.shape(),
            q = res.q
        )));
    }
    res.groups
        .par_iter()
        .map(|g| prepare(g, sigma_mat))
        .collect()
}

fn check_theta(res: &ResidualSet, theta: &Theta) -> Result<()> {
    if theta.beta.len() != res.d {
        return Err(Error::InvalidConfig(format!(
            "beta has length {}, expected {}",
            theta.beta.len(),
            res.d
        )));
    }
    Ok(())
}

/// Σ_i ℓ_i(θ), dropping additive constants.
pub fn log_likelihood(res: &ResidualSet, theta: &Theta) -> Result<f64> {
    check_theta(res, theta)?;
    let prepared = prepare_all(res, &theta.sigma_mat)?;
    let terms: Vec<f64> = res
        .groups
        .iter()
        .zip(&prepared)
        .map(|(g, p)| {
            let r = &g.r_y - &g.r_x * &theta.beta;
            let quad = r.dot(&p.chol.solve(&r));
            -0.5 * p.n as f64 * theta.sigma2.ln() - 0.5 * p.logdet - quad / (2.0 * theta.sigma2)
        })
        .collect();
    Ok(terms.iter().sum())
}

/// Per-group score pieces; summed in group order by the callers.
struct ScoreParts {
    beta: DVector<f64>,
    quad: f64,
    /// −½ ZᵀV⁻¹Z + (1/2σ²) (Zᵀu)(Zᵀu)ᵀ with u = V⁻¹r
    sigma_grad: DMatrix<f64>,
}

fn score_parts(g: &GroupResiduals, p: &Prepared, beta: &DVector<f64>, sigma2: f64) -> ScoreParts {
    let r = &g.r_y - &g.r_x * beta;
    let u = p.chol.solve(&r);
    let quad = r.dot(&u);
    let beta_part = g.r_x.transpose() * &u / sigma2;
    let ztu = g.z.transpose() * &u;
    let ztvz = g.z.transpose() * p.chol.solve(&g.z);
    let sigma_grad = ztvz * -0.5 + (&ztu * ztu.transpose()) / (2.0 * sigma2);
    ScoreParts {
        beta: beta_part,
        quad,
        sigma_grad,
    }
}

fn assemble_score(d: usize, q: usize, n_total: usize, sigma2: f64, parts: &[ScoreParts]) -> DVector<f64> {
    let mut beta = DVector::zeros(d);
    let mut quad = 0.0;
    let mut sigma_grad = DMatrix::zeros(q, q);
    for part in parts {
        beta += &part.beta;
        quad += part.quad;
        sigma_grad += &part.sigma_grad;
    }
    pack_score(&beta, -(n_total as f64) / (2.0 * sigma2) + quad / (2.0 * sigma2 * sigma2), &sigma_grad)
}

fn pack_score(beta: &DVector<f64>, sigma2: f64, sigma_grad: &DMatrix<f64>) -> DVector<f64> {
    let q = sigma_grad.nrows();
    let mut out = Vec::with_capacity(beta.len() + 1 + q * (q + 1) / 2);
    out.extend(beta.iter());
    out.push(sigma2);
    for (k, l) in sigma_entries(q) {
        let factor = if k == l { 1.0 } else { 2.0 };
        out.push(factor * sigma_grad[(k, l)]);
    }
    DVector::from_vec(out)
}

/// ∇_θ Σ_i ℓ_i(θ), laid out as `[β, σ², Σ lower triangle]`.
pub fn score(res: &ResidualSet, theta: &Theta) -> Result<DVector<f64>> {
    check_theta(res, theta)?;
    let prepared = prepare_all(res, &theta.sigma_mat)?;
    let parts: Vec<ScoreParts> = res
        .groups
        .iter()
        .zip(&prepared)
        .map(|(g, p)| score_parts(g, p, &theta.beta, theta.sigma2))
        .collect();
    Ok(assemble_score(res.d, res.q, res.n_total, theta.sigma2, &parts))
}

/// Σ_i R_Xᵀ V_i⁻¹ R_X and Σ_i R_Xᵀ V_i⁻¹ R_Y, summed in group order.
fn gls_normal(res: &ResidualSet, prepared: &[Prepared]) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(res.d, res.d);
    let mut b = DVector::zeros(res.d);
    for (g, p) in res.groups.iter().zip(prepared) {
        a += g.r_x.transpose() * &p.vinv_rx;
        b += p.vinv_rx.transpose() * &g.r_y;
    }
    symmetrize(&mut a);
    (a, b)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

fn numerical_rank(a: &DMatrix<f64>) -> usize {
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    if max == 0.0 {
        return 0;
    }
    let tol = max * a.nrows() as f64 * 1e-12;
    eig.eigenvalues.iter().filter(|&&l| l > tol).count()
}

fn checked_cholesky(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let rank = numerical_rank(a);
    if rank < a.nrows() {
        return Err(Error::SingularDesign {
            rank,
            dim: a.nrows(),
        });
    }
    a.clone().cholesky().ok_or(Error::SingularDesign {
        rank: a.nrows() - 1,
        dim: a.nrows(),
    })
}

/// Generalized least squares β̂ = (Σ R_Xᵀ V⁻¹ R_X)⁻¹ Σ R_Xᵀ V⁻¹ R_Y.
///
/// σ² cancels from the normal equations; it is accepted for symmetry with
/// the other θ-level operations and must be positive.
pub fn solve_beta_gls(res: &ResidualSet, sigma2: f64, sigma_mat: &DMatrix<f64>) -> Result<DVector<f64>> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma2 must be positive, got {sigma2}")));
    }
    let prepared = prepare_all(res, sigma_mat)?;
    let (a, b) = gls_normal(res, &prepared);
    Ok(checked_cholesky(&a)?.solve(&b))
}

/// T̂₀ = (1/N_T) Σ_i R_Xᵀ V_i⁻¹ R_X.
pub fn estimate_t0(res: &ResidualSet, sigma_mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let prepared = prepare_all(res, sigma_mat)?;
    let (a, _) = gls_normal(res, &prepared);
    Ok(a / res.n_total as f64)
}

/// Ĉov(β̂) = σ̂² (Σ_i R_Xᵀ V̂_i⁻¹ R_X)⁻¹ = σ̂² T̂₀⁻¹ / N_T.
pub fn beta_covariance(res: &ResidualSet, sigma2: f64, sigma_mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let prepared = prepare_all(res, sigma_mat)?;
    let (a, _) = gls_normal(res, &prepared);
    covariance_from_normal(&a, sigma2)
}

fn covariance_from_normal(a: &DMatrix<f64>, sigma2: f64) -> Result<DMatrix<f64>> {
    let chol = checked_cholesky(a)?;
    let mut cov = chol.inverse() * sigma2;
    symmetrize(&mut cov);
    Ok(cov)
}

/// Optimizer settings for [`fit_variance_components_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmmOptions {
    pub max_iter: usize,
    /// Converged once ‖score‖ ≤ `score_tol_per_obs · N_T`.
    pub score_tol_per_obs: f64,
    pub step_tol: f64,
    /// Initial Σ = `init_sigma_scale · I`.
    pub init_sigma_scale: f64,
}

impl Default for LmmOptions {
    fn default() -> Self {
        LmmOptions {
            max_iter: 200,
            score_tol_per_obs: 1e-6,
            step_tol: 1e-10,
            init_sigma_scale: 0.1,
        }
    }
}

/// Maximum-likelihood fit of θ on one fold's residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct LmmFit {
    pub theta: Theta,
    pub loglik: f64,
    pub t0_hat: DMatrix<f64>,
    pub beta_cov: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub score_norm: f64,
    pub n_obs: usize,
    pub warnings: Vec<String>,
}

pub fn fit_variance_components(res: &ResidualSet) -> Result<LmmFit> {
    fit_variance_components_with(res, &LmmOptions::default())
}

/// Lower-triangular L with log-parameterized diagonal, Σ = L Lᵀ.
fn unpack_cholesky(phi: &[f64], q: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(q, q);
    for (&(k, m), &p) in sigma_entries(q).iter().zip(phi) {
        l[(k, m)] = if k == m { p.exp() } else { p };
    }
    l
}

fn sigma_from_phi(phi: &[f64], q: usize) -> DMatrix<f64> {
    let l = unpack_cholesky(phi, q);
    let mut s = &l * l.transpose();
    symmetrize(&mut s);
    s
}

/// Likelihood with β and σ² profiled out, at Σ = Σ(φ).
struct Profile {
    sigma_mat: DMatrix<f64>,
    beta: DVector<f64>,
    sigma2: f64,
    floored: bool,
    loglik: f64,
    /// gradient of the profiled likelihood with respect to φ
    grad_phi: DVector<f64>,
    score: DVector<f64>,
    normal: DMatrix<f64>,
}

fn profile(res: &ResidualSet, phi: &[f64]) -> Result<Profile> {
    let q = res.q;
    let sigma_mat = sigma_from_phi(phi, q);
    let prepared = prepare_all(res, &sigma_mat)?;
    let (normal, b) = gls_normal(res, &prepared);
    let beta = checked_cholesky(&normal)?.solve(&b);

    let n_total = res.n_total as f64;
    let rss: f64 = res
        .groups
        .iter()
        .zip(&prepared)
        .map(|(g, p)| {
            let r = &g.r_y - &g.r_x * &beta;
            r.dot(&p.chol.solve(&r))
        })
        .sum();
    let floored = rss / n_total < SIGMA2_FLOOR;
    let sigma2 = (rss / n_total).max(SIGMA2_FLOOR);
    let logdet: f64 = prepared.iter().map(|p| p.logdet).sum();
    let loglik = -0.5 * n_total * sigma2.ln() - 0.5 * logdet - rss / (2.0 * sigma2);

    let parts: Vec<ScoreParts> = res
        .groups
        .iter()
        .zip(&prepared)
        .map(|(g, p)| score_parts(g, p, &beta, sigma2))
        .collect();
    let mut sigma_grad = DMatrix::zeros(q, q);
    for part in &parts {
        sigma_grad += &part.sigma_grad;
    }
    let score = assemble_score(res.d, q, res.n_total, sigma2, &parts);

    // chain rule through Σ = L Lᵀ: ∂ℓ/∂L = 2 G L, and L_kk = exp(φ)
    let l = unpack_cholesky(phi, q);
    let dl = (&sigma_grad * &l) * 2.0;
    let grad_phi = DVector::from_iterator(
        phi.len(),
        sigma_entries(q)
            .into_iter()
            .map(|(k, m)| if k == m { dl[(k, m)] * l[(k, m)] } else { dl[(k, m)] }),
    );

    Ok(Profile {
        sigma_mat,
        beta,
        sigma2,
        floored,
        loglik,
        grad_phi,
        score,
        normal,
    })
}

fn finish(res: &ResidualSet, p: &Profile, converged: bool, iterations: usize, mut warnings: Vec<String>) -> Result<LmmFit> {
    if p.floored {
        warnings.push(format!(
            "residual variance at or below {SIGMA2_FLOOR:e}; sigma2 floored (degenerate input)"
        ));
    }
    let theta = Theta::new(p.beta.clone(), p.sigma2, p.sigma_mat.clone())?;
    let beta_cov = covariance_from_normal(&p.normal, p.sigma2)?;
    Ok(LmmFit {
        theta,
        loglik: p.loglik,
        t0_hat: &p.normal / res.n_total as f64,
        beta_cov,
        converged,
        iterations,
        score_norm: p.score.norm(),
        n_obs: res.n_total,
        warnings,
    })
}

const MAX_PHI_STEP: f64 = 5.0;
const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Backtracking line search maximizing the profiled likelihood along `dir`.
fn line_search(res: &ResidualSet, phi: &DVector<f64>, current: &Profile, dir: &DVector<f64>) -> Result<Option<(DVector<f64>, Profile)>> {
    let slope = current.grad_phi.dot(dir);
    if !(slope > 0.0) {
        return Ok(None);
    }
    let mut alpha = 1.0;
    for _ in 0..MAX_BACKTRACKS {
        let candidate = phi + dir * alpha;
        match profile(res, candidate.as_slice()) {
            Ok(p) if p.loglik.is_finite() && p.loglik >= current.loglik + ARMIJO_C * alpha * slope => {
                return Ok(Some((candidate, p)));
            }
            Ok(_) | Err(Error::Numerical(_)) => {}
            Err(e) => return Err(e),
        }
        alpha *= 0.5;
    }
    Ok(None)
}

/// Maximizes the likelihood over θ. β and σ² are profiled out in closed form
/// at every Σ; Σ = L Lᵀ is optimized over the unconstrained Cholesky
/// parameters by BFGS ascent with a backtracking line search.
pub fn fit_variance_components_with(res: &ResidualSet, opts: &LmmOptions) -> Result<LmmFit> {
    let q = res.q;
    let n_phi = q * (q + 1) / 2;
    let needed = res.n_params() + 1;
    if res.n_total < needed {
        return Err(Error::TooFewObservations {
            rows: res.n_total,
            needed,
        });
    }
    let score_tol = opts.score_tol_per_obs * res.n_total as f64;

    let mut phi = DVector::from_iterator(
        n_phi,
        sigma_entries(q)
            .into_iter()
            .map(|(k, m)| if k == m { 0.5 * opts.init_sigma_scale.ln() } else { 0.0 }),
    );
    let mut current = profile(res, phi.as_slice())?;
    if n_phi == 0 {
        return finish(res, &current, true, 0, Vec::new());
    }

    let mut h_inv = DMatrix::<f64>::identity(n_phi, n_phi);
    let mut scaled = false;
    for iter in 0..opts.max_iter {
        if current.score.norm() <= score_tol {
            return finish(res, &current, true, iter, Vec::new());
        }
        let mut dir = &h_inv * &current.grad_phi;
        let dir_norm = dir.norm();
        if dir_norm > MAX_PHI_STEP {
            dir *= MAX_PHI_STEP / dir_norm;
        }
        let step = match line_search(res, &phi, &current, &dir)? {
            Some(found) => Some(found),
            None => {
                // quasi-Newton direction failed: restart from steepest ascent
                h_inv = DMatrix::identity(n_phi, n_phi);
                scaled = false;
                let mut g = current.grad_phi.clone();
                let g_norm = g.norm();
                if g_norm > MAX_PHI_STEP {
                    g *= MAX_PHI_STEP / g_norm;
                }
                line_search(res, &phi, &current, &g)?
            }
        };
        let Some((next_phi, next)) = step else {
            // no uphill direction at working precision: a numerical local maximum
            return finish(res, &current, true, iter, Vec::new());
        };

        let s = &next_phi - &phi;
        // BFGS on f = -ℓ, so the gradient difference flips sign
        let y = &current.grad_phi - &next.grad_phi;
        let sy = s.dot(&y);
        let small_change = (next.loglik - current.loglik).abs() <= 1e-13 * current.loglik.abs().max(1.0);
        let boundary_stall = small_change && next.grad_phi.norm() <= score_tol;
        let step_norm = s.norm();
        phi = next_phi;
        current = next;
        if step_norm <= opts.step_tol || boundary_stall {
            return finish(res, &current, true, iter + 1, Vec::new());
        }
        if sy > 1e-12 * s.norm() * y.norm() {
            if !scaled {
                h_inv *= sy / y.dot(&y);
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            symmetrize(&mut h_inv);
        }
    }
    let best = finish(res, &current, false, opts.max_iter, Vec::new())?;
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        score_norm: best.score_norm,
        best: Box::new(best),
    })
}
