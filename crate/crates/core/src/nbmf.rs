//! Nonnegative/binary matrix factorization `V ~ W H`, `W >= 0`, `H in {0,1}`.
//!
//! The fit alternates two exact-in-spirit subproblem solves:
//!
//! * W-update: projected gradient with Armijo backtracking on
//!   `F(X) = 1/2 ||V - X H||_F^2 + alpha ||X||_F^2` over `X >= 0`.
//! * H-update: one QUBO per column of `V` (see [`crate::qubo`]), handed to the
//!   configured [`crate::solver`] backend.
//!
//! The loop stops once `||W_new - W_old||_F < conv_tol`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Codes, FactorModel, Method, TracePoint};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_distance, matmul, matmul_binary, matmul_transpose_b, mean_rmse, BinaryMatrix, Matrix};
use crate::qubo::{build_from_column, evaluate};
use crate::solver::{solve, AnnealConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbmfConfig {
    pub k: usize,
    pub alpha: f64,
    /// Stop when the Frobenius distance between successive W falls below this.
    pub conv_tol: f64,
    pub max_outer_iters: usize,
    pub pgd_max_iters: usize,
    pub pgd_step_shrink: f64,
    pub pgd_armijo_sigma: f64,
    /// Inner stop: projected-gradient norm relative to its value on entry.
    pub pgd_rel_tol: f64,
    pub anneal: AnnealConfig,
    pub seed: u64,
    pub h_init_density: f64,
}

impl Default for NbmfConfig {
    fn default() -> Self {
        NbmfConfig {
            k: 60,
            alpha: 1e-6,
            conv_tol: 1e-4,
            max_outer_iters: 500,
            pgd_max_iters: 50,
            pgd_step_shrink: 0.5,
            pgd_armijo_sigma: 0.01,
            pgd_rel_tol: 1e-6,
            anneal: AnnealConfig::default(),
            seed: 0,
            h_init_density: 0.5,
        }
    }
}

impl NbmfConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if self.k == 0 {
            return bad("k must be positive");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be a finite number >= 0");
        }
        if !(self.conv_tol > 0.0) {
            return bad("conv_tol must be positive");
        }
        if self.max_outer_iters == 0 || self.pgd_max_iters == 0 {
            return bad("iteration caps must be positive");
        }
        if !(self.pgd_step_shrink > 0.0 && self.pgd_step_shrink < 1.0) {
            return bad("pgd_step_shrink must lie in (0, 1)");
        }
        if !(self.pgd_armijo_sigma > 0.0 && self.pgd_armijo_sigma < 1.0) {
            return bad("pgd_armijo_sigma must lie in (0, 1)");
        }
        if !(self.pgd_rel_tol >= 0.0) {
            return bad("pgd_rel_tol must be >= 0");
        }
        if !(self.h_init_density > 0.0 && self.h_init_density < 1.0) {
            return bad("h_init_density must lie in (0, 1)");
        }
        self.anneal.validate()
    }
}

/// `1/2 ||V - X H||_F^2 + alpha ||X||_F^2`.
pub fn w_objective(v: &Matrix, x: &Matrix, h: &Matrix, alpha: f64) -> Result<f64> {
    let r = matmul(x, h)?;
    let fit = frobenius_distance(v, &r)?;
    Ok(0.5 * fit * fit + alpha * x.norm_sq())
}

/// Gradient of [`w_objective`]: `(X H - V) H^T + 2 alpha X`.
pub fn w_gradient(v: &Matrix, x: &Matrix, h: &Matrix, alpha: f64) -> Result<Matrix> {
    let hht = matmul_transpose_b(h, h)?;
    let vht = matmul_transpose_b(v, h)?;
    gradient_from_grams(x, &hht, &vht, alpha)
}

fn gradient_from_grams(x: &Matrix, hht: &Matrix, vht: &Matrix, alpha: f64) -> Result<Matrix> {
    let mut g = matmul(x, hht)?;
    for ((gi, &vi), &xi) in g.data_mut().iter_mut().zip(vht.data()).zip(x.data()) {
        *gi += 2.0 * alpha * xi - vi;
    }
    Ok(g)
}

fn projected_gradient_norm(x: &Matrix, g: &Matrix) -> f64 {
    x.data()
        .iter()
        .zip(g.data())
        .map(|(&xi, &gi)| if xi > 0.0 { gi * gi } else { gi.min(0.0).powi(2) })
        .sum::<f64>()
        .sqrt()
}

fn check_w_inputs(v: &Matrix, w: &Matrix, h_rows: usize, h_cols: usize) -> Result<()> {
    if w.rows() != v.rows() || w.cols() != h_rows || h_cols != v.cols() {
        return Err(Error::dim(
            "update_w",
            format!(
                "V {}x{}, W {}x{}, H {}x{}",
                v.rows(),
                v.cols(),
                w.rows(),
                w.cols(),
                h_rows,
                h_cols
            ),
        ));
    }
    if !v.is_finite() || !w.is_finite() {
        return Err(Error::Numeric("non-finite input to the W-update".into()));
    }
    Ok(())
}

/// Projected-gradient W-update. Returns a nonnegative `X` with
/// `F(X) <= F(W)`.
pub fn update_w(v: &Matrix, w: &Matrix, h: &BinaryMatrix, cfg: &NbmfConfig) -> Result<Matrix> {
    update_w_traced(v, w, &h.to_real(), cfg).map(|(x, _)| x)
}

/// [`update_w`] for a real coefficient matrix, also returning the objective
/// after every accepted step (entry 0 is the objective at `w`).
pub fn update_w_traced(
    v: &Matrix,
    w: &Matrix,
    h: &Matrix,
    cfg: &NbmfConfig,
) -> Result<(Matrix, Vec<f64>)> {
    check_w_inputs(v, w, h.rows(), h.cols())?;
    let alpha = cfg.alpha;
    let hht = matmul_transpose_b(h, h)?;
    let vht = matmul_transpose_b(v, h)?;

    // ||HH^T||_1 bounds the spectral norm of the symmetric Gram matrix.
    let k = hht.rows();
    let lipschitz = (0..k)
        .map(|c| (0..k).map(|r| hht.get(r, c).abs()).sum::<f64>())
        .fold(0.0, f64::max)
        + 2.0 * alpha;

    let mut x = w.map(|e| e.max(0.0));
    let mut fx = w_objective(v, &x, h, alpha)?;
    let mut objectives = vec![fx];
    if lipschitz <= 0.0 {
        return Ok((x, objectives));
    }
    let mut step = 1.0 / lipschitz;
    let mut initial_pg = None;

    for _ in 0..cfg.pgd_max_iters {
        let g = gradient_from_grams(&x, &hht, &vht, alpha)?;
        if !g.is_finite() {
            return Err(Error::Numeric("non-finite gradient in the W-update".into()));
        }
        let pg = projected_gradient_norm(&x, &g);
        let reference = *initial_pg.get_or_insert(pg);
        if pg == 0.0 || pg <= cfg.pgd_rel_tol * reference {
            break;
        }

        // Try one step larger than last time, then backtrack.
        step /= cfg.pgd_step_shrink;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = Matrix::new(
                x.rows(),
                x.cols(),
                x.data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xi, &gi)| (xi - step * gi).max(0.0))
                    .collect(),
            )?;
            let f_new = w_objective(v, &candidate, h, alpha)?;
            let directional: f64 = g
                .data()
                .iter()
                .zip(candidate.data().iter().zip(x.data()))
                .map(|(&gi, (&c, &xi))| gi * (c - xi))
                .sum();
            if f_new - fx <= cfg.pgd_armijo_sigma * directional && f_new <= fx {
                accepted = Some((candidate, f_new));
                break;
            }
            step *= cfg.pgd_step_shrink;
        }
        match accepted {
            Some((candidate, f_new)) => {
                let moved = candidate != x;
                x = candidate;
                fx = f_new;
                objectives.push(fx);
                if !moved {
                    break;
                }
            }
            None => break,
        }
    }
    if !x.is_finite() {
        return Err(Error::Numeric("W-update diverged".into()));
    }
    Ok((x, objectives))
}

fn column_seed(seed: u64, column: usize) -> u64 {
    seed ^ column as u64
}

fn solve_column(v: &Matrix, w: &Matrix, l: usize, cfg: &AnnealConfig) -> Result<(Vec<u8>, f64)> {
    let problem = build_from_column(w, &v.column(l))?;
    let result = solve(&problem, &cfg.reseeded(column_seed(cfg.seed, l))).map_err(|e| Error::Column {
        column: l,
        source: Box::new(e),
    })?;
    Ok((result.q, result.energy))
}

fn check_h_inputs(v: &Matrix, w: &Matrix) -> Result<()> {
    if w.rows() != v.rows() {
        return Err(Error::dim(
            "update_h",
            format!("W has {} rows, V has {}", w.rows(), v.rows()),
        ));
    }
    if !w.is_nonnegative() {
        return Err(Error::InvalidParameter("W must be nonnegative".into()));
    }
    Ok(())
}

/// Solves the binary least-squares problem for every column of `v`
/// independently. Column `l` uses anneal seed `cfg.anneal.seed ^ l`, so the
/// result does not depend on scheduling.
pub fn update_h(v: &Matrix, w: &Matrix, cfg: &NbmfConfig) -> Result<BinaryMatrix> {
    check_h_inputs(v, w)?;
    let columns = (0..v.cols())
        .into_par_iter()
        .map(|l| solve_column(v, w, l, &cfg.anneal).map(|(q, _)| q))
        .collect::<Result<Vec<_>>>()?;
    BinaryMatrix::from_columns(&columns)
}

/// [`update_h`] that keeps the previous column of `prev` whenever the new one
/// has a strictly higher QUBO energy.
pub fn update_h_guarded(
    v: &Matrix,
    w: &Matrix,
    prev: &BinaryMatrix,
    cfg: &NbmfConfig,
) -> Result<BinaryMatrix> {
    check_h_inputs(v, w)?;
    if prev.shape() != (w.cols(), v.cols()) {
        return Err(Error::dim(
            "update_h_guarded",
            format!("previous H is {}x{}", prev.rows(), prev.cols()),
        ));
    }
    let columns = (0..v.cols())
        .into_par_iter()
        .map(|l| {
            let (q, energy) = solve_column(v, w, l, &cfg.anneal)?;
            let old = prev.column(l);
            let problem = build_from_column(w, &v.column(l))?;
            if evaluate(&problem, &old)? < energy {
                Ok(old)
            } else {
                Ok(q)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    BinaryMatrix::from_columns(&columns)
}

/// `W H` with negative entries clamped to zero.
pub fn reconstruct(model: &FactorModel) -> Result<Matrix> {
    Ok(matmul(&model.w, &model.h.to_real())?.map(|x| x.max(0.0)))
}

/// Per-iteration seed for the annealer.
pub(crate) fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    // splitmix64 finaliser
    let mut z = seed.wrapping_add((iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn check_data(v: &Matrix) -> Result<()> {
    if let Some(x) = v.data().iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::InvalidParameter(format!(
            "data matrix element {x} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Alternating NBMF fit from random `W ~ U[0,1]`, `H ~ Bernoulli(h_init_density)`.
pub fn nbmf_fit(v: &Matrix, cfg: &NbmfConfig) -> Result<FactorModel> {
    cfg.validate()?;
    check_data(v)?;
    let start = Instant::now();
    let (n, m) = v.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = Matrix::from_fn(n, cfg.k, |_, _| rng.gen_range(0.0..1.0));
    let mut h = BinaryMatrix::new(
        cfg.k,
        m,
        (0..cfg.k * m)
            .map(|_| rng.gen_bool(cfg.h_init_density) as u8)
            .collect(),
    )?;

    let rmse = |w: &Matrix, h: &BinaryMatrix| -> Result<f64> { mean_rmse(v, &matmul_binary(w, h)?) };
    let elapsed = || start.elapsed().as_secs_f64() * 1e3;
    let mut trace = vec![TracePoint {
        iteration: 0,
        mean_rmse: rmse(&w, &h)?,
        wall_ms: elapsed(),
    }];
    let mut converged = false;
    let mut iterations = 0;

    for t in 1..=cfg.max_outer_iters {
        let w_new = update_w(v, &w, &h, cfg)?;
        let delta = frobenius_distance(&w_new, &w)?;
        w = w_new;
        let step_cfg = NbmfConfig {
            anneal: cfg.anneal.reseeded(iteration_seed(cfg.anneal.seed ^ cfg.seed, t)),
            ..cfg.clone()
        };
        h = update_h_guarded(v, &w, &h, &step_cfg)?;
        let err = rmse(&w, &h)?;
        if !err.is_finite() {
            return Err(Error::Numeric(format!("RMSE became {err} at iteration {t}")));
        }
        trace.push(TracePoint {
            iteration: t,
            mean_rmse: err,
            wall_ms: elapsed(),
        });
        iterations = t;
        if delta < cfg.conv_tol {
            converged = true;
            break;
        }
    }

    Ok(FactorModel {
        method: Method::Nbmf,
        w,
        h: Codes::Binary(h),
        alpha: cfg.alpha,
        rmse_trace: trace,
        iterations,
        converged,
        seed: cfg.seed,
        labels: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_synthetic, SyntheticParams};
    use crate::solver::Backend;
    use approx::assert_relative_eq;

    fn small_cfg(k: usize) -> NbmfConfig {
        NbmfConfig {
            k,
            anneal: AnnealConfig::with_backend(Backend::Exhaustive),
            ..NbmfConfig::default()
        }
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn exact_fit_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random(6, 4, &mut rng);
        let cfg = NbmfConfig {
            alpha: 0.0,
            ..small_cfg(4)
        };
        let x = update_w(&v, &v, &BinaryMatrix::identity(4), &cfg).unwrap();
        assert_eq!(x, v);
    }

    #[test]
    fn heavy_regularisation_drives_w_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random(6, 5, &mut rng);
        let w = random(6, 3, &mut rng);
        let h = BinaryMatrix::new(3, 5, (0..15).map(|_| rng.gen_range(0..2)).collect()).unwrap();
        let cfg = NbmfConfig {
            alpha: 1e6,
            ..small_cfg(3)
        };
        let x = update_w(&v, &w, &h, &cfg).unwrap();
        assert!(x.max_abs() < 1e-3);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random(5, 6, &mut rng);
        let x = random(5, 3, &mut rng);
        let h = random(3, 6, &mut rng);
        let alpha = 0.3;
        let g = w_gradient(&v, &x, &h, alpha).unwrap();
        let eps = 1e-5;
        for idx in 0..x.data().len() {
            let mut plus = x.clone();
            plus.data_mut()[idx] += eps;
            let mut minus = x.clone();
            minus.data_mut()[idx] -= eps;
            let fd = (w_objective(&v, &plus, &h, alpha).unwrap()
                - w_objective(&v, &minus, &h, alpha).unwrap())
                / (2.0 * eps);
            assert_relative_eq!(g.data()[idx], fd, max_relative = 1e-5, epsilon = 1e-9);
        }
    }

    #[test]
    fn w_update_is_monotone_and_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random(8, 10, &mut rng);
        let w = random(8, 4, &mut rng);
        let h = Matrix::from_fn(4, 10, |_, _| rng.gen_range(0..2) as f64);
        let (x, objectives) = update_w_traced(&v, &w, &h, &small_cfg(4)).unwrap();
        assert!(x.is_nonnegative());
        assert!(objectives.windows(2).all(|p| p[1] <= p[0]));
        assert!(objectives.len() > 1);
    }

    #[test]
    fn w_update_rejects_non_finite() {
        let mut v = Matrix::zeros(2, 2);
        v.set(0, 0, f64::NAN);
        let w = Matrix::zeros(2, 2);
        assert!(matches!(
            update_w(&v, &w, &BinaryMatrix::identity(2), &small_cfg(2)),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn h_update_identity_example() {
        let v = Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let h = update_h(&v, &Matrix::identity(2), &small_cfg(2)).unwrap();
        assert_eq!(h.column(0), vec![1, 0]);
    }

    #[test]
    fn h_update_is_column_separable() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random(10, 6, &mut rng);
        let w = random(10, 5, &mut rng).map(|x| x * 0.3);
        let cfg = NbmfConfig {
            anneal: AnnealConfig {
                sweeps: 100,
                seed: 9,
                ..AnnealConfig::default()
            },
            ..small_cfg(5)
        };
        let all = update_h(&v, &w, &cfg).unwrap();
        for l in 0..6 {
            let single = Matrix::from_columns(&[v.column(l)]).unwrap();
            let one_cfg = NbmfConfig {
                anneal: cfg.anneal.reseeded(cfg.anneal.seed ^ l as u64),
                ..cfg.clone()
            };
            let h = update_h(&single, &w, &one_cfg).unwrap();
            assert_eq!(h.column(0), all.column(l));
        }
    }

    #[test]
    fn reconstruct_identity_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = random(5, 3, &mut rng);
        let model = FactorModel {
            method: Method::Nbmf,
            w: w.clone(),
            h: Codes::Binary(BinaryMatrix::identity(3)),
            alpha: 0.0,
            rmse_trace: vec![],
            iterations: 0,
            converged: false,
            seed: 0,
            labels: vec![],
        };
        assert_eq!(reconstruct(&model).unwrap(), w);
    }

    #[test]
    fn planted_instance_is_recovered() {
        let s = gen_synthetic(&SyntheticParams {
            n: 64,
            m: 30,
            k: 8,
            density: 0.5,
            seed: 7,
        })
        .unwrap();
        assert!(!s.clamped);
        let cfg = NbmfConfig {
            seed: 1,
            ..small_cfg(8)
        };
        let model = nbmf_fit(s.dataset.matrix(), &cfg).unwrap();
        let rmse = mean_rmse(s.dataset.matrix(), &reconstruct(&model).unwrap()).unwrap();
        assert!(rmse <= 0.05, "rmse {rmse}");
        assert_relative_eq!(rmse, model.final_rmse().unwrap(), epsilon = 1e-12);
        assert_eq!(model.rmse_trace.len(), model.iterations + 1);
        assert!(model.w.is_nonnegative());

        let again = nbmf_fit(s.dataset.matrix(), &cfg).unwrap();
        assert_eq!(model.w, again.w);
        assert_eq!(model.h, again.h);
    }

    #[test]
    fn config_validation() {
        assert!(NbmfConfig {
            alpha: -1.0,
            ..NbmfConfig::default()
        }
        .validate()
        .is_err());
        assert!(NbmfConfig {
            h_init_density: 1.0,
            ..NbmfConfig::default()
        }
        .validate()
        .is_err());
        assert!(nbmf_fit(&Matrix::from_rows(&[vec![1.5]]).unwrap(), &small_cfg(1)).is_err());
    }
}
