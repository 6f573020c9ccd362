//! Baseline NMF with multiplicative updates and column-normalised basis.
//!
//! Per outer iteration, with `R = V / (W H)` element-wise:
//!
//! ```text
//! W_ij <- W_ij sum_r R_ir H_jr ;  W_ij <- W_ij / sum_r W_rj
//! H_ij <- H_ij sum_r W_ri R_rj
//! ```
//!
//! Denominators get `epsilon_div` added. The W rule is applied as written,
//! without the usual `sum_r H_jr` divisor; the column normalisation controls
//! the scale.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Codes, FactorModel, Method, TracePoint};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_distance, matmul, mean_rmse, Matrix};
use crate::nbmf::check_data;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmfConfig {
    pub k: usize,
    pub conv_tol: f64,
    pub max_outer_iters: usize,
    pub epsilon_div: f64,
    pub seed: u64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        NmfConfig {
            k: 60,
            conv_tol: 1e-4,
            max_outer_iters: 5000,
            epsilon_div: 1e-12,
            seed: 0,
        }
    }
}

impl NmfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be positive".into()));
        }
        if !(self.conv_tol > 0.0) {
            return Err(Error::InvalidParameter("conv_tol must be positive".into()));
        }
        if !(self.epsilon_div > 0.0) {
            return Err(Error::InvalidParameter("epsilon_div must be positive".into()));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidParameter("max_outer_iters must be positive".into()));
        }
        Ok(())
    }
}

fn check_shapes(op: &'static str, v: &Matrix, w: &Matrix, h: &Matrix) -> Result<()> {
    if w.rows() != v.rows() || h.cols() != v.cols() || w.cols() != h.rows() {
        return Err(Error::dim(
            op,
            format!(
                "V {}x{}, W {}x{}, H {}x{}",
                v.rows(),
                v.cols(),
                w.rows(),
                w.cols(),
                h.rows(),
                h.cols()
            ),
        ));
    }
    Ok(())
}

/// `V / (W H + eps)` element-wise.
fn ratio(v: &Matrix, w: &Matrix, h: &Matrix, eps: f64) -> Result<Matrix> {
    let mut wh = matmul(w, h)?;
    for (r, &x) in wh.data_mut().iter_mut().zip(v.data()) {
        *r = x / (*r + eps);
    }
    Ok(wh)
}

fn check_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} became non-finite")))
    }
}

/// Multiplicative W step followed by column normalisation.
pub fn nmf_update_w(v: &Matrix, w: &Matrix, h: &Matrix, cfg: &NmfConfig) -> Result<Matrix> {
    check_shapes("nmf_update_w", v, w, h)?;
    let (n, k) = w.shape();
    let m = v.cols();
    let r = ratio(v, w, h, cfg.epsilon_div)?;
    let mut out = w.clone();
    for i in 0..n {
        let r_row = r.row(i);
        for j in 0..k {
            let h_row = h.row(j);
            let mut s = 0.0;
            for c in 0..m {
                s += r_row[c] * h_row[c];
            }
            out.set(i, j, w.get(i, j) * s);
        }
    }
    for j in 0..k {
        let mut sum: f64 = (0..n).map(|i| out.get(i, j)).sum();
        if sum <= 0.0 {
            // Degenerate column: re-seed with tiny positive noise.
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0xD1B5_4A32_D192_ED03 ^ j as u64));
            for i in 0..n {
                out.set(i, j, 1e-6 * (1.0 - rng.gen::<f64>()));
            }
            sum = (0..n).map(|i| out.get(i, j)).sum();
        }
        for i in 0..n {
            out.set(i, j, out.get(i, j) / sum);
        }
    }
    check_finite(&out, "W")?;
    Ok(out)
}

/// Multiplicative H step.
pub fn nmf_update_h(v: &Matrix, w: &Matrix, h: &Matrix, cfg: &NmfConfig) -> Result<Matrix> {
    check_shapes("nmf_update_h", v, w, h)?;
    let (n, k) = w.shape();
    let m = v.cols();
    let r = ratio(v, w, h, cfg.epsilon_div)?;
    let mut out = h.clone();
    for i in 0..k {
        for j in 0..m {
            let hij = h.get(i, j);
            if hij == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for row in 0..n {
                s += w.get(row, i) * r.get(row, j);
            }
            out.set(i, j, hij * s);
        }
    }
    check_finite(&out, "H")?;
    Ok(out)
}

/// Generalised KL divergence `sum V log(V / WH) - V + WH`, with `0 log 0 = 0`.
pub fn kl_divergence(v: &Matrix, wh: &Matrix) -> Result<f64> {
    if v.shape() != wh.shape() {
        return Err(Error::dim("kl_divergence", "shape mismatch"));
    }
    Ok(v
        .data()
        .iter()
        .zip(wh.data())
        .map(|(&x, &y)| {
            let log_term = if x > 0.0 { x * (x / y).ln() } else { 0.0 };
            log_term - x + y
        })
        .sum())
}

/// Alternating multiplicative-update fit from uniform random positive factors.
pub fn nmf_fit(v: &Matrix, cfg: &NmfConfig) -> Result<FactorModel> {
    cfg.validate()?;
    check_data(v)?;
    let start = Instant::now();
    let (n, m) = v.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = Matrix::from_fn(n, cfg.k, |_, _| 1.0 - rng.gen::<f64>());
    let mut h = Matrix::from_fn(cfg.k, m, |_, _| 1.0 - rng.gen::<f64>());

    let elapsed = || start.elapsed().as_secs_f64() * 1e3;
    let mut trace = vec![TracePoint {
        iteration: 0,
        mean_rmse: mean_rmse(v, &matmul(&w, &h)?)?,
        wall_ms: elapsed(),
    }];
    let mut converged = false;
    let mut iterations = 0;

    for t in 1..=cfg.max_outer_iters {
        let w_new = nmf_update_w(v, &w, &h, cfg)?;
        let delta = frobenius_distance(&w_new, &w)?;
        w = w_new;
        h = nmf_update_h(v, &w, &h, cfg)?;
        trace.push(TracePoint {
            iteration: t,
            mean_rmse: mean_rmse(v, &matmul(&w, &h)?)?,
            wall_ms: elapsed(),
        });
        iterations = t;
        if delta < cfg.conv_tol {
            converged = true;
            break;
        }
    }

    Ok(FactorModel {
        method: Method::Nmf,
        w,
        h: Codes::Real(h),
        alpha: 0.0,
        rmse_trace: trace,
        iterations,
        converged,
        seed: cfg.seed,
        labels: Vec::new(),
    })
}

/// Encodes one column `v` with `W` fixed by iterating the H rule from an
/// all-ones start until the code moves less than `tol` (or `max_iters`).
pub fn nmf_encode(v: &[f64], w: &Matrix, tol: f64, max_iters: usize, eps: f64) -> Result<Vec<f64>> {
    if v.len() != w.rows() {
        return Err(Error::dim(
            "nmf_encode",
            format!("W has {} rows, column has {}", w.rows(), v.len()),
        ));
    }
    let (n, k) = w.shape();
    let mut h = vec![1.0; k];
    for _ in 0..max_iters {
        let ratio: Vec<f64> = (0..n)
            .map(|r| v[r] / (crate::linalg::dot(w.row(r), &h) + eps))
            .collect();
        let mut change = 0.0;
        let next: Vec<f64> = (0..k)
            .map(|i| {
                let s: f64 = (0..n).map(|r| w.get(r, i) * ratio[r]).sum();
                let x = h[i] * s;
                change += (x - h[i]).powi(2);
                x
            })
            .collect();
        h = next;
        if !h.iter().all(|x| x.is_finite()) {
            return Err(Error::Numeric("NMF code became non-finite".into()));
        }
        if change.sqrt() < tol {
            break;
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matmul_binary;
    use crate::dataset::{gen_synthetic, SyntheticParams};
    use approx::assert_relative_eq;

    fn normalized_columns(w: &Matrix) -> Matrix {
        let sums: Vec<f64> = (0..w.cols()).map(|j| w.column(j).iter().sum()).collect();
        Matrix::from_fn(w.rows(), w.cols(), |i, j| w.get(i, j) / sums[j])
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(0.05..1.0))
    }

    /// Direct transcription of the update rules with explicit loops.
    fn loop_oracle_w(v: &Matrix, w: &Matrix, h: &Matrix, eps: f64) -> Matrix {
        let (n, k) = w.shape();
        let m = v.cols();
        let mut wh = vec![vec![0.0; m]; n];
        for i in 0..n {
            for c in 0..m {
                for p in 0..k {
                    wh[i][c] += w.get(i, p) * h.get(p, c);
                }
            }
        }
        let mut out = vec![vec![0.0; k]; n];
        for i in 0..n {
            for j in 0..k {
                let mut s = 0.0;
                for r in 0..m {
                    s += v.get(i, r) / (wh[i][r] + eps) * h.get(j, r);
                }
                out[i][j] = w.get(i, j) * s;
            }
        }
        for j in 0..k {
            let col_sum: f64 = (0..n).map(|r| out[r][j]).sum();
            for row in out.iter_mut() {
                row[j] /= col_sum;
            }
        }
        Matrix::from_rows(&out).unwrap()
    }

    fn loop_oracle_h(v: &Matrix, w: &Matrix, h: &Matrix, eps: f64) -> Matrix {
        let (n, k) = w.shape();
        let m = v.cols();
        Matrix::from_fn(k, m, |i, j| {
            let mut s = 0.0;
            for r in 0..n {
                let whrj: f64 = (0..k).map(|p| w.get(r, p) * h.get(p, j)).sum();
                s += w.get(r, i) * v.get(r, j) / (whrj + eps);
            }
            h.get(i, j) * s
        })
    }

    #[test]
    fn updates_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = NmfConfig {
            k: 3,
            ..NmfConfig::default()
        };
        let v = random(6, 5, &mut rng);
        let w = random(6, 3, &mut rng);
        let h = random(3, 5, &mut rng);
        let got = nmf_update_w(&v, &w, &h, &cfg).unwrap();
        let want = loop_oracle_w(&v, &w, &h, cfg.epsilon_div);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
        let got = nmf_update_h(&v, &w, &h, &cfg).unwrap();
        let want = loop_oracle_h(&v, &w, &h, cfg.epsilon_div);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_factorization_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = NmfConfig {
            k: 4,
            ..NmfConfig::default()
        };
        let w = normalized_columns(&random(7, 4, &mut rng));
        let h = random(4, 6, &mut rng);
        let v = matmul(&w, &h).unwrap();
        let w2 = nmf_update_w(&v, &w, &h, &cfg).unwrap();
        let h2 = nmf_update_h(&v, &w, &h, &cfg).unwrap();
        for (a, b) in w2.data().iter().zip(w.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in h2.data().iter().zip(h.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn column_sums_are_one_and_zeros_stay_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = NmfConfig {
            k: 3,
            ..NmfConfig::default()
        };
        let v = random(5, 4, &mut rng);
        let mut w = random(5, 3, &mut rng);
        w.set(1, 2, 0.0);
        let mut h = random(3, 4, &mut rng);
        h.set(0, 3, 0.0);
        let w2 = nmf_update_w(&v, &w, &h, &cfg).unwrap();
        for j in 0..3 {
            assert!((w2.column(j).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(w2.get(1, 2), 0.0);
        let h2 = nmf_update_h(&v, &w2, &h, &cfg).unwrap();
        assert_eq!(h2.get(0, 3), 0.0);
        assert!(h2.is_nonnegative());
    }

    #[test]
    fn degenerate_column_is_reseeded() {
        let cfg = NmfConfig {
            k: 2,
            ..NmfConfig::default()
        };
        let v = Matrix::from_rows(&[vec![0.5, 0.2], vec![0.1, 0.3]]).unwrap();
        let w = Matrix::from_rows(&[vec![0.5, 0.0], vec![0.5, 0.0]]).unwrap();
        let h = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let w2 = nmf_update_w(&v, &w, &h, &cfg).unwrap();
        assert!(w2.column(1).iter().all(|&x| x > 0.0));
        assert!((w2.column(1).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn h_step_does_not_increase_kl() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = NmfConfig {
            k: 3,
            ..NmfConfig::default()
        };
        for _ in 0..20 {
            let v = random(8, 6, &mut rng);
            let w = normalized_columns(&random(8, 3, &mut rng));
            let h = random(3, 6, &mut rng);
            let before = kl_divergence(&v, &matmul(&w, &h).unwrap()).unwrap();
            let h2 = nmf_update_h(&v, &w, &h, &cfg).unwrap();
            let after = kl_divergence(&v, &matmul(&w, &h2).unwrap()).unwrap();
            assert!(after <= before + 1e-9, "{after} > {before}");
        }
    }

    #[test]
    fn planted_fit_reaches_target() {
        let s = gen_synthetic(&SyntheticParams {
            n: 64,
            m: 30,
            k: 8,
            density: 0.5,
            seed: 7,
        })
        .unwrap();
        let v = matmul_binary(&s.w_true, &s.h_true).unwrap();
        let cfg = NmfConfig {
            k: 8,
            seed: 3,
            ..NmfConfig::default()
        };
        let model = nmf_fit(&v, &cfg).unwrap();
        assert!(model.final_rmse().unwrap() <= 0.05);
        assert_eq!(model.rmse_trace.len(), model.iterations + 1);
        let again = nmf_fit(&v, &cfg).unwrap();
        assert_eq!(model.w, again.w);
        assert_eq!(model.h, again.h);
    }

    #[test]
    fn encode_recovers_exact_code() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = normalized_columns(&random(12, 3, &mut rng));
        let code = [0.4, 1.3, 0.7];
        let v: Vec<f64> = (0..12)
            .map(|r| (0..3).map(|i| w.get(r, i) * code[i]).sum())
            .collect();
        let h = nmf_encode(&v, &w, 1e-12, 20000, 1e-12).unwrap();
        let recon: Vec<f64> = (0..12)
            .map(|r| (0..3).map(|i| w.get(r, i) * h[i]).sum())
            .collect();
        for (a, b) in recon.iter().zip(&v) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
