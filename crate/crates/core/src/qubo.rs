//! Per-column QUBO encoding of the binary least-squares subproblem.
//!
//! For a fixed basis `W` and one data column `v`, minimising `||v - W q||^2`
//! over `q in {0,1}^k` is the same as minimising
//!
//! ```text
//! f(q) = sum_i a_i q_i + sum_{i<j} b_ij q_i q_j
//! a_i  = sum_r W_ri (W_ri - 2 v_r)
//! b_ij = 2 sum_r W_ri W_rj
//! ```
//!
//! since `f(q) + ||v||^2 = ||v - W q||^2`. The constant `||v||^2` is not part
//! of [`QuboProblem`]; [`energy_offset`] returns it.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct QuboProblem {
    k: usize,
    linear: Vec<f64>,
    /// Strictly upper triangle, row-major: (0,1), (0,2), ..., (1,2), ...
    quadratic: Vec<f64>,
}

#[inline]
fn tri_index(k: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < k);
    i * k - i * (i + 1) / 2 + (j - i - 1)
}

impl QuboProblem {
    pub fn new(linear: Vec<f64>, quadratic: Vec<f64>) -> Result<Self> {
        let k = linear.len();
        if k == 0 {
            return Err(Error::InvalidParameter("QUBO needs at least one variable".into()));
        }
        if quadratic.len() != k * (k - 1) / 2 {
            return Err(Error::dim(
                "QuboProblem::new",
                format!(
                    "{} quadratic terms for k = {k} (expected {})",
                    quadratic.len(),
                    k * (k - 1) / 2
                ),
            ));
        }
        if linear.iter().chain(&quadratic).any(|c| !c.is_finite()) {
            return Err(Error::Numeric("non-finite QUBO coefficient".into()));
        }
        Ok(QuboProblem {
            k,
            linear,
            quadratic,
        })
    }

    /// Problem with all coefficients zero.
    pub fn zeros(k: usize) -> Result<Self> {
        QuboProblem::new(vec![0.0; k], vec![0.0; k * k.saturating_sub(1) / 2])
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn quadratic(&self) -> &[f64] {
        &self.quadratic
    }

    /// `b_ij` for `i != j` (either order), 0 on the diagonal.
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.quadratic[tri_index(self.k, i, j)],
            std::cmp::Ordering::Greater => self.quadratic[tri_index(self.k, j, i)],
            std::cmp::Ordering::Equal => 0.0,
        }
    }

    pub fn set_coupling(&mut self, i: usize, j: usize, value: f64) {
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        assert!(lo != hi, "no diagonal couplings");
        let idx = tri_index(self.k, lo, hi);
        self.quadratic[idx] = value;
    }

    /// Full symmetric `k x k` coupling matrix with a zero diagonal, row-major.
    pub fn dense_couplings(&self) -> Vec<f64> {
        let k = self.k;
        let mut dense = vec![0.0; k * k];
        for i in 0..k {
            for j in i + 1..k {
                let b = self.quadratic[tri_index(k, i, j)];
                dense[i * k + j] = b;
                dense[j * k + i] = b;
            }
        }
        dense
    }

    /// Writes the problem as `i,j,coefficient` rows; `j == i` rows carry the
    /// linear terms.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "i,j,coefficient")?;
        for i in 0..self.k {
            writeln!(out, "{i},{i},{}", self.linear[i])?;
            for j in i + 1..self.k {
                writeln!(out, "{i},{j},{}", self.quadratic[tri_index(self.k, i, j)])?;
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        crate::dataset::write_atomic(path, &buf)
    }

    /// Parses the `i,j,coefficient` format. `k` is one more than the largest
    /// index; absent entries are zero, repeated entries are rejected.
    pub fn read_csv<R: BufRead>(input: R, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut k = 0usize;
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if lineno == 0 && fields.first() == Some(&"i") {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg,
            };
            if fields.len() != 3 {
                return Err(parse_err(format!("expected 3 fields, found {}", fields.len())));
            }
            let i: usize = fields[0]
                .parse()
                .map_err(|_| parse_err(format!("bad index {:?}", fields[0])))?;
            let j: usize = fields[1]
                .parse()
                .map_err(|_| parse_err(format!("bad index {:?}", fields[1])))?;
            let c: f64 = fields[2]
                .parse()
                .map_err(|_| parse_err(format!("bad coefficient {:?}", fields[2])))?;
            if !c.is_finite() {
                return Err(parse_err("non-finite coefficient".into()));
            }
            k = k.max(i.max(j) + 1);
            entries.push((lineno + 1, i.min(j), i.max(j), c));
        }
        if entries.is_empty() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: "no QUBO entries".into(),
            });
        }
        let mut linear = vec![0.0; k];
        let mut quadratic = vec![0.0; k * (k - 1) / 2];
        let mut seen = vec![false; k * k];
        for (line, i, j, c) in entries {
            if std::mem::replace(&mut seen[i * k + j], true) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("duplicate entry ({i}, {j})"),
                });
            }
            if i == j {
                linear[i] = c;
            } else {
                quadratic[tri_index(k, i, j)] = c;
            }
        }
        QuboProblem::new(linear, quadratic)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        QuboProblem::read_csv(std::io::BufReader::new(file), path)
    }
}

fn check_column(op: &'static str, w: &Matrix, v: &[f64]) -> Result<()> {
    if w.rows() != v.len() {
        return Err(Error::dim(
            op,
            format!("W has {} rows but the column has {} entries", w.rows(), v.len()),
        ));
    }
    Ok(())
}

/// QUBO coefficients for approximating `v` by a binary combination of the
/// columns of `w`.
pub fn build_from_column(w: &Matrix, v: &[f64]) -> Result<QuboProblem> {
    check_column("build_from_column", w, v)?;
    let k = w.cols();
    let mut linear = vec![0.0; k];
    let mut quadratic = vec![0.0; k * (k - 1) / 2];
    for (r, &vr) in v.iter().enumerate() {
        let row = w.row(r);
        for i in 0..k {
            let wi = row[i];
            if wi == 0.0 {
                continue;
            }
            linear[i] += wi * (wi - 2.0 * vr);
            let base = tri_index_row_start(k, i);
            for j in i + 1..k {
                quadratic[base + j - i - 1] += wi * row[j];
            }
        }
    }
    for b in &mut quadratic {
        *b *= 2.0;
    }
    QuboProblem::new(linear, quadratic)
}

#[inline]
fn tri_index_row_start(k: usize, i: usize) -> usize {
    i * k - i * (i + 1) / 2
}

/// `||v||^2`, the constant dropped from the QUBO objective.
pub fn energy_offset(w: &Matrix, v: &[f64]) -> Result<f64> {
    check_column("energy_offset", w, v)?;
    Ok(v.iter().map(|x| x * x).sum())
}

pub(crate) fn check_bits(k: usize, q: &[u8]) -> Result<()> {
    if q.len() != k {
        return Err(Error::dim(
            "QUBO state",
            format!("state of length {} for k = {k}", q.len()),
        ));
    }
    if let Some(i) = q.iter().position(|&b| b > 1) {
        return Err(Error::NotBinary {
            row: i,
            col: 0,
            value: q[i] as f64,
        });
    }
    Ok(())
}

/// `f(q) = sum_i a_i q_i + sum_{i<j} b_ij q_i q_j`.
pub fn evaluate(p: &QuboProblem, q: &[u8]) -> Result<f64> {
    check_bits(p.k, q)?;
    Ok(evaluate_unchecked(p, q))
}

pub(crate) fn evaluate_unchecked(p: &QuboProblem, q: &[u8]) -> f64 {
    let k = p.k;
    let mut energy = 0.0;
    for i in 0..k {
        if q[i] == 0 {
            continue;
        }
        energy += p.linear[i];
        let base = tri_index_row_start(k, i);
        for j in i + 1..k {
            if q[j] == 1 {
                energy += p.quadratic[base + j - i - 1];
            }
        }
    }
    energy
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn residual_sq(w: &Matrix, v: &[f64], q: &[u8]) -> f64 {
        (0..w.rows())
            .map(|r| {
                let wq: f64 = (0..w.cols()).map(|i| w.get(r, i) * q[i] as f64).sum();
                (v[r] - wq).powi(2)
            })
            .sum()
    }

    #[test]
    fn identity_basis_example() {
        let p = build_from_column(&Matrix::identity(2), &[1.0, 0.0]).unwrap();
        assert_eq!(p.linear(), &[-1.0, 1.0]);
        assert_eq!(p.coupling(0, 1), 0.0);
    }

    #[test]
    fn zero_basis_gives_zero_problem() {
        let p = build_from_column(&Matrix::zeros(3, 2), &[0.3, 0.2, 0.9]).unwrap();
        assert_eq!(p, QuboProblem::zeros(2).unwrap());
    }

    #[test]
    fn single_feature_example() {
        let w = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let v = [1.0, 1.0];
        let p = build_from_column(&w, &v).unwrap();
        assert_eq!(p.linear(), &[-2.0]);
        assert!(p.quadratic().is_empty());
        // f(1) + ||v||^2 = ||v - w||^2 = 0
        let f1 = evaluate(&p, &[1]).unwrap();
        assert_eq!(f1 + energy_offset(&w, &v).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_examples() {
        let p = QuboProblem::new(vec![-1.0, 1.0], vec![0.0]).unwrap();
        assert_eq!(evaluate(&p, &[0, 0]).unwrap(), 0.0);
        assert_eq!(evaluate(&p, &[1, 0]).unwrap(), -1.0);
        let p = QuboProblem::new(vec![1.0, 1.0], vec![-3.0]).unwrap();
        assert_eq!(evaluate(&p, &[1, 1]).unwrap(), -1.0);
        assert!(evaluate(&p, &[1]).is_err());
        assert!(matches!(evaluate(&p, &[1, 2]), Err(Error::NotBinary { .. })));
    }

    #[test]
    fn offset_examples() {
        let w = Matrix::zeros(2, 3);
        assert_eq!(energy_offset(&w, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(energy_offset(&w, &[1.0, 1.0]).unwrap(), 2.0);
        assert!(energy_offset(&w, &[1.0]).is_err());
        assert!(build_from_column(&w, &[1.0]).is_err());
    }

    #[test]
    fn energy_identity_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let n = rng.gen_range(1..20);
            let k = rng.gen_range(1..10);
            let w = Matrix::from_fn(n, k, |_, _| rng.gen_range(0.0..1.0));
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let q: Vec<u8> = (0..k).map(|_| rng.gen_range(0..2)).collect();
            let p = build_from_column(&w, &v).unwrap();
            let lhs = evaluate(&p, &q).unwrap() + energy_offset(&w, &v).unwrap();
            assert_relative_eq!(lhs, residual_sq(&w, &v, &q), epsilon = 1e-9);
            assert!(p.quadratic().iter().all(|&b| b >= 0.0));
        }
    }

    #[test]
    fn column_permutation_permutes_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, k) = (6, 5);
        let w = Matrix::from_fn(n, k, |_, _| rng.gen_range(0.0..1.0));
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let perm = [3, 0, 4, 1, 2];
        let wp = Matrix::from_fn(n, k, |r, c| w.get(r, perm[c]));
        let p = build_from_column(&w, &v).unwrap();
        let pp = build_from_column(&wp, &v).unwrap();
        for i in 0..k {
            assert_relative_eq!(pp.linear()[i], p.linear()[perm[i]], epsilon = 1e-14);
            for j in 0..k {
                assert_relative_eq!(pp.coupling(i, j), p.coupling(perm[i], perm[j]), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn depends_only_on_selected_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = Matrix::from_fn(5, 3, |_, _| rng.gen_range(0.0..1.0));
        let v1 = Matrix::from_fn(5, 4, |_, _| rng.gen_range(0.0..1.0));
        let mut v2 = Matrix::from_fn(5, 4, |_, _| rng.gen_range(0.0..1.0));
        v2.set_column(2, &v1.column(2));
        assert_eq!(
            build_from_column(&w, &v1.column(2)).unwrap(),
            build_from_column(&w, &v2.column(2)).unwrap()
        );
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let p = QuboProblem::new(vec![-1.5, 0.25, 3.0], vec![0.1, -2.0, 1e-17]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = QuboProblem::read_csv(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, p);

        assert!(QuboProblem::read_csv(&b""[..], Path::new("empty")).is_err());
        assert!(QuboProblem::read_csv(&b"0,0,1\n0,0,2\n"[..], Path::new("dup")).is_err());
        assert!(QuboProblem::read_csv(&b"0,x,1\n"[..], Path::new("bad")).is_err());
        // lower-triangle entries are folded into the upper triangle
        let p = QuboProblem::read_csv(&b"1,0,4\n"[..], Path::new("lower")).unwrap();
        assert_eq!(p.coupling(0, 1), 4.0);
    }
}
