//! Dataset ingestion, synthetic generators and model persistence.
//!
//! Images are columns of the data matrix `V` (n pixels x m images). The CSV
//! dataset format stores one image per row for readability, so loading and
//! saving transpose.
//!
//! Dataset CSV:
//!
//! ```text
//! n,<int>,height,<int>,width,<int>
//! <label>,v1,...,vn
//! ```
//!
//! Model directory: `W.csv`, `H.csv` (plain matrix rows), `meta.json` and
//! `trace.csv` (`iteration,mean_rmse,wall_ms`, iteration 0 is the initial
//! error).

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul_binary, BinaryMatrix, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    matrix: Matrix,
    labels: Vec<String>,
    height: usize,
    width: usize,
}

impl LabeledDataset {
    pub fn new(matrix: Matrix, labels: Vec<String>, height: usize, width: usize) -> Result<Self> {
        if labels.len() != matrix.cols() {
            return Err(Error::dim(
                "LabeledDataset::new",
                format!("{} labels for {} images", labels.len(), matrix.cols()),
            ));
        }
        if height == 0 || width == 0 || height * width != matrix.rows() {
            return Err(Error::dim(
                "LabeledDataset::new",
                format!("{height}x{width} image for {} pixels", matrix.rows()),
            ));
        }
        if let Some(pos) = matrix
            .data()
            .iter()
            .position(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::InvalidParameter(format!(
                "pixel {} of image {} is {}, outside [0, 1]",
                pos / matrix.cols(),
                pos % matrix.cols(),
                matrix.data()[pos]
            )));
        }
        Ok(LabeledDataset {
            matrix,
            labels,
            height,
            width,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.matrix.rows()
    }

    pub fn len(&self) -> usize {
        self.matrix.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_header_int(path: &Path, fields: &[&str], idx: usize, key: &str) -> Result<usize> {
    if fields.get(idx).map(|f| f.trim()) != Some(key) {
        return Err(parse_err(path, 1, format!("expected key {key:?} in header")));
    }
    fields
        .get(idx + 1)
        .and_then(|v| v.trim().parse().ok())
        .filter(|&v: &usize| v > 0)
        .ok_or_else(|| parse_err(path, 1, format!("bad value for {key}")))
}

/// Loads the dataset CSV format described in the module docs.
pub fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let mut lines = open(path)?.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?
        .map_err(|e| Error::io(path, e))?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() != 6 {
        return Err(parse_err(path, 1, "header must be n,<int>,height,<int>,width,<int>"));
    }
    let n = parse_header_int(path, &fields, 0, "n")?;
    let height = parse_header_int(path, &fields, 2, "height")?;
    let width = parse_header_int(path, &fields, 4, "width")?;
    if height * width != n {
        return Err(parse_err(path, 1, format!("height {height} x width {width} != n {n}")));
    }

    let mut labels = Vec::new();
    let mut columns = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label = fields.next().unwrap_or_default().trim();
        if label.is_empty() {
            return Err(parse_err(path, lineno, "missing label"));
        }
        let mut values = Vec::with_capacity(n);
        for f in fields {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad value {f:?}")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(parse_err(path, lineno, format!("value {v} outside [0, 1]")));
            }
            values.push(v);
        }
        if values.len() != n {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {n} values, found {}", values.len()),
            ));
        }
        labels.push(label.to_string());
        columns.push(values);
    }
    if columns.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: "no images".into(),
        });
    }
    LabeledDataset::new(Matrix::from_columns(&columns)?, labels, height, width)
}

pub fn save_csv(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let m = dataset.matrix();
    let mut out = format!(
        "n,{},height,{},width,{}\n",
        m.rows(),
        dataset.height,
        dataset.width
    );
    for (col, label) in dataset.labels.iter().enumerate() {
        out.push_str(label);
        for row in 0..m.rows() {
            out.push(',');
            out.push_str(&m.get(row, col).to_string());
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// A parsed binary (P5) PGM image, pixels row-major and normalised to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<f64>,
}

fn pgm_token(bytes: &[u8], pos: &mut usize) -> Option<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok()?.parse().ok()
}

pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<PgmImage> {
    let bad = |msg: &str| Error::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("not a binary PGM (magic P5 expected)"));
    }
    let mut pos = 2;
    let width = pgm_token(bytes, &mut pos).ok_or_else(|| bad("bad width"))?;
    let height = pgm_token(bytes, &mut pos).ok_or_else(|| bad("bad height"))?;
    let maxval = pgm_token(bytes, &mut pos).ok_or_else(|| bad("bad maxval"))?;
    if width == 0 || height == 0 {
        return Err(bad("zero image extent"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval must be in 1..=65535"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing whitespace before raster"));
    }
    pos += 1;
    let count = width * height;
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let raster = &bytes[pos..];
    if raster.len() < count * sample_bytes {
        return Err(bad("truncated raster"));
    }
    let scale = maxval as f64;
    let mut pixels = Vec::with_capacity(count);
    for i in 0..count {
        let p = if sample_bytes == 1 {
            raster[i] as usize
        } else {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as usize
        };
        if p > maxval {
            return Err(bad("sample exceeds maxval"));
        }
        pixels.push(p as f64 / scale);
    }
    Ok(PgmImage {
        width,
        height,
        maxval: maxval as u16,
        pixels,
    })
}

/// Splits `<label>_<index>.pgm` into its label.
fn pgm_label(path: &Path) -> Result<String> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    match stem.rsplit_once('_') {
        Some((label, index)) if !label.is_empty() && index.parse::<u64>().is_ok() => {
            Ok(label.to_string())
        }
        _ => Err(Error::Format {
            path: path.to_path_buf(),
            msg: "file name must look like <label>_<index>.pgm".into(),
        }),
    }
}

/// Loads every `*.pgm` file of a directory, one image per column, in sorted
/// file-name order.
pub fn load_pgm_dir(dir: &Path) -> Result<LabeledDataset> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            msg: "no .pgm files".into(),
        });
    }
    let mut labels = Vec::with_capacity(paths.len());
    let mut columns = Vec::with_capacity(paths.len());
    let mut dims = None;
    for path in &paths {
        let label = pgm_label(path)?;
        let mut bytes = Vec::new();
        open(path)?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        let img = parse_pgm(&bytes, path)?;
        match dims {
            None => dims = Some((img.height, img.width)),
            Some(d) if d != (img.height, img.width) => {
                return Err(Error::Format {
                    path: path.clone(),
                    msg: format!(
                        "image is {}x{} but earlier images are {}x{}",
                        img.height, img.width, d.0, d.1
                    ),
                })
            }
            Some(_) => {}
        }
        labels.push(label);
        columns.push(img.pixels);
    }
    let (height, width) = dims.expect("non-empty");
    LabeledDataset::new(Matrix::from_columns(&columns)?, labels, height, width)
}

/// Height and width for synthetic images: the largest divisor of `n` not
/// above `sqrt(n)`.
pub fn image_dims(n: usize) -> (usize, usize) {
    let mut h = (n as f64).sqrt() as usize;
    while h > 1 && n % h != 0 {
        h -= 1;
    }
    let h = h.max(1);
    (h, n / h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub density: f64,
    pub seed: u64,
}

impl SyntheticParams {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.k == 0 {
            return Err(Error::InvalidParameter("n, m and k must be positive".into()));
        }
        if !(self.density > 0.0 && self.density < 1.0) {
            return Err(Error::InvalidParameter("density must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: LabeledDataset,
    pub w_true: Matrix,
    pub h_true: BinaryMatrix,
    /// Whether any element of `W_true H_true` exceeded 1 and was clamped.
    pub clamped: bool,
}

fn random_basis(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let hi = 1.0 / k as f64;
    Matrix::from_fn(n, k, |_, _| rng.gen_range(0.0..hi))
}

fn random_code(k: usize, density: f64, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut code: Vec<u8> = (0..k).map(|_| rng.gen_bool(density) as u8).collect();
    if code.iter().all(|&b| b == 0) {
        code[rng.gen_range(0..k)] = 1;
    }
    code
}

/// Planted instance `V = clamp(W_true H_true, 0, 1)` with `W_true ~ U[0, 1/k]`
/// and nonzero Bernoulli(`density`) columns in `H_true`. Identical code
/// columns share a label.
pub fn gen_synthetic(params: &SyntheticParams) -> Result<Synthetic> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let w_true = random_basis(params.n, params.k, &mut rng);
    let codes: Vec<Vec<u8>> = (0..params.m)
        .map(|_| random_code(params.k, params.density, &mut rng))
        .collect();
    let h_true = BinaryMatrix::from_columns(&codes)?;
    let product = matmul_binary(&w_true, &h_true)?;
    let clamped = product.data().iter().any(|&v| v > 1.0);
    let v = product.map(|x| x.clamp(0.0, 1.0));

    let mut seen: HashMap<&[u8], usize> = HashMap::new();
    let labels = codes
        .iter()
        .map(|c| {
            let next = seen.len();
            format!("c{}", seen.entry(c.as_slice()).or_insert(next))
        })
        .collect();
    let (height, width) = image_dims(params.n);
    Ok(Synthetic {
        dataset: LabeledDataset::new(v, labels, height, width)?,
        w_true,
        h_true,
        clamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub n: usize,
    pub k: usize,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub density: f64,
    /// Each pixel gets independent uniform noise in `[-noise, noise]`.
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Clustered {
    pub train: LabeledDataset,
    pub test: Option<LabeledDataset>,
    pub w_true: Matrix,
    /// One distinct planted code per class (k x classes).
    pub codes: BinaryMatrix,
}

/// Labelled benchmark: every class is a distinct nonzero binary code over a
/// shared basis, and every image is `clamp(W_true code + noise, 0, 1)`.
pub fn gen_clustered(params: &ClusterParams) -> Result<Clustered> {
    if params.n == 0 || params.k == 0 || params.classes == 0 || params.train_per_class == 0 {
        return Err(Error::InvalidParameter(
            "n, k, classes and train_per_class must be positive".into(),
        ));
    }
    if !(params.density > 0.0 && params.density < 1.0) {
        return Err(Error::InvalidParameter("density must lie in (0, 1)".into()));
    }
    if !(params.noise >= 0.0 && params.noise.is_finite()) {
        return Err(Error::InvalidParameter("noise must be a finite number >= 0".into()));
    }
    if params.k < 64 && params.classes as u64 > (1u64 << params.k) - 1 {
        return Err(Error::InvalidParameter(format!(
            "{} distinct nonzero codes do not exist for k = {}",
            params.classes, params.k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let w_true = random_basis(params.n, params.k, &mut rng);
    let mut codes: Vec<Vec<u8>> = Vec::with_capacity(params.classes);
    while codes.len() < params.classes {
        let code = random_code(params.k, params.density, &mut rng);
        if !codes.contains(&code) {
            codes.push(code);
        }
    }
    let codes = BinaryMatrix::from_columns(&codes)?;
    let clean = matmul_binary(&w_true, &codes)?;
    let (height, width) = image_dims(params.n);

    let draw = |per_class: usize, rng: &mut ChaCha8Rng| -> Result<LabeledDataset> {
        let mut columns = Vec::with_capacity(per_class * params.classes);
        let mut labels = Vec::with_capacity(per_class * params.classes);
        for class in 0..params.classes {
            for _ in 0..per_class {
                let col: Vec<f64> = clean
                    .column(class)
                    .into_iter()
                    .map(|x| {
                        let e = if params.noise > 0.0 {
                            rng.gen_range(-params.noise..=params.noise)
                        } else {
                            0.0
                        };
                        (x + e).clamp(0.0, 1.0)
                    })
                    .collect();
                columns.push(col);
                labels.push(format!("class{class}"));
            }
        }
        LabeledDataset::new(Matrix::from_columns(&columns)?, labels, height, width)
    };
    let train = draw(params.train_per_class, &mut rng)?;
    let test = if params.test_per_class > 0 {
        Some(draw(params.test_per_class, &mut rng)?)
    } else {
        None
    };
    Ok(Clustered {
        train,
        test,
        w_true,
        codes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nbmf,
    Nmf,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Nbmf => "nbmf",
            Method::Nmf => "nmf",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nbmf" => Ok(Method::Nbmf),
            "nmf" => Ok(Method::Nmf),
            other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

/// Coefficient matrix of a fitted model: binary for NBMF, real for NMF.
#[derive(Debug, Clone, PartialEq)]
pub enum Codes {
    Binary(BinaryMatrix),
    Real(Matrix),
}

impl Codes {
    pub fn rows(&self) -> usize {
        match self {
            Codes::Binary(h) => h.rows(),
            Codes::Real(h) => h.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Codes::Binary(h) => h.cols(),
            Codes::Real(h) => h.cols(),
        }
    }

    pub fn to_real(&self) -> Matrix {
        match self {
            Codes::Binary(h) => h.to_real(),
            Codes::Real(h) => h.clone(),
        }
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        match self {
            Codes::Binary(h) => h.column(col).into_iter().map(f64::from).collect(),
            Codes::Real(h) => h.column(col),
        }
    }

    pub fn as_binary(&self) -> Option<&BinaryMatrix> {
        match self {
            Codes::Binary(h) => Some(h),
            Codes::Real(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub iteration: usize,
    pub mean_rmse: f64,
    /// Milliseconds since the fit started. Timing only; not reproducible.
    pub wall_ms: f64,
}

/// A trained factorization `V ~ W H`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub method: Method,
    pub w: Matrix,
    pub h: Codes,
    pub alpha: f64,
    pub rmse_trace: Vec<TracePoint>,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
    /// One label per training column, or empty when unlabelled.
    pub labels: Vec<String>,
}

impl FactorModel {
    pub fn k(&self) -> usize {
        self.w.cols()
    }

    pub fn final_rmse(&self) -> Option<f64> {
        self.rmse_trace.last().map(|t| t.mean_rmse)
    }

    /// Checks the shape and method invariants.
    pub fn validate(&self) -> Result<()> {
        let (n, k) = self.w.shape();
        if self.h.rows() != k {
            return Err(Error::dim(
                "FactorModel",
                format!("W is {n}x{k} but H has {} rows", self.h.rows()),
            ));
        }
        if !self.w.is_nonnegative() {
            return Err(Error::InvalidParameter("W has negative entries".into()));
        }
        match (&self.method, &self.h) {
            (Method::Nbmf, Codes::Binary(_)) => {}
            (Method::Nmf, Codes::Real(h)) if h.is_nonnegative() => {}
            (Method::Nmf, Codes::Real(_)) => {
                return Err(Error::InvalidParameter("NMF H has negative entries".into()))
            }
            (m, _) => {
                return Err(Error::InvalidParameter(format!(
                    "H representation does not match method {m}"
                )))
            }
        }
        if !self.labels.is_empty() && self.labels.len() != self.h.cols() {
            return Err(Error::dim(
                "FactorModel",
                format!("{} labels for {} columns", self.labels.len(), self.h.cols()),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    method: Method,
    n: usize,
    m: usize,
    k: usize,
    alpha: f64,
    seed: u64,
    iterations: usize,
    converged: bool,
    labels: Vec<String>,
}

fn matrix_csv(rows: usize, cols: usize, cell: impl Fn(usize, usize) -> String) -> String {
    let mut out = String::new();
    for r in 0..rows {
        for c in 0..cols {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&cell(r, c));
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(m: &Matrix, path: &Path) -> Result<()> {
    write_atomic(
        path,
        matrix_csv(m.rows(), m.cols(), |r, c| m.get(r, c).to_string()).as_bytes(),
    )
}

pub fn write_binary_csv(m: &BinaryMatrix, path: &Path) -> Result<()> {
    write_atomic(
        path,
        matrix_csv(m.rows(), m.cols(), |r, c| m.get(r, c).to_string()).as_bytes(),
    )
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let mut rows = Vec::new();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, idx + 1, format!("bad value {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Trace CSV body; `with_timing = false` drops the `wall_ms` column.
pub fn trace_csv(trace: &[TracePoint], with_timing: bool) -> String {
    let mut out = String::from(if with_timing {
        "iteration,mean_rmse,wall_ms\n"
    } else {
        "iteration,mean_rmse\n"
    });
    for t in trace {
        if with_timing {
            out.push_str(&format!("{},{},{:.3}\n", t.iteration, t.mean_rmse, t.wall_ms));
        } else {
            out.push_str(&format!("{},{}\n", t.iteration, t.mean_rmse));
        }
    }
    out
}

fn read_trace(path: &Path) -> Result<Vec<TracePoint>> {
    let mut trace = Vec::new();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || parse_err(path, idx + 1, "expected iteration,mean_rmse[,wall_ms]");
        if !(2..=3).contains(&fields.len()) {
            return Err(bad());
        }
        trace.push(TracePoint {
            iteration: fields[0].trim().parse().map_err(|_| bad())?,
            mean_rmse: fields[1].trim().parse().map_err(|_| bad())?,
            wall_ms: match fields.get(2) {
                Some(f) => f.trim().parse().map_err(|_| bad())?,
                None => 0.0,
            },
        });
    }
    Ok(trace)
}

pub const W_FILE: &str = "W.csv";
pub const H_FILE: &str = "H.csv";
pub const META_FILE: &str = "meta.json";
pub const TRACE_FILE: &str = "trace.csv";

/// Writes `W.csv`, `H.csv`, `meta.json` and `trace.csv` into `dir`.
pub fn save_model(model: &FactorModel, dir: &Path) -> Result<()> {
    model.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix_csv(&model.w, &dir.join(W_FILE))?;
    match &model.h {
        Codes::Binary(h) => write_binary_csv(h, &dir.join(H_FILE))?,
        Codes::Real(h) => write_matrix_csv(h, &dir.join(H_FILE))?,
    }
    let meta = ModelMeta {
        method: model.method,
        n: model.w.rows(),
        m: model.h.cols(),
        k: model.k(),
        alpha: model.alpha,
        seed: model.seed,
        iterations: model.iterations,
        converged: model.converged,
        labels: model.labels.clone(),
    };
    let mut json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    json.push('\n');
    write_atomic(&dir.join(META_FILE), json.as_bytes())?;
    write_atomic(
        &dir.join(TRACE_FILE),
        trace_csv(&model.rmse_trace, true).as_bytes(),
    )
}

pub fn load_model(dir: &Path) -> Result<FactorModel> {
    let meta_path = dir.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: ModelMeta = serde_json::from_str(&meta_text).map_err(|e| Error::Format {
        path: meta_path.clone(),
        msg: e.to_string(),
    })?;
    let inconsistent = |msg: String| Error::Format {
        path: dir.to_path_buf(),
        msg,
    };

    let w = read_matrix_csv(&dir.join(W_FILE))?;
    let h_real = read_matrix_csv(&dir.join(H_FILE))?;
    if w.shape() != (meta.n, meta.k) {
        return Err(inconsistent(format!(
            "W is {}x{}, meta says {}x{}",
            w.rows(),
            w.cols(),
            meta.n,
            meta.k
        )));
    }
    if h_real.shape() != (meta.k, meta.m) {
        return Err(inconsistent(format!(
            "H is {}x{}, meta says {}x{}",
            h_real.rows(),
            h_real.cols(),
            meta.k,
            meta.m
        )));
    }
    let h = match meta.method {
        Method::Nbmf => Codes::Binary(BinaryMatrix::from_real(&h_real).map_err(|e| {
            Error::Format {
                path: dir.join(H_FILE),
                msg: format!("NBMF model requires binary H: {e}"),
            }
        })?),
        Method::Nmf => Codes::Real(h_real),
    };
    let rmse_trace = read_trace(&dir.join(TRACE_FILE))?;
    if rmse_trace.len() != meta.iterations + 1 {
        return Err(inconsistent(format!(
            "trace has {} entries for {} iterations",
            rmse_trace.len(),
            meta.iterations
        )));
    }
    let model = FactorModel {
        method: meta.method,
        w,
        h,
        alpha: meta.alpha,
        rmse_trace,
        iterations: meta.iterations,
        converged: meta.converged,
        seed: meta.seed,
        labels: meta.labels,
    };
    model.validate().map_err(|e| inconsistent(e.to_string()))?;
    Ok(model)
}
