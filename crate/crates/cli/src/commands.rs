use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use nbmf_core::classify::{evaluate_accuracy, ClassifyConfig};
use nbmf_core::dataset::{
    gen_clustered, gen_synthetic, load_csv, load_model, load_pgm_dir, save_csv, save_model,
    trace_csv, write_atomic, write_binary_csv, write_matrix_csv, ClusterParams, LabeledDataset,
    SyntheticParams, H_FILE, META_FILE, TRACE_FILE, W_FILE,
};
use nbmf_core::linalg::{BinaryMatrix, Matrix};
use nbmf_core::nbmf::{nbmf_fit, NbmfConfig};
use nbmf_core::nmf::{nmf_fit, NmfConfig};
use nbmf_core::qubo::QuboProblem;
use nbmf_core::solver::{solve, solve_exhaustive, AnnealConfig, Backend};
use serde_json::json;

use crate::manifest::RunManifest;
use crate::{AnnealArgs, BackendArg, ClassifyArgs, FactorizeArgs, GenSyntheticArgs, MethodArg, SolveQuboArgs};

const ORACLE_MAX_K: usize = 20;

fn anneal_config(args: &AnnealArgs, seed: u64) -> AnnealConfig {
    AnnealConfig {
        backend: match args.backend {
            BackendArg::Exhaustive => Backend::Exhaustive,
            BackendArg::Sa => Backend::SimulatedAnnealing,
            BackendArg::Pt => Backend::ParallelTempering,
        },
        sweeps: args.sweeps,
        restarts: args.restarts,
        beta_initial: args.beta_initial,
        beta_final: args.beta_final,
        replicas: args.replicas,
        seed,
    }
}

fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let data = if path.is_dir() {
        load_pgm_dir(path)
    } else {
        load_csv(path)
    };
    data.with_context(|| format!("loading dataset {}", path.display()))
}

/// `path` with `suffix` appended to its file name.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name: OsString = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn bits(q: &[u8]) -> String {
    q.iter().map(|b| if *b == 1 { '1' } else { '0' }).collect()
}

pub fn cmd_factorize(args: &FactorizeArgs) -> Result<()> {
    let start = Instant::now();
    let seed = args.seed.unwrap_or_else(rand::random);
    ensure!(
        args.alpha >= 0.0 && args.alpha.is_finite(),
        "invalid parameter: --alpha must be a finite number >= 0 (got {})",
        args.alpha
    );
    let data = load_dataset(&args.input)?;
    let anneal = anneal_config(&args.anneal, seed);

    let (mut model, params) = match args.method {
        MethodArg::Nbmf => {
            let cfg = NbmfConfig {
                k: args.k,
                alpha: args.alpha,
                conv_tol: args.tol,
                max_outer_iters: args.max_iters.unwrap_or(NbmfConfig::default().max_outer_iters),
                anneal,
                seed,
                ..NbmfConfig::default()
            };
            (nbmf_fit(data.matrix(), &cfg)?, json!({ "method": "nbmf", "config": cfg }))
        }
        MethodArg::Nmf => {
            let cfg = NmfConfig {
                k: args.k,
                conv_tol: args.tol,
                max_outer_iters: args.max_iters.unwrap_or(NmfConfig::default().max_outer_iters),
                seed,
                ..NmfConfig::default()
            };
            (nmf_fit(data.matrix(), &cfg)?, json!({ "method": "nmf", "config": cfg }))
        }
    };
    model.labels = data.labels().to_vec();

    save_model(&model, &args.out)?;
    let reloaded = load_model(&args.out).context("validating written model")?;
    ensure!(
        reloaded.w == model.w && reloaded.h == model.h,
        "model directory does not reproduce the fitted factors"
    );

    let mut manifest = RunManifest::new("factorize", params, Some(seed));
    manifest.input(&args.input);
    for file in [W_FILE, H_FILE, META_FILE] {
        manifest.artifact(&args.out.join(file))?;
    }
    manifest.partial_artifact(
        &args.out.join(TRACE_FILE),
        trace_csv(&model.rmse_trace, false).as_bytes(),
        "iteration,mean_rmse",
    );
    let manifest_path = args.manifest.clone().unwrap_or_else(|| args.out.join("manifest.json"));
    manifest.write(&manifest_path, start.elapsed())?;

    println!("method: {}", model.method);
    println!("seed: {seed}");
    println!("final mean RMSE: {:.6}", model.final_rmse().unwrap_or(f64::NAN));
    println!(
        "iterations: {} ({})",
        model.iterations,
        if model.converged { "converged" } else { "iteration cap reached" }
    );
    Ok(())
}

fn recount_report(path: &Path) -> Result<(usize, usize)> {
    let text = std::fs::read_to_string(path)?;
    let mut correct = 0;
    let mut total = 0;
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        ensure!(fields.len() >= 3, "malformed report line {line:?}");
        total += 1;
        correct += (fields[1] == fields[2]) as usize;
    }
    Ok((correct, total))
}

pub fn cmd_classify(args: &ClassifyArgs) -> Result<()> {
    let start = Instant::now();
    let seed = args.seed.unwrap_or_else(rand::random);
    let model = load_model(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    let test = load_dataset(&args.test)?;
    let cfg = ClassifyConfig {
        neighbors: args.neighbors,
        anneal: anneal_config(&args.anneal, seed),
        ..ClassifyConfig::default()
    };
    let report = evaluate_accuracy(&model, &test, &cfg)?;
    write_atomic(&args.report, report.to_csv().as_bytes())?;
    let (correct, total) = recount_report(&args.report)?;
    ensure!(
        (correct, total) == (report.correct, report.total),
        "report file disagrees with computed accuracy"
    );

    let mut manifest = RunManifest::new("classify", json!({ "method": model.method.to_string(), "config": cfg }), Some(seed));
    manifest.input(&args.model);
    manifest.input(&args.test);
    manifest.artifact(&args.report)?;
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| with_suffix(&args.report, ".manifest.json"));
    manifest.write(&manifest_path, start.elapsed())?;

    println!("accuracy: {}", report.summary());
    Ok(())
}

fn select_columns(data: &LabeledDataset, cols: std::ops::Range<usize>) -> Result<LabeledDataset> {
    let columns: Vec<Vec<f64>> = cols.clone().map(|c| data.matrix().column(c)).collect();
    Ok(LabeledDataset::new(
        Matrix::from_columns(&columns)?,
        data.labels()[cols].to_vec(),
        data.height(),
        data.width(),
    )?)
}

fn select_codes(h: &BinaryMatrix, cols: std::ops::Range<usize>) -> Result<BinaryMatrix> {
    Ok(BinaryMatrix::from_columns(
        &cols.map(|c| h.column(c)).collect::<Vec<_>>(),
    )?)
}

pub fn cmd_gen_synthetic(args: &GenSyntheticArgs) -> Result<()> {
    let start = Instant::now();
    let seed = args.seed.unwrap_or_else(rand::random);
    let test_m = if args.test_out.is_some() {
        args.test_m.unwrap_or(0)
    } else {
        0
    };
    if args.test_out.is_some() && test_m == 0 {
        bail!("invalid parameter: --test-m must be positive with --test-out");
    }
    let mut written: Vec<PathBuf> = Vec::new();
    let w_path = with_suffix(&args.out, ".W_true.csv");
    let h_path = with_suffix(&args.out, ".H_true.csv");

    let params = if let Some(classes) = args.classes {
        let params = ClusterParams {
            n: args.n,
            k: args.k,
            classes,
            train_per_class: args.per_class,
            test_per_class: test_m,
            density: args.density,
            noise: args.noise,
            seed,
        };
        let data = gen_clustered(&params)?;
        save_csv(&data.train, &args.out)?;
        written.push(args.out.clone());
        write_matrix_csv(&data.w_true, &w_path)?;
        let train_codes: Vec<Vec<u8>> = (0..classes)
            .flat_map(|c| std::iter::repeat_n(data.codes.column(c), args.per_class))
            .collect();
        write_binary_csv(&BinaryMatrix::from_columns(&train_codes)?, &h_path)?;
        written.extend([w_path.clone(), h_path.clone()]);
        if let (Some(test_out), Some(test)) = (&args.test_out, &data.test) {
            save_csv(test, test_out)?;
            let test_codes: Vec<Vec<u8>> = (0..classes)
                .flat_map(|c| std::iter::repeat_n(data.codes.column(c), test_m))
                .collect();
            let test_h = with_suffix(test_out, ".H_true.csv");
            write_binary_csv(&BinaryMatrix::from_columns(&test_codes)?, &test_h)?;
            written.extend([test_out.clone(), test_h]);
        }
        json!({ "mode": "classes", "params": params })
    } else {
        let params = SyntheticParams {
            n: args.n,
            m: args.m + test_m,
            k: args.k,
            density: args.density,
            seed,
        };
        let data = gen_synthetic(&params)?;
        let train = select_columns(&data.dataset, 0..args.m)?;
        save_csv(&train, &args.out)?;
        write_matrix_csv(&data.w_true, &w_path)?;
        write_binary_csv(&select_codes(&data.h_true, 0..args.m)?, &h_path)?;
        written.extend([args.out.clone(), w_path.clone(), h_path.clone()]);
        if let Some(test_out) = &args.test_out {
            let cols = args.m..args.m + test_m;
            save_csv(&select_columns(&data.dataset, cols.clone())?, test_out)?;
            let test_h = with_suffix(test_out, ".H_true.csv");
            write_binary_csv(&select_codes(&data.h_true, cols)?, &test_h)?;
            written.extend([test_out.clone(), test_h]);
        }
        if data.clamped {
            eprintln!("note: some pixels of W_true H_true exceeded 1 and were clamped");
        }
        json!({ "mode": "plain", "params": params, "train_m": args.m, "test_m": test_m })
    };

    // Re-read every dataset we wrote.
    load_csv(&args.out).context("validating written dataset")?;
    if let Some(test_out) = &args.test_out {
        load_csv(test_out).context("validating written test dataset")?;
    }

    let mut manifest = RunManifest::new("gen-synthetic", params, Some(seed));
    for path in &written {
        manifest.artifact(path)?;
    }
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".manifest.json"));
    manifest.write(&manifest_path, start.elapsed())?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn cmd_solve_qubo(args: &SolveQuboArgs) -> Result<()> {
    let start = Instant::now();
    let seed = args.seed.unwrap_or_else(rand::random);
    let problem = QuboProblem::load_csv(&args.input)?;
    let cfg = anneal_config(&args.anneal, seed);
    let result = solve(&problem, &cfg)?;
    println!("q: {}", bits(&result.q));
    println!("energy: {}", result.energy);

    let mut summary = json!({
        "config": cfg,
        "k": problem.k(),
        "q": bits(&result.q),
        "energy": result.energy,
        "evaluations": result.evaluations,
    });
    if args.oracle {
        if problem.k() <= ORACLE_MAX_K {
            let exact = solve_exhaustive(&problem)?;
            let gap = result.energy - exact.energy;
            println!("optimum: {}", bits(&exact.q));
            println!("optimum energy: {}", exact.energy);
            println!("gap: {gap}");
            summary["optimum"] = json!(bits(&exact.q));
            summary["optimum_energy"] = json!(exact.energy);
            summary["gap"] = json!(gap);
        } else {
            eprintln!("note: --oracle skipped, k = {} exceeds {ORACLE_MAX_K}", problem.k());
        }
    }

    let mut manifest = RunManifest::new("solve-qubo", summary, Some(seed));
    manifest.input(&args.input);
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| with_suffix(&args.input, ".manifest.json"));
    manifest.write(&manifest_path, start.elapsed())?;
    Ok(())
}
