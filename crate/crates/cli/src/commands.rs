use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;
use vppe::experiment::{generate, run_config, BenchRow, SyntheticConfig};
use vppe::fitting::{EmulatorParams, PriorChoice};
use vppe::gradcheck::{gradient_check, GradCheckConfig};
use vppe::predict::{predict_batch, relative_rmse, rmse, PredictiveResult};
use vppe::reshape::{reshape_space_as_input, ReshapeMode};
use vppe::{DesignMatrix, Execution, FitOptions, FittedEmulator, Method, OutputMatrix, PredictMode, TrendBasis};

use crate::error::CliError;
use crate::io;
use crate::{BenchArgs, FitArgs, GenArgs, GradcheckArgs, MethodArg, PredictArgs, ReshapeArgs, ReshapeModeArg};

/// Saved model: fitted parameters plus where the training data lives.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub params: EmulatorParams,
    pub design_path: PathBuf,
    pub output_path: PathBuf,
    pub rows_path: Option<PathBuf>,
}

pub fn configure_threads(threads: Option<usize>) -> Result<Execution, CliError> {
    match threads {
        None => Ok(Execution::default()),
        Some(0) => Err(CliError::usage("--threads must be at least 1")),
        Some(1) => Ok(Execution::Sequential),
        Some(t) => {
            #[cfg(feature = "parallel")]
            {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build_global()
                    .map_err(|e| CliError::usage(format!("cannot start {t} threads: {e}")))?;
                Ok(Execution::Parallel)
            }
            #[cfg(not(feature = "parallel"))]
            {
                warn!("built without the `parallel` feature; ignoring --threads {t}");
                Ok(Execution::Sequential)
            }
        }
    }
}

pub fn gen(a: &GenArgs) -> Result<(), CliError> {
    if a.n < 2 {
        return Err(CliError::usage("--n must be at least 2 so both splits are nonempty"));
    }
    if let Some(p) = a.p {
        if p != a.ranges.len() {
            return Err(CliError::usage(format!("--p {p} does not match {} ranges", a.ranges.len())));
        }
    }
    let config = SyntheticConfig {
        n_train: a.n / 2,
        n_test: a.n - a.n / 2,
        k: a.k,
        ranges: a.ranges.clone(),
        family: a.family,
        sigma2: a.sigma2,
        seed: a.seed,
    };
    let data = generate(&config)?;
    let p = a.ranges.len();
    let mut x = vec![0.0; a.n * p];
    let mut y = vec![0.0; a.n * a.k];
    for (split_x, split_y, idx) in [(&data.train_x, &data.train_y, &data.train_idx), (&data.test_x, &data.test_y, &data.test_idx)] {
        for (r, &i) in idx.iter().enumerate() {
            x[i * p..(i + 1) * p].copy_from_slice(split_x.row(r));
            y[i * a.k..(i + 1) * a.k].copy_from_slice(split_y.row(r));
        }
    }
    let out = &a.out;
    io::write_design(&out.join("design.csv"), &DesignMatrix::new(a.n, p, x)?)?;
    io::write_outputs(&out.join("output.csv"), &OutputMatrix::new(a.n, a.k, y)?)?;
    io::write_indices(&out.join("train_idx.csv"), &data.train_idx)?;
    io::write_indices(&out.join("test_idx.csv"), &data.test_idx)?;
    io::write_design(&out.join("train_design.csv"), &data.train_x)?;
    io::write_outputs(&out.join("train_output.csv"), &data.train_y)?;
    io::write_design(&out.join("test_design.csv"), &data.test_x)?;
    io::write_outputs(&out.join("test_output.csv"), &data.test_y)?;
    println!("{}", json!({ "train": data.train_idx.len(), "test": data.test_idx.len(), "p": p, "k": a.k, "dir": out }));
    Ok(())
}

fn load_training(design: &Path, output: &Path, rows: Option<&Path>) -> Result<(DesignMatrix, OutputMatrix), CliError> {
    let x = io::read_design(design)?;
    let y = io::read_outputs(output)?;
    if x.nrows() != y.nrows() {
        return Err(CliError::data(format!("{} design rows but {} output rows", x.nrows(), y.nrows())));
    }
    match rows {
        None => Ok((x, y)),
        Some(path) => {
            let idx = io::read_indices(path)?;
            if let Some(bad) = idx.iter().find(|&&i| i >= x.nrows()) {
                return Err(CliError::data(format!("{}: row {bad} out of range for {} rows", path.display(), x.nrows())));
            }
            Ok((x.select_rows(&idx)?, y.select_rows(&idx)?))
        }
    }
}

fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    std::fs::canonicalize(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn fit(a: &FitArgs, exec: Execution) -> Result<(), CliError> {
    let (x, y) = load_training(&a.design, &a.output, a.rows.as_deref())?;
    let method = match a.method {
        MethodArg::Vecchia => Method::Vecchia { m: a.m as usize },
        MethodArg::Exact => Method::Exact,
    };
    let options = FitOptions {
        method,
        prior: if a.flat_prior { PriorChoice::Flat } else { PriorChoice::JointlyRobust },
        nugget: a.nugget,
        estimate_nugget: a.estimate_nugget,
        scaling_rounds: a.rounds,
        output_fraction: a.output_fraction,
        subsample_seed: a.seed,
        exec,
        require_convergence: !a.allow_unconverged,
        ..Default::default()
    };
    let start = Instant::now();
    let model = vppe::fit(&x, &y, a.family, a.trend, &options)?;
    let fit_time_s = start.elapsed().as_secs_f64();
    let params = model.params().clone();
    let report = json!({
        "n": params.n,
        "p": params.p,
        "k": params.k,
        "method": params.method.to_string(),
        "fit_time_s": fit_time_s,
        "ranges": params.spec.ranges,
        "nugget": params.spec.nugget,
        "neg2log": params.diagnostics.neg2log,
        "converged": params.diagnostics.converged,
        "seeds": params.diagnostics.rounds.last().map(|r| r.seeds.iter().map(|s| match &s.state {
            Some(st) => json!({ "status": format!("{:?}", st.status), "iterations": st.iterations, "neg2log": st.f }),
            None => json!({ "error": s.error }),
        }).collect::<Vec<_>>()),
    });
    if let Some(path) = &a.dump_plan {
        match model.plan() {
            Some(plan) => io::write_json(path, plan)?,
            None => warn!("the exact method has no conditioning plan; --dump-plan ignored"),
        }
    }
    let file = ModelFile {
        params,
        design_path: absolute(&a.design)?,
        output_path: absolute(&a.output)?,
        rows_path: a.rows.as_deref().map(absolute).transpose()?,
    };
    io::write_json(&a.out, &file)?;
    println!("{report}");
    Ok(())
}

pub fn load_model(path: &Path) -> Result<FittedEmulator, CliError> {
    let file: ModelFile = io::read_json(path)?;
    let (x, y) = load_training(&file.design_path, &file.output_path, file.rows_path.as_deref())?;
    Ok(FittedEmulator::from_parts(file.params, &x, y)?)
}

fn means(preds: &[PredictiveResult]) -> Vec<f64> {
    preds.iter().flat_map(|r| r.mean.iter().copied()).collect()
}

fn scores(pred: &[f64], truth: Option<&OutputMatrix>) -> Result<serde_json::Value, CliError> {
    Ok(match truth {
        Some(t) => json!({ "rmse": rmse(pred, t.as_slice())?, "relative_rmse": relative_rmse(pred, t.as_slice())? }),
        None => json!({}),
    })
}

pub fn predict(a: &PredictArgs, exec: Execution) -> Result<(), CliError> {
    if a.compare_full && a.m_pred.is_none() {
        return Err(CliError::usage("--compare-full needs --m-pred"));
    }
    let model = load_model(&a.model)?;
    let x = io::read_design(&a.design)?;
    if x.ncols() != model.p() {
        return Err(CliError::data(format!("prediction design has {} inputs, model expects {}", x.ncols(), model.p())));
    }
    let truth = a.truth.as_deref().map(io::read_outputs).transpose()?;
    if let Some(t) = &truth {
        if t.nrows() != x.nrows() || t.ncols() != model.k() {
            return Err(CliError::data(format!(
                "truth is {}x{}, expected {}x{}",
                t.nrows(),
                t.ncols(),
                x.nrows(),
                model.k()
            )));
        }
    }
    let mode = match a.m_pred {
        Some(m) => PredictMode::Nearest(m as usize),
        None => PredictMode::Exact,
    };
    let start = Instant::now();
    let preds = predict_batch(&model, x.as_slice(), mode, exec)?;
    let predict_time_s = start.elapsed().as_secs_f64();
    let mean = means(&preds);
    io::write_table(&a.out, &io::headers("y", model.k()), &mean)?;
    if let Some(path) = &a.variance {
        let var: Vec<f64> = preds.iter().flat_map(|r| r.scale2.iter().copied()).collect();
        io::write_table(path, &io::headers("var", model.k()), &var)?;
    }
    let mut report = json!({
        "n_test": x.nrows(),
        "m_pred": a.m_pred,
        "predict_time_s": predict_time_s,
        "scores": scores(&mean, truth.as_ref())?,
    });
    if a.compare_full {
        let start = Instant::now();
        let full = predict_batch(&model, x.as_slice(), PredictMode::Exact, exec)?;
        let full_time_s = start.elapsed().as_secs_f64();
        report["full"] = json!({ "predict_time_s": full_time_s, "scores": scores(&means(&full), truth.as_ref())? });
        report["speedup"] = json!(full_time_s / predict_time_s);
    }
    println!("{report}");
    Ok(())
}

pub fn reshape(a: &ReshapeArgs) -> Result<(), CliError> {
    let x = io::read_design(&a.design)?;
    let y = io::read_outputs(&a.output)?;
    let k = y.ncols();
    let coords = match &a.coords {
        Some(path) => {
            let (_, rows) = io::read_table(path)?;
            if rows.iter().any(|r| r.len() != 1) {
                return Err(CliError::data(format!("{}: expected a single coordinate column", path.display())));
            }
            rows.into_iter().map(|r| r[0]).collect()
        }
        None if k == 1 => vec![0.0],
        None => (0..k).map(|j| j as f64 / (k - 1) as f64).collect(),
    };
    let mode = match a.mode {
        ReshapeModeArg::Full => ReshapeMode::Full,
        ReshapeModeArg::Sampled => ReshapeMode::Sampled(a.seed),
    };
    let (xd, yd) = reshape_space_as_input(&x, &y, &coords, mode)?;
    io::write_design(&a.out_design, &xd)?;
    io::write_outputs(&a.out_output, &yd)?;
    println!("{}", json!({ "rows": xd.nrows(), "inputs": xd.ncols() }));
    Ok(())
}

const BENCH_HEADER: [&str; 10] =
    ["n", "m", "k", "method", "fit_time_s", "predict_time_s", "rmse", "relative_rmse", "ranges", "converged"];

fn bench_record(row: &BenchRow) -> Vec<String> {
    vec![
        row.n.to_string(),
        row.m.map(|m| m.to_string()).unwrap_or_default(),
        row.k.to_string(),
        row.method.clone(),
        format!("{:?}", row.fit_time_s),
        format!("{:?}", row.predict_time_s),
        format!("{:?}", row.rmse),
        format!("{:?}", row.relative_rmse),
        row.ranges.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(";"),
        row.converged.to_string(),
    ]
}

pub fn bench(a: &BenchArgs, exec: Execution) -> Result<(), CliError> {
    if a.ns.is_empty() {
        return Err(CliError::usage("the sweep needs at least one training size in --ns"));
    }
    if a.methods.is_empty() {
        return Err(CliError::usage("the sweep needs at least one method"));
    }
    let with_vecchia = a.methods.iter().any(|m| matches!(m, MethodArg::Vecchia));
    if with_vecchia && a.ms.is_empty() {
        return Err(CliError::usage("the Vecchia sweep needs at least one conditioning size in --ms"));
    }
    if let Some(&m) = a.ms.iter().find(|&&m| m == 0) {
        return Err(CliError::usage(format!("conditioning size {m} must be at least 1")));
    }
    let mut methods = Vec::new();
    for m in &a.methods {
        match m {
            MethodArg::Exact => methods.push(Method::Exact),
            MethodArg::Vecchia => methods.extend(a.ms.iter().map(|&m| Method::Vecchia { m })),
        }
    }
    let mut writer = csv::Writer::from_path(&a.out).map_err(|e| CliError::data(format!("{}: {e}", a.out.display())))?;
    let csv_err = |e: csv::Error| CliError::data(format!("{}: {e}", a.out.display()));
    writer.write_record(BENCH_HEADER).map_err(csv_err)?;
    for &n in &a.ns {
        let config = SyntheticConfig {
            n_train: n,
            n_test: n,
            k: a.k,
            ranges: a.ranges.clone(),
            family: a.family,
            sigma2: 1.0,
            seed: a.seed,
        };
        let data = generate(&config)?;
        for &method in &methods {
            let options = FitOptions { method, exec, require_convergence: false, ..Default::default() };
            let out = run_config(&data, a.family, TrendBasis::Constant, &options, PredictMode::Exact, exec)?;
            info!("n={n} {method}: fit {:.2}s, relative RMSE {:.4}", out.row.fit_time_s, out.row.relative_rmse);
            writer.write_record(bench_record(&out.row)).map_err(csv_err)?;
            writer.flush().map_err(|e| CliError::data(format!("{}: {e}", a.out.display())))?;
        }
    }
    println!("{}", json!({ "rows": a.ns.len() * methods.len(), "out": a.out }));
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    let config = GradCheckConfig { instances: a.instances, n_max: a.n_max, seed: a.seed, ..Default::default() };
    let report = gradient_check(&config)?;
    println!("max relative error: {:e} over {} instances", report.max_rel_error, report.cases.len());
    if report.max_rel_error > a.tol {
        return Err(CliError::Numerical(format!("gradient error {:e} exceeds {:e}", report.max_rel_error, a.tol)));
    }
    Ok(())
}
