//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use podlstm::dataset::{Batch, Normalization, WindowSample};
use podlstm::harness::{run_benchmark, run_evaluate, run_offline, ExperimentConfig, REPORT_CSV};
use podlstm::lstm::{cell_forward, CellState, LstmLayerParams};
use podlstm::metrics::{mean_score, relative_score, ScoreSeries, SimulationReport, TimeWindow};
use podlstm::reduction::{compute_pod_with, PodMethod, PodOptions};
use podlstm::rollout::{BASIS_FILE, MODEL_FILE};
use podlstm::{Architecture, LstmModel, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: f64, detail: String) -> Outcome {
    let s = elapsed.as_secs_f64();
    check(s < limit_s, format!("{detail}; {s:.1} s (limit {limit_s} s)"))
}

fn desk_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    ExperimentConfig::load(&path).expect("desk configuration loads")
}

/// One-sided Jacobi SVD; returns the singular values in decreasing order.
fn jacobi_singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut b = if a.ncols() <= a.nrows() { a.clone() } else { a.transpose() };
    let k = b.ncols();
    for _ in 0..100 {
        let mut rotated = false;
        for i in 0..k {
            for j in i + 1..k {
                let alpha = b.column(i).norm_squared();
                let beta = b.column(j).norm_squared();
                let gamma = b.column(i).dot(&b.column(j));
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let bi = b.column(i).into_owned();
                let bj = b.column(j).into_owned();
                b.set_column(i, &(&bi * c - &bj * s));
                b.set_column(j, &(&bi * s + &bj * c));
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = b.column_iter().map(|c| c.norm()).collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

fn pod_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_res, mut worst_orth) = (0.0f64, 0.0f64);
    let mut cases = 0;
    for case in 0..40 {
        let (n, m) = if case % 4 == 3 {
            (rng.random_range(2..=256), rng.random_range(2..=64))
        } else {
            (rng.random_range(2..=64), rng.random_range(2..=256))
        };
        let z = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let sv = jacobi_singular_values(&z);
        let r = rng.random_range(1..n.min(m));
        let tail = sv[r..].iter().map(|s| s * s).sum::<f64>().sqrt();
        for method in [PodMethod::Auto, PodMethod::Svd, PodMethod::Gram] {
            let basis = compute_pod_with(&z, r, PodOptions { method, center: false }).map_err(|e| e.to_string())?;
            let v = basis.matrix();
            let residual = (&z - v * (v.transpose() * &z)).norm();
            worst_res = worst_res.max((residual - tail).abs() / tail);
            let gram = v.transpose() * v;
            worst_orth = worst_orth.max((gram - DMatrix::identity(r, r)).amax());
            cases += 1;
        }
    }
    let ok = worst_res < 1e-8 && worst_orth < 1e-10;
    match check(ok, format!("{cases} cases, residual rel err {worst_res:.2e}, |V^T V - I| {worst_orth:.2e}")) {
        Ok(d) => within(start.elapsed(), 5.0, d),
        e => e,
    }
}

fn scalar_cell(weight: f64, bias: f64) -> LstmLayerParams {
    let mut p = LstmLayerParams::zeros(1, 1);
    for w in [&mut p.w_f, &mut p.w_i, &mut p.w_c, &mut p.w_o] {
        w.fill(weight);
    }
    for b in [&mut p.b_f, &mut p.b_i, &mut p.b_c, &mut p.b_o] {
        b.fill(bias);
    }
    p
}

fn random_samples(rng: &mut ChaCha8Rng, n: usize, r: usize, ell: usize, n_w: usize) -> Vec<WindowSample> {
    (0..n)
        .map(|i| WindowSample {
            inputs: DMatrix::from_fn(r + ell, rng.random_range(1..=n_w), |_, _| rng.random_range(-2.0..2.0)),
            target: DVector::from_fn(r, |_, _| rng.random_range(-1.0..1.0)),
            origin: (0, i),
        })
        .collect()
}

fn lstm_correctness() -> Outcome {
    let start = Instant::now();
    // unit weights, zero bias, x = 1, zero initial state: every pre-activation is 1
    let s = cell_forward(&DVector::from_element(1, 1.0), &CellState::zeros(1), &scalar_cell(1.0, 0.0)).map_err(|e| e.to_string())?;
    let scalar_err = (s.c[0] - 0.556770).abs().max((s.h[0] - 0.369606).abs());

    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut generic_err = 0.0f64;
    for _ in 0..50 {
        let (w, b, x, h0, c0) = (
            rng.random_range(-2.0..2.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let prev = CellState {
            h: DVector::from_element(1, h0),
            c: DVector::from_element(1, c0),
        };
        let s = cell_forward(&DVector::from_element(1, x), &prev, &scalar_cell(w, b)).map_err(|e| e.to_string())?;
        let a = w * h0 + w * x + b;
        let c = sig(a) * c0 + sig(a) * a.tanh();
        let h = sig(a) * c.tanh();
        generic_err = generic_err.max((s.c[0] - c).abs()).max((s.h[0] - h).abs());
    }

    let (r, ell, n_w) = (2, 1, 4);
    let samples = random_samples(&mut rng, 5, r, ell, n_w);
    let refs: Vec<&WindowSample> = samples.iter().collect();
    let arch = Architecture {
        hidden: vec![4, 4],
        dense_head: true,
    };
    let mut model = LstmModel::new(&arch, r, ell, n_w, Normalization::identity(r + ell, r), 7).map_err(|e| e.to_string())?;
    let batch = Batch::pack(&refs, n_w, &model.normalization).map_err(|e| e.to_string())?;
    let (grads, _) = model.backward_batch(&batch).map_err(|e| e.to_string())?;
    let analytic: Vec<f64> = grads.slices().iter().flat_map(|s| s.iter().copied()).collect();
    let step = 1e-5;
    let mut worst = 0.0f64;
    let mut k = 0;
    for t in 0..model.params.slices().len() {
        for i in 0..model.params.slices()[t].len() {
            let orig = model.params.slices()[t][i];
            model.params.slices_mut()[t][i] = orig + step;
            let plus = model.batch_loss(&batch).map_err(|e| e.to_string())?;
            model.params.slices_mut()[t][i] = orig - step;
            let minus = model.batch_loss(&batch).map_err(|e| e.to_string())?;
            model.params.slices_mut()[t][i] = orig;
            let fd = (plus - minus) / (2.0 * step);
            worst = worst.max((fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-7));
            k += 1;
        }
    }
    let ok = scalar_err < 1e-6 && generic_err < 1e-12 && worst < 1e-4;
    let detail = format!(
        "scalar cell c={:.6} h={:.6} (err {scalar_err:.1e}), closed form err {generic_err:.1e}, FD max rel err {worst:.2e} over {k} params",
        s.c[0], s.h[0]
    );
    match check(ok, detail) {
        Ok(d) => within(start.elapsed(), 30.0, d),
        e => e,
    }
}

fn masking() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let r = rng.random_range(1..=4);
        let ell = rng.random_range(1..=3);
        let n_w = rng.random_range(1..=10);
        let layers = rng.random_range(1..=3);
        let arch = Architecture {
            hidden: (0..layers).map(|_| rng.random_range(1..=6)).collect(),
            dense_head: true,
        };
        let model = LstmModel::new(&arch, r, ell, n_w, Normalization::identity(r + ell, r), case).map_err(|e| e.to_string())?;
        let w = rng.random_range(1..=n_w);
        let window = DMatrix::from_fn(r + ell, w, |_, _| rng.random_range(-3.0..3.0));
        let mut padded = DMatrix::from_fn(r + ell, n_w, |_, _| rng.random_range(-100.0..100.0));
        padded.columns_mut(0, w).copy_from(&window);
        let mask: Vec<bool> = (0..n_w).map(|k| k < w).collect();
        let a = model.forward_normalized(&window).map_err(|e| e.to_string())?;
        let b = model.forward_masked(&padded, &mask).map_err(|e| e.to_string())?;
        worst = worst.max((a - b).amax());
    }
    check(worst <= 1e-12, format!("100 cases, max |masked - variable| {worst:.1e}"))
}

fn score_units() -> Outcome {
    let grid = TimeGrid::new(0.0, 0.025, 3).map_err(|e| e.to_string())?;
    let reference = DMatrix::from_column_slice(2, 3, &[1.0, 0.0, 3.0, 4.0, 0.0, -2.5]);
    let perfect = relative_score(&grid, &reference, &reference).map_err(|e| e.to_string())?;
    let orthogonal = DMatrix::from_column_slice(2, 3, &[0.0, 1.0, -4.0, 3.0, 2.5, 0.0]);
    let orth = relative_score(&grid, &reference, &orthogonal).map_err(|e| e.to_string())?;
    let target = 1.0 - 2f64.sqrt();
    let err_perfect = perfect.values.iter().map(|v| (v.unwrap() - 1.0).abs()).fold(0.0, f64::max);
    let err_orth = orth.values.iter().map(|v| (v.unwrap() - target).abs()).fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut err_window = 0.0f64;
    for _ in 0..50 {
        let eta = rng.random_range(2..200);
        let grid = TimeGrid::new(rng.random_range(-1.0..1.0), 0.025, eta).map_err(|e| e.to_string())?;
        let series = ScoreSeries {
            grid,
            values: (0..eta).map(|_| Some(rng.random_range(-1.0..1.0))).collect(),
        };
        let k = rng.random_range(1..=eta);
        let window = TimeWindow {
            start: grid.t_start,
            end: grid.t_start + k as f64 * grid.dt,
        };
        let m = mean_score(&series, Some(window)).map_err(|e| e.to_string())?;
        let direct = series.values[..k].iter().map(|v| v.unwrap()).sum::<f64>() / k as f64;
        if m.included != k {
            return Err(format!("window kept {} of {k} steps", m.included));
        }
        err_window = err_window.max((m.value - direct).abs());
    }
    let ok = err_perfect <= 1e-14 && err_orth <= 1e-14 && err_window <= 1e-14;
    check(
        ok,
        format!("perfect err {err_perfect:.1e}, orthogonal err {err_orth:.1e}, windowed mean err {err_window:.1e}"),
    )
}

struct DeskRun {
    bundle: PathBuf,
    evaluation: PathBuf,
    test_ids: Vec<usize>,
    etas: Vec<usize>,
}

fn desk_system(dir: &Path) -> (Outcome, Option<DeskRun>) {
    let start = Instant::now();
    let cfg = desk_config();
    let bundle = dir.join("desk");
    let evaluation = bundle.join("evaluation");
    let run = || -> podlstm::Result<_> {
        let summary = run_offline(&cfg, &bundle)?;
        let evaluated = run_evaluate(&bundle, &evaluation)?;
        Ok((summary, evaluated))
    };
    let (summary, evaluated) = match run() {
        Ok(v) => v,
        Err(e) => return (Err(format!("pipeline failed: {e}")), None),
    };
    let mut rec = Vec::new();
    let mut approx = Vec::new();
    for e in &evaluated {
        let grid = e.scores.rec.grid;
        let first = TimeWindow {
            start: grid.t_start,
            end: grid.t_start + 40.0 * grid.dt,
        };
        match (mean_score(&e.scores.rec, Some(first)), mean_score(&e.scores.approx, Some(first))) {
            (Ok(a), Ok(b)) => {
                rec.push(a.value);
                approx.push(b.value);
            }
            _ => return (Err("empty score window".into()), None),
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let (s_rec, s_approx) = (mean(&rec), mean(&approx));
    let detail = format!(
        "N={}, {}/{}/{} sims, r={}, n_w={}, {} epochs: s_rec {s_rec:.4}, s_approx {s_approx:.4} (first 40 steps averaged over {} test sims; worst sim s_rec {:.4}, s_approx {:.4})",
        cfg.hifi.state_dim(),
        cfg.split.train,
        cfg.split.validation,
        cfg.split.test,
        cfg.r,
        cfg.network.n_w,
        summary.history.len(),
        evaluated.len(),
        min(&rec),
        min(&approx)
    );
    let outcome = match check(s_rec >= 0.98 && s_approx >= 0.90, detail) {
        Ok(d) => within(start.elapsed(), 900.0, d),
        e => e,
    };
    let run = DeskRun {
        bundle,
        evaluation,
        test_ids: summary.split.test.clone(),
        etas: evaluated.iter().map(|e| e.scores.regr.len()).collect(),
    };
    (outcome, Some(run))
}

fn regression_series(run: &DeskRun) -> Outcome {
    for (id, eta) in run.test_ids.iter().zip(&run.etas) {
        let path = run.evaluation.join(format!("scores_sim_{id:04}.csv"));
        let mut rd = csv::Reader::from_path(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let col = rd
            .headers()
            .map_err(|e| e.to_string())?
            .iter()
            .position(|h| h == "s_regr")
            .ok_or("no s_regr column")?;
        let mut rows = 0;
        for rec in rd.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            rec[col].parse::<f64>().map_err(|e| format!("{}: {e}", path.display()))?;
            rows += 1;
        }
        if rows != *eta {
            return Err(format!("{} has {rows} rows for {eta} steps", path.display()));
        }
    }
    let report = fs::read_to_string(run.evaluation.join(REPORT_CSV)).map_err(|e| e.to_string())?;
    let labels: Vec<&str> = report.lines().skip(1).filter_map(|l| l.split(',').next()).collect();
    let missing: Vec<&str> = SimulationReport::ROW_LABELS.iter().copied().filter(|l| !labels.contains(l)).collect();
    check(
        missing.is_empty(),
        format!("{} per-step s_regr series; report rows {labels:?}", run.test_ids.len()),
    )
}

fn speedup() -> Outcome {
    let mut cfg = desk_config();
    cfg.r = 30;
    let rows = run_benchmark(&cfg, &[3000], 5).map_err(|e| e.to_string())?;
    let row = &rows[0];
    check(
        row.hifi.median >= 10.0 * row.surrogate.median,
        format!(
            "N={} r={}: hifi dt_r {:.3e}, surrogate dt_r {:.3e}, speedup {:.1}x (median of 5)",
            row.n,
            row.r,
            row.hifi.median,
            row.surrogate.median,
            row.speedup()
        ),
    )
}

fn digest(path: &Path) -> std::result::Result<Vec<u8>, String> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(Sha256::digest(&bytes).to_vec())
}

fn determinism(dir: &Path, desk: Option<&DeskRun>) -> Outcome {
    let cfg = desk_config();
    let first = match desk {
        Some(run) => run.bundle.clone(),
        None => {
            let p = dir.join("repeat_a");
            run_offline(&cfg, &p).map_err(|e| e.to_string())?;
            p
        }
    };
    let second = dir.join("repeat_b");
    run_offline(&cfg, &second).map_err(|e| e.to_string())?;
    for file in [MODEL_FILE, BASIS_FILE] {
        if digest(&first.join(file))? != digest(&second.join(file))? {
            return Err(format!("{file} differs between runs"));
        }
    }
    check(true, format!("{MODEL_FILE} and {BASIS_FILE} SHA-256 identical across two desk runs"))
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 pod_oracle_equivalence", pod_oracle()),
        ("2 lstm_correctness", lstm_correctness()),
        ("3 masking_equivalence", masking()),
        ("5 score_unit_cases", score_units()),
    ];
    let (desk, run) = desk_system(dir.path());
    results.push(("4 desk_scale_system", desk));
    results.push((
        "6 regression_score_series",
        match &run {
            Some(run) => regression_series(run),
            None => Err("desk run unavailable".into()),
        },
    ));
    results.push(("7 realtime_speedup", speedup()));
    results.push(("8 offline_determinism", determinism(dir.path(), run.as_ref())));
    results.sort_by_key(|(name, _)| *name);

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
