//! Acceptance checks, one line per criterion.
//!
//! Run with `cargo test -p crashcast --test acceptance`. Set
//! `CRASHCAST_REAL_DATA` to a directory of `<SYMBOL>.csv` daily files to
//! enable the real-data check; otherwise it is reported as skipped.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use crashcast::attribution::{shapley_exact, shapley_sample};
use crashcast::backtest::{capm_fit, max_drawdown, signal_to_position, strategy_returns};
use crashcast::config::{EvalMode, RunConfig};
use crashcast::evaluation::{classification_report, roc_auc};
use crashcast::features::{build_feature_matrix, compute_feature, window_hurst, FeatureConfig, FeatureKind};
use crashcast::learners::gbdt::{gbdt_train, GbdtParams, Node};
use crashcast::learners::mlp::{Activation, MlpModel, MlpParams};
use crashcast::market_data::{load_ohlcv_csv, log_returns, make_labels, ReturnPanel};
use crashcast::pipeline::{run_pipeline, RunSummary};
use crashcast::rng;
use crashcast::selection::mutual_information;
use crashcast::synthetic::{generate_synthetic_panel, ScenarioSpec};
use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Check {
    let msg = format!("{detail}; {:.1}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs());
    ensure(elapsed < limit, msg)
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for instance in 0..20u64 {
        let mut rng = rng::stream(2, &[instance]);
        let (n, d) = (12, 4);
        let hidden = if instance % 2 == 0 { vec![5] } else { vec![4, 3] };
        let activation = if instance % 4 < 2 { Activation::Tanh } else { Activation::Relu };
        let params = MlpParams { hidden, activation, seed: 100 + instance, ..Default::default() };
        let mut model = MlpModel::init(d, &params).map_err(|e| e.to_string())?;
        for layer in &mut model.layers {
            for b in &mut layer.bias {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        let x = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let l2 = 1e-3;
        let (_, grads) = model.loss_and_gradients(x.view(), &y, l2);
        let eps = 1e-5;
        let rel = |a: f64, num: f64| (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
        for l in 0..model.layers.len() {
            for k in 0..model.layers[l].weights.len() {
                let w = model.layers[l].weights[k];
                model.layers[l].weights[k] = w + eps;
                let up = model.loss(x.view(), &y, l2);
                model.layers[l].weights[k] = w - eps;
                let down = model.loss(x.view(), &y, l2);
                model.layers[l].weights[k] = w;
                worst = worst.max(rel(grads.weights[l][k], (up - down) / (2.0 * eps)));
            }
            for k in 0..model.layers[l].bias.len() {
                let b = model.layers[l].bias[k];
                model.layers[l].bias[k] = b + eps;
                let up = model.loss(x.view(), &y, l2);
                model.layers[l].bias[k] = b - eps;
                let down = model.loss(x.view(), &y, l2);
                model.layers[l].bias[k] = b;
                worst = worst.max(rel(grads.bias[l][k], (up - down) / (2.0 * eps)));
            }
        }
    }
    let detail = format!("max relative error {worst:.2e} over 20 instances (tol 1e-4)");
    if worst >= 1e-4 {
        return Err(detail);
    }
    within(start.elapsed(), Duration::from_secs(5), detail)
}

fn criterion_3() -> Check {
    let start = Instant::now();
    // Hand trace: base rate 1/2 so p = 1/2, g = p - y, h = 1/4; the best
    // stump splits {1, 2} from {3, 4}.
    let x = Array2::from_shape_vec((4, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = [0u8, 0, 1, 1];
    let lambda = 1.0;
    let params = GbdtParams {
        n_trees: 1,
        max_depth: 1,
        learning_rate: 0.3,
        lambda,
        min_child_weight: 0.0,
        ..GbdtParams::variant_a()
    };
    let m = gbdt_train(x.view(), &y, &params).map_err(|e| e.to_string())?;
    let (g_left, h_left) = (0.5 + 0.5, 0.25 + 0.25);
    let (g_right, h_right) = (-0.5 - 0.5, 0.25 + 0.25);
    let want = [-g_left / (h_left + lambda), -g_right / (h_right + lambda)];
    let got = m.trees[0].leaf_weights();
    let split_ok = matches!(m.trees[0].nodes[0], Node::Split { .. });
    let leaf_err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if !split_ok || got.len() != 2 || leaf_err > 1e-10 {
        return Err(format!("stump leaves {got:?}, expected {want:?}"));
    }

    let mut rng = rng::stream(3, &[0]);
    let n = 300;
    let x = Array2::from_shape_fn((n, 5), |_| rng.sample::<f64, _>(StandardNormal));
    let y: Vec<u8> = (0..n)
        .map(|i| {
            let z = x[[i, 0]] - 0.7 * x[[i, 1]] * x[[i, 2]] + 0.5 * rng.sample::<f64, _>(StandardNormal);
            u8::from(z > 0.3)
        })
        .collect();
    let m = gbdt_train(x.view(), &y, &GbdtParams::variant_a()).map_err(|e| e.to_string())?;
    let rounds = m.train_loss.len() - 1;
    let worst_rise = m.train_loss.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let detail = format!(
        "leaf error {leaf_err:.1e}; {rounds} rounds, loss {:.4} -> {:.4}, largest per-round change {worst_rise:.2e}",
        m.train_loss[0], m.train_loss[rounds]
    );
    if rounds != 200 || worst_rise > 0.0 {
        return Err(detail);
    }
    within(start.elapsed(), Duration::from_secs(10), detail)
}

fn criterion_4() -> Check {
    let start = Instant::now();
    let d = 8;
    let names: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    // Feature 7 never enters the model.
    let model = |x: ArrayView2<'_, f64>| -> crashcast::Result<Vec<f64>> {
        Ok(x.rows()
            .into_iter()
            .map(|r| {
                let z = r[0] * r[1] + r[2].sin() + 0.8 * r[3] - r[4] * r[5] + 0.5 * r[6] * r[6] - 0.3 * r[0];
                1.0 / (1.0 + (-z).exp())
            })
            .collect())
    };
    let mut rng = rng::stream(4, &[0]);
    let background = Array2::from_shape_fn((40, d), |_| rng.sample::<f64, _>(StandardNormal));
    let row = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
    let exact = shapley_exact(&model, row.view(), background.view(), &names).map_err(|e| e.to_string())?;
    let gap = exact.efficiency_gap().abs();
    if gap > 1e-10 || exact.phi[7] != 0.0 {
        return Err(format!("efficiency gap {gap:.2e}, dummy phi {}", exact.phi[7]));
    }
    let sampled =
        shapley_sample(&model, row.view(), background.view(), &names, 10_000, 11).map_err(|e| e.to_string())?;
    let err = exact.phi.iter().zip(&sampled.phi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let detail = format!(
        "efficiency gap {gap:.1e}, dummy phi 0; sampled vs exact max abs error {err:.4} at d=8, 10^4 perms (tol 0.01)"
    );
    if err >= 0.01 {
        return Err(detail);
    }
    within(start.elapsed(), Duration::from_secs(60), detail)
}

/// H(X) + H(Y) - H(X, Y) from raw value counts.
fn contingency_mi(x: &[f64], y: &[u8]) -> f64 {
    let n = x.len() as f64;
    let mut px: HashMap<u64, f64> = HashMap::new();
    let mut py: HashMap<u8, f64> = HashMap::new();
    let mut pxy: HashMap<(u64, u8), f64> = HashMap::new();
    for (&a, &b) in x.iter().zip(y) {
        *px.entry(a.to_bits()).or_default() += 1.0 / n;
        *py.entry(b).or_default() += 1.0 / n;
        *pxy.entry((a.to_bits(), b)).or_default() += 1.0 / n;
    }
    let h = |p: &mut dyn Iterator<Item = f64>| -> f64 { p.map(|v| -v * v.ln()).sum() };
    h(&mut px.values().copied()) + h(&mut py.values().copied()) - h(&mut pxy.values().copied())
}

fn criterion_5() -> Check {
    // Discretised fixtures: equally frequent levels, so every level is its own
    // quantile bin.
    let mut worst = 0.0f64;
    let fixtures: Vec<(Vec<f64>, Vec<u8>, usize)> = vec![
        (vec![0., 0., 0., 0., 1., 1., 1., 1.], vec![0, 0, 0, 1, 0, 1, 1, 1], 2),
        (vec![1., 0., 1., 0., 1., 0., 1., 0.], vec![1, 1, 0, 0, 1, 1, 0, 0], 2),
        (vec![0., 1., 2., 3., 0., 1., 2., 3., 0., 1., 2., 3.], vec![0, 0, 1, 1, 0, 1, 1, 1, 0, 0, 0, 1], 4),
    ];
    for (x, y, bins) in &fixtures {
        let got = mutual_information(x, y, *bins).map_err(|e| e.to_string())?;
        worst = worst.max((got - contingency_mi(x, y)).abs());
    }
    let mut rng = rng::stream(5, &[0]);
    let n = 5000;
    let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let y: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
    let indep = mutual_information(&x, &y, 10).map_err(|e| e.to_string())?;
    let y2: Vec<u8> = (0..1000).map(|i| (i % 2) as u8).collect();
    let x2: Vec<f64> = y2.iter().map(|&v| v as f64).collect();
    let ident = mutual_information(&x2, &y2, 10).map_err(|e| e.to_string())?;
    let ln2_err = (ident - std::f64::consts::LN_2).abs();
    ensure(
        worst <= 1e-12 && indep < 0.01 && ln2_err <= 1e-12,
        format!("brute-force diff {worst:.1e}; MI(indep, n=5000) {indep:.5}; |MI(x=y) - ln 2| {ln2_err:.1e}"),
    )
}

fn criterion_6() -> Check {
    let start = Instant::now();
    let tau = 64;
    let windows = 1000;
    let mean_h = |phi: f64, tag: u64| -> f64 {
        let mut total = 0.0;
        for w in 0..windows {
            let mut rng = rng::stream(6, &[tag, w]);
            let mut prev: f64 = rng.sample(StandardNormal);
            let x: Vec<f64> = (0..tau)
                .map(|_| {
                    prev = phi * prev + rng.sample::<f64, _>(StandardNormal);
                    prev
                })
                .collect();
            total += window_hurst(&x);
        }
        total / windows as f64
    };
    let iid = mean_h(0.0, 0);
    let pos = mean_h(0.9, 1);
    let neg = mean_h(-0.9, 2);
    let detail =
        format!("mean H iid {iid:.3} (want [0.45, 0.55]), AR(0.9) {pos:.3} (> 0.55), AR(-0.9) {neg:.3} (< 0.45)");
    if !((0.45..=0.55).contains(&iid) && pos > 0.55 && neg < 0.45) {
        return Err(detail);
    }
    within(start.elapsed(), Duration::from_secs(30), detail)
}

fn criterion_7() -> Check {
    let tol = 1e-12;
    let mut fails = Vec::new();
    let auc = |s: &[f64], y: &[u8]| roc_auc(s, y).unwrap();
    for (got, want) in [
        (auc(&[0.9, 0.8, 0.3, 0.2], &[1, 1, 0, 0]), 1.0),
        (auc(&[0.3, 0.7], &[1, 0]), 0.0),
        (auc(&[0.4; 6], &[1, 0, 1, 0, 0, 1]), 0.5),
    ] {
        if (got - want).abs() > tol {
            fails.push(format!("AUC {got} != {want}"));
        }
    }
    let dd = max_drawdown(&[1.0, 1.1, 0.99, 1.2]).map_err(|e| e.to_string())?;
    if (dd - (0.99 / 1.1 - 1.0)).abs() > tol || (dd + 0.1).abs() > tol {
        fails.push(format!("drawdown {dd}"));
    }
    let bench: Vec<f64> = (0..50).map(|i| ((i * 37) % 17) as f64 / 1000.0 - 0.008).collect();
    for (a, b) in [(0.0, 0.5), (0.001, 1.0), (-0.0004, -0.3)] {
        let strat: Vec<f64> = bench.iter().map(|r| a + b * r).collect();
        let fit = capm_fit(&strat, &bench).map_err(|e| e.to_string())?;
        if (fit.alpha_daily - a).abs() > tol || (fit.beta - b).abs() > tol || !fit.degenerate {
            fails.push(format!("CAPM ({a}, {b}) -> ({}, {})", fit.alpha_daily, fit.beta));
        }
    }
    let rep = classification_report(&[1, 1, 0, 0], &[1, 1, 1, 0]).map_err(|e| e.to_string())?;
    let c = &rep.classes[1];
    if (c.precision - 2.0 / 3.0).abs() > tol || (c.recall - 1.0).abs() > tol || (c.f1 - 0.8).abs() > tol {
        fails.push(format!("report {} {} {}", c.precision, c.recall, c.f1));
    }
    if fails.is_empty() {
        Ok("AUC trivial cases, drawdown -0.1, CAPM exact fixtures, report 2/3 / 1 / 0.8 all within 1e-12".into())
    } else {
        Err(fails.join("; "))
    }
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("crashcast-acceptance-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn synthetic_config(mode: EvalMode, out: &Path) -> RunConfig {
    let mut cfg = RunConfig { seed: 7, mode, out: out.to_path_buf(), ..RunConfig::default() };
    cfg.data.synthetic = Some("planted-crash".into());
    cfg
}

fn timed_run(mode: EvalMode, out: &Path) -> Result<(RunSummary, Duration), String> {
    let start = Instant::now();
    let summary = run_pipeline(synthetic_config(mode, out)).map_err(|e| e.to_string())?;
    Ok((summary, start.elapsed()))
}

struct Runs {
    in_sample: (RunSummary, Duration),
    walk_forward: (RunSummary, Duration),
    dirs: Vec<PathBuf>,
}

fn criterion_8(runs: &Runs) -> Check {
    let (is, is_time) = &runs.in_sample;
    let (wf, wf_time) = &runs.walk_forward;
    let limit = Duration::from_secs(120);
    let final_auc = wf.final_fold_roc_auc.unwrap_or(f64::NAN);
    let quint = |s: &RunSummary| match (s.q1_mean_forward_return, s.q5_mean_forward_return) {
        (Some(q1), Some(q5)) => q5 < q1,
        _ => false,
    };
    let sharpe = |s: &RunSummary| match (s.strategy_sharpe, s.benchmark_sharpe) {
        (Some(a), Some(b)) => a > b,
        _ => false,
    };
    let detail = format!(
        "in-sample {:.1}s AUC {:.4} Q1 {:.4} Q5 {:.4} Sharpe {:.2} vs {:.2}; walk-forward {:.1}s final-fold AUC {final_auc:.4} Q1 {:.4} Q5 {:.4} Sharpe {:.2} vs {:.2}",
        is_time.as_secs_f64(),
        is.roc_auc,
        is.q1_mean_forward_return.unwrap_or(f64::NAN),
        is.q5_mean_forward_return.unwrap_or(f64::NAN),
        is.strategy_sharpe.unwrap_or(f64::NAN),
        is.benchmark_sharpe.unwrap_or(f64::NAN),
        wf_time.as_secs_f64(),
        wf.q1_mean_forward_return.unwrap_or(f64::NAN),
        wf.q5_mean_forward_return.unwrap_or(f64::NAN),
        wf.strategy_sharpe.unwrap_or(f64::NAN),
        wf.benchmark_sharpe.unwrap_or(f64::NAN),
    );
    let ok = *is_time < limit
        && *wf_time < limit
        && is.roc_auc >= 0.95
        && final_auc >= 0.85
        && quint(is)
        && quint(wf)
        && sharpe(is)
        && sharpe(wf);
    ensure(ok, detail)
}

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn criterion_9() -> Outcome {
    let Some(dir) = std::env::var_os("CRASHCAST_REAL_DATA") else {
        return Outcome::Skip("CRASHCAST_REAL_DATA not set".into());
    };
    let dir = PathBuf::from(dir);
    let check = || -> Check {
        let spy = load_ohlcv_csv(dir.join("SPY.csv"), "SPY").map_err(|e| e.to_string())?;
        let ret: Vec<f64> = spy.adj_close.windows(2).map(|w| w[1].ln() - w[0].ln()).collect();
        let panel = ReturnPanel { calendar: spy.dates[1..].to_vec(), symbols: vec!["SPY".into()], returns: vec![ret] };
        let labels = make_labels(&panel, "SPY", 5, 0.01).map_err(|e| e.to_string())?;
        let rate = labels.base_rate();
        let out = scratch("real");
        let mut cfg = RunConfig::default();
        cfg.data.dir = Some(dir.clone());
        cfg.out = out.clone();
        run_pipeline(cfg).map_err(|e| e.to_string())?;
        let metrics = fs::read_to_string(out.join("backtest_metrics.csv")).map_err(|e| e.to_string())?;
        let fields = [
            "Sharpe Ratio",
            "Information Ratio vs SPY",
            "Maximum Drawdown",
            "Annualized Return",
            "Annualized Volatility",
            "CAPM Alpha (daily)",
            "CAPM Beta",
            "T-stat Alpha",
        ];
        let missing: Vec<&str> = fields.iter().copied().filter(|f| !metrics.contains(f)).collect();
        let _ = fs::remove_dir_all(&out);
        ensure(
            (0.18..=0.26).contains(&rate) && missing.is_empty(),
            format!("SPY base rate {rate:.4} (want [0.18, 0.26]); missing report fields {missing:?}"),
        )
    };
    match check() {
        Ok(m) => Outcome::Pass(m),
        Err(m) => Outcome::Fail(m),
    }
}

fn criterion_10(runs: &Runs) -> Check {
    let (a, b) = (&runs.dirs[1], &runs.dirs[2]);
    let mut names: Vec<String> = fs::read_dir(a)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut differ = Vec::new();
    for name in &names {
        let left = fs::read(a.join(name)).map_err(|e| e.to_string())?;
        let right = fs::read(b.join(name)).unwrap_or_default();
        if left != right {
            differ.push(name.clone());
        }
    }
    let required = ["model.json", "backtest.json", "evaluation.json", "manifest.json"];
    let present = required.iter().all(|r| names.iter().any(|n| n == r));
    ensure(
        differ.is_empty() && present,
        format!("{} artifacts compared across two output dirs, {} differ {differ:?}", names.len(), differ.len()),
    )
}

fn truncate(panel: &ReturnPanel, n: usize) -> ReturnPanel {
    ReturnPanel {
        calendar: panel.calendar[..n].to_vec(),
        symbols: panel.symbols.clone(),
        returns: panel.returns.iter().map(|c| c[..n].to_vec()).collect(),
    }
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn criterion_11() -> Check {
    let spec = ScenarioSpec::preset("planted-crash").map_err(|e| e.to_string())?;
    let (panel, _) = generate_synthetic_panel(&spec, 7).map_err(|e| e.to_string())?;
    let full = log_returns(&panel).map_err(|e| e.to_string())?;
    let n = full.len() - 5;
    let short = truncate(&full, n);
    let cfg = FeatureConfig::default();
    let specs = cfg.enumerate(&full.symbols, "SPY").map_err(|e| e.to_string())?;
    let mut bad = Vec::new();
    let mut kinds = std::collections::BTreeSet::new();
    for s in &specs {
        kinds.insert(s.kind);
        let a = compute_feature(s, &full, "SPY", cfg.entropy_bins).map_err(|e| e.to_string())?;
        let b = compute_feature(s, &short, "SPY", cfg.entropy_bins).map_err(|e| e.to_string())?;
        if !same_bits(&a[..n], &b) {
            bad.push(s.name.clone());
        }
    }
    let fa = build_feature_matrix(&full, "SPY", &cfg).map_err(|e| e.to_string())?;
    let fb = build_feature_matrix(&short, "SPY", &cfg).map_err(|e| e.to_string())?;
    let rows = fb.n_rows();
    let matrix_ok =
        fa.values.slice(ndarray::s![..rows, ..]).iter().zip(fb.values.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
    if !matrix_ok {
        bad.push("feature matrix".into());
    }

    let mut rng = rng::stream(11, &[0]);
    let m = full.len();
    let p: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..=1.0)).collect();
    let spy = full.column("SPY").map_err(|e| e.to_string())?;
    let simple: Vec<f64> = spy.iter().map(|r| r.exp_m1()).collect();
    let pos_a = signal_to_position(&full.calendar, &p).map_err(|e| e.to_string())?;
    let pos_b = signal_to_position(&short.calendar, &p[..n]).map_err(|e| e.to_string())?;
    let ret_a = strategy_returns(&pos_a, &full.calendar, &simple, 2.0).map_err(|e| e.to_string())?;
    let ret_b = strategy_returns(&pos_b, &short.calendar, &simple[..n], 2.0).map_err(|e| e.to_string())?;
    if !same_bits(&pos_a.position[..n], &pos_b.position) {
        bad.push("positions".into());
    }
    if !same_bits(&ret_a.returns[..ret_b.returns.len()], &ret_b.returns) {
        bad.push("strategy returns".into());
    }
    let all_kinds = kinds.len() == FeatureKind::ALL.len();
    ensure(
        bad.is_empty() && all_kinds,
        format!(
            "{} feature columns over {} kinds, positions and strategy returns; changed after truncating 5 rows: {bad:?}",
            specs.len(),
            kinds.len()
        ),
    )
}

fn report(id: u32, outcome: Outcome, failures: &mut u32) {
    match outcome {
        Outcome::Pass(m) => println!("criterion {id:>2}: PASS  {m}"),
        Outcome::Fail(m) => {
            *failures += 1;
            println!("criterion {id:>2}: FAIL  {m}");
        }
        Outcome::Skip(m) => println!("criterion {id:>2}: SKIP  {m}"),
    }
}

fn outcome(c: Check) -> Outcome {
    match c {
        Ok(m) => Outcome::Pass(m),
        Err(m) => Outcome::Fail(m),
    }
}

fn main() -> ExitCode {
    // libtest arguments such as --nocapture are accepted and ignored.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut failures = 0;
    report(2, outcome(criterion_2()), &mut failures);
    report(3, outcome(criterion_3()), &mut failures);
    report(4, outcome(criterion_4()), &mut failures);
    report(5, outcome(criterion_5()), &mut failures);
    report(6, outcome(criterion_6()), &mut failures);
    report(7, outcome(criterion_7()), &mut failures);

    let dirs = vec![scratch("in-sample"), scratch("wf-a"), scratch("wf-b")];
    let runs = (|| -> Result<Runs, String> {
        let in_sample = timed_run(EvalMode::InSample, &dirs[0])?;
        let walk_forward = timed_run(EvalMode::WalkForward, &dirs[1])?;
        timed_run(EvalMode::WalkForward, &dirs[2])?;
        Ok(Runs { in_sample, walk_forward, dirs: dirs.clone() })
    })();
    match &runs {
        Ok(r) => {
            report(8, outcome(criterion_8(r)), &mut failures);
            report(9, criterion_9(), &mut failures);
            report(10, outcome(criterion_10(r)), &mut failures);
        }
        Err(e) => {
            report(8, Outcome::Fail(format!("pipeline failed: {e}")), &mut failures);
            report(9, criterion_9(), &mut failures);
            report(10, Outcome::Fail("no runs to compare".into()), &mut failures);
        }
    }
    report(11, outcome(criterion_11()), &mut failures);
    for d in &dirs {
        let _ = fs::remove_dir_all(d);
    }
    if failures == 0 {
        println!("acceptance: all checks passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} failing");
        ExitCode::FAILURE
    }
}
