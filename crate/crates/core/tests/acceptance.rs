//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion with the
//! measured values and exits non-zero if any criterion fails.
//!
//! The synthetic-benchmark criteria share one set of training runs (10 seeds,
//! each trained on all variables, the top half and the bottom half), spread
//! over the available cores.

mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use common::*;
use imv_core::cell::{count_params, step_flop_estimate, unroll, CellConfig, GateParams, ImvCellParams, Variant};
use imv_core::checkpoint::Checkpoint;
use imv_core::dataio::{prepare_dataset, SeriesTable, Split, SplitFractions};
use imv_core::evalx::{generate_synthetic, rank_variables, rmse, selected_columns, SyntheticSpec};
use imv_core::experiment::{train_on_table, TrainedRun};
use imv_core::ndtape::NdArray;
use imv_core::trainer::{em_epoch, instance_loss, posterior, predict_windows, targets_original, ArchConfig, EmState, TrainConfig};
use rand::Rng;

const WINDOW: usize = 10;
const SEEDS: u64 = 10;
const EPOCHS: usize = 200;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

struct Report {
    failed: Vec<&'static str>,
    total: usize,
}

impl Report {
    fn run(&mut self, name: &'static str, f: impl FnOnce() -> Verdict) {
        let start = Instant::now();
        let v = f();
        let secs = start.elapsed().as_secs_f64();
        println!("{} {name}: {} [{secs:.1} s]", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        self.total += 1;
        if !v.pass {
            self.failed.push(name);
        }
    }
}

fn ln_normal(y: f64, mu: f64, sigma: f64) -> f64 {
    let z = (y - mu) / sigma;
    -0.5 * (2.0 * std::f64::consts::PI).ln() - sigma.ln() - 0.5 * z * z
}

fn ln_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sum_dev(p: &[f64]) -> f64 {
    if p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return f64::INFINITY;
    }
    (p.iter().sum::<f64>() - 1.0).abs()
}

fn gradient_check() -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    let mut draws = 0;
    for (vi, variant) in [Variant::Full, Variant::Tensor].into_iter().enumerate() {
        for k in 0..100u64 {
            let mut g = rng(1000 * vi as u64 + k);
            let (n, d, t) = (g.random_range(1..=3), g.random_range(1..=3), g.random_range(1..=5));
            let model = random_model(&mut g, n, d, variant, 0.6);
            let window = uniform_vec(&mut g, t * n, 1.5);
            let y = g.random_range(-1.5..1.5);
            let (_, analytic, q) = analytic_objective(&model, &window, y);
            let mut flat = flatten(&model);
            let mut probe = model.clone();
            let numeric = numeric_grad(&mut flat, |x| {
                unflatten(&mut probe, x);
                objective_fixed_q(&probe, &window, y, &q)
            });
            for (a, n) in analytic.iter().zip(&numeric) {
                worst = worst.max(rel_err(*a, *n));
            }
            draws += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-4 && secs < 60.0,
        format!("max relative error {worst:.2e} over {draws} draws (limit 1e-4), {secs:.1} s (limit 60 s)"),
    )
}

/// Literal element count of a standard LSTM layer of size `D` on `N`
/// inputs: four gates, each with input weights, recurrent weights and bias.
fn standard_lstm_elements(n: usize, big_d: usize) -> usize {
    let shapes = [[big_d, n], [big_d, big_d], [big_d, 1]];
    4 * shapes.iter().map(|s| s[0] * s[1]).sum::<usize>()
}

fn parameter_counts() -> Verdict {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    for n in 1..=6 {
        for d in 1..=8 {
            let big_d = (n * d) as f64;
            let nf = n as f64;
            for variant in [Variant::Full, Variant::Tensor] {
                let cfg = CellConfig::new(n, d, variant);
                let c = count_params(&cfg).unwrap();
                let literal = ImvCellParams::<f64>::zeros(cfg).element_count();
                let standard = standard_lstm_elements(n, n * d);
                let closed = match variant {
                    Variant::Full => (nf - 1.0) * big_d + (1.0 - 1.0 / nf) * big_d * big_d,
                    Variant::Tensor => 4.0 * (nf - 1.0) * big_d + 4.0 * (1.0 - 1.0 / nf) * big_d * big_d,
                };
                let ok = c.this_variant == literal
                    && c.standard_lstm == standard
                    && c.reduction == standard - literal
                    && (c.reduction as f64 - closed).abs() < 1e-6;
                if !ok {
                    mismatches.push(format!("N={n} d={d} {variant}: {c:?} literal {literal} standard {standard} closed {closed}"));
                }
            }
        }
    }
    let full = count_params(&CellConfig::new(2, 4, Variant::Full)).unwrap();
    let tensor = count_params(&CellConfig::new(2, 4, Variant::Tensor)).unwrap();
    let triple = (full.standard_lstm, full.this_variant, tensor.this_variant);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        mismatches.is_empty() && triple == (352, 312, 192) && secs < 1.0,
        format!(
            "96 grid configurations, {} mismatches{}; N=2 d=4 gives {}/{}/{}",
            mismatches.len(),
            mismatches.first().map_or(String::new(), |m| format!(" (first: {m})")),
            triple.0,
            triple.1,
            triple.2
        ),
    )
}

/// Multiplies per step read off the parameter shapes: each weight element
/// takes part in exactly one product per step, plus the three elementwise
/// products `f⊙c`, `i⊙j`, `o⊙tanh(c)` over the `D` memory cells.
fn counted_multiplies(p: &ImvCellParams<f64>) -> usize {
    let weights = p.w_j.len()
        + p.u_j.len()
        + match &p.gates {
            GateParams::Full { w, .. } => w.len(),
            GateParams::Tensor { w, u, .. } => w.len() + u.len(),
        };
    weights + 3 * p.config.layer_size()
}

fn step_cost() -> Verdict {
    let (n, d) = (8, 32);
    let full = counted_multiplies(&ImvCellParams::zeros(CellConfig::new(n, d, Variant::Full)));
    let tensor = counted_multiplies(&ImvCellParams::zeros(CellConfig::new(n, d, Variant::Tensor)));
    let est = step_flop_estimate(&CellConfig::new(n, d, Variant::Tensor));
    let consistent = est.full == full && est.tensor == tensor;
    let ratio = tensor as f64 / (full as f64 / n as f64);
    verdict(
        consistent && (ratio - 1.0).abs() <= 0.2,
        format!(
            "D=256 N=8: full {full}, tensor {tensor}, full/N {:.0}, tensor/(full/N) = {ratio:.3} (needs 0.8..1.2); estimator agrees: {consistent}",
            full as f64 / n as f64
        ),
    )
}

fn loss_bound() -> Verdict {
    let start = Instant::now();
    let (mut worst_post, mut worst_other) = (f64::INFINITY, f64::INFINITY);
    let mut nll_err = 0.0_f64;
    for k in 0..100u64 {
        let mut g = rng(5000 + k);
        let variant = if k % 2 == 0 { Variant::Tensor } else { Variant::Full };
        let (n, d, t) = (g.random_range(1..=4), g.random_range(1..=3), g.random_range(1..=5));
        let model = random_model(&mut g, n, d, variant, 1.0);
        let window = uniform_vec(&mut g, t * n, 2.0);
        let y = g.random_range(-2.5..2.5);
        let mix = model.evaluate(&window, Some(y)).unwrap();
        let (prior, mu, sigma) = (mix.prior.data(), mix.mu.data(), mix.sigma.data());
        let joint: Vec<f64> = (0..n).map(|i| prior[i].ln() + ln_normal(y, mu[i], sigma[i])).collect();
        let nll = -ln_sum_exp(&joint);
        nll_err = nll_err.max((nll + mix.log_lik.unwrap()).abs());

        let importance = random_simplex(&mut g, n);
        let q = posterior(&mix, y);
        worst_post = worst_post.min(instance_loss(&mix, y, &q, &importance).unwrap() - nll);
        for _ in 0..5 {
            let other = random_simplex(&mut g, n);
            worst_other = worst_other.min(instance_loss(&mix, y, &other, &importance).unwrap() - nll);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst_post >= -1e-9 && worst_other >= -1e-9 && nll_err < 1e-9 && secs < 10.0,
        format!(
            "min(loss − NLL) = {worst_post:.3e} with posterior q, {worst_other:.3e} with 500 random q (margin −1e-9); model NLL vs oracle {nll_err:.1e}"
        ),
    )
}

fn single_variable_equivalence() -> Verdict {
    let mut worst = 0.0_f64;
    for k in 0..100u64 {
        let mut g = rng(7000 + k);
        let (d, t) = (g.random_range(1..=5), g.random_range(1..=8));
        let model = random_model(&mut g, 1, d, Variant::Full, 1.0);
        let xs: Vec<Vec<f64>> = (0..t).map(|_| uniform_vec(&mut g, 1, 2.0)).collect();
        let arrays: Vec<NdArray<f64>> = xs.iter().map(|x| NdArray::new(vec![1, 1], x.clone()).unwrap()).collect();
        let ours = unroll(&model.cell, &arrays).unwrap();
        let oracle = TextbookLstm::from_full_cell(&model.cell).run(&xs);
        for (a, b) in ours.iter().zip(&oracle) {
            for (x, y) in a.data().iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    verdict(worst <= 1e-12, format!("max |h − h_lstm| = {worst:.2e} over 100 draws (limit 1e-12)"))
}

fn variable_isolation() -> Verdict {
    let (mut leaks, mut moved) = (0, 0);
    for k in 0..50u64 {
        let mut g = rng(9000 + k);
        let (n, d, t) = (g.random_range(2..=5), g.random_range(1..=4), g.random_range(1..=6));
        let model = random_model(&mut g, n, d, Variant::Tensor, 1.0);
        let m = g.random_range(0..n);
        let xs: Vec<NdArray<f64>> = (0..t)
            .map(|_| NdArray::new(vec![n, 1], uniform_vec(&mut g, n, 2.0)).unwrap())
            .collect();
        let zeroed: Vec<NdArray<f64>> = xs
            .iter()
            .map(|x| {
                let mut x = x.clone();
                x.data_mut()[m] = 0.0;
                x
            })
            .collect();
        let (a, b) = (unroll(&model.cell, &xs).unwrap(), unroll(&model.cell, &zeroed).unwrap());
        let mut row_m_changed = false;
        for (ha, hb) in a.iter().zip(&b) {
            for r in 0..n {
                let same = ha.row(r).iter().zip(hb.row(r)).all(|(x, y)| x.to_bits() == y.to_bits());
                if r == m {
                    row_m_changed |= !same;
                } else if !same {
                    leaks += 1;
                }
            }
        }
        moved += row_m_changed as usize;
    }
    verdict(
        leaks == 0,
        format!("{leaks} non-identical rows outside the zeroed variable over 50 draws; zeroed row changed in {moved}/50"),
    )
}

fn benchmark_table() -> SeriesTable {
    generate_synthetic(&SyntheticSpec::default()).unwrap()
}

fn simplex_invariants() -> Verdict {
    let data = prepare_dataset(&benchmark_table(), WINDOW, &SplitFractions::default()).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        ..TrainConfig::default()
    };
    let mut state: EmState<f64> = EmState::init(&ArchConfig::default(), data.n_vars(), WINDOW, 0).unwrap();
    let train = data.indices(Split::Train);
    let mut worst = 0.0_f64;
    let mut reported = 0.0_f64;
    for _ in 0..cfg.epochs {
        let stats = em_epoch(&mut state, &data, &cfg).unwrap();
        reported = reported.max(stats.simplex_error);
        let imp = &state.importance;
        worst = worst.max(sum_dev(imp.var_importance.data()));
        for row in imp.temporal_importance.data().chunks(WINDOW) {
            worst = worst.max(sum_dev(row));
        }
        for &i in &train {
            let y = data.target(i);
            let mix = state.model.evaluate(data.input(i), Some(y)).unwrap();
            for row in mix.alpha.data().chunks(WINDOW) {
                worst = worst.max(sum_dev(row));
            }
            let prior = mix.prior.data();
            worst = worst.max(sum_dev(prior));
            let joint: Vec<f64> = (0..prior.len())
                .map(|n| prior[n].ln() + ln_normal(y, mix.mu.data()[n], mix.sigma.data()[n]))
                .collect();
            let z = ln_sum_exp(&joint);
            let q: Vec<f64> = joint.iter().map(|j| (j - z).exp()).collect();
            worst = worst.max(sum_dev(&q));
        }
    }
    verdict(
        worst <= 1e-8 && reported <= 1e-8,
        format!(
            "max |Σ−1| over α rows, prior, q, I, T rows across 50 epochs: {worst:.2e} (recomputed), {reported:.2e} (in-epoch) (limit 1e-8)"
        ),
    )
}

/// Everything the benchmark criteria need from one seed.
struct SeedResult {
    seed: u64,
    ranking: Vec<usize>,
    driver_temporal: Vec<f64>,
    test_rmse: f64,
    mean_rmse: f64,
    bayes_rmse: f64,
    top_rmse: f64,
    bottom_rmse: f64,
    losses: Vec<f64>,
}

fn train(table: &SeriesTable, seed: u64) -> TrainedRun<f64> {
    let cfg = TrainConfig {
        epochs: EPOCHS,
        seed,
        ..TrainConfig::default()
    };
    train_on_table(table, WINDOW, &SplitFractions::default(), &ArchConfig::default(), &cfg, |_| {}).unwrap()
}

/// Noise-free forecast of `y` at row `r` straight from the generating
/// formula `y_r = 0.6·x1_{r−3} + 0.3·x2_{r−1} + noise`.
fn bayes(table: &SeriesTable, r: usize) -> f64 {
    0.6 * table.value(r - 3, 0) + 0.3 * table.value(r - 1, 1)
}

fn run_seed(table: &SeriesTable, seed: u64) -> SeedResult {
    let full = train(table, seed);
    let data = &full.dataset;
    let test = data.indices(Split::Test);
    let truth = targets_original(data, &test);
    let train_targets = targets_original(data, &data.indices(Split::Train));
    let mean = train_targets.iter().sum::<f64>() / train_targets.len() as f64;
    let oracle: Vec<f64> = test.iter().map(|&i| bayes(table, i + WINDOW)).collect();
    let direct: Vec<f64> = test.iter().map(|&i| table.value(i + WINDOW, table.n_cols() - 1)).collect();
    assert!(truth.iter().zip(&direct).all(|(a, b)| (a - b).abs() < 1e-9));

    let importance = &full.outcome.importance;
    let ranking = rank_variables(importance.var_importance.data());
    let n = table.n_cols();
    let reversed: Vec<usize> = ranking.iter().rev().copied().collect();
    let retrain = |order: &[usize]| {
        let cols = selected_columns(n, order, 0.5).unwrap();
        let run = train(&table.select_columns(&cols).unwrap(), seed);
        run.metrics.test.unwrap().rmse
    };
    SeedResult {
        seed,
        driver_temporal: importance.temporal_importance.row(0).to_vec(),
        test_rmse: full.metrics.test.as_ref().unwrap().rmse,
        mean_rmse: rmse(&truth, &vec![mean; truth.len()]).unwrap(),
        bayes_rmse: rmse(&truth, &oracle).unwrap(),
        top_rmse: retrain(&ranking),
        bottom_rmse: retrain(&reversed),
        losses: full.outcome.history.iter().map(|r| r.stats.mean_loss).collect(),
        ranking,
    }
}

/// Run `f` over `0..jobs` on all available cores, keeping input order.
fn parallel_map<T: Send>(jobs: u64, f: impl Fn(u64) -> T + Sync) -> Vec<T> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs as usize);
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<(u64, T)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst) as u64;
                if j >= jobs {
                    break;
                }
                let r = f(j);
                out.lock().unwrap().push((j, r));
            });
        }
    });
    let mut v = out.into_inner().unwrap();
    v.sort_by_key(|(j, _)| *j);
    v.into_iter().map(|(_, r)| r).collect()
}

fn importance_recovery(results: &[SeedResult]) -> Verdict {
    let mut ranked = 0;
    let mut timed = 0;
    let mut lines = Vec::new();
    for r in results {
        let top3 = &r.ranking[..3];
        let ok_rank = top3.contains(&0) && top3.contains(&1);
        let argmax = (0..WINDOW)
            .max_by(|&a, &b| r.driver_temporal[a].total_cmp(&r.driver_temporal[b]))
            .unwrap();
        let lag = WINDOW - 1 - argmax;
        let ok_lag = lag.abs_diff(2) <= 1;
        ranked += ok_rank as usize;
        timed += ok_lag as usize;
        lines.push(format!("s{}:{:?}/lag{lag}", r.seed, top3));
    }
    verdict(
        ranked >= 8 && timed >= 7,
        format!(
            "drivers in top 3 of I for {ranked}/10 seeds (need 8), argmax of x1 temporal importance at lag 2±1 for {timed}/10 (need 7); {}",
            lines.join(" ")
        ),
    )
}

fn prediction_quality(results: &[SeedResult]) -> Verdict {
    let mut good = 0;
    let mut lines = Vec::new();
    for r in results {
        let ok = r.test_rmse <= 0.5 * r.mean_rmse && r.test_rmse >= 0.95 * r.bayes_rmse;
        good += ok as usize;
        lines.push(format!("s{}:{:.4}", r.seed, r.test_rmse));
    }
    let r0 = &results[0];
    verdict(
        good >= 8,
        format!(
            "{good}/10 seeds within [0.95·bayes, 0.5·mean] (need 8); mean-predictor {:.4}, bayes {:.4}; test RMSE {}",
            r0.mean_rmse,
            r0.bayes_rmse,
            lines.join(" ")
        ),
    )
}

fn selection_protocol(results: &[SeedResult]) -> Verdict {
    let (mut good, mut one_sided) = (0, 0);
    let mut lines = Vec::new();
    for r in results {
        let beats_bottom = r.top_rmse < r.bottom_rmse;
        good += ((r.top_rmse - r.test_rmse).abs() <= 0.15 * r.test_rmse && beats_bottom) as usize;
        one_sided += (r.top_rmse <= 1.15 * r.test_rmse && beats_bottom) as usize;
        lines.push(format!("s{}:{:.3}/{:.3}/{:.3}", r.seed, r.test_rmse, r.top_rmse, r.bottom_rmse));
    }
    verdict(
        good >= 8,
        format!(
            "{good}/10 seeds with |top − full| ≤ 0.15·full and top < bottom (need 8; {one_sided}/10 if only a worse top counts); full/top/bottom test RMSE {}",
            lines.join(" ")
        ),
    )
}

fn loss_trend(results: &[SeedResult]) -> Verdict {
    let mut monotone = 0;
    let mut overall = 0;
    for r in results {
        let window = &r.losses[4..50];
        monotone += window.windows(2).all(|w| w[1] <= w[0]) as usize;
        overall += (window[window.len() - 1] <= window[0]) as usize;
    }
    verdict(
        monotone >= 9,
        format!("mean loss non-increasing at every epoch 5→50 in {monotone}/10 seeds (need 9); loss(50) ≤ loss(5) in {overall}/10"),
    )
}

fn determinism_and_persistence() -> Verdict {
    let table = generate_synthetic(&SyntheticSpec {
        length: 400,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let arch = ArchConfig {
        per_var_dim: 4,
        ..ArchConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 32,
        seed: 11,
        ..TrainConfig::default()
    };
    let go = || train_on_table::<f64>(&table, 6, &SplitFractions::default(), &arch, &cfg, |_| {}).unwrap();
    let (a, b) = (go(), go());
    let metrics_same = serde_json::to_vec_pretty(&a.metrics).unwrap() == serde_json::to_vec_pretty(&b.metrics).unwrap();
    let ck_same = a.outcome.checkpoint.to_json().unwrap() == b.outcome.checkpoint.to_json().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    a.outcome.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let round_trip = loaded == a.outcome.checkpoint && loaded.to_json().unwrap() == a.outcome.checkpoint.to_json().unwrap();
    let idx: Vec<usize> = (0..a.dataset.len()).collect();
    let before = predict_windows(&a.outcome.model, &a.dataset, &idx).unwrap();
    let after = predict_windows(&loaded.model::<f64>().unwrap(), &a.dataset, &idx).unwrap();
    let drift = before.iter().zip(&after).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    verdict(
        metrics_same && ck_same && round_trip && drift <= 1e-9,
        format!(
            "metrics JSON identical: {metrics_same}, checkpoint JSON identical: {ck_same}, save/load bit-exact: {round_trip}, max prediction drift {drift:.1e} over {} windows",
            idx.len()
        ),
    )
}

fn main() {
    let mut report = Report {
        failed: Vec::new(),
        total: 0,
    };
    report.run("gradient-check", gradient_check);
    report.run("parameter-counts", parameter_counts);
    report.run("step-cost", step_cost);
    report.run("loss-upper-bound", loss_bound);
    report.run("single-variable-lstm-equivalence", single_variable_equivalence);
    report.run("variable-isolation", variable_isolation);
    report.run("simplex-invariants", simplex_invariants);

    let start = Instant::now();
    let table = benchmark_table();
    let results = parallel_map(SEEDS, |s| run_seed(&table, s));
    println!(
        "benchmark: {SEEDS} seeds × 3 trainings of {EPOCHS} epochs in {:.0} s",
        start.elapsed().as_secs_f64()
    );
    report.run("synthetic-importance-recovery", || importance_recovery(&results));
    report.run("synthetic-prediction-quality", || prediction_quality(&results));
    report.run("selection-protocol", || selection_protocol(&results));
    report.run("determinism-and-persistence", determinism_and_persistence);

    println!(
        "acceptance: {}/{} passed{}",
        report.total - report.failed.len(),
        report.total,
        if report.failed.is_empty() {
            String::new()
        } else {
            format!("; failed: {}", report.failed.join(", "))
        }
    );
    // An empirical probe of the trainer, reported but not an acceptance
    // criterion.
    let probe = loss_trend(&results);
    println!("PROBE {} loss-trend: {}", if probe.pass { "holds" } else { "does not hold" }, probe.detail);
    if !report.failed.is_empty() {
        std::process::exit(1);
    }
}
