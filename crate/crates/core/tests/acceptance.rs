//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use halfstrip::branching::{
    offspring_pmf_lower_series, offspring_pmf_upper_series, zeta_minus_seq_anchored, Anchor,
    BranchingData,
};
use halfstrip::classification::{
    classify, expected_return_time, SeriesValue, Verdict, DEFAULT_HORIZON,
};
use halfstrip::model::ThetaSpec;
use halfstrip::oracle::{compare_cells, simulate, truncated_solve, Per, SimConfig};
use halfstrip::stationary::{
    balance_residual, decay_rate_of_tail, matrix_product_check, r_plus, stationary_dist,
};
use halfstrip::{QbdModel, RowVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_pr_model, retrial, scalar_model};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const TOL: f64 = 1e-12;
const RANDOM_MODELS: usize = 20;
const MODEL_SEED: u64 = 20_261_015;
const SIM_SEED: u64 = 7;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn closed_form_decay(lambda: f64, mu: f64, c: usize, theta: f64, exact: f64) -> Outcome {
    let start = Instant::now();
    let model = retrial(lambda, mu, c, &ThetaSpec::Constant(theta));
    let got = decay_rate_of_tail(&model, TOL).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(
        (got - exact).abs() <= 1e-8 && elapsed < Duration::from_secs(1),
        format!(
            "lambda_A- = {got:.10} (exact {exact:.10}), {} ms",
            elapsed.as_millis()
        ),
    )
}

fn criterion_1() -> Outcome {
    closed_form_decay(0.2, 0.5, 1, 0.3, 0.2 * (0.2 + 0.3) / (0.5 * 0.3))
}

fn criterion_2() -> Outcome {
    let (l, m, t): (f64, f64, f64) = (0.1, 0.3, 0.3);
    let exact = l / (t * m) * ((l + t).powi(2) + t * m) / (3.0 * l + 2.0 * m + 2.0 * t);
    closed_form_decay(l, m, 2, t, exact)
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    for (l, m, c) in [(0.2, 0.5, 1), (0.1, 0.3, 2)] {
        let model = retrial(l, m, c, &ThetaSpec::Constant(0.3));
        let data = BranchingData::compute(&model, 1, TOL).map_err(|e| e.to_string())?;
        for n in 1..=data.tail_start() + 5 {
            let r = r_plus(&model, &data, n);
            for i in 0..model.d - 1 {
                worst = worst.max(r.row(i).iter().fold(0.0, |a, x| a.max(x.abs())));
            }
        }
    }
    ensure(
        worst <= 1e-10,
        format!("largest entry outside the last row {worst:.3e}"),
    )
}

fn criterion_4() -> Outcome {
    let (mu, theta) = (0.5, 0.3);
    let mut checked = 0;
    let mut bad = Vec::new();
    let lambdas: Vec<f64> = (1..=40)
        .map(|k| k as f64 * 0.01)
        .chain([0.2653, 0.26533, 0.2654])
        .collect();
    for lambda in lambdas {
        let rc = lambda * (lambda + theta) / (mu * theta);
        if (rc - 1.0).abs() <= 1e-6 {
            continue;
        }
        let model = retrial(lambda, mu, 1, &ThetaSpec::Constant(theta));
        let c =
            classify(&model, &RowVector::uniform(2), DEFAULT_HORIZON).map_err(|e| e.to_string())?;
        checked += 1;
        if (c.verdict == Verdict::PositiveRecurrent) != (rc < 1.0) {
            bad.push(format!("lambda={lambda} r_c={rc:.6} verdict={}", c.verdict));
        }
    }
    ensure(
        bad.is_empty(),
        format!(
            "{checked} parameter points, mismatches: [{}]",
            bad.join("; ")
        ),
    )
}

fn criterion_5() -> Outcome {
    let model = scalar_model(0.3, 0.7, 0.0);
    let data = BranchingData::compute(&model, 1, TOL).map_err(|e| e.to_string())?;
    let res = stationary_dist(&model, &data, Some(200)).map_err(|e| e.to_string())?;
    let trunc = truncated_solve(&model, 200).map_err(|e| e.to_string())?;
    let mut lib_err: f64 = (res.nu[0].0[0] - 2.0 / 7.0).abs();
    let mut trunc_err: f64 = (trunc[0].0[0] - 2.0 / 7.0).abs();
    for (n, (lib, tr)) in res.nu.iter().zip(&trunc).enumerate().skip(1) {
        let exact = 20.0 / 49.0 * (3.0f64 / 7.0).powi(n as i32 - 1);
        lib_err = lib_err.max((lib.0[0] - exact).abs());
        trunc_err = trunc_err.max((tr.0[0] - exact).abs());
    }
    let t0 = expected_return_time(&model, &data, &RowVector(vec![1.0]), 0, DEFAULT_HORIZON)
        .map_err(|e| e.to_string())?
        .finite()
        .unwrap_or(f64::INFINITY);
    let t_err = (t0 - 3.5).abs().max((1.0 / trunc[0].0[0] - 3.5).abs());
    let l_err = (res.decay_rate - 3.0 / 7.0).abs();
    ensure(
        lib_err <= 1e-8 && trunc_err <= 1e-8 && t_err <= 1e-8 && l_err <= 1e-8,
        format!("nu error {lib_err:.2e} (library), {trunc_err:.2e} (truncated); E(T0) error {t_err:.2e}; lambda error {l_err:.2e}"),
    )
}

fn criterion_6() -> Outcome {
    let one = RowVector(vec![1.0]);
    let sym =
        classify(&scalar_model(0.5, 0.5, 0.0), &one, DEFAULT_HORIZON).map_err(|e| e.to_string())?;
    let tr =
        classify(&scalar_model(0.7, 0.3, 0.0), &one, DEFAULT_HORIZON).map_err(|e| e.to_string())?;
    let beta = tr.beta.finite().unwrap_or(f64::NAN);
    ensure(
        sym.verdict == Verdict::NullRecurrent
            && sym.beta == SeriesValue::Infinite
            && sym.rho1 == SeriesValue::Infinite
            && tr.verdict == Verdict::Transient
            && (beta - 1.75).abs() <= 1e-10,
        format!(
            "symmetric: {} (beta {:?}, rho1 {:?}); p=0.7: {} with beta = {beta:.12}",
            sym.verdict, sym.beta, sym.rho1, tr.verdict
        ),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(MODEL_SEED);
    let mut worst_l1: f64 = 0.0;
    let mut failures = Vec::new();
    let (mut tested, mut pooled) = (0, 0);
    let mut worst_z: f64 = 0.0;
    for k in 0..RANDOM_MODELS {
        let model = random_pr_model(&mut rng);
        let data = BranchingData::compute(&model, 1, TOL).map_err(|e| e.to_string())?;
        let res = stationary_dist(&model, &data, Some(200)).map_err(|e| e.to_string())?;
        let trunc = truncated_solve(&model, 200).map_err(|e| e.to_string())?;
        let l1: f64 = (0..=30).map(|n| res.nu[n].l1_diff(&trunc[n])).sum();
        worst_l1 = worst_l1.max(l1);

        let cfg = SimConfig::new(SIM_SEED + k as u64)
            .with_steps(1_000_000)
            .with_max_level(30);
        let stats = simulate(&model, &cfg).map_err(|e| e.to_string())?;
        let cmp = compare_cells(&stats, &res.nu[..=30], Per::Step);
        tested += cmp.tested;
        pooled += cmp.pooled_cells;
        worst_z = worst_z.max(cmp.max_z());
        if l1 > 1e-7 || cmp.max_z() > 3.0 {
            failures.push(format!(
                "model {k} (d={}, prefix {}): l1 {l1:.2e}, z {:.2} at {:?}, pooled z {:.2}",
                model.d,
                model.prefix_len(),
                cmp.worst_z,
                cmp.worst_cell,
                cmp.pooled_z
            ));
        }
    }
    let elapsed = start.elapsed();
    ensure(
        failures.is_empty() && elapsed < Duration::from_secs(300),
        format!(
            "{RANDOM_MODELS} models, worst l1 {worst_l1:.2e}, {tested} cells tested and {pooled} pooled, worst z {worst_z:.2}, {:.1} s{}",
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(" | ")) }
        ),
    )
}

fn invariants(model: &QbdModel, levels: usize) -> Result<[f64; 7], String> {
    let e = |e: halfstrip::Error| e.to_string();
    let data = BranchingData::compute(model, levels, TOL).map_err(e)?;
    let zeta_plus = data
        .meta
        .plus_stochastic_defect
        .max(data.meta.plus_residual);

    let base = zeta_minus_seq_anchored(model, levels, TOL, &Anchor::TailFixedPoint).map_err(e)?;
    let mut anchor: f64 = 0.0;
    for a in [Anchor::Uniform, Anchor::Identity] {
        let other = zeta_minus_seq_anchored(model, levels, TOL, &a).map_err(e)?;
        for (x, y) in base.zetas.iter().zip(&other.zetas) {
            anchor = anchor.max(x.max_abs_diff(y));
        }
    }

    let (mut norm, mut mean): (f64, f64) = (0.0, 0.0);
    for n in [1, levels / 2, levels] {
        for i in 0..model.d {
            let lower = offspring_pmf_lower_series(model, &data, n, i).map_err(e)?;
            let upper = offspring_pmf_upper_series(model, &data, n, i).map_err(e)?;
            for (series, a) in [(lower, data.a_plus(n)), (upper, data.a_minus(n))] {
                norm = norm.max((series.iter().sum::<f64>() - 1.0).abs());
                let m: f64 = series.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
                mean = mean.max((m - a.row(i).iter().sum::<f64>()).abs());
            }
        }
    }

    let res = stationary_dist(model, &data, Some(100)).map_err(e)?;
    let product = matrix_product_check(model, &data, &res);
    let balance = balance_residual(model, &res);
    let kac = match expected_return_time(model, &data, &res.mu0, 0, DEFAULT_HORIZON).map_err(e)? {
        SeriesValue::Finite(t) => (1.0 / t - res.nu[0].sum()).abs(),
        _ => f64::INFINITY,
    };
    Ok([zeta_plus, anchor, norm, mean, product, balance, kac])
}

fn criterion_8() -> Outcome {
    let mut models = vec![
        retrial(0.2, 0.5, 1, &ThetaSpec::Constant(0.3)),
        retrial(0.1, 0.3, 2, &ThetaSpec::Constant(0.3)),
        retrial(
            0.2,
            0.5,
            1,
            &ThetaSpec::RationalDecay {
                a: 0.3,
                b: 0.3,
                levels: 40,
            },
        ),
        scalar_model(0.3, 0.7, 0.0),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(MODEL_SEED + 1);
    models.extend((0..5).map(|_| random_pr_model(&mut rng)));

    let mut worst = [0.0f64; 7];
    for model in &models {
        for (w, v) in worst.iter_mut().zip(invariants(model, 12)?) {
            *w = w.max(v);
        }
    }
    let limits = [1e-9, 10.0 * TOL, 1e-8, 1e-6, 1e-10, 1e-8, 1e-8];
    let names = [
        "zeta+", "anchor", "pmf sum", "pmf mean", "product", "balance", "kac",
    ];
    let detail = names
        .iter()
        .zip(&worst)
        .map(|(n, v)| format!("{n} {v:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(
        worst.iter().zip(&limits).all(|(v, l)| v <= l),
        format!("{} models: {detail}", models.len()),
    )
}

fn criterion_9() -> Outcome {
    let theta = ThetaSpec::RationalDecay {
        a: 0.3,
        b: 0.3,
        levels: 1000,
    };
    let model = retrial(0.2, 0.5, 1, &theta);
    let data = BranchingData::compute(&model, 1, TOL).map_err(|e| e.to_string())?;
    let res = stationary_dist(&model, &data, Some(300)).map_err(|e| e.to_string())?;
    let target = (2.0f64 / 3.0).ln();
    let rates: Vec<f64> = res.nu[300].0.iter().map(|x| x.ln() / 300.0).collect();
    let worst = rates.iter().map(|r| (r - target).abs()).fold(0.0, f64::max);
    ensure(
        worst <= 0.02,
        format!("log nu_300(j)/300 = {rates:.5?} vs {target:.5}, gap {worst:.4}"),
    )
}

fn criterion_10() -> Outcome {
    let dir = std::env::temp_dir().join(format!("halfstrip-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let model_path = dir.join("retrial.json");
    let bin = env!("CARGO_BIN_EXE_halfstrip");
    let status = Command::new(bin)
        .args([
            "example", "retrial", "--lambda", "0.2", "--mu", "0.5", "--c", "1", "--theta", "0.3",
            "--out",
        ])
        .arg(&model_path)
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("example exited with {status}"));
    }
    let run = || {
        Command::new(bin)
            .args([
                "verify", "--seed", "42", "--cycles", "20000", "--output", "json", "--model",
            ])
            .arg(&model_path)
            .output()
            .map_err(|e| e.to_string())
    };
    let (a, b) = (run()?, run()?);
    let _ = std::fs::remove_dir_all(&dir);
    ensure(
        a.stdout == b.stdout && !a.stdout.is_empty() && a.status.code() == b.status.code(),
        format!(
            "two verify runs: {} bytes each, identical: {}, exit codes {:?}/{:?}",
            a.stdout.len(),
            a.stdout == b.stdout,
            a.status.code(),
            b.status.code()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("retrial c=1 decay rate", criterion_1),
        ("retrial c=2 decay rate", criterion_2),
        ("R+ last-row structure", criterion_3),
        ("positive-recurrence boundary sweep", criterion_4),
        ("d=1 analytic chain", criterion_5),
        ("null recurrence and transience", criterion_6),
        ("oracle triangle on random models", criterion_7),
        ("invariant suite", criterion_8),
        ("decay limit with level-dependent retrials", criterion_9),
        ("verify determinism", criterion_10),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let outcome = check();
        let (mark, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if outcome.is_err() {
            failed += 1;
        }
        println!("criterion {:>2} {mark}: {name}: {detail}", k + 1);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
