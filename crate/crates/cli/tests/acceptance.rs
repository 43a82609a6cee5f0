//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//!
//! Runs the `hrpool` binary for the command-level criteria and the library for
//! the rest.

use std::fmt::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use hrpool_core::analysis::{h_w0, kl_gradient, kl_objective, ordering_suite};
use hrpool_core::combine::{
    c_hm_binary, solve_censored_binary, solve_cpl_binary, solve_theta_hm_general, var_theta_hm_binary,
    var_theta_hm_general,
};
use hrpool_core::cox::fit_cox;
use hrpool_core::data::{stream_rng, CovariateDistribution, SubjectRecord, TrialDataset};
use hrpool_core::{Matrix, TrialAggregate};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

const BIN: &str = env!("CARGO_BIN_EXE_hrpool");

/// Printed reference table: (a, b, c_HM, c_PL, exp(θ_L), c_L).
const PRINTED_TABLE: [(f64, f64, f64, f64, f64, f64); 14] = [
    (0.5, 0.5, 0.5, 0.5, 0.5, 0.5),
    (0.5, 1.0, 0.662, 0.682, 0.705, 0.750),
    (0.5, 1.5, 0.741, 0.781, 0.857, 0.992),
    (0.5, 2.0, 0.792, 0.848, 0.994, 1.248),
    (0.5, 2.5, 0.823, 0.892, 1.107, 1.490),
    (0.5, 3.0, 0.847, 0.925, 1.216, 1.747),
    (1.0, 1.0, 1.0, 1.0, 1.0, 1.0),
    (1.0, 1.5, 1.202, 1.198, 1.225, 1.248),
    (1.0, 2.0, 1.340, 1.327, 1.420, 1.505),
    (1.0, 2.5, 1.433, 1.409, 1.582, 1.747),
    (1.0, 3.0, 1.507, 1.471, 1.738, 2.003),
    (2.0, 2.0, 2.0, 2.0, 2.0, 2.0),
    (2.0, 2.5, 2.219, 2.212, 2.232, 2.245),
    (2.0, 3.0, 2.402, 2.375, 2.452, 2.502),
];

const EXAMPLE_SCENARIO: &str = r#"{
  "trial_effects": [[-1.2039728043259361], [-0.2231435513142097]],
  "sizes": [400, 170],
  "covariate_dist": {"support": [{"z": [0.0], "prob": 0.5}, {"z": [1.0], "prob": 0.5}]},
  "allocation": "fixed",
  "seed": 20240101
}"#;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn hrpool(args: &[&str]) -> Result<Duration, String> {
    hrpool_in(Path::new("."), args)
}

fn hrpool_in(cwd: &Path, args: &[&str]) -> Result<Duration, String> {
    let start = Instant::now();
    let out = Command::new(BIN)
        .current_dir(cwd)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`hrpool {}` exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(start.elapsed())
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn f(s: &str) -> f64 {
    s.parse().unwrap()
}

fn table_reproduction(dir: &Path) -> Result<Outcome, String> {
    let out = dir.join("table.csv");
    let elapsed = hrpool(&["table", "--out", out.to_str().unwrap()])?;
    let rows = read_csv(&out);
    let mut worst_closed: f64 = 0.0;
    let mut worst_printed: f64 = 0.0;
    let mut matched = 0;
    for row in &rows {
        let (a, b, p) = (f(&row[0]), f(&row[1]), f(&row[2]));
        let (hm, pl, tl, l) = (f(&row[4]), f(&row[5]), f(&row[6]), f(&row[7]));
        worst_closed = worst_closed
            .max((tl - (p * a.ln() + (1.0 - p) * b.ln()).exp()).abs())
            .max((l - (p * a + (1.0 - p) * b)).abs());
        if let Some(t) = PRINTED_TABLE.iter().find(|t| t.0 == a && t.1 == b) {
            matched += 1;
            for (ours, printed) in [(hm, t.2), (pl, t.3), (tl, t.4), (l, t.5)] {
                worst_printed = worst_printed.max((ours - printed).abs());
            }
        }
    }
    let pass = rows.len() == PRINTED_TABLE.len()
        && matched == PRINTED_TABLE.len()
        && worst_closed < 1e-10
        && worst_printed <= 0.015
        && elapsed < Duration::from_secs(5);
    Ok(outcome(
        pass,
        format!(
            "{} cells (printed table has {} populated), closed-form err {worst_closed:.1e}, max |ours - printed| {worst_printed:.4} (tol 0.015), {:.2}s (< 5s)",
            rows.len(),
            PRINTED_TABLE.len(),
            elapsed.as_secs_f64()
        ),
    ))
}

struct SweepRow {
    t_max: f64,
    censored: f64,
    pl_mean: f64,
    pl_lower: f64,
    pl_upper: f64,
    m_mean: f64,
}

fn run_example_sweep(dir: &Path) -> Result<(Vec<SweepRow>, Duration), String> {
    let scenario = dir.join("example.json");
    std::fs::write(&scenario, EXAMPLE_SCENARIO).unwrap();
    let out = dir.join("sweep.csv");
    let elapsed = hrpool(&[
        "sweep",
        "--scenario",
        scenario.to_str().unwrap(),
        "--tmax-grid",
        "1,2,4,7,10,inf",
        "--replicates",
        "1000",
        "--out",
        out.to_str().unwrap(),
    ])?;
    let rows = read_csv(&out)
        .iter()
        .map(|r| SweepRow {
            t_max: f(&r[0]),
            censored: f(&r[2]),
            pl_mean: f(&r[3]),
            pl_lower: f(&r[4]),
            pl_upper: f(&r[5]),
            m_mean: f(&r[7]),
        })
        .collect();
    Ok((rows, elapsed))
}

fn example_uncensored(rows: &[SweepRow], elapsed: Duration) -> Outcome {
    let r = rows.iter().find(|r| r.t_max.is_infinite()).expect("uncensored row");
    let pass = (r.pl_mean + 0.926).abs() <= 0.03
        && (r.pl_lower + 1.088).abs() <= 0.06
        && (r.pl_upper + 0.756).abs() <= 0.06
        && elapsed < Duration::from_secs(120);
    outcome(
        pass,
        format!(
            "mean {:.4} (-0.926 ± 0.03), 2.5/97.5% ({:.4}, {:.4}) vs (-1.088, -0.756) ± 0.06, whole sweep {:.1}s (< 120s)",
            r.pl_mean,
            r.pl_lower,
            r.pl_upper,
            elapsed.as_secs_f64()
        ),
    )
}

fn example_censored(rows: &[SweepRow]) -> Outcome {
    let r1 = rows.iter().find(|r| r.t_max == 1.0).expect("t_max = 1 row");
    let m_means: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.t_max.is_finite())
        .map(|r| (r.t_max, r.m_mean))
        .collect();
    let m_ok = m_means.len() == 5 && m_means.iter().all(|(_, m)| (m + 0.926).abs() <= 0.03);
    let pass = (r1.censored - 0.51).abs() <= 0.02 && (r1.pl_mean + 0.854).abs() <= 0.03 && m_ok;
    let mut detail = format!(
        "t_max=1: censored {:.3} (0.51 ± 0.02), pooled mean {:.4} (-0.854 ± 0.03); plug-in means",
        r1.censored, r1.pl_mean
    );
    for (t, m) in m_means {
        write!(detail, " {t}:{m:.4}").unwrap();
    }
    detail.push_str(" (-0.926 ± 0.03)");
    outcome(pass, detail)
}

fn ordering_property() -> Result<Outcome, String> {
    let reports = ordering_suite(1000, 0.05, 3.0, 1).map_err(|e| e.to_string())?;
    let violations = reports.iter().filter(|r| !r.holds()).count();
    let thin: Vec<&_> = reports.iter().filter(|r| r.min_margin() <= 1e-6).collect();
    let smallest = reports.iter().map(|r| r.min_margin()).fold(f64::INFINITY, f64::min);
    let closest_pair = reports
        .iter()
        .min_by(|x, y| x.min_margin().total_cmp(&y.min_margin()))
        .map(|r| r.b - r.a)
        .unwrap_or(f64::NAN);
    Ok(outcome(
        violations == 0 && thin.is_empty(),
        format!(
            "1000 draws: {violations} ordering violations, {} draws with a margin <= 1e-6 (smallest {smallest:.2e}, at b - a = {closest_pair:.2e})",
            thin.len()
        ),
    ))
}

fn censoring_monotone() -> Result<Outcome, String> {
    let (a, b, p, q) = (0.3, 0.8, 0.7, 0.5);
    let hs = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 50.0];
    let cs = hs
        .iter()
        .map(|&h| solve_censored_binary(a, b, p, q, h))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let limit = solve_cpl_binary(a, b, p, q).map_err(|e| e.to_string())?;
    let decreasing = cs.windows(2).all(|w| w[1] < w[0]);
    let gap = cs[6] - limit;
    Ok(outcome(
        decreasing && gap < 1e-4,
        format!(
            "c*(H) = {} strictly decreasing: {decreasing}; c*(50) - c*_PL = {gap:.2e} (< 1e-4)",
            cs.iter().map(|c| format!("{c:.5}")).collect::<Vec<_>>().join(", ")
        ),
    ))
}

/// Breslow log partial likelihood written directly from its definition.
fn brute_log_pl(times: &[f64], events: &[bool], z: &[f64], beta: f64) -> f64 {
    let mut ll = 0.0;
    for i in 0..times.len() {
        if !events[i] {
            continue;
        }
        let risk: f64 = (0..times.len())
            .filter(|&j| times[j] >= times[i])
            .map(|j| (beta * z[j]).exp())
            .sum();
        ll += beta * z[i] - risk.ln();
    }
    ll
}

fn cox_oracle() -> Outcome {
    let mut rng = stream_rng(6, 0);
    let grid: Vec<f64> = (0..=6000).map(|i| -3.0 + i as f64 * 1e-3).collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 50 && attempts < 10_000 {
        attempts += 1;
        let n = rng.random_range(3..=8);
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let times: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
        let events: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.8).collect();
        let lls: Vec<f64> = grid.iter().map(|&b| brute_log_pl(&times, &events, &z, b)).collect();
        let best = (0..grid.len()).max_by(|&i, &j| lls[i].total_cmp(&lls[j])).unwrap();
        if best == 0 || best == grid.len() - 1 {
            continue;
        }
        let subjects = (0..n)
            .map(|i| SubjectRecord {
                time: times[i],
                event: events[i],
                covariates: vec![z[i]],
                trial_id: "t".into(),
            })
            .collect();
        let Ok(fit) = fit_cox(&TrialDataset::new("t", subjects).unwrap()) else {
            continue;
        };
        worst = worst.max((fit.beta_hat[0] - grid[best]).abs());
        checked += 1;
    }
    outcome(
        checked == 50 && worst <= 2e-3,
        format!("{checked} datasets with interior grid maximum, max |newton - grid| {worst:.2e} (tol 2e-3)"),
    )
}

fn breslow_check(dir: &Path) -> Result<Outcome, String> {
    let (a, b, p) = (0.5, 1.0, 0.5);
    let out = dir.join("breslow.csv");
    hrpool(&[
        "breslow",
        "--a",
        "0.5",
        "--b",
        "1.0",
        "--p",
        "0.5",
        "--samples",
        "200000",
        "--window-events",
        "10000",
        "--horizon",
        "2",
        "--seed",
        "4",
        "--out",
        out.to_str().unwrap(),
    ])?;
    let mut windows = out.as_os_str().to_owned();
    windows.push(".windows.csv");
    let rows = read_csv(Path::new(&windows));
    let worst = rows.iter().map(|r| f(&r[5])).fold(0.0, f64::max);
    let covered = rows.last().map(|r| f(&r[1])).unwrap_or(0.0);
    let c = solve_cpl_binary(a, b, p, 0.5).map_err(|e| e.to_string())?;
    let start_err = (h_w0(a, b, p, c, 0.0) - (p * a + (1.0 - p) * b + 1.0) / (c + 1.0)).abs();
    let end_err = (h_w0(a, b, p, c, 1e4) - a / c).abs();
    Ok(outcome(
        !rows.is_empty() && covered == 2.0 && worst < 0.05 && start_err < 1e-10 && end_err < 1e-10,
        format!(
            "{} windows of ~10000 events on [0, {covered}], max relative error {:.2}% (< 5%); endpoint errors {start_err:.1e}, {end_err:.1e} (< 1e-10)",
            rows.len(),
            100.0 * worst
        ),
    ))
}

fn delta_method() -> Result<Outcome, String> {
    let (a, b, v, p) = (0.3f64, 0.8f64, 0.02f64, 0.7);
    let var = var_theta_hm_binary(a.ln(), b.ln(), v, v, p);
    let mut rng = stream_rng(8, 0);
    let n = 100_000;
    let draws: Vec<f64> = (0..n)
        .map(|_| {
            let za: f64 = StandardNormal.sample(&mut rng);
            let zb: f64 = StandardNormal.sample(&mut rng);
            c_hm_binary((a.ln() + v.sqrt() * za).exp(), (b.ln() + v.sqrt() * zb).exp(), p).ln()
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let boot = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let rel = (var - boot).abs() / boot;
    let dist = CovariateDistribution::bernoulli(0.5).map_err(|e| e.to_string())?;
    let aggs = [
        TrialAggregate::new("A", vec![a.ln()], Matrix::from_element(1, 1, v), 700).map_err(|e| e.to_string())?,
        TrialAggregate::new("B", vec![b.ln()], Matrix::from_element(1, 1, v), 300).map_err(|e| e.to_string())?,
    ];
    let general = var_theta_hm_general(&aggs, &dist).map_err(|e| e.to_string())?[(0, 0)];
    let gap = (general - var).abs();
    Ok(outcome(
        rel < 0.1 && gap < 1e-10,
        format!(
            "delta {var:.6e} vs bootstrap {boot:.6e} ({:.2}% < 10%); general-k minus closed form {gap:.1e} (< 1e-10)",
            100.0 * rel
        ),
    ))
}

fn kl_characterization() -> Result<Outcome, String> {
    let cases: Vec<(Vec<f64>, Vec<f64>, f64, CovariateDistribution)> = vec![
        (
            vec![0.3f64.ln()],
            vec![0.8f64.ln()],
            0.7,
            CovariateDistribution::bernoulli(0.5).unwrap(),
        ),
        (
            vec![0.4f64.ln(), 0.3],
            vec![1.1f64.ln(), -0.2],
            0.6,
            CovariateDistribution::uniform(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]])
                .unwrap(),
        ),
    ];
    let mut worst_grad: f64 = 0.0;
    let mut all_lower = true;
    for (alpha, beta, p, dist) in &cases {
        let theta = solve_theta_hm_general(alpha, beta, *p, dist).map_err(|e| e.to_string())?;
        let g = kl_gradient(&theta, alpha, beta, *p, dist);
        worst_grad = worst_grad.max(g.iter().map(|x| x * x).sum::<f64>().sqrt());
        let at = kl_objective(&theta, alpha, beta, *p, dist);
        for j in 0..theta.len() {
            for d in [-0.05, 0.05] {
                let mut moved = theta.clone();
                moved[j] += d;
                all_lower &= kl_objective(&moved, alpha, beta, *p, dist) < at;
            }
        }
    }
    Ok(outcome(
        worst_grad < 1e-8 && all_lower,
        format!("max |gradient| at the harmonic-mean effect {worst_grad:.1e} (< 1e-8); objective lower at ±0.05 on every coordinate: {all_lower}"),
    ))
}

/// Each run happens in its own directory with identical relative paths, so
/// result files and manifests must match byte for byte.
fn determinism(dir: &Path) -> Result<Outcome, String> {
    let runs: Vec<(&str, Vec<&str>, Vec<&str>)> = vec![
        (
            "sweep",
            vec![
                "sweep",
                "--scenario",
                "scenario.json",
                "--tmax-grid",
                "1,inf",
                "--replicates",
                "100",
            ],
            vec![],
        ),
        ("simulate", vec!["simulate", "--scenario", "scenario.json"], vec![]),
        ("ordering", vec!["ordering", "--draws", "200", "--seed", "3"], vec![]),
        (
            "breslow",
            vec![
                "breslow",
                "--a",
                "0.5",
                "--b",
                "1",
                "--p",
                "0.5",
                "--samples",
                "20000",
                "--window-events",
                "2000",
                "--seed",
                "5",
            ],
            vec!["result.out.windows.csv"],
        ),
    ];
    let mut compared = 0;
    let mut differing = Vec::new();
    for (name, args, extra) in runs {
        let mut dirs = Vec::new();
        for threads in ["1", "4"] {
            let cwd = dir.join(format!("det-{name}-{threads}"));
            std::fs::create_dir_all(&cwd).unwrap();
            std::fs::write(cwd.join("scenario.json"), EXAMPLE_SCENARIO).unwrap();
            let mut full = args.clone();
            full.extend(["--threads", threads, "--out", "result.out"]);
            hrpool_in(&cwd, &full)?;
            dirs.push(cwd);
        }
        for file in ["result.out", "result.out.manifest.json"].iter().chain(&extra) {
            compared += 1;
            let x = std::fs::read(dirs[0].join(file)).map_err(|e| format!("{name}/{file}: {e}"))?;
            let y = std::fs::read(dirs[1].join(file)).map_err(|e| format!("{name}/{file}: {e}"))?;
            if x != y {
                differing.push(format!("{name}/{file}"));
            }
        }
    }
    Ok(outcome(
        differing.is_empty(),
        format!("{compared} files compared between --threads 1 and 4; differing: {differing:?}"),
    ))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let dir = dir.path();
    let mut results: Vec<(u32, &str, Result<Outcome, String>)> = Vec::new();

    results.push((1, "table reproduction", table_reproduction(dir)));
    let sweep = run_example_sweep(dir);
    match &sweep {
        Ok((rows, elapsed)) => {
            results.push((
                2,
                "two-trial example, uncensored",
                Ok(example_uncensored(rows, *elapsed)),
            ));
            results.push((
                3,
                "two-trial example, administrative censoring",
                Ok(example_censored(rows)),
            ));
        }
        Err(e) => {
            results.push((2, "two-trial example, uncensored", Err(e.clone())));
            results.push((3, "two-trial example, administrative censoring", Err(e.clone())));
        }
    }
    results.push((4, "ordering property suite", ordering_property()));
    results.push((5, "censoring-bias monotonicity", censoring_monotone()));
    results.push((6, "Cox fitter vs grid-search oracle", Ok(cox_oracle())));
    results.push((7, "Breslow-limit curve", breslow_check(dir)));
    results.push((8, "delta-method variance", delta_method()));
    results.push((9, "KL characterization", kl_characterization()));
    results.push((10, "determinism across thread counts", determinism(dir)));

    let mut failed = 0;
    for (id, name, res) in &results {
        let (pass, detail) = match res {
            Ok(o) => (o.pass, o.detail.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} [{}] {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
