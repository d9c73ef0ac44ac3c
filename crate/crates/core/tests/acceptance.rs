//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stefan::cli::{epsilon_table, execute_run, RunArtifacts, RunOptions};
use stefan::energy::{i_psi, i_psi_lower_bound};
use stefan::fields::Grid;
use stefan::oracle::linearized_spectrum;
use stefan::scenario::{band_limited, Scenario};
use stefan::solver::SolverConfig;
use stefan::verify::{conservation_study, identity_study, mms_study, norms_study, StudyReport};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn from_study(r: StudyReport) -> Outcome {
    let detail = r.checks.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("; ");
    outcome(r.passed(), detail)
}

type Criterion = (&'static str, fn() -> Outcome);

const EPSILONS: [f64; 3] = [1e-2, 1e-4, 0.0];

/// decay-k1 at each ε, shared by criteria 4, 5 and 6.
fn decay_runs() -> &'static [RunArtifacts] {
    static RUNS: OnceLock<Vec<RunArtifacts>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let sc = Scenario::builtin("decay-k1").unwrap();
        let opts = RunOptions { sample_every: 10, ..RunOptions::default() };
        EPSILONS
            .iter()
            .map(|&epsilon| execute_run(&sc, &SolverConfig { epsilon, ..sc.solver.clone() }, &opts).unwrap())
            .collect()
    })
}

fn decay_run(epsilon: f64) -> &'static RunArtifacts {
    decay_runs().iter().find(|r| r.cfg.epsilon == epsilon).unwrap()
}

fn steady_state() -> Outcome {
    let sc = Scenario::builtin("flat").unwrap();
    let art = execute_run(&sc, &sc.solver, &RunOptions::default()).unwrap();
    let dev = art.summary.steady_deviation;
    let steps = art.summary.steps;
    outcome(
        dev <= 1e-8 && steps == 2000,
        format!("{steps} steps, max ‖u‖∞ + ‖ρ − ρ₀‖∞ = {dev:.3e} <= 1e-8"),
    )
}

fn i_psi_positivity() -> Outcome {
    let grid = Grid::new(64, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_gap = f64::INFINITY;
    let mut worst_diff = 0.0_f64;
    for _ in 0..100 {
        let psi = band_limited(&grid, rng.gen_range(0.01..1.0), &mut rng);
        let omega = band_limited(&grid, rng.gen_range(0.01..1.0), &mut rng);
        let lhs = i_psi(&omega, &psi, &grid);
        let rhs = i_psi_lower_bound(&omega, &psi, &grid);
        worst_gap = worst_gap.min(lhs - rhs);
        worst_diff = worst_diff.max((lhs - rhs).abs());
    }
    outcome(
        worst_gap >= -1e-10 && worst_diff <= 1e-10,
        format!("100 pairs, min(I_ψ − bound) = {worst_gap:.3e} >= -1e-10, max |I_ψ − bound| = {worst_diff:.3e} <= 1e-10"),
    )
}

fn conservation() -> Outcome {
    from_study(conservation_study().unwrap())
}

fn monotonicity() -> Outcome {
    let art = decay_run(1e-4);
    let series: Vec<(f64, Option<f64>, Option<f64>)> =
        art.reports.iter().map(|r| (r.t, r.energy_eps, r.dissipation_eps)).collect();
    let energies: Vec<(usize, f64)> = series.iter().enumerate().filter_map(|(i, s)| s.1.map(|e| (i, e))).collect();
    let mut worst_growth = f64::NEG_INFINITY;
    for w in energies.windows(2).skip(1) {
        worst_growth = worst_growth.max(w[1].1 / w[0].1 - 1.0);
    }
    let anchor = series.iter().position(|s| s.1.is_some() && s.2.is_some()).unwrap();
    let e_s = series[anchor].1.unwrap();
    let mut integral = 0.0;
    let mut worst_bound = f64::NEG_INFINITY;
    for j in anchor..series.len() {
        if j > anchor {
            let (t0, _, d0) = series[j - 1];
            let (t1, _, d1) = series[j];
            integral += 0.5 * (d0.unwrap() + d1.unwrap()) * (t1 - t0);
        }
        let lhs = series[j].1.unwrap() + 0.5 * integral;
        worst_bound = worst_bound.max(lhs / e_s - 1.0);
    }
    outcome(
        worst_growth <= 1e-6 && worst_bound <= 1e-3,
        format!(
            "max relative step growth of E_ε = {worst_growth:.3e} <= 1e-6, max (E(t) + ½∫D)/E(t_{anchor}) − 1 = {worst_bound:.3e} <= 1e-3"
        ),
    )
}

fn decay_vs_oracle() -> Outcome {
    let art = decay_run(0.0);
    let oracle = linearized_spectrum(1, 256, 0.0).unwrap().energy_decay_rate();
    let rate = art.summary.fit.rate().unwrap_or(f64::NAN);
    let r2 = art.summary.fit.r_squared().unwrap_or(f64::NAN);
    let gap = (rate - oracle).abs() / oracle;
    outcome(
        r2 >= 0.999 && gap <= 0.10,
        format!("K₂ = {rate:.5}, oracle 2|Re λ₁| = {oracle:.5}, R² = {r2:.6} >= 0.999, relative gap = {gap:.4} <= 0.10"),
    )
}

fn epsilon_uniformity() -> Outcome {
    let table = epsilon_table(decay_runs()).unwrap();
    let d: Vec<f64> = table.iter().map(|r| r.distance).collect();
    let last = table.last().unwrap();
    outcome(
        d.len() == 2 && d[1] < d[0] && last.to == 0.0 && last.relative < 0.05,
        format!(
            "E-distance(1e-2, 1e-4) = {:.3e} > E-distance(1e-4, 0) = {:.3e}, relative(1e-4, 0) = {:.3e} < 0.05",
            d[0], d[1], last.relative
        ),
    )
}

fn identity() -> Outcome {
    from_study(identity_study().unwrap())
}

fn manufactured() -> Outcome {
    from_study(mms_study().unwrap())
}

fn norm_equivalence() -> Outcome {
    from_study(norms_study(7, 50).unwrap())
}

fn mean_convergence() -> Outcome {
    let sc = Scenario::builtin("generic").unwrap();
    let art = execute_run(&sc, &sc.solver, &RunOptions::default()).unwrap();
    let s = &art.summary;
    let gap = (s.mean_rho - s.steady_mean).abs();
    outcome(
        (s.t_final - 4.0).abs() < 1e-9 && gap <= 1e-4,
        format!("t = {:.3}, |mean ρ − ρ̄| = {gap:.3e} <= 1e-4 (ρ̄ = {:.6e})", s.t_final, s.steady_mean),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("steady-state exactness", steady_state),
        ("I_psi positivity", i_psi_positivity),
        ("conservation law", conservation),
        ("energy monotonicity and integrated bound", monotonicity),
        ("exponential decay vs oracle", decay_vs_oracle),
        ("epsilon-uniformity", epsilon_uniformity),
        ("k=0 energy-identity residual", identity),
        ("manufactured-solution convergence", manufactured),
        ("norm equivalence", norm_equivalence),
        ("mean convergence", mean_convergence),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let clock = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let verdict = if result.passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {:2} {verdict} {name} [{:.1}s]: {}",
            n + 1,
            clock.elapsed().as_secs_f64(),
            result.detail
        );
        if !result.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
