//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! fails if any criterion fails.
//!
//! Tolerances and budgets are fixed constants below. Delay oracles are
//! recomputed here from the raw profile vectors rather than through the
//! library's delay functions.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitpoint::core::baselines::SelectorKind;
use splitpoint::core::delaymodel::{ResourceState, TrainingConfig};
use splitpoint::core::montecarlo::{
    calibrate_client_flops, iteration_rng, linspace, run_gain_grid, sample_folded_normal, CvCell,
    FoldedNormalParams, GainSurface, MonteCarloConfig, ResourceDistribution,
};
use splitpoint::core::netprofile::{
    build_profile, reference_emg_cnn, synthetic_architecture, FlopConvention, NetworkProfile,
};
use splitpoint::core::ocla::{
    offline_phase, prune_profile_function, select_cut_layer, SplitRegionTable,
};
use splitpoint::core::simrunner::{simulate_training, ResourceSource, SimulationConfig, Timeline};
use splitpoint::parallel::run_gain_grid_parallel;

const SEED: u64 = 20_240_611;
const D_K: u64 = 9992;
const BATCH: u64 = 100;

const REFERENCE_DRAWS: usize = 10_000;
const SYNTHETIC_NETS: usize = 50;
const DRAWS_PER_SYNTHETIC: usize = 200;
const THETA_RANGE: (f64, f64) = (1e-5, 1e2);
const ORACLE_BUDGET: Duration = Duration::from_secs(10);

const STEP1_BUDGET: Duration = Duration::from_millis(1);

const BOUNDARY_OFFSET: f64 = 1e-6;
const BOUNDARY_EQUALITY: f64 = 1e-9;

const MC_ITERATIONS: usize = 200;
const MC_SAMPLES: usize = 300;
const MC_GRID: (f64, f64, usize) = (0.01, 0.5, 10);
const GAIN_LOW_CV: (f64, f64) = (0.98, 1.05);
const GAIN_FLOOR: f64 = 1.0 - 1e-12;
const MC_BUDGET: Duration = Duration::from_secs(60);

const FOLDED_DRAWS: usize = 1_000_000;
const FOLDED_TOLERANCE: f64 = 0.01;

const SIM_CV: f64 = 0.5;
const SIM_BUDGET: Duration = Duration::from_secs(5);

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn reference() -> NetworkProfile {
    build_profile(&reference_emg_cnn(), &FlopConvention::default(), 32).unwrap()
}

fn training() -> TrainingConfig {
    TrainingConfig {
        dataset_size: D_K,
        batch_size: BATCH,
        ..TrainingConfig::reference()
    }
}

/// Epoch delay straight from the profile vectors.
fn oracle_delay(p: &NetworkProfile, cut: usize, r: &ResourceState) -> f64 {
    let i = cut - 1;
    let b = BATCH as f64;
    let bits = f64::from(p.scalar_bits);
    let lk = p.cumulative_flops[i] as f64;
    let ls = (p.total_flops - p.cumulative_flops[i]) as f64;
    let tau_k = lk * b / r.client_flops;
    let tau_s = ls * b / r.server_flops;
    let t0 = p.activations[i] as f64 * bits * b / r.link_bps;
    let tp = p.cumulative_params[i] as f64 * bits / r.link_bps;
    2.0 * (D_K as f64 / b) * (tau_k + t0 + tau_s) + 2.0 * tp
}

/// Argmin over every cut; ties to the smaller client load, then shallower.
fn oracle_argmin(p: &NetworkProfile, r: &ResourceState) -> usize {
    (1..p.num_layers())
        .map(|n| (oracle_delay(p, n, r), p.cumulative_flops[n - 1], n))
        .min_by(|a, b| a.partial_cmp(b).unwrap())
        .unwrap()
        .2
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..hi.ln()).exp()
}

fn resources_for_theta(rng: &mut impl Rng, theta: f64) -> ResourceState {
    let fk = log_uniform(rng, 1e8, 1e11);
    let a = rng.random_range(1.05..200.0);
    ResourceState::new(fk, fk * a, theta * fk * a / (a - 1.0)).unwrap()
}

struct Case {
    profile: NetworkProfile,
    table: SplitRegionTable,
    draws: Vec<ResourceState>,
}

/// The θ sweep of criteria 1 and 2: the reference network first, then synthetic nets.
fn sweep(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(1 + SYNTHETIC_NETS);
    let mut nets = vec![(reference(), REFERENCE_DRAWS)];
    for _ in 0..SYNTHETIC_NETS {
        let layers = rng.random_range(3..=15);
        let arch = synthetic_architecture(&mut rng, layers);
        nets.push((
            build_profile(&arch, &FlopConvention::default(), 32).unwrap(),
            DRAWS_PER_SYNTHETIC,
        ));
    }
    for (profile, n) in nets {
        let table = offline_phase(&profile, D_K).unwrap();
        let draws = (0..n)
            .map(|_| {
                let theta = log_uniform(&mut rng, THETA_RANGE.0, THETA_RANGE.1);
                resources_for_theta(&mut rng, theta)
            })
            .collect();
        cases.push(Case {
            profile,
            table,
            draws,
        });
    }
    cases
}

fn oracle_equivalence() -> (Outcome, Vec<usize>) {
    let start = Instant::now();
    let cases = sweep(SEED);
    let mut picks = Vec::new();
    let (mut total, mut mismatches) = (0usize, 0usize);
    let mut regions_hit = std::collections::BTreeSet::new();
    for case in &cases {
        for r in &case.draws {
            let pick = select_cut_layer(&case.table, r).unwrap();
            let truth = oracle_argmin(&case.profile, r);
            total += 1;
            mismatches += usize::from(pick != truth);
            picks.push(pick);
        }
    }
    for r in &cases[0].draws {
        regions_hit.insert(select_cut_layer(&cases[0].table, r).unwrap());
    }
    let elapsed = start.elapsed();
    let all_regions = regions_hit.len() == cases[0].table.entries.len();
    (
        check(
            mismatches == 0 && total >= REFERENCE_DRAWS && all_regions && elapsed < ORACLE_BUDGET,
            format!(
                "{mismatches} mismatches in {total} draws over {} networks, reference regions hit {regions_hit:?}, {elapsed:.2?}",
                cases.len()
            ),
        ),
        picks,
    )
}

fn pruning_safety() -> Outcome {
    let cases = sweep(SEED);
    let (mut total, mut violations) = (0usize, 0usize);
    for case in &cases {
        let kept: Vec<usize> = case.table.layers().collect();
        for r in &case.draws {
            let best_kept = kept
                .iter()
                .map(|&n| oracle_delay(&case.profile, n, r))
                .fold(f64::INFINITY, f64::min);
            let best_pruned = (1..case.profile.num_layers())
                .filter(|n| !kept.contains(n))
                .map(|n| oracle_delay(&case.profile, n, r))
                .fold(f64::INFINITY, f64::min);
            total += 1;
            violations += usize::from(best_pruned < best_kept);
        }
    }
    check(violations == 0, format!("{violations} violations in {total} draws"))
}

fn step1_on_reference() -> Outcome {
    let p = reference();
    let first = prune_profile_function(&p, D_K).unwrap();
    let start = Instant::now();
    let again = prune_profile_function(&p, D_K).unwrap();
    let elapsed = start.elapsed();
    check(
        first.layers == [1, 2, 3, 4, 5, 6] && again == first && elapsed < STEP1_BUDGET,
        format!("survivors {:?}, {elapsed:.2?}", first.layers),
    )
}

fn boundary_sign_flips() -> Outcome {
    let mut profiles = vec![reference()];
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0x5eed);
    for _ in 0..SYNTHETIC_NETS {
        let layers = rng.random_range(3..=15);
        let arch = synthetic_architecture(&mut rng, layers);
        profiles.push(build_profile(&arch, &FlopConvention::default(), 32).unwrap());
    }
    let (mut pairs, mut flips_wrong, mut worst_equality) = (0usize, 0usize, 0.0f64);
    for p in &profiles {
        let table = offline_phase(p, D_K).unwrap();
        for w in table.entries.windows(2) {
            let (shallow, deep) = (w[0].layer, w[1].layer);
            let boundary = w[0].theta_low;
            for fk in [1e8, 2.777e9, 1e11] {
                let at = |theta: f64| {
                    let r = ResourceState::new(fk, fk * 30.0, theta * fk * 30.0 / 29.0).unwrap();
                    (oracle_delay(p, shallow, &r), oracle_delay(p, deep, &r))
                };
                pairs += 1;
                // Above the boundary the shallower cut wins, below it the deeper one.
                let (s, d) = at(boundary * (1.0 + BOUNDARY_OFFSET));
                flips_wrong += usize::from(d - s <= 0.0);
                let (s, d) = at(boundary * (1.0 - BOUNDARY_OFFSET));
                flips_wrong += usize::from(d - s >= 0.0);
                let (s, d) = at(boundary);
                worst_equality = worst_equality.max((d - s).abs() / s.min(d));
            }
        }
    }
    check(
        flips_wrong == 0 && worst_equality <= BOUNDARY_EQUALITY,
        format!(
            "{pairs} boundary checks, {flips_wrong} wrong signs, worst relative gap at the boundary {worst_equality:.2e}"
        ),
    )
}

fn mc_config(profile: &NetworkProfile, table: &SplitRegionTable) -> MonteCarloConfig {
    let naive = 3;
    let fk = calibrate_client_flops(table, naive, 20e6, 0.03).unwrap();
    let cvs = linspace(MC_GRID.0, MC_GRID.1, MC_GRID.2);
    let cfg = MonteCarloConfig {
        iterations: MC_ITERATIONS,
        samples_per_iteration: MC_SAMPLES,
        grid: CvCell::grid(&cvs, &cvs),
        distribution: ResourceDistribution::reference(fk),
        training: training(),
        naive_layer: naive,
        seed: SEED,
    };
    cfg.validate(profile, table).unwrap();
    cfg
}

fn gain_surface() -> (Outcome, GainSurface) {
    let p = reference();
    let table = offline_phase(&p, D_K).unwrap();
    let cfg = mc_config(&p, &table);
    let start = Instant::now();
    let s = run_gain_grid_parallel(&p, &table, &cfg, None).unwrap();
    let elapsed = start.elapsed();
    let low = s.cell(MC_GRID.0, MC_GRID.0).unwrap().gain;
    let high = s.cell(MC_GRID.1, MC_GRID.1).unwrap().gain;
    let floor = s.cells.iter().map(|c| c.gain).fold(f64::INFINITY, f64::min);
    let a_ocla = s.cells.iter().map(|c| c.a_ocla).fold(f64::INFINITY, f64::min);
    (
        check(
            (GAIN_LOW_CV.0..=GAIN_LOW_CV.1).contains(&low)
                && high > low
                && floor >= GAIN_FLOOR
                && elapsed < MC_BUDGET,
            format!(
                "gain(0.01,0.01)={low:.4}, gain(0.5,0.5)={high:.4}, min gain {floor:.6}, min A_ocla {a_ocla}, {} cells, {elapsed:.2?}",
                s.cells.len()
            ),
        ),
        s,
    )
}

fn folded_mean(mu: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return mu.abs();
    }
    let z = mu / sigma;
    sigma * (2.0 / std::f64::consts::PI).sqrt() * (-0.5 * z * z).exp()
        + mu * (1.0 - libm::erfc(z / std::f64::consts::SQRT_2))
}

fn folded_normal() -> Outcome {
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for (k, (mu, sigma)) in [(0.03, 0.015), (20e6, 10e6), (1.0, 0.0)].into_iter().enumerate() {
        let p = FoldedNormalParams::new(mu, sigma).unwrap();
        let mut rng = iteration_rng(SEED, 1000 + k, 0);
        let mean = (0..FOLDED_DRAWS)
            .map(|_| sample_folded_normal(&p, &mut rng))
            .sum::<f64>()
            / FOLDED_DRAWS as f64;
        let rel = (mean / folded_mean(mu, sigma) - 1.0).abs();
        worst = worst.max(rel);
        detail.push(format!("({mu},{sigma}): {rel:.2e}"));
    }
    check(worst <= FOLDED_TOLERANCE, format!("relative errors {}", detail.join(", ")))
}

fn simulations() -> Vec<(SelectorKind, Timeline)> {
    let p = reference();
    let table = offline_phase(&p, D_K).unwrap();
    let fk = calibrate_client_flops(&table, 3, 20e6, 0.03).unwrap();
    let selectors = std::iter::once(SelectorKind::Ocla).chain((1..=6).map(SelectorKind::Naive));
    selectors
        .map(|selector| {
            let cfg = SimulationConfig {
                training: training(),
                selector,
                resources: ResourceSource::Sampled {
                    distribution: ResourceDistribution::reference(fk),
                    cell: CvCell {
                        rate_cv: SIM_CV,
                        ratio_cv: SIM_CV,
                    },
                },
                seed: SEED,
            };
            (selector, simulate_training(&p, Some(&table), &cfg).unwrap())
        })
        .collect()
}

fn simulation_dominance() -> (Outcome, Vec<(SelectorKind, Timeline)>) {
    let start = Instant::now();
    let runs = simulations();
    let elapsed = start.elapsed();
    let ocla = runs[0].1.round_ends();
    let mut prefix_losses = 0;
    let mut strictly_better = Vec::new();
    for (kind, t) in &runs[1..] {
        let ends = t.round_ends();
        prefix_losses += ocla.iter().zip(&ends).filter(|(o, n)| o > n).count();
        if ocla[34] < ends[34] {
            strictly_better.push(kind.to_string());
        }
    }
    (
        check(
            ocla.len() == 35
                && runs[0].1.events.len() == 350
                && prefix_losses == 0
                && !strictly_better.is_empty()
                && elapsed < SIM_BUDGET,
            format!(
                "OCLA total {:.1} s, {prefix_losses} round prefixes where a fixed layer is faster, strictly faster than {strictly_better:?} at round 35, {elapsed:.2?}",
                ocla[34]
            ),
        ),
        runs,
    )
}

fn bits(s: &GainSurface) -> Vec<[u64; 3]> {
    s.cells
        .iter()
        .map(|c| [c.a_ocla.to_bits(), c.a_naive.to_bits(), c.stderr.to_bits()])
        .collect()
}

fn determinism(
    picks: &[usize],
    surface: &GainSurface,
    runs: &[(SelectorKind, Timeline)],
) -> Outcome {
    let (_, picks_again) = oracle_equivalence();
    let p = reference();
    let table = offline_phase(&p, D_K).unwrap();
    let cfg = mc_config(&p, &table);
    let sequential = run_gain_grid(&p, &table, &cfg).unwrap();
    let one_thread = run_gain_grid_parallel(&p, &table, &cfg, Some(1)).unwrap();
    let four_threads = run_gain_grid_parallel(&p, &table, &cfg, Some(4)).unwrap();
    let runs_again = simulations();
    let same_picks = picks == picks_again;
    let same_surface = [&sequential, &one_thread, &four_threads]
        .iter()
        .all(|s| bits(s) == bits(surface));
    let same_runs = runs.iter().zip(&runs_again).all(|((_, a), (_, b))| {
        a.events.len() == b.events.len()
            && a.events
                .iter()
                .zip(&b.events)
                .all(|(x, y)| x == y && x.cumulative.to_bits() == y.cumulative.to_bits())
    });
    check(
        same_picks && same_surface && same_runs,
        format!(
            "selections {same_picks}, surface (sequential, 1 and 4 threads) {same_surface}, timelines {same_runs}"
        ),
    )
}

fn ulps(a: f64, b: f64) -> u64 {
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
}

fn delay_identity(runs: &[(SelectorKind, Timeline)]) -> Outcome {
    let p = reference();
    let (mut events, mut worst_ulps, mut accounting) = (0usize, 0u64, 0usize);
    for (_, t) in runs {
        let last = t.events.len() - 1;
        let mut clock = 0.0;
        let mut expected_total = 0.0;
        for (i, e) in t.events.iter().enumerate() {
            let b = &e.breakdown;
            let identity = 2.0 * (D_K as f64 / BATCH as f64) * (b.tau_k + b.t_0 + b.tau_s) + 2.0 * b.t_p;
            worst_ulps = worst_ulps.max(ulps(identity, b.t_epoch));
            worst_ulps = worst_ulps.max(ulps(oracle_delay(&p, b.cut, &e.resources), b.t_epoch));
            let mut charged = b.t_epoch;
            if i == 0 {
                charged -= b.t_p;
            }
            if i == last {
                charged -= b.t_p;
            }
            clock += charged;
            expected_total += b.t_epoch;
            accounting += usize::from(e.charged != charged || e.cumulative != clock);
            events += 1;
        }
        expected_total -= t.events[0].breakdown.t_p + t.events[last].breakdown.t_p;
        accounting += usize::from((t.total() - expected_total).abs() > 1e-12 * expected_total);
        accounting += usize::from(
            (t.round_totals.iter().sum::<f64>() - t.total()).abs() > 1e-12 * t.total(),
        );
    }
    check(
        worst_ulps <= 1 && accounting == 0,
        format!("{events} epochs, worst {worst_ulps} ulp, {accounting} accounting mismatches"),
    )
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    let (c1, picks) = oracle_equivalence();
    results.push(("oracle equivalence", c1));
    results.push(("pruning safety", pruning_safety()));
    results.push(("step-1 survivors on the reference network", step1_on_reference()));
    results.push(("boundary sign flips", boundary_sign_flips()));
    let (c5, surface) = gain_surface();
    results.push(("gain surface", c5));
    results.push(("folded-normal mean", folded_normal()));
    let (c7, runs) = simulation_dominance();
    results.push(("simulation dominance", c7));
    results.push(("determinism", determinism(&picks, &surface, &runs)));
    results.push(("epoch delay identity", delay_identity(&runs)));

    // Straight to the handle so the table shows even when output is captured.
    let mut err = std::io::stderr().lock();
    for (i, (name, o)) in results.iter().enumerate() {
        writeln!(
            err,
            "{} {}. {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        )
        .unwrap();
    }
    let failed: Vec<_> = results
        .iter()
        .enumerate()
        .filter(|(_, (_, o))| !o.pass)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
