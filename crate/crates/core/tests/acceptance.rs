//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints its own PASS/FAIL line; exits nonzero if any criterion fails.

use std::time::Instant;

use apo_core::apo_gen::{apo_gen_run, gen_suboptimality, FunctionClass, GenConfig, GenQuery};
use apo_core::design::DesignMatrices;
use apo_core::estimation::{gamma_radius, log_loss, log_loss_grad, solve_mle, GroupedSamples, MleConfig};
use apo_core::harness::{audit_potential, reproduce_lower_bound, run_rng, LowerBoundExperiment};
use apo_core::instances::make_random_instance;
use apo_core::learners::{apo_run, batch_apo_run, ApoConfig, BatchApoConfig, BonusMetric, InnerUpdate, RunOutput};
use apo_core::model::{sample_preference, Instance, PreferenceSample, Triplet, Vector};
use apo_core::theory::{check_bretagnolle_huber_random, check_kl_bound, check_self_concordance_bound};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const SEED_BASE: u64 = 20_240_601;

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn report(id: u32, pass: bool, detail: String) -> Outcome {
    println!("[{}] criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { id, pass, detail }
}

fn criterion_1() -> (Outcome, LowerBoundExperiment) {
    let start = Instant::now();
    let exp = reproduce_lower_bound(1000, 50, 100, SEED_BASE).expect("lower-bound runs");
    let secs = start.elapsed().as_secs_f64();
    let r = &exp.report;
    let worst_first = r.apo_first_bad_query.iter().map(|q| q.unwrap_or(usize::MAX)).max().unwrap();
    let pass = r.uniform_bad_gap_fraction >= 0.9 && r.apo_zero_gap_fraction >= 0.95 && worst_first <= 10 && secs <= 60.0;
    let out = report(
        1,
        pass,
        format!(
            "uniform bad-context gap = alpha/2 in {:.2} of seeds (need >= 0.90); APO gap 0 in {:.2} (need >= 0.95); latest first bad-context query at round {} (need <= 10); {:.1}s",
            r.uniform_bad_gap_fraction, r.apo_zero_gap_fraction, worst_first, secs
        ),
    );
    (out, exp)
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn scaling_instance() -> Instance {
    make_random_instance(50, 10, 5, 2.0, &mut ChaCha8Rng::seed_from_u64(SEED_BASE)).unwrap()
}

fn criterion_2() -> (Outcome, Instance, Vec<RunOutput>) {
    let inst = scaling_instance();
    let horizon = 5000;
    let cfg = ApoConfig {
        horizon,
        delta: 0.1,
        record_every: Some(1),
        audit_every: Some(100),
        ..ApoConfig::default()
    };
    let start = Instant::now();
    let runs: Vec<RunOutput> = (0..20u64)
        .into_par_iter()
        .map(|seed| apo_run(&inst, &cfg, &mut run_rng(SEED_BASE, seed)).expect("APO run"))
        .collect();
    let secs = start.elapsed().as_secs_f64();

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut zero_rounds = 0;
    for t in 500..=horizon {
        let mean = runs.iter().map(|r| r.records[t - 1].gap).sum::<f64>() / runs.len() as f64;
        if mean > 0.0 {
            xs.push((t as f64).ln());
            ys.push(mean.ln());
        } else {
            zero_rounds += 1;
        }
    }
    let slope = if xs.len() >= 2 { least_squares_slope(&xs, &ys) } else { f64::NAN };
    let pass = (-0.7..=-0.3).contains(&slope) && zero_rounds == 0 && secs <= 600.0;
    let out = report(
        2,
        pass,
        format!(
            "log-log slope of mean APO gap over t in [500, 5000] = {slope:.3} (need [-0.7, -0.3]); {zero_rounds} rounds with zero mean gap; {secs:.1}s"
        ),
    );
    (out, inst, runs)
}

fn criterion_3(lb: &LowerBoundExperiment, inst2: &Instance, runs2: &[RunOutput]) -> Outcome {
    let mut traces = 0;
    let mut violations = 0;
    let mut worst_ratio = 0.0f64;
    let mut clipped_violations = 0;
    let all = lb
        .uniform_runs
        .iter()
        .chain(&lb.apo_runs)
        .map(|r| (&lb.instance, r))
        .chain(runs2.iter().map(|r| (inst2, r)));
    for (inst, run) in all {
        let audit = audit_potential(inst, run).expect("audit");
        traces += 1;
        worst_ratio = worst_ratio.max(audit.sum / audit.bound);
        if !audit.ok {
            violations += 1;
        }
        // the streamed potential sum agrees with the audit's recomputation
        let last = run.records.last().unwrap().potential_sum;
        assert!((last - audit.sum).abs() <= 1e-8 * audit.sum.max(1.0));

        // diagnostic only: the same sum with each term capped at 1
        let mut v = DesignMatrices::new(inst.dim(), run.lambda_v, run.lambda_v).unwrap();
        let mut clipped = 0.0;
        for z in run.history() {
            clipped += v.v_norm(&z).powi(2).min(1.0);
            v.update_v(&z).unwrap();
        }
        if clipped > audit.bound + 1e-9 {
            clipped_violations += 1;
        }
    }
    report(
        3,
        violations == 0,
        format!(
            "elliptic potential bound violated on {violations} of {traces} traces (need 0); worst sum/bound = {worst_ratio:.3}; with terms capped at 1: {clipped_violations} violations"
        ),
    )
}

fn criterion_4(runs: &[RunOutput]) -> Outcome {
    let audits: Vec<_> = runs.iter().flat_map(|r| r.audits.iter()).collect();
    let worst = audits.iter().map(|a| a.margin).fold(f64::INFINITY, f64::min);
    let expected = runs.iter().map(|r| r.records.len() / 100).sum::<usize>();
    report(
        4,
        worst >= -1e-8 && audits.len() == expected,
        format!(
            "min eigenvalue of kappa H - V over {} audits = {worst:.3e} (need >= -1e-8)",
            audits.len()
        ),
    )
}

fn criterion_5() -> Outcome {
    let r = check_self_concordance_bound(-10.0, 10.0, 0.1, 1.01);
    report(
        5,
        r.ok && r.points_checked == 201 * 201,
        format!("{} grid points, max violation {:.3e} (need <= 1e-9)", r.points_checked, r.max_violation),
    )
}

fn criterion_6() -> Outcome {
    let kl = check_kl_bound(-10.0, 10.0, 0.05);
    let bh = check_bretagnolle_huber_random(100, 8, SEED_BASE).expect("valid distributions");
    report(
        6,
        kl.ok && kl.points_checked == 401 * 401 && bh.ok && bh.points_checked == 100 * 256,
        format!(
            "KL bound: {} points, max violation {:.3e}; Bretagnolle-Huber: {} events, max violation {:.3e}",
            kl.points_checked, kl.max_violation, bh.points_checked, bh.max_violation
        ),
    )
}

fn criterion_7() -> Outcome {
    let inst = make_random_instance(20, 5, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(SEED_BASE + 7)).unwrap();
    let triplets = inst.candidate_triplets();
    let errors: Vec<f64> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = run_rng(SEED_BASE + 7, seed);
            let mut data = GroupedSamples::new();
            for _ in 0..100_000 {
                let t = triplets[rng.random_range(0..triplets.len())];
                let y = sample_preference(&inst, t, &mut rng).unwrap();
                data.push(&PreferenceSample::new(&inst, t, y).unwrap()).unwrap();
            }
            let est = solve_mle(&data, inst.s(), inst.zero_sum(), &MleConfig::default()).unwrap();
            (est.theta - inst.theta_star()).norm()
        })
        .collect();
    let within = errors.iter().filter(|&&e| e <= 0.05).count();

    // finite-difference gradient check on 50 random draws
    let mut rng = ChaCha8Rng::seed_from_u64(SEED_BASE + 77);
    let mut worst_rel = 0.0f64;
    for _ in 0..50 {
        let samples: Vec<PreferenceSample> = (0..40)
            .map(|_| {
                let t = triplets[rng.random_range(0..triplets.len())];
                PreferenceSample::new(&inst, t, rng.random_bool(0.5)).unwrap()
            })
            .collect();
        let theta = Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let g = log_loss_grad(samples.as_slice(), &theta).unwrap();
        let h = 1e-6;
        let fd = Vector::from_fn(3, |i, _| {
            let mut p = theta.clone();
            let mut m = theta.clone();
            p[i] += h;
            m[i] -= h;
            (log_loss(samples.as_slice(), &p).unwrap() - log_loss(samples.as_slice(), &m).unwrap()) / (2.0 * h)
        });
        worst_rel = worst_rel.max((&g - &fd).norm() / g.norm().max(1e-12));
    }
    report(
        7,
        within >= 19 && worst_rel <= 1e-5,
        format!(
            "||theta_hat - theta*|| <= 0.05 in {within}/20 seeds (need >= 19, worst {:.4}); gradient relative error {worst_rel:.2e} (need <= 1e-5)",
            errors.iter().cloned().fold(0.0, f64::max)
        ),
    )
}

fn criterion_8(inst: &Instance, runs: &[RunOutput]) -> Outcome {
    let covered = runs
        .iter()
        .filter(|run| {
            run.records
                .iter()
                .all(|r| r.est_error <= gamma_radius(r.t, inst.dim(), inst.s(), 0.1, 10.0))
        })
        .count();
    let worst = runs
        .iter()
        .flat_map(|run| run.records.iter())
        .map(|r| r.est_error / gamma_radius(r.t, inst.dim(), inst.s(), 0.1, 10.0))
        .fold(0.0, f64::max);
    report(
        8,
        covered as f64 >= 0.9 * runs.len() as f64,
        format!(
            "H-norm error within the C = 10 radius at every round in {covered}/{} seeds (need >= 90%); worst error/radius = {worst:.3}",
            runs.len()
        ),
    )
}

fn criterion_9() -> Outcome {
    let inst = make_random_instance(5, 4, 3, 2.0, &mut ChaCha8Rng::seed_from_u64(SEED_BASE + 9)).unwrap();
    let class = FunctionClass::btl_grid(&inst, 2.0, &Vector::from_row_slice(&[2.0, -2.0, 0.0])).unwrap();
    assert_eq!(class.len(), 27);
    let full: Vec<Vec<usize>> = vec![(0..class.n_actions()).collect(); class.n_contexts()];
    let full_gap = gen_suboptimality(&class, &full).unwrap();
    let cfg = |query| GenConfig {
        horizon: 500,
        delta: 0.1,
        query,
    };
    let results: Vec<(bool, bool, f64, f64)> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let a = apo_gen_run(&class, &cfg(GenQuery::Active), &mut run_rng(SEED_BASE + 9, seed)).unwrap();
            let u = apo_gen_run(&class, &cfg(GenQuery::Uniform), &mut run_rng(SEED_BASE + 9, seed)).unwrap();
            (
                a.truth_always_covered(),
                a.winners_always_retained(),
                gen_suboptimality(&class, &a.policy).unwrap(),
                gen_suboptimality(&class, &u.policy).unwrap(),
            )
        })
        .collect();
    let covered = results.iter().filter(|r| r.0).count();
    let retained = results.iter().filter(|r| r.0 && r.1).count();
    let below_full = results.iter().filter(|r| r.2 <= full_gap).count();
    let beats_uniform = results.iter().filter(|r| r.2 <= r.3).count();
    let pass = covered >= 45 && retained == covered && below_full == 50 && beats_uniform >= 40;
    report(
        9,
        pass,
        format!(
            "f* in every confidence set in {covered}/50 seeds (need >= 45); winners retained in {retained}/{covered}; gap <= full-set gap in {below_full}/50; gap <= uniform baseline in {beats_uniform}/50 (need >= 40)"
        ),
    )
}

fn criterion_10() -> Outcome {
    let v = |xs: &[f64]| Vector::from_row_slice(xs);
    let inst = Instance::new(
        vec![
            vec![v(&[0.6, 0.2]), v(&[-0.3, 0.5]), v(&[0.1, -0.7])],
            vec![v(&[0.4, 0.4]), v(&[-0.5, -0.2]), v(&[0.8, -0.1])],
        ],
        v(&[0.9, -0.4]),
        1.0,
        1.0,
        false,
    )
    .unwrap();
    let horizon = 20;
    let apo = apo_run(
        &inst,
        &ApoConfig {
            horizon,
            metric: BonusMetric::V,
            ..ApoConfig::default()
        },
        &mut run_rng(SEED_BASE + 10, 0),
    )
    .unwrap();
    let batch = batch_apo_run(
        &inst,
        &BatchApoConfig {
            horizon,
            batch_size: 1,
            inner: InnerUpdate::Solve(MleConfig::default()),
            ..BatchApoConfig::default()
        },
        &mut run_rng(SEED_BASE + 10, 0),
    )
    .unwrap();
    let a: Vec<Triplet> = apo.samples.iter().map(|s| s.triplet).collect();
    let b: Vec<Triplet> = batch.samples.iter().map(|s| s.triplet).collect();
    let matching = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    report(
        10,
        a.len() == horizon && a == b,
        format!("batch APO (B = 1) matches APO under V for {matching}/{horizon} rounds"),
    )
}

fn main() {
    let start = Instant::now();
    let (c1, lb) = criterion_1();
    let (c2, inst2, runs2) = criterion_2();
    let c3 = criterion_3(&lb, &inst2, &runs2);
    let c4 = criterion_4(&runs2);
    let c5 = criterion_5();
    let c6 = criterion_6();
    let c7 = criterion_7();
    let c8 = criterion_8(&inst2, &runs2);
    let c9 = criterion_9();
    let c10 = criterion_10();
    let all = [c1, c2, c3, c4, c5, c6, c7, c8, c9, c10];
    let failed: Vec<&Outcome> = all.iter().filter(|o| !o.pass).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.1}s",
        all.len() - failed.len(),
        all.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        for o in &failed {
            eprintln!("criterion {} failed: {}", o.id, o.detail);
        }
        std::process::exit(1);
    }
}
