//! Acceptance runner. One PASS/FAIL line per criterion; exits nonzero if
//! any fails. Tolerances and time budgets are the constants below.

mod common;

use std::time::{Duration, Instant};

use rand::Rng;
use trialign::cascade::{full_decide, CascadeConfig, CascadeEngine};
use trialign::evalstats::{cochran_q, CochranInput};
use trialign::features::{rules, FruitSample, SyntheticExtractor};
use trialign::feedback;
use trialign::lifecycle::{cost_delta, Buffer, DataRecord, Timestamp};
use trialign::metrics::{self, QuadraticBudgetScenario, SensitivityGrid, TtiParams, TtiWeights};
use trialign::premap::decode_credential;
use trialign::rgid::VarietyId;
use trialign::simgen::{generate_samples, VarietyProfile};

const Q_PUBLISHED: f64 = 372.39;
const Q_TOL: f64 = 0.01;
const P_BOUND: f64 = 0.001;
const COCHRAN_BUDGET: Duration = Duration::from_secs(1);

const TTI_TOL: f64 = 1e-12;

const SIGN_GRID: usize = 5;
const SIGN_STEP: f64 = 1e-4;
const SIGN_BUDGET: Duration = Duration::from_secs(1);

const ORACLE_SAMPLES: usize = 10_000;
const ORACLE_BUDGET: Duration = Duration::from_secs(10);

const DELTA_C_TOL: f64 = 1e-12;
const BUFFER_OPS: usize = 100_000;

const GRAD_DRAWS: usize = 100;
const GRAD_REL_TOL: f64 = 1e-6;
const DESCENT_STEPS: usize = 100;
const SIMPLEX_TOL: f64 = 1e-12;

const CREDENTIALS: usize = 1_000;
const CORRUPTIONS: usize = 10_000;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(t: Duration, budget: Duration) -> Result<(), String> {
    ensure(t < budget, || format!("took {t:?}, budget {budget:?}"))
}

fn cochran() -> Outcome {
    let start = Instant::now();
    let input = CochranInput::Aggregates {
        g: vec![187, 211, 55, 32],
        sum_l: 485,
        sum_l2: 1143,
    };
    let r = cochran_q(&input).map_err(|e| e.to_string())?;
    let t = start.elapsed();
    // independent evaluation of the statistic from the same aggregates
    let (k, sg) = (4.0, 485.0);
    let sg2: f64 = [187.0f64, 211.0, 55.0, 32.0].iter().map(|g| g * g).sum();
    let oracle = (k - 1.0) * (k * sg2 - sg * sg) / (k * 485.0 - 1143.0);
    ensure((r.q - oracle).abs() < 1e-9, || format!("Q {} vs oracle {oracle}", r.q))?;
    ensure((r.q - Q_PUBLISHED).abs() <= Q_TOL, || {
        format!("Q {} vs {Q_PUBLISHED}", r.q)
    })?;
    ensure(r.df == 3, || format!("df {}", r.df))?;
    ensure(r.p < P_BOUND, || format!("p {}", r.p))?;
    within_budget(t, COCHRAN_BUDGET)?;
    Ok(format!("Q={:.3} df={} p={:.2e} in {t:?}", r.q, r.df, r.p))
}

fn tti_conformance() -> Outcome {
    let repo = common::repo();
    let entry = common::entry(&repo, "xinjiang/korla-pear");
    let w = TtiWeights::new(0.6, 0.3, 0.1).map_err(|e| e.to_string())?;
    let cap = metrics::DEFAULT_FE_CAP;
    // FE at the cap gives fe_term = 1
    let best = metrics::tti(1.0, cap, 0.0, entry, w, cap).map_err(|e| e.to_string())?;
    ensure(best.fe_term == 1.0, || format!("fe_term {}", best.fe_term))?;
    ensure((best.tti - 1.0).abs() <= TTI_TOL, || {
        format!("TTI {} at the optimum", best.tti)
    })?;
    let fc_max = entry.econ.fc_max;
    let mut worst = 0.0f64;
    for &(icq, fe) in &[(1.0, cap), (0.7, 1.1), (0.0, 0.0), (1.5, 0.4)] {
        let r = metrics::tti(icq, fe, fc_max, entry, w, cap).map_err(|e| e.to_string())?;
        let expect = 0.6 * r.icq + 0.3 * r.fe_term;
        worst = worst.max((r.tti - expect).abs());
    }
    ensure(worst <= TTI_TOL, || format!("cost term at FC_max off by {worst:e}"))?;
    Ok(format!(
        "TTI(1,1,0)={} ; cost term at FC_max off by {worst:e}",
        best.tti
    ))
}

fn sign_suite() -> Outcome {
    let repo = common::repo();
    let entry = common::entry(&repo, "xinjiang/korla-pear");
    let start = Instant::now();
    let grid = SensitivityGrid::uniform((0.2, 1.2), (0.2, 1.6), SIGN_GRID);
    let report = metrics::tti_sensitivity(
        &QuadraticBudgetScenario::default(),
        &TtiParams::from_entry(entry),
        &grid,
        SIGN_STEP,
    )
    .map_err(|e| e.to_string())?;
    let t = start.elapsed();
    for c in report.checks() {
        ensure(c.passed(), || {
            format!("{} fails at {} points", c.claim, c.violations.len())
        })?;
    }
    within_budget(t, SIGN_BUDGET)?;
    let interior = (SIGN_GRID - 2) * (SIGN_GRID - 2);
    Ok(format!(
        "4 claims hold at all {interior} interior points of {SIGN_GRID}x{SIGN_GRID} in {t:?}"
    ))
}

fn cascade_oracle() -> Outcome {
    let repo = common::repo();
    let start = Instant::now();
    let mut parts = vec![];
    for (i, lambda) in common::VARIETIES.iter().enumerate() {
        let entry = common::entry(&repo, lambda);
        let cfg = CascadeConfig::sound(entry, 0.15, 0.95).map_err(|e| e.to_string())?;
        let engine = CascadeEngine::new(entry, cfg).map_err(|e| e.to_string())?;
        let profile = VarietyProfile::default_for(&entry.lambda).ok_or("no profile")?;
        let samples = generate_samples(&profile, ORACLE_SAMPLES, 1000 + i as u64).map_err(|e| e.to_string())?;
        let (mut mismatches, mut layers, mut early) = (0usize, 0usize, 0usize);
        for s in &samples {
            let trace = engine
                .decide(&s.sample, &SyntheticExtractor)
                .map_err(|e| e.to_string())?;
            let full = full_decide(&s.sample, entry, &SyntheticExtractor).map_err(|e| e.to_string())?;
            mismatches += (trace.decision.accepted() != full.accepted) as usize;
            layers += trace.layers_evaluated;
            early += trace.early_exit(entry.phi.len()) as usize;
        }
        let mean = layers as f64 / samples.len() as f64;
        ensure(mismatches == 0, || format!("{lambda}: {mismatches} mismatches"))?;
        ensure(mean < entry.phi.len() as f64, || {
            format!("{lambda}: mean layers {mean}")
        })?;
        parts.push(format!("{lambda} {mean:.3}/{} ({early} early)", entry.phi.len()));
    }
    let t = start.elapsed();
    within_budget(t, ORACLE_BUDGET)?;
    Ok(format!("0 mismatches; mean layers {} in {t:?}", parts.join(", ")))
}

fn probe(lambda: &str, weight: f64, diameter: f64, scar: f64, stem: f64) -> FruitSample {
    FruitSample {
        id: "probe".into(),
        lambda: lambda.parse::<VarietyId>().unwrap(),
        weight_g: weight,
        diameter_mm: diameter,
        scar_area_cm2: scar,
        stem_integrity: stem,
        color_uniformity: 0.9,
        firmness: 0.7,
        plane_observations: Default::default(),
        t_collect: Timestamp::default(),
    }
}

fn rule_boundaries() -> Outcome {
    let pear = rules::standard("korla-pear").map_err(|e| e.to_string())?;
    let clem = rules::standard("clementine").map_err(|e| e.to_string())?;
    let p = |w, scar| probe("xinjiang/korla-pear", w, 60.0, scar, 1.0);
    let c = |d, stem| probe("zhejiang/clementine", 70.0, d, 0.0, stem);
    // (standard, sample, label, expected eligibility)
    let cases = [
        (pear, p(120.0, 0.0), "A", true),
        (pear, p(160.0, 0.0), "A", true),
        (pear, p(160.01, 0.0), "A", false),
        (pear, p(119.99, 0.0), "A", false),
        (pear, p(110.0, 0.8), "B", true),
        (pear, p(110.0, 0.81), "B", false),
        (pear, p(120.0, 0.8), "B", false),
        (pear, p(100.0, 0.0), "B", true),
        (pear, p(90.0, 1.0), "C", true),
        (pear, p(90.0, 1.01), "C", false),
        (pear, p(100.0, 1.0), "C", false),
        (pear, p(80.0, 1.0), "C", true),
        (pear, p(120.0, 0.01), "A", false),
        (clem, c(45.0, 1.0), "A", true),
        (clem, c(50.0, 1.0), "A", false),
        (clem, c(50.0, 0.95), "B", true),
        (clem, c(44.99, 0.95), "B", true),
        (clem, c(47.0, 0.94), "B", false),
        (clem, c(35.0, 0.9), "C", true),
        (clem, c(60.0, 0.9), "C", false),
    ];
    for (std, s, label, want) in &cases {
        let got = std.eligible(s, label).map_err(|e| e.to_string())?;
        ensure(got == *want, || {
            format!(
                "{} w={} d={} scar={} stem={} {label}: {got}",
                std.standard, s.weight_g, s.diameter_mm, s.scar_area_cm2, s.stem_integrity
            )
        })?;
    }
    let rejects = [
        (pear, p(79.99, 0.0)),
        (pear, p(161.0, 0.0)),
        (pear, p(90.0, 1.5)),
        (clem, c(34.0, 1.0)),
        (clem, c(47.0, 0.8)),
    ];
    for (std, s) in &rejects {
        let g = std.grade(s).map_err(|e| e.to_string())?;
        ensure(g == rules::REJECT, || {
            format!("{} w={} d={} graded {g}", std.standard, s.weight_g, s.diameter_mm)
        })?;
    }
    let a = pear.grade(&p(120.0, 0.0)).map_err(|e| e.to_string())?;
    ensure(a == "A", || format!("pear 120 g graded {a}"))?;
    Ok(format!("{} endpoint probes and {} rejects", cases.len(), rejects.len()))
}

fn ttl_and_cost() -> Outcome {
    let ttl = Duration::from_secs(3600);
    let rec = |id: &str, t: u64| DataRecord {
        id: id.into(),
        payload: (),
        lambda: "o/v".parse::<VarietyId>().unwrap(),
        t_collect: Timestamp(t),
        ttl,
    };
    let r = rec("x", 1_000);
    ensure(r.is_valid(Timestamp(1_000 + 3_600_000)), || {
        "record at exactly TTL is invalid".into()
    })?;
    ensure(!r.is_valid(Timestamp(1_000 + 3_600_001)), || {
        "record past TTL is valid".into()
    })?;

    let buffer: Buffer<()> = Buffer::new(4).map_err(|e| e.to_string())?;
    buffer.ingest(rec("old", 0));
    buffer.ingest(rec("edge", 1));
    let report = buffer.sweep(Timestamp(3_600_001)).map_err(|e| e.to_string())?;
    ensure(report.purged_ids == ["old"], || {
        format!("purged {:?}", report.purged_ids)
    })?;

    let d = cost_delta(250, 1000, 0.02).map_err(|e| e.to_string())?;
    ensure((d - (-0.005)).abs() <= DELTA_C_TOL, || format!("delta C {d}"))?;
    let zero = cost_delta(0, 1000, 0.02).map_err(|e| e.to_string())?;
    ensure(zero == 0.0, || format!("delta C with no purges {zero}"))?;

    common::buffer_conservation(BUFFER_OPS, 99)?;
    Ok(format!(
        "delta C(250/1000, 0.02) = {d}; conservation over {BUFFER_OPS} ops"
    ))
}

fn feedback_loop() -> Outcome {
    let mut rng = common::rng(4242);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..GRAD_DRAWS {
        let d = rng.random_range(2..8);
        let n = rng.random_range(4..40);
        let batch = common::random_batch(&mut rng, n, d);
        let theta = common::random_simplex(&mut rng, d);
        let g = feedback::gradient(&theta, &batch).map_err(|e| e.to_string())?;
        for k in 0..d {
            let (mut up, mut dn) = (theta.clone(), theta.clone());
            up[k] += h;
            dn[k] -= h;
            let fd = (feedback::loss(&up, &batch).map_err(|e| e.to_string())?
                - feedback::loss(&dn, &batch).map_err(|e| e.to_string())?)
                / (2.0 * h);
            // relative error, floored so near-zero components compare absolutely
            let rel = (g[k] - fd).abs() / fd.abs().max(1e-3);
            worst = worst.max(rel);
        }
    }
    ensure(worst < GRAD_REL_TOL, || format!("gradient relative error {worst:e}"))?;

    let batch = common::random_batch(&mut rng, 64, 5);
    let eta = feedback::safe_step_size(&batch).map_err(|e| e.to_string())?;
    let mut theta = common::random_simplex(&mut rng, 5);
    let mut prev = feedback::loss(&theta, &batch).map_err(|e| e.to_string())?;
    let first = prev;
    let mut off_simplex = 0.0f64;
    for step in 0..DESCENT_STEPS {
        theta = feedback::update_step(&theta, &batch, eta).map_err(|e| e.to_string())?;
        let l = feedback::loss(&theta, &batch).map_err(|e| e.to_string())?;
        ensure(l <= prev, || format!("loss rose at step {step}: {prev} -> {l}"))?;
        off_simplex = off_simplex.max((theta.iter().sum::<f64>() - 1.0).abs());
        ensure(theta.iter().all(|&x| x >= 0.0), || {
            format!("negative weight at step {step}")
        })?;
        prev = l;
    }
    ensure(off_simplex <= SIMPLEX_TOL, || {
        format!("simplex sum off by {off_simplex:e}")
    })?;
    Ok(format!(
        "max gradient rel err {worst:.1e}; loss {first:.5} -> {prev:.5} over {DESCENT_STEPS} steps; simplex off by {off_simplex:.1e}"
    ))
}

fn credential_integrity() -> Outcome {
    let mut rng = common::rng(7);
    let mut creds = Vec::with_capacity(CREDENTIALS);
    for i in 0..CREDENTIALS {
        let c = common::random_credential(&mut rng);
        let bytes = c.to_bytes().map_err(|e| e.to_string())?;
        let back = decode_credential(&bytes).map_err(|e| format!("#{i}: {e}"))?;
        ensure(back == c, || format!("#{i} decoded differently"))?;
        let again = back.to_bytes().map_err(|e| e.to_string())?;
        ensure(again == bytes, || format!("#{i} re-encoding differs"))?;
        creds.push(bytes);
    }
    let mut missed = 0usize;
    for _ in 0..CORRUPTIONS {
        let mut b = creds[rng.random_range(0..creds.len())].clone();
        let at = rng.random_range(0..b.len());
        b[at] ^= rng.random_range(1..=255u8);
        missed += decode_credential(&b).is_ok() as usize;
    }
    ensure(missed == 0, || format!("{missed} corruptions decoded"))?;
    Ok(format!(
        "{CREDENTIALS} round trips exact, {CORRUPTIONS} corruptions all rejected"
    ))
}

fn determinism() -> Outcome {
    let scenario = concat!(env!("CARGO_MANIFEST_DIR"), "/data/scenario.toml");
    let argv: Vec<String> = ["trialign", "simulate", scenario, "--seed", "2024"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut outs = vec![];
    for _ in 0..2 {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = trialign::cli::run_with(&argv, &mut out, &mut err);
        ensure(code == 0, || String::from_utf8_lossy(&err).into_owned())?;
        outs.push(out);
    }
    ensure(outs[0] == outs[1], || "reports differ".into())?;
    Ok(format!("two runs, {} identical bytes", outs[0].len()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("cochran-q-table1", cochran),
        ("tti-formula-conformance", tti_conformance),
        ("tti-sign-constraints", sign_suite),
        ("cascade-oracle-equivalence", cascade_oracle),
        ("rule-grader-boundaries", rule_boundaries),
        ("ttl-and-cost-delta", ttl_and_cost),
        ("feedback-descent", feedback_loop),
        ("credential-integrity", credential_integrity),
        ("simulate-determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let r = f();
        let t = start.elapsed();
        match r {
            Ok(detail) => println!("PASS {name}: {detail} [{t:.2?}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{t:.2?}]");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
