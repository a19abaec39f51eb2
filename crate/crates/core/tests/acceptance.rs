//! Acceptance gate: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p anonfd --test acceptance` (release-grade opt level
//! comes from the workspace test profile).

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use anonfd::detectors::{
    sample_history, AnyHistory, DetectorKind, DetectorSpec, DiamondNSpec, DiamondPSpec,
    LowestCrashedSpec, NSpec, OmegaSpec, OracleProfile, PSpec, PreConvergence, ThetaSpec,
};
use anonfd::harness::{self, CampaignSummary, Scenario, SeedRange};
use anonfd::model::{
    is_anonymous, AnonymityVerdict, Environment, FailurePattern, History, PermutationSource,
    ProcessId, SystemConfig,
};
use anonfd::transforms;
use anonfd::verify::Verdict;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const SEEDS: SeedRange = SeedRange {
    start: 0,
    count: 1000,
};

fn scenario(json: &str) -> Scenario {
    Scenario::from_json(json).unwrap_or_else(|e| panic!("bad scenario {json}: {e}"))
}

fn campaign(json: &str) -> Result<CampaignSummary, String> {
    let sc = scenario(json);
    harness::run_campaign(&sc, SEEDS, None, None, &|s| format!("seed {s}"))
        .map(|(s, _)| s)
        .map_err(|e| e.to_string())
}

fn adversarial(alg: &str, n: usize, f: usize, kind: &str, extra: &str) -> String {
    format!(
        r#"{{"algorithm": "{alg}", "n": {n}, "f": {f}, {extra} "crash": "random",
            "oracle": {{"kind": "{kind}", "profile": "adversarial-random", "convergence_time": "random"}}}}"#
    )
}

fn explore(json: &str) -> Result<harness::ExploreSummary, String> {
    harness::explore_scenario(&scenario(json)).map_err(|e| e.to_string())
}

fn first_failures(s: &CampaignSummary) -> String {
    s.failures
        .iter()
        .take(3)
        .map(|f| format!("seed {} [{}]", f.seed, f.properties.join(",")))
        .collect::<Vec<_>>()
        .join("; ")
}

fn exhaustive_consensus() -> Outcome {
    let mut notes = Vec::new();
    for (alg, n, f) in [("alg1", 2, 1), ("alg1", 3, 2), ("alg2", 3, 1)] {
        let s = explore(&format!(r#"{{"algorithm": "{alg}", "n": {n}, "f": {f}}}"#))?;
        if !s.passed() {
            let run = s
                .runs
                .iter()
                .find(|r| !r.violations.is_empty())
                .expect("some violation");
            return Err(format!("{alg} n={n} f={f}: {}", run.violations[0].message));
        }
        if !s.complete() {
            return Err(format!("{alg} n={n} f={f}: search hit a budget"));
        }
        if s.runs.len() != 1 << n {
            return Err(format!("{alg} n={n}: {} input vectors", s.runs.len()));
        }
        notes.push(format!("{alg} n={n} f={f}: {} states", s.states()));
    }
    Ok(notes.join(", "))
}

/// Campaigns shared by the statistical and lemma criteria.
struct Campaigns(Vec<(&'static str, CampaignSummary)>);

fn run_campaigns() -> Result<Campaigns, String> {
    Ok(Campaigns(vec![
        ("alg1", campaign(&adversarial("alg1", 4, 3, "N", ""))?),
        (
            "alg2",
            campaign(&adversarial("alg2", 5, 2, "DiamondN", ""))?,
        ),
        ("alg3", campaign(&adversarial("alg3", 5, 2, "Theta", ""))?),
        ("alg5", campaign(&adversarial("alg5", 5, 2, "N", ""))?),
    ]))
}

fn statistical(c: &Result<Campaigns, String>) -> Outcome {
    let c = c.as_ref().map_err(Clone::clone)?;
    let mut notes = Vec::new();
    for (alg, s) in c.0.iter().filter(|(a, _)| *a != "alg5") {
        if !s.passed() || s.summary.runs != SEEDS.count as usize {
            return Err(format!(
                "{alg}: {} failing runs: {}",
                s.failures.len(),
                first_failures(s)
            ));
        }
        for p in ["termination", "agreement", "validity", "integrity"] {
            if s.summary.count(p, Verdict::Pass) != s.summary.runs {
                return Err(format!(
                    "{alg}: {p} passed {} of {}",
                    s.summary.count(p, Verdict::Pass),
                    s.summary.runs
                ));
            }
        }
        notes.push(format!("{alg} {}/{}", s.summary.runs, s.summary.runs));
    }
    Ok(notes.join(", "))
}

fn lemma_suite(c: &Result<Campaigns, String>) -> Outcome {
    let c = c.as_ref().map_err(Clone::clone)?;
    let lemmas: BTreeMap<&str, &[&str]> = BTreeMap::from([
        ("alg1", &["stubbornness"][..]),
        ("alg2", &["lock-exclusivity", "decision-spread"][..]),
        ("alg3", &["unique-decide"][..]),
        ("alg5", &["round-skew"][..]),
    ]);
    for (alg, s) in &c.0 {
        for p in lemmas[alg] {
            let pass = s.summary.count(p, Verdict::Pass);
            // decision-spread is vacuous only when nobody decides, which
            // termination already rules out.
            if pass != s.summary.runs {
                return Err(format!(
                    "{alg}: {p} held on {pass} of {} traces",
                    s.summary.runs
                ));
            }
        }
    }
    let mutants = [
        ("alg1", 4, 3, "N", "min-instead-of-max", "stubbornness"),
        (
            "alg2",
            5,
            2,
            "DiamondN",
            "lock-without-unanimity",
            "lock-exclusivity",
        ),
        (
            "alg2",
            5,
            2,
            "DiamondN",
            "ignore-partial-lock",
            "decision-spread",
        ),
        (
            "alg3",
            5,
            2,
            "Theta",
            "vote-without-majority",
            "unique-decide",
        ),
        ("alg5", 5, 2, "N", "no-wait", "round-skew"),
        ("alg5", 5, 2, "N", "drop-guard", "strong-accuracy"),
    ];
    let mut notes = Vec::new();
    for (alg, n, f, kind, mutant, property) in mutants {
        let s = campaign(&adversarial(
            alg,
            n,
            f,
            kind,
            &format!(r#""mutant": "{mutant}","#),
        ))?;
        let caught = s.summary.count(property, Verdict::Fail);
        if caught == 0 {
            return Err(format!("{alg}/{mutant} never tripped {property}"));
        }
        notes.push(format!("{mutant}->{property} x{caught}"));
    }
    Ok(format!(
        "lemmas hold on every campaign trace; mutants caught: {}",
        notes.join(", ")
    ))
}

fn random_profile(rng: &mut ChaCha8Rng, horizon: u64) -> OracleProfile {
    let pre = [
        PreConvergence::Optimistic,
        PreConvergence::Pessimistic,
        PreConvergence::AdversarialRandom,
    ][rng.gen_range(0..3)];
    OracleProfile::new(rng.gen_range(0..=horizon), pre)
}

fn random_instance(
    rng: &mut ChaCha8Rng,
    max_n: usize,
) -> (SystemConfig, FailurePattern, OracleProfile) {
    let n = rng.gen_range(2..=max_n);
    let cfg = SystemConfig::new(n, rng.gen_range(0..n)).expect("f < n");
    let pattern = Environment::at_most_f(cfg).sample(rng, 20);
    let profile = random_profile(rng, 30);
    (cfg, pattern, profile)
}

fn trivial_maps(samples: u64) -> Result<(), String> {
    fn each<S: anonfd::detectors::Sampler, T: DetectorSpec>(
        name: &str,
        from: S,
        to: T,
        map: impl Fn(&History<S::Value>) -> History<T::Value>,
        samples: u64,
    ) -> Result<(), String> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x7a11);
        for seed in 0..samples {
            let (_, pattern, profile) = random_instance(&mut rng, 5);
            let h =
                sample_history(&from, &pattern, &profile, 40, seed).map_err(|e| e.to_string())?;
            if !to
                .validates(&map(&h), &pattern)
                .map_err(|e| e.to_string())?
            {
                return Err(format!("{name}: sample {seed} maps to an illegal history"));
            }
        }
        Ok(())
    }
    each("p-to-n", PSpec, NSpec, transforms::p_to_n, samples)?;
    each(
        "diamond-p-to-diamond-n",
        DiamondPSpec,
        DiamondNSpec,
        transforms::diamond_p_to_diamond_n,
        samples,
    )?;
    each(
        "omega-to-theta",
        OmegaSpec,
        ThetaSpec,
        transforms::omega_to_theta,
        samples,
    )?;
    each(
        "n-to-diamond-n",
        NSpec,
        DiamondNSpec,
        transforms::n_to_diamond_n,
        samples,
    )
}

fn transformations() -> Outcome {
    let mut notes = Vec::new();
    for alg in ["alg4", "alg5"] {
        let s = explore(&format!(r#"{{"algorithm": "{alg}", "n": 3, "f": 1}}"#))?;
        if !s.passed() {
            let run = s
                .runs
                .iter()
                .find(|r| !r.violations.is_empty())
                .expect("some violation");
            return Err(format!("{alg}: {}", run.violations[0].message));
        }
        if !s.complete() {
            return Err(format!("{alg}: search hit a budget"));
        }
        notes.push(format!(
            "{alg} [{}] {} states",
            s.properties.join(","),
            s.states()
        ));
    }
    trivial_maps(1000)?;
    notes.push("4 trivial maps x 1000 samples".into());
    Ok(notes.join("; "))
}

fn anonymity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa707);
    let mut checked = 0;
    for n in 2..=4 {
        for kind in [DetectorKind::N, DetectorKind::DiamondN, DetectorKind::Theta] {
            for seed in 0..200 {
                let cfg = SystemConfig::new(n, rng.gen_range(0..n)).expect("f < n");
                let pattern = Environment::at_most_f(cfg).sample(&mut rng, 20);
                let profile = random_profile(&mut rng, 30);
                let h = AnyHistory::sample(kind, &pattern, &profile, 40, seed)
                    .map_err(|e| e.to_string())?;
                match h
                    .is_anonymous(&pattern, &PermutationSource::Exhaustive)
                    .map_err(|e| e.to_string())?
                {
                    AnonymityVerdict::Closed { .. } => checked += 1,
                    AnonymityVerdict::Violated { perm, violation } => {
                        return Err(format!(
                            "{} n={n} sample {seed}: {perm:?} gives {violation}",
                            kind.name()
                        ))
                    }
                }
            }
        }
    }
    let pattern = FailurePattern::from_pairs(3, &[(1, 0)]).expect("pattern");
    let h = History::constant(3, 5, ProcessId::new(1));
    let counter = match is_anonymous(
        &LowestCrashedSpec,
        &pattern,
        &h,
        &PermutationSource::Exhaustive,
    )
    .map_err(|e| e.to_string())?
    {
        AnonymityVerdict::Violated { perm, violation } => {
            format!("lowest-crashed broken by {perm:?} ({violation})")
        }
        AnonymityVerdict::Closed { .. } => {
            return Err("lowest-crashed counterexample passed the closure check".into())
        }
    };
    let exact = History::from_fn(3, 5, |_, t| pattern.crashed_at(t));
    let p = match is_anonymous(&PSpec, &pattern, &exact, &PermutationSource::Exhaustive)
        .map_err(|e| e.to_string())?
    {
        AnonymityVerdict::Violated { perm, .. } => format!("P broken by {perm:?}"),
        AnonymityVerdict::Closed { .. } => return Err("P history passed the closure check".into()),
    };
    Ok(format!(
        "{checked} N/DiamondN/Theta histories closed at n=2..4; {counter}; {p}"
    ))
}

fn randomized_reduction() -> Outcome {
    let s = campaign(&adversarial("n-to-theta", 5, 2, "N", ""))?;
    let successes = s.successes.ok_or("no success count")?;
    let rate = s.success_rate.ok_or("no success rate")?;
    if successes < 667 {
        return Err(format!("{successes}/1000 valid Theta histories, below 667"));
    }
    let forced = scenario(
        r#"{"algorithm": "n-to-theta", "n": 5, "f": 2, "ids": [7, 7, 3, 3, 1], "crash": {"5": 0}}"#,
    );
    let out = harness::run_scenario(&forced, 1).map_err(|e| e.to_string())?;
    let theta = out
        .report
        .checks
        .iter()
        .find(|c| c.property == "valid-Theta")
        .ok_or("no valid-Theta check")?;
    if theta.verdict != Verdict::Fail {
        return Err("forced id collision still validated Theta".into());
    }
    Ok(format!(
        "{successes}/1000 >= 667, observed rate {rate:.4}; forced collision fails valid-Theta"
    ))
}

fn determinism() -> Outcome {
    let scenarios = [
        adversarial("alg1", 4, 3, "N", ""),
        adversarial("alg2", 5, 2, "DiamondN", ""),
        adversarial("alg3", 5, 2, "Theta", ""),
        adversarial("alg4", 4, 1, "DiamondN", r#""max_rounds": 6,"#),
        adversarial("alg5", 4, 2, "N", r#""max_rounds": 6,"#),
        adversarial("n-to-theta", 5, 2, "N", r#""max_rounds": 6,"#),
        r#"{"algorithm": "theta-to-omega", "n": 4, "f": 1, "crash": "random", "max_rounds": 6}"#
            .to_string(),
    ];
    let mut traces = 0;
    for json in &scenarios {
        let sc = scenario(json);
        for seed in [0, 1, 17, 4242] {
            let a = harness::run_scenario(&sc, seed)
                .map_err(|e| e.to_string())?
                .trace
                .to_jsonl();
            let b = harness::run_scenario(&sc, seed)
                .map_err(|e| e.to_string())?
                .trace
                .to_jsonl();
            if a != b {
                return Err(format!("{} seed {seed} replayed differently", sc.algorithm));
            }
            traces += 1;
        }
    }
    Ok(format!("{traces} (scenario, seed) pairs byte-identical"))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, t: Instant, r: Outcome| {
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("[PASS] {id} {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {id} {name} ({secs:.1}s): {detail}");
            }
        }
    };
    let t = Instant::now();
    report(1, "exhaustive consensus", t, exhaustive_consensus());
    let t = Instant::now();
    let campaigns = run_campaigns();
    report(2, "statistical campaigns", t, statistical(&campaigns));
    let t = Instant::now();
    report(
        3,
        "lemma suite and mutation sensitivity",
        t,
        lemma_suite(&campaigns),
    );
    let t = Instant::now();
    report(4, "transformation validity", t, transformations());
    let t = Instant::now();
    report(5, "anonymity closure", t, anonymity());
    let t = Instant::now();
    report(6, "randomized reduction", t, randomized_reduction());
    let t = Instant::now();
    report(7, "determinism", t, determinism());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
