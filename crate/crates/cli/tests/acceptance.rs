//! Acceptance criteria, one PASS/FAIL line each. Criteria run one after
//! another so that the timed ones are not competing for cores.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};

use roundlab::baselines::{iterated_proposal, parse_protocol, zero_round_referee, ZeroRoundStrategy};
use roundlab::bounds::{canonical_n, compute_bounds, envelope, t_exact};
use roundlab::info::{check_inequalities, estimate_index_leakage, fact_names, FirstRoundInput, ProtocolFirstRound};
use roundlab::matching::{brute_force_max_matching, max_matching};
use roundlab::mu::{marginal_indistinguishability_test, verify_bundle, FoolingRule, IndistinguishabilityTest};
use roundlab::params::BlockCounts;
use roundlab::protocol::{evaluate, run_protocol, BitString, InstanceSampler, RandomGraphSampler};
use roundlab::rng::SeedPath;
use roundlab::{MuSampler, ParamsTable};

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, started: Instant) -> Result<Duration, String> {
    let took = started.elapsed();
    ensure(took < limit, || format!("took {took:.1?}, limit {limit:?}"))?;
    Ok(took)
}

fn gen(base: u64, levels: &[(u64, u64)]) -> ParamsTable {
    let lv: Vec<_> = levels.iter().map(|&(b, f)| BlockCounts::new(b, f)).collect();
    ParamsTable::generalized(base, &lv).unwrap()
}

fn small(x: &BigUint) -> usize {
    x.to_usize().unwrap()
}

/// Mixed desk-scale parameter sets, including `F = 0` and `B = 1` levels.
fn desk_mix() -> Vec<ParamsTable> {
    vec![
        gen(2, &[]),
        gen(3, &[(2, 2)]),
        gen(3, &[(2, 0)]),
        gen(3, &[(1, 2)]),
        gen(1, &[(1, 0)]),
        gen(2, &[(2, 1), (2, 1)]),
        gen(2, &[(1, 1), (2, 0)]),
        gen(4, &[(4, 2)]),
        gen(2, &[(2, 2), (2, 2)]),
        gen(2, &[(1, 0), (1, 0), (1, 1)]),
    ]
}

fn perfect_matching_property() -> Verdict {
    let start = Instant::now();
    let mix = desk_mix();
    let mut count = 0;
    for (i, params) in mix.iter().enumerate() {
        let sampler = MuSampler::new(params.clone()).unwrap();
        for s in 0..100u64 {
            let b = sampler.sample(SeedPath::root(1).child("bundle", (i as u64) << 32 | s).to_u64());
            let report = verify_bundle(&b);
            ensure(report.is_pass(), || format!("params #{i} seed {s}: {report}"))?;
            ensure(max_matching(&b.graph).len() == b.graph.num_bidders(), || {
                format!("params #{i} seed {s}: no perfect matching")
            })?;
            count += 1;
        }
    }
    let took = within(Duration::from_secs(60), start)?;
    Ok(format!(
        "{count} bundles over {} parameter sets in {took:.1?}",
        mix.len()
    ))
}

fn parameter_recurrences() -> Verdict {
    let mut checked = 0;
    for l in 2..=8u64 {
        let p = ParamsTable::canonical(l, 3).map_err(|e| e.to_string())?;
        let lb = BigUint::from(l);
        let (mut m, mut d) = (lb.pow(5), BigUint::one());
        for k in 0..=3usize {
            // n_k = l^(5^(k+1)) by repeated multiplication
            let mut n = BigUint::one();
            for _ in 0..5u32.pow(k as u32 + 1) {
                n *= &lb;
            }
            let s = &p.sizes[k];
            ensure(s.n == n, || format!("l={l} k={k}: n mismatch"))?;
            ensure(s.m == m, || format!("l={l} k={k}: m mismatch"))?;
            ensure(s.d == d, || format!("l={l} k={k}: d mismatch"))?;
            ensure(s.m <= &n * &n, || format!("l={l} k={k}: m > n^2"))?;
            if k < 3 {
                let (b, f) = (n.pow(4), &lb * n.pow(2));
                m *= &b + &f;
                d *= &f + 1u32;
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} (l, k) pairs exact"))
}

fn degree_regularity() -> Verdict {
    let mut bundles = 0;
    for (i, params) in desk_mix().iter().enumerate() {
        for k in 0..params.levels.len() {
            let f = &params.levels[k].num_fooling_blocks;
            ensure(params.sizes[k + 1].d == &params.sizes[k].d * (f + 1u32), || {
                format!("params #{i}: d recurrence fails at level {k}")
            })?;
        }
        let d = small(&params.top().d);
        let sampler = MuSampler::new(params.clone()).unwrap();
        for s in 0..50u64 {
            let b = sampler.sample(SeedPath::root(2).child("degree", (i as u64) << 32 | s).to_u64());
            let bad = (0..b.graph.num_bidders()).find(|&u| b.graph.degree(u) != d);
            ensure(bad.is_none(), || {
                format!("params #{i} seed {s}: bidder {bad:?} degree != {d}")
            })?;
            bundles += 1;
        }
    }
    Ok(format!("{bundles} bundles regular; d recurrence exact"))
}

fn base_case_calibration() -> Verdict {
    let start = Instant::now();
    let sampler = MuSampler::new(ParamsTable::canonical(2, 0).unwrap()).unwrap();
    ensure(sampler.desk().n[0] == 32, || "m0 != 32".into())?;
    let p = zero_round_referee(ZeroRoundStrategy::Identity);
    let ev = evaluate(&p, &sampler, 100_000, 4, None).map_err(|e| e.to_string())?;
    let took = within(Duration::from_secs(30), start)?;
    let mean = ev.matched.mean;
    ensure((mean - 1.0).abs() <= 0.05, || format!("mean {mean}"))?;
    Ok(format!(
        "mean {mean:.4} ± {:.4} over 1e5 trials in {took:.1?}",
        ev.matched.stderr
    ))
}

fn bound_calculator() -> Verdict {
    let mut checked = 0;
    for l in 2..=16u64 {
        let lb = BigUint::from(l);
        for r in 0..=4usize {
            let t = t_exact(l, r);
            // t(r) − 1 = 5 n_r Σ_k l^(−5^(k+1)/2) = b √l with
            // b = 5 Σ_k l^(5^(r+1) − (5^(k+1) + 1)/2)
            let top = 5u32.pow(r as u32 + 1);
            let b: BigUint = (0..r)
                .map(|k| lb.pow(top - 5u32.pow(k as u32 + 1).div_ceil(2)))
                .sum::<BigUint>()
                * 5u32;
            ensure(t.rational.is_integer() && t.rational.to_integer() == 1.into(), || {
                format!("l={l} r={r}: rational part {}", t.rational)
            })?;
            ensure(t.coefficient.is_integer(), || {
                format!("l={l} r={r}: coefficient not integral")
            })?;
            let c = t.coefficient.to_integer().to_biguint().unwrap();
            // equal surds: c² · radicand = b² · l
            ensure(&c * &c * t.radicand == &b * &b * l, || {
                format!("l={l} r={r}: t mismatch")
            })?;
            if r == 0 {
                ensure(c == BigUint::ZERO, || format!("l={l}: t(0) != 1"))?;
            }

            // envelope 5 n_r / n_r^(1/5^(r+1)), via an exact integer root
            let n = ParamsTable::canonical(l, r).unwrap().top().n.clone();
            let root = n.nth_root(top);
            ensure(root.pow(top) == n && root == lb, || {
                format!("l={l} r={r}: root of n_r is not l")
            })?;
            let env = &n * 5u32 / &root;
            ensure(envelope(l, r) == env, || format!("l={l} r={r}: envelope mismatch"))?;

            let rep = compute_bounds(l, r).map_err(|e| e.to_string())?;
            ensure(rep.t_within_envelope && rep.n_root == l, || {
                format!("l={l} r={r}: report identities")
            })?;
            if let Some(e) = &rep.envelope.exact {
                ensure(*e == env.to_string(), || format!("l={l} r={r}: report envelope"))?;
            }
            if let Some(e) = &rep.t.coefficient.exact {
                ensure(*e == c.to_string(), || format!("l={l} r={r}: report t"))?;
            }
            ensure(canonical_n(l, r) == n, || format!("l={l} r={r}: n_r"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} (l, r) pairs exact; t(0) = 1"))
}

fn oracle_equivalence() -> Verdict {
    let mut total_edges = 0;
    for i in 0..500u64 {
        let h = SeedPath::root(6).child("shape", i).to_u64();
        let sampler = RandomGraphSampler {
            bidders: 1 + (h % 10) as usize,
            items: 1 + (h >> 8) as usize % 10,
            edge_prob: ((h >> 16) % 1000) as f64 / 1000.0,
        };
        let g = sampler.sample(h).graph;
        total_edges += g.num_edges();
        let fast = max_matching(&g);
        fast.check().map_err(|e| format!("graph {i}: {e}"))?;
        ensure(fast.pairs().iter().all(|&(u, v)| g.has_edge(u, v)), || {
            format!("graph {i}: illegal pair")
        })?;
        let slow = brute_force_max_matching(&g).map_err(|e| format!("graph {i}: {e:?}"))?;
        ensure(fast.len() == slow, || format!("graph {i}: {} vs {slow}", fast.len()))?;
    }
    Ok(format!("500 graphs ({total_edges} edges), zero mismatches"))
}

fn information_lab() -> Verdict {
    let start = Instant::now();
    let rep = check_inequalities(10_000, 7);
    let took = within(Duration::from_secs(120), start)?;
    let bad: Vec<_> = rep
        .violations()
        .map(|f| format!("{} ({:e})", f.name, f.worst_margin))
        .collect();
    ensure(bad.is_empty(), || format!("violated: {}", bad.join(", ")))?;
    ensure(rep.facts.len() == fact_names().count(), || "missing facts".into())?;
    Ok(format!("{} facts × 1e4 tables in {took:.1?}", rep.facts.len()))
}

fn marginal_indistinguishability() -> Verdict {
    let mu1 = gen(3, &[(2, 2)]);
    let t = IndistinguishabilityTest::new(0, 100_000, 0.01, 8);
    let honest = marginal_indistinguishability_test(&mu1, &t).map_err(|e| e.to_string())?;
    ensure(!honest.rejected, || {
        format!("marginal rule rejected: p = {}", honest.chi_square.p_value)
    })?;

    // At one composite level the child degree is 1 and a flat subset is the
    // same law, so the control runs one level up.
    let mu2 = gen(3, &[(2, 2), (2, 2)]);
    let mut c = IndistinguishabilityTest::new(0, 100_000, 0.01, 8);
    c.rule = FoolingRule::FlatSubset;
    let control = marginal_indistinguishability_test(&mu2, &c).map_err(|e| e.to_string())?;
    ensure(control.rejected, || {
        format!("flat control not rejected: p = {}", control.chi_square.p_value)
    })?;
    Ok(format!(
        "mu_1 p = {:.3} ({} used); flat control on mu_2 p = {:.1e}",
        honest.chi_square.p_value, honest.samples_used, control.chi_square.p_value
    ))
}

fn index_leakage() -> Verdict {
    const N: usize = 1_000_000;
    let params = gen(3, &[(2, 2)]);
    let mut lines = Vec::new();
    for id in ["zero_round", "one_shot:k=4", "iterated:r=3", "auction:cap=64"] {
        let p = parse_protocol(id).unwrap();
        let e = estimate_index_leakage(&params, &ProtocolFirstRound(p.as_ref()), N, 9).map_err(|e| e.to_string())?;
        ensure(e.pass && e.estimate < e.bias_threshold, || {
            format!("{id}: {:.2e} ≥ threshold {:.2e}", e.estimate, e.bias_threshold)
        })?;
        lines.push(format!("{id} {:.1e}/{:.1e}", e.estimate, e.bias_threshold));
    }
    let cheat = |x: &FirstRoundInput<'_>| {
        let mut b = BitString::new();
        b.push_uint(x.hidden_rank as u64, 2);
        b
    };
    let e = estimate_index_leakage(&params, &cheat, N, 9).map_err(|e| e.to_string())?;
    ensure(e.estimate > 10.0 * e.bias_threshold, || {
        format!("cheater {:.2e} not above 10 × {:.2e}", e.estimate, e.bias_threshold)
    })?;
    lines.push(format!("cheater {:.3} ≫ {:.1e}", e.estimate, e.bias_threshold));
    Ok(lines.join("; "))
}

fn round_monotonicity() -> Verdict {
    let sweep = [
        gen(4, &[(4, 2)]),
        gen(3, &[(2, 2)]),
        gen(5, &[(3, 3)]),
        gen(2, &[(4, 1)]),
        gen(3, &[(3, 0)]),
    ];
    let mut summary = Vec::new();
    for (i, params) in sweep.iter().enumerate() {
        let sampler = MuSampler::new(params.clone()).unwrap();
        let means: Vec<f64> = (1..=6)
            .map(|r| evaluate(&iterated_proposal(r), &sampler, 2000, 10, None).map(|e| e.matched.mean))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        ensure(means.windows(2).all(|w| w[1] >= w[0]), || {
            format!("params #{i}: {means:?}")
        })?;
        summary.push(format!("{:.2}→{:.2}", means[0], means[5]));
    }

    let mut instances = 0;
    for i in 0..500u64 {
        let seed = SeedPath::root(10).child("converge", i).to_u64();
        let g = if i % 2 == 0 {
            MuSampler::new(sweep[(i / 2) as usize % sweep.len()].clone())
                .unwrap()
                .sample(seed)
                .graph
        } else {
            RandomGraphSampler {
                bidders: 12,
                items: 12,
                edge_prob: 0.25,
            }
            .sample(seed)
            .graph
        };
        let p = iterated_proposal(g.num_bidders() + 1);
        let out = run_protocol(&p, &g, None, seed).map_err(|e| e.to_string())?;
        let max = max_matching(&g).len();
        let got = out.stats.score.matched_in_graph;
        ensure(2 * got >= max, || format!("instance {i}: {got} < {max}/2"))?;
        instances += 1;
    }
    Ok(format!(
        "means r=1→6 {}; {instances} converged runs ≥ max/2",
        summary.join(", ")
    ))
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_roundlab"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr))
    })
}

fn determinism() -> Verdict {
    let cfg = r#"{
        "distribution": {"kind": "generalized", "base": 3, "levels": [{"bidder_blocks": 2, "fooling_blocks": 2}]},
        "protocols": ["iterated:r=1", "auction:cap=8"],
        "rounds": [1, 2, 4],
        "bandwidth_caps": [null, 64],
        "trials": 300,
        "seed": 12
    }"#;
    let commands: &[&[&str]] = &[
        &["gen", "--canonical", "l=2", "r=0", "--out", "c.json"],
        &["gen", "--generalized", "base=3", "levels=2x2,2x1", "--out", "g.bin"],
        &["run", "--config", "cfg.json", "--out", "res.csv"],
        &["run", "--config", "cfg.json", "--out", "res.json"],
        &["bounds", "--l", "3", "--r", "2", "--up-to", "--out", "b.json"],
        &[
            "info-check",
            "--trials",
            "300",
            "--leakage",
            "one_shot:k=2",
            "--samples",
            "3000",
            "--generalized",
            "base=3",
            "levels=2x2",
            "--out",
            "i.json",
        ],
        &[
            "report",
            "--results",
            "res.csv",
            "--bounds",
            "b.json",
            "--out",
            "rep.txt",
        ],
    ];
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for (k, dir) in runs.iter().enumerate() {
        fs::write(dir.path().join("cfg.json"), cfg).unwrap();
        for cmd in commands {
            let mut args = vec!["--seed", "12"];
            if k == 1 {
                args.extend(["--threads", "1"]);
            }
            args.extend_from_slice(cmd);
            run_cli(dir.path(), &args)?;
        }
    }
    let mut names: Vec<_> = fs::read_dir(runs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    for n in &names {
        let a = fs::read(runs[0].path().join(n)).unwrap();
        let b = fs::read(runs[1].path().join(n)).map_err(|e| format!("{n}: {e}"))?;
        ensure(a == b, || format!("{n} differs"))?;
    }
    Ok(format!(
        "{} files byte-identical across reruns (second rerun single-threaded)",
        names.len()
    ))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Verdict);
    let criteria: &[Criterion] = &[
        ("perfect-matching property", perfect_matching_property),
        ("parameter recurrences", parameter_recurrences),
        ("degree regularity", degree_regularity),
        ("base-case calibration", base_case_calibration),
        ("bound calculator", bound_calculator),
        ("oracle equivalence", oracle_equivalence),
        ("information-lab suite", information_lab),
        ("marginal indistinguishability", marginal_indistinguishability),
        ("index leakage", index_leakage),
        ("round monotonicity", round_monotonicity),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|e| Err(e.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        match verdict {
            Ok(detail) => println!("PASS {name}: {detail} [{:.1?}]", start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{:.1?}]", start.elapsed());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
