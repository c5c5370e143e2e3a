// Acceptance run: one PASS/FAIL line per criterion.
//
// Set ACCEPTANCE_STRICT=1 to turn any FAIL into a non-zero exit.

#[path = "../../core/tests/common/oracles.rs"]
mod oracles;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use murag::corpus::Document;
use murag::dp_rag::{dp_rag_answer, DpRagParams};
use murag::epsilon::EpsilonAmount;
use murag::generator::StubGenerator;
use murag::mechanisms::{exponential_mechanism, exponential_probabilities, Histogram};
use murag::noise::NoiseSource;
use murag::orchestrators::{amplified_eps_per_query, MethodConfig, MuragAdaConfig, MuragConfig, RunReport};
use murag::workload::{generate_synthetic_workload, WorkloadMode, WorkloadSpec};
use murag_cli::{
    run_attacks, run_experiment, run_sweep, run_tau_study, BestRow, ExperimentConfig, RunOptions,
};

type Check = Result<(bool, String), String>;

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn opts(dir: &Path) -> RunOptions {
    RunOptions { out_dir: dir.to_path_buf(), noiseless: false }
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

fn eps(x: f64) -> EpsilonAmount {
    EpsilonAmount::from_eps(x).unwrap()
}

fn dp(total: f64, tok: f64, dpv: usize) -> DpRagParams {
    DpRagParams {
        eps_total: eps(total),
        eps_token: eps(tok),
        max_tokens: 3,
        num_voters: 10,
        docs_per_voter: dpv,
        vote_threshold: 5.0,
    }
}

fn amplification() -> Check {
    let start = Instant::now();
    let v = amplified_eps_per_query(10.0, 100, 0.1).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let ok = (v - 0.7187).abs() <= 1e-3 && took < Duration::from_millis(1);
    Ok((ok, format!("eps_q = {v:.6} (target 0.7187 ± 0.001), computed in {took:?}")))
}

/// Replays a charge log against fresh budgets of M·ε_q.
fn replay(report: &RunReport, doc_ids: &[String], cap: EpsilonAmount) -> Result<usize, String> {
    let mut left: HashMap<&str, u64> = doc_ids.iter().map(|d| (d.as_str(), cap.micros())).collect();
    for c in &report.charge_log {
        let bal = left.get_mut(c.doc_id.as_str()).ok_or_else(|| format!("charge to unknown doc {}", c.doc_id))?;
        *bal = bal
            .checked_sub(c.micro_eps)
            .ok_or_else(|| format!("{} overdrawn: {} µε left, charged {}", c.doc_id, bal, c.micro_eps))?;
    }
    Ok(report.charge_log.len())
}

fn filter_soundness() -> Check {
    let mut spec = WorkloadSpec::new(500, 32, 50, WorkloadMode::Correlated, 20);
    spec.group_size = 5;
    let murag = MethodConfig::Murag(MuragConfig {
        tau: 85.0,
        k: 30,
        max_retrievals: 2,
        eps_q: eps(5.0),
        dp_rag: dp(5.0, 2.0, 3),
        bins: Default::default(),
        reuse_history: false,
    });
    let ada = MethodConfig::MuragAda(MuragAdaConfig {
        bins: Default::default(),
        k: 30,
        max_retrievals: 2,
        eps_thr: eps(1.0),
        eps_rag: eps(4.0),
        dp_rag: dp(4.0, 2.0, 3),
        reuse_history: false,
    });
    let cap = eps(10.0);
    let mut charges = 0;
    let mut exhausted = 0;
    for seed in 0..100 {
        let w = generate_synthetic_workload(&spec.clone().with_seed(seed)).map_err(|e| e.to_string())?;
        let ids: Vec<String> = w.corpus.docs().iter().map(|d| d.id.clone()).collect();
        let gen = StubGenerator::new(32, 0.3, seed).map_err(|e| e.to_string())?;
        for m in [&murag, &ada] {
            let report = m.run(&w.queries, &w.corpus, &gen, &mut NoiseSource::new(seed)).map_err(|e| e.to_string())?;
            charges += replay(&report, &ids, cap)?;
            exhausted += report.charged_per_document().values().filter(|&&c| c == cap.micros()).count();
        }
    }
    Ok((
        true,
        format!("200 runs, {charges} charges replayed, no overdraft; {exhausted} documents spent exactly M·eps_q"),
    ))
}

fn exponential_mechanism_check() -> Check {
    let counts = [3u64, 1, 0, 0];
    let hist = Histogram::from_counts(counts.to_vec()).map_err(|e| e.to_string())?;
    let expected = oracles::em_closed_form(&counts, 2.0);
    let mut noise = NoiseSource::new(2024);
    let n = 100_000;
    let mut freq = [0usize; 4];
    for _ in 0..n {
        freq[exponential_mechanism(&hist, eps(2.0), 1.0, &mut noise).map_err(|e| e.to_string())? as usize] += 1;
    }
    let tv: f64 = freq.iter().zip(&expected).map(|(&f, p)| (f as f64 / n as f64 - p).abs()).sum::<f64>() / 2.0;

    // every histogram over 4 tokens with at most 8 votes, every neighbour
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    let mut hists: Vec<Vec<u64>> = Vec::new();
    for a in 0..=8u64 {
        for b in 0..=8 - a {
            for c in 0..=8 - a - b {
                for d in 0..=8 - a - b - c {
                    hists.push(vec![a, b, c, d]);
                }
            }
        }
    }
    let probs = |h: &[u64]| exponential_probabilities(&Histogram::from_counts(h.to_vec()).unwrap(), eps(2.0), 1.0).unwrap();
    for h in &hists {
        let p = probs(h);
        for i in 0..4 {
            for j in 0..4 {
                if h[i] == 0 {
                    continue;
                }
                let mut n = h.clone();
                n[i] -= 1;
                if i != j {
                    n[j] += 1;
                }
                let q = probs(&n);
                for t in 0..4 {
                    worst = worst.max((p[t] / q[t]).ln()).max((q[t] / p[t]).ln());
                }
                pairs += 1;
            }
        }
    }
    let ok = tv <= 0.01 && worst <= 2.0 + 1e-9;
    Ok((
        ok,
        format!(
            "TV {tv:.4} vs closed form [{:.4}, {:.4}, {:.4}, {:.4}]; max log-ratio {worst:.4} ≤ 2 over {pairs} neighbour pairs",
            expected[0], expected[1], expected[2], expected[3]
        ),
    ))
}

fn dp_rag_oracle() -> Check {
    let mut instances = 0;
    for m in 1..=4 {
        for vocab in 2..=5 {
            for t_max in 1..=3 {
                for budget in [1, t_max as u64] {
                    instances += oracles::check_dp_rag_exhaustive(m, vocab, t_max, budget, m as f64 / 2.0);
                }
            }
        }
    }

    let m = 4;
    let docs = oracles::voter_docs(m);
    let refs: Vec<&Document> = docs.iter().collect();
    let mut pick = NoiseSource::new(77);
    let mut draw = |n: usize| ((pick.uniform() * n as f64) as usize).min(n - 1);
    let mut noise = NoiseSource::new(78);
    let mut worst = 0;
    for _ in 0..10_000 {
        let vocab = 2 + draw(4);
        let t_max = 1 + draw(8);
        let tok = 1 + draw(3) as u64;
        let total = tok * (1 + draw(4) as u64) + draw(2) as u64;
        let steps: Vec<oracles::Step> = (0..t_max)
            .map(|_| oracles::Step { baseline: draw(vocab) as u32, votes: (0..m).map(|_| draw(vocab) as u32).collect() })
            .collect();
        let params = DpRagParams {
            eps_total: EpsilonAmount::from_micros(1_000_000 * total),
            eps_token: EpsilonAmount::from_micros(1_000_000 * tok),
            max_tokens: t_max,
            num_voters: m,
            docs_per_voter: 1,
            vote_threshold: draw(m + 1) as f64,
        };
        let out = dp_rag_answer(&oracles::blank_query(), &refs, &oracles::Scripted { steps, vocab }, &params, &mut noise)
            .map_err(|e| e.to_string())?;
        if out.discoveries > total / tok {
            return Ok((false, format!("{} discoveries with budget {}", out.discoveries, total / tok)));
        }
        worst = worst.max(out.discoveries);
    }
    Ok((
        true,
        format!("{instances} exhaustive noiseless instances match the oracle; 10^4 noisy runs within budget (max {worst} discoveries)"),
    ))
}

fn tau_accuracy() -> Check {
    let start = Instant::now();
    let mut cfg = config("tau-study.json");
    cfg.tau_study.as_mut().unwrap().eps_thr = vec![1.0];
    let noisy = run_tau_study(&cfg, &opts(tmp().path())).map_err(|e| e.to_string())?;
    let exact = run_tau_study(&cfg, &RunOptions { out_dir: tmp().path().to_path_buf(), noiseless: true })
        .map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let (n, z) = (&noisy[0], &exact[0]);
    let ok = n.mean_abs_error <= 0.4 && z.max_abs_error <= 0.2 + 1e-9 && took < Duration::from_secs(30);
    Ok((
        ok,
        format!(
            "eps_thr=1: mean |err| {:.3} ≤ 0.4 over {} queries; noiseless max |err| {:.3} ≤ 0.2; {:.1}s",
            n.mean_abs_error,
            n.queries,
            z.max_abs_error,
            took.as_secs_f64()
        ),
    ))
}

fn best<'a>(rows: &'a [BestRow], method: &str) -> &'a BestRow {
    rows.iter().find(|r| r.method == method).unwrap_or_else(|| panic!("no best row for {method}"))
}

fn utility_ordering() -> Check {
    let start = Instant::now();
    let ind = run_sweep(&config("sweep-independent.json"), &opts(tmp().path())).map_err(|e| e.to_string())?.best;
    let cor = run_sweep(&config("sweep-correlated.json"), &opts(tmp().path())).map_err(|e| e.to_string())?.best;
    let took = start.elapsed();
    let acc = |rows: &[BestRow], m: &str| 100.0 * best(rows, m).mean_match_accuracy;
    let prec = |m: &str| best(&ind, m).mean_retrieval_precision.unwrap_or(0.0);
    let checks = [
        ("indep nonprivate ≥ murag", acc(&ind, "nonprivate-rag"), acc(&ind, "murag")),
        ("indep murag > non-rag", acc(&ind, "murag"), acc(&ind, "non-rag")),
        ("indep murag ≥ murag-ada", acc(&ind, "murag"), acc(&ind, "murag-ada")),
        ("corr murag-ada > murag", acc(&cor, "murag-ada"), acc(&cor, "murag")),
        ("indep precision ada > const", prec("murag-ada"), prec("murag")),
    ];
    let mut ok = took < Duration::from_secs(600);
    let mut parts = Vec::new();
    for (name, a, b) in checks {
        let pass = a - b >= 3.0;
        ok &= pass;
        parts.push(format!("{name}: {a:.1} vs {b:.1} ({}{:+.1})", if pass { "" } else { "SHORT " }, a - b));
    }
    parts.push(format!("{:.0}s", took.as_secs_f64()));
    Ok((ok, parts.join("; ")))
}

fn composition_claims() -> Check {
    let dir = tmp();
    let (_, naive) = run_experiment(&config("run-naive.json"), &opts(dir.path())).map_err(|e| e.to_string())?;
    let sub_cfg = config("run-subsample.json");
    let (_, sub) = run_experiment(&sub_cfg, &opts(tmp().path())).map_err(|e| e.to_string())?;
    let (gamma, eps_q) = match &sub_cfg.method {
        Some(MethodConfig::Subsample { gamma, eps_q, .. }) => (*gamma, eps_q.as_f64()),
        _ => return Err("run-subsample.json is not a subsample config".into()),
    };
    let t = sub_cfg.workload.as_ref().unwrap().num_queries as f64;
    let formula = t * (1.0 + gamma * (eps_q.exp() - 1.0)).ln();
    let mut mcfg = config("run-murag.json");
    if let Some(MethodConfig::Murag(m)) = &mut mcfg.method {
        m.max_retrievals = 5;
        m.eps_q = eps(2.0);
        m.dp_rag = dp(2.0, 2.0, 5);
    }
    let (_, murag) = run_experiment(&mcfg, &opts(tmp().path())).map_err(|e| e.to_string())?;
    let (n, s, m) = (naive.eps_claim.unwrap_or(f64::NAN), sub.eps_claim.unwrap_or(f64::NAN), murag.eps_claim.unwrap_or(f64::NAN));
    let ok = n == 1000.0 && (s - formula).abs() <= 1e-12 * formula && m == 10.0;
    Ok((ok, format!("naive {n}; subsample {s:.12} vs formula {formula:.12}; murag M=5 eps_q=2 → {m}")))
}

fn attack_mitigation() -> Check {
    let start = Instant::now();
    let out = run_attacks(&config("attack.json"), &opts(tmp().path())).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let auc = |m: &str| out.summary.iter().find(|s| s.method == m).map(|s| s.mean_auc).unwrap_or(f64::NAN);
    let (np, mu, ad) = (auc("nonprivate-rag"), auc("murag"), auc("murag-ada"));
    let band = |x: f64| (0.45..=0.60).contains(&x);
    let ok = np >= 0.9 && band(mu) && band(ad) && took < Duration::from_secs(600);
    Ok((
        ok,
        format!("mean AUC over 20 seeds: non-private {np:.3}, murag {mu:.3}, murag-ada {ad:.3}; {:.0}s", took.as_secs_f64()),
    ))
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn same_outputs(a: &Path, b: &Path) -> Result<usize, String> {
    let (fa, fb) = (files(a), files(b));
    let names = |v: &[PathBuf]| v.iter().map(|p| p.file_name().unwrap().to_owned()).collect::<Vec<_>>();
    if names(&fa) != names(&fb) {
        return Err(format!("different file sets in {} and {}", a.display(), b.display()));
    }
    for (x, y) in fa.iter().zip(&fb) {
        if std::fs::read(x).unwrap() != std::fs::read(y).unwrap() {
            return Err(format!("{} differs between runs", x.file_name().unwrap().to_string_lossy()));
        }
    }
    Ok(fa.len())
}

fn determinism() -> Check {
    let mut attack = config("attack.json");
    attack.attack.as_mut().unwrap().seeds = vec![3, 4];
    let mut sweep = config("sweep-independent.json");
    {
        let s = sweep.sweep.as_mut().unwrap();
        s.tuning_seeds = vec![0];
        s.seeds = vec![1, 2];
        s.tau = vec![90.0, 95.0];
    }
    type Job = Box<dyn Fn(&Path) -> Result<(), String>>;
    let jobs: Vec<(&str, Job)> = vec![
        ("run", Box::new(|d| run_experiment(&config("run-murag.json"), &opts(d)).map(|_| ()).map_err(|e| e.to_string()))),
        ("sweep", Box::new(move |d| run_sweep(&sweep, &opts(d)).map(|_| ()).map_err(|e| e.to_string()))),
        ("attack", Box::new(move |d| run_attacks(&attack, &opts(d)).map(|_| ()).map_err(|e| e.to_string()))),
        ("tau-study", Box::new(|d| run_tau_study(&config("tau-study.json"), &opts(d)).map(|_| ()).map_err(|e| e.to_string()))),
    ];
    let mut compared = 0;
    for (name, job) in &jobs {
        let (a, b) = (tmp(), tmp());
        job(a.path())?;
        job(b.path())?;
        compared += same_outputs(a.path(), b.path()).map_err(|e| format!("{name}: {e}"))?;
    }
    Ok((true, format!("{compared} output files byte-identical across repeated run/sweep/attack/tau-study")))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("amplification formula", amplification),
        ("filter soundness", filter_soundness),
        ("exponential mechanism", exponential_mechanism_check),
        ("DP-RAG oracle equivalence", dp_rag_oracle),
        ("adaptive threshold accuracy", tau_accuracy),
        ("utility ordering", utility_ordering),
        ("composition claims", composition_claims),
        ("attack mitigation", attack_mitigation),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        failed += usize::from(!pass);
        println!(
            "{} {}. {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
