//! Hyperparameter sweep: enumerate cells, run them over seeds, keep the best
//! cell per method.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use murag::dp_rag::DpRagParams;
use murag::epsilon::EpsilonAmount;
use murag::orchestrators::{amplified_eps_per_query, Method, MethodConfig, MuragAdaConfig, MuragConfig};

use crate::{
    build_generator, check_claim, load_dataset, root_noise, write_csv, write_json, CliError, Dataset,
    ExperimentConfig, Generator, Result, RunOptions, SummaryRow, SweepConfig,
};

/// One point of the grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub label: String,
    pub config: MethodConfig,
}

/// One line of `sweep.csv`: a cell on one seed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: String,
    pub cell: String,
    pub seed: u64,
    pub eps_claim: Option<f64>,
    pub match_accuracy: f64,
    pub retrieval_precision: Option<f64>,
    pub mean_tau_abs_error: Option<f64>,
}

/// One line of `best.csv`: the chosen cell of a method, averaged over the
/// evaluation seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BestRow {
    pub method: String,
    pub cell: String,
    pub seeds: usize,
    pub eps_claim: Option<f64>,
    pub mean_match_accuracy: f64,
    pub mean_retrieval_precision: Option<f64>,
    pub mean_tau_abs_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepOutcome {
    /// Every cell on the selection seeds.
    pub rows: Vec<SweepRow>,
    pub best: Vec<BestRow>,
    /// The chosen cells on the evaluation seeds.
    pub summary: Vec<SummaryRow>,
    pub selected: Vec<Cell>,
}

fn micros_floor(eps: f64) -> Result<EpsilonAmount> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(CliError::Config(format!("per-query epsilon {eps} is not positive")));
    }
    Ok(EpsilonAmount::from_micros((eps * 1e6).floor() as u64))
}

fn even(e: EpsilonAmount) -> EpsilonAmount {
    EpsilonAmount::from_micros(e.micros() & !1)
}

/// Grid values of the per-token ε that fit under `eps_q`. When none fit,
/// `eps_q` itself (rounded down to an even micro count) is the only choice.
fn tokens_under(grid: &[f64], eps_q: EpsilonAmount) -> Result<Vec<EpsilonAmount>> {
    let mut out = Vec::new();
    for &t in grid {
        let t = EpsilonAmount::positive(t).map_err(CliError::config)?;
        if t <= eps_q && t.exact_half().is_some() {
            out.push(t);
        }
    }
    if out.is_empty() && even(eps_q).micros() > 0 {
        out.push(even(eps_q));
    }
    Ok(out)
}

fn fmt_eps(e: EpsilonAmount) -> String {
    format!("{}", e.as_f64())
}

/// Enumerates the grid for a stream of `num_queries` queries.
///
/// Filter methods split `eps_total` evenly over the `max_retrievals` uses of a
/// document; the adaptive variant spends `eps_thr` of each share on the
/// threshold. Composition methods split it over the queries.
pub fn sweep_cells(s: &SweepConfig, num_queries: usize) -> Result<Vec<Cell>> {
    let theta = s.vote_threshold_fraction * s.num_voters as f64;
    let dp = |dpv: usize, tok: EpsilonAmount, total: EpsilonAmount| DpRagParams {
        eps_total: total,
        eps_token: tok,
        max_tokens: s.max_tokens,
        num_voters: s.num_voters,
        docs_per_voter: dpv,
        vote_threshold: theta,
    };
    let eps_thr = EpsilonAmount::positive(s.eps_thr).map_err(CliError::config)?;
    let mut cells = Vec::new();
    for &method in &s.methods {
        match method {
            Method::Murag | Method::MuragAda => {
                for &m in &s.max_retrievals {
                    let eps_q = micros_floor(s.eps_total / f64::from(m))?;
                    let eps_rag = match method {
                        Method::Murag => eps_q,
                        _ => match eps_q.checked_sub(eps_thr).filter(|e| !e.is_zero()) {
                            Some(e) => e,
                            None => continue,
                        },
                    };
                    for &dpv in &s.docs_per_voter {
                        let k = s.num_voters * dpv;
                        for &tok in &s.eps_token {
                            let tok = EpsilonAmount::positive(tok).map_err(CliError::config)?;
                            if tok > eps_rag || tok.exact_half().is_none() {
                                continue;
                            }
                            if method == Method::MuragAda {
                                cells.push(Cell {
                                    label: format!("k={k} tok={} M={m}", fmt_eps(tok)),
                                    config: MethodConfig::MuragAda(MuragAdaConfig {
                                        bins: s.bins,
                                        k,
                                        max_retrievals: m,
                                        eps_thr,
                                        eps_rag,
                                        dp_rag: dp(dpv, tok, eps_rag),
                                        reuse_history: false,
                                    }),
                                });
                                continue;
                            }
                            for &tau in &s.tau {
                                cells.push(Cell {
                                    label: format!("k={k} tok={} M={m} tau={tau}", fmt_eps(tok)),
                                    config: MethodConfig::Murag(MuragConfig {
                                        tau,
                                        k,
                                        max_retrievals: m,
                                        eps_q,
                                        dp_rag: dp(dpv, tok, eps_q),
                                        bins: s.bins,
                                        reuse_history: false,
                                    }),
                                });
                            }
                        }
                    }
                }
            }
            Method::Naive => {
                let eps_q = micros_floor(s.eps_total / num_queries.max(1) as f64)?;
                for &dpv in &s.docs_per_voter {
                    for tok in tokens_under(&s.eps_token, eps_q)? {
                        cells.push(Cell {
                            label: format!("k={} tok={}", s.num_voters * dpv, fmt_eps(tok)),
                            config: MethodConfig::Naive { eps_q, dp_rag: dp(dpv, tok, eps_q), bins: s.bins },
                        });
                    }
                }
            }
            Method::Subsample => {
                for &gamma in &s.gamma {
                    let eps_q = micros_floor(
                        amplified_eps_per_query(s.eps_total, num_queries, gamma).map_err(CliError::config)?,
                    )?;
                    for &dpv in &s.docs_per_voter {
                        for tok in tokens_under(&s.eps_token, eps_q)? {
                            cells.push(Cell {
                                label: format!("k={} tok={} gamma={gamma}", s.num_voters * dpv, fmt_eps(tok)),
                                config: MethodConfig::Subsample {
                                    gamma,
                                    eps_q,
                                    dp_rag: dp(dpv, tok, eps_q),
                                    bins: s.bins,
                                },
                            });
                        }
                    }
                }
            }
            Method::NonprivateRag => {
                for &dpv in &s.docs_per_voter {
                    let k = s.num_voters * dpv;
                    cells.push(Cell {
                        label: format!("k={k}"),
                        config: MethodConfig::NonprivateRag { k, max_tokens: s.max_tokens, bins: s.bins },
                    });
                }
            }
            Method::NonRag => cells.push(Cell {
                label: "-".into(),
                config: MethodConfig::NonRag { max_tokens: s.max_tokens },
            }),
        }
    }
    for c in &cells {
        c.config.validate().map_err(|e| CliError::Config(format!("{} {}: {e}", c.config.method().name(), c.label)))?;
    }
    Ok(cells)
}

struct SeedData {
    seed: u64,
    data: Dataset,
    gen: Generator,
}

fn run_grid(cells: &[Cell], seeds: &[SeedData], noiseless: bool) -> Result<Vec<SweepRow>> {
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..seeds.len()).map(move |s| (c, s))).collect();
    jobs.par_iter()
        .map(|&(c, s)| {
            let cell = &cells[c];
            let sd = &seeds[s];
            let report = cell.config.run(&sd.data.queries, &sd.data.corpus, &sd.gen, &mut root_noise(sd.seed, noiseless))?;
            check_claim(&cell.config, &report)?;
            let row = SummaryRow::from_report(&report, sd.seed);
            Ok(SweepRow {
                method: row.method,
                cell: cell.label.clone(),
                seed: sd.seed,
                eps_claim: row.eps_claim,
                match_accuracy: row.match_accuracy,
                retrieval_precision: row.retrieval_precision,
                mean_tau_abs_error: row.mean_tau_abs_error,
            })
        })
        .collect()
}

fn mean_some(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn best_row(method: &str, cell: &str, rows: &[&SweepRow]) -> BestRow {
    BestRow {
        method: method.to_string(),
        cell: cell.to_string(),
        seeds: rows.len(),
        eps_claim: rows.first().and_then(|r| r.eps_claim),
        mean_match_accuracy: rows.iter().map(|r| r.match_accuracy).sum::<f64>() / rows.len().max(1) as f64,
        mean_retrieval_precision: mean_some(rows.iter().map(|r| r.retrieval_precision)),
        mean_tau_abs_error: mean_some(rows.iter().map(|r| r.mean_tau_abs_error)),
    }
}

fn load_seeds(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<SeedData>> {
    seeds
        .par_iter()
        .map(|&seed| {
            Ok(SeedData { seed, data: load_dataset(cfg, seed)?, gen: build_generator(&cfg.generator, seed)? })
        })
        .collect()
}

/// `sweep`: writes `sweep.csv`, `best.csv`, `summary.csv` and `selected.json`.
pub fn run_sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SweepOutcome> {
    let s = cfg.sweep.as_ref().ok_or_else(|| CliError::Config("`sweep` needs a `sweep` section".into()))?;
    cfg.validate()?;
    std::fs::create_dir_all(&opts.out_dir)?;

    let separate = !s.tuning_seeds.is_empty();
    let select_seeds = if separate { &s.tuning_seeds } else { &s.seeds };
    let select_data = load_seeds(cfg, select_seeds)?;
    let num_queries = select_data[0].data.queries.len();
    let cells = sweep_cells(s, num_queries)?;
    let rows = run_grid(&cells, &select_data, opts.noiseless)?;
    drop(select_data);

    // per method, highest mean accuracy; ties keep the earlier cell
    let mut chosen: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    let per_cell = select_seeds.len();
    for (c, cell) in cells.iter().enumerate() {
        let acc = rows[c * per_cell..(c + 1) * per_cell].iter().map(|r| r.match_accuracy).sum::<f64>();
        let key = s.methods.iter().position(|&m| m == cell.config.method()).unwrap_or(usize::MAX);
        match chosen.get(&key) {
            Some(&(_, best)) if best >= acc => {}
            _ => {
                chosen.insert(key, (c, acc));
            }
        }
    }
    let selected: Vec<Cell> = chosen.values().map(|&(c, _)| cells[c].clone()).collect();

    let eval_rows = if separate {
        let eval_data = load_seeds(cfg, &s.seeds)?;
        run_grid(&selected, &eval_data, opts.noiseless)?
    } else {
        chosen
            .values()
            .flat_map(|&(c, _)| rows[c * per_cell..(c + 1) * per_cell].iter().cloned())
            .collect()
    };
    let n = s.seeds.len();
    let best: Vec<BestRow> = selected
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let rs: Vec<&SweepRow> = eval_rows[i * n..(i + 1) * n].iter().collect();
            best_row(cell.config.method().name(), &cell.label, &rs)
        })
        .collect();
    let summary: Vec<SummaryRow> = eval_rows
        .iter()
        .map(|r| SummaryRow {
            method: r.method.clone(),
            seed: r.seed,
            eps_claim: r.eps_claim,
            match_accuracy: r.match_accuracy,
            retrieval_precision: r.retrieval_precision,
            mean_tau_abs_error: r.mean_tau_abs_error,
        })
        .collect();

    write_csv(&opts.out_dir.join("sweep.csv"), &rows)?;
    write_csv(&opts.out_dir.join("best.csv"), &best)?;
    write_csv(&opts.out_dir.join("summary.csv"), &summary)?;
    write_json(&opts.out_dir.join("selected.json"), &selected)?;
    Ok(SweepOutcome { rows, best, summary, selected })
}
