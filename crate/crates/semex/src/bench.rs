use std::io::Write;

use semex_core::ledger::{Cluster, SimTime, Transaction, TxId, TxKind};
use semex_core::market::{self, MarketError, SolverConfig};
use semex_core::nft::AccountId;
use serde::Serialize;

use crate::config::{ScenarioConfig, Tier};
use crate::{domain, AppError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadRow {
    pub experiment: String,
    pub mechanism: String,
    pub msg_index: u32,
    pub payload_bytes: u64,
    pub overhead_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RevenueRow {
    pub experiment: String,
    pub cost_scale: f64,
    pub iteration: u32,
    pub price: f64,
    pub revenue: f64,
}

/// Equilibrium per cost scale; `None` where the market is inactive.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RevenueSummary {
    pub cost_scale: f64,
    pub final_revenue: Option<f64>,
    pub final_price: Option<f64>,
}

fn run_tier(cfg: &ScenarioConfig, tier: &Tier, n_messages: u32) -> Result<Vec<OverheadRow>, AppError> {
    let mut cluster = Cluster::new(cfg.cluster_config()).map_err(domain)?;
    let sender = AccountId::producer("bench");
    for i in 0..n_messages {
        let at = SimTime::from_ms(f64::from(i) * cfg.bench.submit_interval_ms);
        let tx = Transaction::new(TxId(u64::from(i)), TxKind::Custom, vec![0u8; tier.size_bytes as usize], sender.clone());
        cluster.submit(tx.at(at)).map_err(domain)?;
    }
    cluster.run_until_quiescent().map_err(domain)?;
    (0..n_messages)
        .map(|i| {
            Ok(OverheadRow {
                experiment: "overhead".into(),
                mechanism: tier.label.clone(),
                msg_index: i,
                payload_bytes: tier.size_bytes,
                overhead_ms: cluster.commit_time(TxId(u64::from(i))).map_err(domain)?,
            })
        })
        .collect()
}

/// Sends `n_messages` payloads of each tier's size through a fresh cluster
/// per tier. Tiers run on their own threads; rows come back in tier order.
pub fn bench_overhead(cfg: &ScenarioConfig, n_messages: u32) -> Result<Vec<OverheadRow>, AppError> {
    let per_tier: Vec<Result<Vec<OverheadRow>, AppError>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg.tiers.iter().map(|tier| s.spawn(move || run_tier(cfg, tier, n_messages))).collect();
        handles.into_iter().map(|h| h.join().expect("tier thread panicked")).collect()
    });
    let mut rows = Vec::new();
    for r in per_tier {
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn mean_overhead(rows: &[OverheadRow], mechanism: &str) -> Option<f64> {
    let xs: Vec<f64> = rows.iter().filter(|r| r.mechanism == mechanism).map(|r| r.overhead_ms).collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Runs the price dynamics at every cost scale. An inactive market yields a
/// single `revenue_inactive` row with zero price and revenue.
pub fn bench_revenue(cfg: &ScenarioConfig, cost_scales: &[f64]) -> Result<(Vec<RevenueRow>, Vec<RevenueSummary>), AppError> {
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &m in cost_scales {
        let pp = cfg.market.producer.with_cost_scale(m);
        let solver = start_price(cfg, &pp);
        match market::solve_equilibrium(&pp, &cfg.market.consumers, &solver) {
            Ok(eq) => {
                rows.extend(eq.iterations.iter().map(|it| RevenueRow {
                    experiment: "revenue".into(),
                    cost_scale: m,
                    iteration: it.iteration,
                    price: it.price,
                    revenue: it.revenue,
                }));
                summaries.push(RevenueSummary { cost_scale: m, final_revenue: Some(eq.revenue), final_price: Some(eq.price) });
            }
            Err(MarketError::MarketInactive) => {
                rows.push(RevenueRow { experiment: "revenue_inactive".into(), cost_scale: m, iteration: 0, price: 0.0, revenue: 0.0 });
                summaries.push(RevenueSummary { cost_scale: m, final_revenue: None, final_price: None });
            }
            Err(e) => return Err(domain(e)),
        }
    }
    Ok((rows, summaries))
}

fn start_price(cfg: &ScenarioConfig, pp: &market::ProducerParams) -> SolverConfig {
    let mut solver = cfg.market.solver;
    if let (None, Some(frac)) = (solver.initial_price, cfg.bench.start_fraction) {
        let u = market::unit_cost(pp);
        let choke = cfg.market.consumers.iter().map(|c| c.choke_price()).fold(f64::NEG_INFINITY, f64::max);
        if choke > u {
            solver.initial_price = Some(u + frac * (choke - u));
        }
    }
    solver
}

pub fn write_csv<R: Serialize>(rows: &[R], out: impl Write) -> Result<(), AppError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| AppError::Domain(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// CSV text with a header even when there are no rows.
pub fn csv_string<R: Serialize>(header: &[&str], rows: &[R]) -> Result<String, AppError> {
    let mut buf = Vec::new();
    if rows.is_empty() {
        writeln!(buf, "{}", header.join(","))?;
    } else {
        write_csv(rows, &mut buf)?;
    }
    Ok(String::from_utf8(buf).expect("csv is utf-8"))
}

pub const OVERHEAD_HEADER: [&str; 5] = ["experiment", "mechanism", "msg_index", "payload_bytes", "overhead_ms"];
pub const REVENUE_HEADER: [&str; 5] = ["experiment", "cost_scale", "iteration", "price", "revenue"];
