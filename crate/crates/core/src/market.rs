//! Leader-follower pricing between one producer and a set of consumers.
//!
//! Consumers maximize `U(q) = α ln(1 + q) − (β/μ) q − p q` and the producer
//! maximizes `R(p) = (p − u) Σ q_i(p)` with unit cost `u = c f e + ν`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProducerParams {
    pub cycles_per_unit: f64,
    pub cpu_freq: f64,
    pub energy_price: f64,
    pub network_cost: f64,
}

impl ProducerParams {
    pub fn new(cycles_per_unit: f64, cpu_freq: f64, energy_price: f64, network_cost: f64) -> Result<Self, MarketError> {
        let pp = ProducerParams { cycles_per_unit, cpu_freq, energy_price, network_cost };
        pp.validate()?;
        Ok(pp)
    }

    /// Scales the energy price, which scales the compute term of the unit cost.
    pub fn with_cost_scale(mut self, m: f64) -> Self {
        self.energy_price *= m;
        self
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        let all = [self.cycles_per_unit, self.cpu_freq, self.energy_price, self.network_cost];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(MarketError::InvalidParams)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsumerParams {
    pub precision_weight: f64,
    pub latency_weight: f64,
    pub proc_rate: f64,
}

impl ConsumerParams {
    pub fn new(precision_weight: f64, latency_weight: f64, proc_rate: f64) -> Result<Self, MarketError> {
        let cp = ConsumerParams { precision_weight, latency_weight, proc_rate };
        cp.validate()?;
        Ok(cp)
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        let all = [self.precision_weight, self.latency_weight, self.proc_rate];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(MarketError::InvalidParams)
        }
    }

    /// Latency coefficient `b = β/μ`.
    pub fn latency_coeff(&self) -> f64 {
        self.latency_weight / self.proc_rate
    }

    /// Highest price at which this consumer still buys.
    pub fn choke_price(&self) -> f64 {
        self.precision_weight - self.latency_coeff()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quote {
    pub price: f64,
    pub quantity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub price: f64,
    pub revenue: f64,
    pub total_demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub price: f64,
    pub quantities: Vec<f64>,
    pub revenue: f64,
    pub utilities: Vec<f64>,
    pub iterations: Vec<IterationRecord>,
}

impl Equilibrium {
    pub fn total_demand(&self) -> f64 {
        self.quantities.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: u32,
    /// Starting price for the dynamics; `None` starts from the best point of
    /// the coarse grid.
    #[serde(default)]
    pub initial_price: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol: 1e-6, max_iter: 200, initial_price: None }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("market inactive: no consumer values the good above unit cost")]
    MarketInactive,
    #[error("price dynamics did not converge in {} iterations", .trace.len())]
    NoConvergence { trace: Vec<IterationRecord> },
    #[error("market parameters must be finite and positive")]
    InvalidParams,
}

const GRID_POINTS: usize = 256;
const EDGE: f64 = 1e-9;

pub fn unit_cost(pp: &ProducerParams) -> f64 {
    pp.cycles_per_unit * pp.cpu_freq * pp.energy_price + pp.network_cost
}

pub fn consumer_utility(q: f64, p: f64, cp: &ConsumerParams) -> f64 {
    cp.precision_weight * libm::log1p(q) - cp.latency_coeff() * q - p * q
}

/// `U(to) - U(from)` at price `p`, accurate even when the two utilities agree
/// to many digits.
pub fn utility_gain(from: f64, to: f64, p: f64, cp: &ConsumerParams) -> f64 {
    let dq = to - from;
    cp.precision_weight * libm::log1p(dq / (1.0 + from)) - (cp.latency_coeff() + p) * dq
}

pub fn consumer_best_response(p: f64, cp: &ConsumerParams) -> f64 {
    let q = cp.precision_weight / (p + cp.latency_coeff()) - 1.0;
    if q > 0.0 {
        q
    } else {
        0.0
    }
}

pub fn producer_revenue(p: f64, demands: &[f64], pp: &ProducerParams) -> f64 {
    let u = unit_cost(pp);
    demands.iter().map(|q| (p - u) * q).sum()
}

pub fn leader_price_closed_form(pp: &ProducerParams, cp: &ConsumerParams) -> Result<f64, MarketError> {
    let u = unit_cost(pp);
    let b = cp.latency_coeff();
    if cp.precision_weight <= u + b {
        return Err(MarketError::MarketInactive);
    }
    Ok(libm::sqrt(cp.precision_weight * (u + b)) - b)
}

/// Equilibrium revenue for a single consumer in closed form.
pub fn closed_form_revenue(pp: &ProducerParams, cp: &ConsumerParams) -> Result<f64, MarketError> {
    let p = leader_price_closed_form(pp, cp)?;
    Ok((p - unit_cost(pp)) * consumer_best_response(p, cp))
}

fn demands_at(p: f64, consumers: &[ConsumerParams]) -> Vec<f64> {
    consumers.iter().map(|cp| consumer_best_response(p, cp)).collect()
}

fn revenue_at(p: f64, u: f64, consumers: &[ConsumerParams]) -> f64 {
    (p - u) * consumers.iter().map(|cp| consumer_best_response(p, cp)).sum::<f64>()
}

fn revenue_slope(p: f64, u: f64, consumers: &[ConsumerParams]) -> f64 {
    consumers
        .iter()
        .map(|cp| {
            let x = p + cp.latency_coeff();
            let q = cp.precision_weight / x - 1.0;
            if q > 0.0 {
                q - (p - u) * cp.precision_weight / (x * x)
            } else {
                0.0
            }
        })
        .sum()
}

/// Revenue-maximizing price by coarse grid then golden-section refinement.
fn reference_price(u: f64, lo: f64, hi: f64, consumers: &[ConsumerParams]) -> f64 {
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let mut best = 0;
    let mut best_r = f64::NEG_INFINITY;
    for i in 0..GRID_POINTS {
        let r = revenue_at(lo + step * i as f64, u, consumers);
        if r > best_r {
            best_r = r;
            best = i;
        }
    }
    let mut a = lo + step * best.saturating_sub(1) as f64;
    let mut b = (lo + step * (best + 1) as f64).min(hi);
    let g = (libm::sqrt(5.0) - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (revenue_at(c, u, consumers), revenue_at(d, u, consumers));
    for _ in 0..200 {
        if b - a < 1e-13 {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = revenue_at(c, u, consumers);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = revenue_at(d, u, consumers);
        }
    }
    (a + b) / 2.0
}

/// Runs price dynamics: the producer takes projected gradient steps on
/// `R(p)` with step `η0 / (1 + t/20)` and consumers answer with their best
/// response. `η0` is the inverse curvature of `R` at the grid optimum.
pub fn solve_equilibrium(
    pp: &ProducerParams,
    consumers: &[ConsumerParams],
    cfg: &SolverConfig,
) -> Result<Equilibrium, MarketError> {
    pp.validate()?;
    for cp in consumers {
        cp.validate()?;
    }
    let u = unit_cost(pp);
    let choke = consumers.iter().map(ConsumerParams::choke_price).fold(f64::NEG_INFINITY, f64::max);
    if !(choke > u) {
        return Err(MarketError::MarketInactive);
    }
    let lo = u + EDGE;
    let hi = choke - EDGE;
    let project = |p: f64| p.clamp(lo, hi);
    let reference = reference_price(u, lo, hi, consumers);

    let record = |iteration: u32, price: f64| {
        let demand: f64 = demands_at(price, consumers).iter().sum();
        IterationRecord { iteration, price, revenue: (price - u) * demand, total_demand: demand }
    };

    let mut p = project(cfg.initial_price.unwrap_or_else(|| {
        let step = (hi - lo) / (GRID_POINTS - 1) as f64;
        (0..GRID_POINTS)
            .map(|i| lo + step * i as f64)
            .fold((lo, f64::NEG_INFINITY), |best, x| {
                let r = revenue_at(x, u, consumers);
                if r > best.1 {
                    (x, r)
                } else {
                    best
                }
            })
            .0
    }));
    let mut trace = Vec::new();
    trace.push(record(0, p));
    let mut restarted = false;
    let mut converged = false;
    let mut t0 = 0u32;
    let eta0 = step_scale(reference, u, lo, hi, consumers);
    for it in 1..=cfg.max_iter {
        let eta = eta0 / (1.0 + f64::from(it - 1 - t0) / 20.0);
        let next = project(p + eta * revenue_slope(p, u, consumers));
        let dp = (next - p).abs();
        p = next;
        trace.push(record(it, p));
        if dp < cfg.tol {
            let behind = revenue_at(reference, u, consumers) - revenue_at(p, u, consumers);
            if !restarted && behind > 1e-9 * (1.0 + revenue_at(reference, u, consumers).abs()) {
                // A second peak the gradient cannot reach; continue from the grid optimum.
                restarted = true;
                p = reference;
                t0 = it;
                continue;
            }
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(MarketError::NoConvergence { trace });
    }

    let quantities = demands_at(p, consumers);
    let utilities = consumers.iter().zip(&quantities).map(|(cp, q)| consumer_utility(*q, p, cp)).collect();
    Ok(Equilibrium { price: p, revenue: producer_revenue(p, &quantities, pp), quantities, utilities, iterations: trace })
}

fn step_scale(p: f64, u: f64, lo: f64, hi: f64, consumers: &[ConsumerParams]) -> f64 {
    let h = 1e-4 * (hi - lo);
    let (a, b) = ((p - h).max(lo), (p + h).min(hi));
    let curvature = ((revenue_slope(b, u, consumers) - revenue_slope(a, u, consumers)) / (b - a)).abs();
    if curvature > 1e-12 {
        1.0 / curvature
    } else {
        0.1 * (hi - lo)
    }
}

/// Exhaustive leader and follower search over the given grids. Test oracle.
pub fn brute_force_oracle(
    pp: &ProducerParams,
    consumers: &[ConsumerParams],
    p_grid: &[f64],
    q_grid: &[f64],
) -> (f64, Vec<f64>, f64) {
    let mut best = (p_grid.first().copied().unwrap_or(0.0), Vec::new(), f64::NEG_INFINITY);
    for &p in p_grid {
        let qs: Vec<f64> = consumers
            .iter()
            .map(|cp| {
                let mut grid = q_grid.iter().copied();
                let first = grid.next().unwrap_or(0.0);
                grid.fold(first, |best, q| if utility_gain(best, q, p, cp) > 0.0 { q } else { best })
            })
            .collect();
        let r = producer_revenue(p, &qs, pp);
        if r > best.2 {
            best = (p, qs, r);
        }
    }
    if best.2 == f64::NEG_INFINITY {
        best.2 = 0.0;
        best.1 = alloc::vec![0.0; consumers.len()];
    }
    best
}
