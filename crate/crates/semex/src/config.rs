use std::path::Path;

use semex_core::fairshare::{self, Crs};
use semex_core::ledger::{ClusterConfig, NetworkModel};
use semex_core::market::{ConsumerParams, ProducerParams, SolverConfig};
use semex_core::nft::{AccountId, Amount};
use semex_core::{TransformKind, TransformSpec};
use serde::{Deserialize, Serialize};

use crate::AppError;

pub const DEFAULT_PROFILE: &str = include_str!("../profiles/default.toml");

pub const MECHANISMS: [&str; 3] = ["tradition", "unified", "ours"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub cluster: ClusterSection,
    pub tiers: Vec<Tier>,
    pub bench: BenchSection,
    pub market: MarketSection,
    pub fairshare: FairshareSection,
    pub exchange: ExchangeSection,
    pub accounts: AccountsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    pub n: u32,
    pub f: u32,
    pub base_latency_ms: f64,
    pub bandwidth_bytes_per_ms: f64,
    pub batch_ms: f64,
    #[serde(default)]
    pub jitter_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tier {
    pub label: String,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub messages: u32,
    #[serde(default)]
    pub submit_interval_ms: f64,
    pub cost_scales: Vec<f64>,
    #[serde(default)]
    pub start_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub producer: ProducerParams,
    pub consumers: Vec<ConsumerParams>,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairshareSection {
    pub security_bits: u16,
    pub challenges: u32,
    pub block_size: u32,
    pub ratio: u32,
    pub transform: TransformName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformName {
    Contour,
    Downsample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExchangeSection {
    pub source_bytes: usize,
    /// The producer publishes a transformed payload with this many wrong
    /// segments.
    #[serde(default)]
    pub corrupt_blocks: usize,
    #[serde(default)]
    pub store_latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountsSection {
    pub marketplace: String,
    pub producers: Vec<AccountEntry>,
    pub consumers: Vec<AccountEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountEntry {
    pub name: String,
    /// Opening balance in payment units.
    #[serde(default)]
    pub balance: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::from_toml(DEFAULT_PROFILE).expect("built-in profile is valid")
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, AppError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| AppError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), AppError> {
        let bad = |msg: String| Err(AppError::Config(msg));
        let c = &self.cluster;
        if c.n < 3 * c.f + 1 {
            return bad(format!("cluster of {} replicas cannot tolerate {} faults", c.n, c.f));
        }
        if !(c.base_latency_ms >= 0.0 && c.bandwidth_bytes_per_ms > 0.0 && c.batch_ms >= 0.0 && c.jitter_ms >= 0.0) {
            return bad("cluster timings must be non-negative and bandwidth positive".into());
        }
        if self.tiers.is_empty() {
            return bad("at least one payload tier is required".into());
        }
        for t in &self.tiers {
            if t.size_bytes == 0 {
                return bad(format!("tier {} has zero size", t.label));
            }
            if !MECHANISMS.contains(&t.label.as_str()) {
                return bad(format!("tier label {} is not one of {}", t.label, MECHANISMS.join(", ")));
            }
        }
        if self.accounts.producers.is_empty() || self.accounts.consumers.is_empty() {
            return bad("at least one producer and one consumer account are required".into());
        }
        let mut names: Vec<&str> = self.all_account_names().collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("account names must be unique".into());
        }
        if self.accounts.producers.iter().chain(&self.accounts.consumers).any(|a| !(a.balance >= 0.0)) {
            return bad("balances must be non-negative".into());
        }
        if self.market.consumers.is_empty() {
            return bad("market needs at least one consumer".into());
        }
        self.market.producer.validate().map_err(|e| AppError::Config(format!("market producer: {e}")))?;
        for cp in &self.market.consumers {
            cp.validate().map_err(|e| AppError::Config(format!("market consumer: {e}")))?;
        }
        if self.market.solver.max_iter == 0 || !(self.market.solver.tol > 0.0) {
            return bad("solver needs a positive tolerance and iteration cap".into());
        }
        if self.bench.cost_scales.iter().any(|m| !(*m > 0.0)) {
            return bad("cost scales must be positive".into());
        }
        if self.bench.start_fraction.is_some_and(|f| !(0.0..=1.0).contains(&f)) {
            return bad("start_fraction must lie in [0, 1]".into());
        }
        self.crs()?;
        Ok(())
    }

    fn all_account_names(&self) -> impl Iterator<Item = &str> {
        let a = &self.accounts;
        std::iter::once(a.marketplace.as_str()).chain(a.producers.iter().chain(&a.consumers).map(|e| e.name.as_str()))
    }

    pub fn cluster_config(&self) -> ClusterConfig {
        let c = &self.cluster;
        let network = NetworkModel::new(c.base_latency_ms, c.bandwidth_bytes_per_ms).with_jitter(c.jitter_ms, self.seed);
        let mut cfg = ClusterConfig::new(c.n, c.f, network, self.seed);
        cfg.batch_ms = c.batch_ms;
        cfg
    }

    pub fn transform(&self) -> Result<TransformSpec, AppError> {
        let f = &self.fairshare;
        let kind = match f.transform {
            TransformName::Contour => TransformKind::ContourExtract,
            TransformName::Downsample => TransformKind::Downsample,
        };
        TransformSpec::new(kind, f.ratio, f.block_size).map_err(|e| AppError::Config(format!("fairshare: {e}")))
    }

    pub fn crs(&self) -> Result<Crs, AppError> {
        fairshare::setup(self.fairshare.security_bits, self.transform()?, self.fairshare.challenges)
            .map_err(|e| AppError::Config(format!("fairshare: {e}")))
    }

    pub fn marketplace(&self) -> AccountId {
        AccountId::marketplace(self.accounts.marketplace.clone())
    }

    pub fn producers(&self) -> Vec<AccountId> {
        self.accounts.producers.iter().map(|a| AccountId::producer(a.name.clone())).collect()
    }

    pub fn consumers(&self) -> Vec<AccountId> {
        self.accounts.consumers.iter().map(|a| AccountId::consumer(a.name.clone())).collect()
    }

    pub fn allocations(&self) -> Vec<(AccountId, Amount)> {
        let a = &self.accounts;
        let producers = a.producers.iter().map(|e| (AccountId::producer(e.name.clone()), Amount::from_f64(e.balance)));
        let consumers = a.consumers.iter().map(|e| (AccountId::consumer(e.name.clone()), Amount::from_f64(e.balance)));
        producers.chain(consumers).collect()
    }
}
