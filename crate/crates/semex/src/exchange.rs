use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use semex_core::fairshare::{self, FraudRecord, Opening, Proof};
use semex_core::ledger::{Cluster, TxId, TxTiming};
use semex_core::market::{self, Equilibrium, MarketError};
use semex_core::nft::{AccountId, Amount, CallOutcome, ContractState, NftCall, NftEvent, TokenId, TokenMetadata};
use semex_core::store::Store;
use semex_core::{apply_transform, Cid, SemanticPayload, TaskType};
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::export::token_uri;
use crate::{domain, AppError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Deploy,
    /// Commit, transform and prove.
    Prove,
    /// Store the payload and proof, mint the token.
    Publish,
    /// Verify, price, list, buy and reveal.
    Trade,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TxRecord {
    pub tx_id: u64,
    pub kind: String,
    pub caller: String,
    pub payload_bytes: u64,
    pub submit_ms: f64,
    pub commit_ms: f64,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub stage: Stage,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExchangeReport {
    pub seed: u64,
    pub txs: Vec<TxRecord>,
    pub token_id: Option<u64>,
    pub payload_cid: Option<Cid>,
    pub proof_root: Option<Cid>,
    pub source_root: Option<Cid>,
    pub uri: Option<String>,
    pub proof_verified: Option<bool>,
    pub equilibrium: Option<Equilibrium>,
    pub listing_price: Option<Amount>,
    pub purchased: bool,
    pub revealed: Option<bool>,
    pub fraud: Option<FraudRecord>,
    pub failure: Option<Failure>,
    pub final_owner: Option<String>,
    pub balances: BTreeMap<String, Amount>,
    pub seller_delta: i64,
    #[serde(skip)]
    pub events: Vec<NftEvent>,
    #[serde(skip)]
    pub timings: Vec<TxTiming>,
    #[serde(skip)]
    pub store: Store,
}

impl ExchangeReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Ledger plus the contract state folded from its committed blocks.
struct Chain {
    cluster: Cluster,
    state: ContractState,
    applied: usize,
    next_tx: u64,
    txs: Vec<TxRecord>,
}

impl Chain {
    /// Submits one call, runs consensus until quiet and executes the newly
    /// committed blocks.
    fn call(&mut self, caller: &AccountId, call: NftCall) -> Result<CallOutcome, AppError> {
        let id = TxId(self.next_tx);
        self.next_tx += 1;
        let tx = call.into_transaction(id, caller.clone()).at(self.cluster.now());
        let kind = tx.kind.as_str().to_string();
        let payload_bytes = tx.payload_bytes.len() as u64;
        self.cluster.submit(tx).map_err(domain)?;
        self.cluster.run_until_quiescent().map_err(domain)?;
        let mut result = None;
        let chain = self.cluster.canonical_chain();
        for block in &chain[self.applied..] {
            for (tx_id, r) in self.state.apply_block(block) {
                if tx_id == id {
                    result = Some(r);
                }
            }
        }
        self.applied = chain.len();
        let timing = self.cluster.timing(id).expect("submitted");
        let result = result.ok_or_else(|| AppError::Domain(format!("transaction {id} was not executed")))?;
        self.txs.push(TxRecord {
            tx_id: id.0,
            kind,
            caller: caller.name().to_string(),
            payload_bytes,
            submit_ms: timing.submit_time.as_ms(),
            commit_ms: timing.commit_time.map_or(f64::NAN, |c| c.as_ms()),
            outcome: match &result {
                Ok(_) => "ok".to_string(),
                Err(e) => e.to_string(),
            },
        });
        result.map_err(domain)
    }
}

pub fn source_payload(len: usize, seed: u64) -> SemanticPayload {
    let mut bytes = vec![0u8; len];
    ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed).fill_bytes(&mut bytes);
    SemanticPayload::raw(bytes)
}

/// Flips one byte in each of the first `m` output segments.
pub fn corrupt_segments(t: &SemanticPayload, segment_len: usize, m: usize) -> SemanticPayload {
    let mut bytes = t.bytes().to_vec();
    for i in 0..m.min(bytes.len() / segment_len.max(1)) {
        bytes[i * segment_len] ^= 0xff;
    }
    SemanticPayload::new(bytes, t.task_type())
}

pub fn run_exchange(cfg: &ScenarioConfig) -> Result<ExchangeReport, AppError> {
    cfg.validate()?;
    let crs = cfg.crs()?;
    let marketplace = cfg.marketplace();
    let producer = cfg.producers()[0].clone();
    let buyer = cfg.consumers()[0].clone();

    let mut chain = Chain {
        cluster: Cluster::new(cfg.cluster_config()).map_err(domain)?,
        state: ContractState::new(),
        applied: 0,
        next_tx: 1,
        txs: Vec::new(),
    };
    let mut store = Store::new(cfg.exchange.store_latency_ms);
    let mut report = ExchangeReport {
        seed: cfg.seed,
        txs: Vec::new(),
        token_id: None,
        payload_cid: None,
        proof_root: None,
        source_root: None,
        uri: None,
        proof_verified: None,
        equilibrium: None,
        listing_price: None,
        purchased: false,
        revealed: None,
        fraud: None,
        failure: None,
        final_owner: None,
        balances: BTreeMap::new(),
        seller_delta: 0,
        events: Vec::new(),
        timings: Vec::new(),
        store: Store::new(0.0),
    };

    let outcome = (|| -> Result<(), (Stage, AppError)> {
        chain
            .call(&marketplace, NftCall::Deploy { marketplace: marketplace.clone(), allocations: cfg.allocations() })
            .map_err(|e| (Stage::Deploy, e))?;

        let stage = Stage::Prove;
        let s = source_payload(cfg.exchange.source_bytes, cfg.seed);
        let honest_t = apply_transform(&crs.transform, &s).map_err(|e| (stage, domain(e)))?;
        let t = corrupt_segments(&honest_t, crs.segment_len(), cfg.exchange.corrupt_blocks);
        let (commitment, opening) = fairshare::commit_source(&crs, &s, cfg.seed).map_err(|e| (stage, domain(e)))?;
        let proof = fairshare::prove(&crs, &s, &t, &opening).map_err(|e| (stage, domain(e)))?;
        report.source_root = Some(commitment.merkle_root);

        let stage = Stage::Publish;
        let payload_cid = store.put(&t);
        let proof_root = store.put_bytes(&proof.to_bytes());
        report.payload_cid = Some(payload_cid);
        report.proof_root = Some(proof_root);
        let metadata = TokenMetadata {
            name: format!("{}-{}", t.task_type().as_str(), &payload_cid.to_hex()[..16]),
            task_type: t.task_type().as_str().to_string(),
            producer: producer.clone(),
            timestamp: chain.cluster.now(),
            cid: payload_cid,
            proof_root: Some(proof_root),
            attributes: BTreeMap::from([
                ("crs".to_string(), crs.digest().to_hex()),
                ("n_blocks".to_string(), commitment.n_blocks.to_string()),
                ("source_root".to_string(), commitment.merkle_root.to_hex()),
            ]),
        };
        let uri = token_uri(&metadata);
        report.uri = Some(uri.clone());
        let token = match chain.call(&producer, NftCall::Mint { metadata, uri }).map_err(|e| (stage, e))? {
            CallOutcome::Minted(t) => t,
            CallOutcome::Done => unreachable!("mint returns a token id"),
        };
        report.token_id = Some(token.0);

        let stage = Stage::Trade;
        let (fetched_t, fetched_proof) = fetch_published(&mut chain, &mut store, token).map_err(|e| (stage, e))?;
        let verified = fairshare::verify(&crs, &fetched_t, &fetched_proof);
        report.proof_verified = Some(verified);
        if !verified {
            return Err((stage, AppError::Domain("proof rejected before payment".into())));
        }
        let eq = market::solve_equilibrium(&cfg.market.producer, &cfg.market.consumers, &cfg.market.solver)
            .map_err(|e| (stage, market_error(e)))?;
        let price = Amount::from_f64(eq.price * eq.quantities[0]);
        report.equilibrium = Some(eq);
        report.listing_price = Some(price);
        if price.0 == 0 {
            return Err((stage, AppError::Domain("buyer demands nothing at the equilibrium price".into())));
        }
        let seller_before = chain.state.balance_of(&producer);
        chain
            .call(&producer, NftCall::SetApprovalForAll { operator: marketplace.clone(), enabled: true })
            .map_err(|e| (stage, e))?;
        chain.call(&producer, NftCall::List { token, price }).map_err(|e| (stage, e))?;
        chain.call(&buyer, NftCall::Buy { token }).map_err(|e| (stage, e))?;
        report.purchased = true;
        report.seller_delta = chain.state.balance_of(&producer).0 as i64 - seller_before.0 as i64;

        report.fraud = fraud_at_reveal(&crs, &fetched_t, &fetched_proof, &opening);
        report.revealed = Some(report.fraud.is_none());
        Ok(())
    })();

    if let Err((stage, e)) = outcome {
        report.failure = Some(Failure { stage, error: e.to_string() });
    }
    report.txs = chain.txs;
    report.final_owner = report
        .token_id
        .and_then(|t| chain.state.owner_of(TokenId(t)).ok())
        .map(|a| a.name().to_string());
    report.balances = chain.state.balances().map(|(a, v)| (a.name().to_string(), *v)).collect();
    report.events = chain.state.events().to_vec();
    report.timings = chain.cluster.timings().copied().collect();
    report.store = store;
    Ok(report)
}

fn market_error(e: MarketError) -> AppError {
    match e {
        MarketError::NoConvergence { trace } => AppError::Domain(format!("price dynamics did not converge in {} iterations", trace.len())),
        other => domain(other),
    }
}

/// What a consumer sees before paying: the token's payload and proof, read
/// back from the store by the ids in its on-chain metadata.
fn fetch_published(chain: &mut Chain, store: &mut Store, token: TokenId) -> Result<(SemanticPayload, Proof), AppError> {
    let record = chain.state.token(token).ok_or_else(|| AppError::Domain(format!("token {token} missing")))?;
    let meta = record.metadata.clone();
    let mut clock = chain.cluster.now();
    let t = store.fetch(&meta.cid, &mut clock).map_err(domain)?.to_vec();
    let proof_id = meta.proof_root.ok_or_else(|| AppError::Domain("token carries no proof".into()))?;
    let proof = Proof::from_bytes(store.fetch(&proof_id, &mut clock).map_err(domain)?).map_err(domain)?;
    let task = match meta.task_type.as_str() {
        "ContourMap" => TaskType::ContourMap,
        "Snapshot" => TaskType::Snapshot,
        _ => TaskType::Raw,
    };
    Ok((SemanticPayload::new(t, task), proof))
}

fn fraud_at_reveal(crs: &fairshare::Crs, t: &SemanticPayload, proof: &Proof, opening: &Opening) -> Option<FraudRecord> {
    match fairshare::reveal_source(crs, t, proof, opening) {
        Ok(_) => None,
        Err(fairshare::FairshareError::RootMismatch(r) | fairshare::FairshareError::TransformMismatch(r)) => Some(*r),
        Err(e) => unreachable!("reveal only reports fraud, got {e}"),
    }
}
