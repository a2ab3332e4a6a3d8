//! NFT contract and marketplace escrow.
//!
//! [`ContractState`] is a pure fold over committed ledger transactions: each
//! transaction's payload encodes one [`NftCall`] issued by the submitter, and
//! [`ContractState::apply_block`] executes the calls in chain order. A failing
//! call changes nothing and appends no event.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::Cid;
use crate::ledger::{Block, SimTime, Transaction, TxId, TxKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Producer,
    Consumer,
    Marketplace,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AccountId {
    name: String,
    role: Role,
}

impl AccountId {
    pub fn new(name: impl Into<String>, role: Role) -> Self {
        AccountId { name: name.into(), role }
    }

    pub fn producer(name: impl Into<String>) -> Self {
        Self::new(name, Role::Producer)
    }

    pub fn consumer(name: impl Into<String>) -> Self {
        Self::new(name, Role::Consumer)
    }

    pub fn marketplace(name: impl Into<String>) -> Self {
        Self::new(name, Role::Marketplace)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> Role {
        self.role
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Payment units with six decimals, stored as an integer count of micro-units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Amount(pub u64);

impl Amount {
    pub const MICROS_PER_UNIT: u64 = 1_000_000;

    pub fn from_units(units: u64) -> Self {
        Amount(units * Self::MICROS_PER_UNIT)
    }

    /// Rounds a real-valued amount to the nearest micro-unit; negative and
    /// non-finite inputs map to zero.
    pub fn from_f64(units: f64) -> Self {
        if !units.is_finite() || units <= 0.0 {
            return Amount(0);
        }
        Amount(libm::round(units * Self::MICROS_PER_UNIT as f64) as u64)
    }

    pub fn as_f64(&self) -> f64 {
        self.0 as f64 / Self::MICROS_PER_UNIT as f64
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / Self::MICROS_PER_UNIT, self.0 % Self::MICROS_PER_UNIT)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenId(pub u64);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMetadata {
    pub name: String,
    pub task_type: String,
    pub producer: AccountId,
    pub timestamp: SimTime,
    /// Off-chain payload commitment.
    pub cid: Cid,
    /// Content id of the stored proof binding the payload to its source.
    pub proof_root: Option<Cid>,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub token_id: TokenId,
    /// `None` once burned.
    pub owner: Option<AccountId>,
    pub uri: String,
    pub metadata: TokenMetadata,
    pub approved: Option<AccountId>,
    pub burned: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Listing {
    pub seller: AccountId,
    pub price: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NftError {
    #[error("contract not deployed")]
    NotDeployed,
    #[error("contract already deployed")]
    AlreadyDeployed,
    #[error("metadata producer does not match the minter")]
    ProducerMismatch,
    #[error("metadata is malformed")]
    MalformedMetadata,
    #[error("unknown token {0}")]
    UnknownToken(TokenId),
    #[error("token {0} is burned")]
    TokenBurned(TokenId),
    #[error("token {0} is not owned by the given sender")]
    WrongOwner(TokenId),
    #[error("caller may not move token {0}")]
    NotAuthorized(TokenId),
    #[error("caller does not own token {0}")]
    NotOwner(TokenId),
    #[error("an account cannot approve itself")]
    SelfApproval,
    #[error("marketplace is not an operator of the seller")]
    NoOperatorGrant,
    #[error("listing price must be positive")]
    ZeroPrice,
    #[error("token {0} is not listed")]
    NoListing(TokenId),
    #[error("balance {balance} below price {price}")]
    InsufficientFunds { balance: Amount, price: Amount },
    #[error("transaction payload is not a valid contract call")]
    Decode,
    #[error("injected fault")]
    Injected,
}

/// One contract call; the caller is the submitter of the carrying transaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NftCall {
    Deploy { marketplace: AccountId, allocations: Vec<(AccountId, Amount)> },
    /// Test and scenario funding; the only call that changes total supply.
    Fund { account: AccountId, amount: Amount },
    Mint { metadata: TokenMetadata, uri: String },
    TransferFrom { from: AccountId, to: AccountId, token: TokenId },
    Burn { token: TokenId },
    Approve { spender: AccountId, token: TokenId },
    SetApprovalForAll { operator: AccountId, enabled: bool },
    List { token: TokenId, price: Amount },
    Buy { token: TokenId },
}

impl NftCall {
    pub fn kind(&self) -> TxKind {
        match self {
            NftCall::Deploy { .. } => TxKind::Deploy,
            NftCall::Fund { .. } => TxKind::Custom,
            NftCall::Mint { .. } => TxKind::Mint,
            NftCall::TransferFrom { .. } => TxKind::TransferFrom,
            NftCall::Burn { .. } => TxKind::Burn,
            NftCall::Approve { .. } => TxKind::Approve,
            NftCall::SetApprovalForAll { .. } => TxKind::SetApprovalForAll,
            NftCall::List { .. } => TxKind::List,
            NftCall::Buy { .. } => TxKind::Buy,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        postcard::to_allocvec(self).expect("contract calls always serialize")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, NftError> {
        postcard::from_bytes(bytes).map_err(|_| NftError::Decode)
    }

    /// Wraps the call in a ledger transaction submitted by `caller`.
    pub fn into_transaction(self, tx_id: TxId, caller: AccountId) -> Transaction {
        Transaction::new(tx_id, self.kind(), self.encode(), caller)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NftEvent {
    Deployed { marketplace: AccountId },
    Funded { account: AccountId, amount: Amount },
    Minted { token: TokenId, owner: AccountId, cid: Cid },
    Transferred { token: TokenId, from: AccountId, to: AccountId, by: AccountId },
    Burned { token: TokenId, by: AccountId },
    Approval { token: TokenId, owner: AccountId, spender: AccountId },
    ApprovalForAll { owner: AccountId, operator: AccountId, enabled: bool },
    Listed { token: TokenId, seller: AccountId, price: Amount },
    Purchased { token: TokenId, seller: AccountId, buyer: AccountId, price: Amount },
}

/// Result of a successful call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallOutcome {
    Done,
    Minted(TokenId),
}

/// Sub-steps of a purchase, exposed for fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuyStep {
    DebitedBuyer,
    CreditedSeller,
    MovedToken,
    RemovedListing,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContractState {
    marketplace: Option<AccountId>,
    tokens: BTreeMap<TokenId, TokenRecord>,
    operator_grants: BTreeSet<(AccountId, AccountId)>,
    balances: BTreeMap<AccountId, Amount>,
    listings: BTreeMap<TokenId, Listing>,
    next_token_id: u64,
    events: Vec<NftEvent>,
}

impl ContractState {
    /// An undeployed contract; the first call must be [`NftCall::Deploy`].
    pub fn new() -> Self {
        ContractState { next_token_id: 1, ..Default::default() }
    }

    pub fn deployed(marketplace: AccountId) -> Self {
        let mut state = Self::new();
        state.deploy(marketplace, Vec::new()).expect("fresh contract");
        state
    }

    /// Folds every transaction of `chain` into a fresh contract.
    pub fn replay<'a>(chain: impl IntoIterator<Item = &'a Block>) -> Self {
        let mut state = Self::new();
        for block in chain {
            state.apply_block(block);
        }
        state
    }

    pub fn apply_block(&mut self, block: &Block) -> Vec<(TxId, Result<CallOutcome, NftError>)> {
        block.txs.iter().map(|tx| (tx.tx_id, self.apply_transaction(tx))).collect()
    }

    pub fn apply_transaction(&mut self, tx: &Transaction) -> Result<CallOutcome, NftError> {
        let call = NftCall::decode(&tx.payload_bytes)?;
        if call.kind() != tx.kind {
            return Err(NftError::Decode);
        }
        self.apply(&tx.submitter, call)
    }

    pub fn apply(&mut self, caller: &AccountId, call: NftCall) -> Result<CallOutcome, NftError> {
        match call {
            NftCall::Deploy { marketplace, allocations } => self.deploy(marketplace, allocations),
            NftCall::Fund { account, amount } => self.fund(&account, amount),
            NftCall::Mint { metadata, uri } => return self.mint(caller, metadata, uri).map(CallOutcome::Minted),
            NftCall::TransferFrom { from, to, token } => self.transfer_from(caller, &from, &to, token),
            NftCall::Burn { token } => self.burn(caller, token),
            NftCall::Approve { spender, token } => self.approve(caller, &spender, token),
            NftCall::SetApprovalForAll { operator, enabled } => self.set_approval_for_all(caller, &operator, enabled),
            NftCall::List { token, price } => self.list(caller, token, price),
            NftCall::Buy { token } => self.buy(caller, token),
        }
        .map(|()| CallOutcome::Done)
    }

    pub fn deploy(&mut self, marketplace: AccountId, allocations: Vec<(AccountId, Amount)>) -> Result<(), NftError> {
        if self.marketplace.is_some() {
            return Err(NftError::AlreadyDeployed);
        }
        for (account, amount) in allocations {
            *self.balances.entry(account).or_default() = amount;
        }
        self.events.push(NftEvent::Deployed { marketplace: marketplace.clone() });
        self.marketplace = Some(marketplace);
        Ok(())
    }

    pub fn fund(&mut self, account: &AccountId, amount: Amount) -> Result<(), NftError> {
        self.require_deployed()?;
        let balance = self.balances.entry(account.clone()).or_default();
        balance.0 += amount.0;
        self.events.push(NftEvent::Funded { account: account.clone(), amount });
        Ok(())
    }

    pub fn mint(&mut self, caller: &AccountId, metadata: TokenMetadata, uri: String) -> Result<TokenId, NftError> {
        self.require_deployed()?;
        if metadata.producer != *caller {
            return Err(NftError::ProducerMismatch);
        }
        if metadata.cid == Cid::ZERO || metadata.name.is_empty() || uri.is_empty() {
            return Err(NftError::MalformedMetadata);
        }
        let token_id = TokenId(self.next_token_id);
        self.next_token_id += 1;
        self.events.push(NftEvent::Minted { token: token_id, owner: caller.clone(), cid: metadata.cid });
        self.tokens.insert(
            token_id,
            TokenRecord { token_id, owner: Some(caller.clone()), uri, metadata, approved: None, burned: false },
        );
        Ok(token_id)
    }

    pub fn transfer_from(&mut self, caller: &AccountId, from: &AccountId, to: &AccountId, token: TokenId) -> Result<(), NftError> {
        let record = self.live_token(token)?;
        let owner = record.owner.as_ref().expect("live token has an owner");
        if owner != from {
            return Err(NftError::WrongOwner(token));
        }
        let authorized = caller == owner || record.approved.as_ref() == Some(caller) || self.is_operator(owner, caller);
        if !authorized {
            return Err(NftError::NotAuthorized(token));
        }
        let record = self.tokens.get_mut(&token).expect("checked above");
        record.owner = Some(to.clone());
        record.approved = None;
        self.listings.remove(&token);
        self.events.push(NftEvent::Transferred { token, from: from.clone(), to: to.clone(), by: caller.clone() });
        Ok(())
    }

    pub fn burn(&mut self, caller: &AccountId, token: TokenId) -> Result<(), NftError> {
        let record = self.live_token(token)?;
        let owner = record.owner.as_ref().expect("live token has an owner");
        if caller != owner && !self.is_operator(owner, caller) {
            return Err(NftError::NotAuthorized(token));
        }
        let record = self.tokens.get_mut(&token).expect("checked above");
        record.owner = None;
        record.approved = None;
        record.burned = true;
        self.listings.remove(&token);
        self.events.push(NftEvent::Burned { token, by: caller.clone() });
        Ok(())
    }

    pub fn approve(&mut self, caller: &AccountId, spender: &AccountId, token: TokenId) -> Result<(), NftError> {
        let record = self.live_token(token)?;
        if record.owner.as_ref() != Some(caller) {
            return Err(NftError::NotOwner(token));
        }
        if spender == caller {
            return Err(NftError::SelfApproval);
        }
        self.tokens.get_mut(&token).expect("checked above").approved = Some(spender.clone());
        self.events.push(NftEvent::Approval { token, owner: caller.clone(), spender: spender.clone() });
        Ok(())
    }

    pub fn set_approval_for_all(&mut self, caller: &AccountId, operator: &AccountId, enabled: bool) -> Result<(), NftError> {
        if caller == operator {
            return Err(NftError::SelfApproval);
        }
        let key = (caller.clone(), operator.clone());
        if enabled {
            self.operator_grants.insert(key);
        } else {
            self.operator_grants.remove(&key);
        }
        self.events.push(NftEvent::ApprovalForAll { owner: caller.clone(), operator: operator.clone(), enabled });
        Ok(())
    }

    pub fn list(&mut self, caller: &AccountId, token: TokenId, price: Amount) -> Result<(), NftError> {
        let marketplace = self.require_deployed()?.clone();
        let record = self.live_token(token)?;
        if record.owner.as_ref() != Some(caller) {
            return Err(NftError::NotOwner(token));
        }
        if !self.is_operator(caller, &marketplace) {
            return Err(NftError::NoOperatorGrant);
        }
        if price.0 == 0 {
            return Err(NftError::ZeroPrice);
        }
        self.listings.insert(token, Listing { seller: caller.clone(), price });
        self.events.push(NftEvent::Listed { token, seller: caller.clone(), price });
        Ok(())
    }

    pub fn buy(&mut self, caller: &AccountId, token: TokenId) -> Result<(), NftError> {
        self.buy_with_hook(caller, token, |_| Ok(()))
    }

    /// [`ContractState::buy`] with a hook run after every sub-step. A hook
    /// error aborts the purchase and restores every touched field, so the
    /// swap is all-or-nothing.
    pub fn buy_with_hook(
        &mut self,
        caller: &AccountId,
        token: TokenId,
        mut hook: impl FnMut(BuyStep) -> Result<(), NftError>,
    ) -> Result<(), NftError> {
        let marketplace = self.require_deployed()?.clone();
        let listing = self.listings.get(&token).cloned().ok_or(NftError::NoListing(token))?;
        self.live_token(token)?;
        if !self.is_operator(&listing.seller, &marketplace) {
            return Err(NftError::NoOperatorGrant);
        }
        let balance = self.balance_of(caller);
        if balance < listing.price {
            return Err(NftError::InsufficientFunds { balance, price: listing.price });
        }

        let saved_buyer = self.balances.get(caller).copied();
        let saved_seller = self.balances.get(&listing.seller).copied();
        let saved_record = self.tokens[&token].clone();
        let result = (|| {
            self.balances.entry(caller.clone()).or_default().0 -= listing.price.0;
            hook(BuyStep::DebitedBuyer)?;
            self.balances.entry(listing.seller.clone()).or_default().0 += listing.price.0;
            hook(BuyStep::CreditedSeller)?;
            let record = self.tokens.get_mut(&token).expect("checked above");
            record.owner = Some(caller.clone());
            record.approved = None;
            hook(BuyStep::MovedToken)?;
            self.listings.remove(&token);
            hook(BuyStep::RemovedListing)
        })();
        if let Err(e) = result {
            restore(&mut self.balances, caller, saved_buyer);
            restore(&mut self.balances, &listing.seller, saved_seller);
            self.tokens.insert(token, saved_record);
            self.listings.insert(token, listing);
            return Err(e);
        }
        self.events.push(NftEvent::Purchased { token, seller: listing.seller, buyer: caller.clone(), price: listing.price });
        Ok(())
    }

    pub fn owner_of(&self, token: TokenId) -> Result<&AccountId, NftError> {
        Ok(self.live_token(token)?.owner.as_ref().expect("live token has an owner"))
    }

    pub fn token_uri(&self, token: TokenId) -> Result<&str, NftError> {
        Ok(&self.live_token(token)?.uri)
    }

    pub fn token(&self, token: TokenId) -> Option<&TokenRecord> {
        self.tokens.get(&token)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &TokenRecord> {
        self.tokens.values()
    }

    pub fn listing(&self, token: TokenId) -> Option<&Listing> {
        self.listings.get(&token)
    }

    pub fn listings(&self) -> impl Iterator<Item = (&TokenId, &Listing)> {
        self.listings.iter()
    }

    pub fn is_operator(&self, owner: &AccountId, operator: &AccountId) -> bool {
        self.operator_grants.contains(&(owner.clone(), operator.clone()))
    }

    pub fn balance_of(&self, account: &AccountId) -> Amount {
        self.balances.get(account).copied().unwrap_or_default()
    }

    pub fn balances(&self) -> impl Iterator<Item = (&AccountId, &Amount)> {
        self.balances.iter()
    }

    pub fn total_balance(&self) -> u128 {
        self.balances.values().map(|a| a.0 as u128).sum()
    }

    pub fn marketplace(&self) -> Option<&AccountId> {
        self.marketplace.as_ref()
    }

    pub fn events(&self) -> &[NftEvent] {
        &self.events
    }

    fn require_deployed(&self) -> Result<&AccountId, NftError> {
        self.marketplace.as_ref().ok_or(NftError::NotDeployed)
    }

    fn live_token(&self, token: TokenId) -> Result<&TokenRecord, NftError> {
        let record = self.tokens.get(&token).ok_or(NftError::UnknownToken(token))?;
        if record.burned {
            return Err(NftError::TokenBurned(token));
        }
        Ok(record)
    }
}

fn restore(balances: &mut BTreeMap<AccountId, Amount>, account: &AccountId, saved: Option<Amount>) {
    match saved {
        Some(v) => {
            balances.insert(account.clone(), v);
        }
        None => {
            balances.remove(account);
        }
    }
}

/// Owners of `token` in order, rebuilt from the event log alone.
pub fn ownership_history(events: &[NftEvent], token: TokenId) -> Vec<AccountId> {
    let mut owners = Vec::new();
    for event in events {
        match event {
            NftEvent::Minted { token: t, owner, .. } if *t == token => owners.push(owner.clone()),
            NftEvent::Transferred { token: t, to, .. } if *t == token => owners.push(to.clone()),
            NftEvent::Purchased { token: t, buyer, .. } if *t == token => owners.push(buyer.clone()),
            _ => {}
        }
    }
    owners
}
