use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use semex_core::hash::content_id;
use semex_core::ledger::TxTiming;
use semex_core::market::IterationRecord;
use semex_core::nft::{NftEvent, TokenMetadata};
use semex_core::store::Store;
use semex_core::Cid;
use serde::Serialize;

use crate::AppError;

/// Metadata as JSON with sorted keys and no whitespace.
pub fn canonical_metadata_json(meta: &TokenMetadata) -> String {
    let value = serde_json::to_value(meta).expect("metadata serializes");
    serde_json::to_string(&value).expect("json value serializes")
}

pub fn token_uri(meta: &TokenMetadata) -> String {
    format!("semex://{}", content_id(canonical_metadata_json(meta).as_bytes()).to_hex())
}

pub fn write_events_jsonl(events: &[NftEvent], mut out: impl Write) -> Result<(), AppError> {
    for e in events {
        serde_json::to_writer(&mut out, e).map_err(|e| AppError::Domain(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_events_jsonl(input: impl BufRead) -> Result<Vec<NftEvent>, AppError> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|line| serde_json::from_str(&line?).map_err(|e| AppError::Domain(format!("event log: {e}"))))
        .collect()
}

/// Writes one file per entry, named by the hex content id.
pub fn snapshot_store(store: &Store, dir: &Path) -> Result<(), AppError> {
    fs::create_dir_all(dir)?;
    for (cid, bytes) in store.entries() {
        fs::write(dir.join(cid.to_hex()), bytes)?;
    }
    Ok(())
}

/// Loads a snapshot without re-hashing; corrupted files surface on `get`.
pub fn restore_store(dir: &Path, get_latency_ms: f64) -> Result<Store, AppError> {
    let mut store = Store::new(get_latency_ms);
    let mut names: Vec<_> = fs::read_dir(dir)?.collect::<Result<Vec<_>, _>>()?;
    names.sort_by_key(|e| e.file_name());
    for entry in names {
        let name = entry.file_name();
        let cid = name
            .to_str()
            .and_then(|s| Cid::from_hex(s).ok())
            .ok_or_else(|| AppError::Domain(format!("store snapshot: unexpected file {name:?}")))?;
        store.import_raw(cid, fs::read(entry.path())?);
    }
    Ok(store)
}

#[derive(Serialize)]
struct TimingRow<'a> {
    tx_id: u64,
    kind: &'a str,
    payload_bytes: u64,
    submit_time: f64,
    commit_time: Option<f64>,
    overhead_ms: Option<f64>,
}

pub fn timings_csv<'a>(timings: impl IntoIterator<Item = &'a TxTiming>) -> Result<String, AppError> {
    let rows: Vec<TimingRow> = timings
        .into_iter()
        .map(|t| TimingRow {
            tx_id: t.tx_id.0,
            kind: t.kind.as_str(),
            payload_bytes: t.payload_bytes,
            submit_time: t.submit_time.as_ms(),
            commit_time: t.commit_time.map(|c| c.as_ms()),
            overhead_ms: t.overhead_ms(),
        })
        .collect();
    crate::bench::csv_string(&["tx_id", "kind", "payload_bytes", "submit_time", "commit_time", "overhead_ms"], &rows)
}

pub fn trace_csv(trace: &[IterationRecord]) -> Result<String, AppError> {
    crate::bench::csv_string(&["iteration", "price", "revenue", "total_demand"], trace)
}
