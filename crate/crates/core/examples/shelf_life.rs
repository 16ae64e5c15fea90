//! TTL bookkeeping in the collection buffer: a record is valid up to and
//! including its TTL, sweeps purge the rest and the purge feeds the cost
//! delta.

use std::time::Duration;

use trialign::lifecycle::{cost_delta, AuditLog, Buffer, DataRecord, Receipt, Timestamp};
use trialign::rgid::VarietyId;

fn main() -> trialign::Result<()> {
    let lambda: VarietyId = "hainan/cherry-tomato".parse()?;
    let buffer: Buffer<u32> = Buffer::new(8)?;
    let ttl = Duration::from_secs(3600);
    for i in 0..10u32 {
        let rec = DataRecord {
            id: format!("t{i}"),
            payload: i,
            lambda: lambda.clone(),
            t_collect: Timestamp::from_secs(300 * i as u64),
            ttl,
        };
        if let Receipt::Backpressure(r) = buffer.ingest(rec) {
            println!("buffer full, {} bounced", r.id);
        }
    }

    let mut log = AuditLog::new(Vec::new());
    // t0 collected at 0 s is exactly one TTL old here and still valid
    let at_ttl = buffer.sweep(Timestamp::from_secs(3600))?;
    log.append(&at_ttl)?;
    let later = buffer.sweep(Timestamp::from_secs(4500))?;
    log.append(&later)?;
    println!("purged {:?} then {:?}", at_ttl.purged_ids, later.purged_ids);

    let drained = buffer.drain(4, Timestamp::from_secs(4500));
    let ids: Vec<&str> = drained.records.iter().map(|r| r.id.as_str()).collect();
    println!("drained {ids:?}, {} left", buffer.len());
    println!("counters {:?}", buffer.counters());
    print!("{}", String::from_utf8_lossy(&log.into_inner()));

    let c = buffer.counters();
    println!("delta C = {:+.6}", cost_delta(c.purged, c.ingested, 0.02)?);
    println!("delta C (250 of 1000) = {:+.6}", cost_delta(250, 1000, 0.02)?);
    Ok(())
}
