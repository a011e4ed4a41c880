//! Duplicate removal and per-sender volume capping.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use super::EmailRecord;

/// Removes duplicated messages with the same (sender, subject) within each
/// day, then keeps at most `per_day_cap` messages per sender per day. Within
/// a duplicate group or an over-cap day the earliest message id survives, so
/// the result does not depend on input order. Output is ordered by
/// (day, sender, message id).
pub fn dedup_and_cap(corpus: &[EmailRecord], per_day_cap: usize) -> Vec<EmailRecord> {
    // (sender, subject, day) -> record with smallest id.
    let mut dedup: BTreeMap<(&str, &str, NaiveDate), &EmailRecord> = BTreeMap::new();
    for rec in corpus {
        let key = (rec.sender_address.as_str(), rec.subject.as_str(), rec.day);
        match dedup.get(&key) {
            Some(existing) if existing.message_id <= rec.message_id => {}
            _ => {
                dedup.insert(key, rec);
            }
        }
    }

    // (sender, day) -> surviving records, ordered by id for capping.
    let mut per_sender_day: BTreeMap<(&str, NaiveDate), Vec<&EmailRecord>> = BTreeMap::new();
    for rec in dedup.into_values() {
        per_sender_day
            .entry((rec.sender_address.as_str(), rec.day))
            .or_default()
            .push(rec);
    }

    let mut out: Vec<EmailRecord> = Vec::new();
    for ((_, _), mut group) in per_sender_day {
        group.sort_by(|a, b| a.message_id.cmp(&b.message_id));
        group.truncate(per_day_cap);
        out.extend(group.into_iter().cloned());
    }
    out.sort_by(|a, b| {
        (a.day, &a.sender_address, &a.message_id).cmp(&(b.day, &b.sender_address, &b.message_id))
    });
    out
}
