use alloc::string::String;

use sha2::{Digest, Sha256};

/// Stable idempotency key for one boundary step. Automatic retries reuse the
/// key; `group` moves only when an operator asks for re-execution.
pub fn idempotency_key(run_id: &str, node_path: &str, visit: u32, group: u32) -> String {
    let mut h = Sha256::new();
    for part in [run_id.as_bytes(), node_path.as_bytes()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    h.update(visit.to_le_bytes());
    h.update(group.to_le_bytes());
    let mut s = hex::encode(h.finalize());
    s.truncate(32);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_distinct() {
        let k = idempotency_key("run-000001", "1", 1, 0);
        assert_eq!(k.len(), 32);
        assert_eq!(k, idempotency_key("run-000001", "1", 1, 0));
        assert_ne!(k, idempotency_key("run-000001", "1", 1, 1));
        assert_ne!(k, idempotency_key("run-000001", "1", 2, 0));
        assert_ne!(k, idempotency_key("run-000002", "1", 1, 0));
        // length-prefixing keeps field boundaries unambiguous
        assert_ne!(idempotency_key("ab", "c", 1, 0), idempotency_key("a", "bc", 1, 0));
    }
}
