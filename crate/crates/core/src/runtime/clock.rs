use alloc::string::String;

use chrono::{DateTime, Duration, SecondsFormat, Utc};

/// Time that moves only when told to. Timestamps it produces are recorded in
/// events but never read by workflow logic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VirtualClock {
    now: DateTime<Utc>,
}

impl Default for VirtualClock {
    fn default() -> Self {
        // 2025-01-01T00:00:00Z
        VirtualClock::at_unix(1_735_689_600)
    }
}

impl VirtualClock {
    pub fn at_unix(secs: i64) -> Self {
        VirtualClock { now: DateTime::from_timestamp(secs, 0).expect("in range") }
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.now
    }

    pub fn rfc3339(&self) -> String {
        self.now.to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    pub fn advance_ms(&mut self, ms: i64) {
        self.now += Duration::milliseconds(ms);
    }

    pub fn set(&mut self, t: DateTime<Utc>) {
        if t > self.now {
            self.now = t;
        }
    }
}

pub fn parse_rfc3339(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.with_timezone(&Utc))
}
