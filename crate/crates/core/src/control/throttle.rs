use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::audit::{AuditEntry, AuditTrail, Plane};
use crate::clock::LogicalTime;

const MINUTE: u64 = 60_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThrottleScope {
    Tenant,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThrottleCaps {
    pub per_minute: u32,
    pub per_day: u32,
    pub scope: ThrottleScope,
}

impl ThrottleCaps {
    pub fn new(per_minute: u32, per_day: u32, scope: ThrottleScope) -> Result<Self, ControlError> {
        if per_minute == 0 || per_day == 0 {
            return Err(ControlError::InvalidSpec(
                "throttle caps must be positive".into(),
            ));
        }
        Ok(Self {
            per_minute,
            per_day,
            scope,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThrottleWindow {
    Minute,
    Day,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "decision", content = "window")]
pub enum ThrottleDecision {
    Admitted,
    Refused(ThrottleWindow),
}

/// Sliding-window admission. A request at `now` counts earlier admissions in
/// `(now - window, now]`.
#[derive(Debug, Clone)]
pub struct Throttle {
    caps: ThrottleCaps,
    admitted: BTreeMap<String, VecDeque<LogicalTime>>,
}

impl Throttle {
    pub fn new(caps: ThrottleCaps) -> Self {
        Self {
            caps,
            admitted: BTreeMap::new(),
        }
    }

    pub fn caps(&self) -> ThrottleCaps {
        self.caps
    }

    pub fn set_caps(&mut self, caps: ThrottleCaps) {
        self.caps = caps;
    }

    pub fn admit(
        &mut self,
        scope_key: &str,
        request_id: &str,
        now: LogicalTime,
        audit: &mut AuditTrail,
    ) -> ThrottleDecision {
        let key = match self.caps.scope {
            ThrottleScope::Tenant => scope_key,
            ThrottleScope::Global => "*",
        };
        let q = self.admitted.entry(key.to_owned()).or_default();
        while q
            .front()
            .is_some_and(|t| now.0 >= t.0 + LogicalTime::MILLIS_PER_DAY)
        {
            q.pop_front();
        }
        let in_minute = q.iter().rev().take_while(|t| now.0 < t.0 + MINUTE).count();
        let refused = if in_minute >= self.caps.per_minute as usize {
            Some(ThrottleWindow::Minute)
        } else if q.len() >= self.caps.per_day as usize {
            Some(ThrottleWindow::Day)
        } else {
            None
        };
        match refused {
            None => {
                q.push_back(now);
                ThrottleDecision::Admitted
            }
            Some(w) => {
                let detail = match w {
                    ThrottleWindow::Minute => {
                        format!("{key}: per_minute cap {}", self.caps.per_minute)
                    }
                    ThrottleWindow::Day => format!("{key}: per_day cap {}", self.caps.per_day),
                };
                audit.append(
                    AuditEntry::new(request_id, Plane::Throttle, "refuse", now).detail(detail),
                );
                ThrottleDecision::Refused(w)
            }
        }
    }
}
