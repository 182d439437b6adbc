use serde::{Deserialize, Serialize};

use super::{ApiClass, Trace};

/// Cumulative quantities for one class of calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassTotals {
    pub count: u64,
    pub payload_req: u64,
    pub payload_resp: u64,
    pub gpu_exec_us: f64,
    pub local_exec_us: f64,
}

impl ClassTotals {
    fn add(&mut self, other: &ClassTotals) {
        self.count += other.count;
        self.payload_req += other.payload_req;
        self.payload_resp += other.payload_resp;
        self.gpu_exec_us += other.gpu_exec_us;
        self.local_exec_us += other.local_exec_us;
    }
}

/// Per-effective-class aggregates of a trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    #[serde(rename = "async")]
    pub async_calls: ClassTotals,
    #[serde(rename = "sync")]
    pub sync_calls: ClassTotals,
    #[serde(rename = "local")]
    pub local_calls: ClassTotals,
    pub total: ClassTotals,
}

impl TraceSummary {
    pub fn class(&self, class: ApiClass) -> &ClassTotals {
        match class {
            ApiClass::Async => &self.async_calls,
            ApiClass::Sync => &self.sync_calls,
            ApiClass::Local => &self.local_calls,
        }
    }

    fn class_mut(&mut self, class: ApiClass) -> &mut ClassTotals {
        match class {
            ApiClass::Async => &mut self.async_calls,
            ApiClass::Sync => &mut self.sync_calls,
            ApiClass::Local => &mut self.local_calls,
        }
    }

    /// Cumulative API time of a class as a client observes it: device time
    /// for remote classes, shadow execution time for local ones.
    pub fn api_time_us(&self, class: ApiClass) -> f64 {
        let t = self.class(class);
        match class {
            ApiClass::Local => t.local_exec_us,
            _ => t.gpu_exec_us,
        }
    }

    pub fn total_api_time_us(&self) -> f64 {
        ApiClass::ALL.iter().map(|&c| self.api_time_us(c)).sum()
    }
}

pub fn summarize(trace: &Trace) -> TraceSummary {
    let mut s = TraceSummary::default();
    for call in trace.calls() {
        let bucket = s.class_mut(call.class);
        bucket.count += 1;
        bucket.payload_req += call.payload_req;
        bucket.payload_resp += call.payload_resp;
        bucket.gpu_exec_us += call.gpu_exec_us;
        bucket.local_exec_us += call.local_exec_us;
    }
    let mut total = ClassTotals::default();
    for class in ApiClass::ALL {
        total.add(s.class(class));
    }
    s.total = total;
    s
}
