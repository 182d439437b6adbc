//! Mock GPU with a single serial stream.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a resource on the device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RealId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    Buffer,
    TensorDescriptor,
}

#[derive(Debug, Error, PartialEq)]
pub enum DeviceError {
    #[error("submission at {submit} precedes previous submission at {previous}")]
    OutOfOrder { submit: f64, previous: f64 },
    #[error("resource {0:?} already exists")]
    Duplicate(RealId),
    #[error("resource {0:?} does not exist")]
    Missing(RealId),
}

/// One executed operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecRecord {
    pub name: String,
    /// Request seq of the operation on its connection.
    pub seq: u64,
    pub submit: f64,
    pub start: f64,
    pub finish: f64,
    /// Remote submit time minus local submit time, when known.
    pub delay_vs_local: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct DeviceTimeline {
    busy_until: f64,
    last_submit: f64,
    busy_total: f64,
    log: Vec<ExecRecord>,
    resources: BTreeMap<RealId, ResourceKind>,
}

impl DeviceTimeline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn busy_until(&self) -> f64 {
        self.busy_until
    }

    /// Sum of execution times of everything submitted.
    pub fn busy_total(&self) -> f64 {
        self.busy_total
    }

    pub fn log(&self) -> &[ExecRecord] {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut [ExecRecord] {
        &mut self.log
    }

    pub fn resources(&self) -> &BTreeMap<RealId, ResourceKind> {
        &self.resources
    }

    /// Runs an operation after everything already submitted; returns its
    /// finish time. Every referenced resource must exist.
    pub fn submit(
        &mut self,
        name: &str,
        seq: u64,
        exec_us: f64,
        submit_time: f64,
        refs: &[RealId],
    ) -> Result<f64, DeviceError> {
        if submit_time < self.last_submit {
            return Err(DeviceError::OutOfOrder {
                submit: submit_time,
                previous: self.last_submit,
            });
        }
        if let Some(missing) = refs.iter().find(|r| !self.resources.contains_key(r)) {
            return Err(DeviceError::Missing(*missing));
        }
        self.last_submit = submit_time;
        let start = submit_time.max(self.busy_until);
        let finish = start + exec_us;
        self.busy_until = finish;
        self.busy_total += exec_us;
        self.log.push(ExecRecord {
            name: name.to_string(),
            seq,
            submit: submit_time,
            start,
            finish,
            delay_vs_local: None,
        });
        Ok(finish)
    }

    pub fn create_resource(&mut self, kind: ResourceKind, id: RealId) -> Result<(), DeviceError> {
        if self.resources.contains_key(&id) {
            return Err(DeviceError::Duplicate(id));
        }
        self.resources.insert(id, kind);
        Ok(())
    }

    pub fn destroy_resource(&mut self, id: RealId) -> Result<(), DeviceError> {
        self.resources.remove(&id).map(|_| ()).ok_or(DeviceError::Missing(id))
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    name: &'a str,
    submit: f64,
    start: f64,
    finish: f64,
    delay_vs_local: Option<f64>,
}

pub fn write_log_csv<W: Write>(log: &[ExecRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in log {
        w.serialize(CsvRow {
            name: &r.name,
            submit: r.submit,
            start: r.start,
            finish: r.finish,
            delay_vs_local: r.delay_vs_local,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idle_then_queued() {
        let mut d = DeviceTimeline::new();
        assert_eq!(d.submit("a", 0, 5.0, 10.0, &[]).unwrap(), 15.0);
        let mut d = DeviceTimeline::new();
        d.submit("a", 0, 20.0, 0.0, &[]).unwrap();
        assert_eq!(d.submit("b", 1, 5.0, 10.0, &[]).unwrap(), 25.0);
    }

    #[test]
    fn zero_duration_same_instant() {
        let mut d = DeviceTimeline::new();
        assert_eq!(d.submit("a", 0, 0.0, 3.0, &[]).unwrap(), 3.0);
        assert_eq!(d.submit("b", 1, 0.0, 3.0, &[]).unwrap(), 3.0);
        let names: Vec<_> = d.log().iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
    }

    #[test]
    fn out_of_order_rejected() {
        let mut d = DeviceTimeline::new();
        d.submit("a", 0, 1.0, 5.0, &[]).unwrap();
        assert!(matches!(d.submit("b", 1, 1.0, 4.0, &[]), Err(DeviceError::OutOfOrder { .. })));
    }

    #[test]
    fn resources() {
        let mut d = DeviceTimeline::new();
        d.create_resource(ResourceKind::Buffer, RealId(1)).unwrap();
        assert_eq!(
            d.create_resource(ResourceKind::Buffer, RealId(1)),
            Err(DeviceError::Duplicate(RealId(1)))
        );
        assert!(d.submit("k", 0, 1.0, 0.0, &[RealId(1)]).is_ok());
        assert_eq!(d.submit("k", 1, 1.0, 0.0, &[RealId(2)]), Err(DeviceError::Missing(RealId(2))));
        d.destroy_resource(RealId(1)).unwrap();
        assert!(d.resources().is_empty());
        assert_eq!(d.destroy_resource(RealId(9)), Err(DeviceError::Missing(RealId(9))));
    }

    #[test]
    fn csv_export() {
        let mut d = DeviceTimeline::new();
        d.submit("k", 0, 2.0, 1.0, &[]).unwrap();
        d.log_mut()[0].delay_vs_local = Some(0.5);
        let mut buf = Vec::new();
        write_log_csv(d.log(), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "name,submit,start,finish,delay_vs_local\nk,1.0,1.0,3.0,0.5\n"
        );
    }
}
