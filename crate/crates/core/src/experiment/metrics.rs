//! JSON-lines metrics output.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Name of the only field allowed to differ between two runs with the same seed.
pub const WALL_CLOCK_FIELD: &str = "wall_clock_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordKind {
    Epoch,
    Final,
    Failed,
}

/// One line of training output. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub kind: RecordKind,
    pub step: u64,
    pub epoch: usize,
    /// Mean per-step loss components over the epoch.
    pub loss: BTreeMap<String, f64>,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub wall_clock_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Writes each value as one compact JSON object per line.
pub struct JsonlWriter<W: Write> {
    out: W,
}

impl<W: Write> JsonlWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn write_all<'a, T: Serialize + 'a>(&mut self, values: impl IntoIterator<Item = &'a T>) -> Result<()> {
        for v in values {
            self.write(v)?;
        }
        Ok(())
    }

    pub fn into_inner(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Parses JSON lines and drops wall-clock fields, for reproducibility checks.
pub fn strip_wall_clock(jsonl: &str) -> Result<Vec<serde_json::Value>> {
    jsonl
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l)?;
            if let Some(obj) = v.as_object_mut() {
                obj.remove(WALL_CLOCK_FIELD);
            }
            Ok(v)
        })
        .collect()
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_keep_field_order() {
        let r = MetricsRecord {
            run_id: "r0".into(),
            kind: RecordKind::Epoch,
            step: 3,
            epoch: 1,
            loss: [("b".to_string(), 1.0), ("a".to_string(), 2.0)].into_iter().collect(),
            val_accuracy: Some(0.5),
            test_accuracy: None,
            wall_clock_s: 0.25,
            message: None,
        };
        let mut w = JsonlWriter::new(Vec::new());
        w.write(&r).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(
            text,
            "{\"run_id\":\"r0\",\"kind\":\"epoch\",\"step\":3,\"epoch\":1,\"loss\":{\"a\":2.0,\"b\":1.0},\
             \"val_accuracy\":0.5,\"test_accuracy\":null,\"wall_clock_s\":0.25}\n"
        );
        let stripped = strip_wall_clock(&text).unwrap();
        assert!(stripped[0].get(WALL_CLOCK_FIELD).is_none());
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
        assert!(mean_std(&[]).0.is_nan());
    }
}
