use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use animaxkit::pipeline::FrameMetrics;
use animaxkit::{Error, ErrorClass};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Serialize)]
pub struct ErrorInfo {
    pub class: &'static str,
    pub message: String,
}

/// Report emitted for every run, successful or not.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub seed: u64,
    pub threads: usize,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub status: &'static str,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
    /// Wall-clock seconds per stage; the only nondeterministic field.
    pub timings_s: BTreeMap<String, f64>,
    pub frames: Vec<FrameMetrics>,
    pub metrics: BTreeMap<String, Value>,
    #[serde(skip)]
    clock: Option<(String, Instant)>,
}

pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Io => 2,
        ErrorClass::Validation => 3,
        ErrorClass::Numerical => 4,
    }
}

fn class_name(class: ErrorClass) -> &'static str {
    match class {
        ErrorClass::Io => "io",
        ErrorClass::Validation => "validation",
        ErrorClass::Numerical => "numerical",
    }
}

impl RunReport {
    pub fn new(command: &str, seed: u64, threads: usize) -> Self {
        Self {
            command: command.to_string(),
            seed,
            threads,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            status: "ok",
            exit_code: 0,
            error: None,
            timings_s: BTreeMap::new(),
            frames: Vec::new(),
            metrics: BTreeMap::new(),
            clock: None,
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.to_string(), path.display().to_string());
    }

    pub fn output(&mut self, name: &str, path: &Path) {
        self.outputs.insert(name.to_string(), path.display().to_string());
    }

    pub fn metric(&mut self, name: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.metrics.insert(name.to_string(), v);
    }

    /// Starts timing `stage`, closing the previous one.
    pub fn stage(&mut self, stage: &str) {
        self.end_stage();
        self.clock = Some((stage.to_string(), Instant::now()));
    }

    pub fn end_stage(&mut self) {
        if let Some((name, t0)) = self.clock.take() {
            *self.timings_s.entry(name).or_insert(0.0) += t0.elapsed().as_secs_f64();
        }
    }

    pub fn fail(&mut self, err: &Error) {
        self.end_stage();
        let class = err.class();
        self.status = "error";
        self.exit_code = exit_code(class);
        self.error = Some(ErrorInfo {
            class: class_name(class),
            message: err.to_string(),
        });
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
