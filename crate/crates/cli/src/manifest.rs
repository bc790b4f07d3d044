//! The JSON record written next to every run's artifacts.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use tilestitch::Error;

#[derive(Debug, Serialize)]
pub struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    argv: Vec<String>,
    inputs: Map<String, Value>,
    params: Map<String, Value>,
    /// Values the run computed rather than received.
    derived: Map<String, Value>,
    outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &'static str, argv: Vec<String>) -> Self {
        Self {
            tool: "tilestitch",
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv,
            inputs: Map::new(),
            params: Map::new(),
            derived: Map::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, key: &str, path: &Path) {
        self.inputs
            .insert(key.into(), Value::String(path.display().to_string()));
    }

    pub fn param(&mut self, key: &str, v: impl Serialize) {
        self.params.insert(key.into(), to_value(v));
    }

    pub fn derived(&mut self, key: &str, v: impl Serialize) {
        self.derived.insert(key.into(), to_value(v));
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.into());
    }

    pub fn write(&self, dir: &Path) -> Result<(), Error> {
        fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).expect("manifest values are plain JSON");
        fs::write(dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}

fn to_value(v: impl Serialize) -> Value {
    serde_json::to_value(v).expect("manifest values are plain JSON")
}
