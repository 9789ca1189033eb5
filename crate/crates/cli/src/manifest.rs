use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::time::Duration;

/// Ordered `key=value` record of one run. Keys starting with `time_` hold
/// wall-clock measurements; everything else is deterministic given the flags.
#[derive(Debug, Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(subcommand: &str) -> Self {
        let mut m = Manifest::default();
        m.set("subcommand", subcommand);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn set_opt(&mut self, key: &str, value: Option<impl Display>) {
        match value {
            Some(v) => self.set(key, v),
            None => self.set(key, "none"),
        }
    }

    pub fn time(&mut self, stage: &str, elapsed: Duration) {
        self.set(&format!("time_{stage}_s"), format!("{:.6}", elapsed.as_secs_f64()));
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.render())
    }
}
