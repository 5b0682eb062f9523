//! Machine-readable run reports.
//!
//! Every map is a `BTreeMap` and the struct fields are declared in
//! alphabetical order, so the JSON text has sorted keys throughout. Wall-clock
//! numbers live in `timing` and are left out of [`Report::canonical_json`],
//! which is the form compared across repeated runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cardio_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Echo of every setting that influenced the run, seeds included.
    pub config: BTreeMap<String, Value>,
    pub metrics: BTreeMap<String, f64>,
    /// Per-epoch or per-item sequences.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub series: BTreeMap<String, Vec<f64>>,
    pub subcommand: String,
    #[serde(default)]
    pub timing: BTreeMap<String, f64>,
    pub verdicts: BTreeMap<String, bool>,
}

impl Report {
    pub fn new(subcommand: &str) -> Self {
        Report { subcommand: subcommand.to_string(), ..Default::default() }
    }

    pub fn config(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        let v = serde_json::to_value(value).expect("config values are plain data");
        self.config.insert(key.to_string(), v);
        self
    }

    pub fn metric(&mut self, key: &str, value: f64) -> &mut Self {
        self.metrics.insert(key.to_string(), value);
        self
    }

    pub fn series(&mut self, key: &str, values: Vec<f64>) -> &mut Self {
        self.series.insert(key.to_string(), values);
        self
    }

    pub fn timing(&mut self, key: &str, value: f64) -> &mut Self {
        self.timing.insert(key.to_string(), value);
        self
    }

    pub fn verdict(&mut self, key: &str, pass: bool) -> &mut Self {
        self.verdicts.insert(key.to_string(), pass);
        self
    }

    /// True when every verdict passed (vacuously true with none).
    pub fn passed(&self) -> bool {
        self.verdicts.values().all(|v| *v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports hold finite numbers") + "\n"
    }

    /// The report without timings; identical across runs with the same
    /// flags, seed and thread count.
    pub fn canonical_json(&self) -> String {
        Report { timing: BTreeMap::new(), ..self.clone() }.to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("<report>", e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// One line per metric and verdict, for the terminal.
    pub fn summary(&self) -> String {
        let mut s = format!("{}: {}\n", self.subcommand, if self.passed() { "PASS" } else { "FAIL" });
        for (k, v) in &self.metrics {
            let _ = writeln!(s, "  {k} = {v}");
        }
        for (k, v) in &self.timing {
            let _ = writeln!(s, "  {k} = {v:.3}");
        }
        for (k, v) in &self.verdicts {
            let _ = writeln!(s, "  [{}] {k}", if *v { "pass" } else { "FAIL" });
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let mut r = Report::new("demo");
        r.config("seed", 42u64)
            .config("dims", [4, 4, 4])
            .metric("zeta", 0.1 + 0.2)
            .metric("alpha", 1e-300)
            .series("curve", vec![3.0, 2.5])
            .timing("wall", 12.5)
            .verdict("ok", true);
        r
    }

    #[test]
    fn keys_are_sorted() {
        let json = sample().to_json();
        let pos = |k: &str| json.find(k).unwrap();
        assert!(pos("\"config\"") < pos("\"metrics\""));
        assert!(pos("\"metrics\"") < pos("\"subcommand\""));
        assert!(pos("\"alpha\"") < pos("\"zeta\""));
        assert!(pos("\"dims\"") < pos("\"seed\""));
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let json = sample().to_json();
        let back = Report::from_json(&json).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.to_json(), json);
    }

    #[test]
    fn any_finite_float_survives_a_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut r = Report::new("floats");
        let values: Vec<f64> = (0..2000).map(|_| f64::from_bits(rng.gen::<u64>() >> 2) * rng.gen_range(-1.0..1.0)).collect();
        r.series("x", values).metric("third", 1.0 / 3.0).metric("tiny", 5e-324);
        let json = r.to_json();
        let back = Report::from_json(&json).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json(), json);
    }

    #[test]
    fn canonical_form_drops_timing_only() {
        let mut a = sample();
        let mut b = sample();
        a.timing("wall", 1.0);
        b.timing("wall", 2.0);
        assert_eq!(a.canonical_json(), b.canonical_json());
        assert!(!a.canonical_json().contains("wall"));
        b.metric("zeta", 0.0);
        assert_ne!(a.canonical_json(), b.canonical_json());
    }

    #[test]
    fn verdicts_gate_pass() {
        let mut r = Report::new("x");
        assert!(r.passed());
        r.verdict("a", true).verdict("b", false);
        assert!(!r.passed());
        assert!(r.summary().contains("[FAIL] b"));
    }
}
