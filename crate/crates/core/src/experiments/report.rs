use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentKind;
use crate::error::Result;
use crate::numerics::stats::binomial_sigma;

/// Where a theory value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    Symmetry,
    LineIntegral,
    SurfaceIntegral,
    SlowOde,
    LevelCurvePeriod,
    GluingWeights,
    DecisionTable,
    Regression,
    Measurement,
    TorusRates,
    InvariantDensity,
}

impl Route {
    pub fn name(self) -> &'static str {
        match self {
            Route::Symmetry => "symmetry",
            Route::LineIntegral => "line-integral",
            Route::SurfaceIntegral => "surface-integral",
            Route::SlowOde => "slow-ode",
            Route::LevelCurvePeriod => "level-curve-period",
            Route::GluingWeights => "gluing-weights",
            Route::DecisionTable => "decision-table",
            Route::Regression => "regression",
            Route::Measurement => "measurement",
            Route::TorusRates => "torus-rates",
            Route::InvariantDensity => "invariant-density",
        }
    }
}

/// Pass/fail rule applied to a row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum Gate {
    /// `|estimate - theory| ≤ k se`.
    Sigma { k: f64 },
    /// `|estimate - theory| ≤ tol |theory|`.
    Relative { tol: f64 },
    /// `|estimate - theory| ≤ tol`.
    Absolute { tol: f64 },
    AtLeast { min: f64 },
    AtMost { max: f64 },
    Within { lo: f64, hi: f64 },
}

impl Gate {
    pub fn describe(&self) -> String {
        match self {
            Gate::Sigma { k } => format!("within {k} se"),
            Gate::Relative { tol } => format!("rel <= {tol}"),
            Gate::Absolute { tol } => format!("abs <= {tol}"),
            Gate::AtLeast { min } => format!(">= {min}"),
            Gate::AtMost { max } => format!("<= {max}"),
            Gate::Within { lo, hi } => format!("in [{lo:.4}, {hi:.4}]"),
        }
    }
}

/// Non-finite numbers travel as JSON `null`.
mod nullable {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// One cell of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub label: String,
    pub params: BTreeMap<String, f64>,
    pub n: usize,
    #[serde(with = "nullable")]
    pub estimate: f64,
    /// Standard error used by the gate; for fractions it is the binomial error at the theory value.
    #[serde(with = "nullable")]
    pub se: f64,
    pub theory: Option<f64>,
    pub route: Route,
    pub gate: Option<Gate>,
    pub pass: Option<bool>,
}

impl Row {
    pub fn new(label: &str, estimate: f64, route: Route) -> Self {
        Self {
            label: label.to_string(),
            params: BTreeMap::new(),
            n: 0,
            estimate,
            se: f64::NAN,
            theory: None,
            route,
            gate: None,
            pass: None,
        }
    }

    /// Fraction `k/n` with the binomial error at `theory`.
    pub fn fraction(label: &str, k: usize, n: usize, theory: f64, route: Route) -> Self {
        let est = if n == 0 { f64::NAN } else { k as f64 / n as f64 };
        Self::new(label, est, route).n(n).se(binomial_sigma(theory, n.max(1))).theory(theory)
    }

    pub fn param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn se(mut self, se: f64) -> Self {
        self.se = se;
        self
    }

    pub fn theory(mut self, value: f64) -> Self {
        self.theory = Some(value);
        self
    }

    pub fn gate(mut self, gate: Gate) -> Self {
        self.gate = Some(gate);
        self
    }

    pub fn gate_if(self, on: bool, gate: Gate) -> Self {
        if on {
            self.gate(gate)
        } else {
            self
        }
    }

    /// Evaluates the gate from the stored numbers.
    pub fn check(&self) -> Option<bool> {
        let gate = self.gate?;
        let e = self.estimate;
        if !e.is_finite() {
            return Some(false);
        }
        let diff = || self.theory.map(|t| (e - t).abs());
        Some(match gate {
            Gate::Sigma { k } => diff().is_some_and(|d| d <= k * self.se),
            Gate::Relative { tol } => diff().is_some_and(|d| d <= tol * self.theory.unwrap().abs()),
            Gate::Absolute { tol } => diff().is_some_and(|d| d <= tol),
            Gate::AtLeast { min } => e >= min,
            Gate::AtMost { max } => e <= max,
            Gate::Within { lo, hi } => e >= lo && e <= hi,
        })
    }

    pub fn has(&self, key: &str, value: f64) -> bool {
        self.params.get(key).is_some_and(|v| (v - value).abs() <= 1e-12 * value.abs().max(1.0))
    }

    fn params_text(&self) -> String {
        self.params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
    }
}

/// Outcome of one Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: String,
    pub run: usize,
    pub outcome: Option<usize>,
    #[serde(with = "nullable")]
    pub time: f64,
    #[serde(with = "nullable")]
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub rows: Vec<Row>,
    pub records: Vec<RunRecord>,
    pub notes: Vec<String>,
}

impl StatReport {
    pub fn new(kind: ExperimentKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            rows: Vec::new(),
            records: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn push(&mut self, mut row: Row) {
        row.pass = row.check();
        self.rows.push(row);
    }

    pub fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    /// Whether every gated row passes.
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass != Some(false))
    }

    pub fn rows_labeled<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a Row> + 'a {
        self.rows.iter().filter(move |r| r.label == label)
    }

    /// First row with the label and all the given parameter values.
    pub fn find(&self, label: &str, params: &[(&str, f64)]) -> Option<&Row> {
        self.rows.iter().find(|r| r.label == label && params.iter().all(|(k, v)| r.has(k, *v)))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["label", "params", "n", "estimate", "se", "theory", "route", "gate", "pass"])?;
        for r in &self.rows {
            out.write_record([
                r.label.clone(),
                r.params_text(),
                r.n.to_string(),
                r.estimate.to_string(),
                r.se.to_string(),
                r.theory.map(|t| t.to_string()).unwrap_or_default(),
                r.route.name().to_string(),
                r.gate.map(|g| g.describe()).unwrap_or_default(),
                r.pass.map(|p| p.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// One `(row, label, quantity, value)` line per number, for external plotting.
    pub fn write_long_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["row", "label", "quantity", "value"])?;
        for (i, r) in self.rows.iter().enumerate() {
            let mut put = |q: String, v: f64| out.write_record([i.to_string(), r.label.clone(), q, v.to_string()]);
            for (k, v) in &r.params {
                put(k.clone(), *v)?;
            }
            put("estimate".into(), r.estimate)?;
            put("se".into(), r.se)?;
            if let Some(t) = r.theory {
                put("theory".into(), t)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for rec in &self.records {
            writeln!(w, "{}", serde_json::to_string(rec)?)?;
        }
        Ok(())
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment {} (seed {})", self.kind.name(), self.seed);
        for r in &self.rows {
            let status = match r.pass {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "    ",
            };
            let theory = r.theory.map(|t| format!("{t:.6}")).unwrap_or_else(|| "-".into());
            let se = if r.se.is_finite() { format!(" ± {:.2e}", r.se) } else { String::new() };
            let gate = r.gate.map(|g| format!("  [{}]", g.describe())).unwrap_or_default();
            let _ = writeln!(
                s,
                "{status} {:<22} {:<32} est {:.6}{se}  theory {theory} ({}){gate}",
                r.label,
                r.params_text(),
                r.estimate,
                r.route.name()
            );
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }

    /// Writes `report.csv`, `long.csv`, `runs.jsonl`, `report.json` and `report.txt` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join("report.csv"))?)?;
        self.write_long_csv(std::fs::File::create(dir.join("long.csv"))?)?;
        self.write_jsonl(std::io::BufWriter::new(std::fs::File::create(dir.join("runs.jsonl"))?))?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        std::fs::write(dir.join("report.txt"), self.text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gates_follow_the_stored_numbers() {
        let r = Row::fraction("f", 520, 1000, 0.5, Route::Symmetry).gate(Gate::Sigma { k: 3.0 });
        assert_eq!(r.check(), Some(true));
        let r = Row::fraction("f", 560, 1000, 0.5, Route::Symmetry).gate(Gate::Sigma { k: 3.0 });
        assert_eq!(r.check(), Some(false));
        let r = Row::new("x", 1.04, Route::Measurement).theory(1.0).gate(Gate::Relative { tol: 0.05 });
        assert_eq!(r.check(), Some(true));
        let r = Row::new("x", f64::NAN, Route::Measurement).gate(Gate::AtMost { max: 1.0 });
        assert_eq!(r.check(), Some(false));
        assert_eq!(Row::new("x", 0.0, Route::Measurement).check(), None);
    }

    #[test]
    fn outputs_are_written_and_parse_back() {
        let mut rep = StatReport::new(ExperimentKind::Branching, 3);
        rep.push(Row::fraction("well-fraction", 10, 20, 0.5, Route::Symmetry).param("eps", 1e-3).gate(Gate::Sigma { k: 3.0 }));
        rep.push(Row::new("censored", 0.0, Route::Measurement).se(0.0));
        rep.records.push(RunRecord { cell: "a".into(), run: 0, outcome: Some(1), time: 0.5, value: 0.1 });
        let dir = tempfile::tempdir().unwrap();
        rep.write_to_dir(dir.path()).unwrap();
        let mut rd = csv::Reader::from_path(dir.path().join("report.csv")).unwrap();
        let recs: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(recs.len(), 2);
        assert_eq!(&recs[0][8], "true");
        let back: StatReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, rep);
        let lines = std::fs::read_to_string(dir.path().join("runs.jsonl")).unwrap();
        let rec: RunRecord = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
        assert_eq!(rec.outcome, Some(1));
        assert!(rep.find("well-fraction", &[("eps", 1e-3)]).is_some());
        assert!(rep.passed());
    }
}
