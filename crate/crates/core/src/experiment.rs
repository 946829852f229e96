//! Solo vs. assisted implementation-time measurements.
//!
//! Two summary statistics are reported because they disagree on the
//! published data:
//!
//! * `total_change_pct` = (Σ assisted − Σ solo) / Σ solo × 100, the headline
//!   figure (−23.97 % on the reference table, i.e. "24% decrease");
//! * `per_problem_mean_change_pct` = mean over problems of
//!   (assisted − solo) / solo × 100 (+2.91 % on the same table).

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("minutes must be a positive finite number, got {0}")]
    NonPositiveMinutes(f64),
    #[error("problem label must not be empty")]
    EmptyLabel,
    #[error("a {1} timing for `{0}` is already recorded")]
    DuplicateRecord(String, Condition),
    #[error("missing timings: {}", format_missing(.0))]
    IncompletePairs(Vec<(String, Condition)>),
    #[error("no timings recorded")]
    EmptyStore,
    #[error("timer for `{0}` ({1}) is {2}")]
    TimerState(String, Condition, &'static str),
    #[error("invalid table: {0}")]
    Parse(String),
}

fn format_missing(cells: &[(String, Condition)]) -> String {
    cells
        .iter()
        .map(|(p, c)| format!("{p} ({c})"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Solo,
    Assisted,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Solo => "solo",
            Condition::Assisted => "assisted",
        })
    }
}

impl FromStr for Condition {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "solo" => Ok(Condition::Solo),
            "assisted" => Ok(Condition::Assisted),
            other => Err(ExperimentError::Parse(format!("unknown condition `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub problem_label: String,
    pub condition: Condition,
    pub minutes: f64,
}

impl TimingRecord {
    pub fn new(problem_label: impl Into<String>, condition: Condition, minutes: f64) -> Self {
        Self {
            problem_label: problem_label.into(),
            condition,
            minutes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub total_solo: f64,
    pub total_assisted: f64,
    pub total_change_pct: f64,
    pub per_problem_mean_change_pct: f64,
    /// `total_change_pct` rounded for display, e.g. "24% decrease".
    pub headline: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

impl FromStr for TableFormat {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            other => Err(ExperimentError::Parse(format!("unknown table format `{other}`"))),
        }
    }
}

pub const TABLE_CSV_HEADER: [&str; 3] = ["problem", "solo_minutes", "assisted_minutes"];
const STORE_CSV_HEADER: [&str; 3] = ["problem", "condition", "minutes"];

/// Timing records in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimingStore {
    records: Vec<TimingRecord>,
}

impl TimingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[TimingRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&mut self, record: TimingRecord) -> Result<(), ExperimentError> {
        if !(record.minutes.is_finite() && record.minutes > 0.0) {
            return Err(ExperimentError::NonPositiveMinutes(record.minutes));
        }
        if record.problem_label.trim().is_empty() {
            return Err(ExperimentError::EmptyLabel);
        }
        if self.get(&record.problem_label, record.condition).is_some() {
            return Err(ExperimentError::DuplicateRecord(record.problem_label, record.condition));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn get(&self, problem: &str, condition: Condition) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.problem_label == problem && r.condition == condition)
            .map(|r| r.minutes)
    }

    /// Problem labels in order of first appearance.
    pub fn problems(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.problem_label.as_str()) {
                out.push(&r.problem_label);
            }
        }
        out
    }

    pub fn summarize(&self) -> Result<TimingSummary, ExperimentError> {
        if self.records.is_empty() {
            return Err(ExperimentError::EmptyStore);
        }
        let mut missing = Vec::new();
        let mut pairs = Vec::new();
        for p in self.problems() {
            match (self.get(p, Condition::Solo), self.get(p, Condition::Assisted)) {
                (Some(s), Some(a)) => pairs.push((s, a)),
                (s, a) => {
                    if s.is_none() {
                        missing.push((p.to_string(), Condition::Solo));
                    }
                    if a.is_none() {
                        missing.push((p.to_string(), Condition::Assisted));
                    }
                }
            }
        }
        if !missing.is_empty() {
            return Err(ExperimentError::IncompletePairs(missing));
        }

        let total_solo: f64 = pairs.iter().map(|(s, _)| s).sum();
        let total_assisted: f64 = pairs.iter().map(|(_, a)| a).sum();
        let total_change_pct = (total_assisted - total_solo) / total_solo * 100.0;
        let per_problem_mean_change_pct =
            pairs.iter().map(|(s, a)| (a - s) / s * 100.0).sum::<f64>() / pairs.len() as f64;

        Ok(TimingSummary {
            total_solo,
            total_assisted,
            total_change_pct,
            per_problem_mean_change_pct,
            headline: headline(total_change_pct),
        })
    }

    /// One row per problem in insertion order; a missing cell renders empty.
    pub fn export_table(&self, format: TableFormat) -> Result<String, ExperimentError> {
        if self.records.is_empty() {
            return Err(ExperimentError::EmptyStore);
        }
        let cell = |p: &str, c| self.get(p, c).map(|m| m.to_string()).unwrap_or_default();
        match format {
            TableFormat::Markdown => {
                let mut out = String::from("| Problem | Solo (minutes) | AI assisted (minutes) |\n|---|---|---|\n");
                for p in self.problems() {
                    out.push_str(&format!(
                        "| {} | {} | {} |\n",
                        p.replace('|', "\\|"),
                        cell(p, Condition::Solo),
                        cell(p, Condition::Assisted)
                    ));
                }
                Ok(out)
            }
            TableFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(TABLE_CSV_HEADER).map_err(csv_err)?;
                for p in self.problems() {
                    w.write_record([p.to_string(), cell(p, Condition::Solo), cell(p, Condition::Assisted)])
                        .map_err(csv_err)?;
                }
                csv_string(w)
            }
        }
    }

    /// Reads the wide CSV produced by `export_table(TableFormat::Csv)`.
    pub fn from_table_csv(text: &str) -> Result<Self, ExperimentError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        check_header(&mut rdr, &TABLE_CSV_HEADER)?;
        let mut store = TimingStore::new();
        for row in rdr.records() {
            let row = row.map_err(csv_err)?;
            let problem = row.get(0).unwrap_or_default();
            for (col, cond) in [(1, Condition::Solo), (2, Condition::Assisted)] {
                let raw = row.get(col).unwrap_or_default().trim();
                if !raw.is_empty() {
                    store.record(TimingRecord::new(problem, cond, parse_minutes(raw)?))?;
                }
            }
        }
        Ok(store)
    }

    /// Long-format CSV (`problem,condition,minutes`) used for persistence;
    /// unlike the table it can hold unpaired records.
    pub fn to_store_csv(&self) -> Result<String, ExperimentError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(STORE_CSV_HEADER).map_err(csv_err)?;
        for r in &self.records {
            w.write_record([r.problem_label.clone(), r.condition.to_string(), r.minutes.to_string()])
                .map_err(csv_err)?;
        }
        csv_string(w)
    }

    pub fn from_store_csv(text: &str) -> Result<Self, ExperimentError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        check_header(&mut rdr, &STORE_CSV_HEADER)?;
        let mut store = TimingStore::new();
        for row in rdr.records() {
            let row = row.map_err(csv_err)?;
            let condition = row.get(1).unwrap_or_default().parse()?;
            let minutes = parse_minutes(row.get(2).unwrap_or_default())?;
            store.record(TimingRecord::new(row.get(0).unwrap_or_default(), condition, minutes))?;
        }
        Ok(store)
    }
}

/// Rounds to whole percent: −23.97 becomes "24% decrease".
pub fn headline(total_change_pct: f64) -> String {
    let rounded = total_change_pct.abs().round();
    if rounded == 0.0 {
        "no change in implementation time".to_string()
    } else if total_change_pct < 0.0 {
        format!("{rounded}% decrease in implementation time")
    } else {
        format!("{rounded}% increase in implementation time")
    }
}

fn parse_minutes(raw: &str) -> Result<f64, ExperimentError> {
    raw.trim()
        .parse()
        .map_err(|_| ExperimentError::Parse(format!("`{raw}` is not a number")))
}

fn check_header<R: std::io::Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<(), ExperimentError> {
    let header = rdr.headers().map_err(csv_err)?;
    if header.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(ExperimentError::Parse(format!(
            "expected header `{}`",
            expected.join(",")
        )));
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> ExperimentError {
    ExperimentError::Parse(e.to_string())
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String, ExperimentError> {
    let bytes = w.into_inner().map_err(|e| ExperimentError::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ExperimentError::Parse(e.to_string()))
}

/// Manual timer with pause support, so thinking time can be left out of a
/// measurement.
#[derive(Debug, Clone)]
pub struct Stopwatch {
    problem_label: String,
    condition: Condition,
    accumulated: Duration,
    running_since: Option<Instant>,
}

impl Stopwatch {
    pub fn start(problem_label: impl Into<String>, condition: Condition, now: Instant) -> Self {
        Self {
            problem_label: problem_label.into(),
            condition,
            accumulated: Duration::ZERO,
            running_since: Some(now),
        }
    }

    pub fn problem_label(&self) -> &str {
        &self.problem_label
    }

    pub fn condition(&self) -> Condition {
        self.condition
    }

    pub fn is_running(&self) -> bool {
        self.running_since.is_some()
    }

    pub fn elapsed(&self, now: Instant) -> Duration {
        self.accumulated + self.running_since.map_or(Duration::ZERO, |t| now.saturating_duration_since(t))
    }

    pub fn pause(&mut self, now: Instant) -> Result<(), ExperimentError> {
        match self.running_since.take() {
            Some(t) => {
                self.accumulated += now.saturating_duration_since(t);
                Ok(())
            }
            None => Err(self.state_err("already paused")),
        }
    }

    pub fn resume(&mut self, now: Instant) -> Result<(), ExperimentError> {
        if self.running_since.is_some() {
            return Err(self.state_err("not paused"));
        }
        self.running_since = Some(now);
        Ok(())
    }

    pub fn stop(self, now: Instant) -> TimingRecord {
        let minutes = self.elapsed(now).as_secs_f64() / 60.0;
        TimingRecord::new(self.problem_label, self.condition, minutes)
    }

    fn state_err(&self, what: &'static str) -> ExperimentError {
        ExperimentError::TimerState(self.problem_label.clone(), self.condition, what)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> TimingStore {
        let mut s = TimingStore::new();
        for (p, solo, ai) in [("Problem 1", 23.0, 45.0), ("Problem 2", 66.0, 21.0), ("Problem 3", 32.0, 26.0)] {
            s.record(TimingRecord::new(p, Condition::Solo, solo)).unwrap();
            s.record(TimingRecord::new(p, Condition::Assisted, ai)).unwrap();
        }
        s
    }

    #[test]
    fn record_validation() {
        let mut s = TimingStore::new();
        s.record(TimingRecord::new("Problem 1", Condition::Solo, 23.0)).unwrap();
        assert_eq!(
            s.record(TimingRecord::new("Problem 1", Condition::Solo, 23.0)),
            Err(ExperimentError::DuplicateRecord("Problem 1".into(), Condition::Solo))
        );
        assert_eq!(
            s.record(TimingRecord::new("Problem 1", Condition::Solo, -5.0)),
            Err(ExperimentError::NonPositiveMinutes(-5.0))
        );
        assert!(s.record(TimingRecord::new("Problem 1", Condition::Assisted, f64::NAN)).is_err());
        assert_eq!(
            s.record(TimingRecord::new(" ", Condition::Assisted, 1.0)),
            Err(ExperimentError::EmptyLabel)
        );
    }

    #[test]
    fn fixture_totals() {
        let sum = fixture().summarize().unwrap();
        assert_eq!(sum.total_solo, 121.0);
        assert_eq!(sum.total_assisted, 92.0);
        // (92 - 121) / 121 * 100 = -2900/121
        assert!((sum.total_change_pct - (-2900.0 / 121.0)).abs() < 1e-12);
        assert_eq!(sum.headline, "24% decrease in implementation time");
    }

    #[test]
    fn fixture_mean_of_ratios() {
        // (22/23 - 45/66 - 6/32) / 3 * 100, by hand: (95.652 - 68.182 - 18.75) / 3
        let expected = (22.0 / 23.0 - 45.0 / 66.0 - 6.0 / 32.0) / 3.0 * 100.0;
        let got = fixture().summarize().unwrap().per_problem_mean_change_pct;
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 2.91).abs() < 0.01);
    }

    #[test]
    fn identical_columns_mean_no_change() {
        let mut s = TimingStore::new();
        for (p, m) in [("a", 10.0), ("b", 7.5)] {
            s.record(TimingRecord::new(p, Condition::Solo, m)).unwrap();
            s.record(TimingRecord::new(p, Condition::Assisted, m)).unwrap();
        }
        let sum = s.summarize().unwrap();
        assert_eq!(sum.total_change_pct, 0.0);
        assert_eq!(sum.per_problem_mean_change_pct, 0.0);
        assert_eq!(sum.headline, "no change in implementation time");
    }

    #[test]
    fn incomplete_pairs_listed() {
        let mut s = fixture();
        s.record(TimingRecord::new("Problem 4", Condition::Assisted, 9.0)).unwrap();
        assert_eq!(
            s.summarize(),
            Err(ExperimentError::IncompletePairs(vec![("Problem 4".into(), Condition::Solo)]))
        );
        assert_eq!(TimingStore::new().summarize(), Err(ExperimentError::EmptyStore));
    }

    #[test]
    fn markdown_table() {
        let md = fixture().export_table(TableFormat::Markdown).unwrap();
        let rows: Vec<&str> = md.lines().skip(2).collect();
        assert_eq!(
            rows,
            ["| Problem 1 | 23 | 45 |", "| Problem 2 | 66 | 21 |", "| Problem 3 | 32 | 26 |"]
        );
        assert_eq!(TimingStore::new().export_table(TableFormat::Markdown), Err(ExperimentError::EmptyStore));
    }

    #[test]
    fn csv_table_round_trip() {
        let csv = fixture().export_table(TableFormat::Csv).unwrap();
        assert!(csv.starts_with("problem,solo_minutes,assisted_minutes\n"));
        assert_eq!(csv.lines().count(), 4);
        let back = TimingStore::from_table_csv(&csv).unwrap();
        assert_eq!(back.summarize(), fixture().summarize());
    }

    #[test]
    fn store_csv_keeps_unpaired_records() {
        let mut s = fixture();
        s.record(TimingRecord::new("Odd, \"quoted\"", Condition::Solo, 12.25)).unwrap();
        let text = s.to_store_csv().unwrap();
        assert_eq!(TimingStore::from_store_csv(&text).unwrap(), s);
        assert!(TimingStore::from_store_csv("a,b,c\n").is_err());
    }

    #[test]
    fn stopwatch_excludes_paused_time() {
        let t0 = Instant::now();
        let min = Duration::from_secs(60);
        let mut w = Stopwatch::start("Problem 1", Condition::Assisted, t0);
        w.pause(t0 + 10 * min).unwrap();
        assert!(w.pause(t0 + 11 * min).is_err());
        w.resume(t0 + 25 * min).unwrap();
        assert!(w.resume(t0 + 26 * min).is_err());
        let rec = w.stop(t0 + 30 * min);
        assert!((rec.minutes - 15.0).abs() < 1e-9);
        assert_eq!(rec.condition, Condition::Assisted);
    }
}
