//! Likert survey statistics per experience group: mean and standard
//! deviation for each of the 14 items, rendered as "M.MM (S.SS)" cells.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ITEMS: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExperienceGroup {
    Under1,
    OneToTwo,
    TwoToThree,
    ThreePlus,
    /// Pooled over every row; never an input label.
    All,
}

impl ExperienceGroup {
    /// Table row order.
    pub const ROWS: [ExperienceGroup; 5] = [
        ExperienceGroup::Under1,
        ExperienceGroup::OneToTwo,
        ExperienceGroup::TwoToThree,
        ExperienceGroup::ThreePlus,
        ExperienceGroup::All,
    ];

    /// Input label as written in the CSV.
    pub fn code(self) -> &'static str {
        match self {
            ExperienceGroup::Under1 => "lt1",
            ExperienceGroup::OneToTwo => "1-2",
            ExperienceGroup::TwoToThree => "2-3",
            ExperienceGroup::ThreePlus => "gt3",
            ExperienceGroup::All => "all",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ExperienceGroup::Under1 => "Less than 1 year",
            ExperienceGroup::OneToTwo => "1-2 years",
            ExperienceGroup::TwoToThree => "2-3 years",
            ExperienceGroup::ThreePlus => "More than 3 years",
            ExperienceGroup::All => "All",
        }
    }

    /// Parses one of the four concrete input labels.
    pub fn from_code(code: &str) -> Option<Self> {
        match code.trim() {
            "lt1" => Some(ExperienceGroup::Under1),
            "1-2" => Some(ExperienceGroup::OneToTwo),
            "2-3" => Some(ExperienceGroup::TwoToThree),
            "gt3" => Some(ExperienceGroup::ThreePlus),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikertResponse {
    pub participant_id: String,
    pub group: ExperienceGroup,
    pub answers: [u8; ITEMS],
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SurveyError {
    #[error("no responses")]
    EmptyInput,
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("CSV error: {0}")]
    Csv(String),
}

impl SurveyError {
    pub fn code(&self) -> &'static str {
        match self {
            SurveyError::EmptyInput => "EmptyInput",
            SurveyError::MalformedRow { .. } => "MalformedRow",
            SurveyError::Csv(_) => "Csv",
        }
    }
}

impl LikertResponse {
    /// Checks group and answer ranges. `row` is 1-based, for messages.
    pub fn new(
        participant_id: impl Into<String>,
        group: ExperienceGroup,
        answers: &[u8],
        row: usize,
    ) -> Result<Self, SurveyError> {
        let bad = |reason: String| SurveyError::MalformedRow { row, reason };
        if group == ExperienceGroup::All {
            return Err(bad("group \"all\" is computed, not an input label".into()));
        }
        let answers: [u8; ITEMS] = answers
            .try_into()
            .map_err(|_| bad(format!("expected {ITEMS} answers, found {}", answers.len())))?;
        if let Some((i, a)) = answers.iter().enumerate().find(|(_, a)| !(1..=5).contains(*a)) {
            return Err(bad(format!("q{} = {a} is outside 1..=5", i + 1)));
        }
        Ok(LikertResponse {
            participant_id: participant_id.into(),
            group,
            answers,
        })
    }
}

/// Reads `participant_id,group,q1..q14` rows.
pub fn parse_csv<R: Read>(input: R) -> Result<Vec<LikertResponse>, SurveyError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let headers = reader.headers().map_err(|e| SurveyError::Csv(e.to_string()))?.clone();
    let expected: Vec<String> = ["participant_id", "group"]
        .iter()
        .map(|s| s.to_string())
        .chain((1..=ITEMS).map(|i| format!("q{i}")))
        .collect();
    let found: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    if found != expected {
        return Err(SurveyError::Csv(format!(
            "header must be {}, found {}",
            expected.join(","),
            found.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| SurveyError::Csv(e.to_string()))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let bad = |reason: String| SurveyError::MalformedRow { row, reason };
        let group_code = record.get(1).unwrap_or("");
        let group = ExperienceGroup::from_code(group_code)
            .ok_or_else(|| bad(format!("unknown group {group_code:?}; expected lt1, 1-2, 2-3 or gt3")))?;
        let answers = record
            .iter()
            .skip(2)
            .enumerate()
            .map(|(k, f)| {
                f.parse::<u8>()
                    .map_err(|_| bad(format!("q{} = {f:?} is not an integer in 1..=5", k + 1)))
            })
            .collect::<Result<Vec<u8>, _>>()?;
        out.push(LikertResponse::new(record.get(0).unwrap_or(""), group, &answers, row)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdDivisor {
    /// n − 1.
    #[default]
    Sample,
    /// n.
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
    /// Sample SD is undefined for one response; `sd` is then 0.
    pub single_response: bool,
}

/// Answers are small integers, so the sums are exact and the mean is one
/// correctly rounded division. Pooled and per-group means of identical data
/// therefore agree bit for bit.
#[derive(Debug, Clone, Default)]
struct Sums {
    n: u64,
    sum: u64,
    sum_sq: u64,
}

impl Sums {
    fn push(&mut self, x: u8) {
        self.n += 1;
        self.sum += u64::from(x);
        self.sum_sq += u64::from(x) * u64::from(x);
    }

    fn cell(&self, divisor: SdDivisor) -> Cell {
        let n = self.n as f64;
        // n·Σx² − (Σx)² is n² times the population variance, exactly.
        let scaled = u128::from(self.n) * u128::from(self.sum_sq) - u128::from(self.sum) * u128::from(self.sum);
        let denom = match divisor {
            SdDivisor::Sample => self.n * self.n.saturating_sub(1),
            SdDivisor::Population => self.n * self.n,
        };
        let sd = if denom == 0 { 0.0 } else { (scaled as f64 / denom as f64).sqrt() };
        Cell {
            mean: self.sum as f64 / n,
            sd,
            n: self.n as usize,
            single_response: self.n == 1 && divisor == SdDivisor::Sample,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsTable {
    /// Keyed by (group, item) with items numbered 1..=14. Groups without
    /// responses have no cells.
    pub cells: BTreeMap<(ExperienceGroup, usize), Cell>,
    pub divisor: SdDivisor,
}

impl StatsTable {
    pub fn cell(&self, group: ExperienceGroup, item: usize) -> Option<&Cell> {
        self.cells.get(&(group, item))
    }

    /// Flat rows in table order, for JSON output.
    pub fn records(&self) -> Vec<CellRecord> {
        self.cells
            .iter()
            .map(|(&(group, item), c)| CellRecord {
                group: group.code(),
                item,
                mean: c.mean,
                sd: c.sd,
                n: c.n,
                single_response: c.single_response,
                formatted: format_cell(c.mean, c.sd),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRecord {
    pub group: &'static str,
    pub item: usize,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
    pub single_response: bool,
    pub formatted: String,
}

pub fn compute_stats(responses: &[LikertResponse], divisor: SdDivisor) -> Result<StatsTable, SurveyError> {
    if responses.is_empty() {
        return Err(SurveyError::EmptyInput);
    }
    let mut acc: BTreeMap<(ExperienceGroup, usize), Sums> = BTreeMap::new();
    for (row, r) in responses.iter().enumerate() {
        if r.group == ExperienceGroup::All {
            return Err(SurveyError::MalformedRow {
                row: row + 1,
                reason: "group \"all\" is computed, not an input label".into(),
            });
        }
        for (i, &a) in r.answers.iter().enumerate() {
            if !(1..=5).contains(&a) {
                return Err(SurveyError::MalformedRow {
                    row: row + 1,
                    reason: format!("q{} = {a} is outside 1..=5", i + 1),
                });
            }
            for g in [r.group, ExperienceGroup::All] {
                acc.entry((g, i + 1)).or_default().push(a);
            }
        }
    }
    Ok(StatsTable {
        cells: acc.into_iter().map(|(k, w)| (k, w.cell(divisor))).collect(),
        divisor,
    })
}

/// Rounds half away from zero to hundredths, returned as an integer count of
/// hundredths. Inputs are first snapped to 1e-9 so 4.005 (stored as
/// 4.00499999...) rounds as written.
pub fn hundredths_half_up(x: f64) -> i64 {
    let nano = (x.abs() * 1e9).round() as i128;
    let cents = (nano + 5_000_000) / 10_000_000;
    let cents = cents as i64;
    if x < 0.0 {
        -cents
    } else {
        cents
    }
}

fn fixed2(x: f64) -> String {
    let c = hundredths_half_up(x);
    let sign = if c < 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", c.abs() / 100, c.abs() % 100)
}

/// "M.MM (S.SS)".
pub fn format_cell(mean: f64, sd: f64) -> String {
    format!("{} ({})", fixed2(mean), fixed2(sd))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormattedTable {
    pub text: String,
    pub csv: String,
}

const MISSING: &str = "-";

pub fn format_table(table: &StatsTable) -> FormattedTable {
    let rows: Vec<(ExperienceGroup, Vec<String>)> = ExperienceGroup::ROWS
        .iter()
        .map(|&g| {
            let cells = (1..=ITEMS)
                .map(|i| {
                    table
                        .cell(g, i)
                        .map_or_else(|| MISSING.to_string(), |c| format_cell(c.mean, c.sd))
                })
                .collect();
            (g, cells)
        })
        .collect();

    let headers: Vec<String> = (1..=ITEMS).map(|i| format!("#{i}")).collect();
    let label_width = ExperienceGroup::ROWS
        .iter()
        .map(|g| g.display_name().len())
        .max()
        .unwrap_or(0)
        .max("Group".len());
    let widths: Vec<usize> = (0..ITEMS)
        .map(|i| {
            rows.iter()
                .map(|(_, c)| c[i].len())
                .chain([headers[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();

    let mut text = String::new();
    let _ = write!(text, "{:<label_width$}", "Group");
    for (h, w) in headers.iter().zip(&widths) {
        let _ = write!(text, "  {h:>w$}");
    }
    text.push('\n');
    for (g, cells) in &rows {
        let _ = write!(text, "{:<label_width$}", g.display_name());
        for (c, w) in cells.iter().zip(&widths) {
            let _ = write!(text, "  {c:>w$}");
        }
        text.push('\n');
    }

    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["group".to_string()];
    header.extend(headers);
    writer.write_record(&header).expect("in-memory CSV");
    for (g, cells) in &rows {
        let mut record = vec![g.code().to_string()];
        record.extend(cells.iter().cloned());
        writer.write_record(&record).expect("in-memory CSV");
    }
    let csv = String::from_utf8(writer.into_inner().expect("in-memory CSV")).expect("UTF-8 CSV");
    FormattedTable { text, csv }
}
