//! Census-style income tables: parsing, gender merging and the participation
//! correction that turns survey means into natural means (total group income
//! over total group population).
//!
//! All keys are work experience in years. Tables labelled by age are mapped
//! on the way in with `experience = age - 15`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::kinetics::normalize_to_peak;

/// Offset between age and work experience.
pub const AGE_OFFSET: i32 = 15;

/// Participation factors above this are flagged as a data-quality problem.
pub const PARTICIPATION_WARN_THRESHOLD: f64 = 1.05;

/// Half-open work-experience interval `[lo, hi)` in whole years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupInterval {
    pub lo: i32,
    pub hi: i32,
}

impl GroupInterval {
    pub fn new(lo: i32, hi: i32) -> Result<Self> {
        if lo >= hi {
            return Err(Error::Invalid(format!("empty group interval [{lo},{hi})")));
        }
        Ok(Self { lo, hi })
    }

    /// Builds the experience interval for an age-labelled group.
    pub fn from_ages(age_lo: i32, age_hi: i32) -> Result<Self> {
        Self::new(age_lo - AGE_OFFSET, age_hi - AGE_OFFSET)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lo as f64 && t < self.hi as f64
    }

    pub fn width(&self) -> i32 {
        self.hi - self.lo
    }

    pub fn overlaps(&self, other: &GroupInterval) -> bool {
        self.lo < other.hi && other.lo < self.hi
    }
}

impl fmt::Display for GroupInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
    Combined,
}

impl Gender {
    pub fn code(self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
            Gender::Combined => "C",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "M" | "m" => Ok(Gender::Male),
            "F" | "f" => Ok(Gender::Female),
            "C" | "c" => Ok(Gender::Combined),
            other => Err(format!("unknown gender code `{other}` (expected M, F or C)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DollarBasis {
    CurrentDollars,
    Chained2001Dollars,
}

impl fmt::Display for DollarBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DollarBasis::CurrentDollars => "current_dollars",
            DollarBasis::Chained2001Dollars => "chained_2001_dollars",
        })
    }
}

impl FromStr for DollarBasis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "current" | "current_dollars" => Ok(DollarBasis::CurrentDollars),
            "chained_2001" | "chained_2001_dollars" | "chained" => {
                Ok(DollarBasis::Chained2001Dollars)
            }
            other => Err(format!("unknown dollar basis `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Median,
}

impl FromStr for Statistic {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(Statistic::Mean),
            "median" => Ok(Statistic::Median),
            other => Err(format!("unknown statistic `{other}`")),
        }
    }
}

/// One observed (year, group, gender) income figure together with its
/// averaging base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncomeCell {
    pub year: i32,
    pub group: GroupInterval,
    pub gender: Gender,
    /// Currency per person-year, in the owning table's basis.
    pub mean_income: f64,
    /// Persons with income; after correction, the whole group population.
    pub n_with_income: f64,
}

impl IncomeCell {
    fn validate(&self) -> Result<()> {
        if !(self.mean_income.is_finite() && self.mean_income >= 0.0) {
            return Err(Error::Invalid(format!(
                "mean income {} for {} {} must be finite and non-negative",
                self.mean_income, self.year, self.group
            )));
        }
        if !(self.n_with_income.is_finite() && self.n_with_income >= 0.0) {
            return Err(Error::Invalid(format!(
                "averaging base {} for {} {} must be finite and non-negative",
                self.n_with_income, self.year, self.group
            )));
        }
        Ok(())
    }
}

type CellKey = (i32, GroupInterval, Gender);

/// Income by calendar year and work-experience group.
///
/// Missing survey years or groups are simply absent; nothing is ever
/// interpolated or zero-filled.
#[derive(Debug, Clone, PartialEq)]
pub struct IncomeTable {
    cells: BTreeMap<CellKey, IncomeCell>,
    pub basis: DollarBasis,
    pub statistic: Statistic,
    /// Values are ratios to the per-year peak rather than currency.
    pub normalized: bool,
}

impl IncomeTable {
    pub fn new(basis: DollarBasis, statistic: Statistic) -> Self {
        Self {
            cells: BTreeMap::new(),
            basis,
            statistic,
            normalized: false,
        }
    }

    /// Adds a cell, rejecting duplicate keys and intervals that overlap an
    /// existing group without being equal to it.
    pub fn insert(&mut self, cell: IncomeCell) -> Result<()> {
        cell.validate()?;
        let key = (cell.year, cell.group, cell.gender);
        if self.cells.contains_key(&key) {
            return Err(Error::DuplicateKey {
                year: cell.year,
                group: cell.group,
                gender: cell.gender,
            });
        }
        if let Some(clash) = self
            .groups()
            .into_iter()
            .find(|g| *g != cell.group && g.overlaps(&cell.group))
        {
            return Err(Error::Invalid(format!(
                "group {} overlaps existing group {}",
                cell.group, clash
            )));
        }
        self.cells.insert(key, cell);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Cells in (year, group, gender) order.
    pub fn cells(&self) -> impl Iterator<Item = &IncomeCell> {
        self.cells.values()
    }

    pub fn get(&self, year: i32, group: GroupInterval, gender: Gender) -> Option<&IncomeCell> {
        self.cells.get(&(year, group, gender))
    }

    pub fn years(&self) -> BTreeSet<i32> {
        self.cells.keys().map(|k| k.0).collect()
    }

    pub fn groups(&self) -> BTreeSet<GroupInterval> {
        self.cells.keys().map(|k| k.1).collect()
    }

    /// Combined-gender cells for one year, in group order.
    pub fn combined_row(&self, year: i32) -> Vec<&IncomeCell> {
        self.cells
            .range((year, GroupInterval { lo: i32::MIN, hi: i32::MIN }, Gender::Male)..)
            .take_while(|(k, _)| k.0 == year)
            .filter(|(k, _)| k.2 == Gender::Combined)
            .map(|(_, c)| c)
            .collect()
    }

    /// (year, value) pairs of one combined-gender group, in year order.
    pub fn group_history(&self, group: GroupInterval) -> Vec<(i32, f64)> {
        self.cells
            .values()
            .filter(|c| c.group == group && c.gender == Gender::Combined)
            .map(|c| (c.year, c.mean_income))
            .collect()
    }

    /// Merges male and female cells into combined-gender cells.
    ///
    /// Keys that already carry a combined cell keep it. A key with only one
    /// of the two genders and no combined cell is an error: the combined mean
    /// would silently drop half the population.
    pub fn combine_genders(&self) -> Result<IncomeTable> {
        let mut out = IncomeTable {
            cells: BTreeMap::new(),
            ..*self
        };
        let keys: BTreeSet<(i32, GroupInterval)> =
            self.cells.keys().map(|k| (k.0, k.1)).collect();
        for (year, group) in keys {
            let cell = match (
                self.get(year, group, Gender::Combined),
                self.get(year, group, Gender::Male),
                self.get(year, group, Gender::Female),
            ) {
                (Some(c), _, _) => *c,
                (None, Some(m), Some(f)) => combine_genders(m, f)?,
                (None, _, _) => {
                    return Err(Error::KeyMismatch(format!(
                        "year {year}, group {group} has only one gender and no combined cell"
                    )))
                }
            };
            out.insert(cell)?;
        }
        Ok(out)
    }

    /// Divides every combined-gender value by the largest value of its year.
    pub fn normalized_per_year(&self) -> Result<IncomeTable> {
        let mut out = IncomeTable {
            cells: BTreeMap::new(),
            normalized: true,
            ..*self
        };
        for year in self.years() {
            let row = self.combined_row(year);
            if row.is_empty() {
                continue;
            }
            let values: Vec<f64> = row.iter().map(|c| c.mean_income).collect();
            let scaled = normalize_to_peak(&values)
                .map_err(|e| Error::Normalization(format!("year {year}: {e}")))?;
            for (cell, v) in row.into_iter().zip(scaled) {
                out.insert(IncomeCell {
                    mean_income: v,
                    ..*cell
                })?;
            }
        }
        Ok(out)
    }
}

/// Whether group bounds in a source file are ages or work experience.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupLabels {
    #[default]
    WorkExperience,
    Age,
}

impl GroupLabels {
    fn interval(self, lo: i32, hi: i32) -> Result<GroupInterval> {
        match self {
            GroupLabels::WorkExperience => GroupInterval::new(lo, hi),
            GroupLabels::Age => GroupInterval::from_ages(lo, hi),
        }
    }
}

/// Column mapping for [`parse_income_table`].
#[derive(Debug, Clone)]
pub struct TableSchema {
    pub year: String,
    pub lo: String,
    pub hi: String,
    pub gender: String,
    pub mean: String,
    pub count: String,
    /// Optional per-row basis column; every row must agree with `basis`.
    pub basis_column: Option<String>,
    pub labels: GroupLabels,
    pub basis: DollarBasis,
    pub statistic: Statistic,
}

impl Default for TableSchema {
    fn default() -> Self {
        Self {
            year: "year".into(),
            lo: "exp_lo".into(),
            hi: "exp_hi".into(),
            gender: "gender".into(),
            mean: "mean_income".into(),
            count: "n_with_income".into(),
            basis_column: None,
            labels: GroupLabels::WorkExperience,
            basis: DollarBasis::Chained2001Dollars,
            statistic: Statistic::Mean,
        }
    }
}

impl TableSchema {
    /// Schema for files whose bounds are `age_lo, age_hi`.
    pub fn age_labelled() -> Self {
        Self {
            lo: "age_lo".into(),
            hi: "age_hi".into(),
            labels: GroupLabels::Age,
            ..Self::default()
        }
    }
}

/// Parses a monetary or count field. Accepts a leading currency symbol and
/// comma thousands separators (`$12,345.67`); everything else that is not a
/// plain finite decimal is rejected.
pub fn parse_amount(raw: &str) -> Option<f64> {
    let s = raw.trim();
    let (neg, s) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let s = s
        .strip_prefix('$')
        .or_else(|| s.strip_prefix('€'))
        .or_else(|| s.strip_prefix('£'))
        .unwrap_or(s);
    if s.is_empty() {
        return None;
    }
    let plain: String = if s.contains(',') {
        let (int_part, frac) = match s.find('.') {
            Some(i) => s.split_at(i),
            None => (s, ""),
        };
        let mut groups = int_part.split(',');
        let head = groups.next()?;
        if head.is_empty() || head.len() > 3 || !head.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        for g in groups {
            if g.len() != 3 || !g.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
        }
        format!("{}{}", int_part.replace(',', ""), frac)
    } else {
        s.to_string()
    };
    // f64::from_str also takes "inf" and "NaN"; only digits, sign, point and
    // exponent are allowed here.
    if !plain
        .bytes()
        .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'e' | b'E' | b'+' | b'-'))
    {
        return None;
    }
    let v: f64 = plain.parse().ok()?;
    if !v.is_finite() {
        return None;
    }
    Some(if neg { -v } else { v })
}

struct Header {
    names: Vec<String>,
}

impl Header {
    fn new(rdr: &mut csv::Reader<impl Read>) -> Result<Self> {
        Ok(Self {
            names: rdr.headers()?.iter().map(|h| h.trim().to_string()).collect(),
        })
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }
}

fn row_of(record: &csv::StringRecord) -> usize {
    record.position().map(|p| p.line() as usize).unwrap_or(0)
}

fn field<'a>(record: &'a csv::StringRecord, idx: usize, column: &str) -> Result<&'a str> {
    record.get(idx).ok_or_else(|| Error::Parse {
        row: row_of(record),
        column: column.to_string(),
        message: "missing field".into(),
    })
}

fn parse_num(record: &csv::StringRecord, idx: usize, column: &str) -> Result<f64> {
    let raw = field(record, idx, column)?;
    parse_amount(raw).ok_or_else(|| Error::Parse {
        row: row_of(record),
        column: column.to_string(),
        message: format!("`{raw}` is not a number"),
    })
}

fn parse_int(record: &csv::StringRecord, idx: usize, column: &str) -> Result<i32> {
    let raw = field(record, idx, column)?;
    raw.trim().parse().map_err(|_| Error::Parse {
        row: row_of(record),
        column: column.to_string(),
        message: format!("`{raw}` is not an integer"),
    })
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source)
}

/// Reads an income table. Row order in the source does not matter.
pub fn parse_income_table<R: Read>(source: R, schema: &TableSchema) -> Result<IncomeTable> {
    let mut rdr = reader(source);
    let header = Header::new(&mut rdr)?;
    let i_year = header.index(&schema.year)?;
    let i_lo = header.index(&schema.lo)?;
    let i_hi = header.index(&schema.hi)?;
    let i_gender = header.index(&schema.gender)?;
    let i_mean = header.index(&schema.mean)?;
    let i_count = header.index(&schema.count)?;
    let i_basis = schema
        .basis_column
        .as_deref()
        .map(|c| header.index(c))
        .transpose()?;

    let mut table = IncomeTable::new(schema.basis, schema.statistic);
    for record in rdr.records() {
        let record = record?;
        let row = row_of(&record);
        if let Some(ib) = i_basis {
            let raw = field(&record, ib, schema.basis_column.as_deref().unwrap_or_default())?;
            let basis: DollarBasis = raw.parse().map_err(|message| Error::Parse {
                row,
                column: schema.basis_column.clone().unwrap_or_default(),
                message,
            })?;
            if basis != schema.basis {
                return Err(Error::BasisConflict {
                    row,
                    expected: schema.basis.to_string(),
                    found: basis.to_string(),
                });
            }
        }
        let year = parse_int(&record, i_year, &schema.year)?;
        let lo = parse_int(&record, i_lo, &schema.lo)?;
        let hi = parse_int(&record, i_hi, &schema.hi)?;
        let group = schema.labels.interval(lo, hi).map_err(|e| Error::Parse {
            row,
            column: schema.hi.clone(),
            message: e.to_string(),
        })?;
        let gender: Gender =
            field(&record, i_gender, &schema.gender)?
                .parse()
                .map_err(|message| Error::Parse {
                    row,
                    column: schema.gender.clone(),
                    message,
                })?;
        let mean_income = parse_num(&record, i_mean, &schema.mean)?;
        let n_with_income = parse_num(&record, i_count, &schema.count)?;
        if mean_income < 0.0 {
            return Err(Error::Parse {
                row,
                column: schema.mean.clone(),
                message: "negative mean income".into(),
            });
        }
        if n_with_income < 0.0 {
            return Err(Error::Parse {
                row,
                column: schema.count.clone(),
                message: "negative count".into(),
            });
        }
        table.insert(IncomeCell {
            year,
            group,
            gender,
            mean_income,
            n_with_income,
        })?;
    }
    Ok(table)
}

/// Writes the standard income schema, rows in key order.
pub fn write_income_table<W: Write>(table: &IncomeTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["year", "exp_lo", "exp_hi", "gender", "mean_income", "n_with_income"])?;
    for c in table.cells() {
        w.write_record([
            c.year.to_string(),
            c.group.lo.to_string(),
            c.group.hi.to_string(),
            c.gender.code().to_string(),
            fmt_f64(c.mean_income),
            fmt_f64(c.n_with_income),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Population by year and work-experience group.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PopulationSeries {
    entries: BTreeMap<(i32, GroupInterval), f64>,
}

impl PopulationSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, year: i32, group: GroupInterval, population: f64) -> Result<()> {
        if !(population.is_finite() && population > 0.0) {
            return Err(Error::Invalid(format!(
                "population {population} for {year} {group} must be positive"
            )));
        }
        if self.entries.insert((year, group), population).is_some() {
            return Err(Error::KeyMismatch(format!(
                "duplicate population entry for {year} {group}"
            )));
        }
        Ok(())
    }

    pub fn get(&self, year: i32, group: GroupInterval) -> Option<f64> {
        self.entries.get(&(year, group)).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (i32, GroupInterval, f64)> + '_ {
        self.entries.iter().map(|(&(y, g), &p)| (y, g, p))
    }

    /// Groups present for one year, in group order.
    pub fn year(&self, year: i32) -> Vec<(GroupInterval, f64)> {
        self.entries
            .iter()
            .filter(|((y, _), _)| *y == year)
            .map(|(&(_, g), &p)| (g, p))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sum over all groups per year.
    pub fn totals(&self) -> Result<PopulationTotals> {
        let mut sums: BTreeMap<i32, f64> = BTreeMap::new();
        for (&(y, _), &p) in &self.entries {
            *sums.entry(y).or_default() += p;
        }
        PopulationTotals::from_pairs(sums)
    }
}

pub fn parse_population_series<R: Read>(source: R, labels: GroupLabels) -> Result<PopulationSeries> {
    let mut rdr = reader(source);
    let header = Header::new(&mut rdr)?;
    let (lo_col, hi_col) = match labels {
        GroupLabels::WorkExperience => ("exp_lo", "exp_hi"),
        GroupLabels::Age => ("age_lo", "age_hi"),
    };
    let i_year = header.index("year")?;
    let i_lo = header.index(lo_col)?;
    let i_hi = header.index(hi_col)?;
    let i_pop = header.index("population")?;
    let mut series = PopulationSeries::new();
    for record in rdr.records() {
        let record = record?;
        let row = row_of(&record);
        let year = parse_int(&record, i_year, "year")?;
        let group = labels
            .interval(parse_int(&record, i_lo, lo_col)?, parse_int(&record, i_hi, hi_col)?)
            .map_err(|e| Error::Parse {
                row,
                column: hi_col.into(),
                message: e.to_string(),
            })?;
        let pop = parse_num(&record, i_pop, "population")?;
        if pop <= 0.0 {
            return Err(Error::Parse {
                row,
                column: "population".into(),
                message: "population must be positive".into(),
            });
        }
        series.insert(year, group, pop)?;
    }
    Ok(series)
}

pub fn write_population_series<W: Write>(series: &PopulationSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["year", "exp_lo", "exp_hi", "population"])?;
    for (y, g, p) in series.entries() {
        w.write_record([y.to_string(), g.lo.to_string(), g.hi.to_string(), fmt_f64(p)])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Strictly positive values on strictly increasing years.
#[derive(Debug, Clone, PartialEq)]
struct AnnualSeries {
    values: BTreeMap<i32, f64>,
}

impl AnnualSeries {
    fn from_pairs(pairs: impl IntoIterator<Item = (i32, f64)>, what: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (year, v) in pairs {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Invalid(format!("{what} {v} in {year} must be positive")));
            }
            if values.insert(year, v).is_some() {
                return Err(Error::DuplicateYear(year));
            }
        }
        Ok(Self { values })
    }

    fn parse<R: Read>(source: R, column: &str) -> Result<Self> {
        let mut rdr = reader(source);
        let header = Header::new(&mut rdr)?;
        let i_year = header.index("year")?;
        let i_val = header.index(column)?;
        let mut values = BTreeMap::new();
        for record in rdr.records() {
            let record = record?;
            let row = row_of(&record);
            let year = parse_int(&record, i_year, "year")?;
            let v = parse_num(&record, i_val, column)?;
            if v <= 0.0 {
                return Err(Error::Parse {
                    row,
                    column: column.into(),
                    message: "value must be positive".into(),
                });
            }
            if values.insert(year, v).is_some() {
                return Err(Error::DuplicateYear(year));
            }
        }
        Ok(Self { values })
    }

    fn write<W: Write>(&self, column: &str, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["year", column])?;
        for (y, v) in &self.values {
            w.write_record([y.to_string(), fmt_f64(*v)])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Relative change from `year - 1` to `year`.
    fn growth(&self, year: i32) -> Option<f64> {
        let now = *self.values.get(&year)?;
        let prev = *self.values.get(&(year - 1))?;
        Some((now - prev) / prev)
    }
}

/// Real GDP per capita by year, chained dollars per person.
#[derive(Debug, Clone, PartialEq)]
pub struct GdpSeries(AnnualSeries);

impl GdpSeries {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (i32, f64)>) -> Result<Self> {
        AnnualSeries::from_pairs(pairs, "GDP per capita").map(Self)
    }

    pub fn parse<R: Read>(source: R) -> Result<Self> {
        AnnualSeries::parse(source, "gdp_per_capita").map(Self)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        self.0.write("gdp_per_capita", out)
    }

    pub fn get(&self, year: i32) -> Option<f64> {
        self.0.values.get(&year).copied()
    }

    /// `(GDP(i) - GDP(i-1)) / GDP(i-1)`; `None` unless both years exist.
    pub fn growth(&self, year: i32) -> Option<f64> {
        self.0.growth(year)
    }

    pub fn first_year(&self) -> Option<i32> {
        self.0.values.keys().next().copied()
    }

    pub fn last_year(&self) -> Option<i32> {
        self.0.values.keys().next_back().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.0.values.iter().map(|(&y, &v)| (y, v))
    }
}

/// Total population (all ages) by year.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationTotals(AnnualSeries);

impl PopulationTotals {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (i32, f64)>) -> Result<Self> {
        AnnualSeries::from_pairs(pairs, "population").map(Self)
    }

    /// Reads `year, population`.
    pub fn parse<R: Read>(source: R) -> Result<Self> {
        AnnualSeries::parse(source, "population").map(Self)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        self.0.write("population", out)
    }

    pub fn get(&self, year: i32) -> Option<f64> {
        self.0.values.get(&year).copied()
    }

    /// dNT/NT from `year - 1` to `year`.
    pub fn growth(&self, year: i32) -> Option<f64> {
        self.0.growth(year)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.0.values.iter().map(|(&y, &v)| (y, v))
    }
}

/// Merges a male and a female cell of the same (year, group) into the
/// count-weighted combined cell.
pub fn combine_genders(male: &IncomeCell, female: &IncomeCell) -> Result<IncomeCell> {
    if male.year != female.year || male.group != female.group {
        return Err(Error::KeyMismatch(format!(
            "cannot combine {} {} with {} {}",
            male.year, male.group, female.year, female.group
        )));
    }
    let n = male.n_with_income + female.n_with_income;
    let mean_income = if female.n_with_income == 0.0 && male.n_with_income > 0.0 {
        male.mean_income
    } else if male.n_with_income == 0.0 && female.n_with_income > 0.0 {
        female.mean_income
    } else if n > 0.0 {
        (male.n_with_income * male.mean_income + female.n_with_income * female.mean_income) / n
    } else {
        return Err(Error::UndefinedMean {
            year: male.year,
            group: male.group,
        });
    };
    Ok(IncomeCell {
        year: male.year,
        group: male.group,
        gender: Gender::Combined,
        mean_income,
        n_with_income: n,
    })
}

/// Survey base exceeding the population estimate by more than the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DataQualityWarning {
    pub factor: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticipationFactor {
    pub value: f64,
    pub warning: Option<DataQualityWarning>,
}

/// Fraction of the population reporting income, `n_with_income / population`.
pub fn participation_factor(n_with_income: f64, population: f64) -> Result<ParticipationFactor> {
    if population == 0.0 {
        return Err(Error::Division("participation factor with zero population".into()));
    }
    if !(population > 0.0) || !(n_with_income >= 0.0) {
        return Err(Error::Invalid(format!(
            "participation factor needs population > 0 and count >= 0, got {n_with_income}/{population}"
        )));
    }
    let value = n_with_income / population;
    let warning = (value > PARTICIPATION_WARN_THRESHOLD).then_some(DataQualityWarning {
        factor: value,
        threshold: PARTICIPATION_WARN_THRESHOLD,
    });
    Ok(ParticipationFactor { value, warning })
}

/// Natural mean: the observed mean spread over everyone in the group.
pub fn correct_mean(observed_mean: f64, factor: f64) -> Result<f64> {
    if !(factor > 0.0) {
        return Err(Error::domain(format!("participation factor {factor} must be positive")));
    }
    Ok(observed_mean * factor)
}

/// One row of the participation-factor output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticipationRecord {
    pub year: i32,
    pub group: GroupInterval,
    pub factor: ParticipationFactor,
}

/// Participation factors for every combined-gender cell.
pub fn participation_table(
    table: &IncomeTable,
    pop: &PopulationSeries,
) -> Result<Vec<ParticipationRecord>> {
    table
        .cells()
        .filter(|c| c.gender == Gender::Combined)
        .map(|c| {
            let population = pop.get(c.year, c.group).ok_or(Error::Join {
                year: c.year,
                group: c.group,
            })?;
            Ok(ParticipationRecord {
                year: c.year,
                group: c.group,
                factor: participation_factor(c.n_with_income, population)?,
            })
        })
        .collect()
}

/// Replaces every combined-gender cell with its natural mean; the averaging
/// base becomes the group population. Other cells are left as they are.
pub fn correct_table(table: &IncomeTable, pop: &PopulationSeries) -> Result<IncomeTable> {
    let mut out = IncomeTable {
        cells: BTreeMap::new(),
        ..*table
    };
    for cell in table.cells() {
        let corrected = if cell.gender == Gender::Combined {
            let population = pop.get(cell.year, cell.group).ok_or(Error::Join {
                year: cell.year,
                group: cell.group,
            })?;
            let factor = participation_factor(cell.n_with_income, population)?;
            IncomeCell {
                mean_income: correct_mean(cell.mean_income, factor.value)?,
                n_with_income: population,
                ..*cell
            }
        } else {
            *cell
        };
        out.insert(corrected)?;
    }
    Ok(out)
}
