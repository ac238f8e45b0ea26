//! The income-shape model and critical work experience dynamics.
//!
//! Mean income as a function of work experience `t` has two branches that
//! meet at the critical experience `tcr`:
//!
//! ```text
//! t <= tcr:  (1 - exp(-alpha t)) / (1 - exp(-alpha tcr))
//! t >  tcr:  exp(-alpha1 (t - tcr) / L),   alpha1 = -ln(ratio) / (anchor_exp - tcr)
//! ```
//!
//! so the peak is exactly 1 at `tcr` and, with `L = 1`, every curve passes
//! through the anchor point `(anchor_exp, ratio)` whatever `tcr` is.
//!
//! `tcr` moves with the square root of per-capita real GDP growth:
//! `tcr(i) = tcr(i-1) * sqrt(1 + dGDP)`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::ingest::{GdpSeries, GroupInterval, PopulationTotals};

/// Pinned point of the decay branch, in work experience years.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub exp: f64,
    pub ratio: f64,
}

impl Anchor {
    /// Calibration used with 10-year averaging intervals.
    pub const TEN_YEAR: Anchor = Anchor { exp: 60.0, ratio: 0.84 };
    /// Calibration used with 5-year averaging intervals.
    pub const FIVE_YEAR: Anchor = Anchor { exp: 67.0, ratio: 0.45 };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Growth exponent, 1/years.
    pub alpha: f64,
    /// `L` in the decay index.
    pub decay_norm: f64,
    pub anchor: Anchor,
    /// Critical work experience at `start_year`.
    pub tcr0: f64,
    pub start_year: i32,
}

impl ModelParams {
    pub const DEFAULT_ALPHA: f64 = 0.1;
    pub const DEFAULT_DECAY_NORM: f64 = 1.0;

    /// Default shape (alpha 0.1, L 1, 10-year anchor) starting from `tcr0`.
    pub fn new(tcr0: f64, start_year: i32) -> Result<Self> {
        let p = Self {
            alpha: Self::DEFAULT_ALPHA,
            decay_norm: Self::DEFAULT_DECAY_NORM,
            anchor: Anchor::TEN_YEAR,
            tcr0,
            start_year,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_anchor(self, anchor: Anchor) -> Result<Self> {
        let p = Self { anchor, ..self };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.decay_norm > 0.0 && self.decay_norm.is_finite()) {
            return Err(Error::Config(format!("L must be positive, got {}", self.decay_norm)));
        }
        if !(self.anchor.ratio > 0.0 && self.anchor.ratio < 1.0) {
            return Err(Error::Config(format!(
                "anchor ratio must lie in (0, 1), got {}",
                self.anchor.ratio
            )));
        }
        if !(self.tcr0 > 0.0 && self.tcr0.is_finite()) {
            return Err(Error::Config(format!("tcr0 must be positive, got {}", self.tcr0)));
        }
        if !(self.anchor.exp > self.tcr0) {
            return Err(Error::Config(format!(
                "anchor experience {} must exceed tcr0 {}",
                self.anchor.exp, self.tcr0
            )));
        }
        Ok(())
    }
}

/// One step of the critical-experience recurrence driven by per-capita
/// real GDP growth.
pub fn tcr_step(tcr_prev: f64, dgdp: f64) -> Result<f64> {
    let radicand = 1.0 + dgdp;
    if !(radicand > 0.0) {
        return Err(Error::domain(format!(
            "GDP growth {dgdp} leaves 1 + dGDP = {radicand} <= 0"
        )));
    }
    check_tcr(tcr_prev)?;
    Ok(tcr_prev * radicand.sqrt())
}

/// The recurrence for total real GDP growth corrected by the relative change
/// of the total population.
pub fn tcr_step_percap(tcr_prev: f64, dgdp: f64, dnt_over_nt: f64) -> Result<f64> {
    let radicand = (1.0 + dgdp) - dnt_over_nt;
    if !(radicand > 0.0) {
        return Err(Error::domain(format!(
            "1 + dGDP - dNT/NT = {radicand} <= 0 (dGDP {dgdp}, dNT/NT {dnt_over_nt})"
        )));
    }
    check_tcr(tcr_prev)?;
    Ok(tcr_prev * radicand.sqrt())
}

fn check_tcr(tcr: f64) -> Result<()> {
    if tcr > 0.0 && tcr.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("critical experience {tcr} must be positive")))
    }
}

/// Inertial per-capita growth rate implied by a critical experience.
pub fn economic_trend(tcr: f64) -> Result<f64> {
    check_tcr(tcr)?;
    Ok(1.0 / tcr)
}

/// Critical work experience by year.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TcrSeries {
    entries: BTreeMap<i32, f64>,
}

impl TcrSeries {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (i32, f64)>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (y, t) in pairs {
            check_tcr(t).map_err(|e| e.in_year(y))?;
            if entries.insert(y, t).is_some() {
                return Err(Error::DuplicateYear(y));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, year: i32) -> Option<f64> {
        self.entries.get(&year).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.entries.iter().map(|(&y, &t)| (y, t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<(i32, f64)> {
        self.entries.iter().next_back().map(|(&y, &t)| (y, t))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["year", "tcr"])?;
        for (y, t) in self.iter() {
            w.write_record([y.to_string(), fmt_f64(t)])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn parse_csv<R: Read>(source: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            year: i32,
            tcr: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let rows: Vec<Row> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
        Self::from_pairs(rows.into_iter().map(|r| (r.year, r.tcr)))
    }
}

/// Folds the recurrence from `(start_year, tcr0)` across the GDP series.
///
/// Without population totals each step uses [`tcr_step`] with the series'
/// own growth rate, so `gdp` is read as per-capita GDP. With totals, each
/// step uses [`tcr_step_percap`] and `gdp` is read as the level whose growth
/// the population change is subtracted from.
pub fn tcr_series(
    params: &ModelParams,
    gdp: &GdpSeries,
    population_total: Option<&PopulationTotals>,
) -> Result<TcrSeries> {
    params.validate()?;
    let start = params.start_year;
    if gdp.get(start).is_none() {
        return Err(Error::Coverage(format!("GDP series does not cover start year {start}")));
    }
    if let Some(pop) = population_total {
        if pop.get(start).is_none() {
            return Err(Error::Coverage(format!(
                "population series does not cover start year {start}"
            )));
        }
    }
    let end = gdp.last_year().unwrap_or(start);
    let mut entries = BTreeMap::new();
    let mut tcr = params.tcr0;
    entries.insert(start, tcr);
    for year in start + 1..=end {
        let dgdp = gdp
            .growth(year)
            .ok_or_else(|| Error::Coverage(format!("GDP series has a gap at {year}")))?;
        tcr = match population_total {
            None => tcr_step(tcr, dgdp),
            Some(pop) => {
                let dnt = pop.growth(year).ok_or_else(|| {
                    Error::Coverage(format!("population series has a gap at {year}"))
                })?;
                tcr_step_percap(tcr, dgdp, dnt)
            }
        }
        .map_err(|e| e.in_year(year))?;
        entries.insert(year, tcr);
    }
    Ok(TcrSeries { entries })
}

/// Normalized mean income at work experience `t` for critical experience
/// `tcr`. Peak value 1 at `t = tcr`.
pub fn income_shape(t: f64, tcr: f64, params: &ModelParams) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("work experience {t} must be non-negative")));
    }
    check_tcr(tcr)?;
    let anchor = params.anchor;
    if !(anchor.exp > tcr) {
        return Err(Error::Config(format!(
            "anchor experience {} must exceed tcr {tcr}",
            anchor.exp
        )));
    }
    if t <= tcr {
        // 1 - exp(-x) == -expm1(-x), accurate for small x
        Ok((-params.alpha * t).exp_m1() / (-params.alpha * tcr).exp_m1())
    } else {
        // alpha1 (t - tcr) written so the anchor lands on exactly one exp(ln r)
        let span = (t - tcr) / (anchor.exp - tcr);
        Ok((anchor.ratio.ln() * span / params.decay_norm).exp())
    }
}

/// Divides every value by the largest one.
pub fn normalize_to_peak(values: &[f64]) -> Result<Vec<f64>> {
    let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Normalization(format!(
            "curve has no positive finite peak (peak = {peak})"
        )));
    }
    Ok(values.iter().map(|v| v / peak).collect())
}

/// Arithmetic mean of the samples falling in each `[lo, hi)`.
pub fn bin_average(grid: &[f64], values: &[f64], intervals: &[GroupInterval]) -> Result<Vec<f64>> {
    if grid.len() != values.len() {
        return Err(Error::Invalid(format!(
            "grid has {} points but curve has {}",
            grid.len(),
            values.len()
        )));
    }
    let (Some(&first), Some(&last)) = (grid.first(), grid.last()) else {
        return Err(Error::Coverage("empty curve".into()));
    };
    let step = if grid.len() > 1 { grid[1] - grid[0] } else { 0.0 };
    intervals
        .iter()
        .map(|iv| {
            if (iv.lo as f64) < first || (iv.hi as f64) > last + step {
                return Err(Error::Coverage(format!(
                    "interval {iv} outside sampled range [{first}, {last}]"
                )));
            }
            let (sum, n) = grid
                .iter()
                .zip(values)
                .filter(|(t, _)| iv.contains(**t))
                .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
            if n == 0 {
                return Err(Error::Coverage(format!("no samples inside interval {iv}")));
            }
            Ok(sum / n as f64)
        })
        .collect()
}

/// Ten-year bins `[0,10), [10,20), ...` up to `t_max`.
pub fn ten_year_bins(t_max: i32) -> Vec<GroupInterval> {
    (0..t_max / 10)
        .map(|i| GroupInterval { lo: 10 * i, hi: 10 * i + 10 })
        .collect()
}

/// A ten-year first bin followed by five-year bins up to `t_max`.
pub fn five_year_bins(t_max: i32) -> Vec<GroupInterval> {
    let mut bins = vec![GroupInterval { lo: 0, hi: 10 }];
    let mut lo = 10;
    while lo + 5 <= t_max {
        bins.push(GroupInterval { lo, hi: lo + 5 });
        lo += 5;
    }
    bins
}

/// Sampling grid for model curves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub step: f64,
    pub t_max: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Self { step: 0.25, t_max: 70.0 }
    }
}

impl Grid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.t_max > 0.0) {
            return Err(Error::Config(format!(
                "grid step {} and t_max {} must be positive",
                self.step, self.t_max
            )));
        }
        let n = (self.t_max / self.step).round() as usize;
        Ok((0..=n).map(|i| i as f64 * self.step).collect())
    }
}

/// Family of curves of work experience keyed by year, on one shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    pub grid: Vec<f64>,
    pub curves: BTreeMap<i32, Vec<f64>>,
    pub grid_step: f64,
    pub normalized: bool,
}

#[derive(Serialize, Deserialize)]
struct JsonCurve {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl CurveSet {
    pub fn new(grid: Vec<f64>, normalized: bool) -> Self {
        let grid_step = if grid.len() > 1 { grid[1] - grid[0] } else { 0.0 };
        Self {
            grid,
            curves: BTreeMap::new(),
            grid_step,
            normalized,
        }
    }

    pub fn insert(&mut self, year: i32, values: Vec<f64>) -> Result<()> {
        if values.len() != self.grid.len() {
            return Err(Error::Invalid(format!(
                "curve for {year} has {} samples, grid has {}",
                values.len(),
                self.grid.len()
            )));
        }
        self.curves.insert(year, values);
        Ok(())
    }

    pub fn curve(&self, year: i32) -> Option<&[f64]> {
        self.curves.get(&year).map(Vec::as_slice)
    }

    /// Work experience at which a year's curve is largest (first on ties).
    pub fn peak_t(&self, year: i32) -> Option<f64> {
        let values = self.curves.get(&year)?;
        let mut best = 0;
        for (i, v) in values.iter().enumerate() {
            if *v > values[best] {
                best = i;
            }
        }
        self.grid.get(best).copied()
    }

    /// Every curve averaged over the given intervals.
    pub fn binned(&self, intervals: &[GroupInterval]) -> Result<BTreeMap<i32, Vec<f64>>> {
        self.curves
            .iter()
            .map(|(&y, v)| Ok((y, bin_average(&self.grid, v, intervals)?)))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["year", "t", "value"])?;
        for (y, values) in &self.curves {
            for (t, v) in self.grid.iter().zip(values) {
                w.write_record([y.to_string(), fmt_f64(*t), fmt_f64(*v)])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Reads `year, t, value`; every year must use the same grid.
    pub fn parse_csv<R: Read>(source: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            year: i32,
            t: f64,
            value: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let mut by_year: BTreeMap<i32, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for row in rdr.deserialize() {
            let row: Row = row?;
            let e = by_year.entry(row.year).or_default();
            e.0.push(row.t);
            e.1.push(row.value);
        }
        Self::from_columns(by_year)
    }

    /// JSON document `{ "year": { "grid": [...], "values": [...] } }`.
    pub fn to_json(&self) -> Result<String> {
        let doc: BTreeMap<String, JsonCurve> = self
            .curves
            .iter()
            .map(|(y, v)| {
                (
                    y.to_string(),
                    JsonCurve {
                        grid: self.grid.clone(),
                        values: v.clone(),
                    },
                )
            })
            .collect();
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: BTreeMap<String, JsonCurve> = serde_json::from_str(text)?;
        let mut by_year = BTreeMap::new();
        for (k, c) in doc {
            let year: i32 = k
                .parse()
                .map_err(|_| Error::Invalid(format!("curve key `{k}` is not a year")))?;
            by_year.insert(year, (c.grid, c.values));
        }
        Self::from_columns(by_year)
    }

    fn from_columns(by_year: BTreeMap<i32, (Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let grid = by_year.values().next().map(|(g, _)| g.clone()).unwrap_or_default();
        let mut set = CurveSet::new(grid, true);
        for (year, (g, values)) in by_year {
            if g.iter().map(|t| t.to_bits()).ne(set.grid.iter().map(|t| t.to_bits())) {
                return Err(Error::Invalid(format!("curve for {year} uses a different grid")));
            }
            set.insert(year, values)?;
        }
        set.normalized = !set.curves.is_empty()
            && set.curves.values().all(|v| {
                let peak = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (peak - 1.0).abs() <= 1e-12
            });
        Ok(set)
    }
}

/// Evaluates a normalized model curve on `grid` for one critical experience.
pub fn model_curve(params: &ModelParams, tcr: f64, grid: &[f64]) -> Result<Vec<f64>> {
    let raw = grid
        .iter()
        .map(|&t| income_shape(t, tcr, params))
        .collect::<Result<Vec<_>>>()?;
    normalize_to_peak(&raw)
}

/// One normalized model curve per requested year.
pub fn model_curveset(
    params: &ModelParams,
    tcr_series: &TcrSeries,
    years: &[i32],
    grid: Grid,
) -> Result<CurveSet> {
    let points = grid.points()?;
    let curves = years
        .par_iter()
        .map(|&year| {
            let tcr = tcr_series
                .get(year)
                .ok_or_else(|| Error::Key(format!("no critical experience for {year}")))?;
            model_curve(params, tcr, &points)
                .map(|c| (year, c))
                .map_err(|e| e.in_year(year))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut set = CurveSet::new(points, true);
    set.grid_step = grid.step;
    for (year, values) in curves {
        set.insert(year, values)?;
    }
    Ok(set)
}
