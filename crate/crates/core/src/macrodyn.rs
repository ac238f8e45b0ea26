//! Macroeconomic closure of the income model.
//!
//! Real GDP growth is the economic trend `1/tcr` plus half the relative
//! change of one single-year-of-age cohort:
//!
//! ```text
//! dGDP(i) = 0.5 (N(i) - N(i-1)) / N(i-1) + 1 / tcr(i-1)
//! tcr(i)  = tcr(i-1) sqrt(1 + dGDP(i) - dNT/NT)
//! ```
//!
//! Inverting the first relation estimates the cohort from observed growth.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::calibrate::ConversionFit;
use crate::error::{Error, Result};
use crate::format::{fmt_f64, fmt_opt};
use crate::ingest::{parse_amount, GdpSeries, PopulationSeries, PopulationTotals};
use crate::kinetics::{bin_average, model_curveset, tcr_step, tcr_step_percap, Anchor, CurveSet, Grid, ModelParams, TcrSeries};

/// Specific age driving GDP fluctuations in the US and the UK.
pub const SPECIFIC_AGE_US_UK: u32 = 9;
/// Specific age for continental Europe and Japan.
pub const SPECIFIC_AGE_EUROPE_JAPAN: u32 = 17;

/// Head counts of one single-year-of-age cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSeries {
    pub specific_age: u32,
    counts: BTreeMap<i32, f64>,
}

impl CohortSeries {
    pub fn new(specific_age: u32, pairs: impl IntoIterator<Item = (i32, f64)>) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for (year, n) in pairs {
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::Invalid(format!("cohort count {n} in {year} must be positive")));
            }
            if counts.insert(year, n).is_some() {
                return Err(Error::DuplicateYear(year));
            }
        }
        Ok(Self { specific_age, counts })
    }

    pub fn get(&self, year: i32) -> Option<f64> {
        self.counts.get(&year).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.counts.iter().map(|(&y, &n)| (y, n))
    }

    pub fn first_year(&self) -> Option<i32> {
        self.counts.keys().next().copied()
    }

    pub fn last_year(&self) -> Option<i32> {
        self.counts.keys().next_back().copied()
    }

    /// Reads `year, age, count`; every row must name the same age.
    pub fn parse_csv<R: Read>(source: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            year: i32,
            age: u32,
            count: String,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let mut age = None;
        let mut pairs = Vec::new();
        for (i, row) in rdr.deserialize().enumerate() {
            let row: Row = row?;
            match age {
                None => age = Some(row.age),
                Some(a) if a != row.age => {
                    return Err(Error::Parse {
                        row: i + 2,
                        column: "age".into(),
                        message: format!("cohort age {} differs from {a}", row.age),
                    })
                }
                _ => {}
            }
            let count = parse_amount(&row.count).ok_or_else(|| Error::Parse {
                row: i + 2,
                column: "count".into(),
                message: format!("`{}` is not a number", row.count),
            })?;
            pairs.push((row.year, count));
        }
        let age = age.ok_or_else(|| Error::Invalid("empty cohort file".into()))?;
        Self::new(age, pairs)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["year", "age", "count"])?;
        for (y, n) in self.iter() {
            w.write_record([y.to_string(), self.specific_age.to_string(), fmt_f64(n)])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroState {
    pub year: i32,
    pub tcr: f64,
    pub gdp_per_capita: f64,
}

/// One advanced year of [`coupled_run`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroStep {
    pub state: MacroState,
    /// Real GDP growth from the cohort relation.
    pub dgdp: f64,
    /// Relative change of the total population.
    pub dnt: f64,
}

/// Real GDP growth from the cohort change and the previous year's trend.
pub fn gdp_growth_forward(n_now: f64, n_prev: f64, tcr_prev: f64) -> Result<f64> {
    if !(n_prev > 0.0) {
        return Err(Error::domain(format!("previous cohort {n_prev} must be positive")));
    }
    if !(tcr_prev > 0.0) {
        return Err(Error::domain(format!("critical experience {tcr_prev} must be positive")));
    }
    Ok(0.5 * (n_now - n_prev) / n_prev + 1.0 / tcr_prev)
}

/// Cohort size implied by observed growth: `n_prev (1 + 2 (dgdp - 1/tcr))`.
pub fn population_inverse(n_prev: f64, dgdp: f64, tcr: f64) -> Result<f64> {
    if !(n_prev > 0.0) {
        return Err(Error::domain(format!("previous cohort {n_prev} must be positive")));
    }
    if !(tcr > 0.0) {
        return Err(Error::domain(format!("critical experience {tcr} must be positive")));
    }
    // n_prev + n_prev*x rather than n_prev*(1 + x): keeps the round trip
    // with gdp_growth_forward within a few ulps
    let n = n_prev + n_prev * (2.0 * (dgdp - 1.0 / tcr));
    if !(n > 0.0) {
        return Err(Error::domain(format!(
            "growth {dgdp} with trend {} implies a non-positive cohort",
            1.0 / tcr
        )));
    }
    Ok(n)
}

/// Advances GDP per capita and `tcr` jointly over the cohort's years.
pub fn coupled_run(
    initial: MacroState,
    cohort: &CohortSeries,
    total_pop: &PopulationTotals,
) -> Result<Vec<MacroStep>> {
    if cohort.get(initial.year).is_none() {
        return Err(Error::Coverage(format!(
            "cohort series does not cover the initial year {}",
            initial.year
        )));
    }
    if !(initial.tcr > 0.0 && initial.gdp_per_capita > 0.0) {
        return Err(Error::domain("initial tcr and GDP per capita must be positive"));
    }
    let end = cohort.last_year().unwrap_or(initial.year);
    let mut state = initial;
    let mut steps = Vec::new();
    for year in initial.year + 1..=end {
        let (Some(n_now), Some(n_prev)) = (cohort.get(year), cohort.get(year - 1)) else {
            return Err(Error::Coverage(format!("cohort series has a gap at {year}")));
        };
        let dnt = total_pop
            .growth(year)
            .ok_or_else(|| Error::Coverage(format!("total population missing around {year}")))?;
        let dgdp = gdp_growth_forward(n_now, n_prev, state.tcr).map_err(|e| e.in_year(year))?;
        let tcr = tcr_step_percap(state.tcr, dgdp, dnt).map_err(|e| e.in_year(year))?;
        let gdp_per_capita = state.gdp_per_capita * (1.0 + dgdp - dnt);
        if !(gdp_per_capita > 0.0) {
            return Err(Error::Domain {
                year: Some(year),
                message: "GDP per capita collapsed to zero".into(),
            });
        }
        state = MacroState {
            year,
            tcr,
            gdp_per_capita,
        };
        steps.push(MacroStep { state, dgdp, dnt });
    }
    Ok(steps)
}

/// Writes `year, tcr, gdp_per_capita, dgdp`; the initial row has no growth.
pub fn write_macro_run<W: Write>(initial: &MacroState, steps: &[MacroStep], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["year", "tcr", "gdp_per_capita", "dgdp"])?;
    w.write_record([
        initial.year.to_string(),
        fmt_f64(initial.tcr),
        fmt_f64(initial.gdp_per_capita),
        String::new(),
    ])?;
    for s in steps {
        w.write_record([
            s.state.year.to_string(),
            fmt_f64(s.state.tcr),
            fmt_f64(s.state.gdp_per_capita),
            fmt_f64(s.dgdp),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Year-on-year real GDP growth. With population totals, the per-capita
/// series is turned into total GDP growth `(1 + g)(1 + dNT/NT) - 1`.
pub fn gdp_growth_rates(
    gdp: &GdpSeries,
    population_total: Option<&PopulationTotals>,
) -> Result<BTreeMap<i32, f64>> {
    let mut out = BTreeMap::new();
    for (year, _) in gdp.iter() {
        let Some(g) = gdp.growth(year) else { continue };
        let rate = match population_total {
            None => g,
            Some(pop) => {
                let Some(dnt) = pop.growth(year) else { continue };
                (1.0 + g) * (1.0 + dnt) - 1.0
            }
        };
        out.insert(year, rate);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InversionMode {
    /// Each year starts from the observed count of the previous year.
    OneStep,
    /// Each year starts from the previous estimate.
    Chained,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionPoint {
    pub year: i32,
    pub observed: f64,
    pub estimated: f64,
    /// `estimated / observed - 1`.
    pub rel_error: f64,
}

/// Estimates the cohort from GDP growth, using `tcr(i-1)` for year `i`.
pub fn invert_cohort(
    cohort: &CohortSeries,
    dgdp: &BTreeMap<i32, f64>,
    tcr: &TcrSeries,
    mode: InversionMode,
) -> Result<Vec<InversionPoint>> {
    let first = cohort
        .first_year()
        .ok_or_else(|| Error::Coverage("empty cohort series".into()))?;
    let end = cohort.last_year().unwrap_or(first);
    let mut estimate = cohort.get(first).unwrap_or_default();
    let mut out = Vec::new();
    for year in first + 1..=end {
        let observed = cohort
            .get(year)
            .ok_or_else(|| Error::Coverage(format!("cohort series has a gap at {year}")))?;
        let g = *dgdp
            .get(&year)
            .ok_or_else(|| Error::Coverage(format!("no GDP growth for {year}")))?;
        let t = tcr
            .get(year - 1)
            .ok_or_else(|| Error::Coverage(format!("no critical experience for {}", year - 1)))?;
        let base = match mode {
            InversionMode::OneStep => cohort.get(year - 1).unwrap_or(estimate),
            InversionMode::Chained => estimate,
        };
        estimate = population_inverse(base, g, t).map_err(|e| e.in_year(year))?;
        out.push(InversionPoint {
            year,
            observed,
            estimated: estimate,
            rel_error: estimate / observed - 1.0,
        });
    }
    Ok(out)
}

/// Root mean square of the relative errors.
pub fn rms_relative_error(points: &[InversionPoint]) -> Option<f64> {
    if points.is_empty() {
        return None;
    }
    let ss: f64 = points.iter().map(|p| p.rel_error * p.rel_error).sum();
    Some((ss / points.len() as f64).sqrt())
}

pub fn write_inversion<W: Write>(points: &[InversionPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["year", "observed", "estimated", "rel_error"])?;
    for p in points {
        w.write_record([
            p.year.to_string(),
            fmt_f64(p.observed),
            fmt_f64(p.estimated),
            fmt_f64(p.rel_error),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Inputs of a constant-trend income projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionSpec {
    pub tcr_start: f64,
    pub start_year: i32,
    /// Per-capita real growth per year.
    pub trend: f64,
    pub horizon: u32,
    pub spacing: u32,
    pub grid: Grid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionSnapshot {
    pub year: i32,
    pub tcr: f64,
    /// Sum over experience bins of binned curve value times population.
    pub total_model_units: f64,
    pub total_currency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub curves: CurveSet,
    pub snapshots: Vec<ProjectionSnapshot>,
}

/// Evolves `tcr` at a constant trend and emits a model curve and an
/// income total every `spacing` years.
pub fn project_income(
    params: &ModelParams,
    spec: &ProjectionSpec,
    pop_projection: &PopulationSeries,
    conversion: Option<&ConversionFit>,
) -> Result<Projection> {
    if !(spec.trend > -1.0) {
        return Err(Error::domain(format!("trend {} must exceed -1", spec.trend)));
    }
    if spec.spacing == 0 || !spec.horizon.is_multiple_of(spec.spacing) {
        return Err(Error::Config(format!(
            "spacing {} must be positive and divide horizon {}",
            spec.spacing, spec.horizon
        )));
    }
    let mut tcr = spec.tcr_start;
    let mut path = vec![(spec.start_year, tcr)];
    for k in 1..=spec.horizon as i32 {
        tcr = tcr_step(tcr, spec.trend).map_err(|e| e.in_year(spec.start_year + k))?;
        if (k as u32).is_multiple_of(spec.spacing) {
            path.push((spec.start_year + k, tcr));
        }
    }
    let series = TcrSeries::from_pairs(path.iter().copied())?;
    let years: Vec<i32> = path.iter().map(|p| p.0).collect();
    let curves = model_curveset(params, &series, &years, spec.grid)?;

    let mut snapshots = Vec::with_capacity(years.len());
    for &(year, tcr) in &path {
        let groups: Vec<_> = pop_projection
            .year(year)
            .into_iter()
            .filter(|(g, _)| g.lo >= 0)
            .collect();
        if groups.is_empty() {
            return Err(Error::Coverage(format!("population projection has no groups for {year}")));
        }
        let curve = curves.curve(year).unwrap_or_default();
        let intervals: Vec<_> = groups.iter().map(|(g, _)| *g).collect();
        let binned = bin_average(&curves.grid, curve, &intervals)?;
        let total: f64 = binned.iter().zip(&groups).map(|(v, (_, p))| v * p).sum();
        snapshots.push(ProjectionSnapshot {
            year,
            tcr,
            total_model_units: total,
            total_currency: conversion.map(|c| total * c.factor),
        });
    }
    Ok(Projection { curves, snapshots })
}

pub fn write_totals<W: Write>(snapshots: &[ProjectionSnapshot], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["year", "total_model_units", "total_currency"])?;
    for s in snapshots {
        w.write_record([
            s.year.to_string(),
            fmt_f64(s.total_model_units),
            fmt_opt(s.total_currency),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

fn default_specific_age() -> u32 {
    SPECIFIC_AGE_US_UK
}
fn default_horizon() -> u32 {
    20
}
fn default_spacing() -> u32 {
    5
}
fn default_anchor() -> Anchor {
    Anchor::TEN_YEAR
}
fn default_alpha() -> f64 {
    ModelParams::DEFAULT_ALPHA
}
fn default_decay_norm() -> f64 {
    ModelParams::DEFAULT_DECAY_NORM
}

/// Scenario configuration document shared by the model, macro and
/// projection commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_specific_age")]
    pub specific_age: u32,
    pub tcr0: f64,
    pub start_year: i32,
    #[serde(default)]
    pub trend: f64,
    #[serde(default = "default_horizon")]
    pub horizon: u32,
    #[serde(default = "default_spacing")]
    pub spacing: u32,
    #[serde(default = "default_anchor")]
    pub anchors: Anchor,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(rename = "L", default = "default_decay_norm")]
    pub decay_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.model_params()?;
        cfg.grid().points()?;
        if !(cfg.trend > -1.0) {
            return Err(Error::Config(format!("trend {} must exceed -1", cfg.trend)));
        }
        Ok(cfg)
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        let p = ModelParams {
            alpha: self.alpha,
            decay_norm: self.decay_norm,
            anchor: self.anchors,
            tcr0: self.tcr0,
            start_year: self.start_year,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn grid(&self) -> Grid {
        let d = Grid::default();
        Grid {
            step: self.grid_step.unwrap_or(d.step),
            t_max: self.t_max.unwrap_or(d.t_max),
        }
    }

    pub fn projection_spec(&self) -> ProjectionSpec {
        ProjectionSpec {
            tcr_start: self.tcr0,
            start_year: self.start_year,
            trend: self.trend,
            horizon: self.horizon,
            spacing: self.spacing,
            grid: self.grid(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::GroupInterval;
    use proptest::prelude::*;

    fn ulps(a: f64, b: f64) -> u64 {
        (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
    }

    fn flat(years: std::ops::RangeInclusive<i32>, v: f64) -> Vec<(i32, f64)> {
        years.map(|y| (y, v)).collect()
    }

    #[test]
    fn forward_examples() {
        assert_eq!(gdp_growth_forward(1000.0, 1000.0, 40.0).unwrap(), 0.025);
        assert!((gdp_growth_forward(1020.0, 1000.0, 40.0).unwrap() - 0.035).abs() < 1e-15);
        assert!((gdp_growth_forward(960.0, 1000.0, 40.0).unwrap() - 0.005).abs() < 1e-15);
        assert!(gdp_growth_forward(1.0, 0.0, 40.0).is_err());
        assert!(gdp_growth_forward(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(population_inverse(1000.0, 0.025, 40.0).unwrap(), 1000.0);
        assert!((population_inverse(1000.0, 0.035, 40.0).unwrap() - 1020.0).abs() < 1e-9);
        assert!(matches!(population_inverse(1000.0, -0.5, 40.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn coupled_run_flat_two_steps() {
        let cohort = CohortSeries::new(9, flat(2000..=2002, 1000.0)).unwrap();
        let pop = PopulationTotals::from_pairs(flat(2000..=2002, 1e6)).unwrap();
        let init = MacroState { year: 2000, tcr: 40.0, gdp_per_capita: 100.0 };
        let steps = coupled_run(init, &cohort, &pop).unwrap();
        assert_eq!(steps.len(), 2);
        // by hand: dGDP = 1/40, tcr1 = 40 sqrt(1.025); dGDP2 = 1/tcr1, tcr2 = tcr1 sqrt(1 + 1/tcr1)
        let tcr1 = 40.0 * (1.025f64).sqrt();
        assert_eq!(steps[0].dgdp, 0.025);
        assert!((steps[0].state.tcr - tcr1).abs() < 1e-12);
        assert!((steps[0].state.gdp_per_capita - 102.5).abs() < 1e-12);
        let tcr2 = tcr1 * (1.0 + 1.0 / tcr1).sqrt();
        assert!((steps[1].dgdp - 1.0 / tcr1).abs() < 1e-15);
        assert!((steps[1].state.tcr - tcr2).abs() < 1e-12);
    }

    #[test]
    fn coupled_run_one_year_matches_manual_composition() {
        let cohort = CohortSeries::new(9, [(1990, 1000.0), (1991, 1013.0)]).unwrap();
        let pop = PopulationTotals::from_pairs([(1990, 2.5e8), (1991, 2.53e8)]).unwrap();
        let init = MacroState { year: 1990, tcr: 38.0, gdp_per_capita: 30000.0 };
        let s = coupled_run(init, &cohort, &pop).unwrap()[0];
        let d = gdp_growth_forward(1013.0, 1000.0, 38.0).unwrap();
        let dnt = (2.53e8 - 2.5e8) / 2.5e8;
        assert_eq!(s.dgdp, d);
        assert_eq!(s.state.tcr, tcr_step_percap(38.0, d, dnt).unwrap());
        assert_eq!(s.state.gdp_per_capita, 30000.0 * (1.0 + d - dnt));
    }

    #[test]
    fn coupled_run_coverage() {
        let cohort = CohortSeries::new(9, [(1990, 1000.0), (1992, 1013.0)]).unwrap();
        let pop = PopulationTotals::from_pairs(flat(1990..=1992, 1.0)).unwrap();
        let init = MacroState { year: 1990, tcr: 38.0, gdp_per_capita: 1.0 };
        assert!(matches!(coupled_run(init, &cohort, &pop), Err(Error::Coverage(_))));
        let init = MacroState { year: 1980, ..init };
        assert!(matches!(coupled_run(init, &cohort, &pop), Err(Error::Coverage(_))));
    }

    #[test]
    fn inversion_one_step_and_chained() {
        let cohort = CohortSeries::new(9, [(2000, 1000.0), (2001, 1020.0), (2002, 1000.0)]).unwrap();
        let tcr = TcrSeries::from_pairs(flat(2000..=2002, 40.0)).unwrap();
        let dgdp: BTreeMap<i32, f64> = [(2001, 0.035), (2002, 0.025)].into_iter().collect();
        let one = invert_cohort(&cohort, &dgdp, &tcr, InversionMode::OneStep).unwrap();
        assert!((one[0].estimated - 1020.0).abs() < 1e-9);
        assert!((one[1].estimated - 1020.0).abs() < 1e-9);
        let chained = invert_cohort(&cohort, &dgdp, &tcr, InversionMode::Chained).unwrap();
        assert!((chained[1].estimated - 1020.0).abs() < 1e-9);
        assert!((one[1].rel_error - 0.02).abs() < 1e-12);
        assert!(rms_relative_error(&one).unwrap() > 0.0);
    }

    #[test]
    fn growth_rates_total_vs_percap() {
        let gdp = GdpSeries::from_pairs([(2000, 100.0), (2001, 102.0)]).unwrap();
        let pop = PopulationTotals::from_pairs([(2000, 100.0), (2001, 101.0)]).unwrap();
        let pc = gdp_growth_rates(&gdp, None).unwrap();
        assert!((pc[&2001] - 0.02).abs() < 1e-15);
        let total = gdp_growth_rates(&gdp, Some(&pop)).unwrap();
        assert!((total[&2001] - (1.02 * 1.01 - 1.0)).abs() < 1e-15);
    }

    fn projection_pop(years: std::ops::RangeInclusive<i32>) -> PopulationSeries {
        let mut p = PopulationSeries::new();
        for y in years {
            for lo in (0..70).step_by(10) {
                p.insert(y, GroupInterval { lo, hi: lo + 10 }, 1e6 + 1e4 * f64::from(y - 2000)).unwrap();
            }
        }
        p
    }

    fn spec(trend: f64) -> ProjectionSpec {
        ProjectionSpec {
            tcr_start: 40.0,
            start_year: 2000,
            trend,
            horizon: 20,
            spacing: 5,
            grid: Grid::default(),
        }
    }

    #[test]
    fn projection_zero_trend_is_fixed_point() {
        let params = ModelParams::new(25.0, 1950).unwrap();
        let p = project_income(&params, &spec(0.0), &projection_pop(2000..=2020), None).unwrap();
        assert_eq!(p.snapshots.len(), 5);
        let first = p.curves.curve(2000).unwrap();
        for c in p.curves.curves.values() {
            assert!(c.iter().zip(first).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        assert!(p.snapshots.iter().all(|s| s.tcr == 40.0));
    }

    #[test]
    fn projection_closed_form_tcr() {
        let params = ModelParams::new(25.0, 1950).unwrap();
        let fit = ConversionFit { factor: 72.0, residual_rms: 0.0, years: vec![], excluded_groups: vec![] };
        let p = project_income(&params, &spec(0.016), &projection_pop(2000..=2020), Some(&fit)).unwrap();
        let years: Vec<i32> = p.snapshots.iter().map(|s| s.year).collect();
        assert_eq!(years, vec![2000, 2005, 2010, 2015, 2020]);
        for w in p.snapshots.windows(2) {
            assert!(w[1].tcr > w[0].tcr);
        }
        for s in &p.snapshots {
            let y = f64::from(s.year - 2000);
            let closed = 40.0 * 1.016f64.powf(y / 2.0);
            assert!((s.tcr - closed).abs() / closed < 1e-10);
            assert_eq!(s.total_currency, Some(s.total_model_units * 72.0));
        }
    }

    #[test]
    fn projection_peak_moves_to_older_group() {
        // from tcr 40 in 2002 at 1.6%, [40,50) overtakes [30,40) in the 10-year bins
        let params = ModelParams::new(25.0, 1950).unwrap();
        let s = ProjectionSpec { start_year: 2002, horizon: 20, spacing: 1, ..spec(0.016) };
        let p = project_income(&params, &s, &projection_pop(2002..=2022), None).unwrap();
        let bins = [GroupInterval { lo: 30, hi: 40 }, GroupInterval { lo: 40, hi: 50 }];
        let binned = p.curves.binned(&bins).unwrap();
        let lead = binned.iter().find(|(_, v)| v[1] > v[0]).map(|(y, _)| *y);
        let lead = lead.expect("older group never takes the lead");
        assert!((2008..=2020).contains(&lead), "lead switches in {lead}");
    }

    #[test]
    fn projection_errors() {
        let params = ModelParams::new(25.0, 1950).unwrap();
        let pop = projection_pop(2000..=2020);
        assert!(project_income(&params, &ProjectionSpec { spacing: 3, ..spec(0.01) }, &pop, None).is_err());
        assert!(project_income(&params, &spec(-1.0), &pop, None).is_err());
        assert!(matches!(
            project_income(&params, &spec(0.01), &projection_pop(2000..=2010), None),
            Err(Error::Coverage(_))
        ));
    }

    #[test]
    fn scenario_config_parsing() {
        let cfg = ScenarioConfig::from_json(
            r#"{"tcr0": 25, "start_year": 1950, "anchors": {"exp": 67, "ratio": 0.45}, "L": 1.0}"#,
        )
        .unwrap();
        assert_eq!(cfg.specific_age, 9);
        assert_eq!(cfg.anchors, Anchor::FIVE_YEAR);
        assert_eq!(cfg.horizon, 20);
        assert!(ScenarioConfig::from_json(r#"{"tcr0": 25}"#).is_err());
        assert!(ScenarioConfig::from_json(r#"{"tcr0": 25, "start_year": 1950, "alpha": -1}"#).is_err());
        assert!(ScenarioConfig::from_json(r#"{"tcr0": 25, "start_year": 1950, "bogus": 1}"#).is_err());
    }

    #[test]
    fn cohort_csv_round_trip() {
        let c = CohortSeries::new(9, [(1978, 3598578.0), (1979, 3734606.0)]).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert_eq!(CohortSeries::parse_csv(buf.as_slice()).unwrap(), c);
        let mixed = "year,age,count\n1978,9,10\n1979,10,11\n";
        assert!(CohortSeries::parse_csv(mixed.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn forward_inverse_round_trip(
            n_prev in 1e3f64..1e7,
            change in -0.1f64..0.1,
            tcr in 10.0f64..60.0,
        ) {
            let n = n_prev * (1.0 + change);
            let d = gdp_growth_forward(n, n_prev, tcr).unwrap();
            let back = population_inverse(n_prev, d, tcr).unwrap();
            prop_assert!(ulps(back, n) <= 4, "{} vs {}", back, n);
        }

        #[test]
        fn forward_monotonicity(n_prev in 1e3f64..1e6, a in -0.1f64..0.1, b in -0.1f64..0.1, t in 10.0f64..60.0) {
            prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let f_lo = gdp_growth_forward(n_prev * (1.0 + lo), n_prev, t).unwrap();
            let f_hi = gdp_growth_forward(n_prev * (1.0 + hi), n_prev, t).unwrap();
            prop_assert!(f_lo < f_hi);
            let g1 = gdp_growth_forward(n_prev, n_prev, t).unwrap();
            let g2 = gdp_growth_forward(n_prev, n_prev, t + 1.0).unwrap();
            prop_assert!(g2 < g1);
        }

        #[test]
        fn flat_coupled_run_trend(tcr0 in 15.0f64..55.0, years in 2usize..30) {
            let end = 2000 + years as i32;
            let cohort = CohortSeries::new(9, flat(2000..=end, 5000.0)).unwrap();
            let pop = PopulationTotals::from_pairs(flat(2000..=end, 1e8)).unwrap();
            let init = MacroState { year: 2000, tcr: tcr0, gdp_per_capita: 1.0 };
            let steps = coupled_run(init, &cohort, &pop).unwrap();
            let mut prev = tcr0;
            for s in steps {
                prop_assert_eq!(s.dgdp, 1.0 / prev);
                prop_assert!(s.state.tcr > prev);
                prev = s.state.tcr;
            }
        }
    }
}
