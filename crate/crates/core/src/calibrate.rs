//! Fitting the model to observed tables.
//!
//! Least squares throughout is computed from centered sums; calendar years
//! as raw abscissae would otherwise cancel catastrophically.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{fmt_f64, fmt_opt};
use crate::ingest::{Gender, GroupInterval, IncomeTable, Statistic};
use crate::kinetics::{bin_average, CurveSet};

/// Values keyed by (year, group).
pub type KeyedValues = BTreeMap<(i32, GroupInterval), f64>;

/// Scale mapping dimensionless model income to observed currency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionFit {
    pub factor: f64,
    pub residual_rms: f64,
    pub years: Vec<i32>,
    pub excluded_groups: Vec<GroupInterval>,
}

impl ConversionFit {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let fit: ConversionFit = serde_json::from_str(text)?;
        if !(fit.factor > 0.0) || !(fit.residual_rms >= 0.0) {
            return Err(Error::Invalid(format!(
                "conversion fit needs factor > 0 and residual >= 0, got {} / {}",
                fit.factor, fit.residual_rms
            )));
        }
        Ok(fit)
    }
}

/// Least-squares factor through the origin, `k = sum(p o) / sum(p^2)`.
pub fn fit_conversion(predicted: &KeyedValues, observed: &KeyedValues) -> Result<ConversionFit> {
    if predicted.is_empty() || observed.is_empty() {
        return Err(Error::Fit("no overlapping (year, group) values to fit".into()));
    }
    if predicted.keys().ne(observed.keys()) {
        return Err(Error::Fit("predicted and observed group sets differ".into()));
    }
    let (spo, spp) = predicted
        .values()
        .zip(observed.values())
        .fold((0.0, 0.0), |(spo, spp), (p, o)| (spo + p * o, spp + p * p));
    if spp == 0.0 {
        return Err(Error::Fit("every predicted value is zero".into()));
    }
    let factor = spo / spp;
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Fit(format!("fitted factor {factor} is not positive")));
    }
    let sse: f64 = predicted
        .values()
        .zip(observed.values())
        .map(|(p, o)| (factor * p - o).powi(2))
        .sum();
    let residual_rms = (sse / predicted.len() as f64).sqrt();
    let years: BTreeSet<i32> = predicted.keys().map(|k| k.0).collect();
    Ok(ConversionFit {
        factor,
        residual_rms,
        years: years.into_iter().collect(),
        excluded_groups: Vec::new(),
    })
}

/// Pairs each observed combined-gender cell of `years` with the model curve
/// averaged over the same group.
pub fn conversion_inputs(
    model: &CurveSet,
    observed: &IncomeTable,
    years: &[i32],
    exclude: &[GroupInterval],
) -> Result<(KeyedValues, KeyedValues)> {
    let mut pred = KeyedValues::new();
    let mut obs = KeyedValues::new();
    for &year in years {
        let curve = model
            .curve(year)
            .ok_or_else(|| Error::Key(format!("no model curve for {year}")))?;
        let row = observed.combined_row(year);
        if row.is_empty() {
            return Err(Error::Key(format!("no observed cells for {year}")));
        }
        for cell in row.into_iter().filter(|c| !exclude.contains(&c.group)) {
            let p = bin_average(&model.grid, curve, &[cell.group])?[0];
            pred.insert((year, cell.group), p);
            obs.insert((year, cell.group), cell.mean_income);
        }
    }
    Ok((pred, obs))
}

/// Joint conversion fit over `years`, optionally leaving out the youngest
/// group of the table, where model and survey are known to diverge.
pub fn fit_conversion_for_years(
    model: &CurveSet,
    observed: &IncomeTable,
    years: &[i32],
    exclude_youngest: bool,
) -> Result<ConversionFit> {
    let excluded: Vec<GroupInterval> = if exclude_youngest {
        observed.groups().into_iter().next().into_iter().collect()
    } else {
        Vec::new()
    };
    let (pred, obs) = conversion_inputs(model, observed, years, &excluded)?;
    let mut fit = fit_conversion(&pred, &obs)?;
    fit.excluded_groups = excluded;
    Ok(fit)
}

/// Straight line `value = intercept + slope * year` for one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupRegression {
    pub group: GroupInterval,
    pub slope: f64,
    /// Fitted value at calendar year 0.
    pub intercept: f64,
    /// Year at which the line reaches 1.0; `None` for a flat line.
    pub unit_crossing_year: Option<f64>,
    pub r_squared: f64,
    /// The crossing lies outside the span of the data.
    pub extrapolated: bool,
}

impl GroupRegression {
    /// Fitted value at a calendar year.
    pub fn predict(&self, year: f64) -> f64 {
        self.intercept + self.slope * year
    }
}

struct Centered {
    x_mean: f64,
    y_mean: f64,
    sxx: f64,
    sxy: f64,
    syy: f64,
    x_min: f64,
    x_max: f64,
}

fn centered(series: &[(f64, f64)]) -> Result<Centered> {
    if series.len() < 3 {
        return Err(Error::Fit(format!(
            "regression needs at least 3 points, got {}",
            series.len()
        )));
    }
    let n = series.len() as f64;
    let x_mean = series.iter().map(|p| p.0).sum::<f64>() / n;
    let y_mean = series.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in series {
        let (dx, dy) = (x - x_mean, y - y_mean);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
        x_min = x_min.min(x);
        x_max = x_max.max(x);
    }
    if sxx == 0.0 {
        return Err(Error::Rank("all observations share the same year".into()));
    }
    Ok(Centered {
        x_mean,
        y_mean,
        sxx,
        sxy,
        syy,
        x_min,
        x_max,
    })
}

fn finish(group: GroupInterval, series: &[(f64, f64)], c: &Centered, slope: f64) -> GroupRegression {
    let intercept = c.y_mean - slope * c.x_mean;
    let sse: f64 = series
        .iter()
        .map(|&(x, y)| {
            let r = y - (c.y_mean + slope * (x - c.x_mean));
            r * r
        })
        .sum();
    let r_squared = if c.syy == 0.0 {
        if sse == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (1.0 - sse / c.syy).clamp(0.0, 1.0)
    };
    let unit_crossing_year = (slope != 0.0).then(|| c.x_mean + (1.0 - c.y_mean) / slope);
    let extrapolated = unit_crossing_year.is_some_and(|y| y < c.x_min || y > c.x_max);
    GroupRegression {
        group,
        slope,
        intercept,
        unit_crossing_year,
        r_squared,
        extrapolated,
    }
}

/// Ordinary least squares of normalized value on calendar year.
pub fn regress_group(group: GroupInterval, series: &[(f64, f64)]) -> Result<GroupRegression> {
    let c = centered(series)?;
    let slope = c.sxy / c.sxx;
    Ok(finish(group, series, &c, slope))
}

/// Least squares with the slope held fixed; the line passes through the
/// centroid of the data.
pub fn regress_group_with_slope(
    group: GroupInterval,
    series: &[(f64, f64)],
    imposed_slope: f64,
) -> Result<GroupRegression> {
    if !imposed_slope.is_finite() {
        return Err(Error::Fit(format!("imposed slope {imposed_slope} is not finite")));
    }
    let c = centered(series)?;
    Ok(finish(group, series, &c, imposed_slope))
}

/// Regressions for every combined-gender group of a table.
pub fn regress_table(table: &IncomeTable, imposed_slope: Option<f64>) -> Result<Vec<GroupRegression>> {
    table
        .groups()
        .into_iter()
        .map(|group| {
            let series: Vec<(f64, f64)> = table
                .group_history(group)
                .into_iter()
                .map(|(y, v)| (f64::from(y), v))
                .collect();
            match imposed_slope {
                Some(s) => regress_group_with_slope(group, &series, s),
                None => regress_group(group, &series),
            }
            .map_err(|e| match e {
                Error::Fit(m) => Error::Fit(format!("group {group}: {m}")),
                Error::Rank(m) => Error::Rank(format!("group {group}: {m}")),
                other => other,
            })
        })
        .collect()
}

pub fn write_regressions<W: Write>(regs: &[GroupRegression], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "group_lo",
        "group_hi",
        "slope",
        "intercept",
        "crossing_year",
        "r2",
        "extrapolated",
    ])?;
    for r in regs {
        w.write_record([
            r.group.lo.to_string(),
            r.group.hi.to_string(),
            fmt_f64(r.slope),
            fmt_f64(r.intercept),
            fmt_opt(r.unit_crossing_year),
            fmt_f64(r.r_squared),
            r.extrapolated.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeakGroup {
    pub group: GroupInterval,
    /// Another group had exactly the same value.
    pub tie: bool,
}

/// The group with the largest value in each year. Ties go to the group with
/// less experience and are flagged.
pub fn peak_group_history(table: &IncomeTable) -> Result<BTreeMap<i32, PeakGroup>> {
    let mut out = BTreeMap::new();
    for year in table.years() {
        let row = table.combined_row(year);
        let Some(first) = row.first() else {
            return Err(Error::Key(format!("no combined-gender cells for {year}")));
        };
        let mut best = *first;
        let mut tie = false;
        for cell in &row[1..] {
            if cell.mean_income > best.mean_income {
                best = cell;
                tie = false;
            } else if cell.mean_income == best.mean_income {
                tie = true;
            }
        }
        out.insert(
            year,
            PeakGroup {
                group: best.group,
                tie,
            },
        );
    }
    if out.is_empty() {
        return Err(Error::Key("table has no years".into()));
    }
    Ok(out)
}

pub fn write_peak_history<W: Write>(history: &BTreeMap<i32, PeakGroup>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["year", "exp_lo", "exp_hi", "tie"])?;
    for (y, p) in history {
        w.write_record([
            y.to_string(),
            p.group.lo.to_string(),
            p.group.hi.to_string(),
            p.tie.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioPoint {
    pub year: i32,
    pub group: GroupInterval,
    pub ratio: f64,
    /// Median above mean: unusual for right-skewed income data.
    pub flagged: bool,
}

/// Median over mean for every (year, group) present in both tables.
pub fn median_mean_ratio(median: &IncomeTable, mean: &IncomeTable) -> Result<Vec<RatioPoint>> {
    if median.statistic != Statistic::Median {
        return Err(Error::KeyMismatch("first table is not a median table".into()));
    }
    if mean.statistic != Statistic::Mean {
        return Err(Error::KeyMismatch("second table is not a mean table".into()));
    }
    let mut out = Vec::new();
    for m in median.cells().filter(|c| c.gender == Gender::Combined) {
        let Some(avg) = mean.get(m.year, m.group, Gender::Combined) else {
            continue;
        };
        if avg.mean_income == 0.0 {
            return Err(Error::Division(format!(
                "zero mean income for {} {}",
                m.year, m.group
            )));
        }
        let ratio = m.mean_income / avg.mean_income;
        out.push(RatioPoint {
            year: m.year,
            group: m.group,
            ratio,
            flagged: ratio > 1.0,
        });
    }
    if out.is_empty() {
        return Err(Error::KeyMismatch("median and mean tables share no keys".into()));
    }
    Ok(out)
}

pub fn write_ratios<W: Write>(ratios: &[RatioPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["year", "exp_lo", "exp_hi", "ratio", "flagged"])?;
    for r in ratios {
        w.write_record([
            r.year.to_string(),
            r.group.lo.to_string(),
            r.group.hi.to_string(),
            fmt_f64(r.ratio),
            r.flagged.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{DollarBasis, IncomeCell};
    use proptest::prelude::*;

    fn g(lo: i32, hi: i32) -> GroupInterval {
        GroupInterval { lo, hi }
    }

    fn keyed(values: &[f64]) -> KeyedValues {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| ((2000, g(10 * i as i32, 10 * i as i32 + 10)), *v))
            .collect()
    }

    fn table(stat: Statistic, rows: &[(i32, GroupInterval, f64)]) -> IncomeTable {
        let mut t = IncomeTable::new(DollarBasis::Chained2001Dollars, stat);
        for &(year, group, v) in rows {
            t.insert(IncomeCell {
                year,
                group,
                gender: Gender::Combined,
                mean_income: v,
                n_with_income: 1.0,
            })
            .unwrap();
        }
        t
    }

    #[test]
    fn conversion_proportional() {
        let p = keyed(&[0.2, 0.7, 1.0, 0.9]);
        let o = keyed(&[0.6, 2.1, 3.0, 2.7]);
        let fit = fit_conversion(&p, &o).unwrap();
        assert!((fit.factor - 3.0).abs() < 1e-14);
        assert!(fit.residual_rms < 1e-14);
        assert_eq!(fit.years, vec![2000]);
    }

    #[test]
    fn conversion_closed_form() {
        // k = (1*2 + 2*2) / (1 + 4) = 6/5
        let fit = fit_conversion(&keyed(&[1.0, 2.0]), &keyed(&[2.0, 2.0])).unwrap();
        assert!((fit.factor - 1.2).abs() < 1e-15);
        // residuals -0.8, 0.4
        assert!((fit.residual_rms - (0.4f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn conversion_errors() {
        assert!(fit_conversion(&KeyedValues::new(), &KeyedValues::new()).is_err());
        assert!(fit_conversion(&keyed(&[1.0]), &keyed(&[1.0, 2.0])).is_err());
        assert!(fit_conversion(&keyed(&[0.0, 0.0]), &keyed(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn regression_recovers_exact_line() {
        let series: Vec<(f64, f64)> = (1967..=2001)
            .map(|y| (f64::from(y), 1.0 - 0.075 * f64::from(y - 1945)))
            .collect();
        let r = regress_group(g(10, 20), &series).unwrap();
        assert!((r.slope + 0.075).abs() < 1e-10);
        assert!((r.unit_crossing_year.unwrap() - 1945.0).abs() < 1e-9);
        assert!((r.r_squared - 1.0).abs() < 1e-12);
        assert!(r.extrapolated);
        assert!((r.predict(1945.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn regression_flat_series() {
        let series: Vec<(f64, f64)> = (1967..1980).map(|y| (f64::from(y), 0.9)).collect();
        let r = regress_group(g(0, 10), &series).unwrap();
        assert_eq!(r.slope, 0.0);
        assert_eq!(r.unit_crossing_year, None);
        assert!(!r.extrapolated);
    }

    #[test]
    fn regression_errors() {
        assert!(matches!(
            regress_group(g(0, 10), &[(1990.0, 1.0), (1991.0, 0.9)]),
            Err(Error::Fit(_))
        ));
        assert!(matches!(
            regress_group(g(0, 10), &[(1990.0, 1.0), (1990.0, 0.9), (1990.0, 0.8)]),
            Err(Error::Rank(_))
        ));
    }

    #[test]
    fn imposed_slope_consistency() {
        let series: Vec<(f64, f64)> = (1970..1990)
            .map(|y| (f64::from(y), 0.5 + 0.01 * f64::from(y - 1970)))
            .collect();
        let free = regress_group(g(0, 10), &series).unwrap();
        let fixed = regress_group_with_slope(g(0, 10), &series, free.slope).unwrap();
        assert!((free.intercept - fixed.intercept).abs() < 1e-10);
        assert_eq!(free.unit_crossing_year, fixed.unit_crossing_year);
    }

    #[test]
    fn imposed_slope_through_centroid() {
        // constant 0.5 with slope -0.1: 0.5 - 0.1 (x - mean) = 1  =>  x = mean - 5
        let series: Vec<(f64, f64)> = (1980..=1990).map(|y| (f64::from(y), 0.5)).collect();
        let r = regress_group_with_slope(g(0, 10), &series, -0.1).unwrap();
        assert!((r.unit_crossing_year.unwrap() - 1980.0).abs() < 1e-9);
    }

    #[test]
    fn peak_history_single_group_and_ties() {
        let one = table(Statistic::Mean, &[(1990, g(0, 10), 1.0), (1991, g(0, 10), 2.0)]);
        let h = peak_group_history(&one).unwrap();
        assert!(h.values().all(|p| p.group == g(0, 10) && !p.tie));

        let tied = table(
            Statistic::Mean,
            &[(1990, g(20, 30), 1.0), (1990, g(30, 40), 1.0), (1990, g(0, 10), 0.5)],
        );
        let h = peak_group_history(&tied).unwrap();
        assert_eq!(h[&1990], PeakGroup { group: g(20, 30), tie: true });
    }

    #[test]
    fn peak_history_switch() {
        let t = table(
            Statistic::Mean,
            &[
                (1980, g(20, 30), 1.0),
                (1980, g(30, 40), 0.95),
                (1990, g(20, 30), 0.97),
                (1990, g(30, 40), 1.0),
            ],
        );
        let h = peak_group_history(&t).unwrap();
        assert_eq!(h[&1980].group, g(20, 30));
        assert_eq!(h[&1990].group, g(30, 40));
    }

    #[test]
    fn peak_history_empty_table() {
        let t = table(Statistic::Mean, &[]);
        assert!(matches!(peak_group_history(&t), Err(Error::Key(_))));
    }

    #[test]
    fn ratio_examples() {
        let med = table(Statistic::Median, &[(1974, g(20, 30), 85.0), (1975, g(20, 30), 100.0)]);
        let mean = table(Statistic::Mean, &[(1974, g(20, 30), 100.0), (1975, g(20, 30), 100.0)]);
        let r = median_mean_ratio(&med, &mean).unwrap();
        assert_eq!(r[0].ratio, 0.85);
        assert_eq!(r[1].ratio, 1.0);
        assert!(!r[1].flagged);

        let zero = table(Statistic::Mean, &[(1974, g(20, 30), 0.0)]);
        assert!(matches!(median_mean_ratio(&med, &zero), Err(Error::Division(_))));
        assert!(median_mean_ratio(&mean, &med).is_err());
    }

    proptest! {
        #[test]
        fn conversion_scale_equivariance(
            vals in proptest::collection::vec((0.05f64..1.0, 1e3f64..1e5), 2..8),
            c in 0.01f64..100.0,
        ) {
            let p = keyed(&vals.iter().map(|v| v.0).collect::<Vec<_>>());
            let o = keyed(&vals.iter().map(|v| v.1).collect::<Vec<_>>());
            let base = fit_conversion(&p, &o).unwrap().factor;
            let o_scaled: KeyedValues = o.iter().map(|(k, v)| (*k, v * c)).collect();
            let p_scaled: KeyedValues = p.iter().map(|(k, v)| (*k, v * c)).collect();
            let up = fit_conversion(&p, &o_scaled).unwrap().factor;
            let down = fit_conversion(&p_scaled, &o).unwrap().factor;
            prop_assert!((up - base * c).abs() <= 1e-12 * base * c);
            prop_assert!((down - base / c).abs() <= 1e-12 * base / c);
        }

        #[test]
        fn regression_exact_and_recentering(
            slope in -0.2f64..0.2,
            anchor in 0.0f64..2.0,
            shift in -3000.0f64..3000.0,
            n in 3usize..40,
        ) {
            let series: Vec<(f64, f64)> = (0..n)
                .map(|i| { let x = 1967.0 + i as f64; (x, anchor + slope * (x - 1967.0)) })
                .collect();
            let r = regress_group(g(0, 10), &series).unwrap();
            prop_assert!((r.slope - slope).abs() < 1e-10);
            prop_assert!((r.predict(1967.0) - anchor).abs() < 1e-10);
            let shifted: Vec<(f64, f64)> = series.iter().map(|&(x, y)| (x + shift, y)).collect();
            let rs = regress_group(g(0, 10), &shifted).unwrap();
            match (r.unit_crossing_year, rs.unit_crossing_year) {
                (Some(a), Some(b)) => prop_assert!((a - (b - shift)).abs() <= 1e-6 * (1.0 + a.abs())),
                (None, None) => {}
                _ => prop_assert!(false, "crossing presence changed"),
            }
            let fixed = regress_group_with_slope(g(0, 10), &series, r.slope).unwrap();
            prop_assert!((fixed.intercept - r.intercept).abs() < 1e-10);
        }

        #[test]
        fn peak_group_invariant_to_rescaling(
            rows in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 5), 1..6),
            scales in proptest::collection::vec(0.1f64..10.0, 6),
        ) {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for (yi, row) in rows.iter().enumerate() {
                for (gi, v) in row.iter().enumerate() {
                    let key = (1990 + yi as i32, g(10 * gi as i32, 10 * gi as i32 + 10));
                    a.push((key.0, key.1, *v));
                    b.push((key.0, key.1, *v * scales[yi]));
                }
            }
            let ha = peak_group_history(&table(Statistic::Mean, &a)).unwrap();
            let hb = peak_group_history(&table(Statistic::Mean, &b)).unwrap();
            for (y, p) in &ha {
                if !p.tie {
                    prop_assert_eq!(p.group, hb[y].group);
                }
            }
        }
    }
}
