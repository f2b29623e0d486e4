//! Distribution of true saturation at each pulse-oximeter reading, by group.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::{has_gold_standard, PatientRecord};
use crate::error::{Error, Result};
use crate::metrics::wstar_bin;

pub const FIGURE_CSV_COLUMNS: [&str; 8] = ["bin_center", "group_a", "count", "min", "q1", "median", "q3", "max"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureBin {
    pub bin_center: f64,
    pub group_a: u8,
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureSummary {
    pub bin_width: f64,
    pub range: (f64, f64),
    /// Hypoxemia threshold drawn across the plot.
    pub reference_line: f64,
    /// Records whose W* falls outside `range`.
    pub out_of_range: usize,
    /// Non-empty (bin, group) cells ordered by bin then group.
    pub bins: Vec<FigureBin>,
}

/// Type-7 sample quantile of sorted data (linear interpolation between order
/// statistics at position (n − 1)·p).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn figure_summary(
    cohort: &[PatientRecord],
    bin_width: f64,
    range: (f64, f64),
    reference_line: f64,
) -> Result<FigureSummary> {
    if !has_gold_standard(cohort) {
        return Err(Error::NoGoldStandard);
    }
    if !(bin_width > 0.0) {
        return Err(Error::InvalidArgument(format!("bin width must be positive, got {bin_width}")));
    }
    if !(range.0 <= range.1) {
        return Err(Error::InvalidArgument(format!("empty range [{}, {}]", range.0, range.1)));
    }
    let mut cells: BTreeMap<(i64, u8), Vec<f64>> = BTreeMap::new();
    let mut out_of_range = 0;
    for r in cohort {
        if r.w_star < range.0 || r.w_star > range.1 {
            out_of_range += 1;
            continue;
        }
        let w = r.w_true.expect("gold standard checked");
        cells.entry((wstar_bin(r.w_star, bin_width), r.group_a)).or_default().push(w);
    }
    let bins = cells
        .into_iter()
        .map(|((key, group_a), mut ws)| {
            ws.sort_by(f64::total_cmp);
            FigureBin {
                bin_center: key as f64 * bin_width,
                group_a,
                count: ws.len(),
                min: ws[0],
                q1: quantile_sorted(&ws, 0.25),
                median: quantile_sorted(&ws, 0.5),
                q3: quantile_sorted(&ws, 0.75),
                max: ws[ws.len() - 1],
            }
        })
        .collect();
    Ok(FigureSummary { bin_width, range, reference_line, out_of_range, bins })
}

impl FigureSummary {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(FIGURE_CSV_COLUMNS)?;
        let f = |x: f64| format!("{x:.4}");
        for b in &self.bins {
            w.write_record([
                f(b.bin_center),
                b.group_a.to_string(),
                b.count.to_string(),
                f(b.min),
                f(b.q1),
                f(b.median),
                f(b.q3),
                f(b.max),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, ScenarioConfig};

    fn rec(id: u64, a: u8, w: f64, w_star: f64) -> PatientRecord {
        PatientRecord {
            patient_id: id,
            group_a: a,
            w_true: Some(w),
            w_star,
            epsilon: Some(w_star - w),
            treated: 0,
            outcome: 0,
            clamped: false,
        }
    }

    #[test]
    fn type7_quantiles() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&xs, 0.25), 1.75);
        assert_eq!(quantile_sorted(&xs, 0.5), 2.5);
        assert_eq!(quantile_sorted(&xs, 0.75), 3.25);
        assert_eq!(quantile_sorted(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn exact_measurement_medians_stay_in_bin() {
        let cohort: Vec<PatientRecord> = (0..2000)
            .map(|i| {
                let w = 80.0 + (i as f64 * 0.0137) % 20.0;
                rec(i, (i % 2) as u8, w, w)
            })
            .collect();
        let fig = figure_summary(&cohort, 1.0, (0.0, 100.0), 88.0).unwrap();
        for b in &fig.bins {
            assert!((b.median - b.bin_center).abs() <= 0.5, "{b:?}");
            assert!(b.min <= b.q1 && b.q1 <= b.median && b.median <= b.q3 && b.q3 <= b.max);
        }
        assert_eq!(fig.bins.iter().map(|b| b.count).sum::<usize>(), 2000);
    }

    #[test]
    fn out_of_range_accounting() {
        let cohort = vec![rec(0, 0, 90.0, 90.0), rec(1, 1, 95.0, 99.0), rec(2, 1, 80.0, 83.0)];
        let fig = figure_summary(&cohort, 1.0, (85.0, 96.0), 88.0).unwrap();
        assert_eq!(fig.out_of_range, 2);
        assert_eq!(fig.bins.len(), 1);
        let csv = fig.to_csv().unwrap();
        assert_eq!(
            csv,
            "bin_center,group_a,count,min,q1,median,q3,max\n90.0000,0,1,90.0000,90.0000,90.0000,90.0000,90.0000\n"
        );
    }

    #[test]
    fn overreading_shifts_group1_down() {
        let cohort = generate_cohort(&ScenarioConfig { n_total: 20_000, ..ScenarioConfig::default() }).unwrap();
        let fig = figure_summary(&cohort, 1.0, (0.0, 100.0), 88.0).unwrap();
        let median = |center: f64, a: u8| {
            fig.bins
                .iter()
                .find(|b| b.bin_center == center && b.group_a == a)
                .map(|b| b.median)
                .unwrap()
        };
        for center in [91.0, 92.0, 93.0] {
            assert!(median(center, 1) < median(center, 0), "bin {center}");
        }
        assert_eq!(fig.bins.iter().map(|b| b.count).sum::<usize>() + fig.out_of_range, 20_000);
    }

    #[test]
    fn gold_free_rejected() {
        let cohort = vec![PatientRecord { w_true: None, epsilon: None, ..rec(0, 0, 90.0, 90.0) }];
        assert!(matches!(figure_summary(&cohort, 1.0, (0.0, 100.0), 88.0), Err(Error::NoGoldStandard)));
    }
}
