//! Two-sample and contingency-table tests. No continuity corrections anywhere.

use serde::{Deserialize, Serialize};

use super::special::{chi_square_sf, normal_cdf, student_t_sf};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    OneSidedLower,
    OneSidedUpper,
    TwoSided,
}

/// Outcome of a single hypothesis test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    /// Degrees of freedom; `None` for z tests.
    pub df: Option<f64>,
    pub p_value: f64,
    pub direction: Tail,
    /// Set when the statistic is undefined and `p_value` is a neutral value
    /// (0.5 one-sided, 1 two-sided).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl TestResult {
    pub fn rejects(&self, level: f64) -> bool {
        self.p_value < level
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

/// Welch's unequal-variance t test of H1: mean(sample_hi) > mean(sample_lo).
pub fn welch_t_one_sided(sample_hi: &[f64], sample_lo: &[f64]) -> Result<TestResult> {
    if sample_hi.len() < 2 || sample_lo.len() < 2 {
        return Err(Error::Untestable(format!(
            "Welch test needs at least 2 observations per sample (got {} and {})",
            sample_hi.len(),
            sample_lo.len()
        )));
    }
    let (m1, v1) = mean_var(sample_hi);
    let (m0, v0) = mean_var(sample_lo);
    let (n1, n0) = (sample_hi.len() as f64, sample_lo.len() as f64);
    let (a, b) = (v1 / n1, v0 / n0);
    let se2 = a + b;
    if !(se2 > 0.0) {
        return Err(Error::Untestable(
            "both samples have zero variance".into(),
        ));
    }
    let t = (m1 - m0) / se2.sqrt();
    let df = se2 * se2 / (a * a / (n1 - 1.0) + b * b / (n0 - 1.0));
    Ok(TestResult {
        statistic: t,
        df: Some(df),
        p_value: student_t_sf(t, df)?,
        direction: Tail::OneSidedUpper,
        degenerate: false,
    })
}

/// Pooled two-proportion z test of H1: x1/n1 < x0/n0.
pub fn two_proportion_one_sided(x1: u64, n1: u64, x0: u64, n0: u64) -> Result<TestResult> {
    if n1 == 0 || n0 == 0 {
        return Err(Error::Untestable("empty group in proportion test".into()));
    }
    if x1 > n1 || x0 > n0 {
        return Err(Error::InvalidArgument(format!(
            "successes exceed trials ({x1}/{n1}, {x0}/{n0})"
        )));
    }
    let (n1f, n0f) = (n1 as f64, n0 as f64);
    let pooled = (x1 + x0) as f64 / (n1f + n0f);
    if pooled == 0.0 || pooled == 1.0 {
        return Ok(TestResult {
            statistic: 0.0,
            df: None,
            p_value: 0.5,
            direction: Tail::OneSidedLower,
            degenerate: true,
        });
    }
    let se = (pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n0f)).sqrt();
    let z = (x1 as f64 / n1f - x0 as f64 / n0f) / se;
    Ok(TestResult {
        statistic: z,
        df: None,
        p_value: normal_cdf(z),
        direction: Tail::OneSidedLower,
        degenerate: false,
    })
}

/// R×C table of non-negative counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let cols = counts.first().map_or(0, Vec::len);
        if counts.len() < 2 || cols < 2 {
            return Err(Error::InvalidArgument(
                "contingency table needs at least 2 rows and 2 columns".into(),
            ));
        }
        if counts.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged contingency table".into()));
        }
        Ok(Self { counts })
    }

    pub fn from_2x2(cells: [[u64; 2]; 2]) -> Self {
        Self {
            counts: cells.iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    fn col_totals(&self) -> Vec<u64> {
        (0..self.counts[0].len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }
}

/// Pearson χ² test of independence, df = (R-1)(C-1).
pub fn chi_square_independence(table: &ContingencyTable) -> Result<TestResult> {
    let rows = table.row_totals();
    let cols = table.col_totals();
    if let Some(i) = rows.iter().position(|&t| t == 0) {
        return Err(Error::EmptyMargin { axis: "row", index: i });
    }
    if let Some(j) = cols.iter().position(|&t| t == 0) {
        return Err(Error::EmptyMargin { axis: "column", index: j });
    }
    let total = rows.iter().sum::<u64>() as f64;
    let mut stat = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            let expected = rows[i] as f64 * cols[j] as f64 / total;
            let d = obs as f64 - expected;
            stat += d * d / expected;
        }
    }
    let df = ((rows.len() - 1) * (cols.len() - 1)) as f64;
    Ok(TestResult {
        statistic: stat,
        df: Some(df),
        p_value: chi_square_sf(stat, df)?,
        direction: Tail::TwoSided,
        degenerate: false,
    })
}

/// One 2×2 stratum for the Cochran–Mantel–Haenszel test.
/// Cell `[0][0]` is the one whose hypergeometric moments enter the statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Stratum(pub [[u64; 2]; 2]);

impl Stratum {
    /// (a - E[a], Var[a]) under the hypergeometric null, or `None` when a
    /// margin is empty and the stratum carries no information.
    pub fn moments(&self) -> Option<(f64, f64)> {
        let [[a, b], [c, d]] = self.0;
        let (r1, r2) = ((a + b) as f64, (c + d) as f64);
        let (c1, c2) = ((a + c) as f64, (b + d) as f64);
        let n = r1 + r2;
        if r1 == 0.0 || r2 == 0.0 || c1 == 0.0 || c2 == 0.0 || n < 2.0 {
            return None;
        }
        let expected = r1 * c1 / n;
        let var = r1 * r2 * c1 * c2 / (n * n * (n - 1.0));
        Some((a as f64 - expected, var))
    }
}

/// CMH test of conditional independence across 2×2 strata, df = 1.
/// Strata with an empty margin are skipped.
pub fn cmh_conditional_independence(strata: &[Stratum]) -> Result<TestResult> {
    let (num, den) = strata
        .iter()
        .filter_map(Stratum::moments)
        .fold((0.0, 0.0), |(s, v), (dev, var)| (s + dev, v + var));
    if !(den > 0.0) {
        return Err(Error::Untestable(
            "every CMH stratum has an empty row or column".into(),
        ));
    }
    let stat = num * num / den;
    Ok(TestResult {
        statistic: stat,
        df: Some(1.0),
        p_value: chi_square_sf(stat, 1.0)?,
        direction: Tail::TwoSided,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn welch_identical_samples() {
        let xs = [1.0, 2.5, 3.0, 4.2];
        let r = welch_t_one_sided(&xs, &xs).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn welch_hand_computed() {
        let r = welch_t_one_sided(&[3.0, 4.0, 5.0], &[1.0, 2.0, 3.0]).unwrap();
        // t = 2 / sqrt(2/3), df = (2/3)^2 / (2 * (1/3)^2 / 2)
        assert!((r.statistic - 6f64.sqrt()).abs() < 1e-12);
        assert!((r.df.unwrap() - 4.0).abs() < 1e-12);
        assert!((r.p_value - 0.0352).abs() < 1e-4);
    }

    #[test]
    fn welch_rejects_degenerate() {
        assert!(matches!(
            welch_t_one_sided(&[1.0, 1.0], &[2.0, 2.0, 2.0]),
            Err(Error::Untestable(_))
        ));
        assert!(welch_t_one_sided(&[1.0], &[2.0, 3.0]).is_err());
        // one constant sample is still testable
        assert!(welch_t_one_sided(&[1.0, 1.0], &[2.0, 3.0]).is_ok());
    }

    #[test]
    fn proportions_equal_rates() {
        let r = two_proportion_one_sided(40, 100, 40, 100).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 0.5);
    }

    #[test]
    fn proportions_hand_computed() {
        let r = two_proportion_one_sided(65, 100, 82, 100).unwrap();
        let z = (0.65 - 0.82) / (0.735f64 * 0.265 * 0.02).sqrt();
        assert!((r.statistic - z).abs() < 1e-12);
        assert!((r.statistic + 2.723).abs() < 1e-3);
        assert!((r.p_value - 0.0032).abs() < 1e-4);
        assert_eq!(r.direction, Tail::OneSidedLower);
    }

    #[test]
    fn proportions_degenerate_pool() {
        let r = two_proportion_one_sided(0, 10, 0, 20).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 0.5);
        let r = two_proportion_one_sided(10, 10, 20, 20).unwrap();
        assert!(r.degenerate);
    }

    #[test]
    fn chi_square_exact_independence() {
        let r = chi_square_independence(&ContingencyTable::from_2x2([[10, 10], [10, 10]])).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn chi_square_closed_form_2x2() {
        let r = chi_square_independence(&ContingencyTable::from_2x2([[20, 10], [10, 20]])).unwrap();
        let closed = 60.0 * (20.0f64 * 20.0 - 10.0 * 10.0).powi(2) / (30.0f64.powi(4));
        assert!((r.statistic - closed).abs() < 1e-9);
        assert!((r.statistic - 6.6667).abs() < 1e-4);
        assert!((r.p_value - 0.0098).abs() < 1e-4);
    }

    #[test]
    fn chi_square_empty_margin_is_named() {
        let err = chi_square_independence(&ContingencyTable::from_2x2([[0, 5], [0, 7]])).unwrap_err();
        assert!(matches!(err, Error::EmptyMargin { axis: "column", index: 0 }));
        let err = chi_square_independence(&ContingencyTable::from_2x2([[3, 5], [0, 0]])).unwrap_err();
        assert!(matches!(err, Error::EmptyMargin { axis: "row", index: 1 }));
    }

    #[test]
    fn chi_square_larger_table_df() {
        let t = ContingencyTable::new(vec![vec![5, 7, 9], vec![6, 2, 11]]).unwrap();
        let r = chi_square_independence(&t).unwrap();
        assert_eq!(r.df, Some(2.0));
        assert!(ContingencyTable::new(vec![vec![1, 2], vec![3]]).is_err());
    }

    #[test]
    fn cmh_single_stratum() {
        let r = cmh_conditional_independence(&[Stratum([[20, 10], [10, 20]])]).unwrap();
        assert!((r.statistic - 59.0 / 60.0 * 20.0 / 3.0).abs() < 1e-9);
        assert!((r.statistic - 6.5556).abs() < 1e-4);
    }

    #[test]
    fn cmh_two_identical_strata() {
        let s = Stratum([[20, 10], [10, 20]]);
        let r = cmh_conditional_independence(&[s, s]).unwrap();
        let v = 810_000.0 / (3600.0 * 59.0);
        assert!((r.statistic - 100.0 / (2.0 * v)).abs() < 1e-9);
        assert!((r.statistic - 13.111).abs() < 1e-3);
    }

    #[test]
    fn cmh_skips_empty_margins() {
        let base = Stratum([[20, 10], [10, 20]]);
        let with_empty = [base, Stratum([[4, 0], [6, 0]]), Stratum([[0, 0], [3, 9]])];
        let a = cmh_conditional_independence(&[base]).unwrap();
        let b = cmh_conditional_independence(&with_empty).unwrap();
        assert_eq!(a.statistic, b.statistic);
        assert!(cmh_conditional_independence(&[Stratum([[4, 0], [6, 0]])]).is_err());
        assert!(cmh_conditional_independence(&[]).is_err());
    }

    proptest! {
        #[test]
        fn chi_square_row_and_column_swap(a in 1u64..200, b in 1u64..200, c in 1u64..200, d in 1u64..200) {
            let base = chi_square_independence(&ContingencyTable::from_2x2([[a, b], [c, d]])).unwrap();
            let rows = chi_square_independence(&ContingencyTable::from_2x2([[c, d], [a, b]])).unwrap();
            let cols = chi_square_independence(&ContingencyTable::from_2x2([[b, a], [d, c]])).unwrap();
            prop_assert!((base.statistic - rows.statistic).abs() <= 1e-9 * base.statistic.max(1.0));
            prop_assert!((base.statistic - cols.statistic).abs() <= 1e-9 * base.statistic.max(1.0));
        }

        #[test]
        fn pooled_z_squared_is_pearson(x1 in 0u64..50, e1 in 1u64..50, x0 in 0u64..50, e0 in 1u64..50) {
            let (n1, n0) = (x1 + e1, x0 + e0);
            prop_assume!(x1 + x0 > 0);
            let z = two_proportion_one_sided(x1, n1, x0, n0).unwrap();
            let chi = chi_square_independence(&ContingencyTable::from_2x2([[x1, e1], [x0, e0]])).unwrap();
            prop_assert!((z.statistic * z.statistic - chi.statistic).abs() <= 1e-9 * chi.statistic.max(1.0));
        }

        #[test]
        fn proportion_p_monotone_in_x1(x1 in 1u64..60, n1 in 60u64..100, x0 in 0u64..80, n0 in 80u64..120) {
            let hi = two_proportion_one_sided(x1, n1, x0, n0).unwrap();
            let lo = two_proportion_one_sided(x1 - 1, n1, x0, n0).unwrap();
            prop_assert!(lo.p_value <= hi.p_value + 1e-15);
        }

        #[test]
        fn welch_is_permutation_invariant(mut xs in prop::collection::vec(-50.0f64..50.0, 3..30),
                                          ys in prop::collection::vec(-50.0f64..50.0, 3..30)) {
            let a = welch_t_one_sided(&xs, &ys).unwrap();
            xs.reverse();
            let b = welch_t_one_sided(&xs, &ys).unwrap();
            prop_assert!((a.p_value - b.p_value).abs() < 1e-10);
        }
    }
}
