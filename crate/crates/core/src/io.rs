//! Cohort CSV reading and writing.
//!
//! Header: `patient_id,group_a,w_true,w_star,epsilon,treated,outcome`, floats
//! with four decimals. `w_true` and `epsilon` may be absent (or blank) in a
//! gold-free file.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::cohort::{PatientRecord, W_MAX, W_MIN};
use crate::error::{Error, Result};

pub const COHORT_COLUMNS: [&str; 7] = [
    "patient_id",
    "group_a",
    "w_true",
    "w_star",
    "epsilon",
    "treated",
    "outcome",
];

const GOLD_COLUMNS: [&str; 2] = ["w_true", "epsilon"];

/// Tolerance when deciding from four-decimal values whether W* was clamped.
const CLAMP_SLACK: f64 = 5e-4;

pub fn write_cohort_csv<W: Write>(cohort: &[PatientRecord], out: W) -> Result<()> {
    let gold = cohort.iter().any(|r| r.w_true.is_some());
    let mut w = csv::Writer::from_writer(out);
    if gold {
        w.write_record(COHORT_COLUMNS)?;
    } else {
        w.write_record(COHORT_COLUMNS.iter().filter(|c| !GOLD_COLUMNS.contains(c)))?;
    }
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    for r in cohort {
        let id = r.patient_id.to_string();
        let a = r.group_a.to_string();
        let w_star = format!("{:.4}", r.w_star);
        let z = r.treated.to_string();
        let y = r.outcome.to_string();
        if gold {
            w.write_record([id, a, opt(r.w_true), w_star, opt(r.epsilon), z, y])?;
        } else {
            w.write_record([id, a, w_star, z, y])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_cohort_csv(cohort: &[PatientRecord], path: impl AsRef<Path>) -> Result<()> {
    write_cohort_csv(cohort, BufWriter::new(File::create(path)?))
}

pub fn read_cohort_csv(path: impl AsRef<Path>, require_gold: bool) -> Result<Vec<PatientRecord>> {
    parse_cohort_csv(File::open(path)?, require_gold)
}

/// Parses a cohort. Row numbers in errors are file line numbers (the header
/// is line 1).
pub fn parse_cohort_csv<R: Read>(input: R, require_gold: bool) -> Result<Vec<PatientRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    let index = |name: &str| headers.iter().position(|h| h == name);

    let required: Vec<&str> = COHORT_COLUMNS
        .iter()
        .copied()
        .filter(|c| require_gold || !GOLD_COLUMNS.contains(c))
        .collect();
    let missing: Vec<String> = required
        .iter()
        .filter(|c| index(c).is_none())
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingColumns(missing));
    }
    let col = |name: &str| index(name).expect("checked above");
    let (i_id, i_a, i_ws, i_z, i_y) = (col("patient_id"), col("group_a"), col("w_star"), col("treated"), col("outcome"));
    let (i_w, i_e) = (index("w_true"), index("epsilon"));

    let mut cohort = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let row = k + 2;
        let field = |i: usize| record.get(i).unwrap_or("");
        let schema = |column: &str, message: String| Error::Schema { row, column: column.to_string(), message };

        let patient_id: u64 = field(i_id)
            .parse()
            .map_err(|_| schema("patient_id", format!("expected a non-negative integer, got {:?}", field(i_id))))?;
        let binary = |i: usize, name: &str| -> Result<u8> {
            match field(i) {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(schema(name, format!("expected 0 or 1, got {other:?}"))),
            }
        };
        let real = |i: usize, name: &str, lo: f64, hi: f64| -> Result<f64> {
            let v: f64 = field(i)
                .parse()
                .map_err(|_| schema(name, format!("expected a number, got {:?}", field(i))))?;
            if !(v >= lo && v <= hi) {
                return Err(schema(name, format!("{v} outside [{lo}, {hi}]")));
            }
            Ok(v)
        };
        let optional_real = |i: Option<usize>, name: &str, lo: f64, hi: f64| -> Result<Option<f64>> {
            match i {
                Some(i) if !field(i).is_empty() => real(i, name, lo, hi).map(Some),
                _ if require_gold => Err(schema(name, "gold-standard value required".into())),
                _ => Ok(None),
            }
        };

        let group_a = binary(i_a, "group_a")?;
        let w_star = real(i_ws, "w_star", 0.0, 100.0)?;
        let w_true = optional_real(i_w, "w_true", W_MIN, W_MAX)?;
        let epsilon = optional_real(i_e, "epsilon", f64::MIN, f64::MAX)?;
        if w_true.is_some() != epsilon.is_some() {
            let column = if w_true.is_none() { "w_true" } else { "epsilon" };
            return Err(schema(column, "w_true and epsilon must be present together".into()));
        }
        let clamped = match (w_true, epsilon) {
            (Some(w), Some(e)) => {
                let raw = w + e;
                if (raw - w_star).abs() > CLAMP_SLACK {
                    let at_bound = (raw < 0.0 && w_star == 0.0) || (raw > 100.0 && w_star == 100.0);
                    if !at_bound {
                        return Err(schema("w_star", format!("w_true + epsilon = {raw:.4} but w_star = {w_star}")));
                    }
                    true
                } else {
                    false
                }
            }
            _ => false,
        };
        cohort.push(PatientRecord {
            patient_id,
            group_a,
            w_true,
            w_star,
            epsilon,
            treated: binary(i_z, "treated")?,
            outcome: binary(i_y, "outcome")?,
            clamped,
        });
    }
    Ok(cohort)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, ScenarioConfig};

    fn small_cohort() -> Vec<PatientRecord> {
        generate_cohort(&ScenarioConfig { n_total: 300, ..ScenarioConfig::default() }).unwrap()
    }

    #[test]
    fn round_trip() {
        let cohort = small_cohort();
        let mut buf = Vec::new();
        write_cohort_csv(&cohort, &mut buf).unwrap();
        assert!(buf.starts_with(b"patient_id,group_a,w_true,w_star,epsilon,treated,outcome\n"));
        let back = parse_cohort_csv(buf.as_slice(), true).unwrap();
        assert_eq!(back.len(), cohort.len());
        for (a, b) in cohort.iter().zip(&back) {
            assert_eq!((a.patient_id, a.group_a, a.treated, a.outcome), (b.patient_id, b.group_a, b.treated, b.outcome));
            assert!((a.w_true.unwrap() - b.w_true.unwrap()).abs() <= 5e-5);
            assert!((a.w_star - b.w_star).abs() <= 5e-5);
            assert!((a.epsilon.unwrap() - b.epsilon.unwrap()).abs() <= 5e-5);
        }
        let mut again = Vec::new();
        write_cohort_csv(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn gold_free_file_accepted_only_when_allowed() {
        let text = "patient_id,group_a,w_star,treated,outcome\n0,1,93.5000,0,1\n1,0,90.0000,1,0\n";
        let cohort = parse_cohort_csv(text.as_bytes(), false).unwrap();
        assert_eq!(cohort.len(), 2);
        assert!(cohort.iter().all(|r| r.w_true.is_none() && r.epsilon.is_none()));
        match parse_cohort_csv(text.as_bytes(), true) {
            Err(Error::MissingColumns(cols)) => assert_eq!(cols, vec!["w_true", "epsilon"]),
            other => panic!("expected missing columns, got {other:?}"),
        }
        let mut buf = Vec::new();
        write_cohort_csv(&cohort, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn non_binary_treated_names_row_and_column() {
        let text = "patient_id,group_a,w_true,w_star,epsilon,treated,outcome\n\
                    0,1,90.0000,92.0000,2.0000,1,0\n\
                    1,0,90.0000,91.0000,1.0000,2,0\n";
        match parse_cohort_csv(text.as_bytes(), true) {
            Err(Error::Schema { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "treated");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_and_missing_columns() {
        let text = "patient_id,group_a,w_true,w_star,epsilon,treated,outcome\n0,1,60.0000,62.0000,2.0000,1,0\n";
        assert!(matches!(
            parse_cohort_csv(text.as_bytes(), true),
            Err(Error::Schema { row: 2, ref column, .. }) if column == "w_true"
        ));
        let text = "patient_id,w_star,treated\n0,90,1\n";
        match parse_cohort_csv(text.as_bytes(), false) {
            Err(Error::MissingColumns(cols)) => assert_eq!(cols, vec!["group_a", "outcome"]),
            other => panic!("expected missing columns, got {other:?}"),
        }
    }

    #[test]
    fn clamped_rows_recognised() {
        let text = "patient_id,group_a,w_true,w_star,epsilon,treated,outcome\n0,1,99.0000,100.0000,3.5000,0,0\n";
        let cohort = parse_cohort_csv(text.as_bytes(), true).unwrap();
        assert!(cohort[0].clamped);
        let bad = "patient_id,group_a,w_true,w_star,epsilon,treated,outcome\n0,1,90.0000,95.0000,3.5000,0,0\n";
        assert!(matches!(parse_cohort_csv(bad.as_bytes(), true), Err(Error::Schema { .. })));
    }
}
