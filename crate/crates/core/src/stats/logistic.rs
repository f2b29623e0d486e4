//! Binary logistic regression fitted by iteratively reweighted least squares.

use super::special::normal_sf;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-8;

/// Fitted probabilities this close to the observed labels for every row
/// mean the data are completely separated.
const PERFECT_FIT: f64 = 1e-7;
const PIVOT_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// Intercept first, then one entry per design column.
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub wald_z: Vec<f64>,
    /// Two-sided Wald p-values.
    pub p_values: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_abs_score: f64,
    /// Complete or quasi-complete separation detected; coefficients diverge.
    pub separation: bool,
    pub log_likelihood: f64,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Design {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    p: usize,
}

impl Design {
    fn eta(&self, beta: &[f64]) -> Vec<f64> {
        self.x
            .iter()
            .map(|row| row.iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn log_likelihood(&self, beta: &[f64]) -> f64 {
        self.eta(beta)
            .iter()
            .zip(&self.y)
            .map(|(&e, &y)| y * e - softplus(e))
            .sum()
    }

    /// Score X'(y - mu), observed information X'WX and the fitted probabilities.
    fn score_and_information(&self, beta: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
        let p = self.p;
        let mut score = vec![0.0; p];
        let mut info = vec![vec![0.0; p]; p];
        let mu: Vec<f64> = self.eta(beta).into_iter().map(sigmoid).collect();
        for ((row, &y), &m) in self.x.iter().zip(&self.y).zip(&mu) {
            let resid = y - m;
            let w = m * (1.0 - m);
            for j in 0..p {
                score[j] += row[j] * resid;
                let wj = w * row[j];
                for k in 0..=j {
                    info[j][k] += wj * row[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                info[k][j] = info[j][k];
            }
        }
        (score, info, mu)
    }
}

/// Lower Cholesky factor; reports every column whose pivot collapses.
fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    let mut bad = Vec::new();
    for j in 0..n {
        let d = a[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if !(d > PIVOT_RTOL * a[j][j].abs()) || !d.is_finite() {
            bad.push(j);
            continue;
        }
        let djj = d.sqrt();
        l[j][j] = djj;
        for i in (j + 1)..n {
            let s = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = s / djj;
        }
    }
    if bad.is_empty() {
        Ok(l)
    } else {
        Err(Error::Singular { columns: bad })
    }
}

fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = l.len();
    let mut z = vec![0.0; n];
    for i in 0..n {
        z[i] = (b[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (z[i] - ((i + 1)..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

fn cholesky_inverse_diag(l: &[Vec<f64>]) -> Vec<f64> {
    let n = l.len();
    (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            cholesky_solve(l, &e)[j]
        })
        .collect()
}

/// Fits `outcome ~ 1 + design_rows` by Newton–Raphson (IRLS), with step
/// halving whenever a full step lowers the log-likelihood.
///
/// Convergence means every component of the score X'(y - mu) is at most
/// `tol` in magnitude. Standard errors come from the inverse observed
/// information at the final coefficients.
pub fn fit_logistic_irls<R: AsRef<[f64]>>(
    design_rows: &[R],
    outcomes: &[u8],
    max_iter: usize,
    tol: f64,
) -> Result<LogisticFit> {
    if design_rows.len() != outcomes.len() {
        return Err(Error::InvalidArgument(format!(
            "{} design rows but {} outcomes",
            design_rows.len(),
            outcomes.len()
        )));
    }
    if design_rows.is_empty() {
        return Err(Error::InvalidArgument("empty design".into()));
    }
    let width = design_rows[0].as_ref().len();
    let mut x = Vec::with_capacity(design_rows.len());
    for (i, r) in design_rows.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != width {
            return Err(Error::InvalidArgument(format!(
                "design row {i} has {} columns, expected {width}",
                r.len()
            )));
        }
        let mut row = Vec::with_capacity(width + 1);
        row.push(1.0);
        row.extend_from_slice(r);
        x.push(row);
    }
    let mut y = Vec::with_capacity(outcomes.len());
    for (i, &o) in outcomes.iter().enumerate() {
        if o > 1 {
            return Err(Error::InvalidArgument(format!("outcome {i} is {o}, not binary")));
        }
        y.push(f64::from(o));
    }
    let design = Design { x, y, p: width + 1 };

    let mut beta = vec![0.0; design.p];
    let mut ll = design.log_likelihood(&beta);
    let mut converged = false;
    let mut separation = false;
    let mut iterations = 0;
    let (mut score, mut info, mut mu) = design.score_and_information(&beta);
    loop {
        let max_abs_score = score.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if design
            .y
            .iter()
            .zip(&mu)
            .all(|(y, m)| (y - m).abs() < PERFECT_FIT)
        {
            separation = true;
            break;
        }
        if max_abs_score <= tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;
        let l = cholesky(&info)?;
        let step = cholesky_solve(&l, &score);
        let mut scale = 1.0;
        let mut next: Vec<f64>;
        let mut next_ll;
        loop {
            next = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            next_ll = design.log_likelihood(&next);
            if next_ll >= ll - 1e-12 * ll.abs() || scale < 1e-10 {
                break;
            }
            scale *= 0.5;
        }
        beta = next;
        ll = next_ll;
        (score, info, mu) = design.score_and_information(&beta);
    }

    if !converged && !separation {
        // quasi-complete separation: some fitted probabilities pinned at 0/1
        separation = design
            .y
            .iter()
            .zip(&mu)
            .any(|(y, m)| (y - m).abs() < 1e-10 && (*m < 1e-10 || *m > 1.0 - 1e-10));
    }

    let max_abs_score = score.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let variances = match cholesky(&info) {
        Ok(l) => cholesky_inverse_diag(&l),
        Err(e) if converged => return Err(e),
        Err(_) => vec![f64::INFINITY; design.p],
    };
    let standard_errors: Vec<f64> = variances.iter().map(|v| v.sqrt()).collect();
    let wald_z: Vec<f64> = beta
        .iter()
        .zip(&standard_errors)
        .map(|(b, se)| b / se)
        .collect();
    let p_values = wald_z.iter().map(|z| (2.0 * normal_sf(z.abs())).min(1.0)).collect();

    Ok(LogisticFit {
        coefficients: beta,
        standard_errors,
        wald_z,
        p_values,
        converged,
        iterations,
        max_abs_score,
        separation,
        log_likelihood: ll,
    })
}

/// Log-likelihood of `outcome ~ 1 + design_rows` at `beta` (intercept first).
pub fn logistic_log_likelihood<R: AsRef<[f64]>>(design_rows: &[R], outcomes: &[u8], beta: &[f64]) -> f64 {
    design_rows
        .iter()
        .zip(outcomes)
        .map(|(r, &y)| {
            let eta = beta[0] + r.as_ref().iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
            f64::from(y) * eta - softplus(eta)
        })
        .sum()
}

/// Observed information X'WX at `beta`, intercept first.
pub fn observed_information<R: AsRef<[f64]>>(design_rows: &[R], beta: &[f64]) -> Vec<Vec<f64>> {
    let p = beta.len();
    let mut info = vec![vec![0.0; p]; p];
    for r in design_rows {
        let mut row = vec![1.0];
        row.extend_from_slice(r.as_ref());
        let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        let m = sigmoid(eta);
        let w = m * (1.0 - m);
        for j in 0..p {
            for k in 0..p {
                info[j][k] += w * row[j] * row[k];
            }
        }
    }
    info
}
