//! Price rate of change, least squares, ADF unit-root and Granger causality
//! tests, and the F-distribution survival function they rely on.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use ndarray::Array2;

use crate::error::{Error, Result};

/// Percent day-over-day change, one value shorter than `close`.
pub fn roc(close: &[f64]) -> Result<Vec<f64>> {
    if close.len() < 2 {
        return Err(Error::InsufficientData("rate of change needs two closes".into()));
    }
    if let Some(bad) = close.iter().position(|c| !(*c > 0.0)) {
        return Err(Error::Validation(format!(
            "close at position {bad} is not positive: {}",
            close[bad]
        )));
    }
    Ok(close.windows(2).map(|w| 100.0 * (w[1] - w[0]) / w[0]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub rss: f64,
    pub residuals: Vec<f64>,
    pub n: usize,
    pub k: usize,
    /// Diagonal of `(X'X)^-1`.
    pub xtx_inv_diag: Vec<f64>,
}

impl OlsFit {
    pub fn std_error(&self, j: usize) -> f64 {
        let s2 = self.rss / (self.n - self.k) as f64;
        (s2 * self.xtx_inv_diag[j]).sqrt()
    }
}

/// Householder QR of a column-major matrix. `Err` names the first column
/// that is (numerically) a combination of the columns before it.
struct Qr {
    /// Householder vectors stored below the diagonal, column major.
    a: Vec<Vec<f64>>,
    diag: Vec<f64>,
}

impl Qr {
    fn factor(mut a: Vec<Vec<f64>>) -> std::result::Result<Self, usize> {
        let n = a[0].len();
        let k = a.len();
        let mut diag = vec![0.0; k];
        for j in 0..k {
            let col_norm = a[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            let norm = a[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= 1e-10 * col_norm.max(f64::MIN_POSITIVE) || col_norm == 0.0 {
                return Err(j);
            }
            let alpha = if a[j][j] > 0.0 { -norm } else { norm };
            a[j][j] -= alpha;
            let vnorm2 = a[j][j..].iter().map(|v| v * v).sum::<f64>();
            for c in j + 1..k {
                let dot: f64 = (j..n).map(|i| a[j][i] * a[c][i]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in j..n {
                    a[c][i] -= f * a[j][i];
                }
            }
            diag[j] = alpha;
        }
        Ok(Self { a, diag })
    }

    fn qt_mul(&self, y: &mut [f64]) {
        let n = y.len();
        for (j, v) in self.a.iter().enumerate() {
            let vnorm2: f64 = v[j..].iter().map(|x| x * x).sum();
            let dot: f64 = (j..n).map(|i| v[i] * y[i]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in j..n {
                y[i] -= f * v[i];
            }
        }
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else {
            self.a[j][i]
        }
    }

    fn solve_r(&self, rhs: &[f64]) -> Vec<f64> {
        let k = self.diag.len();
        let mut x = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| self.r(i, j) * x[j]).sum();
            x[i] = (rhs[i] - s) / self.r(i, i);
        }
        x
    }

    /// Diagonal of `R^-1 R^-T`.
    fn inv_gram_diag(&self) -> Vec<f64> {
        let k = self.diag.len();
        // Columns of R^-1 by back substitution on unit vectors.
        let mut rinv = vec![vec![0.0; k]; k];
        for c in 0..k {
            for i in (0..=c).rev() {
                let e = if i == c { 1.0 } else { 0.0 };
                let s: f64 = (i + 1..=c).map(|j| self.r(i, j) * rinv[c][j]).sum();
                rinv[c][i] = (e - s) / self.r(i, i);
            }
        }
        (0..k)
            .map(|i| (i..k).map(|c| rinv[c][i] * rinv[c][i]).sum())
            .collect()
    }
}

/// Least squares via Householder QR. `x` is `[n x k]` and should contain
/// the intercept column when one is wanted.
pub fn ols(y: &[f64], x: &Array2<f64>) -> Result<OlsFit> {
    let (n, k) = x.dim();
    if y.len() != n {
        return Err(Error::Shape(format!("{} responses for {n} design rows", y.len())));
    }
    if k == 0 || n <= k {
        return Err(Error::InsufficientData(format!("{n} observations for {k} regressors")));
    }
    let cols: Vec<Vec<f64>> = x.columns().into_iter().map(|c| c.to_vec()).collect();
    let qr = Qr::factor(cols).map_err(|column| Error::SingularDesign { column })?;
    let mut qty = y.to_vec();
    qr.qt_mul(&mut qty);
    let coefficients = qr.solve_r(&qty[..k]);
    let residuals: Vec<f64> = (0..n)
        .map(|i| y[i] - (0..k).map(|j| x[[i, j]] * coefficients[j]).sum::<f64>())
        .collect();
    let rss = residuals.iter().map(|r| r * r).sum();
    Ok(OlsFit {
        coefficients,
        rss,
        residuals,
        n,
        k,
        xtx_inv_diag: qr.inv_gram_diag(),
    })
}

/// Drops columns that are dependent on earlier ones and fits the rest.
fn ols_dropping_dependent(y: &[f64], x: &Array2<f64>) -> Result<OlsFit> {
    let mut keep: Vec<usize> = (0..x.ncols()).collect();
    loop {
        let sub = x.select(ndarray::Axis(1), &keep);
        match ols(y, &sub) {
            Err(Error::SingularDesign { column }) => {
                keep.remove(column);
            }
            other => return other,
        }
    }
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, n = 9.
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// `P(F > x)` for an F distribution with `(d1, d2)` degrees of freedom.
pub fn f_upper_tail(x: f64, d1: usize, d2: usize) -> Result<f64> {
    if d1 == 0 || d2 == 0 {
        return Err(Error::Validation(format!("invalid F degrees of freedom ({d1}, {d2})")));
    }
    if x.is_nan() {
        return Err(Error::Validation("F statistic is NaN".into()));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let (d1, d2) = (d1 as f64, d2 as f64);
    let z = d2 / (d2 + d1 * x);
    Ok(inc_beta_reg(d2 / 2.0, d1 / 2.0, z).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrangerResult {
    pub lag: usize,
    pub f: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub df_num: usize,
    pub df_den: usize,
    pub rss_restricted: f64,
    pub rss_unrestricted: f64,
}

fn lagged_design(series: &[&[f64]], lag: usize) -> Array2<f64> {
    let n_eff = series[0].len() - lag;
    let k = 1 + lag * series.len();
    Array2::from_shape_fn((n_eff, k), |(r, c)| {
        if c == 0 {
            1.0
        } else {
            let s = (c - 1) / lag;
            let l = (c - 1) % lag + 1;
            series[s][r + lag - l]
        }
    })
}

/// Nested-model F test of "`cause` does not Granger-cause `effect`".
///
/// The restricted model regresses `effect_t` on an intercept and `lag` own
/// lags; the unrestricted model adds `lag` lags of `cause`. The first `lag`
/// observations are dropped. Cause lags that are exact copies of regressors
/// already present add nothing and are dropped from the unrestricted fit.
pub fn granger_test(effect: &[f64], cause: &[f64], lag: usize) -> Result<GrangerResult> {
    if effect.len() != cause.len() {
        return Err(Error::Shape(format!(
            "effect has {} observations, cause {}",
            effect.len(),
            cause.len()
        )));
    }
    if lag == 0 {
        return Err(Error::Validation("lag order must be at least 1".into()));
    }
    let n = effect.len();
    if n < 2 * lag + 2 || n - lag <= 2 * lag + 1 {
        return Err(Error::InsufficientData(format!(
            "{n} observations are too few for lag {lag}"
        )));
    }
    let y = &effect[lag..];
    let restricted = ols(y, &lagged_design(&[effect], lag))?;
    let unrestricted = ols_dropping_dependent(y, &lagged_design(&[effect, cause], lag))?;
    let n_eff = n - lag;
    let df_den = n_eff - (2 * lag + 1);
    let rss_r = restricted.rss;
    let rss_u = unrestricted.rss.min(rss_r);
    let f = if rss_u > 0.0 {
        ((rss_r - rss_u) / lag as f64) / (rss_u / df_den as f64)
    } else if rss_r > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(GrangerResult {
        lag,
        f,
        p_value: f_upper_tail(f, lag, df_den)?,
        n_effective: n_eff,
        df_num: lag,
        df_den,
        rss_restricted: rss_r,
        rss_unrestricted: rss_u,
    })
}

/// Asymptotic critical values for the constant-only ADF regression at
/// 1%, 5% and 10%.
pub const ADF_CRITICAL: [f64; 3] = [-3.43, -2.86, -2.57];

#[derive(Debug, Clone, PartialEq)]
pub struct AdfResult {
    pub t_statistic: f64,
    pub lag_used: usize,
    pub n_effective: usize,
    /// Rejection of the unit root at 1%, 5% and 10%.
    pub reject: [bool; 3],
}

impl AdfResult {
    pub fn stars(&self) -> &'static str {
        stars_from_flags(self.reject)
    }
}

pub fn schwert_lag(n: usize) -> usize {
    (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

/// Augmented Dickey-Fuller test with a constant and no trend:
/// `dy_t = a + g*y_{t-1} + sum_i d_i*dy_{t-i} + e`, t-statistic on `g`.
/// `max_lag` defaults to the Schwert rule.
pub fn adf_test(series: &[f64], max_lag: Option<usize>) -> Result<AdfResult> {
    let n = series.len();
    let p = max_lag.unwrap_or_else(|| schwert_lag(n));
    if n < p + 10 {
        return Err(Error::InsufficientData(format!(
            "ADF with {p} lags needs at least {} observations, got {n}",
            p + 10
        )));
    }
    let dy: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let rows = dy.len() - p;
    let y: Vec<f64> = dy[p..].to_vec();
    let x = Array2::from_shape_fn((rows, 2 + p), |(r, c)| {
        let t = r + p;
        match c {
            0 => 1.0,
            1 => series[t],
            _ => dy[t - (c - 1)],
        }
    });
    let fit = ols(&y, &x)?;
    let t_statistic = fit.coefficients[1] / fit.std_error(1);
    Ok(AdfResult {
        t_statistic,
        lag_used: p,
        n_effective: rows,
        reject: ADF_CRITICAL.map(|cv| t_statistic < cv),
    })
}

fn stars_from_flags(flags: [bool; 3]) -> &'static str {
    match flags {
        [true, _, _] => "***",
        [false, true, _] => "**",
        [false, false, true] => "*",
        _ => "",
    }
}

/// `***`, `**`, `*` for significance at the 1%, 5% and 10% levels.
pub fn stars(p: f64) -> &'static str {
    stars_from_flags([p < 0.01, p < 0.05, p < 0.10])
}

/// Pairs two dated series on their common dates.
pub fn inner_join(
    a_dates: &[NaiveDate],
    a: &[f64],
    b_dates: &[NaiveDate],
    b: &[f64],
) -> (Vec<NaiveDate>, Vec<f64>, Vec<f64>) {
    let (mut i, mut j) = (0, 0);
    let (mut dates, mut xa, mut xb) = (Vec::new(), Vec::new(), Vec::new());
    while i < a_dates.len() && j < b_dates.len() {
        match a_dates[i].cmp(&b_dates[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dates.push(a_dates[i]);
                xa.push(a[i]);
                xb.push(b[j]);
                i += 1;
                j += 1;
            }
        }
    }
    (dates, xa, xb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrangerDirection {
    IndexToRoc,
    RocToIndex,
}

impl GrangerDirection {
    pub fn name(self) -> &'static str {
        match self {
            GrangerDirection::IndexToRoc => "index_to_roc",
            GrangerDirection::RocToIndex => "roc_to_index",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GctRow {
    pub stock: String,
    pub variable: String,
    pub direction: GrangerDirection,
    pub result: GrangerResult,
}

/// Bidirectional Granger tests between a sentiment index and ROC at each
/// lag. Both directions are fitted independently.
pub fn granger_bidirectional(
    stock: &str,
    variable: &str,
    index: &[f64],
    roc: &[f64],
    lags: &[usize],
) -> Result<Vec<GctRow>> {
    let mut rows = Vec::new();
    for &lag in lags {
        for direction in [GrangerDirection::IndexToRoc, GrangerDirection::RocToIndex] {
            let result = match direction {
                GrangerDirection::IndexToRoc => granger_test(roc, index, lag)?,
                GrangerDirection::RocToIndex => granger_test(index, roc, lag)?,
            };
            rows.push(GctRow {
                stock: stock.to_string(),
                variable: variable.to_string(),
                direction,
                result,
            });
        }
    }
    Ok(rows)
}

/// CSV `stock,variable,direction,lag,F,p,stars` at 6 decimals.
pub fn write_gct_csv(path: &Path, rows: &[GctRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "stock,variable,direction,lag,F,p,stars").map_err(io)?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{}",
            r.stock,
            r.variable,
            r.direction.name(),
            r.result.lag,
            r.result.f,
            r.result.p_value,
            stars(r.result.p_value)
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

/// CSV `stock,variable,t_statistic,lag,n,stars` at 6 decimals.
pub fn write_adf_csv(path: &Path, rows: &[(String, String, AdfResult)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "stock,variable,t_statistic,lag,n,stars").map_err(io)?;
    for (stock, variable, r) in rows {
        writeln!(
            out,
            "{stock},{variable},{:.6},{},{},{}",
            r.t_statistic,
            r.lag_used,
            r.n_effective,
            r.stars()
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn roc_examples() {
        assert_eq!(roc(&[100.0, 110.0]).unwrap(), vec![10.0]);
        assert_eq!(roc(&[100.0, 50.0]).unwrap(), vec![-50.0]);
        assert_eq!(roc(&[3.0; 5]).unwrap(), vec![0.0; 4]);
        assert!(roc(&[1.0, 0.0]).is_err());
        assert!(roc(&[1.0]).is_err());
    }

    #[test]
    fn ols_intercept_only() {
        let fit = ols(&[1.0, 2.0, 3.0], &array![[1.0], [1.0], [1.0]]).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-14);
        assert!((fit.rss - 2.0).abs() < 1e-14);
    }

    #[test]
    fn ols_exact_fit_and_orthogonality() {
        let x = Array2::from_shape_fn((20, 3), |(i, j)| match j {
            0 => 1.0,
            1 => i as f64,
            _ => ((i * 7) % 5) as f64,
        });
        let y: Vec<f64> = (0..20).map(|i| 2.0 - 0.5 * x[[i, 1]] + 3.0 * x[[i, 2]]).collect();
        let fit = ols(&y, &x).unwrap();
        let ynorm2: f64 = y.iter().map(|v| v * v).sum();
        assert!(fit.rss <= 1e-18 * ynorm2);

        let noisy: Vec<f64> = y.iter().enumerate().map(|(i, v)| v + ((i * 13) % 7) as f64 * 0.1).collect();
        let fit = ols(&noisy, &x).unwrap();
        let ynorm = noisy.iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..3 {
            let dot: f64 = (0..20).map(|i| x[[i, j]] * fit.residuals[i]).sum();
            assert!(dot.abs() < 1e-8 * ynorm);
        }
    }

    #[test]
    fn ols_rejects_duplicated_column() {
        let x = Array2::from_shape_fn((6, 3), |(i, j)| match j {
            0 => 1.0,
            _ => i as f64,
        });
        let err = ols(&[1.0, 2.0, 0.0, 4.0, 5.0, 1.0], &x).unwrap_err();
        assert!(matches!(err, Error::SingularDesign { column: 2 }));
    }

    #[test]
    fn f_tail_examples() {
        assert_eq!(f_upper_tail(0.0, 3, 7).unwrap(), 1.0);
        assert!((f_upper_tail(1.0, 1, 1).unwrap() - 0.5).abs() < 1e-12);
        // For d1 = 2 the tail is (d2 / (d2 + 2x))^(d2/2) in closed form.
        let x05 = (10.0 / 0.05f64.powf(0.2) - 10.0) / 2.0;
        assert!((x05 - 4.102).abs() < 1e-3);
        assert!((f_upper_tail(x05, 2, 10).unwrap() - 0.05).abs() < 1e-10);
        assert!(f_upper_tail(1.0, 0, 3).is_err());
    }

    #[test]
    fn granger_self_copy_nests() {
        let y: Vec<f64> = (0..60).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let r = granger_test(&y, &y, 2).unwrap();
        assert!(r.rss_restricted >= r.rss_unrestricted);
        assert!(r.f >= 0.0);
    }

    #[test]
    fn adf_rejects_too_short() {
        assert!(adf_test(&[1.0; 12], Some(4)).is_err());
    }

    #[test]
    fn adf_on_deterministic_ramp_is_recorded() {
        // No-trend specification: a ramp is outside its scope; only check it runs.
        let ramp: Vec<f64> = (0..100).map(|t| t as f64 / 100.0 + 0.001 * ((t * 17) % 5) as f64).collect();
        let r = adf_test(&ramp, Some(2)).unwrap();
        assert!(r.t_statistic.is_finite());
    }

    #[test]
    fn star_levels() {
        assert_eq!(stars(0.001), "***");
        assert_eq!(stars(0.03), "**");
        assert_eq!(stars(0.07), "*");
        assert_eq!(stars(0.5), "");
    }

    #[test]
    fn join_on_common_dates() {
        let d = |x| NaiveDate::from_ymd_opt(2023, 1, x).unwrap();
        let (dates, a, b) = inner_join(&[d(1), d(2), d(4)], &[1.0, 2.0, 4.0], &[d(2), d(3), d(4)], &[20.0, 30.0, 40.0]);
        assert_eq!(dates, vec![d(2), d(4)]);
        assert_eq!((a, b), (vec![2.0, 4.0], vec![20.0, 40.0]));
    }

    proptest! {
        #[test]
        fn f_tail_monotone(x in 0.0f64..20.0, dx in 0.001f64..5.0, d1 in 1usize..12, d2 in 1usize..200) {
            let a = f_upper_tail(x, d1, d2).unwrap();
            let b = f_upper_tail(x + dx, d1, d2).unwrap();
            prop_assert!(b <= a + 1e-15);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn granger_nesting(xs in prop::collection::vec(-10.0f64..10.0, 30..80), seed in 0u64..1000, lag in 1usize..4) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| ((i as u64 * 31 + seed) % 17) as f64 + 0.3 * x).collect();
            if let Ok(r) = granger_test(&ys, &xs, lag) {
                prop_assert!(r.rss_restricted + 1e-12 >= r.rss_unrestricted);
                prop_assert!(r.f >= 0.0);
                prop_assert!((0.0..=1.0).contains(&r.p_value));
            }
        }
    }
}
