//! Returns panels: CSV ingestion, window sampling, day-permutation
//! shuffling, and market-mode removal.

use super::HarnessError;
use crate::linalg::DenseMatrix;
use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Complete rectangular panel of daily returns: strictly increasing dates,
/// one column per asset, no missing cells.
#[derive(Debug, Clone)]
pub struct ReturnsPanel {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    pub returns: DenseMatrix,
}

impl ReturnsPanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        returns: DenseMatrix,
    ) -> Result<Self, HarnessError> {
        if dates.len() != returns.rows() || assets.len() != returns.cols() {
            return Err(HarnessError::Panel(format!(
                "{} dates, {} assets vs {}x{} matrix",
                dates.len(),
                assets.len(),
                returns.rows(),
                returns.cols()
            )));
        }
        if dates.len() < 2 {
            return Err(HarnessError::Panel("need at least two observation days".into()));
        }
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(HarnessError::Panel(format!(
                    "dates not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some((row, col)) = returns.data().iter().position(|v| !v.is_finite()).map(|k| {
            (k / returns.cols(), k % returns.cols())
        }) {
            return Err(HarnessError::Panel(format!(
                "non-finite return for asset {} on {}",
                col, dates[row]
            )));
        }
        Ok(Self { dates, assets, returns })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    /// Index of the first date >= `date`.
    pub fn lower_bound(&self, date: NaiveDate) -> usize {
        self.dates.partition_point(|d| *d < date)
    }

    /// Parses the `date,asset,...` CSV format; every cell mandatory.
    pub fn from_csv_str(text: &str) -> Result<Self, HarnessError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| HarnessError::Csv { line: 1, message: "empty file".into() })?;
        let mut cols = header.split(',');
        let first = cols.next().unwrap_or_default().trim();
        if !first.eq_ignore_ascii_case("date") {
            return Err(HarnessError::Csv {
                line: 1,
                message: format!("first header column must be 'date', got '{first}'"),
            });
        }
        let assets: Vec<String> = cols.map(|c| c.trim().to_string()).collect();
        if assets.is_empty() {
            return Err(HarnessError::Csv { line: 1, message: "no asset columns".into() });
        }
        let mut dates = Vec::new();
        let mut data: Vec<f64> = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut cells = line.split(',');
            let date_cell = cells.next().unwrap_or_default().trim();
            let date = NaiveDate::parse_from_str(date_cell, "%Y-%m-%d").map_err(|e| {
                HarnessError::Csv { line: line_no, message: format!("bad date '{date_cell}': {e}") }
            })?;
            dates.push(date);
            let mut count = 0usize;
            for cell in cells {
                let cell = cell.trim();
                if cell.is_empty() {
                    return Err(HarnessError::Csv {
                        line: line_no,
                        message: format!("missing value in column {}", count + 2),
                    });
                }
                let value: f64 = cell.parse().map_err(|e| HarnessError::Csv {
                    line: line_no,
                    message: format!("bad number '{cell}': {e}"),
                })?;
                data.push(value);
                count += 1;
            }
            if count != assets.len() {
                return Err(HarnessError::Csv {
                    line: line_no,
                    message: format!("expected {} values, found {count}", assets.len()),
                });
            }
        }
        if dates.is_empty() {
            return Err(HarnessError::Csv { line: 2, message: "no data rows".into() });
        }
        let rows = dates.len();
        let cols_n = assets.len();
        Self::new(dates, assets, DenseMatrix::new(rows, cols_n, data))
    }

    pub fn from_csv_path(path: &std::path::Path) -> Result<Self, HarnessError> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("date");
        for a in &self.assets {
            out.push(',');
            out.push_str(a);
        }
        out.push('\n');
        for (i, d) in self.dates.iter().enumerate() {
            out.push_str(&d.format("%Y-%m-%d").to_string());
            for v in self.returns.row(i) {
                out.push(',');
                out.push_str(&format!("{v:.17e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// One sampled evaluation window: joint in-sample and out-of-sample slices
/// over the same `n` assets, with the first `n_x` columns forming the X
/// group.
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub in_joint: DenseMatrix,
    pub oos_joint: DenseMatrix,
    pub n_x: usize,
    pub start_date: NaiveDate,
    /// first out-of-sample date; anti-leakage checks compare against it
    pub oos_start_date: NaiveDate,
}

impl WindowSample {
    fn split_one(m: &DenseMatrix, n_x: usize) -> (DenseMatrix, DenseMatrix) {
        let x = DenseMatrix::from_fn(m.rows(), n_x, |i, j| m[(i, j)]);
        let y = DenseMatrix::from_fn(m.rows(), m.cols() - n_x, |i, j| m[(i, j + n_x)]);
        (x, y)
    }

    /// (x_window, y_window, oos_x, oos_y)
    pub fn split(&self) -> (DenseMatrix, DenseMatrix, DenseMatrix, DenseMatrix) {
        let (x_in, y_in) = Self::split_one(&self.in_joint, self.n_x);
        let (x_out, y_out) = Self::split_one(&self.oos_joint, self.n_x);
        (x_in, y_in, x_out, y_out)
    }
}

pub const WINDOW_RETRY_CAP: usize = 64;

/// Draws a random evaluation window: a start date, `n` assets chosen
/// uniformly without replacement, a uniform relative dimension deciding the
/// X/Y partition (the selection order is already random, so the first
/// `ceil(nu*n)` selected assets form X), and consecutive in-sample /
/// out-of-sample slices.
#[allow(clippy::too_many_arguments)]
pub fn sample_window(
    panel: &ReturnsPanel,
    rng: &mut ChaCha8Rng,
    n_range: (usize, usize),
    nu_range: (f64, f64),
    dt_range: (usize, usize),
    dt_out: usize,
    start_bound: Option<NaiveDate>,
    end_bound: Option<NaiveDate>,
) -> Result<WindowSample, HarnessError> {
    let t = panel.len();
    let lo = start_bound.map_or(0, |d| panel.lower_bound(d));
    let hi = end_bound.map_or(t, |d| panel.lower_bound(d.succ_opt().unwrap_or(d)));
    let mut last_reason = String::new();
    for _ in 0..WINDOW_RETRY_CAP {
        let dt_in = rng.random_range(dt_range.0..=dt_range.1);
        let need = dt_in + dt_out;
        if hi < lo + need {
            return Err(HarnessError::WindowSampling {
                attempts: 1,
                reason: format!(
                    "window of {need} days does not fit in the {} eligible days",
                    hi.saturating_sub(lo)
                ),
            });
        }
        let t0 = rng.random_range(lo..=hi - need);
        let n = rng.random_range(n_range.0..=n_range.1);
        if n > panel.n_assets() || n < 2 {
            last_reason = format!("requested {n} assets, panel has {}", panel.n_assets());
            continue;
        }
        let nu = rng.random_range(nu_range.0..=nu_range.1);
        let n_x = ((nu * n as f64).ceil() as usize).clamp(1, n - 1);
        let mut idx: Vec<usize> = (0..panel.n_assets()).collect();
        idx.shuffle(rng);
        let chosen = &idx[..n];
        let gather = |rows: std::ops::Range<usize>| {
            DenseMatrix::from_fn(rows.len(), n, |i, j| {
                panel.returns[(rows.start + i, chosen[j])]
            })
        };
        return Ok(WindowSample {
            in_joint: gather(t0..t0 + dt_in),
            oos_joint: gather(t0 + dt_in..t0 + need),
            n_x,
            start_date: panel.dates[t0],
            oos_start_date: panel.dates[t0 + dt_in],
        });
    }
    Err(HarnessError::WindowSampling { attempts: WINDOW_RETRY_CAP, reason: last_reason })
}

/// Applies one day permutation jointly to the concatenated in-sample and
/// out-of-sample segments, then re-splits at the original boundary.
pub fn apply_day_permutation(
    in_sample: &DenseMatrix,
    oos: &DenseMatrix,
    perm: &[usize],
) -> (DenseMatrix, DenseMatrix) {
    assert_eq!(in_sample.cols(), oos.cols(), "segments must share the asset set");
    let t_in = in_sample.rows();
    let total = t_in + oos.rows();
    assert_eq!(perm.len(), total);
    let day = |t: usize| {
        if t < t_in {
            in_sample.row(t)
        } else {
            oos.row(t - t_in)
        }
    };
    let cols = in_sample.cols();
    let mut in_new = DenseMatrix::zeros(t_in, cols);
    let mut oos_new = DenseMatrix::zeros(oos.rows(), cols);
    for (slot, &src) in perm.iter().enumerate() {
        let row = day(src);
        if slot < t_in {
            in_new.row_mut(slot).copy_from_slice(row);
        } else {
            oos_new.row_mut(slot - t_in).copy_from_slice(row);
        }
    }
    (in_new, oos_new)
}

/// Destroys temporal structure while preserving each day's cross-section:
/// pools the day vectors of both segments, permutes them uniformly, and
/// re-splits at the original lengths.
pub fn time_permutation_shuffle(
    in_sample: &DenseMatrix,
    oos: &DenseMatrix,
    rng: &mut ChaCha8Rng,
) -> (DenseMatrix, DenseMatrix) {
    let total = in_sample.rows() + oos.rows();
    let mut perm: Vec<usize> = (0..total).collect();
    perm.shuffle(rng);
    apply_day_permutation(in_sample, oos, &perm)
}

/// Subtracts the cross-sectional mean return from every asset, day by day.
pub fn remove_market_mode(slice: &DenseMatrix) -> DenseMatrix {
    let mut out = slice.clone();
    let n = slice.cols() as f64;
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / n;
        for v in row.iter_mut() {
            *v -= mean;
        }
    }
    out
}
