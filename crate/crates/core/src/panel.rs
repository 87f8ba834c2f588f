//! Aligned return panels: ingestion of daily price files into log-return
//! matrices, with full-precision CSV round-tripping for downstream phases.

use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::Result;

/// How to treat a price row where some ticker has no quote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// Drop the whole row (with a warning); the next return spans the gap.
    #[default]
    DropRow,
    /// Carry each ticker's last seen price forward; rows missing a price
    /// before a ticker's first quote are still dropped.
    ForwardFill,
}

/// Row accounting from a price-file ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestReport {
    /// Data rows present in the file (inside the date range, if any).
    pub price_rows_read: usize,
    /// Rows discarded for missing quotes.
    pub price_rows_dropped: usize,
    /// Complete price rows that entered the return calculation.
    pub price_rows_used: usize,
    /// Return rows produced (one fewer than the rows used).
    pub return_rows: usize,
}

/// A days-by-series matrix of daily log returns with a strictly increasing
/// trading calendar shared across series.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    values: DMatrix<f64>,
}

impl ReturnsPanel {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if dates.len() < 2 {
            return Err(Error::Range(format!(
                "a panel needs at least 2 days, got {}",
                dates.len()
            )));
        }
        if tickers.is_empty() {
            return Err(Error::Range("a panel needs at least one series".into()));
        }
        if values.shape() != (dates.len(), tickers.len()) {
            return Err(Error::Dimension {
                what: "panel value matrix rows".into(),
                expected: dates.len(),
                got: values.nrows(),
            });
        }
        for w in dates.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Alignment(format!(
                    "dates must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for (i, t) in tickers.iter().enumerate() {
            if t.trim().is_empty() {
                return Err(Error::Alignment(format!("ticker {i} is blank")));
            }
            if tickers[..i].contains(t) {
                return Err(Error::Alignment(format!("duplicate ticker {t}")));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("panel contains non-finite returns".into()));
        }
        Ok(Self {
            dates,
            tickers,
            values,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn n_series(&self) -> usize {
        self.tickers.len()
    }

    /// One day's returns across all series.
    pub fn row(&self, t: usize) -> DVector<f64> {
        self.values.row(t).transpose()
    }

    /// One series' full return history.
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values.column(i).iter().copied().collect()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// The sub-panel over a half-open row range.
    pub fn restrict(&self, range: std::ops::Range<usize>) -> Result<ReturnsPanel> {
        if range.end > self.n_days() || range.start >= range.end {
            return Err(Error::Range(format!(
                "row range {}..{} does not fit a panel of {} days",
                range.start,
                range.end,
                self.n_days()
            )));
        }
        ReturnsPanel::new(
            self.dates[range.clone()].to_vec(),
            self.tickers.clone(),
            self.values.rows(range.start, range.end - range.start).into(),
        )
    }

    /// Write the panel as CSV with a `date` column; numbers use the shortest
    /// decimal form that parses back to the identical float.
    pub fn to_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec!["date".to_string()];
        header.extend(self.tickers.iter().cloned());
        writer.write_record(&header)?;
        for (t, date) in self.dates.iter().enumerate() {
            let mut record = vec![date.format("%Y-%m-%d").to_string()];
            for i in 0..self.n_series() {
                record.push(format!("{}", self.values[(t, i)]));
            }
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Read a panel previously written by [`to_csv`](Self::to_csv). Every
    /// cell must parse; returns files admit no gaps.
    pub fn from_csv<P: AsRef<Path>>(path: P) -> Result<ReturnsPanel> {
        let mut reader = csv::Reader::from_path(path)?;
        let tickers = read_header(&mut reader)?;
        let mut dates = Vec::new();
        let mut rows: Vec<f64> = Vec::new();
        for (idx, record) in reader.records().enumerate() {
            let record = record?;
            let row = idx + 1;
            let date = parse_date(&record, row)?;
            if record.len() != tickers.len() + 1 {
                return Err(Error::Data {
                    row,
                    ticker: String::new(),
                    message: format!(
                        "expected {} fields, got {}",
                        tickers.len() + 1,
                        record.len()
                    ),
                });
            }
            for (i, cell) in record.iter().skip(1).enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Data {
                    row,
                    ticker: tickers[i].clone(),
                    message: format!("unparseable return {cell:?}"),
                })?;
                rows.push(v);
            }
            dates.push(date);
        }
        let m = tickers.len();
        let t_len = dates.len();
        let values = DMatrix::from_row_slice(t_len.max(1), m, &rows);
        if t_len == 0 {
            return Err(Error::Range("returns file has no data rows".into()));
        }
        ReturnsPanel::new(dates, tickers, values)
    }
}

fn read_header(reader: &mut csv::Reader<std::fs::File>) -> Result<Vec<String>> {
    let headers = reader.headers()?.clone();
    let mut iter = headers.iter();
    match iter.next() {
        Some(first) if first.trim().eq_ignore_ascii_case("date") => {}
        other => {
            return Err(Error::Data {
                row: 0,
                ticker: String::new(),
                message: format!("first header field must be 'date', got {other:?}"),
            })
        }
    }
    let tickers: Vec<String> = iter.map(|s| s.trim().to_string()).collect();
    if tickers.is_empty() {
        return Err(Error::Data {
            row: 0,
            ticker: String::new(),
            message: "no ticker columns in header".into(),
        });
    }
    Ok(tickers)
}

fn parse_date(record: &csv::StringRecord, row: usize) -> Result<NaiveDate> {
    let cell = record.get(0).unwrap_or("");
    NaiveDate::parse_from_str(cell.trim(), "%Y-%m-%d").map_err(|_| Error::Data {
        row,
        ticker: String::new(),
        message: format!("unparseable date {cell:?}"),
    })
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty()
        || t.eq_ignore_ascii_case("na")
        || t.eq_ignore_ascii_case("nan")
        || t.eq_ignore_ascii_case("null")
}

/// Ingest a daily price CSV (`date,TICKER1,...`) into a log-return panel.
/// Rows with any missing quote are dropped with a warning under the default
/// policy, so the following return spans the gap and the calendar stays
/// aligned across tickers. A nonpositive or non-finite price is a data
/// error. `date_range` (inclusive) filters price rows before differencing.
pub fn ingest_prices<P: AsRef<Path>>(
    path: P,
    date_range: Option<(NaiveDate, NaiveDate)>,
) -> Result<(ReturnsPanel, IngestReport)> {
    ingest_prices_with(path, date_range, MissingPolicy::DropRow)
}

/// [`ingest_prices`] with an explicit missing-data policy.
pub fn ingest_prices_with<P: AsRef<Path>>(
    path: P,
    date_range: Option<(NaiveDate, NaiveDate)>,
    policy: MissingPolicy,
) -> Result<(ReturnsPanel, IngestReport)> {
    if let Some((start, end)) = date_range {
        if start > end {
            return Err(Error::Range(format!(
                "date range starts {start} after it ends {end}"
            )));
        }
    }
    let mut reader = csv::Reader::from_path(path)?;
    let tickers = read_header(&mut reader)?;
    let m = tickers.len();
    let mut last_seen: Vec<Option<f64>> = vec![None; m];
    let mut kept: Vec<(NaiveDate, Vec<f64>)> = Vec::new();
    let mut price_rows_read = 0usize;
    let mut price_rows_dropped = 0usize;
    let mut previous_date: Option<NaiveDate> = None;
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = idx + 1;
        let date = parse_date(&record, row)?;
        if let Some(prev) = previous_date {
            if date <= prev {
                return Err(Error::Data {
                    row,
                    ticker: String::new(),
                    message: format!("date {date} does not increase past {prev}"),
                });
            }
        }
        previous_date = Some(date);
        if let Some((start, end)) = date_range {
            if date < start || date > end {
                continue;
            }
        }
        price_rows_read += 1;
        if record.len() != m + 1 {
            return Err(Error::Data {
                row,
                ticker: String::new(),
                message: format!("expected {} fields, got {}", m + 1, record.len()),
            });
        }
        let mut prices = Vec::with_capacity(m);
        let mut gap: Option<usize> = None;
        for (i, cell) in record.iter().skip(1).enumerate() {
            if is_missing(cell) {
                match (policy, last_seen[i]) {
                    (MissingPolicy::ForwardFill, Some(p)) => prices.push(p),
                    _ => {
                        gap.get_or_insert(i);
                        prices.push(f64::NAN);
                    }
                }
                continue;
            }
            let p: f64 = cell.trim().parse().map_err(|_| Error::Data {
                row,
                ticker: tickers[i].clone(),
                message: format!("unparseable price {cell:?}"),
            })?;
            if !p.is_finite() || p <= 0.0 {
                return Err(Error::Data {
                    row,
                    ticker: tickers[i].clone(),
                    message: format!("nonpositive price {p}"),
                });
            }
            last_seen[i] = Some(p);
            prices.push(p);
        }
        if let Some(i) = gap {
            price_rows_dropped += 1;
            log::warn!(
                "dropping {date} (row {row}): no usable quote for {} — next return spans the gap",
                tickers[i]
            );
            continue;
        }
        kept.push((date, prices));
    }
    let price_rows_used = kept.len();
    if price_rows_used < 2 {
        return Err(Error::Range(format!(
            "need at least 2 usable price rows to form returns, got {price_rows_used}"
        )));
    }
    let return_rows = price_rows_used - 1;
    let mut dates = Vec::with_capacity(return_rows);
    let mut values = DMatrix::zeros(return_rows, m);
    for t in 1..price_rows_used {
        dates.push(kept[t].0);
        for i in 0..m {
            values[(t - 1, i)] = (kept[t].1[i] / kept[t - 1].1[i]).ln();
        }
    }
    let panel = ReturnsPanel::new(dates, tickers, values)?;
    Ok((
        panel,
        IngestReport {
            price_rows_read,
            price_rows_dropped,
            price_rows_used,
            return_rows,
        },
    ))
}
