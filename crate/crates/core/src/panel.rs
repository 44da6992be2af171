//! Possibly-unbalanced panels of returns and characteristics.
//!
//! Missing observations are carried by a per-period mask. Every masked-out
//! return and characteristic is stored as an exact zero, so cross-sectional
//! sums can run over full rows without branching on availability.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names of a long-format panel CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub period: String,
    pub asset: String,
    #[serde(rename = "return")]
    pub ret: String,
    /// Characteristic columns in order. `None` takes every remaining column.
    #[serde(default)]
    pub chars: Option<Vec<String>>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            period: "period".into(),
            asset: "asset_id".into(),
            ret: "return".into(),
            chars: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    n_assets: usize,
    n_chars: usize,
    /// `returns[t][i]`
    returns: Vec<Vec<f64>>,
    /// `chars[t][i * n_chars + m]`
    chars: Vec<Vec<f64>>,
    mask: Vec<Vec<bool>>,
    period_labels: Vec<String>,
    asset_ids: Vec<String>,
    char_names: Vec<String>,
}

impl Panel {
    /// Builds a panel from per-period returns, row-major characteristic
    /// matrices (`n_assets * n_chars` each) and masks. Masked-out cells are
    /// zeroed regardless of what was passed in.
    pub fn new(returns: Vec<Vec<f64>>, chars: Vec<Vec<f64>>, mask: Vec<Vec<bool>>, n_chars: usize) -> Result<Self> {
        let n_periods = returns.len();
        if n_periods == 0 {
            return Err(Error::Invalid("panel has no periods".into()));
        }
        if n_chars == 0 {
            return Err(Error::Invalid("panel has no characteristics".into()));
        }
        if chars.len() != n_periods || mask.len() != n_periods {
            return Err(Error::Invalid(
                "returns, characteristics and mask disagree on the number of periods".into(),
            ));
        }
        let n_assets = returns[0].len();
        if n_assets == 0 {
            return Err(Error::Invalid("panel has no assets".into()));
        }
        let mut returns = returns;
        let mut chars = chars;
        for t in 0..n_periods {
            if returns[t].len() != n_assets || mask[t].len() != n_assets {
                return Err(Error::DimensionMismatch {
                    expected: n_assets,
                    got: returns[t].len().min(mask[t].len()),
                });
            }
            if chars[t].len() != n_assets * n_chars {
                return Err(Error::DimensionMismatch {
                    expected: n_assets * n_chars,
                    got: chars[t].len(),
                });
            }
            if !mask[t].iter().any(|&m| m) {
                return Err(Error::EmptyPeriod { period: t });
            }
            for i in 0..n_assets {
                if mask[t][i] {
                    let row = &chars[t][i * n_chars..(i + 1) * n_chars];
                    if !returns[t][i].is_finite() || row.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Invalid(format!(
                            "non-finite observed value at period {t}, asset {i}"
                        )));
                    }
                } else {
                    returns[t][i] = 0.0;
                    chars[t][i * n_chars..(i + 1) * n_chars].fill(0.0);
                }
            }
        }
        Ok(Self {
            n_assets,
            n_chars,
            returns,
            chars,
            mask,
            period_labels: (0..n_periods).map(|t| t.to_string()).collect(),
            asset_ids: (0..n_assets).map(|i| i.to_string()).collect(),
            char_names: (0..n_chars).map(|m| format!("char_{}", m + 1)).collect(),
        })
    }

    /// Replaces the default labels used when writing the panel back out.
    pub fn with_labels(
        mut self,
        period_labels: Vec<String>,
        asset_ids: Vec<String>,
        char_names: Vec<String>,
    ) -> Result<Self> {
        if period_labels.len() != self.n_periods()
            || asset_ids.len() != self.n_assets
            || char_names.len() != self.n_chars
        {
            return Err(Error::Invalid("label vectors do not match panel shape".into()));
        }
        self.period_labels = period_labels;
        self.asset_ids = asset_ids;
        self.char_names = char_names;
        Ok(self)
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn n_periods(&self) -> usize {
        self.returns.len()
    }

    pub fn n_chars(&self) -> usize {
        self.n_chars
    }

    pub fn returns(&self, t: usize) -> &[f64] {
        &self.returns[t]
    }

    pub fn mask(&self, t: usize) -> &[bool] {
        &self.mask[t]
    }

    pub fn is_observed(&self, t: usize, i: usize) -> bool {
        self.mask[t][i]
    }

    /// Characteristic vector of asset `i` at period `t` (zeros when masked).
    pub fn z(&self, t: usize, i: usize) -> &[f64] {
        &self.chars[t][i * self.n_chars..(i + 1) * self.n_chars]
    }

    /// `N_t`, the number of complete observations at period `t`.
    pub fn n_obs(&self, t: usize) -> usize {
        self.mask[t].iter().filter(|&&m| m).count()
    }

    pub fn n_obs_all(&self) -> Vec<usize> {
        (0..self.n_periods()).map(|t| self.n_obs(t)).collect()
    }

    /// Indices of observed assets at period `t`, ascending.
    pub fn observed(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        self.mask[t].iter().enumerate().filter_map(|(i, &m)| m.then_some(i))
    }

    pub fn period_labels(&self) -> &[String] {
        &self.period_labels
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn char_names(&self) -> &[String] {
        &self.char_names
    }

    /// Contiguous sub-panel `[start, end)` with labels carried over.
    pub fn slice_periods(&self, start: usize, end: usize) -> Result<Panel> {
        if start >= end || end > self.n_periods() {
            return Err(Error::Invalid(format!(
                "invalid period range {start}..{end} for a panel with {} periods",
                self.n_periods()
            )));
        }
        Ok(Panel {
            n_assets: self.n_assets,
            n_chars: self.n_chars,
            returns: self.returns[start..end].to_vec(),
            chars: self.chars[start..end].to_vec(),
            mask: self.mask[start..end].to_vec(),
            period_labels: self.period_labels[start..end].to_vec(),
            asset_ids: self.asset_ids.clone(),
            char_names: self.char_names.clone(),
        })
    }

    /// Same panel with every return multiplied by `c`.
    pub fn scale_returns(&self, c: f64) -> Panel {
        let mut out = self.clone();
        for row in &mut out.returns {
            for r in row.iter_mut() {
                *r *= c;
            }
        }
        out
    }

    /// Writes the panel in long format: one row per (period, asset) cell,
    /// with empty return and characteristic fields where unobserved.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["period".to_string(), "asset_id".to_string(), "return".to_string()];
        header.extend(self.char_names.iter().cloned());
        w.write_record(&header)?;
        for t in 0..self.n_periods() {
            for i in 0..self.n_assets {
                let mut rec = vec![self.period_labels[t].clone(), self.asset_ids[i].clone()];
                if self.mask[t][i] {
                    rec.push(self.returns[t][i].to_string());
                    rec.extend(self.z(t, i).iter().map(|v| v.to_string()));
                } else {
                    rec.extend(std::iter::repeat_n(String::new(), 1 + self.n_chars));
                }
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | "." | "null")
}

fn parse_cell(cell: &str, column: &str, line: u64) -> Result<Option<f64>> {
    let cell = cell.trim();
    if is_missing(cell) {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(_) => Ok(None),
        Err(_) => Err(Error::NonNumeric {
            column: column.to_string(),
            value: cell.to_string(),
            line,
        }),
    }
}

/// Reads a long-format panel from a CSV file.
pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<Panel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), schema)
}

/// Reads a long-format panel. Periods are ordered numerically when every
/// label parses as a number and lexicographically otherwise; assets are
/// indexed in order of first appearance. A cell pair counts as observed only
/// when the return and every characteristic are present.
pub fn read_csv<R: Read>(reader: R, schema: &ColumnSchema) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let period_col = col(&schema.period)?;
    let asset_col = col(&schema.asset)?;
    let ret_col = col(&schema.ret)?;
    let char_names: Vec<String> = match &schema.chars {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(j, _)| ![period_col, asset_col, ret_col].contains(j))
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    if char_names.is_empty() {
        return Err(Error::Invalid("no characteristic columns".into()));
    }
    let char_cols = char_names.iter().map(|n| col(n)).collect::<Result<Vec<_>>>()?;
    let n_chars = char_cols.len();

    struct Row {
        period: String,
        asset: usize,
        values: Option<(f64, Vec<f64>)>,
    }

    let mut asset_index: HashMap<String, usize> = HashMap::new();
    let mut asset_ids: Vec<String> = Vec::new();
    let mut rows: Vec<Row> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |j: usize| rec.get(j).unwrap_or("");
        let period = field(period_col).to_string();
        let asset_id = field(asset_col).to_string();
        let asset = *asset_index.entry(asset_id.clone()).or_insert_with(|| {
            asset_ids.push(asset_id.clone());
            asset_ids.len() - 1
        });
        let ret = parse_cell(field(ret_col), &schema.ret, line)?;
        let mut z = Vec::with_capacity(n_chars);
        for (&j, name) in char_cols.iter().zip(&char_names) {
            z.push(parse_cell(field(j), name, line)?);
        }
        let values = match (ret, z.iter().all(Option::is_some)) {
            (Some(r), true) => Some((r, z.into_iter().flatten().collect())),
            _ => None,
        };
        rows.push(Row { period, asset, values });
    }

    let mut period_labels: Vec<String> = rows.iter().map(|r| r.period.clone()).collect();
    period_labels.sort();
    period_labels.dedup();
    let numeric: Option<Vec<f64>> = period_labels.iter().map(|p| p.parse::<f64>().ok()).collect();
    if let Some(keys) = numeric {
        let mut paired: Vec<(f64, String)> = keys.into_iter().zip(period_labels).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0));
        period_labels = paired.into_iter().map(|(_, p)| p).collect();
    }
    let period_index: HashMap<&str, usize> = period_labels.iter().enumerate().map(|(t, p)| (p.as_str(), t)).collect();

    let n_periods = period_labels.len();
    if n_periods == 0 {
        return Err(Error::Invalid("csv contains no data rows".into()));
    }
    let n_assets = asset_ids.len();
    let mut returns = vec![vec![0.0; n_assets]; n_periods];
    let mut chars = vec![vec![0.0; n_assets * n_chars]; n_periods];
    let mut mask = vec![vec![false; n_assets]; n_periods];
    let mut seen = vec![vec![false; n_assets]; n_periods];
    for row in rows {
        let t = period_index[row.period.as_str()];
        if std::mem::replace(&mut seen[t][row.asset], true) {
            return Err(Error::DuplicateKey {
                period: row.period,
                asset: asset_ids[row.asset].clone(),
            });
        }
        if let Some((r, z)) = row.values {
            returns[t][row.asset] = r;
            chars[t][row.asset * n_chars..(row.asset + 1) * n_chars].copy_from_slice(&z);
            mask[t][row.asset] = true;
        }
    }
    Panel::new(returns, chars, mask, n_chars)?.with_labels(period_labels, asset_ids, char_names)
}

/// Average ranks (1-based) of `values`, ties sharing the mean of their ranks.
pub(crate) fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share their average
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Maps each characteristic, period by period, to its cross-sectional rank
/// rescaled to `[-0.5, 0.5]` as `(rank - 1) / (N_t - 1) - 0.5`.
pub fn rank_transform(panel: &Panel) -> Panel {
    let mut out = panel.clone();
    let m_total = panel.n_chars;
    for t in 0..panel.n_periods() {
        let obs: Vec<usize> = panel.observed(t).collect();
        let n_t = obs.len();
        for m in 0..m_total {
            if n_t == 1 {
                out.chars[t][obs[0] * m_total + m] = 0.0;
                continue;
            }
            let col: Vec<f64> = obs.iter().map(|&i| panel.chars[t][i * m_total + m]).collect();
            let ranks = average_ranks(&col);
            let denom = (n_t - 1) as f64;
            for (&i, r) in obs.iter().zip(ranks) {
                out.chars[t][i * m_total + m] = (r - 1.0) / denom - 0.5;
            }
        }
    }
    out
}

/// Keeps the contiguous block of periods with at least `n_min` observations.
pub fn filter_min_cross_section(panel: &Panel, n_min: usize) -> Result<Panel> {
    let keep: Vec<usize> = (0..panel.n_periods()).filter(|&t| panel.n_obs(t) >= n_min).collect();
    let (first, last) = match (keep.first(), keep.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(Error::Invalid(format!("no period has at least {n_min} observations"))),
    };
    if last - first + 1 != keep.len() {
        return Err(Error::Invalid(format!(
            "periods with at least {n_min} observations are not contiguous"
        )));
    }
    panel.slice_periods(first, last + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_csv(drop_asset2_t1: bool) -> String {
        let mut s = String::from("period,asset_id,return,char_1\n");
        for t in 0..2 {
            for i in 0..3 {
                if drop_asset2_t1 && t == 1 && i == 2 {
                    continue;
                }
                s.push_str(&format!("{t},a{i},{},{}\n", 0.01 * (i + 1) as f64, i as f64 - 1.0));
            }
        }
        s
    }

    #[test]
    fn balanced_load() {
        let p = read_csv(toy_csv(false).as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!(p.n_periods(), 2);
        assert_eq!(p.n_assets(), 3);
        assert_eq!(p.n_obs_all(), vec![3, 3]);
        assert!(p.mask(0).iter().chain(p.mask(1)).all(|&m| m));
    }

    #[test]
    fn missing_row_is_masked_and_zero_filled() {
        let p = read_csv(toy_csv(true).as_bytes(), &ColumnSchema::default()).unwrap();
        assert!(!p.is_observed(1, 2));
        assert_eq!(p.n_obs(1), 2);
        assert_eq!(p.returns(1)[2], 0.0);
        assert_eq!(p.z(1, 2), &[0.0]);
    }

    #[test]
    fn duplicate_key_rejected() {
        let mut s = toy_csv(false);
        s.push_str("0,a0,0.5,0.5\n");
        let err = read_csv(s.as_bytes(), &ColumnSchema::default()).unwrap_err();
        assert!(matches!(err, Error::DuplicateKey { .. }), "{err}");
    }

    #[test]
    fn non_numeric_and_missing_column() {
        let s = "period,asset_id,return,char_1\n0,a,abc,1\n";
        assert!(matches!(
            read_csv(s.as_bytes(), &ColumnSchema::default()),
            Err(Error::NonNumeric { .. })
        ));
        let s = "period,asset_id,char_1\n0,a,1\n";
        assert!(matches!(
            read_csv(s.as_bytes(), &ColumnSchema::default()),
            Err(Error::MissingColumn(_))
        ));
    }

    #[test]
    fn period_without_complete_rows_rejected() {
        let s = "period,asset_id,return,char_1\n0,a,1,1\n1,a,,1\n";
        assert!(matches!(
            read_csv(s.as_bytes(), &ColumnSchema::default()),
            Err(Error::EmptyPeriod { period: 1 })
        ));
    }

    #[test]
    fn periods_sort_numerically() {
        let s = "period,asset_id,return,char_1\n10,a,1,1\n9,a,2,2\n";
        let p = read_csv(s.as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!(p.period_labels(), &["9".to_string(), "10".to_string()]);
        assert_eq!(p.returns(0)[0], 2.0);
    }

    fn single_period(values: &[f64]) -> Panel {
        let n = values.len();
        Panel::new(vec![vec![0.0; n]], vec![values.to_vec()], vec![vec![true; n]], 1).unwrap()
    }

    #[test]
    fn rank_examples() {
        let p = rank_transform(&single_period(&[3.0, 1.0, 2.0]));
        assert_eq!(p.chars[0], vec![0.5, -0.5, 0.0]);
        let p = rank_transform(&single_period(&[5.0, 5.0]));
        assert_eq!(p.chars[0], vec![0.0, 0.0]);
        let p = rank_transform(&single_period(&[10.0, 20.0, 20.0, 40.0]));
        assert_eq!(p.chars[0], vec![-0.5, 0.0, 0.0, 0.5]);
        let p = rank_transform(&single_period(&[7.0]));
        assert_eq!(p.chars[0], vec![0.0]);
    }

    #[test]
    fn rank_ignores_masked_rows() {
        let p = Panel::new(
            vec![vec![0.0; 4]],
            vec![vec![3.0, 100.0, 1.0, 2.0]],
            vec![vec![true, false, true, true]],
            1,
        )
        .unwrap();
        let r = rank_transform(&p);
        assert_eq!(r.chars[0], vec![0.5, 0.0, -0.5, 0.0]);
    }

    fn panel_with_counts(counts: &[usize]) -> Panel {
        let n = *counts.iter().max().unwrap();
        let mask: Vec<Vec<bool>> = counts.iter().map(|&c| (0..n).map(|i| i < c).collect()).collect();
        let t = counts.len();
        Panel::new(vec![vec![1.0; n]; t], vec![vec![1.0; n]; t], mask, 1).unwrap()
    }

    #[test]
    fn filter_examples() {
        let p = filter_min_cross_section(&panel_with_counts(&[5, 12, 13, 14]), 10).unwrap();
        assert_eq!(p.n_obs_all(), vec![12, 13, 14]);
        assert_eq!(p.period_labels(), &["1", "2", "3"]);

        let orig = panel_with_counts(&[12, 13]);
        assert_eq!(filter_min_cross_section(&orig, 10).unwrap(), orig);

        assert!(filter_min_cross_section(&panel_with_counts(&[12, 5, 13]), 10).is_err());
        assert!(filter_min_cross_section(&panel_with_counts(&[1, 2]), 10).is_err());
    }
}
