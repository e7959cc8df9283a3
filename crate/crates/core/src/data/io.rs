use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::{CrossSection, FirmPanel, MacroSeries, PanelDataset, ReturnSeries, YearMonth};

pub const FIRMS_FILE: &str = "firms.csv";
pub const MACRO_FILE: &str = "macro.csv";
pub const FACTORS_FILE: &str = "factors.csv";
pub const PORTFOLIOS_FILE: &str = "portfolios.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPaths {
    pub firms: PathBuf,
    pub macro_series: PathBuf,
    pub factors: PathBuf,
    pub portfolios: PathBuf,
}

impl DataPaths {
    /// The standard file names inside one directory.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        DataPaths {
            firms: dir.join(FIRMS_FILE),
            macro_series: dir.join(MACRO_FILE),
            factors: dir.join(FACTORS_FILE),
            portfolios: dir.join(PORTFOLIOS_FILE),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Firms with fewer monthly observations are dropped.
    pub min_history: usize,
    /// Largest firms by lagged market equity kept per month.
    pub universe_cap: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            min_history: 12,
            universe_cap: 3000,
        }
    }
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    parse_err(path, line, e.to_string())
}

fn parse_num(path: &Path, line: usize, field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(path, line, format!("unparseable {what} {field:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite {what} {field:?}")));
    }
    Ok(v)
}

struct FirmRow {
    firm: String,
    ret: f64,
    me: f64,
    chars: Vec<Option<f64>>,
}

fn read_firm_file(path: &Path) -> Result<(Vec<String>, Vec<(YearMonth, Vec<FirmRow>)>)> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let expected = ["date", "firm_id", "ret", "me"];
    if header.len() < 4 || header[..4] != expected {
        return Err(parse_err(
            path,
            1,
            format!("header must start with date,firm_id,ret,me; got {}", header.join(",")),
        ));
    }
    let char_names = header[4..].to_vec();
    let k = char_names.len();
    let mut months: Vec<(YearMonth, Vec<FirmRow>)> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 4 + k {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", 4 + k, rec.len()),
            ));
        }
        let date: YearMonth = rec[0].parse().map_err(|e: Error| parse_err(path, line, e.to_string()))?;
        let firm = rec[1].to_string();
        if firm.is_empty() {
            return Err(parse_err(path, line, "empty firm_id"));
        }
        if rec[2].is_empty() || rec[3].is_empty() {
            return Err(parse_err(path, line, "return and market equity are required"));
        }
        let ret = parse_num(path, line, &rec[2], "return")?;
        let me = parse_num(path, line, &rec[3], "market equity")?;
        let chars = (0..k)
            .map(|c| {
                let f = &rec[4 + c];
                if f.is_empty() {
                    Ok(None)
                } else {
                    parse_num(path, line, f, "characteristic").map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        match months.last_mut() {
            Some((d, rows)) if *d == date => {
                if !seen.insert(firm.clone()) {
                    return Err(parse_err(path, line, format!("duplicate firm {firm} in {date}")));
                }
                rows.push(FirmRow { firm, ret, me, chars });
            }
            Some((d, _)) if *d > date => {
                return Err(parse_err(
                    path,
                    line,
                    format!("date {date} precedes earlier date {d}; rows must be sorted by month"),
                ));
            }
            _ => {
                seen.clear();
                seen.insert(firm.clone());
                months.push((date, vec![FirmRow { firm, ret, me, chars }]));
            }
        }
    }
    Ok((char_names, months))
}

/// Reads a `date,x1..xN` file. Empty fields are forward-filled when
/// `fill_missing` is set and rejected otherwise.
pub fn load_series(path: impl AsRef<Path>, fill_missing: bool) -> Result<(ReturnSeries, Vec<(usize, usize)>)> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some("date") || header.len() < 2 {
        return Err(parse_err(path, 1, "header must be date followed by at least one series"));
    }
    let names = header[1..].to_vec();
    let n = names.len();
    let mut dates: Vec<YearMonth> = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    let mut filled = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != n + 1 {
            return Err(parse_err(path, line, format!("expected {} fields, found {}", n + 1, rec.len())));
        }
        let date: YearMonth = rec[0].parse().map_err(|e: Error| parse_err(path, line, e.to_string()))?;
        if let Some(prev) = dates.last() {
            if *prev >= date {
                return Err(parse_err(path, line, format!("dates must be strictly increasing ({prev} then {date})")));
            }
        }
        let t = dates.len();
        for c in 0..n {
            let field = &rec[c + 1];
            if field.is_empty() {
                if !fill_missing {
                    return Err(parse_err(path, line, format!("missing value for {}", names[c])));
                }
                if t == 0 {
                    return Err(parse_err(path, line, format!("cannot forward-fill {} in the first row", names[c])));
                }
                data.push(data[(t - 1) * n + c]);
                filled.push((t, c));
            } else {
                data.push(parse_num(path, line, field, "value")?);
            }
        }
        dates.push(date);
    }
    let values = Matrix::from_vec(dates.len(), n, data)?;
    Ok((ReturnSeries { dates, names, values }, filled))
}

fn align_or_name(series: &ReturnSeries, dates: &[YearMonth], what: &str) -> Result<(ReturnSeries, Vec<usize>)> {
    let index: HashMap<YearMonth, usize> = series.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let mut rows = Vec::with_capacity(dates.len());
    for d in dates {
        match index.get(d) {
            Some(&i) => rows.push(i),
            None => return Err(Error::Data(format!("month {d} is missing from the {what} file"))),
        }
    }
    let mut values = Matrix::zeros(dates.len(), series.width());
    for (t, &i) in rows.iter().enumerate() {
        values.row_mut(t).copy_from_slice(series.values.row(i));
    }
    Ok((
        ReturnSeries {
            dates: dates.to_vec(),
            names: series.names.clone(),
            values,
        },
        rows,
    ))
}

/// Loads and aligns the four input files.
pub fn load_panel(paths: &DataPaths, options: LoadOptions) -> Result<PanelDataset> {
    let (char_names, raw_months) = read_firm_file(&paths.firms)?;
    let k = char_names.len();

    // Lagged market equity must be positive; then cap the universe by size.
    let mut months: Vec<(YearMonth, Vec<FirmRow>)> = Vec::with_capacity(raw_months.len());
    let mut dropped_me = 0usize;
    for (date, rows) in raw_months {
        let before = rows.len();
        let mut rows: Vec<FirmRow> = rows.into_iter().filter(|r| r.me > 0.0).collect();
        dropped_me += before - rows.len();
        if rows.len() > options.universe_cap {
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.sort_by(|&a, &b| rows[b].me.total_cmp(&rows[a].me).then(a.cmp(&b)));
            let mut keep = vec![false; rows.len()];
            for &i in &order[..options.universe_cap] {
                keep[i] = true;
            }
            let mut flags = keep.into_iter();
            rows.retain(|_| flags.next().unwrap_or(false));
        }
        months.push((date, rows));
    }
    if dropped_me > 0 {
        log::warn!("dropped {dropped_me} firm-months with non-positive lagged market equity");
    }

    let mut history: HashMap<&str, usize> = HashMap::new();
    for (_, rows) in &months {
        for r in rows {
            *history.entry(r.firm.as_str()).or_default() += 1;
        }
    }
    let short: HashSet<String> = history
        .into_iter()
        .filter(|(_, n)| *n < options.min_history)
        .map(|(f, _)| f.to_string())
        .collect();

    let mut dates = Vec::new();
    let mut sections = Vec::new();
    for (date, rows) in months {
        let rows: Vec<FirmRow> = rows.into_iter().filter(|r| !short.contains(&r.firm)).collect();
        if rows.is_empty() {
            log::warn!("month {date} has no firms after filtering; dropped");
            continue;
        }
        let m = rows.len();
        let mut chars = Matrix::zeros(k, m);
        let mut observed = vec![false; k * m];
        for (j, r) in rows.iter().enumerate() {
            for (c, v) in r.chars.iter().enumerate() {
                if let Some(v) = v {
                    chars[(c, j)] = *v;
                    observed[c * m + j] = true;
                }
            }
        }
        sections.push(CrossSection {
            firm_ids: rows.iter().map(|r| r.firm.clone()).collect(),
            returns: rows.iter().map(|r| r.ret).collect(),
            market_equity: rows.iter().map(|r| r.me).collect(),
            chars,
            observed,
        });
        dates.push(date);
    }
    if dates.is_empty() {
        return Err(Error::Data(format!("{}: no usable firm-months", paths.firms.display())));
    }

    let (macro_raw, macro_filled) = load_series(&paths.macro_series, true)?;
    let (macro_aligned, rows) = align_or_name(&macro_raw, &dates, "macro")?;
    let mut filled = Vec::new();
    for (t, &i) in rows.iter().enumerate() {
        for &(fi, c) in &macro_filled {
            if fi == i {
                filled.push((t, c));
            }
        }
    }
    if !filled.is_empty() {
        log::warn!("forward-filled {} macro values", filled.len());
    }
    let (factors, _) = load_series(&paths.factors, false)?;
    let (factors, _) = align_or_name(&factors, &dates, "factor")?;
    let (portfolios, _) = load_series(&paths.portfolios, false)?;
    let (portfolios, _) = align_or_name(&portfolios, &dates, "portfolio")?;

    let dataset = PanelDataset {
        dates,
        firms: FirmPanel {
            char_names,
            months: sections,
        },
        macro_series: MacroSeries {
            names: macro_aligned.names,
            values: macro_aligned.values,
            filled,
        },
        factors,
        portfolios,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn series_text(dates: &[YearMonth], names: &[String], values: &Matrix) -> String {
    let mut out = String::from("date");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (t, d) in dates.iter().enumerate() {
        out.push_str(&d.to_string());
        for v in values.row(t) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

/// Writes a `date,x1..xN` file.
pub fn write_series(path: impl AsRef<Path>, series: &ReturnSeries) -> Result<()> {
    write_file(path.as_ref(), &series_text(&series.dates, &series.names, &series.values))
}

/// Writes the dataset in the canonical input format.
pub fn write_panel(dataset: &PanelDataset, paths: &DataPaths) -> Result<()> {
    let mut firms = String::from("date,firm_id,ret,me");
    for n in &dataset.firms.char_names {
        firms.push(',');
        firms.push_str(n);
    }
    firms.push('\n');
    for (d, cs) in dataset.dates.iter().zip(&dataset.firms.months) {
        for j in 0..cs.len() {
            firms.push_str(&format!("{d},{},{},{}", cs.firm_ids[j], cs.returns[j], cs.market_equity[j]));
            for k in 0..cs.num_chars() {
                firms.push(',');
                if cs.is_observed(k, j) {
                    firms.push_str(&cs.chars[(k, j)].to_string());
                }
            }
            firms.push('\n');
        }
    }
    write_file(&paths.firms, &firms)?;
    write_file(
        &paths.macro_series,
        &series_text(&dataset.dates, &dataset.macro_series.names, &dataset.macro_series.values),
    )?;
    write_series(&paths.factors, &dataset.factors)?;
    write_series(&paths.portfolios, &dataset.portfolios)
}
