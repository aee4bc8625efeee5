//! CSV readers for score files, score matrices and feature rows.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::CliError;

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(source)
}

fn parse_number(field: &str, path: &Path, line: u64) -> Result<f64, CliError> {
    field.parse::<f64>().map_err(|_| {
        CliError::Data(format!("{}:{line}: expected a number, found {field:?}", path.display()))
    })
}

fn records(path: &Path) -> Result<Vec<(u64, csv::StringRecord)>, CliError> {
    let mut out = Vec::new();
    for rec in reader(open(path)?).into_records() {
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn is_header(rec: &csv::StringRecord, name: &str) -> bool {
    rec.get(0).is_some_and(|f| f.eq_ignore_ascii_case(name))
}

/// One score per line, optionally preceded by a `score` header.
pub fn read_scores(path: &Path) -> Result<Vec<f64>, CliError> {
    let mut recs = records(path)?;
    if recs.first().is_some_and(|(_, r)| is_header(r, "score")) {
        recs.remove(0);
    }
    let scores = recs
        .iter()
        .map(|(line, rec)| {
            if rec.len() != 1 {
                return Err(CliError::Data(format!(
                    "{}:{line}: expected one score per line, found {} fields",
                    path.display(),
                    rec.len()
                )));
            }
            parse_number(&rec[0], path, *line)
        })
        .collect::<Result<Vec<_>, _>>()?;
    if scores.is_empty() {
        return Err(CliError::Data(format!("{}: no scores", path.display())));
    }
    Ok(scores)
}

/// Header row of label-grid values, then one row of scores per accessible point.
pub struct MatrixFile {
    pub grid: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_matrix(path: &Path) -> Result<MatrixFile, CliError> {
    let recs = records(path)?;
    let Some(((line, header), body)) = recs.split_first() else {
        return Err(CliError::Data(format!("{}: empty matrix file", path.display())));
    };
    let grid = header
        .iter()
        .map(|f| parse_number(f, path, *line))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = body
        .iter()
        .map(|(line, rec)| {
            if rec.len() != grid.len() {
                return Err(CliError::Data(format!(
                    "{}:{line}: expected {} scores, found {}",
                    path.display(),
                    grid.len(),
                    rec.len()
                )));
            }
            rec.iter().map(|f| parse_number(f, path, *line)).collect()
        })
        .collect::<Result<Vec<_>, _>>()?;
    if rows.is_empty() {
        return Err(CliError::Data(format!("{}: matrix has no rows", path.display())));
    }
    Ok(MatrixFile { grid, rows })
}

/// `score[,weight]` per label; a missing weight means 1.
pub fn read_row(path: &Path) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let mut recs = records(path)?;
    if recs.first().is_some_and(|(_, r)| is_header(r, "score")) {
        recs.remove(0);
    }
    let mut scores = Vec::with_capacity(recs.len());
    let mut weights = Vec::with_capacity(recs.len());
    for (line, rec) in &recs {
        match rec.len() {
            1 | 2 => {
                scores.push(parse_number(&rec[0], path, *line)?);
                weights.push(match rec.get(1) {
                    Some(w) => parse_number(w, path, *line)?,
                    None => 1.0,
                });
            }
            n => {
                return Err(CliError::Data(format!(
                    "{}:{line}: expected score[,weight], found {n} fields",
                    path.display()
                )))
            }
        }
    }
    if scores.is_empty() {
        return Err(CliError::Data(format!("{}: no label scores", path.display())));
    }
    Ok((scores, weights))
}
