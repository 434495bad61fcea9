//! CSV serialization for datasets and estimate reports.
//!
//! Complete datasets use the header `pop,cycle,S,T,R,V,F`; the terminal seed
//! pair of each population is written as a row with `cycle = n + 1` and empty
//! R, V, F fields. Observed datasets use `pop,cycle,R,V,F`. Numeric report
//! fields are rendered with six significant digits.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::dynamics::{CompleteDataset, ObservedDataset, ObservedPath, PopulationPath};

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("empty input: no data rows")]
    Empty,
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn malformed(line: usize, message: impl Into<String>) -> CsvError {
    CsvError::Malformed {
        line,
        message: message.into(),
    }
}

/// Render with `digits` significant digits in plain decimal notation.
pub fn format_significant(x: f64, digits: i32) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exponent = x.abs().log10().floor() as i32;
    let decimals = (digits - 1 - exponent).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn write_complete_csv<W: Write>(data: &CompleteDataset, mut out: W) -> io::Result<()> {
    writeln!(out, "pop,cycle,S,T,R,V,F")?;
    for (k, path) in data.populations.iter().enumerate() {
        for i in 0..path.cycles() {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                k,
                i,
                path.old_seeds[i],
                path.new_seeds[i],
                path.rosettes[i],
                path.vernalized[i],
                path.mature[i]
            )?;
        }
        writeln!(
            out,
            "{},{},{},{},,,",
            k,
            path.cycles(),
            path.terminal_old_seeds,
            path.terminal_new_seeds
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_observed_csv<W: Write>(data: &ObservedDataset, mut out: W) -> io::Result<()> {
    writeln!(out, "pop,cycle,R,V,F")?;
    for (k, path) in data.populations.iter().enumerate() {
        for i in 0..path.cycles() {
            writeln!(
                out,
                "{},{},{},{},{}",
                k, i, path.rosettes[i], path.vernalized[i], path.mature[i]
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn parse_count(field: &str, line: usize, name: &str) -> Result<u64, CsvError> {
    field
        .trim()
        .parse::<u64>()
        .map_err(|_| malformed(line, format!("{name} is not a nonnegative integer: {field:?}")))
}

pub fn read_complete_csv<R: BufRead>(reader: R) -> Result<CompleteDataset, CsvError> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or(CsvError::Empty)?;
    let header = header?;
    if header.trim() != "pop,cycle,S,T,R,V,F" {
        return Err(malformed(1, format!("expected header pop,cycle,S,T,R,V,F, found {header:?}")));
    }

    let mut populations: Vec<PopulationPath> = Vec::new();
    let mut current: Option<(usize, PopulationPath)> = None;
    let mut terminal_seen = false;

    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(malformed(line_no, format!("expected 7 fields, found {}", fields.len())));
        }
        let pop = parse_count(fields[0], line_no, "pop")? as usize;
        let cycle = parse_count(fields[1], line_no, "cycle")? as usize;
        let s = parse_count(fields[2], line_no, "S")?;
        let t = parse_count(fields[3], line_no, "T")?;
        let tail_empty = fields[4].trim().is_empty()
            && fields[5].trim().is_empty()
            && fields[6].trim().is_empty();

        match current.as_mut() {
            Some((k, path)) if *k == pop => {
                if terminal_seen {
                    return Err(malformed(line_no, format!("row after terminal row of population {pop}")));
                }
                if cycle != path.cycles() {
                    return Err(malformed(line_no, format!("cycle {cycle} out of order (expected {})", path.cycles())));
                }
                if tail_empty {
                    path.terminal_old_seeds = s;
                    path.terminal_new_seeds = t;
                    terminal_seen = true;
                } else {
                    path.old_seeds.push(s);
                    path.new_seeds.push(t);
                    path.rosettes.push(parse_count(fields[4], line_no, "R")?);
                    path.vernalized.push(parse_count(fields[5], line_no, "V")?);
                    path.mature.push(parse_count(fields[6], line_no, "F")?);
                }
            }
            _ => {
                // New population block begins.
                if let Some((k, path)) = current.take() {
                    if !terminal_seen {
                        return Err(malformed(line_no, format!("population {k} is missing a terminal seed row")));
                    }
                    populations.push(path);
                }
                if pop != populations.len() {
                    return Err(malformed(line_no, format!("population {pop} out of order (expected {})", populations.len())));
                }
                if cycle != 0 || tail_empty {
                    return Err(malformed(line_no, format!("population {pop} must start with a full cycle-0 row")));
                }
                terminal_seen = false;
                current = Some((
                    pop,
                    PopulationPath {
                        old_seeds: vec![s],
                        new_seeds: vec![t],
                        rosettes: vec![parse_count(fields[4], line_no, "R")?],
                        vernalized: vec![parse_count(fields[5], line_no, "V")?],
                        mature: vec![parse_count(fields[6], line_no, "F")?],
                        terminal_old_seeds: 0,
                        terminal_new_seeds: 0,
                    },
                ));
            }
        }
    }
    if let Some((k, path)) = current.take() {
        if !terminal_seen {
            return Err(malformed(0, format!("population {k} is missing a terminal seed row")));
        }
        populations.push(path);
    }
    if populations.is_empty() {
        return Err(CsvError::Empty);
    }
    let cycles = populations[0].cycles();
    for (k, path) in populations.iter().enumerate() {
        if path.cycles() != cycles {
            return Err(malformed(0, format!("population {k} has {} cycles, expected {cycles}", path.cycles())));
        }
    }
    Ok(CompleteDataset { populations })
}

pub fn read_observed_csv<R: BufRead>(reader: R) -> Result<ObservedDataset, CsvError> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or(CsvError::Empty)?;
    let header = header?;
    if header.trim() != "pop,cycle,R,V,F" {
        return Err(malformed(1, format!("expected header pop,cycle,R,V,F, found {header:?}")));
    }

    let mut populations: Vec<ObservedPath> = Vec::new();
    let mut current: Option<(usize, ObservedPath)> = None;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(malformed(line_no, format!("expected 5 fields, found {}", fields.len())));
        }
        let pop = parse_count(fields[0], line_no, "pop")? as usize;
        let cycle = parse_count(fields[1], line_no, "cycle")? as usize;
        let r = parse_count(fields[2], line_no, "R")?;
        let v = parse_count(fields[3], line_no, "V")?;
        let f = parse_count(fields[4], line_no, "F")?;
        match current.as_mut() {
            Some((k, path)) if *k == pop => {
                if cycle != path.cycles() {
                    return Err(malformed(line_no, format!("cycle {cycle} out of order (expected {})", path.cycles())));
                }
                path.rosettes.push(r);
                path.vernalized.push(v);
                path.mature.push(f);
            }
            _ => {
                if let Some((_, path)) = current.take() {
                    populations.push(path);
                }
                if pop != populations.len() {
                    return Err(malformed(line_no, format!("population {pop} out of order (expected {})", populations.len())));
                }
                if cycle != 0 {
                    return Err(malformed(line_no, format!("population {pop} must start at cycle 0")));
                }
                current = Some((
                    pop,
                    ObservedPath {
                        rosettes: vec![r],
                        vernalized: vec![v],
                        mature: vec![f],
                    },
                ));
            }
        }
    }
    if let Some((_, path)) = current.take() {
        populations.push(path);
    }
    if populations.is_empty() {
        return Err(CsvError::Empty);
    }
    let cycles = populations[0].cycles();
    for (k, path) in populations.iter().enumerate() {
        if path.cycles() != cycles {
            return Err(malformed(0, format!("population {k} has {} cycles, expected {cycles}", path.cycles())));
        }
    }
    Ok(ObservedDataset { populations })
}

/// One `parameter,estimate,std_error` row of an estimate report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub parameter: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
}

impl ReportRow {
    pub fn new(parameter: &str, estimate: f64, std_error: Option<f64>) -> Self {
        Self {
            parameter: parameter.to_string(),
            estimate,
            std_error,
        }
    }
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], mut out: W) -> io::Result<()> {
    writeln!(out, "parameter,estimate,std_error")?;
    for row in rows {
        let se = row
            .std_error
            .map(|se| format_significant(se, 6))
            .unwrap_or_default();
        writeln!(out, "{},{},{}", row.parameter, format_significant(row.estimate, 6), se)?;
    }
    out.flush()?;
    Ok(())
}

/// Flat `key = value` diagnostics file.
pub fn write_key_values<W: Write>(pairs: &[(String, String)], mut out: W) -> io::Result<()> {
    for (key, value) in pairs {
        writeln!(out, "{key} = {value}")?;
    }
    out.flush()?;
    Ok(())
}
