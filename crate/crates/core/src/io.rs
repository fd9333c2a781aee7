//! CSV formats for datasets, chains and summaries.
//!
//! Longitudinal table: `subject_id,time,outcome,<covariates…>`, one row per
//! measurement. Survival table: `subject_id,time,t_L,t_R,status,cause,<covariates…>`,
//! one row per subject, where `status` is one of `exact`, `right`, `left`,
//! `interval`; interval rows use `t_L`/`t_R` and the others `time`. Either
//! time layout may be omitted when no row needs it, and `cause` is optional.
//! Covariates repeated in the longitudinal table must agree with the
//! survival table.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use crate::data::{JointDataset, Subject};
use crate::diagnostics::ParamDiagnostics;
use crate::error::{Error, Result};
use crate::ghsurv::{Censoring, EventRecord};
use crate::longitudinal::Covariates;
use crate::stats::{mean, quantile_sorted};

const MAX_REPORTED: usize = 50;

fn io_err(what: &str, e: impl std::fmt::Display) -> Error {
    Error::Validation(vec![format!("{what}: {e}")])
}

fn finish(problems: Vec<String>) -> Result<()> {
    if problems.is_empty() {
        return Ok(());
    }
    let n = problems.len();
    let mut p: Vec<String> = problems.into_iter().take(MAX_REPORTED).collect();
    if n > MAX_REPORTED {
        p.push(format!("… and {} more problems", n - MAX_REPORTED));
    }
    Err(Error::Validation(p))
}

struct Table {
    headers: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table<R: Read>(reader: R, what: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers().map_err(|e| io_err(what, e))?.iter().map(str::to_string).collect();
    let mut seen = BTreeSet::new();
    let dup: Vec<String> = headers.iter().filter(|h| !seen.insert(h.as_str())).cloned().collect();
    if !dup.is_empty() {
        return Err(io_err(what, format!("duplicate columns {dup:?}")));
    }
    if headers.iter().any(String::is_empty) {
        return Err(io_err(what, "empty column name"));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| io_err(what, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table { headers, rows })
}

fn parse_num(cell: &str, what: &str, line: u64, problems: &mut Vec<String>) -> Option<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Some(v),
        _ => {
            problems.push(format!("line {line}: {what} {cell:?} is not a finite number"));
            None
        }
    }
}

/// One parsed survival row.
#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalRow {
    pub subject_id: String,
    pub event: EventRecord,
    pub covariates: Covariates,
}

/// One parsed longitudinal row.
#[derive(Clone, Debug, PartialEq)]
pub struct LongitudinalRow {
    pub subject_id: String,
    pub time: f64,
    pub outcome: f64,
    pub covariates: Covariates,
}

const SURVIVAL_RESERVED: [&str; 6] = ["subject_id", "time", "t_L", "t_R", "status", "cause"];
const LONGITUDINAL_RESERVED: [&str; 3] = ["subject_id", "time", "outcome"];

pub fn read_survival<R: Read>(reader: R) -> Result<Vec<SurvivalRow>> {
    let t = read_table(reader, "survival table")?;
    let col = |name: &str| t.headers.iter().position(|h| h == name);
    let (id_c, status_c) = match (col("subject_id"), col("status")) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(io_err("survival table", "columns subject_id and status are required")),
    };
    let (time_c, tl_c, tr_c, cause_c) = (col("time"), col("t_L"), col("t_R"), col("cause"));
    if time_c.is_none() && (tl_c.is_none() || tr_c.is_none()) {
        return Err(io_err("survival table", "either a time column or both t_L and t_R are required"));
    }
    let cov_cols: Vec<(usize, &String)> =
        t.headers.iter().enumerate().filter(|(_, h)| !SURVIVAL_RESERVED.contains(&h.as_str())).collect();
    let mut problems = Vec::new();
    let mut out = Vec::with_capacity(t.rows.len());
    let mut ids = BTreeSet::new();
    for (line, r) in &t.rows {
        let line = *line;
        let id = r[id_c].clone();
        if id.is_empty() {
            problems.push(format!("line {line}: empty subject_id"));
            continue;
        }
        if !ids.insert(id.clone()) {
            problems.push(format!("line {line}: subject {id:?} appears more than once"));
            continue;
        }
        let cell = |c: Option<usize>, name: &str, problems: &mut Vec<String>| -> Option<f64> {
            match c.map(|c| r[c].as_str()) {
                None | Some("") => {
                    problems.push(format!("line {line}: status {:?} needs {name}", r[status_c]));
                    None
                }
                Some(s) => parse_num(s, name, line, problems),
            }
        };
        let censoring = match r[status_c].to_ascii_lowercase().as_str() {
            "exact" => cell(time_c, "time", &mut problems).map(Censoring::Exact),
            "right" => cell(time_c, "time", &mut problems).map(Censoring::Right),
            "left" => cell(time_c, "time", &mut problems).map(Censoring::Left),
            "interval" => match (cell(tl_c, "t_L", &mut problems), cell(tr_c, "t_R", &mut problems)) {
                (Some(a), Some(b)) => Some(Censoring::Interval(a, b)),
                _ => None,
            },
            other => {
                problems.push(format!("line {line}: unknown status {other:?} (exact, right, left or interval)"));
                None
            }
        };
        let Some(censoring) = censoring else { continue };
        if let Err(e) = censoring.validate() {
            problems.push(format!("line {line}: {e}"));
            continue;
        }
        let cause = cause_c.map(|c| r[c].clone()).filter(|s| !s.is_empty());
        let mut covariates = Covariates::new();
        for &(c, name) in &cov_cols {
            if let Some(v) = parse_num(&r[c], name, line, &mut problems) {
                covariates.insert(name.clone(), v);
            }
        }
        out.push(SurvivalRow { subject_id: id, event: EventRecord { censoring, cause }, covariates });
    }
    finish(problems)?;
    Ok(out)
}

pub fn read_longitudinal<R: Read>(reader: R) -> Result<Vec<LongitudinalRow>> {
    let t = read_table(reader, "longitudinal table")?;
    let col = |name: &str| t.headers.iter().position(|h| h == name);
    let (Some(id_c), Some(time_c), Some(y_c)) = (col("subject_id"), col("time"), col("outcome")) else {
        return Err(io_err("longitudinal table", "columns subject_id, time and outcome are required"));
    };
    let cov_cols: Vec<(usize, &String)> =
        t.headers.iter().enumerate().filter(|(_, h)| !LONGITUDINAL_RESERVED.contains(&h.as_str())).collect();
    let mut problems = Vec::new();
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, r) in &t.rows {
        let line = *line;
        if r[id_c].is_empty() {
            problems.push(format!("line {line}: empty subject_id"));
            continue;
        }
        let time = parse_num(&r[time_c], "time", line, &mut problems);
        let outcome = parse_num(&r[y_c], "outcome", line, &mut problems);
        let mut covariates = Covariates::new();
        for &(c, name) in &cov_cols {
            if let Some(v) = parse_num(&r[c], name, line, &mut problems) {
                covariates.insert(name.clone(), v);
            }
        }
        if let (Some(time), Some(outcome)) = (time, outcome) {
            if time < 0.0 {
                problems.push(format!("line {line}: negative measurement time {time}"));
                continue;
            }
            out.push(LongitudinalRow { subject_id: r[id_c].clone(), time, outcome, covariates });
        }
    }
    finish(problems)?;
    Ok(out)
}

/// Join the two tables into a validated dataset, in survival-table order.
pub fn assemble(survival: Vec<SurvivalRow>, longitudinal: Vec<LongitudinalRow>) -> Result<JointDataset> {
    let mut problems = Vec::new();
    let index: HashMap<String, usize> = survival.iter().enumerate().map(|(k, s)| (s.subject_id.clone(), k)).collect();
    let mut subjects: Vec<Subject> = survival
        .into_iter()
        .map(|s| Subject { id: s.subject_id, covariates: s.covariates, obs_times: vec![], outcomes: vec![], event: s.event })
        .collect();
    let mut unknown = BTreeSet::new();
    for row in longitudinal {
        let Some(&k) = index.get(&row.subject_id) else {
            unknown.insert(row.subject_id);
            continue;
        };
        let s = &mut subjects[k];
        for (name, v) in row.covariates {
            match s.covariates.get(&name) {
                Some(old) if *old != v => {
                    problems.push(format!("subject {:?}: covariate {name:?} differs between tables ({old} vs {v})", s.id));
                }
                Some(_) => {}
                None => {
                    s.covariates.insert(name, v);
                }
            }
        }
        s.obs_times.push(row.time);
        s.outcomes.push(row.outcome);
    }
    for id in unknown {
        problems.push(format!("subject {id:?} has measurements but no survival record"));
    }
    let names: BTreeSet<&String> = subjects.iter().flat_map(|s| s.covariates.keys()).collect();
    for s in &subjects {
        let missing: Vec<&&String> = names.iter().filter(|n| !s.covariates.contains_key(**n)).collect();
        if !missing.is_empty() {
            problems.push(format!("subject {:?} lacks covariates {missing:?}", s.id));
        }
    }
    finish(problems)?;
    JointDataset::new(subjects)
}

pub fn read_dataset<L: Read, S: Read>(longitudinal: L, survival: S) -> Result<JointDataset> {
    let s = read_survival(survival);
    let l = read_longitudinal(longitudinal);
    match (s, l) {
        (Ok(s), Ok(l)) => assemble(s, l),
        (Err(Error::Validation(mut a)), Err(Error::Validation(b))) => {
            a.extend(b);
            Err(Error::Validation(a))
        }
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

fn covariate_names(data: &JointDataset) -> Vec<String> {
    let set: BTreeSet<&String> = data.subjects.iter().flat_map(|s| s.covariates.keys()).collect();
    set.into_iter().cloned().collect()
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn write_err(e: impl std::fmt::Display) -> Error {
    Error::numeric(format!("write failed: {e}"))
}

pub fn write_longitudinal<W: Write>(w: W, data: &JointDataset) -> Result<()> {
    let covs = covariate_names(data);
    let mut wr = csv_writer(w);
    let mut header = vec!["subject_id".to_string(), "time".into(), "outcome".into()];
    header.extend(covs.iter().cloned());
    wr.write_record(&header).map_err(write_err)?;
    for s in &data.subjects {
        for (t, y) in s.obs_times.iter().zip(&s.outcomes) {
            let mut rec = vec![s.id.clone(), num(*t), num(*y)];
            rec.extend(covs.iter().map(|c| num(s.covariates[c])));
            wr.write_record(&rec).map_err(write_err)?;
        }
    }
    wr.flush().map_err(write_err)
}

pub fn write_survival<W: Write>(w: W, data: &JointDataset) -> Result<()> {
    let covs = covariate_names(data);
    let mut wr = csv_writer(w);
    let mut header: Vec<String> = SURVIVAL_RESERVED.iter().map(|s| s.to_string()).collect();
    header.extend(covs.iter().cloned());
    wr.write_record(&header).map_err(write_err)?;
    for s in &data.subjects {
        let (time, tl, tr, status) = match s.event.censoring {
            Censoring::Exact(t) => (num(t), String::new(), String::new(), "exact"),
            Censoring::Right(t) => (num(t), String::new(), String::new(), "right"),
            Censoring::Left(t) => (num(t), String::new(), String::new(), "left"),
            Censoring::Interval(a, b) => (String::new(), num(a), num(b), "interval"),
        };
        let mut rec = vec![s.id.clone(), time, tl, tr, status.to_string(), s.event.cause.clone().unwrap_or_default()];
        rec.extend(covs.iter().map(|c| num(s.covariates[c])));
        wr.write_record(&rec).map_err(write_err)?;
    }
    wr.flush().map_err(write_err)
}

/// SHA-256 of the canonical serialisation of both tables.
pub fn dataset_hash(data: &JointDataset) -> Result<String> {
    let mut long = Vec::new();
    let mut surv = Vec::new();
    write_longitudinal(&mut long, data)?;
    write_survival(&mut surv, data)?;
    let mut h = Sha256::new();
    h.update(b"longitudinal\n");
    h.update(&long);
    h.update(b"survival\n");
    h.update(&surv);
    Ok(hex::encode(h.finalize()))
}

/// Sampler statistics kept next to each draw in a chain file.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawStats {
    pub accept_stat: f64,
    pub n_leapfrog: usize,
    pub divergent: bool,
}

const CHAIN_META: [&str; 4] = ["iteration", "accept_stat", "n_leapfrog", "divergent"];

/// Chain file: `iteration,accept_stat,n_leapfrog,divergent,<parameters…>`.
pub fn write_chain<W: Write>(w: W, names: &[String], draws: &[Vec<f64>], stats: &[DrawStats]) -> Result<()> {
    if draws.len() != stats.len() || draws.iter().any(|d| d.len() != names.len()) {
        return Err(Error::shape("chain draws, statistics and names disagree in size"));
    }
    let mut wr = csv_writer(w);
    let mut header: Vec<String> = CHAIN_META.iter().map(|s| s.to_string()).collect();
    header.extend(names.iter().cloned());
    wr.write_record(&header).map_err(write_err)?;
    for (i, (d, s)) in draws.iter().zip(stats).enumerate() {
        let mut rec = vec![(i + 1).to_string(), num(s.accept_stat), s.n_leapfrog.to_string(), (s.divergent as u8).to_string()];
        rec.extend(d.iter().map(|v| num(*v)));
        wr.write_record(&rec).map_err(write_err)?;
    }
    wr.flush().map_err(write_err)
}

/// Parameter names and draws of a chain file.
pub fn read_chain<R: Read>(reader: R) -> Result<(Vec<String>, Vec<Vec<f64>>, Vec<DrawStats>)> {
    let t = read_table(reader, "chain file")?;
    if t.headers.len() < CHAIN_META.len() || t.headers[..CHAIN_META.len()] != CHAIN_META {
        return Err(io_err("chain file", format!("header must start with {}", CHAIN_META.join(","))));
    }
    let names = t.headers[CHAIN_META.len()..].to_vec();
    let mut problems = Vec::new();
    let mut draws = Vec::with_capacity(t.rows.len());
    let mut stats = Vec::with_capacity(t.rows.len());
    for (line, r) in &t.rows {
        let accept = parse_num(&r[1], "accept_stat", *line, &mut problems);
        let leap = r[2].parse::<usize>().ok();
        let div = match r[3].as_str() {
            "0" => Some(false),
            "1" => Some(true),
            _ => None,
        };
        if leap.is_none() || div.is_none() {
            problems.push(format!("line {line}: malformed n_leapfrog or divergent"));
        }
        let d: Vec<Option<f64>> = r[CHAIN_META.len()..].iter().map(|c| parse_num(c, "draw", *line, &mut problems)).collect();
        if let (Some(a), Some(l), Some(v)) = (accept, leap, div) {
            if d.iter().all(Option::is_some) {
                draws.push(d.into_iter().map(Option::unwrap).collect());
                stats.push(DrawStats { accept_stat: a, n_leapfrog: l, divergent: v });
            }
        }
    }
    finish(problems)?;
    Ok((names, draws, stats))
}

/// One row of a posterior summary table.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub parameter: String,
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    /// Fraction of draws strictly above zero.
    pub p_positive: f64,
}

/// Summaries of `values` (pooled draws of one parameter), with type-7 quantiles.
pub fn summarize(parameter: &str, values: &[f64]) -> SummaryRow {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    SummaryRow {
        parameter: parameter.to_string(),
        mean: mean(&v),
        median: quantile_sorted(&v, 0.5),
        lower: quantile_sorted(&v, 0.025),
        upper: quantile_sorted(&v, 0.975),
        p_positive: v.iter().filter(|x| **x > 0.0).count() as f64 / v.len() as f64,
    }
}

pub fn write_summary<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut wr = csv_writer(w);
    wr.write_record(["parameter", "mean", "median", "q2.5", "q97.5", "p_positive"]).map_err(write_err)?;
    for r in rows {
        wr.write_record([
            r.parameter.clone(),
            format!("{:.6}", r.mean),
            format!("{:.6}", r.median),
            format!("{:.6}", r.lower),
            format!("{:.6}", r.upper),
            format!("{:.3}", r.p_positive),
        ])
        .map_err(write_err)?;
    }
    wr.flush().map_err(write_err)
}

pub fn write_diagnostics<W: Write>(w: W, names: &[String], diag: &[ParamDiagnostics]) -> Result<()> {
    let mut wr = csv_writer(w);
    wr.write_record(["parameter", "rhat", "ess", "mcse", "degenerate"]).map_err(write_err)?;
    for (n, d) in names.iter().zip(diag) {
        wr.write_record([n.clone(), num(d.rhat), num(d.ess), num(d.mcse), d.degenerate.to_string()]).map_err(write_err)?;
    }
    wr.flush().map_err(write_err)
}

/// Comma-separated grid specification `from:to:count` or an explicit list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::validation(format!("cannot read time grid {spec:?}; use from:to:count or a comma-separated list"));
    let parts: Vec<&str> = spec.split(':').collect();
    let grid = if parts.len() == 3 {
        let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if n < 2 || n > 1_000_000 || !(a.is_finite() && b.is_finite() && b > a) {
            return Err(bad());
        }
        (0..n).map(|j| a + (b - a) * j as f64 / (n - 1) as f64).collect()
    } else if parts.len() == 1 {
        spec.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?
    } else {
        return Err(bad());
    };
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(grid)
}


#[cfg(test)]
mod tests {
    use super::*;

    const SURV: &str = "subject_id,time,t_L,t_R,status,cause,sex\n1,2.5,,,exact,,1\n2,,1.0,3.0,interval,,0\n3,4,,,right,,1\n";
    const LONG: &str = "subject_id,time,outcome\n1,0,1.5\n1,1,1.7\n3,0.5,-0.2\n";

    #[test]
    fn round_trip() {
        let d = read_dataset(LONG.as_bytes(), SURV.as_bytes()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.subjects[0].obs_times, vec![0.0, 1.0]);
        assert_eq!(d.subjects[1].event.censoring, Censoring::Interval(1.0, 3.0));
        let (mut l, mut s) = (Vec::new(), Vec::new());
        write_longitudinal(&mut l, &d).unwrap();
        write_survival(&mut s, &d).unwrap();
        let again = read_dataset(l.as_slice(), s.as_slice()).unwrap();
        assert_eq!(d, again);
        assert_eq!(dataset_hash(&d).unwrap(), dataset_hash(&again).unwrap());
    }

    #[test]
    fn problems_are_collected() {
        let surv = "subject_id,time,status,sex\n1,2.5,dead,1\n2,-1,right,0\n2,3,right,x\n";
        let e = read_survival(surv.as_bytes()).unwrap_err();
        let Error::Validation(p) = e else { panic!() };
        assert_eq!(p.len(), 3, "{p:?}");
        let long = "subject_id,time,outcome\n9,0,1\n1,5,1\n";
        let e = read_dataset(long.as_bytes(), SURV.as_bytes()).unwrap_err();
        let Error::Validation(p) = e else { panic!() };
        assert!(p.iter().any(|m| m.contains("no survival record")));
    }

    #[test]
    fn summary_columns() {
        let r = summarize("x", &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(r.p_positive, 1.0);
        assert_eq!(r.median, 2.5);
        let mut buf = Vec::new();
        write_summary(&mut buf, &[r]).unwrap();
        assert!(String::from_utf8(buf).unwrap().ends_with(",1.000\n"));
        let sym = summarize("y", &[-2.0, -1.0, 1.0, 2.0]);
        assert_eq!(sym.p_positive, 0.5);
    }

    #[test]
    fn grid_specs() {
        assert_eq!(parse_grid("1:3:3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_grid("0.5, 2").unwrap(), vec![0.5, 2.0]);
        assert!(parse_grid("3:1:5").is_err());
        assert!(parse_grid("a").is_err());
    }
}
