//! Text formats for captures, spectra and reports.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so
//! writing, reading and writing again reproduces the same bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::bands::{extended_f64, BandPlan};
use crate::error::{Error, Result};
use crate::explain::ExplanationReport;
use crate::frontend::CaptureRecord;
use crate::spectral::{self, SpectrumFrame, WindowKind};

/// `# key=value,key=value` header line.
fn header_line(pairs: &[(&str, String)]) -> String {
    let body: Vec<String> = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("# {}\n", body.join(","))
}

fn parse_header(line: &str) -> Result<BTreeMap<String, String>> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(1, "expected a '# key=value,...' header line"))?;
    let mut map = BTreeMap::new();
    for item in body.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::parse(1, format!("header item '{item}' is not key=value")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn header_field<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::schema(format!("header is missing '{key}'")))
}

fn header_f64(map: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    let raw = header_field(map, key)?;
    extended_f64::parse_value(raw).ok_or_else(|| Error::schema(format!("header '{key}' is not a number: '{raw}'")))
}

fn header_int<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = header_field(map, key)?;
    raw.parse()
        .map_err(|_| Error::schema(format!("header '{key}' is not an integer: '{raw}'")))
}

/// Data rows of a two-column CSV, checking the column header on line 2.
fn parse_rows<'a>(lines: impl Iterator<Item = (usize, &'a str)>, columns: &str) -> Result<Vec<(usize, &'a str, &'a str)>> {
    let mut lines = lines.filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == columns => {}
        Some((n, l)) => return Err(Error::parse(n, format!("expected column header '{columns}', found '{l}'"))),
        None => return Err(Error::parse(2, format!("missing column header '{columns}'"))),
    }
    lines
        .map(|(n, l)| {
            let (a, b) = l
                .split_once(',')
                .ok_or_else(|| Error::parse(n, format!("expected 2 columns, found '{l}'")))?;
            if b.contains(',') {
                return Err(Error::parse(n, format!("expected 2 columns, found '{l}'")));
            }
            Ok((n, a.trim(), b.trim()))
        })
        .collect()
}

fn numbered(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l))
}

pub fn capture_to_csv(capture: &CaptureRecord) -> String {
    let mut out = header_line(&[
        ("fs", capture.fs.to_string()),
        ("bits", capture.bits.to_string()),
        ("full_scale", extended_f64::format_value(capture.full_scale_v)),
        ("seed", capture.seed.to_string()),
    ]);
    out.push_str("index,volts\n");
    for (i, v) in capture.samples.iter().enumerate() {
        let _ = writeln!(out, "{i},{v}");
    }
    out
}

pub fn capture_from_csv(text: &str) -> Result<CaptureRecord> {
    let mut lines = numbered(text);
    let first = match lines.next() {
        Some((_, l)) if !l.trim().is_empty() => l,
        _ => return Err(Error::parse(1, "empty capture file")),
    };
    let header = parse_header(first)?;
    let fs = header_f64(&header, "fs")?;
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::schema(format!("header fs must be > 0, got {fs}")));
    }
    let bits: u32 = header_int(&header, "bits")?;
    let full_scale_v = header_f64(&header, "full_scale")?;
    if !(full_scale_v > 0.0) {
        return Err(Error::schema(format!("header full_scale must be > 0, got {full_scale_v}")));
    }
    let seed: u64 = header_int(&header, "seed")?;

    let rows = parse_rows(lines, "index,volts")?;
    let mut samples = Vec::with_capacity(rows.len());
    for (expected, (n, idx, v)) in rows.into_iter().enumerate() {
        let idx: usize = idx
            .parse()
            .map_err(|_| Error::parse(n, format!("bad index '{idx}'")))?;
        if idx != expected {
            return Err(Error::parse(n, format!("index {idx} out of sequence, expected {expected}")));
        }
        let v: f64 = v.parse().map_err(|_| Error::parse(n, format!("bad sample value '{v}'")))?;
        if !v.is_finite() {
            return Err(Error::parse(n, format!("non-finite sample '{v}'")));
        }
        samples.push(v);
    }
    Ok(CaptureRecord {
        samples,
        fs,
        bits,
        full_scale_v,
        seed,
        config: None,
    })
}

pub fn spectrum_to_csv(frame: &SpectrumFrame) -> String {
    let mut out = header_line(&[
        ("fs", frame.fs.to_string()),
        ("n", frame.n.to_string()),
        ("window", frame.window.to_string()),
        ("nf_dbv", frame.nf.to_string()),
        ("calibration", frame.calibration.to_string()),
    ]);
    out.push_str("freq_hz,mag_dbv\n");
    for (f, m) in frame.freqs.iter().zip(&frame.mags) {
        let _ = writeln!(out, "{f},{m}");
    }
    out
}

pub fn spectrum_from_csv(text: &str) -> Result<SpectrumFrame> {
    let mut lines = numbered(text);
    let first = match lines.next() {
        Some((_, l)) if !l.trim().is_empty() => l,
        _ => return Err(Error::parse(1, "empty spectrum file")),
    };
    let header = parse_header(first)?;
    let fs = header_f64(&header, "fs")?;
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::schema(format!("header fs must be > 0, got {fs}")));
    }
    let n: usize = header_int(&header, "n")?;
    let window: WindowKind = header_field(&header, "window")?
        .parse()
        .map_err(|e: crate::error::SpectralError| Error::schema(e.to_string()))?;
    let nf = header_f64(&header, "nf_dbv")?;
    let calibration = header_f64(&header, "calibration")?;
    let rows = parse_rows(lines, "freq_hz,mag_dbv")?;
    let mut freqs = Vec::with_capacity(rows.len());
    let mut mags = Vec::with_capacity(rows.len());
    for (n, f, m) in rows {
        freqs.push(f.parse::<f64>().map_err(|_| Error::parse(n, format!("bad frequency '{f}'")))?);
        mags.push(m.parse::<f64>().map_err(|_| Error::parse(n, format!("bad magnitude '{m}'")))?);
    }
    if mags.len() != n / 2 + 1 {
        return Err(Error::schema(format!("expected {} rows for n = {n}, found {}", n / 2 + 1, mags.len())));
    }
    if mags.len() < spectral::MIN_NF_BINS {
        return Err(Error::schema(format!("spectrum has only {} bins", mags.len())));
    }
    Ok(SpectrumFrame {
        freqs,
        mags,
        fs,
        n,
        window,
        nf,
        calibration,
    })
}

pub fn report_to_json(report: &ExplanationReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn report_from_json(text: &str) -> Result<ExplanationReport> {
    serde_json::from_str(text).map_err(|e| json_error(&e))
}

pub fn bands_to_json(plan: &BandPlan) -> String {
    let mut s = serde_json::to_string_pretty(plan).expect("band plan serializes");
    s.push('\n');
    s
}

pub fn bands_from_json(text: &str) -> Result<BandPlan> {
    serde_json::from_str(text).map_err(|e| json_error(&e))
}

pub fn bands_from_csv(text: &str) -> Result<Vec<crate::bands::Band>> {
    let mut lines = numbered(text).filter(|(_, l)| !l.trim().is_empty());
    const COLUMNS: &str = "band_lo_hz,band_hi_hz,sir_db,snr_db,recommended";
    match lines.next() {
        Some((_, l)) if l.trim() == COLUMNS => {}
        Some((n, l)) => return Err(Error::parse(n, format!("expected column header '{COLUMNS}', found '{l}'"))),
        None => return Err(Error::parse(1, "empty band file")),
    }
    lines
        .map(|(n, l)| {
            let cols: Vec<&str> = l.split(',').map(str::trim).collect();
            if cols.len() != 5 {
                return Err(Error::parse(n, format!("expected 5 columns, found {}", cols.len())));
            }
            let num = |s: &str| extended_f64::parse_value(s).ok_or_else(|| Error::parse(n, format!("bad number '{s}'")));
            Ok(crate::bands::Band {
                lo_hz: num(cols[0])?,
                hi_hz: num(cols[1])?,
                sir_db: num(cols[2])?,
                snr_db: num(cols[3])?,
                recommended: cols[4]
                    .parse()
                    .map_err(|_| Error::parse(n, format!("bad flag '{}'", cols[4])))?,
            })
        })
        .collect()
}

fn json_error(e: &serde_json::Error) -> Error {
    use serde_json::error::Category;
    match e.classify() {
        Category::Syntax | Category::Eof => Error::parse(e.line(), e.to_string()),
        Category::Data => Error::schema(e.to_string()),
        Category::Io => Error::Io(std::io::Error::other(e.to_string())),
    }
}
