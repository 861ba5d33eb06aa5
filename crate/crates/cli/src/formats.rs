//! On-disk formats. Every file is UTF-8 and starts with a header line
//! `# slamkit <kind> v<version>` that names the schema; CSV tables append the
//! column list after a colon, e.g. `# slamkit imu v1: t_sec,wx,wy,wz,ax,ay,az`.
//! Numbers are written in Rust's shortest round-trip notation, so a
//! write/read cycle reproduces every `f64` exactly.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{io_error, CliError, DataError};

pub const SCHEMA_VERSION: u32 = 1;

pub fn header(kind: &str, columns: &[&str]) -> String {
    if columns.is_empty() {
        format!("# slamkit {kind} v{SCHEMA_VERSION}")
    } else {
        format!("# slamkit {kind} v{SCHEMA_VERSION}: {}", columns.join(","))
    }
}

/// Shortest round-trip notation; exponent form for very large or small values.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Parses a header line, returning its columns.
fn parse_header(path: &Path, line: &str, kind: &str) -> Result<Vec<String>, DataError> {
    let bad = |m: String| DataError::at(path, 1, m);
    let body = line.strip_prefix('#').ok_or_else(|| bad(format!("missing '# slamkit {kind} v{SCHEMA_VERSION}' header")))?;
    let (meta, cols) = body.split_once(':').unwrap_or((body, ""));
    let meta: Vec<&str> = meta.split_whitespace().collect();
    if meta.len() != 3 || meta[0] != "slamkit" {
        return Err(bad(format!("missing '# slamkit {kind} v{SCHEMA_VERSION}' header")));
    }
    if meta[1] != kind {
        return Err(bad(format!("expected a {kind} file, header says {}", meta[1])));
    }
    if meta[2] != format!("v{SCHEMA_VERSION}") {
        return Err(bad(format!("schema version {} is not supported (expected v{SCHEMA_VERSION})", meta[2])));
    }
    Ok(cols.split(',').map(str::trim).filter(|c| !c.is_empty()).map(String::from).collect())
}

#[derive(Debug, Clone)]
pub struct Row {
    pub line: usize,
    pub fields: Vec<String>,
}

impl Row {
    pub fn parse<T: FromStr>(&self, path: &Path, col: usize, name: &str) -> Result<T, DataError> {
        self.fields[col]
            .parse()
            .map_err(|_| DataError::at(path, self.line, format!("cannot parse {name} from '{}'", self.fields[col])))
    }

    pub fn f64(&self, path: &Path, col: usize, name: &str) -> Result<f64, DataError> {
        let v: f64 = self.parse(path, col, name)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(DataError::at(path, self.line, format!("{name} is not finite")))
        }
    }

    /// Columns `from..` as floats.
    pub fn floats(&self, path: &Path, from: usize, names: &[String]) -> Result<Vec<f64>, DataError> {
        (from..self.fields.len()).map(|c| self.f64(path, c, &names[c])).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn expect_columns(&self, path: &Path, allowed: &[&[&str]]) -> Result<(), DataError> {
        if allowed.iter().any(|a| a.iter().copied().eq(self.columns.iter().map(String::as_str))) {
            return Ok(());
        }
        let want: Vec<String> = allowed.iter().map(|a| a.join(",")).collect();
        Err(DataError::at(path, 1, format!("columns {} do not match the schema ({})", self.columns.join(","), want.join(" or "))))
    }
}

/// Reads a CSV table of `kind`. With `allow_empty`, a file holding nothing
/// but whitespace is an empty table without columns.
pub fn read_table(path: &Path, kind: &str, allow_empty: bool) -> Result<Table, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    if allow_empty && text.trim().is_empty() {
        return Ok(Table { columns: Vec::new(), rows: Vec::new() });
    }
    let first = text.lines().next().unwrap_or("");
    let columns = parse_header(path, first, kind)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            DataError::at(path, line, format!("malformed row: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != columns.len() {
            return Err(DataError::at(path, line, format!("expected {} fields, found {}", columns.len(), record.len())).into());
        }
        rows.push(Row { line, fields: record.iter().map(String::from).collect() });
    }
    Ok(Table { columns, rows })
}

pub fn write_table(path: &Path, kind: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut buf = header(kind, columns).into_bytes();
    buf.push(b'\n');
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(buf);
    for r in rows {
        w.write_record(r).map_err(|e| DataError::new(path, e.to_string()))?;
    }
    let buf = w.into_inner().map_err(|e| DataError::new(path, e.to_string()))?;
    fs::write(path, buf).map_err(|e| io_error(path, e))
}

/// Flat `key=value` lines. The schema header is optional for hand-written
/// files but must match when present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    /// `(key, value, line)` in file order.
    pub entries: Vec<(String, String, usize)>,
}

impl KeyValues {
    pub fn parse(path: &Path, text: &str, kind: &str) -> Result<Self, DataError> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if i == 0 && line.starts_with("# slamkit") {
                parse_header(path, line, kind)?;
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| DataError::at(path, i + 1, format!("expected key=value, found '{line}'")))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(DataError::at(path, i + 1, "empty key"));
            }
            if !seen.insert(k.to_string()) {
                return Err(DataError::at(path, i + 1, format!("duplicate key '{k}'")));
            }
            entries.push((k.to_string(), v.trim().to_string(), i + 1));
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path, kind: &str) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Ok(Self::parse(path, &text, kind)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|e| e.0 == key).map(|e| e.1.as_str())
    }
}

pub fn write_key_values(path: &Path, kind: &str, pairs: &[(String, String)]) -> Result<(), CliError> {
    let mut out = header(kind, &[]);
    out.push('\n');
    for (k, v) in pairs {
        out.push_str(&format!("{k}={v}\n"));
    }
    fs::write(path, out).map_err(|e| io_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let p = Path::new("x.csv");
        let h = header("imu", &["t_sec", "wx"]);
        assert_eq!(parse_header(p, &h, "imu").unwrap(), vec!["t_sec", "wx"]);
        assert!(parse_header(p, &h, "tracks").is_err());
        let err = parse_header(p, "# slamkit imu v2: t_sec", "imu").unwrap_err();
        assert!(err.message.contains("v2"), "{err}");
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, 1.0, 0.1, 1.0 / 3.0, -2.5e-17, 6.02e23, 1e300, std::f64::consts::PI] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn key_values_reject_duplicates_and_garbage() {
        let p = Path::new("c.txt");
        let kv = KeyValues::parse(p, "# comment\na = 1\n\nb=x,y\n", "config").unwrap();
        assert_eq!(kv.get("a"), Some("1"));
        assert_eq!(kv.entries[1], ("b".into(), "x,y".into(), 4));
        assert_eq!(KeyValues::parse(p, "a=1\na=2\n", "config").unwrap_err().line, Some(2));
        assert_eq!(KeyValues::parse(p, "a=1\nnonsense\n", "config").unwrap_err().line, Some(2));
        assert!(KeyValues::parse(p, "# slamkit config v9\n", "config").is_err());
    }
}
