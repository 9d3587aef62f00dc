use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use super::{DataError, Interaction};

/// On-disk layout of an interaction log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Csv,
    Jsonl,
}

impl LogFormat {
    /// Guess from the file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") | Some("ndjson") => LogFormat::Jsonl,
            _ => LogFormat::Csv,
        }
    }
}

impl FromStr for LogFormat {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(LogFormat::Csv),
            "jsonl" => Ok(LogFormat::Jsonl),
            other => Err(DataError::UnknownFormat(other.to_string())),
        }
    }
}

const USER: &str = "user_id";
const ITEM: &str = "item_id";
const TIMESTAMP: &str = "timestamp";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

/// Read a log and apply earliest-wins deduplication per (user, item).
pub fn ingest(path: &Path, format: LogFormat) -> Result<Vec<Interaction>, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    match format {
        LogFormat::Csv => parse_csv(file),
        LogFormat::Jsonl => parse_jsonl(BufReader::new(file)),
    }
}

pub fn parse_csv<R: Read>(reader: R) -> Result<Vec<Interaction>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Malformed { line: 1, message: e.to_string() })?
        .clone();
    let column = |name: &'static str| {
        headers.iter().position(|h| h.trim() == name).ok_or(DataError::MissingColumn(name))
    };
    let (user_col, item_col, ts_col) = (column(USER)?, column(ITEM)?, column(TIMESTAMP)?);

    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |col: usize, name: &'static str| match record.get(col).map(str::trim) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(DataError::MissingField { line, field: name }),
        };
        let user = field(user_col, USER)?;
        let item = field(item_col, ITEM)?;
        let ts = field(ts_col, TIMESTAMP)?;
        let timestamp = ts.parse::<i64>().map_err(|e| DataError::Malformed {
            line,
            message: format!("timestamp `{ts}`: {e}"),
        })?;
        out.push(Interaction::new(user, item, timestamp));
    }
    Ok(dedup_earliest(out))
}

pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Vec<Interaction>, DataError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(|e| DataError::Malformed { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| DataError::Malformed { line: line_no, message: e.to_string() })?;
        let id = |name: &'static str| match value.get(name) {
            Some(serde_json::Value::String(s)) if !s.is_empty() => Ok(s.clone()),
            Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
            None | Some(serde_json::Value::Null) => {
                Err(DataError::MissingField { line: line_no, field: name })
            }
            Some(other) => Err(DataError::Malformed {
                line: line_no,
                message: format!("`{name}` must be a string or number, got {other}"),
            }),
        };
        let user = id(USER)?;
        let item = id(ITEM)?;
        let timestamp = match value.get(TIMESTAMP) {
            None | Some(serde_json::Value::Null) => {
                return Err(DataError::MissingField { line: line_no, field: TIMESTAMP })
            }
            Some(v) => v.as_i64().ok_or_else(|| DataError::Malformed {
                line: line_no,
                message: format!("timestamp must be an integer, got {v}"),
            })?,
        };
        out.push(Interaction::new(user, item, timestamp));
    }
    Ok(dedup_earliest(out))
}

/// Keep one record per (user, item): the one with the earliest timestamp.
/// Surviving records stay at the position of the first occurrence.
pub fn dedup_earliest(interactions: Vec<Interaction>) -> Vec<Interaction> {
    let mut slot: HashMap<(String, String), usize> = HashMap::with_capacity(interactions.len());
    let mut out: Vec<Interaction> = Vec::with_capacity(interactions.len());
    for it in interactions {
        match slot.get(&(it.user_id.clone(), it.item_id.clone())) {
            Some(&i) => {
                if it.timestamp < out[i].timestamp {
                    out[i].timestamp = it.timestamp;
                }
            }
            None => {
                slot.insert((it.user_id.clone(), it.item_id.clone()), out.len());
                out.push(it);
            }
        }
    }
    out
}

pub fn write_interactions_csv(path: &Path, interactions: &[Interaction]) -> Result<(), DataError> {
    let mut w = std::io::BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut body = String::from("user_id,item_id,timestamp\n");
    for it in interactions {
        body.push_str(&format!("{},{},{}\n", it.user_id, it.item_id, it.timestamp));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn write_labels_csv(path: &Path, labels: &[(String, usize)]) -> Result<(), DataError> {
    let mut w = std::io::BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut body = String::from("item_id,category\n");
    for (item, cat) in labels {
        body.push_str(&format!("{item},{cat}\n"));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<(String, usize)>, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Malformed { line: 1, message: e.to_string() })?
        .clone();
    let item_col = headers.iter().position(|h| h == ITEM).ok_or(DataError::MissingColumn(ITEM))?;
    let cat_col =
        headers.iter().position(|h| h == "category").ok_or(DataError::MissingColumn("category"))?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let item = record.get(item_col).ok_or(DataError::MissingField { line, field: ITEM })?;
        let cat = record
            .get(cat_col)
            .ok_or(DataError::MissingField { line, field: "category" })?
            .parse::<usize>()
            .map_err(|e| DataError::Malformed { line, message: e.to_string() })?;
        out.push((item.to_string(), cat));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_row_csv() {
        let csv = "user_id,item_id,timestamp\nu1,i1,1\nu1,i2,2\nu2,i1,3\n";
        let rows = parse_csv(csv.as_bytes()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2], Interaction::new("u2", "i1", 3));
    }

    #[test]
    fn earliest_timestamp_wins() {
        let csv = "user_id,item_id,timestamp\nu1,i1,5\nu1,i1,2\n";
        let rows = parse_csv(csv.as_bytes()).unwrap();
        assert_eq!(rows, vec![Interaction::new("u1", "i1", 2)]);
    }

    #[test]
    fn column_order_is_free() {
        let csv = "timestamp,item_id,user_id\n7,i9,u3\n";
        let rows = parse_csv(csv.as_bytes()).unwrap();
        assert_eq!(rows, vec![Interaction::new("u3", "i9", 7)]);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "user_id,item_id\nu1,i1\n";
        assert!(matches!(parse_csv(csv.as_bytes()), Err(DataError::MissingColumn("timestamp"))));
    }

    #[test]
    fn row_missing_timestamp_reports_line() {
        let csv = "user_id,item_id,timestamp\nu1,i1,1\nu1,i2\n";
        match parse_csv(csv.as_bytes()) {
            Err(DataError::MissingField { line, field }) => {
                assert_eq!(line, 3);
                assert_eq!(field, "timestamp");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_timestamp_is_malformed() {
        let csv = "user_id,item_id,timestamp\nu1,i1,yesterday\n";
        assert!(matches!(parse_csv(csv.as_bytes()), Err(DataError::Malformed { line: 2, .. })));
    }

    #[test]
    fn jsonl_rows() {
        let jsonl = "{\"user_id\":\"u1\",\"item_id\":17,\"timestamp\":4}\n\n{\"user_id\":\"u1\",\"item_id\":\"17\",\"timestamp\":3}\n";
        let rows = parse_jsonl(jsonl.as_bytes()).unwrap();
        assert_eq!(rows, vec![Interaction::new("u1", "17", 3)]);
    }

    #[test]
    fn jsonl_missing_timestamp() {
        let jsonl = "{\"user_id\":\"u1\",\"item_id\":\"a\"}\n";
        assert!(matches!(
            parse_jsonl(jsonl.as_bytes()),
            Err(DataError::MissingField { line: 1, field: "timestamp" })
        ));
    }

    #[test]
    fn format_parsing() {
        assert_eq!("CSV".parse::<LogFormat>().unwrap(), LogFormat::Csv);
        assert_eq!("jsonl".parse::<LogFormat>().unwrap(), LogFormat::Jsonl);
        assert!("xml".parse::<LogFormat>().is_err());
        assert_eq!(LogFormat::from_path(Path::new("a/b.jsonl")), LogFormat::Jsonl);
    }
}
