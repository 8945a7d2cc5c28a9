//! CSV helpers: files carry `# key=value` comment lines before the header row.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Result;

pub type Header = Vec<(String, String)>;

/// Collects the leading `# key=value` lines of a file.
pub fn parse_comment_header(text: &str) -> Header {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| {
            let body = l.trim_start_matches('#').trim();
            body.split_once('=').map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

pub fn header_value<'a>(header: &'a Header, key: &str) -> Option<&'a str> {
    header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

/// Serializes `rows` to CSV text with the comment header on top.
pub fn csv_string<T: Serialize>(rows: &[T], header: &Header) -> Result<String> {
    let mut buf = Vec::new();
    for (k, v) in header {
        buf.extend_from_slice(format!("# {k}={v}\n").as_bytes());
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &Header) -> Result<()> {
    std::fs::write(path, csv_string(rows, header)?)?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, Header)> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text)
}

pub fn parse_csv<T: DeserializeOwned>(text: &str) -> Result<(Vec<T>, Header)> {
    let header = parse_comment_header(text);
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok((rows, header))
}
