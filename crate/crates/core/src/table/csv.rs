//! RFC 4180 reader and writer with configurable delimiter and quote.

use serde::Serialize;

use super::{detect_header_with_threshold, Cell, CsvConfig, HeaderMode, HeaderPresence, Table, TableError};

/// Metadata key recording whether the header row came from the source.
pub const HEADER_KEY: &str = "header";
pub const ORIGIN_FORMAT_KEY: &str = "origin_format";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub table: Table,
    pub warnings: Vec<ParseWarning>,
}

struct Record {
    line: usize,
    fields: Vec<String>,
}

fn read_records(text: &str, delimiter: char, quote: char) -> Result<Vec<Record>, TableError> {
    let chars: Vec<char> = text.chars().collect();
    let len = chars.len();
    let mut pos = 0;
    let mut line = 1;
    let mut records = Vec::new();

    let at_newline = |pos: usize| -> Option<usize> {
        match chars.get(pos) {
            Some('\n') => Some(1),
            Some('\r') if chars.get(pos + 1) == Some(&'\n') => Some(2),
            _ => None,
        }
    };

    while pos < len {
        if let Some(n) = at_newline(pos) {
            // blank line
            pos += n;
            line += 1;
            continue;
        }
        let start_line = line;
        let mut fields = Vec::new();
        loop {
            let mut field = String::new();
            if chars[pos..].first() == Some(&quote) {
                let quote_line = line;
                pos += 1;
                loop {
                    let Some(&ch) = chars.get(pos) else {
                        return Err(TableError::Parse {
                            line: quote_line,
                            message: "unterminated quoted field".into(),
                        });
                    };
                    if ch == quote {
                        if chars.get(pos + 1) == Some(&quote) {
                            field.push(quote);
                            pos += 2;
                            continue;
                        }
                        pos += 1;
                        break;
                    }
                    if ch == '\n' {
                        line += 1;
                    }
                    field.push(ch);
                    pos += 1;
                }
                match chars.get(pos) {
                    None => {}
                    Some(&c) if c == delimiter => {}
                    Some(_) if at_newline(pos).is_some() => {}
                    Some(&c) => {
                        return Err(TableError::Parse {
                            line,
                            message: format!("unexpected {c:?} after closing quote"),
                        })
                    }
                }
            } else {
                while pos < len && chars[pos] != delimiter && at_newline(pos).is_none() {
                    field.push(chars[pos]);
                    pos += 1;
                }
            }
            fields.push(field);
            if pos < len && chars[pos] == delimiter {
                pos += 1;
                continue;
            }
            if let Some(n) = at_newline(pos) {
                pos += n;
                line += 1;
            }
            break;
        }
        records.push(Record { line: start_line, fields });
    }
    Ok(records)
}

/// Parse UTF-8 CSV bytes into a rectangular [`Table`].
///
/// A leading byte-order mark is stripped. Short rows are padded with empty
/// cells and reported as warnings; rows longer than the header are errors.
pub fn parse_csv(bytes: &[u8], config: &CsvConfig) -> Result<ParseOutcome, TableError> {
    let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    let text = std::str::from_utf8(bytes).map_err(|e| TableError::Encoding { offset: e.valid_up_to() })?;
    let records = read_records(text, config.delimiter, config.quote)?;
    if records.is_empty() {
        return Err(TableError::EmptyInput);
    }

    let has_header = match config.header {
        HeaderMode::Present => true,
        HeaderMode::Absent => false,
        HeaderMode::Auto if records.len() < 2 => true,
        HeaderMode::Auto => {
            let sample: Vec<&Vec<String>> = records.iter().map(|r| &r.fields).collect();
            let sample: Vec<Vec<&str>> =
                sample.iter().map(|r| r.iter().map(String::as_str).collect()).collect();
            detect_header_with_threshold(&sample, config.header_threshold)?.verdict == HeaderPresence::Present
        }
    };

    let (labels, body): (Vec<String>, &[Record]) = if has_header {
        (records[0].fields.clone(), &records[1..])
    } else {
        let width = records[0].fields.len();
        ((1..=width).map(|i| format!("column_{i}")).collect(), &records[..])
    };
    let width = labels.len();

    let mut warnings = Vec::new();
    let mut rows = Vec::with_capacity(body.len());
    for record in body {
        let found = record.fields.len();
        if found > width {
            return Err(TableError::RowTooLong { line: record.line, expected: width, found });
        }
        let mut cells: Vec<Cell> = record.fields.iter().map(|f| Cell::new(f.as_str())).collect();
        if found < width {
            warnings.push(ParseWarning {
                line: record.line,
                message: format!("row has {found} cells, padded to {width}"),
            });
            cells.resize_with(width, || Cell::new(""));
        }
        rows.push(cells);
    }

    let mut table = Table::new("table", labels, rows)?;
    table.metadata_mut().insert(ORIGIN_FORMAT_KEY.into(), "csv".into());
    table
        .metadata_mut()
        .insert(HEADER_KEY.into(), if has_header { "present" } else { "absent" }.into());
    Ok(ParseOutcome { table, warnings })
}

fn write_field(out: &mut String, field: &str, config: &CsvConfig, lone: bool) {
    let needs_quotes = field.contains(config.delimiter)
        || field.contains(config.quote)
        || field.contains('\n')
        || field.contains('\r')
        || (lone && field.is_empty());
    if needs_quotes {
        out.push(config.quote);
        for ch in field.chars() {
            if ch == config.quote {
                out.push(config.quote);
            }
            out.push(ch);
        }
        out.push(config.quote);
    } else {
        out.push_str(field);
    }
}

fn write_record<'a>(out: &mut String, fields: impl ExactSizeIterator<Item = &'a str>, config: &CsvConfig) {
    let lone = fields.len() == 1;
    for (i, field) in fields.enumerate() {
        if i > 0 {
            out.push(config.delimiter);
        }
        write_field(out, field, config, lone);
    }
    out.push_str(&config.line_ending);
}

/// Emit RFC 4180 CSV. The header row is omitted when it was synthesized on
/// import, so re-parsing with the same config reproduces the table.
pub fn table_to_csv(table: &Table, config: &CsvConfig) -> Vec<u8> {
    let mut out = String::new();
    if table.metadata().get(HEADER_KEY).map(String::as_str) != Some("absent") {
        write_record(&mut out, table.header().iter().map(|h| h.raw_label.as_str()), config);
    }
    for row in table.rows() {
        write_record(&mut out, row.iter().map(|c| c.raw_text.as_str()), config);
    }
    out.into_bytes()
}
