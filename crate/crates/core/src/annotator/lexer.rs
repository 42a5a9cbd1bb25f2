use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// Datatype assigned to cells and columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellType {
    Boolean,
    Integer,
    Decimal,
    Date,
    Url,
    Empty,
    String,
}

impl CellType {
    pub const ALL: [CellType; 7] = [
        CellType::Boolean,
        CellType::Integer,
        CellType::Decimal,
        CellType::Date,
        CellType::Url,
        CellType::Empty,
        CellType::String,
    ];

    /// Rank used to break voting ties: the more general type wins.
    /// string > decimal > date > url > integer > boolean.
    pub fn generality(self) -> u8 {
        match self {
            CellType::String => 6,
            CellType::Decimal => 5,
            CellType::Date => 4,
            CellType::Url => 3,
            CellType::Integer => 2,
            CellType::Boolean => 1,
            CellType::Empty => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CellType::Boolean => "boolean",
            CellType::Integer => "integer",
            CellType::Decimal => "decimal",
            CellType::Date => "date",
            CellType::Url => "url",
            CellType::Empty => "empty",
            CellType::String => "string",
        }
    }

    /// Whether `text` is a valid lexeme for this type on its own, regardless
    /// of lexer order. Decimal also admits integer lexemes, and string admits
    /// every non-empty lexeme.
    pub fn accepts(self, text: &str) -> bool {
        let t = text.trim();
        match self {
            CellType::Empty => t.is_empty(),
            CellType::String => !t.is_empty(),
            CellType::Boolean => is_boolean(t),
            CellType::Integer => is_integer(t),
            CellType::Decimal => is_decimal(t) || is_integer(t),
            CellType::Date => is_date(t),
            CellType::Url => is_url(t),
        }
    }

    /// Whether cells of this type may be linked to entities.
    pub fn is_entity_capable(self) -> bool {
        matches!(self, CellType::String | CellType::Url)
    }
}

impl fmt::Display for CellType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CellType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CellType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown cell type {s:?}"))
    }
}

fn is_boolean(t: &str) -> bool {
    ["true", "false", "yes", "no"].iter().any(|w| t.eq_ignore_ascii_case(w))
}

fn digits(t: &str) -> bool {
    !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit())
}

fn unsigned(t: &str) -> &str {
    t.strip_prefix(['+', '-']).unwrap_or(t)
}

fn is_integer(t: &str) -> bool {
    digits(unsigned(t))
}

fn is_fixed_point(t: &str) -> bool {
    match t.split_once('.') {
        Some((int, frac)) => digits(int) && digits(frac),
        None => false,
    }
}

fn is_decimal(t: &str) -> bool {
    let body = unsigned(t);
    if let Some((mantissa, exponent)) = body.split_once(['e', 'E']) {
        return (digits(mantissa) || is_fixed_point(mantissa)) && digits(unsigned(exponent));
    }
    is_fixed_point(body)
}

fn is_date(t: &str) -> bool {
    let b = t.as_bytes();
    if b.len() == 4 {
        return digits(t);
    }
    b.len() == 10
        && b[4] == b'-'
        && b[7] == b'-'
        && digits(&t[0..4])
        && digits(&t[5..7])
        && digits(&t[8..10])
        && NaiveDate::parse_from_str(t, "%Y-%m-%d").is_ok()
}

fn is_url(t: &str) -> bool {
    let lower = t.to_ascii_lowercase();
    if !(lower.starts_with("http://") || lower.starts_with("https://")) || t.chars().any(char::is_whitespace) {
        return false;
    }
    url::Url::parse(t).ok().and_then(|u| u.host_str().map(|h| !h.is_empty())).unwrap_or(false)
}

/// First matching lexer in the fixed order empty, boolean, integer, decimal,
/// date, url, falling back to string. The input is trimmed first.
pub fn infer_cell_type(text: &str) -> CellType {
    let t = text.trim();
    if t.is_empty() {
        CellType::Empty
    } else if is_boolean(t) {
        CellType::Boolean
    } else if is_integer(t) {
        CellType::Integer
    } else if is_decimal(t) {
        CellType::Decimal
    } else if is_date(t) {
        CellType::Date
    } else if is_url(t) {
        CellType::Url
    } else {
        CellType::String
    }
}
