//! Result tables and their fixed-precision CSV / JSON renderings.

use serde_json::{Map, Number, Value};

use crate::error::{Error, Result};

/// Significant digits used for every float in emitted output.
pub const SIG_DIGITS: usize = 12;

/// `%.12g`-style formatting: shortest of fixed and scientific, trailing
/// zeros removed, `nan`/`inf` spelled out.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= SIG_DIGITS as i32 {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) => fmt_float(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Text(t) => csv_escape(t),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(x) => {
                // round through the fixed-precision text so CSV and JSON agree
                let rounded: f64 = fmt_float(*x).parse().unwrap_or(f64::NAN);
                Number::from_f64(rounded).map_or(Value::Null, Value::Number)
            }
            Cell::Int(i) => Value::from(*i),
            Cell::Text(t) => Value::String(t.clone()),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(x) => Some(*x),
            Cell::Int(i) => Some(*i as f64),
            Cell::Text(_) => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<&str> for Cell {
    fn from(t: &str) -> Self {
        Cell::Text(t.to_string())
    }
}

impl From<String> for Cell {
    fn from(t: String) -> Self {
        Cell::Text(t)
    }
}

fn csv_escape(t: &str) -> String {
    if t.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", t.replace('"', "\"\""))
    } else {
        t.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Table {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width mismatch");
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric values of one column; text cells become NaN.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_index(name)?;
        Some(
            self.rows
                .iter()
                .map(|r| r[j].as_f64().unwrap_or(f64::NAN))
                .collect(),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = self
            .columns
            .iter()
            .map(|c| csv_escape(c))
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    /// Array of row objects, keys in column order.
    pub fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let mut obj = Map::new();
                for (c, v) in self.columns.iter().zip(row) {
                    obj.insert(c.clone(), v.json());
                }
                Value::Object(obj)
            })
            .collect();
        let mut s =
            serde_json::to_string_pretty(&Value::Array(rows)).expect("json values serialize");
        s.push('\n');
        s
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => self.to_json(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(Error::InvalidArgument(format!("unknown format `{s}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf_g() {
        let cases = [
            (1.0, "1"),
            (0.5, "0.5"),
            (-2.25, "-2.25"),
            (1.0 / 3.0, "0.333333333333"),
            (2.0 / 3.0, "0.666666666667"),
            (123456789012.0, "123456789012"),
            (1234567890123.0, "1.23456789012e+12"),
            (1e-4, "0.0001"),
            (1.5e-5, "1.5e-05"),
            (9.9999999999999e-5, "0.0001"),
            (1e100, "1e+100"),
            (0.0, "0"),
            (f64::NAN, "nan"),
            (f64::NEG_INFINITY, "-inf"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_float(x), want, "{x:e}");
        }
    }

    #[test]
    fn csv_and_json() {
        let mut t = Table::new(["lambda", "risk", "status"]);
        t.push(vec![0.1.into(), (1.0 / 3.0).into(), "ok".into()]);
        t.push(vec![
            (-0.2).into(),
            f64::NAN.into(),
            "domain, clipped".into(),
        ]);
        assert_eq!(
            t.to_csv(),
            "lambda,risk,status\n0.1,0.333333333333,ok\n-0.2,nan,\"domain, clipped\"\n"
        );
        let v: Value = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(v[0]["risk"], Value::from(0.333333333333));
        assert_eq!(v[1]["risk"], Value::Null);
        let keys: Vec<&String> = v[0].as_object().unwrap().keys().collect();
        assert_eq!(keys, ["lambda", "risk", "status"]);
        assert_eq!(t.column("risk").unwrap()[0], 1.0 / 3.0);
    }
}
