use std::io::Write;

use anyhow::Result;
use clap::ValueEnum;
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(i64),
    /// Value and printed decimals.
    Float(f64, usize),
    Empty,
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Cell {
        Cell::Text(s.into())
    }

    pub fn int(v: impl TryInto<i64>) -> Cell {
        v.try_into().map_or(Cell::Empty, Cell::Int)
    }

    fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
            Cell::Float(v, d) => format!("{v:.d$}"),
            Cell::Empty => String::new(),
        }
    }

    fn numeric(&self) -> bool {
        matches!(self, Cell::Int(_) | Cell::Float(..))
    }

    fn json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Int(v) => json!(v),
            // Printed precision keeps the JSON stable across platforms.
            Cell::Float(v, d) => format!("{v:.d$}").parse::<f64>().map_or(Value::Null, |f| json!(f)),
            Cell::Empty => Value::Null,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<H: Into<String>>(title: impl Into<String>, headers: impl IntoIterator<Item = H>) -> Self {
        Table { title: title.into(), headers: headers.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    fn write_text<W: Write + ?Sized>(&self, out: &mut W) -> Result<()> {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::render).collect()).collect();
        let widths: Vec<usize> = (0..self.headers.len())
            .map(|j| cells.iter().map(|r| r[j].len()).chain([self.headers[j].len()]).max().unwrap_or(0))
            .collect();
        if !self.title.is_empty() {
            writeln!(out, "{}", self.title)?;
        }
        let line = |fields: Vec<String>| fields.join("  ").trim_end().to_string();
        writeln!(out, "{}", line(self.headers.iter().zip(&widths).map(|(h, w)| format!("{h:<w$}")).collect()))?;
        writeln!(out, "{}", line(widths.iter().map(|w| "-".repeat(*w)).collect()))?;
        for (row, text) in self.rows.iter().zip(&cells) {
            let fields = row
                .iter()
                .zip(text)
                .zip(&widths)
                .map(|((c, t), w)| if c.numeric() { format!("{t:>w$}") } else { format!("{t:<w$}") })
                .collect();
            writeln!(out, "{}", line(fields))?;
        }
        Ok(())
    }

    pub fn json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|r| {
                    let mut m = Map::new();
                    for (h, c) in self.headers.iter().zip(r) {
                        m.insert(h.clone(), c.json());
                    }
                    Value::Object(m)
                })
                .collect(),
        )
    }

    pub fn write<W: Write + ?Sized>(&self, format: Format, out: &mut W) -> Result<()> {
        match format {
            Format::Table => self.write_text(out),
            Format::Csv => {
                let mut w = csv::Writer::from_writer(&mut *out);
                w.write_record(&self.headers)?;
                for r in &self.rows {
                    w.write_record(r.iter().map(Cell::render))?;
                }
                w.flush()?;
                Ok(())
            }
            Format::Json => {
                serde_json::to_writer_pretty(&mut *out, &self.json())?;
                writeln!(out)?;
                Ok(())
            }
        }
    }
}

/// Several tables as one document. JSON keys them by title, CSV separates them with blank lines.
pub fn write_all<W: Write + ?Sized>(tables: &[Table], format: Format, out: &mut W) -> Result<()> {
    if format == Format::Json {
        let mut m = Map::new();
        for t in tables {
            m.insert(t.title.clone(), t.json());
        }
        serde_json::to_writer_pretty(&mut *out, &Value::Object(m))?;
        writeln!(out)?;
        return Ok(());
    }
    for (i, t) in tables.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        t.write(format, out)?;
    }
    Ok(())
}
