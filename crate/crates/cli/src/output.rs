//! Metrics writers. Reals are printed with 17 significant digits in
//! scientific notation, which round-trips every `f64`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use scalora::trainer::MetricsRow;
use serde::Serialize;

use crate::settings::{ConfigError, Format};

pub const COLUMNS: [&str; 7] = [
    "step",
    "method",
    "loss",
    "cum_rank",
    "grad_dist",
    "scaling_mode",
    "upper_bound",
];

pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Serialize)]
struct JsonRow<'a> {
    step: usize,
    method: &'a str,
    loss: f64,
    cum_rank: usize,
    grad_dist: f64,
    scaling_mode: &'a str,
    upper_bound: f64,
}

enum Sink {
    Csv(Box<csv::Writer<Box<dyn Write>>>),
    Jsonl(Box<dyn Write>),
}

pub struct MetricsWriter {
    sink: Sink,
}

impl MetricsWriter {
    /// `-` selects standard output.
    pub fn create(path: &Path, format: Format) -> anyhow::Result<Self> {
        let out: Box<dyn Write> = if path.as_os_str() == "-" {
            Box::new(BufWriter::new(io::stdout()))
        } else {
            let file = File::create(path)
                .map_err(|e| ConfigError(format!("cannot write {}: {e}", path.display())))?;
            Box::new(BufWriter::new(file))
        };
        Self::from_writer(out, format)
    }

    pub fn from_writer(out: Box<dyn Write>, format: Format) -> anyhow::Result<Self> {
        let sink = match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(out);
                w.write_record(COLUMNS)?;
                Sink::Csv(Box::new(w))
            }
            Format::Jsonl => Sink::Jsonl(out),
        };
        Ok(Self { sink })
    }

    pub fn write(&mut self, method: &str, row: &MetricsRow) -> anyhow::Result<()> {
        match &mut self.sink {
            Sink::Csv(w) => w.write_record([
                row.step.to_string(),
                method.to_string(),
                real(row.loss),
                row.cum_rank.to_string(),
                real(row.grad_dist),
                row.scaling_mode.to_string(),
                real(row.upper_bound),
            ])?,
            Sink::Jsonl(w) => {
                let json = JsonRow {
                    step: row.step,
                    method,
                    loss: row.loss,
                    cum_rank: row.cum_rank,
                    grad_dist: row.grad_dist,
                    scaling_mode: row.scaling_mode,
                    upper_bound: row.upper_bound,
                };
                serde_json::to_writer(&mut *w, &json)?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> anyhow::Result<()> {
        match self.sink {
            Sink::Csv(mut w) => w.flush()?,
            Sink::Jsonl(mut w) => w.flush()?,
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Mutex};

    #[derive(Clone, Default)]
    struct Shared(Arc<Mutex<Vec<u8>>>);

    impl Write for Shared {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            self.0.lock().unwrap().extend_from_slice(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    fn row() -> MetricsRow {
        MetricsRow {
            step: 3,
            loss: 0.1,
            cum_rank: 2,
            grad_dist: 1.0 / 3.0,
            scaling_mode: "column",
            upper_bound: 12.5,
        }
    }

    fn render(format: Format) -> String {
        let buf = Shared::default();
        let mut w = MetricsWriter::from_writer(Box::new(buf.clone()), format).unwrap();
        w.write("scalora", &row()).unwrap();
        w.finish().unwrap();
        let bytes = buf.0.lock().unwrap().clone();
        String::from_utf8(bytes).unwrap()
    }

    #[test]
    fn csv_layout() {
        let text = render(Format::Csv);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("step,method,loss,cum_rank,grad_dist,scaling_mode,upper_bound"));
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields[0], "3");
        assert_eq!(fields[2], "1.0000000000000001e-1");
        assert_eq!(fields[2].parse::<f64>().unwrap(), 0.1);
        assert_eq!(fields[4].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(fields[5], "column");
    }

    #[test]
    fn jsonl_mirrors_csv() {
        let text = render(Format::Jsonl);
        let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(v["method"], "scalora");
        assert_eq!(v["cum_rank"], 2);
        assert_eq!(v["grad_dist"].as_f64().unwrap(), 1.0 / 3.0);
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let mut want = COLUMNS.to_vec();
        want.sort_unstable();
        let mut got = keys.clone();
        got.sort_unstable();
        assert_eq!(got, want);
    }
}
