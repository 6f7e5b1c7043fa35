//! Text checkpoint format. Floats are written with Rust's shortest round-trip
//! formatting, so save followed by load reproduces every bit.
//!
//! ```text
//! transformer-checkpoint 1
//! d_model 64
//! ...
//! buckets 3
//! normalization.min 0,0,1
//! normalization.max 9,4,7
//! tensor enc_in.weight 3 64
//! <row of 64 values separated by spaces>
//! ...
//! end
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::model::{TransformerConfig, TransformerModel};
use crate::error::{Error, Result};
use crate::forecast::MinMax;

const MAGIC: &str = "transformer-checkpoint 1";

fn join<T: ToString>(v: &[T], sep: &str) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(sep)
}

pub fn to_text(model: &TransformerModel) -> String {
    let c = &model.config;
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "d_model {}", c.d_model);
    let _ = writeln!(s, "heads {}", c.heads);
    let _ = writeln!(s, "encoder_layers {}", c.encoder_layers);
    let _ = writeln!(s, "decoder_layers {}", c.decoder_layers);
    let _ = writeln!(s, "dropout {}", c.dropout);
    let _ = writeln!(s, "warmup_steps {}", c.warmup_steps);
    let _ = writeln!(s, "adam_beta1 {}", c.adam_beta1);
    let _ = writeln!(s, "adam_beta2 {}", c.adam_beta2);
    let _ = writeln!(s, "adam_epsilon {}", c.adam_epsilon);
    let _ = writeln!(s, "periods {}", join(&c.periods, ","));
    let _ = writeln!(s, "window_len {}", c.window_len);
    let _ = writeln!(s, "batch_size {}", c.batch_size);
    let _ = writeln!(s, "train_steps {}", c.train_steps);
    let _ = writeln!(s, "seed {}", c.seed);
    let _ = writeln!(s, "buckets {}", model.buckets);
    match &model.normalization {
        Some(n) => {
            let _ = writeln!(s, "normalization.min {}", join(&n.min, ","));
            let _ = writeln!(s, "normalization.max {}", join(&n.max, ","));
        }
        None => {
            let _ = writeln!(s, "normalization none");
        }
    }
    for spec in model.params.specs() {
        let _ = writeln!(s, "tensor {} {} {}", spec.name, spec.rows, spec.cols);
        for row in model.params.data[spec.span()].chunks(spec.cols.max(1)) {
            let _ = writeln!(s, "{}", join(row, " "));
        }
    }
    s.push_str("end\n");
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (n, line) = self.next_line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok((n, v)),
            _ => Err(Error::Checkpoint(format!("line {n}: expected `{key} <value>`, found `{line}`"))),
        }
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let (n, v) = self.field(key)?;
        parse_value(n, v)
    }
}

fn parse_value<T: FromStr>(line: usize, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Checkpoint(format!("line {line}: cannot parse `{v}`")))
}

fn parse_list<T: FromStr>(line: usize, v: &str, sep: char) -> Result<Vec<T>> {
    v.split(sep).filter(|s| !s.is_empty()).map(|x| parse_value(line, x)).collect()
}

pub fn from_text(text: &str) -> Result<TransformerModel> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (_, magic) = lines.next_line()?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!("not a transformer checkpoint (header `{magic}`)")));
    }
    let config = TransformerConfig {
        d_model: lines.parse("d_model")?,
        heads: lines.parse("heads")?,
        encoder_layers: lines.parse("encoder_layers")?,
        decoder_layers: lines.parse("decoder_layers")?,
        dropout: lines.parse("dropout")?,
        warmup_steps: lines.parse("warmup_steps")?,
        adam_beta1: lines.parse("adam_beta1")?,
        adam_beta2: lines.parse("adam_beta2")?,
        adam_epsilon: lines.parse("adam_epsilon")?,
        periods: {
            let (n, v) = lines.field("periods")?;
            parse_list(n, v, ',')?
        },
        window_len: lines.parse("window_len")?,
        batch_size: lines.parse("batch_size")?,
        train_steps: lines.parse("train_steps")?,
        seed: lines.parse("seed")?,
    };
    let buckets: usize = lines.parse("buckets")?;
    let mut model = TransformerModel::layout(config, buckets).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let (n, line) = lines.next_line()?;
    if line != "normalization none" {
        let min = match line.strip_prefix("normalization.min ") {
            Some(v) => parse_list(n, v, ',')?,
            None => return Err(Error::Checkpoint(format!("line {n}: expected normalization"))),
        };
        let (n, v) = lines.field("normalization.max")?;
        let max: Vec<f64> = parse_list(n, v, ',')?;
        if min.len() != buckets || max.len() != buckets {
            return Err(Error::Checkpoint(format!("line {n}: normalization needs {buckets} columns")));
        }
        model.normalization = Some(MinMax { min, max });
    }

    let specs = model.params.specs().to_vec();
    for spec in specs {
        let (n, header) = lines.field("tensor")?;
        let expected = format!("{} {} {}", spec.name, spec.rows, spec.cols);
        if header != expected {
            return Err(Error::Checkpoint(format!(
                "line {n}: expected tensor `{expected}`, found `{header}`"
            )));
        }
        let mut values = Vec::with_capacity(spec.len());
        for _ in 0..spec.rows {
            let (n, row) = lines.next_line()?;
            let parsed: Vec<f64> = parse_list(n, row, ' ')?;
            if parsed.len() != spec.cols {
                return Err(Error::Checkpoint(format!(
                    "line {n}: expected {} values, found {}",
                    spec.cols,
                    parsed.len()
                )));
            }
            values.extend(parsed);
        }
        model.params.data[spec.span()].copy_from_slice(&values);
    }
    let (n, end) = lines.next_line()?;
    if end != "end" {
        return Err(Error::Checkpoint(format!("line {n}: expected `end`")));
    }
    Ok(model)
}

pub fn save(model: &TransformerModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TransformerModel> {
    from_text(&std::fs::read_to_string(path)?)
}
