//! Job traces and the bucket-count time series sampled from them.

use std::fmt::Write as _;
use std::path::Path;

use num_traits::Zero;

use crate::error::{Error, Result};
use crate::forecast::Matrix;
use crate::resources::{data_lines, parse_amount, Amount, BucketCatalog, ResourceSpace, ResourceVector};

/// Default sampling interval: five minutes.
pub const DEFAULT_TICK_SECONDS: u64 = 300;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobRecord {
    pub job_id: String,
    pub submit_time: i64,
    pub end_time: i64,
    /// Requirement of one instance of the job.
    pub demand: ResourceVector,
    /// Number of identical instances the job needs together.
    pub gang_size: u32,
}

impl JobRecord {
    pub fn validate(&self) -> Result<()> {
        if self.end_time <= self.submit_time {
            return Err(Error::InvalidJob {
                job_id: self.job_id.clone(),
                reason: format!(
                    "end time {} is not after submit time {}",
                    self.end_time, self.submit_time
                ),
            });
        }
        if self.gang_size == 0 {
            return Err(Error::InvalidJob {
                job_id: self.job_id.clone(),
                reason: "gang size must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Running on the half-open interval `[submit, end)`.
    pub fn is_running_at(&self, t: i64) -> bool {
        self.submit_time <= t && t < self.end_time
    }
}

/// Parses a trace with header `job_id,submit,end,<dimensions...>,gang_size`.
///
/// Dimension columns are matched to `space` by name, so their order in the file
/// may differ from the catalog's cost-priority order.
pub fn ingest(text: &str, space: &ResourceSpace) -> Result<Vec<JobRecord>> {
    let mut lines = data_lines(text);
    let Some((header_line, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let n = cols.len();
    if n < 5 || cols[0] != "job_id" || cols[1] != "submit" || cols[2] != "end" || cols[n - 1] != "gang_size" {
        return Err(Error::Parse {
            line: header_line,
            column: 1,
            reason: "header must be job_id,submit,end,<dimensions...>,gang_size".into(),
        });
    }
    let dim_cols = &cols[3..n - 1];
    if dim_cols.len() != space.len() {
        return Err(Error::Parse {
            line: header_line,
            column: 4,
            reason: format!(
                "trace has {} resource columns, catalog has {}",
                dim_cols.len(),
                space.len()
            ),
        });
    }
    // file column -> space position
    let mut mapping = Vec::with_capacity(dim_cols.len());
    for (k, name) in dim_cols.iter().enumerate() {
        let pos = space.names().position(|d| d == *name).ok_or_else(|| Error::Parse {
            line: header_line,
            column: k + 4,
            reason: format!("resource column {name:?} is not in the catalog"),
        })?;
        if mapping.contains(&pos) {
            return Err(Error::Parse {
                line: header_line,
                column: k + 4,
                reason: format!("resource column {name:?} repeated"),
            });
        }
        mapping.push(pos);
    }

    let mut jobs = Vec::new();
    for (line, row) in lines {
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() != n {
            return Err(Error::Parse {
                line,
                column: fields.len().min(n),
                reason: format!("expected {n} fields, found {}", fields.len()),
            });
        }
        let parse_time = |col: usize| -> Result<i64> {
            fields[col].parse::<i64>().map_err(|_| Error::Parse {
                line,
                column: col + 1,
                reason: format!("invalid integer time {:?}", fields[col]),
            })
        };
        if fields[0].is_empty() {
            return Err(Error::Parse {
                line,
                column: 1,
                reason: "empty job id".into(),
            });
        }
        let submit_time = parse_time(1)?;
        let end_time = parse_time(2)?;
        let mut qs = vec![Amount::zero(); space.len()];
        for (k, &pos) in mapping.iter().enumerate() {
            let q = parse_amount(fields[3 + k]).map_err(|reason| Error::Parse {
                line,
                column: 4 + k,
                reason,
            })?;
            if q < Amount::zero() {
                return Err(Error::Parse {
                    line,
                    column: 4 + k,
                    reason: "negative quantity".into(),
                });
            }
            qs[pos] = q;
        }
        let gang_size = fields[n - 1].parse::<u32>().map_err(|_| Error::Parse {
            line,
            column: n,
            reason: format!("invalid gang size {:?}", fields[n - 1]),
        })?;
        let job = JobRecord {
            job_id: fields[0].to_string(),
            submit_time,
            end_time,
            demand: ResourceVector::new(qs)?,
            gang_size,
        };
        job.validate()?;
        jobs.push(job);
    }
    Ok(jobs)
}

pub fn ingest_path(path: &Path, space: &ResourceSpace) -> Result<Vec<JobRecord>> {
    ingest(&std::fs::read_to_string(path)?, space)
}

/// Renders jobs in the trace format accepted by [`ingest`].
pub fn write_trace(jobs: &[JobRecord], space: &ResourceSpace) -> String {
    let mut out = String::from("job_id,submit,end");
    for name in space.names() {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",gang_size\n");
    for j in jobs {
        let _ = write!(out, "{},{},{}", j.job_id, j.submit_time, j.end_time);
        for q in j.demand.quantities() {
            if q.is_integer() {
                let _ = write!(out, ",{}", q.numer());
            } else {
                let _ = write!(out, ",{}/{}", q.numer(), q.denom());
            }
        }
        let _ = writeln!(out, ",{}", j.gang_size);
    }
    out
}

/// Requirement vectors of every instance running at `t`, gangs expanded.
pub fn snapshot_at(jobs: &[JobRecord], t: i64) -> Vec<ResourceVector> {
    jobs.iter()
        .filter(|j| j.is_running_at(t))
        .flat_map(|j| std::iter::repeat_n(j.demand.clone(), j.gang_size as usize))
        .collect()
}

/// Identifies the catalog a series was embedded with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogRef {
    pub path: String,
    pub instance_types: Vec<String>,
}

impl CatalogRef {
    pub fn of(catalog: &BucketCatalog, path: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            instance_types: catalog.instance_types(),
        }
    }

    /// Fails unless `catalog` has the same buckets in the same order.
    pub fn check(&self, catalog: &BucketCatalog) -> Result<()> {
        let types = catalog.instance_types();
        if types != self.instance_types {
            return Err(Error::InvalidConfig(format!(
                "series was embedded with buckets [{}] but the catalog has [{}]",
                self.instance_types.join(","),
                types.join(",")
            )));
        }
        Ok(())
    }
}

/// Per-tick instance counts, one column per catalog bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketCountSeries {
    pub tick_seconds: u64,
    pub start_time: i64,
    pub catalog: CatalogRef,
    pub counts: Vec<Vec<u64>>,
}

const SERIES_MAGIC: &str = "bucket-count-series v1";

impl BucketCountSeries {
    pub fn new(tick_seconds: u64, start_time: i64, catalog: CatalogRef, counts: Vec<Vec<u64>>) -> Result<Self> {
        if tick_seconds == 0 {
            return Err(Error::SeriesFormat("tick_seconds must be positive".into()));
        }
        let width = catalog.instance_types.len();
        if width == 0 {
            return Err(Error::SeriesFormat("catalog reference lists no buckets".into()));
        }
        if let Some(row) = counts.iter().position(|r| r.len() != width) {
            return Err(Error::SeriesRow {
                row,
                reason: format!("expected {width} counts, found {}", counts[row].len()),
            });
        }
        Ok(Self {
            tick_seconds,
            start_time,
            catalog,
            counts,
        })
    }

    pub fn rows(&self) -> usize {
        self.counts.len()
    }

    pub fn buckets(&self) -> usize {
        self.catalog.instance_types.len()
    }

    pub fn to_matrix(&self) -> Matrix {
        let data = self.counts.iter().flatten().map(|&c| c as f64).collect();
        Matrix::from_vec(self.rows(), self.buckets(), data)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{SERIES_MAGIC}");
        let _ = writeln!(out, "catalog={}", self.catalog.path);
        let _ = writeln!(out, "instance_types={}", self.catalog.instance_types.join(","));
        let _ = writeln!(out, "tick_seconds={}", self.tick_seconds);
        let _ = writeln!(out, "start_time={}", self.start_time);
        out.push_str("tick_index");
        for i in 0..self.buckets() {
            let _ = write!(out, ",count_{i}");
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            let _ = write!(out, "{i}");
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next_header = |what: &str| -> Result<&str> {
            lines
                .next()
                .ok_or_else(|| Error::SeriesFormat(format!("truncated header, missing {what}")))
        };
        if next_header("magic")?.trim() != SERIES_MAGIC {
            return Err(Error::SeriesFormat(format!("first line must be {SERIES_MAGIC:?}")));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = next_header(key)?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(|| Error::SeriesFormat(format!("expected `{key}=...`, found {line:?}")))
        };
        let path = field("catalog")?;
        let types_line = field("instance_types")?;
        let tick_seconds: u64 = field("tick_seconds")?
            .trim()
            .parse()
            .map_err(|_| Error::SeriesFormat("tick_seconds is not a positive integer".into()))?;
        let start_time: i64 = field("start_time")?
            .trim()
            .parse()
            .map_err(|_| Error::SeriesFormat("start_time is not an integer".into()))?;
        let instance_types: Vec<String> = types_line.split(',').map(|s| s.trim().to_string()).collect();
        if instance_types.iter().any(String::is_empty) {
            return Err(Error::SeriesFormat("empty instance type in header".into()));
        }
        let width = instance_types.len();
        let columns = next_header("column header")?;
        let expected: String = std::iter::once("tick_index".to_string())
            .chain((0..width).map(|i| format!("count_{i}")))
            .collect::<Vec<_>>()
            .join(",");
        if columns.trim() != expected {
            return Err(Error::SeriesFormat(format!(
                "column header {columns:?} does not match {width} instance types"
            )));
        }

        let mut counts = Vec::new();
        for (row, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != width + 1 {
                return Err(Error::SeriesRow {
                    row,
                    reason: format!("expected {} fields, found {}", width + 1, fields.len()),
                });
            }
            let idx: usize = fields[0].parse().map_err(|_| Error::SeriesRow {
                row,
                reason: format!("invalid tick index {:?}", fields[0]),
            })?;
            if idx != row {
                return Err(Error::SeriesRow {
                    row,
                    reason: format!("tick index {idx} breaks the consecutive sequence"),
                });
            }
            let values = fields[1..]
                .iter()
                .map(|f| {
                    f.parse::<u64>().map_err(|_| Error::SeriesRow {
                        row,
                        reason: format!("invalid count {f:?}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            counts.push(values);
        }
        Self::new(tick_seconds, start_time, CatalogRef { path, instance_types }, counts)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Samples running-job snapshots at every tick in `[start, end)` and embeds them.
///
/// Each job is mapped to its first-fit bucket once; per-bucket demand sums are then
/// maintained incrementally as jobs start and finish, which yields exactly the
/// counts [`crate::resources::embed_requirements`] gives for each snapshot.
pub fn sample_series(
    jobs: &[JobRecord],
    catalog: &BucketCatalog,
    catalog_path: &str,
    tick_seconds: u64,
    start: i64,
    end: i64,
) -> Result<BucketCountSeries> {
    if tick_seconds == 0 {
        return Err(Error::InvalidConfig("tick_seconds must be positive".into()));
    }
    if start >= end {
        return Err(Error::InvalidConfig(format!("empty sampling range [{start}, {end})")));
    }
    let step = tick_seconds as i64;
    let ticks = ((end - start) + step - 1) / step;
    let tick_of = |t: i64| -> i64 {
        // first tick index whose instant is >= t
        if t <= start {
            0
        } else {
            (t - start + step - 1) / step
        }
    };

    // (tick index, +1 start / -1 stop, job)
    let mut events: Vec<(i64, i8, usize)> = Vec::new();
    let mut buckets: Vec<usize> = vec![usize::MAX; jobs.len()];
    for (k, job) in jobs.iter().enumerate() {
        job.validate()?;
        let first = tick_of(job.submit_time);
        let stop = tick_of(job.end_time).min(ticks);
        if first >= stop {
            continue;
        }
        buckets[k] = match catalog.first_fit(&job.demand)? {
            Some(b) => b,
            None => {
                return Err(Error::UnpackableAtTick {
                    tick: first as usize,
                    job: job.job_id.clone(),
                })
            }
        };
        events.push((first, 1, k));
        events.push((stop, -1, k));
    }
    events.sort_unstable();

    let dims = catalog.space().len();
    let mut sums = vec![vec![Amount::zero(); dims]; catalog.len()];
    let mut counts = Vec::with_capacity(ticks as usize);
    let mut ev = events.iter().peekable();
    for tick in 0..ticks {
        while let Some(&&(t, sign, k)) = ev.peek() {
            if t > tick {
                break;
            }
            let gang = Amount::from_integer(jobs[k].gang_size as i128);
            for (s, q) in sums[buckets[k]].iter_mut().zip(jobs[k].demand.quantities()) {
                if sign > 0 {
                    *s += q * gang;
                } else {
                    *s -= q * gang;
                }
            }
            ev.next();
        }
        let row = catalog
            .buckets()
            .iter()
            .zip(&sums)
            .map(|(b, sum)| {
                let ratio = b
                    .boundary
                    .quantities()
                    .iter()
                    .zip(sum)
                    .filter(|(cap, _)| !cap.is_zero())
                    .map(|(cap, s)| s / cap)
                    .max()
                    .unwrap_or_else(Amount::zero);
                ratio.ceil().to_integer() as u64
            })
            .collect();
        counts.push(row);
    }
    BucketCountSeries::new(tick_seconds, start, CatalogRef::of(catalog, catalog_path), counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resources::{embed_requirements, ResourceBucket};

    fn catalog() -> BucketCatalog {
        let space = ResourceSpace::from_headers(&["gpu", "cpu", "mem_gb"]).unwrap();
        BucketCatalog::new(
            space,
            vec![
                ResourceBucket::new("m5.xlarge", ResourceVector::from_integers(&[0, 4, 16]).unwrap(), Amount::from_integer(1)).unwrap(),
                ResourceBucket::new("g4dn.xlarge", ResourceVector::from_integers(&[1, 4, 16]).unwrap(), Amount::from_integer(3)).unwrap(),
            ],
        )
        .unwrap()
    }

    fn job(id: &str, submit: i64, end: i64, d: &[i64], gang: u32) -> JobRecord {
        JobRecord {
            job_id: id.into(),
            submit_time: submit,
            end_time: end,
            demand: ResourceVector::from_integers(d).unwrap(),
            gang_size: gang,
        }
    }

    #[test]
    fn ingest_three_lines() {
        let cat = catalog();
        let text = "job_id,submit,end,gpu,cpu,mem_gb,gang_size\na,0,600,0,2,3.5,1\nb,300,900,1,4,16,2\nc,10,20,0,1,1,1\n";
        let jobs = ingest(text, cat.space()).unwrap();
        assert_eq!(jobs.len(), 3);
        assert_eq!(jobs[0].demand.quantities()[2], Amount::new(7, 2));
        assert_eq!(jobs[1].gang_size, 2);
    }

    #[test]
    fn ingest_reorders_columns_by_name() {
        let cat = catalog();
        let text = "job_id,submit,end,mem_gb,cpu,gpu,gang_size\na,0,600,16,4,1,1\n";
        let jobs = ingest(text, cat.space()).unwrap();
        assert_eq!(jobs[0].demand, ResourceVector::from_integers(&[1, 4, 16]).unwrap());
    }

    #[test]
    fn ingest_rejects_bad_interval_naming_job() {
        let cat = catalog();
        let text = "job_id,submit,end,gpu,cpu,mem_gb,gang_size\nbad-job,600,600,0,1,1,1\n";
        match ingest(text, cat.space()).unwrap_err() {
            Error::InvalidJob { job_id, .. } => assert_eq!(job_id, "bad-job"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ingest_reports_line_numbers() {
        let cat = catalog();
        let text = "job_id,submit,end,gpu,cpu,mem_gb,gang_size\na,0,600,0,1,1,1\nb,x,600,0,1,1,1\n";
        match ingest(text, cat.space()).unwrap_err() {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
        let short = "job_id,submit,end,gpu,cpu,mem_gb,gang_size\na,0,600\n";
        assert!(matches!(ingest(short, cat.space()), Err(Error::Parse { line: 2, .. })));
        let zero_gang = "job_id,submit,end,gpu,cpu,mem_gb,gang_size\na,0,600,0,1,1,0\n";
        assert!(matches!(ingest(zero_gang, cat.space()), Err(Error::InvalidJob { .. })));
    }

    #[test]
    fn ingest_empty_file() {
        assert!(ingest("", catalog().space()).unwrap().is_empty());
    }

    #[test]
    fn job_alive_three_ticks() {
        let cat = catalog();
        let jobs = vec![job("a", 300, 1200, &[0, 1, 1], 1)];
        let s = sample_series(&jobs, &cat, "c", 300, 0, 1800).unwrap();
        let col: Vec<u64> = s.counts.iter().map(|r| r[0]).collect();
        assert_eq!(col, vec![0, 1, 1, 1, 0, 0]);
        assert!(s.counts.iter().all(|r| r[1] == 0));
    }

    #[test]
    fn gang_fills_four_instances() {
        let cat = catalog();
        let jobs = vec![job("g", 0, 600, &[1, 4, 16], 4)];
        let s = sample_series(&jobs, &cat, "c", 300, 0, 900).unwrap();
        assert_eq!(s.counts, vec![vec![0, 4], vec![0, 4], vec![0, 0]]);
    }

    #[test]
    fn overlapping_half_jobs_share_one_instance() {
        let cat = catalog();
        let jobs = vec![job("a", 0, 600, &[0, 2, 8], 1), job("b", 300, 900, &[0, 2, 8], 1)];
        let s = sample_series(&jobs, &cat, "c", 300, 0, 1200).unwrap();
        let col: Vec<u64> = s.counts.iter().map(|r| r[0]).collect();
        assert_eq!(col, vec![1, 1, 1, 0]);
    }

    #[test]
    fn sampled_rows_match_snapshot_embedding() {
        let cat = catalog();
        let jobs = vec![
            job("a", 0, 1000, &[0, 3, 2], 1),
            job("b", 100, 2000, &[0, 1, 9], 3),
            job("c", 700, 900, &[1, 2, 2], 2),
            job("d", 1500, 1600, &[0, 4, 16], 1),
        ];
        let s = sample_series(&jobs, &cat, "c", 300, 0, 2400).unwrap();
        for (k, row) in s.counts.iter().enumerate() {
            let snap = snapshot_at(&jobs, k as i64 * 300);
            assert_eq!(row, &embed_requirements(&snap, &cat).unwrap().rounded, "tick {k}");
        }
    }

    #[test]
    fn unpackable_job_reports_tick() {
        let cat = catalog();
        let jobs = vec![job("huge", 600, 900, &[2, 4, 16], 1)];
        match sample_series(&jobs, &cat, "c", 300, 0, 1200).unwrap_err() {
            Error::UnpackableAtTick { tick, job } => {
                assert_eq!(tick, 2);
                assert_eq!(job, "huge");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn series_file_rejects_wrong_width_with_row() {
        let text = "bucket-count-series v1\ncatalog=c.csv\ninstance_types=a,b\ntick_seconds=300\nstart_time=0\ntick_index,count_0,count_1\n0,1,2\n1,3\n";
        match BucketCountSeries::from_text(text).unwrap_err() {
            Error::SeriesRow { row, .. } => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn series_file_rejects_corrupt_header() {
        assert!(BucketCountSeries::from_text("nonsense\n").is_err());
        let text = "bucket-count-series v1\ncatalog=c.csv\ninstance_types=a\ntick_seconds=zero\n";
        assert!(BucketCountSeries::from_text(text).is_err());
    }

    #[test]
    fn empty_series_round_trips() {
        let s = BucketCountSeries::new(
            300,
            0,
            CatalogRef {
                path: "c.csv".into(),
                instance_types: vec!["a".into()],
            },
            vec![],
        )
        .unwrap();
        let back = BucketCountSeries::from_text(&s.to_text()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.rows(), 0);
    }

    #[test]
    fn trace_writer_round_trips() {
        let cat = catalog();
        let jobs = vec![job("a", 0, 10, &[0, 1, 2], 1), job("b", 5, 50, &[1, 4, 16], 3)];
        let text = write_trace(&jobs, cat.space());
        assert_eq!(ingest(&text, cat.space()).unwrap(), jobs);
    }
}
