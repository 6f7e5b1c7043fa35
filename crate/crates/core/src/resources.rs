//! Resource vectors, instance buckets and the embedding of job requirements
//! into per-bucket instance counts.
//!
//! Quantities are exact rationals so that ceilings and "does the scale grow"
//! comparisons never suffer from binary floating point drift.
//!
//! Dimension order is cost priority: the most expensive resource (GPU) comes
//! first, so lexicographic sorting puts CPU-only buckets ahead of GPU buckets.

use std::cmp::Ordering;
use std::fmt;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Exact non-negative resource quantity or price.
pub type Amount = Ratio<i128>;

/// Parses a decimal (`3.5`), integer (`8`) or fraction (`1/3`) into an exact amount.
pub fn parse_amount(text: &str) -> std::result::Result<Amount, String> {
    let s = text.trim();
    if s.is_empty() {
        return Err("empty quantity".into());
    }
    if let Some((n, d)) = s.split_once('/') {
        let n: i128 = n.trim().parse().map_err(|_| format!("bad numerator in {s:?}"))?;
        let d: i128 = d.trim().parse().map_err(|_| format!("bad denominator in {s:?}"))?;
        if d == 0 {
            return Err(format!("zero denominator in {s:?}"));
        }
        return Ok(Amount::new(n, d));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(format!("not a number: {s:?}"));
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return Err(format!("not a decimal number: {s:?}"));
    }
    if frac_part.len() > 18 {
        return Err(format!("too many decimal places in {s:?}"));
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: i128 = if digits.is_empty() {
        0
    } else {
        digits.parse().map_err(|_| format!("quantity out of range: {s:?}"))?
    };
    let denom = 10i128.pow(frac_part.len() as u32);
    let value = Amount::new(numer, denom);
    Ok(if neg { -value } else { value })
}

/// Lossy conversion used at the boundary to floating point forecasters and reports.
pub fn amount_to_f64(a: &Amount) -> f64 {
    a.to_f64().unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dimension {
    pub name: String,
    pub unit: String,
}

impl Dimension {
    /// Builds a dimension from a column header: `mem_gb` becomes name `mem_gb`, unit `GB`.
    pub fn from_header(header: &str) -> Self {
        let name = header.trim().to_string();
        let unit = match name.rsplit_once('_') {
            Some((_, suffix)) if !suffix.is_empty() => suffix.to_uppercase(),
            _ => "units".to_string(),
        };
        Self { name, unit }
    }
}

/// Ordered set of resource dimensions shared by jobs and buckets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceSpace {
    dims: Vec<Dimension>,
}

impl ResourceSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidSpace("at least one dimension is required".into()));
        }
        for (i, d) in dims.iter().enumerate() {
            if d.name.is_empty() {
                return Err(Error::InvalidSpace(format!("dimension {i} has an empty name")));
            }
            if dims[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::InvalidSpace(format!("duplicate dimension {:?}", d.name)));
            }
        }
        Ok(Self { dims })
    }

    pub fn from_headers<S: AsRef<str>>(headers: &[S]) -> Result<Self> {
        Self::new(headers.iter().map(|h| Dimension::from_header(h.as_ref())).collect())
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.dims.iter().map(|d| d.name.as_str())
    }
}

/// A job's per-instance requirement or a bucket boundary.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ResourceVector(Vec<Amount>);

impl ResourceVector {
    pub fn new(quantities: Vec<Amount>) -> Result<Self> {
        if quantities.is_empty() {
            return Err(Error::InvalidVector("no quantities".into()));
        }
        if let Some(i) = quantities.iter().position(|q| *q < Amount::zero()) {
            return Err(Error::InvalidVector(format!(
                "quantity {} at dimension {i} is negative",
                quantities[i]
            )));
        }
        Ok(Self(quantities))
    }

    pub fn from_integers(values: &[i64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| Amount::from_integer(v as i128)).collect())
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![Amount::zero(); len])
    }

    pub fn quantities(&self) -> &[Amount] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_space(&self, space: &ResourceSpace) -> Result<()> {
        same_len(space.len(), self.len())
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, q) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            if q.is_integer() {
                write!(f, "{}", q.numer())?;
            } else {
                write!(f, "{}", amount_to_f64(q))?;
            }
        }
        f.write_str(")")
    }
}

fn same_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::SpaceMismatch { expected, found });
    }
    Ok(())
}

/// The comparison of the original embedding algorithm, kept verbatim.
///
/// Scans left to right and reports `a < b` as soon as some `a[i] < b[i]`, without
/// stopping when `a[i] > b[i]`. This is not an order (`(5,0) < (1,1)` and
/// `(1,1) < (5,0)` both hold) and is not used for packing; see [`fits`].
pub fn is_less_paper(a: &ResourceVector, b: &ResourceVector) -> Result<bool> {
    same_len(a.len(), b.len())?;
    Ok(a.0.iter().zip(&b.0).any(|(x, y)| x < y))
}

/// Component-wise inclusive packing predicate: the job fits inside the boundary.
pub fn fits(job: &ResourceVector, boundary: &ResourceVector) -> Result<bool> {
    same_len(boundary.len(), job.len())?;
    Ok(job.0.iter().zip(&boundary.0).all(|(j, b)| j <= b))
}

/// Lexicographic order over the cost-priority dimension order.
pub fn lex_compare(a: &ResourceVector, b: &ResourceVector) -> Result<Ordering> {
    same_len(a.len(), b.len())?;
    Ok(a.0.cmp(&b.0))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceBucket {
    pub boundary: ResourceVector,
    pub instance_type: String,
    pub price_per_tick: Amount,
}

impl ResourceBucket {
    pub fn new(instance_type: impl Into<String>, boundary: ResourceVector, price_per_tick: Amount) -> Result<Self> {
        let instance_type = instance_type.into();
        if boundary.quantities().iter().all(Zero::is_zero) {
            return Err(Error::InvalidCatalog(format!(
                "bucket {instance_type} has no positive capacity"
            )));
        }
        if price_per_tick < Amount::zero() {
            return Err(Error::InvalidCatalog(format!("bucket {instance_type} has a negative price")));
        }
        Ok(Self {
            boundary,
            instance_type,
            price_per_tick,
        })
    }
}

/// Buckets sorted ascending by [`lex_compare`] over a shared space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketCatalog {
    space: ResourceSpace,
    buckets: Vec<ResourceBucket>,
}

impl BucketCatalog {
    pub fn new(space: ResourceSpace, mut buckets: Vec<ResourceBucket>) -> Result<Self> {
        if buckets.is_empty() {
            return Err(Error::InvalidCatalog("no buckets".into()));
        }
        for b in &buckets {
            b.boundary.check_space(&space)?;
        }
        buckets.sort_by(|a, b| a.boundary.0.cmp(&b.boundary.0));
        for pair in buckets.windows(2) {
            if pair[0].boundary == pair[1].boundary {
                return Err(Error::InvalidCatalog(format!(
                    "buckets {} and {} share boundary {}",
                    pair[0].instance_type, pair[1].instance_type, pair[0].boundary
                )));
            }
        }
        for (i, b) in buckets.iter().enumerate() {
            if buckets[..i].iter().any(|o| o.instance_type == b.instance_type) {
                return Err(Error::InvalidCatalog(format!(
                    "duplicate instance type {}",
                    b.instance_type
                )));
            }
        }
        Ok(Self { space, buckets })
    }

    /// Parses `instance_type,<dim>...,price_per_hour` text; prices become per-tick.
    pub fn from_csv(text: &str, tick_seconds: u64) -> Result<Self> {
        if tick_seconds == 0 {
            return Err(Error::InvalidConfig("tick_seconds must be positive".into()));
        }
        let mut lines = data_lines(text);
        let (header_line, header) = lines
            .next()
            .ok_or_else(|| Error::InvalidCatalog("missing header line".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 3 || cols[0] != "instance_type" || cols[cols.len() - 1] != "price_per_hour" {
            return Err(Error::Parse {
                line: header_line,
                column: 1,
                reason: "header must be instance_type,<dimensions...>,price_per_hour".into(),
            });
        }
        let space = ResourceSpace::from_headers(&cols[1..cols.len() - 1])?;
        let per_tick = Amount::new(tick_seconds as i128, 3600);
        let mut buckets = Vec::new();
        for (line, row) in lines {
            let fields: Vec<&str> = row.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(Error::Parse {
                    line,
                    column: fields.len().min(cols.len()),
                    reason: format!("expected {} fields, found {}", cols.len(), fields.len()),
                });
            }
            if fields[0].is_empty() {
                return Err(Error::Parse {
                    line,
                    column: 1,
                    reason: "empty instance type".into(),
                });
            }
            let mut qs = Vec::with_capacity(space.len());
            for (k, f) in fields[1..fields.len() - 1].iter().enumerate() {
                let q = parse_amount(f).map_err(|reason| Error::Parse {
                    line,
                    column: k + 2,
                    reason,
                })?;
                qs.push(q);
            }
            let boundary = ResourceVector::new(qs).map_err(|e| Error::Parse {
                line,
                column: 2,
                reason: e.to_string(),
            })?;
            let price = parse_amount(fields[fields.len() - 1]).map_err(|reason| Error::Parse {
                line,
                column: fields.len(),
                reason,
            })?;
            buckets.push(ResourceBucket::new(fields[0], boundary, price * per_tick)?);
        }
        Self::new(space, buckets)
    }

    pub fn space(&self) -> &ResourceSpace {
        &self.space
    }

    pub fn buckets(&self) -> &[ResourceBucket] {
        &self.buckets
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    pub fn instance_types(&self) -> Vec<String> {
        self.buckets.iter().map(|b| b.instance_type.clone()).collect()
    }

    pub fn prices(&self) -> Vec<Amount> {
        self.buckets.iter().map(|b| b.price_per_tick).collect()
    }

    /// Buckets whose instance type starts with `prefix` (e.g. `m5.`), keeping order.
    pub fn family(&self, prefix: &str) -> Result<Self> {
        let buckets: Vec<_> = self
            .buckets
            .iter()
            .filter(|b| b.instance_type.starts_with(prefix))
            .cloned()
            .collect();
        if buckets.is_empty() {
            return Err(Error::InvalidCatalog(format!("no instance type starts with {prefix:?}")));
        }
        Self::new(self.space.clone(), buckets)
    }

    /// Catalog with the smallest bucket removed, or `None` when one bucket remains.
    pub fn without_smallest(&self) -> Option<Self> {
        (self.buckets.len() > 1).then(|| Self {
            space: self.space.clone(),
            buckets: self.buckets[1..].to_vec(),
        })
    }

    /// Index of the first (smallest) bucket the job fits in.
    pub fn first_fit(&self, job: &ResourceVector) -> Result<Option<usize>> {
        job.check_space(&self.space)?;
        Ok(self
            .buckets
            .iter()
            .position(|b| job.0.iter().zip(&b.boundary.0).all(|(j, c)| j <= c)))
    }
}

/// Yields `(1-based line number, trimmed line)` skipping blanks and `#` comments.
pub(crate) fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketCounts {
    /// Dominant-resource ratio per bucket before rounding.
    pub raw: Vec<Amount>,
    /// `ceil(raw)` per bucket.
    pub rounded: Vec<u64>,
}

impl BucketCounts {
    pub fn raw_f64(&self) -> Vec<f64> {
        self.raw.iter().map(amount_to_f64).collect()
    }
}

/// Embeds a snapshot of job requirements into per-bucket instance counts.
///
/// Jobs are visited in ascending lexicographic order and each is assigned to the
/// first bucket it [`fits`]. A bucket's count is the largest ratio of summed demand
/// to capacity over its positive-capacity dimensions, rounded up.
pub fn embed_requirements(jobs: &[ResourceVector], catalog: &BucketCatalog) -> Result<BucketCounts> {
    let dims = catalog.space.len();
    for job in jobs {
        job.check_space(&catalog.space)?;
    }
    let mut sorted: Vec<&ResourceVector> = jobs.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));

    let mut sums = vec![vec![Amount::zero(); dims]; catalog.len()];
    for job in sorted {
        let idx = catalog
            .first_fit(job)?
            .ok_or_else(|| Error::UnpackableJob { job: job.to_string() })?;
        for (s, q) in sums[idx].iter_mut().zip(&job.0) {
            *s += q;
        }
    }

    let mut raw = Vec::with_capacity(catalog.len());
    let mut rounded = Vec::with_capacity(catalog.len());
    for (bucket, sum) in catalog.buckets.iter().zip(&sums) {
        let ratio = bucket
            .boundary
            .0
            .iter()
            .zip(sum)
            .filter(|(cap, _)| !cap.is_zero())
            .map(|(cap, s)| s / cap)
            .max()
            .unwrap_or_else(Amount::zero);
        let ceil = ratio.ceil().to_integer();
        rounded.push(u64::try_from(ceil).map_err(|_| Error::InvalidVector("bucket count overflow".into()))?);
        raw.push(ratio);
    }
    Ok(BucketCounts { raw, rounded })
}

/// Price-weighted instance count summed over all snapshots.
pub fn total_scale(snapshots: &[Vec<ResourceVector>], catalog: &BucketCatalog) -> Result<Amount> {
    let prices = catalog.prices();
    let mut total = Amount::zero();
    for snap in snapshots {
        let counts = embed_requirements(snap, catalog)?;
        for (c, p) in counts.rounded.iter().zip(&prices) {
            total += p * Amount::from_integer(*c as i128);
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleStep {
    /// Smallest instance type of the catalog this scale was computed with.
    pub smallest_type: String,
    /// `None` when some job fits no bucket once smaller types are gone.
    pub scale: Option<Amount>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseInstanceSelection {
    pub instance_type: String,
    /// Instance types whose removal was committed, smallest first.
    pub dropped: Vec<String>,
    /// Scale for every successive smallest type, from the full family down to one bucket.
    pub scale_table: Vec<ScaleStep>,
}

/// Drops the smallest instance type while doing so does not increase the total scale.
pub fn select_base_instance(
    snapshots: &[Vec<ResourceVector>],
    family: &BucketCatalog,
) -> Result<BaseInstanceSelection> {
    if snapshots.is_empty() {
        return Err(Error::Empty("snapshots"));
    }
    let mut scale_table = Vec::new();
    let mut current = Some(family.clone());
    while let Some(cat) = current {
        let scale = match total_scale(snapshots, &cat) {
            Ok(s) => Some(s),
            Err(Error::UnpackableJob { .. }) if !scale_table.is_empty() => None,
            Err(e) => return Err(e),
        };
        scale_table.push(ScaleStep {
            smallest_type: cat.buckets[0].instance_type.clone(),
            scale,
        });
        current = cat.without_smallest();
    }

    let mut chosen = 0;
    while chosen + 1 < scale_table.len() {
        let here = scale_table[chosen].scale.expect("committed steps are packable");
        match scale_table[chosen + 1].scale {
            Some(next) if next <= here => chosen += 1,
            _ => break,
        }
    }
    Ok(BaseInstanceSelection {
        instance_type: scale_table[chosen].smallest_type.clone(),
        dropped: scale_table[..chosen].iter().map(|s| s.smallest_type.clone()).collect(),
        scale_table,
    })
}
