//! Binary artifacts and CSV tables.
//!
//! Every binary artifact starts with a 16-byte header
//!
//! | bytes  | field                                   |
//! |--------|-----------------------------------------|
//! | 0..4   | magic `KHJB`                            |
//! | 4..6   | format version, `u16` little-endian     |
//! | 6..8   | artifact kind, `u16` little-endian      |
//! | 8..16  | FNV-1a 64 hash of the payload           |
//!
//! followed by a payload of little-endian 64-bit words. Matrices are stored
//! row-major. Files are written to a temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use faer::Mat;
use serde::Serialize;

use crate::bench::BenchReport;
use crate::error::{Error, Result};
use crate::estimator::{BlockOrientation, EstimatedOperators};
use crate::hjb::{ControlPenalty, ValueSolution};
use crate::kernel::{DiffusedMode, KernelConfig};
use crate::linalg::{from_row_major, to_row_major};
use crate::systems::{Dataset, Successors};

pub const MAGIC: [u8; 4] = *b"KHJB";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Dataset = 1,
    Model = 2,
    ValueSolution = 3,
    Report = 4,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Dataset => "dataset",
            Kind::Model => "model",
            Kind::ValueSolution => "value_solution",
            Kind::Report => "report",
        }
    }

    fn from_u16(v: u16) -> Result<Self> {
        match v {
            1 => Ok(Kind::Dataset),
            2 => Ok(Kind::Model),
            3 => Ok(Kind::ValueSolution),
            4 => Ok(Kind::Report),
            other => Err(Error::Header(format!("unknown artifact kind {other}"))),
        }
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn len(&mut self, v: usize) {
        self.f64(v as f64);
    }

    pub fn slice(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }

    pub fn mat(&mut self, m: &Mat<f64>) {
        self.slice(&to_row_major(m.as_ref()));
    }

    /// Length-prefixed UTF-8, zero-padded to a multiple of 8 bytes.
    pub fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
        let pad = (8 - s.len() % 8) % 8;
        self.buf.extend(std::iter::repeat_n(0u8, pad));
    }
}

pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Parse(format!(
                "payload truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn len(&mut self) -> Result<usize> {
        let v = self.f64()?;
        if !(v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(40)) {
            return Err(Error::Parse(format!("invalid dimension {v}")));
        }
        Ok(v as usize)
    }

    pub fn vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Parse("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn mat(&mut self, rows: usize, cols: usize) -> Result<Mat<f64>> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Parse("size overflow".into()))?;
        Ok(from_row_major(rows, cols, &self.vec(n)?))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        let bytes = self.take(n)?.to_vec();
        self.take((8 - n % 8) % 8)?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Parse(format!(
                "{} trailing payload bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Types with a binary artifact representation.
pub trait Persist: Sized {
    const KIND: Kind;
    fn encode(&self, e: &mut Encoder);
    /// Decodes and validates the inner invariants.
    fn decode(d: &mut Decoder<'_>) -> Result<Self>;
}

fn encode_dataset_tail(d: &Dataset, e: &mut Encoder) {
    e.u64(d.seed);
    e.f64(match d.successors {
        Successors::Deterministic => 0.0,
        Successors::Sampled => 1.0,
    });
    e.str(&d.system);
}

fn decode_successors(code: f64) -> Result<Successors> {
    match code {
        c if c == 0.0 => Ok(Successors::Deterministic),
        c if c == 1.0 => Ok(Successors::Sampled),
        other => Err(Error::Parse(format!("unknown successor mode {other}"))),
    }
}

impl Persist for Dataset {
    const KIND: Kind = Kind::Dataset;

    fn encode(&self, e: &mut Encoder) {
        e.len(self.len());
        e.len(self.n_x());
        e.len(self.n_u());
        e.f64(self.dt);
        e.f64(self.epsilon);
        e.mat(&self.x);
        e.mat(&self.u);
        e.mat(&self.y);
        e.slice(&self.cost);
        encode_dataset_tail(self, e);
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self> {
        let (n, n_x, n_u) = (d.len()?, d.len()?, d.len()?);
        let dt = d.f64()?;
        let epsilon = d.f64()?;
        let x = d.mat(n_x, n)?;
        let u = d.mat(n_u, n)?;
        let y = d.mat(n_x, n)?;
        let cost = d.vec(n)?;
        let seed = d.u64()?;
        let successors = decode_successors(d.f64()?)?;
        let system = d.str()?;
        let data = Dataset {
            system,
            x,
            u,
            y,
            cost,
            dt,
            epsilon,
            seed,
            successors,
        };
        data.validate()?;
        Ok(data)
    }
}

impl Persist for EstimatedOperators {
    const KIND: Kind = Kind::Model;

    fn encode(&self, e: &mut Encoder) {
        let data = &self.dataset;
        e.len(self.len());
        e.len(data.n_x());
        e.len(self.n_u());
        let k = &self.kernel;
        e.slice(&[k.sigma, k.epsilon, k.dt, k.gamma, k.diffused_mode.code()]);
        e.mat(&data.x);
        e.mat(&data.u);
        e.slice(&data.cost);
        e.mat(&self.a_hat);
        for b in &self.b_hat {
            e.mat(b);
        }
        e.f64(self.orientation.code());
        e.f64(if self.markov_enforced { 1.0 } else { 0.0 });
        e.mat(&data.y);
        e.f64(data.dt);
        e.f64(data.epsilon);
        encode_dataset_tail(data, e);
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self> {
        let (n, n_x, n_u) = (d.len()?, d.len()?, d.len()?);
        let kernel = KernelConfig {
            sigma: d.f64()?,
            epsilon: d.f64()?,
            dt: d.f64()?,
            gamma: d.f64()?,
            diffused_mode: DiffusedMode::from_code(d.f64()?)?,
        };
        let x = d.mat(n_x, n)?;
        let u = d.mat(n_u, n)?;
        let cost = d.vec(n)?;
        let a_hat = d.mat(n, n)?;
        let b_hat = (0..n_u).map(|_| d.mat(n, n)).collect::<Result<Vec<_>>>()?;
        let orientation = BlockOrientation::from_code(d.f64()?)?;
        let markov = match d.f64()? {
            c if c == 0.0 => false,
            c if c == 1.0 => true,
            other => return Err(Error::Parse(format!("invalid markov flag {other}"))),
        };
        let y = d.mat(n_x, n)?;
        let dt = d.f64()?;
        let epsilon = d.f64()?;
        let seed = d.u64()?;
        let successors = decode_successors(d.f64()?)?;
        let system = d.str()?;
        let dataset = Dataset {
            system,
            x,
            u,
            y,
            cost,
            dt,
            epsilon,
            seed,
            successors,
        };
        let ops = EstimatedOperators::from_parts(a_hat, b_hat, dataset, kernel, orientation, markov)?;
        if markov {
            for j in 0..n {
                let a: f64 = (0..n).map(|i| ops.a_hat[(i, j)]).sum();
                if (a - 1.0).abs() > 1e-9 {
                    return Err(Error::Invariant(format!(
                        "Markov-enforced model: column {j} of A sums to {a}"
                    )));
                }
            }
        }
        Ok(ops)
    }
}

impl Persist for ValueSolution {
    const KIND: Kind = Kind::ValueSolution;

    fn encode(&self, e: &mut Encoder) {
        e.len(self.horizon);
        e.len(self.n_samples());
        e.len(self.n_u);
        e.f64(self.dt);
        e.f64(self.converged_at.map_or(-1.0, |c| c as f64));
        e.slice(&self.penalty.weights);
        match &self.penalty.bounds {
            None => e.f64(0.0),
            Some(b) => {
                e.f64(1.0);
                for (lo, hi) in b {
                    e.f64(*lo);
                    e.f64(*hi);
                }
            }
        }
        e.mat(&self.values);
        e.mat(&self.policy);
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self> {
        let (h, n, n_u) = (d.len()?, d.len()?, d.len()?);
        let dt = d.f64()?;
        let conv = d.f64()?;
        let converged_at = if conv < 0.0 { None } else { Some(conv as usize) };
        let weights = d.vec(n_u)?;
        let bounds = match d.f64()? {
            c if c == 0.0 => None,
            c if c == 1.0 => Some(
                (0..n_u)
                    .map(|_| Ok((d.f64()?, d.f64()?)))
                    .collect::<Result<Vec<_>>>()?,
            ),
            other => return Err(Error::Parse(format!("invalid box flag {other}"))),
        };
        let values = d.mat(h + 1, n)?;
        let policy = d.mat(h, n_u * n)?;
        let penalty = ControlPenalty { weights, bounds };
        penalty
            .validate()
            .map_err(|e| Error::Invariant(format!("penalty: {e}")))?;
        let sol = ValueSolution {
            values,
            policy,
            horizon: h,
            dt,
            n_u,
            converged_at,
            penalty,
        };
        sol.validate()?;
        Ok(sol)
    }
}

impl Persist for BenchReport {
    const KIND: Kind = Kind::Report;

    fn encode(&self, e: &mut Encoder) {
        e.str(&self.system);
        e.len(self.reps);
        e.f64(self.rmse_mean);
        e.f64(self.rmse_std);
        e.slice(&self.per_rep_rmse);
        for f in &self.flagged {
            e.u64(u64::from(*f));
        }
        for c in &self.converged_at {
            e.u64(c.map_or(u64::MAX, |v| v as u64));
        }
        e.f64(self.sigma);
        e.len(self.n);
        e.len(self.horizon);
        e.f64(self.dt);
        e.f64(self.wall_time_s);
        e.u64(self.seed);
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self> {
        let system = d.str()?;
        let reps = d.len()?;
        let rmse_mean = d.f64()?;
        let rmse_std = d.f64()?;
        let per_rep_rmse = d.vec(reps)?;
        let flagged = (0..reps).map(|_| Ok(d.u64()? != 0)).collect::<Result<Vec<_>>>()?;
        let converged_at = (0..reps)
            .map(|_| d.u64().map(|v| (v != u64::MAX).then_some(v as usize)))
            .collect::<Result<Vec<_>>>()?;
        let report = BenchReport {
            system,
            reps,
            rmse_mean,
            rmse_std,
            per_rep_rmse,
            flagged,
            converged_at,
            sigma: d.f64()?,
            n: d.len()?,
            horizon: d.len()?,
            dt: d.f64()?,
            wall_time_s: d.f64()?,
            seed: d.u64()?,
        };
        if !(report.rmse_std >= 0.0) && !report.rmse_std.is_nan() {
            return Err(Error::Invariant("rmse_std is negative".into()));
        }
        Ok(report)
    }
}

/// Serializes `artifact` with its header.
pub fn to_bytes<T: Persist>(artifact: &T) -> Vec<u8> {
    let mut e = Encoder::default();
    artifact.encode(&mut e);
    let mut out = Vec::with_capacity(HEADER_LEN + e.buf.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(T::KIND as u16).to_le_bytes());
    out.extend_from_slice(&fnv1a64(&e.buf).to_le_bytes());
    out.extend_from_slice(&e.buf);
    out
}

/// Checks the header and returns the kind and the payload.
pub fn parse_header(bytes: &[u8]) -> Result<(Kind, &[u8])> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Header(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Header(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let kind = Kind::from_u16(u16::from_le_bytes([bytes[6], bytes[7]]))?;
    let stored = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let payload = &bytes[HEADER_LEN..];
    let computed = fnv1a64(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok((kind, payload))
}

pub fn from_bytes<T: Persist>(bytes: &[u8]) -> Result<T> {
    let (kind, payload) = parse_header(bytes)?;
    if kind != T::KIND {
        return Err(Error::Kind {
            expected: T::KIND.name(),
            found: kind.name(),
        });
    }
    let mut d = Decoder { buf: payload, pos: 0 };
    let value = T::decode(&mut d)?;
    d.finish()?;
    Ok(value)
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn save<T: Persist>(artifact: &T, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &to_bytes(artifact))
}

pub fn load<T: Persist>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Kind of the artifact stored at `path`, after header validation.
pub fn peek_kind(path: impl AsRef<Path>) -> Result<Kind> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_header(&bytes)?.0)
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}

fn write_table(
    path: &Path,
    prefix: Option<String>,
    header: &[String],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(prefix.map(String::into_bytes).unwrap_or_default());
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

/// `# dt=… epsilon=… seed=… system=… successors=…`, then
/// `x1..,u1..,y1..,cost` with 17 significant digits.
pub fn write_dataset_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (n_x, n_u) = (data.n_x(), data.n_u());
    let meta = format!(
        "# dt={} epsilon={} seed={} system={} successors={}\n",
        fmt17(data.dt),
        fmt17(data.epsilon),
        data.seed,
        data.system,
        data.successors.as_str()
    );
    let mut header: Vec<String> = (1..=n_x).map(|i| format!("x{i}")).collect();
    header.extend((1..=n_u).map(|i| format!("u{i}")));
    header.extend((1..=n_x).map(|i| format!("y{i}")));
    header.push("cost".into());
    let rows = (0..data.len()).map(|j| {
        let mut r: Vec<String> = (0..n_x).map(|i| fmt17(data.x[(i, j)])).collect();
        r.extend((0..n_u).map(|i| fmt17(data.u[(i, j)])));
        r.extend((0..n_x).map(|i| fmt17(data.y[(i, j)])));
        r.push(fmt17(data.cost[j]));
        r
    });
    write_table(path, Some(meta), &header, rows)
}

fn parse_meta(line: &str) -> Result<(f64, f64, u64, String, Successors)> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse("dataset CSV must start with a `# dt=…` metadata line".into()))?;
    let (mut dt, mut eps, mut seed, mut system) = (None, None, None, None);
    let mut successors = Successors::Deterministic;
    for token in body.split_whitespace() {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("malformed metadata token `{token}`")))?;
        let num = |v: &str| v.parse::<f64>().map_err(|e| Error::Parse(format!("{k}: {e}")));
        match k {
            "dt" => dt = Some(num(v)?),
            "epsilon" => eps = Some(num(v)?),
            "seed" => seed = Some(v.parse::<u64>().map_err(|e| Error::Parse(format!("seed: {e}")))?),
            "system" => system = Some(v.to_string()),
            "successors" => successors = v.parse()?,
            _ => log::warn!("ignoring unknown dataset metadata `{k}`"),
        }
    }
    let missing = |name: &str| Error::Parse(format!("metadata line lacks `{name}`"));
    Ok((
        dt.ok_or_else(|| missing("dt"))?,
        eps.ok_or_else(|| missing("epsilon"))?,
        seed.ok_or_else(|| missing("seed"))?,
        system.ok_or_else(|| missing("system"))?,
        successors,
    ))
}

pub fn read_dataset_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (meta, body) = text
        .split_once('\n')
        .ok_or_else(|| Error::Parse(format!("{}: empty dataset file", path.display())))?;
    let (dt, epsilon, seed, system, successors) = parse_meta(meta.trim_end())?;
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let count = |p: char| header.iter().filter(|h| h.starts_with(p) && h[1..].parse::<usize>().is_ok()).count();
    let (n_x, n_u) = (count('x'), count('u'));
    let width = 2 * n_x + n_u + 1;
    if n_x == 0 || n_u == 0 || count('y') != n_x || header.len() != width || &header[width - 1] != "cost" {
        return Err(Error::Parse(format!(
            "unexpected dataset header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != width {
            return Err(Error::Parse(format!("row {}: expected {width} fields", line + 1)));
        }
        cols.push(
            rec.iter()
                .map(|f| f.trim().parse::<f64>().map_err(|e| Error::Parse(format!("row {}: {e}", line + 1))))
                .collect::<Result<_>>()?,
        );
    }
    let n = cols.len();
    let data = Dataset {
        system,
        x: Mat::from_fn(n_x, n, |i, j| cols[j][i]),
        u: Mat::from_fn(n_u, n, |i, j| cols[j][n_x + i]),
        y: Mat::from_fn(n_x, n, |i, j| cols[j][n_x + n_u + i]),
        cost: cols.iter().map(|c| c[width - 1]).collect(),
        dt,
        epsilon,
        seed,
        successors,
    };
    data.validate()?;
    Ok(data)
}

/// `k,t,i,x1..xn,v,u1..um` for `k = 0, stride, 2·stride, … < H`; stride 0
/// writes step 0 only.
pub fn write_value_csv(
    sol: &ValueSolution,
    data: &Dataset,
    stride: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let last = if stride == 0 { sol.horizon.min(1) } else { sol.horizon };
    let stride = stride.max(1);
    let n_x = data.n_x();
    let mut header: Vec<String> = ["k", "t", "i"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=n_x).map(|i| format!("x{i}")));
    header.push("v".into());
    header.extend((1..=sol.n_u).map(|m| format!("u{m}")));
    let n = sol.n_samples();
    let rows = (0..last).step_by(stride).flat_map(|k| {
        (0..n).map(move |i| {
            let mut r = vec![k.to_string(), fmt17(k as f64 * sol.dt), i.to_string()];
            r.extend((0..n_x).map(|d| fmt17(data.x[(d, i)])));
            r.push(fmt17(sol.values[(k, i)]));
            r.extend(sol.policy_at(k, i).into_iter().map(fmt17));
            r
        })
    });
    write_table(path.as_ref(), None, &header, rows)
}

/// `x1..xn,u1..um` rows for an evaluated query grid.
pub fn write_policy_grid_csv(points: &[Vec<f64>], controls: &[Vec<f64>], path: impl AsRef<Path>) -> Result<()> {
    let n_x = points.first().map_or(0, Vec::len);
    let n_u = controls.first().map_or(0, Vec::len);
    let mut header: Vec<String> = (1..=n_x).map(|i| format!("x{i}")).collect();
    header.extend((1..=n_u).map(|m| format!("u{m}")));
    let rows = points.iter().zip(controls).map(|(p, c)| p.iter().chain(c).map(|v| fmt17(*v)).collect());
    write_table(path.as_ref(), None, &header, rows)
}

/// Reads a headed numeric CSV (such as a query grid) into rows.
pub fn read_numeric_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        rows.push(
            rec.iter()
                .map(|f| f.trim().parse::<f64>().map_err(|e| Error::Parse(format!("row {}: {e}", line + 1))))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok((header, rows))
}

/// `k,t,observable_value`.
pub fn write_forecast_csv(values: &[f64], dt: f64, path: impl AsRef<Path>) -> Result<()> {
    let header = ["k", "t", "observable_value"].map(String::from);
    let rows = values
        .iter()
        .enumerate()
        .map(|(k, v)| vec![k.to_string(), fmt17(k as f64 * dt), fmt17(*v)]);
    write_table(path.as_ref(), None, &header, rows)
}

/// `k,i,z_i`.
pub fn write_weights_csv(traj: &[crate::fpk::MeasureWeights], path: impl AsRef<Path>) -> Result<()> {
    let header = ["k", "i", "z_i"].map(String::from);
    let rows = traj.iter().flat_map(|w| {
        w.z.iter()
            .enumerate()
            .map(move |(i, z)| vec![w.step.to_string(), i.to_string(), fmt17(*z)])
    });
    write_table(path.as_ref(), None, &header, rows)
}

/// `system,rep,sigma,N,H,dt,rmse,flagged`.
pub fn write_report_csv(reports: &[BenchReport], path: impl AsRef<Path>) -> Result<()> {
    let header = ["system", "rep", "sigma", "N", "H", "dt", "rmse", "flagged"].map(String::from);
    let rows = reports.iter().flat_map(|r| {
        (0..r.reps).map(move |k| {
            vec![
                r.system.clone(),
                k.to_string(),
                fmt17(r.sigma),
                r.n.to_string(),
                r.horizon.to_string(),
                fmt17(r.dt),
                fmt17(r.per_rep_rmse[k]),
                r.flagged[k].to_string(),
            ]
        })
    });
    write_table(path.as_ref(), None, &header, rows)
}

pub fn write_json(value: &impl Serialize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(path, format!("{text}\n").as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn string_round_trip() {
        for s in ["", "s1", "exactly8", "nine char"] {
            let mut e = Encoder::default();
            e.str(s);
            e.f64(1.5);
            assert_eq!(e.buf.len() % 8, 0);
            let mut d = Decoder { buf: &e.buf, pos: 0 };
            assert_eq!(d.str().unwrap(), s);
            assert_eq!(d.f64().unwrap(), 1.5);
            d.finish().unwrap();
        }
    }

    #[test]
    fn header_errors_are_distinct() {
        assert!(matches!(parse_header(&[]), Err(Error::Header(_))));
        let mut bytes = vec![0u8; 24];
        bytes[..4].copy_from_slice(b"NOPE");
        assert!(matches!(parse_header(&bytes), Err(Error::Header(_))));
        bytes[..4].copy_from_slice(&MAGIC);
        bytes[4..6].copy_from_slice(&7u16.to_le_bytes());
        assert!(matches!(parse_header(&bytes), Err(Error::Version { found: 7, .. })));
        bytes[4..6].copy_from_slice(&VERSION.to_le_bytes());
        bytes[6..8].copy_from_slice(&1u16.to_le_bytes());
        assert!(matches!(parse_header(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn metadata_parsing() {
        let m = parse_meta("# dt=1e-2 epsilon=0.02 seed=7 system=s1").unwrap();
        assert_eq!(m, (0.01, 0.02, 7, "s1".to_string(), Successors::Deterministic));
        assert!(parse_meta("dt=1").is_err());
        assert!(parse_meta("# dt=1 epsilon=0 system=s1").is_err());
    }
}
