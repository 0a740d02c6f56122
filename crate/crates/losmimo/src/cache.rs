//! On-disk cache for geometry factor tables.
//!
//! Factor tables depend only on the RX geometry, the distance prior and the
//! grid, so they are computed offline once and reused across runs. The format
//! is a human-auditable text file: a fixed-order header naming every input
//! that shaped the table, then one line per conditioning angle with the full
//! row of probabilities at 17 significant digits (lossless for f64).

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::harness::fmt_f64;
use crate::inference::{
    build_factor_table, AngularGrid, Direction, FactorMeta, FactorTableSet, GeometryFactorTable,
};

/// First line of every cache file.
pub const CACHE_MAGIC: &str = "GMPFT1";

/// Everything that must match for a cache file to satisfy a request.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorCacheHeader {
    pub grid_size: usize,
    pub kappa: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub l_tx: f64,
    /// All subarray midpoint offsets, in subarray order.
    pub offsets: Vec<f64>,
    pub n_r_samples: usize,
    pub smoothing: f64,
    pub direction: Direction,
    /// 1-based index of the left subarray of the pair.
    pub pair_index: usize,
}

impl FactorCacheHeader {
    /// Header a given configuration expects for (pair, direction).
    pub fn for_config(config: &Config, pair: usize, direction: Direction) -> Result<Self> {
        let layout = config.array_layout()?;
        let grid = config.grid()?;
        if pair + 1 >= layout.n_rf {
            return Err(Error::Config(format!(
                "pair index {pair} out of range for {} subarrays",
                layout.n_rf
            )));
        }
        Ok(Self {
            grid_size: grid.len(),
            kappa: config.kappa,
            r_min: config.r_min,
            r_max: config.r_max,
            l_tx: layout.l_tx(),
            offsets: layout.subarray_offsets(),
            n_r_samples: config.n_r_samples,
            smoothing: config.smoothing,
            direction,
            pair_index: pair + 1,
        })
    }

    /// Conditioning and destination offsets implied by pair and direction.
    pub fn endpoint_offsets(&self) -> (f64, f64) {
        let left = self.offsets[self.pair_index - 1];
        let right = self.offsets[self.pair_index];
        match self.direction {
            Direction::Forward => (left, right),
            Direction::Backward => (right, left),
        }
    }

    fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CACHE_MAGIC}");
        let _ = writeln!(s, "grid_size {}", self.grid_size);
        let _ = writeln!(s, "kappa {}", fmt_f64(self.kappa));
        let _ = writeln!(s, "r_min {}", fmt_f64(self.r_min));
        let _ = writeln!(s, "r_max {}", fmt_f64(self.r_max));
        let _ = writeln!(s, "l_tx {}", fmt_f64(self.l_tx));
        let offsets: Vec<String> = self.offsets.iter().map(|&o| fmt_f64(o)).collect();
        let _ = writeln!(s, "offsets {}", offsets.join(" "));
        let _ = writeln!(s, "n_r_samples {}", self.n_r_samples);
        let _ = writeln!(s, "smoothing {}", fmt_f64(self.smoothing));
        let _ = writeln!(s, "direction {}", self.direction.as_str());
        let _ = writeln!(s, "pair_index {}", self.pair_index);
        s
    }
}

/// Canonical cache file name for (pair, direction); `pair` is 0-based.
pub fn table_filename(pair: usize, direction: Direction) -> String {
    let tag = match direction {
        Direction::Forward => "fwd",
        Direction::Backward => "bwd",
    };
    format!("factors_pair{}_{tag}.txt", pair + 1)
}

/// Write a table with its header; the serialization is lossless for f64.
pub fn save_table(path: &Path, header: &FactorCacheHeader, table: &GeometryFactorTable) -> Result<()> {
    if table.grid_size() != header.grid_size {
        return Err(Error::Config("table size does not match header".into()));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(header.render().as_bytes())?;
    let g = header.grid_size;
    let mut line = String::with_capacity(g * 26);
    for r in 0..g {
        line.clear();
        for (i, v) in table.row(r).iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{}", fmt_f64(*v));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn format_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::CacheFormat {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn parse_kv<'a>(path: &Path, line_no: usize, line: &'a str, key: &str) -> Result<&'a str> {
    let rest = line
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| format_err(path, line_no, format!("expected `{key} <value>`")))?;
    Ok(rest.trim())
}

fn parse_f64(path: &Path, line_no: usize, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| format_err(path, line_no, format!("`{s}` is not a decimal number")))
}

/// Read header and raw row data from a cache file, validating the format.
pub fn load_table_raw(path: &Path) -> Result<(FactorCacheHeader, Vec<f64>)> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let mut line_no = 0usize;
    let mut next_line = |lines: &mut std::io::Lines<std::io::BufReader<std::fs::File>>,
                         line_no: &mut usize|
     -> Result<String> {
        *line_no += 1;
        match lines.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(Error::Io(e)),
            None => Err(format_err(path, *line_no, "unexpected end of file")),
        }
    };

    let magic = next_line(&mut lines, &mut line_no)?;
    if magic.trim() != CACHE_MAGIC {
        return Err(format_err(path, line_no, format!("bad magic `{}`", magic.trim())));
    }
    let l = next_line(&mut lines, &mut line_no)?;
    let grid_size: usize = parse_kv(path, line_no, &l, "grid_size")?
        .parse()
        .map_err(|_| format_err(path, line_no, "grid_size is not an integer"))?;
    let l = next_line(&mut lines, &mut line_no)?;
    let kappa = parse_f64(path, line_no, parse_kv(path, line_no, &l, "kappa")?)?;
    let l = next_line(&mut lines, &mut line_no)?;
    let r_min = parse_f64(path, line_no, parse_kv(path, line_no, &l, "r_min")?)?;
    let l = next_line(&mut lines, &mut line_no)?;
    let r_max = parse_f64(path, line_no, parse_kv(path, line_no, &l, "r_max")?)?;
    let l = next_line(&mut lines, &mut line_no)?;
    let l_tx = parse_f64(path, line_no, parse_kv(path, line_no, &l, "l_tx")?)?;
    let l = next_line(&mut lines, &mut line_no)?;
    let offsets: Vec<f64> = {
        let raw = parse_kv(path, line_no, &l, "offsets")?;
        let mut v = Vec::new();
        for tok in raw.split_whitespace() {
            v.push(parse_f64(path, line_no, tok)?);
        }
        if v.len() < 2 {
            return Err(format_err(path, line_no, "need at least two offsets"));
        }
        v
    };
    let l = next_line(&mut lines, &mut line_no)?;
    let n_r_samples: usize = parse_kv(path, line_no, &l, "n_r_samples")?
        .parse()
        .map_err(|_| format_err(path, line_no, "n_r_samples is not an integer"))?;
    let l = next_line(&mut lines, &mut line_no)?;
    let smoothing = parse_f64(path, line_no, parse_kv(path, line_no, &l, "smoothing")?)?;
    let l = next_line(&mut lines, &mut line_no)?;
    let direction: Direction = parse_kv(path, line_no, &l, "direction")?
        .parse()
        .map_err(|_| format_err(path, line_no, "direction must be forward or backward"))?;
    let l = next_line(&mut lines, &mut line_no)?;
    let pair_index: usize = parse_kv(path, line_no, &l, "pair_index")?
        .parse()
        .map_err(|_| format_err(path, line_no, "pair_index is not an integer"))?;
    if pair_index == 0 || pair_index >= offsets.len() {
        return Err(format_err(path, line_no, format!("pair_index {pair_index} out of range")));
    }

    let header = FactorCacheHeader {
        grid_size,
        kappa,
        r_min,
        r_max,
        l_tx,
        offsets,
        n_r_samples,
        smoothing,
        direction,
        pair_index,
    };

    let mut data = Vec::with_capacity(grid_size * grid_size);
    for row in 0..grid_size {
        let l = next_line(&mut lines, &mut line_no)
            .map_err(|_| format_err(path, line_no, format!("missing data row {}", row + 1)))?;
        let mut count = 0usize;
        for tok in l.split_ascii_whitespace() {
            data.push(parse_f64(path, line_no, tok)?);
            count += 1;
        }
        if count != grid_size {
            return Err(format_err(
                path,
                line_no,
                format!("data row {} has {count} values, expected {grid_size}", row + 1),
            ));
        }
    }
    if let Some(Ok(l)) = lines.next() {
        if !l.trim().is_empty() {
            return Err(format_err(path, line_no + 1, "trailing content after data rows"));
        }
    }
    Ok((header, data))
}

fn mismatch(path: &Path, field: &str, cached: impl ToString, requested: impl ToString) -> Error {
    Error::CacheMismatch {
        path: path.to_path_buf(),
        field: field.to_string(),
        cached: cached.to_string(),
        requested: requested.to_string(),
    }
}

/// Compare a loaded header against the expected one, field by field.
pub fn check_header(path: &Path, got: &FactorCacheHeader, want: &FactorCacheHeader) -> Result<()> {
    if got.grid_size != want.grid_size {
        return Err(mismatch(path, "grid_size", got.grid_size, want.grid_size));
    }
    if got.kappa != want.kappa {
        return Err(mismatch(path, "kappa", got.kappa, want.kappa));
    }
    if got.r_min != want.r_min {
        return Err(mismatch(path, "r_min", got.r_min, want.r_min));
    }
    if got.r_max != want.r_max {
        return Err(mismatch(path, "r_max", got.r_max, want.r_max));
    }
    if got.l_tx != want.l_tx {
        return Err(mismatch(path, "l_tx", got.l_tx, want.l_tx));
    }
    if got.offsets != want.offsets {
        return Err(mismatch(
            path,
            "offsets",
            format!("{:?}", got.offsets),
            format!("{:?}", want.offsets),
        ));
    }
    if got.n_r_samples != want.n_r_samples {
        return Err(mismatch(path, "n_r_samples", got.n_r_samples, want.n_r_samples));
    }
    if got.smoothing != want.smoothing {
        return Err(mismatch(path, "smoothing", got.smoothing, want.smoothing));
    }
    if got.direction != want.direction {
        return Err(mismatch(
            path,
            "direction",
            got.direction.as_str(),
            want.direction.as_str(),
        ));
    }
    if got.pair_index != want.pair_index {
        return Err(mismatch(path, "pair_index", got.pair_index, want.pair_index));
    }
    Ok(())
}

fn table_from_raw(header: &FactorCacheHeader, data: Vec<f64>) -> Result<GeometryFactorTable> {
    let (s_cond, s_dest) = header.endpoint_offsets();
    GeometryFactorTable::from_rows(
        header.grid_size,
        data,
        header.pair_index - 1,
        header.direction,
        FactorMeta {
            kappa: header.kappa,
            r_min: header.r_min,
            r_max: header.r_max,
            l_tx: header.l_tx,
            s_cond,
            s_dest,
            n_r_samples: header.n_r_samples,
            smoothing: header.smoothing,
        },
    )
}

/// Build one factor table straight from a configuration.
pub fn build_table_for(config: &Config, pair: usize, direction: Direction) -> Result<GeometryFactorTable> {
    let header = FactorCacheHeader::for_config(config, pair, direction)?;
    let grid = config.grid()?;
    build_from_header(&grid, &header)
}

fn build_from_header(grid: &AngularGrid, header: &FactorCacheHeader) -> Result<GeometryFactorTable> {
    let (s_cond, s_dest) = header.endpoint_offsets();
    build_factor_table(
        grid,
        s_cond,
        s_dest,
        header.r_min,
        header.r_max,
        header.l_tx,
        header.n_r_samples,
        header.smoothing,
        header.pair_index - 1,
        header.direction,
    )
}

/// What `ensure_factor_tables` did for one file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    /// Freshly computed and written.
    Built,
    /// Existing file matched the configuration; nothing recomputed.
    CacheHit,
}

/// Precompute (or verify) every factor cache file for a configuration.
///
/// Existing files with matching headers are left untouched; a header mismatch
/// is refused unless `force` is set, in which case the file is rebuilt.
pub fn ensure_factor_tables(
    config: &Config,
    dir: &Path,
    force: bool,
) -> Result<Vec<(PathBuf, CacheStatus)>> {
    std::fs::create_dir_all(dir)?;
    let layout = config.array_layout()?;
    let grid = config.grid()?;
    let mut out = Vec::new();
    for pair in 0..layout.n_rf - 1 {
        for direction in [Direction::Forward, Direction::Backward] {
            let path = dir.join(table_filename(pair, direction));
            let want = FactorCacheHeader::for_config(config, pair, direction)?;
            if path.exists() {
                let (got, _) = load_table_raw(&path)?;
                match check_header(&path, &got, &want) {
                    Ok(()) => {
                        out.push((path, CacheStatus::CacheHit));
                        continue;
                    }
                    Err(e) if !force => return Err(e),
                    Err(_) => {}
                }
            }
            let table = build_from_header(&grid, &want)?;
            save_table(&path, &want, &table)?;
            out.push((path, CacheStatus::Built));
        }
    }
    Ok(out)
}

/// Load the full table set from a cache directory, or build any table whose
/// file is absent. Only `ensure_factor_tables` writes files.
pub fn load_or_build_tables(config: &Config, dir: &Path) -> Result<FactorTableSet> {
    let layout = config.array_layout()?;
    let grid = config.grid()?;
    let mut forward = Vec::new();
    let mut backward = Vec::new();
    for pair in 0..layout.n_rf - 1 {
        for direction in [Direction::Forward, Direction::Backward] {
            let want = FactorCacheHeader::for_config(config, pair, direction)?;
            let path = dir.join(table_filename(pair, direction));
            let table = if path.exists() {
                let (got, data) = load_table_raw(&path)?;
                check_header(&path, &got, &want)?;
                table_from_raw(&got, data)?
            } else {
                build_from_header(&grid, &want)?
            };
            match direction {
                Direction::Forward => forward.push(table),
                Direction::Backward => backward.push(table),
            }
        }
    }
    Ok(FactorTableSet { forward, backward })
}
