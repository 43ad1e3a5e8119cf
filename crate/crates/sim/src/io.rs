//! Output files: metrics CSV, per-frame traces, DP tables, ADP weights,
//! rate CDFs and channel grids.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use fjt_core::adp::FEATURE_NAMES;
use fjt_core::channel::{ChannelGrid, ChannelMatrix};
use fjt_core::stats::rate_cdf;
use fjt_core::Complex64;

use crate::experiment::{AdpWeights, HarnessError, MetricsRecord, PolicyTable, Result, Trace};

pub const CSV_HEADER: [&str; 8] = [
    "algorithm",
    "E1_W",
    "E2_W",
    "avg_sum_rate_bps_hz",
    "avg_alpha",
    "seed",
    "n_frames",
    "wall_time_s",
];

/// Formats `x` with 6 significant digits in positional notation.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".to_string() } else { x.to_string() };
    }
    // let the exponent formatter do the rounding, then pick the decimals
    let e = format!("{x:.5e}");
    let (mant, exp) = e.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let rounded: f64 = format!("{mant}e{exp}").parse().expect("round trip");
    let decimals = (5 - exp).max(0) as usize;
    format!("{rounded:.decimals$}")
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv { path: path.display().to_string(), source }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

pub fn write_csv_to<W: Write>(records: &[MetricsRecord], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(CSV_HEADER)?;
    for r in records {
        wr.write_record([
            r.algorithm.clone(),
            fmt_sig(r.e1),
            fmt_sig(r.e2),
            fmt_sig(r.avg_sum_rate),
            fmt_sig(r.avg_alpha),
            r.seed.to_string(),
            r.n_frames.to_string(),
            fmt_sig(r.wall_time),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    write_csv_to(records, create(path)?).map_err(csv_err(path))
}

/// Parses a metrics CSV; per-user rate samples are not stored and come back empty.
pub fn read_csv_from<R: Read>(r: R) -> std::result::Result<Vec<MetricsRecord>, String> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()));
    }
    let mut out = Vec::new();
    for (i, row) in rd.records().enumerate() {
        let row = row.map_err(|e| e.to_string())?;
        let line = i + 2;
        let num = |j: usize| -> std::result::Result<f64, String> {
            row[j].parse().map_err(|_| format!("line {line}: bad number `{}` in {}", &row[j], CSV_HEADER[j]))
        };
        let int = |j: usize| -> std::result::Result<u64, String> {
            row[j].parse().map_err(|_| format!("line {line}: bad integer `{}` in {}", &row[j], CSV_HEADER[j]))
        };
        out.push(MetricsRecord {
            algorithm: row[0].to_string(),
            e1: num(1)?,
            e2: num(2)?,
            avg_sum_rate: num(3)?,
            avg_alpha: num(4)?,
            seed: int(5)?,
            n_frames: int(6)? as usize,
            wall_time: num(7)?,
            user_rate_samples: Vec::new(),
        });
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let f = File::open(path).map_err(io_err(path))?;
    read_csv_from(f).map_err(|message| HarnessError::Format { path: path.display().to_string(), message })
}

/// Per-frame trace: one row per frame with the active BS, alpha, powers and
/// frame-start batteries.
pub fn write_traces(traces: &[Trace], path: &Path) -> Result<()> {
    let mut wr = csv::Writer::from_writer(create(path)?);
    let err = csv_err(path);
    wr.write_record(["algorithm", "seed", "E2_W", "frame", "k", "alpha", "p_tilde", "p1", "p2", "B1", "B2"])
        .map_err(&err)?;
    for t in traces {
        for r in &t.rows {
            wr.write_record([
                t.algorithm.tag().to_string(),
                t.point.seed.to_string(),
                fmt_sig(t.point.e2),
                r.frame.to_string(),
                r.bs.number().to_string(),
                fmt_sig(r.alpha),
                fmt_sig(r.p_tilde),
                fmt_sig(r.p[0]),
                fmt_sig(r.p[1]),
                fmt_sig(r.battery[0]),
                fmt_sig(r.battery[1]),
            ])
            .map_err(&err)?;
        }
    }
    wr.flush().map_err(io_err(path))
}

/// DP tables, one block per point: a comment line with the point and the
/// average reward, then `b1 b2 j h A1 A2` per state (battery level indices,
/// channel index, relative utility, chosen budgets).
pub fn write_tables(tables: &[PolicyTable], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let mut body = String::new();
    for t in tables {
        body.push_str(&format!(
            "# algorithm={} seed={} E1_W={} E2_W={} lambda={}\n# b1 b2 j h A1 A2\n",
            t.algorithm, t.point.seed, t.point.e1, t.point.e2, t.lambda
        ));
        for r in &t.rows {
            body.push_str(&format!(
                "{} {} {} {} {} {}\n",
                r.levels[0], r.levels[1], r.channel, r.h, r.budget[0], r.budget[1]
            ));
        }
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

/// ADP weights in the original feature basis, one block per point.
pub fn write_weights(weights: &[AdpWeights], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let mut body = String::new();
    for a in weights {
        body.push_str(&format!(
            "# seed={} E1_W={} E2_W={} lambda_best={}\n# {}\n",
            a.point.seed,
            a.point.e1,
            a.point.e2,
            a.lambda_best,
            FEATURE_NAMES[..a.weights.len().min(FEATURE_NAMES.len())].join(" ")
        ));
        let line: Vec<String> = a.weights.iter().map(|x| x.to_string()).collect();
        body.push_str(&line.join(" "));
        body.push('\n');
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Empirical CDF of the per-user rates of each (algorithm, E2), pooled over seeds.
pub fn write_cdf(records: &[MetricsRecord], n_bins: usize, path: &Path) -> Result<()> {
    let mut groups: Vec<(&str, f64, Vec<f64>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|g| g.0 == r.algorithm && g.1 == r.e2) {
            Some(g) => g.2.extend_from_slice(&r.user_rate_samples),
            None => groups.push((&r.algorithm, r.e2, r.user_rate_samples.clone())),
        }
    }
    let mut wr = csv::Writer::from_writer(create(path)?);
    let err = csv_err(path);
    wr.write_record(["algorithm", "E2_W", "rate_bps_hz", "cdf"]).map_err(&err)?;
    for (alg, e2, samples) in &groups {
        if samples.is_empty() {
            continue;
        }
        let cdf = rate_cdf(samples, n_bins)
            .map_err(|e| HarnessError::Format { path: path.display().to_string(), message: e.to_string() })?;
        for (x, p) in cdf {
            wr.write_record([alg.to_string(), fmt_sig(*e2), fmt_sig(x), fmt_sig(p)]).map_err(&err)?;
        }
    }
    wr.flush().map_err(io_err(path))
}

/// Channel grid as text: one line per state with the four entries
/// `h11 h12 h21 h22` (user row, BS column) as `re+imi` tokens, then a
/// trailing line of state probabilities. `#` starts a comment line.
pub fn write_grid_to<W: Write>(grid: &ChannelGrid, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# {} states: h11 h12 h21 h22, then probabilities", grid.len())?;
    for h in grid.states() {
        let e = h.entries;
        writeln!(w, "{} {} {} {}", e[0][0], e[0][1], e[1][0], e[1][1])?;
    }
    let p: Vec<String> = grid.probs().iter().map(|x| x.to_string()).collect();
    writeln!(w, "{}", p.join(" "))?;
    w.flush()
}

pub fn write_grid(grid: &ChannelGrid, path: &Path) -> Result<()> {
    write_grid_to(grid, create(path)?).map_err(io_err(path))
}

pub fn read_grid_from<R: Read>(r: R) -> std::result::Result<ChannelGrid, String> {
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            lines.push((i + 1, t.to_string()));
        }
    }
    let Some((prob_line, probs)) = lines.pop() else {
        return Err("empty grid file".to_string());
    };
    let probs = probs
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| format!("line {prob_line}: bad probability `{t}`")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut states = Vec::new();
    for (n, line) in &lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(format!("line {n}: expected 4 complex entries, found {}", toks.len()));
        }
        let mut z = [Complex64::new(0.0, 0.0); 4];
        for (zi, t) in z.iter_mut().zip(&toks) {
            *zi = t.parse().map_err(|_| format!("line {n}: bad complex entry `{t}`"))?;
        }
        states.push(ChannelMatrix::new([[z[0], z[1]], [z[2], z[3]]]));
    }
    ChannelGrid::new(states, probs).map_err(|e| e.to_string())
}

pub fn read_grid(path: &Path) -> Result<ChannelGrid> {
    let f = File::open(path).map_err(io_err(path))?;
    read_grid_from(f).map_err(|message| HarnessError::Format { path: path.display().to_string(), message })
}

/// `dir/name.ext` -> `dir/name_seed<seed>.ext`.
pub fn per_seed_path(path: &Path, seed: u64) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_seed{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}_seed{seed}"),
    };
    path.with_file_name(name)
}
