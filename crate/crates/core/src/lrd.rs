//! Long-range dependence: the trace of the empirical cross-covariance
//! between embeddings of the last item in each sequence and the item L steps
//! earlier, and its decay profile over lags.

use crate::data::UserSequence;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::io::{BufRead, Write};
use std::path::Path;

/// Dep values per lag with sample counts and an optional log-log decay slope.
#[derive(Debug, Clone)]
pub struct DepProfile {
    pub lags: Vec<usize>,
    pub dep: Vec<f64>,
    pub n_samples: Vec<usize>,
    /// Least-squares slope of log(dep) against log(lag) over lags with
    /// positive dep; `None` with fewer than two usable points.
    pub slope: Option<f64>,
}

/// Trace of the empirical cross-covariance at lag `lag`, averaged over all
/// sequences with more than `lag` events (1/n convention, centered per lag).
pub fn dep_l<S: Scalar>(
    sequences: &[UserSequence],
    embeddings: &Tensor<S>,
    lag: usize,
) -> Result<f64> {
    if lag == 0 {
        return Err(Error::InvalidArgument("lag must be >= 1".into()));
    }
    let d = embeddings.last_axis();
    let pairs: Vec<(&[S], &[S])> = sequences
        .iter()
        .filter(|s| s.events.len() > lag)
        .map(|s| {
            let last = s.events[s.events.len() - 1].item;
            let before = s.events[s.events.len() - 1 - lag].item;
            (embeddings.row_slice(last), embeddings.row_slice(before))
        })
        .collect();
    let n = pairs.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "lag {lag} has {n} qualifying sequences, need at least 2"
        )));
    }

    let mut mean_a = vec![0.0f64; d];
    let mut mean_b = vec![0.0f64; d];
    for (a, b) in &pairs {
        for k in 0..d {
            mean_a[k] += a[k].as_f64();
            mean_b[k] += b[k].as_f64();
        }
    }
    for k in 0..d {
        mean_a[k] /= n as f64;
        mean_b[k] /= n as f64;
    }

    let mut total = 0.0f64;
    for (a, b) in &pairs {
        let mut dot = 0.0f64;
        for k in 0..d {
            dot += (a[k].as_f64() - mean_a[k]) * (b[k].as_f64() - mean_b[k]);
        }
        total += dot;
    }
    Ok(total / n as f64)
}

pub fn dep_profile<S: Scalar>(
    sequences: &[UserSequence],
    embeddings: &Tensor<S>,
    lags: &[usize],
) -> Result<DepProfile> {
    if lags.is_empty() {
        return Err(Error::EmptyInput("profile over zero lags".into()));
    }
    if lags.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "lags must be sorted strictly ascending".into(),
        ));
    }
    let mut dep = Vec::with_capacity(lags.len());
    let mut n_samples = Vec::with_capacity(lags.len());
    for &lag in lags {
        dep.push(dep_l(sequences, embeddings, lag)?);
        n_samples.push(sequences.iter().filter(|s| s.events.len() > lag).count());
    }

    let points: Vec<(f64, f64)> = lags
        .iter()
        .zip(&dep)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&l, &v)| ((l as f64).ln(), v.ln()))
        .collect();
    let slope = if points.len() >= 2 {
        let n = points.len() as f64;
        let mx = points.iter().map(|(x, _)| x).sum::<f64>() / n;
        let my = points.iter().map(|(_, y)| y).sum::<f64>() / n;
        let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
        let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        (sxx > 0.0).then(|| sxy / sxx)
    } else {
        None
    };

    Ok(DepProfile {
        lags: lags.to_vec(),
        dep,
        n_samples,
        slope,
    })
}

/// `lag,dep,n_samples` per line.
pub fn write_profile_csv(path: &Path, profile: &DepProfile) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "lag,dep,n_samples")?;
    for ((lag, dep), n) in profile.lags.iter().zip(&profile.dep).zip(&profile.n_samples) {
        writeln!(out, "{lag},{dep},{n}")?;
    }
    Ok(())
}

/// Embedding file: `item_index v1 v2 ... vd` per line; indices must cover
/// 0..n-1 exactly once.
pub fn write_embeddings<S: Scalar>(path: &Path, embeddings: &Tensor<S>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..embeddings.rows() {
        let row = embeddings
            .row_slice(i)
            .iter()
            .map(|v| format!("{}", v.as_f64()))
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(out, "{i} {row}")?;
    }
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<Tensor<f64>> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::InvalidArgument(format!("cannot open {}: {e}", path.display()))
    })?;
    let display = path.display().to_string();
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::MalformedRecord {
            path: display.clone(),
            line: idx + 1,
            reason,
        };
        let mut fields = line.split_whitespace();
        let item: usize = fields
            .next()
            .ok_or_else(|| bad("empty line".into()))?
            .parse()
            .map_err(|_| bad("bad item index".into()))?;
        let values: Vec<f64> = fields
            .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad value `{v}`"))))
            .collect::<Result<_>>()?;
        if values.is_empty() {
            return Err(bad("embedding row with no values".into()));
        }
        rows.push((item, values));
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("embedding file has no rows".into()));
    }
    let d = rows[0].1.len();
    let n = rows.len();
    let mut data = vec![None; n];
    for (item, values) in rows {
        if values.len() != d {
            return Err(Error::InvalidArgument(format!(
                "embedding rows have inconsistent widths ({} vs {d})",
                values.len()
            )));
        }
        if item >= n || data[item].is_some() {
            return Err(Error::InvalidArgument(format!(
                "embedding indices must cover 0..{} exactly once (bad index {item})",
                n - 1
            )));
        }
        data[item] = Some(values);
    }
    let flat: Vec<f64> = data.into_iter().flat_map(|r| r.expect("checked")).collect();
    Tensor::new(vec![n, d], flat)
}
