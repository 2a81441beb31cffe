//! On-disk formats: line-delimited window records and the vocabulary table.
//!
//! Window record: `user<TAB>items<TAB>ctx_in<TAB>ctx_out` where `items` is a
//! space-separated index list and each context column is either `-` (no
//! context anywhere) or one token per event, each token a comma-separated
//! index list or `-`.

use super::{Event, UserSequence, Vocabulary};
use crate::error::{Error, Result};
use std::io::{BufRead, Write};
use std::path::Path;

fn ctx_column(events: &[Event], pick: impl Fn(&Event) -> &[usize]) -> String {
    if events.iter().all(|e| pick(e).is_empty()) {
        return "-".to_string();
    }
    events
        .iter()
        .map(|e| {
            let f = pick(e);
            if f.is_empty() {
                "-".to_string()
            } else {
                f.iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_ctx_column(col: &str, n_events: usize, path: &str, line: usize) -> Result<Vec<Vec<usize>>> {
    if col == "-" {
        return Ok(vec![Vec::new(); n_events]);
    }
    let tokens: Vec<&str> = col.split(' ').collect();
    if tokens.len() != n_events {
        return Err(Error::MalformedRecord {
            path: path.to_string(),
            line,
            reason: format!("{} context tokens for {} events", tokens.len(), n_events),
        });
    }
    tokens
        .iter()
        .map(|tok| {
            if *tok == "-" {
                return Ok(Vec::new());
            }
            tok.split(',')
                .map(|v| {
                    v.parse::<usize>().map_err(|_| Error::MalformedRecord {
                        path: path.to_string(),
                        line,
                        reason: format!("bad context index `{v}`"),
                    })
                })
                .collect()
        })
        .collect()
}

pub fn write_windows(path: &Path, windows: &[UserSequence]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for w in windows {
        let items = w
            .events
            .iter()
            .map(|e| e.item.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            w.user,
            items,
            ctx_column(&w.events, |e| &e.ctx_in),
            ctx_column(&w.events, |e| &e.ctx_out),
        )?;
    }
    Ok(())
}

pub fn read_windows(path: &Path) -> Result<Vec<UserSequence>> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::InvalidArgument(format!("cannot open {}: {e}", path.display()))
    })?;
    let display = path.display().to_string();
    let mut windows = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::MalformedRecord {
                path: display,
                line: lineno,
                reason: format!("expected 4 tab-separated columns, got {}", cols.len()),
            });
        }
        let items: Vec<usize> = cols[1]
            .split(' ')
            .map(|v| {
                v.parse::<usize>().map_err(|_| Error::MalformedRecord {
                    path: display.clone(),
                    line: lineno,
                    reason: format!("bad item index `{v}`"),
                })
            })
            .collect::<Result<_>>()?;
        if items.is_empty() {
            return Err(Error::MalformedRecord {
                path: display,
                line: lineno,
                reason: "window with no events".into(),
            });
        }
        let ctx_in = parse_ctx_column(cols[2], items.len(), &display, lineno)?;
        let ctx_out = parse_ctx_column(cols[3], items.len(), &display, lineno)?;
        let events = items
            .into_iter()
            .zip(ctx_in)
            .zip(ctx_out)
            .map(|((item, ci), co)| Event {
                item,
                ctx_in: ci,
                ctx_out: co,
                timestamp: None,
            })
            .collect();
        windows.push(UserSequence {
            user: cols[0].to_string(),
            events,
        });
    }
    Ok(windows)
}

/// `index<TAB>raw_id<TAB>count` per line, in index order.
pub fn write_vocabulary(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..vocab.len() {
        writeln!(out, "{i}\t{}\t{}", vocab.raw_of(i), vocab.count_of(i))?;
    }
    Ok(())
}

pub fn read_vocabulary(path: &Path) -> Result<Vocabulary> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::InvalidArgument(format!("cannot open {}: {e}", path.display()))
    })?;
    let display = path.display().to_string();
    let mut entries: Vec<(String, u64)> = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |reason: String| Error::MalformedRecord {
            path: display.clone(),
            line: idx + 1,
            reason,
        };
        if cols.len() != 3 {
            return Err(bad(format!("expected 3 columns, got {}", cols.len())));
        }
        let index: usize = cols[0].parse().map_err(|_| bad(format!("bad index `{}`", cols[0])))?;
        if index != entries.len() {
            return Err(bad(format!("index {index} out of order")));
        }
        let count: u64 = cols[2].parse().map_err(|_| bad(format!("bad count `{}`", cols[2])))?;
        entries.push((cols[1].to_string(), count));
    }
    // The index column is authoritative: keep file order as-is.
    Vocabulary::from_ordered(entries).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::InvalidArgument(format!("{display}: {msg}")),
        other => other,
    })
}
