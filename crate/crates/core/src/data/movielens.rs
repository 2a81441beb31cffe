//! MovieLens-style ratings ingestion: every rating becomes an implicit
//! positive event.

use super::{RawEvent, RawSequence};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

const HEADER: &str = "userId,movieId,rating,timestamp";

/// Reads a `userId,movieId,rating,timestamp` CSV into one sequence per user,
/// events sorted by timestamp. Users are returned in ascending id order.
pub fn load_movielens(path: &Path) -> Result<Vec<RawSequence>> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::InvalidArgument(format!("cannot open {}: {e}", path.display()))
    })?;
    let reader = std::io::BufReader::new(file);
    let display = path.display().to_string();

    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(header))) if header.trim() == HEADER => {}
        Some((_, Ok(header))) => {
            return Err(Error::MalformedRecord {
                path: display,
                line: 1,
                reason: format!("expected header `{HEADER}`, got `{}`", header.trim()),
            })
        }
        Some((_, Err(e))) => return Err(e.into()),
        None => {
            return Err(Error::MalformedRecord {
                path: display,
                line: 1,
                reason: format!("empty file, expected header `{HEADER}`"),
            })
        }
    }

    let mut per_user: BTreeMap<u64, Vec<RawEvent>> = BTreeMap::new();
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::MalformedRecord {
                path: display,
                line: lineno,
                reason: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let user: u64 = fields[0].trim().parse().map_err(|_| Error::MalformedRecord {
            path: display.clone(),
            line: lineno,
            reason: format!("bad userId `{}`", fields[0]),
        })?;
        let item = fields[1].trim();
        if item.is_empty() {
            return Err(Error::MalformedRecord {
                path: display,
                line: lineno,
                reason: "empty movieId".into(),
            });
        }
        // The rating value is discarded (implicit feedback), but it must
        // still parse so that corrupted rows are caught.
        let _rating: f64 = fields[2].trim().parse().map_err(|_| Error::MalformedRecord {
            path: display.clone(),
            line: lineno,
            reason: format!("bad rating `{}`", fields[2]),
        })?;
        let timestamp: i64 = fields[3].trim().parse().map_err(|_| Error::MalformedRecord {
            path: display.clone(),
            line: lineno,
            reason: format!("bad timestamp `{}`", fields[3]),
        })?;
        per_user.entry(user).or_default().push(RawEvent {
            item: item.to_string(),
            timestamp: Some(timestamp),
        });
    }

    Ok(per_user
        .into_iter()
        .map(|(user, mut events)| {
            events.sort_by_key(|e| e.timestamp);
            RawSequence {
                user: user.to_string(),
                events,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn events_sorted_by_timestamp() {
        let f = write_csv("userId,movieId,rating,timestamp\n7,10,3.0,200\n7,11,4.0,100\n");
        let seqs = load_movielens(f.path()).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].user, "7");
        assert_eq!(seqs[0].events[0].timestamp, Some(100));
        assert_eq!(seqs[0].events[1].timestamp, Some(200));
        assert_eq!(seqs[0].events[0].item, "11");
    }

    #[test]
    fn all_ratings_become_positives() {
        let f = write_csv("userId,movieId,rating,timestamp\n1,5,2.5,10\n1,6,5.0,20\n");
        let seqs = load_movielens(f.path()).unwrap();
        assert_eq!(seqs[0].events.len(), 2);
    }

    #[test]
    fn header_only_gives_empty_list() {
        let f = write_csv("userId,movieId,rating,timestamp\n");
        assert!(load_movielens(f.path()).unwrap().is_empty());
    }

    #[test]
    fn malformed_row_names_line() {
        let f = write_csv("userId,movieId,rating,timestamp\n1,5,2.5,10\n1,notanid\n");
        let err = load_movielens(f.path()).unwrap_err().to_string();
        assert!(err.contains(":3:"), "{err}");
    }

    #[test]
    fn missing_header_rejected() {
        let f = write_csv("1,5,2.5,10\n");
        assert!(load_movielens(f.path()).is_err());
    }
}
