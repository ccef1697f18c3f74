//! Op-log records (`epoch,iter,kind,rank,first_idx,len`) and the
//! serialization-grammar validator.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Read,
    Write,
}

impl OpKind {
    pub fn symbol(self) -> char {
        match self {
            OpKind::Read => 'R',
            OpKind::Write => 'W',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpRecord {
    pub epoch: usize,
    /// Position in the group's schedule.
    pub iter: usize,
    pub kind: OpKind,
    pub rank: usize,
    pub first_idx: usize,
    pub len: usize,
}

impl fmt::Display for OpRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{}",
            self.epoch,
            self.iter,
            self.kind.symbol(),
            self.rank,
            self.first_idx,
            self.len
        )
    }
}

pub fn parse_oplog(text: &str) -> Result<Vec<OpRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse { line: n + 1, msg: format!("{msg}: {line:?}") };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad("not an unsigned integer"));
        let kind = match fields[2].trim() {
            "R" => OpKind::Read,
            "W" => OpKind::Write,
            _ => return Err(bad("kind must be R or W")),
        };
        out.push(OpRecord {
            epoch: num(fields[0])?,
            iter: num(fields[1])?,
            kind,
            rank: num(fields[3])?,
            first_idx: num(fields[4])?,
            len: num(fields[5])?,
        });
    }
    Ok(out)
}

pub fn write_oplog(path: &Path, records: &[OpRecord]) -> Result<()> {
    let mut text = String::with_capacity(records.len() * 16);
    for r in records {
        text.push_str(&r.to_string());
        text.push('\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

pub fn load_oplog(path: &Path) -> Result<Vec<OpRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_oplog(&text)
}

/// First grammar violation found in a log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// 1-based record number.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Checks `((R_{r..r+i})(W_{r..r+i}))*` with `r` starting at 0 and advancing
/// by `i` modulo `i·j`. Ranks inside a bracket may appear in any order; all
/// records of a bracket must share the same `iter`.
pub fn validate_oplog(records: &[OpRecord], i: usize, j: usize) -> std::result::Result<(), Violation> {
    if i == 0 || j == 0 {
        return Err(Violation { line: 0, message: "i and j must be positive".into() });
    }
    let total = i * j;
    let mut window = 0;
    let mut expect = OpKind::Read;
    let mut pos = 0;
    let mut last_iter: Option<usize> = None;
    while pos < records.len() {
        let mut seen = vec![false; total];
        let iter = records[pos].iter;
        if expect == OpKind::Read {
            if let Some(prev) = last_iter {
                if iter <= prev {
                    return Err(Violation {
                        line: pos + 1,
                        message: format!("iteration {iter} does not advance past {prev}"),
                    });
                }
            }
        }
        for k in 0..i {
            let line = pos + k + 1;
            let Some(rec) = records.get(pos + k) else {
                return Err(Violation { line, message: "log ends inside a bracket".into() });
            };
            if rec.kind != expect {
                let message = if rec.kind == OpKind::Write {
                    format!("W{} before its R bracket completed", rec.rank)
                } else {
                    format!("R{} while W bracket for ranks {}..{} is open", rec.rank, window, window + i)
                };
                return Err(Violation { line, message });
            }
            if rec.rank < window || rec.rank >= window + i {
                return Err(Violation {
                    line,
                    message: format!(
                        "{}{} outside expected bracket ranks {}..{}",
                        rec.kind.symbol(),
                        rec.rank,
                        window,
                        window + i
                    ),
                });
            }
            if seen[rec.rank] {
                return Err(Violation { line, message: format!("rank {} repeated within bracket", rec.rank) });
            }
            seen[rec.rank] = true;
            if rec.iter != iter {
                return Err(Violation { line, message: format!("bracket mixes iterations {iter} and {}", rec.iter) });
            }
        }
        pos += i;
        if expect == OpKind::Read {
            expect = OpKind::Write;
        } else {
            expect = OpKind::Read;
            window = (window + i) % total;
        }
        last_iter = Some(iter);
    }
    if expect == OpKind::Write {
        return Err(Violation { line: records.len(), message: "log ends after a read bracket without its writes".into() });
    }
    Ok(())
}

/// Renders the bracket structure, e.g. `(R0R1)(W0W1)(R2R3)(W2W3)`, with
/// ranks sorted inside each bracket of size `i`.
pub fn bracket_pattern(records: &[OpRecord], i: usize) -> String {
    let mut out = String::new();
    for chunk in records.chunks(i.max(1)) {
        let mut ranks: Vec<usize> = chunk.iter().map(|r| r.rank).collect();
        ranks.sort_unstable();
        out.push('(');
        for r in ranks {
            out.push(chunk[0].kind.symbol());
            out.push_str(&r.to_string());
        }
        out.push(')');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(iter: usize, kind: OpKind, rank: usize) -> OpRecord {
        OpRecord { epoch: 0, iter, kind, rank, first_idx: 0, len: 1 }
    }

    fn ideal(i: usize, j: usize, positions: usize) -> Vec<OpRecord> {
        let mut out = Vec::new();
        for p in 0..positions {
            let w = (p % j) * i;
            for kind in [OpKind::Read, OpKind::Write] {
                for r in (w..w + i).rev() {
                    out.push(rec(p, kind, r));
                }
            }
        }
        out
    }

    #[test]
    fn accepts_ideal_logs() {
        for i in 1..=3 {
            for j in 1..=4 {
                assert_eq!(validate_oplog(&ideal(i, j, 9), i, j), Ok(()));
            }
        }
        assert_eq!(validate_oplog(&[], 2, 2), Ok(()));
    }

    #[test]
    fn pattern_for_two_by_two() {
        let log = ideal(2, 2, 3);
        assert_eq!(bracket_pattern(&log, 2), "(R0R1)(W0W1)(R2R3)(W2W3)(R0R1)(W0W1)");
    }

    #[test]
    fn write_before_read_is_reported() {
        let mut log = ideal(2, 2, 2);
        log.swap(1, 2);
        let v = validate_oplog(&log, 2, 2).unwrap_err();
        assert_eq!(v.line, 2);
        assert!(v.message.contains("before its R bracket"));
    }

    #[test]
    fn wrong_window_and_truncation() {
        let mut log = ideal(1, 2, 2);
        log[2].rank = 0;
        log[3].rank = 0;
        assert_eq!(validate_oplog(&log, 1, 2).unwrap_err().line, 3);
        let log = ideal(1, 1, 2);
        assert!(validate_oplog(&log[..3], 1, 1).is_err());
    }

    #[test]
    fn text_roundtrip() {
        let log = ideal(2, 1, 2);
        let text: String = log.iter().map(|r| format!("{r}\n")).collect();
        assert_eq!(parse_oplog(&text).unwrap(), log);
        assert!(matches!(parse_oplog("0,0,X,0,0,0"), Err(Error::Parse { line: 1, .. })));
    }
}
