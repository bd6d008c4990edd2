//! Plain-text scan-order files.
//!
//! Each order is stored as a header line `kind T H W direction` followed by
//! one line of whitespace-separated linear indices in traversal order.
//! Several orders (routes) may follow each other in one file.

use std::io::{BufRead, Write};

use super::{Dims3, Direction, ScanKind, ScanOrder};
use crate::{Error, Result};

pub fn write_golden<W: Write>(mut out: W, orders: &[ScanOrder]) -> Result<()> {
    for o in orders {
        let Dims3 { t, h, w } = o.dims();
        writeln!(out, "{} {t} {h} {w} {}", o.kind(), o.direction().name())?;
        let line: Vec<String> = o.sequence().iter().map(usize::to_string).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_golden<R: BufRead>(input: R) -> Result<Vec<ScanOrder>> {
    let mut lines = input.lines();
    let mut orders = vec![];
    while let Some(header) = lines.next() {
        let header = header?;
        if header.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 5 {
            return Err(Error::Format(format!("bad scan header {header:?}")));
        }
        let kind: ScanKind = f[0].parse()?;
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad dimension {s:?}")));
        let dims = Dims3::new(num(f[1])?, num(f[2])?, num(f[3])?)?;
        let direction: Direction = f[4].parse()?;
        let body = lines.next().ok_or_else(|| Error::Format("missing index line".into()))??;
        let seq = body
            .split_whitespace()
            .map(|s| s.parse::<usize>().map_err(|_| Error::Format(format!("bad index {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut forward = seq;
        if direction == Direction::Backward {
            forward.reverse();
        }
        let order = ScanOrder::from_forward(dims, kind, forward)?;
        orders.push(match direction {
            Direction::Forward => order,
            Direction::Backward => order.reversed(),
        });
    }
    Ok(orders)
}
