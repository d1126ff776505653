//! Plain-text tree files.
//!
//! ```text
//! fracperc-tree v1
//! k 3
//! p 0.7
//! seed 2024
//! max_depth 2
//! reseed 2 99        (zero or more)
//! cells
//! 0 - -
//! 1 0 2
//! 2 01 21
//! ```
//!
//! One record per surviving cell: its depth, then its `i` and `j` digit
//! strings (`-` when empty). Records may come in any order; reading puts
//! them into canonical order and rejects orphans.

use std::fmt::Write as _;
use std::path::Path;

use crate::addressing::{format_digits, CellAddress};
use crate::error::{Error, Result};
use crate::percolation::{PercolationParams, PercolationTree, SeedSchedule};

pub const MAGIC: &str = "fracperc-tree v1";

pub fn to_string(tree: &PercolationTree) -> String {
    let params = tree.params();
    let k = params.k();
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "k {k}").unwrap();
    writeln!(out, "p {}", params.p()).unwrap();
    writeln!(out, "seed {}", tree.seeds().master()).unwrap();
    writeln!(out, "max_depth {}", tree.max_depth()).unwrap();
    for (depth, seed) in tree.seeds().reseeds() {
        writeln!(out, "reseed {depth} {seed}").unwrap();
    }
    out.push_str("cells\n");
    for (depth, level) in tree.levels().iter().enumerate() {
        for &cell in level {
            let addr = CellAddress::from_cell(k, depth as u32, cell);
            let field = |d: &[u8]| if d.is_empty() { "-".to_string() } else { format_digits(d) };
            writeln!(out, "{depth} {} {}", field(addr.i_digits()), field(addr.j_digits())).unwrap();
        }
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn header_value<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, key: &str) -> Result<(usize, &'a str)> {
    let (no, line) = lines.next().ok_or_else(|| parse_err(0, format!("missing `{key}` line")))?;
    let rest = line
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| parse_err(no, format!("expected `{key} <value>`")))?;
    Ok((no, rest.trim()))
}

fn number<T: std::str::FromStr>(no: usize, text: &str) -> Result<T> {
    text.parse().map_err(|_| parse_err(no, format!("not a number: `{text}`")))
}

pub fn from_str(text: &str) -> Result<PercolationTree> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        Some((no, _)) => return Err(parse_err(no, format!("expected `{MAGIC}`"))),
        None => return Err(parse_err(0, "empty tree file")),
    }
    let (no, k) = header_value(&mut lines, "k")?;
    let k: u32 = number(no, k)?;
    let (no, p) = header_value(&mut lines, "p")?;
    let p: f64 = number(no, p)?;
    let params = PercolationParams::new(k, p)?;
    let (no, seed) = header_value(&mut lines, "seed")?;
    let mut seeds = SeedSchedule::new(number(no, seed)?);
    let (no, max_depth) = header_value(&mut lines, "max_depth")?;
    let max_depth: u32 = number(no, max_depth)?;
    params.check_depth(max_depth)?;

    loop {
        let (no, line) = lines.next().ok_or_else(|| parse_err(0, "missing `cells` line"))?;
        let line = line.trim();
        if line == "cells" {
            break;
        }
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some("reseed"), Some(d), Some(s), None) => {
                seeds = seeds.reseeded(number(no, d)?, number(no, s)?);
            }
            _ => return Err(parse_err(no, format!("unexpected header line `{line}`"))),
        }
    }

    let mut levels = vec![Vec::new(); max_depth as usize + 1];
    for (no, line) in lines {
        let mut parts = line.split_whitespace();
        let (Some(d), Some(i), Some(j), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(no, "expected `depth i_digits j_digits`"));
        };
        let depth: u32 = number(no, d)?;
        if depth > max_depth {
            return Err(parse_err(no, format!("depth {depth} exceeds max_depth {max_depth}")));
        }
        let digits = |s: &str| if s == "-" { Ok(Vec::new()) } else { crate::addressing::parse_digits(s) };
        let addr = CellAddress::new(digits(i)?, digits(j)?).map_err(|e| parse_err(no, e.to_string()))?;
        if addr.depth() != depth {
            return Err(parse_err(no, format!("address has {} digits but depth is {depth}", addr.depth())));
        }
        let cell = addr.to_cell(k).map_err(|e| parse_err(no, e.to_string()))?;
        levels[depth as usize].push(cell);
    }
    PercolationTree::from_levels(params, seeds, levels)
}

pub fn save(tree: &PercolationTree, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(tree))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<PercolationTree> {
    from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::percolation::{generate, resample_children};

    #[test]
    fn round_trip_is_exact() {
        for (k, p, seed, depth) in [(2, 0.9, 7, 3), (3, 0.7, 11, 4), (5, 0.3, 1, 2), (2, 0.6, 3, 0)] {
            let params = PercolationParams::new(k, p).unwrap();
            let tree = generate(params, seed, depth).unwrap();
            let text = to_string(&tree);
            let back = from_str(&text).unwrap();
            assert_eq!(back, tree);
            assert_eq!(to_string(&back), text);
        }
    }

    #[test]
    fn reseeds_survive_round_trip() {
        let tree = generate(PercolationParams::new(3, 0.7).unwrap(), 5, 4).unwrap();
        let resampled = resample_children(&tree, 2, 99).unwrap();
        let back = from_str(&to_string(&resampled)).unwrap();
        assert_eq!(back.seeds(), resampled.seeds());
        assert_eq!(back, resampled);
    }

    #[test]
    fn root_only_file() {
        let tree = generate(PercolationParams::new(2, 0.5).unwrap(), 1, 0).unwrap();
        let text = to_string(&tree);
        assert!(text.ends_with("cells\n0 - -\n"));
    }

    #[test]
    fn orphan_is_reported_with_address() {
        let tree = generate(PercolationParams::new(2, 0.5).unwrap(), 4, 2).unwrap();
        let mut text = to_string(&tree);
        let present: Vec<_> = tree.level(1).unwrap().to_vec();
        // Pick a depth-1 cell that is absent and give it a child.
        let missing = (0..2u32)
            .flat_map(|x| (0..2u32).map(move |y| crate::addressing::Cell::new(x, y)))
            .find(|c| !present.contains(c));
        if let Some(c) = missing {
            text.push_str(&format!("2 {}0 {}0\n", c.x, c.y));
            match from_str(&text) {
                Err(Error::Orphan { depth: 2, address }) => assert_eq!(address, format!("i:{}0/j:{}0", c.x, c.y)),
                other => panic!("expected orphan error, got {other:?}"),
            }
        }
    }

    #[test]
    fn malformed_files() {
        assert!(matches!(from_str(""), Err(Error::Parse { .. })));
        assert!(matches!(from_str("nonsense"), Err(Error::Parse { line: 1, .. })));
        let good = to_string(&generate(PercolationParams::new(2, 0.5).unwrap(), 1, 1).unwrap());
        let bad = good.replace("p 0.5", "p 1.5");
        assert!(matches!(from_str(&bad), Err(Error::InvalidParams(_))));
        let bad = format!("{good}5 0 0\n");
        assert!(matches!(from_str(&bad), Err(Error::Parse { .. })));
        let bad = format!("{good}1 0 00\n");
        assert!(matches!(from_str(&bad), Err(Error::Parse { .. })));
    }
}
