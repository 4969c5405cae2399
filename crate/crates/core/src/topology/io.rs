//! Plain-text topology files.
//!
//! ```text
//! # comment
//! root s
//! s u 2
//! u v1 1
//! ```
//!
//! The first non-comment line names the root; every following line is
//! `<parent> <child> <delay-ms>`. `#` starts a comment anywhere on a line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{build_tree, TreeTopology};
use crate::{Error, Result};

pub fn parse_topology(text: &str) -> Result<TreeTopology> {
    let mut root: Option<String> = None;
    let mut edges: Vec<(String, String, f64)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        if root.is_none() {
            match fields.as_slice() {
                ["root", id] => root = Some(id.to_string()),
                _ => return Err(parse_err("expected `root <id>`".into())),
            }
            continue;
        }
        match fields.as_slice() {
            [p, c, d] => {
                let delay: f64 = d
                    .parse()
                    .map_err(|_| parse_err(format!("bad delay `{d}`")))?;
                edges.push((p.to_string(), c.to_string(), delay));
            }
            _ => {
                return Err(parse_err(
                    "expected `<parent-id> <child-id> <delay-ms>`".into(),
                ))
            }
        }
    }
    let root = root.ok_or(Error::Parse {
        line: 0,
        message: "missing `root <id>` line".into(),
    })?;
    build_tree(&edges, &root)
}

/// Serialize with links in canonical preorder.
pub fn write_topology(tree: &TreeTopology) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "root {}", tree.name(tree.root()));
    for (p, c, d) in tree.edges() {
        let _ = writeln!(out, "{p} {c} {d}");
    }
    out
}

pub fn read_topology(path: &Path) -> Result<TreeTopology> {
    parse_topology(&fs::read_to_string(path)?)
}
