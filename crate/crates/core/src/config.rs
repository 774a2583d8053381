//! `key=value` configuration helpers shared by the model, training and CLI.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

pub fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        v => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

pub fn parse_list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

pub fn parse_array<V: FromStr + Copy + Default, const N: usize>(key: &str, value: &str) -> Result<[V; N]> {
    let v: Vec<V> = parse_list(key, value)?;
    if v.len() != N {
        return Err(Error::Config(format!("{key}: expected {N} comma-separated values, got {}", v.len())));
    }
    let mut out = [V::default(); N];
    out.copy_from_slice(&v);
    Ok(out)
}

pub fn join<V: Display>(items: &[V]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Parses `key=value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn render_pairs(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}
