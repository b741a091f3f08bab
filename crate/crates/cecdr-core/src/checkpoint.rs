//! Parameter checkpoint container.
//!
//! Text format, one tensor per blank-line-separated block:
//!
//! ```text
//! CECDR-CKPT v1
//!
//! <name>
//! <rank>
//! <extent> <extent> ...
//! <row of values> ...
//! ```
//!
//! Values are printed with 17 significant digits so the round trip is
//! bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{CecdrError, Result};

pub const HEADER: &str = "CECDR-CKPT v1";

pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn to_string(tensors: &[(String, Tensor)]) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    for (name, t) in tensors {
        out.push('\n');
        out.push_str(name);
        out.push('\n');
        let _ = writeln!(out, "{}", t.rank());
        let extents: Vec<String> = t.shape().iter().map(|e| e.to_string()).collect();
        let _ = writeln!(out, "{}", extents.join(" "));
        let cols = t.cols();
        for r in 0..t.len() / cols {
            let row: Vec<String> =
                t.values()[r * cols..(r + 1) * cols].iter().map(|&v| format_f64(v)).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out
}

pub fn save(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    fs::write(path, to_string(tensors)).map_err(|e| CecdrError::io(path.display().to_string(), e))
}

pub fn from_string(text: &str) -> Result<Vec<(String, Tensor)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        other => {
            return Err(CecdrError::Input(format!(
                "checkpoint header mismatch: expected '{HEADER}', got {other:?}"
            )))
        }
    }
    let mut tensors = Vec::new();
    let mut block: Vec<&str> = Vec::new();
    let flush = |block: &mut Vec<&str>, tensors: &mut Vec<(String, Tensor)>| -> Result<()> {
        if block.is_empty() {
            return Ok(());
        }
        if block.len() < 3 {
            return Err(CecdrError::Input("truncated checkpoint block".into()));
        }
        let name = block[0].to_string();
        let rank: usize = block[1]
            .trim()
            .parse()
            .map_err(|_| CecdrError::Input(format!("bad rank line in tensor '{name}'")))?;
        let shape: Vec<usize> = block[2]
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| CecdrError::Input(format!("bad extents in tensor '{name}'")))?;
        if shape.len() != rank {
            return Err(CecdrError::Input(format!(
                "tensor '{name}' declares rank {rank} but {} extents",
                shape.len()
            )));
        }
        let mut values = Vec::with_capacity(shape.iter().product());
        for line in &block[3..] {
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| CecdrError::Input(format!("bad value '{tok}' in tensor '{name}'")))?;
                values.push(v);
            }
        }
        tensors.push((name, Tensor::new(shape, values).map_err(|e| CecdrError::Input(e.to_string()))?));
        block.clear();
        Ok(())
    };
    for line in lines {
        if line.trim().is_empty() {
            flush(&mut block, &mut tensors)?;
        } else {
            block.push(line);
        }
    }
    flush(&mut block, &mut tensors)?;
    Ok(tensors)
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let text =
        fs::read_to_string(path).map_err(|e| CecdrError::io(path.display().to_string(), e))?;
    from_string(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = crate::rng::stream(3, crate::rng::Stream::GradCheck, 0);
        let vals: Vec<f64> = (0..12)
            .map(|i| match i % 4 {
                0 => rng.random::<f64>() * 1e12,
                1 => -rng.random::<f64>() * 1e-9,
                2 => rng.random::<f64>() - 0.5,
                _ => 0.0,
            })
            .collect();
        let tensors = vec![
            ("f.item_id_table".to_string(), Tensor::matrix(3, 4, vals).unwrap()),
            ("f.bias".to_string(), Tensor::vector(vec![std::f64::consts::PI, -1.0 / 3.0])),
            ("scalar".to_string(), Tensor::scalar(6.02214076e23)),
        ];
        let text = to_string(&tensors);
        let back = from_string(&text).unwrap();
        assert_eq!(back.len(), tensors.len());
        for ((n0, t0), (n1, t1)) in tensors.iter().zip(&back) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            for (a, b) in t0.values().iter().zip(t1.values()) {
                assert_eq!(a.to_bits(), b.to_bits(), "value drift in {n0}");
            }
        }
    }

    #[test]
    fn header_is_checked() {
        assert!(from_string("NOT-A-CKPT\n").is_err());
    }

    #[test]
    fn empty_store_round_trips() {
        let text = to_string(&[]);
        assert_eq!(from_string(&text).unwrap().len(), 0);
    }
}
