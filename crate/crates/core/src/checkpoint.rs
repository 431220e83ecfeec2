//! Line-oriented text checkpoints: a format-version line, a layer-shape
//! manifest, then named arrays with one float per line. Values are printed
//! with 17 significant digits, so a write → read → write cycle is
//! byte-identical for both scalar widths.

use crate::error::{Error, Result};
use crate::net::{Dense, PointNet, FEATURE_DIM, HEAD_HIDDEN, LAYER_COUNT, POINT_WIDTHS};
use crate::real::Real;
use std::io::{BufRead, Write};
use std::path::Path;

const MAGIC: &str = "rotadapt-checkpoint";
const VERSION: u32 = 1;

pub fn write_checkpoint<S: Real>(net: &PointNet<S>, path: &Path) -> Result<()> {
    let displayed = path.display().to_string();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(displayed.clone(), e))?;
    let mut out = std::io::BufWriter::new(file);
    let io_err = |e| Error::io(displayed.clone(), e);
    writeln!(out, "{MAGIC} v{VERSION}").map_err(io_err)?;
    writeln!(out, "layers {}", net.layers.len()).map_err(io_err)?;
    for (ix, layer) in net.layers.iter().enumerate() {
        writeln!(out, "shape {ix} {} {}", layer.din, layer.dout).map_err(io_err)?;
    }
    for (ix, layer) in net.layers.iter().enumerate() {
        for (name, values) in [("w", &layer.w), ("b", &layer.b)] {
            writeln!(out, "array {name}{ix} {}", values.len()).map_err(io_err)?;
            for v in values {
                writeln!(out, "{:.16e}", v.as_f64()).map_err(io_err)?;
            }
        }
    }
    out.flush().map_err(io_err)
}

/// Reads a checkpoint and validates the architecture: the fixed per-point
/// widths, the pooled feature width feeding the head, and a class count of at
/// least 2. Truncated files, malformed lines, and mismatched shapes are
/// rejected with the offending line number.
pub fn read_checkpoint<S: Real>(path: &Path) -> Result<PointNet<S>> {
    let displayed = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(displayed.clone(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let mut next = |expect: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((ix, Ok(line))) => Ok((ix + 1, line)),
            Some((ix, Err(e))) => Err(Error::parse(&displayed, ix + 1, e.to_string())),
            None => Err(Error::parse(&displayed, 0, format!("file ends before {expect}"))),
        }
    };

    let (ln, header) = next("the format header")?;
    if header.trim() != format!("{MAGIC} v{VERSION}") {
        return Err(Error::parse(&displayed, ln, "not a recognized checkpoint header"));
    }
    let (ln, count_line) = next("the layer count")?;
    let layer_count: usize = count_line
        .trim()
        .strip_prefix("layers ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(&displayed, ln, "expected 'layers <n>'"))?;
    if layer_count != LAYER_COUNT {
        return Err(Error::parse(
            &displayed,
            ln,
            format!("expected {LAYER_COUNT} layers, file declares {layer_count}"),
        ));
    }

    let mut shapes = Vec::with_capacity(layer_count);
    for ix in 0..layer_count {
        let (ln, line) = next("a shape line")?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed = (|| -> Option<(usize, usize, usize)> {
            if fields.len() != 4 || fields[0] != "shape" {
                return None;
            }
            Some((fields[1].parse().ok()?, fields[2].parse().ok()?, fields[3].parse().ok()?))
        })();
        let (got_ix, din, dout) =
            parsed.ok_or_else(|| Error::parse(&displayed, ln, "expected 'shape <i> <din> <dout>'"))?;
        if got_ix != ix {
            return Err(Error::parse(&displayed, ln, format!("shape index {got_ix} out of order")));
        }
        shapes.push((din, dout));
    }
    validate_shapes(&shapes).map_err(|msg| Error::parse(&displayed, 2 + layer_count, msg))?;

    let mut layers = Vec::with_capacity(layer_count);
    for (ix, &(din, dout)) in shapes.iter().enumerate() {
        let mut layer = Dense::<S>::zeros(din, dout);
        for (name, len, slot) in [
            ("w", din * dout, 0usize),
            ("b", dout, 1usize),
        ] {
            let (ln, line) = next("an array header")?;
            let expected = format!("array {name}{ix} {len}");
            if line.trim() != expected {
                return Err(Error::parse(&displayed, ln, format!("expected '{expected}'")));
            }
            let dest = if slot == 0 { &mut layer.w } else { &mut layer.b };
            for v in dest.iter_mut() {
                let (ln, line) = next("an array value")?;
                let x: f64 = line
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(&displayed, ln, "bad float"))?;
                if !x.is_finite() {
                    return Err(Error::parse(&displayed, ln, "non-finite value"));
                }
                *v = S::of(x);
            }
        }
        layers.push(layer);
    }
    if let Some((ix, Ok(line))) = lines.next() {
        if !line.trim().is_empty() {
            return Err(Error::parse(&displayed, ix + 1, "trailing content after arrays"));
        }
    }
    Ok(PointNet { layers })
}

fn validate_shapes(shapes: &[(usize, usize)]) -> std::result::Result<(), String> {
    for i in 0..POINT_WIDTHS.len() - 1 {
        let want = (POINT_WIDTHS[i], POINT_WIDTHS[i + 1]);
        if shapes[i] != want {
            return Err(format!(
                "per-point layer {i} must be {}x{}, file has {}x{}",
                want.0, want.1, shapes[i].0, shapes[i].1
            ));
        }
    }
    let head = POINT_WIDTHS.len() - 1;
    if shapes[head] != (FEATURE_DIM, HEAD_HIDDEN) {
        return Err(format!(
            "head layer must be {FEATURE_DIM}x{HEAD_HIDDEN}, file has {}x{}",
            shapes[head].0, shapes[head].1
        ));
    }
    if shapes[head + 1].0 != HEAD_HIDDEN || shapes[head + 1].1 < 2 {
        return Err(format!(
            "output layer must be {HEAD_HIDDEN}xK with K >= 2, file has {}x{}",
            shapes[head + 1].0, shapes[head + 1].1
        ));
    }
    Ok(())
}
