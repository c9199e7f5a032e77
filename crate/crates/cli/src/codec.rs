//! Line-oriented codec tools: one record per input line, one per output line.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use anyhow::{anyhow, bail, Result};
use clap::Subcommand;
use embodia_core::spatial::{CameraCalib, SpaceVocab};

use crate::config::RunConfig;
use crate::data::read_json;

pub const GRID_HELP: &str = "Grid defaults: 1 m cells spanning x and y in [-50, 50] m and z in [-5, 5] m \
(100 x 100 x 10 cells). Override with --resolution, --extent-min and --extent-max.";

#[derive(Debug, Clone, Subcommand)]
pub enum CodecOp {
    /// Read `x y z` points in meters, write their x/y/z space-token triples.
    Encode,
    /// Read space-token triples, write the centers of their cells in meters.
    Decode,
    /// Read ego-frame `x y z` points, write `u v depth` pixels.
    Project {
        #[arg(long, value_name = "FILE")]
        calib: PathBuf,
    },
    /// Read `u v depth` pixels, write ego-frame `x y z` points.
    Unproject {
        #[arg(long, value_name = "FILE")]
        calib: PathBuf,
    },
}

fn numbers(line: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
    if parts.len() != 3 {
        bail!("expected 3 numbers, got {}", parts.len());
    }
    let mut out = [0.0f64; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| anyhow!("not a number: {p:?}"))?;
        if !o.is_finite() {
            bail!("not a finite number: {p:?}");
        }
    }
    Ok(out)
}

fn convert(run: &RunConfig, op: &CodecOp, vocab: Option<&SpaceVocab>, calib: Option<&CameraCalib>, line: &str) -> Result<String> {
    Ok(match op {
        CodecOp::Encode => {
            let p = numbers(line)?;
            if !run.grid.contains(p) {
                bail!("point {p:?} is outside the grid");
            }
            let idx = run.grid.quantize(p)?;
            vocab.expect("vocab loaded").encode_text(idx)?
        }
        CodecOp::Decode => {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let idx = vocab.expect("vocab loaded").tokens_to_grid(&tokens)?;
            let c = run.grid.dequantize(idx)?;
            format!("{} {} {}", c[0], c[1], c[2])
        }
        CodecOp::Project { .. } => {
            let px = calib.expect("calib loaded").project(numbers(line)?)?;
            format!("{} {} {}", px.u, px.v, px.depth)
        }
        CodecOp::Unproject { .. } => {
            let [u, v, d] = numbers(line)?;
            let p = calib.expect("calib loaded").unproject(u, v, d)?;
            format!("{} {} {}", p[0], p[1], p[2])
        }
    })
}

/// Stops at the first bad line with its line number.
pub fn run(run: &RunConfig, op: CodecOp, input: impl BufRead, mut output: impl Write) -> Result<()> {
    let vocab = match op {
        CodecOp::Encode | CodecOp::Decode => Some(run.space_vocab()?),
        _ => None,
    };
    let calib: Option<CameraCalib> = match &op {
        CodecOp::Project { calib } | CodecOp::Unproject { calib } => Some(read_json(calib)?),
        _ => None,
    };
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let out = convert(run, &op, vocab.as_ref(), calib.as_ref(), &line).map_err(|e| anyhow!("line {}: {e:#}", i + 1))?;
        writeln!(output, "{out}")?;
    }
    output.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FileConfig;
    use embodia_core::spatial::GridSpec;

    fn cfg() -> RunConfig {
        RunConfig {
            seed: 0,
            grid: GridSpec::default(),
            vocab: None,
            file: FileConfig::default(),
        }
    }

    fn pipe(op: CodecOp, input: &str) -> Result<String> {
        let mut out = Vec::new();
        run(&cfg(), op, input.as_bytes(), &mut out)?;
        Ok(String::from_utf8(out).unwrap())
    }

    #[test]
    fn encode_decode_lands_on_cell_centers() {
        let tokens = pipe(CodecOp::Encode, "1.2 -3.7 0.1\n\n49.9,49.9,4.9\n").unwrap();
        assert_eq!(tokens.lines().count(), 2);
        let centers = pipe(CodecOp::Decode, &tokens).unwrap();
        assert_eq!(centers, "1.5 -3.5 0.5\n49.5 49.5 4.5\n");
        assert_eq!(pipe(CodecOp::Encode, &centers).unwrap(), tokens);
    }

    #[test]
    fn malformed_lines_fail_with_position() {
        let err = pipe(CodecOp::Encode, "1 2 3\n1 2\n").unwrap_err().to_string();
        assert!(err.starts_with("line 2"), "{err}");
        assert!(pipe(CodecOp::Encode, "1 2 nan\n").is_err());
        assert!(pipe(CodecOp::Encode, "100 0 0\n").is_err());
        assert!(pipe(CodecOp::Decode, "hello there friend\n").is_err());
    }
}
