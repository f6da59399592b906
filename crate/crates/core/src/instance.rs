//! Text format for channel instances and relay designs.
//!
//! ```text
//! M L N D
//! # seed 42
//! H1_TILDE
//! <L rows of M entries>
//! H1
//! <L rows of M entries>
//! H2
//! <N rows of L entries>
//! ```
//!
//! Entries are complex numbers written `a+bi` with 17 significant digits (exact round trip).
//! Lines starting with `#` are comments; `# seed <n>` records the RNG seed.

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::model::{ChannelRealization, RelayDesign};

/// Antenna and stream counts from an instance header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceDims {
    pub m: usize,
    pub l: usize,
    pub n: usize,
    pub d: usize,
}

pub fn format_complex(z: Complex64) -> String {
    format!("{:.16e}{:+.16e}i", z.re, z.im)
}

pub fn parse_complex(s: &str) -> Option<Complex64> {
    let s = s.trim();
    let Some(body) = s.strip_suffix('i') else {
        return s.parse::<f64>().ok().map(|re| Complex64::new(re, 0.0));
    };
    let bytes = body.as_bytes();
    // Split at the last sign that is not a leading sign or an exponent sign.
    let split = (1..bytes.len())
        .rev()
        .find(|&i| matches!(bytes[i], b'+' | b'-') && !matches!(bytes[i - 1], b'e' | b'E'))?;
    let re = body[..split].parse::<f64>().ok()?;
    let im = body[split..].parse::<f64>().ok()?;
    Some(Complex64::new(re, im))
}

fn write_matrix(out: &mut String, label: &str, m: &CMatrix) {
    out.push_str(label);
    out.push('\n');
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format_complex(m[(r, c)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

pub fn write_instance(ch: &ChannelRealization, d: usize) -> String {
    let mut out = String::new();
    let (l, m) = ch.h1.shape();
    let n = ch.h2.nrows();
    let _ = writeln!(out, "{m} {l} {n} {d}");
    let _ = writeln!(out, "# seed {}", ch.seed);
    write_matrix(&mut out, "H1_TILDE", &ch.h1_tilde);
    write_matrix(&mut out, "H1", &ch.h1);
    write_matrix(&mut out, "H2", &ch.h2);
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    seed: Option<u64>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
            seed: None,
        }
    }

    fn next_content(&mut self) -> Result<(usize, &'a str)> {
        for (i, line) in self.inner.by_ref() {
            let t = line.trim();
            if let Some(comment) = t.strip_prefix('#') {
                let mut words = comment.split_whitespace();
                if words.next() == Some("seed") {
                    self.seed = words.next().and_then(|w| w.parse().ok());
                }
                continue;
            }
            if !t.is_empty() {
                return Ok((i + 1, t));
            }
        }
        Err(Error::Parse {
            line: 0,
            msg: "unexpected end of file".into(),
        })
    }

    fn matrix(&mut self, label: &str, rows: usize, cols: usize) -> Result<CMatrix> {
        let (line, text) = self.next_content()?;
        if text != label {
            return Err(Error::Parse {
                line,
                msg: format!("expected block {label}, found {text:?}"),
            });
        }
        let mut out = CMatrix::zeros(rows, cols);
        for r in 0..rows {
            let (line, text) = self.next_content()?;
            let entries: Vec<&str> = text.split_whitespace().collect();
            if entries.len() != cols {
                return Err(Error::Parse {
                    line,
                    msg: format!("{label} row has {} entries, expected {cols}", entries.len()),
                });
            }
            for (c, e) in entries.iter().enumerate() {
                let z = parse_complex(e).ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("bad complex entry {e:?}"),
                })?;
                if !(z.re.is_finite() && z.im.is_finite()) {
                    return Err(Error::Parse {
                        line,
                        msg: format!("non-finite entry {e:?}"),
                    });
                }
                out[(r, c)] = z;
            }
        }
        Ok(out)
    }
}

pub fn read_instance(text: &str) -> Result<(ChannelRealization, InstanceDims)> {
    let mut lines = Lines::new(text);
    let (line, header) = lines.next_content()?;
    let nums: Vec<usize> = header
        .split_whitespace()
        .map(|w| w.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse {
            line,
            msg: format!("header must be `M L N D`, found {header:?}"),
        })?;
    let [m, l, n, d] = nums[..] else {
        return Err(Error::Parse {
            line,
            msg: format!("header must have four counts, found {}", nums.len()),
        });
    };
    if m == 0 || l == 0 || n == 0 || d == 0 {
        return Err(Error::Parse {
            line,
            msg: "counts must be positive".into(),
        });
    }
    let h1_tilde = lines.matrix("H1_TILDE", l, m)?;
    let h1 = lines.matrix("H1", l, m)?;
    let h2 = lines.matrix("H2", n, l)?;
    let ch = ChannelRealization {
        h1_tilde,
        h1,
        h2,
        seed: lines.seed.unwrap_or(0),
    };
    Ok((ch, InstanceDims { m, l, n, d }))
}

/// Writes a design as labeled blocks `F`, `Q`, `Q_TILDE` after a
/// `scheme epsilon` line.
pub fn write_design(design: &RelayDesign) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {:.15e}", design.scheme, design.epsilon);
    write_matrix(&mut out, "F", &design.f_mat);
    write_matrix(&mut out, "Q", &design.q_mat);
    write_matrix(&mut out, "Q_TILDE", &design.q_tilde);
    out
}
