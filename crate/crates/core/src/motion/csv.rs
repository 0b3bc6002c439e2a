use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use super::PoseSequence;
use crate::error::{Error, Result};

/// Parses headerless comma-separated frames, one per line. Blank lines are
/// skipped.
pub fn parse_sequence_csv(bytes: &[u8], frame_rate_hz: f64) -> Result<PoseSequence> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        msg: format!("not valid text: {e}"),
    })?;
    let mut width = None;
    let mut values = Vec::new();
    let mut rows = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cols = 0usize;
        for token in line.split(',') {
            let token = token.trim();
            let v: f64 = token.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                msg: format!("bad number {token:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("line {} token {token:?}", idx + 1)));
            }
            values.push(v);
            cols += 1;
        }
        match width {
            None => width = Some(cols),
            Some(w) if w != cols => {
                return Err(Error::RaggedRows {
                    line: idx + 1,
                    expected: w,
                    found: cols,
                })
            }
            _ => {}
        }
        rows += 1;
    }
    let width = width.ok_or(Error::Empty)?;
    let frames = Array2::from_shape_vec((rows, width), values)
        .map_err(|e| Error::dims(e.to_string()))?;
    PoseSequence::new(frames, frame_rate_hz)
}

pub fn read_sequence_csv(path: impl AsRef<Path>, frame_rate_hz: f64) -> Result<PoseSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_sequence_csv(&bytes, frame_rate_hz)
}

/// Shortest round-trip decimal for every value, so parsing gives back the
/// exact same floats.
pub fn write_sequence_csv(frames: &Array2<f64>) -> String {
    let mut out = String::with_capacity(frames.len() * 12);
    for row in frames.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_sequence_file(path: impl AsRef<Path>, frames: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_sequence_csv(frames)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_frames() {
        let seq = parse_sequence_csv(b"0.0,0.0,0.0\n0.1,0.0,0.0", 25.0).unwrap();
        assert_eq!((seq.len(), seq.dim()), (2, 3));
        assert_eq!(seq.frames()[[1, 0]], 0.1);
    }

    #[test]
    fn empty_input() {
        assert!(matches!(parse_sequence_csv(b"", 25.0), Err(Error::Empty)));
        assert!(matches!(parse_sequence_csv(b"\n\n", 25.0), Err(Error::Empty)));
    }

    #[test]
    fn ragged_rows() {
        let err = parse_sequence_csv(b"1,2\n1,2,3", 25.0).unwrap_err();
        assert!(matches!(
            err,
            Error::RaggedRows {
                line: 2,
                expected: 2,
                found: 3
            }
        ));
    }

    #[test]
    fn non_finite_tokens() {
        for text in ["1,NaN", "inf,0", "1,-infinity", "1e400,0"] {
            let err = parse_sequence_csv(text.as_bytes(), 25.0).unwrap_err();
            assert!(matches!(err, Error::NonFinite(_)), "{text}: {err}");
        }
    }

    #[test]
    fn garbage_token() {
        assert!(matches!(
            parse_sequence_csv(b"1,abc", 25.0),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn write_then_parse_is_exact(vals in proptest::collection::vec(proptest::num::f64::NORMAL, 1..40)) {
            let n = vals.len();
            let frames = Array2::from_shape_vec((n, 1), vals).unwrap();
            let text = write_sequence_csv(&frames);
            let back = parse_sequence_csv(text.as_bytes(), 25.0).unwrap();
            prop_assert_eq!(back.frames(), &frames);
        }
    }
}
