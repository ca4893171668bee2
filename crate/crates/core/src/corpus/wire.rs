//! Prediction files: one `id<TAB>V.VV#A.AA` line per instance, LF endings.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::atomic_write;

use super::{LABEL_MAX, LABEL_MIN};

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub valence: f64,
    pub arousal: f64,
}

/// Value in hundredths, clamped to the label scale and rounded half away
/// from zero on its shortest decimal representation. Rounding the decimal
/// text (rather than `x * 100`) makes `5.005` round up as written.
fn hundredths(x: f64) -> u32 {
    let x = x.clamp(LABEL_MIN, LABEL_MAX);
    let text = x.to_string();
    let (int_part, frac) = text.split_once('.').unwrap_or((&text, ""));
    let digit = |i: usize| frac.as_bytes().get(i).map_or(0, |b| u32::from(b - b'0'));
    // Clamped to [1, 9], so the integer part is a single digit.
    let whole: u32 = int_part.parse().expect("clamped value has integer part");
    let mut h = whole * 100 + digit(0) * 10 + digit(1);
    if digit(2) >= 5 {
        h += 1;
    }
    h
}

pub fn format_va(valence: f64, arousal: f64) -> Result<String> {
    if !valence.is_finite() || !arousal.is_finite() {
        return Err(Error::NonFinite(format!("prediction ({valence}, {arousal})")));
    }
    let (v, a) = (hundredths(valence), hundredths(arousal));
    Ok(format!("{}.{:02}#{}.{:02}", v / 100, v % 100, a / 100, a % 100))
}

fn parse_component(input: &str, part: &str) -> Result<f64> {
    let err = |reason| Error::Format {
        input: input.to_string(),
        reason,
    };
    let b = part.as_bytes();
    if b.len() != 4 || b[1] != b'.' || ![b[0], b[2], b[3]].iter().all(u8::is_ascii_digit) {
        return Err(err("expected D.DD"));
    }
    let h = u32::from(b[0] - b'0') * 100 + u32::from(b[2] - b'0') * 10 + u32::from(b[3] - b'0');
    if !(100..=900).contains(&h) {
        return Err(err("value outside [1.00, 9.00]"));
    }
    Ok(f64::from(h) / 100.0)
}

pub fn parse_va(s: &str) -> Result<(f64, f64)> {
    let (v, a) = s.split_once('#').ok_or_else(|| Error::Format {
        input: s.to_string(),
        reason: "missing '#' separator",
    })?;
    Ok((parse_component(s, v)?, parse_component(s, a)?))
}

pub fn write_predictions(path: &Path, ids: &[String], preds: &[(f64, f64)]) -> Result<()> {
    if ids.len() != preds.len() {
        return Err(Error::Shape(format!(
            "{} ids but {} predictions",
            ids.len(),
            preds.len()
        )));
    }
    let mut out = String::with_capacity(ids.len() * 16);
    for (id, &(v, a)) in ids.iter().zip(preds) {
        out.push_str(id);
        out.push('\t');
        out.push_str(&format_va(v, a)?);
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    body.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let record_err = |message: String| Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (id, va) = line
                .split_once('\t')
                .ok_or_else(|| record_err("expected id<TAB>V.VV#A.AA".into()))?;
            let (valence, arousal) = parse_va(va).map_err(|e| record_err(e.to_string()))?;
            Ok(Prediction {
                id: id.to_string(),
                valence,
                arousal,
            })
        })
        .collect()
}
