//! Binary PGM (P5) dumps of image vectors: a length-d vector renders as a
//! k-by-k grayscale grid (d = k^2), affinely mapped from its [min, max] range
//! to 0..255. A degenerate range maps to mid-gray 128. Evaluation dumps put
//! baseline and candidate side by side, normalized jointly.

use std::path::Path;

use crate::error::{LabError, Result};
use crate::fsio::write_atomic;

fn side_len(d: usize) -> Result<usize> {
    let k = (d as f64).sqrt().round() as usize;
    if k * k == d && d > 0 {
        return Ok(k);
    }
    let mut best = 1usize;
    let mut best_gap = usize::MAX;
    for c in [k.saturating_sub(1), k, k + 1] {
        if c == 0 {
            continue;
        }
        let sq = c * c;
        let gap = sq.abs_diff(d);
        if gap < best_gap {
            best_gap = gap;
            best = sq;
        }
    }
    Err(LabError::Image(format!(
        "image dimension {d} is not a perfect square; nearest valid dimension is {best}"
    )))
}

fn quantize(values: &[f64]) -> Vec<u8> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|v| (((v - min) / (max - min)) * 255.0).round() as u8)
        .collect()
}

fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Write one image vector as a k-by-k PGM.
pub fn dump_image(values: &[f64], path: &Path) -> Result<()> {
    let k = side_len(values.len())?;
    let bytes = encode_pgm(k, k, &quantize(values));
    write_atomic(path, &bytes)
}

/// Write a baseline/candidate pair concatenated horizontally (k-by-2k).
pub fn dump_image_pair(baseline: &[f64], candidate: &[f64], path: &Path) -> Result<()> {
    if baseline.len() != candidate.len() {
        return Err(LabError::Image(format!(
            "pair halves differ in length: {} vs {}",
            baseline.len(),
            candidate.len()
        )));
    }
    let k = side_len(baseline.len())?;
    let mut joint = Vec::with_capacity(2 * baseline.len());
    joint.extend_from_slice(baseline);
    joint.extend_from_slice(candidate);
    let pixels = quantize(&joint);
    let (base_px, cand_px) = pixels.split_at(baseline.len());
    let mut rows = Vec::with_capacity(2 * baseline.len());
    for i in 0..k {
        rows.extend_from_slice(&base_px[i * k..(i + 1) * k]);
        rows.extend_from_slice(&cand_px[i * k..(i + 1) * k]);
    }
    let bytes = encode_pgm(2 * k, k, &rows);
    write_atomic(path, &bytes)
}
