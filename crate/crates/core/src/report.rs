//! Artifact emission: reproducible CSV formatting, atomic file writes,
//! and SVG heatmaps.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Format a float with 17 significant digits ('.' decimal, no locale);
/// round-trips exactly through `f64::from_str`.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    format!("{x:.16e}")
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Write bytes to `path` atomically: write a sibling temp file, then rename.
/// Partial outputs are never left at the final path.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = dir.join(format!(
        ".{}.tmp-{}-{}",
        path.file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_else(|| "artifact".into()),
        std::process::id(),
        n
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Write a CSV with the given header and rows (values already formatted).
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// A rectangular field for heatmap rendering; `None` cells are masked.
#[derive(Debug, Clone)]
pub struct HeatmapGrid {
    pub rows: usize,
    pub cols: usize,
    /// Row-major values, length `rows * cols`.
    pub values: Vec<Option<f64>>,
}

impl HeatmapGrid {
    pub fn new(rows: usize, cols: usize, values: Vec<Option<f64>>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "heatmap {}x{} needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                values.len()
            )));
        }
        Ok(HeatmapGrid { rows, cols, values })
    }
}

fn ramp(t: f64) -> (u8, u8, u8) {
    // Two-endpoint ramp (dark violet to yellow).
    let lo = (68.0, 1.0, 84.0);
    let hi = (253.0, 231.0, 37.0);
    let c = |a: f64, b: f64| -> u8 { (a + (b - a) * t).round().clamp(0.0, 255.0) as u8 };
    (c(lo.0, hi.0), c(lo.1, hi.1), c(lo.2, hi.2))
}

/// Render a heatmap as a deterministic SVG: fixed color-ramp endpoints at
/// the field min/max, masked cells drawn in a distinct style. Identical
/// inputs produce byte-identical files.
pub fn emit_heatmap(grid: &HeatmapGrid, path: &Path) -> Result<()> {
    let cell = 16usize;
    let w = grid.cols * cell;
    let h = grid.rows * cell;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in grid.values.iter().flatten() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let span = hi - lo;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let x = c * cell;
            let y = r * cell;
            match grid.values[r * grid.cols + c] {
                Some(v) => {
                    let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
                    let (rr, gg, bb) = ramp(t);
                    svg.push_str(&format!(
                        "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"#{rr:02x}{gg:02x}{bb:02x}\"/>\n"
                    ));
                }
                None => {
                    svg.push_str(&format!(
                        "<rect class=\"masked\" x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"#9e9e9e\"/>\n"
                    ));
                }
            }
        }
    }
    svg.push_str("</svg>\n");
    atomic_write(path, svg.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt_roundtrips_exactly() {
        for x in [
            0.0,
            1.0,
            -3.725_290_298_461_914e-9,
            std::f64::consts::PI,
            1.0 / 3.0,
            -1e300,
            2.2250738585072014e-308,
        ] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x} -> {s}");
            assert!(!s.contains(','));
        }
    }

    #[test]
    fn heatmap_constant_field_is_single_color() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.svg");
        let g = HeatmapGrid::new(2, 2, vec![Some(1.0); 4]).unwrap();
        emit_heatmap(&g, &p).unwrap();
        let s = fs::read_to_string(&p).unwrap();
        let first_fill = s.split("fill=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(s.matches(&format!("fill=\"{first_fill}\"")).count(), 4);
    }

    #[test]
    fn heatmap_deterministic_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let g = HeatmapGrid::new(
            3,
            2,
            vec![Some(0.0), Some(1.0), None, Some(0.5), Some(2.0), Some(-1.0)],
        )
        .unwrap();
        let p1 = dir.path().join("a.svg");
        let p2 = dir.path().join("b.svg");
        emit_heatmap(&g, &p1).unwrap();
        emit_heatmap(&g, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn heatmap_masks_cells_distinctly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.svg");
        let g = HeatmapGrid::new(2, 2, vec![Some(0.0), Some(1.0), Some(0.5), None]).unwrap();
        emit_heatmap(&g, &p).unwrap();
        let s = fs::read_to_string(&p).unwrap();
        assert_eq!(s.matches("<rect").count(), 4);
        assert_eq!(s.matches("class=\"masked\"").count(), 1);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        // No temp files left behind.
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
