use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{io_err, Error, Result};
use crate::grid::CountGrid;

/// Plain PGM (P2) of one channel, one pixel per cell. `max` maps to 0 and
/// zero to 255; a non-positive `max` gives a white image.
pub fn render_pgm(grid: &CountGrid, channel: usize, max: f32) -> String {
    let mut out = String::new();
    writeln!(out, "P2\n{} {}\n255", grid.cols(), grid.rows()).unwrap();
    for i in 0..grid.rows() {
        let row: Vec<String> = (0..grid.cols())
            .map(|j| {
                let v = grid.get(i, j, channel).max(0.0);
                let level = if max > 0.0 { 255.0 - (255.0 * (v / max).min(1.0)).round() } else { 255.0 };
                (level as u32).to_string()
            })
            .collect();
        writeln!(out, "{}", row.join(" ")).unwrap();
    }
    out
}

/// Writes `<prefix>_input.pgm`, `<prefix>_predicted.pgm` and
/// `<prefix>_real.pgm` for one channel, sharing one intensity scale.
pub fn heatmap(obs: &CountGrid, pred: &CountGrid, truth: &CountGrid, channel: usize, prefix: &Path) -> Result<[PathBuf; 3]> {
    if !obs.same_shape(pred) || !obs.same_shape(truth) {
        return Err(Error::Shape("heatmap grids differ in shape".into()));
    }
    if channel >= obs.channels() {
        return Err(Error::Shape(format!("channel {channel} out of range")));
    }
    let max = [obs, pred, truth]
        .iter()
        .flat_map(|g| (0..g.rows()).flat_map(move |i| (0..g.cols()).map(move |j| g.get(i, j, channel))))
        .fold(0.0f32, f32::max);
    let stem = prefix.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut paths = Vec::new();
    for (g, tag) in [(obs, "input"), (pred, "predicted"), (truth, "real")] {
        let path = prefix.with_file_name(format!("{stem}_{tag}.pgm"));
        std::fs::write(&path, render_pgm(g, channel, max)).map_err(io_err(&path))?;
        paths.push(path);
    }
    Ok(paths.try_into().unwrap())
}
