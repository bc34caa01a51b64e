//! Phase-diagram heatmaps as grayscale PNGs.
//!
//! M runs along the vertical axis (largest value at the top), T along the
//! horizontal axis, and success rate maps linearly to luminance (0 = black,
//! 1 = white). The title and the confidence-stopping caveat are embedded as
//! PNG text chunks; no display stack is involved.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::CliError;

pub struct HeatmapSpec<'a> {
    pub m_values: &'a [usize],
    pub t_values: &'a [usize],
    /// rate(m, t) for every combination of the axis values.
    pub rates: &'a dyn Fn(usize, usize) -> f64,
    pub title: String,
    pub caption: String,
}

pub fn write_heatmap(path: &Path, spec: &HeatmapSpec<'_>) -> Result<(), CliError> {
    let rows = spec.m_values.len();
    let cols = spec.t_values.len();
    let scale = (512 / rows.max(cols)).clamp(1, 32);
    let width = (cols * scale) as u32;
    let height = (rows * scale) as u32;

    let mut data = vec![0u8; (width * height) as usize];
    for (r, &m) in spec.m_values.iter().rev().enumerate() {
        for (c, &t) in spec.t_values.iter().enumerate() {
            let rate = (spec.rates)(m, t).clamp(0.0, 1.0);
            let lum = (rate * 255.0).round() as u8;
            for dy in 0..scale {
                let row_base = (r * scale + dy) * width as usize;
                for dx in 0..scale {
                    data[row_base + c * scale + dx] = lum;
                }
            }
        }
    }

    let io_err = |e: String| CliError::Io(format!("writing {}: {e}", path.display()));
    let file = File::create(path).map_err(|e| io_err(e.to_string()))?;
    let writer = BufWriter::new(file);
    let mut encoder = png::Encoder::new(writer, width, height);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    encoder
        .add_text_chunk("Title".to_string(), spec.title.clone())
        .map_err(|e| io_err(e.to_string()))?;
    encoder
        .add_text_chunk("Description".to_string(), spec.caption.clone())
        .map_err(|e| io_err(e.to_string()))?;
    let mut png_writer = encoder.write_header().map_err(|e| io_err(e.to_string()))?;
    png_writer
        .write_image_data(&data)
        .map_err(|e| io_err(e.to_string()))?;
    Ok(())
}
