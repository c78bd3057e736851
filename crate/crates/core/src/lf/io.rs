//! Per-view PNG directories: `view_{u:02}_{v:02}.png`, `u` = angular row,
//! `v` = angular column. Spatial `x` is the image row, `y` the column.

use std::collections::BTreeMap;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use ndarray::Array5;

use super::{Image, LfError, LightField, Result};

pub fn view_file_name(u: usize, v: usize) -> String {
    format!("view_{u:02}_{v:02}.png")
}

fn parse_view_name(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("view_")?.strip_suffix(".png")?;
    let (u, v) = rest.split_once('_')?;
    if u.len() != 2 || v.len() != 2 {
        return None;
    }
    if !u.bytes().chain(v.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((u.parse().ok()?, v.parse().ok()?))
}

fn to_unit(byte: u8) -> f64 {
    f64::from(byte) / 255.0
}

fn to_byte(value: f64) -> u8 {
    (value.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Load a light field from a directory of 8-bit RGB views.
pub fn load_light_field(dir: impl AsRef<Path>) -> Result<LightField> {
    let dir = dir.as_ref();
    let mut views = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        if let Some(index) = name.to_str().and_then(parse_view_name) {
            views.insert(index, entry.path());
        }
    }
    if views.is_empty() {
        return Err(LfError::NoViews(dir.to_path_buf()));
    }

    let rows = views.keys().map(|&(u, _)| u).max().unwrap_or(0) + 1;
    let cols = views.keys().map(|&(_, v)| v).max().unwrap_or(0) + 1;
    for u in 0..rows {
        for v in 0..cols {
            if !views.contains_key(&(u, v)) {
                return Err(LfError::IncompleteGrid {
                    dir: dir.to_path_buf(),
                    u,
                    v,
                    rows,
                    cols,
                });
            }
        }
    }

    let mut data: Option<Array5<f64>> = None;
    let mut first: Option<(String, (u32, u32))> = None;
    for (&(u, v), path) in &views {
        let img = image::open(path)?.to_rgb8();
        let size = img.dimensions();
        let view_name = view_file_name(u, v);
        match &first {
            None => first = Some((view_name, size)),
            Some((first_view, first_size)) if *first_size != size => {
                return Err(LfError::SizeMismatch {
                    first_view: first_view.clone(),
                    first: *first_size,
                    view: view_name,
                    found: size,
                });
            }
            Some(_) => {}
        }
        let (width, height) = (size.0 as usize, size.1 as usize);
        let data = data.get_or_insert_with(|| Array5::zeros((rows, cols, height, width, 3)));
        for (col, row, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[[u, v, row as usize, col as usize, c]] = to_unit(px[c]);
            }
        }
    }
    LightField::new(data.expect("at least one view was loaded"))
}

/// Write every view as an 8-bit RGB PNG. Values are clamped to `[0, 1]`
/// and rounded, so a round trip is exact to within half a quantization step.
pub fn save_light_field(lf: &LightField, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let shape = lf.shape();
    if shape.c != 3 {
        return Err(LfError::UnsupportedChannels { channels: shape.c });
    }
    std::fs::create_dir_all(dir)?;
    for ((u, v), view) in lf.sais() {
        let (h, w, _) = view.dim();
        let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |col, row| {
            let (r, q) = (row as usize, col as usize);
            Rgb([
                to_byte(view.get(r, q, 0)),
                to_byte(view.get(r, q, 1)),
                to_byte(view.get(r, q, 2)),
            ])
        });
        img.save(dir.join(view_file_name(u, v)))?;
    }
    Ok(())
}

/// Save a 1- or 3-channel image as PNG with nearest-neighbour upscaling by
/// `scale` (EPIs are only a few pixels tall).
pub fn save_image_png(img: &Image, path: impl AsRef<Path>, scale: usize) -> Result<()> {
    let scale = scale.max(1);
    let (h, w, c) = img.dim();
    let (out_w, out_h) = ((w * scale) as u32, (h * scale) as u32);
    let at = |col: u32, row: u32, ch: usize| {
        to_byte(img.get(row as usize / scale, col as usize / scale, ch))
    };
    match c {
        3 => {
            let out: RgbImage = ImageBuffer::from_fn(out_w, out_h, |col, row| {
                Rgb([at(col, row, 0), at(col, row, 1), at(col, row, 2)])
            });
            out.save(path)?;
        }
        1 => {
            let out: GrayImage =
                ImageBuffer::from_fn(out_w, out_h, |col, row| Luma([at(col, row, 0)]));
            out.save(path)?;
        }
        channels => return Err(LfError::UnsupportedChannels { channels }),
    }
    Ok(())
}
