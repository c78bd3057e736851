//! Light-field container and re-slicers.
//!
//! A [`LightField`] is a 5-D array indexed `(u, v, x, y, c)`: angular row,
//! angular column, spatial row, spatial column, channel. Fixing `(u, v)`
//! yields a sub-aperture image, fixing `(x, y)` yields a micro-lens image,
//! and fixing one angular plus one spatial index yields an epipolar-plane
//! image. All slicers return owned copies; the source is never mutated.

mod io;

pub use io::{load_light_field, save_image_png, save_light_field, view_file_name};

use std::path::PathBuf;

use ndarray::{s, Array3, Array5, ArrayView3, ArrayView5};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LfError {
    #[error("{axis} index {index} out of range (extent {extent})")]
    IndexOutOfRange {
        axis: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("crop window x0={x0} y0={y0} w={w} h={h} exceeds spatial extent {x}x{y}")]
    CropOutOfBounds {
        x0: usize,
        y0: usize,
        w: usize,
        h: usize,
        x: usize,
        y: usize,
    },
    #[error("incomplete view grid in {dir}: missing view ({u}, {v}) of {rows}x{cols}")]
    IncompleteGrid {
        dir: PathBuf,
        u: usize,
        v: usize,
        rows: usize,
        cols: usize,
    },
    #[error("view size mismatch: {first_view} is {first:?} but {view} is {found:?}")]
    SizeMismatch {
        first_view: String,
        first: (u32, u32),
        view: String,
        found: (u32, u32),
    },
    #[error("no view images found in {0}")]
    NoViews(PathBuf),
    #[error("cannot encode {channels}-channel data as PNG")]
    UnsupportedChannels { channels: usize },
    #[error("operation requires {0}")]
    Unsupported(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = LfError> = std::result::Result<T, E>;

/// Extents of a light field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LfShape {
    pub u: usize,
    pub v: usize,
    pub x: usize,
    pub y: usize,
    pub c: usize,
}

impl LfShape {
    pub const fn new(u: usize, v: usize, x: usize, y: usize, c: usize) -> Self {
        Self { u, v, x, y, c }
    }

    pub fn views(&self) -> usize {
        self.u * self.v
    }

    /// Same geometry with `c` channels.
    pub const fn with_c(self, c: usize) -> Self {
        Self { c, ..self }
    }

    pub fn len(&self) -> usize {
        self.u * self.v * self.x * self.y * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_tuple(&self) -> (usize, usize, usize, usize, usize) {
        (self.u, self.v, self.x, self.y, self.c)
    }
}

impl std::fmt::Display for LfShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}x{}", self.u, self.v, self.x, self.y, self.c)
    }
}

/// A 2-D multi-channel image `(H, W, C)`: SAIs, micro-lens images and EPIs.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    data: Array3<f64>,
}

impl Image {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 || c == 0 {
            return Err(LfError::InvalidShape(format!("image {h}x{w}x{c}")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(LfError::NonFinite(i));
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
        })
    }

    pub fn from_fn(
        shape: (usize, usize, usize),
        f: impl FnMut((usize, usize, usize)) -> f64,
    ) -> Result<Self> {
        Self::new(Array3::from_shape_fn(shape, f))
    }

    pub fn constant(shape: (usize, usize, usize), value: f64) -> Result<Self> {
        Self::new(Array3::from_elem(shape, value))
    }

    /// `(H, W, C)`.
    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> ArrayView3<'_, f64> {
        self.data.view()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data
            .as_slice()
            .expect("image storage is always standard layout")
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[[row, col, ch]]
    }

    /// Single-channel luminance. RGB uses Rec.601 weights; any other
    /// channel count averages channels.
    pub fn luminance(&self) -> Image {
        let (h, w, c) = self.dim();
        let luma = Array3::from_shape_fn((h, w, 1), |(r, q, _)| {
            if c == 3 {
                0.299 * self.data[[r, q, 0]]
                    + 0.587 * self.data[[r, q, 1]]
                    + 0.114 * self.data[[r, q, 2]]
            } else {
                (0..c).map(|k| self.data[[r, q, k]]).sum::<f64>() / c as f64
            }
        });
        Image { data: luma }
    }
}

/// Which angular/spatial axis pair an EPI spans.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpiOrientation {
    /// Fix `u` and `y`; the EPI spans `(v, x)`.
    Horizontal,
    /// Fix `v` and `x`; the EPI spans `(u, y)`.
    Vertical,
}

impl std::str::FromStr for EpiOrientation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "horizontal" | "h" => Ok(Self::Horizontal),
            "vertical" | "v" => Ok(Self::Vertical),
            other => Err(format!("unknown EPI orientation `{other}`")),
        }
    }
}

/// A 4-D light field with a channel axis, laid out `(u, v, x, y, c)`.
///
/// Values are finite. Image-valued fields additionally stay in `[0, 1]`; see
/// [`LightField::is_image_valued`]. Feature-valued fields are unbounded.
#[derive(Clone, Debug, PartialEq)]
pub struct LightField {
    data: Array5<f64>,
}

impl LightField {
    pub fn new(data: Array5<f64>) -> Result<Self> {
        let (u, v, x, y, c) = data.dim();
        if u == 0 || v == 0 || x == 0 || y == 0 || c == 0 {
            return Err(LfError::InvalidShape(format!(
                "light field {u}x{v}x{x}x{y}x{c}"
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(LfError::NonFinite(i));
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
        })
    }

    pub fn from_fn(
        shape: LfShape,
        f: impl FnMut((usize, usize, usize, usize, usize)) -> f64,
    ) -> Result<Self> {
        Self::new(Array5::from_shape_fn(shape.as_tuple(), f))
    }

    pub fn from_vec(shape: LfShape, values: Vec<f64>) -> Result<Self> {
        let data = Array5::from_shape_vec(shape.as_tuple(), values)
            .map_err(|e| LfError::InvalidShape(e.to_string()))?;
        Self::new(data)
    }

    pub fn constant(shape: LfShape, value: f64) -> Result<Self> {
        Self::new(Array5::from_elem(shape.as_tuple(), value))
    }

    /// Assemble a light field from row-major `U x V` sub-aperture images.
    pub fn from_sais(u: usize, v: usize, views: &[Image]) -> Result<Self> {
        if views.len() != u * v || views.is_empty() {
            return Err(LfError::InvalidShape(format!(
                "{} views for a {u}x{v} grid",
                views.len()
            )));
        }
        let (x, y, c) = views[0].dim();
        let mut data = Array5::zeros((u, v, x, y, c));
        for (i, view) in views.iter().enumerate() {
            if view.dim() != (x, y, c) {
                return Err(LfError::InvalidShape(format!(
                    "view {i} is {:?}, expected {:?}",
                    view.dim(),
                    (x, y, c)
                )));
            }
            data.slice_mut(s![i / v, i % v, .., .., ..])
                .assign(&view.data);
        }
        Self::new(data)
    }

    pub fn shape(&self) -> LfShape {
        let (u, v, x, y, c) = self.data.dim();
        LfShape { u, v, x, y, c }
    }

    pub fn data(&self) -> ArrayView5<'_, f64> {
        self.data.view()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data
            .as_slice()
            .expect("light field storage is always standard layout")
    }

    pub fn into_array(self) -> Array5<f64> {
        self.data
    }

    pub fn get(&self, u: usize, v: usize, x: usize, y: usize, c: usize) -> f64 {
        self.data[[u, v, x, y, c]]
    }

    /// True when every value lies in `[0, 1]`.
    pub fn is_image_valued(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    fn check(axis: &'static str, index: usize, extent: usize) -> Result<()> {
        if index < extent {
            Ok(())
        } else {
            Err(LfError::IndexOutOfRange {
                axis,
                index,
                extent,
            })
        }
    }

    /// Sub-aperture image `I_{u,v}` of shape `(X, Y, C)`.
    pub fn sai(&self, u: usize, v: usize) -> Result<Image> {
        let shape = self.shape();
        Self::check("u", u, shape.u)?;
        Self::check("v", v, shape.v)?;
        Ok(Image {
            data: self.data.slice(s![u, v, .., .., ..]).to_owned(),
        })
    }

    /// Micro-lens image `M_{x,y}` of shape `(U, V, C)`.
    pub fn micro_lens(&self, x: usize, y: usize) -> Result<Image> {
        let shape = self.shape();
        Self::check("x", x, shape.x)?;
        Self::check("y", y, shape.y)?;
        Ok(Image {
            data: self.data.slice(s![.., .., x, y, ..]).to_owned(),
        })
    }

    /// Epipolar-plane image. Horizontal: `(V, X, C)` sampling
    /// `data[fixed_angular, v, x, fixed_spatial]`. Vertical: `(U, Y, C)`
    /// sampling `data[u, fixed_angular, fixed_spatial, y]`.
    pub fn epi(
        &self,
        orientation: EpiOrientation,
        fixed_angular: usize,
        fixed_spatial: usize,
    ) -> Result<Image> {
        let shape = self.shape();
        let data = match orientation {
            EpiOrientation::Horizontal => {
                Self::check("u", fixed_angular, shape.u)?;
                Self::check("y", fixed_spatial, shape.y)?;
                self.data
                    .slice(s![fixed_angular, .., .., fixed_spatial, ..])
                    .to_owned()
            }
            EpiOrientation::Vertical => {
                Self::check("v", fixed_angular, shape.v)?;
                Self::check("x", fixed_spatial, shape.x)?;
                self.data
                    .slice(s![.., fixed_angular, fixed_spatial, .., ..])
                    .to_owned()
            }
        };
        Ok(Image { data })
    }

    /// Crop the same `w x h` spatial window (rows `x0..x0+w`, columns
    /// `y0..y0+h`) out of every view.
    pub fn crop_patch(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<LightField> {
        let shape = self.shape();
        if w == 0 || h == 0 || x0 + w > shape.x || y0 + h > shape.y {
            return Err(LfError::CropOutOfBounds {
                x0,
                y0,
                w,
                h,
                x: shape.x,
                y: shape.y,
            });
        }
        Ok(LightField {
            data: self
                .data
                .slice(s![.., .., x0..x0 + w, y0..y0 + h, ..])
                .to_owned(),
        })
    }

    /// Iterate sub-aperture images in row-major `(u, v)` order.
    pub fn sais(&self) -> impl Iterator<Item = ((usize, usize), Image)> + '_ {
        let shape = self.shape();
        (0..shape.u).flat_map(move |u| {
            (0..shape.v).map(move |v| {
                let img = Image {
                    data: self.data.slice(s![u, v, .., .., ..]).to_owned(),
                };
                ((u, v), img)
            })
        })
    }

    /// Clamp every value into `[0, 1]`.
    pub fn clamped(&self) -> LightField {
        LightField {
            data: self.data.mapv(|v| v.clamp(0.0, 1.0)),
        }
    }

    /// Permute/flip axes; used by augmentation. The closure maps an output
    /// index to the source index.
    pub(crate) fn remap(
        &self,
        out_shape: LfShape,
        src: impl Fn([usize; 5]) -> [usize; 5],
    ) -> LightField {
        let data = Array5::from_shape_fn(out_shape.as_tuple(), |(u, v, x, y, c)| {
            self.data[src([u, v, x, y, c])]
        });
        LightField { data }
    }
}
