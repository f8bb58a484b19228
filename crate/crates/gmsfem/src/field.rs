//! Per-fine-element coefficient fields: file I/O and the seeded
//! high-contrast channel generator.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::GridGeometry;
use crate::scalar::{real, to_f64, Real};

/// Strictly positive coefficient values, one per fine element, stored
/// row-major with the bottom row first.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField<T> {
    nx: usize,
    ny: usize,
    values: Vec<T>,
}

impl<T: Real> CoefficientField<T> {
    pub fn new(nx: usize, ny: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != nx * ny {
            return Err(Error::FieldFormat(format!(
                "expected {} values for a {nx}x{ny} field, got {}",
                nx * ny,
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if !(*v > T::zero()) || !v.is_finite() {
                return Err(Error::FieldFormat(format!(
                    "value {} at cell {i} is not strictly positive and finite",
                    to_f64(*v)
                )));
            }
        }
        Ok(Self { nx, ny, values })
    }

    pub fn uniform(geom: &GridGeometry, value: T) -> Self {
        Self {
            nx: geom.fine_elems_x(),
            ny: geom.fine_elems_y(),
            values: vec![value; geom.fine_element_count()],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    #[inline]
    pub fn at(&self, ex: usize, ey: usize) -> T {
        self.values[ey * self.nx + ex]
    }

    #[inline]
    pub fn at_index(&self, elem: usize) -> T {
        self.values[elem]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn set(&mut self, ex: usize, ey: usize, v: T) {
        self.values[ey * self.nx + ex] = v;
    }

    pub fn matches(&self, geom: &GridGeometry) -> bool {
        self.nx == geom.fine_elems_x() && self.ny == geom.fine_elems_y()
    }

    /// Largest-over-smallest value, a quick contrast summary.
    pub fn contrast_ratio(&self) -> T {
        let mut lo = self.values[0];
        let mut hi = self.values[0];
        for &v in &self.values {
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        hi / lo
    }

    /// Serializes in the plain-text field format: `nx ny` header line,
    /// then one row of values per grid row, bottom row first.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{} {}\n", self.nx, self.ny));
        for ey in 0..self.ny {
            let row: Vec<String> = (0..self.nx)
                .map(|ex| format!("{}", to_f64(self.at(ex, ey))))
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, geom: &GridGeometry) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let nx: usize = tokens
            .next()
            .ok_or_else(|| Error::FieldFormat("missing nx".into()))?
            .parse()
            .map_err(|e| Error::FieldFormat(format!("bad nx: {e}")))?;
        let ny: usize = tokens
            .next()
            .ok_or_else(|| Error::FieldFormat("missing ny".into()))?
            .parse()
            .map_err(|e| Error::FieldFormat(format!("bad ny: {e}")))?;
        if nx != geom.fine_elems_x() || ny != geom.fine_elems_y() {
            return Err(Error::FieldFormat(format!(
                "field is {nx}x{ny} but the grid has {}x{} fine elements",
                geom.fine_elems_x(),
                geom.fine_elems_y()
            )));
        }
        let mut values = Vec::with_capacity(nx * ny);
        for tok in tokens {
            let v: f64 = tok
                .parse()
                .map_err(|e| Error::FieldFormat(format!("bad value '{tok}': {e}")))?;
            values.push(real::<T>(v));
        }
        Self::new(nx, ny, values)
    }
}

/// Reads a field file and checks it against the grid.
pub fn load_field<T: Real>(path: &Path, geom: &GridGeometry) -> Result<CoefficientField<T>> {
    let text = fs::read_to_string(path)?;
    CoefficientField::parse(&text, geom)
}

pub fn save_field<T: Real>(path: &Path, field: &CoefficientField<T>) -> Result<()> {
    fs::write(path, field.to_text())?;
    Ok(())
}

/// Generates a seeded high-contrast field: background 1 with a random set
/// of axis-aligned and diagonal channel strips of value `contrast`.
///
/// Deterministic for a fixed `(geom, contrast, seed)` triple.
pub fn generate_channels<T: Real>(
    geom: &GridGeometry,
    contrast: f64,
    seed: u64,
) -> Result<CoefficientField<T>> {
    if contrast < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "contrast must be >= 1, got {contrast}"
        )));
    }
    let nx = geom.fine_elems_x();
    let ny = geom.fine_elems_y();
    let mut field = CoefficientField::uniform(geom, T::one());
    if contrast == 1.0 {
        return Ok(field);
    }

    let high = real::<T>(contrast);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_channels: usize = rng.random_range(8..=20);

    // Strips stay one coarse layer clear of the domain boundary:
    // boundary coarse nodes carry only the constant mode, so conduits in
    // the outermost blocks would sit outside what the coarse space can
    // resolve.
    let margin = geom
        .fine_per_coarse
        .min(nx.saturating_sub(1) / 3)
        .min(ny.saturating_sub(1) / 3)
        .max(1.min(nx / 2));
    let ix0 = margin;
    let ix1 = nx - margin; // exclusive
    let iy0 = margin;
    let iy1 = ny - margin;
    let inner_x = ix1 - ix0;
    let inner_y = iy1 - iy0;

    for _ in 0..n_channels {
        let orient: u8 = rng.random_range(0..4);
        let width: usize = rng.random_range(1..=3);
        match orient {
            0 => {
                // Horizontal strip.
                let w = width.min(inner_y);
                let len = rng.random_range((inner_x / 3).max(1)..=inner_x);
                let x0 = ix0 + rng.random_range(0..=inner_x - len);
                let y0 = iy0 + rng.random_range(0..=inner_y - w);
                for ey in y0..y0 + w {
                    for ex in x0..x0 + len {
                        field.set(ex, ey, high);
                    }
                }
            }
            1 => {
                // Vertical strip.
                let w = width.min(inner_x);
                let len = rng.random_range((inner_y / 3).max(1)..=inner_y);
                let y0 = iy0 + rng.random_range(0..=inner_y - len);
                let x0 = ix0 + rng.random_range(0..=inner_x - w);
                for ey in y0..y0 + len {
                    for ex in x0..x0 + w {
                        field.set(ex, ey, high);
                    }
                }
            }
            _ => {
                // Diagonal channel, rising (orient 2) or falling (orient 3).
                // Thickness at least 2 keeps consecutive steps sharing
                // element edges, so the channel conducts under bilinear
                // elements instead of decaying into corner-touching blobs.
                let span = inner_x.min(inner_y);
                let len = rng.random_range((span / 3).max(1)..=span);
                let w = width.max(2) as i64;
                let x0 = ix0 + rng.random_range(0..=inner_x - len);
                let y_start = iy0 + rng.random_range(0..inner_y);
                for s in 0..len {
                    let ex = x0 + s;
                    let ey_base = if orient == 2 {
                        y_start as i64 + s as i64
                    } else {
                        y_start as i64 - s as i64
                    };
                    for dy in 0..w {
                        let ey = ey_base + dy;
                        if ey >= iy0 as i64 && (ey as usize) < iy1 {
                            field.set(ex, ey as usize, high);
                        }
                    }
                }
            }
        }
    }
    Ok(field)
}
