//! Backprojections of point objects through the toric branches, for
//! comparing observed artifacts with the predicted ones.

use crate::error::{Error, Result};
use crate::geometry::{Image, ImageGrid, ScannerConfig, ToricSinogramGrid, Vec2};
use crate::metrics::dilate;
use crate::operators::{assemble_toric, derivative_filter, Branch, LinearMap, SparseLinearOperator};

/// Ones on the 3x3 pixel block centred on the pixel containing `y`.
pub fn delta_image(grid: &ImageGrid, y: Vec2) -> Result<Image> {
    let idx = grid.locate(y).ok_or_else(|| Error::InvalidParameter(format!("point {y:?} lies outside the grid")))?;
    let (c1, c2) = grid.coords(idx);
    let mut img = Image::zeros(*grid);
    for i2 in c2.saturating_sub(1)..=(c2 + 1).min(grid.n2 - 1) {
        for i1 in c1.saturating_sub(1)..=(c1 + 1).min(grid.n1 - 1) {
            img.data[grid.index(i1, i2)] = 1.0;
        }
    }
    Ok(img)
}

/// `T^*T f` split by branch pairing.
#[derive(Clone, Debug, PartialEq)]
pub struct Backprojections {
    /// `(T1 + T2)^* (T1 + T2) f`.
    pub full: Image,
    /// `(T1^* T1 + T2^* T2) f`.
    pub diagonal: Image,
    /// `(T1^* T2 + T2^* T1) f`, where the nonlocal artifacts live.
    pub cross: Image,
}

/// The two toric branches and a second-derivative filter in `r`.
#[derive(Clone, Debug)]
pub struct BranchOperators {
    pub image: ImageGrid,
    pub t1: SparseLinearOperator,
    pub t2: SparseLinearOperator,
    pub phi: SparseLinearOperator,
}

impl BranchOperators {
    pub fn assemble(image: &ImageGrid, sino: &ToricSinogramGrid, cfg: &ScannerConfig) -> Result<Self> {
        Ok(Self {
            image: *image,
            t1: assemble_toric(image, sino, cfg, Branch::One)?,
            t2: assemble_toric(image, sino, cfg, Branch::Two)?,
            phi: derivative_filter(sino, 2)?,
        })
    }

    /// Branch-paired backprojections of `f`, with `phi` between the transform
    /// and its adjoint when `filtered`.
    pub fn backproject(&self, f: &Image, filtered: bool) -> Result<Backprojections> {
        let g1 = self.t1.apply(&f.data)?;
        let g2 = self.t2.apply(&f.data)?;
        let (g1, g2) = if filtered { (self.phi.apply(&g1)?, self.phi.apply(&g2)?) } else { (g1, g2) };
        let b11 = self.t1.apply_adjoint(&g1)?;
        let b12 = self.t1.apply_adjoint(&g2)?;
        let b21 = self.t2.apply_adjoint(&g1)?;
        let b22 = self.t2.apply_adjoint(&g2)?;
        let img = |v: Vec<f64>| Image::new(self.image, v);
        let diag: Vec<f64> = b11.iter().zip(&b22).map(|(a, b)| a + b).collect();
        let cross: Vec<f64> = b12.iter().zip(&b21).map(|(a, b)| a + b).collect();
        let full: Vec<f64> = diag.iter().zip(&cross).map(|(a, b)| a + b).collect();
        Ok(Backprojections { full: img(full)?, diagonal: img(diag)?, cross: img(cross)? })
    }
}

/// Share of the absolute mass of `values` on the `dilation`-pixel dilation of `mask`.
pub fn mass_fraction(values: &Image, mask: &[bool], dilation: usize) -> Result<f64> {
    crate::operators::check_len(values.data.len(), mask.len())?;
    let near = dilate(mask, &values.grid, dilation);
    let total: f64 = values.data.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return Err(Error::Degenerate("image has no mass".into()));
    }
    let inside: f64 = values.data.iter().zip(&near).filter(|(_, m)| **m).map(|(v, _)| v.abs()).sum();
    Ok(inside / total)
}
