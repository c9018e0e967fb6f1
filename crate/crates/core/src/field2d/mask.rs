use crate::error::{Error, Result};
use crate::robot::DesignState;

use super::SimConfig;

/// Cells occupied by scatterers, plus the velocity faces they block.
///
/// Faces are stored in the solver's staggered layout: `vx` faces are
/// `n x (n + 1)` (row `j`, column `f` between cells `f - 1` and `f`),
/// `vy` faces are `(n + 1) x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScattererMask {
    n: usize,
    cells: Vec<bool>,
    vx_blocked: Vec<bool>,
    vy_blocked: Vec<bool>,
    count: usize,
}

impl ScattererMask {
    pub fn empty(n: usize) -> Self {
        ScattererMask {
            n,
            cells: vec![false; n * n],
            vx_blocked: vec![false; n * (n + 1)],
            vy_blocked: vec![false; (n + 1) * n],
            count: 0,
        }
    }

    pub fn grid_n(&self) -> usize {
        self.n
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Whether cell `(i, j)` (x index, y index) is inside a scatterer.
    pub fn cell(&self, i: usize, j: usize) -> bool {
        self.cells[j * self.n + i]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub(crate) fn vx_blocked(&self) -> &[bool] {
        &self.vx_blocked
    }

    pub(crate) fn vy_blocked(&self) -> &[bool] {
        &self.vy_blocked
    }

    fn clear(&mut self) {
        if self.count > 0 {
            self.cells.fill(false);
            self.vx_blocked.fill(false);
            self.vy_blocked.fill(false);
            self.count = 0;
        }
    }

    /// Marks every cell whose center lies within one of the disks.
    /// Reuses the allocation of `self`.
    pub fn rasterize_into(&mut self, design: &DesignState, config: &SimConfig) -> Result<()> {
        let n = config.grid_n;
        if self.n != n {
            *self = ScattererMask::empty(n);
        }
        self.clear();
        let lim = config.interior_half_width();
        let dx = config.cell_size();
        for (c, &r) in design.centers.iter().zip(&design.radii) {
            if r <= 0.0 {
                continue;
            }
            if c[0].abs() + r > lim || c[1].abs() + r > lim {
                return Err(Error::ConstraintViolation(format!(
                    "disk at ({:.3}, {:.3}) radius {r:.3} reaches into the PML (interior half width {lim:.3})",
                    c[0], c[1]
                )));
            }
            let lo_i = config.cell_of(c[0] - r - dx);
            let hi_i = config.cell_of(c[0] + r + dx);
            let lo_j = config.cell_of(c[1] - r - dx);
            let hi_j = config.cell_of(c[1] + r + dx);
            let r2 = r * r;
            for j in lo_j..=hi_j {
                let y = config.cell_center(j) - c[1];
                for i in lo_i..=hi_i {
                    let x = config.cell_center(i) - c[0];
                    let k = j * n + i;
                    if x * x + y * y <= r2 && !self.cells[k] {
                        self.cells[k] = true;
                        self.count += 1;
                    }
                }
            }
        }
        if self.count > 0 {
            for j in 0..n {
                for i in 0..n {
                    if !self.cells[j * n + i] {
                        continue;
                    }
                    self.vx_blocked[j * (n + 1) + i] = true;
                    self.vx_blocked[j * (n + 1) + i + 1] = true;
                    self.vy_blocked[j * n + i] = true;
                    self.vy_blocked[(j + 1) * n + i] = true;
                }
            }
        }
        Ok(())
    }
}

/// Rasterizes a design onto a fresh mask.
pub fn rasterize_scatterers(design: &DesignState, config: &SimConfig) -> Result<ScattererMask> {
    let mut mask = ScattererMask::empty(config.grid_n);
    mask.rasterize_into(design, config)?;
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(x: f64, y: f64, r: f64) -> DesignState {
        DesignState { centers: vec![[x, y]], radii: vec![r] }
    }

    /// Independent count: test every cell center in the grid.
    fn brute_count(design: &DesignState, config: &SimConfig) -> usize {
        let n = config.grid_n;
        let mut count = 0;
        for j in 0..n {
            for i in 0..n {
                let (x, y) = (config.cell_center(i), config.cell_center(j));
                if design
                    .centers
                    .iter()
                    .zip(&design.radii)
                    .any(|(c, r)| (x - c[0]).powi(2) + (y - c[1]).powi(2) <= r * r)
                {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn zero_radius_gives_empty_mask() {
        let m = rasterize_scatterers(&disk(0.0, 0.0, 0.0), &SimConfig::default()).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn unit_disk_area() {
        let config = SimConfig::default();
        let d = disk(0.0, 0.0, 1.0);
        let m = rasterize_scatterers(&d, &config).unwrap();
        let expected = std::f64::consts::PI / config.cell_size().powi(2);
        assert_eq!(m.count(), brute_count(&d, &config));
        assert!((m.count() as f64 - expected).abs() <= 0.1 * expected, "{} vs {expected}", m.count());
    }

    #[test]
    fn disjoint_disks_add() {
        let config = SimConfig::default();
        let a = disk(-3.1, 0.7, 0.8);
        let b = disk(4.2, -2.0, 0.55);
        let both = DesignState { centers: vec![a.centers[0], b.centers[0]], radii: vec![0.8, 0.55] };
        let ca = rasterize_scatterers(&a, &config).unwrap().count();
        let cb = rasterize_scatterers(&b, &config).unwrap().count();
        let mb = rasterize_scatterers(&both, &config).unwrap();
        assert_eq!(mb.count(), ca + cb);
        assert_eq!(mb.count(), brute_count(&both, &config));
    }

    #[test]
    fn disk_touching_pml_is_rejected() {
        let config = SimConfig::default();
        let lim = config.interior_half_width();
        assert!(rasterize_scatterers(&disk(lim - 0.5, 0.0, 1.0), &config).is_err());
        assert!(rasterize_scatterers(&disk(lim - 1.5, 0.0, 1.0), &config).is_ok());
    }

    #[test]
    fn blocked_faces_surround_cells() {
        let config = SimConfig::default();
        let m = rasterize_scatterers(&disk(0.0, 0.0, 0.5), &config).unwrap();
        let n = config.grid_n;
        for j in 0..n {
            for i in 0..n {
                if m.cell(i, j) {
                    assert!(m.vx_blocked()[j * (n + 1) + i] && m.vx_blocked()[j * (n + 1) + i + 1]);
                    assert!(m.vy_blocked()[j * n + i] && m.vy_blocked()[(j + 1) * n + i]);
                }
            }
        }
    }
}
