use super::{Field2, SimConfig, SimState};

/// Downsampled pressure observation. The simulator's pressure is reported
/// as the displacement-equivalent reading.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorImage {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, row index along `y`.
    pub data: Vec<f64>,
}

impl SensorImage {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SensorImage { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Area weights mapping `src` cells onto `dst` equal bins: row `b` holds
/// `(cell, overlap / bin_width)` pairs, so each row sums to one.
fn bin_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let width = src as f64 / dst as f64;
    (0..dst)
        .map(|b| {
            let lo = b as f64 * width;
            let hi = lo + width;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|c| {
                    let overlap = (hi.min(c as f64 + 1.0) - lo.max(c as f64)).max(0.0);
                    (overlap > 0.0).then_some((c, overlap / width))
                })
                .collect()
        })
        .collect()
}

/// Area-weighted block average of `field` onto a `rows x cols` image.
pub fn downsample(field: &Field2, rows: usize, cols: usize) -> SensorImage {
    let wy = bin_weights(field.ny, rows);
    let wx = bin_weights(field.nx, cols);
    // Columns first, then rows.
    let mut partial = vec![0.0; field.ny * cols];
    for j in 0..field.ny {
        let src = &field.data[j * field.nx..(j + 1) * field.nx];
        for (b, w) in wx.iter().enumerate() {
            partial[j * cols + b] = w.iter().map(|&(c, a)| a * src[c]).sum();
        }
    }
    let mut data = vec![0.0; rows * cols];
    for (r, w) in wy.iter().enumerate() {
        for b in 0..cols {
            data[r * cols + b] = w.iter().map(|&(j, a)| a * partial[j * cols + b]).sum();
        }
    }
    SensorImage { rows, cols, data }
}

/// Sensor reading of the interior total pressure.
pub fn sensor_read(state: &SimState, config: &SimConfig) -> SensorImage {
    let field = super::interior_pressure(state, config);
    downsample(&field, config.sensor_size, config.sensor_size)
}
