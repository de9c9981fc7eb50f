use crate::dataset::Coordinate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelForm {
    Gaussian,
    Hard,
}

/// Distance-decaying weight between an unseen condition and a seen sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VicinityKernel {
    /// Bandwidth in meters.
    pub bandwidth: f64,
    pub form: KernelForm,
}

impl VicinityKernel {
    pub fn new(bandwidth: f64, form: KernelForm) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::Config(format!("kernel bandwidth must be positive, got {bandwidth}")));
        }
        Ok(VicinityKernel { bandwidth, form })
    }

    pub fn weight(&self, distance: f64) -> f64 {
        match self.form {
            KernelForm::Gaussian => (-distance * distance / (2.0 * self.bandwidth * self.bandwidth)).exp(),
            KernelForm::Hard => {
                if distance <= self.bandwidth {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn vicinity_weight(unseen: &Coordinate, seen: &Coordinate, kernel: &VicinityKernel) -> f64 {
    kernel.weight(unseen.distance(seen))
}

/// Median over points of the distance to the nearest other point.
pub fn median_nearest_neighbor_distance(points: &[Coordinate]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let mut nn: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| p.distance(q))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    let n = nn.len();
    Some(if n % 2 == 1 {
        nn[n / 2]
    } else {
        0.5 * (nn[n / 2 - 1] + nn[n / 2])
    })
}
