use std::fmt::Write as _;

use rayon::prelude::*;

use crate::aem::Surrogate;
use crate::error::{Error, Result};
use crate::train::{relative_step_errors, Dataset, DatasetWindows};

/// One model's rollouts in a long-horizon comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelPrediction {
    pub label: String,
    /// Physical σ̂ per episode, one value per solver substep.
    pub sigma: Vec<Vec<f64>>,
    /// Relative error per episode and action step.
    pub errors: Vec<Vec<f64>>,
}

impl ModelPrediction {
    /// Mean over episodes of the error after action step `step` (1-based).
    pub fn mean_error(&self, step: usize) -> f64 {
        self.errors.iter().map(|e| e[step - 1]).sum::<f64>() / self.errors.len() as f64
    }

    pub fn mean_curve(&self) -> Vec<f64> {
        let h = self.errors.first().map_or(0, Vec::len);
        (1..=h).map(|k| self.mean_error(k)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionReport {
    pub episodes: Vec<usize>,
    pub horizon: usize,
    pub substeps: usize,
    pub dt: f64,
    /// Recorded σ per episode and substep.
    pub truth: Vec<Vec<f64>>,
    pub models: Vec<ModelPrediction>,
}

/// The no-PML ablation of an AEM: the same network with damping forced to zero.
pub fn without_damping(model: &Surrogate) -> Result<Surrogate> {
    match model {
        Surrogate::Aem(m) => {
            let mut m = m.clone();
            m.zero_damping = true;
            Ok(Surrogate::Aem(m))
        }
        Surrogate::Node(_) => Err(Error::Config("the damping ablation needs an AEM checkpoint".into())),
    }
}

/// Rolls every model from the first frame of each listed episode for
/// `horizon` actions, driven by the recorded designs.
pub fn long_term_prediction_report(
    models: &[(String, &Surrogate)],
    dataset: &Dataset,
    episodes: &[usize],
    horizon: usize,
) -> Result<PredictionReport> {
    let src = DatasetWindows::new(dataset, episodes.to_vec(), horizon)?;
    let windows = episodes.iter().map(|&e| src.window(e, 0)).collect::<Result<Vec<_>>>()?;
    let h = &dataset.header;
    let truth: Vec<Vec<f64>> = windows.iter().map(|w| w.sigma.clone()).collect();
    let mut out = Vec::with_capacity(models.len());
    for (label, model) in models {
        if model.design_dim() != h.design_dim {
            return Err(Error::ShapeMismatch(format!(
                "model `{label}` expects {} design coordinates, dataset has {}",
                model.design_dim(),
                h.design_dim
            )));
        }
        let sigma = windows
            .par_iter()
            .map(|w| match model.predict(&w.image, &w.designs, w.t0, w.substeps, w.steps()) {
                Err(Error::NumericalBlowup(_)) => Ok(vec![f64::INFINITY; w.steps()]),
                other => other,
            })
            .collect::<Result<Vec<_>>>()?;
        let errors = sigma.iter().zip(&truth).map(|(p, t)| relative_step_errors(p, t, h.substeps)).collect();
        out.push(ModelPrediction { label: label.clone(), sigma, errors });
    }
    Ok(PredictionReport { episodes: episodes.to_vec(), horizon, substeps: h.substeps, dt: h.dt, truth, models: out })
}

impl PredictionReport {
    pub fn model(&self, label: &str) -> Option<&ModelPrediction> {
        self.models.iter().find(|m| m.label == label)
    }

    /// Episodes on which `a` has a strictly smaller error than `b` after `step`.
    pub fn wins(&self, a: &str, b: &str, step: usize) -> Result<usize> {
        let miss = |l: &str| Error::Config(format!("no model `{l}` in the report"));
        let (ma, mb) = (self.model(a).ok_or_else(|| miss(a))?, self.model(b).ok_or_else(|| miss(b))?);
        Ok(ma.errors.iter().zip(&mb.errors).filter(|(x, y)| x[step - 1] < y[step - 1]).count())
    }

    /// Per-substep σ: `episode,sample,t,truth,<model>...`.
    pub fn sigma_csv(&self) -> String {
        let mut s = String::from("episode,sample,t,truth");
        for m in &self.models {
            let _ = write!(s, ",{}", m.label);
        }
        s.push('\n');
        for (i, e) in self.episodes.iter().enumerate() {
            for (k, t) in self.truth[i].iter().enumerate() {
                let _ = write!(s, "{e},{k},{:?},{t:?}", (k + 1) as f64 * self.dt);
                for m in &self.models {
                    let _ = write!(s, ",{:?}", m.sigma[i][k]);
                }
                s.push('\n');
            }
        }
        s
    }

    /// Per action step: `step,<model>_mean...,<model>_ep<e>...`.
    pub fn error_csv(&self) -> String {
        let mut s = String::from("step");
        for m in &self.models {
            let _ = write!(s, ",{}_mean", m.label);
        }
        for m in &self.models {
            for e in &self.episodes {
                let _ = write!(s, ",{}_ep{e}", m.label);
            }
        }
        s.push('\n');
        for k in 1..=self.horizon {
            let _ = write!(s, "{k}");
            for m in &self.models {
                let _ = write!(s, ",{:?}", m.mean_error(k));
            }
            for m in &self.models {
                for e in &m.errors {
                    let _ = write!(s, ",{:?}", e[k - 1]);
                }
            }
            s.push('\n');
        }
        s
    }
}

/// True when the means of consecutive `block`-step chunks of `curve`,
/// from step `start` (1-based, inclusive) on, never decrease.
pub fn monotone_growth(curve: &[f64], start: usize, block: usize) -> bool {
    if block == 0 || start == 0 || start > curve.len() {
        return false;
    }
    let means: Vec<f64> = curve[start - 1..].chunks(block).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    means.len() >= 2 && means.windows(2).all(|w| w[1] >= w[0])
}
