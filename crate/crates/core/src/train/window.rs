use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::robot::{ActionSpec, DesignState, Robot};

/// A training example: the observation at the start of `horizon` actions,
/// the design at every action boundary and the σ record over the span.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub episode: usize,
    pub offset: usize,
    /// Source clock reading at the window start, warm-up included.
    pub t0: f64,
    pub image: Vec<f64>,
    /// `horizon + 1` flat designs, one per action boundary.
    pub designs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// Physical σ, `horizon * substeps` samples.
    pub sigma: Vec<f64>,
    pub substeps: usize,
}

impl Window {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn steps(&self) -> usize {
        self.sigma.len()
    }
}

/// Anything that can hand out training windows.
pub trait WindowSource: Sync {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Window>;
}

/// Design after the last recorded step of an episode, obtained by applying
/// its final action once more through the robot.
fn design_after(robot: &Robot, design: &[f64], action: &[f64], period: f64) -> Result<Vec<f64>> {
    let d = DesignState::from_flat(design)?;
    let next = robot.advance(&d, &ActionSpec { rates: action.to_vec() }, period)?;
    Ok(next.to_flat())
}

/// Windows cut from the episodes of a dataset.
pub struct DatasetWindows<'a> {
    pub dataset: &'a Dataset,
    pub episodes: Vec<usize>,
    pub horizon: usize,
    robot: Robot,
}

impl<'a> DatasetWindows<'a> {
    pub fn new(dataset: &'a Dataset, episodes: Vec<usize>, horizon: usize) -> Result<Self> {
        let h = &dataset.header;
        if horizon == 0 {
            return Err(Error::Config("window horizon must be at least one action".into()));
        }
        if horizon > h.steps {
            return Err(Error::Config(format!("window horizon {horizon} exceeds episode length {}", h.steps)));
        }
        if episodes.is_empty() {
            return Err(Error::Config("no episodes to draw windows from".into()));
        }
        if let Some(e) = episodes.iter().find(|e| **e >= dataset.episodes.len()) {
            return Err(Error::Config(format!("episode {e} is not in the dataset")));
        }
        Ok(DatasetWindows { dataset, episodes, horizon, robot: h.robot()? })
    }

    pub fn all(dataset: &'a Dataset, horizon: usize) -> Result<Self> {
        Self::new(dataset, (0..dataset.episodes.len()).collect(), horizon)
    }

    pub fn offsets(&self) -> usize {
        self.dataset.header.steps - self.horizon + 1
    }

    /// Window starting at action `offset` of dataset episode `episode`.
    pub fn window(&self, episode: usize, offset: usize) -> Result<Window> {
        window_at(self.dataset, &self.robot, episode, offset, self.horizon)
    }
}

impl WindowSource for DatasetWindows<'_> {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Window> {
        let (e, o) = sample_window_index(self.episodes.len(), self.offsets(), rng);
        self.window(self.episodes[e], o)
    }
}

/// Uniform episode slot and start offset.
pub fn sample_window_index(episodes: usize, offsets: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let e = rng.random_range(0..episodes);
    let o = rng.random_range(0..offsets);
    (e, o)
}

/// Draw one window uniformly over episodes and admissible offsets.
pub fn sample_window(dataset: &Dataset, horizon: usize, rng: &mut ChaCha8Rng) -> Result<Window> {
    DatasetWindows::all(dataset, horizon)?.sample(rng)
}

pub(crate) fn window_at(dataset: &Dataset, robot: &Robot, episode: usize, offset: usize, horizon: usize) -> Result<Window> {
    let h = &dataset.header;
    if offset + horizon > h.steps {
        return Err(Error::Config(format!("window [{offset}, {}) runs past the episode end", offset + horizon)));
    }
    let ep = &dataset.episodes[episode];
    let mut designs: Vec<Vec<f64>> = (offset..offset + horizon).map(|i| ep.design(h, i)).collect();
    let actions: Vec<Vec<f64>> = (offset..offset + horizon).map(|i| ep.action(h, i)).collect();
    let last = if offset + horizon < h.steps {
        ep.design(h, offset + horizon)
    } else {
        design_after(robot, &designs[horizon - 1], &actions[horizon - 1], h.action_period)?
    };
    designs.push(last);
    let s = h.substeps;
    let sigma = ep.sigma[offset * s..(offset + horizon) * s].iter().map(|x| *x as f64).collect();
    Ok(Window {
        episode,
        offset,
        t0: (h.warm_up_steps + offset) as f64 * h.action_period,
        image: ep.image(h, offset),
        designs,
        actions,
        sigma,
        substeps: s,
    })
}

/// A fixed list of windows sampled with replacement.
pub struct WindowPool {
    pub windows: Vec<Window>,
}

impl WindowPool {
    /// Mean σ over every sample of every window.
    pub fn mean_sigma(&self) -> f64 {
        let n: usize = self.windows.iter().map(|w| w.sigma.len()).sum();
        self.windows.iter().flat_map(|w| &w.sigma).sum::<f64>() / n.max(1) as f64
    }
}

impl WindowSource for WindowPool {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Window> {
        if self.windows.is_empty() {
            return Err(Error::Config("empty window pool".into()));
        }
        Ok(self.windows[rng.random_range(0..self.windows.len())].clone())
    }
}
