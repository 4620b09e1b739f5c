//! Which trajectory checkpoints a condensation iteration may start from.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CondenseError, MatchingConfig};
use crate::buffer::ExpertTrajectory;
use crate::models::ParameterVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// `[0, min(U + I, U')]`: the bound grows by one per iteration.
    Expanding,
    /// `[0, U]` for the whole run.
    Fixed,
    /// A width-`U` window whose lower edge cycles through `0..=U'-U`.
    Sliding,
    /// `[0, U]` plus the single start `I` while `U <= I < U'`, then
    /// `[0, U']`.
    Stepwise,
}

/// Admissible start checkpoints at one iteration: a contiguous range plus
/// at most one isolated index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub lo: usize,
    pub hi: usize,
    pub extra: Option<usize>,
}

impl Window {
    pub fn upper(&self) -> usize {
        self.extra.map_or(self.hi, |e| e.max(self.hi))
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo + 1 + usize::from(self.extra.is_some())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.lo..=self.hi).contains(&t) || self.extra == Some(t)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let k = rng.random_range(0..self.len());
        if k <= self.hi - self.lo {
            self.lo + k
        } else {
            self.extra
                .expect("index past the range only when an extra start exists")
        }
    }
}

pub fn window(cfg: &MatchingConfig, iteration: usize) -> Window {
    let (u0, umax) = (cfg.window_init, cfg.window_max);
    match cfg.window_mode {
        WindowMode::Expanding => Window {
            lo: 0,
            hi: (u0 + iteration).min(umax),
            extra: None,
        },
        WindowMode::Fixed => Window {
            lo: 0,
            hi: u0,
            extra: None,
        },
        WindowMode::Sliding => {
            let lo = iteration % (umax - u0 + 1);
            Window {
                lo,
                hi: lo + u0,
                extra: None,
            }
        }
        WindowMode::Stepwise => {
            if iteration >= umax {
                Window {
                    lo: 0,
                    hi: umax,
                    extra: None,
                }
            } else if iteration > u0 {
                // I == U already lies inside [0, U].
                Window {
                    lo: 0,
                    hi: u0,
                    extra: Some(iteration),
                }
            } else {
                Window {
                    lo: 0,
                    hi: u0,
                    extra: None,
                }
            }
        }
    }
}

/// Upper edge of the matching window at `iteration`.
pub fn window_upper(cfg: &MatchingConfig, iteration: usize) -> usize {
    window(cfg, iteration).upper()
}

/// Largest start index any iteration can draw.
pub fn max_start(cfg: &MatchingConfig) -> usize {
    match cfg.window_mode {
        WindowMode::Fixed => cfg.window_init,
        WindowMode::Expanding | WindowMode::Sliding | WindowMode::Stepwise => cfg.window_max,
    }
}

/// A sampled start checkpoint and its `p`-step target.
#[derive(Debug, Clone, Copy)]
pub struct MatchSample<'a> {
    pub start_index: usize,
    pub start: &'a ParameterVector,
    pub target: &'a ParameterVector,
}

/// Draws a start uniformly from the iteration's window.
pub fn sample_match<'a>(
    traj: &'a ExpertTrajectory,
    cfg: &MatchingConfig,
    iteration: usize,
    rng: &mut impl Rng,
) -> Result<MatchSample<'a>, CondenseError> {
    let w = window(cfg, iteration);
    let needed = w.upper() + cfg.expert_steps + 1;
    if traj.len() < needed {
        return Err(CondenseError::Config(format!(
            "trajectory has {} snapshots but the window needs {needed}",
            traj.len()
        )));
    }
    let t = w.sample(rng);
    Ok(MatchSample {
        start_index: t,
        start: &traj.snapshots[t],
        target: &traj.snapshots[t + cfg.expert_steps],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mode: WindowMode, u0: usize, umax: usize) -> MatchingConfig {
        MatchingConfig {
            window_mode: mode,
            window_init: u0,
            window_max: umax,
            ..MatchingConfig::default()
        }
    }

    #[test]
    fn expanding_window_examples() {
        let c = cfg(WindowMode::Expanding, 3, 10);
        assert_eq!(window_upper(&c, 0), 3);
        assert_eq!(window_upper(&c, 5), 8);
        assert_eq!(window_upper(&c, 20), 10);
    }

    #[test]
    fn expanding_is_monotone_and_bounded() {
        let c = cfg(WindowMode::Expanding, 2, 17);
        let uppers: Vec<_> = (0..100).map(|i| window_upper(&c, i)).collect();
        assert!(uppers.windows(2).all(|w| w[0] <= w[1]));
        assert!(uppers.iter().all(|&u| u <= 17));
    }

    #[test]
    fn fixed_and_sliding() {
        let f = cfg(WindowMode::Fixed, 4, 10);
        assert!((0..50).all(|i| window(&f, i)
            == Window {
                lo: 0,
                hi: 4,
                extra: None
            }));
        let s = cfg(WindowMode::Sliding, 3, 6);
        let lows: Vec<_> = (0..9).map(|i| window(&s, i).lo).collect();
        assert_eq!(lows, vec![0, 1, 2, 3, 0, 1, 2, 3, 0]);
        assert!((0..20).all(|i| window(&s, i).upper() <= 6));
    }

    #[test]
    fn stepwise_adds_single_start() {
        let c = cfg(WindowMode::Stepwise, 3, 10);
        assert_eq!(
            window(&c, 1),
            Window {
                lo: 0,
                hi: 3,
                extra: None
            }
        );
        assert_eq!(
            window(&c, 6),
            Window {
                lo: 0,
                hi: 3,
                extra: Some(6)
            }
        );
        assert_eq!(
            window(&c, 10),
            Window {
                lo: 0,
                hi: 10,
                extra: None
            }
        );
        assert_eq!(window(&c, 6).len(), 5);
    }
}
