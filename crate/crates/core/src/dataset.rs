//! Offline episode logs and their JSON-lines file format.
//!
//! One episode per line:
//!
//! ```text
//! {"steps":[{"t":1,"s":0,"a":1,"r":0.005},{"t":2,"s":1,"a":1,"r":0.0}, ...]}
//! ```
//!
//! `t` is 1-based. Dimensions live in a sidecar `<file>.header.json`:
//! `{"S":6,"A":2,"tau":20}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Step, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    episodes: Vec<Trajectory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "tau")]
    pub horizon: usize,
}

#[derive(Serialize, Deserialize)]
struct LineStep {
    t: usize,
    s: usize,
    a: usize,
    r: f64,
}

#[derive(Serialize, Deserialize)]
struct Line {
    steps: Vec<LineStep>,
}

impl Dataset {
    pub fn new(num_states: usize, num_actions: usize, horizon: usize, episodes: Vec<Trajectory>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(Error::contract("dataset dimensions must be positive"));
        }
        let data = Dataset {
            num_states,
            num_actions,
            horizon,
            episodes,
        };
        for (i, ep) in data.episodes.iter().enumerate() {
            data.check_episode(i, ep)?;
        }
        Ok(data)
    }

    pub fn empty(num_states: usize, num_actions: usize, horizon: usize) -> Result<Self> {
        Self::new(num_states, num_actions, horizon, Vec::new())
    }

    fn check_episode(&self, i: usize, ep: &Trajectory) -> Result<()> {
        if ep.steps.len() != self.horizon {
            return Err(Error::data(format!(
                "episode {i} has {} steps, expected {}",
                ep.steps.len(),
                self.horizon
            )));
        }
        for (t, step) in ep.steps.iter().enumerate() {
            if step.state >= self.num_states || step.action >= self.num_actions {
                return Err(Error::data(format!(
                    "episode {i} step {} has (s={}, a={}) outside S={} A={}",
                    t + 1,
                    step.state,
                    step.action,
                    self.num_states,
                    self.num_actions
                )));
            }
            if !step.reward.is_finite() {
                return Err(Error::data(format!("episode {i} step {} has non-finite reward", t + 1)));
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn episodes(&self) -> &[Trajectory] {
        &self.episodes
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            num_states: self.num_states,
            num_actions: self.num_actions,
            horizon: self.horizon,
        }
    }

    /// First `n` episodes as a new dataset.
    pub fn prefix(&self, n: usize) -> Dataset {
        self.with_episodes(self.episodes[..n.min(self.episodes.len())].to_vec())
    }

    /// Concatenation; dimensions must agree.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.header() != other.header() {
            return Err(Error::dimension(
                "cannot concatenate datasets with different dimensions",
            ));
        }
        let mut episodes = self.episodes.clone();
        episodes.extend_from_slice(&other.episodes);
        Ok(self.with_episodes(episodes))
    }

    fn with_episodes(&self, episodes: Vec<Trajectory>) -> Dataset {
        Dataset {
            num_states: self.num_states,
            num_actions: self.num_actions,
            horizon: self.horizon,
            episodes,
        }
    }

    /// Mean undiscounted return over episodes.
    pub fn mean_return(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(Trajectory::total_reward).sum::<f64>() / self.episodes.len() as f64
    }

    /// Empirical distribution of first states; `None` for an empty dataset.
    pub fn empirical_initial(&self) -> Option<Vec<f64>> {
        if self.episodes.is_empty() {
            return None;
        }
        let mut p = vec![0.0; self.num_states];
        for ep in &self.episodes {
            p[ep.steps[0].state] += 1.0;
        }
        let n = self.episodes.len() as f64;
        p.iter_mut().for_each(|x| *x /= n);
        Some(p)
    }

    pub fn to_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for ep in &self.episodes {
            let line = Line {
                steps: ep
                    .steps
                    .iter()
                    .enumerate()
                    .map(|(t, s)| LineStep {
                        t: t + 1,
                        s: s.state,
                        a: s.action,
                        r: s.reward,
                    })
                    .collect(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
        }
        Ok(())
    }

    pub fn from_jsonl<R: BufRead>(header: DatasetHeader, input: R) -> Result<Self> {
        let mut episodes = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<reader>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line =
                serde_json::from_str(&line).map_err(|e| Error::data(format!("line {}: {e}", lineno + 1)))?;
            let mut steps = Vec::with_capacity(parsed.steps.len());
            for (i, st) in parsed.steps.into_iter().enumerate() {
                if st.t != i + 1 {
                    return Err(Error::data(format!(
                        "line {}: step {} carries t={}, expected {}",
                        lineno + 1,
                        i + 1,
                        st.t,
                        i + 1
                    )));
                }
                steps.push(Step {
                    state: st.s,
                    action: st.a,
                    reward: st.r,
                });
            }
            episodes.push(Trajectory { steps });
        }
        Self::new(header.num_states, header.num_actions, header.horizon, episodes)
    }

    /// Writes `path` and its `.header.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.to_jsonl(&mut out)?;
        out.flush().map_err(|e| Error::io(path, e))?;
        let hpath = header_path(path);
        let text = serde_json::to_string(&self.header())?;
        std::fs::write(&hpath, text + "\n").map_err(|e| Error::io(hpath, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let hpath = header_path(path);
        let htext = std::fs::read_to_string(&hpath).map_err(|e| Error::io(&hpath, e))?;
        let header: DatasetHeader =
            serde_json::from_str(&htext).map_err(|e| Error::data(format!("{}: {e}", hpath.display())))?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(header, BufReader::new(file))
    }
}

pub fn header_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".header.json");
    PathBuf::from(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let ep = |s: usize| Trajectory {
            steps: vec![
                Step {
                    state: s,
                    action: 1,
                    reward: 0.005,
                },
                Step {
                    state: 1,
                    action: 0,
                    reward: 1.0,
                },
            ],
        };
        Dataset::new(2, 2, 2, vec![ep(0), ep(1)]).unwrap()
    }

    #[test]
    fn jsonl_line_shape() {
        let mut buf = Vec::new();
        tiny().to_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(
            first,
            r#"{"steps":[{"t":1,"s":0,"a":1,"r":0.005},{"t":2,"s":1,"a":0,"r":1.0}]}"#
        );
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let data = tiny();
        data.save(&path).unwrap();
        assert!(header_path(&path).exists());
        assert_eq!(Dataset::load(&path).unwrap(), data);
    }

    #[test]
    fn rejects_bad_lines() {
        let header = DatasetHeader {
            num_states: 2,
            num_actions: 2,
            horizon: 2,
        };
        let short = r#"{"steps":[{"t":1,"s":0,"a":1,"r":0.0}]}"#;
        assert!(matches!(
            Dataset::from_jsonl(header, short.as_bytes()),
            Err(Error::Data(_))
        ));
        let bad_state = r#"{"steps":[{"t":1,"s":5,"a":1,"r":0.0},{"t":2,"s":0,"a":0,"r":0.0}]}"#;
        assert!(matches!(
            Dataset::from_jsonl(header, bad_state.as_bytes()),
            Err(Error::Data(_))
        ));
        let bad_t = r#"{"steps":[{"t":2,"s":0,"a":1,"r":0.0},{"t":3,"s":0,"a":0,"r":0.0}]}"#;
        assert!(matches!(
            Dataset::from_jsonl(header, bad_t.as_bytes()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn initial_distribution_and_return() {
        let d = tiny();
        assert_eq!(d.empirical_initial().unwrap(), vec![0.5, 0.5]);
        assert!((d.mean_return() - 1.005).abs() < 1e-12);
        assert_eq!(d.prefix(1).len(), 1);
        assert_eq!(d.concat(&d).unwrap().len(), 4);
    }
}
