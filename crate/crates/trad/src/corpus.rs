//! Trajectory data model and the thought-enhanced memory, with a
//! line-delimited interchange format.
//!
//! A memory file is UTF-8, one JSON record per line. Trajectory records
//! carry `{"kind":"traj", task_id, instruction, domain_tag, meta, success,
//! steps:[{observation, action}]}`; annotation records carry
//! `{"kind":"ann", trajectory_id, step_index, thought}`. Line order does
//! not affect the loaded content; saving writes records sorted by id so
//! identical memories serialize to identical bytes.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate trajectory id {0}")]
    DuplicateTrajectory(String),
    #[error("dangling annotation: trajectory {trajectory_id} step {step_index} does not exist")]
    DanglingAnnotation { trajectory_id: String, step_index: usize },
    #[error("duplicate annotation for trajectory {trajectory_id} step {step_index}")]
    DuplicateAnnotation { trajectory_id: String, step_index: usize },
    #[error("trajectory {0} has no steps")]
    EmptyTrajectory(String),
    #[error("trajectory {0}: {1} must be non-empty")]
    EmptyField(String, &'static str),
    #[error("anchor {anchor} out of range for trajectory of {len} steps")]
    AnchorOutOfRange { anchor: usize, len: usize },
    #[error("memory has unannotated steps (e.g. trajectory {0} step {1})")]
    Unannotated(String, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A task instruction with retrieval meta-data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub instruction: String,
    pub domain_tag: String,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

/// One (observation, action) pair at position `index` of its trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub observation: String,
    pub action: String,
}

/// An ordered expert episode for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task: TaskSpec,
    pub steps: Vec<Step>,
    pub success: bool,
}

impl Trajectory {
    pub fn id(&self) -> &str {
        &self.task.task_id
    }
}

/// A step plus its pseudo-golden thought; the unit of step-wise retrieval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedStep {
    pub trajectory_id: String,
    pub step_index: usize,
    pub thought: String,
    pub step: Step,
}

/// The thought-enhanced corpus of expert trajectories.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Memory {
    trajectories: BTreeMap<String, Trajectory>,
    annotations: BTreeMap<(String, usize), AnnotatedStep>,
}

impl Memory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_trajectory(&mut self, trajectory: Trajectory) -> Result<(), CorpusError> {
        let id = trajectory.id().to_string();
        if id.is_empty() {
            return Err(CorpusError::EmptyField(id, "task_id"));
        }
        if trajectory.task.instruction.is_empty() {
            return Err(CorpusError::EmptyField(id, "instruction"));
        }
        if trajectory.steps.is_empty() {
            return Err(CorpusError::EmptyTrajectory(id));
        }
        for (i, step) in trajectory.steps.iter().enumerate() {
            if step.index != i {
                return Err(CorpusError::Parse {
                    line: 0,
                    message: format!("trajectory {id}: step index {} at position {i}", step.index),
                });
            }
            if step.action.is_empty() {
                return Err(CorpusError::EmptyField(id, "action"));
            }
        }
        if self.trajectories.contains_key(&id) {
            return Err(CorpusError::DuplicateTrajectory(id));
        }
        self.trajectories.insert(id, trajectory);
        Ok(())
    }

    pub fn annotate(
        &mut self,
        trajectory_id: &str,
        step_index: usize,
        thought: String,
    ) -> Result<(), CorpusError> {
        let step = self
            .trajectories
            .get(trajectory_id)
            .and_then(|t| t.steps.get(step_index))
            .cloned()
            .ok_or_else(|| CorpusError::DanglingAnnotation {
                trajectory_id: trajectory_id.to_string(),
                step_index,
            })?;
        let key = (trajectory_id.to_string(), step_index);
        if self.annotations.contains_key(&key) {
            return Err(CorpusError::DuplicateAnnotation {
                trajectory_id: trajectory_id.to_string(),
                step_index,
            });
        }
        self.annotations.insert(
            key,
            AnnotatedStep {
                trajectory_id: trajectory_id.to_string(),
                step_index,
                thought,
                step,
            },
        );
        Ok(())
    }

    pub fn trajectory(&self, id: &str) -> Option<&Trajectory> {
        self.trajectories.get(id)
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.values()
    }

    pub fn trajectory_ids(&self) -> impl Iterator<Item = &str> {
        self.trajectories.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn annotation(&self, trajectory_id: &str, step_index: usize) -> Option<&AnnotatedStep> {
        self.annotations
            .get(&(trajectory_id.to_string(), step_index))
    }

    pub fn annotations(&self) -> impl Iterator<Item = &AnnotatedStep> {
        self.annotations.values()
    }

    pub fn annotation_count(&self) -> usize {
        self.annotations.len()
    }

    /// Every step of every trajectory carries exactly one annotation.
    pub fn is_fully_annotated(&self) -> bool {
        self.first_unannotated().is_none()
    }

    pub fn first_unannotated(&self) -> Option<(String, usize)> {
        for traj in self.trajectories.values() {
            for step in &traj.steps {
                if !self
                    .annotations
                    .contains_key(&(traj.id().to_string(), step.index))
                {
                    return Some((traj.id().to_string(), step.index));
                }
            }
        }
        None
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind")]
enum Record {
    #[serde(rename = "traj")]
    Traj {
        task_id: String,
        instruction: String,
        domain_tag: String,
        #[serde(default)]
        meta: BTreeMap<String, String>,
        #[serde(default = "default_true")]
        success: bool,
        steps: Vec<StepRecord>,
    },
    #[serde(rename = "ann")]
    Ann {
        trajectory_id: String,
        step_index: usize,
        thought: String,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    observation: String,
    action: String,
}

/// Load a memory from a line-delimited record file.
pub fn load_memory(path: impl AsRef<Path>) -> Result<Memory, CorpusError> {
    let file = std::fs::File::open(path)?;
    load_memory_from(std::io::BufReader::new(file))
}

pub fn load_memory_from(reader: impl BufRead) -> Result<Memory, CorpusError> {
    let mut memory = Memory::new();
    let mut pending: Vec<(usize, String, usize, String)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        match record {
            Record::Traj {
                task_id,
                instruction,
                domain_tag,
                meta,
                success,
                steps,
            } => {
                let steps = steps
                    .into_iter()
                    .enumerate()
                    .map(|(i, s)| Step {
                        index: i,
                        observation: s.observation,
                        action: s.action,
                    })
                    .collect();
                memory.insert_trajectory(Trajectory {
                    task: TaskSpec {
                        task_id,
                        instruction,
                        domain_tag,
                        meta,
                    },
                    steps,
                    success,
                })?;
            }
            Record::Ann {
                trajectory_id,
                step_index,
                thought,
            } => pending.push((lineno, trajectory_id, step_index, thought)),
        }
    }
    // annotations may precede their trajectory in the file
    for (_, trajectory_id, step_index, thought) in pending {
        memory.annotate(&trajectory_id, step_index, thought)?;
    }
    Ok(memory)
}

/// Save a memory; `load_memory(save_memory(m))` is logically equal to `m`.
pub fn save_memory(memory: &Memory, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_memory(memory, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_memory(memory: &Memory, out: &mut impl Write) -> Result<(), CorpusError> {
    for traj in memory.trajectories.values() {
        let record = Record::Traj {
            task_id: traj.task.task_id.clone(),
            instruction: traj.task.instruction.clone(),
            domain_tag: traj.task.domain_tag.clone(),
            meta: traj.task.meta.clone(),
            success: traj.success,
            steps: traj
                .steps
                .iter()
                .map(|s| StepRecord {
                    observation: s.observation.clone(),
                    action: s.action.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut *out, &record).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    for ann in memory.annotations.values() {
        let record = Record::Ann {
            trajectory_id: ann.trajectory_id.clone(),
            step_index: ann.step_index,
            thought: ann.thought.clone(),
        };
        serde_json::to_writer(&mut *out, &record).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// The steps at indices `max(0, anchor-b) ..= min(n-1, anchor+f)`, each
/// paired with its offset from the anchor. Offset 0 is always present.
pub fn window(
    trajectory: &Trajectory,
    anchor: usize,
    b: usize,
    f: usize,
) -> Result<Vec<(i64, &Step)>, CorpusError> {
    let len = trajectory.steps.len();
    if anchor >= len {
        return Err(CorpusError::AnchorOutOfRange { anchor, len });
    }
    let lo = anchor.saturating_sub(b);
    let hi = (anchor + f).min(len - 1);
    Ok(trajectory.steps[lo..=hi]
        .iter()
        .map(|s| (s.index as i64 - anchor as i64, s))
        .collect())
}

#[cfg(test)]
pub(crate) fn test_trajectory(id: &str, n: usize) -> Trajectory {
    Trajectory {
        task: TaskSpec {
            task_id: id.to_string(),
            instruction: format!("instruction for {id}"),
            domain_tag: "test".to_string(),
            meta: BTreeMap::new(),
        },
        steps: (0..n)
            .map(|i| Step {
                index: i,
                observation: format!("obs {i} of {id}"),
                action: format!("act {i} of {id}"),
            })
            .collect(),
        success: true,
    }
}
