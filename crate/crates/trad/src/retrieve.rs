//! Trajectory-wise retrieval by task meta-data and step-wise thought
//! retrieval with the distinct-trajectory top-k rule.
//!
//! Step retrieval scores every annotated step against the query thought,
//! keeps only the best step per trajectory (ties broken by lower step
//! index), then takes the k best survivors across trajectories (ties by
//! ascending trajectory id). The result is sorted by score descending and
//! never contains two steps from the same trajectory.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Memory, TaskSpec};
use crate::embed::{self, EmbedderSpec, EmbeddingVector, VectorIndex};
use crate::par::*;

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error(transparent)]
    Embed(#[from] embed::EmbedError),
    #[error("memory has unannotated steps; run thought preparation first")]
    Unannotated,
    #[error("k must be positive")]
    ZeroK,
}

/// A whole-trajectory hit from meta-data retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajHit {
    pub trajectory_id: String,
    pub score: f64,
}

/// A single-step hit from thought retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub trajectory_id: String,
    pub step_index: usize,
    pub score: f64,
    pub thought: String,
}

/// Embedding indexes built once over an immutable memory.
#[derive(Debug, Clone)]
pub struct MemoryIndex {
    embedder: EmbedderSpec,
    trajectories: VectorIndex,
    /// (trajectory_id, step_index) in ascending order, aligned with vectors.
    step_keys: Vec<(String, usize)>,
    step_vectors: Vec<EmbeddingVector>,
}

/// Retrieval key for a trajectory: the instruction plus sorted meta pairs.
pub fn trajectory_key(task: &TaskSpec) -> String {
    let mut key = task.instruction.clone();
    for (k, v) in &task.meta {
        key.push(' ');
        key.push_str(k);
        key.push(' ');
        key.push_str(v);
    }
    key
}

/// Build both indexes. Step keys cover annotations only, so an
/// unannotated memory yields an empty step index.
pub fn build_memory_index(
    memory: &Memory,
    embedder: &EmbedderSpec,
) -> Result<MemoryIndex, RetrieveError> {
    let traj_items: Vec<(String, String)> = memory
        .trajectories()
        .map(|t| (t.id().to_string(), trajectory_key(&t.task)))
        .collect();
    let trajectories = embed::build_index(&traj_items, embedder)?;

    let mut step_keys = Vec::with_capacity(memory.annotation_count());
    let mut texts = Vec::with_capacity(memory.annotation_count());
    for ann in memory.annotations() {
        step_keys.push((ann.trajectory_id.clone(), ann.step_index));
        texts.push(ann.thought.clone());
    }
    let step_vectors = embed::embed_batch(embedder, &texts)?;

    Ok(MemoryIndex {
        embedder: embedder.clone(),
        trajectories,
        step_keys,
        step_vectors,
    })
}

impl MemoryIndex {
    pub fn embedder(&self) -> &EmbedderSpec {
        &self.embedder
    }

    pub fn step_count(&self) -> usize {
        self.step_keys.len()
    }
}

/// Top-k trajectories by cosine over meta-data embeddings.
pub fn retrieve_trajectories(
    index: &MemoryIndex,
    task: &TaskSpec,
    k: usize,
) -> Result<Vec<TrajHit>, RetrieveError> {
    if k == 0 {
        return Err(RetrieveError::ZeroK);
    }
    let query = embed::embed(&index.embedder, &trajectory_key(task))?;
    let hits = embed::search(&index.trajectories, &query, k)?;
    Ok(hits
        .into_iter()
        .map(|(trajectory_id, score)| TrajHit { trajectory_id, score })
        .collect())
}

/// Step-wise thought retrieval: top-k steps from mutually different
/// trajectories.
pub fn retrieve_steps(
    memory: &Memory,
    index: &MemoryIndex,
    query_thought: &str,
    k: usize,
) -> Result<Vec<RetrievalHit>, RetrieveError> {
    if k == 0 {
        return Err(RetrieveError::ZeroK);
    }
    if !memory.is_fully_annotated() {
        return Err(RetrieveError::Unannotated);
    }
    let query = embed::embed(&index.embedder, query_thought)?;

    let scores: Vec<f64> = index
        .step_vectors
        .par_iter()
        .map(|v| embed::cosine(&query, v).expect("index dims are uniform"))
        .collect();

    // phase 1: best step per trajectory, ties to the lower step index
    let mut best: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for ((traj_id, step_index), score) in index.step_keys.iter().zip(&scores) {
        match best.get(traj_id.as_str()) {
            Some((_, s)) if *s >= *score => {}
            _ => {
                best.insert(traj_id, (*step_index, *score));
            }
        }
    }

    // phase 2: k best survivors, ties to the ascending trajectory id
    let mut survivors: Vec<RetrievalHit> = best
        .into_iter()
        .map(|(traj_id, (step_index, score))| RetrievalHit {
            trajectory_id: traj_id.to_string(),
            step_index,
            score,
            thought: memory
                .annotation(traj_id, step_index)
                .expect("index key references an annotation")
                .thought
                .clone(),
        })
        .collect();
    survivors.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.trajectory_id.cmp(&b.trajectory_id))
    });
    survivors.truncate(k);
    Ok(survivors)
}
