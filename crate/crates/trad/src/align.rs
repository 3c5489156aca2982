//! The aligned-decision transform: temporal expansion, relative order
//! marks, and history alignment.
//!
//! Each retrieved anchor step is expanded into a window of up to B
//! previous and F subsequent steps, every step is marked with its offset
//! from the anchor, and the live query is reshaped to mirror the
//! demonstration windows by attaching the most recent B+F history pairs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, CorpusError, Memory, Step, TaskSpec};
use crate::retrieve::RetrievalHit;

/// Sanity bound on expansion widths.
pub const MAX_EXPANSION: usize = 16;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("retrieval hit references missing step: trajectory {trajectory_id} step {step_index}")]
    DanglingHit { trajectory_id: String, step_index: usize },
    #[error("invalid expansion config: {0}")]
    InvalidConfig(String),
    #[error("history length mismatch: {observations} observations vs {actions} actions")]
    HistoryMismatch { observations: usize, actions: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// How prompts are assembled: full interleaved history, or a single-step
/// query carrying previous actions only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    FullHistory,
    SingleStep,
}

/// Expansion and prompt-shape knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    pub b: usize,
    pub f: usize,
    pub k: usize,
    pub include_demo_thoughts: bool,
    pub mode: PromptMode,
    /// Relative order marks rendered into prompts (ablation knob).
    pub rom_enabled: bool,
    /// History alignment rendered into prompts (ablation knob).
    pub ha_enabled: bool,
}

impl ExpansionConfig {
    pub fn full_history(k: usize, b: usize, f: usize) -> Self {
        ExpansionConfig {
            b,
            f,
            k,
            include_demo_thoughts: true,
            mode: PromptMode::FullHistory,
            rom_enabled: true,
            ha_enabled: true,
        }
    }

    pub fn single_step(k: usize, b: usize, f: usize) -> Self {
        ExpansionConfig {
            b,
            f,
            k,
            include_demo_thoughts: false,
            mode: PromptMode::SingleStep,
            rom_enabled: true,
            ha_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<(), AlignError> {
        if self.b > MAX_EXPANSION || self.f > MAX_EXPANSION {
            return Err(AlignError::InvalidConfig(format!(
                "b and f must be <= {MAX_EXPANSION}, got b={} f={}",
                self.b, self.f
            )));
        }
        if self.k == 0 {
            return Err(AlignError::InvalidConfig("k must be >= 1".into()));
        }
        Ok(())
    }
}

/// One marked demonstration step within an expanded window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoItem {
    pub offset: i64,
    pub mark: String,
    pub step: Step,
    pub thought: Option<String>,
}

/// A temporally expanded, order-marked window around a retrieved anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSequence {
    pub task: TaskSpec,
    pub items: Vec<DemoItem>,
    pub anchor_score: f64,
}

impl DemoSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// The prompt-ready combination of demos and an aligned live query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedContext {
    pub demos: Vec<DemoSequence>,
    /// (observation, action) pairs; observation is empty in single-step
    /// mode, which carries previous actions only.
    pub history: Vec<(String, String)>,
    pub current_observation: String,
    pub current_thought: Option<String>,
    pub mode: PromptMode,
    pub rom_enabled: bool,
}

impl AlignedContext {
    pub fn demo_step_count(&self) -> usize {
        self.demos.iter().map(|d| d.items.len()).sum()
    }
}

/// Expand one retrieved step into its marked window.
pub fn temporal_expand(
    memory: &Memory,
    hit: &RetrievalHit,
    cfg: &ExpansionConfig,
) -> Result<DemoSequence, AlignError> {
    cfg.validate()?;
    let trajectory = memory.trajectory(&hit.trajectory_id).ok_or_else(|| AlignError::DanglingHit {
        trajectory_id: hit.trajectory_id.clone(),
        step_index: hit.step_index,
    })?;
    if hit.step_index >= trajectory.steps.len() {
        return Err(AlignError::DanglingHit {
            trajectory_id: hit.trajectory_id.clone(),
            step_index: hit.step_index,
        });
    }
    let window = corpus::window(trajectory, hit.step_index, cfg.b, cfg.f)?;
    let items = window
        .into_iter()
        .map(|(offset, step)| DemoItem {
            offset,
            mark: format!("[Step {offset}]"),
            step: step.clone(),
            thought: if cfg.include_demo_thoughts {
                memory
                    .annotation(&hit.trajectory_id, step.index)
                    .map(|a| a.thought.clone())
            } else {
                None
            },
        })
        .collect();
    Ok(DemoSequence {
        task: trajectory.task.clone(),
        items,
        anchor_score: hit.score,
    })
}

/// The last `min(B+F, |actions|)` (observation, action) pairs in
/// chronological order. The current observation never appears here.
pub fn align_history(
    observations: &[String],
    actions: &[String],
    cfg: &ExpansionConfig,
) -> Result<Vec<(String, String)>, AlignError> {
    if observations.len() != actions.len() + 1 {
        return Err(AlignError::HistoryMismatch {
            observations: observations.len(),
            actions: actions.len(),
        });
    }
    let keep = (cfg.b + cfg.f).min(actions.len());
    let start = actions.len() - keep;
    Ok((start..actions.len())
        .map(|i| (observations[i].clone(), actions[i].clone()))
        .collect())
}

/// Assemble the aligned context: demos ordered by ascending anchor score
/// (most similar rendered last, nearest the query) plus the aligned query.
pub fn build_aligned_context(
    memory: &Memory,
    hits: &[RetrievalHit],
    observations: &[String],
    actions: &[String],
    current_thought: Option<&str>,
    cfg: &ExpansionConfig,
) -> Result<AlignedContext, AlignError> {
    cfg.validate()?;
    if observations.len() != actions.len() + 1 {
        return Err(AlignError::HistoryMismatch {
            observations: observations.len(),
            actions: actions.len(),
        });
    }
    let mut demos: Vec<DemoSequence> = hits
        .iter()
        .map(|h| temporal_expand(memory, h, cfg))
        .collect::<Result<_, _>>()?;
    demos.sort_by(|a, b| a.anchor_score.total_cmp(&b.anchor_score));

    let history = if !cfg.ha_enabled {
        Vec::new()
    } else {
        match cfg.mode {
            PromptMode::FullHistory => align_history(observations, actions, cfg)?,
            // single-step queries carry every previous action, no observations
            PromptMode::SingleStep => {
                actions.iter().map(|a| (String::new(), a.clone())).collect()
            }
        }
    };

    Ok(AlignedContext {
        demos,
        history,
        current_observation: observations.last().cloned().unwrap_or_default(),
        current_thought: current_thought.map(str::to_string),
        mode: cfg.mode,
        rom_enabled: cfg.rom_enabled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_trajectory;

    fn memory_with(n: usize) -> Memory {
        let mut m = Memory::new();
        m.insert_trajectory(test_trajectory("T", n)).unwrap();
        for i in 0..n {
            m.annotate("T", i, format!("thought {i}")).unwrap();
        }
        m
    }

    fn hit(step_index: usize, score: f64) -> RetrievalHit {
        RetrievalHit {
            trajectory_id: "T".into(),
            step_index,
            score,
            thought: format!("thought {step_index}"),
        }
    }

    #[test]
    fn single_item_when_b_and_f_are_zero() {
        let m = memory_with(5);
        let cfg = ExpansionConfig::full_history(1, 0, 0);
        let demo = temporal_expand(&m, &hit(2, 0.5), &cfg).unwrap();
        assert_eq!(demo.items.len(), 1);
        assert_eq!(demo.items[0].mark, "[Step 0]");
        assert_eq!(demo.items[0].thought.as_deref(), Some("thought 2"));
    }

    #[test]
    fn midpoint_window_marks() {
        let m = memory_with(5);
        let cfg = ExpansionConfig::full_history(1, 1, 1);
        let demo = temporal_expand(&m, &hit(2, 0.5), &cfg).unwrap();
        let marks: Vec<&str> = demo.items.iter().map(|i| i.mark.as_str()).collect();
        assert_eq!(marks, vec!["[Step -1]", "[Step 0]", "[Step 1]"]);
    }

    #[test]
    fn right_truncated_window_at_last_step() {
        let m = memory_with(5);
        let mut cfg = ExpansionConfig::full_history(1, 0, 2);
        cfg.include_demo_thoughts = false;
        let demo = temporal_expand(&m, &hit(4, 0.9), &cfg).unwrap();
        assert_eq!(demo.items.len(), 1);
        assert_eq!(demo.items[0].mark, "[Step 0]");
        assert!(demo.items[0].thought.is_none());
    }

    #[test]
    fn dangling_hit_is_an_error() {
        let m = memory_with(3);
        let cfg = ExpansionConfig::full_history(1, 0, 0);
        assert!(matches!(
            temporal_expand(&m, &hit(9, 0.5), &cfg),
            Err(AlignError::DanglingHit { step_index: 9, .. })
        ));
    }

    #[test]
    fn history_keeps_last_pairs() {
        let observations: Vec<String> = (0..6).map(|i| format!("o{i}")).collect();
        let actions: Vec<String> = (0..5).map(|i| format!("a{i}")).collect();
        let cfg = ExpansionConfig::full_history(1, 0, 2);
        let history = align_history(&observations, &actions, &cfg).unwrap();
        assert_eq!(history, vec![
            ("o3".to_string(), "a3".to_string()),
            ("o4".to_string(), "a4".to_string()),
        ]);

        let zero = ExpansionConfig::full_history(1, 0, 0);
        assert!(align_history(&observations, &actions, &zero).unwrap().is_empty());

        let wide = ExpansionConfig::full_history(1, 1, 2);
        let one = align_history(&["o0".into(), "o1".into()], &["a0".into()], &wide).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn history_mismatch_is_an_error() {
        let cfg = ExpansionConfig::full_history(1, 1, 1);
        assert!(matches!(
            align_history(&["o0".into()], &["a0".into()], &cfg),
            Err(AlignError::HistoryMismatch { .. })
        ));
    }

    #[test]
    fn demos_ordered_ascending_by_score() {
        let m = memory_with(5);
        let cfg = ExpansionConfig::full_history(2, 0, 0);
        let ctx = build_aligned_context(
            &m,
            &[hit(1, 0.9), hit(3, 0.7)],
            &["obs".to_string()],
            &[],
            None,
            &cfg,
        )
        .unwrap();
        assert_eq!(ctx.demos.len(), 2);
        assert!(ctx.demos[0].anchor_score <= ctx.demos[1].anchor_score);
        assert_eq!(ctx.demos[0].anchor_score, 0.7);
    }

    #[test]
    fn zero_hits_degrade_to_empty_demos() {
        let m = memory_with(3);
        let cfg = ExpansionConfig::full_history(1, 1, 1);
        let ctx = build_aligned_context(&m, &[], &["obs".to_string()], &[], None, &cfg).unwrap();
        assert!(ctx.demos.is_empty());
        assert_eq!(ctx.current_observation, "obs");
    }

    #[test]
    fn single_step_mode_keeps_all_actions_without_observations() {
        let m = memory_with(3);
        let cfg = ExpansionConfig::single_step(1, 0, 2);
        let observations: Vec<String> = (0..4).map(|i| format!("o{i}")).collect();
        let actions: Vec<String> = (0..3).map(|i| format!("a{i}")).collect();
        let ctx = build_aligned_context(&m, &[], &observations, &actions, None, &cfg).unwrap();
        assert_eq!(ctx.history.len(), 3);
        assert!(ctx.history.iter().all(|(o, _)| o.is_empty()));
        let acts: Vec<&str> = ctx.history.iter().map(|(_, a)| a.as_str()).collect();
        assert_eq!(acts, vec!["a0", "a1", "a2"]);
    }

    #[test]
    fn full_history_length_law() {
        let m = memory_with(3);
        for t in 0..6usize {
            for bf in 0..4usize {
                let cfg = ExpansionConfig::full_history(1, 0, bf);
                let observations: Vec<String> = (0..=t).map(|i| format!("o{i}")).collect();
                let actions: Vec<String> = (0..t).map(|i| format!("a{i}")).collect();
                let ctx =
                    build_aligned_context(&m, &[], &observations, &actions, None, &cfg).unwrap();
                assert_eq!(ctx.history.len(), t.min(bf));
                assert!(!ctx.history.iter().any(|(o, _)| o == &format!("o{t}")));
            }
        }
    }

    #[test]
    fn expansion_bounds_are_enforced() {
        let cfg = ExpansionConfig::full_history(1, 17, 0);
        assert!(cfg.validate().is_err());
        let cfg = ExpansionConfig::full_history(0, 1, 1);
        assert!(cfg.validate().is_err());
    }
}
