//! Prompt rendering from data templates, and parsing of model output
//! back into thoughts and actions.
//!
//! Templates are data files (TOML with `{{name}}` placeholders); the shipped
//! defaults cover the household and web flavors. The per-line layout of
//! demonstrations and queries (the `obs:` / `act:` / `think:` prefixes,
//! section headers, and `[Step i]` marks) is part of the wire format that
//! the scripted backend parses, so it lives here as constants.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{AlignedContext, DemoSequence, PromptMode};
use crate::corpus::{Memory, Step, TaskSpec, Trajectory};
use crate::world::GridAction;

pub const EXAMPLES_HEADER: &str = "Here are some examples.";
pub const DEMOS_HEADER: &str = "Here are some expert demonstration steps.";
pub const TASK_HEADER: &str = "Here is the task.";
pub const OBS_PREFIX: &str = "obs: ";
pub const ACT_PREFIX: &str = "act: ";
pub const THINK_PREFIX: &str = "think: ";
pub const REASON_PREFIX: &str = "reason: ";
pub const PREV_ACTIONS_HEADER: &str = "previous actions:";
pub const GRID_TASK_PREFIX: &str = "Your task is to: ";
pub const WEB_TASK_PREFIX: &str = "Task: ";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unresolved placeholder {{{{{0}}}}}")]
    UnresolvedPlaceholder(String),
    #[error("no action candidate found in model output")]
    NoParse,
    #[error("candidate action fails the grammar: {0:?}")]
    InvalidAction(String),
    #[error("empty thought")]
    EmptyThought,
    #[error("target step has no expert action")]
    MissingAction,
    #[error("need at least one exemplar trajectory")]
    NoExemplars,
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One chat turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }
}

/// Deterministic byte serialization of a prompt, used for hashing and for
/// byte-equality checks.
pub fn prompt_bytes(messages: &[ChatMessage]) -> Vec<u8> {
    let mut out = Vec::new();
    for m in messages {
        out.extend_from_slice(match m.role {
            Role::System => b"system\x1f",
            Role::User => b"user\x1f",
            Role::Assistant => b"assistant\x1f",
        });
        out.extend_from_slice(m.content.as_bytes());
        out.push(0x1e);
    }
    out
}

/// Action-string grammar for output parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionGrammar {
    GridHouse,
    Web,
}

/// A parsed web-navigation action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WebAction {
    pub op: String,
    pub element_id: String,
    pub value: Option<String>,
}

impl WebAction {
    pub fn parse(raw: &str) -> Option<WebAction> {
        let s = raw.split_whitespace().collect::<Vec<_>>().join(" ");
        for op in ["CLICK", "TYPE", "SELECT"] {
            if let Some(rest) = s.strip_prefix(op) {
                let rest = rest.trim_start();
                let rest = rest.strip_prefix('[')?;
                let (id, tail) = rest.split_once(']')?;
                if id.is_empty() || id.contains('[') {
                    return None;
                }
                if op == "CLICK" {
                    if !tail.trim().is_empty() {
                        return None;
                    }
                    return Some(WebAction {
                        op: op.to_string(),
                        element_id: id.to_string(),
                        value: None,
                    });
                }
                let tail = tail.trim_start();
                let tail = tail.strip_prefix('[')?;
                let value = tail.strip_suffix(']')?;
                if value.contains(']') {
                    return None;
                }
                return Some(WebAction {
                    op: op.to_string(),
                    element_id: id.to_string(),
                    value: Some(value.to_string()),
                });
            }
        }
        None
    }
}

impl std::fmt::Display for WebAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.value {
            Some(v) => write!(f, "{} [{}] [{}]", self.op, self.element_id, v),
            None => write!(f, "{} [{}]", self.op, self.element_id),
        }
    }
}

fn canonicalize(candidate: &str, grammar: ActionGrammar) -> Option<String> {
    match grammar {
        ActionGrammar::GridHouse => GridAction::parse(candidate).ok().map(|a| a.to_string()),
        ActionGrammar::Web => WebAction::parse(candidate).map(|a| a.to_string()),
    }
}

/// Extract an action from raw model output: the first backtick-quoted span
/// if present, else the first line matching the grammar.
pub fn parse_action(raw: &str, grammar: ActionGrammar) -> Result<String, PromptError> {
    if let Some(start) = raw.find('`') {
        if let Some(len) = raw[start + 1..].find('`') {
            let span = &raw[start + 1..start + 1 + len];
            return canonicalize(span, grammar)
                .ok_or_else(|| PromptError::InvalidAction(span.to_string()));
        }
    }
    for line in raw.lines() {
        let line = line.trim().trim_start_matches("> ");
        let line = line
            .strip_prefix(ACT_PREFIX)
            .or_else(|| line.strip_prefix("action: "))
            .unwrap_or(line)
            .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(canonical) = canonicalize(line, grammar) {
            return Ok(canonical);
        }
    }
    Err(PromptError::NoParse)
}

/// Strip a leading `think:` / `reason:` cue and return the remainder.
pub fn parse_thought(raw: &str) -> Result<String, PromptError> {
    let trimmed = raw.trim();
    let mut lines = trimmed.lines();
    let first = lines.next().unwrap_or("").trim_start_matches("> ");
    let first = first
        .strip_prefix("think:")
        .or_else(|| first.strip_prefix("reason:"))
        .unwrap_or(first)
        .trim_start();
    let mut out = first.to_string();
    for line in lines {
        out.push('\n');
        out.push_str(line);
    }
    let out = out.trim().to_string();
    if out.is_empty() {
        return Err(PromptError::EmptyThought);
    }
    Ok(out)
}

/// Wording and block formats for one prompt flavor, loaded from data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub preamble: String,
    pub rom_note: String,
    pub thought_cue: String,
    pub act_cue: String,
    pub demo_block_format: String,
    pub query_block_format: String,
}

static GRIDHOUSE_TEMPLATE: OnceLock<PromptTemplate> = OnceLock::new();
static WEB_TEMPLATE: OnceLock<PromptTemplate> = OnceLock::new();

impl PromptTemplate {
    pub fn from_toml_str(text: &str) -> Result<PromptTemplate, PromptError> {
        let mut t: PromptTemplate =
            toml::from_str(text).map_err(|e| PromptError::InvalidTemplate(e.to_string()))?;
        for field in [
            &mut t.preamble,
            &mut t.rom_note,
            &mut t.demo_block_format,
            &mut t.query_block_format,
        ] {
            *field = field.trim().to_string();
        }
        Ok(t)
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<PromptTemplate, PromptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PromptError::InvalidTemplate(e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn gridhouse() -> &'static PromptTemplate {
        GRIDHOUSE_TEMPLATE.get_or_init(|| {
            Self::from_toml_str(include_str!("../templates/gridhouse.toml"))
                .expect("bundled template parses")
        })
    }

    pub fn web() -> &'static PromptTemplate {
        WEB_TEMPLATE.get_or_init(|| {
            Self::from_toml_str(include_str!("../templates/web.toml"))
                .expect("bundled template parses")
        })
    }

    pub fn for_grammar(grammar: ActionGrammar) -> &'static PromptTemplate {
        match grammar {
            ActionGrammar::GridHouse => Self::gridhouse(),
            ActionGrammar::Web => Self::web(),
        }
    }
}

fn fill(format: &str, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = format.to_string();
    for (name, value) in bindings {
        out = out.replace(&format!("{{{{{name}}}}}"), value);
    }
    if let Some(start) = out.find("{{") {
        let rest = &out[start + 2..];
        let name = rest.split("}}").next().unwrap_or(rest);
        return Err(PromptError::UnresolvedPlaceholder(name.to_string()));
    }
    Ok(out)
}

/// A full demonstration trajectory with per-step thoughts when available.
#[derive(Debug, Clone)]
pub struct TrajDemo<'a> {
    pub trajectory: &'a Trajectory,
    pub thoughts: Vec<Option<String>>,
}

impl<'a> TrajDemo<'a> {
    pub fn from_memory(memory: &'a Memory, trajectory_id: &str, include_thoughts: bool) -> Option<TrajDemo<'a>> {
        let trajectory = memory.trajectory(trajectory_id)?;
        let thoughts = trajectory
            .steps
            .iter()
            .map(|s| {
                if include_thoughts {
                    memory.annotation(trajectory_id, s.index).map(|a| a.thought.clone())
                } else {
                    None
                }
            })
            .collect();
        Some(TrajDemo { trajectory, thoughts })
    }
}

/// Demonstration material for an action prompt.
pub enum DemoBlock<'a> {
    /// An aligned window with relative order marks.
    Window(&'a DemoSequence),
    /// A complete trajectory (trajectory-wise baselines).
    Trajectory(&'a TrajDemo<'a>),
    /// Loose single steps (step-sampling baselines).
    Steps {
        task: &'a TaskSpec,
        steps: Vec<(&'a Step, Option<&'a str>)>,
    },
}

fn push_thought_line(out: &mut String, mark: &str, cue: &str, thought: &str) {
    let mut lines = thought.lines();
    if let Some(first) = lines.next() {
        out.push_str(&format!("{mark}{cue} {first}\n"));
        for line in lines {
            out.push_str(line);
            out.push('\n');
        }
    }
}

fn render_demo_steps(
    items: impl Iterator<Item = (Option<String>, Step, Option<String>)>,
    thought_cue: &str,
    with_marks: bool,
) -> String {
    let mut out = String::new();
    for (mark, step, thought) in items {
        let mark = if with_marks {
            mark.map(|m| format!("{m} ")).unwrap_or_default()
        } else {
            String::new()
        };
        out.push_str(&format!("{mark}{OBS_PREFIX}{}\n", step.observation));
        if let Some(thought) = thought {
            push_thought_line(&mut out, &mark, thought_cue, &thought);
        }
        out.push_str(&format!("{mark}{ACT_PREFIX}{}\n", step.action));
    }
    out.trim_end().to_string()
}

fn render_demo_block(
    template: &PromptTemplate,
    block: &DemoBlock<'_>,
    rom_enabled: bool,
) -> Result<String, PromptError> {
    let (instruction, steps) = match block {
        DemoBlock::Window(demo) => (
            demo.task.instruction.clone(),
            render_demo_steps(
                demo.items
                    .iter()
                    .map(|i| (Some(i.mark.clone()), i.step.clone(), i.thought.clone())),
                &template.thought_cue,
                rom_enabled,
            ),
        ),
        DemoBlock::Trajectory(demo) => (
            demo.trajectory.task.instruction.clone(),
            render_demo_steps(
                demo.trajectory
                    .steps
                    .iter()
                    .zip(&demo.thoughts)
                    .map(|(s, t)| (None, s.clone(), t.clone())),
                &template.thought_cue,
                false,
            ),
        ),
        DemoBlock::Steps { task, steps } => (
            task.instruction.clone(),
            render_demo_steps(
                steps
                    .iter()
                    .map(|(s, t)| (None, (*s).clone(), t.map(str::to_string))),
                &template.thought_cue,
                false,
            ),
        ),
    };
    fill(&template.demo_block_format, &[("instruction", &instruction), ("steps", &steps)])
}

fn render_query_block(
    template: &PromptTemplate,
    instruction: &str,
    body: &str,
) -> Result<String, PromptError> {
    fill(&template.query_block_format, &[("instruction", instruction), ("body", body)])
}

fn full_history_body(
    history: &[(String, String)],
    current_observation: &str,
    thought: Option<&str>,
    thought_cue: &str,
    cue: &str,
) -> String {
    let mut body = String::new();
    for (obs, act) in history {
        body.push_str(&format!("{OBS_PREFIX}{obs}\n"));
        body.push_str(&format!("{ACT_PREFIX}{act}\n"));
    }
    body.push_str(&format!("{OBS_PREFIX}{current_observation}\n"));
    if let Some(t) = thought {
        push_thought_line(&mut body, "", thought_cue, t);
    }
    body.push_str(cue);
    body
}

fn single_step_body(
    actions: &[String],
    current_observation: &str,
    thought: Option<&str>,
    thought_cue: &str,
    cue: &str,
) -> String {
    let mut body = String::new();
    body.push_str(PREV_ACTIONS_HEADER);
    body.push('\n');
    for act in actions {
        body.push_str(act);
        body.push('\n');
    }
    body.push_str(&format!("{OBS_PREFIX}{current_observation}\n"));
    if let Some(t) = thought {
        push_thought_line(&mut body, "", thought_cue, t);
    }
    body.push_str(cue);
    body
}

fn assemble(
    template: &PromptTemplate,
    header: &str,
    demo_blocks: Vec<String>,
    query: String,
    include_rom_note: bool,
) -> Vec<ChatMessage> {
    let mut system = template.preamble.clone();
    if include_rom_note {
        system.push_str("\n\n");
        system.push_str(&template.rom_note);
    }
    let mut user = String::new();
    if !demo_blocks.is_empty() {
        user.push_str(header);
        user.push('\n');
        for block in demo_blocks {
            user.push_str(&block);
            user.push_str("\n\n");
        }
    }
    user.push_str(TASK_HEADER);
    user.push('\n');
    user.push_str(&query);
    vec![ChatMessage::system(system), ChatMessage::user(user)]
}

/// The prompt that asks for a thought about the current state, with whole
/// retrieved trajectories as demonstrations.
pub fn render_thought_prompt(
    template: &PromptTemplate,
    demos: &[TrajDemo<'_>],
    task: &TaskSpec,
    observations: &[String],
    actions: &[String],
    mode: PromptMode,
) -> Result<Vec<ChatMessage>, PromptError> {
    let blocks = demos
        .iter()
        .map(|d| render_demo_block(template, &DemoBlock::Trajectory(d), false))
        .collect::<Result<Vec<_>, _>>()?;
    let current = observations.last().cloned().unwrap_or_default();
    let body = match mode {
        PromptMode::FullHistory => {
            let history: Vec<(String, String)> = observations
                .iter()
                .take(actions.len())
                .cloned()
                .zip(actions.iter().cloned())
                .collect();
            full_history_body(&history, &current, None, &template.thought_cue, &template.thought_cue)
        }
        PromptMode::SingleStep => {
            single_step_body(actions, &current, None, &template.thought_cue, &template.thought_cue)
        }
    };
    let query = render_query_block(template, &task.instruction, &body)?;
    Ok(assemble(template, EXAMPLES_HEADER, blocks, query, false))
}

/// The offline labeling prompt: the target step's expert action is shown
/// before the thought cue, so labeled thoughts stay consistent with it.
pub fn render_preparation_prompt(
    template: &PromptTemplate,
    exemplars: &[TrajDemo<'_>],
    target: &Trajectory,
    step_index: usize,
) -> Result<Vec<ChatMessage>, PromptError> {
    if exemplars.is_empty() {
        return Err(PromptError::NoExemplars);
    }
    let step = target.steps.get(step_index).ok_or(PromptError::MissingAction)?;
    if step.action.is_empty() {
        return Err(PromptError::MissingAction);
    }
    let blocks = exemplars
        .iter()
        .map(|d| render_demo_block(template, &DemoBlock::Trajectory(d), false))
        .collect::<Result<Vec<_>, _>>()?;

    let mut body = String::new();
    for s in &target.steps[..=step_index] {
        body.push_str(&format!("{OBS_PREFIX}{}\n", s.observation));
        body.push_str(&format!("{ACT_PREFIX}{}\n", s.action));
    }
    body.push_str(&template.thought_cue);
    let query = render_query_block(template, &target.task.instruction, &body)?;
    Ok(assemble(template, EXAMPLES_HEADER, blocks, query, false))
}

/// The aligned action-prediction prompt.
pub fn render_action_prompt(
    template: &PromptTemplate,
    ctx: &AlignedContext,
    task: &TaskSpec,
) -> Result<Vec<ChatMessage>, PromptError> {
    let blocks = ctx
        .demos
        .iter()
        .map(|d| render_demo_block(template, &DemoBlock::Window(d), ctx.rom_enabled))
        .collect::<Result<Vec<_>, _>>()?;
    let marked = ctx.rom_enabled && ctx.demos.iter().any(|d| !d.items.is_empty());
    let body = match ctx.mode {
        PromptMode::FullHistory => full_history_body(
            &ctx.history,
            &ctx.current_observation,
            ctx.current_thought.as_deref(),
            &template.thought_cue,
            &template.act_cue,
        ),
        PromptMode::SingleStep => {
            let actions: Vec<String> = ctx.history.iter().map(|(_, a)| a.clone()).collect();
            single_step_body(
                &actions,
                &ctx.current_observation,
                ctx.current_thought.as_deref(),
                &template.thought_cue,
                &template.act_cue,
            )
        }
    };
    let query = render_query_block(template, &task.instruction, &body)?;
    Ok(assemble(template, DEMOS_HEADER, blocks, query, marked))
}

/// Action prompts for the trajectory-wise and step-sampling baselines:
/// unmarked demos, untrimmed history.
#[allow(clippy::too_many_arguments)]
pub fn render_baseline_action_prompt(
    template: &PromptTemplate,
    demos: &[DemoBlock<'_>],
    task: &TaskSpec,
    observations: &[String],
    actions: &[String],
    thought: Option<&str>,
    mode: PromptMode,
) -> Result<Vec<ChatMessage>, PromptError> {
    let blocks = demos
        .iter()
        .map(|d| render_demo_block(template, d, false))
        .collect::<Result<Vec<_>, _>>()?;
    let current = observations.last().cloned().unwrap_or_default();
    let body = match mode {
        PromptMode::FullHistory => {
            let history: Vec<(String, String)> = observations
                .iter()
                .take(actions.len())
                .cloned()
                .zip(actions.iter().cloned())
                .collect();
            full_history_body(&history, &current, thought, &template.thought_cue, &template.act_cue)
        }
        PromptMode::SingleStep => {
            single_step_body(actions, &current, thought, &template.thought_cue, &template.act_cue)
        }
    };
    let query = render_query_block(template, &task.instruction, &body)?;
    Ok(assemble(template, DEMOS_HEADER, blocks, query, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::ExpansionConfig;
    use crate::corpus::test_trajectory;
    use crate::retrieve::RetrievalHit;
    use proptest::prelude::*;

    fn sample_task() -> TaskSpec {
        TaskSpec {
            task_id: "q".into(),
            instruction: "put some vase on shelf.".into(),
            domain_tag: "gridhouse".into(),
            meta: Default::default(),
        }
    }

    fn annotated_memory() -> Memory {
        let mut m = Memory::new();
        m.insert_trajectory(test_trajectory("D1", 4)).unwrap();
        m.insert_trajectory(test_trajectory("D2", 3)).unwrap();
        for id in ["D1", "D2"] {
            let n = m.trajectory(id).unwrap().steps.len();
            for i in 0..n {
                m.annotate(id, i, format!("thought {i} of {id}")).unwrap();
            }
        }
        m
    }

    #[test]
    fn thought_prompt_contains_cue_and_is_deterministic() {
        let m = annotated_memory();
        let demos = vec![
            TrajDemo::from_memory(&m, "D1", true).unwrap(),
            TrajDemo::from_memory(&m, "D2", true).unwrap(),
        ];
        let t = PromptTemplate::gridhouse();
        let obs = vec!["o0".to_string(), "o1".to_string()];
        let acts = vec!["look".to_string()];
        let a = render_thought_prompt(t, &demos, &sample_task(), &obs, &acts, PromptMode::FullHistory)
            .unwrap();
        let b = render_thought_prompt(t, &demos, &sample_task(), &obs, &acts, PromptMode::FullHistory)
            .unwrap();
        assert_eq!(prompt_bytes(&a), prompt_bytes(&b));
        let user = &a[1].content;
        assert!(user.contains("think:"));
        assert!(user.ends_with("think:"));
        // demos appear in given order
        let d1 = user.find("instruction for D1").unwrap();
        let d2 = user.find("instruction for D2").unwrap();
        assert!(d1 < d2);

        // zero demos: preamble + query only
        let none =
            render_thought_prompt(t, &[], &sample_task(), &obs, &acts, PromptMode::FullHistory)
                .unwrap();
        assert!(none[1].content.starts_with(TASK_HEADER));
    }

    #[test]
    fn preparation_prompt_shows_expert_action_before_cue() {
        let m = annotated_memory();
        let exemplars = vec![TrajDemo::from_memory(&m, "D1", true).unwrap()];
        let target = test_trajectory("T", 3);
        let t = PromptTemplate::gridhouse();
        let msgs = render_preparation_prompt(t, &exemplars, &target, 1).unwrap();
        let user = &msgs[1].content;
        assert!(user.contains("act: act 1 of T"));
        let act_pos = user.rfind("act: act 1 of T").unwrap();
        let cue_pos = user.rfind("think:").unwrap();
        assert!(act_pos < cue_pos);

        assert!(matches!(
            render_preparation_prompt(t, &[], &target, 1),
            Err(PromptError::NoExemplars)
        ));
        let again = render_preparation_prompt(t, &exemplars, &target, 1).unwrap();
        assert_eq!(prompt_bytes(&msgs), prompt_bytes(&again));
    }

    #[test]
    fn action_prompt_renders_marks_and_rom_note() {
        let m = annotated_memory();
        let cfg = ExpansionConfig::full_history(1, 1, 1);
        let hit = RetrievalHit {
            trajectory_id: "D1".into(),
            step_index: 1,
            score: 0.8,
            thought: "x".into(),
        };
        let ctx = crate::align::build_aligned_context(
            &m,
            &[hit],
            &["o0".to_string()],
            &[],
            Some("a thought"),
            &cfg,
        )
        .unwrap();
        let msgs = render_action_prompt(PromptTemplate::gridhouse(), &ctx, &sample_task()).unwrap();
        let all = format!("{}\n{}", msgs[0].content, msgs[1].content);
        for mark in ["[Step -1]", "[Step 0]", "[Step 1]"] {
            assert!(all.contains(mark), "missing {mark}");
        }
        assert!(msgs[0].content.contains("[Step i]"), "rom note present");

        // empty demos: no rom note
        let empty = crate::align::build_aligned_context(&m, &[], &["o0".to_string()], &[], None, &cfg)
            .unwrap();
        let msgs = render_action_prompt(PromptTemplate::gridhouse(), &empty, &sample_task()).unwrap();
        assert!(!msgs[0].content.contains("[Step i]"));
    }

    #[test]
    fn single_step_query_omits_previous_observations() {
        let m = annotated_memory();
        let cfg = ExpansionConfig::single_step(1, 0, 2);
        let observations: Vec<String> =
            (0..4).map(|i| format!("candidates page {i}")).collect();
        let actions: Vec<String> = (0..3).map(|i| format!("CLICK [{i}]")).collect();
        let ctx =
            crate::align::build_aligned_context(&m, &[], &observations, &actions, None, &cfg)
                .unwrap();
        let msgs = render_action_prompt(PromptTemplate::web(), &ctx, &sample_task()).unwrap();
        let user = &msgs[1].content;
        assert!(user.contains(PREV_ACTIONS_HEADER));
        for i in 0..3 {
            assert!(!user.contains(&format!("candidates page {i}")), "o_{i} leaked");
            assert!(user.contains(&format!("CLICK [{i}]")));
        }
        assert!(user.contains("candidates page 3"));
    }

    #[test]
    fn parse_action_examples() {
        assert_eq!(
            parse_action("`CLICK [896]` is my choice", ActionGrammar::Web).unwrap(),
            "CLICK [896]"
        );
        assert_eq!(
            parse_action("act: go to cabinet 1", ActionGrammar::GridHouse).unwrap(),
            "go to cabinet 1"
        );
        assert!(matches!(
            parse_action("I think we should wait", ActionGrammar::GridHouse),
            Err(PromptError::NoParse)
        ));
        assert!(matches!(
            parse_action("`FROB [1]`", ActionGrammar::Web),
            Err(PromptError::InvalidAction(_))
        ));
        assert_eq!(
            parse_action("reasoning...\n> act: put vase 1 in/on shelf 2", ActionGrammar::GridHouse)
                .unwrap(),
            "put vase 1 in/on shelf 2"
        );
        assert_eq!(
            parse_action("`TYPE [45] [New York]`", ActionGrammar::Web).unwrap(),
            "TYPE [45] [New York]"
        );
    }

    #[test]
    fn parse_thought_examples() {
        assert_eq!(
            parse_thought("think: I am now in/on: toilet 1").unwrap(),
            "I am now in/on: toilet 1"
        );
        assert_eq!(
            parse_thought("reason: I have to find: the thing").unwrap(),
            "I have to find: the thing"
        );
        assert!(matches!(parse_thought(""), Err(PromptError::EmptyThought)));
        assert!(matches!(parse_thought("think:  "), Err(PromptError::EmptyThought)));
        let multi = parse_thought("think: line one\nline two").unwrap();
        assert_eq!(multi, "line one\nline two");
    }

    #[test]
    fn unresolved_placeholder_is_an_error() {
        let mut t = PromptTemplate::gridhouse().clone();
        t.query_block_format = "Task {{instruction}} with {{mystery}}".into();
        let err = render_thought_prompt(
            &t,
            &[],
            &sample_task(),
            &["o".to_string()],
            &[],
            PromptMode::FullHistory,
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::UnresolvedPlaceholder(name) if name == "mystery"));
    }

    proptest! {
        /// parse_action round-trips every grammar-valid gridhouse action.
        #[test]
        fn gridhouse_action_roundtrip(verb in 0usize..9, obj in 1usize..4, rcpt in 1usize..4) {
            let object = format!("vase {obj}");
            let target = format!("shelf {rcpt}");
            let action = match verb {
                0 => format!("go to {target}"),
                1 => format!("open {target}"),
                2 => format!("take {object} from {target}"),
                3 => format!("put {object} in/on {target}"),
                4 => format!("clean {object} with sinkbasin {rcpt}"),
                5 => format!("heat {object} with microwave {rcpt}"),
                6 => format!("cool {object} with fridge {rcpt}"),
                7 => format!("use desklamp {obj}"),
                _ => "look".to_string(),
            };
            let rendered = format!("{ACT_PREFIX}{action}");
            prop_assert_eq!(parse_action(&rendered, ActionGrammar::GridHouse).unwrap(), action);
        }

        #[test]
        fn web_action_roundtrip(op in 0usize..3, id in 0u32..10_000, value in "[a-zA-Z0-9 ]{1,12}") {
            // canonical form is single-spaced
            let value = value.split_whitespace().collect::<Vec<_>>().join(" ");
            prop_assume!(!value.is_empty());
            let action = match op {
                0 => format!("CLICK [{id}]"),
                1 => format!("TYPE [{id}] [{value}]"),
                _ => format!("SELECT [{id}] [{value}]"),
            };
            let rendered = format!("some text\n`{action}`\nmore");
            prop_assert_eq!(parse_action(&rendered, ActionGrammar::Web).unwrap(), action);
        }
    }
}
