//! What an agent can know from its interaction history, and what to do
//! about it next.
//!
//! [`Knowledge`] is a pure fold over (observations, actions); the same
//! struct can be derived from the true environment state for the scripted
//! expert. [`next_phase`] maps knowledge to the current sub-goal, which
//! yields both the expert's next action and the deterministic thought text
//! used to label memory steps and to reason at inference time. Keeping all
//! three on one code path makes memory thoughts exactly consistent with
//! expert actions.

use std::collections::{BTreeMap, BTreeSet};

use super::grammar::GridAction;
use super::state::{class_of, GridTask, HouseState, TaskKind};

/// The parsed task goal: what to fetch, what to do to it, where it goes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Goal {
    pub kind: TaskKind,
    pub object_class: String,
    pub target_class: Option<String>,
}

impl Goal {
    pub fn of_task(task: &GridTask) -> Goal {
        Goal {
            kind: task.kind,
            object_class: task.object_class.clone(),
            target_class: task.target_class.clone(),
        }
    }

    /// Invert [`GridTask::instruction_for`].
    pub fn parse_instruction(instruction: &str) -> Option<Goal> {
        let s = instruction.trim().trim_end_matches('.');
        if let Some(rest) = s.strip_prefix("put some ") {
            let (obj, target) = rest.split_once(" on ")?;
            return Some(Goal {
                kind: TaskKind::Put,
                object_class: obj.to_string(),
                target_class: Some(target.to_string()),
            });
        }
        if let Some(rest) = s.strip_prefix("examine the ") {
            let obj = rest.strip_suffix(" under the desklamp")?;
            return Some(Goal {
                kind: TaskKind::Examine,
                object_class: obj.to_string(),
                target_class: None,
            });
        }
        for (prefix, kind) in [
            ("put a clean ", TaskKind::Clean),
            ("put a hot ", TaskKind::Heat),
            ("put a cool ", TaskKind::Cool),
            ("put two ", TaskKind::PutTwo),
        ] {
            if let Some(rest) = s.strip_prefix(prefix) {
                let (obj, target) = rest.split_once(" in/on ")?;
                return Some(Goal {
                    kind,
                    object_class: obj.to_string(),
                    target_class: Some(target.to_string()),
                });
            }
        }
        None
    }

    pub fn required_op(&self) -> Option<(&'static str, &'static str)> {
        match self.kind {
            TaskKind::Clean => Some(("clean", "sinkbasin")),
            TaskKind::Heat => Some(("heat", "microwave")),
            TaskKind::Cool => Some(("cool", "fridge")),
            _ => None,
        }
    }

    pub fn needed_count(&self) -> usize {
        if self.kind == TaskKind::PutTwo {
            2
        } else {
            1
        }
    }
}

/// Receptacle-class search priority for an object class. The expert and
/// the inference-time thought share this list, so search behavior matches.
pub fn class_priority(object_class: &str) -> &'static [&'static str] {
    match object_class {
        "apple" | "potato" | "tomato" | "bread" | "egg" => &[
            "fridge", "countertop", "microwave", "sinkbasin", "cabinet", "shelf", "garbagecan",
            "drawer", "sidetable", "desk", "bed", "toilet", "safe",
        ],
        "book" | "pencil" | "cd" | "keychain" | "creditcard" | "watch" => &[
            "desk", "sidetable", "shelf", "drawer", "bed", "cabinet", "safe", "countertop",
            "garbagecan", "toilet", "sinkbasin", "fridge", "microwave",
        ],
        "soapbottle" | "spraybottle" | "soapbar" | "cloth" => &[
            "sinkbasin", "toilet", "cabinet", "countertop", "shelf", "drawer", "garbagecan",
            "sidetable", "desk", "bed", "safe", "fridge", "microwave",
        ],
        "desklamp" => &[
            "desk", "sidetable", "shelf", "countertop", "bed", "cabinet", "drawer", "garbagecan",
            "toilet", "sinkbasin", "fridge", "microwave", "safe",
        ],
        _ => &[
            "shelf", "cabinet", "countertop", "sidetable", "desk", "drawer", "sinkbasin",
            "garbagecan", "toilet", "bed", "safe", "fridge", "microwave",
        ],
    }
}

/// Receptacle instances in search-priority order for an object class.
pub fn search_order(object_class: &str, receptacles: &[String]) -> Vec<String> {
    let priority = class_priority(object_class);
    let mut ordered = Vec::with_capacity(receptacles.len());
    for class in priority {
        let mut instances: Vec<&String> =
            receptacles.iter().filter(|r| class_of(r) == *class).collect();
        instances.sort();
        ordered.extend(instances.into_iter().cloned());
    }
    for r in receptacles {
        if !ordered.contains(r) {
            ordered.push(r.clone());
        }
    }
    ordered
}

/// Everything the agent knows at one point in time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Knowledge {
    pub receptacles: Vec<String>,
    /// Last-seen contents per receptacle; only receptacles whose contents
    /// have been shown appear here.
    pub contents: BTreeMap<String, Vec<String>>,
    /// Seen closed and not yet opened.
    pub closed: BTreeSet<String>,
    pub location: Option<String>,
    pub holding: Option<String>,
    /// Every object ever picked up, in order.
    pub taken: Vec<String>,
    /// Goal-class instances (and the desklamp) in discovery order.
    pub found: Vec<(String, String)>,
    /// Objects already treated with the goal's required operation.
    pub operated: BTreeSet<String>,
    pub examined: bool,
}

fn strip_period(s: &str) -> &str {
    s.strip_suffix('.').unwrap_or(s)
}

fn parse_list(s: &str) -> Vec<String> {
    if s == "nothing" {
        return Vec::new();
    }
    s.split(", ")
        .map(|item| item.trim_start_matches("and ").trim_start_matches("a ").to_string())
        .filter(|item| !item.is_empty())
        .collect()
}

impl Knowledge {
    /// Fold an interaction history. `observations` has one more element
    /// than `actions`; the last observation is the current one.
    pub fn from_history(goal: &Goal, observations: &[String], actions: &[String]) -> Knowledge {
        let mut k = Knowledge::default();
        if observations.is_empty() {
            return k;
        }
        k.absorb_observation(goal, &observations[0]);
        for (i, action) in actions.iter().enumerate() {
            if let Ok(parsed) = GridAction::parse(action) {
                if let GridAction::GoTo(r) = parsed {
                    k.location = Some(r);
                }
            }
            if let Some(obs) = observations.get(i + 1) {
                k.absorb_observation(goal, obs);
            }
        }
        k
    }

    /// The expert's view: derived from the true state's revealed set.
    pub fn from_env(goal: &Goal, state: &HouseState) -> Knowledge {
        let mut k = Knowledge {
            receptacles: state.receptacles.keys().cloned().collect(),
            location: state.agent_location.clone(),
            holding: state.holding.clone(),
            examined: state.examined.iter().any(|o| class_of(o) == goal.object_class),
            closed: state.seen_closed.clone(),
            ..Default::default()
        };
        for name in &state.revealed {
            if let Some(r) = state.receptacle(name) {
                k.contents.insert(name.clone(), r.contents.clone());
            }
        }
        if let Some(h) = &state.holding {
            k.taken.push(h.clone());
        }
        k.operated = match goal.required_op() {
            Some(("clean", _)) => state.cleaned.clone(),
            Some(("heat", _)) => state.heated.clone(),
            Some(("cool", _)) => state.cooled.clone(),
            _ => BTreeSet::new(),
        };
        for (r, contents) in &k.contents {
            for o in contents {
                if class_of(o) == goal.object_class || class_of(o) == "desklamp" {
                    k.found.push((o.clone(), r.clone()));
                }
            }
        }
        k
    }

    fn note_found(&mut self, goal: &Goal, object: &str, receptacle: &str) {
        let interesting = class_of(object) == goal.object_class || class_of(object) == "desklamp";
        if interesting && !self.found.iter().any(|(o, _)| o == object) {
            self.found.push((object.to_string(), receptacle.to_string()));
        }
    }

    fn set_contents(&mut self, goal: &Goal, receptacle: &str, contents: Vec<String>) {
        for o in &contents {
            self.note_found(goal, o, receptacle);
        }
        self.contents.insert(receptacle.to_string(), contents);
        self.closed.remove(receptacle);
    }

    fn absorb_observation(&mut self, goal: &Goal, obs: &str) {
        let obs = strip_period(obs);
        if let Some(rest) =
            obs.strip_prefix("You are in the middle of a room. Looking quickly around you, you see ")
        {
            self.receptacles = parse_list(rest);
            return;
        }
        if let Some(rest) = obs.strip_prefix("You open the ") {
            // "You open the R. The R is open. In it, you see LIST"
            if let Some((r, _)) = rest.split_once(". ") {
                if let Some((_, list)) = rest.split_once("In it, you see ") {
                    let r = r.to_string();
                    self.set_contents(goal, &r, parse_list(list));
                }
            }
            return;
        }
        if let Some(rest) = obs.strip_prefix("The ") {
            if let Some(r) = rest.strip_suffix(" is closed") {
                self.closed.insert(r.to_string());
                return;
            }
            // "The R is open. In it, you see LIST"
            if let Some((r, list)) = rest
                .split_once(" is open. In it, you see ")
                .map(|(r, l)| (r.to_string(), l))
            {
                self.set_contents(goal, &r, parse_list(list));
                return;
            }
        }
        if let Some(rest) = obs.strip_prefix("On the ") {
            if let Some((r, list)) = rest.split_once(", you see ") {
                let r = r.to_string();
                self.set_contents(goal, &r, parse_list(list));
            }
            return;
        }
        if let Some(rest) = obs.strip_prefix("You pick up the ") {
            if let Some((object, r)) = rest.split_once(" from the ") {
                self.holding = Some(object.to_string());
                self.taken.push(object.to_string());
                if let Some(c) = self.contents.get_mut(r) {
                    c.retain(|o| o != object);
                }
            }
            return;
        }
        if let Some(rest) = obs.strip_prefix("You put the ") {
            if let Some((object, r)) = rest.split_once(" in/on the ") {
                self.holding = None;
                self.note_found(goal, object, r);
                if let Some(c) = self.contents.get_mut(r) {
                    c.push(object.to_string());
                } else {
                    self.contents.insert(r.to_string(), vec![object.to_string()]);
                }
            }
            return;
        }
        for verb in ["clean", "heat", "cool"] {
            if let Some(rest) = obs.strip_prefix(&format!("You {verb} the ")) {
                if let Some((object, _)) = rest.split_once(" using the ") {
                    if goal.required_op().map(|(v, _)| v) == Some(verb) {
                        self.operated.insert(object.to_string());
                    }
                }
                return;
            }
        }
        if obs.strip_prefix("You turn on the ").is_some() {
            if let Some(h) = &self.holding {
                if class_of(h) == goal.object_class {
                    self.examined = true;
                }
            }
        }
        // "Nothing happens." and anything unrecognized carry no information
    }

    /// Goal-class instances whose location is known and which still need
    /// moving: not already sitting (operated, if required) in the target.
    fn pending_instances(&self, goal: &Goal) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (r, contents) in &self.contents {
            for o in contents {
                if class_of(o) != goal.object_class {
                    continue;
                }
                if self.instance_satisfies(goal, o, r) {
                    continue;
                }
                out.push((o.clone(), r.clone()));
            }
        }
        out.sort();
        out
    }

    fn instance_satisfies(&self, goal: &Goal, object: &str, receptacle: &str) -> bool {
        let in_target = goal
            .target_class
            .as_deref()
            .map(|t| class_of(receptacle) == t)
            .unwrap_or(false);
        in_target && (goal.required_op().is_none() || self.operated.contains(object))
    }

    fn satisfied_count(&self, goal: &Goal) -> usize {
        self.contents
            .iter()
            .flat_map(|(r, contents)| contents.iter().map(move |o| (o, r)))
            .filter(|(o, r)| {
                class_of(o) == goal.object_class && self.instance_satisfies(goal, o, r)
            })
            .count()
    }

    pub fn is_done(&self, goal: &Goal) -> bool {
        match goal.kind {
            TaskKind::Examine => self.examined,
            _ => self.satisfied_count(goal) >= goal.needed_count(),
        }
    }

    fn next_unknown(&self, object_class: &str) -> Option<String> {
        search_order(object_class, &self.receptacles)
            .into_iter()
            .find(|r| !self.contents.contains_key(r))
    }

    fn lamp(&self) -> Option<(String, String)> {
        self.found
            .iter()
            .find(|(o, _)| class_of(o) == "desklamp")
            .cloned()
    }

    fn lowest_instance_of(&self, class: &str) -> Option<String> {
        self.receptacles
            .iter()
            .filter(|r| class_of(r) == class)
            .min()
            .cloned()
    }
}

/// One rendered demonstration-following sub-goal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Phase {
    FindGoal { class: String, next: String },
    OpenHere { receptacle: String },
    GoKnown { object: String, receptacle: String },
    TakeHere { object: String, receptacle: String },
    GoAppliance { object: String, appliance: String, verb: &'static str },
    OperateHere { object: String, appliance: String, verb: &'static str },
    FindLamp { object: String, next: String },
    GoLamp { lamp: String, receptacle: String },
    UseHere { lamp: String, object: String },
    GoTarget { object: String, target: String },
    PutHere { object: String, target: String },
    Unload { object: String, receptacle: String, here: bool },
    Done,
    Exhausted,
}

/// Standing at a receptacle seen closed whose contents are unknown:
/// opening it is always the next search move.
fn open_here_if_unknown(k: &Knowledge) -> Option<Phase> {
    let loc = k.location.as_ref()?;
    if k.closed.contains(loc) && !k.contents.contains_key(loc) {
        Some(Phase::OpenHere { receptacle: loc.clone() })
    } else {
        None
    }
}

/// Decide the next sub-goal from current knowledge.
pub fn next_phase(goal: &Goal, k: &Knowledge) -> Phase {
    if k.is_done(goal) {
        return Phase::Done;
    }
    if let Some(h) = k.holding.clone() {
        if class_of(&h) != goal.object_class {
            let receptacle = k
                .location
                .clone()
                .or_else(|| k.receptacles.first().cloned())
                .unwrap_or_else(|| "floor 1".to_string());
            let here = k.location.as_deref() == Some(receptacle.as_str());
            return Phase::Unload { object: h, receptacle, here };
        }
        if goal.kind == TaskKind::Examine {
            return match k.lamp() {
                Some((lamp, receptacle)) => {
                    if k.location.as_deref() == Some(receptacle.as_str()) {
                        Phase::UseHere { lamp, object: h }
                    } else {
                        Phase::GoLamp { lamp, receptacle }
                    }
                }
                None => {
                    if let Some(open) = open_here_if_unknown(k) {
                        return open;
                    }
                    match k.next_unknown("desklamp") {
                        Some(next) => Phase::FindLamp { object: h, next },
                        None => Phase::Exhausted,
                    }
                }
            };
        }
        if let Some((verb, appliance_class)) = goal.required_op() {
            if !k.operated.contains(&h) {
                let appliance = match k.lowest_instance_of(appliance_class) {
                    Some(a) => a,
                    None => return Phase::Exhausted,
                };
                return if k.location.as_deref() == Some(appliance.as_str()) {
                    Phase::OperateHere { object: h, appliance, verb }
                } else {
                    Phase::GoAppliance { object: h, appliance, verb }
                };
            }
        }
        let target = match goal
            .target_class
            .as_deref()
            .and_then(|t| k.lowest_instance_of(t))
        {
            Some(t) => t,
            None => return Phase::Exhausted,
        };
        return if k.location.as_deref() == Some(target.as_str()) {
            if k.closed.contains(&target) {
                Phase::OpenHere { receptacle: target }
            } else {
                Phase::PutHere { object: h, target }
            }
        } else {
            Phase::GoTarget { object: h, target }
        };
    }
    // empty-handed: fetch the next pending instance, or keep searching
    if let Some((object, receptacle)) = k.pending_instances(goal).first().cloned() {
        return if k.location.as_deref() == Some(receptacle.as_str()) {
            Phase::TakeHere { object, receptacle }
        } else {
            Phase::GoKnown { object, receptacle }
        };
    }
    if let Some(open) = open_here_if_unknown(k) {
        return open;
    }
    match k.next_unknown(&goal.object_class) {
        Some(next) => Phase::FindGoal { class: goal.object_class.clone(), next },
        None => Phase::Exhausted,
    }
}

impl Phase {
    pub fn action(&self) -> GridAction {
        match self {
            Phase::FindGoal { next, .. } | Phase::FindLamp { next, .. } => {
                GridAction::GoTo(next.clone())
            }
            Phase::OpenHere { receptacle } => GridAction::Open(receptacle.clone()),
            Phase::GoKnown { receptacle, .. } | Phase::GoLamp { receptacle, .. } => {
                GridAction::GoTo(receptacle.clone())
            }
            Phase::TakeHere { object, receptacle } => GridAction::Take {
                object: object.clone(),
                from: receptacle.clone(),
            },
            Phase::GoAppliance { appliance, .. } => GridAction::GoTo(appliance.clone()),
            Phase::OperateHere { object, appliance, verb } => {
                let object = object.clone();
                let with = appliance.clone();
                match *verb {
                    "clean" => GridAction::Clean { object, with },
                    "heat" => GridAction::Heat { object, with },
                    _ => GridAction::Cool { object, with },
                }
            }
            Phase::UseHere { lamp, .. } => GridAction::Use(lamp.clone()),
            Phase::GoTarget { target, .. } => GridAction::GoTo(target.clone()),
            Phase::PutHere { object, target } => GridAction::Put {
                object: object.clone(),
                target: target.clone(),
            },
            Phase::Unload { object, receptacle, here } => {
                if *here {
                    GridAction::Put {
                        object: object.clone(),
                        target: receptacle.clone(),
                    }
                } else {
                    GridAction::GoTo(receptacle.clone())
                }
            }
            Phase::Done | Phase::Exhausted => GridAction::Look,
        }
    }

    /// The last line of the rendered thought. Names concrete entities so a
    /// demonstration follower can ground its copied action template.
    pub fn sentence(&self) -> String {
        match self {
            Phase::FindGoal { class, next } => format!(
                "I have not found the {class} I need yet. Next, I need to find a {class}. I will check the {next}."
            ),
            Phase::OpenHere { receptacle } => {
                format!("The {receptacle} is closed. Next, I need to open the {receptacle}.")
            }
            Phase::GoKnown { object, receptacle } => format!(
                "The {object} is in/on the {receptacle}. Next, I need to go to the {receptacle} to take it."
            ),
            Phase::TakeHere { object, receptacle } => format!(
                "I have found the {object} in/on the {receptacle}. Next, I need to take the {object} from the {receptacle}."
            ),
            Phase::GoAppliance { object, appliance, verb } => format!(
                "I have taken the {object}. Next, I need to go to the {appliance} to {verb} it."
            ),
            Phase::OperateHere { object, appliance, verb } => format!(
                "I am at the {appliance}. Next, I need to {verb} the {object} with the {appliance}."
            ),
            Phase::FindLamp { object, next } => format!(
                "I have taken the {object}. Next, I need to find the desklamp. I will check the {next}."
            ),
            Phase::GoLamp { lamp, receptacle } => format!(
                "The {lamp} is in/on the {receptacle}. Next, I need to go to the {receptacle} to use it."
            ),
            Phase::UseHere { lamp, object } => format!(
                "The {lamp} is here. Next, I need to use the {lamp} to examine the {object}."
            ),
            Phase::GoTarget { object, target } => format!(
                "The {object} is ready. Next, I need to go to the {target} to put it there."
            ),
            Phase::PutHere { object, target } => format!(
                "I am at the {target}. Next, I need to put the {object} in/on the {target}."
            ),
            Phase::Unload { object, receptacle, .. } => format!(
                "I am holding the {object}, which I do not need. Next, I need to put the {object} in/on the {receptacle}."
            ),
            Phase::Done => "The task is complete.".to_string(),
            Phase::Exhausted => "I cannot find what I need. Next, I need to look around.".to_string(),
        }
    }
}

/// The deterministic thought for one point in an episode.
pub fn render_thought(goal: &Goal, k: &Knowledge) -> String {
    let phase = next_phase(goal, k);
    let mut out = String::new();
    out.push_str("I am now in/on: ");
    out.push_str(k.location.as_deref().unwrap_or("the middle of a room"));
    out.push('\n');
    out.push_str("Critical objects I have found:\n");
    if k.found.is_empty() {
        out.push_str("None\n");
    } else {
        for (o, r) in &k.found {
            out.push_str(&format!("{o} ({r})\n"));
        }
    }
    out.push_str("Objects I have taken:\n");
    if k.taken.is_empty() {
        out.push_str("None\n");
    } else {
        for o in &k.taken {
            out.push_str(o);
            out.push('\n');
        }
    }
    out.push_str(&phase.sentence());
    out
}
