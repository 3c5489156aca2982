//! House layout, task generation, and step semantics.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grammar::GridAction;

/// Strip the trailing instance number: "cabinet 1" -> "cabinet".
pub fn class_of(name: &str) -> &str {
    name.rsplit_once(' ').map(|(c, _)| c).unwrap_or(name)
}

const OPENABLE: &[&str] = &["cabinet", "drawer", "fridge", "microwave", "safe"];

/// (class, max instances per house)
const RECEPTACLE_POOL: &[(&str, usize)] = &[
    ("countertop", 2),
    ("shelf", 3),
    ("sidetable", 2),
    ("desk", 1),
    ("cabinet", 4),
    ("drawer", 3),
    ("garbagecan", 1),
    ("toilet", 1),
    ("bed", 1),
    ("sinkbasin", 2),
    ("fridge", 1),
    ("microwave", 1),
    ("safe", 1),
];

const TARGET_CLASSES: &[&str] = &["countertop", "shelf", "sidetable", "desk", "cabinet", "toilet", "bed"];

const FILLER_OBJECTS: &[&str] = &[
    "apple", "potato", "tomato", "bread", "egg", "mug", "cup", "plate", "bowl", "soapbottle",
    "spraybottle", "soapbar", "cloth", "book", "pencil", "cd", "keychain", "creditcard", "watch",
    "vase", "statue",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum TaskKind {
    Put,
    Examine,
    Clean,
    Heat,
    Cool,
    PutTwo,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Put,
        TaskKind::Examine,
        TaskKind::Clean,
        TaskKind::Heat,
        TaskKind::Cool,
        TaskKind::PutTwo,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Put => "put",
            TaskKind::Examine => "examine",
            TaskKind::Clean => "clean",
            TaskKind::Heat => "heat",
            TaskKind::Cool => "cool",
            TaskKind::PutTwo => "puttwo",
        }
    }

    pub fn from_name(s: &str) -> Option<TaskKind> {
        Self::ALL.iter().copied().find(|k| k.name() == s)
    }

    fn object_pool(&self) -> &'static [&'static str] {
        match self {
            TaskKind::Put => &["vase", "statue", "soapbottle", "spraybottle", "keychain", "watch", "bowl"],
            TaskKind::Examine => &["book", "pencil", "cd", "creditcard", "watch"],
            TaskKind::Clean => &["apple", "mug", "cup", "plate", "bowl", "cloth", "soapbar"],
            TaskKind::Heat => &["apple", "potato", "tomato", "bread", "egg"],
            TaskKind::Cool => &["apple", "potato", "tomato", "bread", "mug"],
            TaskKind::PutTwo => &["vase", "book", "pencil", "cd", "soapbar", "cup"],
        }
    }

    fn appliance_class(&self) -> Option<&'static str> {
        match self {
            TaskKind::Clean => Some("sinkbasin"),
            TaskKind::Heat => Some("microwave"),
            TaskKind::Cool => Some("fridge"),
            _ => None,
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receptacle {
    pub name: String,
    pub class: String,
    pub openable: bool,
    pub open: bool,
    pub contents: Vec<String>,
}

impl Receptacle {
    /// Contents are visible on arrival: surfaces always, openables when open.
    pub fn visible(&self) -> bool {
        !self.openable || self.open
    }
}

/// Full world state. An object is in exactly one receptacle or held.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HouseState {
    pub receptacles: BTreeMap<String, Receptacle>,
    pub agent_location: Option<String>,
    pub holding: Option<String>,
    pub cleaned: BTreeSet<String>,
    pub heated: BTreeSet<String>,
    pub cooled: BTreeSet<String>,
    /// Objects that were held when a desklamp was switched on.
    pub examined: BTreeSet<String>,
    /// Receptacles whose contents have been shown to the agent.
    pub revealed: BTreeSet<String>,
    /// Receptacles the agent has seen closed and not yet opened.
    pub seen_closed: BTreeSet<String>,
}

impl HouseState {
    pub fn receptacle(&self, name: &str) -> Option<&Receptacle> {
        self.receptacles.get(name)
    }

    pub fn object_location(&self, object: &str) -> Option<&str> {
        self.receptacles
            .values()
            .find(|r| r.contents.iter().any(|o| o == object))
            .map(|r| r.name.as_str())
    }

    pub fn all_objects(&self) -> Vec<String> {
        let mut objects: Vec<String> = self
            .receptacles
            .values()
            .flat_map(|r| r.contents.iter().cloned())
            .collect();
        if let Some(h) = &self.holding {
            objects.push(h.clone());
        }
        objects.sort();
        objects
    }

    fn list(items: &[String]) -> String {
        if items.is_empty() {
            "nothing".to_string()
        } else {
            items
                .iter()
                .map(|o| format!("a {o}"))
                .collect::<Vec<_>>()
                .join(", ")
        }
    }

    pub fn room_description(&self) -> String {
        let names: Vec<&str> = self.receptacles.keys().map(String::as_str).collect();
        let listed = match names.len() {
            0 => String::from("nothing"),
            1 => format!("a {}", names[0]),
            _ => {
                let head = names[..names.len() - 1]
                    .iter()
                    .map(|n| format!("a {n}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                format!("{head}, and a {}", names[names.len() - 1])
            }
        };
        format!(
            "You are in the middle of a room. Looking quickly around you, you see {listed}."
        )
    }

    /// What the agent sees on arriving at (or looking at) a receptacle.
    /// Updates the revealed / seen-closed bookkeeping.
    fn arrival_view(&mut self, name: &str) -> String {
        let r = &self.receptacles[name];
        if r.openable && !r.open {
            self.seen_closed.insert(name.to_string());
            format!("The {name} is closed.")
        } else if r.openable {
            let view = format!("The {name} is open. In it, you see {}.", Self::list(&r.contents));
            self.revealed.insert(name.to_string());
            view
        } else {
            let view = format!("On the {name}, you see {}.", Self::list(&r.contents));
            self.revealed.insert(name.to_string());
            view
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GridTask {
    pub kind: TaskKind,
    pub object_class: String,
    pub target_class: Option<String>,
    pub instruction: String,
}

impl GridTask {
    pub fn instruction_for(kind: TaskKind, object_class: &str, target_class: Option<&str>) -> String {
        match kind {
            TaskKind::Put => format!("put some {object_class} on {}.", target_class.unwrap()),
            TaskKind::Examine => format!("examine the {object_class} under the desklamp."),
            TaskKind::Clean => format!("put a clean {object_class} in/on {}.", target_class.unwrap()),
            TaskKind::Heat => format!("put a hot {object_class} in/on {}.", target_class.unwrap()),
            TaskKind::Cool => format!("put a cool {object_class} in/on {}.", target_class.unwrap()),
            TaskKind::PutTwo => format!("put two {object_class} in/on {}.", target_class.unwrap()),
        }
    }

    /// Has the goal been reached in this state?
    pub fn satisfied(&self, state: &HouseState) -> bool {
        match self.kind {
            TaskKind::Examine => state
                .examined
                .iter()
                .any(|o| class_of(o) == self.object_class),
            _ => {
                let target = self.target_class.as_deref().unwrap_or_default();
                let needed = if self.kind == TaskKind::PutTwo { 2 } else { 1 };
                let ok = |o: &str| match self.kind {
                    TaskKind::Clean => state.cleaned.contains(o),
                    TaskKind::Heat => state.heated.contains(o),
                    TaskKind::Cool => state.cooled.contains(o),
                    _ => true,
                };
                let count = state
                    .receptacles
                    .values()
                    .filter(|r| r.class == target)
                    .flat_map(|r| r.contents.iter())
                    .filter(|o| class_of(o) == self.object_class && ok(o))
                    .count();
                count >= needed
            }
        }
    }
}

/// Deterministic seeded layout: 6-12 receptacles, 8-20 objects, solvable.
pub fn generate_task(seed: u64, kind: TaskKind) -> (HouseState, GridTask) {
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ (kind.name().bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64))),
    );

    let object_class = kind.object_pool().choose(&mut rng).unwrap().to_string();
    let target_class = match kind {
        TaskKind::Examine => None,
        _ => {
            let candidates: Vec<&str> = TARGET_CLASSES
                .iter()
                .copied()
                .filter(|c| Some(*c) != kind.appliance_class())
                .collect();
            Some(candidates.choose(&mut rng).unwrap().to_string())
        }
    };

    // required receptacle classes first, then random fill to 6..=12
    let mut instance_counts: BTreeMap<&str, usize> = BTreeMap::new();
    let require = |class: &'static str, counts: &mut BTreeMap<&str, usize>| {
        counts.entry(class).or_insert(1);
    };
    if let Some(t) = target_class.as_deref() {
        let t = RECEPTACLE_POOL.iter().find(|(c, _)| *c == t).unwrap().0;
        require(t, &mut instance_counts);
    }
    if let Some(a) = kind.appliance_class() {
        require(a, &mut instance_counts);
    }
    if kind == TaskKind::Examine {
        // a surface for the desklamp
        require("desk", &mut instance_counts);
    }
    let total_receptacles = rng.gen_range(6..=12);
    let mut guard = 0;
    while instance_counts.values().sum::<usize>() < total_receptacles && guard < 1000 {
        guard += 1;
        let (class, max) = RECEPTACLE_POOL[rng.gen_range(0..RECEPTACLE_POOL.len())];
        let n = instance_counts.entry(class).or_insert(0);
        if *n < max {
            *n += 1;
        }
    }

    let mut receptacles = BTreeMap::new();
    for (class, count) in &instance_counts {
        for i in 1..=*count {
            let name = format!("{class} {i}");
            let openable = OPENABLE.contains(class);
            receptacles.insert(
                name.clone(),
                Receptacle {
                    name,
                    class: class.to_string(),
                    openable,
                    open: openable && rng.gen_bool(0.5),
                    contents: Vec::new(),
                },
            );
        }
    }

    let mut state = HouseState {
        receptacles,
        agent_location: None,
        holding: None,
        cleaned: BTreeSet::new(),
        heated: BTreeSet::new(),
        cooled: BTreeSet::new(),
        examined: BTreeSet::new(),
        revealed: BTreeSet::new(),
        seen_closed: BTreeSet::new(),
    };

    let names: Vec<String> = state.receptacles.keys().cloned().collect();
    let non_target: Vec<&String> = names
        .iter()
        .filter(|n| Some(class_of(n)) != target_class.as_deref())
        .collect();

    // goal instances never start inside the target class
    let needed = if kind == TaskKind::PutTwo { 2 } else { 1 };
    for i in 1..=needed {
        let spot = non_target[rng.gen_range(0..non_target.len())].clone();
        state
            .receptacles
            .get_mut(&spot)
            .unwrap()
            .contents
            .push(format!("{object_class} {i}"));
    }

    // a desklamp on a surface, always visible on arrival
    let surfaces: Vec<&String> = names
        .iter()
        .filter(|n| !state.receptacles[*n].openable)
        .collect();
    let lamp_spot = surfaces[rng.gen_range(0..surfaces.len())].clone();
    state
        .receptacles
        .get_mut(&lamp_spot)
        .unwrap()
        .contents
        .push("desklamp 1".to_string());

    // filler objects of other classes, anywhere
    let n_objects = rng.gen_range(8..=20usize);
    let mut class_counters: BTreeMap<&str, usize> = BTreeMap::new();
    for _ in 0..n_objects.saturating_sub(needed + 1) {
        let class = loop {
            let c = FILLER_OBJECTS[rng.gen_range(0..FILLER_OBJECTS.len())];
            if c != object_class {
                break c;
            }
        };
        let n = class_counters.entry(class).or_insert(0);
        *n += 1;
        let spot = names[rng.gen_range(0..names.len())].clone();
        state
            .receptacles
            .get_mut(&spot)
            .unwrap()
            .contents
            .push(format!("{class} {n}"));
    }

    let instruction = GridTask::instruction_for(kind, &object_class, target_class.as_deref());
    let task = GridTask {
        kind,
        object_class,
        target_class,
        instruction,
    };
    (state, task)
}

/// Apply a parsed action. Returns the observation plus done/success flags.
/// Invalid-but-parseable actions return "Nothing happens." without state
/// change.
pub fn apply_action(state: &mut HouseState, task: &GridTask, action: &GridAction) -> (String, bool, bool) {
    let nothing = || ("Nothing happens.".to_string(), false, false);
    let obs = match action {
        GridAction::Look => match state.agent_location.clone() {
            None => state.room_description(),
            Some(r) => state.arrival_view(&r),
        },
        GridAction::GoTo(r) => {
            if !state.receptacles.contains_key(r) {
                return nothing();
            }
            state.agent_location = Some(r.clone());
            state.arrival_view(r)
        }
        GridAction::Open(r) => {
            let at = state.agent_location.as_deref() == Some(r.as_str());
            let openable_closed = state
                .receptacle(r)
                .map(|x| x.openable && !x.open)
                .unwrap_or(false);
            if !at || !openable_closed {
                return nothing();
            }
            state.receptacles.get_mut(r).unwrap().open = true;
            state.seen_closed.remove(r);
            state.revealed.insert(r.clone());
            let contents = HouseState::list(&state.receptacles[r].contents);
            format!("You open the {r}. The {r} is open. In it, you see {contents}.")
        }
        GridAction::Take { object, from } => {
            let at = state.agent_location.as_deref() == Some(from.as_str());
            let ok = state
                .receptacle(from)
                .map(|r| r.visible() && r.contents.iter().any(|o| o == object))
                .unwrap_or(false);
            if !at || !ok || state.holding.is_some() {
                return nothing();
            }
            let r = state.receptacles.get_mut(from).unwrap();
            r.contents.retain(|o| o != object);
            state.holding = Some(object.clone());
            format!("You pick up the {object} from the {from}.")
        }
        GridAction::Put { object, target } => {
            let at = state.agent_location.as_deref() == Some(target.as_str());
            let visible = state.receptacle(target).map(|r| r.visible()).unwrap_or(false);
            if !at || !visible || state.holding.as_deref() != Some(object.as_str()) {
                return nothing();
            }
            state.receptacles.get_mut(target).unwrap().contents.push(object.clone());
            state.holding = None;
            format!("You put the {object} in/on the {target}.")
        }
        GridAction::Clean { object, with }
        | GridAction::Heat { object, with }
        | GridAction::Cool { object, with } => {
            let (verb, class) = match action {
                GridAction::Clean { .. } => ("clean", "sinkbasin"),
                GridAction::Heat { .. } => ("heat", "microwave"),
                _ => ("cool", "fridge"),
            };
            let at = state.agent_location.as_deref() == Some(with.as_str());
            let right_appliance = state.receptacle(with).map(|r| r.class == class).unwrap_or(false);
            if !at || !right_appliance || state.holding.as_deref() != Some(object.as_str()) {
                return nothing();
            }
            match verb {
                "clean" => state.cleaned.insert(object.clone()),
                "heat" => state.heated.insert(object.clone()),
                _ => state.cooled.insert(object.clone()),
            };
            format!("You {verb} the {object} using the {with}.")
        }
        GridAction::Use(object) => {
            if class_of(object) != "desklamp" {
                return nothing();
            }
            let here = state
                .agent_location
                .as_deref()
                .and_then(|loc| state.receptacle(loc))
                .map(|r| r.visible() && r.contents.iter().any(|o| o == object))
                .unwrap_or(false);
            if !here {
                return nothing();
            }
            if let Some(h) = &state.holding {
                state.examined.insert(h.clone());
            }
            format!("You turn on the {object}.")
        }
    };
    let success = task.satisfied(state);
    (obs, success, success)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let (s1, t1) = generate_task(42, TaskKind::Put);
        let (s2, t2) = generate_task(42, TaskKind::Put);
        assert_eq!(s1, s2);
        assert_eq!(t1, t2);
        let (s3, _) = generate_task(43, TaskKind::Put);
        assert_ne!(s1, s3);
    }

    #[test]
    fn puttwo_places_two_instances() {
        for seed in 0..20 {
            let (state, task) = generate_task(seed, TaskKind::PutTwo);
            let count = state
                .all_objects()
                .iter()
                .filter(|o| class_of(o) == task.object_class)
                .count();
            assert_eq!(count, 2, "seed {seed}");
        }
    }

    #[test]
    fn goal_objects_never_start_in_target() {
        for seed in 0..50 {
            for kind in TaskKind::ALL {
                let (state, task) = generate_task(seed, kind);
                if let Some(target) = &task.target_class {
                    for r in state.receptacles.values().filter(|r| &r.class == target) {
                        assert!(
                            !r.contents.iter().any(|o| class_of(o) == task.object_class),
                            "seed {seed} kind {kind}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn closed_receptacle_reports_closed() {
        let (mut state, task) = generate_task(1, TaskKind::Put);
        let closed: Option<String> = state
            .receptacles
            .values()
            .find(|r| r.openable && !r.open)
            .map(|r| r.name.clone());
        if let Some(name) = closed {
            let (obs, _, _) = apply_action(&mut state, &task, &GridAction::GoTo(name.clone()));
            assert_eq!(obs, format!("The {name} is closed."));
            let (obs, _, _) = apply_action(&mut state, &task, &GridAction::Open(name.clone()));
            assert!(obs.starts_with(&format!("You open the {name}.")));
        }
    }

    #[test]
    fn use_away_from_lamp_does_nothing() {
        let (mut state, task) = generate_task(3, TaskKind::Examine);
        // agent is in the middle of the room, lamp is on some receptacle
        let (obs, _, _) = apply_action(&mut state, &task, &GridAction::Use("desklamp 1".into()));
        assert_eq!(obs, "Nothing happens.");
    }

    #[test]
    fn conservation_of_objects() {
        let (mut state, task) = generate_task(7, TaskKind::Clean);
        let before = state.all_objects();
        let names: Vec<String> = state.receptacles.keys().cloned().collect();
        for (i, name) in names.iter().enumerate() {
            let _ = apply_action(&mut state, &task, &GridAction::GoTo(name.clone()));
            if i % 2 == 0 {
                let _ = apply_action(&mut state, &task, &GridAction::Open(name.clone()));
            }
            if let Some(obj) = state.receptacles[name].contents.first().cloned() {
                let _ = apply_action(
                    &mut state,
                    &task,
                    &GridAction::Take { object: obj, from: name.clone() },
                );
            }
        }
        assert_eq!(state.all_objects(), before);
    }
}
