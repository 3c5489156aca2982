//! The nine-verb action grammar of the GridHouse world.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error)]
#[error("unparseable action: {0:?}")]
pub struct ActionParseError(pub String);

/// One household action. Every expert action parses under this grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GridAction {
    GoTo(String),
    Open(String),
    Take { object: String, from: String },
    Put { object: String, target: String },
    Clean { object: String, with: String },
    Heat { object: String, with: String },
    Cool { object: String, with: String },
    Use(String),
    Look,
}

fn split_once_infix<'a>(s: &'a str, infix: &str) -> Option<(&'a str, &'a str)> {
    s.split_once(infix)
        .filter(|(a, b)| !a.is_empty() && !b.is_empty())
}

impl GridAction {
    /// Parse a canonicalized (single-spaced, trimmed) action string.
    pub fn parse(raw: &str) -> Result<GridAction, ActionParseError> {
        let s = raw.split_whitespace().collect::<Vec<_>>().join(" ");
        if s == "look" {
            return Ok(GridAction::Look);
        }
        if let Some(rest) = s.strip_prefix("go to ") {
            if !rest.is_empty() {
                return Ok(GridAction::GoTo(rest.to_string()));
            }
        }
        if let Some(rest) = s.strip_prefix("open ") {
            if !rest.is_empty() {
                return Ok(GridAction::Open(rest.to_string()));
            }
        }
        if let Some(rest) = s.strip_prefix("take ") {
            if let Some((object, from)) = split_once_infix(rest, " from ") {
                return Ok(GridAction::Take {
                    object: object.to_string(),
                    from: from.to_string(),
                });
            }
        }
        if let Some(rest) = s.strip_prefix("put ") {
            if let Some((object, target)) = split_once_infix(rest, " in/on ") {
                return Ok(GridAction::Put {
                    object: object.to_string(),
                    target: target.to_string(),
                });
            }
        }
        for verb in ["clean", "heat", "cool"] {
            if let Some(rest) = s.strip_prefix(&format!("{verb} ")) {
                if let Some((object, with)) = split_once_infix(rest, " with ") {
                    let object = object.to_string();
                    let with = with.to_string();
                    return Ok(match verb {
                        "clean" => GridAction::Clean { object, with },
                        "heat" => GridAction::Heat { object, with },
                        _ => GridAction::Cool { object, with },
                    });
                }
            }
        }
        if let Some(rest) = s.strip_prefix("use ") {
            if !rest.is_empty() {
                return Ok(GridAction::Use(rest.to_string()));
            }
        }
        Err(ActionParseError(raw.to_string()))
    }
}

fn clean_heat_cool(f: &GridAction) -> Option<(&'static str, &String, &String)> {
    match f {
        GridAction::Clean { object, with } => Some(("clean", object, with)),
        GridAction::Heat { object, with } => Some(("heat", object, with)),
        GridAction::Cool { object, with } => Some(("cool", object, with)),
        _ => None,
    }
}

impl fmt::Display for GridAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridAction::GoTo(r) => write!(f, "go to {r}"),
            GridAction::Open(r) => write!(f, "open {r}"),
            GridAction::Take { object, from } => write!(f, "take {object} from {from}"),
            GridAction::Put { object, target } => write!(f, "put {object} in/on {target}"),
            a => {
                if let Some((verb, object, with)) = clean_heat_cool(a) {
                    write!(f, "{verb} {object} with {with}")
                } else if let GridAction::Use(o) = a {
                    write!(f, "use {o}")
                } else {
                    write!(f, "look")
                }
            }
        }
    }
}
