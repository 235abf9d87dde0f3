//! Command templates with `{name}` placeholders.

use crate::error::ConfigError;
use crate::paramspace::{ParameterPoint, ParameterSpace};

pub const INPUT: &str = "input";
pub const OUTPUT: &str = "output";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

/// A tokenized command line. Placeholders may contain spaces
/// (`{Curvature Weight}`); single or double quotes group words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandTemplate {
    args: Vec<Vec<Piece>>,
}

impl CommandTemplate {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let err = |m: String| ConfigError::new("workflow.command", m);
        let mut args = Vec::new();
        let mut cur: Vec<Piece> = Vec::new();
        let mut buf = String::new();
        let mut in_arg = false;
        let mut quote: Option<char> = None;
        let mut chars = text.chars();
        while let Some(c) = chars.next() {
            match c {
                '{' => {
                    let mut name = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some('{') | None => return Err(err(format!("unterminated placeholder in `{text}`"))),
                            Some(ch) => name.push(ch),
                        }
                    }
                    if name.trim().is_empty() {
                        return Err(err("empty placeholder".into()));
                    }
                    if !buf.is_empty() {
                        cur.push(Piece::Text(std::mem::take(&mut buf)));
                    }
                    cur.push(Piece::Slot(name));
                    in_arg = true;
                }
                '}' => return Err(err(format!("unmatched `}}` in `{text}`"))),
                q @ ('\'' | '"') if quote.is_none() => {
                    quote = Some(q);
                    in_arg = true;
                }
                q if Some(q) == quote => quote = None,
                ws if ws.is_whitespace() && quote.is_none() => {
                    if in_arg {
                        if !buf.is_empty() {
                            cur.push(Piece::Text(std::mem::take(&mut buf)));
                        }
                        args.push(std::mem::take(&mut cur));
                        in_arg = false;
                    }
                }
                other => {
                    buf.push(other);
                    in_arg = true;
                }
            }
        }
        if quote.is_some() {
            return Err(err(format!("unterminated quote in `{text}`")));
        }
        if in_arg {
            if !buf.is_empty() {
                cur.push(Piece::Text(buf));
            }
            args.push(cur);
        }
        if args.is_empty() {
            return Err(err("empty command".into()));
        }
        if args[0].iter().any(|p| matches!(p, Piece::Slot(_))) {
            return Err(err("the program name cannot be a placeholder".into()));
        }
        Ok(Self { args })
    }

    fn slots(&self) -> impl Iterator<Item = &str> {
        self.args.iter().flatten().filter_map(|p| match p {
            Piece::Slot(s) => Some(s.as_str()),
            Piece::Text(_) => None,
        })
    }

    /// Every dimension must appear exactly once, `{input}` and `{output}` at
    /// least once, and nothing else.
    pub fn validate(&self, space: &ParameterSpace) -> Result<(), ConfigError> {
        for d in space.dims() {
            let n = self.slots().filter(|s| *s == d.name).count();
            if n != 1 {
                return Err(ConfigError::new(
                    "workflow.command",
                    format!("placeholder `{{{}}}` must appear exactly once (found {n})", d.name),
                ));
            }
        }
        for reserved in [INPUT, OUTPUT] {
            if !self.slots().any(|s| s == reserved) {
                return Err(ConfigError::new("workflow.command", format!("missing `{{{reserved}}}` placeholder")));
            }
        }
        if let Some(s) = self.slots().find(|s| *s != INPUT && *s != OUTPUT && space.dim_index(s).is_none()) {
            return Err(ConfigError::new("workflow.command", format!("unknown placeholder `{{{s}}}`")));
        }
        Ok(())
    }

    /// The argument vector for one run; the template must be valid for `space`.
    pub fn render(&self, space: &ParameterSpace, point: &ParameterPoint, input: &str, output: &str) -> Vec<String> {
        self.args
            .iter()
            .map(|pieces| {
                pieces
                    .iter()
                    .map(|p| match p {
                        Piece::Text(t) => t.clone(),
                        Piece::Slot(s) if s == INPUT => input.to_string(),
                        Piece::Slot(s) if s == OUTPUT => output.to_string(),
                        Piece::Slot(s) => point.get(space, s).map(|v| v.to_string()).unwrap_or_default(),
                    })
                    .collect()
            })
            .collect()
    }
}
