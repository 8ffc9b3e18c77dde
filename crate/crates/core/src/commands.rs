//! Low-level control commands and their text format.
//!
//! ```text
//! 0 CREATE q3 (2,3)
//! 0 MOVE q3 (2,3)->(2,4)
//! 10 OP CNOT I4 (2,2) q2 q0
//! ```

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Micros;

/// `(row, col)` of a well.
pub type Pos = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommandKind {
    Create { qubit: u32, at: Pos },
    Move { qubit: u32, from: Pos, to: Pos },
    /// `instruction` is the 1-based program index.
    Op { opcode: String, instruction: usize, at: Pos, operands: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub time: Micros,
    pub kind: CommandKind,
}

impl Command {
    fn rank(&self) -> (u8, usize) {
        match &self.kind {
            CommandKind::Create { qubit, .. } => (0, *qubit as usize),
            CommandKind::Op { instruction, .. } => (1, *instruction),
            CommandKind::Move { qubit, .. } => (2, *qubit as usize),
        }
    }

    /// Qubits this command touches.
    pub fn qubits(&self) -> Vec<u32> {
        match &self.kind {
            CommandKind::Create { qubit, .. } | CommandKind::Move { qubit, .. } => vec![*qubit],
            CommandKind::Op { operands, .. } => operands.clone(),
        }
    }
}

impl PartialOrd for Command {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Command {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.rank())
            .cmp(&(other.time, other.rank()))
            .then_with(|| format!("{self}").cmp(&format!("{other}")))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            CommandKind::Create { qubit, at } => write!(f, "{} CREATE q{} ({},{})", self.time, qubit, at.0, at.1),
            CommandKind::Move { qubit, from, to } => {
                write!(f, "{} MOVE q{} ({},{})->({},{})", self.time, qubit, from.0, from.1, to.0, to.1)
            }
            CommandKind::Op { opcode, instruction, at, operands } => {
                write!(f, "{} OP {} I{} ({},{})", self.time, opcode, instruction, at.0, at.1)?;
                for q in operands {
                    write!(f, " q{q}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct StreamParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandStream {
    pub commands: Vec<Command>,
}

impl CommandStream {
    /// Sorted by (time, kind, id).
    pub fn new(mut commands: Vec<Command>) -> Self {
        commands.sort();
        Self { commands }
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.commands {
            s.push_str(&c.to_string());
            s.push('\n');
        }
        s
    }

    /// Parse the text format. Order in the file is kept as written.
    pub fn parse(text: &str) -> Result<Self, StreamParseError> {
        let mut commands = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            commands.push(parse_line(line).map_err(|message| StreamParseError { line: k + 1, message })?);
        }
        Ok(Self { commands })
    }
}

impl FromStr for CommandStream {
    type Err = StreamParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

fn parse_line(line: &str) -> Result<Command, String> {
    let mut parts = line.split_whitespace();
    let time: Micros = parts.next().ok_or("missing time")?.parse().map_err(|_| "bad time".to_string())?;
    let verb = parts.next().ok_or("missing command")?;
    let kind = match verb {
        "CREATE" => {
            let qubit = parse_qubit(parts.next().ok_or("missing qubit")?)?;
            let at = parse_pos(parts.next().ok_or("missing position")?)?;
            CommandKind::Create { qubit, at }
        }
        "MOVE" => {
            let qubit = parse_qubit(parts.next().ok_or("missing qubit")?)?;
            let hop = parts.next().ok_or("missing hop")?;
            let (a, b) = hop.split_once("->").ok_or("hop must be (r,c)->(r,c)")?;
            CommandKind::Move { qubit, from: parse_pos(a)?, to: parse_pos(b)? }
        }
        "OP" => {
            let opcode = parts.next().ok_or("missing opcode")?.to_string();
            let ins = parts.next().ok_or("missing instruction")?;
            let instruction = ins
                .strip_prefix('I')
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| format!("bad instruction `{ins}`"))?;
            let at = parse_pos(parts.next().ok_or("missing position")?)?;
            let operands = parts.by_ref().map(parse_qubit).collect::<Result<Vec<_>, _>>()?;
            if operands.is_empty() {
                return Err("operation without operands".into());
            }
            CommandKind::Op { opcode, instruction, at, operands }
        }
        other => return Err(format!("unknown command `{other}`")),
    };
    if parts.next().is_some() {
        return Err("trailing tokens".into());
    }
    Ok(Command { time, kind })
}

fn parse_qubit(s: &str) -> Result<u32, String> {
    s.strip_prefix('q').and_then(|v| v.parse().ok()).ok_or_else(|| format!("bad qubit `{s}`"))
}

fn parse_pos(s: &str) -> Result<Pos, String> {
    let inner = s.strip_prefix('(').and_then(|v| v.strip_suffix(')')).ok_or_else(|| format!("bad position `{s}`"))?;
    let (r, c) = inner.split_once(',').ok_or_else(|| format!("bad position `{s}`"))?;
    Ok((r.trim().parse().map_err(|_| format!("bad row in `{s}`"))?, c.trim().parse().map_err(|_| format!("bad column in `{s}`"))?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let text = "0 CREATE q3 (2,3)\n0 OP H I1 (2,2) q0\n0 MOVE q3 (2,3)->(2,4)\n10 OP CNOT I4 (7,7) q2 q0\n";
        let s = CommandStream::parse(text).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.to_text(), text);
        assert_eq!(CommandStream::new(s.commands.clone()).to_text(), text);
    }

    #[test]
    fn sort_order_is_time_then_kind() {
        let s = CommandStream::new(vec![
            Command { time: 10, kind: CommandKind::Create { qubit: 0, at: (0, 0) } },
            Command { time: 0, kind: CommandKind::Move { qubit: 1, from: (0, 0), to: (0, 1) } },
            Command { time: 0, kind: CommandKind::Create { qubit: 2, at: (0, 0) } },
        ]);
        let kinds: Vec<_> = s.commands.iter().map(|c| c.rank().0).collect();
        assert_eq!(kinds, vec![0, 2, 0]);
        assert_eq!(s.commands[0].time, 0);
    }

    #[test]
    fn errors_carry_line() {
        let err = CommandStream::parse("0 CREATE q1 (1,1)\n\n5 JUMP q1\n").unwrap_err();
        assert_eq!(err.line, 3);
        assert!(CommandStream::parse("0 MOVE q1 (1,1)(1,2)").is_err());
        assert!(CommandStream::parse("0 OP H I1 (1,1)").is_err());
    }
}
