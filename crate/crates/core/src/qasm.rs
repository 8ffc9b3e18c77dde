//! Parser for the line-oriented QASM subset: `QUBIT` declarations followed by
//! one native instruction per line.
//!
//! ```text
//! QUBIT q0, 0
//! QUBIT d0, + io
//! H     q0
//! CNOT  q0, d0      # first operand is the control, second the target
//! ```

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InitialState {
    Zero,
    One,
    Plus,
    Minus,
}

impl InitialState {
    fn parse(tok: &str) -> Option<Self> {
        match tok {
            "0" => Some(Self::Zero),
            "1" => Some(Self::One),
            "+" => Some(Self::Plus),
            "-" => Some(Self::Minus),
            _ => None,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Self::Zero => "0",
            Self::One => "1",
            Self::Plus => "+",
            Self::Minus => "-",
        }
    }
}

/// I/O qubits enter and leave the block through ports; ancillas are created
/// inside it at creation wells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QubitKind {
    Io,
    Ancilla,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QubitDecl {
    pub name: String,
    pub initial_state: InitialState,
    pub kind: QubitKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DurationClass {
    OneQubit,
    TwoQubit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpcodeSpec {
    /// Canonical spelling used on output.
    pub name: String,
    pub arity: usize,
    pub class: DurationClass,
}

/// Known opcodes, looked up case-insensitively.
#[derive(Debug, Clone)]
pub struct OpcodeRegistry {
    by_key: HashMap<String, OpcodeSpec>,
}

impl Default for OpcodeRegistry {
    fn default() -> Self {
        let mut reg = Self { by_key: HashMap::new() };
        for name in ["H", "X", "Y", "Z", "S", "Sdag", "T", "Tdag", "PrepZ", "PrepX", "MeasZ", "MeasX"] {
            reg.register(name, 1, DurationClass::OneQubit);
        }
        for name in ["CNOT", "CZ"] {
            reg.register(name, 2, DurationClass::TwoQubit);
        }
        reg
    }
}

impl OpcodeRegistry {
    pub fn empty() -> Self {
        Self { by_key: HashMap::new() }
    }

    pub fn register(&mut self, name: &str, arity: usize, class: DurationClass) {
        assert!(arity == 1 || arity == 2, "native instructions take one or two qubits");
        self.by_key.insert(
            name.to_ascii_uppercase(),
            OpcodeSpec { name: name.to_string(), arity, class },
        );
    }

    pub fn lookup(&self, name: &str) -> Option<&OpcodeSpec> {
        self.by_key.get(&name.to_ascii_uppercase())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawInstruction {
    /// 1-based position among instruction lines.
    pub index: usize,
    pub opcode: String,
    pub class: DurationClass,
    /// Control first, target second for two-qubit instructions.
    pub operands: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub qubits: Vec<QubitDecl>,
    pub instructions: Vec<RawInstruction>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QasmError {
    #[error("line {line}: unknown opcode `{opcode}`")]
    UnknownOpcode { line: usize, opcode: String },
    #[error("line {line}: qubit `{qubit}` is not declared")]
    UndeclaredQubit { line: usize, qubit: String },
    #[error("line {line}: `{opcode}` takes {expected} operand(s), found {found}")]
    ArityMismatch {
        line: usize,
        opcode: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: qubit `{qubit}` declared twice")]
    DuplicateQubit { line: usize, qubit: String },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

impl QasmError {
    pub fn line(&self) -> usize {
        match self {
            Self::UnknownOpcode { line, .. }
            | Self::UndeclaredQubit { line, .. }
            | Self::ArityMismatch { line, .. }
            | Self::DuplicateQubit { line, .. }
            | Self::Syntax { line, .. } => *line,
        }
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parse with the built-in opcode table.
pub fn parse(text: &str) -> Result<Program, QasmError> {
    parse_with(text, &OpcodeRegistry::default())
}

pub fn parse_with(text: &str, registry: &OpcodeRegistry) -> Result<Program, QasmError> {
    let mut program = Program::default();
    let mut declared: HashMap<String, usize> = HashMap::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if !body.is_ascii() {
            return Err(QasmError::Syntax { line, message: "non-ASCII character".into() });
        }
        let (head, rest) = match body.find(|c: char| c.is_ascii_whitespace()) {
            Some(pos) => (&body[..pos], &body[pos..]),
            None => (body, ""),
        };
        let tokens: Vec<&str> = rest
            .split(|c: char| c == ',' || c.is_ascii_whitespace())
            .filter(|t| !t.is_empty())
            .collect();

        if head.eq_ignore_ascii_case("QUBIT") {
            if !program.instructions.is_empty() {
                return Err(QasmError::Syntax {
                    line,
                    message: "QUBIT declaration after the first instruction".into(),
                });
            }
            program.qubits.push(parse_decl(line, &tokens)?);
            let name = &program.qubits.last().unwrap().name;
            if declared.insert(name.clone(), program.qubits.len() - 1).is_some() {
                return Err(QasmError::DuplicateQubit { line, qubit: name.clone() });
            }
            continue;
        }

        let spec = registry
            .lookup(head)
            .ok_or_else(|| QasmError::UnknownOpcode { line, opcode: head.to_string() })?;
        if tokens.len() != spec.arity {
            return Err(QasmError::ArityMismatch {
                line,
                opcode: spec.name.clone(),
                expected: spec.arity,
                found: tokens.len(),
            });
        }
        for tok in &tokens {
            if !declared.contains_key(*tok) {
                return Err(QasmError::UndeclaredQubit { line, qubit: tok.to_string() });
            }
        }
        if tokens.len() == 2 && tokens[0] == tokens[1] {
            return Err(QasmError::Syntax {
                line,
                message: format!("`{}` names qubit `{}` twice", spec.name, tokens[0]),
            });
        }
        program.instructions.push(RawInstruction {
            index: program.instructions.len() + 1,
            opcode: spec.name.clone(),
            class: spec.class,
            operands: tokens.iter().map(|t| t.to_string()).collect(),
        });
    }
    Ok(program)
}

fn parse_decl(line: usize, tokens: &[&str]) -> Result<QubitDecl, QasmError> {
    let syntax = |message: &str| QasmError::Syntax { line, message: message.to_string() };
    let (name, state, flag) = match tokens {
        [name, state] => (*name, *state, None),
        [name, state, flag] => (*name, *state, Some(*flag)),
        _ => return Err(syntax("expected `QUBIT <name>, <0|1|+|-> [io]`")),
    };
    if !is_identifier(name) {
        return Err(syntax("qubit name must be an identifier"));
    }
    let initial_state = InitialState::parse(state).ok_or_else(|| syntax("initial state must be one of 0, 1, +, -"))?;
    let kind = match flag {
        None => QubitKind::Ancilla,
        Some(f) if f.eq_ignore_ascii_case("io") => QubitKind::Io,
        Some(_) => return Err(syntax("the only declaration flag is `io`")),
    };
    Ok(QubitDecl { name: name.to_string(), initial_state, kind })
}

impl Program {
    pub fn qubit_index(&self, name: &str) -> Option<usize> {
        self.qubits.iter().position(|q| q.name == name)
    }

    /// Serialize back to the text format accepted by [`parse`].
    pub fn to_qasm(&self) -> String {
        let mut out = String::new();
        for q in &self.qubits {
            let _ = write!(out, "QUBIT {}, {}", q.name, q.initial_state.symbol());
            if q.kind == QubitKind::Io {
                out.push_str(" io");
            }
            out.push('\n');
        }
        for ins in &self.instructions {
            let _ = writeln!(out, "{} {}", ins.opcode, ins.operands.join(", "));
        }
        out
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_qasm())
    }
}

/// Logical-zero preparation for the [[7,1,3]] code, 7 qubits and 12 instructions.
pub const STEANE_ZERO_PREP: &str = "\
QUBIT q0, 0
QUBIT q1, 0
QUBIT q2, 0
QUBIT q3, 0
QUBIT q4, 0
QUBIT q5, 0
QUBIT q6, 0
H q0
H q1
H q3
CNOT q2, q0
CNOT q5, q3
CNOT q6, q1
CNOT q4, q0
CNOT q6, q3
CNOT q5, q1
CNOT q6, q0
CNOT q2, q1
CNOT q4, q3
";
