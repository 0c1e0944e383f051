//! Loop IR for attack gadgets: array declarations, index/value expressions,
//! a single countable loop, and attacker prologue/epilogue.
//!
//! Programs are written in a line-oriented DSL (see [`parse`]); element
//! indices are used throughout and byte addresses are derived from each
//! array's element size.

pub mod eval;
pub mod layout;
pub mod parse;

use std::collections::BTreeMap;

use crate::error::{Result, SimError};

pub use eval::{eval_scalar_iter, AccessEvent, AccessKind};
pub use layout::{layout_memory, AddressMap, LayoutConfig, Memory};
pub use parse::{parse_gadget, pretty_print};

/// A named, byte-addressed array. `base` is assigned by the loader.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrayDecl {
    pub name: String,
    /// Element size in bytes, one of {1, 4, 8}.
    pub elem_size: u8,
    /// Element count.
    pub length: u64,
    /// When present, this array is pinned `byte_offset` bytes after the
    /// anchor array's base, and loads that over-index the anchor may land
    /// here. Linked arrays are read-only (they model constant data reached
    /// through cross-object pointer arithmetic).
    pub link: Option<LinkDecl>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkDecl {
    pub anchor: String,
    pub byte_offset: u64,
}

impl ArrayDecl {
    pub fn byte_len(&self) -> u64 {
        self.length * self.elem_size as u64
    }

    pub fn writable(&self) -> bool {
        self.link.is_none()
    }
}

/// Element-index expression. Indirection depth is capped at 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IndexExpr {
    /// `z * scale + offset` over the loop variable.
    Induction { scale: i64, offset: i64 },
    /// A constant element index.
    Constant(i64),
    /// `name[inner] * scale + offset`: the loaded value scaled and shifted.
    Indirect {
        array: String,
        inner: Box<IndexExpr>,
        scale: IndexScale,
        offset: i64,
    },
}

/// Multiplier applied to an indirect index. The expression form must be
/// memory-free; it covers predicated stride patterns like `v * ((z==N-1)<<8)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IndexScale {
    Const(i64),
    Expr(Box<ValueExpr>),
}

impl IndexExpr {
    pub fn induction() -> Self {
        IndexExpr::Induction { scale: 1, offset: 0 }
    }

    /// Nesting depth of `Indirect` nodes.
    pub fn depth(&self) -> usize {
        match self {
            IndexExpr::Indirect { inner, .. } => 1 + inner.depth(),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Xor,
    Shl,
    Shr,
    And,
    Or,
    Eq,
    Ne,
    Lt,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Xor => "^",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
            BinOp::And => "&&",
            BinOp::Or => "||",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
        }
    }
}

/// Right-hand-side value expression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValueExpr {
    Load { array: String, index: IndexExpr },
    Lit(i64),
    /// The loop variable as a value.
    Induction,
    Binary {
        op: BinOp,
        lhs: Box<ValueExpr>,
        rhs: Box<ValueExpr>,
    },
    /// Predicated blend: both arms are evaluated, the condition picks one.
    /// The condition must be memory-free.
    Select {
        cond: Box<ValueExpr>,
        then_val: Box<ValueExpr>,
        else_val: Box<ValueExpr>,
    },
}

impl ValueExpr {
    pub fn contains_load(&self) -> bool {
        match self {
            ValueExpr::Load { .. } => true,
            ValueExpr::Lit(_) | ValueExpr::Induction => false,
            ValueExpr::Binary { lhs, rhs, .. } => lhs.contains_load() || rhs.contains_load(),
            ValueExpr::Select { cond, then_val, else_val } => {
                cond.contains_load() || then_val.contains_load() || else_val.contains_load()
            }
        }
    }
}

/// One loop-body statement: `dst[idx] = rhs`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub dst_array: String,
    pub dst_index: IndexExpr,
    pub rhs: ValueExpr,
}

/// Attacker setup write applied by the loader before execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InitWrite {
    pub array: String,
    pub index: u64,
    pub value: i64,
}

/// Reload probe executed after the loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Probe {
    pub array: String,
    pub index: u64,
}

/// A complete gadget: declarations, setup, one loop, reload probes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GadgetProgram {
    pub arrays: Vec<ArrayDecl>,
    pub prologue: Vec<InitWrite>,
    pub trip_count: u64,
    pub body: Vec<Statement>,
    pub epilogue: Vec<Probe>,
}

impl GadgetProgram {
    pub fn array(&self, name: &str) -> Option<&ArrayDecl> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn array_id(&self, name: &str) -> Option<usize> {
        self.arrays.iter().position(|a| a.name == name)
    }

    /// Checks every structural invariant. Called by the parser; programs
    /// built by hand should call it before execution.
    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeMap::new();
        for (i, a) in self.arrays.iter().enumerate() {
            if names.insert(a.name.clone(), i).is_some() {
                return Err(SimError::Validation(format!("duplicate array '{}'", a.name)));
            }
            if ![1, 4, 8].contains(&a.elem_size) {
                return Err(SimError::Validation(format!(
                    "array '{}': element size {} not in {{1,4,8}}",
                    a.name, a.elem_size
                )));
            }
            if a.length == 0 {
                return Err(SimError::Validation(format!("array '{}' has zero length", a.name)));
            }
            a.length
                .checked_mul(a.elem_size as u64)
                .ok_or_else(|| SimError::Validation(format!("array '{}' overflows", a.name)))?;
            if let Some(link) = &a.link {
                let anchor_id = *names.get(&link.anchor).ok_or_else(|| {
                    SimError::Validation(format!(
                        "array '{}' links to undeclared '{}'",
                        a.name, link.anchor
                    ))
                })?;
                let anchor = &self.arrays[anchor_id];
                if link.byte_offset < anchor.byte_len() {
                    return Err(SimError::Validation(format!(
                        "array '{}' link offset {} overlaps anchor '{}'",
                        a.name, link.byte_offset, link.anchor
                    )));
                }
            }
        }
        if self.trip_count == 0 {
            return Err(SimError::Validation("loop trip count must be >= 1".into()));
        }
        if self.body.is_empty() {
            return Err(SimError::Validation("loop has no statements".into()));
        }
        for w in &self.prologue {
            let a = self
                .array(&w.array)
                .ok_or_else(|| SimError::Validation(format!("init of undeclared '{}'", w.array)))?;
            if w.index >= a.length {
                return Err(SimError::Validation(format!(
                    "init {}[{}] out of range (length {})",
                    w.array, w.index, a.length
                )));
            }
            if !a.writable() {
                return Err(SimError::Validation(format!(
                    "init of read-only linked array '{}'",
                    w.array
                )));
            }
        }
        for p in &self.epilogue {
            let a = self
                .array(&p.array)
                .ok_or_else(|| SimError::Validation(format!("probe of undeclared '{}'", p.array)))?;
            if p.index >= a.length {
                return Err(SimError::Validation(format!(
                    "probe {}[{}] out of range (length {})",
                    p.array, p.index, a.length
                )));
            }
        }
        for (si, stmt) in self.body.iter().enumerate() {
            let dst = self.array(&stmt.dst_array).ok_or_else(|| {
                SimError::Validation(format!("statement {si}: undeclared dst '{}'", stmt.dst_array))
            })?;
            if !dst.writable() {
                return Err(SimError::Validation(format!(
                    "statement {si}: dst '{}' is a read-only linked array",
                    stmt.dst_array
                )));
            }
            self.check_index(&stmt.dst_index, si)?;
            self.check_value(&stmt.rhs, si)?;
        }
        Ok(())
    }

    fn check_index(&self, idx: &IndexExpr, si: usize) -> Result<()> {
        if idx.depth() > 2 {
            return Err(SimError::Validation(format!(
                "statement {si}: indirection depth {} exceeds 2",
                idx.depth()
            )));
        }
        self.check_index_arrays(idx, si)
    }

    fn check_index_arrays(&self, idx: &IndexExpr, si: usize) -> Result<()> {
        if let IndexExpr::Indirect { array, inner, scale, .. } = idx {
            if self.array(array).is_none() {
                return Err(SimError::Validation(format!(
                    "statement {si}: undeclared array '{array}' in index"
                )));
            }
            if let IndexScale::Expr(e) = scale {
                if e.contains_load() {
                    return Err(SimError::Validation(format!(
                        "statement {si}: index scale expression reads memory"
                    )));
                }
                self.check_value(e, si)?;
            }
            self.check_index_arrays(inner, si)?;
        }
        Ok(())
    }

    fn check_value(&self, expr: &ValueExpr, si: usize) -> Result<()> {
        match expr {
            ValueExpr::Load { array, index } => {
                if self.array(array).is_none() {
                    return Err(SimError::Validation(format!(
                        "statement {si}: undeclared array '{array}'"
                    )));
                }
                self.check_index(index, si)
            }
            ValueExpr::Lit(_) | ValueExpr::Induction => Ok(()),
            ValueExpr::Binary { op, lhs, rhs } => {
                if matches!(op, BinOp::Shl | BinOp::Shr) {
                    match rhs.as_ref() {
                        ValueExpr::Lit(n) if (0..64).contains(n) => {}
                        _ => {
                            return Err(SimError::Validation(format!(
                                "statement {si}: shift amount must be a literal below 64"
                            )))
                        }
                    }
                }
                self.check_value(lhs, si)?;
                self.check_value(rhs, si)
            }
            ValueExpr::Select { cond, then_val, else_val } => {
                if cond.contains_load() {
                    return Err(SimError::Validation(format!(
                        "statement {si}: select condition reads memory"
                    )));
                }
                self.check_value(cond, si)?;
                self.check_value(then_val, si)?;
                self.check_value(else_val, si)
            }
        }
    }
}
