//! Scalar reference semantics: statements of one iteration execute in order,
//! each statement evaluating its right-hand side, then its destination index,
//! then performing the store. Every other execution mode in the crate is
//! checked against this interpreter.

use crate::error::Result;
use crate::isa::{BinOp, GadgetProgram, IndexExpr, IndexScale, Memory, ValueExpr};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Load,
    Store,
}

/// One memory access performed while evaluating a statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessEvent {
    pub kind: AccessKind,
    pub array: usize,
    pub addr: u64,
    pub size: u8,
    pub value: i64,
}

pub fn apply_binop(op: BinOp, a: i64, b: i64) -> i64 {
    match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::Xor => a ^ b,
        BinOp::Shl => a.wrapping_shl(b as u32),
        BinOp::Shr => a.wrapping_shr(b as u32),
        BinOp::And => ((a != 0) && (b != 0)) as i64,
        BinOp::Or => ((a != 0) || (b != 0)) as i64,
        BinOp::Eq => (a == b) as i64,
        BinOp::Ne => (a != b) as i64,
        BinOp::Lt => (a < b) as i64,
    }
}

/// Evaluates a memory-free expression (select conditions, index scales).
pub fn eval_pure(expr: &ValueExpr, z: i64) -> i64 {
    match expr {
        ValueExpr::Lit(n) => *n,
        ValueExpr::Induction => z,
        ValueExpr::Binary { op, lhs, rhs } => {
            apply_binop(*op, eval_pure(lhs, z), eval_pure(rhs, z))
        }
        ValueExpr::Select { cond, then_val, else_val } => {
            if eval_pure(cond, z) != 0 {
                eval_pure(then_val, z)
            } else {
                eval_pure(else_val, z)
            }
        }
        ValueExpr::Load { .. } => unreachable!("validated memory-free"),
    }
}

fn do_load(mem: &Memory, id: usize, index: i64, events: &mut Vec<AccessEvent>) -> Result<i64> {
    let (addr, size) = mem.resolve(id, index, AccessKind::Load)?;
    let value = mem.load_le(addr, size).expect("resolved");
    events.push(AccessEvent { kind: AccessKind::Load, array: id, addr, size, value });
    Ok(value)
}

fn eval_index(
    idx: &IndexExpr,
    z: i64,
    mem: &Memory,
    events: &mut Vec<AccessEvent>,
) -> Result<i64> {
    match idx {
        IndexExpr::Induction { scale, offset } => Ok(z * scale + offset),
        IndexExpr::Constant(c) => Ok(*c),
        IndexExpr::Indirect { array, inner, scale, offset } => {
            let i = eval_index(inner, z, mem, events)?;
            let id = mem.id(array).expect("validated");
            let v = do_load(mem, id, i, events)?;
            let s = match scale {
                IndexScale::Const(k) => *k,
                IndexScale::Expr(e) => eval_pure(e, z),
            };
            Ok(v.wrapping_mul(s).wrapping_add(*offset))
        }
    }
}

fn eval_value(
    expr: &ValueExpr,
    z: i64,
    mem: &Memory,
    events: &mut Vec<AccessEvent>,
) -> Result<i64> {
    match expr {
        ValueExpr::Lit(n) => Ok(*n),
        ValueExpr::Induction => Ok(z),
        ValueExpr::Load { array, index } => {
            let i = eval_index(index, z, mem, events)?;
            let id = mem.id(array).expect("validated");
            do_load(mem, id, i, events)
        }
        ValueExpr::Binary { op, lhs, rhs } => {
            let a = eval_value(lhs, z, mem, events)?;
            let b = eval_value(rhs, z, mem, events)?;
            Ok(apply_binop(*op, a, b))
        }
        // Predicated blend: both arms execute, the condition picks the value.
        ValueExpr::Select { cond, then_val, else_val } => {
            let c = eval_pure(cond, z);
            let t = eval_value(then_val, z, mem, events)?;
            let e = eval_value(else_val, z, mem, events)?;
            Ok(if c != 0 { t } else { e })
        }
    }
}

/// Executes all statements of iteration `z` in order, mutating memory and
/// returning the ordered access trace.
pub fn eval_scalar_iter(
    program: &GadgetProgram,
    z: u64,
    mem: &mut Memory,
) -> Result<Vec<AccessEvent>> {
    let z = z as i64;
    let mut events = Vec::new();
    for stmt in &program.body {
        let value = eval_value(&stmt.rhs, z, mem, &mut events)?;
        let dst_index = eval_index(&stmt.dst_index, z, mem, &mut events)?;
        let id = mem.id(&stmt.dst_array).expect("validated");
        let (addr, size) = mem.resolve(id, dst_index, AccessKind::Store)?;
        mem.store_le(addr, size, value);
        events.push(AccessEvent { kind: AccessKind::Store, array: id, addr, size, value });
    }
    Ok(events)
}
