//! Residual expressions over field jets, compiled to a flat tape.
//!
//! The tape is evaluated either for values alone or with one forward-mode
//! tangent per jet slot (a multi-dual number), which yields the exact partial
//! derivatives of the residual with respect to every slot.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::field::MultiIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Tanh,
    Sqrt,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Scalar expression evaluated at one collocation point.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    /// Raw derivative of a field (no output transform).
    Jet { field: usize, index: MultiIndex },
    /// Field value with its output transform applied.
    Value { field: usize },
    /// Coordinate of the collocation point.
    Coord(usize),
    /// Component of the outward boundary normal.
    Normal(usize),
    /// Named per-point data column of the collocation set.
    Data(String),
    Const(f64),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Powi(Box<Expr>, i32),
}

impl Expr {
    pub fn jet(field: usize, index: impl Into<MultiIndex>) -> Expr {
        Expr::Jet { field, index: index.into() }
    }

    pub fn value(field: usize) -> Expr {
        Expr::Value { field }
    }

    pub fn coord(i: usize) -> Expr {
        Expr::Coord(i)
    }

    pub fn normal(i: usize) -> Expr {
        Expr::Normal(i)
    }

    pub fn data(name: &str) -> Expr {
        Expr::Data(name.to_string())
    }

    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    fn unary(self, op: UnaryOp) -> Expr {
        Expr::Unary(op, Box::new(self))
    }

    pub fn sin(self) -> Expr {
        self.unary(UnaryOp::Sin)
    }

    pub fn cos(self) -> Expr {
        self.unary(UnaryOp::Cos)
    }

    pub fn exp(self) -> Expr {
        self.unary(UnaryOp::Exp)
    }

    pub fn tanh(self) -> Expr {
        self.unary(UnaryOp::Tanh)
    }

    pub fn sqrt(self) -> Expr {
        self.unary(UnaryOp::Sqrt)
    }

    pub fn square(self) -> Expr {
        self.unary(UnaryOp::Square)
    }

    pub fn powi(self, n: i32) -> Expr {
        Expr::Powi(Box::new(self), n)
    }

    /// Visits every node, parents before children.
    pub fn visit<F: FnMut(&Expr)>(&self, f: &mut F) {
        f(self);
        match self {
            Expr::Unary(_, a) | Expr::Powi(a, _) => a.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            _ => {}
        }
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Self {
        Expr::Const(v)
    }
}

macro_rules! binary_impl {
    ($trait:ident, $method:ident, $op:expr) => {
        impl $trait<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::Binary($op, Box::new(self), Box::new(rhs))
            }
        }
        impl $trait<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                Expr::Binary($op, Box::new(self), Box::new(Expr::Const(rhs)))
            }
        }
        impl $trait<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::Binary($op, Box::new(Expr::Const(self)), Box::new(rhs))
            }
        }
    };
}

binary_impl!(Add, add, BinaryOp::Add);
binary_impl!(Sub, sub, BinaryOp::Sub);
binary_impl!(Mul, mul, BinaryOp::Mul);
binary_impl!(Div, div, BinaryOp::Div);

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        self.unary(UnaryOp::Neg)
    }
}

/// Polynomial degree in the jet slots; `None` when not polynomial.
pub(crate) fn slot_degree(e: &Expr, exp_fields: &[bool]) -> Option<u32> {
    match e {
        Expr::Jet { .. } => Some(1),
        Expr::Value { field } => {
            if exp_fields[*field] {
                None
            } else {
                Some(1)
            }
        }
        Expr::Coord(_) | Expr::Normal(_) | Expr::Data(_) | Expr::Const(_) => Some(0),
        Expr::Unary(UnaryOp::Neg, a) => slot_degree(a, exp_fields),
        Expr::Unary(UnaryOp::Square, a) => slot_degree(a, exp_fields).map(|d| 2 * d),
        Expr::Unary(_, a) => match slot_degree(a, exp_fields)? {
            0 => Some(0),
            _ => None,
        },
        Expr::Powi(a, n) => {
            let d = slot_degree(a, exp_fields)?;
            if d == 0 {
                Some(0)
            } else if *n >= 0 {
                Some(d * *n as u32)
            } else {
                None
            }
        }
        Expr::Binary(op, a, b) => {
            let (da, db) = (slot_degree(a, exp_fields)?, slot_degree(b, exp_fields)?);
            match op {
                BinaryOp::Add | BinaryOp::Sub => Some(da.max(db)),
                BinaryOp::Mul => Some(da + db),
                BinaryOp::Div => {
                    if db == 0 {
                        Some(da)
                    } else {
                        None
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Op {
    Slot(usize),
    Coord(usize),
    Normal(usize),
    Data(usize),
    Const(f64),
    Unary(UnaryOp, usize),
    Binary(BinaryOp, usize, usize),
    Powi(usize, i32),
}

/// Per-point inputs of a tape.
pub struct Inputs<'a> {
    pub slots: &'a [f64],
    pub coords: &'a [f64],
    pub normals: &'a [f64],
    pub data: &'a [f64],
}

/// Flat instruction list; the last instruction is the output.
#[derive(Debug, Clone)]
pub struct Tape {
    ops: Vec<Op>,
    /// Whether an instruction depends on any slot.
    varying: Vec<bool>,
    n_slots: usize,
}

impl Tape {
    pub(crate) fn new(ops: Vec<Op>, n_slots: usize) -> Tape {
        let mut varying = Vec::with_capacity(ops.len());
        for op in &ops {
            let v = match *op {
                Op::Slot(_) => true,
                Op::Coord(_) | Op::Normal(_) | Op::Data(_) | Op::Const(_) => false,
                Op::Unary(_, a) | Op::Powi(a, _) => varying[a],
                Op::Binary(_, a, b) => varying[a] || varying[b],
            };
            varying.push(v);
        }
        Tape { ops, varying, n_slots }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    fn load(op: &Op, inp: &Inputs<'_>) -> Option<f64> {
        match *op {
            Op::Slot(i) => Some(inp.slots[i]),
            Op::Coord(i) => Some(inp.coords[i]),
            Op::Normal(i) => Some(inp.normals[i]),
            Op::Data(i) => Some(inp.data[i]),
            Op::Const(c) => Some(c),
            _ => None,
        }
    }

    /// Value of the expression; `vals` is scratch of length `len()`.
    pub fn eval(&self, inp: &Inputs<'_>, vals: &mut [f64]) -> f64 {
        for (i, op) in self.ops.iter().enumerate() {
            vals[i] = match Self::load(op, inp) {
                Some(v) => v,
                None => match *op {
                    Op::Unary(u, a) => unary(u, vals[a]),
                    Op::Binary(b, x, y) => binary(b, vals[x], vals[y]),
                    Op::Powi(a, n) => vals[a].powi(n),
                    _ => unreachable!(),
                },
            };
        }
        vals[self.ops.len() - 1]
    }

    /// Value and partial derivatives with respect to every slot.
    /// `tans` is scratch of length `len() * n_slots()`.
    pub fn eval_dual(
        &self,
        inp: &Inputs<'_>,
        vals: &mut [f64],
        tans: &mut [f64],
        grad: &mut [f64],
    ) -> f64 {
        let ns = self.n_slots;
        for (i, op) in self.ops.iter().enumerate() {
            let (before, rest) = tans.split_at_mut(i * ns);
            let ti = &mut rest[..ns];
            if let Some(v) = Self::load(op, inp) {
                vals[i] = v;
                ti.iter_mut().for_each(|t| *t = 0.0);
                if let Op::Slot(s) = *op {
                    ti[s] = 1.0;
                }
                continue;
            }
            let row = |k: usize| &before[k * ns..(k + 1) * ns];
            match *op {
                Op::Unary(u, a) => {
                    let x = vals[a];
                    let v = unary(u, x);
                    vals[i] = v;
                    if !self.varying[i] {
                        ti.iter_mut().for_each(|t| *t = 0.0);
                        continue;
                    }
                    let d = match u {
                        UnaryOp::Neg => -1.0,
                        UnaryOp::Sin => x.cos(),
                        UnaryOp::Cos => -x.sin(),
                        UnaryOp::Exp => v,
                        UnaryOp::Tanh => 1.0 - v * v,
                        UnaryOp::Sqrt => 0.5 / v,
                        UnaryOp::Square => 2.0 * x,
                    };
                    for (t, &ta) in ti.iter_mut().zip(row(a)) {
                        *t = d * ta;
                    }
                }
                Op::Powi(a, n) => {
                    let x = vals[a];
                    vals[i] = x.powi(n);
                    if !self.varying[i] {
                        ti.iter_mut().for_each(|t| *t = 0.0);
                        continue;
                    }
                    let d = if n == 0 { 0.0 } else { n as f64 * x.powi(n - 1) };
                    for (t, &ta) in ti.iter_mut().zip(row(a)) {
                        *t = d * ta;
                    }
                }
                Op::Binary(b, x, y) => {
                    let (a, c) = (vals[x], vals[y]);
                    let v = binary(b, a, c);
                    vals[i] = v;
                    if !self.varying[i] {
                        ti.iter_mut().for_each(|t| *t = 0.0);
                        continue;
                    }
                    let (da, dc) = match b {
                        BinaryOp::Add => (1.0, 1.0),
                        BinaryOp::Sub => (1.0, -1.0),
                        BinaryOp::Mul => (c, a),
                        BinaryOp::Div => (1.0 / c, -v / c),
                    };
                    let (rx, ry) = (row(x), row(y));
                    for k in 0..ns {
                        ti[k] = da * rx[k] + dc * ry[k];
                    }
                }
                _ => unreachable!(),
            }
        }
        let last = self.ops.len() - 1;
        grad.copy_from_slice(&tans[last * ns..(last + 1) * ns]);
        vals[last]
    }
}

#[inline]
fn unary(u: UnaryOp, x: f64) -> f64 {
    match u {
        UnaryOp::Neg => -x,
        UnaryOp::Sin => x.sin(),
        UnaryOp::Cos => x.cos(),
        UnaryOp::Exp => x.exp(),
        UnaryOp::Tanh => x.tanh(),
        UnaryOp::Sqrt => x.sqrt(),
        UnaryOp::Square => x * x,
    }
}

#[inline]
fn binary(b: BinaryOp, x: f64, y: f64) -> f64 {
    match b {
        BinaryOp::Add => x + y,
        BinaryOp::Sub => x - y,
        BinaryOp::Mul => x * y,
        BinaryOp::Div => x / y,
    }
}

/// Resolves leaves while flattening an expression into a tape.
pub(crate) struct Lowering<'a> {
    pub slot_of: &'a dyn Fn(usize, &MultiIndex) -> usize,
    pub is_exp: &'a dyn Fn(usize) -> bool,
    pub data_of: &'a dyn Fn(&str) -> usize,
    pub n_dims: &'a dyn Fn(usize) -> usize,
}

impl Lowering<'_> {
    pub fn lower(&self, e: &Expr, ops: &mut Vec<Op>) -> usize {
        let op = match e {
            Expr::Jet { field, index } => Op::Slot((self.slot_of)(*field, index)),
            Expr::Value { field } => {
                let zero = MultiIndex::zero((self.n_dims)(*field));
                let s = Op::Slot((self.slot_of)(*field, &zero));
                if (self.is_exp)(*field) {
                    ops.push(s);
                    Op::Unary(UnaryOp::Exp, ops.len() - 1)
                } else {
                    s
                }
            }
            Expr::Coord(i) => Op::Coord(*i),
            Expr::Normal(i) => Op::Normal(*i),
            Expr::Data(name) => Op::Data((self.data_of)(name)),
            Expr::Const(c) => Op::Const(*c),
            Expr::Unary(u, a) => {
                let ia = self.lower(a, ops);
                Op::Unary(*u, ia)
            }
            Expr::Powi(a, n) => {
                let ia = self.lower(a, ops);
                Op::Powi(ia, *n)
            }
            Expr::Binary(b, x, y) => {
                let ix = self.lower(x, ops);
                let iy = self.lower(y, ops);
                Op::Binary(*b, ix, iy)
            }
        };
        ops.push(op);
        ops.len() - 1
    }
}
