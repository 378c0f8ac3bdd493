//! Composite collocation losses: problem declarations, residual evaluation,
//! exact Jacobians, normal equations and loss weighting.
//!
//! Every loss term is the mean of its squared residuals over components and
//! points. The stacked residual vector scales each entry by
//! `sqrt(lambda / (k * N_d))`, so its squared norm equals the weighted loss.
//! Entries are ordered by term (declaration order), then component, then point.

pub mod expr;

use ndarray::{linalg::general_mat_mul, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, TensorBasisSpec};
use crate::field::contract::{BasisTables, ContractionPlan, Workspace};
use crate::field::{CoefficientField, FieldError, MultiIndex, OutputTransform};
pub use expr::{Expr, Inputs, Tape};
use expr::{slot_degree, Lowering};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResidualError {
    #[error("term '{term}' produced a non-finite residual at point {point:?}")]
    NonFinite { term: String, point: Vec<f64> },
    #[error("unknown field index {0}")]
    UnknownField(usize),
    #[error("unknown collocation set '{0}'")]
    UnknownSet(String),
    #[error("collocation set '{set}' has no data column '{column}'")]
    UnknownData { set: String, column: String },
    #[error("collocation set '{0}' is empty")]
    EmptySet(String),
    #[error("term '{0}' uses boundary normals but its collocation set has none")]
    MissingNormals(String),
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// How a field coordinate is obtained from a collocation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FieldInput {
    Axis(usize),
    /// `atan2(point[y], point[x])` wrapped into `[0, 2 pi)`.
    PolarAngle { x: usize, y: usize },
}

impl FieldInput {
    #[inline]
    pub fn resolve(&self, point: &[f64]) -> f64 {
        match *self {
            FieldInput::Axis(i) => point[i],
            FieldInput::PolarAngle { x, y } => {
                let a = point[y].atan2(point[x]);
                if a < 0.0 {
                    a + 2.0 * std::f64::consts::PI
                } else {
                    a
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldDecl {
    pub name: String,
    pub spec: TensorBasisSpec,
    pub transform: OutputTransform,
    /// One entry per basis dimension.
    pub inputs: Vec<FieldInput>,
}

impl FieldDecl {
    /// Field whose basis dimensions read point coordinates `0..d` in order.
    pub fn new(name: &str, spec: TensorBasisSpec, transform: OutputTransform) -> Self {
        let inputs = (0..spec.ndim()).map(FieldInput::Axis).collect();
        FieldDecl { name: name.to_string(), spec, transform, inputs }
    }

    pub fn with_inputs(mut self, inputs: Vec<FieldInput>) -> Self {
        self.inputs = inputs;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataColumn {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    pub name: String,
    pub points: Vec<Vec<f64>>,
    pub normals: Option<Vec<Vec<f64>>>,
    pub data: Vec<DataColumn>,
}

impl CollocationSet {
    pub fn new(name: &str, points: Vec<Vec<f64>>) -> Self {
        CollocationSet { name: name.to_string(), points, normals: None, data: Vec::new() }
    }

    pub fn with_normals(mut self, normals: Vec<Vec<f64>>) -> Self {
        self.normals = Some(normals);
        self
    }

    pub fn with_data(mut self, name: &str, values: Vec<f64>) -> Self {
        self.data.push(DataColumn { name: name.to_string(), values });
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermKind {
    Pde,
    Boundary,
    Initial,
    Data,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub name: String,
    pub kind: TermKind,
    pub set: String,
    /// The `k` residual components.
    pub residuals: Vec<Expr>,
    pub weight: f64,
}

impl LossTerm {
    pub fn new(name: &str, kind: TermKind, set: &str, residuals: Vec<Expr>) -> Self {
        LossTerm { name: name.to_string(), kind, set: set.to_string(), residuals, weight: 1.0 }
    }

    pub fn weighted(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Weighting {
    Fixed,
    Adaptive { epsilon: f64, cap: f64, every: usize },
}

impl Weighting {
    pub fn adaptive_default() -> Self {
        Weighting::Adaptive { epsilon: DEFAULT_EPSILON, cap: DEFAULT_CAP, every: DEFAULT_CADENCE }
    }
}

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_CAP: f64 = 1e6;
pub const DEFAULT_CADENCE: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub fields: Vec<FieldDecl>,
    pub sets: Vec<CollocationSet>,
    pub terms: Vec<LossTerm>,
    pub weighting: Weighting,
}

/// Unweighted per-term losses, the weights used, and the weighted sum.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub terms: Vec<f64>,
    pub weights: Vec<f64>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(terms: Vec<f64>, weights: Vec<f64>) -> Self {
        let total = terms.iter().zip(&weights).map(|(l, w)| l * w).sum();
        LossBreakdown { terms, weights, total }
    }
}

struct FieldUse {
    field: usize,
    table: usize,
    plan: ContractionPlan,
    /// Slot index of each plan output.
    slot_of_output: Vec<usize>,
}

struct CompiledTerm {
    name: String,
    kind: TermKind,
    set: usize,
    tapes: Vec<Tape>,
    n_slots: usize,
    uses: Vec<FieldUse>,
    data_cols: Vec<usize>,
    weight: f64,
    affine: bool,
}

/// Scratch buffers for evaluating one term.
struct TermScratch {
    ws: Vec<Workspace>,
    outs: Vec<Vec<f64>>,
    slots: Vec<f64>,
    data: Vec<f64>,
    vals: Vec<f64>,
    tans: Vec<f64>,
    partials: Vec<Vec<f64>>,
    residuals: Vec<f64>,
    cots: Vec<Vec<f64>>,
}

/// A problem with collocation tables precomputed for fast repeated evaluation.
pub struct CompiledProblem {
    fields: Vec<FieldDecl>,
    offsets: Vec<usize>,
    n_coeffs: usize,
    sets: Vec<CollocationSet>,
    tables: Vec<BasisTables>,
    terms: Vec<CompiledTerm>,
    weighting: Weighting,
}

impl ProblemSpec {
    pub fn compile(&self) -> Result<CompiledProblem, ResidualError> {
        CompiledProblem::new(self)
    }

    pub fn set_index(&self, name: &str) -> Option<usize> {
        self.sets.iter().position(|s| s.name == name)
    }
}

impl CompiledProblem {
    fn new(p: &ProblemSpec) -> Result<Self, ResidualError> {
        for f in &p.fields {
            if f.inputs.len() != f.spec.ndim() {
                return Err(ResidualError::Invalid(format!(
                    "field '{}' has {} inputs for {} basis dimensions",
                    f.name,
                    f.inputs.len(),
                    f.spec.ndim()
                )));
            }
        }
        let mut offsets = Vec::with_capacity(p.fields.len());
        let mut n_coeffs = 0;
        for f in &p.fields {
            offsets.push(n_coeffs);
            n_coeffs += f.spec.total_modes();
        }
        let exp_fields: Vec<bool> = p.fields.iter().map(|f| f.transform == OutputTransform::Exp).collect();

        // First pass: slot lists and per (set, field) orders.
        struct Pending {
            set: usize,
            slots: Vec<(usize, MultiIndex)>,
            data_cols: Vec<String>,
        }
        let mut pending = Vec::new();
        for t in &p.terms {
            let set = p.set_index(&t.set).ok_or_else(|| ResidualError::UnknownSet(t.set.clone()))?;
            let cs = &p.sets[set];
            if cs.is_empty() {
                return Err(ResidualError::EmptySet(cs.name.clone()));
            }
            if t.residuals.is_empty() {
                return Err(ResidualError::Invalid(format!("term '{}' has no residuals", t.name)));
            }
            if !(t.weight >= 0.0) {
                return Err(ResidualError::Invalid(format!("term '{}' has negative weight", t.name)));
            }
            let mut slots: Vec<(usize, MultiIndex)> = Vec::new();
            let mut data_cols: Vec<String> = Vec::new();
            let mut err = None;
            for e in &t.residuals {
                e.visit(&mut |node| {
                    let (field, index) = match node {
                        Expr::Jet { field, index } => (*field, index.clone()),
                        Expr::Value { field } => {
                            let d = p.fields.get(*field).map_or(0, |f| f.spec.ndim());
                            (*field, MultiIndex::zero(d))
                        }
                        Expr::Normal(_) if cs.normals.is_none() => {
                            err = Some(ResidualError::MissingNormals(t.name.clone()));
                            return;
                        }
                        Expr::Data(name) => {
                            if !cs.data.iter().any(|c| &c.name == name) {
                                err = Some(ResidualError::UnknownData { set: cs.name.clone(), column: name.clone() });
                            } else if !data_cols.contains(name) {
                                data_cols.push(name.clone());
                            }
                            return;
                        }
                        _ => return,
                    };
                    match p.fields.get(field) {
                        None => err = Some(ResidualError::UnknownField(field)),
                        Some(f) if f.spec.ndim() != index.len() => {
                            err = Some(ResidualError::Invalid(format!(
                                "multi-index {index} does not match field '{}'",
                                f.name
                            )))
                        }
                        Some(_) if index.order() > crate::basis::MAX_DERIVATIVE_ORDER => {
                            err = Some(BasisError::UnsupportedOrder(index.order()).into())
                        }
                        Some(_) => {
                            if !slots.contains(&(field, index.clone())) {
                                slots.push((field, index));
                            }
                        }
                    }
                });
            }
            if let Some(e) = err {
                return Err(e);
            }
            for c in &cs.data {
                if c.values.len() != cs.len() {
                    return Err(ResidualError::Invalid(format!(
                        "data column '{}' of set '{}' has {} values for {} points",
                        c.name,
                        cs.name,
                        c.values.len(),
                        cs.len()
                    )));
                }
            }
            if let Some(n) = &cs.normals {
                if n.len() != cs.len() {
                    return Err(ResidualError::Invalid(format!("set '{}' has mismatched normals", cs.name)));
                }
            }
            pending.push(Pending { set, slots, data_cols });
        }

        // Basis tables shared by fields with equal basis and inputs on the same set.
        struct TableKey {
            set: usize,
            field: usize,
            max_order: Vec<usize>,
        }
        let mut keys: Vec<TableKey> = Vec::new();
        let same_basis = |a: usize, b: usize| {
            p.fields[a].spec == p.fields[b].spec && p.fields[a].inputs == p.fields[b].inputs
        };
        let mut use_tables: Vec<Vec<(usize, usize)>> = Vec::new(); // per term: (field, key)
        for pt in &pending {
            let mut fields_used: Vec<usize> = pt.slots.iter().map(|s| s.0).collect();
            fields_used.sort_unstable();
            fields_used.dedup();
            let mut per_term = Vec::new();
            for &f in &fields_used {
                let key = match keys.iter().position(|k| k.set == pt.set && same_basis(k.field, f)) {
                    Some(k) => k,
                    None => {
                        keys.push(TableKey { set: pt.set, field: f, max_order: vec![0; p.fields[f].spec.ndim()] });
                        keys.len() - 1
                    }
                };
                for (sf, idx) in &pt.slots {
                    if *sf == f {
                        for (m, &j) in keys[key].max_order.iter_mut().zip(idx.as_slice()) {
                            *m = (*m).max(j);
                        }
                    }
                }
                per_term.push((f, key));
            }
            use_tables.push(per_term);
        }
        let mut tables = Vec::with_capacity(keys.len());
        for k in &keys {
            let f = &p.fields[k.field];
            let pts = &p.sets[k.set].points;
            let t = BasisTables::build(&f.spec, pts.len(), &k.max_order, |i, x| {
                for (xd, inp) in x.iter_mut().zip(&f.inputs) {
                    *xd = inp.resolve(&pts[i]);
                }
            })?;
            tables.push(t);
        }

        let mut terms = Vec::with_capacity(p.terms.len());
        for ((t, pt), per_term) in p.terms.iter().zip(pending).zip(use_tables) {
            let mut uses = Vec::new();
            for (f, key) in per_term {
                let mut idxs = Vec::new();
                let mut slot_of_output = Vec::new();
                for (si, (sf, idx)) in pt.slots.iter().enumerate() {
                    if *sf == f {
                        idxs.push(idx.clone());
                        slot_of_output.push(si);
                    }
                }
                let plan = ContractionPlan::new(&p.fields[f].spec.shape(), &idxs);
                uses.push(FieldUse { field: f, table: key, plan, slot_of_output });
            }
            let slots = &pt.slots;
            let data_cols = &pt.data_cols;
            let slot_of = |f: usize, idx: &MultiIndex| {
                slots.iter().position(|(sf, si)| *sf == f && si == idx).expect("slot collected")
            };
            let is_exp = |f: usize| exp_fields[f];
            let data_of = |name: &str| data_cols.iter().position(|c| c == name).expect("data collected");
            let n_dims = |f: usize| p.fields[f].spec.ndim();
            let low = Lowering { slot_of: &slot_of, is_exp: &is_exp, data_of: &data_of, n_dims: &n_dims };
            let tapes: Vec<Tape> = t
                .residuals
                .iter()
                .map(|e| {
                    let mut ops = Vec::new();
                    low.lower(e, &mut ops);
                    Tape::new(ops, slots.len())
                })
                .collect();
            let affine = t.residuals.iter().all(|e| slot_degree(e, &exp_fields).is_some_and(|d| d <= 1));
            let set = &p.sets[pt.set];
            let col_idx = data_cols
                .iter()
                .map(|c| set.data.iter().position(|d| &d.name == c).expect("column exists"))
                .collect();
            terms.push(CompiledTerm {
                name: t.name.clone(),
                kind: t.kind,
                set: pt.set,
                tapes,
                n_slots: slots.len(),
                uses,
                data_cols: col_idx,
                weight: t.weight,
                affine,
            });
        }
        Ok(CompiledProblem {
            fields: p.fields.clone(),
            offsets,
            n_coeffs,
            sets: p.sets.clone(),
            tables,
            terms,
            weighting: p.weighting,
        })
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn n_residuals(&self) -> usize {
        self.terms.iter().map(|t| t.tapes.len() * self.sets[t.set].len()).sum()
    }

    pub fn fields(&self) -> &[FieldDecl] {
        &self.fields
    }

    pub fn sets(&self) -> &[CollocationSet] {
        &self.sets
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    pub fn term_names(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.name.clone()).collect()
    }

    pub fn term_kinds(&self) -> Vec<TermKind> {
        self.terms.iter().map(|t| t.kind).collect()
    }

    /// Declared term weights.
    pub fn default_weights(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.weight).collect()
    }

    /// True when every residual is affine in the jets, so `J` is constant.
    pub fn is_affine(&self) -> bool {
        self.terms.iter().all(|t| t.affine)
    }

    pub fn field_range(&self, f: usize) -> std::ops::Range<usize> {
        self.offsets[f]..self.offsets[f] + self.fields[f].spec.total_modes()
    }

    /// Concatenates field coefficients in declaration order.
    pub fn pack(&self, fields: &[CoefficientField]) -> Result<Vec<f64>, ResidualError> {
        if fields.len() != self.fields.len() {
            return Err(ResidualError::Invalid(format!(
                "expected {} fields, got {}",
                self.fields.len(),
                fields.len()
            )));
        }
        let mut x = Vec::with_capacity(self.n_coeffs);
        for (f, d) in fields.iter().zip(&self.fields) {
            if f.spec() != &d.spec {
                return Err(ResidualError::Invalid(format!("field '{}' has a different basis", d.name)));
            }
            x.extend_from_slice(f.coeffs());
        }
        Ok(x)
    }

    pub fn unpack(&self, x: &[f64]) -> Result<Vec<CoefficientField>, ResidualError> {
        self.fields
            .iter()
            .enumerate()
            .map(|(i, d)| {
                CoefficientField::new(d.spec.clone(), x[self.field_range(i)].to_vec(), d.transform)
                    .map_err(ResidualError::from)
            })
            .collect()
    }

    fn scratch(&self, t: &CompiledTerm) -> TermScratch {
        let max_len = t.tapes.iter().map(|tp| tp.len()).max().unwrap_or(0);
        TermScratch {
            ws: t.uses.iter().map(|u| u.plan.workspace()).collect(),
            outs: t.uses.iter().map(|u| vec![0.0; u.plan.n_outputs()]).collect(),
            slots: vec![0.0; t.n_slots],
            data: vec![0.0; t.data_cols.len()],
            vals: vec![0.0; max_len],
            tans: vec![0.0; max_len * t.n_slots],
            partials: vec![vec![0.0; t.n_slots]; t.tapes.len()],
            residuals: vec![0.0; t.tapes.len()],
            cots: t.uses.iter().map(|u| vec![0.0; u.plan.n_outputs()]).collect(),
        }
    }

    /// Evaluates the residual components of term `t` at point `p`
    /// (and their slot partials if `dual`).
    fn eval_point(
        &self,
        t: &CompiledTerm,
        x: &[f64],
        p: usize,
        sc: &mut TermScratch,
        dual: bool,
    ) -> Result<(), ResidualError> {
        let set = &self.sets[t.set];
        for (ui, u) in t.uses.iter().enumerate() {
            let coeffs = &x[self.field_range(u.field)];
            u.plan.forward(coeffs, &self.tables[u.table], p, &mut sc.ws[ui], &mut sc.outs[ui]);
            for (o, &s) in u.slot_of_output.iter().enumerate() {
                sc.slots[s] = sc.outs[ui][o];
            }
        }
        for (k, &c) in t.data_cols.iter().enumerate() {
            sc.data[k] = set.data[c].values[p];
        }
        let normals: &[f64] = set.normals.as_ref().map_or(&[], |n| &n[p]);
        let inp = Inputs { slots: &sc.slots, coords: &set.points[p], normals, data: &sc.data };
        for (c, tape) in t.tapes.iter().enumerate() {
            let r = if dual {
                tape.eval_dual(&inp, &mut sc.vals, &mut sc.tans, &mut sc.partials[c])
            } else {
                tape.eval(&inp, &mut sc.vals)
            };
            if !r.is_finite() || (dual && sc.partials[c].iter().any(|v| !v.is_finite())) {
                return Err(ResidualError::NonFinite { term: t.name.clone(), point: set.points[p].clone() });
            }
            sc.residuals[c] = r;
        }
        Ok(())
    }

    fn check_len(&self, x: &[f64]) {
        assert_eq!(x.len(), self.n_coeffs, "coefficient vector length");
    }

    /// Unweighted loss of each term.
    pub fn term_losses(&self, x: &[f64]) -> Result<Vec<f64>, ResidualError> {
        self.check_len(x);
        let mut out = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let mut sc = self.scratch(t);
            let n = self.sets[t.set].len();
            let mut acc = 0.0;
            for p in 0..n {
                self.eval_point(t, x, p, &mut sc, false)?;
                acc += sc.residuals.iter().map(|r| r * r).sum::<f64>();
            }
            out.push(acc / (t.tapes.len() * n) as f64);
        }
        Ok(out)
    }

    pub fn total_loss(&self, x: &[f64], weights: &[f64]) -> Result<LossBreakdown, ResidualError> {
        Ok(LossBreakdown::new(self.term_losses(x)?, weights.to_vec()))
    }

    fn scales(&self, weights: &[f64]) -> Vec<f64> {
        assert_eq!(weights.len(), self.terms.len(), "one weight per term");
        self.terms
            .iter()
            .zip(weights)
            .map(|(t, w)| (w / (t.tapes.len() * self.sets[t.set].len()) as f64).sqrt())
            .collect()
    }

    pub fn residual_vector(&self, x: &[f64], weights: &[f64]) -> Result<Vec<f64>, ResidualError> {
        self.check_len(x);
        let scales = self.scales(weights);
        let mut out = vec![0.0; self.n_residuals()];
        let mut base = 0;
        for (t, s) in self.terms.iter().zip(scales) {
            let mut sc = self.scratch(t);
            let n = self.sets[t.set].len();
            for p in 0..n {
                self.eval_point(t, x, p, &mut sc, false)?;
                for (c, r) in sc.residuals.iter().enumerate() {
                    out[base + c * n + p] = s * r;
                }
            }
            base += t.tapes.len() * n;
        }
        Ok(out)
    }

    /// Visits every scaled residual with its Jacobian row, in chunks of
    /// `chunk` rows. Rows within a chunk are point-major.
    fn for_each_row_chunk<F>(
        &self,
        x: &[f64],
        weights: &[f64],
        chunk: usize,
        mut visit: F,
    ) -> Result<(), ResidualError>
    where
        F: FnMut(&Array2<f64>, &[f64], usize),
    {
        self.check_len(x);
        let scales = self.scales(weights);
        let mut rows = Array2::<f64>::zeros((chunk, self.n_coeffs));
        let mut r = vec![0.0; chunk];
        let mut filled = 0;
        for (t, s) in self.terms.iter().zip(scales) {
            let mut sc = self.scratch(t);
            let n = self.sets[t.set].len();
            for p in 0..n {
                self.eval_point(t, x, p, &mut sc, true)?;
                for c in 0..t.tapes.len() {
                    let mut row = rows.row_mut(filled);
                    row.fill(0.0);
                    let row = row.as_slice_mut().expect("contiguous row");
                    for (ui, u) in t.uses.iter().enumerate() {
                        for (o, &slot) in u.slot_of_output.iter().enumerate() {
                            sc.cots[ui][o] = s * sc.partials[c][slot];
                        }
                        let range = self.field_range(u.field);
                        u.plan.backward(&sc.cots[ui], &self.tables[u.table], p, &mut sc.ws[ui], &mut row[range]);
                    }
                    r[filled] = s * sc.residuals[c];
                    filled += 1;
                    if filled == chunk {
                        visit(&rows, &r, filled);
                        filled = 0;
                    }
                }
            }
        }
        if filled > 0 {
            visit(&rows, &r, filled);
        }
        Ok(())
    }

    /// Dense Jacobian of [`Self::residual_vector`], in the same row order.
    pub fn jacobian(&self, x: &[f64], weights: &[f64]) -> Result<Array2<f64>, ResidualError> {
        let mut jac = Array2::<f64>::zeros((self.n_residuals(), self.n_coeffs));
        // Map point-major chunk rows back to component-major order.
        let mut order = Vec::with_capacity(self.n_residuals());
        let mut base = 0;
        for t in &self.terms {
            let n = self.sets[t.set].len();
            let k = t.tapes.len();
            for p in 0..n {
                for c in 0..k {
                    order.push(base + c * n + p);
                }
            }
            base += k * n;
        }
        let mut next = 0;
        self.for_each_row_chunk(x, weights, 1, |rows, _, _| {
            jac.row_mut(order[next]).assign(&rows.row(0));
            next += 1;
        })?;
        Ok(jac)
    }

    /// Gauss-Newton normal system `(J^T J, J^T r, |r|^2)`.
    pub fn normal_system(
        &self,
        x: &[f64],
        weights: &[f64],
    ) -> Result<(Array2<f64>, Vec<f64>, f64), ResidualError> {
        let n = self.n_coeffs;
        let chunk = (4_000_000 / n.max(1)).clamp(16, 512);
        let mut jtj = Array2::<f64>::zeros((n, n));
        let mut jtr = vec![0.0; n];
        let mut rr = 0.0;
        self.for_each_row_chunk(x, weights, chunk, |rows, r, filled| {
            let block = rows.slice(ndarray::s![..filled, ..]);
            general_mat_mul(1.0, &block.t(), &block, 1.0, &mut jtj);
            for (i, ri) in r[..filled].iter().enumerate() {
                rr += ri * ri;
                for (g, j) in jtr.iter_mut().zip(block.row(i)) {
                    *g += ri * j;
                }
            }
        })?;
        Ok((jtj, jtr, rr))
    }

    /// Weighted loss breakdown, gradient of the weighted loss, and the
    /// gradient of each unweighted term loss.
    pub fn gradients(
        &self,
        x: &[f64],
        weights: &[f64],
    ) -> Result<(LossBreakdown, Vec<f64>, Vec<Vec<f64>>), ResidualError> {
        self.check_len(x);
        assert_eq!(weights.len(), self.terms.len(), "one weight per term");
        let mut losses = Vec::with_capacity(self.terms.len());
        let mut term_grads = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let mut sc = self.scratch(t);
            let n = self.sets[t.set].len();
            let norm = 1.0 / (t.tapes.len() * n) as f64;
            let mut grad = vec![0.0; self.n_coeffs];
            let mut acc = 0.0;
            for p in 0..n {
                self.eval_point(t, x, p, &mut sc, true)?;
                acc += sc.residuals.iter().map(|r| r * r).sum::<f64>();
                for (ui, u) in t.uses.iter().enumerate() {
                    for (o, &slot) in u.slot_of_output.iter().enumerate() {
                        let mut g = 0.0;
                        for c in 0..t.tapes.len() {
                            g += sc.residuals[c] * sc.partials[c][slot];
                        }
                        sc.cots[ui][o] = 2.0 * norm * g;
                    }
                    let range = self.field_range(u.field);
                    u.plan.backward(&sc.cots[ui], &self.tables[u.table], p, &mut sc.ws[ui], &mut grad[range]);
                }
            }
            losses.push(acc / (t.tapes.len() * n) as f64);
            term_grads.push(grad);
        }
        let mut total = vec![0.0; self.n_coeffs];
        for (g, w) in term_grads.iter().zip(weights) {
            if *w != 0.0 {
                for (t, v) in total.iter_mut().zip(g) {
                    *t += w * v;
                }
            }
        }
        Ok((LossBreakdown::new(losses, weights.to_vec()), total, term_grads))
    }

    /// Field values at arbitrary points, given packed coefficients.
    pub fn evaluate_field(&self, x: &[f64], field: usize, points: &[Vec<f64>]) -> Result<Vec<f64>, ResidualError> {
        let d = &self.fields[field];
        let f = CoefficientField::new(d.spec.clone(), x[self.field_range(field)].to_vec(), d.transform)?;
        let mapped: Vec<Vec<f64>> =
            points.iter().map(|p| d.inputs.iter().map(|i| i.resolve(p)).collect()).collect();
        Ok(f.evaluate(&mapped)?)
    }
}

/// `lambda_i = mean(g) / (g_i + eps)`, clamped to `[1/cap, cap]`.
pub fn adaptive_weights(grad_norms: &[f64], epsilon: f64, cap: f64) -> Vec<f64> {
    if grad_norms.is_empty() {
        return Vec::new();
    }
    let mean = grad_norms.iter().sum::<f64>() / grad_norms.len() as f64;
    grad_norms
        .iter()
        .map(|g| {
            let l = mean / (g + epsilon);
            if l.is_nan() {
                1.0
            } else {
                l.clamp(1.0 / cap, cap)
            }
        })
        .collect()
}

/// `strength * sum |c|`.
pub fn l1_penalty(coeffs: &[f64], strength: f64) -> f64 {
    strength * coeffs.iter().map(|c| c.abs()).sum::<f64>()
}

/// Subgradient `strength * sign(c)`, zero at zero.
pub fn l1_subgradient(coeffs: &[f64], strength: f64) -> Vec<f64> {
    coeffs
        .iter()
        .map(|&c| {
            if c > 0.0 {
                strength
            } else if c < 0.0 {
                -strength
            } else {
                0.0
            }
        })
        .collect()
}
