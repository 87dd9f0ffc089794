//! Canonical conic form `min c'x  s.t.  A x + s = b,  s in K` with `K` a
//! product of zero, nonnegative and second-order cones.

use std::fmt::Write as _;
use std::ops::Range;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::ConicError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    Zero(usize),
    NonNeg(usize),
    /// Second-order cone `{(t, x): ||x|| <= t}` of the given total dimension.
    SecondOrder(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(n) | Cone::NonNeg(n) | Cone::SecondOrder(n) => n,
        }
    }
}

/// Named range of decision variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarSlice {
    pub name: String,
    pub range: Range<usize>,
}

/// Sparse affine expression `sum coeff * x[var] + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(idx: usize, coeff: f64) -> Self {
        Self {
            terms: vec![(idx, coeff)],
            constant: 0.0,
        }
    }

    pub fn term(mut self, idx: usize, coeff: f64) -> Self {
        if coeff != 0.0 {
            self.terms.push((idx, coeff));
        }
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, a)| a * x[j]).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    /// Entries `(row, col, value)` of `A`.
    pub triplets: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
    pub cones: Vec<Cone>,
    pub slices: Vec<VarSlice>,
}

impl ConicProgram {
    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn slice(&self, name: &str) -> Option<Range<usize>> {
        self.slices
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.range.clone())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Checks the structural invariants: cone dimensions cover every row and
    /// the named slices tile the variable vector.
    pub fn check(&self) -> Result<(), ConicError> {
        let rows: usize = self.cones.iter().map(Cone::dim).sum();
        if rows != self.rhs.len() {
            return Err(ConicError::Malformed(format!(
                "cones cover {rows} of {} rows",
                self.rhs.len()
            )));
        }
        let mut covered = vec![0u8; self.num_vars];
        for s in &self.slices {
            for j in s.range.clone() {
                if j >= self.num_vars {
                    return Err(ConicError::Malformed(format!(
                        "slice {} out of range",
                        s.name
                    )));
                }
                covered[j] += 1;
            }
        }
        if covered.iter().any(|&c| c != 1) {
            return Err(ConicError::Malformed(
                "variable slices do not tile x".into(),
            ));
        }
        if self
            .triplets
            .iter()
            .any(|&(r, c, _)| r >= self.rhs.len() || c >= self.num_vars)
        {
            return Err(ConicError::Malformed("matrix entry out of range".into()));
        }
        Ok(())
    }

    /// Largest violation of `b - A x in K`.
    pub fn cone_violation(&self, x: &[f64]) -> f64 {
        let mut slack = self.rhs.clone();
        for &(r, c, v) in &self.triplets {
            slack[r] -= v * x[c];
        }
        let mut worst = 0.0f64;
        let mut row = 0;
        for cone in &self.cones {
            let s = &slack[row..row + cone.dim()];
            let viol = match cone {
                Cone::Zero(_) => s.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                Cone::NonNeg(_) => s.iter().fold(0.0f64, |m, v| m.max(-v)),
                Cone::SecondOrder(_) => {
                    let tail: f64 = s[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
                    tail - s[0]
                }
            };
            worst = worst.max(viol);
            row += cone.dim();
        }
        worst
    }

    /// Writes the program as plain text: a header, then `c j value`,
    /// `A i j value` and `b i value` lines, followed by the cone list.
    pub fn to_triplet_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# conic program: {} variables, {} rows",
            self.num_vars,
            self.num_rows()
        );
        let _ = writeln!(out, "# form: minimize c'x subject to A x + s = b, s in K");
        for s in &self.slices {
            let _ = writeln!(out, "# slice {} {}..{}", s.name, s.range.start, s.range.end);
        }
        for (j, v) in self.objective.iter().enumerate() {
            if *v != 0.0 {
                let _ = writeln!(out, "c {j} {v:e}");
            }
        }
        let mut entries = self.triplets.clone();
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for (i, j, v) in entries {
            let _ = writeln!(out, "A {i} {j} {v:e}");
        }
        for (i, v) in self.rhs.iter().enumerate() {
            if *v != 0.0 {
                let _ = writeln!(out, "b {i} {v:e}");
            }
        }
        for cone in &self.cones {
            let (name, n) = match cone {
                Cone::Zero(n) => ("zero", n),
                Cone::NonNeg(n) => ("nonneg", n),
                Cone::SecondOrder(n) => ("soc", n),
            };
            let _ = writeln!(out, "K {name} {n}");
        }
        out
    }
}

/// Incrementally assembles a [`ConicProgram`].
#[derive(Debug, Default)]
pub struct ProgramBuilder {
    num_vars: usize,
    objective: Vec<f64>,
    triplets: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
    cones: Vec<Cone>,
    slices: Vec<VarSlice>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vars(&mut self, name: impl Into<String>, n: usize) -> Range<usize> {
        let range = self.num_vars..self.num_vars + n;
        self.num_vars += n;
        self.objective.resize(self.num_vars, 0.0);
        self.slices.push(VarSlice {
            name: name.into(),
            range: range.clone(),
        });
        range
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn add_objective(&mut self, var: usize, coeff: f64) {
        self.objective[var] += coeff;
    }

    fn push_row(&mut self, expr: &Affine) {
        let row = self.rhs.len();
        for &(j, a) in &expr.terms {
            self.triplets.push((row, j, -a));
        }
        self.rhs.push(expr.constant);
    }

    fn push_cone(&mut self, cone: Cone) {
        match (self.cones.last_mut(), cone) {
            (Some(Cone::Zero(n)), Cone::Zero(m)) => *n += m,
            (Some(Cone::NonNeg(n)), Cone::NonNeg(m)) => *n += m,
            _ => self.cones.push(cone),
        }
    }

    /// `expr == 0`
    pub fn equal_zero(&mut self, expr: Affine) {
        self.push_row(&expr);
        self.push_cone(Cone::Zero(1));
    }

    /// `expr >= 0`
    pub fn nonneg(&mut self, expr: Affine) {
        self.push_row(&expr);
        self.push_cone(Cone::NonNeg(1));
    }

    /// `||exprs[1..]|| <= exprs[0]`
    pub fn second_order(&mut self, exprs: Vec<Affine>) {
        assert!(!exprs.is_empty());
        let n = exprs.len();
        for e in &exprs {
            self.push_row(e);
        }
        self.push_cone(Cone::SecondOrder(n));
    }

    pub fn build(self) -> ConicProgram {
        ConicProgram {
            num_vars: self.num_vars,
            objective: self.objective,
            triplets: self.triplets,
            rhs: self.rhs,
            cones: self.cones,
            slices: self.slices,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalLimit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub x: Vec<f64>,
    /// Dual multipliers of the rows of `A x + s = b`.
    pub z: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub residuals: Residuals,
    pub iterations: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

/// Solves the program with an interior-point method.
pub fn solve(program: &ConicProgram, opts: SolverOptions) -> Result<ConicSolution, ConicError> {
    program.check()?;
    let n = program.num_vars;
    let m = program.num_rows();
    let (mut rows, mut cols, mut vals) = (Vec::new(), Vec::new(), Vec::new());
    for &(r, c, v) in &program.triplets {
        rows.push(r);
        cols.push(c);
        vals.push(v);
    }
    let a = CscMatrix::new_from_triplets(m, n, rows, cols, vals);
    let p = CscMatrix::<f64>::zeros((n, n));
    let cones: Vec<SupportedConeT<f64>> = program
        .cones
        .iter()
        .map(|c| match *c {
            Cone::Zero(k) => SupportedConeT::ZeroConeT(k),
            Cone::NonNeg(k) => SupportedConeT::NonnegativeConeT(k),
            Cone::SecondOrder(k) => SupportedConeT::SecondOrderConeT(k),
        })
        .collect();
    let mut solver = run_solver(program, &p, &a, &cones, opts, false)?;
    if !matches!(
        solver.solution.status,
        SolverStatus::Solved
            | SolverStatus::PrimalInfeasible
            | SolverStatus::AlmostPrimalInfeasible
    ) {
        solver = run_solver(program, &p, &a, &cones, opts, true)?;
    }
    let sol = &solver.solution;
    let status = match sol.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        _ => SolveStatus::NumericalLimit,
    };
    Ok(ConicSolution {
        objective: program.objective_value(&sol.x),
        x: sol.x.clone(),
        z: sol.z.clone(),
        status,
        residuals: Residuals {
            primal: solver.info.res_primal,
            dual: solver.info.res_dual,
            gap: solver.info.gap_rel.min(solver.info.gap_abs),
        },
        iterations: sol.iterations,
    })
}

// Careful mode takes shorter steps and refines the linear solves harder. It is
// only used when the default run stalls short of a verdict.
fn run_solver(
    program: &ConicProgram,
    p: &CscMatrix<f64>,
    a: &CscMatrix<f64>,
    cones: &[SupportedConeT<f64>],
    opts: SolverOptions,
    careful: bool,
) -> Result<DefaultSolver<f64>, ConicError> {
    let mut builder = DefaultSettingsBuilder::default();
    builder
        .verbose(false)
        .tol_gap_abs(opts.tol)
        .tol_gap_rel(opts.tol)
        .tol_feas(opts.tol)
        .max_iter(opts.max_iter)
        .presolve_enable(false);
    if careful {
        builder
            .max_iter(opts.max_iter.saturating_mul(2))
            .max_step_fraction(0.9)
            .equilibrate_max_iter(50)
            .static_regularization_constant(1e-10)
            .iterative_refinement_max_iter(50)
            .iterative_refinement_reltol(1e-15)
            .iterative_refinement_abstol(1e-15);
    }
    let settings = builder
        .build()
        .map_err(|e| ConicError::Backend(e.to_string()))?;
    let mut solver = DefaultSolver::new(p, &program.objective, a, &program.rhs, cones, settings)
        .map_err(|e| ConicError::Backend(e.to_string()))?;
    solver.solve();
    Ok(solver)
}
