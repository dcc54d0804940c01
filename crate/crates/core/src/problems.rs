//! Benchmark problem builders and the toy instances used in tests.
//!
//! Random data is drawn from a SplitMix64 generator so instances are
//! bit-reproducible across platforms for a fixed seed.

use nalgebra::{DMatrix, DVector};

use crate::expr::{Affine, Atom, ConvexExpr, ModelError};
use crate::problem::{DCFunction, DCProblem, Equalities, FeasibleSet};

/// SplitMix64: the 64-bit mixing generator from Steele, Lea and Flood's
/// "Fast splittable pseudorandom number generators" (the exact constants
/// below). State advances by the golden-gamma increment and each output is a
/// finalizer of the state, so streams are portable and seed-stable.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` using the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

/// Unit affine `e_i' x` helper.
fn unit(dim: usize, i: usize, scale: f64, b: f64) -> Affine {
    let mut a = DVector::zeros(dim);
    a[i] = scale;
    Affine { a, b }
}

/// TOY-INEQ: minimize `x` subject to `1 - x <= 0` over `[-10, 10]`.
pub fn toy_ineq() -> DCProblem {
    let d = 1;
    let f0 = DCFunction::convex(
        ConvexExpr::atom(d, Atom::Affine(unit(d, 0, 1.0, 0.0))).unwrap(),
    );
    let con = DCFunction::convex(
        ConvexExpr::atom(d, Atom::Affine(unit(d, 0, -1.0, 1.0))).unwrap(),
    );
    DCProblem::new(
        f0,
        vec![con],
        vec![],
        FeasibleSet::box_only(DVector::from_element(1, -10.0), DVector::from_element(1, 10.0))
            .unwrap(),
    )
    .unwrap()
}

/// TOY-EQ: minimize `(x1-1)^2 + (x2-1)^2` subject to `x1^2 - x2^2 = 0` over
/// `[-5, 5]^2`. The origin is an infeasible critical point of the penalty
/// term, which makes this the canonical degenerate instance.
pub fn toy_eq() -> DCProblem {
    let d = 2;
    let f0 = DCFunction::convex(
        ConvexExpr::atom(
            d,
            Atom::Quad {
                p: DMatrix::from_diagonal(&DVector::from_element(d, 2.0)),
                a: DVector::from_vec(vec![-2.0, -2.0]),
                b: 2.0,
            },
        )
        .unwrap(),
    );
    let sq = |coord: usize| {
        let mut p = DMatrix::zeros(d, d);
        p[(coord, coord)] = 2.0;
        ConvexExpr::atom(d, Atom::Quad { p, a: DVector::zeros(d), b: 0.0 }).unwrap()
    };
    let eq = DCFunction::new(sq(0), sq(1)).unwrap();
    DCProblem::new(
        f0,
        vec![],
        vec![eq],
        FeasibleSet::box_only(DVector::from_element(d, -5.0), DVector::from_element(d, 5.0))
            .unwrap(),
    )
    .unwrap()
}

/// Parameters of the production-planning benchmark.
#[derive(Debug, Clone)]
pub struct ProductionParams {
    /// Horizon `k >= 2`.
    pub horizon: usize,
    /// Interest rate in the discount factor `exp(-rate * i)`.
    pub discount: f64,
    /// Unit penalty for unmet planned output.
    pub shortage_penalty: f64,
    /// Unit storage cost.
    pub storage_cost: f64,
    pub initial_stock: f64,
    /// Coefficient of the quadratic production cost `coeff * u^2`.
    pub production_cost_coeff: f64,
    pub seed: u64,
    pub price_range: (f64, f64),
    pub output_range: (f64, f64),
    pub bound_range: (f64, f64),
}

impl Default for ProductionParams {
    fn default() -> Self {
        Self {
            horizon: 100,
            discount: 0.01,
            shortage_penalty: 5.0,
            storage_cost: 0.5,
            initial_stock: 0.0,
            production_cost_coeff: 0.5,
            seed: 0,
            price_range: (10.0, 15.0),
            output_range: (5.0, 15.0),
            bound_range: (5.0, 15.0),
        }
    }
}

/// A built production instance: the DC problem plus the sampled data needed
/// to simulate the true dynamics and to seed benchmark starts.
#[derive(Debug, Clone)]
pub struct ProductionInstance {
    pub problem: DCProblem,
    pub params: ProductionParams,
    pub prices: Vec<f64>,
    pub outputs: Vec<f64>,
    pub bounds: Vec<f64>,
}

impl ProductionInstance {
    /// Stock variables are `z(1..k-1)`; `z(0)` is fixed and `z(k)` dropped.
    pub fn z_index(&self, i: usize) -> usize {
        debug_assert!((1..self.params.horizon).contains(&i));
        i - 1
    }

    /// Control variables are `u(0..k-1)`.
    pub fn u_index(&self, i: usize) -> usize {
        debug_assert!(i < self.params.horizon);
        self.params.horizon - 1 + i
    }

    pub fn dim(&self) -> usize {
        2 * self.params.horizon - 1
    }

    /// Runs the true stock recurrence for a control sequence and returns the
    /// full decision vector; its functional constraints are satisfied
    /// exactly, so the penalty term vanishes there.
    pub fn simulate(&self, controls: &[f64]) -> DVector<f64> {
        let k = self.params.horizon;
        assert_eq!(controls.len(), k);
        let mut point = DVector::zeros(self.dim());
        let mut z = self.params.initial_stock;
        for i in 0..k {
            let u = controls[i];
            point[self.u_index(i)] = u;
            let znext = z + u - (z + u).min(self.outputs[i]);
            if i + 1 < k {
                point[self.z_index(i + 1)] = znext;
            }
            z = znext;
        }
        point
    }
}

/// Builds the discounted production-planning problem: convex objective, `k-1`
/// DC equality constraints for the stock dynamics, and control bounds in the
/// feasible set (stock variables stay unconstrained there).
pub fn build_production_problem(params: &ProductionParams) -> Result<ProductionInstance, ModelError> {
    let k = params.horizon;
    if k < 2 {
        return Err(ModelError::InvalidParameter(format!("horizon must be >= 2, got {k}")));
    }
    for (name, (lo, hi)) in [
        ("price_range", params.price_range),
        ("output_range", params.output_range),
        ("bound_range", params.bound_range),
    ] {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(ModelError::InvalidParameter(format!("{name} is empty or not finite")));
        }
    }

    let mut rng = SplitMix64::new(params.seed);
    let prices: Vec<f64> = (0..k).map(|_| rng.uniform(params.price_range.0, params.price_range.1)).collect();
    let outputs: Vec<f64> = (0..k).map(|_| rng.uniform(params.output_range.0, params.output_range.1)).collect();
    let bounds: Vec<f64> = (0..k).map(|_| rng.uniform(params.bound_range.0, params.bound_range.1)).collect();

    let d = 2 * k - 1;
    let iz = |i: usize| i - 1;
    let iu = |i: usize| k - 1 + i;

    // Objective: sum_{i=1}^{k-1} e^{-rate i} [ p_i max{-z_i - u_i, -v_i}
    //   + coeff u_i^2 + beta max{0, v_i - z_i - u_i} + storage z_i ].
    let mut g0 = ConvexExpr::zero(d);
    let mut quad_diag = DVector::zeros(d);
    let mut lin = DVector::zeros(d);
    for i in 1..k {
        let w = (-params.discount * i as f64).exp();
        let mut sale = DVector::zeros(d);
        sale[iz(i)] = -1.0;
        sale[iu(i)] = -1.0;
        g0.push(
            w * prices[i],
            Atom::MaxAff(vec![
                Affine { a: sale.clone(), b: 0.0 },
                Affine { a: DVector::zeros(d), b: -outputs[i] },
            ]),
        )?;
        quad_diag[iu(i)] = 2.0 * params.production_cost_coeff * w;
        g0.push(
            w * params.shortage_penalty,
            Atom::Hinge(Affine { a: sale, b: outputs[i] }),
        )?;
        lin[iz(i)] += w * params.storage_cost;
    }
    g0.push(1.0, Atom::Quad { p: DMatrix::from_diagonal(&quad_diag), a: DVector::zeros(d), b: 0.0 })?;
    g0.push(1.0, Atom::Affine(Affine { a: lin, b: 0.0 }))?;
    let objective = DCFunction::convex(g0);

    // Dynamics as DC equalities with g_j = 0:
    //   h_j = -z(j+1) + z(j) + u(j) + max{-z(j) - u(j), -v(j)},  j = 0..k-2.
    let mut equalities = Vec::with_capacity(k - 1);
    for j in 0..k - 1 {
        let mut aff = DVector::zeros(d);
        let mut aff_b = 0.0;
        aff[iz(j + 1)] = -1.0;
        if j >= 1 {
            aff[iz(j)] = 1.0;
        } else {
            aff_b += params.initial_stock;
        }
        aff[iu(j)] = 1.0;

        let mut neg = DVector::zeros(d);
        let mut neg_b = 0.0;
        if j >= 1 {
            neg[iz(j)] = -1.0;
        } else {
            neg_b -= params.initial_stock;
        }
        neg[iu(j)] = -1.0;

        let h = ConvexExpr::zero(d)
            .with(1.0, Atom::Affine(Affine { a: aff, b: aff_b }))?
            .with(
                1.0,
                Atom::MaxAff(vec![
                    Affine { a: neg, b: neg_b },
                    Affine { a: DVector::zeros(d), b: -outputs[j] },
                ]),
            )?;
        equalities.push(DCFunction::new(ConvexExpr::zero(d), h)?);
    }

    let mut lower = DVector::from_element(d, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(d, f64::INFINITY);
    for i in 0..k {
        lower[iu(i)] = 0.0;
        upper[iu(i)] = bounds[i];
    }
    let set = FeasibleSet::box_only(lower, upper)?;

    let problem = DCProblem::new(objective, vec![], equalities, set)?;
    Ok(ProductionInstance { problem, params: params.clone(), prices, outputs, bounds })
}

/// Parameters of the train-driving benchmark. Controls are stored rescaled by
/// the train mass, so the modeled bound is `control_limit / mass`.
#[derive(Debug, Clone)]
pub struct TrainParams {
    /// Number of discretization intervals.
    pub horizon: usize,
    pub total_time: f64,
    pub distance: f64,
    pub drag_p: f64,
    pub drag_q: f64,
    /// Physical control magnitude bound (unscaled).
    pub control_limit: f64,
    pub mass: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            horizon: 480,
            total_time: 48.0,
            distance: 200.0,
            drag_p: 0.78e-4,
            drag_q: 0.28e-3,
            control_limit: 2.0e5 / 3.0,
            mass: 1.0e5,
        }
    }
}

/// A built train instance with the variable layout and simulation helpers.
#[derive(Debug, Clone)]
pub struct TrainInstance {
    pub problem: DCProblem,
    pub params: TrainParams,
    pub delta: f64,
}

impl TrainInstance {
    /// Rescaled controls `u_hat(0..k-1)`.
    pub fn u_index(&self, i: usize) -> usize {
        debug_assert!(i < self.params.horizon);
        i
    }

    /// Positions `x(1..k-1)`; `x(0) = 0` and `x(k) = s` are substituted.
    pub fn x_index(&self, i: usize) -> usize {
        debug_assert!((1..self.params.horizon).contains(&i));
        self.params.horizon + (i - 1)
    }

    /// Velocities `y(2..k)`; `y(0) = 0` and `y(1) = delta * u_hat(0)` are
    /// substituted, `y(k)` is pinned to zero by an affine row.
    pub fn y_index(&self, i: usize) -> usize {
        debug_assert!((2..=self.params.horizon).contains(&i));
        2 * self.params.horizon - 1 + (i - 2)
    }

    pub fn dim(&self) -> usize {
        3 * self.params.horizon - 2
    }

    pub fn velocity(&self, point: &DVector<f64>, i: usize) -> f64 {
        match i {
            0 => 0.0,
            1 => self.delta * point[self.u_index(0)],
            _ => point[self.y_index(i)],
        }
    }

    pub fn position(&self, point: &DVector<f64>, i: usize) -> f64 {
        let k = self.params.horizon;
        if i == 0 {
            0.0
        } else if i == k {
            self.params.distance
        } else {
            point[self.x_index(i)]
        }
    }

    /// Runs the true velocity/position recurrences for a rescaled control
    /// sequence. The returned point satisfies every DC dynamics constraint
    /// exactly; terminal conditions live in the affine part of the set and
    /// may be violated.
    pub fn simulate(&self, controls: &[f64]) -> DVector<f64> {
        let k = self.params.horizon;
        assert_eq!(controls.len(), k);
        let dt = self.delta;
        let mut point = DVector::zeros(self.dim());
        for (i, &u) in controls.iter().enumerate() {
            point[self.u_index(i)] = u;
        }
        let mut y = 0.0;
        let mut x = 0.0;
        for i in 0..k {
            let ynext =
                y + dt * controls[i] - dt * self.params.drag_p * y * y.abs() - dt * self.params.drag_q * y;
            let xnext = x + dt * y;
            if i + 1 >= 2 {
                point[self.y_index(i + 1)] = ynext;
            }
            if i + 1 < k {
                point[self.x_index(i + 1)] = xnext;
            }
            y = ynext;
            x = xnext;
        }
        point
    }

    /// Position/velocity samples `(x(i), y(i))` for `i = 0..=k`.
    pub fn tachogram(&self, point: &DVector<f64>) -> Vec<(f64, f64)> {
        (0..=self.params.horizon)
            .map(|i| (self.position(point, i), self.velocity(point, i)))
            .collect()
    }

    /// Controls in physical units.
    pub fn unscaled_controls(&self, point: &DVector<f64>) -> Vec<f64> {
        (0..self.params.horizon)
            .map(|i| point[self.u_index(i)] * self.params.mass)
            .collect()
    }
}

/// The DC pair of `y(yi) * max{0, u(ui)}` built from the squared-hinge
/// identity; `y_arg`/`u_arg` are the affine maps selecting the two factors.
fn pos_product_pair(
    dim: usize,
    y_arg: Affine,
    u_arg: Affine,
) -> Result<(ConvexExpr, ConvexExpr), ModelError> {
    let neg_y = Affine { a: -&y_arg.a, b: -y_arg.b };
    let g = ConvexExpr::zero(dim)
        .with(0.5, Atom::SqHingeSum(vec![y_arg.clone(), u_arg.clone()]))?
        .with(0.5, Atom::SqHingeSum(vec![neg_y.clone()]))?;
    let h = ConvexExpr::zero(dim)
        .with(0.5, Atom::SqHingeSum(vec![neg_y, u_arg]))?
        .with(0.5, Atom::SqHingeSum(vec![y_arg]))?;
    Ok((g, h))
}

/// DC decomposition of `x_y * max{0, x_u}` on coordinates of `R^dim`.
pub fn dc_pos_product(dim: usize, y_index: usize, u_index: usize) -> Result<DCFunction, ModelError> {
    if y_index >= dim || u_index >= dim {
        return Err(ModelError::IndexOutOfRange { index: y_index.max(u_index), dim });
    }
    let (g, h) = pos_product_pair(dim, unit(dim, y_index, 1.0, 0.0), unit(dim, u_index, 1.0, 0.0))?;
    DCFunction::new(g, h)
}

/// DC decomposition of `x_y |x_y|` as a difference of squared hinges.
pub fn dc_signed_square(dim: usize, y_index: usize) -> Result<DCFunction, ModelError> {
    if y_index >= dim {
        return Err(ModelError::IndexOutOfRange { index: y_index, dim });
    }
    let g = ConvexExpr::zero(dim).with(1.0, Atom::SqHingeSum(vec![unit(dim, y_index, 1.0, 0.0)]))?;
    let h = ConvexExpr::zero(dim).with(1.0, Atom::SqHingeSum(vec![unit(dim, y_index, -1.0, 0.0)]))?;
    DCFunction::new(g, h)
}

/// Builds the discretized train problem: objective from the `y [u]_+` DC
/// pair, `k-1` DC equality constraints for the velocity dynamics, and all
/// linear constraints (position dynamics, boundary conditions, control
/// bounds) in the feasible set.
pub fn build_train_problem(params: &TrainParams) -> Result<TrainInstance, ModelError> {
    let k = params.horizon;
    if k < 3 {
        return Err(ModelError::InvalidParameter(format!("horizon must be >= 3, got {k}")));
    }
    if !(params.total_time > 0.0) || !(params.distance > 0.0) || !(params.mass > 0.0) {
        return Err(ModelError::InvalidParameter("time, distance and mass must be positive".into()));
    }
    let dt = params.total_time / k as f64;
    let d = 3 * k - 2;
    let u_bound = params.control_limit / params.mass;

    let inst_for_layout = TrainInstance {
        problem: DCProblem {
            dim: d,
            objective: DCFunction::convex(ConvexExpr::zero(d)),
            inequalities: vec![],
            equalities: vec![],
            set: FeasibleSet::free(d),
        },
        params: params.clone(),
        delta: dt,
    };
    let iu = |i: usize| inst_for_layout.u_index(i);
    let ix = |i: usize| inst_for_layout.x_index(i);
    let iy = |i: usize| inst_for_layout.y_index(i);
    // y(1) is the affine map delta * u_hat(0).
    let y_arg = |i: usize| -> Affine {
        if i == 1 {
            unit(d, iu(0), dt, 0.0)
        } else {
            unit(d, iy(i), 1.0, 0.0)
        }
    };

    // Objective sum_{i=1}^{k-1} y(i) [u_hat(i)]_+ via the DC identity.
    let mut g0 = ConvexExpr::zero(d);
    let mut h0 = ConvexExpr::zero(d);
    for i in 1..k {
        let (g, h) = pos_product_pair(d, y_arg(i), unit(d, iu(i), 1.0, 0.0))?;
        g0 = g0.plus(&g)?;
        h0 = h0.plus(&h)?;
    }
    let objective = DCFunction::new(g0, h0)?;

    // Velocity dynamics for i = 1..k-1 as DC equalities:
    //   y(i+1) - y(i) - dt u(i) + dt Q y(i) + dt P y(i)|y(i)| = 0,
    // with y(i)|y(i)| split as [y]_+^2 - [-y]_+^2.
    let mut equalities = Vec::with_capacity(k - 1);
    for i in 1..k {
        let ya = y_arg(i);
        let mut aff = DVector::zeros(d);
        // y(i+1): variable for i+1 in 2..=k.
        aff[iy(i + 1)] = 1.0;
        let mut aff_b = 0.0;
        // -y(i) + dt Q y(i)
        let coef = -1.0 + dt * params.drag_q;
        for idx in 0..d {
            if ya.a[idx] != 0.0 {
                aff[idx] += coef * ya.a[idx];
            }
        }
        aff_b += coef * ya.b;
        aff[iu(i)] -= dt;

        let neg_ya = Affine { a: -&ya.a, b: -ya.b };
        let g = ConvexExpr::zero(d)
            .with(1.0, Atom::Affine(Affine { a: aff, b: aff_b }))?
            .with(dt * params.drag_p, Atom::SqHingeSum(vec![ya.clone()]))?;
        let h = ConvexExpr::zero(d).with(dt * params.drag_p, Atom::SqHingeSum(vec![neg_ya]))?;
        equalities.push(DCFunction::new(g, h)?);
    }

    // Affine rows: position dynamics (k rows) plus the terminal velocity pin.
    let rows = k + 1;
    let mut mat = DMatrix::zeros(rows, d);
    let mut rhs = DVector::zeros(rows);
    for i in 0..k {
        // x(i+1) - x(i) - dt y(i) = 0 with substituted constants.
        let r = i;
        if i + 1 < k {
            mat[(r, ix(i + 1))] = 1.0;
        } else {
            rhs[r] -= params.distance;
        }
        if i >= 1 {
            mat[(r, ix(i))] = -1.0;
        }
        if i >= 1 {
            let ya = y_arg(i);
            for idx in 0..d {
                if ya.a[idx] != 0.0 {
                    mat[(r, idx)] -= dt * ya.a[idx];
                }
            }
        }
        // i = 0: y(0) = 0 contributes nothing.
    }
    mat[(k, iy(k))] = 1.0;

    let mut lower = DVector::from_element(d, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(d, f64::INFINITY);
    for i in 0..k {
        lower[iu(i)] = -u_bound;
        upper[iu(i)] = u_bound;
    }
    let set = FeasibleSet::new(lower, upper, Some(Equalities { mat, rhs }))?;

    let problem = DCProblem::new(objective, vec![], equalities, set)?;
    Ok(TrainInstance { problem, params: params.clone(), delta: dt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::infeasibility;
    use crate::problem::dc_value;

    #[test]
    fn splitmix_is_stable() {
        let mut r = SplitMix64::new(42);
        let a = r.next_u64();
        let mut r2 = SplitMix64::new(42);
        assert_eq!(a, r2.next_u64());
        // Published test vector for seed 1234567.
        let mut r3 = SplitMix64::new(1234567);
        assert_eq!(r3.next_u64(), 6457827717110365317);
    }

    #[test]
    fn production_dimensions_match_horizon() {
        let inst = build_production_problem(&ProductionParams {
            horizon: 1000,
            seed: 7,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(inst.problem.dim, 1999);
        assert_eq!(inst.problem.equalities.len(), 999);
        assert!(build_production_problem(&ProductionParams { horizon: 1, ..Default::default() }).is_err());
    }

    #[test]
    fn production_zero_controls_feasible_for_constant_data() {
        // k = 3 with constant data and z0 = 0: zero production keeps the
        // stock at zero and satisfies the dynamics exactly.
        let params = ProductionParams {
            horizon: 3,
            seed: 0,
            price_range: (10.0, 10.0),
            output_range: (5.0, 5.0),
            bound_range: (5.0, 5.0),
            ..Default::default()
        };
        let inst = build_production_problem(&params).unwrap();
        let point = inst.simulate(&[0.0, 0.0, 0.0]);
        for f in &inst.problem.equalities {
            assert_eq!(dc_value(f, &point).unwrap().f, 0.0);
        }
        assert_eq!(infeasibility(&inst.problem, &point).unwrap(), 0.0);
    }

    #[test]
    fn production_simulation_is_functionally_feasible() {
        let inst = build_production_problem(&ProductionParams {
            horizon: 12,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let mut rng = SplitMix64::new(99);
        let controls: Vec<f64> = (0..12).map(|i| rng.uniform(0.0, inst.bounds[i])).collect();
        let point = inst.simulate(&controls);
        assert!(infeasibility(&inst.problem, &point).unwrap() < 1e-12);
    }

    #[test]
    fn production_instances_are_seed_reproducible() {
        let params = ProductionParams { horizon: 8, seed: 11, ..Default::default() };
        let a = build_production_problem(&params).unwrap();
        let b = build_production_problem(&params).unwrap();
        assert_eq!(crate::io::problem_to_json(&a.problem), crate::io::problem_to_json(&b.problem));
    }

    #[test]
    fn pos_product_identity_holds() {
        let f = dc_pos_product(2, 0, 1).unwrap();
        // Hand values from the identity.
        for (y, u, expect) in [(1.0, 1.0, 1.0), (-2.0, 3.0, -6.0), (1.0, -1.0, 0.0)] {
            let v = dc_value(&f, &DVector::from_vec(vec![y, u])).unwrap();
            assert!((v.f - expect).abs() < 1e-12, "y={y} u={u}: {v:?}");
        }
        let mut rng = SplitMix64::new(5);
        for _ in 0..10_000 {
            let y = rng.uniform(-10.0, 10.0);
            let u = rng.uniform(-10.0, 10.0);
            let v = dc_value(&f, &DVector::from_vec(vec![y, u])).unwrap();
            assert!((v.f - y * u.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn signed_square_identity_holds() {
        let f = dc_signed_square(1, 0).unwrap();
        let v = dc_value(&f, &DVector::from_vec(vec![-3.0])).unwrap();
        assert_eq!(v.f, -9.0);
        let mut rng = SplitMix64::new(6);
        for _ in 0..10_000 {
            let y = rng.uniform(-10.0, 10.0);
            let v = dc_value(&f, &DVector::from_vec(vec![y])).unwrap();
            assert!((v.f - y * y.abs()).abs() < 1e-12);
        }
        assert!(dc_pos_product(2, 0, 2).is_err());
        assert!(dc_signed_square(1, 1).is_err());
    }

    #[test]
    fn train_counts_and_feasibility() {
        let params = TrainParams { horizon: 60, ..Default::default() };
        let inst = build_train_problem(&params).unwrap();
        assert_eq!(inst.problem.dim, 3 * 60 - 2);
        assert_eq!(inst.problem.equalities.len(), 59);
        let eq = inst.problem.set.equalities().unwrap();
        assert_eq!(eq.mat.nrows(), 61);

        // Simulated dynamics satisfy all DC constraints exactly.
        let mut rng = SplitMix64::new(21);
        let controls: Vec<f64> = (0..60).map(|_| rng.uniform(-2.0 / 3.0, 2.0 / 3.0)).collect();
        let point = inst.simulate(&controls);
        assert!(infeasibility(&inst.problem, &point).unwrap() < 1e-10);

        let tacho = inst.tachogram(&point);
        assert_eq!(tacho.len(), 61);
        assert_eq!(tacho[0], (0.0, 0.0));
    }

    #[test]
    fn oversized_mass_shrinks_control_authority() {
        // The infeasible variant: with triple mass the rescaled control bound
        // drops to 2/9 and the terminal conditions become unreachable; here we
        // only pin the bound arithmetic used by that fixture.
        let params = TrainParams { horizon: 12, mass: 3.0e5, ..Default::default() };
        let inst = build_train_problem(&params).unwrap();
        let b = inst.problem.set.upper()[inst.u_index(0)];
        assert!((b - 2.0 / 9.0).abs() < 1e-12);
    }
}
