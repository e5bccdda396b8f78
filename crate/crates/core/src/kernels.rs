//! Backstepping kernels on the triangle 𝒯 = {0 ≤ y ≤ x ≤ 1}.
//!
//! With Λ = diag(λ, −μ) and η = [[0, η⁺], [η⁻, 0]] the kernels solve
//!
//! ```text
//! Λ K_x + K_y Λ + K η(y) = 0
//! Λ γ'(x) + γ(x) A + λ K(x,0) [M; 0] = 0,   γ_α(0) = −M, γ_β(0) = γ_β0
//! Λ K(x,x) − K(x,x) Λ = −η(x)
//! K(x,0) (λq, −μ)ᵀ + γ(x) B = 0
//! ```
//!
//! Written entry by entry this is a Goursat problem with two families of
//! characteristics:
//!
//! * `K_uu`, `K_vv` are transported along the lines y = x − c (slope 1) and
//!   take their data on the edge y = 0 from the boundary identity;
//!   `(∂x + ∂y) K_uu = −η⁻ K_uv / λ`, `(∂x + ∂y) K_vv = η⁺ K_vu / μ`.
//! * `K_uv` is transported along (λ, −μ) and `K_vu` along (μ, −λ); both
//!   start on the diagonal where `K_uv(x,x) = −η⁺(x)/(λ+μ)` and
//!   `K_vu(x,x) = η⁻(x)/(λ+μ)`.
//! * `γ_α`, `γ_β` are ODEs in x forced by the edge values `K_uu(x,0)` and
//!   `K_vu(x,0)`.
//!
//! [`solve_kernels`] iterates successive approximations of these integral
//! equations from the zero kernel.

use nalgebra::RowDVector;

use crate::error::{Error, Result};
use crate::params::SystemParams;
use crate::quad::lagrange_cubic;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelName {
    Uu,
    Uv,
    Vu,
    Vv,
}

/// Values on the nodes (i, j), 0 ≤ j ≤ i ≤ nx, of a regular lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleField {
    nx: usize,
    data: Vec<f64>,
}

impl TriangleField {
    pub fn zeros(nx: usize) -> Self {
        TriangleField { nx, data: vec![0.0; (nx + 1) * (nx + 1)] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i && i <= self.nx);
        self.data[i * (self.nx + 1) + j]
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * (self.nx + 1) + j] = v;
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    /// Row x = x_i, y = y_0..=y_i.
    pub fn row(&self, i: usize) -> &[f64] {
        let start = i * (self.nx + 1);
        &self.data[start..=start + i]
    }

    fn sup_diff(&self, other: &Self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..=self.nx {
            for j in 0..=i {
                m = m.max((self.get(i, j) - other.get(i, j)).abs());
            }
        }
        m
    }

    fn all_finite(&self) -> bool {
        (0..=self.nx).all(|i| self.row(i).iter().all(|v| v.is_finite()))
    }

    /// Bilinear interpolation inside the square cells below the diagonal
    /// and linear interpolation in the half cells along it. Callers must
    /// pass a point of the triangle.
    pub fn interpolate(&self, x: f64, y: f64) -> f64 {
        let n = self.nx;
        let fx = (x * n as f64).clamp(0.0, n as f64);
        let fy = (y * n as f64).clamp(0.0, fx);
        let i0 = (fx.floor() as usize).min(n - 1);
        let mut j0 = (fy.floor() as usize).min(n - 1);
        let a = fx - i0 as f64;
        let mut b = fy - j0 as f64;
        if j0 > i0 {
            j0 = i0;
            b = a;
        }
        if j0 < i0 {
            let v00 = self.get(i0, j0);
            let v10 = self.get(i0 + 1, j0);
            let v01 = self.get(i0, j0 + 1);
            let v11 = self.get(i0 + 1, j0 + 1);
            (1.0 - a) * (1.0 - b) * v00 + a * (1.0 - b) * v10 + (1.0 - a) * b * v01 + a * b * v11
        } else {
            let b = b.min(a);
            (1.0 - a) * self.get(i0, j0) + (a - b) * self.get(i0 + 1, j0) + b * self.get(i0 + 1, j0 + 1)
        }
    }
}

#[derive(Clone, Debug)]
pub struct KernelSet {
    pub grid_nx: usize,
    pub k_uu: TriangleField,
    pub k_uv: TriangleField,
    pub k_vu: TriangleField,
    pub k_vv: TriangleField,
    /// γ_α(x_i), each 1×n.
    pub gamma_alpha: Vec<RowDVector<f64>>,
    /// γ_β(x_i), each 1×n.
    pub gamma_beta: Vec<RowDVector<f64>>,
    /// Max absolute finite-difference residual over the transport PDEs and
    /// the γ ODEs; filled by [`solve_kernels`].
    pub residual_norm: f64,
    pub iterations: usize,
    pub last_change: f64,
}

impl KernelSet {
    pub fn zeros(nx: usize, n: usize) -> Self {
        KernelSet {
            grid_nx: nx,
            k_uu: TriangleField::zeros(nx),
            k_uv: TriangleField::zeros(nx),
            k_vu: TriangleField::zeros(nx),
            k_vv: TriangleField::zeros(nx),
            gamma_alpha: vec![RowDVector::zeros(n); nx + 1],
            gamma_beta: vec![RowDVector::zeros(n); nx + 1],
            residual_norm: 0.0,
            iterations: 0,
            last_change: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.gamma_alpha[0].len()
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.grid_nx as f64
    }

    pub fn field(&self, which: KernelName) -> &TriangleField {
        match which {
            KernelName::Uu => &self.k_uu,
            KernelName::Uv => &self.k_uv,
            KernelName::Vu => &self.k_vu,
            KernelName::Vv => &self.k_vv,
        }
    }

    pub fn eval_kernel(&self, which: KernelName, x: f64, y: f64) -> Result<f64> {
        const SLACK: f64 = 1e-12;
        if !(x.is_finite() && y.is_finite()) || y < -SLACK || y > x + SLACK || x > 1.0 + SLACK {
            return Err(Error::OutsideDomain { x, y });
        }
        Ok(self.field(which).interpolate(x, y))
    }

    fn component(values: &[RowDVector<f64>], c: usize) -> Vec<f64> {
        values.iter().map(|g| g[c]).collect()
    }

    fn interp_row(&self, values: &[RowDVector<f64>], x: f64) -> RowDVector<f64> {
        let dx = self.dx();
        RowDVector::from_iterator(
            self.n(),
            (0..self.n()).map(|c| lagrange_cubic(&Self::component(values, c), dx, x.clamp(0.0, 1.0))),
        )
    }

    pub fn gamma_alpha_at(&self, x: f64) -> RowDVector<f64> {
        self.interp_row(&self.gamma_alpha, x)
    }

    pub fn gamma_beta_at(&self, x: f64) -> RowDVector<f64> {
        self.interp_row(&self.gamma_beta, x)
    }

    /// γ_β'(x) read off its defining ODE, μ γ_β' = γ_β A + λ K_vu(x,0) M.
    pub fn gamma_beta_prime_at(&self, params: &SystemParams, x: f64) -> RowDVector<f64> {
        let edge: Vec<f64> = (0..=self.grid_nx).map(|i| self.k_vu.get(i, 0)).collect();
        let kvu0 = lagrange_cubic(&edge, self.dx(), x.clamp(0.0, 1.0));
        (self.gamma_beta_at(x) * &params.a + &params.m * (params.lambda * kvu0)) / params.mu
    }

    fn sup_diff(&self, other: &Self) -> f64 {
        let rows = |a: &[RowDVector<f64>], b: &[RowDVector<f64>]| {
            a.iter().zip(b).fold(0.0f64, |m, (u, v)| m.max((u - v).amax()))
        };
        self.k_uu
            .sup_diff(&other.k_uu)
            .max(self.k_uv.sup_diff(&other.k_uv))
            .max(self.k_vu.sup_diff(&other.k_vu))
            .max(self.k_vv.sup_diff(&other.k_vv))
            .max(rows(&self.gamma_alpha, &other.gamma_alpha))
            .max(rows(&self.gamma_beta, &other.gamma_beta))
    }

    fn all_finite(&self) -> bool {
        self.k_uu.all_finite()
            && self.k_uv.all_finite()
            && self.k_vu.all_finite()
            && self.k_vv.all_finite()
            && self.gamma_alpha.iter().chain(&self.gamma_beta).all(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Sup-norm distance to a kernel set on a grid refined by an integer
    /// factor, compared on the nodes of the coarser grid.
    pub fn distance_on_coarse_nodes(&self, fine: &KernelSet) -> f64 {
        let r = fine.grid_nx / self.grid_nx;
        assert_eq!(r * self.grid_nx, fine.grid_nx, "grids are not nested");
        let mut d: f64 = 0.0;
        for i in 0..=self.grid_nx {
            for j in 0..=i {
                for w in [KernelName::Uu, KernelName::Uv, KernelName::Vu, KernelName::Vv] {
                    d = d.max((self.field(w).get(i, j) - fine.field(w).get(r * i, r * j)).abs());
                }
            }
            d = d.max((&self.gamma_alpha[i] - &fine.gamma_alpha[r * i]).amax());
            d = d.max((&self.gamma_beta[i] - &fine.gamma_beta[r * i]).amax());
        }
        d
    }
}

/// Node samples of the profile functions, shared by every sweep.
struct Coefficients<'a> {
    p: &'a SystemParams,
    nx: usize,
    dx: f64,
    eta_plus: Vec<f64>,
    eta_minus: Vec<f64>,
    gamma_beta_0: RowDVector<f64>,
}

impl<'a> Coefficients<'a> {
    fn new(p: &'a SystemParams, nx: usize, gamma_beta_0: &RowDVector<f64>) -> Self {
        let dx = 1.0 / nx as f64;
        Coefficients {
            p,
            nx,
            dx,
            eta_plus: (0..=nx).map(|i| p.eta_plus.eval(i as f64 * dx)).collect(),
            eta_minus: (0..=nx).map(|i| p.eta_minus.eval(i as f64 * dx)).collect(),
            gamma_beta_0: gamma_beta_0.clone(),
        }
    }
}

/// ∫₀^{s*} η(y₀ + c_y σ) K(x₀ − c_x σ, y₀ + c_y σ) dσ by the trapezoid
/// rule, stepping back from the node (x₀, y₀) towards the diagonal with a
/// fixed step so that sample offsets relative to the lattice depend only
/// on the step index.
fn characteristic_integral(
    field: &TriangleField,
    eta: &crate::profile::Profile,
    x0: f64,
    y0: f64,
    c_x: f64,
    c_y: f64,
    step: f64,
) -> f64 {
    let s_end = (x0 - y0) / (c_x + c_y);
    if s_end <= 0.0 {
        return 0.0;
    }
    let f = |s: f64| {
        let (x, y) = (x0 - c_x * s, y0 + c_y * s);
        eta.eval(y) * field.interpolate(x, y)
    };
    let full = (s_end / step * (1.0 + 1e-12)).floor() as usize;
    let mut acc = 0.0;
    let mut prev = f(0.0);
    for l in 1..=full {
        let cur = f(l as f64 * step);
        acc += 0.5 * step * (prev + cur);
        prev = cur;
    }
    let rest = s_end - full as f64 * step;
    if rest > 1e-14 * step {
        acc += 0.5 * rest * (prev + f(s_end));
    }
    acc
}

/// Integrate γ' = γ C + f(x) with γ(0) = γ0 by classical RK4 on the node
/// grid, the forcing at half steps by cubic interpolation.
fn integrate_gamma(
    gamma0: &RowDVector<f64>,
    c: &nalgebra::DMatrix<f64>,
    forcing_scale: &RowDVector<f64>,
    forcing: &[f64],
    dx: f64,
) -> Vec<RowDVector<f64>> {
    let nx = forcing.len() - 1;
    let rhs =
        |g: &RowDVector<f64>, x: f64| -> RowDVector<f64> { g * c + forcing_scale * lagrange_cubic(forcing, dx, x) };
    let mut out = Vec::with_capacity(nx + 1);
    let mut g = gamma0.clone();
    out.push(g.clone());
    for i in 0..nx {
        let x = i as f64 * dx;
        let k1 = rhs(&g, x);
        let k2 = rhs(&(&g + &k1 * (0.5 * dx)), x + 0.5 * dx);
        let k3 = rhs(&(&g + &k2 * (0.5 * dx)), x + 0.5 * dx);
        let k4 = rhs(&(&g + &k3 * dx), x + dx);
        g += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dx / 6.0);
        out.push(g.clone());
    }
    out
}

fn sweep(cf: &Coefficients<'_>, prev: &KernelSet) -> KernelSet {
    let p = cf.p;
    let (nx, dx) = (cf.nx, cf.dx);
    let (lambda, mu) = (p.lambda, p.mu);
    let n = p.n();
    let step = dx / lambda.max(mu);
    let mut next = KernelSet::zeros(nx, n);

    // K_uv and K_vu from their diagonal data, sources from the previous iterate
    for i in 0..=nx {
        let x = i as f64 * dx;
        for j in 0..=i {
            let y = j as f64 * dx;
            let xi_uv = (mu * x + lambda * y) / (lambda + mu);
            let xi_vu = (lambda * x + mu * y) / (lambda + mu);
            let uv = -p.eta_plus.eval(xi_uv) / (lambda + mu)
                - characteristic_integral(&prev.k_uu, &p.eta_plus, x, y, lambda, mu, step);
            let vu = p.eta_minus.eval(xi_vu) / (lambda + mu)
                + characteristic_integral(&prev.k_vv, &p.eta_minus, x, y, mu, lambda, step);
            next.k_uv.set(i, j, uv);
            next.k_vu.set(i, j, vu);
        }
        // exact diagonal data
        next.k_uv.set(i, i, -cf.eta_plus[i] / (lambda + mu));
        next.k_vu.set(i, i, cf.eta_minus[i] / (lambda + mu));
    }

    // γ ODEs forced by the previous edge values
    let a = &p.a;
    let edge_uu: Vec<f64> = (0..=nx).map(|i| prev.k_uu.get(i, 0)).collect();
    let edge_vu: Vec<f64> = (0..=nx).map(|i| prev.k_vu.get(i, 0)).collect();
    next.gamma_alpha = integrate_gamma(&(-&p.m), &(-a / lambda), &(-&p.m), &edge_uu, dx);
    next.gamma_beta = integrate_gamma(&cf.gamma_beta_0, &(a / mu), &(&p.m * (lambda / mu)), &edge_vu, dx);

    // edge data from the boundary identity, then transport along y = x − c
    let b = &p.b;
    let mut edge_new_uu = vec![0.0; nx + 1];
    let mut edge_new_vv = vec![0.0; nx + 1];
    for i in 0..=nx {
        let ga_b = next.gamma_alpha[i].dot(&b.transpose());
        let gb_b = next.gamma_beta[i].dot(&b.transpose());
        edge_new_uu[i] = (mu * next.k_uv.get(i, 0) - ga_b) / (lambda * p.q);
        edge_new_vv[i] = (lambda * p.q * next.k_vu.get(i, 0) + gb_b) / mu;
    }
    for c in 0..=nx {
        let (mut acc_uu, mut acc_vv) = (0.0, 0.0);
        let mut prev_uu = cf.eta_minus[0] * prev.k_uv.get(c, 0);
        let mut prev_vv = cf.eta_plus[0] * prev.k_vu.get(c, 0);
        next.k_uu.set(c, 0, edge_new_uu[c]);
        next.k_vv.set(c, 0, edge_new_vv[c]);
        for l in 1..=(nx - c) {
            let cur_uu = cf.eta_minus[l] * prev.k_uv.get(c + l, l);
            let cur_vv = cf.eta_plus[l] * prev.k_vu.get(c + l, l);
            acc_uu += 0.5 * dx * (prev_uu + cur_uu);
            acc_vv += 0.5 * dx * (prev_vv + cur_vv);
            prev_uu = cur_uu;
            prev_vv = cur_vv;
            next.k_uu.set(c + l, l, edge_new_uu[c] - acc_uu / lambda);
            next.k_vv.set(c + l, l, edge_new_vv[c] + acc_vv / mu);
        }
    }
    next
}

/// One successive-approximation sweep applied to `prev`.
pub fn picard_sweep(params: &SystemParams, prev: &KernelSet, gamma_beta_0: &RowDVector<f64>) -> KernelSet {
    let cf = Coefficients::new(params, prev.grid_nx, gamma_beta_0);
    sweep(&cf, prev)
}

pub fn solve_kernels(
    params: &SystemParams,
    nx: usize,
    gamma_beta_0: &RowDVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<KernelSet> {
    params.validate()?;
    if nx < 2 {
        return Err(Error::InvalidGrid(format!("kernel grid needs nx >= 2, got {nx}")));
    }
    if gamma_beta_0.len() != params.n() {
        return Err(Error::InvalidParams("gamma_beta_0 must be 1×n".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Precondition("tol must be positive".into()));
    }
    let cf = Coefficients::new(params, nx, gamma_beta_0);
    let mut current = KernelSet::zeros(nx, params.n());
    let mut change = f64::INFINITY;
    for it in 1..=max_iter {
        let next = sweep(&cf, &current);
        if !next.all_finite() {
            return Err(Error::NonFinite(format!("kernel sweep {it}")));
        }
        change = next.sup_diff(&current);
        current = next;
        if change < tol {
            current.iterations = it;
            current.last_change = change;
            let report = kernel_residuals(&current, params);
            current.residual_norm = report.max_differential();
            return Ok(current);
        }
    }
    Err(Error::NonConvergence { what: "kernel iteration", iterations: max_iter, last_change: change })
}

/// Kernels with the default options: γ_β(0) = 0, tol 1e-10, 200 sweeps.
pub fn solve_kernels_default(params: &SystemParams, nx: usize) -> Result<KernelSet> {
    solve_kernels(params, nx, &RowDVector::zeros(params.n()), DEFAULT_TOL, DEFAULT_MAX_ITER)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualKind {
    /// Finite-difference residual of a transport PDE or γ ODE.
    Differential,
    /// Residual of an imposed algebraic identity.
    Algebraic,
}

#[derive(Clone, Debug)]
pub struct ResidualEntry {
    pub name: &'static str,
    pub kind: ResidualKind,
    pub max: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ResidualReport {
    pub entries: Vec<ResidualEntry>,
}

impl ResidualReport {
    fn push(&mut self, name: &'static str, kind: ResidualKind, values: &[f64]) {
        let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mean =
            if values.is_empty() { 0.0 } else { values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64 };
        self.entries.push(ResidualEntry { name, kind, max, mean });
    }

    pub fn get(&self, name: &str) -> Option<&ResidualEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn max_of(&self, kind: ResidualKind) -> f64 {
        self.entries.iter().filter(|e| e.kind == kind).fold(0.0, |m, e| m.max(e.max))
    }

    pub fn max_differential(&self) -> f64 {
        self.max_of(ResidualKind::Differential)
    }

    pub fn max_algebraic(&self) -> f64 {
        self.max_of(ResidualKind::Algebraic)
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.max.is_finite() && e.mean.is_finite())
    }
}

/// Re-substitute a kernel set into centered finite-difference forms of
/// every kernel equation.
pub fn kernel_residuals(ks: &KernelSet, params: &SystemParams) -> ResidualReport {
    let nx = ks.grid_nx;
    let dx = ks.dx();
    let (lambda, mu, q) = (params.lambda, params.mu, params.q);
    let ep = |j: usize| params.eta_plus.eval(j as f64 * dx);
    let em = |j: usize| params.eta_minus.eval(j as f64 * dx);
    let (uu, uv, vu, vv) = (&ks.k_uu, &ks.k_uv, &ks.k_vu, &ks.k_vv);
    let mut report = ResidualReport::default();

    let (mut r_uu, mut r_vv, mut r_uv, mut r_vu) = (vec![], vec![], vec![], vec![]);
    for i in 1..nx {
        for j in 1..=i {
            let d_uu = (uu.get(i + 1, j + 1) - uu.get(i - 1, j - 1)) / (2.0 * dx);
            let d_vv = (vv.get(i + 1, j + 1) - vv.get(i - 1, j - 1)) / (2.0 * dx);
            r_uu.push(lambda * d_uu + em(j) * uv.get(i, j));
            r_vv.push(-mu * d_vv + ep(j) * vu.get(i, j));
            if j < i {
                let uv_x = (uv.get(i + 1, j) - uv.get(i - 1, j)) / (2.0 * dx);
                let uv_y = (uv.get(i, j + 1) - uv.get(i, j - 1)) / (2.0 * dx);
                let vu_x = (vu.get(i + 1, j) - vu.get(i - 1, j)) / (2.0 * dx);
                let vu_y = (vu.get(i, j + 1) - vu.get(i, j - 1)) / (2.0 * dx);
                r_uv.push(lambda * uv_x - mu * uv_y + ep(j) * uu.get(i, j));
                r_vu.push(-mu * vu_x + lambda * vu_y + em(j) * vv.get(i, j));
            }
        }
    }
    report.push("pde_uu", ResidualKind::Differential, &r_uu);
    report.push("pde_uv", ResidualKind::Differential, &r_uv);
    report.push("pde_vu", ResidualKind::Differential, &r_vu);
    report.push("pde_vv", ResidualKind::Differential, &r_vv);

    let (mut r_ga, mut r_gb) = (vec![], vec![]);
    for i in 1..nx {
        let dga = (&ks.gamma_alpha[i + 1] - &ks.gamma_alpha[i - 1]) / (2.0 * dx);
        let dgb = (&ks.gamma_beta[i + 1] - &ks.gamma_beta[i - 1]) / (2.0 * dx);
        let ra = dga * lambda + &ks.gamma_alpha[i] * &params.a + &params.m * (lambda * uu.get(i, 0));
        let rb = dgb * (-mu) + &ks.gamma_beta[i] * &params.a + &params.m * (lambda * vu.get(i, 0));
        r_ga.extend(ra.iter());
        r_gb.extend(rb.iter());
    }
    report.push("ode_gamma_alpha", ResidualKind::Differential, &r_ga);
    report.push("ode_gamma_beta", ResidualKind::Differential, &r_gb);

    let bt = params.b.transpose();
    let (mut r_bu, mut r_bv, mut r_duv, mut r_dvu) = (vec![], vec![], vec![], vec![]);
    for i in 0..=nx {
        r_bu.push(lambda * q * uu.get(i, 0) - mu * uv.get(i, 0) + ks.gamma_alpha[i].dot(&bt));
        r_bv.push(lambda * q * vu.get(i, 0) - mu * vv.get(i, 0) + ks.gamma_beta[i].dot(&bt));
        r_duv.push((lambda + mu) * uv.get(i, i) + ep(i));
        r_dvu.push(-(lambda + mu) * vu.get(i, i) + em(i));
    }
    report.push("boundary_u", ResidualKind::Algebraic, &r_bu);
    report.push("boundary_v", ResidualKind::Algebraic, &r_bv);
    report.push("diagonal_uv", ResidualKind::Algebraic, &r_duv);
    report.push("diagonal_vu", ResidualKind::Algebraic, &r_dvu);
    let ga0: Vec<f64> = (&ks.gamma_alpha[0] + &params.m).iter().cloned().collect();
    report.push("initial_gamma_alpha", ResidualKind::Algebraic, &ga0);
    report
}
