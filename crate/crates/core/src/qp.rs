//! Dense convex QP solver.
//!
//! Solves `min 1/2 z'Hz + f'z  s.t.  lb <= Gz <= ub` with an operator-splitting
//! (ADMM) iteration on a Ruiz-equilibrated copy of the problem, then polishes
//! the result by solving the KKT system restricted to the constraints the
//! iteration identified as active. Duals follow the sign convention
//! `Hz + f + G'y = 0`, with `y_i > 0` on an active upper bound and `y_i < 0`
//! on an active lower bound.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub g: DMatrix<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        h: DMatrix<f64>,
        f: DVector<f64>,
        g: DMatrix<f64>,
        lb: DVector<f64>,
        ub: DVector<f64>,
    ) -> Result<Self> {
        let n = f.len();
        if h.nrows() != n || h.ncols() != n {
            return Err(Error::Dimension(format!("H is {}x{}, expected {n}x{n}", h.nrows(), h.ncols())));
        }
        let m = g.nrows();
        if g.ncols() != n || lb.len() != m || ub.len() != m {
            return Err(Error::Dimension("constraint matrix and bounds disagree".into()));
        }
        if h.iter().chain(f.iter()).chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("QP data"));
        }
        if lb.iter().chain(ub.iter()).any(|v| v.is_nan()) {
            return Err(Error::NonFinite("QP bounds"));
        }
        let asym = (&h - h.transpose()).amax();
        if asym > 1e-12 * h.amax().max(1.0) {
            return Err(Error::InvalidParameter(format!("H is not symmetric (max deviation {asym:e})")));
        }
        Ok(Self { h, f, g, lb, ub })
    }

    /// Unconstrained problem.
    pub fn unconstrained(h: DMatrix<f64>, f: DVector<f64>) -> Result<Self> {
        let n = f.len();
        Self::new(h, f, DMatrix::zeros(0, n), DVector::zeros(0), DVector::zeros(0))
    }

    /// Problem with simple bounds `lo <= z <= hi`.
    pub fn boxed(h: DMatrix<f64>, f: DVector<f64>, lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        let n = f.len();
        Self::new(h, f, DMatrix::identity(n, n), lo, hi)
    }

    pub fn num_vars(&self) -> usize {
        self.f.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.g.nrows()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.f.dot(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIter,
    PrimalInfeasible,
}

impl QpStatus {
    pub fn code(self) -> u8 {
        match self {
            QpStatus::Solved => 0,
            QpStatus::MaxIter => 1,
            QpStatus::PrimalInfeasible => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(QpStatus::Solved),
            1 => Some(QpStatus::MaxIter),
            2 => Some(QpStatus::PrimalInfeasible),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub r_prim: f64,
    pub r_dual: f64,
    pub r_comp: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.r_prim.max(self.r_dual).max(self.r_comp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub duals: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub residuals: KktResiduals,
    /// Whether `z` came from the active-set polish.
    pub polished: bool,
    /// Last ADMM iterate before polishing.
    pub admm_z: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation in (0, 2).
    pub alpha: f64,
    pub polish: bool,
    pub check_every: usize,
    pub scaling_iters: usize,
    pub eps_infeasible: f64,
    pub warm_z: Option<DVector<f64>>,
    pub warm_duals: Option<DVector<f64>>,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iter: 4000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            polish: true,
            check_every: 5,
            scaling_iters: 10,
            eps_infeasible: 1e-7,
            warm_z: None,
            warm_duals: None,
        }
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Primal, dual and complementarity residuals of a candidate point.
pub fn kkt_residuals(p: &QpProblem, z: &DVector<f64>, duals: &DVector<f64>) -> KktResiduals {
    let gz = &p.g * z;
    let mut r_prim = 0.0f64;
    let mut r_comp = 0.0f64;
    for i in 0..gz.len() {
        let clipped = gz[i].clamp(p.lb[i], p.ub[i]);
        r_prim = r_prim.max((clipped - gz[i]).abs());
        let y = duals[i];
        let viol = if y > 0.0 {
            if p.ub[i].is_finite() { y.min((p.ub[i] - gz[i]).abs()) } else { y }
        } else if y < 0.0 {
            if p.lb[i].is_finite() { (-y).min((gz[i] - p.lb[i]).abs()) } else { -y }
        } else {
            0.0
        };
        r_comp = r_comp.max(viol);
    }
    let r_dual = inf_norm(&(&p.h * z + &p.f + p.g.transpose() * duals));
    KktResiduals { r_prim, r_dual, r_comp }
}

/// Diagonal equilibration `H' = c D H D`, `f' = c D f`, `G' = E G D`.
struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

fn ruiz(p: &QpProblem, iters: usize) -> (Scaling, DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (n, m) = (p.num_vars(), p.num_constraints());
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let mut h = p.h.clone();
    let mut g = p.g.clone();
    let clamp = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };
    for _ in 0..iters {
        let mut dx = DVector::zeros(n);
        for j in 0..n {
            let col_h = h.column(j).amax();
            let col_g = if m > 0 { g.column(j).amax() } else { 0.0 };
            dx[j] = 1.0 / clamp(col_h.max(col_g)).sqrt();
        }
        let mut dz = DVector::zeros(m);
        for i in 0..m {
            dz[i] = 1.0 / clamp(g.row(i).amax()).sqrt();
        }
        for j in 0..n {
            for i in 0..n {
                h[(i, j)] *= dx[i] * dx[j];
            }
            for i in 0..m {
                g[(i, j)] *= dz[i] * dx[j];
            }
        }
        d.component_mul_assign(&dx);
        e.component_mul_assign(&dz);
    }
    let mut f = p.f.component_mul(&d);
    let mean_col = if n > 0 { (0..n).map(|j| h.column(j).amax()).sum::<f64>() / n as f64 } else { 1.0 };
    let c = 1.0 / clamp(mean_col.max(inf_norm(&f)));
    h *= c;
    f *= c;
    (Scaling { d, e, c }, h, f, g)
}

/// Solve `[H G_a'; G_a 0] [z; y_a] = [-f; b_a]` for the given active rows.
fn polish(p: &QpProblem, active: &[(usize, f64)]) -> Option<(DVector<f64>, DVector<f64>)> {
    let (n, na) = (p.num_vars(), active.len());
    let dim = n + na;
    let mut k = DMatrix::zeros(dim, dim);
    k.view_mut((0, 0), (n, n)).copy_from(&p.h);
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&p.f));
    for (a, &(row, bound)) in active.iter().enumerate() {
        for j in 0..n {
            k[(n + a, j)] = p.g[(row, j)];
            k[(j, n + a)] = p.g[(row, j)];
        }
        rhs[n + a] = bound;
    }
    // Regularized factorization plus iterative refinement on the exact system.
    let delta = 1e-9;
    let mut kreg = k.clone();
    for i in 0..dim {
        kreg[(i, i)] += if i < n { delta } else { -delta };
    }
    let lu = kreg.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..5 {
        let r = &rhs - &k * &sol;
        sol += lu.solve(&r)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let z = sol.rows(0, n).into_owned();
    let mut y = DVector::zeros(p.num_constraints());
    for (a, &(row, _)) in active.iter().enumerate() {
        y[row] = sol[n + a];
    }
    Some((z, y))
}

fn try_polish(p: &QpProblem, y: &DVector<f64>, gz: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let mut active = Vec::new();
    for i in 0..p.num_constraints() {
        if p.lb[i] == p.ub[i] {
            active.push((i, p.lb[i]));
        } else if p.lb[i].is_finite() && gz[i] - p.lb[i] < -y[i] {
            active.push((i, p.lb[i]));
        } else if p.ub[i].is_finite() && p.ub[i] - gz[i] < y[i] {
            active.push((i, p.ub[i]));
        }
    }
    if active.len() > p.num_vars() {
        return None;
    }
    polish(p, &active)
}

/// Solve the QP.
pub fn solve(p: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    let (n, m) = (p.num_vars(), p.num_constraints());
    for i in 0..m {
        if p.lb[i] > p.ub[i] {
            return Ok(QpSolution {
                z: DVector::zeros(n),
                duals: DVector::zeros(m),
                status: QpStatus::PrimalInfeasible,
                iterations: 0,
                residuals: KktResiduals { r_prim: f64::INFINITY, r_dual: f64::INFINITY, r_comp: f64::INFINITY },
                polished: false,
                admm_z: DVector::zeros(n),
            });
        }
    }

    let (sc, hs, fs, gs) = ruiz(p, settings.scaling_iters);
    let ls = p.lb.component_mul(&sc.e);
    let us = p.ub.component_mul(&sc.e);
    let rho = DVector::from_fn(m, |i, _| {
        if ls[i] == us[i] {
            1e3 * settings.rho
        } else if ls[i].is_infinite() && us[i].is_infinite() {
            1e-6
        } else {
            settings.rho
        }
    });

    let mut kmat = &hs + DMatrix::identity(n, n) * settings.sigma;
    if m > 0 {
        let rg = DMatrix::from_fn(m, n, |i, j| rho[i] * gs[(i, j)]);
        kmat += gs.transpose() * rg;
    }
    let chol = kmat
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("QP Hessian is not positive semidefinite".into()))?;

    // scaled iterates
    let mut x = match &settings.warm_z {
        Some(z0) if z0.len() == n => z0.component_div(&sc.d),
        _ => DVector::zeros(n),
    };
    let mut y = match &settings.warm_duals {
        Some(y0) if y0.len() == m => y0.component_div(&sc.e) * sc.c,
        _ => DVector::zeros(m),
    };
    let mut z = &gs * &x;
    for i in 0..m {
        z[i] = z[i].clamp(ls[i], us[i]);
    }

    let alpha = settings.alpha;
    let gst = gs.transpose();
    let unscale_x = |x: &DVector<f64>| x.component_mul(&sc.d);
    let unscale_y = |y: &DVector<f64>| y.component_div(&sc.e) / sc.c;

    let mut best: Option<(DVector<f64>, DVector<f64>, bool)> = None;
    let mut iterations = 0;
    let mut status = QpStatus::MaxIter;

    while iterations < settings.max_iter {
        iterations += 1;
        let rhs = &x * settings.sigma - &fs + &gst * (rho.component_mul(&z) - &y);
        let xt = chol.solve(&rhs);
        let zt = &gs * &xt;
        let x_new = &xt * alpha + &x * (1.0 - alpha);
        let z_relax = &zt * alpha + &z * (1.0 - alpha);
        let mut z_new = &z_relax + y.component_div(&rho);
        for i in 0..m {
            z_new[i] = z_new[i].clamp(ls[i], us[i]);
        }
        let y_new = &y + rho.component_mul(&(&z_relax - &z_new));
        let last_delta_y = &y_new - &y;
        x = x_new;
        z = z_new;
        y = y_new;

        if iterations % settings.check_every != 0 && iterations != settings.max_iter {
            continue;
        }

        // primal infeasibility certificate from the dual increments
        if m > 0 {
            let dy_un = last_delta_y.component_mul(&sc.e);
            let norm_dy = inf_norm(&dy_un);
            if norm_dy > 1e-12 {
                let at_dy = inf_norm(&(&gst * &last_delta_y).component_div(&sc.d));
                let mut support = 0.0;
                for i in 0..m {
                    let dyi = last_delta_y[i];
                    if dyi > 0.0 {
                        support += us[i] * dyi;
                    } else if dyi < 0.0 {
                        support += ls[i] * dyi;
                    }
                }
                let eps = settings.eps_infeasible * norm_dy;
                if at_dy <= eps && support < -eps {
                    status = QpStatus::PrimalInfeasible;
                    break;
                }
            }
        }

        let gx = &gs * &x;
        let r_prim = inf_norm(&(&gx - &z).component_div(&sc.e));
        let eps_prim = settings.eps_abs
            + settings.eps_rel * inf_norm(&gx.component_div(&sc.e)).max(inf_norm(&z.component_div(&sc.e)));
        let hx = &hs * &x;
        let gty = &gst * &y;
        let dual = (&hx + &fs + &gty).component_div(&sc.d) / sc.c;
        let r_dual = inf_norm(&dual);
        let eps_dual = settings.eps_abs
            + settings.eps_rel / sc.c
                * inf_norm(&hx.component_div(&sc.d))
                    .max(inf_norm(&gty.component_div(&sc.d)))
                    .max(inf_norm(&fs.component_div(&sc.d)));
        if r_prim > eps_prim || r_dual > eps_dual {
            continue;
        }

        let (zu, yu) = (unscale_x(&x), unscale_y(&y));
        if settings.polish {
            let gz = &p.g * &zu;
            if let Some((zp, yp)) = try_polish(p, &yu, &gz) {
                if kkt_residuals(p, &zp, &yp).max() <= settings.eps_abs {
                    best = Some((zp, yp, true));
                    status = QpStatus::Solved;
                    break;
                }
            }
        }
        if kkt_residuals(p, &zu, &yu).max() <= settings.eps_abs {
            best = Some((zu, yu, false));
            status = QpStatus::Solved;
            break;
        }
    }

    let admm_z = unscale_x(&x);
    let (z_out, y_out, polished) = match best {
        Some(b) => b,
        None => (admm_z.clone(), unscale_y(&y), false),
    };
    let residuals = kkt_residuals(p, &z_out, &y_out);
    Ok(QpSolution { z: z_out, duals: y_out, status, iterations, residuals, polished, admm_z })
}
