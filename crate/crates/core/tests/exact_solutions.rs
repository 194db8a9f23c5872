//! The manufactured data of each benchmark satisfies the momentum and mass
//! equations with its exact solution.

mod common;

use std::collections::BTreeMap;

use hdgflow::cases::{
    coriolis, kovasznay, lederer, lederer_forcing, lederer_velocity, potential_flow, CaseDefinition,
};
use rand::RngExt;

/// Bivariate polynomial as a map from exponents `(i, j)` to coefficients.
#[derive(Clone, Default)]
struct Poly(BTreeMap<(u32, u32), f64>);

impl Poly {
    fn term(i: u32, j: u32, c: f64) -> Self {
        Poly([((i, j), c)].into_iter().collect())
    }

    fn add(&self, o: &Poly) -> Poly {
        let mut r = self.clone();
        for (&e, &c) in &o.0 {
            *r.0.entry(e).or_default() += c;
        }
        r
    }

    fn scale(&self, s: f64) -> Poly {
        Poly(self.0.iter().map(|(&e, &c)| (e, s * c)).collect())
    }

    fn mul(&self, o: &Poly) -> Poly {
        let mut r = Poly::default();
        for (&(i, j), &a) in &self.0 {
            for (&(k, l), &b) in &o.0 {
                *r.0.entry((i + k, j + l)).or_default() += a * b;
            }
        }
        r
    }

    fn dx(&self) -> Poly {
        Poly(
            self.0
                .iter()
                .filter(|(e, _)| e.0 > 0)
                .map(|(&(i, j), &c)| ((i - 1, j), c * i as f64))
                .collect(),
        )
    }

    fn dy(&self) -> Poly {
        Poly(
            self.0
                .iter()
                .filter(|(e, _)| e.1 > 0)
                .map(|(&(i, j), &c)| ((i, j - 1), c * j as f64))
                .collect(),
        )
    }

    fn eval(&self, x: [f64; 2]) -> f64 {
        self.0
            .iter()
            .map(|(&(i, j), &c)| c * x[0].powi(i as i32) * x[1].powi(j as i32))
            .sum()
    }
}

#[test]
fn lederer_forcing_matches_symbolic_derivation() {
    let q = |var: usize| {
        let t = |p: u32, c: f64| {
            if var == 0 {
                Poly::term(p, 0, c)
            } else {
                Poly::term(0, p, c)
            }
        };
        t(4, 1.0).add(&t(3, -2.0)).add(&t(2, 1.0))
    };
    let zeta = q(0).mul(&q(1));
    let u = [zeta.dy(), zeta.dx().scale(-1.0)];
    let p = Poly::term(7, 0, 1.0).add(&Poly::term(0, 7, 1.0));
    let grad_p = [p.dx(), p.dy()];
    let mut r = common::rng(17);
    for nu in [1e-3, 1.0, 37.0] {
        let f: Vec<Poly> = (0..2)
            .map(|i| {
                let adv = u[0].mul(&u[i].dx()).add(&u[1].mul(&u[i].dy()));
                let lap = u[i].dx().dx().add(&u[i].dy().dy());
                adv.add(&grad_p[i]).add(&lap.scale(-nu))
            })
            .collect();
        for _ in 0..100 {
            let x = [r.random_range(0.0..1.0), r.random_range(0.0..1.0)];
            let got = lederer_forcing(x, nu);
            let vel = lederer_velocity(x);
            for i in 0..2 {
                let want = f[i].eval(x);
                assert!(
                    (got[i] - want).abs() < 1e-10 * want.abs().max(1.0),
                    "ν={nu} x={x:?} f_{i}: {} vs {want}",
                    got[i]
                );
                assert!((vel[i] - u[i].eval(x)).abs() < 1e-14);
            }
        }
    }
}

/// Fourth-order central difference of `g` along axis `axis`.
fn diff(g: &dyn Fn([f64; 2]) -> f64, x: [f64; 2], axis: usize, h: f64) -> f64 {
    let at = |s: f64| {
        let mut y = x;
        y[axis] += s * h;
        g(y)
    };
    (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
}

/// Momentum and mass residuals of a case's exact solution at random interior points.
fn check_case(case: &CaseDefinition, box_: [f64; 4], times: &[f64], seed: u64) {
    let ex = case.exact.as_ref().unwrap();
    let nu = case.nu;
    let h = 1e-3;
    let mut r = common::rng(seed);
    for &t in times {
        for _ in 0..50 {
            let x = [
                r.random_range(box_[0] + 0.01..box_[2] - 0.01),
                r.random_range(box_[1] + 0.01..box_[3] - 0.01),
            ];
            let u = (ex.u)(x, t);
            let g = (ex.grad_u)(x, t);
            assert!(
                (g[0][0] + g[1][1]).abs() < 1e-12 * (g[0][0].abs() + 1.0),
                "{}: div u at {x:?}",
                case.name
            );
            for i in 0..2 {
                for j in 0..2 {
                    let fd = diff(&|y| (ex.u)(y, t)[i], x, j, h);
                    assert!(
                        (fd - g[i][j]).abs() < 1e-8 * (g[i][j].abs() + 1.0),
                        "{}: grad u[{i}][{j}]",
                        case.name
                    );
                }
            }
            let f = (case.data.forcing)(x, t);
            let react = case.data.reaction.as_ref().map(|m| m(x));
            let mut scale = 1.0f64;
            for i in 0..2 {
                let dt_u = if case.is_transient() {
                    (-(ex.u)(x, t + 2.0 * h)[i] + 8.0 * (ex.u)(x, t + h)[i]
                        - 8.0 * (ex.u)(x, t - h)[i]
                        + (ex.u)(x, t - 2.0 * h)[i])
                        / (12.0 * h)
                } else {
                    0.0
                };
                let lap: f64 = (0..2)
                    .map(|j| diff(&|y| (ex.grad_u)(y, t)[i][j], x, j, h))
                    .sum();
                let gp = diff(&|y| (ex.p)(y, t), x, i, h);
                let adv = u[0] * g[i][0] + u[1] * g[i][1];
                let ru = react.map_or(0.0, |m| m[i][0] * u[0] + m[i][1] * u[1]);
                let res = dt_u + adv + gp - nu * lap + ru - f[i];
                scale = scale
                    .max(adv.abs())
                    .max(gp.abs())
                    .max(nu * lap.abs())
                    .max(ru.abs());
                assert!(
                    res.abs() < 1e-7 * scale,
                    "{} t={t} x={x:?}: momentum residual {res:.3e}",
                    case.name
                );
            }
        }
    }
}

#[test]
fn kovasznay_exact_solution_is_consistent() {
    for re in [20.0, 40.0, 100.0] {
        check_case(&kovasznay(re), [-0.5, -0.5, 1.0, 1.5], &[0.0], 1);
    }
}

#[test]
fn coriolis_exact_solution_is_consistent() {
    for nu in [1e-3, 1.0] {
        check_case(&coriolis(nu), [0.0, 0.0, 1.0, 1.0], &[0.0], 2);
    }
}

#[test]
fn lederer_exact_solution_is_consistent() {
    for nu in [1e-3, 1.0] {
        check_case(&lederer(nu), [0.0, 0.0, 1.0, 1.0], &[0.0], 3);
    }
}

#[test]
fn potential_flow_exact_solution_is_consistent() {
    for nu in [1.0 / 500.0, 1.0] {
        check_case(
            &potential_flow(nu),
            [-1.0, -1.0, 1.0, 1.0],
            &[0.3, 0.7, 1.5],
            4,
        );
    }
}

#[test]
fn exact_pressures_have_zero_mean() {
    let rule = hdgflow::polybasis::gauss_legendre(12);
    for (case, b) in [
        (kovasznay(40.0), [-0.5, -0.5, 1.0, 1.5]),
        (coriolis(1.0), [0.0, 0.0, 1.0, 1.0]),
        (lederer(1.0), [0.0, 0.0, 1.0, 1.0]),
        (potential_flow(1.0), [-1.0, -1.0, 1.0, 1.0]),
    ] {
        let p = &case.exact.as_ref().unwrap().p;
        let (pts, wts) = &rule;
        let mut m = 0.0;
        for (a, wa) in pts.iter().zip(wts) {
            for (c, wc) in pts.iter().zip(wts) {
                let x = [b[0] + (b[2] - b[0]) * a, b[1] + (b[3] - b[1]) * c];
                m += wa * wc * p(x, 0.5);
            }
        }
        assert!(m.abs() < 1e-12, "{}: pressure mean {m:.3e}", case.name);
    }
}
