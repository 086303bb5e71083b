//! Router response times checked against exact rational arithmetic.

mod common;

use common::{q, rel_err, router_grid, router_oracle};
use num_rational::BigRational;
use num_traits::One;
use proptest::prelude::*;
use smartho_core::qmodel::{self, Buffer, PathTopology, Rates, RouterParams, TimeUnit};

#[test]
fn router_formula_on_grid() {
    let mut worst = 0f64;
    let mut n = 0;
    for (lambda, mu, b) in router_grid() {
        let got = qmodel::mm1b_response(&RouterParams {
            lambda,
            mu,
            buffer: Buffer::Finite(b),
        })
        .unwrap();
        worst = worst.max(rel_err(got, &router_oracle(lambda, mu, b)));
        n += 1;
    }
    assert_eq!(n, 1000);
    assert!(worst <= 1e-12, "worst relative error {worst:e}");
}

#[test]
fn mm1_matches_exact() {
    for (l, m) in [(0.3, 1.0), (1.0, 2.0), (7.0, 10.0), (0.0, 5.0)] {
        let exact = BigRational::one() / (q(m) - q(l));
        assert!(rel_err(qmodel::mm1_response(l, m).unwrap(), &exact) <= 1e-15);
    }
}

fn topology(r: RouterParams, pd: f64, trig: f64) -> PathTopology {
    let rates = Rates { lambda: 1.0, mu: 2.0 };
    PathTopology {
        time_unit: TimeUnit::Ms,
        routers_r_sd: vec![],
        routers_r_td: vec![],
        routers_sd_cu: vec![r],
        routers_td_cu: vec![r],
        t_pd_sdu_cu: pd,
        t_pd_tdu_cu: pd,
        rates_cu: rates,
        rates_sdu: rates,
        rates_tdu: rates,
        trigger_time: trig,
    }
}

proptest! {
    /// Preparation time decomposes into propagation plus both processing
    /// terms, and the delay equals t_MR minus (prep − trigger) when positive.
    #[test]
    fn budget_composition(lambda in 0.01f64..0.95, b in 1u32..64, pd in 0.0f64..5.0, trig in 0.0f64..5.0, t_mr_ms in 0.0f64..200.0) {
        let r = RouterParams { lambda, mu: 1.0, buffer: Buffer::Finite(b) };
        let t = topology(r, pd, trig);
        let bud = qmodel::budget(t_mr_ms * 1e-3, &t).unwrap();
        let router = qmodel::mm1b_response(&r).unwrap();
        let prep = (4.0 * pd + 4.0 * router + 4.0 * 1.0) * 1e-3;
        prop_assert!((bud.t_prep_ho - prep).abs() <= 1e-12 * prep.max(1e-3));
        let trig_s = (trig + pd + router) * 1e-3;
        prop_assert!((bud.t_trig - trig_s).abs() <= 1e-12);
        let raw = t_mr_ms * 1e-3 - (prep - trig_s);
        prop_assert!((bud.t_delay_raw - raw).abs() <= 1e-12);
        prop_assert_eq!(bud.t_delay, bud.t_delay_raw.max(0.0));
        prop_assert!(bud.t_delay >= 0.0);
    }

    /// Response time grows with the arrival rate below saturation.
    #[test]
    fn mm1_monotone_in_lambda(a in 0.0f64..0.98, d in 0.001f64..0.01) {
        prop_assume!(a + d < 1.0);
        let lo = qmodel::mm1_response(a, 1.0).unwrap();
        let hi = qmodel::mm1_response(a + d, 1.0).unwrap();
        prop_assert!(hi > lo);
    }
}
