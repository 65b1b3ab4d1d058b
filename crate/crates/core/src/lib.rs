//! Optimal control of perturbed sweeping processes over intersections of
//! smooth sublevel sets.
//!
//! The nonsmooth sweeping set `C = {x : psi_i(x) <= 0 for all i}` is
//! approximated by log-sum-exp smoothings, the sweeping dynamics by an
//! exponentially penalized ODE, and candidate optimal pairs are checked
//! against the maximum principle at grid resolution.

pub mod expr;
pub mod sweepset;
pub mod dynamics;
pub mod ocp;
pub mod pmp;
pub mod reference;
