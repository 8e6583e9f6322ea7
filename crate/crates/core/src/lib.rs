pub mod controller;
pub mod forecast;
pub mod linexpr;
pub mod model;
pub mod mpc;
pub mod registry;
pub mod sim;
