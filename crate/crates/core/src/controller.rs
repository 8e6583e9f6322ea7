//! Controllers selectable by name.

use crate::model::MicrogridModel;
use crate::mpc::{solve_mpc, MpcConfig, MpcError, MpcInputs, MpcSolution, Variant};
use crate::registry::Registry;

pub trait Controller: Send + Sync {
    fn name(&self) -> &str;

    fn plan(&self, model: &MicrogridModel, cfg: &MpcConfig, inputs: &MpcInputs) -> Result<MpcSolution, MpcError>;
}

/// Certainty-equivalence MPC without local control: ρ is fixed at zero and
/// units without communication are treated as fixed injections.
pub struct StandardMpc;

/// MPC that plans the droop response, so units without communication can
/// still be moved through the set-points of the others.
pub struct EnhancedMpc;

fn with_variant(cfg: &MpcConfig, variant: Variant) -> MpcConfig {
    MpcConfig {
        variant,
        ..cfg.clone()
    }
}

impl Controller for StandardMpc {
    fn name(&self) -> &str {
        "standard"
    }

    fn plan(&self, model: &MicrogridModel, cfg: &MpcConfig, inputs: &MpcInputs) -> Result<MpcSolution, MpcError> {
        solve_mpc(model, &with_variant(cfg, Variant::Standard), inputs)
    }
}

impl Controller for EnhancedMpc {
    fn name(&self) -> &str {
        "enhanced"
    }

    fn plan(&self, model: &MicrogridModel, cfg: &MpcConfig, inputs: &MpcInputs) -> Result<MpcSolution, MpcError> {
        solve_mpc(model, &with_variant(cfg, Variant::Enhanced), inputs)
    }
}

pub fn controllers() -> Registry<dyn Controller> {
    let mut r: Registry<dyn Controller> = Registry::default();
    r.register("standard", || Box::new(StandardMpc));
    r.register("enhanced", || Box::new(EnhancedMpc));
    r
}
