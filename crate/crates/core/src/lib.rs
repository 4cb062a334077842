//! Management-plane core: identity-independent policies (IIP), the device
//! directory they are evaluated against, the policy store and the engine that
//! turns operation-plane changes into effects.

pub mod clock;
pub mod expr;
pub mod lint;
pub mod model;
pub mod directory;
pub mod store;
pub mod engine;
