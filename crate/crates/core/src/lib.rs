//! Federated patient-centred health-trajectory ledger.
//!
//! * [`ledger`]: hash-chained blocks, canonical encoding, signatures, validation.
//! * [`node`]: a permissioned chain node with quorum commits and local reads.
//! * [`federation`]: the main chain that routes patient ids to their chains.
//! * [`resources`]: the evidence store that mints URL + key references.
//! * [`connector`]: client SDK for reading and extending trajectories.
//! * [`gateway`]: the connector exposed as a shared REST service.

pub mod connector;
pub mod federation;
pub mod gateway;
pub mod ledger;
pub mod net;
pub mod node;
pub mod resources;
