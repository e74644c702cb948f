//! Automated testing of Android browser apps for `file://` cross-origin
//! flaws: manifest analysis, exposed-browsing-interface scoring, exploit
//! payload generation, a beacon-collecting web receiver, a deterministic
//! browser sandbox backend, and the orchestration that ties a full test
//! run together.

pub mod commander;
pub mod ebi;
pub mod forge;
pub mod manifest;
pub mod receiver;
pub mod report;
pub mod sandbox;
pub mod version;
