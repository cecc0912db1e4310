pub mod bgp_prefs;
pub mod error;
pub mod netmodel;
pub mod paths;
pub mod pspp;
pub mod repair;
pub mod scenario;
pub mod sim;
pub mod te;
pub mod search;
