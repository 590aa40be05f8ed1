pub mod actors;
pub mod agent;
pub mod cloud;
pub mod codec;
pub mod crypto;
pub mod node;
pub mod protocol;
pub mod simnet;
pub mod scenarios;
