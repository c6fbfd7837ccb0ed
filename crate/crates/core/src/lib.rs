//! Paravirtualized RAN front-end over a simulated software-defined radio.
//!
//! Slice protocol stacks talk to a narrow device API ([`remoting::SdrDevice`]).
//! The remote implementation of that API forwards control calls over a
//! shared-memory channel ([`vchan`]) to a privileged backend ([`pvback`]),
//! which owns the radio ([`radiodev`]) and streams I/Q samples to each slice
//! over dedicated channels with in-band timestamp synchronization.

pub mod iqcore;
pub mod vchan;
pub mod bench;
pub mod radiodev;
pub mod pvback;
pub mod remoting;
pub mod slicestack;
pub mod orchestrator;
