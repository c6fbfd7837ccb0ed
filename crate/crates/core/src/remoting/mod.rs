//! The device API a slice stack programs against, and two bindings for it:
//! [`RemoteDevice`] forwards control calls as framed messages over a
//! per-slice control channel to the backend's [`Dispatcher`];
//! [`LocalDevice`] drives a radio channel in-process.

pub mod codec;
mod device;
mod dispatcher;

pub use codec::{CodecError, ControlMessage, Opcode, Request, Status};
pub use device::{DeviceError, LocalDevice, RemoteDevice, SdrDevice, DEVICE_TYPE, INIT_TIMEOUT, SET_TIMEOUT};
pub use dispatcher::Dispatcher;
