use crate::iqcore::{IqSample, SampleTimestamp};
use crate::remoting::{DeviceError, SdrDevice};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrxError {
    #[error("transmit at tick {got} out of sequence, next is {expected}")]
    OutOfSequence { expected: u64, got: u64 },
    #[error("transmit before the first receive")]
    NotStarted,
    #[error("device returned tick {got}, expected {expected}")]
    Desync { expected: u64, got: u64 },
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// The stack's own copy of the stream timestamps: the first receive fixes
/// both, and each call advances its side by the block length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrxState {
    tx_offset: u64,
    next_rx: Option<SampleTimestamp>,
    next_tx: Option<SampleTimestamp>,
}

impl TrxState {
    pub fn new(tx_offset: u64) -> Self {
        Self { tx_offset, next_rx: None, next_tx: None }
    }

    pub fn next_rx_timestamp(&self) -> Option<SampleTimestamp> {
        self.next_rx
    }

    pub fn next_tx_timestamp(&self) -> Option<SampleTimestamp> {
        self.next_tx
    }

    /// Reads one block and returns the tick of its first sample.
    pub fn trx_read(&mut self, dev: &mut dyn SdrDevice, buf: &mut [IqSample]) -> Result<SampleTimestamp, TrxError> {
        let ts = dev.recv(buf)?;
        match self.next_rx {
            Some(expected) if expected != ts => return Err(TrxError::Desync { expected: expected.0, got: ts.0 }),
            Some(_) => {}
            None => self.next_tx = Some(ts + self.tx_offset),
        }
        self.next_rx = Some(ts + buf.len() as u64);
        Ok(ts)
    }

    /// Writes one block, which must start at [`Self::next_tx_timestamp`].
    pub fn trx_write(&mut self, dev: &mut dyn SdrDevice, buf: &[IqSample], ts: SampleTimestamp) -> Result<(), TrxError> {
        let expected = self.next_tx.ok_or(TrxError::NotStarted)?;
        if ts != expected {
            return Err(TrxError::OutOfSequence { expected: expected.0, got: ts.0 });
        }
        dev.send(buf, ts)?;
        self.next_tx = Some(ts + buf.len() as u64);
        Ok(())
    }
}
