//! Publish-subscribe over local TCP sockets, the baseline transport.
//!
//! A publisher listens on a loopback port; every connected subscriber gets a
//! copy of each published message. Messages are framed as a little-endian
//! u32 length followed by the payload.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

pub struct Publisher {
    addr: SocketAddr,
    subscribers: Arc<Mutex<Vec<TcpStream>>>,
    acceptor: Option<JoinHandle<()>>,
    shutdown: Arc<std::sync::atomic::AtomicBool>,
}

impl Publisher {
    pub fn bind_loopback() -> io::Result<Self> {
        let listener = TcpListener::bind(("127.0.0.1", 0))?;
        let addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let subscribers: Arc<Mutex<Vec<TcpStream>>> = Arc::default();
        let shutdown = Arc::new(std::sync::atomic::AtomicBool::new(false));
        let subs = subscribers.clone();
        let stop = shutdown.clone();
        let acceptor = thread::Builder::new().name("pubsub-accept".into()).spawn(move || {
            while !stop.load(std::sync::atomic::Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let _ = stream.set_nonblocking(false);
                        let _ = stream.set_nodelay(true);
                        subs.lock().unwrap_or_else(|e| e.into_inner()).push(stream);
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
                    Err(_) => break,
                }
            }
        })?;
        Ok(Self { addr, subscribers, acceptor: Some(acceptor), shutdown })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn subscriber_count(&self) -> usize {
        self.subscribers.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    /// Blocks until `n` subscribers are connected or `timeout` passes.
    pub fn wait_for_subscribers(&self, n: usize, timeout: Duration) -> io::Result<()> {
        let deadline = Instant::now() + timeout;
        while self.subscriber_count() < n {
            if Instant::now() > deadline {
                return Err(io::Error::new(io::ErrorKind::TimedOut, "subscribers did not connect"));
            }
            thread::sleep(Duration::from_millis(1));
        }
        Ok(())
    }

    /// Sends one message to every subscriber; subscribers that fail are dropped.
    pub fn publish(&self, payload: &[u8]) -> io::Result<usize> {
        let len = u32::try_from(payload.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "message too large"))?;
        let mut subs = self.subscribers.lock().unwrap_or_else(|e| e.into_inner());
        subs.retain_mut(|s| s.write_all(&len.to_le_bytes()).and_then(|_| s.write_all(payload)).is_ok());
        Ok(subs.len())
    }
}

impl Drop for Publisher {
    fn drop(&mut self) {
        self.shutdown.store(true, std::sync::atomic::Ordering::Relaxed);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

pub struct Subscriber {
    stream: TcpStream,
}

impl Subscriber {
    pub fn connect(addr: SocketAddr) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    /// Receives the next message into `buf`, returning its length.
    pub fn recv_into(&mut self, buf: &mut Vec<u8>) -> io::Result<usize> {
        let mut len = [0u8; 4];
        self.stream.read_exact(&mut len)?;
        let len = u32::from_le_bytes(len) as usize;
        buf.resize(len, 0);
        self.stream.read_exact(buf)?;
        Ok(len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fan_out_to_two_subscribers() {
        let publisher = Publisher::bind_loopback().unwrap();
        let mut a = Subscriber::connect(publisher.addr()).unwrap();
        let mut b = Subscriber::connect(publisher.addr()).unwrap();
        publisher.wait_for_subscribers(2, Duration::from_secs(2)).unwrap();
        assert_eq!(publisher.publish(b"hello").unwrap(), 2);
        publisher.publish(&[]).unwrap();
        let mut buf = Vec::new();
        for sub in [&mut a, &mut b] {
            assert_eq!(sub.recv_into(&mut buf).unwrap(), 5);
            assert_eq!(buf, b"hello");
            assert_eq!(sub.recv_into(&mut buf).unwrap(), 0);
        }
    }
}
