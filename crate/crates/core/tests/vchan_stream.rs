//! Cross-thread properties of the shared-memory channel.

use pvran::vchan::{RendezvousStore, StreamChannel, VchanError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

fn pump_and_digest(store: &RendezvousStore, path: &str, cap: u32, total: usize, seed: u64) {
    let mut server = StreamChannel::server_create(store, path, cap, cap, true).unwrap();
    let mut client = StreamChannel::client_connect(store, 0, path).unwrap();

    let producer = thread::spawn(move || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hasher = Sha256::new();
        let mut sent = 0;
        while sent < total {
            let len = rng.random_range(1..=20_000).min(total - sent);
            let chunk: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            hasher.update(&chunk);
            assert_eq!(server.write(&chunk).unwrap(), len);
            sent += len;
        }
        hasher.finalize()
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    let mut hasher = Sha256::new();
    let mut got = 0;
    while got < total {
        let len = rng.random_range(1..=17_000).min(total - got);
        let chunk = client.read(len).unwrap();
        assert_eq!(chunk.len(), len);
        hasher.update(&chunk);
        got += len;
    }
    let sent_digest = producer.join().unwrap();
    assert_eq!(hasher.finalize(), sent_digest);
}

#[test]
fn random_chunking_preserves_bytes_in_memory() {
    // 10 MiB through a 4 KiB ring forces thousands of index wraps
    pump_and_digest(&RendezvousStore::in_memory(), "p/mem", 4096, 10 << 20, 1);
}

#[test]
fn random_chunking_preserves_bytes_mapped() {
    let store = RendezvousStore::temporary().unwrap();
    pump_and_digest(&store, "p/file", 64 * 1024, 10 << 20, 2);
    store.remove_all().unwrap();
}

#[test]
fn ping_pong_has_no_lost_wakeups() {
    let store = RendezvousStore::temporary().unwrap();
    let mut server = StreamChannel::server_create(&store, "p/pp", 4096, 4096, true).unwrap();
    let mut client = StreamChannel::client_connect(&store, 0, "p/pp").unwrap();
    const ROUNDS: u32 = 100_000;

    let (done_tx, done_rx) = mpsc::channel();
    let echo = thread::spawn(move || {
        let mut buf = [0u8; 4];
        for _ in 0..ROUNDS {
            client.read_into(&mut buf).unwrap();
            client.write(&buf).unwrap();
        }
    });
    let driver = thread::spawn(move || {
        let mut buf = [0u8; 4];
        for n in 0..ROUNDS {
            server.write(&n.to_le_bytes()).unwrap();
            server.read_into(&mut buf).unwrap();
            assert_eq!(u32::from_le_bytes(buf), n);
        }
        done_tx.send(()).unwrap();
    });
    // watchdog: the whole exchange must finish; a lost wakeup would hang it
    done_rx.recv_timeout(Duration::from_secs(60)).expect("ping-pong stalled");
    driver.join().unwrap();
    echo.join().unwrap();
    store.remove_all().unwrap();
}

#[test]
fn blocking_read_with_active_writer_returns() {
    let store = RendezvousStore::in_memory();
    let mut server = StreamChannel::server_create(&store, "p/live", 1024, 1024, true).unwrap();
    let mut client = StreamChannel::client_connect(&store, 0, "p/live").unwrap();
    let writer = thread::spawn(move || {
        for _ in 0..50 {
            thread::sleep(Duration::from_millis(1));
            server.write(&[7u8; 100]).unwrap();
        }
        server
    });
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let r = client.read(5000);
        tx.send(r.map(|v| v.len())).unwrap();
    });
    let got = rx.recv_timeout(Duration::from_secs(1)).expect("blocking read did not return within 1 s");
    assert_eq!(got.unwrap(), 5000);
    drop(writer.join().unwrap());
}

#[test]
fn writer_blocked_on_full_ring_wakes_on_peer_close() {
    let store = RendezvousStore::in_memory();
    let mut server = StreamChannel::server_create(&store, "p/full", 64, 64, true).unwrap();
    let mut client = StreamChannel::client_connect(&store, 0, "p/full").unwrap();
    let t = thread::spawn(move || server.write(&[0u8; 1000]));
    thread::sleep(Duration::from_millis(30));
    client.close();
    assert!(matches!(t.join().unwrap(), Err(VchanError::PeerClosed)));
}

#[test]
fn large_writes_stream_through_small_ring() {
    let store = RendezvousStore::in_memory();
    let mut server = StreamChannel::server_create(&store, "p/big", 256, 256, true).unwrap();
    let mut client = StreamChannel::client_connect(&store, 0, "p/big").unwrap();
    let data: Vec<u8> = (0..100_000u32).map(|n| (n % 253) as u8).collect();
    let expected = data.clone();
    let t = thread::spawn(move || server.write(&data).unwrap());
    assert_eq!(client.read(100_000).unwrap(), expected);
    assert_eq!(t.join().unwrap(), 100_000);
}
