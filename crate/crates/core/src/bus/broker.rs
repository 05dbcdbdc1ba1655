//! TCP broker. One reader and one writer thread per connection; all routing
//! state lives behind a single mutex so that routing a message is atomic with
//! respect to subscription changes.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};

use super::codec::{Frame, FrameDecoder};
use super::proto::Message;
use super::router::{ClientId, Router, StreamEntry};
use super::{BusError, DEFAULT_BROKER_ADDR};
use crate::model::StreamDescriptor;

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    pub listen: String,
    /// Clients silent for longer than this are disconnected.
    pub idle_timeout: Duration,
    pub max_body: usize,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            listen: DEFAULT_BROKER_ADDR.to_string(),
            idle_timeout: Duration::from_secs(10),
            max_body: super::codec::DEFAULT_MAX_BODY,
        }
    }
}

struct Conn {
    control: VecDeque<Frame>,
    wake: Arc<Condvar>,
    last_seen: Instant,
    socket: TcpStream,
    closing: bool,
}

#[derive(Default)]
struct State {
    router: Router,
    conns: BTreeMap<ClientId, Conn>,
    next_client: ClientId,
}

struct Shared {
    state: Mutex<State>,
    shutdown: AtomicBool,
    config: BrokerConfig,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

pub struct Broker {
    shared: Arc<Shared>,
    local_addr: SocketAddr,
    acceptor: Option<JoinHandle<()>>,
}

impl Broker {
    pub fn bind(config: BrokerConfig) -> io::Result<Broker> {
        let addr = config
            .listen
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no address"))?;
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            state: Mutex::new(State::default()),
            shutdown: AtomicBool::new(false),
            config,
            threads: Mutex::new(Vec::new()),
        });
        let s = Arc::clone(&shared);
        let acceptor = thread::Builder::new()
            .name("broker-accept".into())
            .spawn(move || accept_loop(s, listener))?;
        info!("broker listening on {local_addr}");
        Ok(Broker {
            shared,
            local_addr,
            acceptor: Some(acceptor),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Snapshot of every stream ever advertised.
    pub fn streams(&self) -> Vec<StreamEntry> {
        self.shared.lock().router.streams().cloned().collect()
    }

    pub fn client_count(&self) -> usize {
        self.shared.lock().conns.len()
    }

    /// Stops accepting, lets writers drain their queues and joins every thread.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        {
            let state = self.shared.lock();
            for conn in state.conns.values() {
                let _ = conn.socket.shutdown(Shutdown::Read);
                conn.wake.notify_all();
            }
        }
        let handles: Vec<_> = std::mem::take(&mut *self.shared.threads.lock().unwrap_or_else(|p| p.into_inner()));
        for h in handles {
            let _ = h.join();
        }
    }
}

impl Drop for Broker {
    fn drop(&mut self) {
        if self.acceptor.is_some() {
            self.stop();
        }
    }
}

fn accept_loop(shared: Arc<Shared>, listener: TcpListener) {
    while !shared.shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((socket, peer)) => {
                if let Err(e) = start_connection(&shared, socket) {
                    warn!("failed to start connection from {peer}: {e}");
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                reap_idle(&shared);
                thread::sleep(Duration::from_millis(10));
            }
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(10));
            }
        }
    }
}

fn reap_idle(shared: &Shared) {
    let timeout = shared.config.idle_timeout;
    let state = shared.lock();
    for (id, conn) in state.conns.iter() {
        if !conn.closing && conn.last_seen.elapsed() > timeout {
            info!("client {id} silent for {timeout:?}, disconnecting");
            let _ = conn.socket.shutdown(Shutdown::Both);
        }
    }
}

fn start_connection(shared: &Arc<Shared>, socket: TcpStream) -> io::Result<()> {
    socket.set_nonblocking(false)?;
    socket.set_nodelay(true)?;
    socket.set_read_timeout(Some(Duration::from_millis(100)))?;
    let wake = Arc::new(Condvar::new());
    let id = {
        let mut state = shared.lock();
        let id = state.next_client;
        state.next_client += 1;
        state.conns.insert(
            id,
            Conn {
                control: VecDeque::new(),
                wake: Arc::clone(&wake),
                last_seen: Instant::now(),
                socket: socket.try_clone()?,
                closing: false,
            },
        );
        id
    };
    debug!("client {id} connected");
    let reader_socket = socket.try_clone()?;
    let s = Arc::clone(shared);
    let reader = thread::Builder::new()
        .name(format!("broker-read-{id}"))
        .spawn(move || read_loop(s, id, reader_socket))?;
    let s = Arc::clone(shared);
    let writer = thread::Builder::new()
        .name(format!("broker-write-{id}"))
        .spawn(move || write_loop(s, id, socket, wake))?;
    let mut threads = shared.threads.lock().unwrap_or_else(|p| p.into_inner());
    threads.retain(|h| !h.is_finished());
    threads.push(reader);
    threads.push(writer);
    Ok(())
}

fn read_loop(shared: Arc<Shared>, id: ClientId, mut socket: TcpStream) {
    let mut decoder = FrameDecoder::new(shared.config.max_body);
    let mut buf = vec![0u8; 64 * 1024];
    'outer: loop {
        let n = match socket.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                if shared.shutdown.load(Ordering::SeqCst) {
                    break;
                }
                continue;
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(_) => break,
        };
        decoder.extend(&buf[..n]);
        loop {
            match decoder.next_frame() {
                Ok(Some(frame)) => {
                    if let Err(e) = handle_frame(&shared, id, &frame) {
                        warn!("client {id}: {e}");
                        if !matches!(e, BusError::UnknownStream(_)) {
                            break 'outer;
                        }
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    warn!("client {id}: closing on protocol error: {e}");
                    let _ = socket.shutdown(Shutdown::Both);
                    break 'outer;
                }
            }
        }
    }
    let mut state = shared.lock();
    if let Some(conn) = state.conns.get_mut(&id) {
        conn.closing = true;
        conn.wake.notify_all();
    }
}

fn handle_frame(shared: &Shared, id: ClientId, frame: &Frame) -> Result<(), BusError> {
    let msg = Message::from_frame(frame)?;
    let mut state = shared.lock();
    if let Some(conn) = state.conns.get_mut(&id) {
        conn.last_seen = Instant::now();
    }
    match msg {
        Message::Advertise(descriptor) => {
            state.router.advertise(id, descriptor.clone());
            notify_advertise(&mut state, id, &descriptor);
        }
        Message::Subscribe {
            pattern,
            queue_capacity,
        } => {
            let existing: Vec<StreamDescriptor> = state
                .router
                .streams()
                .filter(|e| pattern.matches(&e.descriptor.id))
                .map(|e| e.descriptor.clone())
                .collect();
            state.router.subscribe(id, pattern, queue_capacity as usize)?;
            if let Some(conn) = state.conns.get_mut(&id) {
                for d in existing {
                    conn.control.push_back(Message::Advertise(d).to_frame());
                }
                conn.wake.notify_all();
            }
        }
        Message::Unsubscribe { pattern } => {
            state.router.unsubscribe_pattern(id, &pattern);
        }
        Message::Publish(m) => {
            let recipients = state.router.route(&m)?;
            let mut owners: Vec<ClientId> = recipients.iter().filter_map(|s| state.router.owner_of(*s)).collect();
            owners.dedup();
            for owner in owners {
                if let Some(conn) = state.conns.get(&owner) {
                    conn.wake.notify_all();
                }
            }
        }
        Message::Ping => {
            if let Some(conn) = state.conns.get_mut(&id) {
                conn.control.push_back(Message::Pong.to_frame());
                conn.wake.notify_all();
            }
        }
        Message::Pong => {}
    }
    Ok(())
}

fn notify_advertise(state: &mut State, from: ClientId, descriptor: &StreamDescriptor) {
    let mut targets: Vec<ClientId> = Vec::new();
    for conn_id in state.conns.keys() {
        if *conn_id == from {
            continue;
        }
        let interested = state
            .router
            .subscriptions_of(*conn_id)
            .iter()
            .any(|s| state.router.pattern_of(*s).is_some_and(|p| p.matches(&descriptor.id)));
        if interested {
            targets.push(*conn_id);
        }
    }
    let frame = Message::Advertise(descriptor.clone()).to_frame();
    for t in targets {
        if let Some(conn) = state.conns.get_mut(&t) {
            conn.control.push_back(frame.clone());
            conn.wake.notify_all();
        }
    }
}

fn write_loop(shared: Arc<Shared>, id: ClientId, mut socket: TcpStream, wake: Arc<Condvar>) {
    let mut out = Vec::new();
    loop {
        let closing;
        {
            let mut state = shared.lock();
            loop {
                collect_outgoing(&mut state, id, &mut out);
                if !out.is_empty() {
                    closing = false;
                    break;
                }
                if state.conns.get(&id).is_none_or(|c| c.closing) {
                    closing = true;
                    break;
                }
                state = wake
                    .wait_timeout(state, Duration::from_millis(100))
                    .unwrap_or_else(|p| p.into_inner())
                    .0;
            }
        }
        if !out.is_empty() {
            if socket.write_all(&out).is_err() {
                break;
            }
            out.clear();
        }
        if closing {
            break;
        }
    }
    let _ = socket.flush();
    let _ = socket.shutdown(Shutdown::Both);
    let mut state = shared.lock();
    state.router.disconnect(id);
    state.conns.remove(&id);
    debug!("client {id} disconnected");
}

fn collect_outgoing(state: &mut State, id: ClientId, out: &mut Vec<u8>) {
    if let Some(conn) = state.conns.get_mut(&id) {
        while let Some(frame) = conn.control.pop_front() {
            out.extend(frame.encode().expect("control frames are small"));
        }
    }
    for sub in state.router.subscriptions_of(id) {
        while let Some(m) = state.router.pop(sub) {
            match Message::Publish(m).to_frame().encode() {
                Ok(bytes) => out.extend(bytes),
                Err(e) => warn!("dropping oversized message: {e}"),
            }
            if out.len() > 1 << 20 {
                return;
            }
        }
    }
}
