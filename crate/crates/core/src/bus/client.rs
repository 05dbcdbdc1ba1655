//! Blocking broker client.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::warn;

use super::codec::FrameDecoder;
use super::proto::Message;
use super::topic::TopicPattern;
use super::BusError;
use crate::model::{MessageSink, SinkError, StampedMessage, StreamDescriptor};

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub ping_interval: Duration,
    pub connect_timeout: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            ping_interval: Duration::from_secs(2),
            connect_timeout: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Incoming {
    Message(StampedMessage),
    Advertise(StreamDescriptor),
}

enum Event {
    Incoming(Incoming),
    Pong,
}

pub struct Client {
    writer: Arc<Mutex<TcpStream>>,
    socket: TcpStream,
    events: Receiver<Event>,
    pending: VecDeque<Incoming>,
    stop_keepalive: Option<Sender<()>>,
    threads: Vec<JoinHandle<()>>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Client, BusError> {
        Client::connect_with(addr, ClientConfig::default())
    }

    pub fn connect_with(addr: impl ToSocketAddrs, config: ClientConfig) -> Result<Client, BusError> {
        let mut last_err = io::Error::new(io::ErrorKind::InvalidInput, "no address");
        let mut socket = None;
        for a in addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&a, config.connect_timeout) {
                Ok(s) => {
                    socket = Some(s);
                    break;
                }
                Err(e) => last_err = e,
            }
        }
        let socket = socket.ok_or(BusError::Io(last_err.to_string()))?;
        socket.set_nodelay(true)?;
        let writer = Arc::new(Mutex::new(socket.try_clone()?));
        let (tx, events) = mpsc::channel();
        let reader_socket = socket.try_clone()?;
        let reader = thread::Builder::new()
            .name("bus-client-read".into())
            .spawn(move || read_loop(reader_socket, tx))?;
        let (stop_tx, stop_rx) = mpsc::channel::<()>();
        let ping_writer = Arc::clone(&writer);
        let interval = config.ping_interval;
        let keepalive = thread::Builder::new().name("bus-client-ping".into()).spawn(move || {
            let ping = Message::Ping.to_frame().encode().expect("empty body");
            while let Err(RecvTimeoutError::Timeout) = stop_rx.recv_timeout(interval) {
                let mut w = ping_writer.lock().unwrap_or_else(|p| p.into_inner());
                if w.write_all(&ping).is_err() {
                    break;
                }
            }
        })?;
        Ok(Client {
            writer,
            socket,
            events,
            pending: VecDeque::new(),
            stop_keepalive: Some(stop_tx),
            threads: vec![reader, keepalive],
        })
    }

    pub fn send(&self, msg: &Message) -> Result<(), BusError> {
        let bytes = msg.to_frame().encode()?;
        let mut w = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn advertise(&self, descriptor: &StreamDescriptor) -> Result<(), BusError> {
        self.send(&Message::Advertise(descriptor.clone()))
    }

    /// Subscribes and waits until the broker has registered the subscription.
    pub fn subscribe(&mut self, pattern: &str, queue_capacity: u32) -> Result<(), BusError> {
        if queue_capacity == 0 {
            return Err(BusError::ZeroCapacity);
        }
        let pattern = TopicPattern::parse(pattern)?;
        self.send(&Message::Subscribe {
            pattern,
            queue_capacity,
        })?;
        self.barrier(Duration::from_secs(5))
    }

    pub fn unsubscribe(&mut self, pattern: &str) -> Result<(), BusError> {
        let pattern = TopicPattern::parse(pattern)?;
        self.send(&Message::Unsubscribe { pattern })?;
        self.barrier(Duration::from_secs(5))
    }

    pub fn publish(&self, msg: &StampedMessage) -> Result<(), BusError> {
        self.send(&Message::Publish(msg.clone()))
    }

    /// Round-trips a PING. The broker handles a connection's frames in order,
    /// so everything sent before the barrier has been processed once it returns.
    pub fn barrier(&mut self, timeout: Duration) -> Result<(), BusError> {
        self.send(&Message::Ping)?;
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.events.recv_timeout(left) {
                Ok(Event::Pong) => return Ok(()),
                Ok(Event::Incoming(i)) => self.pending.push_back(i),
                Err(RecvTimeoutError::Timeout) => return Err(BusError::Io("timed out waiting for broker".into())),
                Err(RecvTimeoutError::Disconnected) => return Err(BusError::Disconnected),
            }
        }
    }

    /// Next delivery, `Ok(None)` on timeout, `Disconnected` once the broker
    /// has gone away and everything received has been consumed.
    pub fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Incoming>, BusError> {
        if let Some(i) = self.pending.pop_front() {
            return Ok(Some(i));
        }
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.events.recv_timeout(left) {
                Ok(Event::Incoming(i)) => return Ok(Some(i)),
                Ok(Event::Pong) => continue,
                Err(RecvTimeoutError::Timeout) => return Ok(None),
                Err(RecvTimeoutError::Disconnected) => return Err(BusError::Disconnected),
            }
        }
    }

    pub fn close(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop_keepalive.take();
        {
            let mut w = self.writer.lock().unwrap_or_else(|p| p.into_inner());
            let _ = w.flush();
        }
        let _ = self.socket.shutdown(Shutdown::Both);
        for h in self.threads.drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for Client {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl MessageSink for Client {
    fn advertise(&mut self, descriptor: &StreamDescriptor) -> Result<(), SinkError> {
        Client::advertise(self, descriptor).map_err(sink_error)
    }

    fn publish(&mut self, message: &StampedMessage) -> Result<(), SinkError> {
        Client::publish(self, message).map_err(sink_error)
    }
}

fn sink_error(e: BusError) -> SinkError {
    match e {
        BusError::Disconnected => SinkError::Disconnected,
        other => SinkError::Other(other.to_string()),
    }
}

fn read_loop(mut socket: TcpStream, tx: Sender<Event>) {
    let mut decoder = FrameDecoder::default();
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        let n = match socket.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(_) => break,
        };
        decoder.extend(&buf[..n]);
        loop {
            let frame = match decoder.next_frame() {
                Ok(Some(f)) => f,
                Ok(None) => break,
                Err(e) => {
                    warn!("protocol error from broker: {e}");
                    return;
                }
            };
            let event = match Message::from_frame(&frame) {
                Ok(Message::Publish(m)) => Event::Incoming(Incoming::Message(m)),
                Ok(Message::Advertise(d)) => Event::Incoming(Incoming::Advertise(d)),
                Ok(Message::Pong) => Event::Pong,
                Ok(_) => continue,
                Err(e) => {
                    warn!("bad frame from broker: {e}");
                    continue;
                }
            };
            if tx.send(event).is_err() {
                return;
            }
        }
    }
}
