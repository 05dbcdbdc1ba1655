use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::Duration;

use log::info;

use condmon_core::bag::{self, Bag, BagError, BagWriter, PlaybackHandle, RecordOptions, WriterConfig};
use condmon_core::bus::{resolve_broker_addr, Broker, BrokerConfig, BusError, Client};
use condmon_core::model::{MessageSink, SinkError, StampedMessage, StreamDescriptor};
use condmon_core::sim::{run_fleet_scenario, run_physio, ScenarioConfig, SimError};

use crate::{failed, usage, BrokerArgs, CliError, PlayArgs, RecordArgs, SimArgs};

const POLL: Duration = Duration::from_millis(50);

fn seconds(v: f64, flag: &str) -> Result<Duration, CliError> {
    Duration::try_from_secs_f64(v)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| usage(format!("--{flag} must be a positive number of seconds")))
}

pub(crate) fn connect(broker: Option<&str>) -> Result<Client, CliError> {
    let addr = resolve_broker_addr(broker);
    Client::connect(&addr).map_err(|e| failed(format!("cannot reach broker at {addr}: {e}")))
}

pub(crate) fn broker(args: &BrokerArgs, stop: &AtomicBool) -> Result<(), CliError> {
    let config = BrokerConfig {
        listen: args.listen.clone(),
        idle_timeout: seconds(args.idle_timeout, "idle-timeout")?,
        ..BrokerConfig::default()
    };
    let broker = Broker::bind(config).map_err(|e| usage(format!("cannot listen on {}: {e}", args.listen)))?;
    eprintln!("listening on {}", broker.local_addr());
    while !stop.load(Ordering::SeqCst) {
        thread::sleep(POLL);
    }
    info!("shutting down");
    broker.shutdown();
    Ok(())
}

pub(crate) fn record(args: &RecordArgs, stop: &AtomicBool) -> Result<(), CliError> {
    let mut options = RecordOptions::new(args.topics.clone());
    options.duration = args.duration.map(|v| seconds(v, "duration")).transpose()?;
    options.idle = args.idle.map(|v| seconds(v, "idle")).transpose()?;
    options.max_messages = args.max_messages;
    let mut client = connect(args.broker.as_deref())?;
    match bag::record(&mut client, &args.output, &options, stop) {
        Ok(s) => {
            eprintln!(
                "recorded {} messages from {} streams into {} ({:?})",
                s.written.messages,
                s.written.streams,
                s.written.path.display(),
                s.reason
            );
            Ok(())
        }
        Err(e @ BagError::Bus(BusError::BadPattern(..))) => Err(usage(e)),
        Err(e) => Err(failed(e)),
    }
}

pub(crate) fn play(args: &PlayArgs, stop: &AtomicBool) -> Result<(), CliError> {
    if !(args.rate.is_finite() && args.rate > 0.0) {
        return Err(usage("--rate must be positive"));
    }
    let mut bag = Bag::open(&args.bag).map_err(failed)?;
    let mut handle = PlaybackHandle::open(&mut bag, args.rate).map_err(failed)?;
    let mut client = connect(args.broker.as_deref())?;
    let control = handle.control();
    let finished = AtomicBool::new(false);
    let stats = thread::scope(|s| {
        s.spawn(|| {
            while !finished.load(Ordering::SeqCst) {
                if stop.load(Ordering::SeqCst) {
                    control.stop();
                    break;
                }
                thread::sleep(POLL);
            }
        });
        let stats = handle.play(&mut client);
        finished.store(true, Ordering::SeqCst);
        stats
    })
    .map_err(failed)?;
    client
        .barrier(Duration::from_secs(10))
        .map_err(|e| failed(format!("broker did not confirm delivery: {e}")))?;
    eprintln!("published {} messages", stats.published);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Sim {
    Fleet,
    Physio,
}

/// Passes everything through until `stop` is raised.
struct Interruptible<'a, S> {
    inner: S,
    stop: &'a AtomicBool,
}

impl<S: MessageSink> MessageSink for Interruptible<'_, S> {
    fn advertise(&mut self, d: &StreamDescriptor) -> Result<(), SinkError> {
        self.inner.advertise(d)
    }

    fn publish(&mut self, m: &StampedMessage) -> Result<(), SinkError> {
        if self.stop.load(Ordering::SeqCst) {
            return Err(SinkError::Other("interrupted".into()));
        }
        self.inner.publish(m)
    }
}

pub(crate) fn load_scenario(args: &SimArgs) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => ScenarioConfig::load(path).map_err(|e| failed(format!("{}: {e}", path.display())))?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(d) = args.duration {
        if !(d.is_finite() && d >= 0.0) {
            return Err(usage("--duration must be non-negative"));
        }
        cfg.duration_s = d;
        cfg.physio.duration_s = d;
    }
    if let Some(s) = args.speed {
        if !(s.is_finite() && s > 0.0) {
            return Err(usage("--speed must be positive"));
        }
    }
    Ok(cfg)
}

fn simulate(which: Sim, cfg: &ScenarioConfig, sink: &mut dyn MessageSink, speed: Option<f64>) -> Result<u64, SimError> {
    match which {
        Sim::Fleet => run_fleet_scenario(cfg, sink, speed).map(|s| s.published),
        Sim::Physio => run_physio(cfg, sink, speed),
    }
}

pub(crate) fn sim(args: &SimArgs, which: Sim, stop: &AtomicBool) -> Result<(), CliError> {
    let cfg = load_scenario(args)?;
    let outcome = match &args.output {
        Some(path) => {
            let writer = BagWriter::create_with(path, cfg.start_time, &[], WriterConfig::default()).map_err(failed)?;
            let mut sink = Interruptible { inner: writer, stop };
            let published = simulate(which, &cfg, &mut sink, args.speed);
            let summary = sink.inner.finish().map_err(failed)?;
            eprintln!("wrote {} messages to {}", summary.messages, summary.path.display());
            published
        }
        None => {
            let mut client = connect(args.broker.as_deref())?;
            let published = simulate(
                which,
                &cfg,
                &mut Interruptible {
                    inner: &mut client,
                    stop,
                },
                args.speed,
            );
            if published.is_ok() {
                client
                    .barrier(Duration::from_secs(10))
                    .map_err(|e| failed(format!("broker did not confirm delivery: {e}")))?;
            }
            published
        }
    };
    match outcome {
        Ok(n) => {
            eprintln!("published {n} messages");
            Ok(())
        }
        Err(_) if stop.load(Ordering::SeqCst) => {
            eprintln!("interrupted");
            Ok(())
        }
        Err(e) => Err(failed(e)),
    }
}
