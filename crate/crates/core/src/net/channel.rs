//! Message channels: an in-process byte queue and TCP. Both carry encoded frames.

use std::io::{ErrorKind, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use super::wire::{encode, FrameDecoder, Message, WireError};
use crate::error::{Error, Result};

pub trait Channel {
    fn send(&mut self, msg: &Message) -> Result<()>;
    /// Waits for the next well-formed message. Corrupt frames are skipped.
    fn recv(&mut self, timeout: Option<Duration>) -> Result<Message>;
}

fn next_good(decoder: &mut FrameDecoder) -> Option<Message> {
    while let Some(r) = decoder.next_message() {
        match r {
            Ok(m) => return Some(m),
            Err(e) => log::warn!("discarding corrupt frame: {e}"),
        }
    }
    None
}

/// One end of an in-process duplex byte queue.
pub struct MemChannel {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    decoder: FrameDecoder,
}

pub fn mem_pair() -> (MemChannel, MemChannel) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (
        MemChannel { tx: a_tx, rx: a_rx, decoder: FrameDecoder::new() },
        MemChannel { tx: b_tx, rx: b_rx, decoder: FrameDecoder::new() },
    )
}

impl Channel for MemChannel {
    fn send(&mut self, msg: &Message) -> Result<()> {
        self.tx.send(encode(msg)).map_err(|_| WireError::Closed)?;
        Ok(())
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Message> {
        let deadline = timeout.map(|t| Instant::now() + t);
        loop {
            if let Some(m) = next_good(&mut self.decoder) {
                return Ok(m);
            }
            let chunk = match deadline {
                None => self.rx.recv().map_err(|_| WireError::Closed)?,
                Some(d) => match self.rx.recv_timeout(d.saturating_duration_since(Instant::now())) {
                    Ok(c) => c,
                    Err(RecvTimeoutError::Timeout) => return Err(timeout_err()),
                    Err(RecvTimeoutError::Disconnected) => return Err(WireError::Closed.into()),
                },
            };
            self.decoder.push(&chunk);
        }
    }
}

fn timeout_err() -> Error {
    WireError::Timeout { round_id: 0 }.into()
}

pub struct TcpChannel {
    stream: TcpStream,
    decoder: FrameDecoder,
    buf: Vec<u8>,
}

impl TcpChannel {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        Self::new(TcpStream::connect(addr)?)
    }

    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self { stream, decoder: FrameDecoder::new(), buf: vec![0; 64 * 1024] })
    }
}

impl Channel for TcpChannel {
    fn send(&mut self, msg: &Message) -> Result<()> {
        self.stream.write_all(&encode(msg))?;
        Ok(())
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Message> {
        let deadline = timeout.map(|t| Instant::now() + t);
        loop {
            if let Some(m) = next_good(&mut self.decoder) {
                return Ok(m);
            }
            let wait = match deadline {
                None => None,
                Some(d) => {
                    let left = d.saturating_duration_since(Instant::now());
                    if left.is_zero() {
                        return Err(timeout_err());
                    }
                    Some(left)
                }
            };
            self.stream.set_read_timeout(wait)?;
            match self.stream.read(&mut self.buf) {
                Ok(0) => {
                    self.decoder.finish().map_err(Error::from)?;
                    return Err(WireError::Closed.into());
                }
                Ok(n) => self.decoder.push(&self.buf[..n]),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => return Err(timeout_err()),
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}
