//! Message transport between camera agents and the edge service.
//!
//! Two interchangeable backends feed the same [`MessageSource`] interface: an
//! in-process queue that any number of producer threads can send into, and
//! replay of a newline-delimited message file.

use std::io::{BufRead, Write};
use std::sync::mpsc;

use thiserror::Error;

use crate::model::{decode_message, encode_message, DecodeError, TrackletMessage};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Decode { line: usize, source: DecodeError },
    #[error("queue closed")]
    Closed,
}

pub trait MessageSource {
    /// Next message in delivery order, `None` at end of stream.
    fn next_message(&mut self) -> Option<Result<TrackletMessage, TransportError>>;
}

/// Collects a source until the first error or end of stream.
pub fn drain<S: MessageSource + ?Sized>(
    source: &mut S,
) -> Result<Vec<TrackletMessage>, TransportError> {
    let mut out = Vec::new();
    while let Some(m) = source.next_message() {
        out.push(m?);
    }
    Ok(out)
}

/// Producer handle of the in-process queue. Cloneable and `Send`.
#[derive(Debug, Clone)]
pub struct QueueSender {
    tx: mpsc::Sender<TrackletMessage>,
}

impl QueueSender {
    pub fn send(&self, msg: TrackletMessage) -> Result<(), TransportError> {
        self.tx.send(msg).map_err(|_| TransportError::Closed)
    }
}

/// Consumer end of the in-process queue. The stream ends once every
/// [`QueueSender`] has been dropped and the queue is empty.
#[derive(Debug)]
pub struct QueueReceiver {
    rx: mpsc::Receiver<TrackletMessage>,
}

impl QueueReceiver {
    /// Messages already queued, without blocking.
    pub fn try_drain(&self) -> Vec<TrackletMessage> {
        self.rx.try_iter().collect()
    }
}

impl MessageSource for QueueReceiver {
    fn next_message(&mut self) -> Option<Result<TrackletMessage, TransportError>> {
        self.rx.recv().ok().map(Ok)
    }
}

pub fn in_process_queue() -> (QueueSender, QueueReceiver) {
    let (tx, rx) = mpsc::channel();
    (QueueSender { tx }, QueueReceiver { rx })
}

/// Replays a newline-delimited message stream. Blank lines are skipped.
pub struct FileSource<R> {
    reader: R,
    line: usize,
    buf: Vec<u8>,
}

impl<R: BufRead> FileSource<R> {
    pub fn new(reader: R) -> Self {
        FileSource {
            reader,
            line: 0,
            buf: Vec::new(),
        }
    }
}

impl<R: BufRead> MessageSource for FileSource<R> {
    fn next_message(&mut self) -> Option<Result<TrackletMessage, TransportError>> {
        loop {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line += 1;
            if self.buf.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            return Some(
                decode_message(&self.buf).map_err(|source| TransportError::Decode {
                    line: self.line,
                    source,
                }),
            );
        }
    }
}

pub fn write_messages<'a, W, I>(mut w: W, messages: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a TrackletMessage>,
{
    for m in messages {
        w.write_all(&encode_message(m))?;
    }
    w.flush()
}
