//! A minimal client connection, used by the simulator and the tests.

use std::io;

use futures::{SinkExt, StreamExt};
use tokio::net::{TcpStream, ToSocketAddrs};
use tokio_util::codec::{Framed, LengthDelimitedCodec};

use crate::wire::{Envelope, WireError, MAX_MESSAGE_BYTES};

pub fn codec() -> LengthDelimitedCodec {
    LengthDelimitedCodec::builder().max_frame_length(MAX_MESSAGE_BYTES).new_codec()
}

pub struct Connection {
    framed: Framed<TcpStream, LengthDelimitedCodec>,
}

impl Connection {
    pub async fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        Ok(Self { framed: Framed::new(stream, codec()) })
    }

    pub async fn send(&mut self, env: &Envelope) -> io::Result<()> {
        self.framed.send(env.to_bytes()).await
    }

    /// Sends bytes that already hold a serialized envelope.
    pub async fn send_raw(&mut self, bytes: bytes::Bytes) -> io::Result<()> {
        self.framed.send(bytes).await
    }

    /// Next message, `None` once the server closed the connection.
    pub async fn recv(&mut self) -> Option<Result<Envelope, WireError>> {
        match self.framed.next().await? {
            Ok(bytes) => Some(Envelope::from_bytes(&bytes)),
            Err(e) => Some(Err(WireError::Io(e))),
        }
    }

    /// Splits into independent halves for concurrent reading and writing.
    pub fn split(self) -> (ConnectionWriter, ConnectionReader) {
        let (sink, stream) = self.framed.split();
        (ConnectionWriter { sink }, ConnectionReader { stream })
    }
}

pub struct ConnectionWriter {
    sink: futures::stream::SplitSink<Framed<TcpStream, LengthDelimitedCodec>, bytes::Bytes>,
}

impl ConnectionWriter {
    pub async fn send(&mut self, env: &Envelope) -> io::Result<()> {
        self.sink.send(env.to_bytes()).await
    }

    pub async fn send_raw(&mut self, bytes: bytes::Bytes) -> io::Result<()> {
        self.sink.send(bytes).await
    }
}

pub struct ConnectionReader {
    stream: futures::stream::SplitStream<Framed<TcpStream, LengthDelimitedCodec>>,
}

impl ConnectionReader {
    pub async fn recv(&mut self) -> Option<Result<Envelope, WireError>> {
        match self.stream.next().await? {
            Ok(bytes) => Some(Envelope::from_bytes(&bytes)),
            Err(e) => Some(Err(WireError::Io(e))),
        }
    }
}

/// Fetches `path` from the server's HTTP side. Returns the status code and
/// body.
pub async fn http_get(addr: impl ToSocketAddrs, path: &str) -> io::Result<(u16, Vec<u8>)> {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};

    let mut stream = TcpStream::connect(addr).await?;
    let request = format!("GET {path} HTTP/1.1\r\nHost: copano\r\nConnection: close\r\n\r\n");
    stream.write_all(request.as_bytes()).await?;
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).await?;
    let split = raw
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "no header terminator"))?;
    let head = std::str::from_utf8(&raw[..split]).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let status = head
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "no status code"))?;
    Ok((status, raw[split + 4..].to_vec()))
}
