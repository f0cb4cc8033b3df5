//! Frames over TCP: one request frame and one reply frame per connection.

use std::io::{self, Read};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use mage_core::wire::{frame_encode, read_frame, write_frame, Message, Transport, TransportError};
use mage_core::EndpointAddress;

/// Blocking client side of the exchange.
#[derive(Debug, Clone, Copy)]
pub struct TcpTransport {
    pub connect_timeout: Duration,
    pub io_timeout: Duration,
}

impl Default for TcpTransport {
    fn default() -> Self {
        TcpTransport {
            connect_timeout: Duration::from_secs(3),
            io_timeout: Duration::from_secs(10),
        }
    }
}

impl TcpTransport {
    fn connect(&self, to: &EndpointAddress) -> Result<TcpStream, TransportError> {
        let addrs = (to.host.as_str(), to.port)
            .to_socket_addrs()
            .map_err(|e| TransportError(format!("resolve {to}: {e}")))?;
        let mut last = TransportError(format!("{to} resolved to no address"));
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, self.connect_timeout) {
                Ok(s) => return Ok(s),
                Err(e) => last = TransportError(format!("connect {addr}: {e}")),
            }
        }
        Err(last)
    }
}

impl Transport for TcpTransport {
    fn exchange(&mut self, to: &EndpointAddress, frame: &[u8]) -> Result<Vec<u8>, TransportError> {
        let mut stream = self.connect(to)?;
        let fail = |e: &dyn std::fmt::Display| TransportError(format!("{to}: {e}"));
        stream.set_read_timeout(Some(self.io_timeout)).map_err(|e| fail(&e))?;
        stream.set_write_timeout(Some(self.io_timeout)).map_err(|e| fail(&e))?;
        write_frame(&mut stream, frame).map_err(|e| fail(&e))?;
        let (msg_type, payload) = read_frame(&mut stream).map_err(|e| fail(&e))?;
        frame_encode(msg_type, &payload).map_err(|e| fail(&e))
    }
}

/// Serves frames on `listener` from a background thread, one thread per
/// connection. Frames that fail to parse are answered with an ERROR frame
/// naming the failure.
pub fn serve_frames<H>(listener: TcpListener, handler: H) -> io::Result<SocketAddr>
where
    H: Fn(Message) -> Message + Send + Sync + 'static,
{
    let addr = listener.local_addr()?;
    let handler = Arc::new(handler);
    thread::Builder::new()
        .name(format!("frames-{addr}"))
        .spawn(move || {
            for stream in listener.incoming() {
                let stream = match stream {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("accept on {addr}: {e}");
                        continue;
                    }
                };
                let handler = Arc::clone(&handler);
                thread::spawn(move || {
                    if let Err(e) = answer_one(stream, &*handler) {
                        log::debug!("frame connection: {e}");
                    }
                });
            }
        })?;
    Ok(addr)
}

fn answer_one(mut stream: TcpStream, handler: &dyn Fn(Message) -> Message) -> io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(30)))?;
    stream.set_write_timeout(Some(Duration::from_secs(30)))?;
    let reply = match read_frame(&mut stream) {
        Ok((msg_type, payload)) => match Message::from_payload(msg_type, &payload) {
            Ok(msg) => handler(msg),
            Err(e) => Message::error(e.code(), e.to_string()),
        },
        Err(e) => Message::error(e.code(), e.to_string()),
    };
    let frame = reply
        .encode()
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    write_frame(&mut stream, &frame).map_err(|e| io::Error::other(e.to_string()))?;
    // Closing with unread input would reset the connection and could
    // destroy the reply before the peer reads it.
    stream.shutdown(Shutdown::Write)?;
    stream.set_read_timeout(Some(Duration::from_secs(1)))?;
    let _ = io::copy(&mut (&stream).take(1 << 20), &mut io::sink());
    Ok(())
}
