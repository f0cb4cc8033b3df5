use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};

use mage_cli::tcp::{serve_frames, TcpTransport};
use mage_core::clock::SystemClock;
use mage_core::wire::{Courier, Message, Transport};
use mage_core::{EndpointAddress, RetryPolicy};

fn echo_server() -> EndpointAddress {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = serve_frames(listener, |msg| match msg {
        Message::Ping(n) => Message::Pong(n),
        other => Message::error("BAD_MESSAGE", format!("no {}", other.msg_type())),
    })
    .unwrap();
    EndpointAddress::new("127.0.0.1", addr.port())
}

#[test]
fn ping_round_trips_over_tcp() {
    let to = echo_server();
    let mut courier = Courier::new(TcpTransport::default(), SystemClock, RetryPolicy::default(), 1);
    courier.ping(&to, 77).unwrap();
    courier.ping(&to, 78).unwrap();
}

#[test]
fn reply_frame_is_byte_exact() {
    let to = echo_server();
    let reply = TcpTransport::default()
        .exchange(&to, &Message::Ping(5).encode().unwrap())
        .unwrap();
    assert_eq!(reply, Message::Pong(5).encode().unwrap());
}

#[test]
fn corrupted_frame_is_answered_with_error() {
    let to = echo_server();
    let mut frame = Message::Ping(9).encode().unwrap();
    let last = frame.len() - 1;
    frame[last] ^= 0x01;
    let reply = TcpTransport::default().exchange(&to, &frame).unwrap();
    match Message::decode(&reply).unwrap() {
        Message::Error { reason, .. } => assert_eq!(reason, "BAD_DIGEST"),
        other => panic!("expected ERROR, got {other:?}"),
    }
}

#[test]
fn garbage_gets_bad_magic() {
    let to = echo_server();
    let mut stream = TcpStream::connect(("127.0.0.1", to.port)).unwrap();
    stream.write_all(b"GET / HTTP/1.0\r\n\r\n").unwrap();
    let mut reply = Vec::new();
    stream.read_to_end(&mut reply).unwrap();
    match Message::decode(&reply).unwrap() {
        Message::Error { reason, .. } => assert_eq!(reason, "BAD_MAGIC"),
        other => panic!("expected ERROR, got {other:?}"),
    }
}

#[test]
fn unreachable_peer_is_a_transport_error() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let err = TcpTransport::default()
        .exchange(&EndpointAddress::new("127.0.0.1", port), &Message::Ping(1).encode().unwrap())
        .unwrap_err();
    assert!(err.0.contains("connect"), "{err}");
}
