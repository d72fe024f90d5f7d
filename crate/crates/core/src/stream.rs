//! Sample streaming over a plain byte-stream socket.
//!
//! The client sends one request byte (`0x01`) per sample; the server answers
//! with one frame. All integers are little-endian.
//!
//! Sample frame:
//!
//! | bytes          | field                                      |
//! |----------------|--------------------------------------------|
//! | 4              | magic `PMBA`                               |
//! | 2              | version (u16, currently 1)                 |
//! | 8              | sample index (u64, per connection from 0)  |
//! | 12             | nx, ny, nz (3 × u32)                       |
//! | 4·nx·ny·nz     | image, f32                                 |
//! | nx·ny·nz       | labels, u8 in {0, 1, 2}                    |
//! | 4              | CRC-32 (IEEE) of image bytes then label bytes |
//!
//! Error frame, sent before the server closes the connection:
//!
//! | bytes | field                         |
//! |-------|-------------------------------|
//! | 4     | magic `PMBE`                  |
//! | 2     | version (u16)                 |
//! | 2     | error code (u16)              |
//! | 4     | message length (u32)          |
//! | n     | UTF-8 message                 |

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use byteorder::{ByteOrder, LittleEndian};

use crate::config::GeneratorConfig;
use crate::error::{Error, Result};
use crate::pipeline::generate_sample;
use crate::rng::mix64;
use crate::volume::{Dims, LabelVolume, ScalarVolume};

pub const FRAME_MAGIC: &[u8; 4] = b"PMBA";
pub const ERROR_MAGIC: &[u8; 4] = b"PMBE";
pub const PROTOCOL_VERSION: u16 = 1;
pub const REQUEST_SAMPLE: u8 = 0x01;
pub const FRAME_HEADER_LEN: usize = 26;

/// Error codes carried by `PMBE` frames.
pub mod error_code {
    pub const BAD_REQUEST: u16 = 1;
    pub const GENERATION_FAILED: u16 = 2;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamFrame {
    pub sample_index: u64,
    pub image: ScalarVolume,
    pub labels: LabelVolume,
}

impl StreamFrame {
    pub fn new(sample_index: u64, image: ScalarVolume, labels: LabelVolume) -> Result<Self> {
        image.check_same_dims(&labels, "stream frame")?;
        Ok(Self {
            sample_index,
            image,
            labels,
        })
    }

    pub fn dims(&self) -> Dims {
        self.image.dims()
    }

    pub fn encode(&self) -> Vec<u8> {
        let d = self.dims();
        let n = d.len();
        let mut buf = vec![0u8; FRAME_HEADER_LEN + 5 * n + 4];
        buf[..4].copy_from_slice(FRAME_MAGIC);
        LittleEndian::write_u16(&mut buf[4..], PROTOCOL_VERSION);
        LittleEndian::write_u64(&mut buf[6..], self.sample_index);
        LittleEndian::write_u32(&mut buf[14..], d.nx as u32);
        LittleEndian::write_u32(&mut buf[18..], d.ny as u32);
        LittleEndian::write_u32(&mut buf[22..], d.nz as u32);
        let img_end = FRAME_HEADER_LEN + 4 * n;
        LittleEndian::write_f32_into(self.image.data(), &mut buf[FRAME_HEADER_LEN..img_end]);
        buf[img_end..img_end + n].copy_from_slice(self.labels.data());
        let crc = crc32fast::hash(&buf[FRAME_HEADER_LEN..img_end + n]);
        LittleEndian::write_u32(&mut buf[img_end + n..], crc);
        buf
    }
}

/// Anything a server can send back.
#[derive(Debug, Clone, PartialEq)]
pub enum ServerMessage {
    Sample(Box<StreamFrame>),
    Error { code: u16, message: String },
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: u64) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::format(offset, "stream ended inside a frame")
        } else {
            Error::io("<stream>", e)
        }
    })
}

/// Reads and validates one message.
pub fn read_message<R: Read>(r: &mut R) -> Result<ServerMessage> {
    let mut magic = [0u8; 4];
    read_exact_at(r, &mut magic, 0)?;
    let mut version = [0u8; 2];
    read_exact_at(r, &mut version, 4)?;
    let version = LittleEndian::read_u16(&version);
    if version != PROTOCOL_VERSION {
        return Err(Error::format(4, format!("unsupported protocol version {version}")));
    }
    match &magic {
        m if m == FRAME_MAGIC => {
            let mut head = [0u8; FRAME_HEADER_LEN - 6];
            read_exact_at(r, &mut head, 6)?;
            let index = LittleEndian::read_u64(&head[0..]);
            let dims = [8, 12, 16].map(|o| LittleEndian::read_u32(&head[o..]) as usize);
            let dims = Dims::new(dims[0], dims[1], dims[2])
                .map_err(|e| Error::format(14, e.to_string()))?;
            let n = dims.len();
            let mut payload = vec![0u8; 5 * n + 4];
            read_exact_at(r, &mut payload, FRAME_HEADER_LEN as u64)?;
            let crc = LittleEndian::read_u32(&payload[5 * n..]);
            if crc32fast::hash(&payload[..5 * n]) != crc {
                return Err(Error::format(
                    (FRAME_HEADER_LEN + 5 * n) as u64,
                    "frame checksum mismatch",
                ));
            }
            let mut img = vec![0f32; n];
            LittleEndian::read_f32_into(&payload[..4 * n], &mut img);
            let labels = payload[4 * n..5 * n].to_vec();
            Ok(ServerMessage::Sample(Box::new(StreamFrame {
                sample_index: index,
                image: ScalarVolume::from_vec(dims, img)?,
                labels: LabelVolume::from_vec(dims, labels)?,
            })))
        }
        m if m == ERROR_MAGIC => {
            let mut head = [0u8; 6];
            read_exact_at(r, &mut head, 6)?;
            let code = LittleEndian::read_u16(&head[0..]);
            let len = LittleEndian::read_u32(&head[2..]) as usize;
            let mut msg = vec![0u8; len];
            read_exact_at(r, &mut msg, 12)?;
            Ok(ServerMessage::Error {
                code,
                message: String::from_utf8_lossy(&msg).into_owned(),
            })
        }
        other => Err(Error::format(0, format!("unknown frame magic {other:?}"))),
    }
}

pub fn encode_error(code: u16, message: &str) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + message.len());
    buf.extend_from_slice(ERROR_MAGIC);
    buf.extend_from_slice(&PROTOCOL_VERSION.to_le_bytes());
    buf.extend_from_slice(&code.to_le_bytes());
    buf.extend_from_slice(&(message.len() as u32).to_le_bytes());
    buf.extend_from_slice(message.as_bytes());
    buf
}

/// Master seed of the `n`-th accepted connection. Connection 0 uses the
/// server seed itself, so its frames equal offline samples `0, 1, 2, ...`.
pub fn connection_seed(master_seed: u64, connection: u64) -> u64 {
    if connection == 0 {
        master_seed
    } else {
        mix64(master_seed ^ mix64(connection))
    }
}

#[derive(Debug, Clone)]
pub struct ServerOptions {
    /// Frames generated ahead of requests, per connection.
    pub prefetch: usize,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self { prefetch: 4 }
    }
}

/// A bound, not yet running, sample server.
pub struct StreamServer {
    listener: TcpListener,
    cfg: Arc<GeneratorConfig>,
    master_seed: u64,
    options: ServerOptions,
    stop: Arc<AtomicBool>,
}

impl StreamServer {
    pub fn bind(
        addr: impl ToSocketAddrs,
        cfg: GeneratorConfig,
        master_seed: u64,
        options: ServerOptions,
    ) -> Result<Self> {
        cfg.validate()?;
        let listener = TcpListener::bind(addr).map_err(|e| Error::io("<listen address>", e))?;
        Ok(Self {
            listener,
            cfg: Arc::new(cfg),
            master_seed,
            options,
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        self.listener
            .local_addr()
            .map_err(|e| Error::io("<listen address>", e))
    }

    /// Flag that makes [`StreamServer::run`] return once set.
    pub fn stop_handle(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    /// Accepts connections until stopped; each connection is served on its
    /// own thread with its own deterministic sample sequence.
    pub fn run(self) -> Result<()> {
        self.listener
            .set_nonblocking(true)
            .map_err(|e| Error::io("<listen address>", e))?;
        let counter = AtomicU64::new(0);
        while !self.stop.load(Ordering::Relaxed) {
            match self.listener.accept() {
                Ok((sock, _)) => {
                    let conn = counter.fetch_add(1, Ordering::Relaxed);
                    let seed = connection_seed(self.master_seed, conn);
                    let cfg = self.cfg.clone();
                    let stop = self.stop.clone();
                    let prefetch = self.options.prefetch.max(1);
                    thread::spawn(move || {
                        let _ = serve_connection(sock, cfg, seed, prefetch, stop);
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(Error::io("<listen address>", e)),
            }
        }
        Ok(())
    }
}

type Encoded = std::result::Result<Vec<u8>, String>;

fn spawn_producer(
    cfg: Arc<GeneratorConfig>,
    seed: u64,
    prefetch: usize,
    done: Arc<AtomicBool>,
) -> Receiver<Encoded> {
    let (tx, rx) = sync_channel::<Encoded>(prefetch);
    thread::spawn(move || {
        for index in 0u64.. {
            if done.load(Ordering::Relaxed) {
                break;
            }
            let msg = generate_sample(&cfg, seed, index)
                .and_then(|s| StreamFrame::new(index, s.image, s.labels))
                .map(|f| f.encode())
                .map_err(|e| e.to_string());
            let failed = msg.is_err();
            if tx.send(msg).is_err() || failed {
                break;
            }
        }
    });
    rx
}

fn serve_connection(
    mut sock: TcpStream,
    cfg: Arc<GeneratorConfig>,
    seed: u64,
    prefetch: usize,
    stop: Arc<AtomicBool>,
) -> io::Result<()> {
    sock.set_nonblocking(false)?;
    sock.set_nodelay(true)?;
    let done = Arc::new(AtomicBool::new(false));
    let frames = spawn_producer(cfg, seed, prefetch, done.clone());
    let result = (|| {
        let mut req = [0u8; 1];
        loop {
            if stop.load(Ordering::Relaxed) {
                return Ok(());
            }
            match sock.read(&mut req) {
                Ok(0) => return Ok(()),
                Ok(_) => {}
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e),
            }
            if req[0] != REQUEST_SAMPLE {
                let msg = format!("unexpected request byte 0x{:02x}", req[0]);
                sock.write_all(&encode_error(error_code::BAD_REQUEST, &msg))?;
                return sock.shutdown(std::net::Shutdown::Both);
            }
            match frames.recv() {
                Ok(Ok(bytes)) => sock.write_all(&bytes)?,
                Ok(Err(msg)) => {
                    sock.write_all(&encode_error(error_code::GENERATION_FAILED, &msg))?;
                    return sock.shutdown(std::net::Shutdown::Both);
                }
                Err(_) => return Ok(()),
            }
        }
    })();
    done.store(true, Ordering::Relaxed);
    drop(frames);
    result
}

/// Minimal blocking client.
pub struct StreamClient {
    sock: TcpStream,
    reader: io::BufReader<TcpStream>,
}

impl StreamClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let sock = TcpStream::connect(addr).map_err(|e| Error::io("<server>", e))?;
        sock.set_nodelay(true).map_err(|e| Error::io("<server>", e))?;
        let reader = io::BufReader::new(sock.try_clone().map_err(|e| Error::io("<server>", e))?);
        Ok(Self { sock, reader })
    }

    /// Sends a raw request byte and reads the reply.
    pub fn request_raw(&mut self, byte: u8) -> Result<ServerMessage> {
        self.sock
            .write_all(&[byte])
            .map_err(|e| Error::io("<server>", e))?;
        read_message(&mut self.reader)
    }

    pub fn next_frame(&mut self) -> Result<StreamFrame> {
        match self.request_raw(REQUEST_SAMPLE)? {
            ServerMessage::Sample(f) => Ok(*f),
            ServerMessage::Error { code, message } => Err(Error::format(
                0,
                format!("server error {code}: {message}"),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> StreamFrame {
        let d = Dims::new(3, 2, 2).unwrap();
        let img = ScalarVolume::from_vec(d, (0..12).map(|i| i as f32 / 11.0).collect()).unwrap();
        let lab = LabelVolume::from_vec(d, (0..12).map(|i| (i % 3) as u8).collect()).unwrap();
        StreamFrame::new(7, img, lab).unwrap()
    }

    #[test]
    fn frame_layout() {
        let f = frame();
        let b = f.encode();
        assert_eq!(b.len(), 26 + 12 * 5 + 4);
        assert_eq!(&b[..4], b"PMBA");
        assert_eq!(LittleEndian::read_u16(&b[4..]), 1);
        assert_eq!(LittleEndian::read_u64(&b[6..]), 7);
        assert_eq!(LittleEndian::read_u32(&b[14..]), 3);
        assert_eq!(LittleEndian::read_u32(&b[18..]), 2);
        assert_eq!(LittleEndian::read_u32(&b[22..]), 2);
        assert_eq!(LittleEndian::read_f32(&b[26 + 4..]), 1.0 / 11.0);
        assert_eq!(b[26 + 48 + 2], 2);
        let crc = crc32fast::hash(&b[26..26 + 60]);
        assert_eq!(LittleEndian::read_u32(&b[86..]), crc);
    }

    #[test]
    fn frame_round_trip() {
        let f = frame();
        let back = read_message(&mut f.encode().as_slice()).unwrap();
        assert_eq!(back, ServerMessage::Sample(Box::new(f)));
    }

    #[test]
    fn corrupted_payload_detected() {
        let mut b = frame().encode();
        b[30] ^= 0x40;
        assert!(matches!(
            read_message(&mut b.as_slice()),
            Err(Error::Format { .. })
        ));
        let b = frame().encode();
        assert!(read_message(&mut &b[..b.len() - 1]).is_err());
    }

    #[test]
    fn error_frame_round_trip() {
        let b = encode_error(error_code::BAD_REQUEST, "nope");
        assert_eq!(&b[..4], b"PMBE");
        assert_eq!(
            read_message(&mut b.as_slice()).unwrap(),
            ServerMessage::Error {
                code: 1,
                message: "nope".into()
            }
        );
    }

    #[test]
    fn connection_seeds() {
        assert_eq!(connection_seed(9, 0), 9);
        assert_ne!(connection_seed(9, 1), connection_seed(9, 2));
    }
}
