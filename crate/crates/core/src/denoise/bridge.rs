//! Binary score-bridge protocol and its client.
//!
//! Frames are little-endian. A request is
//!
//! ```text
//! "STMP" | u8 version=1 | u8 op | u16 reserved=0 | u32 B | u32 N | u32 M | f64 τ
//!        | B·N·M × (f64 re, f64 im)            (k-major, then n, then m)
//! ```
//!
//! and a response is
//!
//! ```text
//! "STMP" | u8 version | u8 op | u8 status
//!        | op ∈ {1,3}: B·N·M × (f64 re, f64 im)  first-order score
//!        | op ∈ {2,3}: B·N·M × f64               second-order diagonal
//! ```
//!
//! Payloads follow only when `status == 0`. Status 1 flags a noise level the
//! model does not accept, status 2 a shape or capability error.

use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use num_complex::Complex;

use super::{ScoreModel, ScoreOutput, ScoreRequest};
use crate::error::{Error, Result};
use crate::model::Dims;
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"STMP";
pub const VERSION: u8 = 1;
pub const STATUS_OK: u8 = 0;
pub const STATUS_BAD_TAU: u8 = 1;
pub const STATUS_SHAPE: u8 = 2;

/// Upper bound on `B·N·M` accepted from the wire.
const MAX_ENTRIES: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum BridgeOp {
    Score1 = 1,
    Score2Diag = 2,
    Both = 3,
}

impl BridgeOp {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(BridgeOp::Score1),
            2 => Some(BridgeOp::Score2Diag),
            3 => Some(BridgeOp::Both),
            _ => None,
        }
    }

    fn has_first(self) -> bool {
        matches!(self, BridgeOp::Score1 | BridgeOp::Both)
    }

    fn has_second(self) -> bool {
        matches!(self, BridgeOp::Score2Diag | BridgeOp::Both)
    }

    fn request(self) -> ScoreRequest {
        match self {
            BridgeOp::Score1 => ScoreRequest::First,
            BridgeOp::Score2Diag => ScoreRequest::Second,
            BridgeOp::Both => ScoreRequest::Both,
        }
    }
}

impl From<ScoreRequest> for BridgeOp {
    fn from(r: ScoreRequest) -> Self {
        match r {
            ScoreRequest::First => BridgeOp::Score1,
            ScoreRequest::Second => BridgeOp::Score2Diag,
            ScoreRequest::Both => BridgeOp::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub op: BridgeOp,
    pub dims: Dims,
    pub tau: f64,
    pub data: Vec<Complex<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub version: u8,
    pub op: u8,
    pub status: u8,
    pub first: Vec<Complex<f64>>,
    pub second: Vec<f64>,
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    Ok(f64::from_le_bytes(read_array::<8, R>(r)?))
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    Ok(u32::from_le_bytes(read_array::<4, R>(r)?))
}

pub fn write_request<W: Write>(w: &mut W, req: &Request) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, req.op as u8])?;
    w.write_all(&0u16.to_le_bytes())?;
    w.write_all(&(req.dims.k as u32).to_le_bytes())?;
    w.write_all(&(req.dims.n as u32).to_le_bytes())?;
    w.write_all(&(req.dims.m as u32).to_le_bytes())?;
    w.write_all(&req.tau.to_le_bytes())?;
    for z in &req.data {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

/// Reads one request. `Ok(None)` on a clean end of stream before the first byte.
pub fn read_request<R: Read>(r: &mut R) -> Result<Option<Request>> {
    let mut magic = [0u8; 4];
    match r.read(&mut magic[..1]) {
        Ok(0) => return Ok(None),
        Ok(_) => {}
        Err(e) => return Err(e.into()),
    }
    r.read_exact(&mut magic[1..])?;
    if &magic != MAGIC {
        return Err(Error::Format("bad request magic".into()));
    }
    let [version, op] = read_array::<2, R>(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let reserved = u16::from_le_bytes(read_array::<2, R>(r)?);
    if reserved != 0 {
        return Err(Error::Format("reserved field must be zero".into()));
    }
    let op = BridgeOp::from_u8(op).ok_or_else(|| Error::Format(format!("unknown op {op}")))?;
    let b = read_u32(r)? as usize;
    let n = read_u32(r)? as usize;
    let m = read_u32(r)? as usize;
    let tau = read_f64(r)?;
    let count = b
        .checked_mul(n)
        .and_then(|x| x.checked_mul(m))
        .filter(|&c| c <= MAX_ENTRIES)
        .ok_or_else(|| Error::Format("frame too large".into()))?;
    // grow with the bytes actually received, not the header's claim
    let mut data = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let re = read_f64(r)?;
        let im = read_f64(r)?;
        data.push(Complex::new(re, im));
    }
    Ok(Some(Request {
        op,
        dims: Dims::new(b, n, m),
        tau,
        data,
    }))
}

pub fn write_response<W: Write>(w: &mut W, resp: &Response) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[resp.version, resp.op, resp.status])?;
    if resp.status == STATUS_OK {
        for z in &resp.first {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        for v in &resp.second {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads the response to a request with `count` entries and operation `op`.
pub fn read_response<R: Read>(r: &mut R, op: BridgeOp, count: usize) -> Result<Response> {
    let magic = read_array::<4, R>(r)?;
    if &magic != MAGIC {
        return Err(Error::Bridge("bad response magic".into()));
    }
    let [version, op_echo, status] = read_array::<3, R>(r)?;
    let mut resp = Response {
        version,
        op: op_echo,
        status,
        first: Vec::new(),
        second: Vec::new(),
    };
    if status != STATUS_OK {
        return Ok(resp);
    }
    let op = BridgeOp::from_u8(op_echo).unwrap_or(op);
    if op.has_first() {
        resp.first.reserve(count.min(1 << 16));
        for _ in 0..count {
            let re = read_f64(r)?;
            let im = read_f64(r)?;
            resp.first.push(Complex::new(re, im));
        }
    }
    if op.has_second() {
        resp.second.reserve(count.min(1 << 16));
        for _ in 0..count {
            resp.second.push(read_f64(r)?);
        }
    }
    Ok(resp)
}

/// Computes the response a conforming server sends for `req`.
pub fn respond<M: ScoreModel<f64> + ?Sized>(model: &M, req: &Request) -> Response {
    let mut resp = Response {
        version: VERSION,
        op: req.op as u8,
        status: STATUS_OK,
        first: Vec::new(),
        second: Vec::new(),
    };
    let (lo, hi) = model.noise_domain();
    if !(req.tau >= lo && req.tau <= hi) || !(req.tau >= 0.0) {
        resp.status = STATUS_BAD_TAU;
        return resp;
    }
    if req.op.has_second() && !model.has_second_order() {
        resp.status = STATUS_SHAPE;
        return resp;
    }
    if req.data.is_empty() {
        return resp;
    }
    match model.evaluate(&req.data, req.dims, req.tau, req.op.request()) {
        Ok(out) => {
            resp.first = out.first;
            resp.second = out.second;
        }
        Err(Error::OutOfDomain { .. }) => resp.status = STATUS_BAD_TAU,
        Err(_) => resp.status = STATUS_SHAPE,
    }
    resp
}

/// Answers requests on `stream` until the peer closes it.
///
/// Returns an error on a malformed frame; the caller drops the stream, which
/// closes the connection.
pub fn serve<M, S>(model: &M, stream: S) -> Result<()>
where
    M: ScoreModel<f64> + ?Sized,
    S: Read + Write,
{
    let mut stream = stream;
    loop {
        let req = match read_request(&mut stream) {
            Ok(Some(r)) => r,
            Ok(None) => return Ok(()),
            Err(e) => return Err(e),
        };
        let resp = respond(model, &req);
        let mut w = BufWriter::new(&mut stream);
        write_response(&mut w, &resp)?;
        w.flush()?;
    }
}

trait Duplex: Read + Write + Send {}
impl<T: Read + Write + Send> Duplex for T {}

struct ChildPipe {
    child: Child,
    stdin: ChildStdin,
    stdout: ChildStdout,
}

impl Read for ChildPipe {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.stdout.read(buf)
    }
}

impl Write for ChildPipe {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.stdin.write(buf)
    }
    fn flush(&mut self) -> io::Result<()> {
        self.stdin.flush()
    }
}

impl Drop for ChildPipe {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Score model served by an external process over the bridge protocol.
///
/// Requests on one connection are serialized; clone-free sharing across
/// threads goes through the internal lock.
pub struct BridgeClient {
    conn: Mutex<Box<dyn Duplex>>,
    second_order: bool,
    domain: (f64, f64),
}

impl std::fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeClient")
            .field("second_order", &self.second_order)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

impl BridgeClient {
    pub fn from_stream<S: Read + Write + Send + 'static>(stream: S) -> Self {
        BridgeClient {
            conn: Mutex::new(Box::new(stream)),
            second_order: true,
            domain: (0.0, f64::INFINITY),
        }
    }

    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::Bridge(format!("connect: {e}")))?;
        stream.set_nodelay(true).ok();
        Ok(Self::from_stream(stream))
    }

    /// Launches `program args…` and talks to it over its stdin/stdout.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Bridge(format!("spawn {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self::from_stream(ChildPipe { child, stdin, stdout }))
    }

    pub fn without_second_order(mut self) -> Self {
        self.second_order = false;
        self
    }

    pub fn with_domain(mut self, min: f64, max: f64) -> Self {
        self.domain = (min, max);
        self
    }

    /// Sends one request and waits for its response.
    pub fn call(&self, req: &Request) -> Result<Response> {
        let mut guard = self.conn.lock().map_err(|_| Error::Bridge("connection poisoned".into()))?;
        let conn: &mut dyn Duplex = &mut **guard;
        {
            let mut w = BufWriter::new(&mut *conn);
            write_request(&mut w, req)?;
            w.flush()?;
        }
        let mut r = BufReader::with_capacity(1 << 16, &mut *conn);
        let resp = read_response(&mut r, req.op, req.data.len()).map_err(|e| match e {
            Error::Io(io) if io.kind() == ErrorKind::UnexpectedEof => Error::Bridge("server closed connection".into()),
            other => other,
        })?;
        if !r.buffer().is_empty() {
            return Err(Error::Bridge("trailing bytes after response".into()));
        }
        Ok(resp)
    }
}

impl<T: Real> ScoreModel<T> for BridgeClient {
    fn has_second_order(&self) -> bool {
        self.second_order
    }

    fn noise_domain(&self) -> (T, T) {
        let lo = T::from_f64(self.domain.0).unwrap_or_else(T::zero);
        let hi = T::from_f64(self.domain.1).unwrap_or_else(T::infinity);
        (lo, hi)
    }

    fn evaluate(&self, batch: &[Complex<T>], dims: Dims, tau: T, request: ScoreRequest) -> Result<ScoreOutput<T>> {
        if batch.len() != dims.len() {
            return Err(Error::DimensionMismatch {
                expected: dims.len(),
                got: batch.len(),
            });
        }
        let req = Request {
            op: request.into(),
            dims,
            tau: tau.widen(),
            data: batch.iter().map(|z| Complex::new(z.re.widen(), z.im.widen())).collect(),
        };
        let resp = self.call(&req)?;
        if resp.op != req.op as u8 {
            return Err(Error::Bridge(format!("op echo {} for request {}", resp.op, req.op as u8)));
        }
        match resp.status {
            STATUS_OK => {}
            STATUS_BAD_TAU => return Err(Error::Bridge(format!("server rejected tau={}", req.tau))),
            STATUS_SHAPE => return Err(Error::Bridge("server reported a shape error".into())),
            s => return Err(Error::Bridge(format!("unknown status {s}"))),
        }
        Ok(ScoreOutput {
            first: resp.first.into_iter().map(|z| Complex::new(T::lit(z.re), T::lit(z.im))).collect(),
            second: resp.second.into_iter().map(T::lit).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::GaussianScore;

    #[test]
    fn request_layout() {
        let req = Request {
            op: BridgeOp::Both,
            dims: Dims::new(1, 1, 2),
            tau: 0.5,
            data: vec![Complex::new(1.0, -1.0), Complex::new(0.25, 2.0)],
        };
        let mut buf = Vec::new();
        write_request(&mut buf, &req).unwrap();
        assert_eq!(buf.len(), 28 + 2 * 16);
        assert_eq!(&buf[..4], b"STMP");
        assert_eq!(buf[4], 1);
        assert_eq!(buf[5], 3);
        assert_eq!(&buf[6..8], &[0, 0]);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[20..28].try_into().unwrap()), 0.5);
        let back = read_request(&mut buf.as_slice()).unwrap().unwrap();
        assert_eq!(back, req);
    }

    #[test]
    fn response_layout() {
        let g = GaussianScore::new(1.0);
        let req = Request {
            op: BridgeOp::Both,
            dims: Dims::new(2, 1, 1),
            tau: 1.0,
            data: vec![Complex::new(2.0, 0.0), Complex::new(0.0, 4.0)],
        };
        let resp = respond(&g, &req);
        let mut buf = Vec::new();
        write_response(&mut buf, &resp).unwrap();
        assert_eq!(buf.len(), 7 + 2 * 16 + 2 * 8);
        assert_eq!(&buf[4..7], &[1, 3, 0]);
        let back = read_response(&mut buf.as_slice(), BridgeOp::Both, 2).unwrap();
        assert_eq!(back.first, vec![Complex::new(-1.0, 0.0), Complex::new(0.0, -2.0)]);
        assert_eq!(back.second, vec![-0.5, -0.5]);
    }

    #[test]
    fn status_codes() {
        let g = GaussianScore::new(1.0).with_domain(0.01, 10.0);
        let mut req = Request {
            op: BridgeOp::Score1,
            dims: Dims::new(1, 1, 1),
            tau: 50.0,
            data: vec![Complex::new(0.0, 0.0)],
        };
        assert_eq!(respond(&g, &req).status, STATUS_BAD_TAU);
        req.tau = 1.0;
        req.dims = Dims::new(2, 1, 1);
        assert_eq!(respond(&g, &req).status, STATUS_SHAPE);
        let empty = Request {
            op: BridgeOp::Both,
            dims: Dims::new(0, 4, 4),
            tau: 1.0,
            data: vec![],
        };
        let r = respond(&g, &empty);
        assert_eq!(r.status, STATUS_OK);
        assert!(r.first.is_empty() && r.second.is_empty());
    }

    #[test]
    fn malformed_frames_are_errors() {
        assert!(read_request(&mut &b"XXXX"[..]).is_err());
        assert!(read_request(&mut &b"STMP\x02\x01\x00\x00"[..]).is_err());
        assert!(read_request(&mut &b"STMP\x01\x09\x00\x00"[..]).is_err());
        assert!(read_request(&mut &b"ST"[..]).is_err());
        assert!(read_request(&mut &b""[..]).unwrap().is_none());
        let mut huge = b"STMP\x01\x01\x00\x00".to_vec();
        for v in [u32::MAX, u32::MAX, 2] {
            huge.extend_from_slice(&v.to_le_bytes());
        }
        huge.extend_from_slice(&1f64.to_le_bytes());
        assert!(read_request(&mut huge.as_slice()).is_err());
    }
}
