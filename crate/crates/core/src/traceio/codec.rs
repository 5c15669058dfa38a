//! Binary trace format and its JSON-lines mirror.
//!
//! Binary layout (little endian):
//! ```text
//! "FTRC" | version: u16 | program hash: [u8; 32] | record*
//! record  = len: u32 | payload[len]
//! payload = index: u64 | opcode: u8 | opcode arg: u32 | src_line: u32 | flags: u8
//!           | n_locs: u16 | n_vals: u16 | loc* | value* | [result loc] | [result value] | [region: u32]
//! loc     = 0 (immediate) | 1 depth: u32 name_len: u16 name | 2 addr: u64
//! value   = tag: u8 | bits: u64
//! ```

use std::io::{self, BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use super::{hash_hex, Trace, TraceEvent};
use crate::mirvm::{Location, Opcode, Value, ValueTag};

pub const MAGIC: &[u8; 4] = b"FTRC";
pub const VERSION: u16 = 1;

const HAS_RESULT_LOC: u8 = 1;
const HAS_RESULT_VALUE: u8 = 2;
const HAS_REGION: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum TraceIoError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a trace file (bad magic)")]
    BadMagic,
    #[error("unsupported trace version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated stream")]
    Truncated,
    #[error("malformed record at event {index}: {reason}")]
    Malformed { index: u64, reason: String },
    #[error("json error on line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    #[default]
    Binary,
    Jsonl,
}

impl TraceFormat {
    /// `.jsonl` / `.json` select the mirror; anything else is binary.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => TraceFormat::Jsonl,
            _ => TraceFormat::Binary,
        }
    }

    pub fn write(self, trace: &Trace, sink: impl Write) -> io::Result<()> {
        match self {
            TraceFormat::Binary => write_trace(trace, sink),
            TraceFormat::Jsonl => write_trace_jsonl(trace, sink),
        }
    }

    pub fn read(self, source: impl Read) -> Result<Trace, TraceIoError> {
        match self {
            TraceFormat::Binary => read_trace(source),
            TraceFormat::Jsonl => read_trace_jsonl(io::BufReader::new(source)),
        }
    }
}

fn put_value(buf: &mut Vec<u8>, v: Value) {
    buf.push(match v.tag {
        ValueTag::Int => 0,
        ValueTag::Float => 1,
    });
    buf.extend_from_slice(&v.bits.to_le_bytes());
}

fn put_loc(buf: &mut Vec<u8>, loc: Option<&Location>) {
    match loc {
        None => buf.push(0),
        Some(Location::Reg { depth, name }) => {
            buf.push(1);
            buf.extend_from_slice(&depth.to_le_bytes());
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
        }
        Some(Location::Mem { addr }) => {
            buf.push(2);
            buf.extend_from_slice(&addr.to_le_bytes());
        }
    }
}

pub fn write_trace(trace: &Trace, sink: impl Write) -> io::Result<()> {
    let mut w = io::BufWriter::new(sink);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&trace.program_hash)?;
    let mut buf = Vec::with_capacity(128);
    for e in &trace.events {
        buf.clear();
        let (code, arg) = e.opcode.code();
        buf.extend_from_slice(&e.index.to_le_bytes());
        buf.push(code);
        buf.extend_from_slice(&arg.to_le_bytes());
        buf.extend_from_slice(&e.src_line.to_le_bytes());
        let mut flags = 0;
        if e.result_location.is_some() {
            flags |= HAS_RESULT_LOC;
        }
        if e.result_value.is_some() {
            flags |= HAS_RESULT_VALUE;
        }
        if e.region_id.is_some() {
            flags |= HAS_REGION;
        }
        buf.push(flags);
        buf.extend_from_slice(&(e.operand_locations.len() as u16).to_le_bytes());
        buf.extend_from_slice(&(e.operand_values.len() as u16).to_le_bytes());
        for l in &e.operand_locations {
            put_loc(&mut buf, l.as_ref());
        }
        for v in &e.operand_values {
            put_value(&mut buf, *v);
        }
        if let Some(l) = &e.result_location {
            put_loc(&mut buf, Some(l));
        }
        if let Some(v) = e.result_value {
            put_value(&mut buf, v);
        }
        if let Some(r) = e.region_id {
            buf.extend_from_slice(&r.to_le_bytes());
        }
        w.write_all(&(buf.len() as u32).to_le_bytes())?;
        w.write_all(&buf)?;
    }
    w.flush()
}

struct Payload<'a> {
    bytes: &'a [u8],
    pos: usize,
    index: u64,
}

impl Payload<'_> {
    fn malformed(&self, reason: impl Into<String>) -> TraceIoError {
        TraceIoError::Malformed {
            index: self.index,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8], TraceIoError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(self.malformed("record shorter than its fields"));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, TraceIoError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, TraceIoError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, TraceIoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, TraceIoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn value(&mut self) -> Result<Value, TraceIoError> {
        let tag = match self.u8()? {
            0 => ValueTag::Int,
            1 => ValueTag::Float,
            t => return Err(self.malformed(format!("bad value tag {t}"))),
        };
        Ok(Value::from_bits(tag, self.u64()?))
    }

    fn loc(&mut self) -> Result<Option<Location>, TraceIoError> {
        match self.u8()? {
            0 => Ok(None),
            1 => {
                let depth = self.u32()?;
                let len = self.u16()? as usize;
                let name = match std::str::from_utf8(self.take(len)?) {
                    Ok(n) => n.to_string(),
                    Err(_) => return Err(self.malformed("register name is not utf-8")),
                };
                Ok(Some(Location::Reg { depth, name }))
            }
            2 => Ok(Some(Location::Mem { addr: self.u64()? })),
            t => Err(self.malformed(format!("bad location tag {t}"))),
        }
    }
}

/// Fill `buf` completely; `Ok(false)` on a clean EOF before the first byte.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> Result<bool, TraceIoError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(TraceIoError::Truncated),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

pub fn read_trace(source: impl Read) -> Result<Trace, TraceIoError> {
    let mut r = io::BufReader::new(source);
    let mut header = [0u8; 4 + 2 + 32];
    if !read_full(&mut r, &mut header)? {
        return Err(TraceIoError::Truncated);
    }
    if &header[..4] != MAGIC {
        return Err(TraceIoError::BadMagic);
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(TraceIoError::UnsupportedVersion(version));
    }
    let mut trace = Trace::new(header[6..].try_into().unwrap());
    let mut len_buf = [0u8; 4];
    let mut payload = Vec::new();
    while read_full(&mut r, &mut len_buf)? {
        let expected = trace.events.len() as u64;
        payload.resize(u32::from_le_bytes(len_buf) as usize, 0);
        if !read_full(&mut r, &mut payload)? && !payload.is_empty() {
            return Err(TraceIoError::Truncated);
        }
        let mut p = Payload {
            bytes: &payload,
            pos: 0,
            index: expected,
        };
        let index = p.u64()?;
        if index != expected {
            return Err(p.malformed(format!("index {index} out of sequence")));
        }
        let (code, arg) = (p.u8()?, p.u32()?);
        let opcode = Opcode::from_code(code, arg).ok_or_else(|| p.malformed(format!("bad opcode {code}/{arg}")))?;
        let src_line = p.u32()?;
        let flags = p.u8()?;
        let n_locs = p.u16()? as usize;
        let n_vals = p.u16()? as usize;
        if n_locs != n_vals {
            return Err(p.malformed(format!("operand arity mismatch ({n_locs} locations, {n_vals} values)")));
        }
        let mut operand_locations = Vec::with_capacity(n_locs);
        for _ in 0..n_locs {
            operand_locations.push(p.loc()?);
        }
        let mut operand_values = Vec::with_capacity(n_vals);
        for _ in 0..n_vals {
            operand_values.push(p.value()?);
        }
        let result_location = if flags & HAS_RESULT_LOC != 0 {
            Some(p.loc()?.ok_or_else(|| p.malformed("result location is an immediate"))?)
        } else {
            None
        };
        let result_value = if flags & HAS_RESULT_VALUE != 0 { Some(p.value()?) } else { None };
        let region_id = if flags & HAS_REGION != 0 { Some(p.u32()?) } else { None };
        if p.pos != payload.len() {
            return Err(p.malformed("trailing bytes in record"));
        }
        trace.events.push(TraceEvent {
            index,
            opcode,
            src_line,
            operand_locations,
            operand_values,
            result_location,
            result_value,
            region_id,
        });
    }
    Ok(trace)
}

#[derive(Serialize, Deserialize)]
struct JsonHeader {
    magic: String,
    version: u16,
    program_hash: String,
}

pub fn write_trace_jsonl(trace: &Trace, sink: impl Write) -> io::Result<()> {
    let mut w = io::BufWriter::new(sink);
    let header = JsonHeader {
        magic: "FTRC".into(),
        version: VERSION,
        program_hash: trace.hash_hex(),
    };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    for e in &trace.events {
        serde_json::to_writer(&mut w, e)?;
        writeln!(w)?;
    }
    w.flush()
}

pub fn read_trace_jsonl(source: impl BufRead) -> Result<Trace, TraceIoError> {
    let mut lines = source.lines();
    let first = lines.next().ok_or(TraceIoError::Truncated)??;
    let header: JsonHeader =
        serde_json::from_str(&first).map_err(|source| TraceIoError::Json { line: 1, source })?;
    if header.magic != "FTRC" {
        return Err(TraceIoError::BadMagic);
    }
    if header.version != VERSION {
        return Err(TraceIoError::UnsupportedVersion(header.version));
    }
    let hash = hash_hex::decode(&header.program_hash).ok_or(TraceIoError::Malformed {
        index: 0,
        reason: "bad program hash in header".into(),
    })?;
    let mut trace = Trace::new(hash);
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: TraceEvent =
            serde_json::from_str(&line).map_err(|source| TraceIoError::Json { line: n + 2, source })?;
        let expected = trace.events.len() as u64;
        if e.index != expected || e.operand_locations.len() != e.operand_values.len() {
            return Err(TraceIoError::Malformed {
                index: expected,
                reason: "index out of sequence or operand arity mismatch".into(),
            });
        }
        trace.events.push(e);
    }
    Ok(trace)
}
