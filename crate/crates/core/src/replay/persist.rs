//! Little-endian, length-prefixed binary records for replay contents.
//!
//! File layout: magic `RLRB`, format version `u32`, kind `u8` (0 uniform,
//! 1 prioritized), capacity `u64`, then for prioritized buffers
//! `max_priority f64` and `step u64`, then a `u64` record count followed by
//! the records oldest first. Each record is
//!
//! ```text
//! priority f64            (prioritized buffers only)
//! obs       u32 len, len x f64
//! action    encoded action
//! reward    f64
//! next_obs  u32 len, len x f64
//! flags     u8: bit 0 terminal, bit 1 timeout, bit 2 next_action present
//! n_used    u32
//! next_action  encoded action, if flagged
//! ```
//!
//! An encoded action is a tag `u8` followed by `u64` index (tag 0) or
//! `u32` len and `len x f64` (tag 1).

use std::io::{self, Read, Write};

use super::{PrioritizedBuffer, PrioritizedConfig, ReplayBuffer, Transition};
use crate::Action;

const MAGIC: &[u8; 4] = b"RLRB";
const VERSION: u32 = 1;

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn put_f64s<W: Write>(w: &mut W, v: &[f64]) -> io::Result<()> {
    w.write_all(&(v.len() as u32).to_le_bytes())?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn get_u8<R: Read>(r: &mut R) -> io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn get_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_f64s<R: Read>(r: &mut R) -> io::Result<Vec<f64>> {
    let n = get_u32(r)? as usize;
    (0..n).map(|_| get_f64(r)).collect()
}

fn put_action<W: Write>(w: &mut W, a: &Action) -> io::Result<()> {
    match a {
        Action::Discrete(i) => {
            w.write_all(&[0])?;
            w.write_all(&(*i as u64).to_le_bytes())
        }
        Action::Continuous(v) => {
            w.write_all(&[1])?;
            put_f64s(w, v)
        }
    }
}

fn get_action<R: Read>(r: &mut R) -> io::Result<Action> {
    match get_u8(r)? {
        0 => Ok(Action::Discrete(get_u64(r)? as usize)),
        1 => Ok(Action::Continuous(get_f64s(r)?)),
        t => Err(invalid(format!("unknown action tag {t}"))),
    }
}

pub fn write_transition<W: Write>(w: &mut W, t: &Transition) -> io::Result<()> {
    put_f64s(w, &t.obs)?;
    put_action(w, &t.action)?;
    w.write_all(&t.reward.to_le_bytes())?;
    put_f64s(w, &t.next_obs)?;
    let flags = u8::from(t.is_terminal) | u8::from(t.is_timeout) << 1 | u8::from(t.next_action.is_some()) << 2;
    w.write_all(&[flags])?;
    w.write_all(&t.n_used.to_le_bytes())?;
    if let Some(a) = &t.next_action {
        put_action(w, a)?;
    }
    Ok(())
}

pub fn read_transition<R: Read>(r: &mut R) -> io::Result<Transition> {
    let obs = get_f64s(r)?;
    let action = get_action(r)?;
    let reward = get_f64(r)?;
    let next_obs = get_f64s(r)?;
    let flags = get_u8(r)?;
    let n_used = get_u32(r)?;
    let next_action = if flags & 4 != 0 { Some(get_action(r)?) } else { None };
    if flags & 3 == 3 {
        return Err(invalid("record is both terminal and timeout"));
    }
    Ok(Transition {
        obs,
        action,
        reward,
        next_obs,
        is_terminal: flags & 1 != 0,
        is_timeout: flags & 2 != 0,
        n_used,
        next_action,
    })
}

fn write_header<W: Write>(w: &mut W, kind: u8, capacity: usize) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[kind])?;
    w.write_all(&(capacity as u64).to_le_bytes())
}

fn read_header<R: Read>(r: &mut R, expect_kind: u8) -> io::Result<usize> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid("not a replay file"));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(invalid(format!("unsupported replay format version {version}")));
    }
    let kind = get_u8(r)?;
    if kind != expect_kind {
        return Err(invalid(format!("replay kind {kind}, expected {expect_kind}")));
    }
    Ok(get_u64(r)? as usize)
}

impl ReplayBuffer {
    pub fn save<W: Write>(&self, w: &mut W) -> io::Result<()> {
        write_header(w, 0, self.capacity())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for t in self.iter() {
            write_transition(w, t)?;
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> io::Result<Self> {
        let capacity = read_header(r, 0)?;
        let n = get_u64(r)?;
        let mut b = ReplayBuffer::new(capacity);
        for _ in 0..n {
            b.append(read_transition(r)?);
        }
        Ok(b)
    }
}

impl PrioritizedBuffer {
    pub fn save<W: Write>(&self, w: &mut W) -> io::Result<()> {
        write_header(w, 1, self.capacity())?;
        w.write_all(&self.max_priority().to_le_bytes())?;
        w.write_all(&self.step().to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for (t, p) in self.iter_with_priority() {
            w.write_all(&p.to_le_bytes())?;
            write_transition(w, t)?;
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R, config: PrioritizedConfig) -> io::Result<Self> {
        let capacity = read_header(r, 1)?;
        let max_priority = get_f64(r)?;
        let step = get_u64(r)?;
        let n = get_u64(r)?;
        let mut b = PrioritizedBuffer::new(capacity, config);
        for _ in 0..n {
            let p = get_f64(r)?;
            b.append_with_priority(read_transition(r)?, p);
        }
        b.restore_counters(max_priority, step);
        Ok(b)
    }
}
