//! Servo-controller compact serial protocol.
//!
//! Set-Target, one channel:
//!
//! ```text
//! 0x84  channel  pulse & 0x7F  (pulse >> 7) & 0x7F
//! ```
//!
//! Set-Multiple-Targets, `count` contiguous channels starting at `first`:
//!
//! ```text
//! 0x9F  count  first  (lo hi) × count
//! ```
//!
//! Pulses are in quarter-microseconds. Every data byte has its top bit clear.

use crate::{Error, Result};

pub const SET_TARGET: u8 = 0x84;
pub const SET_MULTIPLE: u8 = 0x9F;
pub const CHANNELS: usize = 24;
/// 500 µs.
pub const PULSE_MIN_QUS: u32 = 2000;
/// 2500 µs.
pub const PULSE_MAX_QUS: u32 = 10000;

fn check(channel: usize, pulse_qus: u32) -> Result<()> {
    if channel >= CHANNELS {
        return Err(Error::Channel(channel));
    }
    if !(PULSE_MIN_QUS..=PULSE_MAX_QUS).contains(&pulse_qus) {
        return Err(Error::Pulse(pulse_qus));
    }
    Ok(())
}

fn payload(pulse_qus: u32) -> [u8; 2] {
    [(pulse_qus & 0x7F) as u8, ((pulse_qus >> 7) & 0x7F) as u8]
}

pub fn encode_command(channel: usize, pulse_qus: u32) -> Result<[u8; 4]> {
    check(channel, pulse_qus)?;
    let [lo, hi] = payload(pulse_qus);
    Ok([SET_TARGET, channel as u8, lo, hi])
}

/// One multi-target frame for channels `first..first + pulses.len()`.
pub fn encode_multi(first: usize, pulses: &[u32]) -> Result<Vec<u8>> {
    if pulses.is_empty() {
        return Err(Error::Command("multi-target frame needs at least one channel".into()));
    }
    for (k, &p) in pulses.iter().enumerate() {
        check(first + k, p)?;
    }
    let mut out = Vec::with_capacity(3 + 2 * pulses.len());
    out.extend_from_slice(&[SET_MULTIPLE, pulses.len() as u8, first as u8]);
    for &p in pulses {
        out.extend_from_slice(&payload(p));
    }
    Ok(out)
}

/// Bytes for every channel whose pulse differs from `prev` (all channels when
/// `prev` is `None`). With `multi`, runs of two or more adjacent changed channels
/// share one multi-target frame. Nothing is returned unless every pulse is valid.
pub fn encode_changes(pulses: &[u32; CHANNELS], prev: Option<&[u32; CHANNELS]>, multi: bool) -> Result<Vec<u8>> {
    for (ch, &p) in pulses.iter().enumerate() {
        check(ch, p)?;
    }
    let changed: Vec<bool> = (0..CHANNELS)
        .map(|ch| prev.is_none_or(|p| p[ch] != pulses[ch]))
        .collect();
    let mut out = Vec::new();
    let mut ch = 0;
    while ch < CHANNELS {
        if !changed[ch] {
            ch += 1;
            continue;
        }
        let end = (ch..CHANNELS).find(|&k| !changed[k]).unwrap_or(CHANNELS);
        if multi && end - ch >= 2 {
            out.extend(encode_multi(ch, &pulses[ch..end])?);
        } else {
            for k in ch..end {
                out.extend(encode_command(k, pulses[k])?);
            }
        }
        ch = end;
    }
    Ok(out)
}

/// Parses a byte stream of Set-Target and multi-target frames into
/// `(channel, pulse)` pairs in transmission order.
pub fn decode(bytes: &[u8]) -> Result<Vec<(usize, u32)>> {
    let data = |b: u8, at: usize| -> Result<u32> {
        if b & 0x80 != 0 {
            return Err(Error::Command(format!("byte {at} has its top bit set")));
        }
        Ok(b as u32)
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            SET_TARGET => {
                let Some(f) = bytes.get(i + 1..i + 4) else {
                    return Err(Error::Command(format!("truncated set-target at byte {i}")));
                };
                let ch = data(f[0], i + 1)? as usize;
                let p = data(f[1], i + 2)? | data(f[2], i + 3)? << 7;
                out.push((ch, p));
                i += 4;
            }
            SET_MULTIPLE => {
                let Some(h) = bytes.get(i + 1..i + 3) else {
                    return Err(Error::Command(format!("truncated multi-target at byte {i}")));
                };
                let count = data(h[0], i + 1)? as usize;
                let first = data(h[1], i + 2)? as usize;
                let body = i + 3;
                let Some(f) = bytes.get(body..body + 2 * count) else {
                    return Err(Error::Command(format!("truncated multi-target at byte {i}")));
                };
                for k in 0..count {
                    let at = body + 2 * k;
                    out.push((first + k, data(f[2 * k], at)? | data(f[2 * k + 1], at + 1)? << 7));
                }
                i = body + 2 * count;
            }
            b => return Err(Error::Command(format!("unknown command byte {b:#04x} at {i}"))),
        }
    }
    Ok(out)
}
