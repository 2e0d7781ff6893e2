// Copyright 2026 The copal Authors
// SPDX-License-Identifier: Apache-2.0

//! Little-endian primitives shared by the checkpoint, importance-state and
//! mask containers. Every read names the field it is decoding so a truncated
//! or corrupt file reports where it went wrong.

use crate::error::{Error, Result};

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32_len(&mut self, v: usize, field: &str) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::format(field, format!("{v} does not fit in u32")))?;
        self.u32(v);
        Ok(())
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for &v in vs {
            self.f64(v);
        }
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    pub fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| {
            Error::format(
                field,
                format!("truncated: need {n} bytes at offset {}, file has {}", self.pos, self.data.len()),
            )
        })?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    pub fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize, field: &str) -> Result<Vec<f64>> {
        let bytes = n.checked_mul(8).ok_or_else(|| Error::format(field, "declared length overflows"))?;
        let raw = self.take(bytes, field)?;
        let out: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(field, "non-finite value in payload"));
        }
        Ok(out)
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn expect_end(&self, field: &str) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(field, format!("{} trailing bytes after declared payload", self.remaining())));
        }
        Ok(())
    }

    pub fn magic(&mut self, want: &[u8; 8]) -> Result<()> {
        let got = self.take(8, "magic")?;
        if got != want {
            return Err(Error::format("magic", format!("expected {:?}", String::from_utf8_lossy(want))));
        }
        Ok(())
    }
}
