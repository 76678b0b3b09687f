//! Little-endian byte encoding helpers for the binary store files.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("corrupt {file} at byte {offset}: {message}")]
pub struct CorruptStore {
    pub file: String,
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

pub struct ByteReader<'a> {
    file: &'a str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(file: &'a str, buf: &'a [u8]) -> Self {
        ByteReader { file, buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn is_at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn corrupt(&self, message: impl Into<String>) -> CorruptStore {
        CorruptStore {
            file: self.file.to_string(),
            offset: self.pos,
            message: message.into(),
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CorruptStore> {
        if self.buf.len() - self.pos < n {
            return Err(self.corrupt(format!("truncated: needed {n} bytes, {} left", self.buf.len() - self.pos)));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn expect_magic(&mut self, magic: &[u8]) -> Result<(), CorruptStore> {
        let at = self.pos;
        let got = self.take(magic.len())?;
        if got != magic {
            return Err(CorruptStore {
                file: self.file.to_string(),
                offset: at,
                message: format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)),
            });
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8, CorruptStore> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, CorruptStore> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, CorruptStore> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32, CorruptStore> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, CorruptStore> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads a count and rejects values that cannot fit in what remains,
    /// given each element needs at least `min_elem_size` bytes.
    pub fn count(&mut self, min_elem_size: usize) -> Result<usize, CorruptStore> {
        let at = self.pos;
        let n = self.u64()? as usize;
        let left = self.buf.len() - self.pos;
        if min_elem_size > 0 && n > left / min_elem_size {
            return Err(CorruptStore {
                file: self.file.to_string(),
                offset: at,
                message: format!("count {n} exceeds remaining data"),
            });
        }
        Ok(n)
    }

    pub fn finish(&self) -> Result<(), CorruptStore> {
        if self.is_at_end() {
            Ok(())
        } else {
            Err(self.corrupt("trailing bytes"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let mut w = ByteWriter::new();
        w.bytes(b"MAGI");
        w.u32(7);
        w.u64(u64::MAX);
        w.f32(1.5);
        let buf = w.into_inner();
        let mut r = ByteReader::new("x", &buf);
        r.expect_magic(b"MAGI").unwrap();
        assert_eq!(r.u32().unwrap(), 7);
        assert_eq!(r.u64().unwrap(), u64::MAX);
        assert_eq!(r.f32().unwrap(), 1.5);
        r.finish().unwrap();

        let mut r = ByteReader::new("x", &buf[..10]);
        r.expect_magic(b"MAGI").unwrap();
        r.u32().unwrap();
        let err = r.u64().unwrap_err();
        assert_eq!(err.offset, 8);

        let mut r = ByteReader::new("x", b"NOPE");
        assert_eq!(r.expect_magic(b"MAGI").unwrap_err().offset, 0);
    }
}
