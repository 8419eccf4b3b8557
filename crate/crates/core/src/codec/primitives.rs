use super::CodecError;

/// Length-prefixed byte sequence; `None` is the null byte string (length -1).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ByteString(pub Option<Vec<u8>>);

impl ByteString {
    pub fn null() -> Self {
        ByteString(None)
    }

    pub fn is_null(&self) -> bool {
        self.0.is_none()
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        self.0.as_deref()
    }

    /// Number of bytes on the wire, prefix included.
    pub fn encoded_len(&self) -> usize {
        4 + self.0.as_ref().map_or(0, Vec::len)
    }
}

impl From<Vec<u8>> for ByteString {
    fn from(v: Vec<u8>) -> Self {
        ByteString(Some(v))
    }
}

impl From<&[u8]> for ByteString {
    fn from(v: &[u8]) -> Self {
        ByteString(Some(v.to_vec()))
    }
}

/// Length-prefixed UTF-8 string; `None` is the null string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct UaString(pub Option<String>);

impl UaString {
    pub fn null() -> Self {
        UaString(None)
    }

    pub fn as_str(&self) -> Option<&str> {
        self.0.as_deref()
    }
}

impl From<&str> for UaString {
    fn from(s: &str) -> Self {
        UaString(Some(s.to_owned()))
    }
}

impl From<String> for UaString {
    fn from(s: String) -> Self {
        UaString(Some(s))
    }
}

/// Bounds-checked little-endian cursor. Every read either succeeds or returns
/// a typed error; nothing here can index past the end of the input.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if n > self.remaining() {
            return Err(CodecError::TruncatedInput {
                needed: self.pos.saturating_add(n),
                available: self.buf.len(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let out = &self.buf[self.pos..];
        self.pos = self.buf.len();
        out
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, CodecError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn i32(&mut self) -> Result<i32, CodecError> {
        Ok(self.u32()? as i32)
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    fn length_prefixed(&mut self) -> Result<Option<&'a [u8]>, CodecError> {
        let len = self.i32()?;
        if len == -1 {
            return Ok(None);
        }
        let remaining = self.remaining();
        if len < 0 || len as usize > remaining {
            return Err(CodecError::MalformedByteString {
                declared: len,
                remaining,
            });
        }
        self.take(len as usize).map(Some)
    }

    pub fn byte_string(&mut self) -> Result<ByteString, CodecError> {
        Ok(ByteString(self.length_prefixed()?.map(<[u8]>::to_vec)))
    }

    pub fn ua_string(&mut self) -> Result<UaString, CodecError> {
        match self.length_prefixed()? {
            None => Ok(UaString(None)),
            Some(b) => std::str::from_utf8(b)
                .map(|s| UaString(Some(s.to_owned())))
                .map_err(|_| CodecError::InvalidUtf8),
        }
    }
}

/// Little-endian output buffer.
#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Writer {
            buf: Vec::with_capacity(n),
        }
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(b);
        self
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn i32(&mut self, v: i32) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    fn length_prefixed(&mut self, v: Option<&[u8]>) -> Result<&mut Self, CodecError> {
        match v {
            None => Ok(self.i32(-1)),
            Some(b) => {
                let len = i32::try_from(b.len()).map_err(|_| CodecError::LengthOverflow)?;
                self.i32(len);
                Ok(self.bytes(b))
            }
        }
    }

    pub fn byte_string(&mut self, v: &ByteString) -> Result<&mut Self, CodecError> {
        self.length_prefixed(v.as_bytes())
    }

    pub fn ua_string(&mut self, v: &UaString) -> Result<&mut Self, CodecError> {
        self.length_prefixed(v.as_str().map(str::as_bytes))
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_byte_string_is_minus_one() {
        let mut w = Writer::new();
        w.byte_string(&ByteString::null()).unwrap();
        assert_eq!(w.into_inner(), (-1i32).to_le_bytes());
    }

    #[test]
    fn overlong_byte_string_is_malformed() {
        let mut buf = 5000i32.to_le_bytes().to_vec();
        buf.extend(std::iter::repeat_n(0u8, 100));
        assert_eq!(
            Reader::new(&buf).byte_string(),
            Err(CodecError::MalformedByteString {
                declared: 5000,
                remaining: 100
            })
        );
    }

    #[test]
    fn negative_lengths_other_than_null_are_rejected() {
        let buf = (-2i32).to_le_bytes();
        assert!(matches!(
            Reader::new(&buf).byte_string(),
            Err(CodecError::MalformedByteString { declared: -2, .. })
        ));
    }

    #[test]
    fn strings_round_trip() {
        let mut w = Writer::new();
        w.ua_string(&"opc.tcp://plc:4840".into()).unwrap();
        w.ua_string(&UaString::null()).unwrap();
        let bytes = w.into_inner();
        let mut r = Reader::new(&bytes);
        assert_eq!(r.ua_string().unwrap().as_str(), Some("opc.tcp://plc:4840"));
        assert_eq!(r.ua_string().unwrap(), UaString::null());
        assert_eq!(r.remaining(), 0);
    }
}
