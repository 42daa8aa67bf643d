//! Column file encoding.
//!
//! ```text
//! magic  "CDWC"            4 bytes
//! type   b'i' | b's'       1 byte
//! rows   u64 LE            8 bytes
//! body   i64 LE per row                     (type i)
//!        u32 LE length + UTF-8 bytes per row (type s)
//! ```

use sha2::{Digest, Sha256};

const MAGIC: &[u8; 4] = b"CDWC";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnData {
    Int(Vec<i64>),
    Str(Vec<String>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Int(v) => v.len(),
            ColumnData::Str(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + self.len() * 8);
        out.extend_from_slice(MAGIC);
        match self {
            ColumnData::Int(values) => {
                out.push(b'i');
                out.extend_from_slice(&(values.len() as u64).to_le_bytes());
                for v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            ColumnData::Str(values) => {
                out.push(b's');
                out.extend_from_slice(&(values.len() as u64).to_le_bytes());
                for v in values {
                    out.extend_from_slice(&(v.len() as u32).to_le_bytes());
                    out.extend_from_slice(v.as_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<ColumnData, String> {
        if bytes.len() < 13 || &bytes[..4] != MAGIC {
            return Err("bad column header".into());
        }
        let rows = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
        let mut body = &bytes[13..];
        match bytes[4] {
            b'i' => {
                if body.len() != rows * 8 {
                    return Err(format!("expected {} bytes of integers, found {}", rows * 8, body.len()));
                }
                Ok(ColumnData::Int(
                    body.chunks_exact(8)
                        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ))
            }
            b's' => {
                let mut values = Vec::with_capacity(rows);
                for _ in 0..rows {
                    if body.len() < 4 {
                        return Err("truncated string column".into());
                    }
                    let len = u32::from_le_bytes(body[..4].try_into().unwrap()) as usize;
                    body = &body[4..];
                    if body.len() < len {
                        return Err("truncated string column".into());
                    }
                    let s = std::str::from_utf8(&body[..len]).map_err(|e| e.to_string())?;
                    values.push(s.to_string());
                    body = &body[len..];
                }
                if !body.is_empty() {
                    return Err("trailing bytes in string column".into());
                }
                Ok(ColumnData::Str(values))
            }
            t => Err(format!("unknown column type {t}")),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Element types that can be stored as a column.
pub trait ColumnValue: Sized + Clone {
    fn to_column(values: &[Self]) -> ColumnData;
    fn from_column(column: ColumnData) -> Option<Vec<Self>>;
}

impl ColumnValue for i64 {
    fn to_column(values: &[Self]) -> ColumnData {
        ColumnData::Int(values.to_vec())
    }

    fn from_column(column: ColumnData) -> Option<Vec<Self>> {
        match column {
            ColumnData::Int(v) => Some(v),
            ColumnData::Str(_) => None,
        }
    }
}

impl ColumnValue for String {
    fn to_column(values: &[Self]) -> ColumnData {
        ColumnData::Str(values.to_vec())
    }

    fn from_column(column: ColumnData) -> Option<Vec<Self>> {
        match column {
            ColumnData::Str(v) => Some(v),
            ColumnData::Int(_) => None,
        }
    }
}
