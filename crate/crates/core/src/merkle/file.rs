//! On-disk form: `ADTL`, a u32 BE version, then `u32 BE length ‖ bytes`
//! per record. Loading replays the records into a fresh tree.

use std::fs;
use std::path::Path;

use super::{AuditLog, LogError};

pub const LOG_MAGIC: &[u8; 4] = b"ADTL";
pub const LOG_VERSION: u32 = 1;

impl AuditLog {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.byte_len() as usize + 4 * self.size() as usize);
        out.extend_from_slice(LOG_MAGIC);
        out.extend_from_slice(&LOG_VERSION.to_be_bytes());
        for leaf in self.leaves() {
            out.extend_from_slice(&(leaf.len() as u32).to_be_bytes());
            out.extend_from_slice(leaf);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LogError> {
        if bytes.len() < 8 || &bytes[..4] != LOG_MAGIC {
            return Err(LogError::Format("missing ADTL header".into()));
        }
        let version = u32::from_be_bytes(bytes[4..8].try_into().unwrap());
        if version != LOG_VERSION {
            return Err(LogError::Format(format!("unsupported version {version}")));
        }
        let mut log = AuditLog::new();
        let mut pos = 8;
        while pos < bytes.len() {
            let len_bytes = bytes
                .get(pos..pos + 4)
                .ok_or_else(|| LogError::Format(format!("truncated length at byte {pos}")))?;
            let len = u32::from_be_bytes(len_bytes.try_into().unwrap()) as usize;
            pos += 4;
            let record = bytes
                .get(pos..pos + len)
                .ok_or_else(|| LogError::Format(format!("truncated record at byte {pos}")))?;
            log.append_record(record.to_vec());
            pos += len;
        }
        Ok(log)
    }
}

pub fn write_log(log: &AuditLog, path: &Path) -> Result<(), LogError> {
    fs::write(path, log.to_bytes()).map_err(|e| LogError::Io(format!("{}: {e}", path.display())))
}

pub fn read_log(path: &Path) -> Result<AuditLog, LogError> {
    let bytes = fs::read(path).map_err(|e| LogError::Io(format!("{}: {e}", path.display())))?;
    AuditLog::from_bytes(&bytes)
}
