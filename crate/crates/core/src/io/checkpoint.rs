use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::memory::MemoryState;
use crate::numerics::Matrix;

const MAGIC: &[u8; 4] = b"TTNS";
const VERSION: u16 = 1;

/// Binary snapshot of a training run: named parameter matrices, live
/// memory states and the rng position, tagged with the config hash that
/// produced them. Round-trips bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
    pub params: BTreeMap<String, Matrix>,
    pub memory: Vec<MemoryState>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Checkpoint {
                offset: self.offset as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn u128(&mut self, what: &str) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Checkpoint {
            offset: self.offset as u64,
            msg: format!("{what} is not valid utf-8"),
        })
    }

    fn matrix(&mut self, name: &str) -> Result<Matrix> {
        let rows = self.u32(name)? as usize;
        let cols = self.u32(name)? as usize;
        let raw = self.take(rows * cols * 8, name)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Matrix::from_vec(rows, cols, data).map_err(|e| Error::Checkpoint {
            offset: self.offset as u64,
            msg: format!("matrix {name}: {e}"),
        })
    }
}

fn put_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_matrix(out: &mut Vec<u8>, name: &str, m: &Matrix) {
    put_string(out, name);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_string(&mut out, &self.config_hash);
        out.extend_from_slice(&self.rng_seed.to_le_bytes());
        out.extend_from_slice(&self.rng_word_pos.to_le_bytes());

        let mem_entries: Vec<(String, Matrix)> = self
            .memory
            .iter()
            .enumerate()
            .flat_map(|(b, state)| {
                let ws = state
                    .weights()
                    .iter()
                    .enumerate()
                    .map(move |(i, w)| (format!("state{b}.w{i}"), w.clone()));
                let ss = state
                    .momentum()
                    .iter()
                    .enumerate()
                    .map(move |(i, s)| (format!("state{b}.s{i}"), s.clone()));
                ws.chain(ss).collect::<Vec<_>>()
            })
            .collect();

        out.extend_from_slice(&((self.params.len() + mem_entries.len()) as u32).to_le_bytes());
        for (name, m) in &self.params {
            put_matrix(&mut out, name, m);
        }
        for (name, m) in &mem_entries {
            put_matrix(&mut out, name, m);
        }

        out.extend_from_slice(&(self.memory.len() as u32).to_le_bytes());
        for state in &self.memory {
            out.extend_from_slice(&(state.depth() as u32).to_le_bytes());
            out.extend_from_slice(&state.update_count().to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, offset: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Checkpoint {
                offset: 0,
                msg: format!("bad magic {magic:?}, expected {MAGIC:?}"),
            });
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint {
                offset: 4,
                msg: format!("unsupported version {version}, expected {VERSION}"),
            });
        }
        let config_hash = r.string("config hash")?;
        let rng_seed = r.u64("rng seed")?;
        let rng_word_pos = r.u128("rng word position")?;

        let count = r.u32("matrix count")? as usize;
        let mut all: BTreeMap<String, Matrix> = BTreeMap::new();
        for _ in 0..count {
            let name = r.string("matrix name")?;
            let m = r.matrix(&name)?;
            all.insert(name, m);
        }

        let block_count = r.u32("memory block count")? as usize;
        let mut memory = Vec::with_capacity(block_count);
        for b in 0..block_count {
            let depth = r.u32("memory depth")? as usize;
            let update_count = r.u64("memory update count")?;
            let mut weights = Vec::with_capacity(depth);
            let mut momentum = Vec::with_capacity(depth);
            for i in 0..depth {
                let w = all.remove(&format!("state{b}.w{i}")).ok_or(Error::Checkpoint {
                    offset: r.offset as u64,
                    msg: format!("missing matrix state{b}.w{i}"),
                })?;
                let s = all.remove(&format!("state{b}.s{i}")).ok_or(Error::Checkpoint {
                    offset: r.offset as u64,
                    msg: format!("missing matrix state{b}.s{i}"),
                })?;
                weights.push(w);
                momentum.push(s);
            }
            memory.push(MemoryState::from_parts(weights, momentum, update_count).map_err(|e| {
                Error::Checkpoint {
                    offset: r.offset as u64,
                    msg: e.to_string(),
                }
            })?);
        }
        Ok(Checkpoint {
            config_hash,
            rng_seed,
            rng_word_pos,
            params: all,
            memory,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
        Checkpoint::decode(&bytes)
    }

    /// Enforce the config-hash guard: a mismatch is an error unless the
    /// override flag is set.
    pub fn verify_hash(&self, expected: &str, allow_mismatch: bool) -> Result<()> {
        if self.config_hash != expected && !allow_mismatch {
            return Err(Error::Config(format!(
                "checkpoint was written under config {} but the current config hashes to {expected}; \
                 pass --set run.allow_hash_mismatch=true to load anyway",
                self.config_hash
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn sample() -> Checkpoint {
        let mut rng = Rng::new(5);
        let mut params = BTreeMap::new();
        params.insert("embedding".to_string(), rng.uniform_matrix(3, 4, 1.0));
        params.insert("output".to_string(), rng.uniform_matrix(4, 3, 2.0));
        let memory = vec![crate::memory::memory_init(4, 2, &mut rng).unwrap()];
        Checkpoint {
            config_hash: "abcd1234".into(),
            rng_seed: 5,
            rng_word_pos: 77,
            params,
            memory,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(ck, back);
        // encoding is itself deterministic
        assert_eq!(bytes, back.encode());
    }

    #[test]
    fn bad_magic_rejected_with_offset() {
        let mut bytes = sample().encode();
        bytes[0] = b'X';
        let err = Checkpoint::decode(&bytes).unwrap_err().to_string();
        assert!(err.contains("byte 0"), "{err}");
    }

    #[test]
    fn bad_version_rejected() {
        let mut bytes = sample().encode();
        bytes[4] = 9;
        assert!(Checkpoint::decode(&bytes).is_err());
    }

    #[test]
    fn truncation_names_the_failing_matrix() {
        let bytes = sample().encode();
        let err = Checkpoint::decode(&bytes[..bytes.len() / 2])
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("truncated") || err.contains("missing matrix"),
            "{err}"
        );
    }

    #[test]
    fn empty_parameter_set_is_a_valid_file() {
        let ck = Checkpoint {
            config_hash: "00".into(),
            rng_seed: 0,
            rng_word_pos: 0,
            params: BTreeMap::new(),
            memory: Vec::new(),
        };
        let back = Checkpoint::decode(&ck.encode()).unwrap();
        assert_eq!(ck, back);
    }

    #[test]
    fn hash_guard_requires_override() {
        let ck = sample();
        assert!(ck.verify_hash("abcd1234", false).is_ok());
        assert!(ck.verify_hash("ffff0000", false).is_err());
        assert!(ck.verify_hash("ffff0000", true).is_ok());
    }
}
