//! Parameter checkpoints: a bit-exact little-endian binary form and a JSON
//! form.
//!
//! Binary layout:
//!
//! ```text
//! magic "CAUGCKPT" | u32 version | u8 backbone | u64 seed | u64 dim | u64 max_len
//! u32 tensor_count, then per tensor: u16 name_len | name | u64 rows | u64 cols | f64 × rows·cols
//! u8 has_features, then u64 n_items and per item: u8 present | u32 nnz | (u32 index, f64 weight) × nnz
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{Backbone, ModelParams, NeuMfHead, SeqRecBlock, SparseVec, Weights};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const MAGIC: &[u8; 8] = b"CAUGCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointFormat {
    Binary,
    Json,
}

impl CheckpointFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => CheckpointFormat::Json,
            _ => CheckpointFormat::Binary,
        }
    }
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let bytes = match CheckpointFormat::from_path(path) {
        CheckpointFormat::Json => serde_json::to_vec(params)?,
        CheckpointFormat::Binary => encode(params),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let params = match CheckpointFormat::from_path(path) {
        CheckpointFormat::Json => serde_json::from_slice(&bytes)?,
        CheckpointFormat::Binary => decode(&bytes)
            .map_err(|e| Error::Data(format!("{}: bad checkpoint: {e}", path.display())))?,
    };
    if !params.is_finite() {
        return Err(Error::Numerical(format!(
            "{}: checkpoint holds non-finite weights",
            path.display()
        )));
    }
    Ok(params)
}

pub(crate) fn encode(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(params.backbone.tag());
    out.extend_from_slice(&params.rng_seed.to_le_bytes());
    out.extend_from_slice(&(params.dim as u64).to_le_bytes());
    out.extend_from_slice(&(params.max_len as u64).to_le_bytes());
    let tensors = params.weights.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols as u64).to_le_bytes());
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    match &params.content_features {
        None => out.push(0),
        Some(rows) => {
            out.push(1);
            out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
            for row in rows {
                match row {
                    None => out.push(0),
                    Some(f) => {
                        out.push(1);
                        out.extend_from_slice(&(f.len() as u32).to_le_bytes());
                        for &(i, w) in f {
                            out.extend_from_slice(&i.to_le_bytes());
                            out.extend_from_slice(&w.to_le_bytes());
                        }
                    }
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.buf.len() {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub(crate) fn decode(bytes: &[u8]) -> std::result::Result<ModelParams, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let backbone = Backbone::from_tag(r.u8()?).ok_or("unknown backbone tag")?;
    let rng_seed = r.u64()?;
    let dim = r.u64()? as usize;
    let max_len = r.u64()? as usize;
    let count = r.u32()? as usize;
    let mut named: HashMap<String, Matrix> = HashMap::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| e.to_string())?;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let n = rows.checked_mul(cols).ok_or("tensor too large")?;
        if n.saturating_mul(8) > bytes.len() {
            return Err(format!("tensor `{name}` larger than file"));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f64()?);
        }
        named.insert(name, Matrix::from_vec(rows, cols, data));
    }
    let content_features = match r.u8()? {
        0 => None,
        _ => {
            let n = r.u64()? as usize;
            let mut rows: Vec<Option<SparseVec>> = Vec::with_capacity(n.min(bytes.len()));
            for _ in 0..n {
                if r.u8()? == 0 {
                    rows.push(None);
                    continue;
                }
                let nnz = r.u32()? as usize;
                let mut f = Vec::with_capacity(nnz.min(bytes.len()));
                for _ in 0..nnz {
                    let i = r.u32()?;
                    f.push((i, r.f64()?));
                }
                rows.push(Some(f));
            }
            Some(rows)
        }
    };
    if r.pos != bytes.len() {
        return Err("trailing bytes".into());
    }

    let mut take = |name: &str| named.remove(name).ok_or(format!("missing tensor `{name}`"));
    let mut weights = Weights {
        user_table: None,
        item_table: None,
        neumf: None,
        seqrec: None,
        content_projection: None,
    };
    if backbone != Backbone::Seqrec {
        weights.user_table = Some(take("user_table")?);
    }
    if backbone != Backbone::ContentMf {
        weights.item_table = Some(take("item_table")?);
    }
    match backbone {
        Backbone::Mf => {}
        Backbone::Neumf => {
            let mut head = NeuMfHead::zeros(dim);
            for (name, t) in head.tensors_mut() {
                *t = take(name)?;
            }
            weights.neumf = Some(head);
        }
        Backbone::Seqrec => {
            let mut block = SeqRecBlock::zeros(max_len, dim);
            for (name, t) in block.tensors_mut() {
                *t = take(name)?;
            }
            weights.seqrec = Some(block);
        }
        Backbone::ContentMf => {
            weights.content_projection = Some(take("content_projection")?);
        }
    }
    if !named.is_empty() {
        return Err(format!(
            "unexpected tensors {:?}",
            named.keys().collect::<Vec<_>>()
        ));
    }
    Ok(ModelParams {
        backbone,
        dim,
        max_len,
        rng_seed,
        weights,
        content_features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{Catalog, ItemMeta};
    use crate::model::{init_params, ModelConfig};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn catalog() -> Catalog {
        let ids: BTreeSet<String> = (0..6).map(|i| format!("i{i}")).collect();
        let mut c = Catalog::new(ids, BTreeSet::new());
        c.attach_meta((0..5).map(|i| ItemMeta {
            item_id: format!("i{i}"),
            title: format!("w{} w{}", i % 3, i % 2),
            categories: vec![format!("c{}", i % 2)],
        }));
        c
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn binary_round_trip_is_bit_exact(seed in any::<u64>(), tag in 0u8..4, dim in 2usize..6) {
            let cfg = ModelConfig {
                backbone: Backbone::from_tag(tag).unwrap(),
                dim,
                max_len: 4,
                max_vocab: 50,
            };
            let p = init_params(&cfg, 3, &catalog(), seed).unwrap();
            let bytes = encode(&p);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &p);
            prop_assert_eq!(encode(&back), bytes);
        }
    }

    #[test]
    fn rejects_truncated_file() {
        let p = init_params(&ModelConfig::default(), 2, &catalog(), 1).unwrap();
        let bytes = encode(&p);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode(b"not a checkpoint").is_err());
    }

    #[test]
    fn json_and_binary_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = init_params(&ModelConfig::default(), 2, &catalog(), 1).unwrap();
        for name in ["m.bin", "m.json"] {
            let path = dir.path().join(name);
            save_checkpoint(&path, &p).unwrap();
            assert_eq!(load_checkpoint(&path).unwrap(), p);
        }
    }
}
