//! Learnable parameters: item embeddings, hyper-category embeddings and GRU
//! weights, with unit-norm maintenance and a binary checkpoint format.
//!
//! Parameters are stored as `f32` (the checkpoint representation); the
//! forward and backward passes promote to `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::trainer::AdamState;
use crate::Stage;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OPAL";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Rows whose norm is this close to 1 are left untouched by projection.
const UNIT_SLACK: f64 = f32::EPSILON as f64;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("row {row} of {table} has norm {norm}; training diverged")]
    Divergence { table: &'static str, row: usize, norm: f64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found} (this build reads version {CHECKPOINT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("invalid checkpoint header: {0}")]
    InvalidHeader(String),
}

/// Item table (`catalog_size × dim`) and hyper-category table (`k × dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    n_categories: usize,
    items: Vec<f32>,
    categories: Vec<f32>,
}

impl EmbeddingStore {
    /// Panics if the table lengths do not match the dimensions.
    pub fn from_parts(dim: usize, n_categories: usize, items: Vec<f32>, categories: Vec<f32>) -> Self {
        assert!(dim > 0 && n_categories > 0);
        assert_eq!(items.len() % dim, 0, "item table not a multiple of dim");
        assert_eq!(categories.len(), n_categories * dim, "category table has wrong size");
        Self { dim, n_categories, items, categories }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn catalog_size(&self) -> usize {
        self.items.len() / self.dim
    }

    pub fn item(&self, i: usize) -> &[f32] {
        &self.items[i * self.dim..(i + 1) * self.dim]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.items[i * self.dim..(i + 1) * self.dim]
    }

    pub fn category(&self, j: usize) -> &[f32] {
        &self.categories[j * self.dim..(j + 1) * self.dim]
    }

    pub fn items(&self) -> &[f32] {
        &self.items
    }

    pub fn items_mut(&mut self) -> &mut [f32] {
        &mut self.items
    }

    pub fn categories(&self) -> &[f32] {
        &self.categories
    }

    pub fn categories_mut(&mut self) -> &mut [f32] {
        &mut self.categories
    }

    /// Divide each listed item row by its L2 norm.
    pub fn renormalize_items<I: IntoIterator<Item = usize>>(&mut self, rows: I) -> Result<(), EmbeddingError> {
        for row in rows {
            normalize_row(&mut self.items[row * self.dim..(row + 1) * self.dim], "items", row)?;
        }
        Ok(())
    }

    pub fn renormalize_all_items(&mut self) -> Result<(), EmbeddingError> {
        self.renormalize_items(0..self.catalog_size())
    }

    pub fn renormalize_categories(&mut self) -> Result<(), EmbeddingError> {
        let d = self.dim;
        for (row, chunk) in self.categories.chunks_exact_mut(d).enumerate() {
            normalize_row(chunk, "categories", row)?;
        }
        Ok(())
    }
}

pub fn normalize_row(row: &mut [f32], table: &'static str, index: usize) -> Result<(), EmbeddingError> {
    let norm = row.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(EmbeddingError::Divergence { table, row: index, norm });
    }
    if (norm - 1.0).abs() <= UNIT_SLACK {
        return Ok(());
    }
    for x in row.iter_mut() {
        *x = (*x as f64 / norm) as f32;
    }
    Ok(())
}

/// GRU weights; hidden size equals the embedding dimension.
///
/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = (1 − z) ⊙ h̃ + z ⊙ h`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub dim: usize,
    pub w_z: Vec<f32>,
    pub w_r: Vec<f32>,
    pub w_h: Vec<f32>,
    pub u_z: Vec<f32>,
    pub u_r: Vec<f32>,
    pub u_h: Vec<f32>,
    pub b_z: Vec<f32>,
    pub b_r: Vec<f32>,
    pub b_h: Vec<f32>,
}

impl GruParams {
    pub const N_TENSORS: usize = 9;

    pub fn zeros(dim: usize) -> Self {
        let m = || vec![0.0; dim * dim];
        let v = || vec![0.0; dim];
        Self { dim, w_z: m(), w_r: m(), w_h: m(), u_z: m(), u_r: m(), u_h: m(), b_z: v(), b_r: v(), b_h: v() }
    }

    /// Tensors in checkpoint order.
    pub fn tensors(&self) -> [&[f32]; 9] {
        [&self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z, &self.b_r, &self.b_h]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f32>; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    pub fn tensor_lengths(dim: usize) -> [usize; 9] {
        let m = dim * dim;
        [m, m, m, m, m, m, dim, dim, dim]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Half-width of the initialization interval, `1/√d`.
pub fn init_bound(dim: usize) -> f64 {
    1.0 / (dim as f64).sqrt()
}

/// Draw every parameter from `U(−1/√d, 1/√d)`, then project item and
/// category rows onto the unit sphere. GRU weights are left as drawn.
pub fn init<R: Rng + ?Sized>(
    catalog_size: usize,
    dim: usize,
    n_categories: usize,
    rng: &mut R,
) -> Result<(EmbeddingStore, GruParams), EmbeddingError> {
    if catalog_size == 0 || dim == 0 || n_categories == 0 {
        return Err(EmbeddingError::InvalidHeader(format!(
            "catalog_size={catalog_size}, dim={dim}, k={n_categories} must all be positive"
        )));
    }
    let bound = init_bound(dim) as f32;
    let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-bound..=bound)).collect() };
    let items = draw(catalog_size * dim);
    let categories = draw(n_categories * dim);
    let mut gru = GruParams::zeros(dim);
    for t in gru.tensors_mut() {
        let n = t.len();
        *t = draw(n);
    }
    let mut store = EmbeddingStore::from_parts(dim, n_categories, items, categories);
    store.renormalize_all_items()?;
    store.renormalize_categories()?;
    Ok((store, gru))
}

/// Everything needed to resume or serve a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub store: EmbeddingStore,
    pub gru: GruParams,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    /// Little-endian layout: magic, u32 version, u64 d, u64 k,
    /// u64 catalog_size, u32 stage, u32 optimizer flag, then f32 arrays
    /// (items, categories, nine GRU tensors), then optionally the u64 Adam
    /// step and f32 first/second moments in the same tensor order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), EmbeddingError> {
        let store = &self.store;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for dim in [store.dim, store.n_categories, store.catalog_size()] {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        w.write_all(&(self.stage as u32).to_le_bytes())?;
        w.write_all(&(self.optimizer.is_some() as u32).to_le_bytes())?;
        write_f32s(w, &store.items)?;
        write_f32s(w, &store.categories)?;
        for t in self.gru.tensors() {
            write_f32s(w, t)?;
        }
        if let Some(opt) = &self.optimizer {
            w.write_all(&opt.step.to_le_bytes())?;
            for m in opt.all_moments() {
                write_f32s(w, &m.first)?;
                write_f32s(w, &m.second)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, EmbeddingError> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(EmbeddingError::BadMagic(magic));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(EmbeddingError::UnsupportedVersion { found: version });
        }
        let dim = read_u64(r)? as usize;
        let k = read_u64(r)? as usize;
        let catalog = read_u64(r)? as usize;
        if dim == 0 || k == 0 || catalog == 0 {
            return Err(EmbeddingError::InvalidHeader(format!("d={dim}, k={k}, catalog_size={catalog}")));
        }
        let stage = match read_u32(r)? {
            0 => Stage::Pretrain,
            1 => Stage::Finetune,
            other => return Err(EmbeddingError::InvalidHeader(format!("unknown stage tag {other}"))),
        };
        let has_opt = match read_u32(r)? {
            0 => false,
            1 => true,
            other => return Err(EmbeddingError::InvalidHeader(format!("bad optimizer flag {other}"))),
        };
        let items = read_f32s(r, catalog.checked_mul(dim).ok_or(EmbeddingError::Truncated)?)?;
        let categories = read_f32s(r, k * dim)?;
        let mut gru = GruParams::zeros(dim);
        for (t, len) in gru.tensors_mut().into_iter().zip(GruParams::tensor_lengths(dim)) {
            *t = read_f32s(r, len)?;
        }
        let optimizer = if has_opt {
            let step = read_u64(r)?;
            let mut state = AdamState::new(catalog, k, dim);
            state.step = step;
            for m in state.all_moments_mut() {
                let n = m.first.len();
                m.first = read_f32s(r, n)?;
                m.second = read_f32s(r, n)?;
            }
            Some(state)
        } else {
            None
        };
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(EmbeddingError::InvalidHeader("trailing bytes after checkpoint".into()));
        }
        Ok(Self { stage, store: EmbeddingStore::from_parts(dim, k, items, categories), gru, optimizer })
    }
}

fn write_f32s<W: Write>(w: &mut W, xs: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), EmbeddingError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => EmbeddingError::Truncated,
        _ => EmbeddingError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, EmbeddingError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, EmbeddingError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>, EmbeddingError> {
    // Read in bounded chunks so a corrupt header cannot force a huge allocation.
    const CHUNK: usize = 1 << 16;
    let mut out = Vec::with_capacity(n.min(CHUNK));
    let mut buf = vec![0u8; CHUNK * 4];
    let mut left = n;
    while left > 0 {
        let take = left.min(CHUNK);
        read_exact(r, &mut buf[..take * 4])?;
        out.extend(buf[..take * 4].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
        left -= take;
    }
    Ok(out)
}
