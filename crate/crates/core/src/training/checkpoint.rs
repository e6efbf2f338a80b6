//! Self-describing binary checkpoints: format version, config echo, step
//! counters, every named parameter block, both optimizer states, and the
//! augmentation RNG state. All floats are stored bit-exactly so a resumed
//! run continues on the same trajectory.

use super::optimizer::Adam;
use super::TrainConfig;
use crate::models::ParamStore;
use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"DFCKPT01";

/// In-memory image of a checkpoint file.
pub struct Checkpoint {
    pub config_text: String,
    pub step: u64,
    pub epoch: u64,
    pub best_abs_rel: f64,
    pub cutmix_rng: [u64; 4],
    pub params: Vec<(String, Vec<usize>, Vec<f32>)>,
    pub opt1_t: u64,
    pub opt1_state: Vec<(String, Vec<f32>, Vec<f32>)>,
    pub opt2_t: u64,
    pub opt2_state: Vec<(String, Vec<f32>, Vec<f32>)>,
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.u32(b.len() as u32)?;
        self.0.write_all(b)
    }
    fn f32s(&mut self, xs: &[f32]) -> std::io::Result<()> {
        self.u32(xs.len() as u32)?;
        for &x in xs {
            self.0.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> std::io::Result<u32> {
        let mut b = [0u8; 4];
        self.0.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> std::io::Result<u64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> std::io::Result<f64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn bytes(&mut self) -> std::io::Result<Vec<u8>> {
        let n = self.u32()? as usize;
        let mut b = vec![0u8; n];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }
    fn f32s(&mut self) -> std::io::Result<Vec<f32>> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n);
        let mut b = [0u8; 4];
        for _ in 0..n {
            self.0.read_exact(&mut b)?;
            out.push(f32::from_le_bytes(b));
        }
        Ok(out)
    }
}

fn write_opt_state<W: Write>(
    w: &mut Writer<W>,
    t: u64,
    state: &[(String, Vec<f32>, Vec<f32>)],
) -> std::io::Result<()> {
    w.u64(t)?;
    w.u32(state.len() as u32)?;
    for (name, m, v) in state {
        w.bytes(name.as_bytes())?;
        w.f32s(m)?;
        w.f32s(v)?;
    }
    Ok(())
}

fn read_opt_state<R: Read>(
    r: &mut Reader<R>,
) -> std::io::Result<(u64, Vec<(String, Vec<f32>, Vec<f32>)>)> {
    let t = r.u64()?;
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let name = String::from_utf8_lossy(&r.bytes()?).to_string();
        let m = r.f32s()?;
        let v = r.f32s()?;
        out.push((name, m, v));
    }
    Ok((t, out))
}

#[allow(clippy::too_many_arguments)]
pub fn save_checkpoint(
    path: &Path,
    cfg: &TrainConfig,
    store: &ParamStore,
    opt1: &Adam,
    opt2: &Adam,
    step: u64,
    epoch: u64,
    best_abs_rel: f64,
    cutmix_rng: [u64; 4],
) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = Writer(std::io::BufWriter::new(file));
    let result: std::io::Result<()> = (|| {
        w.0.write_all(MAGIC)?;
        w.bytes(cfg.to_text().as_bytes())?;
        w.u64(step)?;
        w.u64(epoch)?;
        w.f64(best_abs_rel)?;
        for s in cutmix_rng {
            w.u64(s)?;
        }
        w.u32(store.len() as u32)?;
        for id in store.ids() {
            let e = store.get(id);
            w.bytes(e.name.as_bytes())?;
            w.u32(e.shape.len() as u32)?;
            for &d in &e.shape {
                w.u32(d as u32)?;
            }
            w.f32s(&e.data)?;
        }
        write_opt_state(&mut w, opt1.t, &opt1.state(store))?;
        write_opt_state(&mut w, opt2.t, &opt2.state(store))?;
        w.0.flush()
    })();
    result.map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader(std::io::BufReader::new(file));
    let mut magic = [0u8; 8];
    r.0.read_exact(&mut magic)
        .map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic, not a checkpoint",
            path.display()
        )));
    }
    let go = |r: &mut Reader<std::io::BufReader<std::fs::File>>| -> std::io::Result<Checkpoint> {
        let config_text = String::from_utf8_lossy(&r.bytes()?).to_string();
        let step = r.u64()?;
        let epoch = r.u64()?;
        let best_abs_rel = r.f64()?;
        let mut cutmix_rng = [0u64; 4];
        for s in cutmix_rng.iter_mut() {
            *s = r.u64()?;
        }
        let n_params = r.u32()? as usize;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name = String::from_utf8_lossy(&r.bytes()?).to_string();
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let data = r.f32s()?;
            params.push((name, shape, data));
        }
        let (opt1_t, opt1_state) = read_opt_state(r)?;
        let (opt2_t, opt2_state) = read_opt_state(r)?;
        Ok(Checkpoint {
            config_text,
            step,
            epoch,
            best_abs_rel,
            cutmix_rng,
            params,
            opt1_t,
            opt1_state,
            opt2_t,
            opt2_state,
        })
    };
    go(&mut r).map_err(|e| Error::io(path, e))
}

impl Checkpoint {
    /// Overwrite a freshly built store with the checkpointed values; every
    /// name and shape must match the current configuration.
    pub fn restore_params(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, current networks have {}",
                self.params.len(),
                store.len()
            )));
        }
        for (name, shape, data) in &self.params {
            let id = store.by_name(name).ok_or_else(|| {
                Error::Checkpoint(format!("checkpoint parameter '{name}' unknown"))
            })?;
            let e = store.get_mut(id);
            if &e.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' shape {:?} vs checkpoint {:?}",
                    e.shape, shape
                )));
            }
            e.data = data.clone();
        }
        Ok(())
    }

    /// Reject resumes under a different configuration, naming the keys.
    pub fn check_config(&self, cfg: &TrainConfig) -> Result<()> {
        let saved = TrainConfig::from_text(&self.config_text)?;
        let diff = saved.diff(cfg);
        if !diff.is_empty() {
            return Err(Error::Checkpoint(format!(
                "checkpoint config differs from current config:\n  {}",
                diff.join("\n  ")
            )));
        }
        Ok(())
    }
}
