//! Dataset types, on-disk layout, toy-scene generation and the epoch
//! scheduler.
//!
//! On-disk layout of a dataset root:
//!
//! ```text
//! root/
//!   real/
//!     splits/{train,val}.txt      one sample id per line
//!     frames/<id>_{m1,t0,p1,s}.png
//!     intrinsics/<id>.txt         fx fy cx cy width height
//!     poses/<id>_stereo.txt       3x4 row-major target-to-source
//!     sky/<id>.png                optional binary mask
//!     depth_gt/<id>.png           optional 16-bit depth (evaluation only)
//!     masks/<id>_object.png       optional moving-object mask
//!     meta.txt                    depth_scale <f>
//!   syn/<source>/
//!     splits/all.txt
//!     color/<id>.png
//!     depth/<id>.png              16-bit, dense
//!     sky/<id>.png
//!     meta.txt                    depth_scale <f>
//! ```

pub mod io;
pub mod schedule;
pub mod toy;

use crate::geometry::{DepthMap, Grid, Image, Intrinsics, RigidPose};
use crate::losses::SkyMask;
use crate::rng::Stream;
use crate::{Error, Result};
use std::path::{Path, PathBuf};

pub use schedule::{epoch_scheduler, IterationPlan, IterationStep, SynExhaustedPolicy};
pub use toy::{generate_toy_scene, generate_toy_scene_full, ColorDomain, ToyScene, ToySceneSpec};

/// Default 16-bit depth quantization: stored = meters * 256.
pub const DEPTH_SCALE: f32 = 256.0;

/// One real-world-style sample: temporal triplet, stereo partner, camera.
#[derive(Clone, Debug)]
pub struct RealSample {
    /// Frames at t-1, t, t+1.
    pub frames: [Image; 3],
    pub stereo: Image,
    pub intrinsics: Intrinsics,
    /// Target-to-source transform for the stereo partner.
    pub stereo_pose: RigidPose,
    pub sky_mask: Option<SkyMask>,
}

impl RealSample {
    pub fn validate(&self) -> Result<()> {
        for f in self.frames.iter().chain(std::iter::once(&self.stereo)) {
            if !f.same_size(&self.frames[1]) {
                return Err(Error::InvalidInput("frame sizes differ".into()));
            }
        }
        let t = &self.stereo_pose.translation;
        if t.iter().map(|v| v * v).sum::<f64>() == 0.0 {
            return Err(Error::InvalidInput(
                "stereo baseline translation is zero".into(),
            ));
        }
        if let Some(m) = &self.sky_mask {
            if m.0.height != self.frames[1].height || m.0.width != self.frames[1].width {
                return Err(Error::InvalidInput("sky mask size mismatch".into()));
            }
        }
        Ok(())
    }

    pub fn target(&self) -> &Image {
        &self.frames[1]
    }
}

/// One dense supervised sample from a synthetic source.
#[derive(Clone, Debug)]
pub struct SyntheticSample {
    pub color: Image,
    pub depth: DepthMap,
    pub sky_mask: SkyMask,
    pub source: String,
}

impl SyntheticSample {
    pub fn validate(&self) -> Result<()> {
        let g = self.depth.grid();
        if g.height != self.color.height || g.width != self.color.width {
            return Err(Error::InvalidInput("depth/color size mismatch".into()));
        }
        Ok(())
    }
}

// ---- writing ----

/// Write a real sample (and optional extras) under `root/real`.
pub fn write_real_sample(
    root: &Path,
    id: &str,
    sample: &RealSample,
    gt_depth: Option<&DepthMap>,
    object_mask: Option<&Grid>,
) -> Result<()> {
    let real = root.join("real");
    let names = ["m1", "t0", "p1"];
    for (img, tag) in sample.frames.iter().zip(names.iter()) {
        io::write_rgb8(&real.join(format!("frames/{id}_{tag}.png")), img)?;
    }
    io::write_rgb8(&real.join(format!("frames/{id}_s.png")), &sample.stereo)?;
    io::write_text(
        &real.join(format!("intrinsics/{id}.txt")),
        &sample.intrinsics.to_record(),
    )?;
    io::write_text(
        &real.join(format!("poses/{id}_stereo.txt")),
        &sample.stereo_pose.to_record(),
    )?;
    if let Some(m) = &sample.sky_mask {
        io::write_mask8(&real.join(format!("sky/{id}.png")), &m.0)?;
    }
    if let Some(d) = gt_depth {
        io::write_depth16(&real.join(format!("depth_gt/{id}.png")), d, DEPTH_SCALE)?;
    }
    if let Some(m) = object_mask {
        io::write_mask8(&real.join(format!("masks/{id}_object.png")), m)?;
    }
    io::write_text(
        &real.join("meta.txt"),
        &format!("depth_scale {DEPTH_SCALE}\n"),
    )?;
    Ok(())
}

/// Write a synthetic sample under `root/syn/<source>`.
pub fn write_synthetic_sample(root: &Path, id: &str, sample: &SyntheticSample) -> Result<()> {
    let dir = root.join("syn").join(&sample.source);
    io::write_rgb8(&dir.join(format!("color/{id}.png")), &sample.color)?;
    io::write_depth16(
        &dir.join(format!("depth/{id}.png")),
        &sample.depth,
        DEPTH_SCALE,
    )?;
    io::write_mask8(&dir.join(format!("sky/{id}.png")), &sample.sky_mask.0)?;
    io::write_text(
        &dir.join("meta.txt"),
        &format!("depth_scale {DEPTH_SCALE}\n"),
    )?;
    Ok(())
}

pub fn write_split(root: &Path, kind: &str, split: &str, ids: &[String]) -> Result<()> {
    let path = root.join(kind).join(format!("splits/{split}.txt"));
    io::write_text(&path, &(ids.join("\n") + "\n"))
}

fn read_meta_scale(dir: &Path) -> Result<f32> {
    let meta_path = dir.join("meta.txt");
    let text = io::read_text(&meta_path).map_err(|_| {
        Error::Dataset(format!(
            "{}: missing meta.txt with a depth_scale declaration",
            dir.display()
        ))
    })?;
    for line in text.lines() {
        let mut it = line.split_whitespace();
        if it.next() == Some("depth_scale") {
            let v: f32 = it
                .next()
                .ok_or_else(|| Error::Dataset("depth_scale lacks a value".into()))?
                .parse()
                .map_err(|_| Error::Dataset("bad depth_scale value".into()))?;
            if v <= 0.0 {
                return Err(Error::Dataset(format!("depth_scale {v} must be > 0")));
            }
            return Ok(v);
        }
    }
    Err(Error::Dataset(format!(
        "{}: meta.txt does not declare depth_scale (unit-less depth source)",
        dir.display()
    )))
}

fn read_split(dir: &Path, split: &str) -> Result<Vec<String>> {
    let path = dir.join(format!("splits/{split}.txt"));
    let text = io::read_text(&path)?;
    let ids: Vec<String> = text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    if ids.is_empty() {
        return Err(Error::Dataset(format!("{}: empty split", path.display())));
    }
    Ok(ids)
}

// ---- reading ----

/// Reader over the real samples of one split. Stateless after open; loads
/// are independent and may run from several threads.
pub struct RealDataset {
    dir: PathBuf,
    pub ids: Vec<String>,
}

impl RealDataset {
    pub fn open(root: &Path, split: &str) -> Result<RealDataset> {
        let dir = root.join("real");
        let ids = read_split(&dir, split)?;
        Ok(RealDataset { dir, ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn load(&self, idx: usize) -> Result<RealSample> {
        let id = &self.ids[idx];
        let frames = [
            io::read_rgb8(&self.dir.join(format!("frames/{id}_m1.png")))?,
            io::read_rgb8(&self.dir.join(format!("frames/{id}_t0.png")))?,
            io::read_rgb8(&self.dir.join(format!("frames/{id}_p1.png")))?,
        ];
        let stereo = io::read_rgb8(&self.dir.join(format!("frames/{id}_s.png")))?;
        let intrinsics = Intrinsics::from_record(&io::read_text(
            &self.dir.join(format!("intrinsics/{id}.txt")),
        )?)?;
        let stereo_pose = RigidPose::from_record(&io::read_text(
            &self.dir.join(format!("poses/{id}_stereo.txt")),
        )?)?;
        let sample = RealSample {
            frames,
            stereo,
            intrinsics,
            stereo_pose,
            sky_mask: None,
        };
        let sample = RealSample {
            sky_mask: sky_mask_provider(&self.dir, id, sample.target())?,
            ..sample
        };
        sample.validate()?;
        Ok(sample)
    }

    /// Evaluation-only dense ground truth, if present on disk.
    pub fn load_gt_depth(&self, idx: usize) -> Result<Option<DepthMap>> {
        let id = &self.ids[idx];
        let path = self.dir.join(format!("depth_gt/{id}.png"));
        if !path.exists() {
            return Ok(None);
        }
        let scale = read_meta_scale(&self.dir)?;
        Ok(Some(io::read_depth16(&path, scale)?))
    }

    pub fn load_object_mask(&self, idx: usize) -> Result<Option<Grid>> {
        let id = &self.ids[idx];
        let path = self.dir.join(format!("masks/{id}_object.png"));
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(io::read_mask8(&path)?))
    }
}

/// Sky mask lookup: a missing file yields an empty mask (the sky loss then
/// contributes zero); a present file must decode and match the image size.
pub fn sky_mask_provider(real_dir: &Path, id: &str, target: &Image) -> Result<Option<SkyMask>> {
    let path = real_dir.join(format!("sky/{id}.png"));
    if !path.exists() {
        return Ok(Some(SkyMask::empty(target.height, target.width)));
    }
    let grid = io::read_mask8(&path)?;
    if grid.height != target.height || grid.width != target.width {
        return Err(Error::Dataset(format!(
            "{}: sky mask {}x{} does not match image {}x{}",
            path.display(),
            grid.height,
            grid.width,
            target.height,
            target.width
        )));
    }
    Ok(Some(SkyMask::new(grid)?))
}

/// One registered synthetic source with declared size and depth scale.
#[derive(Debug)]
pub struct SyntheticSource {
    dir: PathBuf,
    pub name: String,
    pub ids: Vec<String>,
    pub depth_scale: f32,
}

impl SyntheticSource {
    pub fn open(root: &Path, name: &str) -> Result<SyntheticSource> {
        let dir = root.join("syn").join(name);
        let depth_scale = read_meta_scale(&dir)?;
        let ids = read_split(&dir, "all")?;
        Ok(SyntheticSource {
            dir,
            name: name.to_string(),
            ids,
            depth_scale,
        })
    }

    /// All source names under `root/syn`, sorted.
    pub fn discover(root: &Path) -> Result<Vec<String>> {
        let dir = root.join("syn");
        let mut names = Vec::new();
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for e in entries {
            let e = e.map_err(|er| Error::io(&dir, er))?;
            if e.path().is_dir() {
                names.push(e.file_name().to_string_lossy().to_string());
            }
        }
        names.sort();
        Ok(names)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn load(&self, idx: usize) -> Result<SyntheticSample> {
        let id = &self.ids[idx];
        let color = io::read_rgb8(&self.dir.join(format!("color/{id}.png")))?;
        let depth =
            io::read_depth16(&self.dir.join(format!("depth/{id}.png")), self.depth_scale)?;
        let sky_path = self.dir.join(format!("sky/{id}.png"));
        let sky_mask = if sky_path.exists() {
            SkyMask::new(io::read_mask8(&sky_path)?)?
        } else {
            SkyMask::empty(color.height, color.width)
        };
        let s = SyntheticSample {
            color,
            depth,
            sky_mask,
            source: self.name.clone(),
        };
        s.validate()?;
        Ok(s)
    }
}

/// Several synthetic sources normalized to one size and shuffled into a
/// single index.
pub struct UnifiedSynthetic {
    sources: Vec<SyntheticSource>,
    /// Shuffled (source, sample) pairs.
    order: Vec<(usize, usize)>,
    target_size: (usize, usize),
    min_depth: f32,
    max_depth: f32,
}

/// Merge sources: every sample is resized to `target_size` on load, depths
/// carried in meters under the shared convention, and the combined index is
/// shuffled once with `seed`.
pub fn unify_synthetic(
    sources: Vec<SyntheticSource>,
    target_size: (usize, usize),
    depth_limits: (f32, f32),
    seed: u64,
) -> Result<UnifiedSynthetic> {
    if sources.is_empty() {
        return Err(Error::Dataset("no synthetic sources registered".into()));
    }
    let mut order = Vec::new();
    for (si, s) in sources.iter().enumerate() {
        for i in 0..s.len() {
            order.push((si, i));
        }
    }
    let mut rng = Stream::seed_from(seed).child(0x756e696679);
    rng.shuffle(&mut order);
    Ok(UnifiedSynthetic {
        sources,
        order,
        target_size,
        min_depth: depth_limits.0,
        max_depth: depth_limits.1,
    })
}

impl UnifiedSynthetic {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[(usize, usize)] {
        &self.order
    }

    pub fn load(&self, idx: usize) -> Result<SyntheticSample> {
        let (si, i) = self.order[idx];
        let raw = self.sources[si].load(i)?;
        let (h, w) = self.target_size;
        let color = io::resize_bilinear(&raw.color, h, w);
        let depth_grid = io::resize_nearest(raw.depth.grid(), h, w);
        // Clamp into the shared convention's range; synthetic depth must
        // stay dense and positive.
        let depth = DepthMap::new(Grid::new(
            h,
            w,
            depth_grid
                .data
                .iter()
                .map(|&v| v.clamp(self.min_depth, self.max_depth))
                .collect(),
        )?)?;
        let sky = io::resize_nearest(&raw.sky_mask.0, h, w);
        Ok(SyntheticSample {
            color,
            depth,
            sky_mask: SkyMask::new(sky)?,
            source: raw.source,
        })
    }
}

/// Options for generating a browsable toy dataset on disk.
pub struct ToyDatasetOptions {
    pub seed: u64,
    pub n_scenes: usize,
    pub n_val: usize,
    pub height: usize,
    pub width: usize,
    pub domain: ColorDomain,
    pub moving_objects: bool,
}

/// Generate and write `n_scenes` training scenes (with synthetic twins)
/// plus `n_val` held-out scenes.
pub fn generate_toy_dataset(root: &Path, opt: &ToyDatasetOptions) -> Result<()> {
    if opt.n_scenes == 0 {
        return Err(Error::InvalidInput("need at least one scene".into()));
    }
    let mut train_ids = Vec::new();
    let mut val_ids = Vec::new();
    let mut syn_ids = Vec::new();
    for i in 0..opt.n_scenes + opt.n_val {
        let seed = opt.seed.wrapping_add(i as u64);
        let spec = if opt.moving_objects {
            ToySceneSpec {
                color_domain: opt.domain,
                ..ToySceneSpec::moving_object(seed, opt.height, opt.width)
            }
        } else {
            ToySceneSpec {
                color_domain: opt.domain,
                ..ToySceneSpec::new(seed, opt.height, opt.width)
            }
        };
        let scene = generate_toy_scene_full(&spec)?;
        let id = format!("scene{i:04}");
        let object_mask = if opt.moving_objects {
            Some(&scene.object_mask)
        } else {
            None
        };
        write_real_sample(
            root,
            &id,
            &scene.real,
            Some(&scene.real_gt_depth),
            object_mask,
        )?;
        if i < opt.n_scenes {
            write_synthetic_sample(root, &id, &scene.syn)?;
            syn_ids.push(id.clone());
            train_ids.push(id);
        } else {
            val_ids.push(id);
        }
    }
    write_split(root, "real", "train", &train_ids)?;
    write_split(root, "real", "val", &val_ids)?;
    write_split(
        root,
        &format!("syn/toy_{}", ColorDomain::Synthetic.tag()),
        "all",
        &syn_ids,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_root(tag: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!(
            "depthforge-data-{tag}-{}",
            std::process::id()
        ));
        let _ = std::fs::remove_dir_all(&d);
        d
    }

    fn small_opts(seed: u64) -> ToyDatasetOptions {
        ToyDatasetOptions {
            seed,
            n_scenes: 3,
            n_val: 1,
            height: 32,
            width: 64,
            domain: ColorDomain::RealA,
            moving_objects: false,
        }
    }

    #[test]
    fn toy_dataset_roundtrips_through_disk() {
        let root = tmp_root("roundtrip");
        generate_toy_dataset(&root, &small_opts(11)).unwrap();

        let train = RealDataset::open(&root, "train").unwrap();
        assert_eq!(train.len(), 3);
        let val = RealDataset::open(&root, "val").unwrap();
        assert_eq!(val.len(), 1);

        let sample = train.load(0).unwrap();
        assert_eq!(sample.frames[1].height, 32);
        assert!(sample.sky_mask.is_some());
        assert!(sample.sky_mask.as_ref().unwrap().coverage() > 0.05);
        let gt = train.load_gt_depth(0).unwrap().unwrap();
        assert_eq!(gt.grid().height, 32);

        let src = SyntheticSource::open(&root, "toy_synthetic").unwrap();
        assert_eq!(src.len(), 3);
        let syn = src.load(1).unwrap();
        assert_eq!(syn.color.width, 64);
        // Depth is dense and positive after the quantized roundtrip.
        assert!(syn.depth.grid().data.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn discovery_and_unification() {
        let root = tmp_root("unify");
        generate_toy_dataset(&root, &small_opts(12)).unwrap();
        // Second source with a different size.
        for i in 0..2 {
            let spec = ToySceneSpec {
                color_domain: ColorDomain::RealB,
                ..ToySceneSpec::new(100 + i, 64, 64)
            };
            let scene = generate_toy_scene_full(&spec).unwrap();
            let mut syn = scene.syn;
            syn.source = "toy_b".into();
            write_synthetic_sample(&root, &format!("b{i}"), &syn).unwrap();
        }
        write_split(&root, "syn/toy_b", "all", &["b0".into(), "b1".into()]).unwrap();

        let names = SyntheticSource::discover(&root).unwrap();
        assert_eq!(
            names,
            vec!["toy_b".to_string(), "toy_synthetic".to_string()]
        );

        let sources: Vec<SyntheticSource> = names
            .iter()
            .map(|n| SyntheticSource::open(&root, n).unwrap())
            .collect();
        let unified = unify_synthetic(sources, (32, 64), (0.1, 100.0), 7).unwrap();
        assert_eq!(unified.len(), 5);
        for i in 0..unified.len() {
            let s = unified.load(i).unwrap();
            assert_eq!((s.color.height, s.color.width), (32, 64));
            assert!(s
                .depth
                .grid()
                .data
                .iter()
                .all(|&v| (0.1..=100.0).contains(&v)));
        }
        // Fixed seed gives an identical shuffle order.
        let sources2: Vec<SyntheticSource> = names
            .iter()
            .map(|n| SyntheticSource::open(&root, n).unwrap())
            .collect();
        let unified2 = unify_synthetic(sources2, (32, 64), (0.1, 100.0), 7).unwrap();
        assert_eq!(unified.order, unified2.order);
    }

    #[test]
    fn missing_sky_mask_yields_empty_and_mismatch_rejects() {
        let root = tmp_root("sky");
        generate_toy_dataset(&root, &small_opts(14)).unwrap();
        let real_dir = root.join("real");
        let img = Image::zeros(3, 32, 64);
        // No file for this id: empty mask.
        let m = sky_mask_provider(&real_dir, "absent", &img)
            .unwrap()
            .unwrap();
        assert_eq!(m.coverage(), 0.0);
        // Wrong-size mask file: rejected with the path named.
        let bad = Grid::filled(8, 8, 1.0);
        io::write_mask8(&real_dir.join("sky/bad.png"), &bad).unwrap();
        let err = sky_mask_provider(&real_dir, "bad", &img).unwrap_err();
        assert!(err.to_string().contains("bad.png"), "{err}");
    }

    #[test]
    fn unitless_synthetic_source_is_rejected() {
        let root = tmp_root("unitless");
        generate_toy_dataset(&root, &small_opts(15)).unwrap();
        // Remove the scale declaration.
        let meta = root.join("syn/toy_synthetic/meta.txt");
        std::fs::write(&meta, "comment only\n").unwrap();
        let err = SyntheticSource::open(&root, "toy_synthetic").unwrap_err();
        assert!(err.to_string().contains("depth_scale"), "{err}");
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let a = tmp_root("det-a");
        let b = tmp_root("det-b");
        generate_toy_dataset(&a, &small_opts(16)).unwrap();
        generate_toy_dataset(&b, &small_opts(16)).unwrap();
        let fa = std::fs::read(a.join("real/frames/scene0000_t0.png")).unwrap();
        let fb = std::fs::read(b.join("real/frames/scene0000_t0.png")).unwrap();
        assert_eq!(fa, fb);
        let da = std::fs::read(a.join("syn/toy_synthetic/depth/scene0001.png")).unwrap();
        let db = std::fs::read(b.join("syn/toy_synthetic/depth/scene0001.png")).unwrap();
        assert_eq!(da, db);
    }
}
