//! Syn-Real compositing: rectangular masks larger than half the image in
//! both dimensions, pasted color images sharing a single depth label, and
//! batch assembly that routes samples to the right optimizer.

use crate::geometry::{Grid, Image};
use crate::rng::Stream;
use crate::{Error, Result};

/// Rectangular binary mask; both sides strictly exceed half the image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CutMixMask {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    pub image_height: usize,
    pub image_width: usize,
}

impl CutMixMask {
    pub fn validate(&self) -> Result<()> {
        if 2 * self.height <= self.image_height || 2 * self.width <= self.image_width {
            return Err(Error::InvalidInput(format!(
                "cutmix rectangle {}x{} not larger than half of {}x{}",
                self.height, self.width, self.image_height, self.image_width
            )));
        }
        if self.top + self.height > self.image_height || self.left + self.width > self.image_width
        {
            return Err(Error::InvalidInput(
                "cutmix rectangle leaves the image".into(),
            ));
        }
        Ok(())
    }

    /// Materialize as a {0,1} grid (1 inside the rectangle).
    pub fn as_grid(&self) -> Grid {
        let mut g = Grid::filled(self.image_height, self.image_width, 0.0);
        for y in self.top..self.top + self.height {
            for x in self.left..self.left + self.width {
                g.set(y, x, 1.0);
            }
        }
        g
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

/// Per-pixel origin tag of a composited image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Synthetic,
    SynToReal,
}

/// Composite color image plus the shared depth label and per-pixel origin.
#[derive(Clone, Debug)]
pub struct CompositePair {
    pub image: Image,
    /// Ground-truth label carried over unchanged from the synthetic sample.
    pub depth_label: Grid,
    pub provenance: Vec<Provenance>,
    pub mask: CutMixMask,
}

/// Sample a mask with height uniform over integer sizes in (H/2, H], width
/// uniform over (W/2, W], placed uniformly among in-bounds positions.
pub fn sample_cutmix_mask(height: usize, width: usize, rng: &mut Stream) -> Result<CutMixMask> {
    if height < 2 || width < 2 {
        return Err(Error::InvalidInput(format!(
            "cutmix needs at least a 2x2 image, got {height}x{width}"
        )));
    }
    // Strictly greater than half: smallest admissible size is floor(H/2)+1.
    let h_lo = height / 2 + 1;
    let w_lo = width / 2 + 1;
    let h = h_lo + rng.below(height - h_lo + 1);
    let w = w_lo + rng.below(width - w_lo + 1);
    let top = rng.below(height - h + 1);
    let left = rng.below(width - w + 1);
    let m = CutMixMask {
        top,
        left,
        height: h,
        width: w,
        image_height: height,
        image_width: width,
    };
    m.validate()?;
    Ok(m)
}

/// Rectangular paste: inside the mask take `i1`, outside take `i2`.
pub fn cutmix(i1: &Image, i2: &Image, mask: &CutMixMask) -> Result<Image> {
    if !i1.same_size(i2) {
        return Err(Error::ShapeMismatch(format!(
            "cutmix inputs {:?} vs {:?}",
            i1.shape(),
            i2.shape()
        )));
    }
    if i1.height != mask.image_height || i1.width != mask.image_width {
        return Err(Error::ShapeMismatch("mask does not fit the images".into()));
    }
    let mut out = i2.clone();
    for c in 0..i1.channels {
        for y in mask.top..mask.top + mask.height {
            for x in mask.left..mask.left + mask.width {
                out.set(c, y, x, i1.at(c, y, x));
            }
        }
    }
    Ok(out)
}

/// Build one composite pair: swap the two colors with probability 0.5,
/// sample a mask, paste, and carry the single depth label through unchanged.
pub fn compose_syn_real(
    syn_color: &Image,
    syn2real_color: &Image,
    depth_label: &Grid,
    rng: &mut Stream,
) -> Result<CompositePair> {
    if !syn_color.same_size(syn2real_color) {
        return Err(Error::ShapeMismatch(
            "synthetic and syn-to-real images differ in shape".into(),
        ));
    }
    let swap = rng.coin();
    let (first, second, inside, outside) = if swap {
        (
            syn2real_color,
            syn_color,
            Provenance::SynToReal,
            Provenance::Synthetic,
        )
    } else {
        (
            syn_color,
            syn2real_color,
            Provenance::Synthetic,
            Provenance::SynToReal,
        )
    };
    let mask = sample_cutmix_mask(syn_color.height, syn_color.width, rng)?;
    let image = cutmix(first, second, &mask)?;
    let provenance = (0..syn_color.height * syn_color.width)
        .map(|i| {
            let (y, x) = (i / syn_color.width, i % syn_color.width);
            if mask.contains(y, x) {
                inside
            } else {
                outside
            }
        })
        .collect();
    Ok(CompositePair {
        image,
        depth_label: depth_label.clone(),
        provenance,
        mask,
    })
}

/// How a batch entry is routed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleRole {
    /// Real unsupervised sample: reprojection losses only (optimizer 2).
    RealUnsupervised,
    /// Composited supervised pair: supervised losses only (optimizer 1).
    CompositeSupervised,
}

/// One assembled batch: indices into the caller's sample stores plus role
/// tags, shuffled reproducibly.
#[derive(Clone, Debug)]
pub struct TrainingBatch {
    pub entries: Vec<(SampleRole, usize)>,
}

/// Combine real sample indices and composite pair indices into one batch.
pub fn assemble_batch(
    real_samples: &[usize],
    composite_pairs: &[usize],
    rng: &mut Stream,
) -> Result<TrainingBatch> {
    if real_samples.is_empty() || composite_pairs.is_empty() {
        return Err(Error::InvalidInput(
            "a batch needs both real and composite samples".into(),
        ));
    }
    let mut entries: Vec<(SampleRole, usize)> = real_samples
        .iter()
        .map(|&i| (SampleRole::RealUnsupervised, i))
        .chain(
            composite_pairs
                .iter()
                .map(|&i| (SampleRole::CompositeSupervised, i)),
        )
        .collect();
    rng.shuffle(&mut entries);
    Ok(TrainingBatch { entries })
}
