//! HR image pool and deterministic (lr, hr) sample synthesis. Every sample
//! is addressed by a global index; its stream is derived as
//! master_seed + index, so order and worker count never change the data.

use std::path::Path;

use ndarray::{s, Array4};
use rayon::prelude::*;

use crate::degradation::{synthesize_lr, DegradationConfig};
use crate::error::{config_err, Error, Result};
use crate::imageio::{self};
use crate::rng::Rng;
use crate::tensor::{ImageTensor, Tensor};

#[derive(Debug)]
pub struct Dataset {
    images: Vec<ImageTensor>,
    names: Vec<String>,
}

impl Dataset {
    /// Load every PNG/JPEG under `dir` (sorted by filename).
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("png") | Some("jpg") | Some("jpeg")
                )
            })
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(config_err!("no images found in {}", dir.display()));
        }
        let mut images = Vec::with_capacity(paths.len());
        let mut names = Vec::with_capacity(paths.len());
        for p in paths {
            images.push(imageio::load_image(&p)?);
            names.push(
                p.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            );
        }
        Ok(Dataset { images, names })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Deterministic (lr, hr) pair for one global sample index.
    pub fn sample(
        &self,
        master_seed: u64,
        global_index: u64,
        hr_patch: usize,
        use_hflip: bool,
        deg: &DegradationConfig,
    ) -> Result<(ImageTensor, ImageTensor)> {
        let mut rng = Rng::new(master_seed.wrapping_add(global_index));
        let img = &self.images[rng.int_range(0, self.len() as i64 - 1) as usize];
        let mut hr = imageio::extract_patch(img, hr_patch, &mut rng)?;
        if use_hflip && rng.coin(0.5) {
            hr = imageio::hflip(&hr);
        }
        let lr = synthesize_lr(&hr, deg, &mut rng)?;
        Ok((lr, hr))
    }

    /// Assemble one batch; samples are built in parallel but each from its
    /// own derived stream, so the result is independent of scheduling.
    pub fn batch(
        &self,
        master_seed: u64,
        first_global_index: u64,
        batch_size: usize,
        hr_patch: usize,
        use_hflip: bool,
        deg: &DegradationConfig,
    ) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let pairs: Vec<Result<(ImageTensor, ImageTensor)>> = (0..batch_size)
            .into_par_iter()
            .map(|j| {
                self.sample(
                    master_seed,
                    first_global_index + j as u64,
                    hr_patch,
                    use_hflip,
                    deg,
                )
            })
            .collect();
        let lr_size = hr_patch / 4;
        let mut lr = Array4::zeros((batch_size, 3, lr_size, lr_size));
        let mut hr = Array4::zeros((batch_size, 3, hr_patch, hr_patch));
        for (j, pair) in pairs.into_iter().enumerate() {
            let (l, h) = pair?;
            lr.slice_mut(s![j, .., .., ..]).assign(&l.data.slice(s![0, .., .., ..]));
            hr.slice_mut(s![j, .., .., ..]).assign(&h.data.slice(s![0, .., .., ..]));
        }
        Ok((lr, hr))
    }
}
