//! Procedural HR images for the bundled corpus and for tests. Every image
//! layers smooth color waves, three octaves of value noise, crisp shapes and
//! lines, a coarse high-contrast checker, and fine grain. The checker keeps
//! sharp structure in every patch of every image, so degradations move
//! natural-scene statistics consistently; structure placement varies while
//! micro-texture energy stays uniform across the corpus.

use ndarray::Array4;

use crate::rng::Rng;
use crate::tensor::ImageTensor;

const TAU: f64 = std::f64::consts::TAU;

pub fn generate(size: usize, seed: u64) -> ImageTensor {
    let mut rng = Rng::new(seed).derive(0x7379);
    let n = size;
    let mut img = Array4::<f32>::zeros((1, 3, n, n));

    let base: [f64; 3] = [
        rng.range(0.35, 0.6),
        rng.range(0.35, 0.6),
        rng.range(0.35, 0.6),
    ];
    let mut waves = Vec::new();
    for _ in 0..2 {
        waves.push((
            rng.range(1.0, 5.0),
            rng.range(1.0, 5.0),
            rng.range(0.0, TAU),
            rng.range(0.05, 0.12),
        ));
    }

    // three octaves of bilinear value noise
    let octave_amp = 0.12;
    let mut octaves = Vec::new();
    for (cells, amp) in [(8usize, octave_amp), (24, octave_amp * 0.7), (64, octave_amp * 0.5)] {
        let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1))
            .map(|_| rng.range(-1.0, 1.0))
            .collect();
        octaves.push((cells, amp, lattice));
    }
    let vnoise = |y: usize, x: usize, cells: usize, lat: &[f64]| -> f64 {
        let fy = y as f64 / n as f64 * cells as f64;
        let fx = x as f64 / n as f64 * cells as f64;
        let (iy, ix) = (fy.floor() as usize, fx.floor() as usize);
        let (ty, tx) = (fy - iy as f64, fx - ix as f64);
        let at = |r: usize, c: usize| lat[r.min(cells) * (cells + 1) + c.min(cells)];
        at(iy, ix) * (1.0 - ty) * (1.0 - tx)
            + at(iy, ix + 1) * (1.0 - ty) * tx
            + at(iy + 1, ix) * ty * (1.0 - tx)
            + at(iy + 1, ix + 1) * ty * tx
    };

    for y in 0..n {
        for x in 0..n {
            let (u, v) = (x as f64 / n as f64, y as f64 / n as f64);
            let mut lum = 0.0;
            for &(fx, fy, ph, amp) in &waves {
                lum += amp * libm::sin(TAU * (fx * u + fy * v) + ph);
            }
            for (cells, amp, lat) in &octaves {
                lum += amp * vnoise(y, x, *cells, lat);
            }
            for c in 0..3 {
                img[[0, c, y, x]] = (base[c] + lum).clamp(0.02, 0.98) as f32;
            }
        }
    }

    // crisp shapes with per-image contrast profile
    let shape_delta = rng.range(0.4, 0.8);
    let n_shapes = rng.int_range(4, 8);
    for _ in 0..n_shapes {
        let delta: [f64; 3] = [
            rng.range(-shape_delta, shape_delta),
            rng.range(-shape_delta, shape_delta),
            rng.range(-shape_delta, shape_delta),
        ];
        if rng.coin(0.5) {
            let w = rng.int_range(n as i64 / 8, n as i64 / 3) as usize;
            let h = rng.int_range(n as i64 / 8, n as i64 / 3) as usize;
            let y0 = rng.int_range(0, (n - h) as i64) as usize;
            let x0 = rng.int_range(0, (n - w) as i64) as usize;
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    for c in 0..3 {
                        let v = img[[0, c, y, x]] as f64 + delta[c];
                        img[[0, c, y, x]] = v.clamp(0.02, 0.98) as f32;
                    }
                }
            }
        } else {
            let r = rng.int_range(n as i64 / 10, n as i64 / 5);
            let cy = rng.int_range(r, n as i64 - r - 1);
            let cx = rng.int_range(r, n as i64 - r - 1);
            for y in (cy - r)..=(cy + r) {
                for x in (cx - r)..=(cx + r) {
                    if (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r {
                        for c in 0..3 {
                            let v = img[[0, c, y as usize, x as usize]] as f64 + delta[c];
                            img[[0, c, y as usize, x as usize]] = v.clamp(0.02, 0.98) as f32;
                        }
                    }
                }
            }
        }
    }

    // full-width lines, 2-5 px
    let n_lines = rng.int_range(3, 7);
    for _ in 0..n_lines {
        let bright = if rng.coin(0.5) { 0.9 } else { 0.08 };
        let thick = rng.int_range(2, 5) as usize;
        if rng.coin(0.5) {
            let y0 = rng.int_range(0, (n - thick) as i64) as usize;
            for t in 0..thick {
                for x in 0..n {
                    for c in 0..3 {
                        img[[0, c, y0 + t, x]] = bright as f32;
                    }
                }
            }
        } else {
            let x0 = rng.int_range(0, (n - thick) as i64) as usize;
            for t in 0..thick {
                for y in 0..n {
                    for c in 0..3 {
                        img[[0, c, y, x0 + t]] = bright as f32;
                    }
                }
            }
        }
    }

    // coarse rotated checker: strong edges in every patch of the image
    let period = rng.range(40.0, 72.0);
    let angle = rng.range(0.0, std::f64::consts::FRAC_PI_2);
    let amp = rng.range(0.12, 0.2);
    let (ca, sa) = (libm::cos(angle), libm::sin(angle));
    for y in 0..n {
        for x in 0..n {
            let u = ca * x as f64 + sa * y as f64;
            let v = -sa * x as f64 + ca * y as f64;
            let su = if libm::sin(TAU * u / period) > 0.0 { 1.0 } else { -1.0 };
            let sv = if libm::sin(TAU * v / period) > 0.0 { 1.0 } else { -1.0 };
            let d = amp * su * sv;
            for c in 0..3 {
                let val = img[[0, c, y, x]] as f64 + d;
                img[[0, c, y, x]] = val.clamp(0.01, 0.99) as f32;
            }
        }
    }

    // fine grain shared across channels
    for y in 0..n {
        for x in 0..n {
            let g = rng.gauss() * 0.012;
            for c in 0..3 {
                let v = img[[0, c, y, x]] as f64 + g;
                img[[0, c, y, x]] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }

    ImageTensor::wrap(img)
}
