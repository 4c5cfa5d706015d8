#![allow(dead_code)]

use distpers::Grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// u8 samples drawn from a small random alphabet so that ties are common.
pub fn tied_u8_grid(dims: [usize; 3], rng: &mut ChaCha8Rng) -> Grid {
    let levels: u16 = *[2u16, 3, 5, 8, 16, 256].get(rng.gen_range(0..6)).unwrap();
    let n = dims.iter().product();
    let values = (0..n)
        .map(|_| f64::from((rng.gen_range(0..levels) * (256 / levels)) as u8))
        .collect();
    Grid::new(dims, values).unwrap()
}

pub fn random_dims(lo: usize, hi: usize, rng: &mut ChaCha8Rng) -> [usize; 3] {
    [
        rng.gen_range(lo..=hi),
        rng.gen_range(lo..=hi),
        rng.gen_range(lo..=hi),
    ]
}

/// Uniform noise blurred three times with a 3x3x3 box filter.
pub fn smoothed_field(n: usize, seed: u64) -> Grid {
    let mut r = rng(seed);
    let idx = |x: usize, y: usize, z: usize| x + n * (y + n * z);
    let mut v: Vec<f64> = (0..n * n * n).map(|_| r.gen::<f64>()).collect();
    for _ in 0..3 {
        let mut w = vec![0.0; v.len()];
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let (mut s, mut c) = (0.0, 0.0);
                    for zz in z.saturating_sub(1)..=(z + 1).min(n - 1) {
                        for yy in y.saturating_sub(1)..=(y + 1).min(n - 1) {
                            for xx in x.saturating_sub(1)..=(x + 1).min(n - 1) {
                                s += v[idx(xx, yy, zz)];
                                c += 1.0;
                            }
                        }
                    }
                    w[idx(x, y, z)] = s / c;
                }
            }
        }
        v = w;
    }
    Grid::new([n, n, n], v).unwrap()
}

pub const MESH_TOP: f64 = 255.0;

/// Coarse lattice lines (at most one odd coordinate) carry random values
/// below 200; every other vertex sits at 255. The sublevel sets below 255
/// are the line lattice with one loop per coarse square, and all of those
/// loops die together at 255.
pub fn mesh_field(n: usize, seed: u64) -> Grid {
    let mut r = rng(seed);
    let mut v = Vec::with_capacity(n * n * n);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let odd = x % 2 + y % 2 + z % 2;
                v.push(if odd >= 2 {
                    MESH_TOP
                } else {
                    f64::from(r.gen_range(0..200u8))
                });
            }
        }
    }
    Grid::new([n, n, n], v).unwrap()
}
