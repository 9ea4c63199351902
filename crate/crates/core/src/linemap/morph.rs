//! Binary morphology on row-major masks: opening, thinning, connected
//! components. Pixels outside the image count as background.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

/// Neighbour offsets in Yokoi order: E, NE, N, NW, W, SW, S, SE.
const RING: [(isize, isize); 8] = [(0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1)];

fn at(mask: &[bool], h: usize, w: usize, y: isize, x: isize) -> bool {
    y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && mask[y as usize * w + x as usize]
}

fn ring(mask: &[bool], h: usize, w: usize, y: usize, x: usize) -> [bool; 8] {
    let mut n = [false; 8];
    for (k, (dy, dx)) in RING.iter().enumerate() {
        n[k] = at(mask, h, w, y as isize + dy, x as isize + dx);
    }
    n
}

/// Yokoi connectivity number for 8-connected foreground. A non-isolated
/// pixel whose number is 1 can be removed without changing the topology.
fn yokoi8(n: &[bool; 8]) -> u32 {
    let c = |k: usize| u32::from(!n[k % 8]);
    [0, 2, 4, 6].iter().map(|&k| c(k) - c(k) * c(k + 1) * c(k + 2)).sum()
}

/// Erosion then dilation with a 2×2 structuring element anchored at the
/// top-left cell. Removes one-pixel spurs and specks, keeps anything at
/// least two pixels thick.
pub fn open2x2(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut eroded = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let (yi, xi) = (y as isize, x as isize);
            eroded[y * w + x] = at(mask, h, w, yi, xi)
                && at(mask, h, w, yi, xi + 1)
                && at(mask, h, w, yi + 1, xi)
                && at(mask, h, w, yi + 1, xi + 1);
        }
    }
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if eroded[y * w + x] {
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    if y + dy < h && x + dx < w {
                        out[(y + dy) * w + x + dx] = true;
                    }
                }
            }
        }
    }
    out
}

/// Peels boundary pixels one direction (N, S, E, W) at a time until stable.
/// Within a sweep candidates are re-tested one at a time against the
/// current mask, so deleting one pixel can never disconnect another's
/// neighbourhood. End points (a single neighbour) are kept.
pub fn thin(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut m = mask.to_vec();
    let border = |m: &[bool], dir: usize| -> Vec<(usize, usize)> {
        (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).filter(|&(y, x)| m[y * w + x] && !ring(m, h, w, y, x)[dir]).collect()
    };
    loop {
        let mut changed = false;
        // Index into RING of the neighbour that must be background. Longer
        // borders go first so a stroke thins across its width, not from its
        // ends.
        let mut directions = [2usize, 6, 0, 4];
        directions.sort_by_key(|&d| core::cmp::Reverse(border(&m, d).len()));
        for &dir in &directions {
            let candidates = border(&m, dir);
            for (y, x) in candidates {
                let n = ring(&m, h, w, y, x);
                let count = n.iter().filter(|&&b| b).count();
                if count >= 2 && yokoi8(&n) == 1 {
                    m[y * w + x] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            return m;
        }
    }
}

/// 8-connected component labels (`0` = background, components from 1) and
/// the size of each component (index 0 unused).
pub fn components(mask: &[bool], h: usize, w: usize) -> (Vec<usize>, Vec<usize>) {
    let mut labels = vec![0usize; h * w];
    let mut sizes = vec![0usize];
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len();
        let mut size = 0;
        labels[start] = label;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for (dy, dx) in RING {
                let (ny, nx) = (y + dy, x + dx);
                if at(mask, h, w, ny, nx) {
                    let j = ny as usize * w + nx as usize;
                    if labels[j] == 0 {
                        labels[j] = label;
                        queue.push_back(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

pub fn remove_small_components(mask: &[bool], h: usize, w: usize, min_size: usize) -> Vec<bool> {
    let (labels, sizes) = components(mask, h, w);
    labels.iter().map(|&l| l != 0 && sizes[l] >= min_size).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[&str]) -> (Vec<bool>, usize, usize) {
        let h = rows.len();
        let w = rows[0].len();
        (rows.iter().flat_map(|r| r.bytes().map(|b| b == b'#')).collect(), h, w)
    }

    #[test]
    fn yokoi_cases() {
        // A line interior: removing it splits the line.
        let mut n = [false; 8];
        n[0] = true;
        n[4] = true;
        assert_eq!(yokoi8(&n), 2);
        // A corner of a block.
        let n = [true, false, false, false, false, false, true, true];
        assert_eq!(yokoi8(&n), 1);
        // Fully surrounded.
        assert_eq!(yokoi8(&[true; 8]), 0);
    }

    #[test]
    fn two_by_two_block_survives() {
        let (m, h, w) = grid(&["....", ".##.", ".##.", "...."]);
        let t = thin(&m, h, w);
        let n = t.iter().filter(|&&b| b).count();
        assert!(n >= 1 && n <= 2);
    }

    #[test]
    fn opening_removes_single_pixel_line() {
        let (m, h, w) = grid(&["....", "####", "....", "...."]);
        assert!(open2x2(&m, h, w).iter().all(|&b| !b));
        let (m, h, w) = grid(&["....", "####", "####", "...."]);
        assert_eq!(open2x2(&m, h, w), m);
    }

    #[test]
    fn component_labelling() {
        let (m, h, w) = grid(&["#..#", "#..#", "...#", "##.."]);
        let (_, sizes) = components(&m, h, w);
        let mut s = sizes[1..].to_vec();
        s.sort();
        assert_eq!(s, vec![2, 2, 3]);
    }
}
