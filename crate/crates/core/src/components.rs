//! 8-connected component labeling of binary grids (two-pass union-find).

use crate::grid::Grid;

/// Component labels of a binary grid. Label 0 is background; foreground
/// components are numbered `1..=count` in raster order of their first pixel.
#[derive(Clone, Debug)]
pub struct Components {
    pub labels: Grid<u32>,
    /// `sizes[k]` is the pixel count of component `k`; `sizes[0]` is unused.
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len() - 1
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

pub fn label_components(mask: &Grid<bool>) -> Components {
    let (w, h) = mask.dims();
    let mut labels = Grid::filled(w, h, 0u32);
    let mut parent: Vec<u32> = vec![0];

    for y in 0..h {
        for x in 0..w {
            if !*mask.get(x, y) {
                continue;
            }
            let mut current = 0u32;
            // already-visited 8-neighbors: W, NW, N, NE
            let mut neighbors = [0u32; 4];
            if x > 0 {
                neighbors[0] = *labels.get(x - 1, y);
            }
            if y > 0 {
                if x > 0 {
                    neighbors[1] = *labels.get(x - 1, y - 1);
                }
                neighbors[2] = *labels.get(x, y - 1);
                if x + 1 < w {
                    neighbors[3] = *labels.get(x + 1, y - 1);
                }
            }
            for &n in neighbors.iter().filter(|&&n| n != 0) {
                if current == 0 {
                    current = n;
                } else if n != current {
                    union(&mut parent, current, n);
                }
            }
            if current == 0 {
                current = parent.len() as u32;
                parent.push(current);
            }
            labels.set(x, y, current);
        }
    }

    // Resolve provisional labels to dense final ids in raster order.
    let mut remap = vec![0u32; parent.len()];
    let mut sizes = vec![0usize];
    for l in labels.as_mut_slice() {
        if *l == 0 {
            continue;
        }
        let root = find(&mut parent, *l) as usize;
        if remap[root] == 0 {
            remap[root] = sizes.len() as u32;
            sizes.push(0);
        }
        *l = remap[root];
        sizes[*l as usize] += 1;
    }

    Components { labels, sizes }
}

/// Drop every 8-connected foreground component smaller than `min_area` pixels.
pub fn remove_small_components(mask: &Grid<bool>, min_area: usize) -> Grid<bool> {
    if min_area <= 1 {
        return mask.clone();
    }
    let comps = label_components(mask);
    comps.labels.map(|&l| l != 0 && comps.sizes[l as usize] >= min_area)
}
