//! Dot-product kernels for affinity computation.
//!
//! Every kernel accumulates in the same fixed lane order and reduces with
//! the same tree, so a single dot, a tiled block and the AVX2 build of the
//! tiled block produce bitwise-identical results. No FMA is used.

const LANES: usize = 16;
const PROMPT_TILE: usize = 4;
const PATCH_TILE: usize = 64;

#[inline(always)]
fn reduce(acc: &[f32; LANES]) -> f32 {
    let mut v = *acc;
    let mut width = LANES;
    while width > 1 {
        width /= 2;
        for l in 0..width {
            v[l] += v[l + width];
        }
    }
    v[0]
}

#[inline(always)]
fn dot_inline(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    for (l, (x, y)) in ra.iter().zip(rb).enumerate() {
        acc[l] += x * y;
    }
    reduce(&acc)
}

/// Dot product with the kernel's accumulation order.
#[cfg(test)]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len(), "dot operands differ in length");
    dot_inline(a, b)
}

#[inline(always)]
fn dot_tile(prompts: [&[f32]; PROMPT_TILE], patch: &[f32]) -> [f32; PROMPT_TILE] {
    let mut acc = [[0f32; LANES]; PROMPT_TILE];
    let chunks = patch.len() / LANES;
    let [p0, p1, p2, p3] = prompts;
    let lanes = |s: &[f32], ch: usize| -> [f32; LANES] { s[ch * LANES..(ch + 1) * LANES].try_into().unwrap() };
    for ch in 0..chunks {
        let f = lanes(patch, ch);
        let q = [lanes(p0, ch), lanes(p1, ch), lanes(p2, ch), lanes(p3, ch)];
        for t in 0..PROMPT_TILE {
            for l in 0..LANES {
                acc[t][l] += q[t][l] * f[l];
            }
        }
    }
    let base = chunks * LANES;
    for (p, acc) in prompts.iter().zip(acc.iter_mut()) {
        for (l, (x, y)) in p[base..].iter().zip(&patch[base..]).enumerate() {
            acc[l] += x * y;
        }
    }
    let mut out = [0f32; PROMPT_TILE];
    for (o, a) in out.iter_mut().zip(&acc) {
        *o = reduce(a);
    }
    out
}

#[inline(always)]
fn affinity_block_impl(patches: &[f32], channels: usize, prompts: &[&[f32]], out: &mut [f32]) {
    let n = patches.len() / channels;
    debug_assert_eq!(out.len(), prompts.len() * n);
    for start in (0..n).step_by(PATCH_TILE) {
        let end = (start + PATCH_TILE).min(n);
        let mut groups = prompts.chunks_exact(PROMPT_TILE);
        let mut row = 0;
        for group in groups.by_ref() {
            let tile = [group[0], group[1], group[2], group[3]];
            for j in start..end {
                let patch = &patches[j * channels..(j + 1) * channels];
                let d = dot_tile(tile, patch);
                for (t, v) in d.iter().enumerate() {
                    out[(row + t) * n + j] = *v;
                }
            }
            row += PROMPT_TILE;
        }
        for p in groups.remainder() {
            for j in start..end {
                let patch = &patches[j * channels..(j + 1) * channels];
                out[row * n + j] = dot_inline(p, patch);
            }
            row += 1;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn affinity_block_avx2(patches: &[f32], channels: usize, prompts: &[&[f32]], out: &mut [f32]) {
    affinity_block_impl(patches, channels, prompts, out)
}

/// Fills `out` (row per prompt, `patches.len() / channels` columns) with dot
/// products of each prompt vector against every patch vector.
pub fn affinity_block(patches: &[f32], channels: usize, prompts: &[&[f32]], out: &mut [f32]) {
    assert!(channels > 0 && patches.len().is_multiple_of(channels));
    assert!(prompts.iter().all(|p| p.len() == channels));
    assert_eq!(out.len(), prompts.len() * (patches.len() / channels));
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked above.
            unsafe { affinity_block_avx2(patches, channels, prompts, out) };
            return;
        }
    }
    affinity_block_impl(patches, channels, prompts, out)
}
