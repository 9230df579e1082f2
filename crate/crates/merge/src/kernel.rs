//! Element-wise task arithmetic over raw little-endian buffers.
//!
//! For each element, steps `(tuned, alpha)` are folded left to right:
//! `cur = cast(cur + alpha * (tuned - cur))` in the accumulation type. An
//! `alpha` of 0 keeps `cur`, an `alpha` of 1 takes `tuned`, and a tuned
//! element bit-identical to `cur` keeps `cur`; all three are exact.

use half::{bf16, f16};

use crate::dtype::{AccumDtype, Dtype};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Elements per parallel work item.
const BLOCK_ELEMS: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

trait Elem: Copy {
    const SIZE: usize;
    fn load(b: &[u8]) -> Self;
    fn store(self, b: &mut [u8]);
    fn same_bits(self, other: Self) -> bool;
    fn to_f32(self) -> f32;
    fn from_f32(v: f32) -> Self;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Elem for f16 {
    const SIZE: usize = 2;
    fn load(b: &[u8]) -> Self {
        f16::from_le_bytes([b[0], b[1]])
    }
    fn store(self, b: &mut [u8]) {
        b.copy_from_slice(&self.to_le_bytes());
    }
    fn same_bits(self, o: Self) -> bool {
        self.to_bits() == o.to_bits()
    }
    fn to_f32(self) -> f32 {
        f16::to_f32(self)
    }
    fn from_f32(v: f32) -> Self {
        f16::from_f32(v)
    }
    fn to_f64(self) -> f64 {
        f16::to_f64(self)
    }
    fn from_f64(v: f64) -> Self {
        f16::from_f64(v)
    }
}

impl Elem for bf16 {
    const SIZE: usize = 2;
    fn load(b: &[u8]) -> Self {
        bf16::from_le_bytes([b[0], b[1]])
    }
    fn store(self, b: &mut [u8]) {
        b.copy_from_slice(&self.to_le_bytes());
    }
    fn same_bits(self, o: Self) -> bool {
        self.to_bits() == o.to_bits()
    }
    fn to_f32(self) -> f32 {
        bf16::to_f32(self)
    }
    fn from_f32(v: f32) -> Self {
        bf16::from_f32(v)
    }
    fn to_f64(self) -> f64 {
        bf16::to_f64(self)
    }
    fn from_f64(v: f64) -> Self {
        bf16::from_f64(v)
    }
}

impl Elem for f32 {
    const SIZE: usize = 4;
    fn load(b: &[u8]) -> Self {
        f32::from_le_bytes(b[..4].try_into().unwrap())
    }
    fn store(self, b: &mut [u8]) {
        b.copy_from_slice(&self.to_le_bytes());
    }
    fn same_bits(self, o: Self) -> bool {
        self.to_bits() == o.to_bits()
    }
    fn to_f32(self) -> f32 {
        self
    }
    fn from_f32(v: f32) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Elem for f64 {
    const SIZE: usize = 8;
    fn load(b: &[u8]) -> Self {
        f64::from_le_bytes(b[..8].try_into().unwrap())
    }
    fn store(self, b: &mut [u8]) {
        b.copy_from_slice(&self.to_le_bytes());
    }
    fn same_bits(self, o: Self) -> bool {
        self.to_bits() == o.to_bits()
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
}

#[inline]
fn fold<E: Elem>(mut cur: E, tuned: impl Iterator<Item = E>, alphas: &[f64], accum: AccumDtype) -> E {
    for (t, &alpha) in tuned.zip(alphas) {
        if alpha == 0.0 || t.same_bits(cur) {
            continue;
        }
        if alpha == 1.0 {
            cur = t;
            continue;
        }
        cur = match accum {
            AccumDtype::F32 => {
                let c = cur.to_f32();
                E::from_f32(c + alpha as f32 * (t.to_f32() - c))
            }
            AccumDtype::F64 => {
                let c = cur.to_f64();
                E::from_f64(c + alpha * (t.to_f64() - c))
            }
        };
    }
    cur
}

fn block<E: Elem>(base: &[u8], tuned: &[&[u8]], alphas: &[f64], accum: AccumDtype, out: &mut [u8]) {
    for (i, o) in out.chunks_exact_mut(E::SIZE).enumerate() {
        let at = i * E::SIZE;
        let cur = E::load(&base[at..]);
        let merged = fold(cur, tuned.iter().map(|t| E::load(&t[at..])), alphas, accum);
        merged.store(o);
    }
}

fn run<E: Elem>(base: &[u8], tuned: &[&[u8]], alphas: &[f64], accum: AccumDtype, out: &mut [u8], exec: Execution) {
    let step = BLOCK_ELEMS * E::SIZE;
    let work = |(i, o): (usize, &mut [u8])| {
        let lo = i * step;
        let hi = lo + o.len();
        let t: Vec<&[u8]> = tuned.iter().map(|t| &t[lo..hi]).collect();
        block::<E>(&base[lo..hi], &t, alphas, accum, o);
    };
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => out.par_chunks_mut(step).enumerate().for_each(work),
        _ => out.chunks_mut(step).enumerate().for_each(work),
    }
}

/// Merges one chunk of a tensor. All buffers hold the same number of
/// `dtype` elements. Non-float dtypes are copied from `base`.
pub fn merge_chunk(
    dtype: Dtype,
    accum: AccumDtype,
    base: &[u8],
    tuned: &[&[u8]],
    alphas: &[f64],
    out: &mut [u8],
    exec: Execution,
) {
    assert_eq!(tuned.len(), alphas.len(), "one alpha per tuned buffer");
    assert_eq!(base.len(), out.len());
    assert!(tuned.iter().all(|t| t.len() == base.len()), "tuned chunk length differs from base");
    assert_eq!(base.len() % dtype.size(), 0, "chunk is not a whole number of elements");
    match dtype {
        Dtype::F16 => run::<f16>(base, tuned, alphas, accum, out, exec),
        Dtype::BF16 => run::<bf16>(base, tuned, alphas, accum, out, exec),
        Dtype::F32 => run::<f32>(base, tuned, alphas, accum, out, exec),
        Dtype::F64 => run::<f64>(base, tuned, alphas, accum, out, exec),
        _ => out.copy_from_slice(base),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f16s(v: &[f32]) -> Vec<u8> {
        v.iter().flat_map(|x| f16::from_f32(*x).to_le_bytes()).collect()
    }

    fn read_f16(b: &[u8]) -> Vec<f32> {
        b.chunks_exact(2).map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32()).collect()
    }

    #[test]
    fn quarter_step() {
        let base = f16s(&[1.0, 2.0]);
        let tuned = f16s(&[5.0, 6.0]);
        let mut out = vec![0u8; 4];
        merge_chunk(Dtype::F16, AccumDtype::F32, &base, &[&tuned], &[0.25], &mut out, Execution::Sequential);
        assert_eq!(read_f16(&out), vec![2.0, 3.0]);
    }

    #[test]
    fn two_step_fold() {
        let b: Vec<u8> = 0f32.to_le_bytes().to_vec();
        let cpt: Vec<u8> = 4f32.to_le_bytes().to_vec();
        let sft: Vec<u8> = 8f32.to_le_bytes().to_vec();
        let mut out = vec![0u8; 4];
        merge_chunk(Dtype::F32, AccumDtype::F64, &b, &[&cpt, &sft], &[0.25, 0.25], &mut out, Execution::Sequential);
        assert_eq!(f32::from_le_bytes(out.try_into().unwrap()), 2.75);
    }

    #[test]
    fn identities_are_bit_exact() {
        let base = f16s(&[1e-7, 65504.0, -3.25, 0.1]);
        let tuned = f16s(&[-65504.0, 1e-7, 7.0, 0.3]);
        let mut out = vec![0u8; base.len()];
        merge_chunk(Dtype::F16, AccumDtype::F32, &base, &[&tuned], &[0.0], &mut out, Execution::Sequential);
        assert_eq!(out, base);
        merge_chunk(Dtype::F16, AccumDtype::F32, &base, &[&tuned], &[1.0], &mut out, Execution::Sequential);
        assert_eq!(out, tuned);
        merge_chunk(Dtype::F16, AccumDtype::F32, &base, &[&base], &[0.37], &mut out, Execution::Sequential);
        assert_eq!(out, base);
    }

    #[test]
    fn integers_copy_base() {
        let base: Vec<u8> = [1i32, 2, 3].iter().flat_map(|v| v.to_le_bytes()).collect();
        let tuned: Vec<u8> = [9i32, 9, 9].iter().flat_map(|v| v.to_le_bytes()).collect();
        let mut out = vec![0u8; base.len()];
        merge_chunk(Dtype::I32, AccumDtype::F32, &base, &[&tuned], &[0.5], &mut out, Execution::Sequential);
        assert_eq!(out, base);
    }

    #[test]
    fn modes_agree_across_blocks() {
        let n = BLOCK_ELEMS * 3 + 17;
        let base: Vec<f32> = (0..n).map(|i| (i as f32 * 0.37).sin()).collect();
        let tuned: Vec<f32> = (0..n).map(|i| (i as f32 * 0.11).cos()).collect();
        let (b, t) = (f16s(&base), f16s(&tuned));
        let mut seq = vec![0u8; b.len()];
        let mut par = vec![0u8; b.len()];
        merge_chunk(Dtype::F16, AccumDtype::F32, &b, &[&t], &[0.25], &mut seq, Execution::Sequential);
        merge_chunk(Dtype::F16, AccumDtype::F32, &b, &[&t], &[0.25], &mut par, Execution::Parallel);
        assert_eq!(seq, par);
    }

    #[test]
    fn bf16_and_f64_paths() {
        let b: Vec<u8> = bf16::from_f32(1.0).to_le_bytes().to_vec();
        let t: Vec<u8> = bf16::from_f32(3.0).to_le_bytes().to_vec();
        let mut out = vec![0u8; 2];
        merge_chunk(Dtype::BF16, AccumDtype::F32, &b, &[&t], &[0.5], &mut out, Execution::Sequential);
        assert_eq!(bf16::from_le_bytes([out[0], out[1]]).to_f32(), 2.0);
        let b = 1.0f64.to_le_bytes();
        let t = 2.0f64.to_le_bytes();
        let mut out = [0u8; 8];
        merge_chunk(Dtype::F64, AccumDtype::F64, &b, &[&t], &[-0.5], &mut out, Execution::Sequential);
        assert_eq!(f64::from_le_bytes(out), 0.5);
    }
}
