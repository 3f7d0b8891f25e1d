use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io_util::write_atomic;

const MAGIC: &[u8; 4] = b"AMV1";
const VERSION: u16 = 1;
const DTYPE_F32LE: u8 = 1;
const HEADER_LEN: usize = 32;

/// Dense scalar volume, row-major with depth outermost: index = (d*H + h)*W + w.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3], // [D, H, W]
    pub spacing: [f32; 3],
    pub voxels: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], voxels: Vec<f32>) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        if voxels.len() != n {
            return Err(Error::Shape(format!(
                "volume dims {:?} need {} voxels, got {}",
                dims,
                n,
                voxels.len()
            )));
        }
        Ok(Volume { dims, spacing, voxels })
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    #[inline]
    pub fn at(&self, d: usize, h: usize, w: usize) -> f32 {
        self.voxels[(d * self.dims[1] + h) * self.dims[2] + w]
    }
}

fn fmt_err(offset: u64, msg: impl Into<String>) -> Error {
    Error::Format { offset, msg: msg.into() }
}

pub fn read_vol(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path)?;
    parse_vol(&bytes)
}

pub fn parse_vol(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_LEN {
        return Err(fmt_err(
            bytes.len() as u64,
            format!("truncated header: {} bytes, need {}", bytes.len(), HEADER_LEN),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fmt_err(0, format!("bad magic {:?}, expected {:?}", &bytes[0..4], MAGIC)));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(fmt_err(4, format!("unsupported version {version}")));
    }
    if bytes[6] != DTYPE_F32LE {
        return Err(fmt_err(6, format!("unsupported dtype code {}", bytes[6])));
    }
    // bytes[7] reserved
    let mut dims = [0usize; 3];
    for (i, dim) in dims.iter_mut().enumerate() {
        let off = 8 + 4 * i;
        let v = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if v == 0 {
            return Err(fmt_err(off as u64, format!("dimension {i} is zero")));
        }
        *dim = v as usize;
    }
    let mut spacing = [0f32; 3];
    for (i, s) in spacing.iter_mut().enumerate() {
        let off = 20 + 4 * i;
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if !v.is_finite() || v <= 0.0 {
            return Err(fmt_err(off as u64, format!("spacing {i} = {v} is not positive")));
        }
        *s = v;
    }
    let n = dims[0] * dims[1] * dims[2];
    let expect = HEADER_LEN + 4 * n;
    if bytes.len() != expect {
        return Err(fmt_err(
            bytes.len().min(expect) as u64,
            format!("payload for dims {:?} needs {} bytes total, file has {}", dims, expect, bytes.len()),
        ));
    }
    let mut voxels = Vec::with_capacity(n);
    for i in 0..n {
        let off = HEADER_LEN + 4 * i;
        voxels.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
    }
    Volume::new(dims, spacing, voxels)
}

pub fn write_vol(path: &Path, v: &Volume) -> Result<()> {
    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * v.voxels.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.push(DTYPE_F32LE);
    bytes.push(0);
    for d in v.dims {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in v.spacing {
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    for x in &v.voxels {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

/// Trilinear resample onto a cubic `target_side` grid.
///
/// Output index i along an axis of source size S samples source coordinate
/// (i + 0.5) * S / T - 0.5 (pixel-center alignment), clamped to the valid
/// range; equal sizes reproduce the input exactly. Output spacing preserves
/// physical extent per axis.
pub fn resample_volume(v: &Volume, target_side: usize) -> Result<Volume> {
    if target_side == 0 {
        return Err(Error::Validation("target_side must be positive".into()));
    }
    for (i, &d) in v.dims.iter().enumerate() {
        if d < 2 {
            return Err(Error::Validation(format!(
                "cannot resample: axis {i} has extent {d} (need at least 2)"
            )));
        }
    }
    let t = target_side;
    let [sd, sh, sw] = v.dims;

    // Per-axis sample positions, precomputed once.
    let axis = |s: usize| -> (Vec<usize>, Vec<usize>, Vec<f32>) {
        let mut lo = Vec::with_capacity(t);
        let mut hi = Vec::with_capacity(t);
        let mut frac = Vec::with_capacity(t);
        for i in 0..t {
            let x = (i as f64 + 0.5) * (s as f64 / t as f64) - 0.5;
            let x = x.clamp(0.0, (s - 1) as f64);
            let f = x.floor();
            let l = f as usize;
            let h = (l + 1).min(s - 1);
            lo.push(l);
            hi.push(h);
            frac.push((x - f) as f32);
        }
        (lo, hi, frac)
    };
    let (dl, dh, df) = axis(sd);
    let (hl, hh, hf) = axis(sh);
    let (wl, wh, wf) = axis(sw);

    let mut out = Vec::with_capacity(t * t * t);
    for d in 0..t {
        let (d0, d1, fd) = (dl[d], dh[d], df[d]);
        for h in 0..t {
            let (h0, h1, fh) = (hl[h], hh[h], hf[h]);
            for w in 0..t {
                let (w0, w1, fw) = (wl[w], wh[w], wf[w]);
                let c000 = v.at(d0, h0, w0);
                let c001 = v.at(d0, h0, w1);
                let c010 = v.at(d0, h1, w0);
                let c011 = v.at(d0, h1, w1);
                let c100 = v.at(d1, h0, w0);
                let c101 = v.at(d1, h0, w1);
                let c110 = v.at(d1, h1, w0);
                let c111 = v.at(d1, h1, w1);
                let c00 = c000 + (c001 - c000) * fw;
                let c01 = c010 + (c011 - c010) * fw;
                let c10 = c100 + (c101 - c100) * fw;
                let c11 = c110 + (c111 - c110) * fw;
                let c0 = c00 + (c01 - c00) * fh;
                let c1 = c10 + (c11 - c10) * fh;
                out.push(c0 + (c1 - c0) * fd);
            }
        }
    }
    let spacing = [
        v.spacing[0] * sd as f32 / t as f32,
        v.spacing[1] * sh as f32 / t as f32,
        v.spacing[2] * sw as f32 / t as f32,
    ];
    Volume::new([t, t, t], spacing, out)
}

/// Percentile of a non-empty sorted slice with linear interpolation between
/// order statistics: rank = p/100 * (n-1).
fn percentile_sorted(sorted: &[f32], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0] as f64;
    }
    let rank = p / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] as f64 + frac * (sorted[hi] as f64 - sorted[lo] as f64)
}

/// Clip to the [p_low, p_high] percentile window of this volume's own
/// intensities, then rescale that window to [0, 1]. A degenerate window
/// (p_high <= p_low) maps everything to 0.
pub fn clip_normalize(v: &Volume, p_low: f64, p_high: f64) -> Result<Volume> {
    if !(0.0..=100.0).contains(&p_low) || !(0.0..=100.0).contains(&p_high) || p_low >= p_high {
        return Err(Error::Validation(format!(
            "percentile window [{p_low}, {p_high}] must satisfy 0 <= low < high <= 100"
        )));
    }
    if v.voxels.is_empty() {
        return Err(Error::Validation("cannot normalize an empty volume".into()));
    }
    if v.voxels.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("volume contains non-finite voxels".into()));
    }
    let mut sorted = v.voxels.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = percentile_sorted(&sorted, p_low);
    let hi = percentile_sorted(&sorted, p_high);
    let span = hi - lo;
    let out = if span <= 0.0 {
        vec![0.0f32; v.voxels.len()]
    } else {
        v.voxels
            .iter()
            .map(|&x| (((x as f64 - lo) / span).clamp(0.0, 1.0)) as f32)
            .collect()
    };
    Volume::new(v.dims, v.spacing, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn ramp_volume(dims: [usize; 3]) -> Volume {
        let n = dims[0] * dims[1] * dims[2];
        let voxels = (0..n).map(|i| i as f32).collect();
        Volume::new(dims, [1.0, 1.0, 1.0], voxels).unwrap()
    }

    #[test]
    fn vol_roundtrip_preserves_bytes_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.vol");
        let mut v = ramp_volume([3, 4, 5]);
        v.spacing = [0.5, 1.25, 2.0];
        write_vol(&path, &v).unwrap();
        let back = read_vol(&path).unwrap();
        assert_eq!(v, back);
        // Rewrite is byte-identical.
        let b1 = std::fs::read(&path).unwrap();
        write_vol(&path, &back).unwrap();
        let b2 = std::fs::read(&path).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn vol_rejects_bad_magic_with_offset() {
        let mut v = ramp_volume([2, 2, 2]);
        v.spacing = [1.0; 3];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.vol");
        write_vol(&path, &v).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        match parse_vol(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn vol_rejects_truncated_payload_with_offset() {
        let v = ramp_volume([2, 2, 2]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.vol");
        write_vol(&path, &v).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        match parse_vol(cut) {
            Err(Error::Format { offset, msg }) => {
                assert_eq!(offset, cut.len() as u64);
                assert!(msg.contains("payload"), "{msg}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn vol_rejects_zero_dim_and_bad_spacing() {
        let v = ramp_volume([2, 2, 2]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.vol");
        write_vol(&path, &v).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bytes = good.clone();
        bytes[12..16].copy_from_slice(&0u32.to_le_bytes()); // H = 0
        match parse_vol(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("expected format error, got {other:?}"),
        }

        let mut bytes = good;
        bytes[20..24].copy_from_slice(&(-1.0f32).to_le_bytes());
        match parse_vol(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn resample_identity_when_sizes_match() {
        let v = ramp_volume([4, 4, 4]);
        let r = resample_volume(&v, 4).unwrap();
        assert_eq!(v.voxels, r.voxels);
        assert_eq!(v.spacing, r.spacing);
    }

    #[test]
    fn resample_rejects_extent_one() {
        let v = ramp_volume([1, 4, 4]);
        match resample_volume(&v, 4) {
            Err(Error::Validation(msg)) => assert!(msg.contains("extent 1"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn resample_preserves_physical_extent() {
        let mut v = ramp_volume([8, 4, 6]);
        v.spacing = [1.0, 2.0, 0.5];
        let r = resample_volume(&v, 4).unwrap();
        for a in 0..3 {
            let src_extent = v.dims[a] as f32 * v.spacing[a];
            let dst_extent = r.dims[a] as f32 * r.spacing[a];
            assert!((src_extent - dst_extent).abs() < 1e-6);
        }
    }

    #[test]
    fn resample_matches_brute_force_oracle() {
        // Independent oracle: evaluate the trilinear formula per output voxel
        // straight from the definition, no precomputed axis tables.
        let mut rng = crate::seed::stream_rng(7, "resample-oracle");
        let dims = [5, 7, 6];
        let n = dims[0] * dims[1] * dims[2];
        let voxels: Vec<f32> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let v = Volume::new(dims, [1.0, 1.0, 1.0], voxels).unwrap();
        let t = 4usize;
        let r = resample_volume(&v, t).unwrap();

        let sample_axis = |i: usize, s: usize| -> (usize, usize, f64) {
            let x = ((i as f64 + 0.5) * s as f64 / t as f64 - 0.5).clamp(0.0, (s - 1) as f64);
            let l = x.floor() as usize;
            (l, (l + 1).min(s - 1), x - x.floor())
        };
        for d in 0..t {
            for h in 0..t {
                for w in 0..t {
                    let (d0, d1, fd) = sample_axis(d, dims[0]);
                    let (h0, h1, fh) = sample_axis(h, dims[1]);
                    let (w0, w1, fw) = sample_axis(w, dims[2]);
                    let mut acc = 0.0f64;
                    for (di, wd) in [(d0, 1.0 - fd), (d1, fd)] {
                        for (hi, wh) in [(h0, 1.0 - fh), (h1, fh)] {
                            for (wi, ww) in [(w0, 1.0 - fw), (w1, fw)] {
                                acc += wd * wh * ww * v.at(di, hi, wi) as f64;
                            }
                        }
                    }
                    let got = r.at(d, h, w) as f64;
                    assert!(
                        (got - acc).abs() < 1e-5,
                        "voxel ({d},{h},{w}): got {got}, oracle {acc}"
                    );
                }
            }
        }
    }

    #[test]
    fn resample_constant_volume_stays_constant() {
        let v = Volume::new([6, 6, 6], [1.0; 3], vec![2.5; 216]).unwrap();
        let r = resample_volume(&v, 16).unwrap();
        assert!(r.voxels.iter().all(|&x| (x - 2.5).abs() < 1e-6));
    }

    #[test]
    fn clip_normalize_known_value_on_integer_ramp() {
        // 0..=999: p1 = 9.99, p99 = 989.01 by linear interpolation, so value
        // 500 maps to (500 - 9.99) / (989.01 - 9.99) = 0.500511...
        let v = ramp_volume([10, 10, 10]);
        let n = clip_normalize(&v, 1.0, 99.0).unwrap();
        let got = n.voxels[500];
        assert!((got as f64 - 0.5005112474437627).abs() < 1e-6, "got {got}");
        // Values at or below p1 clamp to 0; at or above p99 clamp to 1.
        assert_eq!(n.voxels[0], 0.0);
        assert_eq!(n.voxels[9], 0.0);
        assert_eq!(n.voxels[999], 1.0);
        assert_eq!(n.voxels[995], 1.0);
    }

    #[test]
    fn clip_normalize_matches_brute_force_oracle() {
        let mut rng = crate::seed::stream_rng(11, "clipnorm-oracle");
        let n = 4096usize;
        let voxels: Vec<f32> = (0..n).map(|_| rng.gen_range(-50.0f32..120.0)).collect();
        let v = Volume::new([16, 16, 16], [1.0; 3], voxels.clone()).unwrap();
        let norm = clip_normalize(&v, 1.0, 99.0).unwrap();

        // Oracle percentile: same definition, independent code path.
        let mut s: Vec<f64> = voxels.iter().map(|&x| x as f64).collect();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pct = |p: f64| -> f64 {
            let r = p / 100.0 * (s.len() - 1) as f64;
            let lo = r.floor() as usize;
            let f = r - lo as f64;
            s[lo] + f * (s[lo.min(s.len() - 2) + 1] - s[lo])
        };
        let (lo, hi) = (pct(1.0), pct(99.0));
        for (i, &x) in voxels.iter().enumerate() {
            let want = ((x as f64 - lo) / (hi - lo)).clamp(0.0, 1.0);
            assert!(
                (norm.voxels[i] as f64 - want).abs() < 1e-6,
                "voxel {i}: got {}, oracle {want}",
                norm.voxels[i]
            );
        }
    }

    #[test]
    fn clip_normalize_output_in_unit_range_and_near_idempotent() {
        let mut rng = crate::seed::stream_rng(13, "clipnorm-idem");
        let voxels: Vec<f32> = (0..4096).map(|_| rng.gen_range(-5.0f32..5.0)).collect();
        let v = Volume::new([16, 16, 16], [1.0; 3], voxels).unwrap();
        let once = clip_normalize(&v, 1.0, 99.0).unwrap();
        assert!(once.voxels.iter().all(|&x| (0.0..=1.0).contains(&x)));
        // Renormalizing shifts values only by the width of the clamped tails,
        // which for a continuous sample is on the order of the inter-order-
        // statistic gap (~1e-4 at n=4096), not float precision.
        let twice = clip_normalize(&once, 1.0, 99.0).unwrap();
        for (a, b) in once.voxels.iter().zip(&twice.voxels) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn clip_normalize_degenerate_window_maps_to_zero() {
        let v = Volume::new([2, 2, 2], [1.0; 3], vec![3.0; 8]).unwrap();
        let n = clip_normalize(&v, 1.0, 99.0).unwrap();
        assert!(n.voxels.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn clip_normalize_rejects_bad_window_and_nonfinite() {
        let v = ramp_volume([2, 2, 2]);
        assert!(matches!(clip_normalize(&v, 99.0, 1.0), Err(Error::Validation(_))));
        assert!(matches!(clip_normalize(&v, -1.0, 50.0), Err(Error::Validation(_))));
        let mut bad = v.clone();
        bad.voxels[3] = f32::NAN;
        assert!(matches!(clip_normalize(&bad, 1.0, 99.0), Err(Error::Numeric(_))));
    }
}
