//! Face-landmark tracks and motion-vector features.
//!
//! Landmark detection happens offline; this module ingests 68-point tracks
//! from CSV, upsamples them to the spectrogram frame rate, and emits
//! per-speaker normalized motion vectors.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::Grid;
use crate::scalar::Scalar;

/// Number of landmark points per frame.
pub const LANDMARK_POINTS: usize = 68;
/// Flattened coordinate count (x, y per point).
pub const FEATURE_DIM: usize = 2 * LANDMARK_POINTS;
/// Spectrogram frame rate the features are aligned to.
pub const TARGET_FPS: f64 = 100.0;
/// Maximum tolerated length gap between features and spectrogram frames.
pub const ALIGN_TOLERANCE: usize = 12;

const STD_FLOOR: f64 = 1e-8;

/// N x 136 grid of x,y pixel coordinates at a source frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkTrack<T> {
    frames: Grid<T>,
    fps: f64,
}

impl<T: Scalar> LandmarkTrack<T> {
    pub fn new(frames: Grid<T>, fps: f64) -> Result<Self> {
        if fps <= 0.0 {
            return Err(CoreError::InvalidArgument(format!("fps must be > 0, got {fps}")));
        }
        if frames.cols() != FEATURE_DIM {
            return Err(CoreError::dims("landmark coords", frames.cols(), FEATURE_DIM));
        }
        if frames.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("landmark coordinate".into()));
        }
        Ok(LandmarkTrack { frames, fps })
    }

    pub fn frames(&self) -> &Grid<T> {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }
}

/// T x 136 motion-vector sequence at [`TARGET_FPS`]; the first frame is
/// zero by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeq<T> {
    grid: Grid<T>,
}

impl<T: Scalar> FeatureSeq<T> {
    pub fn from_grid(grid: Grid<T>) -> Result<Self> {
        if grid.cols() != FEATURE_DIM {
            return Err(CoreError::dims("feature dim", grid.cols(), FEATURE_DIM));
        }
        Ok(FeatureSeq { grid })
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.rows() == 0
    }
}

/// Per-dimension feature statistics for one speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Serialize + serde::de::DeserializeOwned")]
pub struct FeatureStats<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
    pub n_frames: usize,
}

// ---------------------------------------------------------------------------
// CSV i/o
// ---------------------------------------------------------------------------

/// Parses the landmark CSV format: a `# fps=<float>` header line followed
/// by rows of `frame_index,x0,y0,...,x67,y67` (137 numeric fields).
pub fn parse_landmarks<T: Scalar>(path: impl AsRef<Path>) -> Result<LandmarkTrack<T>> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    parse_landmarks_from(reader)
}

pub fn parse_landmarks_from<T: Scalar>(reader: impl BufRead) -> Result<LandmarkTrack<T>> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| CoreError::LandmarkParse("empty file".into()))??;
    let fps = header
        .trim()
        .strip_prefix("# fps=")
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| {
            CoreError::LandmarkParse(format!("expected '# fps=<float>' header, got '{header}'"))
        })?;

    let mut rows: Vec<Vec<T>> = Vec::new();
    let mut last_index: Option<i64> = None;
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != FEATURE_DIM + 1 {
            return Err(CoreError::LandmarkParse(format!(
                "line {}: expected {} coordinates, got {}",
                lineno + 2,
                FEATURE_DIM,
                fields.len().saturating_sub(1)
            )));
        }
        let index: i64 = fields[0].parse().map_err(|_| {
            CoreError::LandmarkParse(format!("line {}: bad frame index '{}'", lineno + 2, fields[0]))
        })?;
        if let Some(prev) = last_index {
            if index <= prev {
                return Err(CoreError::LandmarkParse(format!(
                    "line {}: non-monotonic frame index {} after {}",
                    lineno + 2,
                    index,
                    prev
                )));
            }
        }
        last_index = Some(index);
        let mut row = Vec::with_capacity(FEATURE_DIM);
        for field in &fields[1..] {
            let v: f64 = field.parse().map_err(|_| {
                CoreError::LandmarkParse(format!("line {}: bad coordinate '{field}'", lineno + 2))
            })?;
            row.push(T::from_f64_lossy(v));
        }
        rows.push(row);
    }

    LandmarkTrack::new(Grid::from_rows(&rows), fps)
}

pub fn write_landmarks<T: Scalar>(track: &LandmarkTrack<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    writeln!(out, "# fps={}", track.fps())?;
    for (i, row) in track.frames().iter_rows().enumerate() {
        write!(out, "{i}")?;
        for v in row {
            write!(out, ",{}", v.to_f64_lossy())?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Linear interpolation of the track onto the `target_fps` timeline.
/// Output frame k sits at time k/target_fps; the output spans the source
/// duration [0, (N-1)/fps], and positions past the last source frame clamp
/// to it.
pub fn upsample_track<T: Scalar>(track: &LandmarkTrack<T>, target_fps: f64) -> Result<LandmarkTrack<T>> {
    if track.len() < 2 {
        return Err(CoreError::InvalidArgument(
            "need at least 2 frames to upsample".into(),
        ));
    }
    if target_fps < track.fps() {
        return Err(CoreError::InvalidArgument(format!(
            "target fps {} below source fps {}",
            target_fps,
            track.fps()
        )));
    }
    let n = track.len();
    let duration = (n - 1) as f64 / track.fps();
    let out_frames = (duration * target_fps).floor() as usize + 1;

    let mut rows = Vec::with_capacity(out_frames);
    for k in 0..out_frames {
        let src = k as f64 / target_fps * track.fps();
        let i0 = (src.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        let frac = T::from_f64_lossy(src - i0 as f64);
        let a = track.frames().row(i0);
        let b = track.frames().row(i1);
        let row: Vec<T> = a
            .iter()
            .zip(b)
            .map(|(&x0, &x1)| x0 + (x1 - x0) * frac)
            .collect();
        rows.push(row);
    }
    LandmarkTrack::new(Grid::from_rows(&rows), target_fps)
}

/// Frame-to-frame differences; frame 0 is the zero vector. The track must
/// already be at the spectrogram frame rate.
pub fn motion_vectors<T: Scalar>(track: &LandmarkTrack<T>) -> Result<FeatureSeq<T>> {
    if (track.fps() - TARGET_FPS).abs() > 1e-9 {
        return Err(CoreError::InvalidArgument(format!(
            "motion vectors expect a {TARGET_FPS} fps track, got {}",
            track.fps()
        )));
    }
    let n = track.len();
    let mut grid = Grid::from_elem(n, FEATURE_DIM, T::zero());
    for t in 1..n {
        let prev = track.frames().row(t - 1).to_vec();
        let cur = track.frames().row(t).to_vec();
        let row = grid.row_mut(t);
        for (i, v) in row.iter_mut().enumerate() {
            *v = cur[i] - prev[i];
        }
    }
    Ok(FeatureSeq { grid })
}

/// Pooled per-dimension mean and population std over a speaker's sequences.
pub fn compute_feature_stats<T: Scalar>(seqs: &[FeatureSeq<T>]) -> Result<FeatureStats<T>> {
    let n_frames: usize = seqs.iter().map(|s| s.len()).sum();
    if n_frames == 0 {
        return Err(CoreError::InvalidArgument("no feature frames".into()));
    }
    let count = T::from_usize_lossy(n_frames);
    let mut mean = vec![T::zero(); FEATURE_DIM];
    for s in seqs {
        for row in s.grid().iter_rows() {
            for (i, &v) in row.iter().enumerate() {
                mean[i] += v;
            }
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut var = [T::zero(); FEATURE_DIM];
    for s in seqs {
        for row in s.grid().iter_rows() {
            for (i, &v) in row.iter().enumerate() {
                let d = v - mean[i];
                var[i] += d * d;
            }
        }
    }
    let std = var.iter().map(|&v| (v / count).sqrt()).collect();
    Ok(FeatureStats {
        mean,
        std,
        n_frames,
    })
}

/// Per-dimension z-scoring. Note the zero first frame becomes -mean/std.
pub fn normalize_features<T: Scalar>(
    seq: &FeatureSeq<T>,
    stats: &FeatureStats<T>,
) -> Result<FeatureSeq<T>> {
    if stats.mean.len() != FEATURE_DIM {
        return Err(CoreError::dims("feature stats dim", stats.mean.len(), FEATURE_DIM));
    }
    let floor = T::from_f64_lossy(STD_FLOOR);
    let mut grid = seq.grid().clone();
    for t in 0..grid.rows() {
        let row = grid.row_mut(t);
        for (i, v) in row.iter_mut().enumerate() {
            *v = (*v - stats.mean[i]) / stats.std[i].max(floor);
        }
    }
    Ok(FeatureSeq { grid })
}

pub fn denormalize_features<T: Scalar>(
    seq: &FeatureSeq<T>,
    stats: &FeatureStats<T>,
) -> Result<FeatureSeq<T>> {
    if stats.mean.len() != FEATURE_DIM {
        return Err(CoreError::dims("feature stats dim", stats.mean.len(), FEATURE_DIM));
    }
    let floor = T::from_f64_lossy(STD_FLOOR);
    let mut grid = seq.grid().clone();
    for t in 0..grid.rows() {
        let row = grid.row_mut(t);
        for (i, v) in row.iter_mut().enumerate() {
            *v = *v * stats.std[i].max(floor) + stats.mean[i];
        }
    }
    Ok(FeatureSeq { grid })
}

/// Reconciles the feature length with the paired spectrogram's frame count
/// by truncating or zero-padding at the end. Gaps beyond
/// [`ALIGN_TOLERANCE`] frames signal desynchronized inputs and error out.
pub fn align_lengths<T: Scalar>(seq: &FeatureSeq<T>, spec_frames: usize) -> Result<FeatureSeq<T>> {
    let len = seq.len();
    let gap = len.abs_diff(spec_frames);
    if gap > ALIGN_TOLERANCE {
        return Err(CoreError::InvalidArgument(format!(
            "feature/spectrogram length gap too large: {len} vs {spec_frames}"
        )));
    }
    if len == spec_frames {
        return Ok(seq.clone());
    }
    let mut grid = Grid::from_elem(spec_frames, FEATURE_DIM, T::zero());
    for t in 0..spec_frames.min(len) {
        grid.row_mut(t).copy_from_slice(seq.grid().row(t));
    }
    Ok(FeatureSeq { grid })
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn track_from_x(xs: &[f64], fps: f64) -> LandmarkTrack<f64> {
        // Puts the scalar in coordinate 0 and zeros elsewhere.
        let rows: Vec<Vec<f64>> = xs
            .iter()
            .map(|&x| {
                let mut row = vec![0.0; FEATURE_DIM];
                row[0] = x;
                row
            })
            .collect();
        LandmarkTrack::new(Grid::from_rows(&rows), fps).unwrap()
    }

    #[test]
    fn csv_round_trip_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..FEATURE_DIM).map(|j| i as f64 * 0.5 + j as f64 * 0.25).collect())
            .collect();
        let track = LandmarkTrack::new(Grid::from_rows(&rows), 25.0).unwrap();
        write_landmarks(&track, &path).unwrap();
        let back: LandmarkTrack<f64> = parse_landmarks(&path).unwrap();
        assert_eq!(back, track);
    }

    #[test]
    fn csv_two_rows_parse() {
        let mut text = String::from("# fps=25\n");
        for i in 0..2 {
            text.push_str(&i.to_string());
            for _ in 0..FEATURE_DIM {
                text.push_str(",1.5");
            }
            text.push('\n');
        }
        let track: LandmarkTrack<f64> =
            parse_landmarks_from(std::io::Cursor::new(text)).unwrap();
        assert_eq!(track.len(), 2);
        assert_eq!(track.fps(), 25.0);
    }

    #[test]
    fn csv_wrong_column_count_errors() {
        let mut text = String::from("# fps=25\n0");
        for _ in 0..FEATURE_DIM - 1 {
            text.push_str(",1.0");
        }
        text.push('\n');
        let err = parse_landmarks_from::<f64>(std::io::Cursor::new(text)).unwrap_err();
        assert!(err.to_string().contains("expected 136 coordinates"), "{err}");
    }

    #[test]
    fn csv_non_monotonic_index_errors() {
        let mut text = String::from("# fps=25\n");
        for idx in [0, 2, 1] {
            text.push_str(&idx.to_string());
            for _ in 0..FEATURE_DIM {
                text.push_str(",0");
            }
            text.push('\n');
        }
        let err = parse_landmarks_from::<f64>(std::io::Cursor::new(text)).unwrap_err();
        assert!(err.to_string().contains("non-monotonic"), "{err}");
    }

    #[test]
    fn upsample_hand_linear_case() {
        // One coordinate moving 0 -> 4 over one 25 fps interval becomes
        // 0,1,2,3,4 at 100 fps.
        let track = track_from_x(&[0.0, 4.0], 25.0);
        let up = upsample_track(&track, 100.0).unwrap();
        assert_eq!(up.len(), 5);
        for (k, expect) in [0.0, 1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            assert!((up.frames().at(k, 0) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_constant_track() {
        let track = track_from_x(&[2.0, 2.0, 2.0], 25.0);
        let up = upsample_track(&track, 100.0).unwrap();
        assert_eq!(up.len(), 9);
        assert!(up.frames().as_slice().chunks(FEATURE_DIM).all(|r| r[0] == 2.0));
    }

    #[test]
    fn upsample_ntsc_frame_count() {
        for n in [2usize, 10, 75, 299] {
            let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let track = track_from_x(&xs, 29.97);
            let up = upsample_track(&track, 100.0).unwrap();
            let expect = ((n - 1) as f64 / 29.97 * 100.0).floor() as usize + 1;
            assert_eq!(up.len(), expect, "n={n}");
        }
    }

    #[test]
    fn upsample_preserves_endpoints() {
        let track = track_from_x(&[1.0, 7.0, 3.0], 25.0);
        let up = upsample_track(&track, 100.0).unwrap();
        assert_eq!(up.frames().at(0, 0), 1.0);
        assert!((up.frames().at(up.len() - 1, 0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn upsample_needs_two_frames() {
        let track = track_from_x(&[1.0], 25.0);
        assert!(upsample_track(&track, 100.0).is_err());
    }

    #[test]
    fn upsample_rejects_downsampling() {
        let track = track_from_x(&[0.0, 1.0], 100.0);
        assert!(upsample_track(&track, 25.0).is_err());
    }

    #[test]
    fn motion_static_face_is_zero() {
        let track = track_from_x(&[5.0; 8], 100.0);
        let f = motion_vectors(&track).unwrap();
        assert!(f.grid().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn motion_constant_velocity() {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                (0..FEATURE_DIM)
                    .map(|j| if j % 2 == 0 { i as f64 } else { 3.0 })
                    .collect()
            })
            .collect();
        let track = LandmarkTrack::new(Grid::from_rows(&rows), 100.0).unwrap();
        let f = motion_vectors(&track).unwrap();
        assert!(f.grid().row(0).iter().all(|&v| v == 0.0));
        for t in 1..4 {
            for (j, &v) in f.grid().row(t).iter().enumerate() {
                let expect = if j % 2 == 0 { 1.0 } else { 0.0 };
                assert_eq!(v, expect);
            }
        }
    }

    #[test]
    fn motion_matches_direct_subtraction() {
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..FEATURE_DIM).map(|j| ((i * 31 + j * 7) % 13) as f64 * 0.3).collect())
            .collect();
        let track = LandmarkTrack::new(Grid::from_rows(&rows), 100.0).unwrap();
        let f = motion_vectors(&track).unwrap();
        for t in 1..3 {
            for j in 0..FEATURE_DIM {
                assert_eq!(f.grid().at(t, j), rows[t][j] - rows[t - 1][j]);
            }
        }
    }

    #[test]
    fn motion_translation_invariance() {
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..FEATURE_DIM).map(|j| (i + j) as f64 * 0.1).collect())
            .collect();
        let shifted: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|v| v + 42.0).collect())
            .collect();
        let a = motion_vectors(&LandmarkTrack::new(Grid::from_rows(&rows), 100.0).unwrap()).unwrap();
        let b =
            motion_vectors(&LandmarkTrack::new(Grid::from_rows(&shifted), 100.0).unwrap()).unwrap();
        for (x, y) in a.grid().as_slice().iter().zip(b.grid().as_slice()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn feature_normalization_round_trip() {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..FEATURE_DIM).map(|j| (i as f64 - 2.5) * (j as f64 + 1.0) * 0.01).collect())
            .collect();
        let seq = FeatureSeq::from_grid(Grid::from_rows(&rows)).unwrap();
        let stats = compute_feature_stats(std::slice::from_ref(&seq)).unwrap();
        let n = normalize_features(&seq, &stats).unwrap();
        let back = denormalize_features(&n, &stats).unwrap();
        for (a, b) in back.grid().as_slice().iter().zip(seq.grid().as_slice()) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn feature_normalize_hand_two_frames() {
        let mut r0 = vec![0.0; FEATURE_DIM];
        let mut r1 = vec![0.0; FEATURE_DIM];
        r0[3] = 1.0;
        r1[3] = 3.0;
        let seq = FeatureSeq::from_grid(Grid::from_rows(&[r0, r1])).unwrap();
        let stats = compute_feature_stats(std::slice::from_ref(&seq)).unwrap();
        // mean 2, population std 1 in dim 3.
        assert_eq!(stats.mean[3], 2.0);
        assert_eq!(stats.std[3], 1.0);
        let n = normalize_features(&seq, &stats).unwrap();
        assert_eq!(n.grid().at(0, 3), -1.0);
        assert_eq!(n.grid().at(1, 3), 1.0);
    }

    #[test]
    fn align_truncates_and_pads() {
        let seq = FeatureSeq::from_grid(Grid::from_elem(10, FEATURE_DIM, 1.0)).unwrap();
        assert_eq!(align_lengths(&seq, 10).unwrap(), seq);

        let shorter = align_lengths(&seq, 7).unwrap();
        assert_eq!(shorter.len(), 7);
        assert!(shorter.grid().as_slice().iter().all(|&v| v == 1.0));

        let longer = align_lengths(&seq, 12).unwrap();
        assert_eq!(longer.len(), 12);
        assert!(longer.grid().row(10).iter().all(|&v| v == 0.0));
        assert!(longer.grid().row(11).iter().all(|&v| v == 0.0));

        assert!(align_lengths(&seq, 23).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn prop_motion_telescopes_back_to_track(
            xs in proptest::collection::vec(-50.0f64..50.0, 2..20)
        ) {
            let track = track_from_x(&xs, 100.0);
            let f = motion_vectors(&track).unwrap();
            // Cumulative sum of deltas plus the first position recovers the track.
            let mut acc = track.frames().at(0, 0);
            for t in 1..track.len() {
                acc += f.grid().at(t, 0);
                prop_assert!((acc - track.frames().at(t, 0)).abs() < 1e-9);
            }
        }
    }
}
