//! Objective distortion measures between a reference and a rendered utterance.
//!
//! * MCD: `(10 / ln 10) * mean over the DTW path of sqrt(2 * sum_d (c_d - c'_d)^2)`,
//!   cepstra exclude `c0`.
//! * Pitch / energy distortion: RMSE along the DTW path on `(f0, energy)`;
//!   pitch only over mutually voiced frames.
//! * Frame disturbance: RMS distance of the DTW path from the diagonal.

use std::f64::consts::LN_10;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::renderer::ProsodyContour;
use crate::signal::FrameTrack;

pub const CEPSTRA_DIM: usize = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CepstraSeq {
    frames: Vec<Vec<f64>>,
}

impl CepstraSeq {
    pub fn new(frames: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = frames.first() {
            let d = first.len();
            if let Some(f) = frames.iter().find(|f| f.len() != d) {
                return Err(Error::Dim {
                    expected: d,
                    got: f.len(),
                });
            }
        }
        if frames.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("cepstra must be finite".into()));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }
}

/// Monotone alignment from `(0, 0)` to `(Ta - 1, Tb - 1)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DtwPath(pub Vec<(usize, usize)>);

impl DtwPath {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Minimum-cost monotone path with steps (1,1), (1,0), (0,1). Ties on the
/// backtrack prefer the diagonal, then (1,0), then (0,1).
pub fn dtw(cost: &[Vec<f64>]) -> Result<(DtwPath, f64)> {
    let ta = cost.len();
    let tb = cost.first().map_or(0, Vec::len);
    if ta == 0 || tb == 0 {
        return Err(Error::InvalidInput("empty cost matrix".into()));
    }
    if cost.iter().any(|r| r.len() != tb) {
        return Err(Error::InvalidInput("ragged cost matrix".into()));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("non-finite cost".into()));
    }
    let mut acc = vec![vec![f64::INFINITY; tb]; ta];
    for i in 0..ta {
        for j in 0..tb {
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let mut best = f64::INFINITY;
                if i > 0 && j > 0 {
                    best = best.min(acc[i - 1][j - 1]);
                }
                if i > 0 {
                    best = best.min(acc[i - 1][j]);
                }
                if j > 0 {
                    best = best.min(acc[i][j - 1]);
                }
                best
            };
            acc[i][j] = prev + cost[i][j];
        }
    }
    let (mut i, mut j) = (ta - 1, tb - 1);
    let mut path = vec![(i, j)];
    while (i, j) != (0, 0) {
        let mut best: Option<((usize, usize), f64)> = None;
        let candidates = [
            (i > 0 && j > 0).then(|| (i - 1, j - 1)),
            (i > 0).then(|| (i - 1, j)),
            (j > 0).then(|| (i, j - 1)),
        ];
        for (ci, cj) in candidates.into_iter().flatten() {
            let v = acc[ci][cj];
            if best.is_none_or(|(_, b)| v < b) {
                best = Some(((ci, cj), v));
            }
        }
        (i, j) = best.expect("some predecessor exists").0;
        path.push((i, j));
    }
    path.reverse();
    Ok((DtwPath(path), acc[ta - 1][tb - 1]))
}

/// Pairwise cost matrix between two sequences.
pub fn cost_matrix<T>(a: &[T], b: &[T], dist: impl Fn(&T, &T) -> f64) -> Vec<Vec<f64>> {
    a.iter().map(|x| b.iter().map(|y| dist(x, y)).collect()).collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// MCD in dB together with the alignment it was measured on.
pub fn mcd_with_path(a: &CepstraSeq, b: &CepstraSeq) -> Result<(f64, DtwPath)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("empty cepstral sequence".into()));
    }
    if a.dim() != b.dim() {
        return Err(Error::Dim {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (path, _) = dtw(&cost_matrix(&a.frames, &b.frames, |x, y| euclid(x, y)))?;
    let k = 10.0 / LN_10;
    let total: f64 = path
        .0
        .iter()
        .map(|&(i, j)| k * (2.0 * euclid(&a.frames[i], &b.frames[j]).powi(2)).sqrt())
        .sum();
    Ok((total / path.len() as f64, path))
}

pub fn mcd(a: &CepstraSeq, b: &CepstraSeq) -> Result<f64> {
    mcd_with_path(a, b).map(|(v, _)| v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distortion {
    /// `None` when no aligned frame pair is voiced on both sides.
    pub pitch_rmse_hz: Option<f64>,
    pub energy_rmse: f64,
    pub path: DtwPath,
}

pub fn pitch_energy_distortion(a: &FrameTrack, b: &FrameTrack) -> Result<Distortion> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("empty frame track".into()));
    }
    let fa: Vec<[f64; 2]> = a.f0.iter().zip(&a.energy).map(|(f, e)| [*f, *e]).collect();
    let fb: Vec<[f64; 2]> = b.f0.iter().zip(&b.energy).map(|(f, e)| [*f, *e]).collect();
    let (path, _) = dtw(&cost_matrix(&fa, &fb, |x, y| euclid(x, y)))?;
    let mut pitch_sq = 0.0;
    let mut voiced = 0usize;
    let mut energy_sq = 0.0;
    for &(i, j) in &path.0 {
        if a.f0[i] > 0.0 && b.f0[j] > 0.0 {
            pitch_sq += (a.f0[i] - b.f0[j]).powi(2);
            voiced += 1;
        }
        energy_sq += (a.energy[i] - b.energy[j]).powi(2);
    }
    Ok(Distortion {
        pitch_rmse_hz: (voiced > 0).then(|| (pitch_sq / voiced as f64).sqrt()),
        energy_rmse: (energy_sq / path.len() as f64).sqrt(),
        path,
    })
}

pub fn frame_disturbance(path: &DtwPath) -> f64 {
    if path.is_empty() {
        return 0.0;
    }
    let sq: f64 = path.0.iter().map(|&(i, j)| (i as f64 - j as f64).powi(2)).sum();
    (sq / path.len() as f64).sqrt()
}

/// Fixed linear map from per-frame `(pitch_log_hz, energy_log)` to 13
/// pseudo-cepstral coefficients.
pub fn cepstra_from_contour(c: &ProsodyContour) -> CepstraSeq {
    let (pitch, energy) = c.expand();
    let frames = pitch
        .iter()
        .zip(&energy)
        .map(|(p, e)| {
            (0..CEPSTRA_DIM)
                .map(|d| {
                    let k = (d + 1) as f64;
                    (0.9 * k).cos() * p + ((0.6 * k).sin() + 0.5) * e
                })
                .collect()
        })
        .collect();
    CepstraSeq { frames }
}

/// One row of the objective evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScores {
    pub id: String,
    pub mcd: f64,
    pub pitch: Option<f64>,
    pub energy: f64,
    pub fd: f64,
}

/// Compare a rendered contour with its reference.
pub fn score_contours(id: &str, reference: &ProsodyContour, rendered: &ProsodyContour) -> Result<ItemScores> {
    let (mcd, path) = mcd_with_path(&cepstra_from_contour(reference), &cepstra_from_contour(rendered))?;
    let dist = pitch_energy_distortion(&reference.to_frame_track(), &rendered.to_frame_track())?;
    Ok(ItemScores {
        id: id.to_string(),
        mcd,
        pitch: dist.pitch_rmse_hz,
        energy: dist.energy_rmse,
        fd: frame_disturbance(&path),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Population statistics; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: Vec<ItemScores>,
    pub mcd: Option<MeanStd>,
    pub pitch: Option<MeanStd>,
    pub energy: Option<MeanStd>,
    pub fd: Option<MeanStd>,
}

impl EvalReport {
    pub fn new(items: Vec<ItemScores>) -> Self {
        let col = |f: &dyn Fn(&ItemScores) -> Option<f64>| MeanStd::of(&items.iter().filter_map(f).collect::<Vec<_>>());
        Self {
            mcd: col(&|s| Some(s.mcd)),
            pitch: col(&|s| s.pitch),
            energy: col(&|s| Some(s.energy)),
            fd: col(&|s| Some(s.fd)),
            items,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-item rows followed by `mean` and `std` rows.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["id", "mcd", "pitch", "energy", "fd"]).map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.items {
            w.write_record([s.id.clone(), s.mcd.to_string(), opt(s.pitch), s.energy.to_string(), s.fd.to_string()])
                .map_err(csv_err)?;
        }
        let cols = [self.mcd, self.pitch, self.energy, self.fd];
        w.write_record(std::iter::once("mean".to_string()).chain(cols.iter().map(|c| opt(c.map(|m| m.mean)))))
            .map_err(csv_err)?;
        w.write_record(std::iter::once("std".to_string()).chain(cols.iter().map(|c| opt(c.map(|m| m.std)))))
            .map_err(csv_err)?;
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}
