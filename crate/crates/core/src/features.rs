//! Style descriptors computed from a piano-roll grid.
//!
//! A track function is a pair of onset histograms: one over pitch (normalised
//! by the number of steps) and one over time (normalised by the number of
//! pitches). Durations never enter these features, only onset positions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{Grid, PITCHES, STEPS};

/// Cap used to normalise the per-step onset count.
pub const VOICE_CAP: f32 = 16.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFunction {
    pub pitch: Vec<f32>,
    pub time: Vec<f32>,
}

impl TrackFunction {
    pub fn zeros() -> Self {
        TrackFunction {
            pitch: vec![0.0; PITCHES],
            time: vec![0.0; STEPS],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.pitch.iter().chain(&self.time).all(|&v| v == 0.0)
    }

    /// `[pitch; time]`, the vector compared by [`mixture_similarity`].
    pub fn concat(&self) -> Vec<f32> {
        let mut v = self.pitch.clone();
        v.extend_from_slice(&self.time);
        v
    }
}

pub fn track_function(grid: &Grid) -> TrackFunction {
    let mut f = TrackFunction::zeros();
    for note in grid.notes() {
        f.pitch[note.pitch as usize] += 1.0;
        f.time[note.onset as usize] += 1.0;
    }
    for v in &mut f.pitch {
        *v /= STEPS as f32;
    }
    for v in &mut f.time {
        *v /= PITCHES as f32;
    }
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxFeatures {
    pub pitch_centre: Vec<f32>,
    pub voice_intensity: Vec<f32>,
    pub rhythm: Vec<f32>,
}

impl AuxFeatures {
    pub fn zeros() -> Self {
        AuxFeatures {
            pitch_centre: vec![0.0; STEPS],
            voice_intensity: vec![0.0; STEPS],
            rhythm: vec![0.0; STEPS],
        }
    }

    /// Row-major `[step][pitch_centre, voice_intensity, rhythm]`.
    pub fn interleaved(&self) -> Vec<f32> {
        (0..STEPS)
            .flat_map(|t| [self.pitch_centre[t], self.voice_intensity[t], self.rhythm[t]])
            .collect()
    }

    pub fn from_interleaved(values: &[f32]) -> Self {
        let mut a = AuxFeatures::zeros();
        for t in 0..STEPS {
            a.pitch_centre[t] = values[3 * t];
            a.voice_intensity[t] = values[3 * t + 1];
            a.rhythm[t] = values[3 * t + 2];
        }
        a
    }

    /// Mean pitch centre over steps that carry an onset.
    pub fn mean_pitch_centre(&self) -> Option<f32> {
        let active: Vec<f32> = (0..STEPS)
            .filter(|&t| self.rhythm[t] > 0.5)
            .map(|t| self.pitch_centre[t])
            .collect();
        (!active.is_empty()).then(|| active.iter().sum::<f32>() / active.len() as f32)
    }
}

pub fn aux_features(grid: &Grid) -> AuxFeatures {
    let mut sum = [0u32; STEPS];
    let mut count = [0u32; STEPS];
    for note in grid.notes() {
        sum[note.onset as usize] += note.pitch as u32;
        count[note.onset as usize] += 1;
    }
    let mut a = AuxFeatures::zeros();
    for t in 0..STEPS {
        if count[t] > 0 {
            a.pitch_centre[t] = sum[t] as f32 / count[t] as f32 / 127.0;
            a.voice_intensity[t] = (count[t] as f32 / VOICE_CAP).min(1.0);
            a.rhythm[t] = 1.0;
        }
    }
    a
}

/// Cosine similarity of two mixtures' concatenated functions.
///
/// Both zero is an error. If only one side is zero the vectors share no
/// direction and the result is 0.
pub fn mixture_similarity(a: &TrackFunction, b: &TrackFunction) -> Result<f64> {
    let (va, vb) = (a.concat(), b.concat());
    let dot: f64 = va.iter().zip(&vb).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = va.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = vb.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    match (na > 0.0, nb > 0.0) {
        (false, false) => Err(Error::UndefinedSimilarity),
        (true, true) => Ok((dot / (na * nb)).clamp(0.0, 1.0)),
        _ => Ok(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::Note;

    #[test]
    fn repeated_pitch_function() {
        let g = Grid::from_notes((0..32).map(|t| Note::new(60, t, 1))).unwrap();
        let f = track_function(&g);
        assert_eq!(f.pitch[60], 1.0);
        assert_eq!(f.pitch.iter().filter(|&&v| v != 0.0).count(), 1);
        assert!(f.time.iter().all(|&v| v == 1.0 / 128.0));
    }

    #[test]
    fn empty_track_function() {
        let f = track_function(&Grid::empty());
        assert!(f.is_zero());
        assert_eq!(aux_features(&Grid::empty()), AuxFeatures::zeros());
    }

    #[test]
    fn aux_of_a_dyad() {
        let g = Grid::from_notes([Note::new(60, 0, 2), Note::new(64, 0, 2)]).unwrap();
        let a = aux_features(&g);
        assert_eq!(a.pitch_centre[0], 62.0 / 127.0);
        assert_eq!(a.voice_intensity[0], 2.0 / 16.0);
        assert_eq!(a.rhythm[0], 1.0);
        assert_eq!((a.pitch_centre[1], a.voice_intensity[1], a.rhythm[1]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn voice_intensity_caps_at_one() {
        let g = Grid::from_notes((0..16).map(|i| Note::new(40 + i, 5, 1))).unwrap();
        assert_eq!(aux_features(&g).voice_intensity[5], 1.0);
        let g = Grid::from_notes((0..20).map(|i| Note::new(40 + i, 5, 1))).unwrap();
        assert_eq!(aux_features(&g).voice_intensity[5], 1.0);
    }

    #[test]
    fn similarity_edge_cases() {
        let a = track_function(&Grid::from_notes([Note::new(60, 0, 1)]).unwrap());
        assert!((mixture_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let mut p = TrackFunction::zeros();
        p.pitch[10] = 0.5;
        let mut q = TrackFunction::zeros();
        q.time[3] = 0.25;
        assert_eq!(mixture_similarity(&p, &q).unwrap(), 0.0);
        let z = TrackFunction::zeros();
        assert!(matches!(mixture_similarity(&z, &z), Err(Error::UndefinedSimilarity)));
        assert_eq!(mixture_similarity(&a, &z).unwrap(), 0.0);
    }
}
