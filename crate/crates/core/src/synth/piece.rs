use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub onset_frame: usize,
    pub duration_frames: usize,
    pub midi_pitch: u8,
}

impl NoteEvent {
    pub fn end_frame(&self) -> usize {
        self.onset_frame + self.duration_frames
    }
}

const MAJOR_SCALE: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];
const LOWEST: i32 = 21;
const HIGHEST: i32 = 108;

fn degree_to_pitch(degree: i32) -> i32 {
    12 * degree.div_euclid(7) + MAJOR_SCALE[degree.rem_euclid(7) as usize]
}

/// Random diatonic piece. Each voice is a gap-free chain of notes spanning
/// all `n_frames`, so every frame sounds at least one note and a single
/// voice never overlaps itself.
pub fn generate_piece(seed: u64, n_frames: usize, polyphony: usize) -> Result<Vec<NoteEvent>> {
    if n_frames < 16 {
        return Err(Error::Argument(format!("pieces need at least 16 frames, got {n_frames}")));
    }
    if polyphony == 0 {
        return Err(Error::Argument("polyphony must be at least 1".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key = rng.gen_range(0..12);
    let mut events = Vec::new();
    for voice in 0..polyphony {
        // melody around C5, lower voices an octave apart; degrees count from C-1
        let mut degree: i32 = 7 * (6 - voice as i32).max(1) + rng.gen_range(0..7);
        let (min_dur, max_dur) = if voice == 0 { (2, 6) } else { (3, 10) };
        let mut t = 0;
        while t < n_frames {
            let step = [-2, -1, -1, 0, 1, 1, 2][rng.gen_range(0..7)];
            degree += step;
            let mut pitch = degree_to_pitch(degree) + key;
            if !(LOWEST..=HIGHEST).contains(&pitch) {
                degree -= 2 * step;
                pitch = (degree_to_pitch(degree) + key).clamp(LOWEST, HIGHEST);
            }
            let dur = rng.gen_range(min_dur..=max_dur).min(n_frames - t);
            events.push(NoteEvent {
                onset_frame: t,
                duration_frames: dur,
                midi_pitch: pitch as u8,
            });
            t += dur;
        }
    }
    events.sort_by_key(|e| (e.onset_frame, e.midi_pitch));
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_events() {
        assert_eq!(generate_piece(7, 64, 3).unwrap(), generate_piece(7, 64, 3).unwrap());
        assert_ne!(generate_piece(7, 64, 3).unwrap(), generate_piece(8, 64, 3).unwrap());
    }

    #[test]
    fn monophonic_events_do_not_overlap() {
        for seed in 0..20 {
            let ev = generate_piece(seed, 50, 1).unwrap();
            for w in ev.windows(2) {
                assert!(w[0].end_frame() <= w[1].onset_frame);
            }
        }
    }

    #[test]
    fn short_piece_clipped_to_length() {
        let ev = generate_piece(3, 16, 2).unwrap();
        for e in &ev {
            assert!(e.onset_frame < 16);
            assert!(e.end_frame() <= 16);
            assert!(e.duration_frames >= 1);
            assert!((21..=108).contains(&e.midi_pitch));
        }
    }

    #[test]
    fn every_frame_covered() {
        for seed in 0..20 {
            let ev = generate_piece(seed, 40, 2).unwrap();
            for f in 0..40 {
                assert!(ev.iter().any(|e| e.onset_frame <= f && f < e.end_frame()));
            }
        }
    }

    #[test]
    fn too_short_rejected() {
        assert!(generate_piece(0, 15, 1).is_err());
    }
}
