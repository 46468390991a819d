/// Posteriors are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// The target actually scored: a `1` only counts inside a positive utterance.
pub fn effective_target(y: u8, positive_utt: bool) -> u8 {
    u8::from(positive_utt && y == 1)
}

/// One frame's term: `1[u in P] * y * log(1/q) + (1 - y) * log(1/(1 - q))`,
/// with `y` read through [`effective_target`] so that targets inside
/// negative utterances always score as background.
pub fn frame_loss(q_ww: f64, y: u8, positive_utt: bool) -> f64 {
    let q = q_ww.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if effective_target(y, positive_utt) == 1 {
        -q.ln()
    } else {
        -(1.0 - q).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub sum: f64,
    pub frames: usize,
}

impl LossValue {
    pub fn mean(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.sum / self.frames as f64
        }
    }
}

/// Summed loss over frames (see [`frame_loss`]).
pub fn ssl_loss(q_ww: &[f64], targets: &[u8], positive_utt: &[bool]) -> LossValue {
    assert_eq!(q_ww.len(), targets.len(), "posteriors and targets differ in length");
    assert_eq!(q_ww.len(), positive_utt.len(), "posteriors and polarities differ in length");
    let sum = q_ww
        .iter()
        .zip(targets)
        .zip(positive_utt)
        .map(|((&q, &y), &p)| frame_loss(q, y, p))
        .sum();
    LossValue { sum, frames: q_ww.len() }
}
