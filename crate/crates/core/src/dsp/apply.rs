use super::{
    apply_gain, apply_pan, butterworth_filter, reverb, sum_tracks, AudioTrack, DspError,
    FilterKind, MultiTrack, ReverbConfig,
};
use crate::aml::{Direction, ManipulationPlan, Transform};
use crate::Scalar;

/// Accompaniment stem that is never a target and always passes through untouched.
pub const ACCOMPANIMENT_STEM: &str = "other";

/// Applies the per-stem DSP function. Reverb output is cut back to the input length.
pub fn apply_transform<T: Scalar>(
    a: &AudioTrack<T>,
    transform: &Transform,
    reverb_cfg: &ReverbConfig,
) -> Result<AudioTrack<T>, DspError> {
    match *transform {
        Transform::Mask | Transform::MaskOthers => Ok(AudioTrack::silence(a.len(), a.sample_rate())),
        Transform::Gain { factor } => apply_gain(a, factor),
        Transform::Pan { side, amount } => apply_pan(a, side, amount),
        Transform::Lowpass { cutoff_hz } => butterworth_filter(a, FilterKind::Lowpass, cutoff_hz),
        Transform::Highpass { cutoff_hz } => {
            butterworth_filter(a, FilterKind::Highpass, cutoff_hz)
        }
        Transform::Reverb { decay_s } => Ok(reverb(a, decay_s, reverb_cfg)?.resized(a.len())),
    }
}

/// Ground-truth edit: `(sum of untouched stems) + (sum of transformed stems)`,
/// each partial sum accumulated in stem order.
///
/// For `MaskOthers` the transformed set is every stem that is neither a target
/// nor the accompaniment stem. Plans with `Direction::Remove` are rejected;
/// callers apply [`ManipulationPlan::forward`] and swap.
pub fn apply_plan<T: Scalar>(
    mt: &MultiTrack<T>,
    plan: &ManipulationPlan,
    reverb_cfg: &ReverbConfig,
) -> Result<AudioTrack<T>, DspError> {
    if plan.direction == Direction::Remove {
        return Err(DspError::RemoveDirection);
    }
    if mt.is_empty() {
        return Err(DspError::EmptyMultiTrack);
    }
    for t in &plan.targets {
        if !mt.contains(t) {
            return Err(DspError::UnknownTarget(t.clone()));
        }
    }
    let is_target = |name: &str| plan.targets.iter().any(|t| t == name);
    let transformed = |name: &str| match plan.transform {
        Transform::MaskOthers => !is_target(name) && name != ACCOMPANIMENT_STEM,
        _ => is_target(name),
    };
    let len = mt.num_samples();
    let sr = mt.sample_rate().expect("non-empty");

    let kept = sum_tracks(
        len,
        sr,
        mt.iter().filter(|(n, _)| !transformed(n)).map(|(_, t)| t),
    )?;
    let edited: Vec<AudioTrack<T>> = mt
        .iter()
        .filter(|(n, _)| transformed(n))
        .map(|(_, t)| apply_transform(t, &plan.transform, reverb_cfg))
        .collect::<Result<_, _>>()?;
    let edited = sum_tracks(len, sr, edited.iter())?;
    kept.try_add(&edited)
}
