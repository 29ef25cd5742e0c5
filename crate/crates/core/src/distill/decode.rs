use super::loss::MetaLoss;
use super::payload::SyntheticPayload;
use crate::error::{Error, Result};
use crate::nn::{ArchDescriptor, GradTape, LeafGrads, ModelParams};

/// Records the decode unroll for `payload` starting at `w0`.
///
/// Client-side fitting and server-side decoding both go through this function,
/// which is what makes their results bit-identical.
pub(crate) fn record<'a>(
    payload: &'a SyntheticPayload,
    w0: &'a ModelParams,
) -> Result<GradTape<'a, ArchDescriptor>> {
    if payload.arch() != w0.arch() {
        return Err(Error::Shape(
            "payload architecture differs from the model it is decoded against".into(),
        ));
    }
    let mut tape = GradTape::new(w0.arch(), w0.values())?;
    let leaves = payload
        .batches()
        .iter()
        .map(|b| tape.leaf(&b.x, &b.y, b.eta))
        .collect::<Result<Vec<_>>>()?;
    for &k in payload.schedule() {
        tape.step(leaves[k])?;
    }
    tape.finish(payload.h())?;
    Ok(tape)
}

/// Replays the payload's normalized-SGD unroll from `w0` and returns the
/// induced update `g` (to be subtracted from `w0`), with `‖g‖ = H`.
///
/// `H = 0` yields the zero vector without running the unroll.
pub fn update_from_synthetic(payload: &SyntheticPayload, w0: &ModelParams) -> Result<Vec<f64>> {
    if payload.arch() != w0.arch() {
        return Err(Error::Shape(
            "payload architecture differs from the model it is decoded against".into(),
        ));
    }
    if payload.h() == 0.0 {
        return Ok(vec![0.0; w0.len()]);
    }
    let tape = record(payload, w0)?;
    Ok(tape.update().expect("finished tape").to_vec())
}

/// Meta-loss of the payload's decode and its gradient with respect to every
/// batch's `X`, `Y` and `η`.
pub fn meta_gradient(payload: &SyntheticPayload, w0: &ModelParams, meta: &MetaLoss<'_>) -> Result<(f64, LeafGrads)> {
    let tape = record(payload, w0)?;
    let (loss, cotangent) = meta.value_and_cotangent(tape.update().expect("finished tape"))?;
    Ok((loss, tape.meta_grad(&cotangent)?))
}
