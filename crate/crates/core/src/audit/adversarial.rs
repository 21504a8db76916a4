use crate::error::{Result, SimError};
use crate::timeline::{PowerProfile, WorkerProfile};

/// Two workers that trade speeds every `base_tau` seconds.
///
/// On even segments worker 0 runs at `s/base_tau` and worker 1 at
/// `1/base_tau`; odd segments swap them. After `cycles` full periods both
/// settle at `1/base_tau`. Under the plain rule every phase closes as soon as
/// the slow worker delivers once, so the harmonic batch stays near 2 however
/// large `s` is.
pub fn adversarial_roleswitch_profiles(s: u32, base_tau: f64, cycles: usize) -> Result<Vec<WorkerProfile>> {
    if s == 0 {
        return Err(SimError::config("speed ratio must be >= 1"));
    }
    if !(base_tau > 0.0 && base_tau.is_finite()) {
        return Err(SimError::config(format!("base_tau must be positive and finite, got {base_tau}")));
    }
    let fast = s as f64 / base_tau;
    let slow = 1.0 / base_tau;
    let mut a = Vec::with_capacity(2 * cycles + 1);
    let mut b = Vec::with_capacity(2 * cycles + 1);
    for seg in 0..2 * cycles {
        let start = seg as f64 * base_tau;
        let (ra, rb) = if seg % 2 == 0 { (fast, slow) } else { (slow, fast) };
        a.push((start, ra));
        b.push((start, rb));
    }
    let tail = 2.0 * cycles as f64 * base_tau;
    a.push((tail, slow));
    b.push((tail, slow));
    Ok(WorkerProfile::universal_all(vec![PowerProfile::new(a)?, PowerProfile::new(b)?]))
}
