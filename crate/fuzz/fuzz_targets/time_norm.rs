#![no_main]

use arbitrary::Unstructured;
use libfuzzer_sys::fuzz_target;
use waveobs::window::{hs_norm_compact, make_window};
use waveobs::C64;

fuzz_target!(|data: &[u8]| {
    let mut u = Unstructured::new(data);
    let Ok(s) = u.arbitrary::<f64>() else { return };
    let Ok((t0, t1, plateau)) = u.arbitrary::<(f64, f64, f64)>() else { return };
    let _ = make_window(1.0, t0, t1, plateau);
    let mut samples = Vec::new();
    while samples.len() < 512 {
        match u.arbitrary::<(f32, f32)>() {
            Ok((re, im)) => samples.push(C64::new(re.into(), im.into())),
            Err(_) => break,
        }
    }
    if let Ok(norm) = hs_norm_compact(&samples, 1e-2, s) {
        let finite = s.is_finite() && s.abs() < 4.0 && samples.iter().all(|c| c.re.is_finite() && c.im.is_finite());
        if finite {
            assert!(norm >= 0.0 || norm.is_infinite());
        }
    }
});
