#![no_main]

use arbitrary::Unstructured;
use libfuzzer_sys::fuzz_target;
use waveobs::symbols::{f_direct, SymbolPoint};

fuzz_target!(|data: &[u8]| {
    let mut u = Unstructured::new(data);
    let (Ok(tau), Ok(xi), Ok(alpha), Ok(xn)) =
        (u.arbitrary::<f64>(), u.arbitrary::<f64>(), u.arbitrary::<f64>(), u.arbitrary::<f64>())
    else {
        return;
    };
    if let Ok(p) = SymbolPoint::new(tau, xi, alpha) {
        let chi = p.chi();
        assert!((0.0..=1.0).contains(&chi) || chi.is_nan());
        let ct = p.chi_tilde(xn);
        assert!((0.0..=1.0).contains(&ct) || ct.is_nan());
        let big = p.tau * p.tau + p.tangential();
        if big.is_finite() && big < 1e12 && chi < 1.0 && big > 1.0 {
            assert!(p.satisfies_support_inequality());
        }
    }
    if let Ok(sigma) = u.arbitrary::<f64>() {
        if sigma.is_finite() && (-1e3..0.99).contains(&sigma) {
            if let Ok(f) = f_direct(sigma) {
                assert!(f.is_finite() && f > 0.0);
            }
        } else {
            let _ = f_direct(sigma);
        }
    }
});
