mod common;

use common::vmd_case;

#[test]
fn two_tone_centers_match_the_spectral_peaks() {
    let out = vmd_case(0..0);
    assert_eq!(out.oracle_hz, vec![50.0, 300.0]);
    assert!(out.worst_center_error() <= 0.02, "{:?}", out.centers_hz);
}

#[test]
fn denoising_gains_six_db_at_zero_db_input() {
    let out = vmd_case(100..120);
    assert!(out.median_gain_db() >= 6.0, "{:?}", out.gains_db);
}
