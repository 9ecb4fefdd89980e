//! Discrete codecs over bounded real sequences.
//!
//! Inputs are length T*D real vectors with every coordinate in
//! [-K_tilde/2, K_tilde/2]. A codec guarantees that any two inputs with
//! squared-Euclidean distance above eps = eps_tilde^2 receive different token
//! sequences. Two constructions realize this:
//!
//! * scale-up: code length stays T, the vocabulary grows to
//!   ceil(sqrt(TD) * K_tilde / eps_tilde)^D; each token packs D per-coordinate
//!   bin indices into one symbol.
//! * scale-out: the vocabulary stays at a fixed base M >= 2, the code length
//!   grows to T * D * ceil(log_M(sqrt(TD) * K_tilde / eps_tilde)); each
//!   coordinate contributes its leading base-M digits (truncated, not
//!   rounded).
//!
//! Throughout, the distance threshold is the squared Euclidean norm: the
//! contrapositive guarantee is "equal codes implies squared distance <= eps".

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodecMode {
    ScaleUp,
    ScaleOut,
}

impl CodecMode {
    pub fn name(&self) -> &'static str {
        match self {
            CodecMode::ScaleUp => "scale_up",
            CodecMode::ScaleOut => "scale_out",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CodecSpec {
    pub mode: CodecMode,
    pub t: usize,
    pub d: usize,
    pub k_tilde: f64,
    pub eps_tilde: f64,
    /// Base vocabulary size; scale-out only.
    pub m: Option<u64>,
    pub vocab_size: u64,
    pub code_length: usize,
    /// Per-coordinate bin count (scale-up).
    bins_per_coord: u64,
    /// Base-M digits per coordinate (scale-out).
    digits_per_coord: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<u64>,
}

/// ceil with a small relative tolerance so that decimal parameters like 0.1
/// do not push an exact integer ratio across the next integer.
fn ceil_tol(v: f64) -> u64 {
    (v - 1e-12 * v.abs().max(1.0)).ceil() as u64
}

/// Smallest L >= 1 with M^L >= v (same tolerance convention as `ceil_tol`).
fn ceil_log_tol(m: u64, v: f64) -> Result<u32> {
    let target = v * (1.0 - 1e-12);
    let mut l: u32 = 1;
    let mut pow = m as f64;
    while pow < target {
        l += 1;
        pow *= m as f64;
        if l > 63 {
            return Err(Error::InvalidParam(
                "scale-out code length overflows".into(),
            ));
        }
    }
    Ok(l)
}

pub fn build_codec(
    mode: CodecMode,
    t: usize,
    d: usize,
    k_tilde: f64,
    eps_tilde: f64,
    m: Option<u64>,
) -> Result<CodecSpec> {
    if t == 0 || d == 0 {
        return Err(Error::InvalidParam("T and D must be >= 1".into()));
    }
    if k_tilde <= 0.0 || eps_tilde <= 0.0 {
        return Err(Error::InvalidParam(
            "K_tilde and eps_tilde must be positive".into(),
        ));
    }
    let td = (t * d) as f64;
    let resolution = td.sqrt() * k_tilde / eps_tilde;
    match mode {
        CodecMode::ScaleUp => {
            let bins = ceil_tol(resolution).max(1);
            let vocab = bins
                .checked_pow(d as u32)
                .ok_or_else(|| Error::InvalidParam("scale-up vocabulary overflows".into()))?;
            Ok(CodecSpec {
                mode,
                t,
                d,
                k_tilde,
                eps_tilde,
                m: None,
                vocab_size: vocab,
                code_length: t,
                bins_per_coord: bins,
                digits_per_coord: 0,
            })
        }
        CodecMode::ScaleOut => {
            let m = m.ok_or_else(|| Error::InvalidParam("scale-out requires M".into()))?;
            if m < 2 {
                return Err(Error::InvalidParam("scale-out requires M >= 2".into()));
            }
            let digits = ceil_log_tol(m, resolution)?;
            if (m as f64).powi(digits as i32) > (u64::MAX / 2) as f64 {
                return Err(Error::InvalidParam("scale-out index overflows".into()));
            }
            Ok(CodecSpec {
                mode,
                t,
                d,
                k_tilde,
                eps_tilde,
                m: Some(m),
                vocab_size: m,
                code_length: t * d * digits as usize,
                bins_per_coord: 0,
                digits_per_coord: digits,
            })
        }
    }
}

impl CodecSpec {
    /// Squared-Euclidean distinguishability threshold.
    pub fn eps(&self) -> f64 {
        self.eps_tilde * self.eps_tilde
    }

    pub fn input_len(&self) -> usize {
        self.t * self.d
    }

    fn half_k(&self) -> f64 {
        self.k_tilde / 2.0
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::DimensionMismatch {
                expected: self.input_len(),
                got: x.len(),
                context: "codec input",
            });
        }
        let bound = self.half_k();
        for (i, &v) in x.iter().enumerate() {
            if !v.is_finite() || v.abs() > bound + 1e-12 {
                return Err(Error::OutOfDomain {
                    index: i,
                    value: v,
                    bound,
                });
            }
        }
        Ok(())
    }

    /// Per-coordinate bin index for the scale-up construction:
    /// floor((x + K/2) / (eps_tilde / sqrt(TD))), top edge clamped in.
    fn scale_up_digit(&self, x: f64) -> u64 {
        let width = self.eps_tilde / ((self.t * self.d) as f64).sqrt();
        let shifted = (x.clamp(-self.half_k(), self.half_k()) + self.half_k()) / width;
        (shifted.floor() as u64).min(self.bins_per_coord - 1)
    }

    /// Leading base-M digits of u = (x + K/2)/K in [0,1], truncated.
    fn scale_out_digits(&self, x: f64) -> Vec<u64> {
        let m = self.m.unwrap();
        let l = self.digits_per_coord;
        let u = ((x.clamp(-self.half_k(), self.half_k()) + self.half_k()) / self.k_tilde)
            .clamp(0.0, 1.0);
        let scale = (m as f64).powi(l as i32);
        let mut idx = (u * scale).floor() as u64;
        let max_idx = scale as u64 - 1;
        if idx > max_idx {
            idx = max_idx;
        }
        let mut digits = vec![0u64; l as usize];
        for slot in (0..l as usize).rev() {
            digits[slot] = idx % m;
            idx /= m;
        }
        digits
    }

    pub fn encode(&self, x: &[f64]) -> Result<TokenSequence> {
        self.check_domain(x)?;
        let tokens = match self.mode {
            CodecMode::ScaleUp => {
                let mut tokens = Vec::with_capacity(self.t);
                for t_idx in 0..self.t {
                    let mut token: u64 = 0;
                    for n in 0..self.d {
                        let digit = self.scale_up_digit(x[t_idx * self.d + n]);
                        token = token * self.bins_per_coord + digit;
                    }
                    tokens.push(token);
                }
                tokens
            }
            CodecMode::ScaleOut => {
                let mut tokens = Vec::with_capacity(self.code_length);
                for &coord in x {
                    tokens.extend(self.scale_out_digits(coord));
                }
                tokens
            }
        };
        debug_assert_eq!(tokens.len(), self.code_length);
        debug_assert!(tokens.iter().all(|&tok| tok < self.vocab_size));
        Ok(TokenSequence { tokens })
    }

    /// Uniform sample over the legal input box.
    fn sample_input(&self, rng: &mut Rng) -> Vec<f64> {
        let b = self.half_k();
        (0..self.input_len())
            .map(|_| rng.uniform_in(-b, b))
            .collect()
    }

    /// Sample a point in the same quantization cell as `x`.
    fn sample_same_cell(&self, x: &[f64], rng: &mut Rng) -> Vec<f64> {
        match self.mode {
            CodecMode::ScaleUp => {
                let width = self.eps_tilde / ((self.t * self.d) as f64).sqrt();
                x.iter()
                    .map(|&v| {
                        let d = self.scale_up_digit(v);
                        let lo = -self.half_k() + d as f64 * width;
                        let hi = (lo + width).min(self.half_k());
                        rng.uniform_in(lo, hi)
                    })
                    .collect()
            }
            CodecMode::ScaleOut => {
                let m = self.m.unwrap() as f64;
                let l = self.digits_per_coord;
                let cell = m.powi(-(l as i32));
                x.iter()
                    .map(|&v| {
                        let u = ((v + self.half_k()) / self.k_tilde).clamp(0.0, 1.0);
                        let u_trunc = (u / cell).floor() * cell;
                        let u_hi = (u_trunc + cell).min(1.0);
                        let u_new = rng.uniform_in(u_trunc, u_hi);
                        u_new * self.k_tilde - self.half_k()
                    })
                    .collect()
            }
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Brute-force check of the codec guarantee in both directions.
///
/// Samples `trials` random pairs with squared distance above eps and counts
/// pairs whose codes coincide; also samples `trials` pairs constructed inside
/// a shared quantization cell and counts those whose squared distance exceeds
/// eps despite equal codes. Returns the total violation count (0 when the
/// construction is sound).
pub fn verify_distinguishability(spec: &CodecSpec, trials: usize, seed: u64) -> Result<u64> {
    if trials == 0 {
        return Err(Error::InvalidParam("trials must be >= 1".into()));
    }
    let mut rng = Rng::new(seed).child("codec-verify");
    let eps = spec.eps();
    let mut violations = 0u64;

    let mut far_pairs = 0usize;
    while far_pairs < trials {
        let x = spec.sample_input(&mut rng);
        let y = spec.sample_input(&mut rng);
        if squared_distance(&x, &y) <= eps {
            continue;
        }
        far_pairs += 1;
        if spec.encode(&x)? == spec.encode(&y)? {
            violations += 1;
        }
    }

    for _ in 0..trials {
        let x = spec.sample_input(&mut rng);
        let y = spec.sample_same_cell(&x, &mut rng);
        if spec.encode(&x)? == spec.encode(&y)? && squared_distance(&x, &y) > eps {
            violations += 1;
        }
    }

    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_up_spec_example_sizes() {
        let s = build_codec(CodecMode::ScaleUp, 1, 1, 2.0, 0.2, None).unwrap();
        assert_eq!(s.vocab_size, 10);
        assert_eq!(s.code_length, 1);

        let s = build_codec(CodecMode::ScaleUp, 2, 2, 2.0, 0.2, None).unwrap();
        assert_eq!(s.vocab_size, 400);
        assert_eq!(s.code_length, 2);
    }

    #[test]
    fn scale_out_spec_example_sizes() {
        let s = build_codec(CodecMode::ScaleOut, 1, 1, 2.0, 0.2, Some(2)).unwrap();
        assert_eq!(s.vocab_size, 2);
        assert_eq!(s.code_length, 4); // ceil(log2 10) = 4
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(build_codec(CodecMode::ScaleUp, 0, 1, 2.0, 0.2, None).is_err());
        assert!(build_codec(CodecMode::ScaleUp, 1, 1, -1.0, 0.2, None).is_err());
        assert!(build_codec(CodecMode::ScaleUp, 1, 1, 2.0, 0.0, None).is_err());
        assert!(build_codec(CodecMode::ScaleOut, 1, 1, 2.0, 0.2, Some(1)).is_err());
        assert!(build_codec(CodecMode::ScaleOut, 1, 1, 2.0, 0.2, None).is_err());
    }

    #[test]
    fn scale_up_hand_encoding() {
        let s = build_codec(CodecMode::ScaleUp, 1, 1, 2.0, 0.2, None).unwrap();
        let code = s.encode(&[0.05]).unwrap();
        assert_eq!(code.tokens, vec![5]); // floor((0.05 + 1) / 0.2) = 5
    }

    #[test]
    fn scale_out_hand_encoding() {
        let s = build_codec(CodecMode::ScaleOut, 1, 1, 2.0, 0.2, Some(2)).unwrap();
        let code = s.encode(&[0.05]).unwrap();
        // u = 0.525, leading 4 binary digits: .1000
        assert_eq!(code.tokens, vec![1, 0, 0, 0]);
    }

    #[test]
    fn encode_is_deterministic() {
        let s = build_codec(CodecMode::ScaleUp, 2, 2, 2.0, 0.1, None).unwrap();
        let mut rng = Rng::new(4);
        for _ in 0..100 {
            let x = s.sample_input(&mut rng);
            assert_eq!(s.encode(&x).unwrap(), s.encode(&x).unwrap());
        }
    }

    #[test]
    fn top_edge_clamps_into_last_bin() {
        let s = build_codec(CodecMode::ScaleUp, 1, 1, 2.0, 0.2, None).unwrap();
        let code = s.encode(&[1.0]).unwrap();
        assert_eq!(code.tokens, vec![9]);
        let s = build_codec(CodecMode::ScaleOut, 1, 1, 2.0, 0.2, Some(2)).unwrap();
        let code = s.encode(&[1.0]).unwrap();
        assert_eq!(code.tokens, vec![1, 1, 1, 1]);
    }

    #[test]
    fn out_of_domain_beyond_tolerance_errors() {
        let s = build_codec(CodecMode::ScaleUp, 1, 1, 2.0, 0.2, None).unwrap();
        assert!(s.encode(&[1.0 + 1e-13]).is_ok());
        assert!(matches!(
            s.encode(&[1.0 + 1e-6]),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn same_bin_points_are_close() {
        // 0.01 and 0.03 share the bin [0, 0.2); squared distance 0.0004 <= 0.04.
        let s = build_codec(CodecMode::ScaleUp, 1, 1, 2.0, 0.2, None).unwrap();
        let a = s.encode(&[0.01]).unwrap();
        let b = s.encode(&[0.03]).unwrap();
        assert_eq!(a, b);
        assert!(squared_distance(&[0.01], &[0.03]) <= s.eps());
    }

    #[test]
    fn no_violations_on_random_far_pairs() {
        for mode in [CodecMode::ScaleUp, CodecMode::ScaleOut] {
            let m = if mode == CodecMode::ScaleOut {
                Some(2)
            } else {
                None
            };
            let s = build_codec(mode, 2, 2, 2.0, 0.2, m).unwrap();
            assert_eq!(verify_distinguishability(&s, 10_000, 7).unwrap(), 0);
        }
    }

    #[test]
    fn identical_inputs_share_codes() {
        let s = build_codec(CodecMode::ScaleOut, 2, 1, 2.0, 0.1, Some(3)).unwrap();
        let mut rng = Rng::new(2);
        for _ in 0..50 {
            let x = s.sample_input(&mut rng);
            assert_eq!(s.encode(&x).unwrap(), s.encode(&x).unwrap());
        }
    }

    #[test]
    fn scaling_asymmetry_vocab_explodes_length_does_not() {
        // Fixed T = 1, K = 2, eps_tilde = 0.2; sweep D.
        let mut prev_ratio = 0.0;
        for d in 1..=4usize {
            let up = build_codec(CodecMode::ScaleUp, 1, d, 2.0, 0.2, None).unwrap();
            let out = build_codec(CodecMode::ScaleOut, 1, d, 2.0, 0.2, Some(2)).unwrap();
            // Scale-out length obeys the T*D*ceil(log) formula.
            let td = d as f64;
            let expected_digits = ceil_log_tol(2, td.sqrt() * 2.0 / 0.2).unwrap() as usize;
            assert_eq!(out.code_length, d * expected_digits);
            // The vocabulary-to-length ratio grows with D: scaling out wins.
            let ratio = up.vocab_size as f64 / out.code_length as f64;
            assert!(
                ratio > prev_ratio,
                "ratio not increasing at D = {d}: {ratio} <= {prev_ratio}"
            );
            prev_ratio = ratio;
        }
    }
}
