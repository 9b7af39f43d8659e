//! Fourier features for the target slot and the token codec for waypoints
//! and motion states.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dataset::fill_directions;
use crate::error::EncodingError;
use crate::geometry::{wrap_angle, Pose2D};
use crate::trajectory::{Direction, MotionState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierConfig {
    /// Number of frequencies per coordinate.
    pub frequencies: usize,
    /// Half-width of the encoded area in meters.
    pub c_max: f64,
}

impl Default for FourierConfig {
    fn default() -> Self {
        Self {
            frequencies: 12,
            c_max: 10.0,
        }
    }
}

impl FourierConfig {
    pub fn dim(&self) -> usize {
        4 * self.frequencies + 4
    }
}

/// Position scaled into [-π, π]; `clamped` flags inputs beyond ±c_max.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedPosition {
    pub x: f64,
    pub y: f64,
    pub clamped: bool,
}

pub fn normalize_position(x: f64, y: f64, c_max: f64) -> NormalizedPosition {
    let cx = x.clamp(-c_max, c_max);
    let cy = y.clamp(-c_max, c_max);
    NormalizedPosition {
        x: PI / c_max * cx,
        y: PI / c_max * cy,
        clamped: cx != x || cy != y,
    }
}

/// `[sin 2^0 u, cos 2^0 u, ..., sin 2^(L-1) u, cos 2^(L-1) u]`.
pub fn fourier_encode_scalar(u: f64, frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * frequencies);
    let mut scale = 1.0;
    for _ in 0..frequencies {
        let (s, c) = (scale * u).sin_cos();
        out.push(s);
        out.push(c);
        scale *= 2.0;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourierTarget {
    /// `[x', y', gamma(x'), gamma(y'), sin theta, cos theta]`.
    pub values: Vec<f64>,
    pub clamped: bool,
}

/// Encodes an ego-frame slot pose. The heading is wrapped first so that
/// headings differing by whole turns share an encoding.
pub fn encode_target(slot: &Pose2D, cfg: &FourierConfig) -> Result<FourierTarget, EncodingError> {
    if cfg.frequencies == 0 || !(cfg.c_max > 0.0) {
        return Err(EncodingError::InvalidParameter {
            name: "fourier",
            value: cfg.frequencies as f64,
        });
    }
    let p = normalize_position(slot.x, slot.y, cfg.c_max);
    let mut values = Vec::with_capacity(cfg.dim());
    values.push(p.x);
    values.push(p.y);
    values.extend(fourier_encode_scalar(p.x, cfg.frequencies));
    values.extend(fourier_encode_scalar(p.y, cfg.frequencies));
    let (s, c) = wrap_angle(slot.theta).sin_cos();
    values.push(s);
    values.push(c);
    Ok(FourierTarget {
        values,
        clamped: p.clamped,
    })
}

/// Uniform quantizer over `[-range, range]` into `bins` tokens.
pub fn serialize_value(p: f64, range: f64, bins: u32) -> u32 {
    let u = ((p + range) / (2.0 * range)).clamp(0.0, 1.0);
    let u = if u.is_nan() { 0.0 } else { u };
    ((u * bins as f64).floor() as u32).min(bins - 1)
}

/// Bin centre of token `t`.
pub fn deserialize_token(t: u32, range: f64, bins: u32) -> Result<f64, EncodingError> {
    if t >= bins {
        return Err(EncodingError::TokenOutOfRange { token: t, vocab: bins });
    }
    Ok(-range + (t as f64 + 0.5) * (2.0 * range / bins as f64))
}

/// Token stream with three special ids placed right after the value tokens:
/// BOS = n, EOS = n + 1, PAD = n + 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    pub n_values: u32,
}

impl TokenSequence {
    pub fn bos(&self) -> u32 {
        self.n_values
    }
    pub fn eos(&self) -> u32 {
        self.n_values + 1
    }
    pub fn pad(&self) -> u32 {
        self.n_values + 2
    }
    pub fn vocab_size(&self) -> u32 {
        self.n_values + 3
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Value tokens between BOS and EOS.
    pub fn payload(&self) -> Result<&[u32], EncodingError> {
        self.validate()?;
        let eos = self.tokens.iter().position(|&t| t == self.eos()).expect("validated");
        Ok(&self.tokens[1..eos])
    }

    /// BOS first, exactly one EOS, only PAD after it, values everywhere else.
    pub fn validate(&self) -> Result<(), EncodingError> {
        let bad = |m: &str| Err(EncodingError::MalformedSequence(m.to_string()));
        if self.tokens.first() != Some(&self.bos()) {
            return bad("missing BOS");
        }
        let Some(eos) = self.tokens.iter().position(|&t| t == self.eos()) else {
            return bad("missing EOS");
        };
        if let Some(&t) = self.tokens.iter().find(|&&t| t >= self.vocab_size()) {
            return Err(EncodingError::TokenOutOfRange {
                token: t,
                vocab: self.vocab_size(),
            });
        }
        if self.tokens[1..eos].iter().any(|&t| t >= self.n_values) {
            return bad("special token inside payload");
        }
        if self.tokens[eos + 1..].iter().any(|&t| t != self.pad()) {
            return bad("non-PAD token after EOS");
        }
        Ok(())
    }
}

/// Vocabulary and value ranges of the waypoint and motion streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceCodec {
    pub n_u: u32,
    pub n_v: u32,
    pub r_x: f64,
    pub r_y: f64,
    pub r_theta: f64,
    /// Emit a heading token per step; without it each step is `(x, y)`.
    #[serde(default = "default_true")]
    pub with_heading: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SequenceCodec {
    fn default() -> Self {
        Self {
            n_u: 1200,
            n_v: 100,
            r_x: 10.0,
            r_y: 10.0,
            r_theta: PI,
            with_heading: true,
        }
    }
}

impl SequenceCodec {
    pub fn traj_vocab(&self) -> usize {
        self.n_u as usize + 3
    }
    pub fn traj_bos(&self) -> u32 {
        self.n_u
    }
    pub fn traj_eos(&self) -> u32 {
        self.n_u + 1
    }
    pub fn traj_pad(&self) -> u32 {
        self.n_u + 2
    }

    pub fn tokens_per_step(&self) -> usize {
        if self.with_heading {
            3
        } else {
            2
        }
    }

    /// Trajectory sequence length for `q` steps including BOS and EOS.
    pub fn traj_len(&self, q: usize) -> usize {
        self.tokens_per_step() * q + 2
    }

    /// Range of the quantity carried by interleaved payload position `i`.
    pub fn axis_range(&self, i: usize) -> f64 {
        match i % self.tokens_per_step() {
            0 => self.r_x,
            1 => self.r_y,
            _ => self.r_theta,
        }
    }

    pub fn encode_pose(&self, p: &Pose2D) -> [u32; 3] {
        [
            serialize_value(p.x, self.r_x, self.n_u),
            serialize_value(p.y, self.r_y, self.n_u),
            serialize_value(p.theta, self.r_theta, self.n_u),
        ]
    }

    /// Decodes one step; without heading tokens the heading is zero.
    pub fn decode_pose(&self, t: &[u32]) -> Result<Pose2D, EncodingError> {
        if t.len() != self.tokens_per_step() {
            return Err(EncodingError::MalformedSequence(format!(
                "{} tokens for one step, expected {}",
                t.len(),
                self.tokens_per_step()
            )));
        }
        let theta = match t.get(2) {
            Some(&th) => deserialize_token(th, self.r_theta, self.n_u)?,
            None => 0.0,
        };
        Ok(Pose2D::new(
            deserialize_token(t[0], self.r_x, self.n_u)?,
            deserialize_token(t[1], self.r_y, self.n_u)?,
            theta,
        ))
    }

    pub fn motion_token(&self, d: Direction) -> u32 {
        match d {
            Direction::Forward => self.n_v - 1,
            Direction::Backward => 0,
        }
    }

    /// Nearest endpoint wins; the midpoint counts as forward.
    pub fn token_direction(&self, t: u32) -> Direction {
        if 2 * t as u64 >= (self.n_v - 1) as u64 {
            Direction::Forward
        } else {
            Direction::Backward
        }
    }

    fn frame(&self, payload: Vec<u32>, n_values: u32, len: usize) -> TokenSequence {
        let mut tokens = Vec::with_capacity(len.max(payload.len() + 2));
        tokens.push(n_values);
        tokens.extend(payload);
        tokens.push(n_values + 1);
        while tokens.len() < len {
            tokens.push(n_values + 2);
        }
        TokenSequence { tokens, n_values }
    }

    /// Motion stream: stationary labels take the nearest following direction.
    pub fn serialize_motion(&self, labels: &[MotionState], fallback: Direction, len: usize) -> TokenSequence {
        let payload = fill_directions(labels, fallback)
            .into_iter()
            .map(|d| self.motion_token(d))
            .collect();
        self.frame(payload, self.n_v, len)
    }

    pub fn serialize_waypoints(&self, waypoints: &[Pose2D], len: usize) -> TokenSequence {
        let k = self.tokens_per_step();
        let payload = waypoints
            .iter()
            .flat_map(|p| self.encode_pose(p).into_iter().take(k))
            .collect();
        self.frame(payload, self.n_u, len)
    }

    /// Step-aligned trajectory and motion sequences, each padded to at
    /// least its natural length (`kQ + 2` and `Q + 2`).
    pub fn build_sequences(
        &self,
        waypoints: &[Pose2D],
        labels: &[MotionState],
        fallback: Direction,
    ) -> Result<(TokenSequence, TokenSequence), EncodingError> {
        if waypoints.len() != labels.len() {
            return Err(EncodingError::MalformedSequence(format!(
                "{} waypoints vs {} labels",
                waypoints.len(),
                labels.len()
            )));
        }
        let q = waypoints.len();
        Ok((
            self.serialize_waypoints(waypoints, self.traj_len(q)),
            self.serialize_motion(labels, fallback, q + 2),
        ))
    }

    pub fn decode_waypoints(&self, seq: &TokenSequence) -> Result<Vec<Pose2D>, EncodingError> {
        let payload = seq.payload()?;
        let k = self.tokens_per_step();
        if payload.len() % k != 0 {
            return Err(EncodingError::MalformedSequence(format!(
                "payload length {} is not a multiple of {k}",
                payload.len()
            )));
        }
        payload.chunks_exact(k).map(|c| self.decode_pose(c)).collect()
    }

    pub fn decode_motion(&self, seq: &TokenSequence) -> Result<Vec<Direction>, EncodingError> {
        Ok(seq.payload()?.iter().map(|&t| self.token_direction(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::MotionState::{Forward as F, Reverse as R, Stationary as S};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalize_examples() {
        let p = normalize_position(0.0, 0.0, 10.0);
        assert_eq!((p.x, p.y, p.clamped), (0.0, 0.0, false));
        let p = normalize_position(10.0, -10.0, 10.0);
        assert_eq!((p.x, p.y), (PI, -PI));
        assert!(!p.clamped);
        let p = normalize_position(5.0, 0.0, 10.0);
        assert!((p.x - PI / 2.0).abs() < 1e-15);
        let p = normalize_position(12.0, 0.0, 10.0);
        assert!(p.clamped);
        assert_eq!(p.x, PI);
    }

    #[test]
    fn scalar_examples() {
        assert_eq!(fourier_encode_scalar(0.0, 3), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let e = fourier_encode_scalar(PI / 2.0, 2);
        let want = [1.0, 0.0, 0.0, -1.0];
        for (a, b) in e.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn target_examples() {
        let cfg = FourierConfig::default();
        let e = encode_target(&Pose2D::origin(), &cfg).unwrap();
        assert_eq!(e.values.len(), 52);
        let mut want = vec![0.0, 0.0];
        for _ in 0..24 {
            want.extend([0.0, 1.0]);
        }
        want.extend([0.0, 1.0]);
        assert_eq!(e.values, want);
        let e = encode_target(&Pose2D::new(0.0, 0.0, PI), &cfg).unwrap();
        assert!(e.values[50].abs() < 1e-12);
        assert!((e.values[51] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn heading_periodicity() {
        let cfg = FourierConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let th: f64 = rng.random_range(-PI..PI);
            let a = encode_target(&Pose2D { x: 1.0, y: 2.0, theta: th }, &cfg).unwrap();
            let b = encode_target(&Pose2D { x: 1.0, y: 2.0, theta: th + 2.0 * PI }, &cfg).unwrap();
            for (u, v) in a.values.iter().zip(&b.values) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quantizer_examples() {
        assert_eq!(serialize_value(-10.0, 10.0, 1200), 0);
        assert_eq!(serialize_value(0.0, 10.0, 1200), 600);
        assert_eq!(serialize_value(10.0, 10.0, 1200), 1199);
        assert_eq!(serialize_value(55.0, 10.0, 1200), 1199);
        assert!((deserialize_token(0, 10.0, 1200).unwrap() + 9.991_666_666_666_667).abs() < 1e-12);
        let a = deserialize_token(599, 10.0, 1200).unwrap();
        let b = deserialize_token(600, 10.0, 1200).unwrap();
        assert!((a + b).abs() < 1e-12);
        assert!(deserialize_token(1200, 10.0, 1200).is_err());
        for t in 0..1200 {
            assert_eq!(serialize_value(deserialize_token(t, 10.0, 1200).unwrap(), 10.0, 1200), t);
        }
    }

    #[test]
    fn motion_examples() {
        let codec = SequenceCodec::default();
        let s = codec.serialize_motion(&[F, F, R], Direction::Forward, 5);
        assert_eq!(s.tokens, vec![100, 99, 99, 0, 101]);
        s.validate().unwrap();
        let s = codec.serialize_motion(&[S, S], Direction::Backward, 6);
        assert_eq!(s.tokens, vec![100, 0, 0, 101, 102, 102]);
        assert_eq!(codec.token_direction(49), Direction::Backward);
        assert_eq!(codec.token_direction(50), Direction::Forward);
    }

    #[test]
    fn sequence_lengths_and_validation() {
        let codec = SequenceCodec::default();
        let wps: Vec<Pose2D> = (0..30).map(|i| Pose2D::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let (t, m) = codec.build_sequences(&wps, &[F; 30], Direction::Forward).unwrap();
        assert_eq!(t.len(), 92);
        assert_eq!(m.len(), 32);
        t.validate().unwrap();
        let mut bad = t.clone();
        bad.tokens.push(5);
        assert!(bad.validate().is_err());
        let mut bad = t.clone();
        bad.tokens[0] = 3;
        assert!(bad.validate().is_err());
        let mut bad = t.clone();
        bad.tokens[4] = codec.traj_pad();
        assert!(bad.validate().is_err());
        assert!(codec.build_sequences(&wps, &[F; 3], Direction::Forward).is_err());
    }

    #[test]
    fn headingless_codec_uses_two_tokens_per_step() {
        let codec = SequenceCodec {
            with_heading: false,
            ..SequenceCodec::default()
        };
        let wps = vec![Pose2D::new(1.0, -2.0, 0.7), Pose2D::new(2.0, -1.0, 0.3)];
        let (t, _) = codec.build_sequences(&wps, &[F, F], Direction::Forward).unwrap();
        assert_eq!(t.len(), 6);
        assert_eq!(codec.axis_range(2), codec.r_x);
        let back = codec.decode_waypoints(&t).unwrap();
        for (a, b) in back.iter().zip(&wps) {
            assert!((a.x - b.x).abs() <= 10.0 / 1200.0);
            assert!((a.y - b.y).abs() <= 10.0 / 1200.0);
            assert_eq!(a.theta, 0.0);
        }
    }
}
