//! DFT codebooks and exhaustive beam sweeps.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{dims, domain, Result};
use crate::mimo::{received_gain, ArrayConfig, ComplexMatrix, ComplexVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Transmitter,
    Receiver,
}

/// Ordered set of unit-norm beamforming vectors of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    vectors: Vec<ComplexVector>,
    side: Side,
}

impl Codebook {
    /// Builds a codebook from explicit codewords. Each one must have unit norm.
    pub fn new(vectors: Vec<ComplexVector>, side: Side) -> Result<Self> {
        let n = vectors
            .first()
            .ok_or_else(|| domain("codebook needs at least one codeword"))?
            .len();
        if n == 0 {
            return Err(domain("codewords must be non-empty"));
        }
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != n {
                return Err(dims(format!("codeword {i} has {} entries, expected {n}", v.len())));
            }
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(domain(format!("codeword {i} has norm {norm}")));
            }
        }
        Ok(Self { vectors, side })
    }

    /// Single-antenna codebook `{[1]}`: the trivial combiner.
    pub fn trivial(side: Side) -> Self {
        Self {
            vectors: vec![vec![Complex64::new(1.0, 0.0)]],
            side,
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn n_antennas(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn with_side(mut self, side: Side) -> Self {
        self.side = side;
        self
    }

    pub fn codeword(&self, m: usize) -> &[Complex64] {
        &self.vectors[m]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ComplexVector> {
        self.vectors.iter()
    }

    /// Gram matrix `F^H F` with `F` holding the codewords as columns.
    pub fn gram(&self) -> ComplexMatrix {
        let m = self.len();
        ComplexMatrix::from_fn(m, m, |p, q| {
            self.vectors[p]
                .iter()
                .zip(&self.vectors[q])
                .map(|(a, b)| a.conj() * b)
                .sum()
        })
    }
}

/// DFT codebook: codeword `m`, entry `n` is `exp(-i 2π n m / M) / sqrt(N)`.
pub fn dft_codebook(n_antennas: usize, n_codewords: usize) -> Result<Codebook> {
    if n_antennas == 0 {
        return Err(domain("codebook needs at least one antenna"));
    }
    if n_codewords < n_antennas {
        return Err(domain(format!(
            "{n_codewords} codewords undersample a {n_antennas}-element array"
        )));
    }
    let scale = 1.0 / (n_antennas as f64).sqrt();
    let vectors = (0..n_codewords)
        .map(|m| {
            (0..n_antennas)
                .map(|n| {
                    // Reduce n*m modulo M first so the phase stays small and exact.
                    let k = (n * m) % n_codewords;
                    let phase = -2.0 * PI * k as f64 / n_codewords as f64;
                    Complex64::from_polar(scale, phase)
                })
                .collect()
        })
        .collect();
    Ok(Codebook {
        vectors,
        side: Side::Transmitter,
    })
}

/// Gain table and argmax of an exhaustive transmit/receive beam sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// `|y|` for every pair, row-major `M_t x M_r`.
    pub gains: Vec<f64>,
    pub n_tx_beams: usize,
    pub n_rx_beams: usize,
    pub best_pair: (usize, usize),
    pub best_flat: usize,
}

impl SweepResult {
    pub fn gain(&self, tx: usize, rx: usize) -> f64 {
        self.gains[tx * self.n_rx_beams + rx]
    }

    pub fn best_gain(&self) -> f64 {
        self.gains[self.best_flat]
    }
}

/// Evaluates `|w_q^H H f_p|` for every codeword pair and returns the best one.
///
/// Ties resolve to the lowest flat index `p * M_r + q`.
pub fn sweep(h: &ComplexMatrix, ct: &Codebook, cr: &Codebook) -> Result<SweepResult> {
    if ct.n_antennas() != h.cols() {
        return Err(dims(format!(
            "transmit codewords have {} entries, channel has {} columns",
            ct.n_antennas(),
            h.cols()
        )));
    }
    if cr.n_antennas() != h.rows() {
        return Err(dims(format!(
            "receive codewords have {} entries, channel has {} rows",
            cr.n_antennas(),
            h.rows()
        )));
    }
    let (mt, mr) = (ct.len(), cr.len());
    let mut gains = Vec::with_capacity(mt * mr);
    for f in ct.iter() {
        for w in cr.iter() {
            gains.push(received_gain(h, f, w)?.norm());
        }
    }
    let mut best_flat = 0;
    for (i, g) in gains.iter().enumerate() {
        if *g > gains[best_flat] {
            best_flat = i;
        }
    }
    Ok(SweepResult {
        gains,
        n_tx_beams: mt,
        n_rx_beams: mr,
        best_pair: (best_flat / mr, best_flat % mr),
        best_flat,
    })
}

/// Broadside azimuth whose steering phase progression matches codeword `m`.
///
/// The normalized frequency `m / M` is wrapped to `[-0.5, 0.5)` and inverted
/// through `d sin(az) = Ω`.
pub fn beam_broadside_angle(m: usize, cfg: &ArrayConfig, n_codewords: usize) -> Result<f64> {
    cfg.validate()?;
    if m >= n_codewords {
        return Err(domain(format!("codeword {m} out of range for {n_codewords} codewords")));
    }
    let mut omega = m as f64 / n_codewords as f64;
    if omega >= 0.5 {
        omega -= 1.0;
    }
    let s = omega / cfg.spacing_ratio;
    if s.abs() > 1.0 {
        return Err(domain(format!(
            "codeword {m} has no visible direction at spacing {}",
            cfg.spacing_ratio
        )));
    }
    Ok(s.asin())
}
