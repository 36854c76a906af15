//! Triple scoring kernels and their parameter gradients.
//!
//! Complex-valued methods store each complex entry as an interleaved
//! `(re, im)` pair, so a `d`-dimensional complex vector occupies `2d` reals.
//! RotatE relations are `d` phases.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    TransE,
    RotatE,
    Rescal,
    DistMult,
    ComplEx,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::TransE,
        Method::RotatE,
        Method::Rescal,
        Method::DistMult,
        Method::ComplEx,
    ];

    /// Reals per entity row for embedding dimension `dim`.
    pub fn entity_width(self, dim: usize) -> usize {
        match self {
            Method::RotatE | Method::ComplEx => 2 * dim,
            Method::TransE | Method::Rescal | Method::DistMult => dim,
        }
    }

    /// Reals per relation row for embedding dimension `dim`.
    pub fn relation_width(self, dim: usize) -> usize {
        match self {
            Method::TransE | Method::DistMult | Method::RotatE => dim,
            Method::ComplEx => 2 * dim,
            Method::Rescal => dim * dim,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::TransE => "transe",
            Method::RotatE => "rotate",
            Method::Rescal => "rescal",
            Method::DistMult => "distmult",
            Method::ComplEx => "complex",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// Plausibility of `(h, r, t)`; higher is more plausible.
pub fn score(method: Method, dim: usize, h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    match method {
        Method::TransE => {
            let mut sq = 0.0;
            for i in 0..dim {
                let d = h[i] + r[i] - t[i];
                sq += d * d;
            }
            -sq.sqrt()
        }
        Method::RotatE => {
            let mut sq = 0.0;
            for i in 0..dim {
                let (u, v) = rotate_residual(h[2 * i], h[2 * i + 1], r[i], t[2 * i], t[2 * i + 1]);
                sq += u * u + v * v;
            }
            -sq.sqrt()
        }
        Method::DistMult => {
            let mut s = 0.0;
            for i in 0..dim {
                s += h[i] * r[i] * t[i];
            }
            s
        }
        Method::ComplEx => {
            let mut s = 0.0;
            for i in 0..dim {
                let (hr, hi) = (h[2 * i], h[2 * i + 1]);
                let (rr, ri) = (r[2 * i], r[2 * i + 1]);
                let (tr, ti) = (t[2 * i], t[2 * i + 1]);
                // Re(h * r * conj(t)); products grouped as (h*r)*t so zero
                // imaginary parts reduce to the DistMult expression exactly.
                s += (hr * rr - hi * ri) * tr + (hr * ri + hi * rr) * ti;
            }
            s
        }
        Method::Rescal => {
            let mut s = 0.0;
            for i in 0..dim {
                let row = &r[i * dim..(i + 1) * dim];
                let mut acc = 0.0;
                for j in 0..dim {
                    acc += row[j] * t[j];
                }
                s += h[i] * acc;
            }
            s
        }
    }
}

#[inline]
fn rotate_residual(a: f64, b: f64, phase: f64, tr: f64, ti: f64) -> (f64, f64) {
    let (sin, cos) = phase.sin_cos();
    (a * cos - b * sin - tr, a * sin + b * cos - ti)
}

/// Adds `scale * d score / d param` into the three gradient buffers.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_grad(
    method: Method,
    dim: usize,
    h: &[f64],
    r: &[f64],
    t: &[f64],
    scale: f64,
    gh: &mut [f64],
    gr: &mut [f64],
    gt: &mut [f64],
) {
    match method {
        Method::TransE => {
            let norm = -score(method, dim, h, r, t);
            if norm < 1e-12 {
                return;
            }
            for i in 0..dim {
                let g = scale * (h[i] + r[i] - t[i]) / norm;
                gh[i] -= g;
                gr[i] -= g;
                gt[i] += g;
            }
        }
        Method::RotatE => {
            let norm = -score(method, dim, h, r, t);
            if norm < 1e-12 {
                return;
            }
            let c = scale / norm;
            for i in 0..dim {
                let (a, b) = (h[2 * i], h[2 * i + 1]);
                let (sin, cos) = r[i].sin_cos();
                let (u, v) = rotate_residual(a, b, r[i], t[2 * i], t[2 * i + 1]);
                gh[2 * i] -= c * (u * cos + v * sin);
                gh[2 * i + 1] -= c * (-u * sin + v * cos);
                gr[i] -= c * (u * (-a * sin - b * cos) + v * (a * cos - b * sin));
                gt[2 * i] += c * u;
                gt[2 * i + 1] += c * v;
            }
        }
        Method::DistMult => {
            for i in 0..dim {
                gh[i] += scale * r[i] * t[i];
                gr[i] += scale * h[i] * t[i];
                gt[i] += scale * h[i] * r[i];
            }
        }
        Method::ComplEx => {
            for i in 0..dim {
                let (hr, hi) = (h[2 * i], h[2 * i + 1]);
                let (rr, ri) = (r[2 * i], r[2 * i + 1]);
                let (tr, ti) = (t[2 * i], t[2 * i + 1]);
                gh[2 * i] += scale * (rr * tr + ri * ti);
                gh[2 * i + 1] += scale * (rr * ti - ri * tr);
                gr[2 * i] += scale * (hr * tr + hi * ti);
                gr[2 * i + 1] += scale * (hr * ti - hi * tr);
                gt[2 * i] += scale * (hr * rr - hi * ri);
                gt[2 * i + 1] += scale * (hr * ri + hi * rr);
            }
        }
        Method::Rescal => {
            for i in 0..dim {
                let row = &r[i * dim..(i + 1) * dim];
                let mut acc = 0.0;
                for j in 0..dim {
                    acc += row[j] * t[j];
                    gr[i * dim + j] += scale * h[i] * t[j];
                    gt[j] += scale * h[i] * row[j];
                }
                gh[i] += scale * acc;
            }
        }
    }
}
