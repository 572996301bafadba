//! Mass-function algebra over a frame of discernment.
//!
//! The binary frame `{T, F}` is what the fusion pipeline uses: every branch
//! produces a [`BinaryMass`] over the focal sets `T`, `F` and `U = {T, F}`.
//! [`GeneralMass`] implements the same combination rule over an arbitrary
//! frame of up to [`MAX_FRAME`] hypotheses by enumerating subset
//! intersections; it doubles as the reference for the binary fast path.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Tolerance on `m_t + m_f + m_u = 1`.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Below this normalization mass the sources are considered totally conflicting.
pub const CONFLICT_FLOOR: f64 = 1e-12;

/// Largest frame accepted by [`GeneralMass`].
pub const MAX_FRAME: usize = 10;

/// Belief assignment over `{T, F, U}` for a two-hypothesis frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMass {
    t: f64,
    f: f64,
    u: f64,
}

impl BinaryMass {
    pub fn new(t: f64, f: f64, u: f64) -> Result<Self> {
        for (name, v) in [("m_t", t), ("m_f", f), ("m_u", u)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("{name} = {v} outside [0, 1]")));
            }
        }
        let sum = t + f + u;
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Domain(format!("masses sum to {sum}, not 1")));
        }
        Ok(Self { t, f, u })
    }

    /// All mass on `U`: total ignorance, the neutral element of combination.
    pub const fn vacuous() -> Self {
        Self {
            t: 0.0,
            f: 0.0,
            u: 1.0,
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn f(&self) -> f64 {
        self.f
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.t, self.f, self.u]
    }
}

/// Mass assignment over the power set of a `K`-hypothesis frame.
///
/// Subsets are bitmasks; bit `k` set means hypothesis `k` is a member.
/// The empty set is never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralMass {
    frame_size: usize,
    masses: BTreeMap<u16, f64>,
}

impl GeneralMass {
    pub fn new(frame_size: usize, focal: impl IntoIterator<Item = (u16, f64)>) -> Result<Self> {
        check_frame(frame_size)?;
        let full = full_set(frame_size);
        let mut masses = BTreeMap::new();
        for (set, mass) in focal {
            if set == 0 {
                if mass != 0.0 {
                    return Err(Error::Domain("mass assigned to the empty set".into()));
                }
                continue;
            }
            if set & !full != 0 {
                return Err(Error::Domain(format!(
                    "subset {set:#b} not contained in a frame of size {frame_size}"
                )));
            }
            if !(0.0..=1.0).contains(&mass) {
                return Err(Error::Domain(format!("mass {mass} outside [0, 1]")));
            }
            if mass > 0.0 {
                *masses.entry(set).or_insert(0.0) += mass;
            }
        }
        let sum: f64 = masses.values().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Domain(format!("masses sum to {sum}, not 1")));
        }
        Ok(Self { frame_size, masses })
    }

    pub fn vacuous(frame_size: usize) -> Result<Self> {
        check_frame(frame_size)?;
        Ok(Self {
            frame_size,
            masses: BTreeMap::from([(full_set(frame_size), 1.0)]),
        })
    }

    /// Embeds a binary mass with `T` as hypothesis 0 and `F` as hypothesis 1.
    pub fn from_binary(m: &BinaryMass) -> Self {
        let masses = [(0b01, m.t), (0b10, m.f), (0b11, m.u)]
            .into_iter()
            .filter(|&(_, v)| v > 0.0)
            .collect();
        Self {
            frame_size: 2,
            masses,
        }
    }

    pub fn to_binary(&self) -> Result<BinaryMass> {
        if self.frame_size != 2 {
            return Err(Error::FrameMismatch {
                left: self.frame_size,
                right: 2,
            });
        }
        BinaryMass::new(self.mass(0b01), self.mass(0b10), self.mass(0b11))
    }

    pub fn frame_size(&self) -> usize {
        self.frame_size
    }

    /// Mass of `set`, zero when it is not a focal element.
    pub fn mass(&self, set: u16) -> f64 {
        self.masses.get(&set).copied().unwrap_or(0.0)
    }

    pub fn focal_elements(&self) -> impl Iterator<Item = (u16, f64)> + '_ {
        self.masses.iter().map(|(&s, &m)| (s, m))
    }
}

fn check_frame(frame_size: usize) -> Result<()> {
    if (1..=MAX_FRAME).contains(&frame_size) {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "frame size {frame_size} outside 1..={MAX_FRAME}"
        )))
    }
}

fn full_set(frame_size: usize) -> u16 {
    ((1u32 << frame_size) - 1) as u16
}

/// Binary decision read off a fused mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_bit(bit: u8) -> Self {
        if bit == 1 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub label: Label,
    /// Pignistic probability of the positive outcome.
    pub score: f64,
    /// Residual mass on `U`.
    pub conflict: f64,
}

/// Normalization mass `M` and conflict degree `kappa = 1 - M` of a pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conflict {
    pub normalization: f64,
    pub kappa: f64,
}

/// Mass of a branch whose probability of positive is `p` and whose
/// prediction is trusted to degree `s`.
pub fn calibrated_mass(p: f64, s: f64) -> Result<BinaryMass> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Domain(format!("evidence score {s} outside [0, 1]")));
    }
    Ok(BinaryMass {
        t: s * p,
        f: s * (1.0 - p),
        u: 1.0 - s,
    })
}

fn unnormalized(a: &BinaryMass, b: &BinaryMass) -> [f64; 3] {
    [
        a.t * b.t + a.t * b.u + b.t * a.u,
        a.f * b.f + a.f * b.u + b.f * a.u,
        a.u * b.u,
    ]
}

/// Dempster's rule on the binary frame.
pub fn combine_pair(a: &BinaryMass, b: &BinaryMass) -> Result<BinaryMass> {
    let [t, f, u] = unnormalized(a, b);
    let norm = t + f + u;
    if norm < CONFLICT_FLOOR {
        return Err(Error::TotalConflict {
            normalization: norm,
        });
    }
    Ok(BinaryMass {
        t: t / norm,
        f: f / norm,
        u: u / norm,
    })
}

/// Left fold of [`combine_pair`] over `masses`.
pub fn combine_many(masses: &[BinaryMass]) -> Result<BinaryMass> {
    let (first, rest) = masses.split_first().ok_or(Error::EmptyList)?;
    rest.iter().try_fold(*first, |acc, m| combine_pair(&acc, m))
}

/// Dempster's rule over an arbitrary frame by subset-intersection enumeration.
pub fn combine_general(a: &GeneralMass, b: &GeneralMass) -> Result<GeneralMass> {
    if a.frame_size != b.frame_size {
        return Err(Error::FrameMismatch {
            left: a.frame_size,
            right: b.frame_size,
        });
    }
    let mut joint: BTreeMap<u16, f64> = BTreeMap::new();
    let mut norm = 0.0;
    for (&x1, &m1) in &a.masses {
        for (&x2, &m2) in &b.masses {
            let meet = x1 & x2;
            if meet != 0 {
                let product = m1 * m2;
                *joint.entry(meet).or_insert(0.0) += product;
                norm += product;
            }
        }
    }
    if norm < CONFLICT_FLOOR {
        return Err(Error::TotalConflict {
            normalization: norm,
        });
    }
    for v in joint.values_mut() {
        *v /= norm;
    }
    joint.retain(|_, v| *v > 0.0);
    Ok(GeneralMass {
        frame_size: a.frame_size,
        masses: joint,
    })
}

pub fn conflict(a: &BinaryMass, b: &BinaryMass) -> Conflict {
    let [t, f, u] = unnormalized(a, b);
    Conflict {
        normalization: t + f + u,
        kappa: a.t * b.f + a.f * b.t,
    }
}

/// Pignistic decision: positive iff `m_t > m_f` (ties go negative).
pub fn decide(m: &BinaryMass) -> Decision {
    let label = if m.t > m.f {
        Label::Positive
    } else {
        Label::Negative
    };
    Decision {
        label,
        score: (m.t + 0.5 * m.u).clamp(0.0, 1.0),
        conflict: m.u,
    }
}
