use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::slot;
use crate::error::{Error, Result};

/// The three families of causal contrasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectKind {
    /// Average direct effect per mechanism.
    De,
    /// Marginal direct effect: the `q`-weighted average of the direct effects.
    Mde,
    /// Spillover effects between adjacent mechanisms, treated block first.
    Se,
}

impl EffectKind {
    pub const ALL: [EffectKind; 3] = [EffectKind::De, EffectKind::Mde, EffectKind::Se];

    /// Rank of the contrast for `m` mechanisms.
    pub fn dof(self, m: usize) -> usize {
        match self {
            EffectKind::De => m,
            EffectKind::Mde => 1,
            EffectKind::Se => 2 * (m - 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EffectKind::De => "de",
            EffectKind::Mde => "mde",
            EffectKind::Se => "se",
        }
    }
}

impl std::str::FromStr for EffectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "de" => Ok(EffectKind::De),
            "mde" => Ok(EffectKind::Mde),
            "se" => Ok(EffectKind::Se),
            other => Err(Error::BadKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContrastKind {
    Effect(EffectKind),
    Custom,
}

/// A full-row-rank `k x 2m` contrast over the interleaved mean vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMatrix {
    kind: ContrastKind,
    matrix: DMatrix<f64>,
}

impl ContrastMatrix {
    /// Builds one of the standard contrasts. `q` is only read for [`EffectKind::Mde`].
    pub fn build(kind: EffectKind, m: usize, q: &[f64]) -> Result<Self> {
        if m == 0 {
            return Err(Error::BadKind("contrast over zero mechanisms".into()));
        }
        let cols = 2 * m;
        let matrix = match kind {
            EffectKind::De => {
                let mut c = DMatrix::zeros(m, cols);
                for a in 0..m {
                    c[(a, slot(true, a))] = 1.0;
                    c[(a, slot(false, a))] = -1.0;
                }
                c
            }
            EffectKind::Mde => {
                if q.len() != m {
                    return Err(Error::ShapeMismatch(format!("{} weights for {m} mechanisms", q.len())));
                }
                let mut c = DMatrix::zeros(1, cols);
                for (a, &w) in q.iter().enumerate() {
                    c[(0, slot(true, a))] = w;
                    c[(0, slot(false, a))] = -w;
                }
                c
            }
            EffectKind::Se => {
                if m < 2 {
                    return Err(Error::BadKind("spillover contrast needs at least two mechanisms".into()));
                }
                let mut c = DMatrix::zeros(2 * (m - 1), cols);
                for a in 0..m - 1 {
                    c[(a, slot(true, a))] = 1.0;
                    c[(a, slot(true, a + 1))] = -1.0;
                    c[(m - 1 + a, slot(false, a))] = 1.0;
                    c[(m - 1 + a, slot(false, a + 1))] = -1.0;
                }
                c
            }
        };
        if kind == EffectKind::Mde && matrix.iter().all(|&x| x == 0.0) {
            return Err(Error::RankDeficient { rows: 1, rank: 0 });
        }
        Ok(ContrastMatrix {
            kind: ContrastKind::Effect(kind),
            matrix,
        })
    }

    /// Wraps an arbitrary contrast after checking it has full row rank.
    pub fn custom(matrix: DMatrix<f64>) -> Result<Self> {
        let rows = matrix.nrows();
        if rows == 0 || rows > matrix.ncols() || !matrix.ncols().is_multiple_of(2) {
            return Err(Error::ShapeMismatch(format!(
                "custom contrast is {} x {}",
                rows,
                matrix.ncols()
            )));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        let rank = matrix.clone().svd(false, false).rank(1e-12 * scale * matrix.ncols() as f64);
        if rank < rows {
            return Err(Error::RankDeficient { rows, rank });
        }
        Ok(ContrastMatrix {
            kind: ContrastKind::Custom,
            matrix,
        })
    }

    pub fn kind(&self) -> ContrastKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rank(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_mechanisms(&self) -> usize {
        self.matrix.ncols() / 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_effect_m2() {
        let c = ContrastMatrix::build(EffectKind::De, 2, &[]).unwrap();
        let want = DMatrix::from_row_slice(2, 4, &[1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0]);
        assert_eq!(c.matrix(), &want);
    }

    #[test]
    fn marginal_effect_halves() {
        let c = ContrastMatrix::build(EffectKind::Mde, 2, &[0.5, 0.5]).unwrap();
        assert_eq!(c.matrix(), &DMatrix::from_row_slice(1, 4, &[0.5, -0.5, 0.5, -0.5]));
    }

    #[test]
    fn spillover_m2_and_m3() {
        let c = ContrastMatrix::build(EffectKind::Se, 2, &[]).unwrap();
        assert_eq!(c.matrix(), &DMatrix::from_row_slice(2, 4, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]));
        let c = ContrastMatrix::build(EffectKind::Se, 3, &[]).unwrap();
        #[rustfmt::skip]
        let want = DMatrix::from_row_slice(4, 6, &[
            1.0, 0.0, -1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0, -1.0, 0.0,
            0.0, 1.0, 0.0, -1.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 1.0, 0.0, -1.0,
        ]);
        assert_eq!(c.matrix(), &want);
        assert_eq!(c.rank(), EffectKind::Se.dof(3));
    }

    #[test]
    fn spillover_needs_two_mechanisms() {
        assert!(matches!(ContrastMatrix::build(EffectKind::Se, 1, &[]), Err(Error::BadKind(_))));
    }

    #[test]
    fn custom_rank_check() {
        let ok = DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, -1.0]);
        assert!(ContrastMatrix::custom(ok).is_ok());
        let bad = DMatrix::from_row_slice(2, 4, &[1.0, -1.0, 0.0, 0.0, 2.0, -2.0, 0.0, 0.0]);
        assert!(matches!(ContrastMatrix::custom(bad), Err(Error::RankDeficient { rows: 2, rank: 1 })));
    }

    #[test]
    fn parse_kind() {
        assert_eq!("MDE".parse::<EffectKind>().unwrap(), EffectKind::Mde);
        assert!(matches!("ate".parse::<EffectKind>(), Err(Error::BadKind(_))));
    }
}
