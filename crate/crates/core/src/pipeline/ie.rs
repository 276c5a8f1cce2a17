use serde::{Deserialize, Serialize};

use super::MiMatrix;
use crate::error::{Error, Result};
use crate::types::{IEProfile, ShotStat};

/// How the micro-MI term of `E(l)` is aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MicroProtocol {
    /// Micro MI of position 0 only (entity sequences).
    FirstEntity,
    /// Mean micro MI over every micro position (natural sentences).
    PositionMean,
}

impl std::str::FromStr for MicroProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first_entity" => Ok(MicroProtocol::FirstEntity),
            "position_mean" => Ok(MicroProtocol::PositionMean),
            other => Err(Error::InvalidArgument(format!("unknown micro protocol {other:?}"))),
        }
    }
}

fn micro_term(micro: &MiMatrix, l: usize, protocol: MicroProtocol) -> Option<f64> {
    match protocol {
        MicroProtocol::FirstEntity => micro.bits(l, 0),
        MicroProtocol::PositionMean => {
            let mut sum = 0.0;
            for t in 0..micro.tokens {
                sum += micro.bits(l, t)?;
            }
            Some(sum / micro.tokens as f64)
        }
    }
}

/// `E(l, t) = MI_macro(l, t) − micro term(l)` and `Ê(t)` = mean over layer
/// pairs. Missing components leave gaps; nothing is imputed.
pub fn compute_ie(macro_mi: &MiMatrix, micro_mi: &MiMatrix, protocol: MicroProtocol) -> Result<IEProfile> {
    if macro_mi.layer_pairs != micro_mi.layer_pairs {
        return Err(Error::Shape(format!(
            "macro has {} layer pairs, micro has {}",
            macro_mi.layer_pairs, micro_mi.layer_pairs
        )));
    }
    if micro_mi.tokens == 0 {
        return Err(Error::Shape("micro matrix has no positions".into()));
    }
    let pairs = macro_mi.layer_pairs;
    let e_by_layer: Vec<Vec<Option<f64>>> = (0..pairs)
        .map(|l| {
            let micro = micro_term(micro_mi, l, protocol);
            (0..macro_mi.tokens)
                .map(|t| Some(macro_mi.bits(l, t)? - micro?))
                .collect()
        })
        .collect();
    let e_hat_by_token = (0..macro_mi.tokens)
        .map(|t| {
            if pairs == 0 {
                return None;
            }
            let mut sum = 0.0;
            for row in &e_by_layer {
                sum += row[t]?;
            }
            Some(sum / pairs as f64)
        })
        .collect();
    Ok(IEProfile {
        e_by_layer,
        e_hat_by_token,
        shot_stats: None,
    })
}

/// Sample standard deviation (`n − 1`); 0 for fewer than two values.
fn sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

fn shot_mean(profile: &IEProfile, range: std::ops::Range<usize>) -> Option<f64> {
    let n = range.len() as f64;
    let mut sum = 0.0;
    for t in range {
        sum += profile.e_hat_by_token[t]?;
    }
    Some(sum / n)
}

/// Per shot: mean `Ê(t)` over the shot's positions, the s.d. across those
/// positions, and the s.d. of the shot mean across `replicas` (bootstrap
/// re-estimates; empty slice for none).
pub fn shot_stats(profile: &IEProfile, shot_length: usize, replicas: &[IEProfile]) -> Result<Vec<ShotStat>> {
    let tokens = profile.tokens();
    if shot_length == 0 || !tokens.is_multiple_of(shot_length) {
        return Err(Error::InvalidArgument(format!(
            "T = {tokens} is not a multiple of shot length {shot_length}"
        )));
    }
    if let Some(r) = replicas.iter().find(|r| r.tokens() != tokens) {
        return Err(Error::Shape(format!(
            "replica has {} tokens, expected {tokens}",
            r.tokens()
        )));
    }
    let mut out = Vec::new();
    for shot in 0..tokens / shot_length {
        let range = shot * shot_length..(shot + 1) * shot_length;
        let values: Option<Vec<f64>> = range.clone().map(|t| profile.e_hat_by_token[t]).collect();
        let Some(values) = values else { continue };
        let means: Option<Vec<f64>> = replicas.iter().map(|r| shot_mean(r, range.clone())).collect();
        out.push(ShotStat {
            shot: shot + 1,
            mean: values.iter().sum::<f64>() / values.len() as f64,
            sd_positions: sd(&values),
            sd_bootstrap: match means {
                Some(m) if !m.is_empty() => Some(sd(&m)),
                _ => None,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{CellOutcome, Level};
    use super::*;
    use crate::types::MIEstimate;

    fn matrix(level: Level, rows: &[&[f64]]) -> MiMatrix {
        let tokens = rows[0].len();
        let cells = rows
            .iter()
            .enumerate()
            .flat_map(|(l, r)| {
                r.iter().enumerate().map(move |(t, &v)| {
                    CellOutcome::Done(MIEstimate {
                        value_bits: v,
                        layer_pair: l,
                        token: t,
                        epochs_run: 1,
                        best_epoch: 0,
                        seed: 0,
                    })
                })
            })
            .collect();
        MiMatrix {
            level,
            layer_pairs: rows.len(),
            tokens,
            cells,
        }
    }

    #[test]
    fn equal_matrices_give_zero() {
        let m = matrix(Level::Macro, &[&[1.5, 2.5], &[0.5, 3.0]]);
        let p = compute_ie(&m, &m, MicroProtocol::FirstEntity).unwrap();
        assert_eq!(p.e_by_layer[0][0], Some(0.0));
        let p = compute_ie(&m, &m, MicroProtocol::PositionMean).unwrap();
        assert_eq!(p.e_by_layer[1], [Some(-1.25), Some(1.25)]);
    }

    #[test]
    fn position_mean_hand_arithmetic() {
        let ma = matrix(Level::Macro, &[&[5.0, 5.0, 5.0]]);
        let mi = matrix(Level::Micro, &[&[1.0, 2.0, 3.0]]);
        let p = compute_ie(&ma, &mi, MicroProtocol::PositionMean).unwrap();
        assert_eq!(p.e_by_layer[0], [Some(3.0); 3]);
        let p = compute_ie(&ma, &mi, MicroProtocol::FirstEntity).unwrap();
        assert_eq!(p.e_hat_by_token, [Some(4.0); 3]);
    }

    #[test]
    fn e_hat_is_mean_over_layer_pairs() {
        let ma = matrix(Level::Macro, &[&[2.0, 4.0], &[6.0, 8.0], &[1.0, 0.0]]);
        let mi = matrix(Level::Micro, &[&[1.0], &[1.0], &[1.0]]);
        let p = compute_ie(&ma, &mi, MicroProtocol::FirstEntity).unwrap();
        assert_eq!(p.e_hat_by_token, [Some(2.0), Some(3.0)]);
    }

    #[test]
    fn protocols_coincide_for_single_token() {
        let ma = matrix(Level::Macro, &[&[0.7], &[0.9]]);
        let mi = matrix(Level::Micro, &[&[0.1], &[0.3]]);
        assert_eq!(
            compute_ie(&ma, &mi, MicroProtocol::FirstEntity).unwrap(),
            compute_ie(&ma, &mi, MicroProtocol::PositionMean).unwrap()
        );
    }

    #[test]
    fn failed_cells_propagate() {
        let ma = matrix(Level::Macro, &[&[1.0, 2.0], &[1.0, 2.0]]);
        let mut mi = matrix(Level::Micro, &[&[0.0, 0.0], &[0.0, 0.0]]);
        mi.cells[3] = CellOutcome::Failed {
            layer_pair: 1,
            token: 1,
            reason: "diverged".into(),
        };
        let p = compute_ie(&ma, &mi, MicroProtocol::FirstEntity).unwrap();
        assert!(p.e_hat_by_token.iter().all(Option::is_some));
        let p = compute_ie(&ma, &mi, MicroProtocol::PositionMean).unwrap();
        assert_eq!(p.e_by_layer[1], [None, None]);
        assert_eq!(p.e_hat_by_token, [None, None]);
    }

    #[test]
    fn shot_statistics() {
        let ma = matrix(Level::Macro, &[&[1.0, 1.0, 2.0, 4.0]]);
        let mi = matrix(Level::Micro, &[&[0.0]]);
        let p = compute_ie(&ma, &mi, MicroProtocol::FirstEntity).unwrap();
        let stats = shot_stats(&p, 2, &[]).unwrap();
        assert_eq!(stats.len(), 2);
        assert_eq!(
            (stats[0].mean, stats[0].sd_positions, stats[0].sd_bootstrap),
            (1.0, 0.0, None)
        );
        assert_eq!(stats[1].mean, 3.0);
        assert!((stats[1].sd_positions - 2f64.sqrt()).abs() < 1e-15);

        let shifted = compute_ie(
            &matrix(Level::Macro, &[&[3.0, 3.0, 2.0, 4.0]]),
            &mi,
            MicroProtocol::FirstEntity,
        )
        .unwrap();
        let stats = shot_stats(&p, 2, &[p.clone(), shifted]).unwrap();
        assert!((stats[0].sd_bootstrap.unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(stats[1].sd_bootstrap, Some(0.0));
        assert!(shot_stats(&p, 3, &[]).is_err());
    }
}
