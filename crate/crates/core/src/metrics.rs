//! Keypoint metrics: torso-normalized PCK and a per-joint average
//! precision under the same distance rule, with group tables.
//!
//! The AP here is a single-person simplification: every visible ground
//! truth joint gets exactly one prediction, predictions are ranked by
//! confidence, and a prediction is a true positive when it lies within the
//! PCK distance. It is not comparable to multi-person benchmark mAP.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::codec::Keypoint;
use crate::data::skeleton::{torso_length, GROUPS, JOINT_NAMES};
use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

/// Per-joint correctness of one prediction: `None` for joints whose ground
/// truth is invisible. Returns `None` when the torso is degenerate.
pub fn pck(pred: &[Keypoint], gt: &[Keypoint], threshold: f64) -> Option<Vec<Option<bool>>> {
    normalized_distances(pred, gt).map(|d| d.into_iter().map(|d| d.map(|d| d <= threshold)).collect())
}

/// Distances divided by the ground-truth torso length.
pub fn normalized_distances(pred: &[Keypoint], gt: &[Keypoint]) -> Option<Vec<Option<f64>>> {
    let xy: Vec<(f64, f64)> = gt.iter().map(|k| (k.x, k.y)).collect();
    let torso = torso_length(&xy);
    if !(torso > 0.0) || !torso.is_finite() {
        return None;
    }
    Some(
        pred.iter()
            .zip(gt)
            .map(|(p, g)| g.visible.then(|| ((p.x - g.x).powi(2) + (p.y - g.y).powi(2)).sqrt() / torso))
            .collect(),
    )
}

/// Order of predictions by descending confidence (ties by input order).
fn ranking(confidences: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]).then(a.cmp(&b)));
    order
}

/// Precision/recall points of a ranked list, recall normalized by the
/// number of true positives.
pub fn pr_curve(confidences: &[f64], correct: &[bool]) -> Vec<(f64, f64)> {
    let positives = correct.iter().filter(|&&c| c).count();
    if positives == 0 {
        return Vec::new();
    }
    let mut tp = 0usize;
    ranking(confidences)
        .into_iter()
        .enumerate()
        .map(|(rank, i)| {
            if correct[i] {
                tp += 1;
            }
            (tp as f64 / positives as f64, tp as f64 / (rank + 1) as f64)
        })
        .collect()
}

/// Area under the monotonically interpolated precision–recall curve.
/// Empty input is undefined (`None`); no true positives gives 0.
pub fn average_precision(confidences: &[f64], correct: &[bool]) -> Option<f64> {
    if confidences.is_empty() {
        return None;
    }
    let curve = pr_curve(confidences, correct);
    if curve.is_empty() {
        return Some(0.0);
    }
    let mut best = 0.0f64;
    let mut interp: Vec<(f64, f64)> = curve
        .iter()
        .rev()
        .map(|&(r, p)| {
            best = best.max(p);
            (r, best)
        })
        .collect();
    interp.reverse();
    let mut area = 0.0;
    let mut prev = 0.0;
    for (r, p) in interp {
        area += (r - prev) * p;
        prev = r;
    }
    Some(area)
}

/// Collects predictions over a dataset.
#[derive(Clone, Debug)]
pub struct Accumulator {
    pub threshold: f64,
    /// Per joint: `(confidence, distance / torso)` of visible ground truth.
    pub entries: Vec<Vec<(f64, f64)>>,
    pub samples: usize,
    pub skipped: usize,
}

impl Accumulator {
    pub fn new(joints: usize, threshold: f64) -> Self {
        Accumulator {
            threshold,
            entries: vec![Vec::new(); joints],
            samples: 0,
            skipped: 0,
        }
    }

    pub fn add(&mut self, pred: &[Keypoint], gt: &[Keypoint]) -> Result<()> {
        if pred.len() != self.entries.len() || gt.len() != self.entries.len() {
            return Err(Error::Shape(format!(
                "expected {} joints, got {} predicted and {} ground truth",
                self.entries.len(),
                pred.len(),
                gt.len()
            )));
        }
        match normalized_distances(pred, gt) {
            Some(d) => {
                for (j, d) in d.into_iter().enumerate() {
                    if let Some(d) = d {
                        self.entries[j].push((pred[j].confidence, d));
                    }
                }
                self.samples += 1;
            }
            None => {
                log::warn!("sample with zero torso length skipped");
                self.skipped += 1;
            }
        }
        Ok(())
    }

    /// Fraction of visible joints within `threshold` torso lengths, pooled
    /// over all joints.
    pub fn pck_at(&self, threshold: f64) -> f64 {
        let (hit, n) = self.entries.iter().flatten().fold((0usize, 0usize), |(h, n), &(_, d)| {
            (h + usize::from(d <= threshold), n + 1)
        });
        if n == 0 {
            0.0
        } else {
            hit as f64 / n as f64
        }
    }

    pub fn report(&self) -> Result<EvalReport> {
        if self.samples == 0 {
            return Err(Error::Usage("cannot report on an empty evaluation set".into()));
        }
        let mut pck = Vec::with_capacity(self.entries.len());
        let mut ap = Vec::with_capacity(self.entries.len());
        for (j, e) in self.entries.iter().enumerate() {
            if e.is_empty() {
                log::info!("joint {} has no visible ground truth; excluded", JOINT_NAMES.get(j).unwrap_or(&"?"));
                pck.push(None);
                ap.push(None);
                continue;
            }
            let correct: Vec<bool> = e.iter().map(|&(_, d)| d <= self.threshold).collect();
            let conf: Vec<f64> = e.iter().map(|&(c, _)| c).collect();
            pck.push(Some(correct.iter().filter(|&&c| c).count() as f64 / e.len() as f64));
            ap.push(average_precision(&conf, &correct));
        }
        Ok(EvalReport {
            mean_pck: mean_defined(&pck),
            map: mean_defined(&ap),
            pck,
            ap,
            samples: self.samples,
            skipped: self.skipped,
            threshold: self.threshold,
        })
    }
}

fn mean_defined(v: &[Option<f64>]) -> f64 {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    if d.is_empty() {
        0.0
    } else {
        d.iter().sum::<f64>() / d.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Per-joint PCK in `[0, 1]`; `None` without visible ground truth.
    pub pck: Vec<Option<f64>>,
    /// Mean of the defined per-joint PCK values.
    pub mean_pck: f64,
    pub ap: Vec<Option<f64>>,
    /// Mean of the defined per-joint APs.
    pub map: f64,
    pub samples: usize,
    pub skipped: usize,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub group: String,
    /// Percentages (×100).
    pub pck: f64,
    pub ap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuredReport {
    pub version: u32,
    pub threshold: f64,
    pub samples: usize,
    /// One record per group followed by the `Mean` record.
    pub groups: Vec<GroupRecord>,
    pub joints: Vec<(String, Option<f64>, Option<f64>)>,
}

impl EvalReport {
    /// Group columns in percent; the last entry is the mean of the groups.
    pub fn groups(&self) -> Vec<GroupRecord> {
        let col = |v: &[Option<f64>], js: &[usize]| {
            let picked: Vec<Option<f64>> = js.iter().map(|&j| v.get(j).copied().flatten()).collect();
            100.0 * mean_defined(&picked)
        };
        let mut out: Vec<GroupRecord> = GROUPS
            .iter()
            .map(|(name, js)| GroupRecord {
                group: name.to_string(),
                pck: col(&self.pck, js),
                ap: col(&self.ap, js),
            })
            .collect();
        let n = out.len() as f64;
        let mean = GroupRecord {
            group: "Mean".into(),
            pck: out.iter().map(|g| g.pck).sum::<f64>() / n,
            ap: out.iter().map(|g| g.ap).sum::<f64>() / n,
        };
        out.push(mean);
        out
    }

    /// Aligned text table with the group columns and their mean.
    pub fn table(&self) -> String {
        let groups = self.groups();
        let mut s = String::new();
        let _ = write!(s, "{:<8}", "Metric");
        for g in &groups {
            let _ = write!(s, " {:>8}", g.group);
        }
        s.push('\n');
        for (label, pick) in [("PCK", 0), ("AP", 1)] {
            let label = if pick == 0 { format!("{label}@{}", self.threshold) } else { label.to_string() };
            let _ = write!(s, "{label:<8}");
            for g in &groups {
                let _ = write!(s, " {:>8.1}", if pick == 0 { g.pck } else { g.ap });
            }
            s.push('\n');
        }
        s
    }

    pub fn structured(&self) -> StructuredReport {
        StructuredReport {
            version: REPORT_VERSION,
            threshold: self.threshold,
            samples: self.samples,
            groups: self.groups(),
            joints: JOINT_NAMES
                .iter()
                .enumerate()
                .map(|(j, n)| (n.to_string(), self.pck.get(j).copied().flatten(), self.ap.get(j).copied().flatten()))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::skeleton::NUM_JOINTS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A figure with torso length exactly 10.
    fn figure() -> Vec<Keypoint> {
        (0..NUM_JOINTS)
            .map(|j| {
                let (x, y) = match j {
                    3 | 4 => (j as f64, 0.0),
                    5 | 6 => (j as f64 - 2.0, 10.0),
                    _ => (j as f64, 3.0 + j as f64),
                };
                Keypoint::new(x, y, true)
            })
            .collect()
    }

    fn shifted(p: &[Keypoint], dx: f64) -> Vec<Keypoint> {
        p.iter().map(|k| Keypoint { x: k.x + dx, ..*k }).collect()
    }

    #[test]
    fn pck_boundary_rules() {
        let gt = figure();
        assert!(pck(&gt, &gt, 0.2).unwrap().iter().all(|c| *c == Some(true)));
        // Exactly on the boundary counts as correct.
        assert!(pck(&shifted(&gt, 2.0), &gt, 0.2).unwrap().iter().all(|c| *c == Some(true)));
        assert!(pck(&shifted(&gt, 4.0), &gt, 0.2).unwrap().iter().all(|c| *c == Some(false)));
        let mut hidden = gt.clone();
        hidden[0].visible = false;
        assert_eq!(pck(&gt, &hidden, 0.2).unwrap()[0], None);
        let point: Vec<Keypoint> = gt.iter().map(|k| Keypoint { x: 1.0, y: 1.0, ..*k }).collect();
        assert!(pck(&gt, &point, 0.2).is_none());
    }

    #[test]
    fn pck_is_scale_equivariant() {
        let gt = figure();
        let pred = shifted(&gt, 1.9);
        let s = 3.7;
        let scale = |p: &[Keypoint]| p.iter().map(|k| Keypoint { x: k.x * s, y: k.y * s, ..*k }).collect::<Vec<_>>();
        assert_eq!(pck(&pred, &gt, 0.2), pck(&scale(&pred), &scale(&gt), 0.2));
    }

    #[test]
    fn ap_extremes() {
        assert_eq!(average_precision(&[0.9, 0.5, 0.1], &[true, true, true]), Some(1.0));
        assert_eq!(average_precision(&[0.9, 0.5, 0.1], &[false, false, false]), Some(0.0));
        assert_eq!(average_precision(&[], &[]), None);
        // Correct ones ranked last: precision 1/3 then 2/4.
        let ap = average_precision(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap();
        assert!((ap - 0.5).abs() < 1e-12, "{ap}");
    }

    #[test]
    fn ap_of_random_half_correct_ranking_is_one_half() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 4000;
            let conf: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let correct: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let ap = average_precision(&conf, &correct).unwrap();
            assert!((ap - 0.5).abs() < 0.05, "seed {seed}: {ap}");
        }
    }

    #[test]
    fn ap_is_invariant_to_monotone_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conf: Vec<f64> = (0..200).map(|_| rng.random()).collect();
        let correct: Vec<bool> = (0..200).map(|_| rng.random_bool(0.6)).collect();
        let a = average_precision(&conf, &correct);
        let t: Vec<f64> = conf.iter().map(|c| (5.0 * c).exp() - 3.0).collect();
        assert_eq!(a, average_precision(&t, &correct));
    }

    #[test]
    fn perfect_sample_reports_100() {
        let gt = figure();
        let mut acc = Accumulator::new(NUM_JOINTS, 0.2);
        acc.add(&gt, &gt).unwrap();
        let r = acc.report().unwrap();
        assert_eq!(r.mean_pck, 1.0);
        assert_eq!(r.map, 1.0);
        for g in r.groups() {
            assert_eq!((g.pck, g.ap), (100.0, 100.0));
        }
        let table = r.table();
        let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(header, ["Metric", "Head", "Shoulder", "Elbow", "Wrist", "Hip", "Knee", "Ankle", "Mean"]);
        assert!(table.lines().nth(1).unwrap().ends_with("100.0"));
    }

    #[test]
    fn mean_column_matches_groups() {
        let gt = figure();
        let mut acc = Accumulator::new(NUM_JOINTS, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..30 {
            let pred: Vec<Keypoint> = gt
                .iter()
                .map(|k| Keypoint { x: k.x + rng.random_range(-3.0..3.0), confidence: rng.random(), ..*k })
                .collect();
            acc.add(&pred, &gt).unwrap();
        }
        let r = acc.report().unwrap();
        let g = r.groups();
        let mean = g[..7].iter().map(|g| g.pck).sum::<f64>() / 7.0;
        assert!((g[7].pck - mean).abs() < 1e-12);
        let joint_mean = r.pck.iter().flatten().sum::<f64>() / NUM_JOINTS as f64;
        assert!((r.mean_pck - joint_mean).abs() < 1e-12);
        assert_eq!(r.structured().groups, g);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(Accumulator::new(NUM_JOINTS, 0.2).report().is_err());
    }
}
