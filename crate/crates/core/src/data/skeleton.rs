//! The 15-joint skeleton used by the synthetic figures and the metrics.

pub const NUM_JOINTS: usize = 15;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "neck",
    "belly",
    "face",
    "r_shoulder",
    "l_shoulder",
    "r_hip",
    "l_hip",
    "r_elbow",
    "l_elbow",
    "r_knee",
    "l_knee",
    "r_wrist",
    "l_wrist",
    "r_ankle",
    "l_ankle",
];

pub const NECK: usize = 0;
pub const BELLY: usize = 1;
pub const FACE: usize = 2;
pub const R_SHOULDER: usize = 3;
pub const L_SHOULDER: usize = 4;
pub const R_HIP: usize = 5;
pub const L_HIP: usize = 6;
pub const R_ELBOW: usize = 7;
pub const L_ELBOW: usize = 8;
pub const R_KNEE: usize = 9;
pub const L_KNEE: usize = 10;
pub const R_WRIST: usize = 11;
pub const L_WRIST: usize = 12;
pub const R_ANKLE: usize = 13;
pub const L_ANKLE: usize = 14;

/// Rendered segments, each with its own color.
pub const LIMBS: [(usize, usize); 14] = [
    (FACE, NECK),
    (NECK, BELLY),
    (NECK, R_SHOULDER),
    (NECK, L_SHOULDER),
    (R_SHOULDER, R_ELBOW),
    (R_ELBOW, R_WRIST),
    (L_SHOULDER, L_ELBOW),
    (L_ELBOW, L_WRIST),
    (BELLY, R_HIP),
    (BELLY, L_HIP),
    (R_HIP, R_KNEE),
    (R_KNEE, R_ANKLE),
    (L_HIP, L_KNEE),
    (L_KNEE, L_ANKLE),
];

/// Joint order along the body used to pick contiguous half-body subsets.
pub const CHAIN: [usize; NUM_JOINTS] = [
    FACE, NECK, R_SHOULDER, R_ELBOW, R_WRIST, L_SHOULDER, L_ELBOW, L_WRIST, BELLY, R_HIP, R_KNEE,
    R_ANKLE, L_HIP, L_KNEE, L_ANKLE,
];

/// Report columns and the joints averaged into each.
pub const GROUPS: [(&str, &[usize]); 7] = [
    ("Head", &[FACE, NECK]),
    ("Shoulder", &[R_SHOULDER, L_SHOULDER]),
    ("Elbow", &[R_ELBOW, L_ELBOW]),
    ("Wrist", &[R_WRIST, L_WRIST]),
    ("Hip", &[R_HIP, L_HIP, BELLY]),
    ("Knee", &[R_KNEE, L_KNEE]),
    ("Ankle", &[R_ANKLE, L_ANKLE]),
];

/// Torso length: distance from mid-shoulder to mid-hip.
pub fn torso_length(xy: &[(f64, f64)]) -> f64 {
    let mid = |a: usize, b: usize| ((xy[a].0 + xy[b].0) / 2.0, (xy[a].1 + xy[b].1) / 2.0);
    let s = mid(R_SHOULDER, L_SHOULDER);
    let h = mid(R_HIP, L_HIP);
    ((s.0 - h.0).powi(2) + (s.1 - h.1).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_cover_every_joint_once() {
        let mut seen = [0; NUM_JOINTS];
        for (_, js) in GROUPS {
            for &j in js {
                seen[j] += 1;
            }
        }
        assert!(seen.iter().all(|&n| n == 1));
        let mut chain = CHAIN;
        chain.sort();
        assert_eq!(chain.to_vec(), (0..NUM_JOINTS).collect::<Vec<_>>());
    }

    #[test]
    fn torso_of_unit_figure() {
        let mut xy = vec![(0.0, 0.0); NUM_JOINTS];
        xy[R_SHOULDER] = (-1.0, 0.0);
        xy[L_SHOULDER] = (1.0, 0.0);
        xy[R_HIP] = (-1.0, 3.0);
        xy[L_HIP] = (1.0, 5.0);
        assert_eq!(torso_length(&xy), 4.0);
    }
}
