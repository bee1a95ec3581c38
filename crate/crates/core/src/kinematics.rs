//! Serial kinematic chains, forward kinematics and robot keypoints.
//!
//! A chain with `Q` joints has links `0..=Q`; link 0 is the robot base. Joint
//! `k` (1-based) connects link `k-1` to link `k`: its `origin` places the joint
//! frame in the parent link frame and the joint motion (rotation about or
//! translation along `axis`) follows. An optional `tip` offset on the last link
//! marks the end effector.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::{RigidTransform, Rotation, Transform3};

const AXIS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: JointKind,
    pub axis: Vector3<f64>,
    pub origin: RigidTransform,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<[f64; 2]>,
}

impl Joint {
    fn motion(&self, q: f64) -> RigidTransform {
        match self.kind {
            JointKind::Revolute => RigidTransform::new(Rotation::exp(&(self.axis * q)), Vector3::zeros()),
            JointKind::Prismatic => RigidTransform::from_translation(self.axis * q),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    pub name: String,
    pub joints: Vec<Joint>,
    /// End-effector offset in the last link frame.
    #[serde(default = "Vector3::zeros")]
    pub tip: Vector3<f64>,
    /// Radius of the capsule proxy drawn around every link.
    #[serde(default = "default_link_radius")]
    pub link_radius: f64,
}

fn default_link_radius() -> f64 {
    0.04
}

impl KinematicChain {
    pub fn validate(&self) -> Result<()> {
        for (i, j) in self.joints.iter().enumerate() {
            if (j.axis.norm() - 1.0).abs() > AXIS_TOL {
                return Err(Error::InvalidInput(format!(
                    "joint {i} ({}) axis is not unit length (|axis| = {})",
                    j.name,
                    j.axis.norm()
                )));
            }
            if let Some([lo, hi]) = j.limits {
                if !(lo <= hi) {
                    return Err(Error::InvalidInput(format!(
                        "joint {i} ({}) has inverted limits [{lo}, {hi}]",
                        j.name
                    )));
                }
            }
        }
        if !(self.link_radius > 0.0) {
            return Err(Error::InvalidInput("link radius must be positive".into()));
        }
        Ok(())
    }

    /// Number of joints `Q`.
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn link_count(&self) -> usize {
        self.joints.len() + 1
    }

    pub fn check_state(&self, state: &JointState) -> Result<()> {
        if state.0.len() != self.dof() {
            return Err(Error::dims(format!("{} joint values", self.dof()), state.0.len()));
        }
        for (i, (joint, q)) in self.joints.iter().zip(&state.0).enumerate() {
            if !q.is_finite() {
                return Err(Error::InvalidInput(format!("joint {i} value is not finite")));
            }
            if let Some([lower, upper]) = joint.limits {
                if *q < lower || *q > upper {
                    return Err(Error::JointLimit {
                        joint: i,
                        value: *q,
                        lower,
                        upper,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointState(pub Vec<f64>);

impl JointState {
    pub fn zeros(dof: usize) -> Self {
        Self(vec![0.0; dof])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub link: usize,
    pub offset: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeypointSpec(pub Vec<Keypoint>);

impl KeypointSpec {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self, chain: &KinematicChain) -> Result<()> {
        for (i, kp) in self.0.iter().enumerate() {
            if kp.link >= chain.link_count() {
                return Err(Error::InvalidInput(format!(
                    "keypoint {i} references link {} but the chain has {} links",
                    kp.link,
                    chain.link_count()
                )));
            }
        }
        Ok(())
    }
}

/// Chain plus its keypoints, as stored in a robot description file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    #[serde(flatten)]
    pub chain: KinematicChain,
    pub keypoints: KeypointSpec,
}

impl RobotModel {
    pub fn validate(&self) -> Result<()> {
        self.chain.validate()?;
        self.keypoints.validate(&self.chain)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: RobotModel =
            serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("robot description: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile { path: path.into() }
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_json(&text).map_err(|e| Error::Malformed {
            path: path.into(),
            reason: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("robot model serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// A six-joint arm of roughly desk scale, standing at the base origin with
    /// z up, and eight keypoints spread along it.
    pub fn default_arm() -> Self {
        let z = Vector3::z();
        let y = Vector3::y();
        let joint = |name: &str, axis: Vector3<f64>, height: f64, limit: f64| Joint {
            name: name.into(),
            kind: JointKind::Revolute,
            axis,
            origin: RigidTransform::from_translation(Vector3::new(0.0, 0.0, height)),
            limits: Some([-limit, limit]),
        };
        let chain = KinematicChain {
            name: "arm6".into(),
            joints: vec![
                joint("base_yaw", z, 0.10, 2.8),
                joint("shoulder", y, 0.22, 1.7),
                joint("elbow", y, 0.34, 2.6),
                joint("forearm_roll", z, 0.28, 2.8),
                joint("wrist_pitch", y, 0.08, 1.7),
                joint("wrist_roll", z, 0.08, 2.8),
            ],
            tip: Vector3::new(0.0, 0.0, 0.10),
            link_radius: 0.04,
        };
        let kp = |link, x, y, z| Keypoint {
            link,
            offset: Vector3::new(x, y, z),
        };
        let keypoints = KeypointSpec(vec![
            kp(0, 0.06, 0.0, 0.05),
            kp(1, 0.0, 0.06, 0.12),
            kp(2, 0.06, 0.0, 0.18),
            kp(3, 0.0, -0.06, 0.15),
            kp(4, 0.05, 0.0, 0.04),
            kp(5, 0.0, 0.05, 0.04),
            kp(6, 0.05, 0.0, 0.08),
            kp(6, -0.05, 0.0, 0.08),
        ]);
        Self { chain, keypoints }
    }
}

/// Base-frame pose of every link `0..=Q`.
pub fn forward_kinematics(chain: &KinematicChain, state: &JointState) -> Result<Vec<RigidTransform>> {
    chain.check_state(state)?;
    let mut poses = Vec::with_capacity(chain.link_count());
    let mut current = RigidTransform::identity();
    poses.push(current);
    for (joint, q) in chain.joints.iter().zip(&state.0) {
        current = current.compose(&joint.origin).compose(&joint.motion(*q));
        poses.push(current);
    }
    Ok(poses)
}

/// Base-frame position of the chain tip.
pub fn end_effector(chain: &KinematicChain, state: &JointState) -> Result<Vector3<f64>> {
    let poses = forward_kinematics(chain, state)?;
    Ok(poses.last().expect("base link always present").apply(&chain.tip))
}

pub fn keypoints_3d(chain: &KinematicChain, state: &JointState, spec: &KeypointSpec) -> Result<Vec<Vector3<f64>>> {
    spec.validate(chain)?;
    let poses = forward_kinematics(chain, state)?;
    Ok(spec.0.iter().map(|kp| poses[kp.link].apply(&kp.offset)).collect())
}

/// Segment endpoints of each link's capsule proxy: link `k` spans from its
/// own origin to the next joint origin, the last link to the tip.
pub fn link_segments(chain: &KinematicChain, state: &JointState) -> Result<Vec<(Vector3<f64>, Vector3<f64>)>> {
    let poses = forward_kinematics(chain, state)?;
    Ok(poses
        .iter()
        .enumerate()
        .map(|(k, pose)| {
            let end = match chain.joints.get(k) {
                Some(next) => next.origin.translation,
                None => chain.tip,
            };
            (pose.translation, pose.apply(&end))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn planar() -> KinematicChain {
        let joint = |x: f64| Joint {
            name: String::new(),
            kind: JointKind::Revolute,
            axis: Vector3::z(),
            origin: RigidTransform::from_translation(Vector3::new(x, 0.0, 0.0)),
            limits: None,
        };
        KinematicChain {
            name: "planar".into(),
            joints: vec![joint(0.0), joint(1.0)],
            tip: Vector3::new(1.0, 0.0, 0.0),
            link_radius: 0.05,
        }
    }

    fn close(a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn planar_arm_end_effector() {
        let arm = planar();
        assert!(close(
            &end_effector(&arm, &JointState(vec![0.0, 0.0])).unwrap(),
            &Vector3::new(2.0, 0.0, 0.0)
        ));
        assert!(close(
            &end_effector(&arm, &JointState(vec![FRAC_PI_2, 0.0])).unwrap(),
            &Vector3::new(0.0, 2.0, 0.0)
        ));
        // planar trigonometry: (cos a + cos(a+b), sin a + sin(a+b))
        for (a, b) in [(FRAC_PI_2, -FRAC_PI_2), (0.3, 1.1), (-2.0, 0.4)] {
            let expected = Vector3::new(a.cos() + (a + b).cos(), a.sin() + (a + b).sin(), 0.0);
            assert!(close(&end_effector(&arm, &JointState(vec![a, b])).unwrap(), &expected));
        }
    }

    #[test]
    fn planar_arm_keypoints() {
        let arm = planar();
        let spec = KeypointSpec(vec![
            Keypoint {
                link: 0,
                offset: Vector3::zeros(),
            },
            Keypoint {
                link: 2,
                offset: Vector3::new(0.5, 0.0, 0.0),
            },
        ]);
        let pts = keypoints_3d(&arm, &JointState(vec![0.0, 0.0]), &spec).unwrap();
        assert!(close(&pts[0], &Vector3::zeros()));
        assert!(close(&pts[1], &Vector3::new(1.5, 0.0, 0.0)));
        let pts = keypoints_3d(&arm, &JointState(vec![1.0, -0.7]), &spec).unwrap();
        assert!(close(&pts[0], &Vector3::zeros()));
    }

    #[test]
    fn state_errors() {
        let arm = planar();
        assert!(matches!(
            forward_kinematics(&arm, &JointState(vec![0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        let model = RobotModel::default_arm();
        let mut q = JointState::zeros(model.chain.dof());
        q.0[1] = 3.0;
        assert!(matches!(
            forward_kinematics(&model.chain, &q),
            Err(Error::JointLimit { joint: 1, .. })
        ));
        let bad = KeypointSpec(vec![Keypoint {
            link: 3,
            offset: Vector3::zeros(),
        }]);
        assert!(keypoints_3d(&arm, &JointState(vec![0.0, 0.0]), &bad).is_err());
    }

    #[test]
    fn prismatic_joint_translates() {
        let chain = KinematicChain {
            name: "slide".into(),
            joints: vec![Joint {
                name: "slide".into(),
                kind: JointKind::Prismatic,
                axis: Vector3::x(),
                origin: RigidTransform::from_translation(Vector3::new(0.0, 0.0, 1.0)),
                limits: Some([0.0, 0.5]),
            }],
            tip: Vector3::zeros(),
            link_radius: 0.01,
        };
        let p = end_effector(&chain, &JointState(vec![0.25])).unwrap();
        assert!(close(&p, &Vector3::new(0.25, 0.0, 1.0)));
    }

    fn random_state(model: &RobotModel, rng: &mut impl Rng) -> JointState {
        JointState(
            model
                .chain
                .joints
                .iter()
                .map(|j| {
                    let [lo, hi] = j.limits.unwrap();
                    rng.random_range(lo..hi)
                })
                .collect(),
        )
    }

    #[test]
    fn zero_state_is_product_of_origins() {
        let model = RobotModel::default_arm();
        let poses = forward_kinematics(&model.chain, &JointState::zeros(6)).unwrap();
        let mut acc = RigidTransform::identity();
        for (joint, pose) in model.chain.joints.iter().zip(&poses[1..]) {
            acc = acc.compose(&joint.origin);
            assert!((acc.to_matrix4() - pose.to_matrix4()).abs().max() < 1e-15);
        }
    }

    #[test]
    fn same_link_keypoints_move_rigidly() {
        let model = RobotModel::default_arm();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rest = keypoints_3d(&model.chain, &JointState::zeros(6), &model.keypoints).unwrap();
        let rest_dist = (rest[6] - rest[7]).norm();
        for _ in 0..100 {
            let q = random_state(&model, &mut rng);
            let pts = keypoints_3d(&model.chain, &q, &model.keypoints).unwrap();
            assert!(((pts[6] - pts[7]).norm() - rest_dist).abs() < 1e-12);
        }
    }

    #[test]
    fn revolute_joint_preserves_distance_to_axis() {
        let model = RobotModel::default_arm();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let probe = Vector3::new(0.03, -0.02, 0.11);
        for _ in 0..50 {
            let mut q = random_state(&model, &mut rng);
            let k = rng.random_range(0..6);
            let before = forward_kinematics(&model.chain, &q).unwrap();
            // joint k's axis line in the base frame, taken from the parent side
            let joint_frame = before[k].compose(&model.chain.joints[k].origin);
            let (anchor, dir) = (
                joint_frame.translation,
                joint_frame.rotation.apply(&model.chain.joints[k].axis),
            );
            let dist = |p: Vector3<f64>| (p - anchor - dir * dir.dot(&(p - anchor))).norm();
            let p0 = before[k + 1].apply(&probe);
            q.0[k] = rng.random_range(-1.0..1.0);
            let p1 = forward_kinematics(&model.chain, &q).unwrap()[k + 1].apply(&probe);
            assert!((dist(p0) - dist(p1)).abs() < 1e-12);
        }
    }

    #[test]
    fn robot_file_round_trip_and_validation() {
        let model = RobotModel::default_arm();
        let back = RobotModel::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
        let mut bad = model.clone();
        bad.chain.joints[0].axis = Vector3::new(0.0, 0.0, 2.0);
        assert!(RobotModel::from_json(&bad.to_json()).is_err());
    }

    #[test]
    fn segments_follow_the_chain() {
        let model = RobotModel::default_arm();
        let q = JointState::zeros(6);
        let segs = link_segments(&model.chain, &q).unwrap();
        assert_eq!(segs.len(), 7);
        for w in segs.windows(2) {
            assert!(close(&w[0].1, &w[1].0));
        }
        assert!(close(&segs[6].1, &end_effector(&model.chain, &q).unwrap()));
    }
}
