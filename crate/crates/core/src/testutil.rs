use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{
    BearingPair, CorrespondenceSet, RelativePose, RotationMatrix, TranslationDirection, Vec3,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

pub fn random_pose(rng: &mut impl Rng) -> RelativePose {
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    RelativePose::new(
        RotationMatrix::from_axis_angle(&random_unit(rng), angle),
        TranslationDirection::normalized(random_unit(rng)).unwrap(),
    )
}

pub struct Scene {
    pub pose: RelativePose,
    pub corr: CorrespondenceSet,
}

/// Small-baseline scene with every point in front of both cameras.
pub fn noiseless_scene(seed: u64, n: usize) -> Scene {
    let mut rng = rng(seed);
    let r = RotationMatrix::from_axis_angle(&random_unit(&mut rng), rng.random_range(0.0..0.3));
    let t = random_unit(&mut rng);
    let pose = RelativePose::new(r, TranslationDirection::normalized(t).unwrap());
    let baseline = 0.5;
    let mut pairs = Vec::with_capacity(n);
    while pairs.len() < n {
        let p1 = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(2.0..6.0),
        );
        let p2 = r.matrix().transpose() * (p1 - t * baseline);
        if p2.z <= 0.1 {
            continue;
        }
        pairs.push(BearingPair::normalized(p1, p2).unwrap());
    }
    Scene {
        pose,
        corr: CorrespondenceSet::new(pairs).unwrap(),
    }
}
