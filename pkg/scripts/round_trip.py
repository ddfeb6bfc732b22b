"""Encode random toy-hand grasps as distance matrices and decode them back.

Reports worst-case joint-angle and base-translation error plus timing.

    python scripts/round_trip.py --configs 100 --noise 0.0
"""
import argparse
import time

import numpy as np

from graspforge.assets import TOY_HAND, TOY_HAND_COUNTS
from graspforge.dro import DistanceMatrix, decode_grasp, encode_distance_matrix
from graspforge.geometry import box_mesh, sample_surface
from graspforge.kinematics import JointConfig, load_robot, point_cloud_fk, sample_link_points
from graspforge.transforms import matrix_to_quat, random_rotation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--configs", type=int, default=100)
    ap.add_argument("--noise", type=float, default=0.0, help="relative Gaussian noise on matrix entries")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    hand = load_robot(TOY_HAND)
    pts = sample_link_points(hand, TOY_HAND_COUNTS, seed=0)
    obj = sample_surface(box_mesh((0.05, 0.04, 0.06), center=(0.0, 0.08, 0.04)), 512, seed=0).points
    rng = np.random.default_rng(args.seed)
    angle_err, trans_err = [], []
    t0 = time.perf_counter()
    for _ in range(args.configs):
        q = JointConfig(rng.normal(scale=0.1, size=3), matrix_to_quat(random_rotation(rng)), rng.uniform(hand.lower, hand.upper))
        D = encode_distance_matrix(point_cloud_fk(hand, q, pts).points, obj, pts.identity_hash())
        if args.noise:
            D = DistanceMatrix((D.values * (1 + args.noise * rng.normal(size=D.shape))).clip(0), D.robot_hash, D.object_hash)
        rec = decode_grasp(D, obj, hand, pts)
        angle_err.append(np.max(np.abs(rec.q.angles - q.angles)))
        trans_err.append(np.linalg.norm(rec.q.base_translation - q.base_translation))
    dt = time.perf_counter() - t0
    print(f"configs           {args.configs}")
    print(f"max angle error   {max(angle_err):.3e} rad (median {np.median(angle_err):.3e})")
    print(f"max base error    {max(trans_err):.3e} m (median {np.median(trans_err):.3e})")
    print(f"time              {dt:.1f} s ({dt / args.configs * 1e3:.0f} ms per grasp)")


if __name__ == "__main__":
    main()
