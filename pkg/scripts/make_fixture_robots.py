"""Regenerate the bundled toy robots under src/graspforge/assets/.

toy_hand: palm + 5 fingers x 2 phalanges, 10 revolute flexion joints.
gripper: palm + 2 prismatic fingers (parallel jaw).

    python scripts/make_fixture_robots.py
"""
from pathlib import Path

import numpy as np

from graspforge.geometry import TriMesh, box_mesh, format_obj

ASSETS = Path(__file__).resolve().parents[1] / "src" / "graspforge" / "assets"

PALM = (0.08, 0.09, 0.02)
WIDTH = 0.016
CAP = 0.006
# name: (joint origin in palm frame, yaw, proximal length, distal length)
FINGERS = {
    "thumb": ((0.04, 0.02, 0.0), -0.8, 0.040, 0.035),
    "index": ((0.028, 0.09, 0.0), 0.0, 0.045, 0.035),
    "middle": ((0.0095, 0.09, 0.0), 0.0, 0.050, 0.040),
    "ring": ((-0.0095, 0.09, 0.0), 0.0, 0.045, 0.035),
    "little": ((-0.028, 0.09, 0.0), 0.0, 0.035, 0.030),
}
LIMITS = {"prox": (0.0, 1.5), "dist": (0.0, 1.6)}


def capped_box(width: float, length: float, cap: float) -> TriMesh:
    """Box along +y from y=0 whose top face is a pyramid with apex at (0, length, 0)."""
    h = width / 2.0
    top = length - cap
    V = np.array(
        [[-h, 0, -h], [h, 0, -h], [h, 0, h], [-h, 0, h],
         [-h, top, -h], [h, top, -h], [h, top, h], [-h, top, h],
         [0, length, 0]]
    )
    F = [
        [0, 1, 2], [0, 2, 3],  # bottom (-y)
        [0, 4, 5], [0, 5, 1],  # -z
        [1, 5, 6], [1, 6, 2],  # +x
        [2, 6, 7], [2, 7, 3],  # +z
        [3, 7, 4], [3, 4, 0],  # -x
        [4, 8, 5], [5, 8, 6], [6, 8, 7], [7, 8, 4],  # cap
    ]
    return TriMesh(V, F)


def write_toy_hand():
    out = ASSETS / "toy_hand"
    (out / "meshes").mkdir(parents=True, exist_ok=True)
    (out / "meshes" / "palm.obj").write_text(format_obj(box_mesh(PALM, (0, PALM[1] / 2, 0)), ["palm"]))
    links = ['  <link name="palm">\n    <collision><geometry><mesh filename="meshes/palm.obj"/></geometry></collision>\n  </link>']
    joints, keypoints = [], ['  <keypoint name="wrist" link="palm" xyz="0 0 0"/>']
    for name, (origin, yaw, l1, l2) in FINGERS.items():
        prox = box_mesh((WIDTH, l1, WIDTH), (0, l1 / 2, 0))
        dist = capped_box(WIDTH, l2, CAP)
        (out / "meshes" / f"{name}_prox.obj").write_text(format_obj(prox, [f"{name}_prox"]))
        (out / "meshes" / f"{name}_dist.obj").write_text(format_obj(dist, [f"{name}_dist"]))
        for part in ("prox", "dist"):
            links.append(
                f'  <link name="{name}_{part}">\n'
                f'    <collision><geometry><mesh filename="meshes/{name}_{part}.obj"/></geometry></collision>\n'
                f"  </link>"
            )
        x, y, z = origin
        lo, hi = LIMITS["prox"]
        joints.append(
            f'  <joint name="{name}_j1" type="revolute">\n'
            f'    <parent link="palm"/>\n    <child link="{name}_prox"/>\n'
            f'    <origin xyz="{x!r} {y!r} {z!r}" rpy="0 0 {yaw!r}"/>\n'
            f'    <axis xyz="-1 0 0"/>\n    <limit lower="{lo!r}" upper="{hi!r}"/>\n  </joint>'
        )
        lo, hi = LIMITS["dist"]
        joints.append(
            f'  <joint name="{name}_j2" type="revolute">\n'
            f'    <parent link="{name}_prox"/>\n    <child link="{name}_dist"/>\n'
            f'    <origin xyz="0 {l1!r} 0"/>\n'
            f'    <axis xyz="-1 0 0"/>\n    <limit lower="{lo!r}" upper="{hi!r}"/>\n  </joint>'
        )
        keypoints.append(f'  <keypoint name="{name}_mid" link="{name}_prox" xyz="0 {l1!r} 0"/>')
        keypoints.append(f'  <keypoint name="{name}_tip" link="{name}_dist" xyz="0 {l2!r} 0"/>')
    doc = "\n".join(['<robot name="toy_hand">', *links, *joints, *keypoints, "</robot>"]) + "\n"
    (out / "toy_hand.urdf").write_text(doc)


def write_gripper():
    out = ASSETS / "gripper"
    (out / "meshes").mkdir(parents=True, exist_ok=True)
    (out / "meshes" / "base.obj").write_text(format_obj(box_mesh((0.16, 0.02, 0.03)), ["base"]))
    finger = (0.01, 0.06, 0.03)
    (out / "meshes" / "left.obj").write_text(format_obj(box_mesh(finger, (-0.005, 0.04, 0)), ["left"]))
    (out / "meshes" / "right.obj").write_text(format_obj(box_mesh(finger, (0.005, 0.04, 0)), ["right"]))
    doc = """<robot name="gripper">
  <link name="base">
    <collision><geometry><mesh filename="meshes/base.obj"/></geometry></collision>
  </link>
  <link name="left">
    <collision><geometry><mesh filename="meshes/left.obj"/></geometry></collision>
  </link>
  <link name="right">
    <collision><geometry><mesh filename="meshes/right.obj"/></geometry></collision>
  </link>
  <joint name="left_slide" type="prismatic">
    <parent link="base"/>
    <child link="left"/>
    <axis xyz="-1 0 0"/>
    <limit lower="0" upper="0.07"/>
  </joint>
  <joint name="right_slide" type="prismatic">
    <parent link="base"/>
    <child link="right"/>
    <axis xyz="1 0 0"/>
    <limit lower="0" upper="0.07"/>
  </joint>
  <keypoint name="wrist" link="base" xyz="0 0 0"/>
  <keypoint name="left_tip" link="left" xyz="0 0.07 0"/>
  <keypoint name="right_tip" link="right" xyz="0 0.07 0"/>
  <finger_links names="left right"/>
</robot>
"""
    (out / "gripper.urdf").write_text(doc)


if __name__ == "__main__":
    write_toy_hand()
    write_gripper()
    print(f"wrote fixtures under {ASSETS}")
