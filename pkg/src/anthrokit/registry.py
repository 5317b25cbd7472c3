"""Canonical landmark and measurement name registries."""

from itertools import combinations

import numpy as np

REGISTRY_VERSION = "anthrokit-lm70/1"

_HEAD = [
    "Sellion",
    "Rt. Infraorbitale",
    "Lt. Infraorbitale",
    "Supramenton",
    "Rt. Tragion",
    "Lt. Tragion",
    "Rt. Gonion",
    "Lt. Gonion",
    "Nuchale",
    "Cervicale",
]

_TORSO = [
    "Rt. Clavicale",
    "Lt. Clavicale",
    "Suprasternale",
    "Rt. Thelion",
    "Lt. Thelion",
    "Substernale",
    "Rt. 10th Rib",
    "Lt. 10th Rib",
    "10th Rib Midspine",
    "Rt. Asis",
    "Lt. Asis",
    "Rt. Psis",
    "Lt. Psis",
    "Rt. Iliocristale",
    "Lt. Iliocristale",
    "Rt. Trochanterion",
    "Lt. Trochanterion",
    "Crotch",
    "Rt. Axilla Ant.",
    "Lt. Axilla Ant.",
    "Rt. Axilla Post.",
    "Lt. Axilla Post.",
]

_ARM = [
    "Acromion",
    "Radiale",
    "Olecranon",
    "Humeral Lateral Epicn.",
    "Humeral Medial Epicn.",
    "Radial Styloid",
    "Ulnar Styloid",
    "Metacarpal-Phal. II",
    "Metacarpal-Phal. V",
    "Dactylion",
]

_LEG = [
    "Knee Crease",
    "Femoral Lateral Epicn.",
    "Femoral Medial Epicn.",
    "Lateral Malleolus",
    "Medial Malleolus",
    "Calcaneous Post.",
    "Metatarsal-Phal. I",
    "Metatarsal-Phal. V",
    "Digit II",
]

LANDMARK_NAMES = tuple(
    _HEAD
    + _TORSO
    + [f"{side}. {name}" for side in ("Rt", "Lt") for name in _ARM]
    + [f"{side}. {name}" for side in ("Rt", "Lt") for name in _LEG]
)
N_LANDMARKS = len(LANDMARK_NAMES)

_INDEX = {name: i for i, name in enumerate(LANDMARK_NAMES)}

# anchors of the pelvis frame
LT_PSIS = "Lt. Psis"
RT_PSIS = "Rt. Psis"
LT_ASIS = "Lt. Asis"
RT_ASIS = "Rt. Asis"
NUCHALE = "Nuchale"

MEASUREMENT_NAMES = (
    "ankle C.",
    "shoulder-elbow L.",
    "shoulder-wrist L.",
    "spine-wrist L.",
    "chest C.",
    "crotch H.",
    "head C.",
    "hip C. H.",
    "hip C.",
    "neck base C.",
    "stature",
)
N_MEASUREMENTS = len(MEASUREMENT_NAMES)

N_PAIRS = N_LANDMARKS * (N_LANDMARKS - 1) // 2

assert N_LANDMARKS == 70 and len(_INDEX) == 70


def landmark_index(name):
    """Return the registry index of a landmark name."""
    try:
        return _INDEX[name]
    except KeyError:
        raise KeyError(f"unknown landmark {name!r}") from None


def all_pairs():
    """All (i, j) index pairs with i < j, in lexicographic order."""
    return list(combinations(range(N_LANDMARKS), 2))


def pair_index(i, j):
    """Position of the pair (i, j), i < j, in :func:`all_pairs` order."""
    if not 0 <= i < j < N_LANDMARKS:
        raise ValueError(f"invalid pair ({i}, {j})")
    n = N_LANDMARKS
    return i * (2 * n - i - 1) // 2 + (j - i - 1)


def pair_arrays():
    """The lexicographic pair list as two index arrays."""
    i, j = np.triu_indices(N_LANDMARKS, k=1)
    return i, j
