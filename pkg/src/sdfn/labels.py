"""The 14 pathology slots, in canonical order."""

PATHOLOGIES = (
    "atelectasis",
    "cardiomegaly",
    "effusion",
    "infiltration",
    "mass",
    "nodule",
    "pneumonia",
    "pneumothorax",
    "consolidation",
    "edema",
    "emphysema",
    "fibrosis",
    "pleural_thickening",
    "hernia",
)

NUM_CLASSES = len(PATHOLOGIES)
NODULE = PATHOLOGIES.index("nodule")
EMPHYSEMA = PATHOLOGIES.index("emphysema")


def class_index(name_or_index):
    """Resolve a class name (case-insensitive, spaces allowed) or integer index."""
    if isinstance(name_or_index, int):
        idx = name_or_index
    else:
        s = str(name_or_index).strip()
        if s.lstrip("-").isdigit():
            idx = int(s)
        else:
            key = s.lower().replace(" ", "_")
            if key not in PATHOLOGIES:
                raise ValueError(f"unknown pathology {name_or_index!r}")
            return PATHOLOGIES.index(key)
    if not 0 <= idx < NUM_CLASSES:
        raise ValueError(f"class index {idx} out of range [0, {NUM_CLASSES})")
    return idx
