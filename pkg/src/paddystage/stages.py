"""Growth stage labels shared by every module."""

STAGES = ("GS1", "GS2", "GS3", "GS4", "GS5")
N_STAGES = len(STAGES)

_INDEX = {name: i for i, name in enumerate(STAGES)}


def stage_index(stage):
    """Map a stage token such as ``"GS3"`` to its 0-based index."""
    try:
        return _INDEX[stage]
    except KeyError:
        raise ValueError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}") from None


def stage_name(index):
    if not 0 <= index < N_STAGES:
        raise ValueError(f"stage index {index} out of range 0..{N_STAGES - 1}")
    return STAGES[index]
