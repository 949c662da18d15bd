"""Utility functions for formatting progress messages."""

from __future__ import annotations


def format_progress(stage: str, epoch: int, total: int, loss: float | None = None,
                    score: float | None = None, fold: int | None = None) -> str:
    """Return a one-line progress message for the console log.

    Parameters
    ----------
    stage : str
        Name of the running stage, e.g. ``"Training"``.
    epoch : int
        Epochs completed so far.
    total : int
        Epochs planned.
    loss : float | None, optional
        Mean training loss of the last epoch.
    score : float | None, optional
        Validation selection score of the last epoch.
    fold : int | None, optional
        Cross-validation fold, if applicable.

    Returns
    -------
    str
        A human-readable progress message.
    """
    percent = int(100 * epoch / total) if total else 100
    fold_info = f" [Fold {fold}]" if fold is not None else ""
    parts = [f"{stage}{fold_info} Progress: {percent}% (Epoch {epoch}/{total})"]
    if loss is not None:
        parts.append(f"loss {loss:.4f}")
    if score is not None:
        parts.append(f"val {score:.4f}")
    return " | ".join(parts)
