"""Interactive refinement sessions.

Drives the correct-and-refine loop over one mirror: split into evaluation
patches, repeatedly pick the worst patch, try an add and an erase hint
there, keep whichever refinement improves the whole-mirror score, and stop
when neither does. Simulated sessions generate hints from the ground truth;
live sessions ingest human strokes, skip everything that needs gt, and
persist each interaction to an append-only journal that can be replayed to
reconstruct the exact same state after a crash.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .hints import Hint, hint_from_candidates
from .metrics import pfm_from_counts
from .morphology import dilate, skeletonize
from .preprocess import Mirror, extract_eval_patches, highpass, normalize
from .rasters import accumulate, as_hints, as_mask, compose
from .refine import RefineRequest, Refiner, ShapeMismatchError
from .strokes import StrokeWidthStats

__all__ = [
    "Session",
    "SessionError",
    "WrongModeError",
    "BudgetExhaustedError",
    "InvalidHintError",
    "NothingToUndoError",
    "HistoryEntry",
    "rle_encode",
    "rle_decode",
    "replay_journal",
    "REPORT_COLUMNS",
]

CAP_DEFAULT = 3000
REPORT_COLUMNS = ("step", "pfm", "pfm_composed", "pfm_delta", "annotated_pixels")


class SessionError(Exception):
    """Base error for session operations; ``code`` is machine-parsable."""

    code = "session-error"


class WrongModeError(SessionError):
    code = "wrong-mode"


class BudgetExhaustedError(SessionError):
    code = "budget-exhausted"


class InvalidHintError(SessionError):
    code = "invalid-hint"


class NothingToUndoError(SessionError):
    code = "nothing-to-undo"


@dataclass
class HistoryEntry:
    """One committed interaction. Metric fields are None in live mode."""

    step: int
    patch: int
    operation: str
    pfm: float | None
    pfm_composed: float | None
    pfm_delta: float | None
    annotated_pixels: int

    def report_row(self) -> dict:
        return {
            "step": self.step,
            "pfm": self.pfm,
            "pfm_composed": self.pfm_composed,
            "pfm_delta": self.pfm_delta,
            "annotated_pixels": self.annotated_pixels,
        }


def rle_encode(raster: np.ndarray) -> list:
    """Row-major run-length encoding: list of [value, run] pairs."""
    flat = np.asarray(raster).ravel()
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [flat.size]))
    return [[int(flat[s]), int(e - s)] for s, e in zip(starts, ends)]


def rle_decode(runs, shape, dtype=np.int8) -> np.ndarray:
    """Inverse of :func:`rle_encode` for a known shape."""
    total = int(np.prod(shape))
    flat = np.empty(total, dtype=dtype)
    pos = 0
    for value, run in runs:
        if run <= 0:
            raise ValueError(f"run lengths must be positive, got {run}")
        flat[pos : pos + run] = value
        pos += run
    if pos != total:
        raise ValueError(f"runs cover {pos} pixels, expected {total}")
    return flat.reshape(shape)


@dataclass
class _Snapshot:
    """Per-interaction undo record: only the touched patch is saved."""

    patch: int
    pred: np.ndarray
    delta: np.ndarray
    counts: tuple
    composed_counts: tuple
    annotated: int


class Session:
    """State of one annotation session over one mirror.

    In ``simulated`` mode the ground truth drives patch selection and hint
    generation; in ``live`` mode gt is treated as absent, strokes arrive
    from outside, and metric fields stay None.
    """

    def __init__(
        self,
        mirror: Mirror,
        refiner: Refiner,
        stats: StrokeWidthStats,
        mode: str = "simulated",
        width_mode: str = "conservative",
        max_sub_len: int = 11,
        seed: int = 0,
        cap: int = CAP_DEFAULT,
        patch_size: int = 512,
        journal_path=None,
        preprocess: bool = True,
    ):
        if mode not in ("simulated", "live"):
            raise ValueError(f"unknown mode {mode!r}")
        if cap < 1:
            raise ValueError(f"interaction cap must be >= 1, got {cap}")
        if mirror.pred_init is None:
            raise ValueError(f"{mirror.mirror_id}: no initial prediction")
        if mode == "simulated" and mirror.gt is None:
            raise ValueError(f"{mirror.mirror_id}: simulated mode needs gt")

        self.mirror_id = mirror.mirror_id
        self.mode = mode
        self.stats = stats
        self.refiner = refiner
        self.width_mode = width_mode
        self.max_sub_len = max_sub_len
        self.seed = int(seed)
        self.cap = int(cap)
        self.journal_path = None if journal_path is None else Path(journal_path)

        self.grid = extract_eval_patches(mirror.shape, mirror.foreground, patch_size)
        depth = mirror.depth
        if preprocess:
            depth = normalize(highpass(depth, foreground=mirror.foreground),
                              mirror.foreground)
        self._depth = depth.astype(np.float32)
        self._pred = as_mask(mirror.pred_init).copy()
        self._pred_init = self._pred.copy()
        self._delta = np.zeros(mirror.shape, dtype=np.int8)

        # Ground truth and its whole-mirror skeleton; per-patch views crop
        # these so patch borders never distort the center-lines.
        if mode == "simulated":
            self._gt = as_mask(mirror.gt)
            self._gt_skel = skeletonize(self._gt)
            expansion = int(round(stats.mu + 2.0 * stats.sigma))
            self._gt_expanded = dilate(self._gt_skel, expansion)
        else:
            self._gt = None
            self._gt_skel = None
            self._gt_expanded = None

        n = len(self.grid)
        self._n_skel = np.zeros(n, dtype=np.int64)
        self._counts = np.zeros((n, 3), dtype=np.int64)  # pred, tp, skel-hit
        self._composed_counts = np.zeros((n, 3), dtype=np.int64)
        self._annotated = np.zeros(n, dtype=np.int64)
        for k in range(n):
            self._refresh_counts(k)
            self._composed_counts[k] = self._counts[k]
        self._hint_done = [False] * n

        self.interaction_count = 0
        self.history: list[HistoryEntry] = []
        self.converged = False
        self._snapshots: list[_Snapshot] = []

    # ------------------------------------------------------------------
    # Patch access
    # ------------------------------------------------------------------

    def patch_count(self) -> int:
        return len(self.grid)

    def patch_view(self, k: int) -> dict:
        """Read-only crops of one patch's rasters."""
        self._check_patch(k)
        return {
            "depth": self.grid.crop(self._depth, k),
            "pred": self.grid.crop(self._pred, k),
            "delta": self.grid.crop(self._delta, k),
            "valid": self.grid.valid_mask(k),
        }

    def full_mask(self) -> np.ndarray:
        return self._pred.copy()

    def annotated_pixels(self) -> int:
        return int(self._annotated.sum())

    def _check_patch(self, k: int):
        if not (0 <= k < len(self.grid)):
            raise InvalidHintError(f"patch index {k} out of range")

    def _patch_slices(self, k: int):
        r0, c0 = self.grid.origins[k]
        vh, vw = self.grid.valid_extent(k)
        return slice(r0, r0 + vh), slice(c0, c0 + vw)

    def _refresh_counts(self, k: int):
        rs, cs = self._patch_slices(k)
        pred = self._pred[rs, cs]
        if self._gt is None:
            self._counts[k] = (int(pred.sum()), 0, 0)
            return
        gt = self._gt[rs, cs]
        skel = self._gt_skel[rs, cs]
        self._n_skel[k] = int(skel.sum())
        self._counts[k] = (int(pred.sum()), int((pred & gt).sum()),
                           int((pred & skel).sum()))

    def _mask_counts(self, k: int, mask_patch: np.ndarray) -> tuple:
        """Counts for a candidate patch mask (padded coordinates)."""
        vh, vw = self.grid.valid_extent(k)
        rs, cs = self._patch_slices(k)
        pred = mask_patch[:vh, :vw]
        gt = self._gt[rs, cs]
        skel = self._gt_skel[rs, cs]
        return int(pred.sum()), int((pred & gt).sum()), int((pred & skel).sum())

    # ------------------------------------------------------------------
    # Metrics
    # ------------------------------------------------------------------

    def _whole_pfm(self, counts: np.ndarray, override: tuple | None = None) -> float:
        n_pred = counts[:, 0].sum()
        n_tp = counts[:, 1].sum()
        n_hit = counts[:, 2].sum()
        n_skel = self._n_skel.sum()
        if override is not None:
            k, (p, t, h) = override
            n_pred += p - counts[k, 0]
            n_tp += t - counts[k, 1]
            n_hit += h - counts[k, 2]
        return pfm_from_counts(int(n_pred), int(n_tp), int(n_skel), int(n_hit))

    def whole_pfm(self) -> float | None:
        if self._gt is None:
            return None
        return self._whole_pfm(self._counts)

    def patch_pfm(self, k: int) -> float:
        if self._gt is None:
            raise WrongModeError("per-patch metrics need ground truth")
        p, t, h = self._counts[k]
        return pfm_from_counts(int(p), int(t), int(self._n_skel[k]), int(h))

    # ------------------------------------------------------------------
    # Simulated loop
    # ------------------------------------------------------------------

    def select_patch(self) -> int | None:
        """Kept patch with the lowest score; None when none needs work."""
        if self.mode != "simulated":
            raise WrongModeError("patch selection needs ground truth")
        best, best_score = None, None
        for k in range(len(self.grid)):
            if not self.grid.keep[k] or self._hint_done[k]:
                continue
            score = self.patch_pfm(k)
            if score >= 1.0:
                continue  # nothing left to fix here
            if best_score is None or score < best_score:
                best, best_score = k, score
        return best

    def _candidate_hint(self, k: int, operation: str, skel_pred: np.ndarray,
                        rng: np.random.Generator) -> Hint | None:
        rs, cs = self._patch_slices(k)
        vh, vw = self.grid.valid_extent(k)
        s = self.grid.patch_size
        candidates = np.zeros((s, s), dtype=bool)
        if operation == "add":
            candidates[:vh, :vw] = self._gt_skel[rs, cs] & ~self._pred[rs, cs]
        else:
            # The expansion band tolerates near-misses, but on thin-stroke
            # mirrors the edge pixels of *correct* grooves can poke out of
            # it.  A simulated annotator would never erase line work that is
            # visibly right, so probes target genuine false positives only.
            candidates[:vh, :vw] = (skel_pred[:vh, :vw]
                                    & ~self._gt_expanded[rs, cs]
                                    & ~self._gt[rs, cs])
        return hint_from_candidates(candidates, operation, self.stats,
                                    self.width_mode, self.max_sub_len, rng)

    def _refine_patch(self, k: int, new_delta: np.ndarray, seed: int) -> np.ndarray:
        request = RefineRequest(
            depth=self.grid.crop(self._depth, k),
            prediction=self.grid.crop(self._pred, k),
            hints=new_delta,
            seed=seed,
            origin=self.grid.origins[k],
        )
        return self.refiner.refine(request)

    def _derived_seed(self, op_index: int) -> int:
        seq = np.random.SeedSequence([self.seed, self.interaction_count, op_index])
        return int(seq.generate_state(1)[0])

    def step(self) -> HistoryEntry | None:
        """One simulated interaction; None when the session converged."""
        if self.mode != "simulated":
            raise WrongModeError("step runs only in simulated mode")
        if self.interaction_count >= self.cap:
            raise BudgetExhaustedError(f"interaction cap {self.cap} reached")
        if self.converged:
            return None

        while True:
            k = self.select_patch()
            if k is None:
                self.converged = True
                return None

            valid = self.grid.valid_mask(k)
            delta = self.grid.crop(self._delta, k)
            skel_pred = skeletonize(self.grid.crop(self._pred, k))
            probes = []
            for op_index, operation in enumerate(("add", "erase")):
                rng = np.random.default_rng(
                    [self.seed, self.interaction_count, op_index])
                hint = self._candidate_hint(k, operation, skel_pred, rng)
                if hint is None:
                    continue
                new_delta = accumulate(delta, hint.stroke)
                new_delta[~valid] = 0
                refined = self._refine_patch(k, new_delta,
                                             self._derived_seed(op_index))
                counts = self._mask_counts(k, refined)
                score = self._whole_pfm(self._counts, override=(k, counts))
                probes.append((operation, hint, new_delta, refined, counts, score))

            if not probes:
                # Neither operation can even build a hint here; the patch
                # is done and selection moves on.
                self._hint_done[k] = True
                continue

            best = max(probes, key=lambda p: p[5])  # add wins ties (listed first)
            if best[5] <= self._whole_pfm(self._counts):
                # No single operation improves the whole-mirror score:
                # converged, probe state discarded.
                self.converged = True
                return None
            return self._commit(k, *best[:5])

    def _commit(self, k: int, operation: str, hint: Hint, new_delta: np.ndarray,
                refined: np.ndarray, counts: tuple | None) -> HistoryEntry:
        rs, cs = self._patch_slices(k)
        vh, vw = self.grid.valid_extent(k)
        if counts is None:  # live mode: no gt, only the pixel count matters
            counts = (int(refined[:vh, :vw].sum()), 0, 0)
        self._snapshots.append(_Snapshot(
            patch=k,
            pred=self._pred[rs, cs].copy(),
            delta=self._delta[rs, cs].copy(),
            counts=tuple(self._counts[k]),
            composed_counts=tuple(self._composed_counts[k]),
            annotated=int(self._annotated[k]),
        ))
        self._pred[rs, cs] = refined[:vh, :vw]
        self._delta[rs, cs] = new_delta[:vh, :vw]
        self._counts[k] = counts
        self._annotated[k] = int(np.count_nonzero(new_delta))
        if self._gt is not None:
            composed = compose(self.grid.crop(self._pred_init, k), new_delta)
            self._composed_counts[k] = self._mask_counts(k, composed)
            pfm_now = self._whole_pfm(self._counts)
            pfm_composed = self._whole_pfm(self._composed_counts)
            pfm_delta = (None if pfm_composed == 0.0
                         else (pfm_now - pfm_composed) / pfm_composed)
        else:
            pfm_now = pfm_composed = pfm_delta = None

        entry = HistoryEntry(
            step=self.interaction_count,
            patch=k,
            operation=operation,
            pfm=pfm_now,
            pfm_composed=pfm_composed,
            pfm_delta=pfm_delta,
            annotated_pixels=self.annotated_pixels(),
        )
        self.history.append(entry)
        self.interaction_count += 1
        self._journal_hint(entry, hint)
        return entry

    def run_until_convergence(self) -> list[HistoryEntry]:
        """Step until no operation improves the score or the cap is hit."""
        if self.mode != "simulated":
            raise WrongModeError("the automatic loop runs only in simulated mode")
        while not self.converged and self.interaction_count < self.cap:
            if self.step() is None:
                break
        return self.history

    # ------------------------------------------------------------------
    # Live mode
    # ------------------------------------------------------------------

    def apply_live_hint(self, k: int, hint: Hint) -> np.ndarray:
        """Apply one human stroke; returns the refined patch for display."""
        if self.mode != "live":
            raise WrongModeError("live hints are ingested only in live mode")
        if self.interaction_count >= self.cap:
            raise BudgetExhaustedError(f"interaction cap {self.cap} reached")
        self._check_patch(k)
        stroke = as_hints(hint.stroke)
        s = self.grid.patch_size
        if stroke.shape != (s, s):
            raise ShapeMismatchError(
                f"stroke shape {stroke.shape} != patch shape {(s, s)}")
        valid = self.grid.valid_mask(k)
        stroke = stroke.copy()
        stroke[~valid] = 0
        if not stroke.any():
            raise InvalidHintError("stroke marks no pixels inside the patch")

        delta = self.grid.crop(self._delta, k)
        new_delta = accumulate(delta, stroke)
        new_delta[~valid] = 0
        # Refine before mutating anything: a backend failure must leave the
        # session exactly as it was.
        refined = self._refine_patch(k, new_delta, self._derived_seed(0))
        self._commit(k, hint.operation, replace(hint, stroke=stroke),
                     new_delta, refined, None)
        return refined

    # ------------------------------------------------------------------
    # Undo
    # ------------------------------------------------------------------

    def undo(self) -> int:
        """Restore the state before the most recent interaction.

        Returns the index of the patch whose state was rolled back.
        """
        if not self._snapshots:
            raise NothingToUndoError("no interaction to undo")
        snap = self._snapshots.pop()
        rs, cs = self._patch_slices(snap.patch)
        self._pred[rs, cs] = snap.pred
        self._delta[rs, cs] = snap.delta
        self._counts[snap.patch] = snap.counts
        self._composed_counts[snap.patch] = snap.composed_counts
        self._annotated[snap.patch] = snap.annotated
        undone = self.history.pop()
        self.interaction_count -= 1
        self.converged = False
        self._hint_done = [False] * len(self.grid)
        self._journal_undo(undone)
        return snap.patch

    # ------------------------------------------------------------------
    # Journal
    # ------------------------------------------------------------------

    def _journal_write(self, record: dict):
        if self.journal_path is None:
            return
        with open(self.journal_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")

    def _journal_hint(self, entry: HistoryEntry, hint: Hint):
        self._journal_write({
            "step": entry.step,
            "patch": entry.patch,
            "op": entry.operation,
            "hint": {"shape": list(hint.stroke.shape),
                     "runs": rle_encode(hint.stroke)},
            "pfm": entry.pfm,
            "annotated_pixels": entry.annotated_pixels,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        })

    def _journal_undo(self, undone: HistoryEntry):
        self._journal_write({
            "step": undone.step,
            "patch": undone.patch,
            "op": "undo",
            "hint": None,
            "pfm": None,
            "annotated_pixels": self.annotated_pixels(),
            "timestamp": datetime.now(timezone.utc).isoformat(),
        })

    # ------------------------------------------------------------------
    # Report
    # ------------------------------------------------------------------

    def report_rows(self) -> list[dict]:
        return [entry.report_row() for entry in self.history]

    def report_csv_text(self) -> str:
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in self.report_rows():
            writer.writerow({key: ("" if value is None else value)
                             for key, value in row.items()})
        return buffer.getvalue()

    def write_report_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.report_csv_text())


def replay_journal(journal_path, mirror: Mirror, refiner: Refiner,
                   stats: StrokeWidthStats, **session_kwargs) -> Session:
    """Rebuild a live session by re-applying a journal's interactions."""
    session_kwargs.setdefault("mode", "live")
    session_kwargs.setdefault("journal_path", None)
    session = Session(mirror, refiner, stats, **session_kwargs)
    with open(journal_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if record["op"] == "undo":
                session.undo()
                continue
            stroke = rle_decode(record["hint"]["runs"],
                                tuple(record["hint"]["shape"]))
            center = np.zeros(stroke.shape, dtype=bool)
            hint = Hint(operation=record["op"], stroke=stroke,
                        source_segment_size=0, width_used=0.0,
                        center_line=center)
            session.apply_live_hint(record["patch"], hint)
    return session
