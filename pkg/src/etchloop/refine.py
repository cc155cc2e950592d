"""Refinement backends: (depth, prediction, hints) -> refined mask.

Every backend honors the same hard contract: the returned mask is 1
wherever the hint map says +1 and 0 wherever it says -1, no matter what
the backend would otherwise produce — an annotator's stroke is never
silently discarded. Backends:

* identity  — pure manual composition, the no-model baseline
* heuristic — deterministic region growing along depth grooves
* oracle    — snaps pixels near hints to a known ground truth (test-only)
* remote    — HTTP client for an externally served model
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import httpx
import numpy as np

from .rasters import as_depth, as_hints, as_mask, check_same_shape, compose
from .morphology import dilate, label_connectivity

__all__ = [
    "RefineRequest",
    "Refiner",
    "IdentityRefiner",
    "HeuristicRefiner",
    "OracleRefiner",
    "RemoteRefiner",
    "make_refiner",
    "RefineError",
    "BackendUnavailableError",
    "RefineTimeoutError",
    "ProtocolError",
    "ShapeMismatchError",
    "pack_mask",
    "unpack_mask",
    "pack_depth",
    "pack_hints",
]

BACKEND_NAMES = ("identity", "heuristic", "oracle", "remote")


class RefineError(Exception):
    """Base class for refinement backend failures."""

    code = "refine-error"


class BackendUnavailableError(RefineError):
    code = "backend-unavailable"


class RefineTimeoutError(BackendUnavailableError):
    code = "timeout"


class ProtocolError(RefineError):
    code = "protocol-error"


class ShapeMismatchError(RefineError, ValueError):
    code = "shape-mismatch"


@dataclass
class RefineRequest:
    """One refinement call: a depth patch, the current mask, and the hints.

    ``origin`` is the patch's (row, col) position within the full scan;
    backends that look up external context (the oracle's ground truth)
    need it, the others ignore it.
    """

    depth: np.ndarray
    prediction: np.ndarray
    hints: np.ndarray
    seed: int = 0
    origin: tuple | None = None

    def validated(self) -> "RefineRequest":
        depth = as_depth(self.depth)
        prediction = as_mask(self.prediction)
        hints = as_hints(self.hints)
        check_same_shape(depth, prediction, hints)
        return RefineRequest(depth=depth, prediction=prediction, hints=hints,
                             seed=int(self.seed), origin=self.origin)


class Refiner:
    """Interface: refine() runs the backend and then enforces the hints."""

    name = "abstract"

    def refine(self, request: RefineRequest) -> np.ndarray:
        request = request.validated()
        out = self._refine(request)
        out = as_mask(out)
        if out.shape != request.prediction.shape:
            raise ShapeMismatchError(
                f"backend returned shape {out.shape}, expected {request.prediction.shape}"
            )
        return compose(out, request.hints)

    def _refine(self, request: RefineRequest) -> np.ndarray:
        raise NotImplementedError


class IdentityRefiner(Refiner):
    """The manual baseline: exactly the composed mask, nothing else."""

    name = "identity"

    def _refine(self, request: RefineRequest) -> np.ndarray:
        return compose(request.prediction, request.hints)


class HeuristicRefiner(Refiner):
    """Deterministic groove-following refinement.

    Around every add stroke, grows the mask outward along pixels whose
    depth sits below a blended threshold — halfway between the stroke's
    own median depth and a low quantile of the surrounding window — within
    a geodesic radius. On a flat surface the two blend terms coincide, the
    strict comparison admits nothing, and the output degenerates to the
    plain composition. Around every erase stroke, removes the touched
    connected component of the prediction out to the same radius.
    """

    name = "heuristic"

    def __init__(self, radius: int = 24, quantile: float = 0.30):
        if radius < 1:
            raise ValueError(f"radius must be >= 1, got {radius}")
        if not 0.0 <= quantile <= 1.0:
            raise ValueError(f"quantile must be in [0, 1], got {quantile}")
        self.radius = int(radius)
        self.quantile = float(quantile)

    def _refine(self, request: RefineRequest) -> np.ndarray:
        out = compose(request.prediction, request.hints)
        depth = request.depth
        for stroke in label_connectivity(request.hints == 1):
            out |= self._grow(depth, stroke)
        for stroke in label_connectivity(request.hints == -1):
            out &= ~self._touched_component(request.prediction, stroke)
        return out

    def _grow(self, depth: np.ndarray, stroke: np.ndarray) -> np.ndarray:
        h, w = depth.shape
        r = self.radius
        r0 = max(int(stroke[:, 0].min()) - r, 0)
        r1 = min(int(stroke[:, 0].max()) + r + 1, h)
        c0 = max(int(stroke[:, 1].min()) - r, 0)
        c1 = min(int(stroke[:, 1].max()) + r + 1, w)
        window = depth[r0:r1, c0:c1]
        stroke_depth = depth[stroke[:, 0], stroke[:, 1]]
        threshold = 0.5 * (
            float(np.median(stroke_depth)) + float(np.quantile(window, self.quantile))
        )
        candidates = window < threshold
        seeds = np.zeros_like(candidates)
        seeds[stroke[:, 0] - r0, stroke[:, 1] - c0] = True
        grown_local = _bounded_spread(seeds, candidates, r)
        grown = np.zeros((h, w), dtype=bool)
        grown[r0:r1, c0:c1] = grown_local
        return grown

    def _touched_component(self, prediction: np.ndarray, stroke: np.ndarray) -> np.ndarray:
        h, w = prediction.shape
        r = self.radius
        r0 = max(int(stroke[:, 0].min()) - r, 0)
        r1 = min(int(stroke[:, 0].max()) + r + 1, h)
        c0 = max(int(stroke[:, 1].min()) - r, 0)
        c1 = min(int(stroke[:, 1].max()) + r + 1, w)
        window = prediction[r0:r1, c0:c1]
        seeds = np.zeros_like(window)
        seeds[stroke[:, 0] - r0, stroke[:, 1] - c0] = True
        seeds &= window
        removed_local = _bounded_spread(seeds, window, r)
        removed = np.zeros((h, w), dtype=bool)
        removed[r0:r1, c0:c1] = removed_local
        return removed


def _bounded_spread(seeds: np.ndarray, allowed: np.ndarray, steps: int) -> np.ndarray:
    """8-connected flood from seeds through allowed pixels, limited to N steps."""
    region = seeds & allowed | seeds  # seed pixels always belong to the result
    frontier = region
    for _ in range(steps):
        if not frontier.any():
            break
        p = np.pad(frontier, 1)
        spread = (
            p[:-2, :-2] | p[:-2, 1:-1] | p[:-2, 2:]
            | p[1:-1, :-2] | p[1:-1, 2:]
            | p[2:, :-2] | p[2:, 1:-1] | p[2:, 2:]
        )
        frontier = spread & allowed & ~region
        region |= frontier
    return region


class OracleRefiner(Refiner):
    """Snaps everything near a hint to the known ground truth.

    A simulation upper bound, not a product backend: it answers "what if
    the model corrected perfectly wherever the annotator pointed". With a
    radius of zero only the hint pixels themselves change, which the hint
    contract then pins, so the output equals the plain composition.
    """

    name = "oracle"

    def __init__(self, gt: np.ndarray, radius: int = 24):
        self.gt = as_mask(gt)
        if radius < 0:
            raise ValueError(f"radius must be >= 0, got {radius}")
        self.radius = int(radius)

    def _gt_patch(self, request: RefineRequest) -> np.ndarray:
        shape = request.prediction.shape
        if request.origin is None:
            if self.gt.shape != shape:
                raise ShapeMismatchError(
                    f"oracle gt shape {self.gt.shape} != request {shape} and no origin given"
                )
            return self.gt
        r0, c0 = request.origin
        out = np.zeros(shape, dtype=bool)
        crop = self.gt[r0 : r0 + shape[0], c0 : c0 + shape[1]]
        out[: crop.shape[0], : crop.shape[1]] = crop
        return out

    def _refine(self, request: RefineRequest) -> np.ndarray:
        gt = self._gt_patch(request)
        out = compose(request.prediction, request.hints)
        near = dilate(request.hints != 0, 2 * self.radius + 1)
        out[near] = gt[near]
        return out


# ---------------------------------------------------------------------------
# Remote backend and its wire encoding
# ---------------------------------------------------------------------------

def pack_mask(mask: np.ndarray) -> str:
    """Binary mask -> base64 of row-major packed bits."""
    return base64.b64encode(np.packbits(as_mask(mask), axis=None).tobytes()).decode("ascii")


def unpack_mask(payload: str, shape) -> np.ndarray:
    h, w = shape
    raw = base64.b64decode(payload)
    expected = (h * w + 7) // 8
    if len(raw) != expected:
        raise ShapeMismatchError(f"mask payload holds {len(raw)} bytes, expected {expected}")
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=h * w)
    return bits.reshape(h, w).astype(bool)


def pack_depth(depth: np.ndarray) -> str:
    """Depth map -> base64 of row-major little-endian float32."""
    return base64.b64encode(as_depth(depth).astype("<f4").tobytes()).decode("ascii")


def pack_hints(hints: np.ndarray) -> str:
    """Hint map -> base64 of row-major signed int8."""
    return base64.b64encode(as_hints(hints).tobytes()).decode("ascii")


class RemoteRefiner(Refiner):
    """Client for a model served over HTTP.

    POSTs the request to ``<endpoint>/v1/refine`` as JSON with base64
    rasters and decodes the returned packed-bit mask. Transport failures,
    malformed responses, and wrong-sized masks surface as distinct errors.
    """

    name = "remote"

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = float(timeout)

    def _refine(self, request: RefineRequest) -> np.ndarray:
        h, w = request.prediction.shape
        body = {
            "width": w,
            "height": h,
            "depth": pack_depth(request.depth),
            "prediction": pack_mask(request.prediction),
            "hints": pack_hints(request.hints),
            "seed": request.seed,
        }
        try:
            response = httpx.post(
                f"{self.endpoint}/v1/refine", json=body, timeout=self.timeout
            )
        except httpx.TimeoutException as exc:
            raise RefineTimeoutError(f"refine request timed out after {self.timeout}s") from exc
        except httpx.HTTPError as exc:
            raise BackendUnavailableError(f"cannot reach {self.endpoint}: {exc}") from exc
        if response.status_code != 200:
            raise BackendUnavailableError(
                f"server answered HTTP {response.status_code}: {response.text[:200]}"
            )
        try:
            payload = response.json()
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"response is not JSON: {exc}") from exc
        if not isinstance(payload, dict) or "mask" not in payload:
            raise ProtocolError("response lacks the 'mask' field")
        try:
            return unpack_mask(payload["mask"], (h, w))
        except ShapeMismatchError:
            raise
        except Exception as exc:
            raise ProtocolError(f"cannot decode mask payload: {exc}") from exc


def make_refiner(
    spec: str,
    gt: np.ndarray | None = None,
    radius: int = 24,
    quantile: float = 0.30,
    timeout: float = 30.0,
) -> Refiner:
    """Build a backend from its config spec.

    ``identity``, ``heuristic``, ``oracle`` (requires ground truth), or
    ``remote:<url>``.
    """
    if spec == "identity":
        return IdentityRefiner()
    if spec == "heuristic":
        return HeuristicRefiner(radius=radius, quantile=quantile)
    if spec == "oracle":
        if gt is None:
            raise ValueError("oracle backend needs a ground-truth mask")
        return OracleRefiner(gt, radius=radius)
    if spec.startswith("remote:"):
        return RemoteRefiner(spec[len("remote:"):], timeout=timeout)
    raise ValueError(
        f"unknown backend {spec!r}; expected identity, heuristic, oracle, or remote:<url>"
    )
