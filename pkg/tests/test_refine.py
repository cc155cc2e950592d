import base64
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from etchloop.morphology import dilate
from etchloop.rasters import compose
from etchloop.refine import (
    BackendUnavailableError,
    HeuristicRefiner,
    IdentityRefiner,
    OracleRefiner,
    ProtocolError,
    RefineRequest,
    RefineTimeoutError,
    RemoteRefiner,
    ShapeMismatchError,
    make_refiner,
    pack_mask,
    unpack_mask,
)


def groove_scene(missing=True):
    """A straight engraved groove: depth dips along a band of width 5."""
    depth = np.zeros((64, 64))
    gt = np.zeros((64, 64), dtype=bool)
    center = np.zeros_like(gt)
    center[32, 6:58] = True
    gt[:] = dilate(center, 5)
    depth[gt] = -1.0
    pred = np.zeros_like(gt) if missing else gt.copy()
    return depth, pred, gt


def add_hint_map(shape, row, cols, width=3):
    center = np.zeros(shape, dtype=bool)
    center[row, cols[0] : cols[1]] = True
    return dilate(center, width).astype(np.int8)


class TestRequestValidation:
    def test_mismatched_shapes(self):
        req = RefineRequest(
            depth=np.zeros((4, 4)),
            prediction=np.zeros((4, 5), dtype=bool),
            hints=np.zeros((4, 4), dtype=np.int8),
        )
        with pytest.raises(ValueError, match="mismatch"):
            IdentityRefiner().refine(req)

    def test_bad_hint_values(self):
        req = RefineRequest(
            depth=np.zeros((4, 4)),
            prediction=np.zeros((4, 4), dtype=bool),
            hints=np.full((4, 4), 3, dtype=np.int8),
        )
        with pytest.raises(ValueError, match="hint"):
            IdentityRefiner().refine(req)


class TestIdentity:
    def test_no_hints_is_noop(self, rng):
        pred = rng.random((16, 16)) < 0.4
        req = RefineRequest(np.zeros((16, 16)), pred, np.zeros((16, 16), np.int8))
        assert (IdentityRefiner().refine(req) == pred).all()

    def test_equals_compose(self, rng):
        pred = rng.random((16, 16)) < 0.4
        hints = rng.integers(-1, 2, size=(16, 16)).astype(np.int8)
        req = RefineRequest(np.zeros((16, 16)), pred, hints)
        assert (IdentityRefiner().refine(req) == compose(pred, hints)).all()


@pytest.mark.parametrize("backend", ["identity", "heuristic", "oracle"])
def test_hint_respect_contract(backend, rng):
    depth, pred, gt = groove_scene()
    pred = rng.random(pred.shape) < 0.3
    hints = np.zeros(pred.shape, dtype=np.int8)
    hints[10:14, 10:20] = 1
    hints[40:44, 30:50] = -1
    refiner = make_refiner(backend, gt=gt)
    out = refiner.refine(RefineRequest(depth, pred, hints))
    assert out[hints == 1].all()
    assert not out[hints == -1].any()


class TestHeuristic:
    def test_flat_depth_is_pure_composition(self, rng):
        pred = rng.random((32, 32)) < 0.3
        hints = add_hint_map((32, 32), 16, (8, 24))
        req = RefineRequest(np.zeros((32, 32)), pred, hints)
        out = HeuristicRefiner().refine(req)
        assert (out == compose(pred, hints)).all()

    def test_add_grows_along_groove(self):
        depth, pred, gt = groove_scene(missing=True)
        hints = add_hint_map(depth.shape, 32, (20, 28), width=3)
        out = HeuristicRefiner(radius=24).refine(RefineRequest(depth, pred, hints))
        hinted = int((hints == 1).sum())
        recovered = int((out & gt).sum())
        assert recovered >= 2 * hinted
        assert not (out & ~gt).any()  # nothing grows onto the flat surface

    def test_growth_bounded_by_radius(self):
        depth, pred, gt = groove_scene(missing=True)
        hints = add_hint_map(depth.shape, 32, (30, 33), width=1)
        out = HeuristicRefiner(radius=5).refine(RefineRequest(depth, pred, hints))
        rows, cols = np.nonzero(out)
        assert cols.max() <= 33 + 5 + 1
        assert cols.min() >= 30 - 5 - 1

    def test_erase_removes_touched_blob(self):
        depth = np.zeros((48, 48))
        blob = np.zeros((48, 48), dtype=bool)
        blob[20:28, 20:30] = True
        hints = np.zeros((48, 48), dtype=np.int8)
        hints[23, 22:26] = -1
        out = HeuristicRefiner(radius=24).refine(RefineRequest(depth, blob, hints))
        assert not out.any()

    def test_erase_leaves_distant_components(self):
        depth = np.zeros((48, 48))
        pred = np.zeros((48, 48), dtype=bool)
        pred[5:8, 5:40] = True    # keep: never touched
        pred[30:34, 10:20] = True  # erase target
        hints = np.zeros((48, 48), dtype=np.int8)
        hints[31, 12:16] = -1
        out = HeuristicRefiner(radius=24).refine(RefineRequest(depth, pred, hints))
        assert (out[5:8, 5:40]).all()
        assert not out[30:34, 10:20].any()

    def test_erase_respects_radius_bound(self):
        depth = np.zeros((20, 200))
        pred = np.zeros((20, 200), dtype=bool)
        pred[10, 5:195] = True  # one long component
        hints = np.zeros((20, 200), dtype=np.int8)
        hints[10, 100] = -1
        out = HeuristicRefiner(radius=10).refine(RefineRequest(depth, pred, hints))
        assert not out[10, 90:111].any()   # removed out to the radius
        assert out[10, 5:85].all()         # far ends survive
        assert out[10, 115:195].all()

    def test_deterministic(self):
        depth, pred, gt = groove_scene()
        hints = add_hint_map(depth.shape, 32, (20, 28))
        ref = HeuristicRefiner()
        a = ref.refine(RefineRequest(depth, pred, hints, seed=1))
        b = ref.refine(RefineRequest(depth, pred, hints, seed=1))
        assert (a == b).all()

    def test_parameter_validation(self):
        with pytest.raises(ValueError, match="radius"):
            HeuristicRefiner(radius=0)
        with pytest.raises(ValueError, match="quantile"):
            HeuristicRefiner(quantile=1.5)


class TestOracle:
    def test_radius_zero_is_composition(self, rng):
        depth, pred, gt = groove_scene()
        pred = rng.random(pred.shape) < 0.3
        hints = add_hint_map(pred.shape, 32, (20, 30))
        out = OracleRefiner(gt, radius=0).refine(RefineRequest(depth, pred, hints))
        assert (out == compose(pred, hints)).all()

    def test_huge_radius_returns_gt(self):
        depth, pred, gt = groove_scene(missing=True)
        hints = np.zeros(pred.shape, dtype=np.int8)
        hints[32, 30] = 1  # consistent with gt
        out = OracleRefiner(gt, radius=128).refine(RefineRequest(depth, pred, hints))
        assert (out == gt).all()

    def test_hamming_monotone_in_radius(self, rng):
        depth, pred, gt = groove_scene()
        pred = rng.random(pred.shape) < 0.3
        hints = add_hint_map(pred.shape, 32, (20, 30))
        req = RefineRequest(depth, pred, hints)
        distances = [
            int((OracleRefiner(gt, radius=r).refine(req) != gt).sum())
            for r in (0, 2, 5, 10, 30, 100)
        ]
        assert distances == sorted(distances, reverse=True)

    def test_origin_crops_full_gt(self):
        gt_full = np.zeros((100, 100), dtype=bool)
        gt_full[40:60, 40:60] = True
        depth = np.zeros((32, 32))
        pred = np.zeros((32, 32), dtype=bool)
        hints = np.zeros((32, 32), dtype=np.int8)
        hints[16, 16] = 1
        out = OracleRefiner(gt_full, radius=64).refine(
            RefineRequest(depth, pred, hints, origin=(40, 40))
        )
        expected = gt_full[40:72, 40:72].copy()
        expected[16, 16] = True  # the hint pixel stays set by contract
        assert (out == expected).all()

    def test_shape_mismatch_without_origin(self):
        gt_full = np.zeros((100, 100), dtype=bool)
        req = RefineRequest(np.zeros((32, 32)), np.zeros((32, 32), bool),
                            np.zeros((32, 32), np.int8))
        with pytest.raises(ShapeMismatchError):
            OracleRefiner(gt_full).refine(req)


# ---------------------------------------------------------------------------
# Remote backend
# ---------------------------------------------------------------------------

def _serve(behavior: str):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length))
            h, w = body["height"], body["width"]
            if behavior == "sleep":
                time.sleep(2.0)
            if behavior == "bad-json":
                payload = b"this is not json"
            elif behavior == "missing-field":
                payload = json.dumps({"weights": "nope"}).encode()
            elif behavior == "wrong-shape":
                bogus = pack_mask(np.zeros((h + 1, w), dtype=bool))
                payload = json.dumps({"mask": bogus}).encode()
            else:  # echo-compose
                pred = unpack_mask(body["prediction"], (h, w))
                hints = np.frombuffer(
                    base64.b64decode(body["hints"]), dtype=np.int8
                ).reshape(h, w)
                mask = compose(pred, hints)
                payload = json.dumps({"mask": pack_mask(mask)}).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, f"http://127.0.0.1:{server.server_port}"


@pytest.fixture
def echo_server():
    server, url = _serve("echo-compose")
    yield url
    server.shutdown()


class TestRemote:
    def test_loopback_compose(self, echo_server, rng):
        pred = rng.random((24, 24)) < 0.4
        hints = np.zeros((24, 24), dtype=np.int8)
        hints[5:9, 5:15] = 1
        hints[18:20, 2:8] = -1
        req = RefineRequest(rng.normal(size=(24, 24)), pred, hints, seed=3)
        out = RemoteRefiner(echo_server).refine(req)
        assert (out == compose(pred, hints)).all()

    def test_wrong_shape_from_server(self, rng):
        server, url = _serve("wrong-shape")
        try:
            req = RefineRequest(np.zeros((16, 16)), np.zeros((16, 16), bool),
                                np.zeros((16, 16), np.int8))
            with pytest.raises(ShapeMismatchError):
                RemoteRefiner(url).refine(req)
        finally:
            server.shutdown()

    def test_not_json(self):
        server, url = _serve("bad-json")
        try:
            req = RefineRequest(np.zeros((8, 8)), np.zeros((8, 8), bool),
                                np.zeros((8, 8), np.int8))
            with pytest.raises(ProtocolError, match="not JSON"):
                RemoteRefiner(url).refine(req)
        finally:
            server.shutdown()

    def test_missing_mask_field(self):
        server, url = _serve("missing-field")
        try:
            req = RefineRequest(np.zeros((8, 8)), np.zeros((8, 8), bool),
                                np.zeros((8, 8), np.int8))
            with pytest.raises(ProtocolError, match="mask"):
                RemoteRefiner(url).refine(req)
        finally:
            server.shutdown()

    def test_server_down(self):
        req = RefineRequest(np.zeros((8, 8)), np.zeros((8, 8), bool),
                            np.zeros((8, 8), np.int8))
        dead = RemoteRefiner("http://127.0.0.1:1", timeout=2.0)
        with pytest.raises(BackendUnavailableError):
            dead.refine(req)

    def test_timeout_distinct(self):
        server, url = _serve("sleep")
        try:
            req = RefineRequest(np.zeros((8, 8)), np.zeros((8, 8), bool),
                                np.zeros((8, 8), np.int8))
            with pytest.raises(RefineTimeoutError):
                RemoteRefiner(url, timeout=0.3).refine(req)
        finally:
            server.shutdown()


class TestWireEncoding:
    def test_mask_round_trip(self, rng):
        mask = rng.random((21, 13)) < 0.5
        assert (unpack_mask(pack_mask(mask), mask.shape) == mask).all()

    def test_truncated_payload(self):
        with pytest.raises(ShapeMismatchError):
            unpack_mask(base64.b64encode(b"xy").decode(), (16, 16))


class TestFactory:
    def test_all_specs(self):
        gt = np.zeros((4, 4), dtype=bool)
        assert make_refiner("identity").name == "identity"
        assert make_refiner("heuristic").name == "heuristic"
        assert make_refiner("oracle", gt=gt).name == "oracle"
        remote = make_refiner("remote:http://host:9")
        assert remote.name == "remote" and remote.endpoint == "http://host:9"

    def test_oracle_needs_gt(self):
        with pytest.raises(ValueError, match="ground-truth"):
            make_refiner("oracle")

    def test_unknown(self):
        with pytest.raises(ValueError, match="unknown backend"):
            make_refiner("magic")
