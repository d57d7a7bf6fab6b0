"""HTTP gateway for live operator sessions.

Thin, stateful view over the protocol machines: POST /sessions runs Step 1
and schedules the coarse reconstruction on a bounded background pool;
POST /sessions/{id}/feedback drives Steps 2-3 and schedules the refined
reconstruction; GET endpoints are pure reads. Reconstructions are served
as binary PPM. Every error body carries the machine-readable code of the
underlying exception.

Sampling never runs on the request path — clients poll GET /sessions/{id}
until the ready flags flip.
"""

from __future__ import annotations

import itertools
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from . import scenegen
from .attention import DEFAULT_LEXICON, ClassLabel, TextPrompt
from .codec import (
    KIND_FEEDBACK,
    KIND_SEMANTIC,
    STEP_FEEDBACK,
    STEP_INIT,
    STEP_UPDATE,
    BandwidthLedger,
    compression_rate,
)
from .diffusion import sample
from .errors import (
    EmptyLedger,
    FeedbackUnresolved,
    ModelMissing,
    NotReady,
    ProtocolViolation,
    SemcomError,
    UnknownSession,
)
from .imgproc import to_u8
from .protocol import (
    RxFrameReceived,
    RxMachine,
    RxOperatorFeedback,
    SessionConfig,
    TxFeedbackReceived,
    TxMachine,
    TxStart,
    decode_frame,
    encode_frame,
)

_STATUS = {
    "UnknownSession": 404,
    "NotReady": 409,
    "ProtocolViolation": 409,
    "FeedbackUnresolved": 422,
    "ModelMissing": 503,
    "EmptyLedger": 409,
}


@dataclass
class SessionRuntime:
    sid: str
    scene: scenegen.SceneBundle
    tx: TxMachine
    rx: RxMachine
    config: SessionConfig
    ledger: BandwidthLedger
    reconstructions: dict = field(default_factory=dict)
    pending: dict = field(default_factory=dict)  # round -> Future
    lock: threading.Lock = field(default_factory=threading.Lock)

    def snapshot(self) -> dict:
        with self.lock:
            rounds_ready = sorted(self.reconstructions)
            return {
                "id": self.sid,
                "state": self.rx.state.value,
                "round": self.rx.round,
                "step1_ready": 0 in rounds_ready,
                "stepn_ready": self.rx.round in rounds_ready,
                "rounds_ready": rounds_ready,
                "height": self.scene.height,
                "width": self.scene.width,
            }


class Gateway:
    """Session registry plus the shared sampling pool."""

    def __init__(self, experiment, models=None, max_workers=2):
        self.experiment = experiment
        self._models = models
        self._models_lock = threading.Lock()
        self.sessions: dict[str, SessionRuntime] = {}
        self.sessions_lock = threading.Lock()
        self.pool = ThreadPoolExecutor(max_workers=max_workers)
        self._ids = itertools.count(1)

    def models(self):
        with self._models_lock:
            if self._models is None:
                from .cli import load_models

                self._models = load_models(self.experiment, need_classifier=False)
            return self._models

    def _session(self, sid: str) -> SessionRuntime:
        with self.sessions_lock:
            if sid not in self.sessions:
                raise UnknownSession(f"no session {sid!r}")
            return self.sessions[sid]

    def _schedule_recon(self, runtime: SessionRuntime, request) -> None:
        models = self.models()

        def job():
            rng = np.random.default_rng(
                np.random.PCG64(
                    np.random.SeedSequence([runtime.config.sample_seed, request.round])
                )
            )
            img = sample(
                (3, runtime.scene.height, runtime.scene.width),
                request.condition,
                models.sched,
                models.denoiser,
                rng,
            )
            with runtime.lock:
                runtime.reconstructions[request.round] = img.transpose(1, 2, 0)
                runtime.pending.pop(request.round, None)

        runtime.pending[request.round] = self.pool.submit(job)

    def create_session(self, scene_seed: int | None = None) -> SessionRuntime:
        models = self.models()  # raises ModelMissing before any state exists
        exp = self.experiment
        if scene_seed is None:
            scene_seed = scenegen.splitmix64(
                exp.geti("run", "eval_seed"), next(self._ids) + 7919
            )
        scene = scenegen.generate_scene(
            scenegen.make_scene_spec(scene_seed, exp.generator_config)
        )
        config = SessionConfig(
            tau=exp.getf("session", "tau"),
            patch_size=exp.geti("session", "patch_size"),
            attention_mode="oracle",
            blur_sigma=exp.getf("session", "blur_sigma"),
            sample_seed=scene_seed & 0x7FFFFFFF,
        )
        sid = f"s{next(self._ids):06d}"
        runtime = SessionRuntime(
            sid=sid,
            scene=scene,
            tx=TxMachine(config, classifier=models.classifier),
            rx=RxMachine(config),
            config=config,
            ledger=BandwidthLedger.for_image(scene.height, scene.width),
        )
        with runtime.lock:
            init = runtime.tx.on_event(TxStart(scene))
            frame = encode_frame(init)
            runtime.ledger.record(0, STEP_INIT, KIND_SEMANTIC, len(frame))
            _, request = runtime.rx.on_event(RxFrameReceived(decode_frame(frame)))
        self._schedule_recon(runtime, request)
        with self.sessions_lock:
            self.sessions[sid] = runtime
        return runtime

    def post_feedback(self, sid: str, feedback) -> dict:
        runtime = self._session(sid)
        with runtime.lock:
            fb_msg, _ = runtime.rx.on_event(RxOperatorFeedback(feedback))
            fb_frame = encode_frame(fb_msg)
            runtime.ledger.record(
                runtime.tx.round + 1, STEP_FEEDBACK, KIND_FEEDBACK, len(fb_frame)
            )
            update = runtime.tx.on_event(
                TxFeedbackReceived(decode_frame(fb_frame).feedback)
            )
            up_frame = encode_frame(update)
            runtime.ledger.record(
                runtime.tx.round, STEP_UPDATE, KIND_SEMANTIC, len(up_frame)
            )
            _, request = runtime.rx.on_event(RxFrameReceived(decode_frame(up_frame)))
        self._schedule_recon(runtime, request)
        return {"round": runtime.rx.round, "state": runtime.rx.state.value}

    def reconstruction_bytes(self, sid: str, round_: int) -> bytes:
        runtime = self._session(sid)
        with runtime.lock:
            if round_ not in runtime.reconstructions:
                if round_ > runtime.rx.round:
                    raise NotReady(f"round {round_} has not been requested yet")
                raise NotReady(f"round {round_} still sampling")
            img = runtime.reconstructions[round_]
        import io

        buf = io.BytesIO()
        u8 = to_u8(img)
        buf.write(b"P6\n%d %d\n255\n" % (u8.shape[1], u8.shape[0]))
        buf.write(u8.tobytes())
        return buf.getvalue()

    def ledger_view(self, sid: str) -> dict:
        runtime = self._session(sid)
        with runtime.lock:
            entries = [
                {
                    "round": e.round,
                    "step": e.step,
                    "kind": e.kind,
                    "nbytes": e.nbytes,
                }
                for e in runtime.ledger.entries
            ]
            try:
                cr = compression_rate(runtime.ledger)
            except EmptyLedger:
                cr = None
            return {
                "raw_bytes": runtime.ledger.raw_bytes,
                "entries": entries,
                "semantic_bytes": runtime.ledger.semantic_bytes(),
                "feedback_bytes": runtime.ledger.feedback_bytes(),
                "cr": cr,
            }


def _error_response(exc: SemcomError) -> JSONResponse:
    return JSONResponse(
        status_code=_STATUS.get(exc.code, 400),
        content={"error": exc.code, "detail": str(exc)},
    )


def create_app(experiment, models=None) -> FastAPI:
    app = FastAPI(title="semcom gateway")
    gateway = Gateway(experiment, models=models)
    app.state.gateway = gateway

    @app.exception_handler(SemcomError)
    async def handle_semcom_error(request: Request, exc: SemcomError):
        return _error_response(exc)

    @app.post("/sessions")
    def create_session(body: dict | None = None):
        body = body or {}
        runtime = gateway.create_session(body.get("scene_seed"))
        out = runtime.snapshot()
        out["classes"] = [
            {"id": i, "name": n}
            for i, n in enumerate(scenegen.CLASS_NAMES)
            if i != scenegen.BACKGROUND
        ]
        out["lexicon_terms"] = sorted(DEFAULT_LEXICON)
        return out

    @app.get("/sessions/{sid}")
    def get_state(sid: str):
        return gateway._session(sid).snapshot()

    @app.get("/sessions/{sid}/reconstruction")
    def get_reconstruction(sid: str, round: int = 0):
        data = gateway.reconstruction_bytes(sid, round)
        return Response(content=data, media_type="image/x-portable-pixmap")

    @app.post("/sessions/{sid}/feedback")
    def post_feedback(sid: str, body: dict):
        kind = body.get("type")
        if kind == "label":
            feedback = ClassLabel(int(body.get("value", -1)))
        elif kind == "text":
            feedback = TextPrompt(str(body.get("value", "")))
        else:
            raise FeedbackUnresolved(f"unknown feedback type {kind!r}")
        return gateway.post_feedback(sid, feedback)

    @app.get("/sessions/{sid}/ledger")
    def get_ledger(sid: str):
        return gateway.ledger_view(sid)

    return app
