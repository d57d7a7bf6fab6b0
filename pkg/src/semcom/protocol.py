"""Three-phase transmitter/receiver state machines with framed messages.

    Tx: Idle -> InitSent -> AwaitingFeedback -> UpdateSent
                                 ^     |            |
                                 |     +--> Done    |
                                 +------------------+
    Rx: Idle -> GotInit -> FeedbackSent -> GotUpdate
                    |           |              |
                    +--> Done <-+--------------+  (loop: GotUpdate -> FeedbackSent)

Step 1 sends the compressed segmentation and caches the Canny edge map
(never transmitted whole). Step 2 carries a label or text prompt uplink.
Step 3 answers with the attention-masked sparse edge patches only — the
segmentation is never retransmitted. Steps 2-3 repeat per round.

Frame layout (normative): magic "SEMC", version byte, type byte,
little-endian u32 payload length, payload, little-endian CRC-32 over all
preceding bytes. The in-memory channel is lossless and ordered; a
byte-corruption hook exists only to exercise the FrameCorrupt path.
"""

from __future__ import annotations

import base64
import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import attention as att
from .codec import (
    KIND_CONTROL,
    KIND_FEEDBACK,
    KIND_SEMANTIC,
    STEP_FEEDBACK,
    STEP_INIT,
    STEP_UPDATE,
    BandwidthLedger,
    PatchPayload,
    SegPayload,
    decode_patches,
    decode_seg,
    encode_patches,
    encode_seg,
    mask_edge,
)
from .diffusion import Condition, sample
from .errors import (
    FeedbackUnresolved,
    FrameCorrupt,
    ProtocolViolation,
    UnknownType,
)
from .imgproc import canny_edges
from .scenegen import K_CLASSES, SceneBundle

FRAME_MAGIC = b"SEMC"
FRAME_VERSION = 1

MSG_SEM_INIT = 1
MSG_FEEDBACK = 2
MSG_SEM_UPDATE = 3
MSG_SESSION_DONE = 4

_MSG_NAMES = {
    MSG_SEM_INIT: "SemInit",
    MSG_FEEDBACK: "FeedbackMsg",
    MSG_SEM_UPDATE: "SemUpdate",
    MSG_SESSION_DONE: "SessionDone",
}


@dataclass(frozen=True)
class SemInit:
    seg_payload: SegPayload


@dataclass(frozen=True)
class FeedbackMsg:
    feedback: att.Feedback


@dataclass(frozen=True)
class SemUpdate:
    patch_payload: PatchPayload


@dataclass(frozen=True)
class SessionDone:
    pass


Message = SemInit | FeedbackMsg | SemUpdate | SessionDone


def _encode_feedback(fb: att.Feedback) -> bytes:
    if isinstance(fb, att.ClassLabel):
        return bytes([0, fb.class_id])
    return bytes([1]) + fb.text.encode("utf-8")


def _decode_feedback(payload: bytes) -> att.Feedback:
    if not payload:
        raise FrameCorrupt("empty feedback payload")
    if payload[0] == 0:
        if len(payload) != 2:
            raise FrameCorrupt("label feedback must be exactly 2 bytes")
        return att.ClassLabel(payload[1])
    if payload[0] == 1:
        try:
            return att.TextPrompt(payload[1:].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FrameCorrupt(f"feedback text not utf-8: {exc}") from exc
    raise FrameCorrupt(f"unknown feedback kind {payload[0]}")


def encode_frame(msg: Message) -> bytes:
    if isinstance(msg, SemInit):
        mtype, payload = MSG_SEM_INIT, msg.seg_payload.to_bytes()
    elif isinstance(msg, FeedbackMsg):
        mtype, payload = MSG_FEEDBACK, _encode_feedback(msg.feedback)
    elif isinstance(msg, SemUpdate):
        mtype, payload = MSG_SEM_UPDATE, msg.patch_payload.to_bytes()
    elif isinstance(msg, SessionDone):
        mtype, payload = MSG_SESSION_DONE, b""
    else:
        raise UnknownType(f"cannot encode {type(msg).__name__}")
    head = FRAME_MAGIC + bytes([FRAME_VERSION, mtype]) + struct.pack("<I", len(payload))
    body = head + payload
    return body + struct.pack("<I", zlib.crc32(body))


def decode_frame(data: bytes) -> Message:
    if len(data) < 14:
        raise FrameCorrupt(f"frame too short: {len(data)} bytes")
    if data[:4] != FRAME_MAGIC:
        raise FrameCorrupt(f"bad frame magic {data[:4]!r}")
    version, mtype = data[4], data[5]
    (length,) = struct.unpack("<I", data[6:10])
    if len(data) != 14 + length:
        raise FrameCorrupt(f"frame length mismatch: {len(data)} != {14 + length}")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise FrameCorrupt("frame checksum mismatch")
    if version != FRAME_VERSION:
        from .errors import BadVersion

        raise BadVersion(f"unsupported frame version {version}")
    payload = data[10:-4]
    if mtype == MSG_SEM_INIT:
        return SemInit(SegPayload.from_bytes(payload))
    if mtype == MSG_FEEDBACK:
        return FeedbackMsg(_decode_feedback(payload))
    if mtype == MSG_SEM_UPDATE:
        return SemUpdate(PatchPayload.from_bytes(payload))
    if mtype == MSG_SESSION_DONE:
        if payload:
            raise FrameCorrupt("SessionDone carries no payload")
        return SessionDone()
    raise UnknownType(f"unknown message type {mtype}")


class TxState(Enum):
    IDLE = "Idle"
    INIT_SENT = "InitSent"
    AWAITING_FEEDBACK = "AwaitingFeedback"
    UPDATE_SENT = "UpdateSent"
    DONE = "Done"


class RxState(Enum):
    IDLE = "Idle"
    GOT_INIT = "GotInit"
    FEEDBACK_SENT = "FeedbackSent"
    GOT_UPDATE = "GotUpdate"
    DONE = "Done"


# events
@dataclass(frozen=True)
class TxStart:
    scene: SceneBundle


@dataclass(frozen=True)
class TxFeedbackReceived:
    feedback: att.Feedback


@dataclass(frozen=True)
class TxFinish:
    pass


@dataclass(frozen=True)
class RxFrameReceived:
    message: Message


@dataclass(frozen=True)
class RxOperatorFeedback:
    feedback: att.Feedback


@dataclass(frozen=True)
class RxFinish:
    pass


@dataclass(frozen=True)
class SessionConfig:
    k_classes: int = K_CLASSES
    tau: float = att.DEFAULT_TAU
    patch_size: int = 8
    attention_mode: str = "oracle"  # oracle | cam | all
    blur_sigma: float = 1.0
    canny_sigma: float = 1.0
    canny_low: float = 0.1
    canny_high: float = 0.3
    sample_seed: int = 0
    lexicon: dict | None = None

    def resolve_classes(self, feedback: att.Feedback) -> set[int]:
        if isinstance(feedback, att.ClassLabel):
            if not 0 < feedback.class_id < self.k_classes:
                raise FeedbackUnresolved(
                    f"label {feedback.class_id} is not a foreground class"
                )
            return {feedback.class_id}
        return att.resolve_prompt(feedback.text, self.lexicon)


@dataclass
class ModelBundle:
    sched: object
    denoiser: object
    classifier: object | None = None


@dataclass(frozen=True)
class ReconRequest:
    round: int
    condition: Condition


class TxMachine:
    """Transmitter: owns the scene, the cached edge map, and attention."""

    def __init__(self, config: SessionConfig, classifier=None):
        self.config = config
        self.classifier = classifier
        self.state = TxState.IDLE
        self.round = 0
        self.scene: SceneBundle | None = None
        self.edge = None
        self.state_trace = [self.state]

    def _goto(self, state: TxState):
        self.state = state
        self.state_trace.append(state)

    def _require(self, expected: TxState, event) -> None:
        if self.state is not expected:
            raise ProtocolViolation(
                f"{type(event).__name__} illegal in tx state {self.state.value}"
            )

    def _attention_mask(self, feedback: att.Feedback) -> np.ndarray:
        cfg = self.config
        scene = self.scene
        if cfg.attention_mode == "all":
            return np.ones(scene.seg.shape, dtype=np.uint8)
        classes = cfg.resolve_classes(feedback)
        if cfg.attention_mode == "oracle":
            amap = att.oracle_attention(
                scene.seg, scene.instance_map, classes, cfg.blur_sigma
            )
        elif cfg.attention_mode == "cam":
            if self.classifier is None:
                raise ProtocolViolation("cam attention requires a classifier")
            feats = self.classifier.feature_maps(scene.image)
            maps = [
                att.cam(feats, self.classifier.class_weights(c), scene.seg.shape)
                for c in sorted(classes)
            ]
            amap = att.combine_attention(maps)
        else:
            raise ProtocolViolation(f"unknown attention mode {cfg.attention_mode}")
        return att.binarize_mask(amap, cfg.tau).bits

    def on_event(self, event) -> Message | None:
        if isinstance(event, TxStart):
            self._require(TxState.IDLE, event)
            self.scene = event.scene
            inst = event.scene.instance_map
            gray = inst / max(int(inst.max()), 1)
            self.edge = canny_edges(
                gray, self.config.canny_sigma, self.config.canny_low, self.config.canny_high
            )
            payload = encode_seg(event.scene.seg, self.config.k_classes)
            self._goto(TxState.INIT_SENT)
            self._goto(TxState.AWAITING_FEEDBACK)
            return SemInit(payload)
        if isinstance(event, TxFeedbackReceived):
            self._require(TxState.AWAITING_FEEDBACK, event)
            mask = self._attention_mask(event.feedback)
            x_att = mask_edge(self.edge, mask)
            payload = encode_patches(x_att, self.config.patch_size)
            self.round += 1
            self._goto(TxState.UPDATE_SENT)
            self._goto(TxState.AWAITING_FEEDBACK)
            return SemUpdate(payload)
        if isinstance(event, TxFinish):
            self._require(TxState.AWAITING_FEEDBACK, event)
            self._goto(TxState.DONE)
            return SessionDone()
        raise ProtocolViolation(f"unknown tx event {type(event).__name__}")


class RxMachine:
    """Receiver: decodes payloads and raises reconstruction requests."""

    _POST_INIT = (RxState.GOT_INIT, RxState.FEEDBACK_SENT, RxState.GOT_UPDATE)

    def __init__(self, config: SessionConfig):
        self.config = config
        self.state = RxState.IDLE
        self.round = 0
        self.seg = None
        self.state_trace = [self.state]

    def _goto(self, state: RxState):
        self.state = state
        self.state_trace.append(state)

    def on_event(self, event) -> tuple[Message | None, ReconRequest | None]:
        if isinstance(event, RxFrameReceived):
            return self._on_frame(event.message)
        if isinstance(event, RxOperatorFeedback):
            if self.state not in (RxState.GOT_INIT, RxState.GOT_UPDATE):
                raise ProtocolViolation(
                    f"feedback illegal in rx state {self.state.value}"
                )
            if self.config.attention_mode != "all":
                self.config.resolve_classes(event.feedback)  # early unresolved error
            self._goto(RxState.FEEDBACK_SENT)
            return FeedbackMsg(event.feedback), None
        if isinstance(event, RxFinish):
            if self.state is RxState.DONE:
                raise ProtocolViolation("rx already done")
            self._goto(RxState.DONE)
            return None, None
        raise ProtocolViolation(f"unknown rx event {type(event).__name__}")

    def _on_frame(self, msg: Message):
        if isinstance(msg, SemInit):
            if self.state is not RxState.IDLE:
                raise ProtocolViolation(f"SemInit illegal in state {self.state.value}")
            self.seg = decode_seg(msg.seg_payload)
            self._goto(RxState.GOT_INIT)
            cond = Condition.from_seg(self.seg, self.config.k_classes)
            return None, ReconRequest(0, cond)
        if isinstance(msg, SemUpdate):
            if self.state is not RxState.FEEDBACK_SENT:
                raise ProtocolViolation(
                    f"SemUpdate illegal in state {self.state.value}"
                )
            x_att = decode_patches(msg.patch_payload)
            if x_att.bits.shape != self.seg.shape:
                raise ProtocolViolation("edge update dims differ from segmentation")
            self.round += 1
            self._goto(RxState.GOT_UPDATE)
            cond = Condition.from_seg(self.seg, self.config.k_classes, x_att.bits)
            return None, ReconRequest(self.round, cond)
        if isinstance(msg, SessionDone):
            if self.state not in self._POST_INIT:
                raise ProtocolViolation(
                    f"SessionDone illegal in state {self.state.value}"
                )
            self._goto(RxState.DONE)
            return None, None
        if isinstance(msg, FeedbackMsg):
            raise ProtocolViolation("receiver cannot receive feedback frames")
        raise UnknownType(f"unknown message {type(msg).__name__}")


@dataclass(frozen=True)
class TranscriptEvent:
    index: int
    direction: str  # "tx->rx" | "rx->tx"
    msg_type: str
    digest: str  # sha256 of the frame bytes
    nbytes: int


@dataclass
class SessionTranscript:
    variant: str
    height: int
    width: int
    k_classes: int
    scene_seed: int | None
    gt_objects: list  # [(class_id, (x0,y0,x1,y1)), ...]
    gt_counts: list
    config: SessionConfig
    events: list[TranscriptEvent] = field(default_factory=list)
    ledger: BandwidthLedger | None = None
    reconstructions: dict = field(default_factory=dict)  # round -> H×W×3 [0,1]
    tx_trace: list = field(default_factory=list)
    rx_trace: list = field(default_factory=list)

    def digest(self) -> str:
        h = hashlib.sha256()
        for e in self.events:
            h.update(f"{e.index}|{e.direction}|{e.msg_type}|{e.digest}|{e.nbytes}".encode())
        return h.hexdigest()

    def rounds(self) -> list[int]:
        return sorted(self.reconstructions)

    def final_reconstruction(self) -> np.ndarray:
        return self.reconstructions[self.rounds()[-1]]

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {
                    "type": "header",
                    "variant": self.variant,
                    "height": self.height,
                    "width": self.width,
                    "k_classes": self.k_classes,
                    "scene_seed": self.scene_seed,
                    "gt_objects": [[c, list(b)] for c, b in self.gt_objects],
                    "gt_counts": list(map(int, self.gt_counts)),
                    "raw_bytes": self.ledger.raw_bytes,
                    "config": {
                        "tau": self.config.tau,
                        "patch_size": self.config.patch_size,
                        "attention_mode": self.config.attention_mode,
                        "sample_seed": self.config.sample_seed,
                    },
                }
            )
        ]
        for e in self.events:
            lines.append(
                json.dumps(
                    {
                        "type": "event",
                        "index": e.index,
                        "direction": e.direction,
                        "msg": e.msg_type,
                        "digest": e.digest,
                        "nbytes": e.nbytes,
                    }
                )
            )
        for entry in self.ledger.entries:
            lines.append(
                json.dumps(
                    {
                        "type": "ledger",
                        "round": entry.round,
                        "step": entry.step,
                        "kind": entry.kind,
                        "nbytes": entry.nbytes,
                    }
                )
            )
        for rnd in self.rounds():
            img = self.reconstructions[rnd]
            u8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
            lines.append(
                json.dumps(
                    {
                        "type": "recon",
                        "round": rnd,
                        "data": base64.b64encode(u8.tobytes()).decode("ascii"),
                    }
                )
            )
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_jsonl(text: str) -> "SessionTranscript":
        transcript = None
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["type"] == "header":
                cfg = SessionConfig(
                    tau=rec["config"]["tau"],
                    patch_size=rec["config"]["patch_size"],
                    attention_mode=rec["config"]["attention_mode"],
                    sample_seed=rec["config"]["sample_seed"],
                )
                transcript = SessionTranscript(
                    variant=rec["variant"],
                    height=rec["height"],
                    width=rec["width"],
                    k_classes=rec["k_classes"],
                    scene_seed=rec["scene_seed"],
                    gt_objects=[(c, tuple(b)) for c, b in rec["gt_objects"]],
                    gt_counts=rec["gt_counts"],
                    config=cfg,
                    ledger=BandwidthLedger(raw_bytes=rec["raw_bytes"]),
                )
            elif rec["type"] == "event":
                transcript.events.append(
                    TranscriptEvent(
                        rec["index"], rec["direction"], rec["msg"], rec["digest"], rec["nbytes"]
                    )
                )
            elif rec["type"] == "ledger":
                transcript.ledger.record(
                    rec["round"], rec["step"], rec["kind"], rec["nbytes"]
                )
            elif rec["type"] == "recon":
                raw = base64.b64decode(rec["data"])
                img = np.frombuffer(raw, dtype=np.uint8).reshape(
                    transcript.height, transcript.width, 3
                )
                transcript.reconstructions[rec["round"]] = img / 255.0
        if transcript is None:
            raise FrameCorrupt("transcript has no header record")
        return transcript


def run_session(
    scene: SceneBundle,
    feedback_policy,
    models: ModelBundle,
    config: SessionConfig | None = None,
    variant: str = "session",
    scene_seed: int | None = None,
    channel=None,
    sample_shape=None,
) -> SessionTranscript:
    """Drive both machines over an in-memory lossless ordered channel.

    feedback_policy is an iterable of Feedback values (scripted) or a
    callable (transcript, round) -> Feedback | None for interactive use.
    """
    config = config or SessionConfig()
    channel = channel or (lambda b: b)
    tx = TxMachine(config, classifier=models.classifier)
    rx = RxMachine(config)
    transcript = SessionTranscript(
        variant=variant,
        height=scene.height,
        width=scene.width,
        k_classes=config.k_classes,
        scene_seed=scene_seed,
        gt_objects=[(o.class_id, o.bbox) for o in scene.objects],
        gt_counts=list(map(int, scene.class_counts)),
        config=config,
        ledger=BandwidthLedger.for_image(scene.height, scene.width),
    )

    def log_frame(direction: str, msg: Message, frame: bytes) -> None:
        transcript.events.append(
            TranscriptEvent(
                index=len(transcript.events),
                direction=direction,
                msg_type=_MSG_NAMES[_msg_type_of(msg)],
                digest=hashlib.sha256(frame).hexdigest(),
                nbytes=len(frame),
            )
        )

    def reconstruct(request: ReconRequest) -> None:
        rng = np.random.default_rng(
            np.random.PCG64(np.random.SeedSequence([config.sample_seed, request.round]))
        )
        shape = sample_shape or (3, scene.height, scene.width)
        img = sample(shape, request.condition, models.sched, models.denoiser, rng)
        # snap to the 8-bit raster grid: stored and in-memory pixels agree
        u8 = np.clip(np.rint(img.transpose(1, 2, 0) * 255.0), 0, 255)
        transcript.reconstructions[request.round] = u8 / 255.0

    def tx_to_rx(msg: Message, round_: int, step: int, kind: str) -> None:
        frame = channel(encode_frame(msg))
        log_frame("tx->rx", msg, frame)
        transcript.ledger.record(round_, step, kind, len(frame))
        decoded = decode_frame(frame)
        _, request = rx.on_event(RxFrameReceived(decoded))
        if request is not None:
            reconstruct(request)

    def rx_to_tx(msg: Message, round_: int) -> Message | None:
        frame = channel(encode_frame(msg))
        log_frame("rx->tx", msg, frame)
        transcript.ledger.record(round_, STEP_FEEDBACK, KIND_FEEDBACK, len(frame))
        decoded = decode_frame(frame)
        return tx.on_event(TxFeedbackReceived(decoded.feedback))

    init_msg = tx.on_event(TxStart(scene))
    tx_to_rx(init_msg, 0, STEP_INIT, KIND_SEMANTIC)

    if callable(feedback_policy):
        fb_iter = iter(lambda: feedback_policy(transcript, rx.round), None)
    else:
        fb_iter = iter(feedback_policy)

    for feedback in fb_iter:
        fb_msg, _ = rx.on_event(RxOperatorFeedback(feedback))
        update = rx_to_tx(fb_msg, tx.round + 1)
        tx_to_rx(update, tx.round, STEP_UPDATE, KIND_SEMANTIC)

    done = tx.on_event(TxFinish())
    tx_to_rx(done, tx.round, 0, KIND_CONTROL)
    transcript.tx_trace = [s.value for s in tx.state_trace]
    transcript.rx_trace = [s.value for s in rx.state_trace]
    return transcript


def _msg_type_of(msg: Message) -> int:
    if isinstance(msg, SemInit):
        return MSG_SEM_INIT
    if isinstance(msg, FeedbackMsg):
        return MSG_FEEDBACK
    if isinstance(msg, SemUpdate):
        return MSG_SEM_UPDATE
    return MSG_SESSION_DONE


def replay_check(transcript: SessionTranscript) -> bool:
    """Verify ledger soundness: event bytes match ledger entries exactly."""
    event_bytes = sum(e.nbytes for e in transcript.events)
    ledger_bytes = sum(e.nbytes for e in transcript.ledger.entries)
    return event_bytes == ledger_bytes
