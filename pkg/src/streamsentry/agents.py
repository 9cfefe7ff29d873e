"""The three pipeline agents as deterministic step functions.

Agent 1 captions the frames sampled from each window, Agent 2 extends the
causal summary chain, Agent 3 assembles the discrimination request from
the freshest summary plus the adjacent frames and turns the reasoner's
answer into a Decision. Workers (threaded or simulated) own the mutable
state and call these steps; the steps themselves are pure given their
inputs, which is what makes replay byte-reproducible.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

from .backends import BackendError, ReasonerResponse
from .core import (
    Caption,
    DEFAULT_DECISION_THRESHOLD,
    Decision,
    FIRST_SUMMARY_PREV_SEQ,
    FrameRef,
    StreamSentryError,
    Summary,
)
from .entity_filter import (
    DEFAULT_TAU,
    EntityVocabulary,
    PREFIX_CUT,
    count_entities,
    filter_captions,
    screen_main_entities,
)

IMAGE_TOKEN = "<image>"
SEP_TOKEN = "<sep>"
HISTORY_OPEN = "<history>"
HISTORY_CLOSE = "</history>"

CAPTION_PLACEHOLDER = "[caption]"

COLD_START_SENTINEL_SEQ = -1


class AgentError(StreamSentryError):
    pass


@dataclass(frozen=True)
class PromptSet:
    """Prompt assets: caption post-format, summarizer and reasoner instructions."""

    caption_format: str
    summarize: str
    discriminate: str

    @classmethod
    def load_default(cls) -> "PromptSet":
        base = resources.files("streamsentry").joinpath("prompts")
        return cls(
            caption_format=base.joinpath("agent1.txt").read_text("utf-8").rstrip("\n"),
            summarize=base.joinpath("agent2.txt").read_text("utf-8").rstrip("\n"),
            discriminate=base.joinpath("agent3.txt").read_text("utf-8").rstrip("\n"),
        )

    @classmethod
    def load_dir(cls, directory) -> "PromptSet":
        from pathlib import Path

        d = Path(directory)
        return cls(
            caption_format=(d / "agent1.txt").read_text("utf-8").rstrip("\n"),
            summarize=(d / "agent2.txt").read_text("utf-8").rstrip("\n"),
            discriminate=(d / "agent3.txt").read_text("utf-8").rstrip("\n"),
        )

    def format_caption(self, raw: str) -> str:
        return self.caption_format.replace(CAPTION_PLACEHOLDER, raw)


@dataclass(frozen=True)
class GapRecord:
    """A frame whose caption failed; the window proceeds without it."""

    frame_id: int
    error: str


@dataclass(frozen=True)
class CaptionBatch:
    window_seq: int
    captions: tuple[Caption, ...]
    gaps: tuple[GapRecord, ...] = ()

    def __post_init__(self):
        for c in self.captions:
            if c.window_seq != self.window_seq:
                raise AgentError(
                    f"caption window {c.window_seq} differs from batch {self.window_seq}"
                )

    @property
    def raw_size(self) -> int:
        return len(self.captions) + len(self.gaps)

    def to_dict(self) -> dict:
        return {
            "window_seq": self.window_seq,
            "captions": [c.to_dict() for c in self.captions],
            "gaps": [{"frame_id": g.frame_id, "error": g.error} for g in self.gaps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CaptionBatch":
        return cls(
            window_seq=int(d["window_seq"]),
            captions=tuple(Caption.from_dict(c) for c in d["captions"]),
            gaps=tuple(
                GapRecord(frame_id=int(g["frame_id"]), error=str(g["error"]))
                for g in d.get("gaps", ())
            ),
        )


@dataclass(frozen=True)
class DiscriminationRequest:
    """Byte-deterministic reasoner input: instruction + identifier + summary."""

    instruction: str
    identifier: str
    summary: str
    frames: tuple[FrameRef, ...]
    summary_seq: int = COLD_START_SENTINEL_SEQ

    def __post_init__(self):
        want_seps = len(self.frames) - 1
        if self.identifier.count(SEP_TOKEN) != want_seps:
            raise AgentError(
                f"identifier must contain exactly {want_seps} frame separators"
            )
        if self.identifier.count(HISTORY_OPEN) != 1 or self.identifier.count(HISTORY_CLOSE) != 1:
            raise AgentError("identifier must contain exactly one history envelope")

    def text(self) -> str:
        return self.instruction + self.identifier + self.summary


def agent1_step(
    frames: Sequence[FrameRef],
    window_seq: int,
    captioner,
    vocab: EntityVocabulary,
    prompts: PromptSet,
    expected_count: int = 5,
) -> CaptionBatch:
    """Caption each sampled frame of one window, skipping failed frames.

    A backend failure on one frame becomes a gap record instead of
    blocking the window (skip-and-log policy).
    """
    if len(frames) != expected_count:
        raise AgentError(f"window {window_seq} sampled {len(frames)} frames, expected {expected_count}")
    captions: list[Caption] = []
    gaps: list[GapRecord] = []
    for frame in frames:
        try:
            raw = captioner.caption(frame)
        except BackendError as e:
            gaps.append(GapRecord(frame_id=frame.frame_id, error=str(e)))
            continue
        text = prompts.format_caption(raw)
        captions.append(
            Caption(
                text=text,
                frame_id=frame.frame_id,
                ts_us=frame.ts_us,
                window_seq=window_seq,
                entities=vocab.mentions(text),
            )
        )
    return CaptionBatch(window_seq=window_seq, captions=tuple(captions), gaps=tuple(gaps))


def agent2_step(
    batch: CaptionBatch,
    prev: Optional[Summary],
    summarizer,
    vocab: EntityVocabulary,
    prompts: PromptSet,
    horizon: Sequence[Caption],
    now_us: int,
    tau: int = DEFAULT_TAU,
    screen_rule: str = PREFIX_CUT,
) -> Summary:
    """Extend the summary chain by one link.

    Entity statistics come from ``horizon`` (which must already include
    this batch's captions); only the current batch is filtered before the
    summarizer call. A summarizer failure re-emits the previous text as a
    carried link so the chain stays gapless.
    """
    seq = batch.window_seq
    expected_prev = seq - 1 if seq > 0 else FIRST_SUMMARY_PREV_SEQ
    prev_seq = prev.summary_seq if prev is not None else FIRST_SUMMARY_PREV_SEQ
    if prev_seq != expected_prev:
        raise AgentError(f"summary {seq} cannot chain to predecessor {prev_seq}")

    freq = count_entities(list(horizon), vocab)
    screen = screen_main_entities(freq, vocab, tau=tau, rule=screen_rule)
    surviving = filter_captions(list(batch.captions), screen)
    prev_text = prev.text if prev is not None else ""
    try:
        text = summarizer.summarize(prompts.summarize, [c.text for c in surviving], prev_text)
        carried = False
    except BackendError:
        text = prev_text
        carried = True
    return Summary(
        summary_seq=seq,
        text=text,
        prev_seq=expected_prev,
        source_window_seq=batch.window_seq,
        created_ts_us=now_us,
        carried=carried,
    )


class SummaryChain:
    """Owns Agent 2's rolling state: caption horizon and chain head.

    ``step`` keeps summary_seq gapless even when window sequences skip,
    by padding with carried links.
    """

    def __init__(
        self,
        summarizer,
        vocab: EntityVocabulary,
        prompts: PromptSet,
        horizon_len: int = 10,
        tau: int = DEFAULT_TAU,
        screen_rule: str = PREFIX_CUT,
    ):
        self._summarizer = summarizer
        self._vocab = vocab
        self._prompts = prompts
        self._horizon: deque[Caption] = deque(maxlen=horizon_len)
        self._tau = tau
        self._screen_rule = screen_rule
        self.head: Optional[Summary] = None
        self.carried_count = 0

    def step(self, batch: CaptionBatch, now_us: int) -> list[Summary]:
        emitted: list[Summary] = []
        next_seq = self.head.summary_seq + 1 if self.head is not None else 0
        while next_seq < batch.window_seq:
            self.head = Summary(
                summary_seq=next_seq,
                text=self.head.text if self.head is not None else "",
                prev_seq=next_seq - 1 if next_seq > 0 else FIRST_SUMMARY_PREV_SEQ,
                source_window_seq=next_seq,
                created_ts_us=now_us,
                carried=True,
            )
            self.carried_count += 1
            emitted.append(self.head)
            next_seq += 1

        self._horizon.extend(batch.captions)
        summary = agent2_step(
            batch,
            self.head,
            self._summarizer,
            self._vocab,
            self._prompts,
            horizon=list(self._horizon),
            now_us=now_us,
            tau=self._tau,
            screen_rule=self._screen_rule,
        )
        if summary.carried:
            self.carried_count += 1
        self.head = summary
        emitted.append(summary)
        return emitted


def agent3_assemble(
    summary: Optional[Summary],
    frames: Sequence[FrameRef],
    prompts: PromptSet,
) -> DiscriminationRequest:
    """Build the reasoner request: frame markup plus the history envelope.

    With no summary yet (cold start) the history envelope is empty.
    """
    if not frames:
        raise AgentError("discrimination request needs at least one frame")
    history_text = summary.text if summary is not None else ""
    identifier = (
        SEP_TOKEN.join(IMAGE_TOKEN for _ in frames)
        + HISTORY_OPEN
        + history_text
        + HISTORY_CLOSE
    )
    return DiscriminationRequest(
        instruction=prompts.discriminate,
        identifier=identifier,
        summary=history_text,
        frames=tuple(frames),
        summary_seq=summary.summary_seq if summary is not None else COLD_START_SENTINEL_SEQ,
    )


def agent3_step(
    request: DiscriminationRequest,
    reasoner,
    decision_id: int,
    now_us: int,
    threshold: float = DEFAULT_DECISION_THRESHOLD,
    stream_id: str = "",
) -> Decision:
    """Run one discrimination and assemble the Decision.

    Backend and schema failures propagate; the caller suppresses the
    decision and reports the error on the side channel.
    """
    response: ReasonerResponse = reasoner.discriminate(request)
    return Decision(
        decision_id=decision_id,
        summary_seq=request.summary_seq,
        frame_ids=tuple(f.frame_id for f in request.frames),
        subject=response.subject,
        location=response.location,
        cause=response.cause,
        is_anomalous=response.score >= threshold,
        score=response.score,
        emitted_ts_us=now_us,
        stream_id=stream_id,
    )
