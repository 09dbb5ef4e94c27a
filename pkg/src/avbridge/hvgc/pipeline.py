"""Three-stage captioning pipeline over an abstract text backend.

Stage 1 writes a visual caption from the item metadata; stage 2 abstracts
auditory event tags from that caption; stage 3 writes a purely auditory
caption from the caption and tags, validated against a visual-attribute
stoplist. Stages run strictly in order, each consuming prior outputs.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import asdict, dataclass

from .backends import TextGenBackend, TransportError
from .templates import fill, load_template

RECORD_FORMAT_KEYS = ("input_id", "video_caption", "audio_tags", "audio_caption",
                      "stage_backends", "timestamps")


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage tag and any partial data."""

    def __init__(self, stage: str, message: str, partial: dict | None = None):
        super().__init__(message)
        self.stage = stage
        self.partial = partial or {}


@dataclass
class CaptionRecord:
    input_id: str
    video_caption: str
    audio_tags: list[str]
    audio_caption: str
    stage_backends: list[str]
    timestamps: list[float]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def load_stoplist() -> list[str]:
    path = os.path.join(os.path.dirname(__file__), "data", "stoplist.txt")
    with open(path) as f:
        return [w.strip().lower() for w in f
                if w.strip() and not w.startswith("#")]


def stoplist_hits(text: str, stoplist: list[str] | None = None) -> list[str]:
    stoplist = stoplist if stoplist is not None else load_stoplist()
    low = text.lower()
    return [w for w in stoplist if re.search(rf"\b{re.escape(w)}\b", low)]


def _call(backend: TextGenBackend, stage: int, **placeholders) -> str:
    system, user = load_template(stage)
    try:
        return backend.generate(system, fill(user, **placeholders))
    except TransportError as e:
        raise StageError(str(stage), f"stage {stage} transport failure: {e}") from e


def stage1_video_caption(backend: TextGenBackend, input_meta: str) -> str:
    if not input_meta.strip():
        raise ValueError("input metadata is empty")
    caption = _call(backend, 1, input_meta=input_meta)
    if not caption.strip():
        raise StageError("1", "stage 1 returned an empty caption")
    return caption.strip()


def parse_tag_lines(raw: str) -> list[str]:
    """Normalize backend tag output: strip numbering/bullets, lowercase."""
    tags = []
    for line in raw.splitlines():
        line = re.sub(r"^\s*(?:[-*•]+|\d+[.)])\s*", "", line).strip().lower()
        if line:
            tags.append(line)
    return tags


def stage2_extract_tags(backend: TextGenBackend, video_caption: str) -> list[str]:
    if not video_caption.strip():
        raise ValueError("video caption is empty")
    raw = _call(backend, 2, video_caption=video_caption)
    tags = parse_tag_lines(raw)
    if not tags:
        raise StageError("2", "stage 2 output had no parsable tag lines")
    return tags


def stage3_audio_caption(backend: TextGenBackend, video_caption: str,
                         tags: list[str]) -> str:
    """Generate the auditory caption; one corrective retry if the output
    trips the visual-attribute stoplist."""
    if not tags:
        raise ValueError("stage 3 requires a non-empty tag list")
    stoplist = load_stoplist()
    tags_text = "\n".join(tags)
    first = _call(backend, 3, tags=tags_text, video_caption=video_caption)
    if not stoplist_hits(first, stoplist):
        return first.strip()
    retry_caption = (video_caption
                     + "\n\nREVISE: remove every visual or color word; describe only what is heard.")
    second = _call(backend, 3, tags=tags_text, video_caption=retry_caption)
    if not stoplist_hits(second, stoplist):
        return second.strip()
    raise StageError("3", "stage 3 failed the stoplist twice",
                     partial={"attempts": [first, second]})


def _counter_clock():
    state = {"n": 0}

    def clock() -> float:
        value = float(state["n"])
        state["n"] += 1
        return value

    return clock


def run_pipeline(backend: TextGenBackend, input_meta: str, clock=None) -> CaptionRecord:
    """Stages 1 -> 2 -> 3 in order. ``clock`` stamps each stage completion;
    the default is a deterministic counter so offline runs are replayable
    (pass time.time for wall-clock stamps)."""
    clock = clock or _counter_clock()
    input_id = input_meta.split(":", 1)[0].strip()
    partial: dict = {"input_id": input_id}
    try:
        t_v = stage1_video_caption(backend, input_meta)
        partial["video_caption"] = t_v
        ts1 = clock()
        tags = stage2_extract_tags(backend, t_v)
        partial["audio_tags"] = tags
        ts2 = clock()
        t_a = stage3_audio_caption(backend, t_v, tags)
        ts3 = clock()
    except StageError as e:
        e.partial = {**partial, **e.partial}
        raise
    if t_a == t_v:
        raise StageError("3", "audio caption equals the video caption", partial=partial)
    return CaptionRecord(
        input_id=input_id,
        video_caption=t_v,
        audio_tags=tags,
        audio_caption=t_a,
        stage_backends=[backend.name] * 3,
        timestamps=[ts1, ts2, ts3],
    )


def caption_items(backend: TextGenBackend, metas: list[str], records_path: str,
                  clock=None) -> tuple[int, int]:
    """Run the pipeline per item, appending one JSON record per line.
    Failed items append a partial record with its failed stage tag.
    Returns (ok, failed)."""
    ok = failed = 0
    with open(records_path, "a") as f:
        for meta in metas:
            meta = meta.strip()
            if not meta:
                continue
            try:
                rec = run_pipeline(backend, meta, clock=clock)
                f.write(rec.to_json() + "\n")
                ok += 1
            except StageError as e:
                f.write(json.dumps({"failed_stage": e.stage, "error": str(e),
                                    **e.partial}, sort_keys=True) + "\n")
                failed += 1
    return ok, failed
