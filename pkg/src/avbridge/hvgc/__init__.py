from .backends import (FALLBACK_TAG, HTTPBackend, MockBackend, TextGenBackend,
                       TransportError, lexicon_matches, load_lexicon)
from .pipeline import (CaptionRecord, StageError, caption_items, parse_tag_lines,
                       run_pipeline, stage1_video_caption, stage2_extract_tags,
                       stage3_audio_caption, stoplist_hits)

__all__ = [
    "FALLBACK_TAG", "HTTPBackend", "MockBackend", "TextGenBackend", "TransportError",
    "lexicon_matches", "load_lexicon", "CaptionRecord", "StageError", "caption_items",
    "parse_tag_lines", "run_pipeline", "stage1_video_caption", "stage2_extract_tags",
    "stage3_audio_caption", "stoplist_hits",
]
