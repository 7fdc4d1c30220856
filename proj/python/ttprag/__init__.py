# Copyright 2026 The ttprag Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Technique annotation of threat-intelligence text.

Thin wrapper over the compiled ``_ttprag`` module. Backends passed to
:class:`Pipeline` are callables ``f(request: dict) -> str`` where ``request``
carries ``model``, ``messages``, ``temperature``, ``top_p`` and ``max_tokens``.
"""

from ._ttprag import (
    BackendError,
    Bm25Index,
    Corpus,
    Error,
    FormatError,
    MissingPrediction,
    Pipeline,
    StageError,
    Taxonomy,
    UnparseableResponse,
    build_prompt,
    estimate_tokens,
    evaluate,
    evaluate_at_k,
    generator_instruction,
    parse_id,
    parse_ranking,
    scan_ids,
    score_sets,
    tokenize,
    truncate,
    window_offsets,
)

__all__ = [
    "BackendError",
    "Bm25Index",
    "Corpus",
    "Error",
    "FormatError",
    "MissingPrediction",
    "Pipeline",
    "StageError",
    "Taxonomy",
    "UnparseableResponse",
    "build_prompt",
    "estimate_tokens",
    "evaluate",
    "evaluate_at_k",
    "generator_instruction",
    "parse_id",
    "parse_ranking",
    "scan_ids",
    "score_sets",
    "tokenize",
    "truncate",
    "window_offsets",
]
