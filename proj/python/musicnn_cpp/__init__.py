# Copyright 2026 The musicnn-cpp Authors
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

"""Music auto-tagging models with a C++ core."""

from ._core import (
    MusicnnError,
    export_model,
    extractor,
    pr_auc,
    registry_names,
    roc_auc,
    taggram,
    top_tags,
    vocabulary,
)

__all__ = [
    "MusicnnError",
    "export_model",
    "extractor",
    "pr_auc",
    "registry_names",
    "roc_auc",
    "taggram",
    "top_tags",
    "vocabulary",
]
