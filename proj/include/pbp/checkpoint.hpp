/*
Copyright 2026 the pbpnet authors
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at
    http://www.apache.org/licenses/LICENSE-2.0
Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pbp/params.hpp"
#include "pbp/tensor.hpp"

namespace pbp {

// PBPCKPT1 container: 8 magic bytes, then one record per parameter in store
// order: name-length (u32 LE), UTF-8 name, rank (u32 LE), dims (u64 LE each),
// dtype code (u32 LE, 0 = 32-bit real), raw little-endian data. Round trips
// are bit-exact.

inline constexpr char kCheckpointMagic[8] = {'P', 'B', 'P', 'C', 'K', 'P', 'T', '1'};

void save_checkpoint(const ParamStore& params, const std::string& path);

/// Raw records in file order; format violations throw CheckpointError.
std::vector<std::pair<std::string, Tensor>> load_checkpoint_raw(
    const std::string& path);

/// Loads into an existing store; any missing/extra name or shape mismatch is
/// an architecture mismatch (ConfigError).
void load_checkpoint(ParamStore& params, const std::string& path);

}  // namespace pbp
