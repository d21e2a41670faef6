#pragma once

#include <filesystem>
#include <memory>

#include "giftlab/model.hpp"

namespace giftlab::io {

inline constexpr int kCheckpointFormatVersion = 1;

// Directory layout: manifest.json (kind, architecture, vocabulary, parameter
// count, format version, creation seed) + params.f32le (flat little-endian
// float32 in manifest order). Loading validates count and finiteness.
void save_checkpoint(const std::filesystem::path& dir, const model::PolicyModel& m);
std::unique_ptr<model::PolicyModel> load_checkpoint(const std::filesystem::path& dir);

}  // namespace giftlab::io
