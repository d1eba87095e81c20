// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

#include "crosskd/detector.hpp"

namespace crosskd {

/// Binary checkpoint layout:
///   "CKDCKPT1" | u64 header length | header JSON
///   | u64 entry count | entries...
/// with each entry
///   u32 key length | key | u32 rank | u32 dims[rank] | f64 values (little endian).
/// Keys are "branch/layer_index/param_name", e.g. "cls/3/weight". The header
/// records n_layers, hidden_channels, num_classes, reg_mode, bin_count,
/// strides, shared_across_levels, in_channels and backbone_channels.
std::string serialize_checkpoint(const DetectorModel& model);
DetectorModel deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const DetectorModel& model, const std::filesystem::path& path);
DetectorModel load_checkpoint(const std::filesystem::path& path);

/// 64-bit FNV-1a digest, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace crosskd
