#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "critmap/criticality.hpp"
#include "critmap/dataset.hpp"
#include "critmap/model.hpp"

// File formats (all integers little-endian):
//
// Model bundle
//   0   "LCM1"
//   4   u32 format version (kModelFormatVersion)
//   8   u64 metadata length L
//   16  L bytes of UTF-8 JSON: model_id, dtype, num_classes, input_shape,
//       layers[] (id, kind, inputs, hyper, weight_init, bias_init) and
//       tensors[] (name "<layer>/<param>", offset, nbytes, shape)
//   ... raw tensor blobs at absolute offsets that are multiples of 64,
//       zero padding in between.
//
// Dataset
//   0   "LCD1"
//   4   u32 n, channels, height, width, num_classes
//   24  n*channels*height*width float32 pixels in [0,1], sample-major
//   ..  n u16 labels
//   The file length must equal exactly 24 + 4*pixels + 2*n.
//
// Profile
//   JSON document with model_id, config, clean_accuracy and entries[]
//   (layer_id, per_trial, mean, std, stderr). Floats are written in shortest
//   round-trip form, so reloading reproduces them bit for bit.

namespace critmap::io {

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr std::size_t kBlobAlignment = 64;

std::vector<std::byte> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes);
void write_text(const std::filesystem::path& path, std::string_view text);

std::vector<std::byte> serialize_model(const ModelGraph& model);
ModelGraph deserialize_model(std::span<const std::byte> bytes);
void save_model(const ModelGraph& model, const std::filesystem::path& path);
ModelGraph load_model(const std::filesystem::path& path);

std::vector<std::byte> serialize_dataset(const Dataset& data);
Dataset deserialize_dataset(std::span<const std::byte> bytes);
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

std::string profile_to_json(const CriticalityProfile& profile);
CriticalityProfile profile_from_json(std::string_view text);
void save_profile(const CriticalityProfile& profile, const std::filesystem::path& path);
CriticalityProfile load_profile(const std::filesystem::path& path);

/// layer_id,mean,std,stderr,trial_0..trial_{k-1}
std::string profile_to_csv(const CriticalityProfile& profile);

/// Architecture description; missing keys keep the mini-ResNet defaults.
ArchConfig arch_from_json(std::string_view text);
std::string arch_to_json(const ArchConfig& config);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace critmap::io
