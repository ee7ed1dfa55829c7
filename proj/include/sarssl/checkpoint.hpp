#pragma once

// Binary parameter checkpoints:
//   "DSLP" | version u16 | count u32 |
//   per parameter: name_len u16, name bytes, rank u8, dims u32 × rank,
//                  float32 values
// All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sarssl/tensor.hpp"

namespace sarssl {

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const tensor::ParamStore<float>& store);
tensor::ParamStore<float> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const tensor::ParamStore<float>& store);
tensor::ParamStore<float> load_checkpoint(const std::filesystem::path& path);

// Copies every parameter of `src` into `dst` (names must be new to `dst`).
void merge_params(tensor::ParamStore<float>& dst, const tensor::ParamStore<float>& src);
// Parameters of `src` whose names start with `prefix`.
tensor::ParamStore<float> select_params(const tensor::ParamStore<float>& src,
                                        std::string_view prefix, bool keep_matching = true);

}  // namespace sarssl
