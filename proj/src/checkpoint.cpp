#include "sarssl/checkpoint.hpp"

#include <fmt/format.h>

#include "sarssl/byteio.hpp"
#include "sarssl/errors.hpp"

namespace sarssl {

using tensor::ParamStore;

std::vector<std::uint8_t> encode_checkpoint(const ParamStore<float>& store) {
  byteio::Writer w;
  w.bytes("DSLP");
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& t = store.tensor(i);
    w.str16(store.name(i));
    if (t.rank() > 0xff) throw DataError("tensor rank exceeds checkpoint limit");
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.value()) w.f32(v);
  }
  return std::move(w.buffer());
}

ParamStore<float> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  byteio::Reader r(bytes, "checkpoint");
  if (r.bytes(4) != "DSLP") throw DataError("checkpoint magic mismatch");
  const auto version = r.u16();
  if (version != kCheckpointVersion) {
    throw DataError(fmt::format("unsupported checkpoint version {}", version));
  }
  const auto count = r.u32();
  ParamStore<float> store;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str16();
    const auto rank = r.u8();
    tensor::Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    std::vector<float> values(tensor::shape_numel(shape));
    for (auto& v : values) v = r.f32();
    store.add(name, tensor::Tensor<float>(std::move(shape), std::move(values), true));
  }
  if (!r.at_end()) throw DataError("trailing bytes after checkpoint payload");
  return store;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore<float>& store) {
  byteio::write_file(path, encode_checkpoint(store));
}

ParamStore<float> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(byteio::read_file(path));
}

void merge_params(ParamStore<float>& dst, const ParamStore<float>& src) {
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto& t = src.tensor(i);
    dst.add(src.name(i), tensor::Tensor<float>(
                             t.shape(), std::vector<float>(t.value().begin(), t.value().end()), true));
  }
}

ParamStore<float> select_params(const ParamStore<float>& src, std::string_view prefix,
                                bool keep_matching) {
  ParamStore<float> out;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const bool match = src.name(i).starts_with(prefix);
    if (match != keep_matching) continue;
    const auto& t = src.tensor(i);
    out.add(src.name(i), tensor::Tensor<float>(
                             t.shape(), std::vector<float>(t.value().begin(), t.value().end()), true));
  }
  return out;
}

}  // namespace sarssl
