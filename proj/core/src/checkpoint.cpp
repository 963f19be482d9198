#include "binary_io.hpp"
#include "ed2lm/error.hpp"
#include "ed2lm/parameters.hpp"

#include <algorithm>
#include <map>

namespace ed2lm {

namespace {
constexpr std::string_view kCheckpointMagic = "ED2LMCK1";
}

std::vector<std::uint8_t> serialize_checkpoint(const ModelConfig& config, const Parameters<float>& params) {
  params.check_shapes(config);
  std::vector<std::uint8_t> out;
  detail::ByteWriter w(out);
  w.bytes(kCheckpointMagic);
  append_config(out, config);

  auto slots = params.tensors();
  std::sort(slots.begin(), slots.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  for (const auto& t : slots) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name);
    w.u32(t.rank);
    if (t.rank == 2) w.u32(static_cast<std::uint32_t>(t.tensor->rows()));
    w.u32(static_cast<std::uint32_t>(t.tensor->cols()));
    for (Index i = 0; i < t.tensor->size(); ++i) w.f32(t.tensor->data()[i]);
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  detail::expect_magic(r, kCheckpointMagic, "checkpoint");
  std::size_t offset = r.offset();
  Checkpoint ck;
  ck.config = read_config(bytes, offset);
  r = detail::ByteReader(bytes, offset);
  try {
    ck.config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint carries an invalid config: ") + e.what());
  }

  ck.params = Parameters<float>::zeros(ck.config);
  std::map<std::string, NamedTensor<float>> by_name;
  for (auto& t : ck.params.tensors()) by_name.emplace(t.name, t);

  while (r.remaining() > 0) {
    const std::string name = r.bytes(r.u32());
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint has unexpected tensor " + name);
    const std::uint32_t rank = r.u32();
    if (rank != it->second.rank) throw FormatError("checkpoint tensor " + name + " has wrong rank");
    const Index rows = rank == 2 ? static_cast<Index>(r.u32()) : 1;
    const Index cols = static_cast<Index>(r.u32());
    Matrix<float>& m = *it->second.tensor;
    if (rows != m.rows() || cols != m.cols()) {
      throw FormatError("checkpoint tensor " + name + " shape disagrees with its config");
    }
    r.f32s({m.data(), static_cast<std::size_t>(m.size())});
    by_name.erase(it);
  }
  if (!by_name.empty()) throw FormatError("checkpoint is missing tensor " + by_name.begin()->first);
  if (!ck.params.all_finite()) throw FormatError("checkpoint contains non-finite values");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const Parameters<float>& params) {
  detail::write_file_bytes(path, serialize_checkpoint(config, params));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(detail::read_file_bytes(path));
}

}  // namespace ed2lm
