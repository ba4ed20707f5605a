#include "m3sr/checkpoint.hpp"

#include <map>

#include "byte_io.hpp"
#include "m3sr/config.hpp"
#include "m3sr/errors.hpp"

namespace m3sr {

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.raw("M3CK");
  w.u32(kCheckpointVersion);
  const std::string cfg = model_config_text(model.config);
  w.u32(std::uint32_t(cfg.size()));
  w.raw(cfg);
  const auto params = model.parameters();
  w.u32(std::uint32_t(params.size()));
  for (const auto& p : params) {
    w.u32(std::uint32_t(p.name.size()));
    w.raw(p.name);
    const Shape& s = p.var.shape();
    w.u32(std::uint32_t(s.size()));
    for (auto e : s) w.u32(std::uint32_t(e));
    for (float v : p.var.value().data()) w.f32(v);
  }
  const auto& bytes = w.bytes();
  w.u64(detail::fnv1a(bytes.data(), bytes.size()));
  detail::write_file(path.string(), w.bytes());
}

Model<float> load_checkpoint(const std::filesystem::path& path) {
  const std::vector<char> bytes = detail::read_file(path.string());
  const std::string where = "'" + path.string() + "'";
  if (bytes.size() < 4 || std::string(bytes.data(), 4) != "M3CK") {
    throw BadMagicError(where + " is not a checkpoint (bad magic)");
  }
  detail::ByteReader r(bytes.data(), bytes.size());
  r.raw(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionMismatchError(where + " has checkpoint version " + std::to_string(version) + ", expected " +
                               std::to_string(kCheckpointVersion));
  }
  if (bytes.size() < 16) throw TruncatedPayloadError(where + " is too short to hold a checksum");
  detail::ByteReader tail(bytes.data() + bytes.size() - 8, 8);
  if (tail.u64() != detail::fnv1a(bytes.data(), bytes.size() - 8)) {
    throw ChecksumError(where + " fails its checksum; the file is corrupted or truncated");
  }
  detail::ByteReader body(bytes.data(), bytes.size() - 8);
  body.raw(8);
  const std::string cfg_text = body.raw(body.u32());
  Model<float> model = build_model<float>(parse_model_config(cfg_text));
  std::map<std::string, Tensor<float>> stored;
  const std::uint32_t count = body.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = body.raw(body.u32());
    Shape s(body.u32());
    for (auto& e : s) e = body.u32();
    Tensor<float> t(s);
    for (auto& v : t.data()) v = body.f32();
    stored.emplace(name, std::move(t));
  }
  if (body.remaining() != 0) throw FormatError(where + " has unexpected bytes before the checksum");
  auto params = model.parameters();
  if (params.size() != stored.size()) {
    throw FormatError(where + " holds " + std::to_string(stored.size()) + " tensors, the model needs " +
                      std::to_string(params.size()));
  }
  for (auto& p : params) {
    auto it = stored.find(p.name);
    if (it == stored.end()) throw FormatError(where + " lacks tensor '" + p.name + "'");
    if (it->second.shape() != p.var.shape()) {
      throw FormatError(where + ": tensor '" + p.name + "' has shape " + shape_str(it->second.shape()) +
                        ", expected " + shape_str(p.var.shape()));
    }
    p.var.mutable_value() = std::move(it->second);
  }
  return model;
}

}  // namespace m3sr
